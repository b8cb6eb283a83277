#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace sdd {

/// Five-way artifact taxonomy. `genuine` is the only "no artifact" class.
enum class ArtifactCategory : int {
  genuine = 0,
  tts_vc = 1,
  vocoded = 2,
  restored = 3,
  neural_codec = 4,
};

inline constexpr int kNumCategories = 5;
inline constexpr std::array<ArtifactCategory, kNumCategories> kAllCategories = {
    ArtifactCategory::genuine, ArtifactCategory::tts_vc, ArtifactCategory::vocoded,
    ArtifactCategory::restored, ArtifactCategory::neural_codec};

std::string_view to_string(ArtifactCategory category);
ArtifactCategory parse_category(std::string_view text);

inline bool is_genuine(ArtifactCategory category) {
  return category == ArtifactCategory::genuine;
}

enum class Split { train, val, test };

std::string_view to_string(Split split);
Split parse_split(std::string_view text);

struct ManifestEntry {
  std::string id;
  std::string path;
  double duration_s = 0.0;
  ArtifactCategory category = ArtifactCategory::genuine;
  std::string dataset;
  std::string language = "unknown";
  Split split = Split::train;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

/// Ordered, id-unique list of entries.
class Manifest {
 public:
  Manifest() = default;
  /// Throws if ids collide or a duration is not positive.
  explicit Manifest(std::vector<ManifestEntry> entries);

  const std::vector<ManifestEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const ManifestEntry& operator[](std::size_t i) const { return entries_[i]; }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  const ManifestEntry* find(std::string_view id) const;
  Manifest filter(Split split) const;
  /// Copy with every entry's split overwritten.
  Manifest with_split(Split split) const;

 private:
  std::vector<ManifestEntry> entries_;
};

// JSON Lines persistence. Field order: id, path, duration_s, category,
// dataset, language, split.
std::string to_jsonl(const ManifestEntry& entry);
ManifestEntry entry_from_jsonl(std::string_view line);
void write_manifest(std::ostream& out, const Manifest& manifest);
void write_manifest(const std::filesystem::path& file, const Manifest& manifest);
Manifest read_manifest(std::istream& in);
Manifest read_manifest(const std::filesystem::path& file);

/// Checks every path exists and its WAV header duration matches the
/// recorded one within `tolerance_s`. Returns one message per problem.
std::vector<std::string> validate_manifest(const Manifest& manifest, double tolerance_s = 1e-3);

struct ManifestRule {
  std::string glob;  // matched against the path relative to the build root
  ArtifactCategory category = ArtifactCategory::genuine;
  std::string dataset;
  std::string language = "unknown";
  Split split = Split::train;
};

/// Rules file: JSON array of {"glob", "category", "dataset", "language"?, "split"?}.
std::vector<ManifestRule> read_rules(const std::filesystem::path& file);

struct BuildReport {
  Manifest manifest;
  std::vector<std::string> skipped;  // "path: reason"
};

/// Scans `root` recursively for *.wav files, assigns each to exactly one rule
/// and probes its duration. Entries are ordered by relative path.
BuildReport build_manifest(const std::filesystem::path& root,
                           const std::vector<ManifestRule>& rules, unsigned threads = 1);

/// Seeded random partition; train receives round(train_fraction * N) entries.
/// Both halves keep the input order.
std::pair<Manifest, Manifest> split_manifest(const Manifest& manifest, double train_fraction,
                                             std::uint64_t seed);

struct CategoryStats {
  std::map<ArtifactCategory, double> category_hours;
  std::map<std::string, double> language_hours;
  std::map<ArtifactCategory, std::size_t> category_files;
  std::size_t total_files = 0;
  double total_hours = 0.0;
};

CategoryStats stats(const Manifest& manifest);

std::string format_stats(const CategoryStats& s);

}  // namespace sdd
