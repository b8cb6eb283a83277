#include "sdd/catalog.hpp"

#include <fnmatch.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>
#include <unordered_set>

#include <json.hpp>

#include "sdd/diag.hpp"
#include "sdd/error.hpp"
#include "sdd/rng.hpp"
#include "sdd/wav.hpp"

namespace sdd {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

std::string_view to_string(ArtifactCategory category) {
  switch (category) {
    case ArtifactCategory::genuine: return "genuine";
    case ArtifactCategory::tts_vc: return "tts_vc";
    case ArtifactCategory::vocoded: return "vocoded";
    case ArtifactCategory::restored: return "restored";
    case ArtifactCategory::neural_codec: return "neural_codec";
  }
  return "?";
}

ArtifactCategory parse_category(std::string_view text) {
  for (auto c : kAllCategories) {
    if (to_string(c) == text) return c;
  }
  throw Error("unknown artifact category '" + std::string(text) + "'");
}

std::string_view to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

Split parse_split(std::string_view text) {
  if (text == "train") return Split::train;
  if (text == "val") return Split::val;
  if (text == "test") return Split::test;
  throw Error("unknown split '" + std::string(text) + "'");
}

Manifest::Manifest(std::vector<ManifestEntry> entries) : entries_(std::move(entries)) {
  std::unordered_set<std::string> seen;
  seen.reserve(entries_.size());
  for (const auto& e : entries_) {
    if (e.id.empty()) throw Error("manifest entry with empty id");
    if (!seen.insert(e.id).second) throw Error("duplicate manifest id '" + e.id + "'");
    if (!(e.duration_s > 0.0) || !std::isfinite(e.duration_s)) {
      throw Error("entry '" + e.id + "' has non-positive duration");
    }
  }
}

const ManifestEntry* Manifest::find(std::string_view id) const {
  for (const auto& e : entries_) {
    if (e.id == id) return &e;
  }
  return nullptr;
}

Manifest Manifest::filter(Split split) const {
  std::vector<ManifestEntry> out;
  std::copy_if(entries_.begin(), entries_.end(), std::back_inserter(out),
               [split](const ManifestEntry& e) { return e.split == split; });
  return Manifest(std::move(out));
}

Manifest Manifest::with_split(Split split) const {
  auto out = entries_;
  for (auto& e : out) e.split = split;
  return Manifest(std::move(out));
}

std::string to_jsonl(const ManifestEntry& entry) {
  ojson j;
  j["id"] = entry.id;
  j["path"] = entry.path;
  j["duration_s"] = entry.duration_s;
  j["category"] = std::string(to_string(entry.category));
  j["dataset"] = entry.dataset;
  j["language"] = entry.language;
  j["split"] = std::string(to_string(entry.split));
  return j.dump();
}

ManifestEntry entry_from_jsonl(std::string_view line) {
  ojson j;
  try {
    j = ojson::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed manifest line: ") + e.what());
  }
  try {
    ManifestEntry e;
    e.id = j.at("id").get<std::string>();
    e.path = j.at("path").get<std::string>();
    e.duration_s = j.at("duration_s").get<double>();
    e.category = parse_category(j.at("category").get<std::string>());
    e.dataset = j.value("dataset", std::string());
    e.language = j.value("language", std::string("unknown"));
    e.split = parse_split(j.value("split", std::string("train")));
    return e;
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("manifest line missing field: ") + e.what());
  }
}

void write_manifest(std::ostream& out, const Manifest& manifest) {
  for (const auto& e : manifest) out << to_jsonl(e) << '\n';
}

void write_manifest(const fs::path& file, const Manifest& manifest) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw Error("cannot write " + file.string());
  write_manifest(out, manifest);
}

Manifest read_manifest(std::istream& in) {
  std::vector<ManifestEntry> entries;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      entries.push_back(entry_from_jsonl(line));
    } catch (const Error& e) {
      throw Error("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return Manifest(std::move(entries));
}

Manifest read_manifest(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw Error("cannot open manifest " + file.string());
  try {
    return read_manifest(in);
  } catch (const Error& e) {
    throw Error(file.string() + ": " + e.what());
  }
}

std::vector<std::string> validate_manifest(const Manifest& manifest, double tolerance_s) {
  std::vector<std::string> problems;
  for (const auto& e : manifest) {
    if (!fs::exists(e.path)) {
      problems.push_back(e.id + ": missing file " + e.path);
      continue;
    }
    try {
      const auto info = probe_wav(e.path);
      if (std::abs(info.duration_s() - e.duration_s) > tolerance_s) {
        std::ostringstream msg;
        msg << e.id << ": duration mismatch (manifest " << e.duration_s << " s, file "
            << info.duration_s() << " s)";
        problems.push_back(msg.str());
      }
    } catch (const Error& err) {
      problems.push_back(e.id + ": " + err.what());
    }
  }
  return problems;
}

std::vector<ManifestRule> read_rules(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw UsageError("cannot open rules file " + file.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw UsageError("malformed rules file " + file.string() + ": " + e.what());
  }
  if (!j.is_array()) throw UsageError("rules file must hold a JSON array");
  std::vector<ManifestRule> rules;
  for (const auto& r : j) {
    ManifestRule rule;
    rule.glob = r.at("glob").get<std::string>();
    rule.category = parse_category(r.at("category").get<std::string>());
    rule.dataset = r.value("dataset", std::string());
    rule.language = r.value("language", std::string("unknown"));
    rule.split = parse_split(r.value("split", std::string("train")));
    rules.push_back(std::move(rule));
  }
  return rules;
}

namespace {

std::string make_id(const fs::path& relative) {
  std::string id = relative.generic_string();
  if (id.size() > 4 && id.ends_with(".wav")) id.resize(id.size() - 4);
  std::replace(id.begin(), id.end(), '/', '_');
  return id;
}

}  // namespace

BuildReport build_manifest(const fs::path& root, const std::vector<ManifestRule>& rules,
                           unsigned threads) {
  if (!fs::is_directory(root)) throw UsageError("manifest root is not a directory: " + root.string());
  std::vector<fs::path> files;
  for (const auto& item : fs::recursive_directory_iterator(root)) {
    if (!item.is_regular_file()) continue;
    auto ext = item.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".wav") files.push_back(fs::relative(item.path(), root));
  }
  std::sort(files.begin(), files.end(),
            [](const fs::path& a, const fs::path& b) { return a.generic_string() < b.generic_string(); });

  struct Pending {
    fs::path relative;
    const ManifestRule* rule;
  };
  std::vector<Pending> matched;
  for (const auto& rel : files) {
    const std::string name = rel.generic_string();
    const ManifestRule* hit = nullptr;
    for (const auto& rule : rules) {
      if (fnmatch(rule.glob.c_str(), name.c_str(), 0) != 0) continue;
      if (hit != nullptr) {
        throw Error("file " + name + " matched by rules '" + hit->glob + "' and '" + rule.glob + "'");
      }
      hit = &rule;
    }
    if (hit != nullptr) matched.push_back({rel, hit});
  }
  if (matched.empty()) throw Error("no entries: no audio file under " + root.string() + " matched a rule");

  std::vector<std::optional<ManifestEntry>> probed(matched.size());
  std::vector<std::string> errors(matched.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < matched.size(); i = next++) {
      const auto full = root / matched[i].relative;
      try {
        const auto info = probe_wav(full);
        if (info.frames == 0) throw Error("empty audio");
        ManifestEntry e;
        e.id = make_id(matched[i].relative);
        e.path = full.string();
        e.duration_s = info.duration_s();
        e.category = matched[i].rule->category;
        e.dataset = matched[i].rule->dataset;
        e.language = matched[i].rule->language;
        e.split = matched[i].rule->split;
        probed[i] = std::move(e);
      } catch (const std::exception& ex) {
        errors[i] = matched[i].relative.generic_string() + ": " + ex.what();
      }
    }
  };
  const unsigned n_threads = std::max(1U, std::min<unsigned>(threads, static_cast<unsigned>(matched.size())));
  {
    std::vector<std::jthread> pool;
    for (unsigned t = 1; t < n_threads; ++t) pool.emplace_back(worker);
    worker();
  }

  BuildReport report;
  std::vector<ManifestEntry> entries;
  for (std::size_t i = 0; i < matched.size(); ++i) {
    if (probed[i]) {
      entries.push_back(std::move(*probed[i]));
    } else {
      report.skipped.push_back(errors[i]);
      warn("skipped " + errors[i]);
    }
  }
  if (entries.empty()) throw Error("no entries: every matched file was unreadable");
  report.manifest = Manifest(std::move(entries));
  return report;
}

std::pair<Manifest, Manifest> split_manifest(const Manifest& manifest, double train_fraction,
                                             std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw UsageError("train fraction must lie in (0, 1)");
  }
  if (manifest.empty()) throw Error("cannot split an empty manifest");
  const std::size_t n = manifest.size();
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
  if (n_train == n) warn("split leaves the validation part empty");
  if (n_train == 0) warn("split leaves the training part empty");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, "split"));
  shuffle(order.begin(), order.end(), rng);
  std::vector<bool> in_train(n, false);
  for (std::size_t i = 0; i < n_train; ++i) in_train[order[i]] = true;

  std::vector<ManifestEntry> train;
  std::vector<ManifestEntry> val;
  for (std::size_t i = 0; i < n; ++i) {
    auto e = manifest[i];
    if (in_train[i]) {
      e.split = Split::train;
      train.push_back(std::move(e));
    } else {
      e.split = Split::val;
      val.push_back(std::move(e));
    }
  }
  return {Manifest(std::move(train)), Manifest(std::move(val))};
}

namespace {

// Sorted summation makes totals independent of entry order.
double sorted_hours(std::vector<double> seconds) {
  std::sort(seconds.begin(), seconds.end());
  double total = 0.0;
  for (double s : seconds) total += s;
  return total / 3600.0;
}

}  // namespace

CategoryStats stats(const Manifest& manifest) {
  CategoryStats s;
  std::map<ArtifactCategory, std::vector<double>> by_category;
  std::map<std::string, std::vector<double>> by_language;
  std::vector<double> all;
  for (auto c : kAllCategories) {
    by_category[c];
    s.category_files[c] = 0;
  }
  for (const auto& e : manifest) {
    by_category[e.category].push_back(e.duration_s);
    by_language[e.language].push_back(e.duration_s);
    all.push_back(e.duration_s);
    ++s.category_files[e.category];
  }
  for (auto& [c, v] : by_category) s.category_hours[c] = sorted_hours(std::move(v));
  for (auto& [l, v] : by_language) s.language_hours[l] = sorted_hours(std::move(v));
  s.total_files = manifest.size();
  s.total_hours = sorted_hours(std::move(all));
  return s;
}

std::string format_stats(const CategoryStats& s) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(6);
  out << "category\tfiles\thours\n";
  for (const auto& [c, h] : s.category_hours) {
    out << to_string(c) << '\t' << s.category_files.at(c) << '\t' << h << '\n';
  }
  out << "total\t" << s.total_files << '\t' << s.total_hours << "\n\nlanguage\thours\n";
  for (const auto& [l, h] : s.language_hours) out << l << '\t' << h << '\n';
  return out.str();
}

}  // namespace sdd
