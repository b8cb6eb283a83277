#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sdd/catalog.hpp"
#include "sdd/model.hpp"

namespace sdd {

inline constexpr int kWholeFile = -1;

struct ScoreRecord {
  std::string file_id;
  int segment_index = kWholeFile;
  double score = 0.0;  // genuine posterior, higher = more genuine
  int label = 0;       // genuine = 1, fake = 0

  friend bool operator==(const ScoreRecord&, const ScoreRecord&) = default;
};

struct EerResult {
  double eer = 0.0;
  double threshold = 0.0;
  std::size_t n_genuine = 0;
  std::size_t n_fake = 0;
};

/// Sweeps every decision threshold (accept as genuine iff score >= t), with
/// FRR(t) = P(genuine score < t) and FAR(t) = P(fake score >= t), and returns
/// the FAR = FRR crossing, linearly interpolated between adjacent operating
/// points. Throws unless both classes are present.
EerResult compute_eer(std::span<const ScoreRecord> records);

/// Scores one mono 16 kHz waveform.
using SegmentScorer = std::function<double(std::span<const float>)>;

/// Scorer backed by a model. Thread-safe: parameters are only read.
SegmentScorer model_scorer(const ParameterSet<float>& params, const ModelConfig& cfg);

struct EvalOptions {
  double min_tail_s = 1.0;
  unsigned threads = 1;
  bool strict = false;  // fail on unreadable files instead of counting them
};

struct ScoreRun {
  std::vector<ScoreRecord> records;
  std::vector<std::string> missing;  // unreadable or unusable entries
};

/// Whole-file records (segment_index = -1) when `segment_seconds` is unset,
/// otherwise one record per segment.
ScoreRun score_manifest(const SegmentScorer& scorer, const Manifest& manifest,
                        std::optional<double> segment_seconds, const EvalOptions& opt = {});

struct DurationRow {
  double duration_s = 0.0;
  std::size_t n_records = 0;
  EerResult eer;
};

struct MultiDurationResult {
  std::vector<DurationRow> rows;
  std::vector<ScoreRun> runs;  // parallel to rows
};

inline const std::vector<double> kDefaultDurations = {4.0, 10.0, 13.0, 30.0, 50.0};

/// Loads each file once and segments it at every requested duration.
MultiDurationResult multi_duration_eval(const SegmentScorer& scorer, const Manifest& manifest,
                                        std::span<const double> durations, const EvalOptions& opt = {});

struct EmbeddingRecord {
  std::string file_id;
  int label = 0;
  std::vector<float> values;
};

std::vector<EmbeddingRecord> export_embeddings(const ParameterSet<float>& params, const ModelConfig& cfg,
                                               const Manifest& manifest, const EvalOptions& opt = {});

// Score file: TSV, header "file_id\tsegment_index\tscore\tlabel".
void write_scores(std::ostream& out, std::span<const ScoreRecord> records);
void write_scores(const std::filesystem::path& path, std::span<const ScoreRecord> records);
std::vector<ScoreRecord> read_scores(std::istream& in);
std::vector<ScoreRecord> read_scores(const std::filesystem::path& path);

// Embedding file: CSV, header "file_id,label,e_0,...,e_{D-1}".
void write_embeddings(std::ostream& out, std::span<const EmbeddingRecord> rows);
void write_embeddings(const std::filesystem::path& path, std::span<const EmbeddingRecord> rows);

void write_duration_table(std::ostream& out, std::span<const DurationRow> rows);

/// Loads a WAV and converts it to 16 kHz mono when needed (no normalisation).
AudioBuffer load_model_input(const std::string& path);

}  // namespace sdd
