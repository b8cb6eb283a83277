#include "sdd/eval.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "sdd/audio.hpp"
#include "sdd/diag.hpp"
#include "sdd/error.hpp"
#include "sdd/wav.hpp"

namespace sdd {

EerResult compute_eer(std::span<const ScoreRecord> records) {
  EerResult out;
  std::vector<std::pair<double, int>> scored;
  scored.reserve(records.size());
  for (const auto& r : records) {
    if (!std::isfinite(r.score)) throw Error("compute_eer: non-finite score for " + r.file_id);
    scored.emplace_back(r.score, r.label);
    (r.label == 1 ? out.n_genuine : out.n_fake) += 1;
  }
  if (out.n_genuine == 0 || out.n_fake == 0) {
    throw Error("compute_eer: need at least one genuine and one fake record");
  }
  std::sort(scored.begin(), scored.end());
  const auto ng = static_cast<double>(out.n_genuine);
  const auto nf = static_cast<double>(out.n_fake);

  // Operating point j uses threshold t_j = j-th smallest distinct score; the
  // final point is t = +inf (everything rejected).
  std::size_t genuine_below = 0;
  std::size_t fake_below = 0;
  double prev_frr = 0.0;
  double prev_far = 1.0;
  double prev_t = scored.front().first;
  std::size_t i = 0;
  while (true) {
    const bool at_end = i == scored.size();
    const double t = at_end ? std::nextafter(scored.back().first, std::numeric_limits<double>::infinity())
                            : scored[i].first;
    const double frr = static_cast<double>(genuine_below) / ng;
    const double far = (nf - static_cast<double>(fake_below)) / nf;
    const double d = frr - far;
    if (d >= 0.0) {
      const double prev_d = prev_frr - prev_far;
      if (d == 0.0 || prev_d >= 0.0) {
        out.eer = frr;
        out.threshold = t;
      } else {
        const double alpha = -prev_d / (d - prev_d);
        out.eer = prev_frr + alpha * (frr - prev_frr);
        out.threshold = prev_t + alpha * (t - prev_t);
      }
      return out;
    }
    prev_frr = frr;
    prev_far = far;
    prev_t = t;
    if (at_end) break;
    const double value = scored[i].first;
    while (i < scored.size() && scored[i].first == value) {
      (scored[i].second == 1 ? genuine_below : fake_below) += 1;
      ++i;
    }
  }
  // Unreachable: the final point has FRR = 1 and FAR = 0.
  throw Error("compute_eer: no crossing found");
}

AudioBuffer load_model_input(const std::string& path) {
  AudioBuffer buf = load_wav(path);
  if (buf.channels != 1) buf = downmix(buf);
  if (buf.sample_rate != kModelSampleRate) buf = resample(buf, kModelSampleRate);
  return buf;
}

SegmentScorer model_scorer(const ParameterSet<float>& params, const ModelConfig& cfg) {
  return [&params, cfg](std::span<const float> samples) {
    PaddedBatch<float> batch;
    batch.waveforms = Eigen::Map<const Matrix<float>>(samples.data(), 1, static_cast<Eigen::Index>(samples.size()));
    batch.mask = MaskMatrix::Constant(1, static_cast<Eigen::Index>(samples.size()), true);
    batch.lengths = {samples.size()};
    batch.labels = {0};
    batch.entry_ids = {""};
    const auto fwd = forward<float>(batch, params, cfg, false);
    return static_cast<double>(score<float>(fwd.logits)(0));
  };
}

namespace {

int genuine_label(const ManifestEntry& e) { return is_genuine(e.category) ? 1 : 0; }

// Runs `job(i)` for every manifest index across `threads` workers.
template <typename Job>
void parallel_for(std::size_t n, unsigned threads, Job&& job) {
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) job(i);
  };
  const unsigned count = std::max(1U, std::min<unsigned>(threads, static_cast<unsigned>(n)));
  std::vector<std::jthread> pool;
  for (unsigned t = 1; t < count; ++t) pool.emplace_back(worker);
  worker();
}

struct FileResult {
  std::vector<std::vector<ScoreRecord>> per_duration;
  std::string failure;
};

// `durations` entries <= 0 mean whole-file scoring.
std::vector<ScoreRun> score_durations(const SegmentScorer& scorer, const Manifest& manifest,
                                      std::span<const double> durations, const EvalOptions& opt) {
  std::vector<FileResult> results(manifest.size());
  parallel_for(manifest.size(), opt.threads, [&](std::size_t i) {
    const auto& entry = manifest[i];
    auto& res = results[i];
    res.per_duration.resize(durations.size());
    AudioBuffer audio;
    try {
      audio = load_model_input(entry.path);
    } catch (const std::exception& e) {
      res.failure = entry.id + ": " + e.what();
      return;
    }
    for (std::size_t d = 0; d < durations.size(); ++d) {
      try {
        if (durations[d] <= 0.0) {
          res.per_duration[d].push_back({entry.id, kWholeFile, scorer(audio.samples), genuine_label(entry)});
          continue;
        }
        for (const auto& seg : segment(audio, durations[d], opt.min_tail_s, entry.id)) {
          res.per_duration[d].push_back({entry.id, seg.index, scorer(seg.samples), genuine_label(entry)});
        }
      } catch (const std::exception& e) {
        res.per_duration[d].clear();
        res.failure = entry.id + ": " + e.what();
      }
    }
  });

  std::vector<ScoreRun> runs(durations.size());
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& res = results[i];
    if (!res.failure.empty()) {
      if (opt.strict) throw Error(res.failure);
      warn("excluded " + res.failure);
    }
    for (std::size_t d = 0; d < durations.size(); ++d) {
      if (!res.failure.empty() && res.per_duration[d].empty()) {
        runs[d].missing.push_back(manifest[i].id);
        continue;
      }
      runs[d].records.insert(runs[d].records.end(), res.per_duration[d].begin(), res.per_duration[d].end());
    }
  }
  return runs;
}

std::string format_float(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace

ScoreRun score_manifest(const SegmentScorer& scorer, const Manifest& manifest, std::optional<double> segment_seconds,
                        const EvalOptions& opt) {
  if (segment_seconds && !(*segment_seconds > 0.0)) throw UsageError("segment length must be positive");
  const double duration = segment_seconds.value_or(0.0);
  auto runs = score_durations(scorer, manifest, std::span<const double>(&duration, 1), opt);
  return std::move(runs.front());
}

MultiDurationResult multi_duration_eval(const SegmentScorer& scorer, const Manifest& manifest,
                                        std::span<const double> durations, const EvalOptions& opt) {
  if (durations.empty()) throw UsageError("multi_duration_eval: no durations given");
  for (double d : durations) {
    if (!(d > 0.0)) throw UsageError("durations must be positive");
  }
  MultiDurationResult out;
  out.runs = score_durations(scorer, manifest, durations, opt);
  for (std::size_t d = 0; d < durations.size(); ++d) {
    DurationRow row;
    row.duration_s = durations[d];
    row.n_records = out.runs[d].records.size();
    row.eer = compute_eer(out.runs[d].records);
    out.rows.push_back(row);
  }
  return out;
}

std::vector<EmbeddingRecord> export_embeddings(const ParameterSet<float>& params, const ModelConfig& cfg,
                                               const Manifest& manifest, const EvalOptions& opt) {
  std::vector<std::optional<EmbeddingRecord>> rows(manifest.size());
  std::vector<std::string> failures(manifest.size());
  parallel_for(manifest.size(), opt.threads, [&](std::size_t i) {
    const auto& entry = manifest[i];
    try {
      const auto audio = load_model_input(entry.path);
      const std::array<int, 1> labels{0};
      const std::array<std::string, 1> ids{entry.id};
      const auto batch = collate<float>(std::span<const AudioBuffer>(&audio, 1), labels, ids);
      const auto fwd = forward<float>(batch, params, cfg, false);
      EmbeddingRecord rec;
      rec.file_id = entry.id;
      rec.label = genuine_label(entry);
      rec.values.assign(fwd.embeddings.data(), fwd.embeddings.data() + fwd.embeddings.size());
      rows[i] = std::move(rec);
    } catch (const std::exception& e) {
      failures[i] = entry.id + ": " + e.what();
    }
  });
  std::vector<EmbeddingRecord> out;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (!rows[i]) {
      if (opt.strict) throw Error(failures[i]);
      warn("excluded " + failures[i]);
      continue;
    }
    out.push_back(std::move(*rows[i]));
  }
  return out;
}

void write_scores(std::ostream& out, std::span<const ScoreRecord> records) {
  out << "file_id\tsegment_index\tscore\tlabel\n";
  for (const auto& r : records) {
    out << r.file_id << '\t' << r.segment_index << '\t' << format_float(r.score) << '\t' << r.label << '\n';
  }
}

void write_scores(const std::filesystem::path& path, std::span<const ScoreRecord> records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  write_scores(out, records);
}

std::vector<ScoreRecord> read_scores(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "file_id\tsegment_index\tscore\tlabel") {
    throw Error("score file: missing or malformed header");
  }
  std::vector<ScoreRecord> out;
  std::set<std::pair<std::string, int>> seen;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream fields(line);
    ScoreRecord r;
    std::string segment;
    std::string value;
    std::string label;
    if (!std::getline(fields, r.file_id, '\t') || !std::getline(fields, segment, '\t') ||
        !std::getline(fields, value, '\t') || !std::getline(fields, label, '\t')) {
      throw Error("score file: malformed row '" + line + "'");
    }
    r.segment_index = std::stoi(segment);
    r.score = std::stod(value);
    r.label = std::stoi(label);
    if (!seen.insert({r.file_id, r.segment_index}).second) {
      throw Error("score file: duplicate record " + r.file_id + "/" + segment);
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<ScoreRecord> read_scores(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return read_scores(in);
}

void write_embeddings(std::ostream& out, std::span<const EmbeddingRecord> rows) {
  const std::size_t dim = rows.empty() ? 0 : rows.front().values.size();
  out << "file_id,label";
  for (std::size_t d = 0; d < dim; ++d) out << ",e_" << d;
  out << '\n';
  for (const auto& r : rows) {
    if (r.values.size() != dim) throw Error("embedding rows differ in width");
    out << r.file_id << ',' << r.label;
    for (float v : r.values) out << ',' << format_float(v);
    out << '\n';
  }
}

void write_embeddings(const std::filesystem::path& path, std::span<const EmbeddingRecord> rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  write_embeddings(out, rows);
}

void write_duration_table(std::ostream& out, std::span<const DurationRow> rows) {
  out << "duration_s\tn_records\tn_genuine\tn_fake\teer\tthreshold\n";
  for (const auto& r : rows) {
    out << format_float(r.duration_s) << '\t' << r.n_records << '\t' << r.eer.n_genuine << '\t' << r.eer.n_fake
        << '\t' << format_float(r.eer.eer) << '\t' << format_float(r.eer.threshold) << '\n';
  }
}

}  // namespace sdd
