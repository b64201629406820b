#include "milpool/metrics.hpp"

#include <boost/math/special_functions/erf.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace milpool {

using nlohmann::json;

namespace {

constexpr int kGridSteps = 99;

double grid_threshold(int k) { return static_cast<double>(k) / 100.0; }

double ratio(long num, long den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

void check_same_shape(const Matrix& probs, const LabelMatrix& labels) {
  if (probs.rows() != labels.rows() || probs.cols() != labels.cols()) {
    throw MetricsError("scores and labels differ in shape");
  }
}

// JSON has no infinities; keep them readable.
json finite_or_string(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  return v;
}

}  // namespace

double DetectionCounts::precision() const { return ratio(tp, tp + fp); }
double DetectionCounts::recall() const { return ratio(tp, tp + fn); }

double DetectionCounts::f1() const {
  const double p = precision();
  const double r = recall();
  return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
}

DetectionCounts& DetectionCounts::operator+=(const DetectionCounts& other) {
  tp += other.tp;
  fn += other.fn;
  fp += other.fp;
  return *this;
}

Thresholds tune_thresholds(const Matrix& recording_probs, const LabelMatrix& labels) {
  check_same_shape(recording_probs, labels);
  if (recording_probs.rows() == 0) throw MetricsError("empty validation set");
  Thresholds thresholds(static_cast<std::size_t>(recording_probs.cols()));
  for (Eigen::Index c = 0; c < recording_probs.cols(); ++c) {
    double best_f1 = -1.0;
    double best = grid_threshold(kGridSteps);
    for (int k = 1; k <= kGridSteps; ++k) {
      const double thr = grid_threshold(k);
      DetectionCounts counts;
      for (Eigen::Index r = 0; r < recording_probs.rows(); ++r) {
        const bool on = recording_probs(r, c) >= thr;
        const bool ref = labels(r, c) == 1;
        counts.tp += on && ref;
        counts.fp += on && !ref;
        counts.fn += !on && ref;
      }
      const double f1 = counts.f1();
      if (f1 > best_f1) {
        best_f1 = f1;
        best = thr;
      }
    }
    thresholds[static_cast<std::size_t>(c)] =
        best_f1 > 0.0 ? best : grid_threshold(kGridSteps);
  }
  return thresholds;
}

LabelMatrix apply_thresholds(const Matrix& probs, const Thresholds& thresholds) {
  if (static_cast<Eigen::Index>(thresholds.size()) != probs.cols()) {
    throw MetricsError("one threshold per class required");
  }
  LabelMatrix out(probs.rows(), probs.cols());
  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
    for (Eigen::Index c = 0; c < probs.cols(); ++c) {
      out(r, c) = probs(r, c) >= thresholds[static_cast<std::size_t>(c)] ? 1 : 0;
    }
  }
  return out;
}

DetectionCounts tagging_metrics(const LabelMatrix& decisions, const LabelMatrix& labels) {
  if (decisions.rows() != labels.rows() || decisions.cols() != labels.cols()) {
    throw MetricsError("decisions and labels differ in shape");
  }
  DetectionCounts counts;
  for (Eigen::Index r = 0; r < labels.rows(); ++r) {
    for (Eigen::Index c = 0; c < labels.cols(); ++c) {
      const bool on = decisions(r, c) == 1;
      const bool ref = labels(r, c) == 1;
      counts.tp += on && ref;
      counts.fp += on && !ref;
      counts.fn += !on && ref;
    }
  }
  return counts;
}

Matrix segment_probs(const Matrix& frame_probs, const Matrix& frame_weights,
                     int frames_per_segment, const PoolingSpec& pooling) {
  if (frames_per_segment < 1) throw MetricsError("frames per segment must be >= 1");
  if (pooling.needs_weights() && (frame_weights.rows() != frame_probs.rows() ||
                                  frame_weights.cols() != frame_probs.cols())) {
    throw PoolingError("missing weights");
  }
  const Eigen::Index n = frame_probs.rows();
  const Eigen::Index segments = (n + frames_per_segment - 1) / frames_per_segment;
  Matrix out(segments, frame_probs.cols());
  for (Eigen::Index c = 0; c < frame_probs.cols(); ++c) {
    const double* probs = frame_probs.col(c).data();
    const double* weights = pooling.needs_weights() ? frame_weights.col(c).data() : nullptr;
    for (Eigen::Index s = 0; s < segments; ++s) {
      const Eigen::Index start = s * frames_per_segment;
      const auto len = static_cast<std::size_t>(std::min<Eigen::Index>(frames_per_segment, n - start));
      BagActivation act{std::span<const double>(probs + start, len), {}};
      if (weights != nullptr) act.weights = std::span<const double>(weights + start, len);
      out(s, c) = pool_forward(act, pooling);
    }
  }
  return out;
}

Matrix segment_probs(const Matrix& frame_probs, int frames_per_segment,
                     const PoolingSpec& pooling) {
  return segment_probs(frame_probs, Matrix(), frames_per_segment, pooling);
}

LabelMatrix segment_reference(const LabelMatrix& frame_labels, int frames_per_segment) {
  if (frames_per_segment < 1) throw MetricsError("frames per segment must be >= 1");
  const Eigen::Index n = frame_labels.rows();
  const Eigen::Index segments = (n + frames_per_segment - 1) / frames_per_segment;
  LabelMatrix out = LabelMatrix::Zero(segments, frame_labels.cols());
  for (Eigen::Index t = 0; t < n; ++t) {
    for (Eigen::Index c = 0; c < frame_labels.cols(); ++c) {
      if (frame_labels(t, c) == 1) out(t / frames_per_segment, c) = 1;
    }
  }
  return out;
}

double SegmentCounts::error_rate() const {
  const long errors = s + d + i;
  if (n == 0) return errors == 0 ? 0.0 : std::numeric_limits<double>::infinity();
  return static_cast<double>(errors) / static_cast<double>(n);
}

SegmentCounts& SegmentCounts::operator+=(const SegmentCounts& other) {
  n += other.n;
  s += other.s;
  d += other.d;
  i += other.i;
  tp += other.tp;
  fp += other.fp;
  fn += other.fn;
  return *this;
}

SegmentCounts segment_metrics(const LabelMatrix& decisions,
                              const std::optional<LabelMatrix>& frame_labels,
                              int frames_per_segment) {
  if (!frame_labels) throw MetricsError("strong labels required");
  const LabelMatrix reference = segment_reference(*frame_labels, frames_per_segment);
  if (decisions.rows() != reference.rows() || decisions.cols() != reference.cols()) {
    throw MetricsError("segment decisions do not match the reference segmentation");
  }
  SegmentCounts counts;
  for (Eigen::Index seg = 0; seg < reference.rows(); ++seg) {
    long tp = 0;
    long fp = 0;
    long fn = 0;
    for (Eigen::Index c = 0; c < reference.cols(); ++c) {
      const bool on = decisions(seg, c) == 1;
      const bool ref = reference(seg, c) == 1;
      tp += on && ref;
      fp += on && !ref;
      fn += !on && ref;
    }
    const long sub = std::min(fn, fp);
    counts.tp += tp;
    counts.fp += fp;
    counts.fn += fn;
    counts.n += tp + fn;
    counts.s += sub;
    counts.d += fn - sub;
    counts.i += fp - sub;
  }
  return counts;
}

double probit(double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw MetricsError("probit argument outside [0, 1]");
  if (p == 0.0) return -std::numeric_limits<double>::infinity();
  if (p == 1.0) return std::numeric_limits<double>::infinity();
  return std::sqrt(2.0) * boost::math::erf_inv(2.0 * p - 1.0);
}

double dprime_from_auc(double auc) { return std::sqrt(2.0) * probit(auc); }

double average_precision(const std::vector<double>& scores, const std::vector<int>& labels) {
  const long positives = std::count(labels.begin(), labels.end(), 1);
  if (positives == 0) throw MetricsError("average precision needs a positive");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double ap = 0.0;
  long tp = 0;
  long fp = 0;
  long tp_before = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (labels[order[k]] == 1) {
      ++tp;
    } else {
      ++fp;
    }
    const bool group_end =
        k + 1 == order.size() || scores[order[k + 1]] != scores[order[k]];
    if (!group_end) continue;
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    ap += precision * static_cast<double>(tp - tp_before) / static_cast<double>(positives);
    tp_before = tp;
  }
  return ap;
}

double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  const auto positives = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
  const double negatives = static_cast<double>(labels.size()) - positives;
  if (positives == 0 || negatives == 0) {
    throw MetricsError("AUC needs at least one positive and one negative");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double positive_rank_sum = 0.0;
  std::size_t k = 0;
  while (k < order.size()) {
    std::size_t end = k;
    while (end + 1 < order.size() && scores[order[end + 1]] == scores[order[k]]) ++end;
    const double mid_rank = 0.5 * static_cast<double>(k + end) + 1.0;
    for (std::size_t m = k; m <= end; ++m) {
      if (labels[order[m]] == 1) positive_rank_sum += mid_rank;
    }
    k = end + 1;
  }
  return (positive_rank_sum - positives * (positives + 1.0) / 2.0) / (positives * negatives);
}

RankingReport ranking_metrics(const Matrix& recording_probs, const LabelMatrix& labels) {
  check_same_shape(recording_probs, labels);
  RankingReport report;
  for (Eigen::Index c = 0; c < labels.cols(); ++c) {
    std::vector<double> scores(recording_probs.col(c).data(),
                               recording_probs.col(c).data() + recording_probs.rows());
    std::vector<int> truth(labels.col(c).data(), labels.col(c).data() + labels.rows());
    const long positives = std::count(truth.begin(), truth.end(), 1);
    if (positives == 0 || positives == static_cast<long>(truth.size())) {
      report.skipped_classes.push_back(static_cast<int>(c));
      continue;
    }
    report.evaluated_classes.push_back(static_cast<int>(c));
    report.average_precision.push_back(average_precision(scores, truth));
    report.auc.push_back(roc_auc(scores, truth));
  }
  if (report.evaluated_classes.empty()) {
    throw MetricsError("no class has both positive and negative recordings");
  }
  const auto mean = [](const std::vector<double>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  };
  report.map = mean(report.average_precision);
  report.mauc = mean(report.auc);
  report.dprime = dprime_from_auc(report.mauc);
  return report;
}

json to_json(const EvalReport& report) {
  const DetectionCounts& tag = report.tagging;
  const SegmentCounts& loc = report.localization;
  const DetectionCounts seg = loc.detection();
  json j = {
      {"audio_tagging",
       {{"tp", tag.tp},
        {"fn", tag.fn},
        {"fp", tag.fp},
        {"precision", tag.precision()},
        {"recall", tag.recall()},
        {"f1", tag.f1()}}},
      {"localization",
       {{"tp", seg.tp},
        {"fn", seg.fn},
        {"fp", seg.fp},
        {"precision", seg.precision()},
        {"recall", seg.recall()},
        {"f1", seg.f1()},
        {"reference_active", loc.n},
        {"substitutions", loc.s},
        {"deletions", loc.d},
        {"insertions", loc.i},
        {"error_rate", finite_or_string(loc.error_rate())}}}};
  if (report.ranking) {
    const RankingReport& r = *report.ranking;
    j["ranking"] = {{"map", r.map},
                    {"mauc", r.mauc},
                    {"dprime", finite_or_string(r.dprime)},
                    {"evaluated_classes", r.evaluated_classes},
                    {"skipped_classes", r.skipped_classes}};
  }
  return j;
}

}  // namespace milpool
