#ifndef MILPOOL_METRICS_HPP_
#define MILPOOL_METRICS_HPP_

#include <json.hpp>

#include <optional>
#include <stdexcept>
#include <vector>

#include "milpool/dataset.hpp"
#include "milpool/pooling.hpp"

namespace milpool {

class MetricsError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Per-class decision thresholds, applied as `prob >= threshold`.
using Thresholds = std::vector<double>;

// Grid {0.01, ..., 0.99}; per class, the lowest threshold maximising that
// class's F1 on (probs, labels). A class whose F1 is zero at every grid
// point (e.g. no positives) gets 0.99. Both matrices are recordings x C.
Thresholds tune_thresholds(const Matrix& recording_probs, const LabelMatrix& labels);

LabelMatrix apply_thresholds(const Matrix& probs, const Thresholds& thresholds);

// Precision/recall/F1 from pooled counts; F1 is 0 when P + R = 0 and
// precision (recall) is 0 when there are no predicted (reference) positives.
struct DetectionCounts {
  long tp = 0;
  long fn = 0;
  long fp = 0;

  double precision() const;
  double recall() const;
  double f1() const;
  DetectionCounts& operator+=(const DetectionCounts& other);
  bool operator==(const DetectionCounts&) const = default;
};

// Micro-averaged over all classes and recordings.
DetectionCounts tagging_metrics(const LabelMatrix& decisions, const LabelMatrix& labels);

// One probability per segment (rows) and class (columns), aggregating
// `frames_per_segment` frames with the forward pass of `pooling`. The last
// segment covers the remaining frames. `frame_weights` is only read by
// Attention pooling.
Matrix segment_probs(const Matrix& frame_probs, const Matrix& frame_weights,
                     int frames_per_segment, const PoolingSpec& pooling);
Matrix segment_probs(const Matrix& frame_probs, int frames_per_segment,
                     const PoolingSpec& pooling);

// A class is active in a reference segment iff any of its frames is active.
LabelMatrix segment_reference(const LabelMatrix& frame_labels, int frames_per_segment);

// Segment-based counts, accumulated corpus-wide. Per segment with reference
// set R and system set Y: S = min(|R\Y|, |Y\R|), D = |R\Y| - S,
// I = |Y\R| - S, N = |R|.
struct SegmentCounts {
  long n = 0;
  long s = 0;
  long d = 0;
  long i = 0;
  long tp = 0;
  long fp = 0;
  long fn = 0;

  // (S + D + I) / N, not clamped. With N = 0: 0 if error-free, +inf otherwise.
  double error_rate() const;
  DetectionCounts detection() const { return {tp, fn, fp}; }
  SegmentCounts& operator+=(const SegmentCounts& other);
  bool operator==(const SegmentCounts&) const = default;
};

// `decisions` is segments x C for one recording. Throws
// MetricsError("strong labels required") without frame labels.
SegmentCounts segment_metrics(const LabelMatrix& decisions,
                              const std::optional<LabelMatrix>& frame_labels,
                              int frames_per_segment);

struct RankingReport {
  double map = 0.0;
  double mauc = 0.0;
  double dprime = 0.0;  // +/-inf when MAUC is 1 or 0
  std::vector<double> average_precision;  // per evaluated class
  std::vector<double> auc;                // per evaluated class
  std::vector<int> evaluated_classes;
  std::vector<int> skipped_classes;       // lacking a positive or a negative
};

// Inverse of the standard normal CDF; +/-inf at 1 and 0.
double probit(double p);
// sqrt(2) * probit(auc).
double dprime_from_auc(double auc);

// Step-wise average precision: tied scores form one operating point.
double average_precision(const std::vector<double>& scores, const std::vector<int>& labels);
// ROC AUC from the Mann-Whitney statistic with mid-ranks for ties.
double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels);

// Macro averages over classes; throws MetricsError if every class is skipped.
RankingReport ranking_metrics(const Matrix& recording_probs, const LabelMatrix& labels);

struct EvalReport {
  DetectionCounts tagging;
  SegmentCounts localization;
  std::optional<RankingReport> ranking;
};

// Mirrors the row structure of a tagging / localization comparison table.
nlohmann::json to_json(const EvalReport& report);

}  // namespace milpool

#endif  // MILPOOL_METRICS_HPP_
