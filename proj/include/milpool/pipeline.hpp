#ifndef MILPOOL_PIPELINE_HPP_
#define MILPOOL_PIPELINE_HPP_

#include <json.hpp>

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "milpool/dataset.hpp"
#include "milpool/metrics.hpp"
#include "milpool/model.hpp"
#include "milpool/pooling.hpp"
#include "milpool/trainer.hpp"

namespace milpool {

inline constexpr int kDefaultSegmentFrames = 10;

// Frame-level outputs for every recording of a dataset, in dataset order.
std::vector<FrameOutput> predict(const ModelParams& params, const Dataset& dataset);

// recordings x C matrix of pooled probabilities.
Matrix recording_probs(const std::vector<FrameOutput>& frames, const PoolingSpec& pooling);
LabelMatrix bag_label_matrix(const Dataset& dataset);

struct EvalOptions {
  PoolingSpec pooling = PoolingSpec::LinearSoftmax();  // recording level
  std::optional<PoolingSpec> segment_pooling;          // defaults to `pooling`
  int segment_frames = kDefaultSegmentFrames;
};

Thresholds tune_on(const std::vector<FrameOutput>& frames, const Dataset& dataset,
                   const PoolingSpec& pooling);

// Tagging metrics on thresholded recording probabilities, segment metrics on
// segment probabilities thresholded with the same per-class thresholds, and
// ranking metrics when at least one class is rankable.
EvalReport evaluate(const std::vector<FrameOutput>& frames, const Dataset& dataset,
                    const Thresholds& thresholds, const EvalOptions& options);

// Frame predictions file: one JSON object per line with id, frames, classes,
// probs (frames*classes, row-major) and optionally weights.
void write_predictions(std::ostream& out, const Dataset& dataset,
                       const std::vector<FrameOutput>& frames);
std::vector<FrameOutput> read_predictions(std::istream& in, const Dataset& dataset);

struct CompareOptions {
  TrainConfig train;  // pooling is replaced per system
  int segment_frames = kDefaultSegmentFrames;
  int trace_recordings = 12;  // leading test recordings written to traces
};

struct SystemResult {
  PoolingKind kind;
  Thresholds thresholds;
  EvalReport report;
  std::vector<double> epoch_loss;
};

// Trains one model per compared pooling function with the shared config,
// tunes thresholds on validation, evaluates on test and writes into
// `out_dir`: report_<kind>.json, loss_<kind>.tsv, traces_<kind>.tsv and the
// combined comparison.tsv. Pass an empty path to skip writing.
std::vector<SystemResult> run_compare(const Dataset& train, const Dataset& validation,
                                      const Dataset& test, const CompareOptions& options,
                                      const std::filesystem::path& out_dir);

// Rows: tagging TP/FN/FP/P/R/F1, localization TP/FN/FP/P/R/F1,
// Sub/Del/Ins/ER, then MAP/MAUC/d'. Percentages with one decimal.
std::string comparison_table(const std::vector<SystemResult>& systems);

nlohmann::json system_report_json(const SystemResult& system, const CompareOptions& options);

}  // namespace milpool

#endif  // MILPOOL_PIPELINE_HPP_
