#include "milpool/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace milpool {

using nlohmann::json;

namespace {

std::string fixed(double v, int digits) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

std::string percent(double fraction) { return fixed(100.0 * fraction, 1); }

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

}  // namespace

std::vector<FrameOutput> predict(const ModelParams& params, const Dataset& dataset) {
  std::vector<FrameOutput> frames;
  frames.reserve(dataset.size());
  for (const Bag& bag : dataset.bags) frames.push_back(frame_forward(params, bag));
  return frames;
}

Matrix recording_probs(const std::vector<FrameOutput>& frames, const PoolingSpec& pooling) {
  if (frames.empty()) return Matrix();
  const Eigen::Index classes = frames.front().probs.cols();
  Matrix out(static_cast<Eigen::Index>(frames.size()), classes);
  for (std::size_t r = 0; r < frames.size(); ++r) {
    // A single segment spanning the recording is the recording-level pooling.
    const Eigen::Index n = frames[r].probs.rows();
    out.row(static_cast<Eigen::Index>(r)) =
        segment_probs(frames[r].probs, frames[r].weights, static_cast<int>(n), pooling).row(0);
  }
  return out;
}

LabelMatrix bag_label_matrix(const Dataset& dataset) {
  LabelMatrix labels(static_cast<Eigen::Index>(dataset.size()), dataset.num_classes());
  for (std::size_t r = 0; r < dataset.size(); ++r) {
    for (int c = 0; c < dataset.num_classes(); ++c) {
      labels(static_cast<Eigen::Index>(r), c) = dataset.bags[r].bag_labels[static_cast<std::size_t>(c)];
    }
  }
  return labels;
}

Thresholds tune_on(const std::vector<FrameOutput>& frames, const Dataset& dataset,
                   const PoolingSpec& pooling) {
  return tune_thresholds(recording_probs(frames, pooling), bag_label_matrix(dataset));
}

EvalReport evaluate(const std::vector<FrameOutput>& frames, const Dataset& dataset,
                    const Thresholds& thresholds, const EvalOptions& options) {
  if (frames.size() != dataset.size()) {
    throw MetricsError("prediction count does not match the dataset");
  }
  EvalReport report;
  const Matrix rec = recording_probs(frames, options.pooling);
  const LabelMatrix labels = bag_label_matrix(dataset);
  report.tagging = tagging_metrics(apply_thresholds(rec, thresholds), labels);

  const PoolingSpec seg_pooling = options.segment_pooling.value_or(options.pooling);
  for (std::size_t r = 0; r < frames.size(); ++r) {
    const Matrix seg = segment_probs(frames[r].probs, frames[r].weights,
                                     options.segment_frames, seg_pooling);
    report.localization += segment_metrics(apply_thresholds(seg, thresholds),
                                           dataset.bags[r].frame_labels,
                                           options.segment_frames);
  }
  try {
    report.ranking = ranking_metrics(rec, labels);
  } catch (const MetricsError&) {
    report.ranking.reset();
  }
  return report;
}

void write_predictions(std::ostream& out, const Dataset& dataset,
                       const std::vector<FrameOutput>& frames) {
  for (std::size_t r = 0; r < frames.size(); ++r) {
    const FrameOutput& f = frames[r];
    std::vector<double> probs;
    std::vector<double> weights;
    for (Eigen::Index t = 0; t < f.probs.rows(); ++t) {
      for (Eigen::Index c = 0; c < f.probs.cols(); ++c) {
        probs.push_back(f.probs(t, c));
        if (f.weights.size() != 0) weights.push_back(f.weights(t, c));
      }
    }
    json j = {{"id", dataset.bags[r].id},
              {"frames", f.probs.rows()},
              {"classes", f.probs.cols()},
              {"probs", probs}};
    if (!weights.empty()) j["weights"] = weights;
    out << j.dump() << '\n';
  }
}

std::vector<FrameOutput> read_predictions(std::istream& in, const Dataset& dataset) {
  std::vector<FrameOutput> frames;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      const std::size_t r = frames.size();
      if (r >= dataset.size() || j.at("id").get<std::string>() != dataset.bags[r].id) {
        throw DatasetError("prediction " + std::to_string(r) +
                           " does not match the dataset recording order");
      }
      const auto n = j.at("frames").get<Eigen::Index>();
      const auto c = j.at("classes").get<Eigen::Index>();
      if (n != dataset.bags[r].num_frames() || c != dataset.bags[r].num_classes()) {
        throw DatasetError("prediction shape mismatch for '" + dataset.bags[r].id + "'");
      }
      const auto probs = j.at("probs").get<std::vector<double>>();
      if (static_cast<Eigen::Index>(probs.size()) != n * c) {
        throw DatasetError("prediction value count mismatch");
      }
      FrameOutput f{Matrix(n, c), Matrix::Ones(n, c)};
      std::vector<double> weights;
      if (j.contains("weights")) weights = j.at("weights").get<std::vector<double>>();
      if (!weights.empty() && static_cast<Eigen::Index>(weights.size()) != n * c) {
        throw DatasetError("prediction weight count mismatch");
      }
      for (Eigen::Index t = 0; t < n; ++t) {
        for (Eigen::Index k = 0; k < c; ++k) {
          const auto at = static_cast<std::size_t>(t * c + k);
          f.probs(t, k) = probs[at];
          if (!weights.empty()) f.weights(t, k) = weights[at];
        }
      }
      frames.push_back(std::move(f));
    } catch (const json::exception& e) {
      throw DatasetError(std::string("malformed predictions: ") + e.what());
    }
  }
  if (frames.size() != dataset.size()) {
    throw DatasetError("predictions cover " + std::to_string(frames.size()) + " of " +
                       std::to_string(dataset.size()) + " recordings");
  }
  return frames;
}

json system_report_json(const SystemResult& system, const CompareOptions& options) {
  TrainConfig config = options.train;
  config.pooling = PoolingSpec{system.kind};
  json j = to_json(system.report);
  j["system"] = std::string(to_string(system.kind));
  j["config"] = to_json(config);
  j["segment_frames"] = options.segment_frames;
  j["thresholds"] = system.thresholds;
  return j;
}

std::string comparison_table(const std::vector<SystemResult>& systems) {
  std::ostringstream out;
  out << "metric";
  for (const SystemResult& s : systems) out << '\t' << display_name(s.kind);
  out << '\n';
  const auto row = [&](const std::string& name, auto value) {
    out << name;
    for (const SystemResult& s : systems) out << '\t' << value(s.report);
    out << '\n';
  };
  const auto section = [&](const std::string& name) { out << name << '\n'; };

  section("[Audio Tagging]");
  row("TP", [](const EvalReport& r) { return std::to_string(r.tagging.tp); });
  row("FN", [](const EvalReport& r) { return std::to_string(r.tagging.fn); });
  row("FP", [](const EvalReport& r) { return std::to_string(r.tagging.fp); });
  row("Precision", [](const EvalReport& r) { return percent(r.tagging.precision()); });
  row("Recall", [](const EvalReport& r) { return percent(r.tagging.recall()); });
  row("F1", [](const EvalReport& r) { return percent(r.tagging.f1()); });
  section("[Localization]");
  row("TP", [](const EvalReport& r) { return std::to_string(r.localization.tp); });
  row("FN", [](const EvalReport& r) { return std::to_string(r.localization.fn); });
  row("FP", [](const EvalReport& r) { return std::to_string(r.localization.fp); });
  row("Precision", [](const EvalReport& r) { return percent(r.localization.detection().precision()); });
  row("Recall", [](const EvalReport& r) { return percent(r.localization.detection().recall()); });
  row("F1", [](const EvalReport& r) { return percent(r.localization.detection().f1()); });
  section("[Localization]");
  row("Sub.", [](const EvalReport& r) { return std::to_string(r.localization.s); });
  row("Del.", [](const EvalReport& r) { return std::to_string(r.localization.d); });
  row("Ins.", [](const EvalReport& r) { return std::to_string(r.localization.i); });
  row("Error Rate", [](const EvalReport& r) { return percent(r.localization.error_rate()); });
  section("[Ranking]");
  row("MAP", [](const EvalReport& r) { return r.ranking ? fixed(r.ranking->map, 3) : "-"; });
  row("MAUC", [](const EvalReport& r) { return r.ranking ? fixed(r.ranking->mauc, 3) : "-"; });
  row("d'", [](const EvalReport& r) { return r.ranking ? fixed(r.ranking->dprime, 3) : "-"; });
  return out.str();
}

namespace {

std::string trace_table(const SystemResult& system, const Dataset& test,
                        const std::vector<FrameOutput>& frames, int limit) {
  const PoolingSpec pooling{system.kind};
  const bool with_weights = pooling.needs_weights();
  std::ostringstream out;
  out << "recording\tclass\tbag_label\trecording_prob\tthreshold\tframe\tframe_label\tprob";
  if (with_weights) out << "\tweight";
  out << '\n';
  const std::size_t count = std::min(test.size(), static_cast<std::size_t>(std::max(0, limit)));
  for (std::size_t r = 0; r < count; ++r) {
    const Bag& bag = test.bags[r];
    const FrameOutput& f = frames[r];
    for (Eigen::Index c = 0; c < f.probs.cols(); ++c) {
      const auto n = static_cast<std::size_t>(f.probs.rows());
      BagActivation act{std::span<const double>(f.probs.col(c).data(), n), {}};
      if (with_weights) act.weights = std::span<const double>(f.weights.col(c).data(), n);
      const double y = pool_forward(act, pooling);
      for (Eigen::Index t = 0; t < f.probs.rows(); ++t) {
        out << bag.id << '\t' << c << '\t' << bag.bag_labels[static_cast<std::size_t>(c)]
            << '\t' << fixed(y, 6) << '\t'
            << fixed(system.thresholds[static_cast<std::size_t>(c)], 2) << '\t' << t << '\t'
            << (bag.frame_labels ? (*bag.frame_labels)(t, c) : -1) << '\t'
            << fixed(f.probs(t, c), 6);
        if (with_weights) out << '\t' << fixed(f.weights(t, c), 6);
        out << '\n';
      }
    }
  }
  return out.str();
}

}  // namespace

std::vector<SystemResult> run_compare(const Dataset& train_set, const Dataset& validation,
                                      const Dataset& test, const CompareOptions& options,
                                      const std::filesystem::path& out_dir) {
  if (!out_dir.empty()) std::filesystem::create_directories(out_dir);
  std::vector<SystemResult> systems;
  for (PoolingKind kind : kComparedKinds) {
    TrainConfig config = options.train;
    config.pooling = PoolingSpec{kind};
    TrainResult trained = train(train_set, config);
    SystemResult system{kind, {}, {}, std::move(trained.epoch_loss)};
    const auto val_frames = predict(trained.params, validation);
    system.thresholds = tune_on(val_frames, validation, config.pooling);
    const auto test_frames = predict(trained.params, test);
    EvalOptions eval;
    eval.pooling = config.pooling;
    eval.segment_frames = options.segment_frames;
    system.report = evaluate(test_frames, test, system.thresholds, eval);

    if (!out_dir.empty()) {
      const std::string name(to_string(kind));
      write_text(out_dir / ("report_" + name + ".json"),
                 system_report_json(system, options).dump(2) + "\n");
      std::ostringstream loss;
      loss << "epoch\tmean_bag_loss\n";
      for (std::size_t e = 0; e < system.epoch_loss.size(); ++e) {
        loss << e + 1 << '\t' << fixed(system.epoch_loss[e], 8) << '\n';
      }
      write_text(out_dir / ("loss_" + name + ".tsv"), loss.str());
      write_text(out_dir / ("traces_" + name + ".tsv"),
                 trace_table(system, test, test_frames, options.trace_recordings));
    }
    systems.push_back(std::move(system));
  }
  if (!out_dir.empty()) {
    json echo = to_json(options.train);
    echo.erase("pooling");
    write_text(out_dir / "comparison.tsv",
               "# config " + echo.dump() + " segment_frames=" +
                   std::to_string(options.segment_frames) + "\n" + comparison_table(systems));
  }
  return systems;
}

}  // namespace milpool
