#include "milpool/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "milpool/gradcheck.hpp"
#include "milpool/pipeline.hpp"
#include "milpool/synth.hpp"
#include "milpool/trainer.hpp"

namespace milpool {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

json read_json_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::runtime_error("malformed JSON in " + path.string() + ": " + e.what());
  }
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

Dataset load_split(const fs::path& dir, const std::string& split) {
  const fs::path path = dir / (split + ".jsonl");
  if (!fs::exists(path)) {
    throw DatasetError("missing split '" + split + "' (" + path.string() + ")");
  }
  return load_dataset(path);
}

json section(const json& config, const char* key) {
  if (config.is_object() && config.contains(key)) return config.at(key);
  return json::object();
}

// --pooling/--alpha/--beta as given on the command line.
struct PoolingFlags {
  std::string name;
  double alpha = 0.0;
  double beta = 0.0;
  CLI::Option* name_opt = nullptr;
  CLI::Option* alpha_opt = nullptr;
  CLI::Option* beta_opt = nullptr;

  void add(CLI::App& app) {
    name_opt = app.add_option("--pooling", name,
                              "max, average, linear-softmax, exp-softmax, attention, generalized");
    alpha_opt = app.add_option("--alpha", alpha, "generalized pooling: exp(alpha*y) factor");
    beta_opt = app.add_option("--beta", beta, "generalized pooling: y^beta factor");
  }

  bool given() const { return name_opt->count() > 0; }

  // Applies the flags over `spec`; alpha/beta are only legal with generalized.
  PoolingSpec resolve(PoolingSpec spec) const {
    if (given()) {
      const auto kind = parse_pooling_kind(name);
      if (!kind) throw UsageError("unknown pooling '" + name + "'");
      spec = PoolingSpec{*kind};
    }
    const bool shape_flags = alpha_opt->count() > 0 || beta_opt->count() > 0;
    if (shape_flags && spec.kind != PoolingKind::kGeneralized) {
      throw UsageError("--alpha/--beta require --pooling generalized");
    }
    if (alpha_opt->count() > 0) spec.alpha = alpha;
    if (beta_opt->count() > 0) spec.beta = beta;
    if (spec.kind == PoolingKind::kGeneralized && !(spec.beta >= 0.0)) {
      throw UsageError("--beta must be >= 0");
    }
    return spec;
  }
};

// Training flags shared by train and compare.
struct TrainFlags {
  PoolingFlags pooling;
  int epochs = 0;
  int batch_size = 0;
  double learning_rate = 0.0;
  double momentum = 0.0;
  std::uint64_t seed = 0;
  bool balancing = true;
  int context_radius = 0;
  std::vector<int> hidden_sizes;
  std::string config_path;
  std::vector<std::pair<CLI::Option*, std::function<void(TrainConfig&)>>> setters;

  void add(CLI::App& app, bool with_pooling) {
    if (with_pooling) pooling.add(app);
    const auto bind = [&](CLI::Option* opt, std::function<void(TrainConfig&)> set) {
      setters.emplace_back(opt, std::move(set));
    };
    bind(app.add_option("--epochs", epochs, "training epochs")->check(CLI::PositiveNumber),
         [this](TrainConfig& c) { c.epochs = epochs; });
    bind(app.add_option("--batch-size", batch_size, "recordings per minibatch")
             ->check(CLI::PositiveNumber),
         [this](TrainConfig& c) { c.batch_size = batch_size; });
    bind(app.add_option("--lr", learning_rate, "learning rate")->check(CLI::NonNegativeNumber),
         [this](TrainConfig& c) { c.learning_rate = learning_rate; });
    bind(app.add_option("--momentum", momentum, "momentum coefficient"),
         [this](TrainConfig& c) { c.momentum = momentum; });
    bind(app.add_option("--seed", seed, "random seed"),
         [this](TrainConfig& c) { c.seed = seed; });
    bind(app.add_option("--balancing", balancing, "class-balanced minibatches (on/off)"),
         [this](TrainConfig& c) { c.balancing = balancing; });
    bind(app.add_option("--context", context_radius, "context radius in frames")
             ->check(CLI::NonNegativeNumber),
         [this](TrainConfig& c) { c.context_radius = context_radius; });
    bind(app.add_option("--hidden", hidden_sizes, "hidden layer sizes, comma separated")
             ->delimiter(','),
         [this](TrainConfig& c) { c.hidden_sizes = hidden_sizes; });
    app.add_option("--config", config_path, "JSON config file (flags take precedence)");
  }

  json config_file() const {
    return config_path.empty() ? json::object() : read_json_file(config_path);
  }

  TrainConfig resolve(const json& config) const {
    TrainConfig out;
    try {
      apply_json(section(config, "train"), out);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    for (const auto& [opt, set] : setters) {
      if (opt->count() > 0) set(out);
    }
    if (pooling.name_opt != nullptr) out.pooling = pooling.resolve(out.pooling);
    try {
      out.validate();
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    return out;
  }
};

int cmd_generate(const fs::path& out_dir, const json& config, std::optional<std::uint64_t> seed,
                 std::ostream& out) {
  SynthConfig synth;
  apply_json(section(config, "synth"), synth);
  if (seed) synth.seed = *seed;
  const SynthCorpus corpus = generate(synth);
  write_corpus(out_dir, synth, corpus);
  out << "wrote " << corpus.train.size() << "/" << corpus.validation.size() << "/"
      << corpus.test.size() << " train/validation/test recordings to " << out_dir.string()
      << '\n';
  return kExitOk;
}

int cmd_gradcheck(const GradcheckOptions& options, const fs::path& report_path,
                  std::ostream& out) {
  const auto rows = run_gradcheck(options);
  std::ostringstream report;
  bool ok = true;
  for (const GradcheckRow& row : rows) {
    char line[256];
    std::snprintf(line, sizeof(line), "%-44s checked=%-4d max_dev=%.3e tol=%.0e %s\n",
                  row.label.c_str(), row.checked, row.max_deviation, row.tolerance,
                  row.pass() ? "PASS" : "FAIL");
    report << line;
    ok = ok && row.pass();
  }
  out << report.str();
  if (!report_path.empty()) write_file(report_path, report.str());
  return ok ? kExitOk : kExitCheckFailed;
}

Thresholds read_thresholds(const fs::path& path, int classes) {
  const json j = read_json_file(path);
  const json& values = j.is_object() ? j.at("thresholds") : j;
  Thresholds t = values.get<Thresholds>();
  if (static_cast<int>(t.size()) != classes) {
    throw UsageError("thresholds file has " + std::to_string(t.size()) +
                     " values for " + std::to_string(classes) + " classes");
  }
  return t;
}

std::vector<FrameOutput> load_predictions(const fs::path& path, const Dataset& dataset) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return read_predictions(in, dataset);
}

std::vector<std::string> with_program_name(const std::vector<std::string>& args) {
  std::vector<std::string> all{"milpool"};
  all.insert(all.end(), args.begin(), args.end());
  return all;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multiple-instance pooling toolkit for weakly labeled sound event detection",
               "milpool"};
  app.require_subcommand(1);

  // generate
  auto* generate_cmd = app.add_subcommand("generate", "write a synthetic weakly labeled corpus");
  std::string gen_out;
  std::string gen_config;
  std::uint64_t gen_seed = 0;
  generate_cmd->add_option("--out", gen_out, "output directory")->required();
  generate_cmd->add_option("--config", gen_config, "JSON config with a \"synth\" section");
  auto* gen_seed_opt = generate_cmd->add_option("--seed", gen_seed, "corpus seed");

  // gradcheck
  auto* gradcheck_cmd = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  GradcheckOptions gc;
  PoolingFlags gc_pooling;
  gc_pooling.add(*gradcheck_cmd);
  std::string gc_out;
  gradcheck_cmd->add_option("--trials", gc.trials, "random bags per pooling function")
      ->check(CLI::NonNegativeNumber);
  gradcheck_cmd->add_option("--seed", gc.seed, "random seed");
  gradcheck_cmd->add_option("--step", gc.step, "finite-difference step")
      ->check(CLI::PositiveNumber);
  gradcheck_cmd->add_option("--tolerance", gc.tolerance, "pooling tolerance");
  gradcheck_cmd->add_option("--model-tolerance", gc.model_tolerance, "whole-model tolerance");
  gradcheck_cmd->add_option("--out", gc_out, "also write the report here");
  gradcheck_cmd->add_flag("--corrupt-gradient", gc.corrupt_gradient)->group("");

  // train
  auto* train_cmd = app.add_subcommand("train", "train one model");
  TrainFlags train_flags;
  train_flags.add(*train_cmd, true);
  std::string train_data;
  std::string train_file;
  std::string train_out;
  std::string train_loss_out;
  train_cmd->add_option("--data", train_data, "corpus directory (uses train.jsonl)");
  train_cmd->add_option("--train", train_file, "training dataset file");
  train_cmd->add_option("--out", train_out, "checkpoint path")->required();
  train_cmd->add_option("--loss-out", train_loss_out, "per-epoch loss trace (TSV)");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a model or frame predictions");
  PoolingFlags eval_pooling;
  eval_pooling.add(*eval_cmd);
  std::string eval_model;
  std::string eval_predictions;
  std::string eval_val_predictions;
  std::string eval_data;
  std::string eval_test;
  std::string eval_validation;
  std::string eval_thresholds;
  double eval_threshold = 0.5;
  std::string eval_segment_pooling;
  int segment_frames = kDefaultSegmentFrames;
  std::string eval_out;
  auto* model_opt = eval_cmd->add_option("--model", eval_model, "checkpoint to evaluate");
  auto* pred_opt =
      eval_cmd->add_option("--predictions", eval_predictions, "frame predictions (JSONL)");
  model_opt->excludes(pred_opt);
  eval_cmd->add_option("--validation-predictions", eval_val_predictions,
                       "frame predictions on validation, for threshold tuning");
  eval_cmd->add_option("--data", eval_data, "corpus directory (test.jsonl, validation.jsonl)");
  eval_cmd->add_option("--test", eval_test, "evaluation dataset file");
  eval_cmd->add_option("--validation", eval_validation, "threshold tuning dataset file");
  auto* thr_file_opt =
      eval_cmd->add_option("--thresholds", eval_thresholds, "per-class thresholds (JSON)");
  auto* thr_opt = eval_cmd->add_option("--threshold", eval_threshold, "one threshold for all classes");
  thr_file_opt->excludes(thr_opt);
  eval_cmd->add_option("--segment-pooling", eval_segment_pooling,
                       "segment aggregation (defaults to the recording-level pooling)");
  eval_cmd->add_option("--segment-frames", segment_frames, "frames per segment")
      ->check(CLI::PositiveNumber);
  eval_cmd->add_option("--out", eval_out, "report path (default: stdout)");

  // compare
  auto* compare_cmd = app.add_subcommand("compare", "train and evaluate all five pooling functions");
  TrainFlags compare_flags;
  compare_flags.add(*compare_cmd, false);
  std::string compare_data;
  std::string compare_out;
  int compare_segment_frames = kDefaultSegmentFrames;
  int trace_recordings = 12;
  compare_cmd->add_option("--data", compare_data, "corpus directory")->required();
  compare_cmd->add_option("--out", compare_out, "output directory")->required();
  auto* cmp_seg_opt = compare_cmd->add_option("--segment-frames", compare_segment_frames,
                                              "frames per segment")
                          ->check(CLI::PositiveNumber);
  auto* cmp_trace_opt = compare_cmd->add_option("--trace-recordings", trace_recordings,
                                                "test recordings written to the trace files")
                            ->check(CLI::NonNegativeNumber);

  const auto argv_strings = with_program_name(args);
  std::vector<const char*> argv;
  for (const auto& s : argv_strings) argv.push_back(s.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    app.exit(e, out, err);
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    app.exit(e, out, err);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitUsage;
  }

  try {
    if (*generate_cmd) {
      const json config = gen_config.empty() ? json::object() : read_json_file(gen_config);
      std::optional<std::uint64_t> seed;
      if (gen_seed_opt->count() > 0) seed = gen_seed;
      return cmd_generate(gen_out, config, seed, out);
    }

    if (*gradcheck_cmd) {
      if (gc_pooling.given()) {
        gc.poolings = {gc_pooling.resolve(PoolingSpec{})};
      } else if (gc_pooling.alpha_opt->count() > 0 || gc_pooling.beta_opt->count() > 0) {
        throw UsageError("--alpha/--beta require --pooling generalized");
      }
      return cmd_gradcheck(gc, gc_out, out);
    }

    if (*train_cmd) {
      if (train_data.empty() == train_file.empty()) {
        throw UsageError("give exactly one of --data or --train");
      }
      const TrainConfig config = train_flags.resolve(train_flags.config_file());
      const Dataset data =
          train_file.empty() ? load_split(train_data, "train") : load_dataset(train_file);
      const TrainResult result = train(data, config);
      save_checkpoint(train_out, Checkpoint{config, result.params});
      std::ostringstream loss;
      loss << "epoch\tmean_bag_loss\n";
      for (std::size_t e = 0; e < result.epoch_loss.size(); ++e) {
        char line[64];
        std::snprintf(line, sizeof(line), "%zu\t%.8f\n", e + 1, result.epoch_loss[e]);
        loss << line;
      }
      if (!train_loss_out.empty()) write_file(train_loss_out, loss.str());
      out << "config " << to_json(config).dump() << '\n' << loss.str();
      return kExitOk;
    }

    if (*eval_cmd) {
      if (eval_model.empty() == eval_predictions.empty()) {
        throw UsageError("give exactly one of --model or --predictions");
      }
      if (!eval_data.empty() && (!eval_test.empty() || !eval_validation.empty())) {
        throw UsageError("--data excludes --test/--validation");
      }
      const Dataset test = eval_test.empty()
                               ? (eval_data.empty() ? throw UsageError("--data or --test required")
                                                    : load_split(eval_data, "test"))
                               : load_dataset(eval_test);
      const auto validation = [&]() -> std::optional<Dataset> {
        if (!eval_validation.empty()) return load_dataset(eval_validation);
        if (!eval_data.empty()) return load_split(eval_data, "validation");
        return std::nullopt;
      };

      std::optional<Checkpoint> checkpoint;
      PoolingSpec base = PoolingSpec::LinearSoftmax();
      if (!eval_model.empty()) {
        checkpoint = load_checkpoint(eval_model);
        base = checkpoint->config.pooling;
      }
      EvalOptions options;
      options.pooling = eval_pooling.resolve(base);
      options.segment_frames = segment_frames;
      if (!eval_segment_pooling.empty()) {
        const auto kind = parse_pooling_kind(eval_segment_pooling);
        if (!kind) throw UsageError("unknown segment pooling '" + eval_segment_pooling + "'");
        PoolingSpec seg{*kind};
        if (seg.kind == PoolingKind::kGeneralized) seg = options.pooling;
        options.segment_pooling = seg;
      }

      const auto frames_for = [&](const Dataset& data, const std::string& pred_path) {
        return checkpoint ? predict(checkpoint->params, data) : load_predictions(pred_path, data);
      };
      const std::vector<FrameOutput> test_frames = frames_for(test, eval_predictions);

      Thresholds thresholds;
      const int classes = test.num_classes();
      if (!eval_thresholds.empty()) {
        thresholds = read_thresholds(eval_thresholds, classes);
      } else if (thr_opt->count() > 0) {
        thresholds.assign(static_cast<std::size_t>(classes), eval_threshold);
      } else {
        const auto val = validation();
        if (!val || (!checkpoint && eval_val_predictions.empty())) {
          throw UsageError(
              "thresholds needed: pass --thresholds, --threshold, or validation data" +
              std::string(checkpoint ? "" : " with --validation-predictions"));
        }
        thresholds = tune_on(frames_for(*val, eval_val_predictions), *val, options.pooling);
      }

      const EvalReport report = evaluate(test_frames, test, thresholds, options);
      json j = to_json(report);
      j["pooling"] = to_json(options.pooling);
      j["segment_pooling"] = to_json(options.segment_pooling.value_or(options.pooling));
      j["segment_frames"] = options.segment_frames;
      j["thresholds"] = thresholds;
      if (checkpoint) j["config"] = to_json(checkpoint->config);
      const std::string text = j.dump(2) + "\n";
      if (eval_out.empty()) {
        out << text;
      } else {
        write_file(eval_out, text);
      }
      return kExitOk;
    }

    if (*compare_cmd) {
      const json config = compare_flags.config_file();
      CompareOptions options;
      options.train = compare_flags.resolve(config);
      options.segment_frames = config.value("segment_frames", kDefaultSegmentFrames);
      options.trace_recordings = config.value("trace_recordings", 12);
      if (cmp_seg_opt->count() > 0) options.segment_frames = compare_segment_frames;
      if (cmp_trace_opt->count() > 0) options.trace_recordings = trace_recordings;
      const Dataset train_set = load_split(compare_data, "train");
      const Dataset validation = load_split(compare_data, "validation");
      const Dataset test = load_split(compare_data, "test");
      const auto systems = run_compare(train_set, validation, test, options, compare_out);
      out << comparison_table(systems);
      return kExitOk;
    }
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitError;
  }
  return kExitUsage;
}

}  // namespace milpool
