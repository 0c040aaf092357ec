// SciFlow command-line tool: train / eval / infer / viz / ablate.
//
// Exit codes: 0 success, 2 usage or config error, 3 numeric failure,
// 4 IO or file-format error.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "sciflow/checkpoint.hpp"
#include "sciflow/data.hpp"
#include "sciflow/errors.hpp"
#include "sciflow/flow_io.hpp"
#include "sciflow/metrics.hpp"
#include "sciflow/run_config.hpp"
#include "sciflow/train.hpp"

namespace fs = std::filesystem;
using namespace sciflow;

namespace {

struct ConfigArgs {
  std::string config_file;
  std::string variant;
  std::vector<std::string> sets;
};

// Precedence: defaults < config file < --variant preset < SCIFLOW_OUT_DIR
// < direct flags (applied by the caller) < --set overrides.
RunConfig assemble_config(const ConfigArgs& args) {
  RunConfig cfg;
  if (!args.config_file.empty()) cfg = parse_run_config_file(args.config_file);
  if (!args.variant.empty()) apply_variant_preset(cfg, args.variant);
  if (const char* env = std::getenv("SCIFLOW_OUT_DIR")) {
    if (*env) cfg.out_dir = env;
  }
  return cfg;
}

void apply_sets(RunConfig& cfg, const std::vector<std::string>& sets) {
  for (const auto& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      throw ArgumentError("--set expects key=value, got '" + kv + "'");
    }
    apply_config_entry(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
}

template <typename Fn>
int with_precision(const std::string& precision, Fn&& fn) {
  if (precision == "f64") return fn(double{});
  if (precision == "f32") return fn(float{});
  throw ArgumentError("precision must be f32 or f64, got '" + precision + "'");
}

std::vector<FlowSample> load_dataset_samples(const RunConfig& cfg,
                                             bool require_gt) {
  DatasetIndex index =
      ingest_dataset(cfg.dataset_root, parse_dataset_layout(cfg.dataset_layout));
  std::vector<FlowSample> samples;
  for (const auto& desc : index.samples) {
    FlowSample s = load_sample(desc);
    if (require_gt && !s.flow_gt) continue;
    samples.push_back(std::move(s));
  }
  return samples;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

template <typename T>
int run_train(const RunConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  {
    std::ofstream config_out(fs::path(cfg.out_dir) / "config.txt");
    config_out << serialize_run_config(cfg);
  }

  std::vector<FlowSample> train_set, heldout_set;
  if (cfg.dataset_root.empty()) {
    const SynthConfig sc = cfg.synth_config();
    train_set = build_synth_set(sc, 0, cfg.train_count);
    heldout_set = build_synth_set(sc, cfg.train_count, cfg.heldout_count);
  } else {
    train_set = load_dataset_samples(cfg, /*require_gt=*/true);
    if (train_set.empty()) {
      throw ArgumentError("dataset '" + cfg.dataset_root +
                          "' has no samples with ground truth");
    }
    heldout_set = train_set;  // desk scale: in-sample evaluation
  }

  FlowModel<T> model(cfg.model_config());
  std::cerr << "model parameters: " << model.parameter_count() << "\n";

  std::ofstream log(fs::path(cfg.out_dir) / "metrics.log");
  TrainOutcome outcome = train_model(model, cfg, train_set, heldout_set, log);
  save_checkpoint((fs::path(cfg.out_dir) / "checkpoint.bin").string(), model);
  if (outcome.diverged) {
    std::cerr << "training diverged: non-finite loss at step "
              << outcome.steps_run << "\n";
    return 3;
  }
  {
    std::ofstream report(fs::path(cfg.out_dir) / "eval_report.txt");
    report << outcome.report.to_text();
  }
  std::cout << outcome.report.to_text();
  return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

template <typename T>
EvalReport eval_precomputed_flows(const RunConfig& cfg, const std::string& flows_dir) {
  DatasetIndex index =
      ingest_dataset(cfg.dataset_root, parse_dataset_layout(cfg.dataset_layout));
  double epe_sum = 0.0;
  std::int64_t outliers = 0, pixels = 0;
  for (const auto& desc : index.samples) {
    if (desc.flow_path.empty()) continue;
    FlowField<T> gt = desc.layout == DatasetLayout::kitti_like
                          ? read_kitti_png<T>(desc.flow_path)
                          : read_flo<T>(desc.flow_path);
    const fs::path pred_path = fs::path(flows_dir) / (desc.id + ".flo");
    FlowField<T> pred = read_flo<T>(pred_path.string());
    if (pred.width() != gt.width() || pred.height() != gt.height()) {
      throw FormatError("prediction '" + pred_path.string() +
                        "' does not match the ground-truth dimensions");
    }
    const std::int64_t plane = std::int64_t(gt.height()) * gt.width();
    const T* gu = gt.flow.data().data();
    const T* gv = gu + plane;
    const T* pu = pred.flow.data().data();
    const T* pv = pu + plane;
    for (std::int64_t i = 0; i < plane; ++i) {
      if (gt.valid.defined() && gt.valid.data()[std::size_t(i)] == T(0)) continue;
      const double du = double(pu[i]) - double(gu[i]);
      const double dv = double(pv[i]) - double(gv[i]);
      const double err = std::sqrt(du * du + dv * dv);
      const double mag = std::sqrt(double(gu[i]) * double(gu[i]) +
                                   double(gv[i]) * double(gv[i]));
      epe_sum += err;
      if (err > 3.0 && err > 0.05 * mag) ++outliers;
      ++pixels;
    }
  }
  if (pixels == 0) throw NoValidPixelsError("eval: no valid pixels in dataset");
  EvalReport report;
  report.epe_mean = epe_sum / double(pixels);
  report.fl_all = 100.0 * double(outliers) / double(pixels);
  report.pixel_count = pixels;
  return report;
}

template <typename T>
int run_eval(const RunConfig& cfg, const std::string& checkpoint_path,
             const std::string& flows_dir) {
  EvalReport report;
  if (!flows_dir.empty()) {
    if (cfg.dataset_root.empty()) {
      throw ArgumentError("eval --flows requires --data <root>");
    }
    report = eval_precomputed_flows<T>(cfg, flows_dir);
  } else {
    FlowModel<T> model = load_checkpoint<T>(checkpoint_path);
    std::vector<FlowSample> samples;
    if (cfg.dataset_root.empty()) {
      samples = build_synth_set(cfg.synth_config(), cfg.train_count,
                                cfg.heldout_count);
    } else {
      samples = load_dataset_samples(cfg, /*require_gt=*/true);
      if (samples.empty()) {
        throw ArgumentError("dataset '" + cfg.dataset_root +
                            "' has no samples with ground truth");
      }
    }
    report = evaluate_model(model, samples, cfg.iterations);
  }
  std::cout << report.to_text();
  if (!cfg.out_dir.empty()) {
    fs::create_directories(cfg.out_dir);
    std::ofstream out(fs::path(cfg.out_dir) / "eval_report.txt");
    out << report.to_text();
  }
  return 0;
}

// ---------------------------------------------------------------------------
// infer
// ---------------------------------------------------------------------------

template <typename T>
int run_infer(const std::string& checkpoint_path, const std::string& image1,
              const std::string& image2, const std::string& out_dir,
              bool dump_iterations) {
  FlowModel<T> model = load_checkpoint<T>(checkpoint_path);
  Tensor<T> t1 = image_to_tensor<T>(read_png8(image1));
  Tensor<T> t2 = image_to_tensor<T>(read_png8(image2));
  IterationTrace<T> trace = model.estimate_flow(t1, t2);

  fs::create_directories(out_dir);
  const FlowField<T>& final_flow = trace.flows.back();
  const std::string flo_path = (fs::path(out_dir) / "flow.flo").string();
  write_flo(flo_path, final_flow);
  write_png8((fs::path(out_dir) / "flow.png").string(), flow_to_color(final_flow));
  std::cout << "flow=" << flo_path << "\n";
  if (dump_iterations) {
    for (std::size_t i = 0; i < trace.flows.size(); ++i) {
      char name[32];
      std::snprintf(name, sizeof(name), "iter_%02zu.png", i + 1);
      write_png8((fs::path(out_dir) / name).string(),
                 flow_to_color(trace.flows[i]));
    }
    std::cout << "iterations=" << trace.flows.size() << "\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------
// viz
// ---------------------------------------------------------------------------

FlowField<float> read_flow_any(const std::string& path) {
  const std::string ext = fs::path(path).extension().string();
  if (ext == ".png") return read_kitti_png<float>(path);
  return read_flo<float>(path);
}

int run_viz(const std::string& flow_path, const std::string& gt_path,
            const std::string& out_dir, std::optional<double> max_magnitude) {
  FlowField<float> flow = read_flow_any(flow_path);
  fs::create_directories(out_dir);
  write_png8((fs::path(out_dir) / "flow.png").string(),
             flow_to_color(flow, max_magnitude));
  std::cout << "flow_png=" << (fs::path(out_dir) / "flow.png").string() << "\n";
  if (!gt_path.empty()) {
    FlowField<float> gt = read_flow_any(gt_path);
    Tensor<float> em = error_map(flow, gt);
    write_png8((fs::path(out_dir) / "error.png").string(), error_render(em));
    ConfidenceMap<float> m = confidence_map(gt, flow);
    write_png8((fs::path(out_dir) / "confidence.png").string(),
               confidence_render(m));
    std::cout << "error_png=" << (fs::path(out_dir) / "error.png").string()
              << "\n";
    std::cout << "confidence_png="
              << (fs::path(out_dir) / "confidence.png").string() << "\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

template <typename T>
EvalReport train_and_eval_row(RunConfig cfg) {
  const SynthConfig sc = cfg.synth_config();
  std::vector<FlowSample> train_set = build_synth_set(sc, 0, cfg.train_count);
  std::vector<FlowSample> heldout_set =
      build_synth_set(sc, cfg.train_count, cfg.heldout_count);
  FlowModel<T> model(cfg.model_config());
  std::ostringstream sink;
  TrainOutcome outcome = train_model(model, cfg, train_set, heldout_set, sink);
  if (outcome.diverged) {
    throw ValueError("ablate: training diverged for one of the grid rows");
  }
  return outcome.report;
}

template <typename T>
int run_ablate(RunConfig base, const std::string& out_dir) {
  std::ostringstream table;
  char line[160];
  table << "# loss-variant ablation (SCI model, final-iteration confidence)\n";
  table << "variant            heldout_epe  heldout_fl_all\n";
  for (const std::string v : {"a", "b", "c", "d"}) {
    RunConfig cfg = base;
    cfg.sci = true;
    cfg.confidence_source = "final_iteration";
    cfg.loss_variant = v;
    EvalReport r = train_and_eval_row<T>(cfg);
    std::snprintf(line, sizeof(line), "%-18s %11.6f %15.6f\n", v.c_str(),
                  r.epe_mean, r.fl_all);
    table << line;
  }
  table << "\n# confidence-source ablation (SCI model, loss variant d)\n";
  table << "source             heldout_epe  heldout_fl_all\n";
  for (const std::string s : {"none", "per_iteration", "final_iteration"}) {
    RunConfig cfg = base;
    cfg.sci = true;
    cfg.loss_variant = "d";
    cfg.confidence_source = s;
    EvalReport r = train_and_eval_row<T>(cfg);
    std::snprintf(line, sizeof(line), "%-18s %11.6f %15.6f\n", s.c_str(),
                  r.epe_mean, r.fl_all);
    table << line;
  }
  std::cout << table.str();
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    std::ofstream out(fs::path(out_dir) / "ablate_report.txt");
    out << table.str();
  }
  return 0;
}

int guarded(const std::function<int()>& body) {
  try {
    return body();
  } catch (const ArgumentError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ShapeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {  // FormatError, LengthError, LayoutError
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const ValueError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const NoValidPixelsError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SciFlow: desk-scale optical-flow refinement with "
               "self-cleaning iterations and regression focal loss"};
  app.require_subcommand(1);

  ConfigArgs config_args;
  // Direct flags shared by train/eval/ablate; only flags the user passed
  // are applied on top of the assembled config.
  struct DirectFlags {
    int steps = 0;
    std::uint64_t seed = 0;
    double alpha = 0.0, beta = 0.0, gamma = 0.0, lr = 0.0;
    int batch = 0, iterations = 0;
    std::string loss_variant, confidence_source, precision, out, data_root,
        data_layout;
  } flags;

  auto add_config_options = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_args.config_file,
                    "key=value run configuration file")
        ->check(CLI::ExistingFile);
    cmd->add_option("--variant", config_args.variant,
                    "preset: baseline | sci | sci_rfl");
    cmd->add_option("--set", config_args.sets,
                    "override a config key: --set key=value (repeatable)");
    cmd->add_option("--steps", flags.steps, "training steps");
    cmd->add_option("--seed", flags.seed, "run seed");
    cmd->add_option("--alpha", flags.alpha, "focal weight scale");
    cmd->add_option("--beta", flags.beta, "focal weight exponent");
    cmd->add_option("--gamma", flags.gamma, "sequence-loss decay");
    cmd->add_option("--lr", flags.lr, "learning rate");
    cmd->add_option("--batch", flags.batch, "batch size");
    cmd->add_option("--iterations", flags.iterations, "refinement iterations");
    cmd->add_option("--loss-variant", flags.loss_variant,
                    "loss ablation row: a | b | c | d");
    cmd->add_option("--confidence-source", flags.confidence_source,
                    "none | per_iteration | final_iteration");
    cmd->add_option("--precision", flags.precision, "f32 | f64");
    cmd->add_option("--out", flags.out, "output directory");
    cmd->add_option("--data", flags.data_root, "dataset root directory");
    cmd->add_option("--layout", flags.data_layout,
                    "dataset layout: sintel_like | kitti_like | flo_pairs");
  };

  auto finish_config = [&](CLI::App* cmd) {
    RunConfig cfg = assemble_config(config_args);
    if (cmd->count("--steps")) cfg.steps = flags.steps;
    if (cmd->count("--seed")) cfg.seed = flags.seed;
    if (cmd->count("--alpha")) cfg.alpha = flags.alpha;
    if (cmd->count("--beta")) cfg.beta = flags.beta;
    if (cmd->count("--gamma")) cfg.gamma = flags.gamma;
    if (cmd->count("--lr")) cfg.lr = flags.lr;
    if (cmd->count("--batch")) cfg.batch = flags.batch;
    if (cmd->count("--iterations")) cfg.iterations = flags.iterations;
    if (cmd->count("--loss-variant")) cfg.loss_variant = flags.loss_variant;
    if (cmd->count("--confidence-source"))
      cfg.confidence_source = flags.confidence_source;
    if (cmd->count("--precision")) cfg.precision = flags.precision;
    if (cmd->count("--out")) cfg.out_dir = flags.out;
    if (cmd->count("--data")) cfg.dataset_root = flags.data_root;
    if (cmd->count("--layout")) cfg.dataset_layout = flags.data_layout;
    apply_sets(cfg, config_args.sets);
    cfg.validate();
    return cfg;
  };

  // train
  CLI::App* train_cmd = app.add_subcommand("train", "train a model variant");
  add_config_options(train_cmd);
  train_cmd->callback([&] {
    const RunConfig cfg = finish_config(train_cmd);
    std::exit(guarded([&] {
      return with_precision(cfg.precision,
                            [&](auto tag) { return run_train<decltype(tag)>(cfg); });
    }));
  });

  // eval
  std::string eval_checkpoint, eval_flows;
  CLI::App* eval_cmd =
      app.add_subcommand("eval", "evaluate a checkpoint or precomputed flows");
  add_config_options(eval_cmd);
  eval_cmd->add_option("--checkpoint", eval_checkpoint, "model checkpoint")
      ->check(CLI::ExistingFile);
  eval_cmd->add_option("--flows", eval_flows,
                       "directory of <id>.flo predictions to score instead of "
                       "running a model")
      ->check(CLI::ExistingDirectory);
  eval_cmd->callback([&] {
    RunConfig cfg = finish_config(eval_cmd);
    if (!eval_cmd->count("--out")) cfg.out_dir.clear();
    if (eval_checkpoint.empty() && eval_flows.empty()) {
      std::cerr << "error: eval needs --checkpoint or --flows\n";
      std::exit(2);
    }
    std::exit(guarded([&] {
      return with_precision(cfg.precision, [&](auto tag) {
        return run_eval<decltype(tag)>(cfg, eval_checkpoint, eval_flows);
      });
    }));
  });

  // infer
  std::string infer_checkpoint, infer_img1, infer_img2, infer_out = "infer_out";
  std::string infer_precision = "f32";
  bool dump_iterations = false;
  CLI::App* infer_cmd =
      app.add_subcommand("infer", "estimate flow for one image pair");
  infer_cmd->add_option("--checkpoint", infer_checkpoint, "model checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  infer_cmd->add_option("--image1", infer_img1, "first frame (PNG)")
      ->required()
      ->check(CLI::ExistingFile);
  infer_cmd->add_option("--image2", infer_img2, "second frame (PNG)")
      ->required()
      ->check(CLI::ExistingFile);
  infer_cmd->add_option("--out", infer_out, "output directory");
  infer_cmd->add_option("--precision", infer_precision, "f32 | f64");
  infer_cmd->add_flag("--dump-iterations", dump_iterations,
                      "write one color PNG per refinement iteration");
  infer_cmd->callback([&] {
    std::exit(guarded([&] {
      return with_precision(infer_precision, [&](auto tag) {
        return run_infer<decltype(tag)>(infer_checkpoint, infer_img1, infer_img2,
                                        infer_out, dump_iterations);
      });
    }));
  });

  // viz
  std::string viz_flow, viz_gt, viz_out = "viz_out";
  double viz_max_mag = 0.0;
  CLI::App* viz_cmd =
      app.add_subcommand("viz", "render a flow file as a color image");
  viz_cmd->add_option("--flow", viz_flow, "flow file (.flo or KITTI .png)")
      ->required()
      ->check(CLI::ExistingFile);
  viz_cmd->add_option("--gt", viz_gt,
                      "ground-truth flow file; adds error and confidence maps")
      ->check(CLI::ExistingFile);
  viz_cmd->add_option("--out", viz_out, "output directory");
  viz_cmd->add_option("--max-magnitude", viz_max_mag,
                      "fixed magnitude normalization (default: per-image max)");
  viz_cmd->callback([&] {
    std::exit(guarded([&] {
      std::optional<double> max_mag;
      if (viz_cmd->count("--max-magnitude")) max_mag = viz_max_mag;
      return run_viz(viz_flow, viz_gt, viz_out, max_mag);
    }));
  });

  // ablate
  CLI::App* ablate_cmd = app.add_subcommand(
      "ablate", "run the loss-variant and confidence-source grids");
  add_config_options(ablate_cmd);
  ablate_cmd->callback([&] {
    const RunConfig cfg = finish_config(ablate_cmd);
    std::exit(guarded([&] {
      return with_precision(cfg.precision, [&](auto tag) {
        return run_ablate<decltype(tag)>(cfg, cfg.out_dir);
      });
    }));
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const ArgumentError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
