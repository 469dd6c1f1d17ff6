#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "fvnet.hpp"

namespace fs = std::filesystem;
using namespace fvnet;

namespace {

// Exit codes by error category.
const std::map<std::string, int> kExitCodes{
    {"config", 3}, {"io", 4}, {"parse", 5}, {"shape", 6}, {"bounds", 7}, {"numeric", 8}, {"version", 9},
    {"gradcheck", 10}};
constexpr int kInternalExit = 1;
constexpr int kUsageExit = 2;

const char* kConfigHelp =
    "The config is a JSON file with the sections data, synthetic, architecture,\n"
    "pool, init, finetune and eval. Every key must be present and unknown keys\n"
    "are rejected; `fvnet config-template` prints a complete example.\n"
    "Manifest paths are resolved relative to the config file.";

struct Loaded {
  RunConfig config;
  fs::path base;  // directory of the config file
};

Loaded load(const std::string& path) {
  return {load_run_config(path), fs::absolute(path).parent_path()};
}

std::string resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return (path.is_absolute() ? path : base / path).lexically_normal().string();
}

std::vector<VideoSample> load_split(const Loaded& l, const std::string& manifest) {
  return load_videos(load_manifest(resolve(l.base, manifest), l.config.classes));
}

void log_line(const fs::path& run, const std::string& line) {
  std::ofstream out(run / "run.log", std::ios::app);
  out << line << "\n";
  std::cerr << line << "\n";
}

/// Creates the run directory, snapshots the resolved config and appends it
/// verbatim to the run log.
void start_run(const fs::path& run, const std::string& command, const RunConfig& c) {
  fs::create_directories(run);
  write_text((run / "config.json").string(), dump(c));
  log_line(run, "command: " + command);
  log_line(run, "resolved config:\n" + dump(c));
}

std::string one_line(std::string s) {
  for (auto& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

std::string pct(double a) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(2) << 100.0 * a << "%";
  return s.str();
}

int cmd_config_template(const std::string& out) {
  const auto text = dump(default_run_config());
  if (out.empty()) {
    std::cout << text;
  } else {
    write_text(out, text);
  }
  return 0;
}

int cmd_gen_data(const std::string& config) {
  const auto l = load(config);
  for (bool train : {true, false}) {
    const fs::path manifest = resolve(l.base, train ? l.config.train_manifest : l.config.test_manifest);
    const auto m = generate_synthetic(synthetic_split(l.config, train), manifest.parent_path().string(),
                                      manifest.stem().string());
    std::cout << manifest.string() << ": " << m.entries.size() << " videos\n";
  }
  return 0;
}

int cmd_init(const std::string& config, const fs::path& run) {
  const auto l = load(config);
  start_run(run, "init", l.config);
  const auto train = load_split(l, l.config.train_manifest);
  const auto t0 = std::chrono::steady_clock::now();
  const auto b = init_pipeline(train, l.config.classes, l.config.init);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  save_bundle((run / "init").string(), b);
  const auto e = evaluate(b, train, l.config.eval_temporal_stride, l.config.eval_crops);
  std::ostringstream msg;
  msg << "init: " << train.size() << " videos in " << std::setprecision(3) << secs << " s, train accuracy "
      << pct(e.accuracy) << ", bundle " << (run / "init").string();
  log_line(run, msg.str());
  return 0;
}

int cmd_finetune(const std::string& config, const fs::path& run, std::string bundle) {
  const auto l = load(config);
  start_run(run, "finetune", l.config);
  if (bundle.empty()) bundle = (run / "init").string();
  auto b = load_bundle(bundle);
  const auto train = load_split(l, l.config.train_manifest);
  const auto test = load_split(l, l.config.test_manifest);
  fs::create_directories(run / "checkpoints");
  std::vector<EpochMetrics> rows;
  const auto checkpoint = [&](std::size_t epoch, const ModelBundle& current) {
    std::ostringstream name;
    name << "epoch_" << std::setw(3) << std::setfill('0') << epoch;
    save_bundle((run / "checkpoints" / name.str()).string(), current);
  };
  checkpoint(0, b);
  rows = finetune(b, train, l.config.finetune, &test, checkpoint);
  save_bundle((run / "final").string(), b);
  write_text((run / "metrics.csv").string(), metrics_csv(rows));
  for (const auto& r : rows) {
    std::ostringstream msg;
    msg << "epoch " << r.epoch << " " << r.split << " loss " << format_double(r.loss) << " accuracy "
        << pct(r.accuracy);
    log_line(run, msg.str());
  }
  return 0;
}

int cmd_eval(const std::string& config, const std::string& bundle, std::string manifest, std::string out) {
  const auto l = load(config);
  const auto b = load_bundle(bundle);
  if (manifest.empty()) manifest = l.config.test_manifest;
  const auto m = load_manifest(resolve(l.base, manifest), l.config.classes);
  const auto videos = load_videos(m);
  const auto e = evaluate(b, videos, l.config.eval_temporal_stride, l.config.eval_crops);
  std::vector<std::string> ids;
  std::vector<std::size_t> labels;
  for (const auto& entry : m.entries) {
    ids.push_back(fs::path(entry.path).stem().string());
    labels.push_back(entry.label);
  }
  if (out.empty()) out = (fs::path(bundle) / "predictions.csv").string();
  write_text(out, predictions_csv(ids, labels, e.results));
  std::cout << "videos " << videos.size() << " loss " << format_double(e.loss) << " accuracy " << pct(e.accuracy)
            << "\npredictions " << out << "\n";
  return 0;
}

int cmd_gradcheck(const std::string& layer, std::uint64_t seed, double h) {
  const auto problem = make_gradcheck_problem(seed);
  std::vector<GradCheckEntry> entries;
  if (layer == "all") {
    entries = grad_check_all(problem, h);
  } else {
    entries.push_back(grad_check(problem, parse_grad_layer(layer), h));
  }
  std::string failed;
  std::cout << "layer,coordinates,max_relative_error,tolerance,worst,analytic,numeric,status\n";
  for (const auto& e : entries) {
    std::cout << to_string(e.layer) << "," << e.coordinates << "," << format_double(e.max_relative_error) << ","
              << e.tolerance << "," << e.worst << "," << format_double(e.worst_analytic) << ","
              << format_double(e.worst_numeric) << "," << (e.pass() ? "PASS" : "FAIL") << "\n";
    if (!e.pass()) failed += (failed.empty() ? "" : " ") + to_string(e.layer);
  }
  if (!failed.empty()) {
    std::cerr << "error: gradcheck: failed layers: " << failed << "\n";
    return kExitCodes.at("gradcheck");
  }
  return 0;
}

int cmd_params(std::size_t nc, std::size_t k, std::size_t d, std::size_t m, const std::string& bundle) {
  const auto c = bundle.empty() ? count_parameters(d, nc, k, m) : count_parameters(load_bundle(bundle));
  if (!bundle.empty()) std::cout << "extractor " << c.extractor << "\n";
  std::cout << "projection " << c.projection << "\ngmm " << c.gmm << "\nclassifier " << c.classifier << "\ntotal "
            << c.total << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fisher-vector network for video classification"};
  app.footer(kConfigHelp);
  app.require_subcommand(1);

  std::string config, run, bundle, manifest, out, layer = "all";
  std::uint64_t seed = 7;
  double h = 1e-5;
  std::size_t nc = 100, k = 256, d = 6144, m = 101;

  auto* tmpl = app.add_subcommand("config-template", "Print the default desk-scale config");
  tmpl->add_option("-o,--out", out, "Write to this file instead of stdout");

  auto* gen = app.add_subcommand("gen-data", "Write the synthetic train and test splits named by the config");
  gen->add_option("-c,--config", config, "Run config (JSON)")->required();

  auto* init = app.add_subcommand("init", "Unsupervised initialization: PCA, EM, then the SVM");
  init->add_option("-c,--config", config, "Run config (JSON)")->required();
  init->add_option("-r,--run", run, "Run directory; the bundle goes to <run>/init")->required();

  auto* ft = app.add_subcommand("finetune", "End-to-end finetuning with per-epoch checkpoints and metrics.csv");
  ft->add_option("-c,--config", config, "Run config (JSON)")->required();
  ft->add_option("-r,--run", run, "Run directory")->required();
  ft->add_option("-b,--bundle", bundle, "Starting bundle (default <run>/init)");

  auto* ev = app.add_subcommand("eval", "Classify a split and write per-video predictions");
  ev->add_option("-c,--config", config, "Run config (JSON)")->required();
  ev->add_option("-b,--bundle", bundle, "Bundle directory")->required();
  ev->add_option("-m,--manifest", manifest, "Manifest to classify (default: the config's test manifest)");
  ev->add_option("-o,--out", out, "Predictions CSV (default <bundle>/predictions.csv)");

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every backward pass");
  gc->add_option("-l,--layer", layer, "all or one of: extractor, pool, projection, gmm, fisher-unpowered, fisher, classifier, chain, chain-power");
  gc->add_option("-s,--seed", seed, "Problem seed");
  gc->add_option("--step", h, "Central-difference step");

  auto* params = app.add_subcommand("params", "Count trainable parameters");
  params->add_option("--nc", nc, "Reduced dimension n_c");
  params->add_option("--k", k, "Mixture components K");
  params->add_option("--d", d, "Descriptor dimension D");
  params->add_option("--m", m, "Classes m");
  params->add_option("-b,--bundle", bundle, "Count a saved bundle instead");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << one_line(e.what()) << "\n";
    return kUsageExit;
  }

  try {
    if (*tmpl) return cmd_config_template(out);
    if (*gen) return cmd_gen_data(config);
    if (*init) return cmd_init(config, run);
    if (*ft) return cmd_finetune(config, run, bundle);
    if (*ev) return cmd_eval(config, bundle, manifest, out);
    if (*gc) return cmd_gradcheck(layer, seed, h);
    if (*params) return cmd_params(nc, k, d, m, bundle);
  } catch (const Error& e) {
    std::cerr << "error: " << e.category() << ": " << one_line(e.what()) << "\n";
    return kExitCodes.at(e.category());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: io: " << one_line(e.what()) << "\n";
    return kExitCodes.at("io");
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << one_line(e.what()) << "\n";
    return kInternalExit;
  }
  return kInternalExit;
}
