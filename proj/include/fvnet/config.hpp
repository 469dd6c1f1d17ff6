#pragma once

// Run configuration as JSON. Every key must be present and unknown keys are
// rejected, so a config file is a complete record of a run.

#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <set>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "fvnet/dataset.hpp"
#include "fvnet/error.hpp"
#include "fvnet/network.hpp"
#include "fvnet/train.hpp"

namespace fvnet {

struct RunConfig {
  std::string train_manifest = "data/train.csv";
  std::string test_manifest = "data/test.csv";
  std::size_t classes = 4;
  SyntheticConfig synthetic;
  std::size_t test_per_class = 20;
  std::uint64_t test_seed = 1001;
  InitConfig init;
  FinetuneConfig finetune;
  std::size_t eval_temporal_stride = 15;
  CropSpec eval_crops;
};

/// The desk-scale defaults: 4-class synthetic set with 200 train and 80 test
/// videos. The FV is kept small (n_c = 2, K = 2) so the unsupervised
/// layers, not the SVM, limit accuracy at init.
inline RunConfig default_run_config() {
  RunConfig c;
  c.synthetic.per_class = 50;
  c.synthetic.speed = 1;
  c.synthetic.noise_std = 0.5;
  c.init.arch.filter_std = 1.0;
  c.init.n_c = 2;
  c.init.components = 2;
  c.finetune.learning_rate = 3e-2;
  c.finetune.epochs = 15;
  return c;
}

namespace detail {

using nlohmann::json;

inline void require_keys(const json& j, const std::string& section, std::initializer_list<const char*> keys) {
  if (!j.is_object()) throw ConfigError("section '" + section + "' must be an object");
  std::set<std::string> known;
  for (const char* k : keys) {
    known.insert(k);
    if (!j.contains(k)) throw ConfigError("missing key '" + section + "." + k + "'");
  }
  for (const auto& [k, v] : j.items()) {
    if (!known.count(k)) throw ConfigError("unknown key '" + section + "." + k + "'");
  }
}

template <class T>
T get(const json& j, const std::string& section, const char* key) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("bad value for '" + section + "." + key + "'");
  }
}

inline std::string input_name(InputKind k) { return k == InputKind::frames ? "frames" : "features"; }

inline InputKind parse_input(const std::string& s) {
  if (s == "frames") return InputKind::frames;
  if (s == "features") return InputKind::features;
  throw ConfigError("input must be 'frames' or 'features', got '" + s + "'");
}

inline std::string optimizer_name(OptimizerKind k) { return k == OptimizerKind::adagrad ? "adagrad" : "sgd_momentum"; }

inline OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "adagrad") return OptimizerKind::adagrad;
  if (s == "sgd_momentum") return OptimizerKind::sgd_momentum;
  throw ConfigError("optimizer must be 'adagrad' or 'sgd_momentum', got '" + s + "'");
}

}  // namespace detail

inline nlohmann::json to_json(const RunConfig& c) {
  using nlohmann::json;
  const auto& s = c.synthetic;
  const auto& a = c.init.arch;
  const auto& f = c.finetune;
  json crops = json::array();
  for (const auto& r : c.eval_crops.regions) crops.push_back({r.h0, r.w0, r.h, r.w});
  return json{
      {"data", {{"train_manifest", c.train_manifest}, {"test_manifest", c.test_manifest}, {"classes", c.classes}}},
      {"synthetic",
       {{"seed", s.seed},
        {"test_seed", c.test_seed},
        {"train_per_class", s.per_class},
        {"test_per_class", c.test_per_class},
        {"frames", s.frames},
        {"height", s.height},
        {"width", s.width},
        {"patch", s.patch},
        {"speed", s.speed},
        {"background", s.background},
        {"patch_level", s.patch_level},
        {"noise_std", s.noise_std}}},
      {"architecture",
       {{"input", detail::input_name(a.input)},
        {"lcn", a.lcn},
        {"filters", a.filters},
        {"kernel", a.kernel},
        {"conv_pool_window", a.conv_pool_window},
        {"conv_pool_stride", a.conv_pool_stride},
        {"filter_std", a.filter_std}}},
      {"pool",
       {{"n_sigma", a.pool.n_sigma},
        {"n_tau", a.pool.n_tau},
        {"cell_h", a.pool.cell_h},
        {"cell_w", a.pool.cell_w},
        {"frames", a.pool.frames},
        {"spatial_stride", a.pool.stride}}},
      {"init",
       {{"seed", c.init.seed},
        {"subvolumes_per_video", c.init.subvolumes_per_video},
        {"pca_samples_per_video", c.init.pca_samples_per_video},
        {"n_c", c.init.n_c},
        {"K", c.init.components},
        {"C", c.init.C},
        {"temporal_stride", c.init.temporal_stride},
        {"em_iterations", c.init.em_iterations},
        {"em_tolerance", c.init.em_tolerance},
        {"svm_epochs", c.init.svm.epochs},
        {"svm_learning_rate", c.init.svm.learning_rate},
        {"svm_momentum", c.init.svm.momentum}}},
      {"finetune",
       {{"seed", f.seed},
        {"optimizer", detail::optimizer_name(f.optimizer)},
        {"learning_rate", f.learning_rate},
        {"momentum", f.momentum},
        {"lr_decay", f.lr_decay},
        {"dropout", f.dropout},
        {"epochs", f.epochs},
        {"spatial_stride", f.spatial_stride},
        {"temporal_stride", f.temporal_stride}}},
      {"eval", {{"temporal_stride", c.eval_temporal_stride}, {"crops", crops}, {"include_full", c.eval_crops.include_full}}},
  };
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  using detail::get;
  using detail::require_keys;
  RunConfig c;
  require_keys(j, "<root>", {"data", "synthetic", "architecture", "pool", "init", "finetune", "eval"});

  const auto& d = j.at("data");
  require_keys(d, "data", {"train_manifest", "test_manifest", "classes"});
  c.train_manifest = get<std::string>(d, "data", "train_manifest");
  c.test_manifest = get<std::string>(d, "data", "test_manifest");
  c.classes = get<std::size_t>(d, "data", "classes");

  const auto& s = j.at("synthetic");
  require_keys(s, "synthetic",
               {"seed", "test_seed", "train_per_class", "test_per_class", "frames", "height", "width", "patch", "speed", "background",
                "patch_level", "noise_std"});
  c.synthetic.seed = get<std::uint64_t>(s, "synthetic", "seed");
  c.test_seed = get<std::uint64_t>(s, "synthetic", "test_seed");
  c.synthetic.classes = c.classes;
  c.synthetic.per_class = get<std::size_t>(s, "synthetic", "train_per_class");
  c.test_per_class = get<std::size_t>(s, "synthetic", "test_per_class");
  c.synthetic.frames = get<std::size_t>(s, "synthetic", "frames");
  c.synthetic.height = get<std::size_t>(s, "synthetic", "height");
  c.synthetic.width = get<std::size_t>(s, "synthetic", "width");
  c.synthetic.patch = get<std::size_t>(s, "synthetic", "patch");
  c.synthetic.speed = get<std::size_t>(s, "synthetic", "speed");
  c.synthetic.background = get<double>(s, "synthetic", "background");
  c.synthetic.patch_level = get<double>(s, "synthetic", "patch_level");
  c.synthetic.noise_std = get<double>(s, "synthetic", "noise_std");

  auto& a = c.init.arch;
  const auto& ja = j.at("architecture");
  require_keys(ja, "architecture",
               {"input", "lcn", "filters", "kernel", "conv_pool_window", "conv_pool_stride", "filter_std"});
  a.input = detail::parse_input(get<std::string>(ja, "architecture", "input"));
  a.lcn = get<bool>(ja, "architecture", "lcn");
  a.filters = get<std::size_t>(ja, "architecture", "filters");
  a.kernel = get<std::size_t>(ja, "architecture", "kernel");
  a.conv_pool_window = get<std::size_t>(ja, "architecture", "conv_pool_window");
  a.conv_pool_stride = get<std::size_t>(ja, "architecture", "conv_pool_stride");
  a.filter_std = get<double>(ja, "architecture", "filter_std");

  const auto& p = j.at("pool");
  require_keys(p, "pool", {"n_sigma", "n_tau", "cell_h", "cell_w", "frames", "spatial_stride"});
  a.pool.n_sigma = get<std::size_t>(p, "pool", "n_sigma");
  a.pool.n_tau = get<std::size_t>(p, "pool", "n_tau");
  a.pool.cell_h = get<std::size_t>(p, "pool", "cell_h");
  a.pool.cell_w = get<std::size_t>(p, "pool", "cell_w");
  a.pool.frames = get<std::size_t>(p, "pool", "frames");
  a.pool.stride = get<std::size_t>(p, "pool", "spatial_stride");

  const auto& i = j.at("init");
  require_keys(i, "init",
               {"seed", "subvolumes_per_video", "pca_samples_per_video", "n_c", "K", "C", "temporal_stride",
                "em_iterations", "em_tolerance", "svm_epochs", "svm_learning_rate", "svm_momentum"});
  c.init.seed = get<std::uint64_t>(i, "init", "seed");
  c.init.subvolumes_per_video = get<std::size_t>(i, "init", "subvolumes_per_video");
  c.init.pca_samples_per_video = get<std::size_t>(i, "init", "pca_samples_per_video");
  c.init.n_c = get<std::size_t>(i, "init", "n_c");
  c.init.components = get<std::size_t>(i, "init", "K");
  c.init.C = get<double>(i, "init", "C");
  c.init.temporal_stride = get<std::size_t>(i, "init", "temporal_stride");
  c.init.em_iterations = get<std::size_t>(i, "init", "em_iterations");
  c.init.em_tolerance = get<double>(i, "init", "em_tolerance");
  c.init.svm.epochs = get<std::size_t>(i, "init", "svm_epochs");
  c.init.svm.learning_rate = get<double>(i, "init", "svm_learning_rate");
  c.init.svm.momentum = get<double>(i, "init", "svm_momentum");

  auto& f = c.finetune;
  const auto& jf = j.at("finetune");
  require_keys(jf, "finetune",
               {"seed", "optimizer", "learning_rate", "momentum", "lr_decay", "dropout", "epochs", "spatial_stride",
                "temporal_stride"});
  f.seed = get<std::uint64_t>(jf, "finetune", "seed");
  f.optimizer = detail::parse_optimizer(get<std::string>(jf, "finetune", "optimizer"));
  f.learning_rate = get<double>(jf, "finetune", "learning_rate");
  f.momentum = get<double>(jf, "finetune", "momentum");
  f.lr_decay = get<double>(jf, "finetune", "lr_decay");
  f.dropout = get<double>(jf, "finetune", "dropout");
  f.epochs = get<std::size_t>(jf, "finetune", "epochs");
  f.spatial_stride = get<std::size_t>(jf, "finetune", "spatial_stride");
  f.temporal_stride = get<std::size_t>(jf, "finetune", "temporal_stride");

  const auto& e = j.at("eval");
  require_keys(e, "eval", {"temporal_stride", "crops", "include_full"});
  c.eval_temporal_stride = get<std::size_t>(e, "eval", "temporal_stride");
  c.eval_crops.include_full = get<bool>(e, "eval", "include_full");
  const auto& crops = e.at("crops");
  if (!crops.is_array()) throw ConfigError("'eval.crops' must be an array of [h0, w0, h, w]");
  for (const auto& r : crops) {
    if (!r.is_array() || r.size() != 4) throw ConfigError("'eval.crops' entries must be [h0, w0, h, w]");
    try {
      c.eval_crops.regions.push_back(
          {r[0].get<std::size_t>(), r[1].get<std::size_t>(), r[2].get<std::size_t>(), r[3].get<std::size_t>()});
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("'eval.crops' entries must be nonnegative integers");
    }
  }

  validate(c.synthetic);
  validate(c.init);
  validate(c.finetune);
  if (c.classes < 2) throw ConfigError("data.classes must be >= 2");
  return c;
}

inline RunConfig parse_run_config(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("config is not valid JSON: ") + e.what());
  }
  return run_config_from_json(j);
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

inline std::string dump(const RunConfig& c) { return to_json(c).dump(2) + "\n"; }

/// The two synthetic splits a config describes.
inline SyntheticConfig synthetic_split(const RunConfig& c, bool train) {
  auto s = c.synthetic;
  s.classes = c.classes;
  if (!train) {
    s.seed = c.test_seed;
    s.per_class = c.test_per_class;
  }
  return s;
}

}  // namespace fvnet
