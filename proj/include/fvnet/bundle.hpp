#pragma once

// ModelBundle: every trainable parameter plus the layer hyperparameters of one
// network, and its on-disk form.
//
// A bundle is a directory holding `bundle.txt` (one key=value per line) and one
// TensorFile per parameter tensor, named after its parameter group
// ("projection.axes.fvnt", ...). Optimizer state slots are stored as
// "state.<group>.fvnt".

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fvnet/classifier.hpp"
#include "fvnet/error.hpp"
#include "fvnet/extractor.hpp"
#include "fvnet/fisher.hpp"
#include "fvnet/gmm.hpp"
#include "fvnet/projection.hpp"
#include "fvnet/st_pool.hpp"
#include "fvnet/tensor_io.hpp"

namespace fvnet {

inline constexpr int kBundleFormatVersion = 1;

enum class InputKind { frames, features };

struct ModelBundle {
  InputKind input = InputKind::frames;
  bool lcn = true;                          // normalize raw frames before extraction
  std::optional<ExtractorParams> extractor;  // present iff input == frames
  PoolConfig pool;
  Projection projection;
  GmmParams gmm;
  SvmParams svm;
  std::map<std::string, std::vector<double>> optimizer_state;  // one slot per parameter group

  std::size_t feature_channels() const {
    return extractor ? extractor->channels() : projection.input_dim() / (pool.n_sigma * pool.n_sigma * pool.n_tau);
  }
};

/// A named, contiguous block of trainable values.
struct ParamGroup {
  std::string name;
  std::span<double> values;
};

namespace detail {
inline std::span<double> span_of(Vector& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }
inline std::span<double> span_of(RowMatrix& m) { return {m.data(), static_cast<std::size_t>(m.size())}; }
}  // namespace detail

/// Trainable groups in a fixed order. Extractor groups come first when present.
inline std::vector<ParamGroup> parameter_groups(ModelBundle& b) {
  std::vector<ParamGroup> g;
  if (b.extractor) {
    g.push_back({"extractor.filters", b.extractor->filters.values()});
    g.push_back({"extractor.biases", b.extractor->biases});
  }
  g.push_back({"projection.mean", detail::span_of(b.projection.mean)});
  g.push_back({"projection.axes", detail::span_of(b.projection.axes)});
  g.push_back({"gmm.alpha", detail::span_of(b.gmm.alpha)});
  g.push_back({"gmm.mean", detail::span_of(b.gmm.mean)});
  g.push_back({"gmm.log_var", detail::span_of(b.gmm.log_var)});
  g.push_back({"svm.weights", detail::span_of(b.svm.weights)});
  g.push_back({"svm.bias", detail::span_of(b.svm.bias)});
  return g;
}

/// Same shapes and hyperparameters, every trainable value zero. Used as the
/// gradient container.
inline ModelBundle zeros_like(const ModelBundle& b) {
  ModelBundle z = b;
  z.optimizer_state.clear();
  for (auto& g : parameter_groups(z)) std::fill(g.values.begin(), g.values.end(), 0.0);
  return z;
}

/// Checks that every layer's dimensions agree with its neighbours.
inline void validate(const ModelBundle& b) {
  auto fail = [](const std::string& msg) { throw ShapeError("dim inconsistency: " + msg); };
  validate(b.pool);
  if (b.input == InputKind::frames) {
    if (!b.extractor) fail("frame-input bundle has no extractor");
    validate(*b.extractor);
  } else if (b.extractor) {
    fail("feature-input bundle must not carry an extractor");
  }
  const std::size_t D = b.projection.input_dim();
  const std::size_t cells = b.pool.n_sigma * b.pool.n_sigma * b.pool.n_tau;
  if (b.extractor && b.pool.descriptor_dim(b.extractor->channels()) != D) {
    fail("pooling of " + std::to_string(b.extractor->channels()) + " channels gives D=" +
         std::to_string(b.pool.descriptor_dim(b.extractor->channels())) + " but projection expects " + std::to_string(D));
  }
  if (D % cells != 0) fail("projection input D=" + std::to_string(D) + " is not a multiple of the pooling cell count");
  if (static_cast<std::size_t>(b.projection.mean.size()) != D) fail("projection mean length differs from D");
  const std::size_t nc = b.projection.output_dim();
  const std::size_t K = b.gmm.components();
  if (b.gmm.dim() != nc) fail("GMM means have " + std::to_string(b.gmm.dim()) + " columns, n_c=" + std::to_string(nc));
  if (static_cast<std::size_t>(b.gmm.alpha.size()) != K) fail("GMM has " + std::to_string(b.gmm.alpha.size()) + " logits for K=" + std::to_string(K));
  if (b.gmm.log_var.rows() != b.gmm.mean.rows() || b.gmm.log_var.cols() != b.gmm.mean.cols()) {
    fail("GMM log-variances do not match the means");
  }
  if (b.svm.input_dim() != fv_dim(K, nc)) {
    fail("classifier expects " + std::to_string(b.svm.input_dim()) + " inputs, FV has " + std::to_string(fv_dim(K, nc)));
  }
  if (static_cast<std::size_t>(b.svm.bias.size()) != b.svm.classes()) fail("classifier bias length differs from m");
  if (b.svm.classes() < 2) fail("classifier needs m >= 2");
}

struct ParameterCount {
  std::size_t extractor = 0;
  std::size_t projection = 0;
  std::size_t gmm = 0;
  std::size_t classifier = 0;
  std::size_t total = 0;  // projection + gmm + classifier; the extractor is reported separately
};

/// D (n_c + 1) + K (m (2 n_c + 1) + 2 n_c + 1) + m, broken down by layer.
inline ParameterCount count_parameters(std::size_t D, std::size_t n_c, std::size_t K, std::size_t m) {
  ParameterCount c;
  c.projection = D * (n_c + 1);
  c.gmm = K * (2 * n_c + 1);
  c.classifier = m * fv_dim(K, n_c) + m;
  c.total = c.projection + c.gmm + c.classifier;
  return c;
}

inline ParameterCount count_parameters(const ModelBundle& b) {
  ParameterCount c;
  c.extractor = b.extractor ? b.extractor->parameter_count() : 0;
  c.projection = b.projection.parameter_count();
  c.gmm = b.gmm.parameter_count();
  c.classifier = b.svm.parameter_count();
  c.total = c.projection + c.gmm + c.classifier;
  return c;
}

namespace detail {

inline std::string format_double(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

inline TensorFile matrix_file(std::span<const double> values, std::vector<std::uint32_t> dims) {
  return {DType::f64, std::move(dims), std::vector<double>(values.begin(), values.end())};
}

inline std::uint32_t u32(std::size_t v) { return static_cast<std::uint32_t>(v); }

}  // namespace detail

inline void save_bundle(const std::string& dir, const ModelBundle& b) {
  validate(b);
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const std::size_t D = b.projection.input_dim(), nc = b.projection.output_dim(), K = b.gmm.components(),
                    m = b.svm.classes();
  std::ofstream h(fs::path(dir) / "bundle.txt", std::ios::trunc);
  if (!h) throw IoError("cannot write " + (fs::path(dir) / "bundle.txt").string());
  h << "format_version=" << kBundleFormatVersion << "\n"
    << "input=" << (b.input == InputKind::frames ? "frames" : "features") << "\n"
    << "lcn=" << (b.lcn ? 1 : 0) << "\n";
  if (b.extractor) {
    h << "extractor.channels=" << b.extractor->channels() << "\n"
      << "extractor.kernel_h=" << b.extractor->kernel_h() << "\n"
      << "extractor.kernel_w=" << b.extractor->kernel_w() << "\n"
      << "extractor.in_channels=" << b.extractor->in_channels() << "\n"
      << "extractor.pool_window=" << b.extractor->pool_window << "\n"
      << "extractor.pool_stride=" << b.extractor->pool_stride << "\n";
  }
  h << "pool.n_sigma=" << b.pool.n_sigma << "\n"
    << "pool.n_tau=" << b.pool.n_tau << "\n"
    << "pool.cell_h=" << b.pool.cell_h << "\n"
    << "pool.cell_w=" << b.pool.cell_w << "\n"
    << "pool.frames=" << b.pool.frames << "\n"
    << "pool.stride=" << b.pool.stride << "\n"
    << "D=" << D << "\n"
    << "n_c=" << nc << "\n"
    << "K=" << K << "\n"
    << "m=" << m << "\n"
    << "svm.C=" << detail::format_double(b.svm.C) << "\n"
    << "svm.train_size=" << b.svm.train_size << "\n";
  if (!h) throw IoError("failed writing bundle header in " + dir);

  auto path = [&](const std::string& name) { return (fs::path(dir) / (name + ".fvnt")).string(); };
  using detail::u32;
  if (b.extractor) {
    write_tensor(path("extractor.filters"), b.extractor->filters);
    write_vector(path("extractor.biases"), b.extractor->biases);
  }
  write_vector(path("projection.mean"), {b.projection.mean.data(), D});
  write_tensor_file(path("projection.axes"), detail::matrix_file({b.projection.axes.data(), nc * D}, {u32(nc), u32(D)}));
  write_vector(path("gmm.alpha"), {b.gmm.alpha.data(), K});
  write_tensor_file(path("gmm.mean"), detail::matrix_file({b.gmm.mean.data(), K * nc}, {u32(K), u32(nc)}));
  write_tensor_file(path("gmm.log_var"), detail::matrix_file({b.gmm.log_var.data(), K * nc}, {u32(K), u32(nc)}));
  write_tensor_file(path("svm.weights"),
                    detail::matrix_file({b.svm.weights.data(), static_cast<std::size_t>(b.svm.weights.size())},
                                        {u32(m), u32(b.svm.input_dim())}));
  write_vector(path("svm.bias"), {b.svm.bias.data(), m});
  for (const auto& [name, slot] : b.optimizer_state) write_vector(path("state." + name), slot);
}

namespace detail {

inline std::map<std::string, std::string> read_header(const std::string& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot open " + file);
  std::map<std::string, std::string> kv;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(file + " line " + std::to_string(lineno) + ": expected key=value");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

inline std::size_t header_size(const std::map<std::string, std::string>& kv, const std::string& key) {
  auto it = kv.find(key);
  if (it == kv.end()) throw ParseError("bundle header lacks " + key);
  try {
    std::size_t pos = 0;
    const auto v = std::stoull(it->second, &pos);
    if (pos != it->second.size()) throw ParseError("");
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw ParseError("bundle header key " + key + " is not a count: " + it->second);
  }
}

inline void expect_dims(const TensorFile& f, const std::vector<std::uint32_t>& dims, const std::string& name) {
  if (f.dims != dims) {
    std::string got, want;
    for (auto d : f.dims) got += std::to_string(d) + " ";
    for (auto d : dims) want += std::to_string(d) + " ";
    throw ShapeError("dim inconsistency: " + name + " stored with dims [ " + got + "], header implies [ " + want + "]");
  }
}

}  // namespace detail

inline ModelBundle load_bundle(const std::string& dir) {
  namespace fs = std::filesystem;
  const auto kv = detail::read_header((fs::path(dir) / "bundle.txt").string());
  const auto version = detail::header_size(kv, "format_version");
  if (version != static_cast<std::size_t>(kBundleFormatVersion)) {
    throw VersionError("bundle format version " + std::to_string(version) + " is not supported (expected " +
                       std::to_string(kBundleFormatVersion) + ")");
  }
  auto path = [&](const std::string& name) { return (fs::path(dir) / (name + ".fvnt")).string(); };
  auto sz = [&](const std::string& key) { return detail::header_size(kv, key); };
  using detail::u32;

  ModelBundle b;
  const auto input = kv.count("input") ? kv.at("input") : "";
  if (input == "frames") {
    b.input = InputKind::frames;
  } else if (input == "features") {
    b.input = InputKind::features;
  } else {
    throw ParseError("bundle header has unknown input kind '" + input + "'");
  }
  b.lcn = sz("lcn") != 0;
  if (b.input == InputKind::frames) {
    ExtractorParams e;
    auto filters = read_tensor_file(path("extractor.filters"));
    detail::expect_dims(filters,
                        {u32(sz("extractor.channels")), u32(sz("extractor.kernel_h")), u32(sz("extractor.kernel_w")),
                         u32(sz("extractor.in_channels"))},
                        "extractor.filters");
    e.filters = Tensor4({filters.dims[0], filters.dims[1], filters.dims[2], filters.dims[3]}, std::move(filters.values));
    auto biases = read_tensor_file(path("extractor.biases"));
    detail::expect_dims(biases, {u32(sz("extractor.channels"))}, "extractor.biases");
    e.biases = std::move(biases.values);
    e.pool_window = sz("extractor.pool_window");
    e.pool_stride = sz("extractor.pool_stride");
    b.extractor = std::move(e);
  }
  b.pool = {sz("pool.n_sigma"), sz("pool.n_tau"), sz("pool.cell_h"), sz("pool.cell_w"), sz("pool.frames"), sz("pool.stride")};
  const std::size_t D = sz("D"), nc = sz("n_c"), K = sz("K"), m = sz("m");

  auto load_vector = [&](const std::string& name, std::size_t n) {
    auto f = read_tensor_file(path(name));
    detail::expect_dims(f, {u32(n)}, name);
    return Vector(Eigen::Map<Vector>(f.values.data(), static_cast<Eigen::Index>(n)));
  };
  auto load_matrix = [&](const std::string& name, std::size_t rows, std::size_t cols) {
    auto f = read_tensor_file(path(name));
    detail::expect_dims(f, {u32(rows), u32(cols)}, name);
    return RowMatrix(Eigen::Map<RowMatrix>(f.values.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)));
  };
  b.projection.mean = load_vector("projection.mean", D);
  b.projection.axes = load_matrix("projection.axes", nc, D);
  b.gmm.alpha = load_vector("gmm.alpha", K);
  b.gmm.mean = load_matrix("gmm.mean", K, nc);
  b.gmm.log_var = load_matrix("gmm.log_var", K, nc);
  b.svm.weights = load_matrix("svm.weights", m, fv_dim(K, nc));
  b.svm.bias = load_vector("svm.bias", m);
  try {
    b.svm.C = std::stod(kv.at("svm.C"));
  } catch (const std::exception&) {
    throw ParseError("bundle header has no valid svm.C");
  }
  b.svm.train_size = sz("svm.train_size");

  ModelBundle probe = b;
  for (const auto& g : parameter_groups(probe)) {
    const auto file = path("state." + g.name);
    if (!fs::exists(file)) continue;
    auto f = read_tensor_file(file);
    detail::expect_dims(f, {u32(g.values.size())}, "state." + g.name);
    b.optimizer_state[g.name] = std::move(f.values);
  }
  validate(b);
  return b;
}

}  // namespace fvnet
