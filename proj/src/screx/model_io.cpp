#include "screx/model_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

static_assert(std::endian::native == std::endian::little,
              "model blob layout assumes a little-endian host");

namespace screx {

namespace {

constexpr const char* kMagic = "SCREXMODEL v1";

void write_values(std::ofstream& f, const std::vector<double>& v, Precision p) {
  if (p == Precision::binary32) {
    std::vector<float> tmp(v.begin(), v.end());
    f.write(reinterpret_cast<const char*>(tmp.data()), std::streamsize(tmp.size() * 4));
  } else {
    f.write(reinterpret_cast<const char*>(v.data()), std::streamsize(v.size() * 8));
  }
}

void read_values(std::ifstream& f, std::vector<double>& v, size_t n, Precision p) {
  v.resize(n);
  if (p == Precision::binary32) {
    std::vector<float> tmp(n);
    f.read(reinterpret_cast<char*>(tmp.data()), std::streamsize(n * 4));
    for (size_t i = 0; i < n; ++i) v[i] = double(tmp[i]);
  } else {
    f.read(reinterpret_cast<char*>(v.data()), std::streamsize(n * 8));
  }
  if (!f) throw std::runtime_error("model file: truncated weight blob");
}

}  // namespace

void save_model(const ModelGraph& m, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for write: " + path);
  f << kMagic << "\n";
  f << "precision " << (m.precision == Precision::binary32 ? "binary32" : "binary64") << "\n";
  f << "input";
  for (int d : m.input_shape.dims) f << " " << d;
  f << "\n";
  f << "layers " << m.layers.size() << "\n";
  for (const LayerNode& L : m.layers) {
    f << layer_kind_name(L.kind);
    switch (L.kind) {
      case LayerKind::dense:
        f << " out " << L.out_units << " bias " << int(L.has_bias);
        break;
      case LayerKind::conv2d:
      case LayerKind::depthwise_conv2d:
        f << " out " << L.out_units << " kernel " << L.kernel << " stride " << L.stride
          << " pad " << L.pad << " bias " << int(L.has_bias);
        break;
      default: break;
    }
    f << "\n";
  }
  f << "blob\n";
  for (const LayerNode& L : m.layers) {
    if (L.kind == LayerKind::batchnorm) {
      write_values(f, L.bn_scale, m.precision);
      write_values(f, L.bn_shift, m.precision);
      write_values(f, L.bn_mean, m.precision);
      write_values(f, L.bn_var, m.precision);
    } else {
      if (!L.weights.empty()) write_values(f, L.weights, m.precision);
      if (L.has_bias) write_values(f, L.bias, m.precision);
    }
  }
  if (!f) throw std::runtime_error("write failed: " + path);
}

ModelGraph load_model(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path);
  std::string line;
  auto next_line = [&]() {
    if (!std::getline(f, line)) throw std::runtime_error("model file: truncated header");
    return line;
  };
  if (next_line() != kMagic) throw std::runtime_error("model file: bad magic in " + path);

  ModelGraph m;
  {
    std::istringstream is(next_line());
    std::string key, val;
    is >> key >> val;
    if (key != "precision") throw std::runtime_error("model file: expected precision");
    if (val == "binary32") m.precision = Precision::binary32;
    else if (val == "binary64") m.precision = Precision::binary64;
    else throw std::runtime_error("model file: unknown precision " + val);
  }
  {
    std::istringstream is(next_line());
    std::string key;
    is >> key;
    if (key != "input") throw std::runtime_error("model file: expected input shape");
    int d;
    while (is >> d) m.input_shape.dims.push_back(d);
  }
  size_t n_layers = 0;
  {
    std::istringstream is(next_line());
    std::string key;
    is >> key >> n_layers;
    if (key != "layers") throw std::runtime_error("model file: expected layer count");
  }
  // shape tracking so tensor sizes are known before the blob is read
  TensorShape cur = m.input_shape;
  struct PendingSizes { size_t w = 0, b = 0, bn = 0; };
  std::vector<PendingSizes> sizes;
  for (size_t i = 0; i < n_layers; ++i) {
    std::istringstream is(next_line());
    std::string kind;
    is >> kind;
    LayerNode L;
    PendingSizes ps;
    auto read_kv = [&](const char* want) {
      std::string k;
      int v;
      if (!(is >> k >> v) || k != want)
        throw std::runtime_error("model file: layer " + std::to_string(i) + " expects " + want);
      return v;
    };
    if (kind == "dense") {
      L.kind = LayerKind::dense;
      L.out_units = read_kv("out");
      L.has_bias = read_kv("bias") != 0;
      if (cur.dims.size() != 1) throw std::runtime_error("model file: dense on non-flat input");
      ps.w = size_t(L.out_units) * cur.dims[0];
      ps.b = L.has_bias ? L.out_units : 0;
      cur = TensorShape{{L.out_units}};
    } else if (kind == "conv2d" || kind == "depthwise_conv2d") {
      L.kind = kind == "conv2d" ? LayerKind::conv2d : LayerKind::depthwise_conv2d;
      L.out_units = read_kv("out");
      L.kernel = read_kv("kernel");
      L.stride = read_kv("stride");
      L.pad = read_kv("pad");
      L.has_bias = read_kv("bias") != 0;
      if (cur.dims.size() != 3) throw std::runtime_error("model file: conv on non-image input");
      const int in_c = cur.dims[0];
      const int oh = (cur.dims[1] + 2 * L.pad - L.kernel) / L.stride + 1;
      const int ow = (cur.dims[2] + 2 * L.pad - L.kernel) / L.stride + 1;
      ps.w = size_t(L.out_units) * (L.kind == LayerKind::depthwise_conv2d ? 1 : in_c) *
             L.kernel * L.kernel;
      ps.b = L.has_bias ? L.out_units : 0;
      cur = TensorShape{{L.out_units, oh, ow}};
    } else if (kind == "batchnorm") {
      L.kind = LayerKind::batchnorm;
      ps.bn = cur.dims[0];
    } else if (kind == "relu") {
      L.kind = LayerKind::relu;
    } else if (kind == "avgpool") {
      L.kind = LayerKind::avgpool;
      cur = TensorShape{{cur.dims[0], 1, 1}};
    } else if (kind == "flatten") {
      L.kind = LayerKind::flatten;
      cur = TensorShape{{cur.count()}};
    } else {
      throw std::runtime_error("model file: unknown layer kind " + kind);
    }
    m.layers.push_back(std::move(L));
    sizes.push_back(ps);
  }
  if (next_line() != "blob") throw std::runtime_error("model file: expected blob marker");

  for (size_t i = 0; i < n_layers; ++i) {
    LayerNode& L = m.layers[i];
    if (sizes[i].bn) {
      read_values(f, L.bn_scale, sizes[i].bn, m.precision);
      read_values(f, L.bn_shift, sizes[i].bn, m.precision);
      read_values(f, L.bn_mean, sizes[i].bn, m.precision);
      read_values(f, L.bn_var, sizes[i].bn, m.precision);
    } else {
      if (sizes[i].w) read_values(f, L.weights, sizes[i].w, m.precision);
      if (sizes[i].b) read_values(f, L.bias, sizes[i].b, m.precision);
    }
  }
  m.finalize();
  return m;
}

}  // namespace screx
