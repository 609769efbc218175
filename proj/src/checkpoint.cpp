#include "tascforge/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

namespace tascforge {

namespace {

constexpr char kMagic[4] = {'T', 'A', 'S', 'C'};
constexpr std::uint16_t kVersion = 1;

void write_bytes(std::ofstream& out, const void* data, std::size_t n) {
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
}

void write_u16(std::ofstream& out, std::uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>(v >> 8)};
  write_bytes(out, b, 2);
}

void write_u32(std::ofstream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  write_bytes(out, b, 4);
}

void write_i32(std::ofstream& out, std::int32_t v) {
  write_u32(out, static_cast<std::uint32_t>(v));
}

void write_f64(std::ofstream& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
  write_bytes(out, b, 8);
}

void write_tensor(std::ofstream& out, const Tensor& t) {
  if (t.size() == 0) {
    out.put(0);
    return;
  }
  out.put(1);
  write_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) write_u32(out, static_cast<std::uint32_t>(d));
  for (double v : t.values()) write_f64(out, v);
}

struct Reader {
  std::ifstream in;
  std::string path;

  void read_bytes(void* data, std::size_t n) {
    if (!in.read(static_cast<char*>(data), static_cast<std::streamsize>(n)))
      fail(ErrorCode::TruncatedFile, "checkpoint ends early: " + path);
  }
  std::uint16_t read_u16() {
    unsigned char b[2];
    read_bytes(b, 2);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
  }
  std::uint32_t read_u32() {
    unsigned char b[4];
    read_bytes(b, 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
  }
  std::int32_t read_i32() { return static_cast<std::int32_t>(read_u32()); }
  double read_f64() {
    unsigned char b[8];
    read_bytes(b, 8);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  Tensor read_tensor() {
    int present = in.get();
    if (present == std::ifstream::traits_type::eof())
      fail(ErrorCode::TruncatedFile, "checkpoint ends early: " + path);
    if (present == 0) return {};
    std::uint32_t rank = read_u32();
    std::vector<std::size_t> shape(rank);
    std::size_t total = 1;
    for (auto& d : shape) {
      d = read_u32();
      total *= d;
    }
    std::vector<double> data(total);
    for (auto& v : data) v = read_f64();
    return Tensor(std::move(shape), std::move(data));
  }
};

}  // namespace

void save_checkpoint(const std::string& path, const NetworkSpec& spec,
                     const ModelState& model) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path);

  write_bytes(out, kMagic, 4);
  write_u16(out, kVersion);
  write_u32(out, static_cast<std::uint32_t>(spec.input_h));
  write_u32(out, static_cast<std::uint32_t>(spec.input_w));
  write_u32(out, static_cast<std::uint32_t>(spec.input_c));

  write_u32(out, static_cast<std::uint32_t>(spec.layers.size()));
  for (const auto& layer : spec.layers) {
    out.put(static_cast<char>(layer.kind));
    out.put(layer.trainable ? 1 : 0);
    out.put(layer.has_batchnorm ? 1 : 0);
    out.put(static_cast<char>(layer.activation));
    write_i32(out, layer.kernel);
    write_i32(out, layer.stride);
    write_i32(out, layer.filters);
    write_i32(out, layer.neurons);
    write_i32(out, layer.classes);
    write_f64(out, layer.dropout_p);
  }

  write_u32(out, static_cast<std::uint32_t>(spec.residual_groups.size()));
  for (const auto& group : spec.residual_groups) {
    write_u32(out, static_cast<std::uint32_t>(group.size()));
    for (std::size_t m : group) write_u32(out, static_cast<std::uint32_t>(m));
  }

  for (const auto& state : model.layers) {
    write_tensor(out, state.weight);
    write_tensor(out, state.bias);
    write_tensor(out, state.bn_scale);
    write_tensor(out, state.bn_shift);
    write_tensor(out, state.bn_mean);
    write_tensor(out, state.bn_var);
    write_tensor(out, state.acc_weight);
    write_tensor(out, state.acc_bias);
    write_tensor(out, state.acc_scale);
    write_tensor(out, state.acc_shift);
  }
  if (!out) fail(ErrorCode::IoError, "write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  Reader r;
  r.path = path;
  r.in.open(path, std::ios::binary);
  if (!r.in) fail(ErrorCode::IoError, "cannot open " + path);

  char magic[4];
  r.read_bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0)
    fail(ErrorCode::BadMagic, "not a TASC checkpoint: " + path);
  if (r.read_u16() != kVersion)
    fail(ErrorCode::InvalidConfig, "unsupported checkpoint version in " + path);

  Checkpoint cp;
  cp.spec.input_h = r.read_u32();
  cp.spec.input_w = r.read_u32();
  cp.spec.input_c = r.read_u32();

  std::uint32_t n_layers = r.read_u32();
  cp.spec.layers.resize(n_layers);
  for (auto& layer : cp.spec.layers) {
    int kind = r.in.get();
    int trainable = r.in.get();
    int bn = r.in.get();
    int act = r.in.get();
    if (act == std::ifstream::traits_type::eof())
      fail(ErrorCode::TruncatedFile, "checkpoint ends early: " + path);
    layer.kind = static_cast<LayerKind>(kind);
    layer.trainable = trainable != 0;
    layer.has_batchnorm = bn != 0;
    layer.activation = static_cast<Activation>(act);
    layer.kernel = r.read_i32();
    layer.stride = r.read_i32();
    layer.filters = r.read_i32();
    layer.neurons = r.read_i32();
    layer.classes = r.read_i32();
    layer.dropout_p = r.read_f64();
  }

  std::uint32_t n_groups = r.read_u32();
  cp.spec.residual_groups.resize(n_groups);
  for (auto& group : cp.spec.residual_groups) {
    std::uint32_t len = r.read_u32();
    group.resize(len);
    for (auto& m : group) m = r.read_u32();
  }

  cp.model.layers.resize(n_layers);
  for (auto& state : cp.model.layers) {
    state.weight = r.read_tensor();
    state.bias = r.read_tensor();
    state.bn_scale = r.read_tensor();
    state.bn_shift = r.read_tensor();
    state.bn_mean = r.read_tensor();
    state.bn_var = r.read_tensor();
    state.acc_weight = r.read_tensor();
    state.acc_bias = r.read_tensor();
    state.acc_scale = r.read_tensor();
    state.acc_shift = r.read_tensor();
  }
  infer_shapes(cp.spec);  // structural sanity before handing the model out
  return cp;
}

}  // namespace tascforge
