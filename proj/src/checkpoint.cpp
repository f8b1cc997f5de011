#include "disel/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "disel/errors.hpp"

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

namespace disel {

namespace {

constexpr char kMagic[8] = {'D', 'S', 'L', 'C', 'K', 'P', 'T', '\0'};
// Refuse absurd shapes before allocating.
constexpr std::uint32_t kMaxDim = 1u << 20;

class Writer {
 public:
  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void f64(double v) { raw(&v, sizeof v); }
  void values(const double* p, std::size_t n) { raw(p, n * sizeof(double)); }
  void raw(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view in) : in_(in) {}

  std::uint32_t u32() {
    std::uint32_t v;
    raw(&v, sizeof v);
    return v;
  }
  double f64() {
    double v;
    raw(&v, sizeof v);
    return v;
  }
  void values(double* p, std::size_t n) { raw(p, n * sizeof(double)); }
  void raw(void* p, std::size_t n) {
    if (in_.size() - pos_ < n) throw IoError("checkpoint is truncated");
    std::memcpy(p, in_.data() + pos_, n);
    pos_ += n;
  }
  std::uint32_t dim(const char* what) {
    const std::uint32_t v = u32();
    if (v > kMaxDim) throw IoError(std::string("checkpoint: implausible ") + what);
    return v;
  }
  [[nodiscard]] bool done() const { return pos_ == in_.size(); }

 private:
  std::string_view in_;
  std::size_t pos_ = 0;
};

void write_matrix(Writer& w, const Matrix& m) { w.values(m.data(), static_cast<std::size_t>(m.size())); }
void write_vector(Writer& w, const Vector& v) { w.values(v.data(), static_cast<std::size_t>(v.size())); }

Matrix read_matrix(Reader& r, std::uint32_t rows, std::uint32_t cols) {
  Matrix m(rows, cols);
  r.values(m.data(), static_cast<std::size_t>(m.size()));
  return m;
}

Vector read_vector(Reader& r, std::uint32_t n) {
  Vector v(n);
  r.values(v.data(), n);
  return v;
}

}  // namespace

std::string serialize_network(const Network& net) {
  validate(net);
  Writer w;
  w.raw(kMagic, sizeof kMagic);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(net.layers.size()));
  w.u32(static_cast<std::uint32_t>(net.hidden_activation));
  for (const auto& layer : net.layers) {
    w.u32(static_cast<std::uint32_t>(layer.base.d_out()));
    w.u32(static_cast<std::uint32_t>(layer.base.d_in()));
    w.u32(layer.base.bias ? 1u : 0u);
    w.u32(static_cast<std::uint32_t>(layer.kind()));
    write_matrix(w, layer.base.w0);
    if (layer.base.bias) write_vector(w, *layer.base.bias);
    switch (layer.kind()) {
      case AdapterKind::kNone:
        break;
      case AdapterKind::kDelta:
        write_matrix(w, std::get<DeltaAdapter>(layer.adapter).delta);
        break;
      case AdapterKind::kLora: {
        const auto& ad = std::get<LoraAdapter>(layer.adapter);
        w.u32(static_cast<std::uint32_t>(ad.rank()));
        w.f64(ad.alpha);
        write_matrix(w, ad.a);
        write_matrix(w, ad.b);
        break;
      }
      case AdapterKind::kDisel: {
        const auto& ad = std::get<DiselAdapter>(layer.adapter);
        w.u32(static_cast<std::uint32_t>(ad.rank()));
        w.f64(ad.alpha);
        write_matrix(w, ad.a);
        write_matrix(w, ad.b);
        write_matrix(w, ad.wg);
        write_vector(w, ad.bg);
        break;
      }
    }
  }
  return w.take();
}

Network deserialize_network(std::string_view bytes) {
  Reader r(bytes);
  char magic[sizeof kMagic];
  r.raw(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw IoError("not a checkpoint file (bad magic)");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  }
  Network net;
  const std::uint32_t count = r.dim("layer count");
  const std::uint32_t act = r.u32();
  if (act > 2) throw IoError("checkpoint: unknown activation code");
  net.hidden_activation = static_cast<Activation>(act);
  for (std::uint32_t i = 0; i < count; ++i) {
    AdaptedLayer layer;
    const std::uint32_t d_out = r.dim("output dimension");
    const std::uint32_t d_in = r.dim("input dimension");
    const std::uint32_t has_bias = r.u32();
    const std::uint32_t kind = r.u32();
    if (has_bias > 1 || kind > 3) throw IoError("checkpoint: bad layer header");
    layer.base.w0 = read_matrix(r, d_out, d_in);
    if (has_bias) layer.base.bias = read_vector(r, d_out);
    switch (static_cast<AdapterKind>(kind)) {
      case AdapterKind::kNone:
        break;
      case AdapterKind::kDelta:
        layer.adapter = DeltaAdapter{read_matrix(r, d_out, d_in)};
        break;
      case AdapterKind::kLora: {
        LoraAdapter ad;
        const std::uint32_t rank = r.dim("rank");
        ad.alpha = r.f64();
        ad.a = read_matrix(r, d_out, rank);
        ad.b = read_matrix(r, rank, d_in);
        layer.adapter = std::move(ad);
        break;
      }
      case AdapterKind::kDisel: {
        DiselAdapter ad;
        const std::uint32_t rank = r.dim("rank");
        ad.alpha = r.f64();
        ad.a = read_matrix(r, d_out, rank);
        ad.b = read_matrix(r, rank, d_in);
        ad.wg = read_matrix(r, rank, d_in);
        ad.bg = read_vector(r, rank);
        layer.adapter = std::move(ad);
        break;
      }
    }
    net.layers.push_back(std::move(layer));
  }
  if (!r.done()) throw IoError("checkpoint has trailing bytes");
  validate(net);
  return net;
}

void save_network(const Network& net, const std::filesystem::path& path) {
  const std::string bytes = serialize_network(net);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

Network load_network(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_network(bytes);
}

}  // namespace disel
