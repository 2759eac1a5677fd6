#include "negfu/serialize.h"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "negfu/errors.h"

namespace negfu {
namespace {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kMaxRank = 8;

template <typename T>
void Put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T Get(std::istream& in) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) {
    throw IoError("unexpected end of file");
  }
  return v;
}

void PutString(std::ostream& out, const std::string& s) {
  Put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string GetString(std::istream& in) {
  const auto n = Get<std::uint32_t>(in);
  if (n > (1u << 20)) throw IoError("string field too long");
  std::string s(n, '\0');
  if (n > 0 && !in.read(s.data(), n)) throw IoError("unexpected end of file");
  return s;
}

void PutShape(std::ostream& out, const Shape& s) {
  Put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  for (std::size_t d : s) Put<std::uint64_t>(out, d);
}

Shape GetShape(std::istream& in) {
  const auto rank = Get<std::uint32_t>(in);
  if (rank == 0 || rank > kMaxRank) throw IoError("bad tensor rank");
  Shape s(rank);
  for (auto& d : s) {
    d = Get<std::uint64_t>(in);
    if (d == 0 || d > (1ull << 32)) throw IoError("bad tensor dimension");
  }
  return s;
}

void PutDoubles(std::ostream& out, std::span<const double> v) {
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
}

Tensor GetTensor(std::istream& in, Shape shape) {
  std::vector<double> v(ShapeSize(shape));
  if (!in.read(reinterpret_cast<char*>(v.data()),
               static_cast<std::streamsize>(v.size() * sizeof(double)))) {
    throw IoError("unexpected end of file");
  }
  return Tensor(std::move(shape), std::move(v));
}

void ExpectMagic(std::istream& in, const char* magic) {
  char m[4];
  if (!in.read(m, 4) || std::memcmp(m, magic, 4) != 0) {
    throw IoError(std::string("not a ") + magic + " file");
  }
  if (Get<std::uint32_t>(in) != kVersion) throw IoError("unsupported version");
}

}  // namespace

void WriteDataset(std::ostream& out, const Dataset& d) {
  ValidateDataset(d);
  out.write("NFDS", 4);
  Put<std::uint32_t>(out, kVersion);
  Put<std::uint32_t>(out, static_cast<std::uint32_t>(d.class_count));
  PutShape(out, d.inputs.shape());
  PutDoubles(out, d.inputs.data());
  for (int y : d.labels) Put<std::uint32_t>(out, static_cast<std::uint32_t>(y));
  PutString(out, d.generator);
  Put<std::uint64_t>(out, d.seed);
  if (!out) throw IoError("write failed");
}

Dataset ReadDataset(std::istream& in) {
  ExpectMagic(in, "NFDS");
  Dataset d;
  d.class_count = static_cast<int>(Get<std::uint32_t>(in));
  Shape shape = GetShape(in);
  const std::size_t n = shape[0];
  d.inputs = GetTensor(in, std::move(shape));
  d.labels.resize(n);
  for (int& y : d.labels) y = static_cast<int>(Get<std::uint32_t>(in));
  d.generator = GetString(in);
  d.seed = Get<std::uint64_t>(in);
  ValidateDataset(d);
  return d;
}

void WriteTree(std::ostream& out, const ParameterTree& t) {
  out.write("NFPT", 4);
  Put<std::uint32_t>(out, kVersion);
  Put<std::uint32_t>(out, static_cast<std::uint32_t>(t.size()));
  for (const LayerParams& l : t.layers()) {
    PutString(out, l.name);
    Put<std::uint8_t>(out, static_cast<std::uint8_t>(l.kind));
    Put<std::uint8_t>(out, l.bias ? 1 : 0);
    PutShape(out, l.weight.shape());
    if (l.bias) PutShape(out, l.bias->shape());
  }
  for (const LayerParams& l : t.layers()) {
    PutDoubles(out, l.weight.data());
    if (l.bias) PutDoubles(out, l.bias->data());
  }
  if (!out) throw IoError("write failed");
}

ParameterTree ReadTree(std::istream& in) {
  ExpectMagic(in, "NFPT");
  const auto count = Get<std::uint32_t>(in);
  if (count > 4096) throw IoError("too many layers");
  struct Header {
    std::string name;
    LayerKind kind;
    Shape w;
    std::optional<Shape> b;
  };
  std::vector<Header> headers;
  for (std::uint32_t i = 0; i < count; ++i) {
    Header h;
    h.name = GetString(in);
    const auto kind = Get<std::uint8_t>(in);
    if (kind > static_cast<std::uint8_t>(LayerKind::kLayerNorm)) {
      throw IoError("unknown layer kind");
    }
    h.kind = static_cast<LayerKind>(kind);
    const auto has_bias = Get<std::uint8_t>(in);
    h.w = GetShape(in);
    if (has_bias) h.b = GetShape(in);
    headers.push_back(std::move(h));
  }
  std::vector<LayerParams> layers;
  for (Header& h : headers) {
    LayerParams l;
    l.name = h.name;
    l.kind = h.kind;
    l.weight = GetTensor(in, std::move(h.w));
    if (h.b) l.bias = GetTensor(in, std::move(*h.b));
    layers.push_back(std::move(l));
  }
  return ParameterTree(std::move(layers));
}

namespace {

std::ofstream OpenOut(const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path + " for writing");
  return f;
}

std::ifstream OpenIn(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  return f;
}

}  // namespace

void SaveDataset(const std::string& path, const Dataset& d) {
  std::ofstream f = OpenOut(path);
  WriteDataset(f, d);
}

Dataset LoadDataset(const std::string& path) {
  std::ifstream f = OpenIn(path);
  return ReadDataset(f);
}

void SaveTree(const std::string& path, const ParameterTree& t) {
  std::ofstream f = OpenOut(path);
  WriteTree(f, t);
}

ParameterTree LoadTree(const std::string& path) {
  std::ifstream f = OpenIn(path);
  return ReadTree(f);
}

}  // namespace negfu
