#include "bbox/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "bbox/error.hpp"

namespace bbox {

namespace {

constexpr char kMagic[4] = {'B', 'B', 'N', 'W'};
constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 32;

template <class T>
void put_le(std::ostream& out, T value) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  U bits = std::bit_cast<U>(value);
  unsigned char buf[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<unsigned char>(bits >> (8 * i));
  out.write(reinterpret_cast<const char*>(buf), sizeof(U));
}

template <class T>
T get_le(std::istream& in, const char* what) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  unsigned char buf[sizeof(U)];
  if (!in.read(reinterpret_cast<char*>(buf), sizeof(U))) {
    throw Error(ErrorCode::Truncated, std::string("BBNW: truncated while reading ") + what);
  }
  U bits = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) bits |= static_cast<U>(buf[i]) << (8 * i);
  return std::bit_cast<T>(bits);
}

void put_string(std::ostream& out, const std::string& s) {
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in, const char* what) {
  const auto len = get_le<std::uint32_t>(in, what);
  if (len > (1u << 20)) throw Error(ErrorCode::Truncated, std::string("BBNW: implausible string length in ") + what);
  std::string s(len, '\0');
  if (len > 0 && !in.read(s.data(), len)) throw Error(ErrorCode::Truncated, std::string("BBNW: truncated ") + what);
  return s;
}

Record make_record(std::string name, std::vector<std::uint64_t> dims, std::vector<double> data) {
  return Record{std::move(name), std::move(dims), std::move(data)};
}

std::uint64_t param(const Record& r, std::size_t i) { return static_cast<std::uint64_t>(r.data.at(i)); }

}  // namespace

const Record& Container::find(const std::string& name) const {
  for (const auto& r : records) {
    if (r.name == name) return r;
  }
  throw Error(ErrorCode::Config, "BBNW: missing record '" + name + "'");
}

void write_container(std::ostream& out, const Container& c) {
  out.write(kMagic, 4);
  put_le<std::uint32_t>(out, kContainerVersion);
  put_string(out, c.tag);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(c.records.size()));
  for (const auto& r : c.records) {
    std::uint64_t expected = 1;
    for (auto d : r.dims) expected *= d;
    if (expected != r.data.size()) throw Error(ErrorCode::ShapeMismatch, "BBNW: record '" + r.name + "' size mismatch");
    put_string(out, r.name);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(r.dims.size()));
    for (auto d : r.dims) put_le<std::uint64_t>(out, d);
    for (double v : r.data) put_le<double>(out, v);
  }
}

Container read_container(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4)) throw Error(ErrorCode::Truncated, "BBNW: file shorter than magic");
  if (std::memcmp(magic, kMagic, 4) != 0) throw Error(ErrorCode::BadMagic, "BBNW: bad magic");
  const auto version = get_le<std::uint32_t>(in, "version");
  if (version != kContainerVersion) {
    throw Error(ErrorCode::Config, "BBNW: unsupported version " + std::to_string(version));
  }
  Container c;
  c.tag = get_string(in, "tag");
  const auto count = get_le<std::uint32_t>(in, "record count");
  for (std::uint32_t i = 0; i < count; ++i) {
    Record r;
    r.name = get_string(in, "record name");
    const auto rank = get_le<std::uint32_t>(in, "rank");
    if (rank > 8) throw Error(ErrorCode::Truncated, "BBNW: implausible rank");
    std::uint64_t total = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      r.dims.push_back(get_le<std::uint64_t>(in, "dims"));
      total *= r.dims.back();
      if (total > kMaxElements) throw Error(ErrorCode::Truncated, "BBNW: implausible record size");
    }
    r.data.resize(total);
    for (auto& v : r.data) v = get_le<double>(in, "payload");
    c.records.push_back(std::move(r));
  }
  return c;
}

void save_container(const std::filesystem::path& path, const Container& c) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot open '" + path.string() + "' for writing");
  write_container(out, c);
  if (!out) throw Error(ErrorCode::Io, "failed writing '" + path.string() + "'");
}

Container load_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open '" + path.string() + "'");
  return read_container(in);
}

Container net_to_container(const DifferentiableNet& net) {
  Container c;
  c.tag = net.label();
  const auto& s = net.input_shape();
  c.records.push_back(make_record("input_shape", {3}, {double(s.c), double(s.h), double(s.w)}));
  for (std::size_t i = 0; i < net.layers().size(); ++i) {
    const std::string prefix = "layer" + std::to_string(i) + ".";
    const auto& layer = net.layers()[i];
    if (const auto* a = std::get_if<Affine>(&layer)) {
      c.records.push_back(make_record(prefix + "affine.weight", {a->out, a->in}, a->weight));
      c.records.push_back(make_record(prefix + "affine.bias", {a->out}, a->bias));
    } else if (const auto* cv = std::get_if<Conv2d>(&layer)) {
      c.records.push_back(make_record(prefix + "conv.weight",
                                      {cv->out_channels, cv->in_channels, cv->kernel, cv->kernel}, cv->weight));
      c.records.push_back(make_record(prefix + "conv.bias", {cv->out_channels}, cv->bias));
      c.records.push_back(make_record(prefix + "conv.config", {2}, {double(cv->stride), double(cv->padding)}));
    } else {
      c.records.push_back(make_record(prefix + layer_name(layer), {0}, {}));
    }
  }
  return c;
}

DifferentiableNet net_from_container(const Container& c) {
  const Record& shape = c.find("input_shape");
  if (shape.data.size() != 3) throw Error(ErrorCode::Config, "BBNW: input_shape must have 3 entries");
  const Shape input{param(shape, 0), param(shape, 1), param(shape, 2)};
  std::vector<Layer> layers;
  std::size_t i = 1;
  while (i < c.records.size()) {
    const Record& r = c.records[i];
    const auto dot = r.name.find('.');
    if (dot == std::string::npos) throw Error(ErrorCode::Config, "BBNW: malformed record name '" + r.name + "'");
    const std::string kind = r.name.substr(dot + 1);
    if (kind == "affine.weight") {
      if (i + 1 >= c.records.size() || r.dims.size() != 2) throw Error(ErrorCode::Config, "BBNW: bad affine layer");
      Affine a{r.dims[1], r.dims[0], r.data, c.records[i + 1].data};
      layers.emplace_back(std::move(a));
      i += 2;
    } else if (kind == "conv.weight") {
      if (i + 2 >= c.records.size() || r.dims.size() != 4) throw Error(ErrorCode::Config, "BBNW: bad conv layer");
      const Record& cfg = c.records[i + 2];
      Conv2d cv{r.dims[1], r.dims[0], r.dims[2], param(cfg, 0), param(cfg, 1), r.data, c.records[i + 1].data};
      layers.emplace_back(std::move(cv));
      i += 3;
    } else if (kind == "relu") {
      layers.emplace_back(ReLU{});
      ++i;
    } else if (kind == "maxpool2") {
      layers.emplace_back(MaxPool2{});
      ++i;
    } else if (kind == "flatten") {
      layers.emplace_back(Flatten{});
      ++i;
    } else {
      throw Error(ErrorCode::Config, "BBNW: unknown layer record '" + r.name + "'");
    }
  }
  return DifferentiableNet(c.tag, input, std::move(layers));
}

void save_net(const std::filesystem::path& path, const DifferentiableNet& net) {
  save_container(path, net_to_container(net));
}

DifferentiableNet load_net(const std::filesystem::path& path) { return net_from_container(load_container(path)); }

Container candidates_to_container(const std::vector<ImageBatch>& iterations) {
  Container c;
  c.tag = "candidates";
  for (std::size_t t = 0; t < iterations.size(); ++t) {
    const auto& b = iterations[t];
    c.records.push_back(
        make_record("iter" + std::to_string(t), {b.count(), b.shape().c, b.shape().h, b.shape().w}, b.data()));
  }
  return c;
}

std::vector<ImageBatch> candidates_from_container(const Container& c) {
  std::vector<ImageBatch> out;
  for (const auto& r : c.records) {
    if (r.dims.size() != 4) throw Error(ErrorCode::Config, "BBNW: candidate record must be rank 4");
    out.emplace_back(r.dims[0], Shape{r.dims[1], r.dims[2], r.dims[3]}, r.data);
  }
  return out;
}

}  // namespace bbox
