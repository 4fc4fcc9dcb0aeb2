#include "bbox/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <set>

#include "bbox/error.hpp"
#include "bbox/rng.hpp"

namespace bbox {

namespace {

constexpr std::uint32_t kIdxImages = 0x00000803;
constexpr std::uint32_t kIdxLabels = 0x00000801;

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& b, std::size_t offset, const char* what) {
  if (b.size() < offset + 4) throw Error(ErrorCode::Truncated, std::string(what) + ": header truncated");
  return (std::uint32_t{b[offset]} << 24) | (std::uint32_t{b[offset + 1]} << 16) |
         (std::uint32_t{b[offset + 2]} << 8) | std::uint32_t{b[offset + 3]};
}

void put_be32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  b.push_back(static_cast<std::uint8_t>(v >> 24));
  b.push_back(static_cast<std::uint8_t>(v >> 16));
  b.push_back(static_cast<std::uint8_t>(v >> 8));
  b.push_back(static_cast<std::uint8_t>(v));
}

std::uint64_t fnv_bytes(std::uint64_t h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <class T>
std::uint64_t fnv_value(std::uint64_t h, T v) {
  unsigned char bytes[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<unsigned char>(v >> (8 * i));
  return fnv_bytes(h, bytes, sizeof(T));
}

std::size_t infer_classes(const std::vector<std::size_t>& labels) {
  std::size_t top = 0;
  for (auto l : labels) top = std::max(top, l);
  return std::max<std::size_t>(2, top + 1);
}

template <class T>
T param(const nlohmann::json& params, const char* key, T fallback) {
  if (!params.contains(key)) return fallback;
  try {
    return params.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw Error(ErrorCode::Config, std::string("dataset parameter '") + key + "' has the wrong type");
  }
}

void check_keys(const nlohmann::json& params, std::initializer_list<const char*> allowed, const std::string& gen) {
  if (!params.is_object()) throw Error(ErrorCode::Config, gen + ": params must be an object");
  for (const auto& [key, _] : params.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      throw Error(ErrorCode::Config, gen + ": unknown parameter '" + key + "'");
    }
  }
}

Dataset make_blobs(const nlohmann::json& params, std::uint64_t seed) {
  check_keys(params, {"count", "classes", "size", "channels", "separation", "noise"}, "blobs");
  const auto count = param<std::size_t>(params, "count", 400);
  const auto classes = param<std::size_t>(params, "classes", 4);
  const auto side = param<std::size_t>(params, "size", 8);
  const auto channels = param<std::size_t>(params, "channels", 1);
  const auto separation = param<double>(params, "separation", 1.0);
  const auto noise = param<double>(params, "noise", 0.2);
  if (classes < 2 || count == 0 || side == 0 || channels == 0 || separation < 0.0 || noise < 0.0) {
    throw Error(ErrorCode::Config, "blobs: invalid parameters");
  }
  const Shape shape{channels, side, side};
  std::vector<std::vector<double>> prototypes(classes, std::vector<double>(shape.size()));
  for (std::size_t k = 0; k < classes; ++k) {
    auto rng = make_rng(seed, k, "blobs/prototype");
    for (double& v : prototypes[k]) v = rng.random_sign();
  }
  Dataset d{ImageBatch(count, shape), std::vector<std::size_t>(count), classes};
  for (std::size_t i = 0; i < count; ++i) {
    auto rng = make_rng(seed, i, "blobs/sample");
    const std::size_t k = i % classes;
    d.labels[i] = k;
    auto x = d.images.example(i);
    for (std::size_t j = 0; j < x.size(); ++j) {
      x[j] = std::clamp(0.5 + 0.1 * separation * prototypes[k][j] + noise * rng.normal(), 0.0, 1.0);
    }
  }
  return d;
}

void render_shape(std::span<double> img, std::size_t side, std::size_t kind, double ink, RngStream& rng) {
  const double n = static_cast<double>(side);
  const double cy = rng.uniform(0.35 * n, 0.65 * n);
  const double cx = rng.uniform(0.35 * n, 0.65 * n);
  const double r = rng.uniform(0.22 * n, 0.34 * n);
  const double t = std::max(1.0, 0.12 * n);
  for (std::size_t i = 0; i < side; ++i) {
    for (std::size_t j = 0; j < side; ++j) {
      const double y = static_cast<double>(i) + 0.5 - cy;
      const double x = static_cast<double>(j) + 0.5 - cx;
      const double rho = std::hypot(x, y);
      bool on = false;
      switch (kind) {
        case 0: on = std::abs(x) <= r && std::abs(y) <= 0.6 * r; break;          // rectangle
        case 1: on = rho <= r; break;                                             // disc
        case 2: on = std::abs(y) <= t && std::abs(x) <= 1.2 * r; break;         // horizontal bar
        case 3: on = std::abs(x) <= t && std::abs(y) <= 1.2 * r; break;         // vertical bar
        case 4: on = rho <= r && rho >= r - 1.5 * t; break;                       // ring
        case 5: on = (std::abs(x) <= t || std::abs(y) <= t) && std::max(std::abs(x), std::abs(y)) <= r; break;
        case 6: on = std::abs(x - y) <= 1.2 * t && rho <= 1.2 * r; break;       // diagonal
        default: on = y <= 0.8 * r && y >= -0.8 * r && std::abs(x) <= 0.5 * (y + 0.8 * r); break;  // triangle
      }
      if (on) img[i * side + j] = ink;
    }
  }
}

Dataset make_shapes(const nlohmann::json& params, std::uint64_t seed) {
  check_keys(params, {"count", "classes", "size", "noise", "contrast"}, "shapes");
  const auto count = param<std::size_t>(params, "count", 500);
  const auto classes = param<std::size_t>(params, "classes", 5);
  const auto side = param<std::size_t>(params, "size", 16);
  const auto noise = param<double>(params, "noise", 0.06);
  const auto contrast = param<double>(params, "contrast", 0.4);
  if (classes < 4 || classes > 8) throw Error(ErrorCode::Config, "shapes: classes must be in [4, 8]");
  if (count == 0 || side < 6 || noise < 0.0 || !(contrast > 0.0 && contrast <= 0.75)) throw Error(ErrorCode::Config, "shapes: invalid parameters");
  const Shape shape{1, side, side};
  Dataset d{ImageBatch(count, shape), std::vector<std::size_t>(count), classes};
  for (std::size_t i = 0; i < count; ++i) {
    auto rng = make_rng(seed, i, "shapes/sample");
    const std::size_t k = i % classes;
    d.labels[i] = k;
    auto x = d.images.example(i);
    const double background = rng.uniform(0.0, 0.25);
    std::fill(x.begin(), x.end(), background);
    render_shape(x, side, k, background + contrast * rng.uniform(0.6, 1.0), rng);
    for (double& v : x) v = std::clamp(v + noise * rng.normal(), 0.0, 1.0);
  }
  return d;
}

LoadedDataset finish(Dataset data, DatasetManifest manifest) {
  data.validate();
  manifest.shape = data.images.shape();
  manifest.classes = data.classes;
  manifest.splits = {{"all", data.size()}};
  manifest.checksum = dataset_checksum(data);
  return {std::move(data), std::move(manifest)};
}

}  // namespace

const char* to_string(DatasetSource source) noexcept {
  switch (source) {
    case DatasetSource::IdxFiles: return "idx-files";
    case DatasetSource::RawBinary: return "raw-binary";
    case DatasetSource::Synthetic: return "synthetic";
  }
  return "?";
}

std::string dataset_checksum(const Dataset& data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const Shape s = data.images.shape();
  for (std::uint64_t v : {std::uint64_t{s.c}, std::uint64_t{s.h}, std::uint64_t{s.w}, std::uint64_t{data.classes},
                          std::uint64_t{data.size()}}) {
    h = fnv_value(h, v);
  }
  for (auto l : data.labels) h = fnv_value(h, std::uint64_t{l});
  for (double v : data.images.data()) h = fnv_value(h, std::bit_cast<std::uint64_t>(v));
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void DatasetManifest::verify(const Dataset& data) const {
  for (auto l : data.labels) {
    if (l >= classes) throw Error(ErrorCode::InvalidLabel, "label " + std::to_string(l) + " >= class count");
  }
  if (dataset_checksum(data) != checksum) throw Error(ErrorCode::ChecksumMismatch, "dataset checksum mismatch");
}

LoadedDataset parse_idx(const std::vector<std::uint8_t>& images, const std::vector<std::uint8_t>& labels) {
  if (read_be32(images, 0, "idx images") != kIdxImages) throw Error(ErrorCode::BadMagic, "idx images: bad magic");
  if (read_be32(labels, 0, "idx labels") != kIdxLabels) throw Error(ErrorCode::BadMagic, "idx labels: bad magic");
  const std::size_t n = read_be32(images, 4, "idx images");
  const std::size_t h = read_be32(images, 8, "idx images");
  const std::size_t w = read_be32(images, 12, "idx images");
  const std::size_t m = read_be32(labels, 4, "idx labels");
  if (h == 0 || w == 0) throw Error(ErrorCode::Config, "idx images: zero-sized dimension");
  if (h > (std::size_t{1} << 16) || w > (std::size_t{1} << 16)) {
    throw Error(ErrorCode::Truncated, "idx images: implausible dimensions");
  }
  const std::size_t pixels = h * w;
  if (images.size() < 16 || n > (images.size() - 16) / pixels) throw Error(ErrorCode::Truncated, "idx images: payload truncated");
  if (labels.size() < 8 + m) throw Error(ErrorCode::Truncated, "idx labels: payload truncated");
  if (n != m) {
    throw Error(ErrorCode::CountMismatch,
                "idx: " + std::to_string(n) + " images but " + std::to_string(m) + " labels");
  }
  Dataset d{ImageBatch(n, Shape{1, h, w}), std::vector<std::size_t>(n), 0};
  auto& out = d.images.data();
  for (std::size_t i = 0; i < n * pixels; ++i) out[i] = static_cast<double>(images[16 + i]) / 255.0;
  for (std::size_t i = 0; i < n; ++i) d.labels[i] = labels[8 + i];
  d.classes = infer_classes(d.labels);
  DatasetManifest manifest;
  manifest.source = DatasetSource::IdxFiles;
  return finish(std::move(d), std::move(manifest));
}

LoadedDataset ingest_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  auto loaded = parse_idx(read_file(images), read_file(labels));
  loaded.manifest.files = {images.string(), labels.string()};
  return loaded;
}

std::pair<std::vector<std::uint8_t>, std::vector<std::uint8_t>> encode_idx(const Dataset& data) {
  data.validate();
  const Shape s = data.images.shape();
  if (s.c != 1) throw Error(ErrorCode::ShapeMismatch, "idx encoding needs single-channel images");
  std::vector<std::uint8_t> images;
  std::vector<std::uint8_t> labels;
  put_be32(images, kIdxImages);
  put_be32(images, static_cast<std::uint32_t>(data.size()));
  put_be32(images, static_cast<std::uint32_t>(s.h));
  put_be32(images, static_cast<std::uint32_t>(s.w));
  for (double v : data.images.data()) images.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
  put_be32(labels, kIdxLabels);
  put_be32(labels, static_cast<std::uint32_t>(data.size()));
  for (auto l : data.labels) {
    if (l > 255) throw Error(ErrorCode::InvalidLabel, "idx labels are single bytes");
    labels.push_back(static_cast<std::uint8_t>(l));
  }
  return {std::move(images), std::move(labels)};
}

void write_idx(const Dataset& data, const std::filesystem::path& images, const std::filesystem::path& labels) {
  const auto [img, lab] = encode_idx(data);
  for (const auto& [path, bytes] : {std::pair{images, &img}, std::pair{labels, &lab}}) {
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes->data()), static_cast<std::streamsize>(bytes->size()));
    if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  }
}

LoadedDataset ingest_raw(const std::filesystem::path& path, const Shape& shape, std::size_t classes) {
  if (shape.size() == 0 || classes < 2) throw Error(ErrorCode::Config, "raw dataset: invalid shape or class count");
  const auto bytes = read_file(path);
  const std::size_t record = 1 + shape.size();
  if (bytes.size() % record != 0) throw Error(ErrorCode::Truncated, "raw dataset: partial record in " + path.string());
  const std::size_t n = bytes.size() / record;
  Dataset d{ImageBatch(n, shape), std::vector<std::size_t>(n), classes};
  for (std::size_t i = 0; i < n; ++i) {
    d.labels[i] = bytes[i * record];
    auto x = d.images.example(i);
    for (std::size_t j = 0; j < shape.size(); ++j) x[j] = static_cast<double>(bytes[i * record + 1 + j]) / 255.0;
  }
  DatasetManifest manifest;
  manifest.source = DatasetSource::RawBinary;
  manifest.files = {path.string()};
  return finish(std::move(d), std::move(manifest));
}

LoadedDataset synth_dataset(const std::string& generator, const nlohmann::json& params, std::uint64_t seed) {
  const nlohmann::json p = params.is_null() ? nlohmann::json::object() : params;
  Dataset d;
  if (generator == "blobs") {
    d = make_blobs(p, seed);
  } else if (generator == "shapes") {
    d = make_shapes(p, seed);
  } else {
    throw Error(ErrorCode::UnknownGenerator, "unknown dataset generator '" + generator + "'");
  }
  DatasetManifest manifest;
  manifest.source = DatasetSource::Synthetic;
  manifest.generator = generator;
  manifest.params = p;
  manifest.seed = seed;
  return finish(std::move(d), std::move(manifest));
}

nlohmann::json to_json(const DatasetManifest& m) {
  nlohmann::json splits = nlohmann::json::object();
  for (const auto& [name, size] : m.splits) splits[name] = size;
  nlohmann::json j = {{"source", to_string(m.source)},
                      {"shape", {m.shape.c, m.shape.h, m.shape.w}},
                      {"classes", m.classes},
                      {"splits", splits},
                      {"checksum", m.checksum}};
  if (m.source == DatasetSource::Synthetic) {
    j["generator"] = m.generator;
    j["params"] = m.params;
    j["seed"] = m.seed;
  } else {
    j["files"] = m.files;
  }
  return j;
}

DatasetManifest manifest_from_json(const nlohmann::json& j) {
  try {
    DatasetManifest m;
    const auto source = j.at("source").get<std::string>();
    if (source == "idx-files") {
      m.source = DatasetSource::IdxFiles;
    } else if (source == "raw-binary") {
      m.source = DatasetSource::RawBinary;
    } else if (source == "synthetic") {
      m.source = DatasetSource::Synthetic;
    } else {
      throw Error(ErrorCode::Config, "manifest: unknown source '" + source + "'");
    }
    const auto shape = j.at("shape").get<std::vector<std::size_t>>();
    if (shape.size() != 3) throw Error(ErrorCode::Config, "manifest: shape needs three entries");
    m.shape = Shape{shape[0], shape[1], shape[2]};
    m.classes = j.at("classes").get<std::size_t>();
    for (const auto& [name, size] : j.at("splits").items()) m.splits.emplace_back(name, size.get<std::size_t>());
    m.checksum = j.at("checksum").get<std::string>();
    if (m.source == DatasetSource::Synthetic) {
      m.generator = j.at("generator").get<std::string>();
      m.params = j.at("params");
      m.seed = j.at("seed").get<std::uint64_t>();
    } else {
      m.files = j.at("files").get<std::vector<std::string>>();
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Config, std::string("manifest: ") + e.what());
  }
}

}  // namespace bbox
