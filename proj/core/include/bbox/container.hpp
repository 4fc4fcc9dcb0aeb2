#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "bbox/net.hpp"
#include "bbox/tensor.hpp"

namespace bbox {

/// One named tensor in a BBNW file.
struct Record {
  std::string name;
  std::vector<std::uint64_t> dims;
  std::vector<double> data;
};

/// Little-endian binary container:
///   "BBNW" | u32 version | str tag | u32 count | count x (str name | u32 rank | u64 dims[rank] | f64 data[prod])
/// where str is u32 byte length followed by UTF-8 bytes.
struct Container {
  std::string tag;
  std::vector<Record> records;

  const Record& find(const std::string& name) const;
};

inline constexpr std::uint32_t kContainerVersion = 1;

void write_container(std::ostream& out, const Container& c);
Container read_container(std::istream& in);
void save_container(const std::filesystem::path& path, const Container& c);
Container load_container(const std::filesystem::path& path);

Container net_to_container(const DifferentiableNet& net);
DifferentiableNet net_from_container(const Container& c);
void save_net(const std::filesystem::path& path, const DifferentiableNet& net);
DifferentiableNet load_net(const std::filesystem::path& path);

/// Per-iteration candidate batches, records named "iter<t>" with dims n,c,h,w.
Container candidates_to_container(const std::vector<ImageBatch>& iterations);
std::vector<ImageBatch> candidates_from_container(const Container& c);

}  // namespace bbox
