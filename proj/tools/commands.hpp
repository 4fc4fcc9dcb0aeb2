#pragma once

#include <filesystem>
#include <iosfwd>
#include <memory>
#include <vector>

#include <nlohmann/json.hpp>

#include "bbox/dataset.hpp"
#include "bbox/harness.hpp"
#include "config.hpp"

namespace bbox::cli {

struct Workspace {
  LoadedDataset dataset;
  Dataset train;
  Dataset pool;
  std::shared_ptr<const DifferentiableNet> target;
  std::shared_ptr<const DifferentiableNet> robust_target;
  std::shared_ptr<const std::vector<DifferentiableNet>> surrogates;
  nlohmann::json models = nlohmann::json::object();
};

LoadedDataset load_dataset(const DatasetSpec& spec);
/// Loads or trains every model the config names; the robust target only when
/// a selected setting needs it.
Workspace prepare_workspace(const RunConfig& config, std::ostream& log);
BenchmarkPlan make_plan(const RunConfig& config, const Workspace& ws, std::size_t threads);

/// Refuses an existing non-empty outdir unless force is set.
void prepare_outdir(const std::filesystem::path& outdir, bool force);
/// report.json, timing.json, summary.csv, plots/, traces/ and manifest.json.
void write_results(const BenchmarkResult& result, const RunConfig& config, const Workspace& ws, std::size_t threads,
                   const std::filesystem::path& outdir);

/// Reads report.json and timing.json back into a Report.
Report read_report(const std::filesystem::path& dir);

/// Worker count from BBOX_BENCH_THREADS (default 1).
std::size_t bench_threads();

/// Full command-line entry point. Exit 0 on success, 1 on runtime errors,
/// 2 on usage errors.
int parse_and_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace bbox::cli
