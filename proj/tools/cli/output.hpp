#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "cli/config.hpp"

namespace qcli {

inline constexpr const char* kManifestName = "manifest.json";

/// CSV file with a header row; close() appends the manifest reference line.
class CsvWriter {
public:
    CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header);
    ~CsvWriter();
    CsvWriter(const CsvWriter&) = delete;
    CsvWriter& operator=(const CsvWriter&) = delete;

    void row(const std::vector<double>& values);
    void close();

private:
    std::ofstream out_;
    std::size_t columns_;
    bool closed_ = false;
};

/// Shortest round-trip decimal text; non-finite values print as nan/inf.
std::string format_number(double v);

/// Output directory plus the list of files written for the manifest.
class RunContext {
public:
    RunContext(const Config& cfg, std::filesystem::path out_dir, int workers);

    const Config& config() const { return cfg_; }
    int workers() const { return workers_; }
    const std::filesystem::path& out_dir() const { return out_dir_; }

    /// Creates out_dir/name and records it in the manifest.
    CsvWriter csv(const std::string& name, const std::vector<std::string>& header);

    /// Writes manifest.json; status is "ok" or "numeric-failure".
    void write_manifest(const std::string& status, const std::string& message = {}) const;

private:
    const Config& cfg_;
    std::filesystem::path out_dir_;
    int workers_;
    std::vector<std::string> files_;
};

/// Runs fn(i) for i in [0, n) on up to `workers` threads. Results depend only on i, so
/// outputs are independent of the worker count. The exception from the lowest failing
/// index is rethrown.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn);

/// Seed for trajectory `index` derived from the run seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

std::string tool_version();

}  // namespace qcli
