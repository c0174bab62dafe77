#include "cli/output.hpp"

#include <atomic>
#include <charconv>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

#include <json.hpp>

#include "qfilt/sde_engine.hpp"

#ifndef QFILT_VERSION
#define QFILT_VERSION "0.0.0"
#endif

namespace qcli {

std::string format_number(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

CsvWriter::CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header)
    : out_(path, std::ios::binary), columns_(header.size()) {
    if (!out_) throw ConfigError("cannot write output file '" + path.string() + "'");
    for (std::size_t i = 0; i < header.size(); ++i) out_ << (i ? "," : "") << header[i];
    out_ << '\n';
}

CsvWriter::~CsvWriter() {
    if (!closed_) out_ << "# manifest: " << kManifestName << '\n';
}

void CsvWriter::row(const std::vector<double>& values) {
    if (values.size() != columns_) throw std::logic_error("csv row width does not match header");
    for (std::size_t i = 0; i < values.size(); ++i) out_ << (i ? "," : "") << format_number(values[i]);
    out_ << '\n';
}

void CsvWriter::close() {
    if (closed_) return;
    out_ << "# manifest: " << kManifestName << '\n';
    out_.close();
    closed_ = true;
}

RunContext::RunContext(const Config& cfg, std::filesystem::path out_dir, int workers)
    : cfg_(cfg), out_dir_(std::move(out_dir)), workers_(workers) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir_, ec);
    if (ec) throw ConfigError("cannot create output directory '" + out_dir_.string() + "': " + ec.message());
}

CsvWriter RunContext::csv(const std::string& name, const std::vector<std::string>& header) {
    files_.push_back(name);
    return CsvWriter(out_dir_ / name, header);
}

void RunContext::write_manifest(const std::string& status, const std::string& message) const {
    nlohmann::ordered_json j;
    j["tool"] = "qfilt-cli";
    j["version"] = tool_version();
    j["experiment"] = cfg_.experiment();
    j["seed"] = cfg_.seed();
    j["config_hash"] = "fnv1a64:" + fnv1a_hex(cfg_.canonical());
    nlohmann::ordered_json values = nlohmann::ordered_json::object();
    for (const auto& [k, v] : cfg_.values())
        if (k != kOutputKey) values[k] = v;
    j["config"] = values;
    j["outputs"] = files_;
    j["status"] = status;
    if (!message.empty()) j["message"] = message;
    std::ofstream out(out_dir_ / kManifestName, std::ios::binary);
    if (!out) throw ConfigError("cannot write manifest in '" + out_dir_.string() + "'");
    out << j.dump(2) << '\n';
}

void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
    const std::size_t threads = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, workers)));
    if (threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::mutex m;
    std::size_t failed_index = n;
    std::exception_ptr failure;
    auto body = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(m);
                if (i < failed_index) {
                    failed_index = i;
                    failure = std::current_exception();
                }
            }
        }
    };
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(body);
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
    qfilt::RngStream g(seed, index);
    return g.engine()();
}

std::string tool_version() { return QFILT_VERSION; }

}  // namespace qcli
