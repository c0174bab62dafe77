#pragma once

#include <string>
#include <vector>

#include "cli/config.hpp"
#include "cli/output.hpp"

namespace qcli {

struct Experiment {
    Schema schema;
    void (*run)(RunContext& ctx);
};

/// All experiments in listing order.
const std::vector<Experiment>& experiments();
const Experiment* find_experiment(const std::string& name);

/// Reads a param-ensemble weights CSV and returns (time, I_alpha) rows.
std::vector<std::pair<double, double>> ialpha_from_weights(const std::string& path, double alpha);

}  // namespace qcli
