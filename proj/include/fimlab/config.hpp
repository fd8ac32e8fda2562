#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "fimlab/network.hpp"

namespace fimlab {

/// A fully resolved network instance: spec, weights, input, seed.
struct NetworkConfig {
    NetworkSpec spec;
    ParamSet params;
    Eigen::VectorXd x;
    std::uint64_t seed = 0;
};

/// Parse {"layers": [...], "activation": "...", "family": {"family": "...",
/// "dim": n}, "seed": u64, "x": [...]?, "weights": [[[...]]]?}. Missing
/// weights are drawn per-entry from uniform(-a, a), a = sqrt(6/(n_l+n_{l+1})),
/// seeded; a missing x is drawn uniform(-1, 1), seeded.
NetworkConfig network_from_json(const nlohmann::json& j);

/// Serialize with explicit weights and x so a rerun is bit-exact.
nlohmann::json network_to_json(const NetworkConfig& cfg);

/// Subset grammar: comma-separated "layerK" (all parameters of layer K),
/// "a-b" (inclusive flat range), "n" (single flat index), or "all".
std::vector<int> parse_subset(const std::string& text, const ParamSet& params);

/// Write content to path atomically (temp file + rename).
void atomic_write(const std::string& path, const std::string& content);

/// RFC-4180 CSV assembly: CRLF rows, doubles at 17 significant digits.
std::string csv_row(const std::vector<std::string>& fields);
std::string format_f64(double v);

/// Triplet CSV for a symmetric matrix over a subset: "i,j,value".
std::string matrix_csv(const Eigen::MatrixXd& m);
nlohmann::json matrix_json(const Eigen::MatrixXd& m);

}  // namespace fimlab
