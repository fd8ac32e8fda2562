#include "fimlab/config.hpp"

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "fimlab/errors.hpp"

namespace fimlab {

namespace {

constexpr std::uint64_t kXStream = 0x78u;  // substream tag for drawing x

FamilyModel family_from_json(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("family"))
        throw ValidationError("unknown_family", "family object must name a family");
    const std::string name = j.at("family").get<std::string>();
    int dim = j.value("dim", name == "gaussian2" ? 2 : 1);
    return FamilyModel::from_name(name, dim);
}

}  // namespace

NetworkConfig network_from_json(const nlohmann::json& j) {
    if (!j.is_object())
        throw ValidationError("invalid_config", "network config must be an object");
    if (!j.contains("layers"))
        throw ValidationError("invalid_config", "network config needs \"layers\"");
    std::vector<int> layers = j.at("layers").get<std::vector<int>>();
    const std::string act_name = j.value("activation", std::string("tanh"));
    const Activation act = activation_from_name(act_name);
    FamilyModel family = j.contains("family")
                             ? family_from_json(j.at("family"))
                             : FamilyModel::normal(layers.back());
    NetworkSpec spec(std::move(layers), act, family);

    NetworkConfig cfg{spec, ParamSet::zeros(spec), Eigen::VectorXd(), 0};
    cfg.seed = j.value("seed", static_cast<std::uint64_t>(0));

    if (j.contains("weights")) {
        const auto& jw = j.at("weights");
        if (!jw.is_array() || jw.size() != cfg.params.weights.size())
            throw ValidationError("invalid_config", "weights must list one matrix per layer");
        for (std::size_t l = 0; l < cfg.params.weights.size(); ++l) {
            Eigen::MatrixXd& w = cfg.params.weights[l];
            const auto& jm = jw[l];
            if (!jm.is_array() || static_cast<Eigen::Index>(jm.size()) != w.rows())
                throw ValidationError("invalid_config", "weight matrix rows mismatch");
            for (Eigen::Index r = 0; r < w.rows(); ++r) {
                const auto& jr = jm[r];
                if (!jr.is_array() || static_cast<Eigen::Index>(jr.size()) != w.cols())
                    throw ValidationError("invalid_config", "weight matrix cols mismatch");
                for (Eigen::Index c = 0; c < w.cols(); ++c)
                    w(r, c) = jr[c].get<double>();
            }
        }
    } else {
        cfg.params = ParamSet::glorot_uniform(spec, RngStream(cfg.seed));
    }

    if (j.contains("x")) {
        const auto xv = j.at("x").get<std::vector<double>>();
        if (static_cast<int>(xv.size()) != spec.input_dim())
            throw ValidationError("dimension_mismatch", "x has wrong dimension");
        cfg.x = Eigen::Map<const Eigen::VectorXd>(xv.data(), xv.size());
    } else {
        RngStream xs = RngStream(cfg.seed).child(kXStream);
        cfg.x = Eigen::VectorXd(spec.input_dim());
        for (int i = 0; i < cfg.x.size(); ++i)
            cfg.x[i] = 2.0 * xs.next_double() - 1.0;
    }
    return cfg;
}

nlohmann::json network_to_json(const NetworkConfig& cfg) {
    nlohmann::json j;
    j["layers"] = cfg.spec.layer_sizes;
    j["activation"] = activation_name(cfg.spec.activation);
    j["family"] = {{"family", cfg.spec.family.name()}, {"dim", cfg.spec.family.dim_h}};
    j["seed"] = cfg.seed;
    j["x"] = std::vector<double>(cfg.x.data(), cfg.x.data() + cfg.x.size());
    nlohmann::json jw = nlohmann::json::array();
    for (const auto& w : cfg.params.weights) {
        nlohmann::json jm = nlohmann::json::array();
        for (Eigen::Index r = 0; r < w.rows(); ++r) {
            nlohmann::json jr = nlohmann::json::array();
            for (Eigen::Index c = 0; c < w.cols(); ++c) jr.push_back(w(r, c));
            jm.push_back(std::move(jr));
        }
        jw.push_back(std::move(jm));
    }
    j["weights"] = std::move(jw);
    return j;
}

std::vector<int> parse_subset(const std::string& text, const ParamSet& params) {
    if (text.empty() || text == "all") return full_subset(params);
    std::vector<int> subset;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t comma = text.find(',', pos);
        if (comma == std::string::npos) comma = text.size();
        const std::string tok = text.substr(pos, comma - pos);
        pos = comma + 1;
        if (tok.empty()) continue;
        try {
            if (tok.rfind("layer", 0) == 0) {
                const int layer = std::stoi(tok.substr(5));
                if (layer < 0 || layer >= static_cast<int>(params.weights.size()))
                    throw ValidationError("subset_out_of_range",
                                          "no such layer: " + tok);
                const int off = params.layer_offset(layer);
                for (int i = 0; i < static_cast<int>(params.weights[layer].size()); ++i)
                    subset.push_back(off + i);
            } else if (const std::size_t dash = tok.find('-');
                       dash != std::string::npos) {
                const int lo = std::stoi(tok.substr(0, dash));
                const int hi = std::stoi(tok.substr(dash + 1));
                if (hi < lo)
                    throw ValidationError("subset_out_of_range",
                                          "empty range: " + tok);
                for (int i = lo; i <= hi; ++i) subset.push_back(i);
            } else {
                subset.push_back(std::stoi(tok));
            }
        } catch (const std::invalid_argument&) {
            throw ValidationError("invalid_subset", "cannot parse subset token: " + tok);
        } catch (const std::out_of_range&) {
            throw ValidationError("invalid_subset", "subset token out of range: " + tok);
        }
    }
    validate_subset(params, subset);
    return subset;
}

void atomic_write(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw ValidationError("io_error", "cannot open " + tmp);
        f.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!f) throw ValidationError("io_error", "short write to " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

std::string format_f64(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string csv_row(const std::vector<std::string>& fields) {
    std::string row;
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i) row += ',';
        row += fields[i];
    }
    row += "\r\n";
    return row;
}

std::string matrix_csv(const Eigen::MatrixXd& m) {
    std::string out = csv_row({"i", "j", "value"});
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            out += csv_row({std::to_string(i), std::to_string(j), format_f64(m(i, j))});
    return out;
}

nlohmann::json matrix_json(const Eigen::MatrixXd& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace fimlab
