#pragma once

#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>

#include <json.hpp>

#include "metadescent/bounds.hpp"
#include "metadescent/config.hpp"
#include "metadescent/experiments.hpp"

namespace metadescent {

/// Parsed run file: the system config, an optional sweep section, the
/// approximation constants, output path and master seed.
struct RunFile {
    MetaConfig cfg;
    std::optional<SweepPlan> plan; ///< base == cfg; present iff "sweep" given
    BoundConstants constants;
    std::string output; ///< may be empty
    std::uint64_t seed = 0;

    /// Stored verbatim for round-trip checks.
    bool w0_given_as_norm = true;
    double w0_norm_sq = 0.0;
};

namespace detail {

// Strict JSON object reader: every key must be consumed, unknown keys are
// reported with their path.
class StrictObject {
public:
    StrictObject(const nlohmann::ordered_json& obj, std::string path)
        : obj_(obj), path_(std::move(path)) {
        if (!obj_.is_object())
            throw config_error(path_ + " must be a JSON object");
    }

    bool has(const std::string& key) const { return obj_.contains(key); }

    const nlohmann::ordered_json& take(const std::string& key) {
        auto it = obj_.find(key);
        if (it == obj_.end())
            throw config_error("missing key '" + path_ + key + "'");
        seen_.insert(key);
        return *it;
    }

    const nlohmann::ordered_json* take_optional(const std::string& key) {
        auto it = obj_.find(key);
        if (it == obj_.end()) return nullptr;
        seen_.insert(key);
        return &*it;
    }

    void finish() const {
        for (auto it = obj_.begin(); it != obj_.end(); ++it)
            if (!seen_.count(it.key()))
                throw config_error("unknown key '" + path_ + it.key() + "'");
    }

    const std::string& path() const { return path_; }

private:
    const nlohmann::ordered_json& obj_;
    std::string path_;
    std::set<std::string> seen_;
};

inline int read_int(const nlohmann::ordered_json& j, const std::string& where) {
    if (!j.is_number_integer())
        throw config_error(where + " must be an integer");
    return j.get<int>();
}

inline double read_double(const nlohmann::ordered_json& j,
                          const std::string& where) {
    if (!j.is_number())
        throw config_error(where + " must be a number");
    return j.get<double>();
}

inline std::string line_of_offset(const std::string& text, std::size_t byte) {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
        if (text[i] == '\n') {
            ++line;
            col = 1;
        } else {
            ++col;
        }
    }
    std::ostringstream os;
    os << "line " << line << ", column " << col;
    return os.str();
}

} // namespace detail

inline RunFile parse_run_file(const std::string& text) {
    nlohmann::ordered_json root;
    try {
        root = nlohmann::ordered_json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw config_error("malformed config (" +
                           detail::line_of_offset(text, e.byte) +
                           "): " + e.what());
    }

    detail::StrictObject top(root, "");
    RunFile run;
    MetaConfig& cfg = run.cfg;
    cfg.p = detail::read_int(top.take("p"), "p");
    cfg.s = detail::read_int(top.take("s"), "s");
    cfg.m = detail::read_int(top.take("m"), "m");
    cfg.n_t = detail::read_int(top.take("n_t"), "n_t");
    cfg.n_v = detail::read_int(top.take("n_v"), "n_v");
    cfg.n_r = detail::read_int(top.take("n_r"), "n_r");
    cfg.sigma = detail::read_double(top.take("sigma"), "sigma");
    cfg.sigma_r = detail::read_double(top.take("sigma_r"), "sigma_r");
    cfg.nu_r = detail::read_double(top.take("nu_r"), "nu_r");
    cfg.alpha_t = detail::read_double(top.take("alpha_t"), "alpha_t");
    if (const auto* j = top.take_optional("alpha_r")) {
        if (!j->is_null()) cfg.alpha_r = detail::read_double(*j, "alpha_r");
    }

    const auto* nu_scalar = top.take_optional("nu");
    const auto* nu_matrix = top.take_optional("nu_matrix");
    if (nu_scalar && nu_matrix)
        throw config_error("give either 'nu' or 'nu_matrix', not both");
    if (nu_matrix) {
        if (!nu_matrix->is_array())
            throw config_error("nu_matrix must be an array of arrays");
        Eigen::MatrixXd stds(cfg.m, cfg.s);
        if (int(nu_matrix->size()) != cfg.m)
            throw config_error("nu_matrix must have m rows");
        for (int i = 0; i < cfg.m; ++i) {
            const auto& row = (*nu_matrix)[i];
            if (!row.is_array() || int(row.size()) != cfg.s)
                throw config_error("nu_matrix rows must have s entries");
            for (int j = 0; j < cfg.s; ++j)
                stds(i, j) = detail::read_double(row[j], "nu_matrix entry");
        }
        cfg.diversity = DiversitySpec::per_task(std::move(stds));
    } else if (nu_scalar) {
        cfg.diversity =
            DiversitySpec::uniform(detail::read_double(*nu_scalar, "nu"));
    } else {
        throw config_error("missing key 'nu' (or 'nu_matrix')");
    }

    const auto* w0_norm = top.take_optional("w0_norm_sq");
    const auto* w0_vec = top.take_optional("w0");
    if (w0_norm && w0_vec)
        throw config_error("give either 'w0_norm_sq' or 'w0', not both");
    if (w0_vec) {
        if (!w0_vec->is_array() || int(w0_vec->size()) != cfg.s)
            throw config_error("w0 must be an array of s numbers");
        cfg.w0_s.resize(cfg.s);
        for (int j = 0; j < cfg.s; ++j)
            cfg.w0_s[j] = detail::read_double((*w0_vec)[j], "w0 entry");
        run.w0_given_as_norm = false;
    } else if (w0_norm) {
        run.w0_norm_sq = detail::read_double(*w0_norm, "w0_norm_sq");
        cfg.w0_s = MetaConfig::uniform_w0(cfg.s, run.w0_norm_sq);
        run.w0_given_as_norm = true;
    } else {
        throw config_error("missing key 'w0_norm_sq' (or 'w0')");
    }

    if (const auto* j = top.take_optional("seed")) {
        if (!j->is_number_unsigned() && !j->is_number_integer())
            throw config_error("seed must be an integer");
        run.seed = j->get<std::uint64_t>();
    }
    if (const auto* j = top.take_optional("output")) {
        if (!j->is_string()) throw config_error("output must be a string");
        run.output = j->get<std::string>();
    }

    if (const auto* j = top.take_optional("constants")) {
        detail::StrictObject co(*j, "constants.");
        run.constants.c1 = detail::read_double(co.take("C1"), "constants.C1");
        run.constants.c2 = detail::read_double(co.take("C2"), "constants.C2");
        run.constants.c3 = detail::read_double(co.take("C3"), "constants.C3");
        run.constants.c4 = detail::read_double(co.take("C4"), "constants.C4");
        co.finish();
    }

    if (const auto* j = top.take_optional("sweep")) {
        detail::StrictObject sw(*j, "sweep.");
        SweepPlan plan;
        plan.base = cfg;
        plan.seed = run.seed;
        const auto& grid = sw.take("p_grid");
        if (!grid.is_array() || grid.empty())
            throw config_error("sweep.p_grid must be a nonempty array");
        for (const auto& v : grid)
            plan.p_grid.push_back(detail::read_int(v, "sweep.p_grid entry"));
        plan.replicates =
            detail::read_int(sw.take("replicates"), "sweep.replicates");
        if (const auto* e = sw.take_optional("estimands")) {
            if (!e->is_array())
                throw config_error("sweep.estimands must be an array");
            plan.estimands.clear();
            for (const auto& name : *e) {
                if (!name.is_string())
                    throw config_error("sweep.estimands entries must be strings");
                auto est = estimand_from_name(name.get<std::string>());
                if (!est)
                    throw config_error("unknown estimand '" +
                                       name.get<std::string>() + "'");
                plan.estimands.push_back(*est);
            }
        }
        if (const auto* r = sw.take_optional("alpha_t_rule")) {
            const std::string rule = r->get<std::string>();
            if (rule == "fixed")
                plan.alpha_t_rule = AlphaTRule::fixed;
            else if (rule == "scaled")
                plan.alpha_t_rule = AlphaTRule::scaled;
            else
                throw config_error("sweep.alpha_t_rule must be 'fixed' or 'scaled'");
        }
        if (const auto* sc = sw.take_optional("alpha_t_scale"))
            plan.alpha_t_scale = detail::read_double(*sc, "sweep.alpha_t_scale");
        sw.finish();
        run.plan = std::move(plan);
    }

    top.finish();
    cfg.validate();
    if (run.plan) {
        run.plan->base = cfg;
        run.plan->validate();
    }
    return run;
}

inline RunFile load_run_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw config_error("cannot read config file '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_run_file(buf.str());
}

inline std::string serialize_run_file(const RunFile& run) {
    nlohmann::ordered_json j;
    const MetaConfig& cfg = run.cfg;
    j["p"] = cfg.p;
    j["s"] = cfg.s;
    j["m"] = cfg.m;
    j["n_t"] = cfg.n_t;
    j["n_v"] = cfg.n_v;
    j["n_r"] = cfg.n_r;
    j["sigma"] = cfg.sigma;
    j["sigma_r"] = cfg.sigma_r;
    j["nu_r"] = cfg.nu_r;
    j["alpha_t"] = cfg.alpha_t;
    if (cfg.alpha_r) j["alpha_r"] = *cfg.alpha_r;
    if (cfg.diversity.is_scalar()) {
        j["nu"] = cfg.diversity.scalar_nu();
    } else {
        nlohmann::ordered_json rows = nlohmann::ordered_json::array();
        for (int i = 0; i < cfg.m; ++i) {
            nlohmann::ordered_json row = nlohmann::ordered_json::array();
            for (int c = 0; c < cfg.s; ++c) row.push_back(cfg.diversity.stds()(i, c));
            rows.push_back(std::move(row));
        }
        j["nu_matrix"] = std::move(rows);
    }
    if (run.w0_given_as_norm) {
        j["w0_norm_sq"] = run.w0_norm_sq;
    } else {
        nlohmann::ordered_json w = nlohmann::ordered_json::array();
        for (int c = 0; c < cfg.s; ++c) w.push_back(cfg.w0_s[c]);
        j["w0"] = std::move(w);
    }
    j["seed"] = run.seed;
    if (!run.output.empty()) j["output"] = run.output;
    {
        nlohmann::ordered_json co;
        co["C1"] = run.constants.c1;
        co["C2"] = run.constants.c2;
        co["C3"] = run.constants.c3;
        co["C4"] = run.constants.c4;
        j["constants"] = std::move(co);
    }
    if (run.plan) {
        nlohmann::ordered_json sw;
        sw["p_grid"] = run.plan->p_grid;
        sw["replicates"] = run.plan->replicates;
        nlohmann::ordered_json est = nlohmann::ordered_json::array();
        for (Estimand e : run.plan->estimands) est.push_back(estimand_name(e));
        sw["estimands"] = std::move(est);
        sw["alpha_t_rule"] =
            run.plan->alpha_t_rule == AlphaTRule::scaled ? "scaled" : "fixed";
        sw["alpha_t_scale"] = run.plan->alpha_t_scale;
        j["sweep"] = std::move(sw);
    }
    return j.dump(2) + "\n";
}

} // namespace metadescent
