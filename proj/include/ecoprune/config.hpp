#ifndef ECOPRUNE_CONFIG_HPP
#define ECOPRUNE_CONFIG_HPP

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "denoiser.hpp"
#include "diffusion.hpp"
#include "gates.hpp"
#include "pruner.hpp"

namespace ecoprune {

struct config_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Everything a run needs, parsed from the sectioned key=value text format.
// Unknown sections or keys are rejected.
struct RunConfig {
    DenoiserConfig model;
    SamplerMode mode = SamplerMode::deterministic;
    GateConfig gates;
    PruneConfig prune;

    std::uint64_t seed = 0;
    std::string out_dir = ".";
    int base_train_steps = 2000;
    int base_batch_size = 8;
    double base_lr = 1e-2;
    double data_scale = 0.5;
    int n_samples = 64;
    std::vector<int> sample_conditions;
    std::vector<int> profile_T = {2, 4, 8, 16, 32};
    std::vector<double> gate_curve_deltas = {0.05, 0.1, 0.2, 0.5, 1.0, 2.0};
    std::string base_archive;    // defaults to <out>/base.ecod
    std::string lambda_archive;  // defaults to <out>/lambda.ecod
    std::string pruned_archive;  // defaults to <out>/pruned.ecod

    std::string base_path() const {
        return base_archive.empty() ? out_dir + "/base.ecod" : base_archive;
    }
    std::string lambda_path() const {
        return lambda_archive.empty() ? out_dir + "/lambda.ecod" : lambda_archive;
    }
    std::string pruned_path() const {
        return pruned_archive.empty() ? out_dir + "/pruned.ecod" : pruned_archive;
    }
};

namespace detail {
inline std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

template <typename T>
std::vector<T> parse_list(const std::string& v, const std::string& key) {
    std::vector<T> out;
    std::stringstream ss(v);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        tok = trim(tok);
        if (tok.empty()) continue;
        try {
            if constexpr (std::is_same_v<T, int>)
                out.push_back(std::stoi(tok));
            else
                out.push_back(std::stod(tok));
        } catch (const std::exception&) {
            throw config_error("config: bad list value for " + key + ": " + tok);
        }
    }
    return out;
}
}  // namespace detail

inline RunConfig parse_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw config_error("config: cannot open " + path);
    RunConfig cfg;
    std::string line, section;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        line = detail::trim(line);
        if (line.empty() || line[0] == '#' || line[0] == ';') continue;
        if (line.front() == '[' && line.back() == ']') {
            section = line.substr(1, line.size() - 2);
            if (section != "model" && section != "diffusion" && section != "gates" &&
                section != "prune" && section != "run")
                throw config_error("config: unknown section [" + section + "] at line " +
                                   std::to_string(lineno));
            continue;
        }
        std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw config_error("config: expected key=value at line " + std::to_string(lineno));
        std::string key = detail::trim(line.substr(0, eq));
        std::string val = detail::trim(line.substr(eq + 1));
        auto as_int = [&] {
            try {
                return std::stoi(val);
            } catch (const std::exception&) {
                throw config_error("config: bad integer for " + key + ": " + val);
            }
        };
        auto as_double = [&] {
            try {
                return std::stod(val);
            } catch (const std::exception&) {
                throw config_error("config: bad number for " + key + ": " + val);
            }
        };

        bool known = true;
        if (section == "model") {
            if (key == "d_model") cfg.model.d_model = as_int();
            else if (key == "n_heads") cfg.model.n_heads = as_int();
            else if (key == "d_ff") cfg.model.d_ff = as_int();
            else if (key == "n_blocks") cfg.model.n_blocks = as_int();
            else if (key == "seq_len") cfg.model.seq_len = as_int();
            else if (key == "n_conditions") cfg.model.n_conditions = as_int();
            else known = false;
        } else if (section == "diffusion") {
            if (key == "T") cfg.model.T = as_int();
            else if (key == "mode") {
                if (val == "deterministic") cfg.mode = SamplerMode::deterministic;
                else if (val == "stochastic_shared") cfg.mode = SamplerMode::stochastic_shared;
                else throw config_error("config: unknown sampler mode " + val);
            } else known = false;
        } else if (section == "gates") {
            if (key == "alpha_temp") cfg.gates.alpha_temp = as_double();
            else if (key == "zeta") cfg.gates.zeta = as_double();
            else if (key == "gamma") cfg.gates.gamma = as_double();
            else if (key == "delta") cfg.gates.delta = as_double();
            else if (key == "beta_stretch") cfg.gates.beta_stretch = as_double();
            else known = false;
        } else if (section == "prune") {
            if (key == "beta_reg") cfg.prune.beta_reg = as_double();
            else if (key == "lr_attn") cfg.prune.lr_attn = as_double();
            else if (key == "lr_ffn") cfg.prune.lr_ffn = as_double();
            else if (key == "steps") cfg.prune.steps = as_int();
            else if (key == "batch_size") cfg.prune.batch_size = as_int();
            else if (key == "weight_decay") cfg.prune.weight_decay = as_double();
            else if (key == "T_train") cfg.prune.T_train = as_int();
            else if (key == "engine") {
                if (val == "naive") cfg.prune.engine = Engine::naive;
                else if (val == "checkpointed") cfg.prune.engine = Engine::checkpointed;
                else throw config_error("config: unknown engine " + val);
            } else known = false;
        } else if (section == "run") {
            if (key == "seed") cfg.seed = static_cast<std::uint64_t>(std::stoull(val));
            else if (key == "out_dir") cfg.out_dir = val;
            else if (key == "base_train_steps") cfg.base_train_steps = as_int();
            else if (key == "base_batch_size") cfg.base_batch_size = as_int();
            else if (key == "base_lr") cfg.base_lr = as_double();
            else if (key == "data_scale") cfg.data_scale = as_double();
            else if (key == "n_samples") cfg.n_samples = as_int();
            else if (key == "sample_conditions")
                cfg.sample_conditions = detail::parse_list<int>(val, key);
            else if (key == "profile_T") cfg.profile_T = detail::parse_list<int>(val, key);
            else if (key == "gate_curve_deltas")
                cfg.gate_curve_deltas = detail::parse_list<double>(val, key);
            else if (key == "base_archive") cfg.base_archive = val;
            else if (key == "lambda_archive") cfg.lambda_archive = val;
            else if (key == "pruned_archive") cfg.pruned_archive = val;
            else known = false;
        } else {
            throw config_error("config: key outside any section at line " +
                               std::to_string(lineno));
        }
        if (!known)
            throw config_error("config: unknown key '" + key + "' in section [" + section +
                               "] at line " + std::to_string(lineno));
    }
    cfg.model.validate();
    cfg.gates.validate();
    if (cfg.prune.steps < 0 || cfg.prune.batch_size < 1)
        throw config_error("config: invalid prune steps/batch size");
    if (cfg.prune.lr_attn < 0 || cfg.prune.lr_ffn < 0)
        throw config_error("config: learning rates must be >= 0");
    return cfg;
}

}  // namespace ecoprune

#endif
