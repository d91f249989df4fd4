// Command-line front end: pretraining, mask learning, thresholding/compaction,
// sampling, evaluation, and the memory/runtime and gate-curve sweeps.
#include <CLI11.hpp>

#include <ecoprune/ecoprune.hpp>

#include <chrono>
#include <filesystem>
#include <iostream>
#include <numeric>
#include <string>
#include <vector>

using namespace ecoprune;
namespace fs = std::filesystem;

namespace {

struct CommonArgs {
    std::string config_path;
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::string out_dir;
};

void add_common(CLI::App* cmd, CommonArgs& a) {
    cmd->add_option("--config", a.config_path, "run configuration file")->required();
    cmd->add_option("--seed", a.seed, "override the config seed")
        ->each([&](const std::string&) { a.seed_set = true; });
    cmd->add_option("--out", a.out_dir, "override the output directory");
}

RunConfig load_run_config(const CommonArgs& a) {
    RunConfig cfg = parse_config(a.config_path);
    if (a.seed_set) cfg.seed = a.seed;
    if (!a.out_dir.empty()) cfg.out_dir = a.out_dir;
    fs::create_directories(cfg.out_dir);
    return cfg;
}

std::vector<int> conditions_of(const RunConfig& cfg) {
    if (!cfg.sample_conditions.empty()) return cfg.sample_conditions;
    std::vector<int> all(cfg.model.n_conditions);
    std::iota(all.begin(), all.end(), 0);
    return all;
}

void cmd_train_base(const CommonArgs& a) {
    RunConfig cfg = load_run_config(a);
    Rng rng(cfg.seed);
    DenoiserModel m = DenoiserModel::init(cfg.model, rng);
    NoiseSchedule s = NoiseSchedule::linear(cfg.model.T);
    SyntheticDataset ds = SyntheticDataset::make(cfg.model, cfg.seed, cfg.data_scale);
    std::vector<double> losses = train_base_model(m, s, ds, cfg.base_train_steps,
                                                  cfg.base_batch_size, cfg.base_lr, cfg.seed);
    save_model(cfg.base_path(), m);
    CsvWriter csv(cfg.out_dir + "/train_base.csv", {"step", "loss"});
    for (std::size_t i = 0; i < losses.size(); ++i) {
        csv.cell(static_cast<int>(i)).cell(losses[i]);
        csv.end_row();
    }
    std::cout << "trained " << cfg.base_train_steps << " steps, final loss "
              << (losses.empty() ? 0.0 : losses.back()) << ", wrote " << cfg.base_path()
              << "\n";
}

void cmd_learn_mask(const CommonArgs& a) {
    RunConfig cfg = load_run_config(a);
    DenoiserModel m = load_model(cfg.base_path(), cfg.model);
    if (m.cfg.T < cfg.prune.T_train) m.cfg.T = cfg.prune.T_train;
    NoiseSchedule s = NoiseSchedule::linear(cfg.prune.T_train);
    LearnResult r = learn_mask(m, s, conditions_of(cfg), cfg.prune, cfg.gates, cfg.seed,
                               cfg.mode);
    save_lambda(cfg.lambda_path(), r.lambda);
    CsvWriter csv(cfg.out_dir + "/prune_report.csv",
                  {"step", "le", "reg", "total", "gate_mean", "frac_saturated",
                   "peak_floats", "wall_ms"});
    for (const auto& row : r.report) {
        csv.cell(row.step)
            .cell(row.le)
            .cell(row.reg)
            .cell(row.total)
            .cell(row.gate_mean)
            .cell(row.frac_saturated)
            .cell(row.peak_floats)
            .cell(row.wall_ms);
        csv.end_row();
    }
    std::cout << "learned mask over " << r.report.size() << " steps, wrote "
              << cfg.lambda_path() << "\n";
}

void cmd_prune(const CommonArgs& a, double sparsity, const std::string& mode_str) {
    RunConfig cfg = load_run_config(a);
    ThresholdMode mode;
    if (mode_str == "global")
        mode = ThresholdMode::global;
    else if (mode_str == "local")
        mode = ThresholdMode::local;
    else
        throw config_error("prune: --mode must be global or local, got " + mode_str);
    DenoiserModel m = load_model(cfg.base_path(), cfg.model);
    GateParams lambda = load_lambda(cfg.lambda_path());
    BinaryMask mask = threshold_mask(lambda, sparsity, mode);
    DenoiserModel pruned = compact_model(m, mask, [](const std::string& w) {
        std::cerr << "warning: " << w << "\n";
    });
    save_model(cfg.pruned_path(), pruned);
    std::cout << "target sparsity " << sparsity << ", achieved " << mask.achieved_sparsity
              << ", params " << count_params(m) << " -> " << count_params(pruned)
              << ", wrote " << cfg.pruned_path() << "\n";
}

void cmd_sample(const CommonArgs& a) {
    RunConfig cfg = load_run_config(a);
    DenoiserModel m = load_model(cfg.base_path(), cfg.model);
    NoiseSchedule s = NoiseSchedule::linear(m.cfg.T);
    GateValues ones = GateValues::ones(m);
    CsvWriter csv(cfg.out_dir + "/samples.csv", {"condition", "sample", "dim", "value"});
    for (int y : conditions_of(cfg)) {
        if (y < 0 || y >= m.cfg.n_conditions)
            throw config_error("sample: condition id out of range");
        for (int i = 0; i < cfg.n_samples; ++i) {
            Rng r = Rng(cfg.seed).derive(static_cast<std::uint64_t>(y),
                                         static_cast<std::uint64_t>(i));
            Tensor z_T = r.normal_tensor({static_cast<std::size_t>(m.cfg.seq_len),
                                          static_cast<std::size_t>(m.cfg.d_model)});
            SamplerOpts so;
            so.mode = cfg.mode;
            so.seed = detail::splitmix64(cfg.seed ^ detail::splitmix64(
                                                         (static_cast<std::uint64_t>(y) << 32) |
                                                         static_cast<std::uint64_t>(i)));
            Tensor z0 = full_sample(s, m, z_T, y, ones, so);
            for (std::size_t k = 0; k < z0.numel(); ++k) {
                csv.cell(y).cell(i).cell(static_cast<int>(k)).cell(z0.data[k]);
                csv.end_row();
            }
        }
    }
    std::cout << "wrote " << cfg.out_dir << "/samples.csv\n";
}

void cmd_eval(const CommonArgs& a) {
    RunConfig cfg = load_run_config(a);
    DenoiserModel base = load_model(cfg.base_path(), cfg.model);
    DenoiserModel other = load_model(cfg.pruned_path(), cfg.model);
    NoiseSchedule s = NoiseSchedule::linear(base.cfg.T);
    std::vector<EvalRow> rows = eval_run(base, other, GateValues::ones(base),
                                         GateValues::ones(other), s, cfg.n_samples,
                                         conditions_of(cfg), cfg.seed);
    CsvWriter csv(cfg.out_dir + "/eval.csv",
                  {"condition", "latent_mse", "moment_distance", "params_base",
                   "params_other", "flops_base", "flops_other"});
    for (const auto& r : rows) {
        csv.cell(r.condition)
            .cell(r.latent_mse)
            .cell(r.moment_distance)
            .cell(r.params_base)
            .cell(r.params_other)
            .cell(r.flops_base)
            .cell(r.flops_other);
        csv.end_row();
    }
    std::cout << "wrote " << cfg.out_dir << "/eval.csv\n";
}

void cmd_profile(const CommonArgs& a) {
    RunConfig cfg = load_run_config(a);
    Rng rng(cfg.seed);
    DenoiserModel m = DenoiserModel::init(cfg.model, rng);
    GateParams lambda = make_gate_params(m, 1.0);
    auto shifts = zero_noise_shifts(lambda, cfg.gates);
    CsvWriter csv(cfg.out_dir + "/profile.csv",
                  {"T", "naive_peak_floats", "naive_ms", "ckpt_peak_floats", "ckpt_ms",
                   "ckpt_latent_bytes"});
    for (int T : cfg.profile_T) {
        m.cfg.T = std::max(m.cfg.T, T);
        NoiseSchedule s = NoiseSchedule::linear(T);
        Rng item_rng = Rng(cfg.seed).derive(0x70726fULL, static_cast<std::uint64_t>(T));
        PruneItem item;
        item.y = 0;
        item.z_T = item_rng.normal_tensor({static_cast<std::size_t>(m.cfg.seq_len),
                                           static_cast<std::size_t>(m.cfg.d_model)});
        item.z0_target = rollout(m, s, item.z_T, item.y, GateValues::ones(m), {});
        std::vector<PruneItem> items{item};

        auto t0 = std::chrono::steady_clock::now();
        EngineResult nv = naive_backprop(m, s, lambda, cfg.gates, shifts, items,
                                         cfg.prune.beta_reg);
        auto t1 = std::chrono::steady_clock::now();
        EngineResult ck = checkpointed_backprop(m, s, lambda, cfg.gates, shifts, items,
                                                cfg.prune.beta_reg);
        auto t2 = std::chrono::steady_clock::now();
        long long latent_bytes = static_cast<long long>(T + 1) * m.cfg.seq_len *
                                 m.cfg.d_model * 8;
        csv.cell(T)
            .cell(nv.peak_floats)
            .cell(std::chrono::duration<double, std::milli>(t1 - t0).count())
            .cell(ck.peak_floats)
            .cell(std::chrono::duration<double, std::milli>(t2 - t1).count())
            .cell(latent_bytes);
        csv.end_row();
    }
    std::cout << "wrote " << cfg.out_dir << "/profile.csv\n";
}

void cmd_gate_curve(const CommonArgs& a) {
    RunConfig cfg = load_run_config(a);
    CsvWriter csv(cfg.out_dir + "/gate_curve.csv", {"delta", "lambda", "mean_gate"});
    const int draws = 4000;
    for (double delta : cfg.gate_curve_deltas) {
        GateConfig gc = cfg.gates;
        gc.delta = delta;
        gc.validate();
        for (double lam = -6.0; lam <= 6.0 + 1e-9; lam += 0.25) {
            Rng rng = Rng(cfg.seed).derive(0x676375ULL);  // common draws per lambda
            double acc = 0.0;
            for (int i = 0; i < draws; ++i) acc += sample_gate(lam, rng.uniform(), gc);
            csv.cell(delta).cell(lam).cell(acc / draws);
            csv.end_row();
        }
    }
    std::cout << "wrote " << cfg.out_dir << "/gate_curve.csv\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale structural pruning lab for diffusion denoisers"};
    app.require_subcommand(1);

    CommonArgs train_a, mask_a, prune_a, sample_a, eval_a, profile_a, curve_a;
    double sparsity = -1.0;
    std::string prune_mode;

    add_common(app.add_subcommand("train-base", "pretrain the toy denoiser"), train_a);
    add_common(app.add_subcommand("learn-mask", "learn the pruning mask end to end"),
               mask_a);
    CLI::App* prune_cmd =
        app.add_subcommand("prune", "threshold the mask and compact the model");
    add_common(prune_cmd, prune_a);
    prune_cmd->add_option("--sparsity", sparsity, "target sparsity in [0,1)")->required();
    prune_cmd->add_option("--mode", prune_mode, "global or local thresholding")->required();
    add_common(app.add_subcommand("sample", "draw final latents from the base model"),
               sample_a);
    add_common(app.add_subcommand("eval", "compare base and pruned archives"), eval_a);
    add_common(app.add_subcommand("profile", "memory/runtime sweep over T"), profile_a);
    add_common(app.add_subcommand("gate-curve", "empirical mean gate vs lambda"), curve_a);

    CLI11_PARSE(app, argc, argv);

    try {
        if (app.got_subcommand("train-base")) cmd_train_base(train_a);
        else if (app.got_subcommand("learn-mask")) cmd_learn_mask(mask_a);
        else if (app.got_subcommand("prune")) cmd_prune(prune_a, sparsity, prune_mode);
        else if (app.got_subcommand("sample")) cmd_sample(sample_a);
        else if (app.got_subcommand("eval")) cmd_eval(eval_a);
        else if (app.got_subcommand("profile")) cmd_profile(profile_a);
        else if (app.got_subcommand("gate-curve")) cmd_gate_curve(curve_a);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
