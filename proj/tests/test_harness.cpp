#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <ecoprune/archive.hpp>
#include <ecoprune/config.hpp>
#include <ecoprune/csv.hpp>
#include <ecoprune/eval.hpp>

#include <filesystem>
#include <fstream>
#include <string>

using namespace ecoprune;
namespace fs = std::filesystem;

namespace {

fs::path tmp_dir() {
    fs::path p = fs::temp_directory_path() / "ecoprune-harness-test";
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)),
                       std::istreambuf_iterator<char>());
}

void spit(const fs::path& p, const std::string& s) {
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    f << s;
}

}  // namespace

TEST_CASE("model archive round-trip is bit-identical") {
    Rng rng(3);
    DenoiserConfig cfg;
    DenoiserModel m = DenoiserModel::init(cfg, rng);
    fs::path p = tmp_dir() / "model.ecod";
    save_model(p.string(), m);
    DenoiserModel l = load_model(p.string(), cfg);
    CHECK(l.cfg.n_blocks == cfg.n_blocks);
    CHECK(l.cfg.d_model == cfg.d_model);
    CHECK(l.cfg.n_conditions == cfg.n_conditions);
    bool identical = true;
    for_each_tensor(m, [&](const std::string& name, Tensor& t) {
        for_each_tensor(l, [&](const std::string& n2, Tensor& t2) {
            if (n2 == name && (t.shape != t2.shape || t.data != t2.data)) identical = false;
        });
    });
    CHECK(identical);

    fs::path p2 = tmp_dir() / "model2.ecod";
    save_model(p2.string(), l);
    CHECK(slurp(p) == slurp(p2));
}

TEST_CASE("archive header layout") {
    Rng rng(5);
    DenoiserConfig cfg;
    DenoiserModel m = DenoiserModel::init(cfg, rng);
    fs::path p = tmp_dir() / "layout.ecod";
    save_model(p.string(), m);
    std::string raw = slurp(p);
    REQUIRE(raw.size() > 13);
    CHECK(raw.substr(0, 4) == "ECOD");
    CHECK(raw[4] == 0x01);
    std::uint64_t mlen = 0;
    for (int i = 0; i < 8; ++i)
        mlen |= static_cast<std::uint64_t>(static_cast<unsigned char>(raw[5 + i])) << (8 * i);
    CHECK(raw.substr(13, mlen).front() == '{');
    // payload holds exactly the float total
    std::size_t floats = (raw.size() - 13 - mlen) / 8;
    CHECK(floats == static_cast<std::size_t>(count_params(m)));
}

TEST_CASE("corrupted archives are rejected") {
    Rng rng(7);
    DenoiserConfig cfg;
    DenoiserModel m = DenoiserModel::init(cfg, rng);
    fs::path good = tmp_dir() / "good.ecod";
    save_model(good.string(), m);
    std::string raw = slurp(good);

    fs::path bad = tmp_dir() / "bad.ecod";
    std::string magic = raw;
    magic[0] = 'X';
    spit(bad, magic);
    CHECK_THROWS_AS(load_archive(bad.string()), format_error);

    std::string version = raw;
    version[4] = 0x02;
    spit(bad, version);
    CHECK_THROWS_AS(load_archive(bad.string()), format_error);

    spit(bad, raw.substr(0, 10));
    CHECK_THROWS_AS(load_archive(bad.string()), format_error);

    spit(bad, raw.substr(0, raw.size() - 3));  // breaks 8-byte alignment
    CHECK_THROWS_AS(load_archive(bad.string()), format_error);

    spit(bad, raw.substr(0, raw.size() - 8));  // drops one float
    CHECK_THROWS_AS(load_archive(bad.string()), format_error);

    CHECK_THROWS_AS(load_archive((tmp_dir() / "missing.ecod").string()), format_error);
}

TEST_CASE("lambda archive round-trip preserves block order") {
    Rng rng(11);
    DenoiserConfig cfg;
    cfg.n_blocks = 11;  // two digits exercise the numeric re-sort
    DenoiserModel m = DenoiserModel::init(cfg, rng);
    GateParams gp = make_gate_params(m, 0.0);
    for (auto& g : gp.groups)
        for (double& v : g.lambda.data) v = rng.normal();
    fs::path p = tmp_dir() / "lambda.ecod";
    save_lambda(p.string(), gp);
    GateParams l = load_lambda(p.string());
    REQUIRE(l.groups.size() == gp.groups.size());
    for (std::size_t i = 0; i < gp.groups.size(); ++i) {
        CHECK(l.groups[i].name == gp.groups[i].name);
        CHECK(l.groups[i].lambda.data == gp.groups[i].lambda.data);
    }
}

TEST_CASE("config parsing: defaults, overrides, rejection") {
    fs::path p = tmp_dir() / "run.cfg";

    spit(p, "");
    RunConfig def = parse_config(p.string());
    CHECK(def.model.d_model == 16);
    CHECK(def.model.T == 8);
    CHECK(def.prune.beta_reg == 0.5);
    CHECK(def.prune.steps == 400);
    CHECK(def.prune.lr_attn == 0.15);
    CHECK(def.gates.zeta == 1.1);
    CHECK(def.base_train_steps == 2000);
    CHECK(def.base_path() == "./base.ecod");

    spit(p,
         "# comment\n"
         "[model]\n"
         "d_model = 8\n"
         "n_heads = 2\n"
         "d_ff = 12\n"
         "[diffusion]\n"
         "T = 4\n"
         "mode = stochastic_shared\n"
         "[gates]\n"
         "delta = 1e-8\n"
         "[prune]\n"
         "engine = naive\n"
         "beta_reg = 0.25\n"
         "[run]\n"
         "seed = 42\n"
         "out_dir = /tmp/somewhere\n"
         "sample_conditions = 0, 2, 5\n"
         "profile_T = 2,4\n"
         "gate_curve_deltas = 0.05,2\n");
    RunConfig c = parse_config(p.string());
    CHECK(c.model.d_model == 8);
    CHECK(c.model.n_heads == 2);
    CHECK(c.model.d_ff == 12);
    CHECK(c.model.T == 4);
    CHECK(c.mode == SamplerMode::stochastic_shared);
    CHECK(c.gates.delta == 1e-8);
    CHECK(c.prune.engine == Engine::naive);
    CHECK(c.prune.beta_reg == 0.25);
    CHECK(c.seed == 42);
    CHECK(c.out_dir == "/tmp/somewhere");
    CHECK(c.base_path() == "/tmp/somewhere/base.ecod");
    CHECK(c.sample_conditions == std::vector<int>({0, 2, 5}));
    CHECK(c.profile_T == std::vector<int>({2, 4}));
    CHECK(c.gate_curve_deltas == std::vector<double>({0.05, 2.0}));

    spit(p, "[model]\nd_modell = 8\n");
    CHECK_THROWS_AS(parse_config(p.string()), config_error);
    spit(p, "[models]\n");
    CHECK_THROWS_AS(parse_config(p.string()), config_error);
    spit(p, "d_model = 8\n");
    CHECK_THROWS_AS(parse_config(p.string()), config_error);
    spit(p, "[model]\nd_model\n");
    CHECK_THROWS_AS(parse_config(p.string()), config_error);
    spit(p, "[model]\nd_model = eight\n");
    CHECK_THROWS_AS(parse_config(p.string()), config_error);
    spit(p, "[model]\nd_model = 15\n");  // violates head divisibility
    CHECK_THROWS_AS(parse_config(p.string()), domain_error);
    CHECK_THROWS_AS(parse_config((tmp_dir() / "nope.cfg").string()), config_error);

    // the rejection message names the offending line
    spit(p, "[model]\nd_model = 8\nbogus = 1\n");
    try {
        parse_config(p.string());
        CHECK(false);
    } catch (const config_error& e) {
        CHECK(std::string(e.what()).find("line 3") != std::string::npos);
        CHECK(std::string(e.what()).find("bogus") != std::string::npos);
    }
}

TEST_CASE("csv writer: stable bytes, fixed arity") {
    fs::path a = tmp_dir() / "a.csv";
    fs::path b = tmp_dir() / "b.csv";
    for (const fs::path& p : {a, b}) {
        CsvWriter w(p.string(), {"step", "loss", "note"});
        w.cell(0).cell(0.1).cell(std::string("x"));
        w.end_row();
        w.cell(1).cell(1.0 / 3.0).cell(std::string("y"));
        w.end_row();
    }
    std::string sa = slurp(a);
    CHECK(sa == slurp(b));
    CHECK(sa.substr(0, 15) == "step,loss,note\n");
    CHECK(sa.find("0.33333333333333331") != std::string::npos);  // %.17g
    CHECK(sa.find('\r') == std::string::npos);

    CsvWriter w(a.string(), {"one", "two"});
    w.cell(1);
    CHECK_THROWS_AS(w.end_row(), contract_error);
}

TEST_CASE("eval_run: identical models score zero, mismatched condition rejected") {
    Rng rng(13);
    DenoiserConfig cfg;
    cfg.n_blocks = 1;
    cfg.T = 2;
    DenoiserModel m = DenoiserModel::init(cfg, rng);
    NoiseSchedule s = NoiseSchedule::linear(cfg.T);
    GateValues ones = GateValues::ones(m);
    std::vector<EvalRow> rows = eval_run(m, m, ones, ones, s, 8, {0, 3}, 99);
    REQUIRE(rows.size() == 2);
    for (const auto& r : rows) {
        CHECK(r.latent_mse == 0.0);
        CHECK(r.moment_distance == 0.0);
        CHECK(r.params_base == r.params_other);
        CHECK(r.flops_base == r.flops_other);
    }
    CHECK(rows[0].condition == 0);
    CHECK(rows[1].condition == 3);
    CHECK_THROWS_AS(eval_run(m, m, ones, ones, s, 4, {cfg.n_conditions}, 1), domain_error);
}
