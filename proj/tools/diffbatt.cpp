// Command-line front end: data generation, training, prediction, evaluation and synthesis reports.

#include "CLI11.hpp"

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include "diffbatt/checkpoint.hpp"
#include "diffbatt/data.hpp"
#include "diffbatt/errors.hpp"
#include "diffbatt/prediction.hpp"
#include "diffbatt/sampler.hpp"
#include "diffbatt/synthesis.hpp"
#include "diffbatt/training.hpp"

namespace fs = std::filesystem;
using namespace diffbatt;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitNumeric = 3;
constexpr int kConfigVersion = 1;

struct Common {
    int config_version = kConfigVersion;
    std::uint64_t seed = 0;
    std::string seeds;  // "A..B", overrides seed where a command loops
    std::string out = ".";

    std::vector<std::uint64_t> seed_list() const {
        if (seeds.empty()) return {seed};
        static const std::regex range(R"(^\s*(\d+)\s*\.\.\s*(\d+)\s*$)");
        std::smatch m;
        if (!std::regex_match(seeds, m, range)) throw ConfigError("--seeds expects A..B, got '" + seeds + "'");
        const auto a = std::stoull(m[1]), b = std::stoull(m[2]);
        if (b < a) throw ConfigError("--seeds range is empty: " + seeds);
        std::vector<std::uint64_t> v;
        for (auto s = a; s <= b; ++s) v.push_back(s);
        return v;
    }
    fs::path out_dir() const {
        fs::create_directories(out);
        return out;
    }
};

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream f(p, std::ios::binary);
    f << text;
    if (!f) throw IoError("cannot write " + p.string());
}

fs::path seeded(const fs::path& dir, const std::string& stem, std::uint64_t seed, const std::string& ext) {
    return dir / (stem + "_seed" + std::to_string(seed) + ext);
}

Dataset load(const std::string& path, const LoadOptions& lo) {
    return load_dataset(path, format_from_extension(path), lo);
}

// ---------------------------------------------------------------- gen-data

struct GenData {
    SyntheticDatasetConfig cfg;
};

void add_gen_data(CLI::App& app, GenData& o) {
    auto& c = o.cfg;
    app.add_option("--n-train", c.n_train, "Training cells")->capture_default_str();
    app.add_option("--n-test", c.n_test, "Test cells")->capture_default_str();
    app.add_option("--a-min", c.a_min, "Lower bound of the log-uniform fade coefficient a")->capture_default_str();
    app.add_option("--a-max", c.a_max, "Upper bound of a")->capture_default_str();
    app.add_option("--b-min", c.b_min, "Lower bound of the uniform exponent b")->capture_default_str();
    app.add_option("--b-max", c.b_max, "Upper bound of b")->capture_default_str();
    app.add_option("--rul-min", c.rul_min, "Shortest accepted RUL")->capture_default_str();
    app.add_option("--rul-max", c.rul_max, "Longest accepted RUL")->capture_default_str();
    app.add_option("--noise-sd", c.noise_sd, "SOH measurement noise")->capture_default_str();
    app.add_option("--n-feat", c.n_feat, "Capacity-matrix features per cycle")->capture_default_str();
    app.add_option("--n-early", c.n_early, "Early cycles with features")->capture_default_str();
    app.add_option("--eol", c.eol_threshold, "End-of-life threshold")->capture_default_str();
    app.add_option("--floor", c.floor, "SOH at which generated curves stop")->capture_default_str();
}

int run_gen_data(const Common& g, GenData o) {
    o.cfg.seed = g.seed;
    const auto ds = generate_synthetic_dataset(o.cfg);
    const auto dir = g.out_dir();
    write_raw_cells_json(dir / "train.json", ds.train);
    write_raw_cells_json(dir / "test.json", ds.test);
    int lo = 0, hi = 0;
    bool first = true;
    for (const auto* part : {&ds.train, &ds.test})
        for (const auto& c : *part) {
            const int r = c.true_rul.value_or(0);
            lo = first ? r : std::min(lo, r);
            hi = first ? r : std::max(hi, r);
            first = false;
        }
    std::printf("wrote %zu train and %zu test cells to %s\nRUL range %d..%d\n", ds.train.size(), ds.test.size(),
                dir.string().c_str(), lo, hi);
    return 0;
}

// ---------------------------------------------------------------- train

struct Train {
    std::string data;
    int n_early = 100;
    DenoiserConfig model;
    std::string schedule = "linear";
    int T = 1000;
    double beta_1 = 1e-4;
    double beta_T = 0.02;
    TrainConfig train;
    double ema = 0.999;
    bool no_ema = false;
};

void add_train(CLI::App& app, Train& o) {
    app.add_option("--data", o.data, "Training dataset (.json or .csv)")->required();
    app.add_option("--n-early", o.n_early, "Early cycles forming the capacity matrix")->capture_default_str();
    app.add_option("--L", o.model.L, "Grid nodes per curve")->capture_default_str();
    app.add_option("--base-channels", o.model.base_channels, "U-Net width at the finest level")->capture_default_str();
    app.add_option("--multipliers", o.model.channel_multipliers, "Channel multiplier per level")
        ->delimiter(',')
        ->capture_default_str();
    app.add_option("--attn-levels", o.model.attn_levels, "Levels with self-attention")
        ->delimiter(',')
        ->capture_default_str();
    app.add_option("--time-embed", o.model.time_embed_dim, "Step embedding width")->capture_default_str();
    app.add_option("--cond-embed", o.model.cond_embed_dim, "Condition embedding width")->capture_default_str();
    app.add_option("--position-dim", o.model.position_dim, "Appended position channels")->capture_default_str();
    app.add_option("--enc-layers", o.model.enc_layers, "Condition encoder layers")->capture_default_str();
    app.add_option("--enc-heads", o.model.enc_heads, "Condition encoder heads")->capture_default_str();
    app.add_option("--enc-d-model", o.model.enc_d_model, "Condition encoder width")->capture_default_str();
    app.add_option("--schedule", o.schedule, "Noise schedule")
        ->check(CLI::IsMember({"linear", "cosine"}))
        ->capture_default_str();
    app.add_option("--T", o.T, "Diffusion steps")->capture_default_str();
    app.add_option("--beta-1", o.beta_1, "First linear-schedule variance")->capture_default_str();
    app.add_option("--beta-T", o.beta_T, "Last linear-schedule variance")->capture_default_str();
    app.add_option("--steps", o.train.steps, "Optimizer steps")->capture_default_str();
    app.add_option("--batch-size", o.train.batch_size, "Curves per step")->capture_default_str();
    app.add_option("--lr", o.train.step_size, "Adam step size")->capture_default_str();
    app.add_option("--p-uncond", o.train.p_uncond, "Condition dropout probability")->capture_default_str();
    app.add_option("--ema", o.ema, "Weight moving-average decay")->capture_default_str();
    app.add_flag("--no-ema", o.no_ema, "Evaluate the raw optimizer weights");
    app.add_option("--eval-every", o.train.eval_every, "Loss log interval")->capture_default_str();
    app.add_option("--grad-clip", o.train.grad_clip, "Global gradient-norm clip")->capture_default_str();
    app.add_option("--divergence-loss", o.train.divergence_loss, "Loss treated as divergent")->capture_default_str();
    app.add_option("--divergence-patience", o.train.divergence_patience, "Divergent steps before aborting")
        ->capture_default_str();
}

int run_train(const Common& g, Train o) {
    LoadOptions lo;
    lo.grid.length = o.model.L;
    lo.n_early = o.n_early;
    const Dataset ds = load(o.data, lo);
    o.model.n_early = o.n_early;
    o.model.n_feat = ds.cells.front().capacity.n_feat();
    const auto s = make_schedule(schedule_kind_from_string(o.schedule), o.T, o.beta_1, o.beta_T);
    o.train.ema_decay = o.no_ema ? std::nullopt : std::optional<double>(o.ema);
    const auto dir = g.out_dir();
    for (const auto seed : g.seed_list()) {
        TrainConfig tc = o.train;
        tc.seed = seed;
        tc.checkpoint_path = seeded(dir, "model", seed, ".ckpt");
        tc.metrics_log = seeded(dir, "loss", seed, ".csv");
        const auto t0 = std::chrono::steady_clock::now();
        const auto [state, rep] = train(initial_state(o.model, seed), ds, tc, s);
        const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("seed %llu: final loss %.6g -> %s\n", static_cast<unsigned long long>(seed),
                    rep.loss_history.back().second, tc.checkpoint_path->string().c_str());
        std::fprintf(stderr, "seed %llu trained in %.1fs\n", static_cast<unsigned long long>(seed), dt);
    }
    return 0;
}

// ---------------------------------------------------------------- predict / eval

struct Eval {
    std::string data;
    std::string checkpoint;  // single model; otherwise models/model_seed<N>.ckpt
    std::string models;
    PredictConfig predict;
    std::vector<double> eols{0.9, 0.8, 0.7, 0.6};
    std::string name = "test";
};

void add_eval(CLI::App& app, Eval& o, bool soh) {
    app.add_option("--data", o.data, "Evaluation dataset (.json or .csv)")->required();
    app.add_option("--checkpoint", o.checkpoint, "Single checkpoint, evaluated with --seed");
    app.add_option("--models", o.models, "Directory of model_seed<N>.ckpt files (default: --out)");
    app.add_option("--K", o.predict.K, "Samples per cell")->capture_default_str();
    app.add_option("--w", o.predict.w, "Guidance strength")->capture_default_str();
    app.add_option("--threshold", o.predict.threshold, "End-of-life threshold for RUL")->capture_default_str();
    app.add_option("--fit-cycles", o.predict.fit_cycles, "Early cycles used for sample selection")
        ->capture_default_str();
    app.add_option("--name", o.name, "Dataset label in reports")->capture_default_str();
    if (soh) app.add_option("--eol", o.eols, "End-of-life thresholds")->delimiter(',')->capture_default_str();
}

struct Loaded {
    std::vector<std::uint64_t> seeds;
    std::vector<DenoiserModel> models;
    NoiseSchedule schedule;
    Dataset data;
};

Loaded load_models(const Common& g, const Eval& o) {
    Loaded l;
    if (!o.checkpoint.empty()) {
        if (!g.seeds.empty()) throw ConfigError("--checkpoint evaluates one model; use --models with --seeds");
        l.seeds = {g.seed};
        l.models.push_back(load_checkpoint(o.checkpoint).sampling_model());
    } else {
        const fs::path dir = o.models.empty() ? fs::path(g.out) : fs::path(o.models);
        l.seeds = g.seed_list();
        for (const auto s : l.seeds) l.models.push_back(load_checkpoint(seeded(dir, "model", s, ".ckpt")).sampling_model());
    }
    const auto& first = l.models.front();
    for (const auto& m : l.models)
        if (!(m.config == first.config) || m.schedule != first.schedule || m.grid.max_cycle != first.grid.max_cycle)
            throw ConfigError("checkpoints disagree on configuration, schedule or grid");
    l.schedule = schedule_from_descriptor(first.schedule);
    LoadOptions lo;
    lo.grid = first.grid;
    lo.n_early = first.config.n_early;
    lo.split = Split::test;
    l.data = load(o.data, lo);
    if (l.data.cells.front().capacity.n_feat() != first.config.n_feat)
        throw ConfigError("dataset has " + std::to_string(l.data.cells.front().capacity.n_feat()) +
                          " features per cycle; the model expects " + std::to_string(first.config.n_feat));
    for (const auto& m : l.models) check_model_schedule(m, l.schedule);
    return l;
}

std::vector<SeededModel> seeded_models(const Loaded& l) {
    std::vector<SeededModel> v;
    for (std::size_t i = 0; i < l.models.size(); ++i) v.push_back({l.seeds[i], &l.models[i]});
    return v;
}

void write_report(const fs::path& dir, const std::string& stem, const EvalReport& rep) {
    write_text(dir / (stem + ".csv"), rep.to_csv());
    write_text(dir / (stem + ".txt"), rep.to_table());
    std::cout << rep.to_table();
}

std::string curves_csv(const std::vector<CellPrediction>& preds, const GridSpec& grid) {
    std::string out = "cell_id,curve,node,cycle,soh\n";
    char buf[128];
    for (const auto& p : preds) {
        auto emit = [&](const std::string& tag, const Eigen::VectorXd& v) {
            for (Eigen::Index k = 0; k < v.size(); ++k) {
                std::snprintf(buf, sizeof buf, ",%s,%lld,%.6f,%.9g\n", tag.c_str(), static_cast<long long>(k),
                              grid.cycle_at(static_cast<int>(k)), v(k));
                out += p.cell_id + buf;
            }
        };
        emit("selected", p.result.selected);
        for (std::size_t i = 0; i < p.result.samples.size(); ++i) emit("sample" + std::to_string(i), p.result.samples[i]);
    }
    return out;
}

int run_predict(const Common& g, const Eval& o) {
    const auto l = load_models(g, o);
    const auto dir = g.out_dir();
    for (std::size_t i = 0; i < l.models.size(); ++i) {
        const auto preds = predict_dataset(l.models[i], l.data, o.predict, l.schedule, l.seeds[i]);
        write_text(seeded(dir, "predictions", l.seeds[i], ".json"), predictions_to_json(preds, l.data.grid));
        write_text(seeded(dir, "curves", l.seeds[i], ".csv"), curves_csv(preds, l.data.grid));
        const auto sc = score_rul(preds, l.data.grid);
        std::printf("seed %llu: %zu cells, RUL RMSE %.2f, censored %d\n", static_cast<unsigned long long>(l.seeds[i]),
                    preds.size(), sc.rmse, sc.censored);
    }
    return 0;
}

int run_eval_rul(const Common& g, const Eval& o) {
    const auto l = load_models(g, o);
    write_report(g.out_dir(), "eval_rul", eval_rul(seeded_models(l), l.data, o.predict, l.schedule, o.name));
    return 0;
}

int run_eval_soh(const Common& g, const Eval& o) {
    const auto l = load_models(g, o);
    EolConfig eols{o.eols};
    write_report(g.out_dir(), "eval_soh", eval_soh(seeded_models(l), l.data, o.predict, eols, l.schedule, o.name));
    return 0;
}

// ---------------------------------------------------------------- synth

struct Synth {
    std::string checkpoint;
    std::string train;
    std::string test;
    AugmentationConfig aug;
    int trees = 100;
    bool export_curves = false;
};

void add_synth(CLI::App& app, Synth& o) {
    app.add_option("--checkpoint", o.checkpoint, "Trained model")->required();
    app.add_option("--train", o.train, "Real training set (conditions, latent map, RMSE reference)")->required();
    app.add_option("--test", o.test, "Real test set scored by the forests")->required();
    app.add_option("--w-list", o.aug.w_list, "Guidance strengths")->delimiter(',')->capture_default_str();
    app.add_option("--per-sample", o.aug.per_sample, "Synthetic curves per training cell")->capture_default_str();
    app.add_option("--input-noise", o.aug.input_noise, "Relative condition noise")->capture_default_str();
    app.add_option("--threshold", o.aug.threshold, "End-of-life threshold")->capture_default_str();
    app.add_option("--k", o.aug.k, "Neighbours for precision/recall")->capture_default_str();
    app.add_option("--trees", o.trees, "Trees per forest")->capture_default_str();
    app.add_flag("--include-real", o.aug.include_real, "Train forests on real plus synthetic cells");
    app.add_flag("--export-curves", o.export_curves, "Write synthetic_w<w>.json per guidance strength");
}

int run_synth(const Common& g, Synth o) {
    const auto model = load_checkpoint(o.checkpoint).sampling_model();
    const auto s = schedule_from_descriptor(model.schedule);
    LoadOptions lo;
    lo.grid = model.grid;
    lo.n_early = model.config.n_early;
    const Dataset train = load(o.train, lo);
    lo.split = Split::test;
    const Dataset test = load(o.test, lo);
    o.aug.synth_seed = g.seed;
    o.aug.seeds = g.seed_list();
    o.aug.forest.n_trees = o.trees;
    std::vector<SyntheticSet> sets;
    const auto rep = eval_augmentation(model, train, test, o.aug, s, o.export_curves ? &sets : nullptr);
    const auto dir = g.out_dir();
    write_text(dir / "synth_report.csv", rep.to_csv());
    write_text(dir / "synth_report.txt", rep.to_table());
    std::cout << rep.to_table();
    for (std::size_t i = 0; i < sets.size(); ++i) {
        char name[64];
        std::snprintf(name, sizeof name, "synthetic_w%g.json", o.aug.w_list[i]);
        write_synthetic_json(dir / name, sets[i]);
    }
    if (rep.recall_trend_violated) std::fprintf(stderr, "warning: recall rose with guidance strength\n");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Conditional diffusion model for battery degradation curves"};
    app.require_subcommand(1);
    app.fallthrough();
    app.allow_config_extras(CLI::config_extras_mode::error);
    app.set_config("--config", "", "TOML-style run configuration; [command] sections, flags win");

    Common g;
    app.add_option("--config-version", g.config_version, "Run-configuration format version")
        ->check(CLI::IsMember({kConfigVersion}))
        ->capture_default_str();
    app.add_option("--seed", g.seed, "Master seed")->capture_default_str();
    app.add_option("--seeds", g.seeds, "Seed range A..B (one run per seed)");
    app.add_option("--out", g.out, "Output directory")->envname("DIFFBATT_OUT")->capture_default_str();

    GenData gen;
    Train tr;
    Eval pred, rul, soh;
    Synth syn;
    auto* c_gen = app.add_subcommand("gen-data", "Write a synthetic power-law dataset (train.json, test.json)");
    add_gen_data(*c_gen, gen);
    auto* c_train = app.add_subcommand("train", "Train one model per seed (model_seed<N>.ckpt, loss_seed<N>.csv)");
    add_train(*c_train, tr);
    auto* c_pred = app.add_subcommand("predict", "Per-cell predictions and curve dumps");
    add_eval(*c_pred, pred, false);
    auto* c_rul = app.add_subcommand("eval-rul", "RUL RMSE report over seeds");
    add_eval(*c_rul, rul, false);
    auto* c_soh = app.add_subcommand("eval-soh", "SOH RMSE report per end-of-life threshold");
    add_eval(*c_soh, soh, true);
    auto* c_syn = app.add_subcommand("synth", "Guidance sweep: FID, precision, recall and forest RMSE");
    add_synth(*c_syn, syn);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitUsage;
    }

    try {
        if (c_gen->parsed()) return run_gen_data(g, gen);
        if (c_train->parsed()) return run_train(g, tr);
        if (c_pred->parsed()) return run_predict(g, pred);
        if (c_rul->parsed()) return run_eval_rul(g, rul);
        if (c_soh->parsed()) return run_eval_soh(g, soh);
        if (c_syn->parsed()) return run_synth(g, syn);
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numeric failure: %s\n", e.what());
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitUsage;
    }
    return kExitUsage;
}
