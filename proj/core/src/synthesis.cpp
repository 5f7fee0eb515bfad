#include "diffbatt/synthesis.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "diffbatt/errors.hpp"
#include "diffbatt/prediction.hpp"
#include "diffbatt/sampler.hpp"

namespace diffbatt {

void SynthesisConfig::validate() const {
    if (per_sample < 1) throw ConfigError("per_sample must be at least 1");
    if (!std::isfinite(w) || w < 0.0) throw ConfigError("guidance strength must be finite and non-negative");
    if (!(input_noise >= 0.0) || !std::isfinite(input_noise)) throw ConfigError("input_noise must be non-negative");
    if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("threshold must lie in (0, 1)");
}

void AugmentationConfig::validate() const {
    if (w_list.empty()) throw ConfigError("w_list is empty");
    for (double w : w_list)
        if (!std::isfinite(w) || w < 0.0) throw ConfigError("guidance strengths must be finite and non-negative");
    if (k < 1) throw ConfigError("k must be positive");
    if (seeds.empty()) throw ConfigError("at least one forest seed is required");
    SynthesisConfig{per_sample, 0.0, input_noise, threshold}.validate();
    forest.validate();
}

SyntheticSet synthesize_dataset(const DenoiserModel& model, const Dataset& ds_train, const SynthesisConfig& cfg,
                                const NoiseSchedule& schedule, Rng& rng) {
    cfg.validate();
    if (ds_train.empty()) throw ValidationError("cannot synthesize from an empty training set");
    Rng noise_rng = rng.split("input_noise");
    Rng sample_rng = rng.split("sample");

    std::vector<CapacityMatrix> conds;
    std::vector<std::string> sources;
    conds.reserve(ds_train.size() * static_cast<std::size_t>(cfg.per_sample));
    for (const auto& cell : ds_train.cells) {
        for (int j = 0; j < cfg.per_sample; ++j) {
            CapacityMatrix q = cell.capacity;
            if (cfg.input_noise > 0.0)
                for (Eigen::Index r = 0; r < q.rows.rows(); ++r)
                    for (Eigen::Index c = 0; c < q.rows.cols(); ++c)
                        q.rows(r, c) *= 1.0 + noise_rng.normal(0.0, cfg.input_noise);
            char suffix[24];
            std::snprintf(suffix, sizeof suffix, "_syn%03d", j);
            q.cell_id = cell.curve.cell_id + suffix;
            conds.push_back(std::move(q));
            sources.push_back(cell.curve.cell_id);
        }
    }
    std::vector<const CapacityMatrix*> ptrs;
    for (const auto& q : conds) ptrs.push_back(&q);
    GuidanceConfig guidance;
    guidance.w = cfg.w;
    const Eigen::MatrixXd curves = sample_batch(model, ptrs, guidance, schedule, sample_rng);

    SyntheticSet out;
    out.drawn = static_cast<int>(conds.size());
    out.data.split = ds_train.split;
    out.data.eol_threshold = cfg.threshold;
    out.data.grid = model.grid;
    for (std::size_t i = 0; i < conds.size(); ++i) {
        const Eigen::VectorXd v = curves.row(static_cast<Eigen::Index>(i)).transpose();
        const auto rul = rul_from_soh(v, model.grid, cfg.threshold);
        if (!rul) {
            ++out.censored;
            continue;
        }
        Cell cell;
        cell.curve.cell_id = conds[i].cell_id;
        for (int n = 0; n < model.grid.length; ++n) {
            const int c = model.grid.rounded_cycle_at(n);
            if (!cell.curve.cycles.empty() && c <= cell.curve.cycles.back()) continue;
            cell.curve.cycles.push_back(c);
            cell.curve.soh.push_back(v(n));
        }
        cell.grid.values = v;
        cell.grid.grid_max_cycle = model.grid.max_cycle;
        cell.grid.source_life = *rul;
        cell.capacity = std::move(conds[i]);
        cell.true_rul = rul;
        out.data.cells.push_back(std::move(cell));
    }
    return out;
}

Eigen::MatrixXd curve_matrix(const Dataset& ds) {
    if (ds.empty()) return {};
    Eigen::MatrixXd m(static_cast<Eigen::Index>(ds.size()), ds.cells.front().grid.values.size());
    for (std::size_t i = 0; i < ds.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = ds.cells[i].grid.values.transpose();
    return m;
}

Eigen::MatrixXd forest_features(const Dataset& ds, const FeatureStats& stats) {
    if (ds.empty()) return {};
    const auto& q0 = ds.cells.front().capacity.rows;
    Eigen::MatrixXd f(static_cast<Eigen::Index>(ds.size()), q0.size());
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const Eigen::MatrixXd z = stats.apply(ds.cells[i].capacity.rows);
        if (z.size() != q0.size()) throw ShapeError("capacity matrices differ in size");
        // Row-major flattening: all features of cycle 1, then cycle 2, ...
        for (Eigen::Index r = 0; r < z.rows(); ++r)
            f.row(static_cast<Eigen::Index>(i)).segment(r * z.cols(), z.cols()) = z.row(r);
    }
    return f;
}

Eigen::VectorXd rul_labels(const Dataset& ds) {
    Eigen::VectorXd y(static_cast<Eigen::Index>(ds.size()));
    for (std::size_t i = 0; i < ds.size(); ++i) {
        if (!ds.cells[i].true_rul) throw ValidationError("cell " + ds.cells[i].curve.cell_id + " has no RUL label");
        y(static_cast<Eigen::Index>(i)) = *ds.cells[i].true_rul;
    }
    return y;
}

namespace {

std::string w_tag(double w) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "w=%.17g", w);
    return buf;
}

}  // namespace

SynthReport eval_augmentation(const DenoiserModel& model, const Dataset& ds_train, const Dataset& ds_test,
                              const AugmentationConfig& cfg, const NoiseSchedule& schedule,
                              std::vector<SyntheticSet>* sets) {
    cfg.validate();
    if (ds_train.empty() || ds_test.empty()) throw ValidationError("augmentation study needs train and test cells");
    const Eigen::MatrixXd real = curve_matrix(ds_train);
    const LatentMap map = fit_pca(real, cfg.pca);
    const Eigen::MatrixXd test_x = forest_features(ds_test, model.norm_stats);
    const Eigen::VectorXd test_y = rul_labels(ds_test);

    SynthReport report;
    report.latent_dim = map.dim();
    const Rng base = Rng(cfg.synth_seed).split("synth");
    for (double w : cfg.w_list) {
        Rng rng = base.split(w_tag(w));
        SyntheticSet set =
            synthesize_dataset(model, ds_train, {cfg.per_sample, w, cfg.input_noise, cfg.threshold}, schedule, rng);
        if (set.data.size() < 2) throw NumericError("fewer than two uncensored synthetic curves for " + w_tag(w));

        SynthRow row;
        row.w = w;
        row.n_synthetic = static_cast<int>(set.data.size());
        row.n_censored = set.censored;
        const Eigen::MatrixXd synth = curve_matrix(set.data);
        row.fid = fid(real, synth, map);
        const PrecisionRecall pr = precision_recall(real, synth, map, cfg.k);
        row.precision = pr.precision;
        row.recall = pr.recall;

        Eigen::MatrixXd x = forest_features(set.data, model.norm_stats);
        Eigen::VectorXd y = rul_labels(set.data);
        if (cfg.include_real) {
            const Eigen::MatrixXd rx = forest_features(ds_train, model.norm_stats);
            const Eigen::VectorXd ry = rul_labels(ds_train);
            Eigen::MatrixXd xx(x.rows() + rx.rows(), x.cols());
            xx << x, rx;
            Eigen::VectorXd yy(y.size() + ry.size());
            yy << y, ry;
            x = std::move(xx);
            y = std::move(yy);
        }
        std::vector<double> rmses;
        for (std::uint64_t seed : cfg.seeds) {
            ForestConfig fc = cfg.forest;
            fc.seed = seed;
            const Forest forest = train_forest(x, y, fc);
            const Eigen::VectorXd pred = forest_predict(forest, test_x);
            rmses.push_back(std::sqrt((pred - test_y).squaredNorm() / static_cast<double>(test_y.size())));
        }
        const double n = static_cast<double>(rmses.size());
        row.rmse_mean = std::accumulate(rmses.begin(), rmses.end(), 0.0) / n;
        double sq = 0.0;
        for (double r : rmses) sq += (r - row.rmse_mean) * (r - row.rmse_mean);
        row.rmse_std = std::sqrt(sq / n);
        report.rows.push_back(row);
        if (sets != nullptr) sets->push_back(std::move(set));
    }

    const SynthRow* zero = nullptr;
    const SynthRow* top = nullptr;
    for (const auto& r : report.rows) {
        if (r.w == 0.0) zero = &r;
        if (top == nullptr || r.w > top->w) top = &r;
    }
    report.recall_trend_violated = zero != nullptr && top != nullptr && top->recall > zero->recall;
    return report;
}

std::string SynthReport::to_csv() const {
    std::ostringstream os;
    char buf[96];
    os << "metric";
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, ",w=%g", r.w);
        os << buf;
    }
    os << '\n';
    auto line = [&](const char* name, auto&& cell) {
        os << name;
        for (const auto& r : rows) os << ',' << cell(r);
        os << '\n';
    };
    auto num = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.6f", v);
        return std::string(buf);
    };
    line("FID", [&](const SynthRow& r) { return num(r.fid); });
    line("Precision", [&](const SynthRow& r) { return num(r.precision); });
    line("Recall", [&](const SynthRow& r) { return num(r.recall); });
    line("RMSE", [&](const SynthRow& r) { return format_mean_std(r.rmse_mean, r.rmse_std); });
    line("Synthetic", [&](const SynthRow& r) { return std::to_string(r.n_synthetic); });
    line("Censored", [&](const SynthRow& r) { return std::to_string(r.n_censored); });
    return os.str();
}

std::string SynthReport::to_table() const {
    std::ostringstream os;
    char buf[96];
    os << "        ";
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%16s", ("w=" + std::to_string(r.w).substr(0, 4)).c_str());
        os << buf;
    }
    os << '\n';
    auto line = [&](const char* name, auto&& cell) {
        std::snprintf(buf, sizeof buf, "%-8s", name);
        os << buf;
        for (const auto& r : rows) {
            std::snprintf(buf, sizeof buf, "%16s", cell(r).c_str());
            os << buf;
        }
        os << '\n';
    };
    auto num = [&](double v) {
        char b[32];
        std::snprintf(b, sizeof b, "%.3f", v);
        return std::string(b);
    };
    line("FID", [&](const SynthRow& r) { return num(r.fid); });
    line("Prec.", [&](const SynthRow& r) { return num(r.precision); });
    line("Recall", [&](const SynthRow& r) { return num(r.recall); });
    line("RMSE", [&](const SynthRow& r) { return format_mean_std(r.rmse_mean, r.rmse_std, 1); });
    if (recall_trend_violated) os << "note: recall at the largest w exceeds recall at w=0\n";
    return os.str();
}

void write_synthetic_json(const std::filesystem::path& path, const SyntheticSet& set) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& c : set.data.cells) {
        nlohmann::json o;
        o["cell_id"] = c.curve.cell_id;
        std::vector<int> cycles;
        std::vector<double> soh;
        for (std::size_t i = 0; i < c.curve.cycles.size() && c.curve.soh[i] > 0.0; ++i) {
            cycles.push_back(c.curve.cycles[i]);
            soh.push_back(c.curve.soh[i]);
        }
        o["cycles"] = cycles;
        o["soh"] = soh;
        o["true_rul"] = c.true_rul ? nlohmann::json(*c.true_rul) : nlohmann::json(nullptr);
        arr.push_back(std::move(o));
    }
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path.string());
    f << arr.dump(1) << '\n';
    if (!f) throw IoError("write failed: " + path.string());
}

}  // namespace diffbatt
