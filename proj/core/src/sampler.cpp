#include "diffbatt/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "diffbatt/errors.hpp"

namespace diffbatt {

void check_model_schedule(const DenoiserModel& model, const NoiseSchedule& schedule) {
    if (!model.schedule.empty() && model.schedule != schedule.descriptor())
        throw ConfigError("model was trained with schedule '" + model.schedule + "' but sampling uses '" +
                          schedule.descriptor() + "'");
    if (model.grid.length != 0 && model.grid.length != model.config.L)
        throw ConfigError("model grid length disagrees with its configuration");
}

namespace {

Eigen::MatrixXd sample_chunk(const DenoiserModel& model, const std::vector<const CapacityMatrix*>& conds,
                             const GuidanceConfig& guidance, const NoiseSchedule& s, Rng& rng) {
    const auto B = static_cast<Eigen::Index>(conds.size());
    const int L = model.config.L;

    // Encode each distinct capacity matrix once.
    std::vector<const CapacityMatrix*> unique;
    std::map<const CapacityMatrix*, Eigen::Index> slot;
    for (const auto* q : conds) {
        if (q != nullptr && slot.emplace(q, static_cast<Eigen::Index>(unique.size())).second) unique.push_back(q);
    }
    Eigen::MatrixXd null_rows = model.null_embedding().replicate(B, 1);
    Eigen::MatrixXd cond_rows = null_rows;
    if (!unique.empty()) {
        const Eigen::MatrixXd enc = encode_conditions(model, unique);
        for (Eigen::Index b = 0; b < B; ++b) {
            const auto* q = conds[static_cast<std::size_t>(b)];
            if (q != nullptr) cond_rows.row(b) = enc.row(slot.at(q));
        }
    }
    const bool guided = guidance.w != 0.0 && !unique.empty();

    Eigen::MatrixXd x(B, L);
    for (Eigen::Index b = 0; b < B; ++b)
        for (int l = 0; l < L; ++l) x(b, l) = rng.normal();

    for (int t = s.T; t >= 1; --t) {
        const std::vector<int> steps(static_cast<std::size_t>(B), t);
        const Eigen::MatrixXd eps_c = denoise_batch(model, x, steps, cond_rows);
        Eigen::MatrixXd eps_u;
        if (guided) eps_u = denoise_batch(model, x, steps, null_rows);
        for (Eigen::Index b = 0; b < B; ++b) {
            const Eigen::VectorXd ec = eps_c.row(b).transpose();
            const Eigen::VectorXd e = guided ? guided_epsilon(ec, eps_u.row(b).transpose(), guidance.w) : ec;
            x.row(b) = sample_step(x.row(b).transpose(), e, t, s, rng).transpose();
        }
    }

    Eigen::MatrixXd out(B, L);
    for (Eigen::Index b = 0; b < B; ++b) {
        for (int l = 0; l < L; ++l) {
            const double v = model_to_soh(x(b, l));
            if (!std::isfinite(v)) throw NumericError("sampling produced a non-finite value");
            out(b, l) = std::clamp(v, 0.0, kSohCeiling);
        }
    }
    return out;
}

}  // namespace

Eigen::MatrixXd sample_batch(const DenoiserModel& model, const std::vector<const CapacityMatrix*>& conds,
                             const GuidanceConfig& guidance, const NoiseSchedule& schedule, Rng& rng, int max_batch) {
    check_model_schedule(model, schedule);
    guidance.validate();
    if (max_batch < 1) throw ParameterError("max_batch must be positive");
    Eigen::MatrixXd out(static_cast<Eigen::Index>(conds.size()), model.config.L);
    for (std::size_t start = 0; start < conds.size(); start += static_cast<std::size_t>(max_batch)) {
        const std::size_t end = std::min(conds.size(), start + static_cast<std::size_t>(max_batch));
        std::vector<const CapacityMatrix*> chunk(conds.begin() + static_cast<std::ptrdiff_t>(start),
                                                 conds.begin() + static_cast<std::ptrdiff_t>(end));
        out.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(end - start)) =
            sample_chunk(model, chunk, guidance, schedule, rng);
    }
    return out;
}

Eigen::VectorXd sample(const DenoiserModel& model, const CapacityMatrix* cond, const GuidanceConfig& guidance,
                       const NoiseSchedule& schedule, Rng& rng) {
    return sample_batch(model, {cond}, guidance, schedule, rng).row(0).transpose();
}

}  // namespace diffbatt
