#pragma once

#include <Eigen/Dense>

#include <string>

#include "diffbatt/rng.hpp"

namespace diffbatt {

enum class ScheduleKind { linear, cosine };

std::string to_string(ScheduleKind kind);
ScheduleKind schedule_kind_from_string(const std::string& s);

/// Variance schedule tables, indexed by diffusion step t = 1..T.
///
/// Vectors are stored zero-based: beta(t - 1) is beta_t. The posterior
/// variance uses alpha_bar_0 := 1, so sigma2 at t = 1 is exactly zero.
struct NoiseSchedule {
    ScheduleKind kind = ScheduleKind::linear;
    int T = 0;
    double beta_1 = 0.0;
    double beta_T = 0.0;
    Eigen::VectorXd beta;
    Eigen::VectorXd alpha;
    Eigen::VectorXd alpha_bar;
    Eigen::VectorXd sigma2;

    double beta_at(int t) const { return beta(t - 1); }
    double alpha_at(int t) const { return alpha(t - 1); }
    double alpha_bar_at(int t) const { return alpha_bar(t - 1); }
    /// alpha_bar at t - 1 with alpha_bar_0 = 1.
    double alpha_bar_prev(int t) const { return t == 1 ? 1.0 : alpha_bar(t - 2); }
    double sigma2_at(int t) const { return sigma2(t - 1); }

    void check_step(int t) const;
    /// One-line descriptor stored in checkpoints, e.g. "linear T=1000 beta_1=0.0001 beta_T=0.02".
    std::string descriptor() const;
};

NoiseSchedule make_schedule(ScheduleKind kind, int T, double beta_1 = 1e-4, double beta_T = 0.02);
NoiseSchedule schedule_from_descriptor(const std::string& descriptor);

/// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps.
Eigen::VectorXd forward_diffuse(const Eigen::VectorXd& x0, int t, const Eigen::VectorXd& eps, const NoiseSchedule& s);

/// mu = (x_t - beta_t / sqrt(1 - alpha_bar_t) eps_hat) / sqrt(alpha_t).
Eigen::VectorXd posterior_mean(const Eigen::VectorXd& x_t, const Eigen::VectorXd& eps_hat, int t,
                               const NoiseSchedule& s);

/// (1 + w) eps_cond - w eps_uncond.
Eigen::VectorXd guided_epsilon(const Eigen::VectorXd& eps_cond, const Eigen::VectorXd& eps_uncond, double w);

/// Ancestral step: posterior mean plus sqrt(sigma2_t) z, with z = 0 at t = 1.
Eigen::VectorXd sample_step(const Eigen::VectorXd& x_t, const Eigen::VectorXd& eps_tilde, int t,
                            const NoiseSchedule& s, Rng& rng);

struct GuidanceConfig {
    double w = 0.0;
    double p_uncond = 0.2;

    void validate() const;
};

/// Affine map between SOH fraction [0, 1.2] and model space [-1, 1].
constexpr double kSohCeiling = 1.2;
inline double soh_to_model(double soh) { return 2.0 * soh / kSohCeiling - 1.0; }
inline double model_to_soh(double x) { return (x + 1.0) * kSohCeiling / 2.0; }

}  // namespace diffbatt
