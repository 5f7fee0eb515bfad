#include "diffbatt/schedule.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "diffbatt/errors.hpp"

namespace diffbatt {

std::string to_string(ScheduleKind kind) { return kind == ScheduleKind::linear ? "linear" : "cosine"; }

ScheduleKind schedule_kind_from_string(const std::string& s) {
    if (s == "linear") return ScheduleKind::linear;
    if (s == "cosine") return ScheduleKind::cosine;
    throw ConfigError("unknown schedule kind '" + s + "'");
}

void NoiseSchedule::check_step(int t) const {
    if (t < 1 || t > T) throw IndexError("diffusion step " + std::to_string(t) + " outside [1, " + std::to_string(T) + "]");
}

std::string NoiseSchedule::descriptor() const {
    std::ostringstream os;
    os.precision(17);
    os << to_string(kind) << " T=" << T << " beta_1=" << beta_1 << " beta_T=" << beta_T;
    return os.str();
}

NoiseSchedule make_schedule(ScheduleKind kind, int T, double beta_1, double beta_T) {
    if (T < 1) throw ParameterError("schedule needs T >= 1");
    NoiseSchedule s;
    s.kind = kind;
    s.T = T;
    s.beta_1 = beta_1;
    s.beta_T = beta_T;
    s.beta.resize(T);

    if (kind == ScheduleKind::linear) {
        if (!(beta_1 > 0.0 && beta_1 <= beta_T && beta_T < 1.0))
            throw ParameterError("linear schedule requires 0 < beta_1 <= beta_T < 1");
        for (int i = 0; i < T; ++i) {
            const double frac = T == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(T - 1);
            s.beta(i) = beta_1 + frac * (beta_T - beta_1);
        }
    } else {
        auto f = [T](double t) {
            const double x = (t / static_cast<double>(T) + 0.008) / 1.008 * std::numbers::pi / 2.0;
            return std::cos(x) * std::cos(x);
        };
        const double f0 = f(0.0);
        for (int i = 0; i < T; ++i) {
            const double ab_t = f(i + 1.0) / f0;
            const double ab_prev = f(static_cast<double>(i)) / f0;
            s.beta(i) = std::min(1.0 - ab_t / ab_prev, 0.999);
        }
    }

    s.alpha = (1.0 - s.beta.array()).matrix();
    s.alpha_bar.resize(T);
    s.sigma2.resize(T);
    long double acc = 1.0L;
    for (int i = 0; i < T; ++i) {
        const long double prev = acc;
        acc *= static_cast<long double>(s.alpha(i));
        s.alpha_bar(i) = static_cast<double>(acc);
        s.sigma2(i) = static_cast<double>((1.0L - prev) / (1.0L - acc) * static_cast<long double>(s.beta(i)));
    }
    return s;
}

NoiseSchedule schedule_from_descriptor(const std::string& descriptor) {
    std::istringstream is(descriptor);
    std::string kind, t_kv, b1_kv, bt_kv;
    if (!(is >> kind >> t_kv >> b1_kv >> bt_kv)) throw ConfigError("malformed schedule descriptor '" + descriptor + "'");
    auto value = [&](const std::string& kv, const std::string& key) {
        if (kv.rfind(key + "=", 0) != 0) throw ConfigError("schedule descriptor missing " + key);
        return kv.substr(key.size() + 1);
    };
    return make_schedule(schedule_kind_from_string(kind), std::stoi(value(t_kv, "T")), std::stod(value(b1_kv, "beta_1")),
                         std::stod(value(bt_kv, "beta_T")));
}

Eigen::VectorXd forward_diffuse(const Eigen::VectorXd& x0, int t, const Eigen::VectorXd& eps, const NoiseSchedule& s) {
    if (x0.size() != eps.size()) throw ShapeError("forward_diffuse: x0 and eps lengths differ");
    s.check_step(t);
    const double ab = s.alpha_bar_at(t);
    return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * eps;
}

Eigen::VectorXd posterior_mean(const Eigen::VectorXd& x_t, const Eigen::VectorXd& eps_hat, int t,
                               const NoiseSchedule& s) {
    if (x_t.size() != eps_hat.size()) throw ShapeError("posterior_mean: x_t and eps_hat lengths differ");
    s.check_step(t);
    const double coef = s.beta_at(t) / std::sqrt(1.0 - s.alpha_bar_at(t));
    return (x_t - coef * eps_hat) / std::sqrt(s.alpha_at(t));
}

Eigen::VectorXd guided_epsilon(const Eigen::VectorXd& eps_cond, const Eigen::VectorXd& eps_uncond, double w) {
    if (eps_cond.size() != eps_uncond.size()) throw ShapeError("guided_epsilon: score lengths differ");
    if (w == 0.0) return eps_cond;
    // Equal to (1 + w) eps_cond - w eps_uncond, and exact when the scores agree.
    return eps_cond + w * (eps_cond - eps_uncond);
}

Eigen::VectorXd sample_step(const Eigen::VectorXd& x_t, const Eigen::VectorXd& eps_tilde, int t,
                            const NoiseSchedule& s, Rng& rng) {
    Eigen::VectorXd mu = posterior_mean(x_t, eps_tilde, t, s);
    if (t == 1) return mu;
    const double sd = std::sqrt(s.sigma2_at(t));
    for (Eigen::Index i = 0; i < mu.size(); ++i) mu(i) += sd * rng.normal();
    return mu;
}

void GuidanceConfig::validate() const {
    if (!std::isfinite(w) || w < 0.0) throw ParameterError("guidance strength must be finite and >= 0");
    if (!(p_uncond >= 0.0 && p_uncond <= 1.0)) throw ParameterError("p_uncond must lie in [0, 1]");
}

}  // namespace diffbatt
