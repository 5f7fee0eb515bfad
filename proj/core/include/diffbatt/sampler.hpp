#pragma once

#include <Eigen/Dense>

#include <vector>

#include "diffbatt/data.hpp"
#include "diffbatt/denoiser.hpp"
#include "diffbatt/rng.hpp"
#include "diffbatt/schedule.hpp"

namespace diffbatt {

/// Ancestral sampling from x_T ~ N(0, I) down to t = 1.
///
/// With a condition the network is evaluated conditionally, and also
/// unconditionally when w > 0, and the two scores are combined by
/// guided_epsilon(). With cond == nullptr only the null-token branch runs.
/// Output is on the SOH fraction scale, clamped to [0, 1.2].
Eigen::VectorXd sample(const DenoiserModel& model, const CapacityMatrix* cond, const GuidanceConfig& guidance,
                       const NoiseSchedule& schedule, Rng& rng);

/// Batched form: one output row per entry of `conds` (entries may be null).
/// Rows are processed in chunks of at most `max_batch`; noise is drawn from
/// `rng` in row order, so results depend only on inputs and seed.
Eigen::MatrixXd sample_batch(const DenoiserModel& model, const std::vector<const CapacityMatrix*>& conds,
                             const GuidanceConfig& guidance, const NoiseSchedule& schedule, Rng& rng,
                             int max_batch = 64);

/// Throws ConfigError unless the model was trained with this schedule and length.
void check_model_schedule(const DenoiserModel& model, const NoiseSchedule& schedule);

}  // namespace diffbatt
