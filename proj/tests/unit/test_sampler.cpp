#include <gtest/gtest.h>

#include <algorithm>

#include "diffbatt/errors.hpp"
#include "diffbatt/sampler.hpp"
#include "test_util.hpp"

using namespace diffbatt;

namespace {

// Ancestral loop written out step by step with single-item calls.
Eigen::VectorXd reference_sample(const DenoiserModel& m, const CapacityMatrix* q, double w, const NoiseSchedule& s,
                                 Rng& rng) {
    const int L = m.config.L;
    Eigen::VectorXd x(L);
    for (int l = 0; l < L; ++l) x(l) = rng.normal();
    Eigen::VectorXd c;
    if (q) c = encode_condition(m, *q);
    for (int t = s.T; t >= 1; --t) {
        Eigen::VectorXd e = denoise(m, x, t, q ? &c : nullptr);
        if (q && w != 0.0) e = guided_epsilon(e, denoise(m, x, t, nullptr), w);
        x = sample_step(x, e, t, s, rng);
    }
    return x.unaryExpr([](double v) { return std::clamp(model_to_soh(v), 0.0, kSohCeiling); });
}

}  // namespace

class SamplerTest : public ::testing::Test {
protected:
    void SetUp() override {
        Rng rng(1);
        model = init_model(testutil::tiny_config(), rng);
        testutil::randomize(model, 2, 0.2);
        model.schedule = s.descriptor();
        q = testutil::tiny_dataset(1, 16, 2, 6, 3).cells[0].capacity;
    }
    NoiseSchedule s = make_schedule(ScheduleKind::linear, 15);
    DenoiserModel model;
    CapacityMatrix q;
};

TEST_F(SamplerTest, MatchesReferenceLoop) {
    for (double w : {0.0, 2.0}) {
        for (const CapacityMatrix* cond : std::vector<const CapacityMatrix*>{nullptr, &q}) {
            Rng a(7), b(7);
            const auto got = sample(model, cond, {w, 0.2}, s, a);
            const auto want = reference_sample(model, cond, w, s, b);
            EXPECT_LT((got - want).cwiseAbs().maxCoeff(), 1e-9) << w;
        }
    }
}

TEST_F(SamplerTest, OutputRangeAndDeterminism) {
    Rng a(3), b(3);
    const auto x = sample(model, &q, {1.0, 0.2}, s, a);
    EXPECT_EQ(x.size(), 16);
    EXPECT_TRUE(x.allFinite());
    EXPECT_GE(x.minCoeff(), 0.0);
    EXPECT_LE(x.maxCoeff(), kSohCeiling);
    EXPECT_EQ(x, sample(model, &q, {1.0, 0.2}, s, b));
}

TEST_F(SamplerTest, GuidanceIsInertWhenScoresAgree) {
    model.params.values[static_cast<std::size_t>(model.layout.null_embedding)] = encode_condition(model, q).transpose();
    Rng a(4), b(4);
    EXPECT_EQ(sample(model, &q, {0.0, 0.2}, s, a), sample(model, &q, {5.0, 0.2}, s, b));
}

TEST_F(SamplerTest, BatchRowsMatchSequentialDraws) {
    const std::vector<const CapacityMatrix*> conds{&q, nullptr, &q};
    Rng a(5), b(5);
    const Eigen::MatrixXd batch = sample_batch(model, conds, {0.0, 0.2}, s, a, 1);
    for (std::size_t i = 0; i < conds.size(); ++i) {
        const auto row = sample(model, conds[i], {0.0, 0.2}, s, b);
        EXPECT_LT((batch.row(static_cast<Eigen::Index>(i)).transpose() - row).cwiseAbs().maxCoeff(), 1e-12);
    }
    Rng c(5), d(5);
    EXPECT_EQ(sample_batch(model, conds, {0.0, 0.2}, s, c), sample_batch(model, conds, {0.0, 0.2}, s, d));
}

TEST_F(SamplerTest, ScheduleMismatch) {
    Rng rng(1);
    EXPECT_THROW(sample(model, &q, {0.0, 0.2}, make_schedule(ScheduleKind::linear, 16), rng), ConfigError);
    EXPECT_THROW(sample(model, &q, {-1.0, 0.2}, s, rng), ParameterError);
}
