#include <gtest/gtest.h>

#include <filesystem>

#include "diffbatt/checkpoint.hpp"
#include "diffbatt/errors.hpp"
#include "test_util.hpp"

using namespace diffbatt;

namespace {

TrainState trained_state(const DenoiserConfig& cfg, const Dataset& ds) {
    TrainConfig tc;
    tc.steps = 3;
    tc.batch_size = 2;
    tc.step_size = 1e-3;
    tc.seed = 4;
    return train(initial_state(cfg, 2), ds, tc, make_schedule(ScheduleKind::linear, 40)).first;
}

}  // namespace

class CheckpointTest : public ::testing::Test {
protected:
    testutil::TempDir dir{"ckpt"};
    DenoiserConfig cfg = testutil::tiny_config();
    Dataset ds = testutil::tiny_dataset(4, 16, 2, 6, 5);
};

TEST_F(CheckpointTest, RoundTripIsBitExact) {
    const auto st = trained_state(cfg, ds);
    save_checkpoint(dir / "a.ckpt", st);
    const auto back = load_checkpoint(dir / "a.ckpt");
    EXPECT_EQ(back.model.config, st.model.config);
    EXPECT_EQ(back.model.schedule, st.model.schedule);
    EXPECT_EQ(back.model.grid.length, st.model.grid.length);
    EXPECT_EQ(back.model.grid.max_cycle, st.model.grid.max_cycle);
    EXPECT_EQ(back.model.norm_stats.mean, st.model.norm_stats.mean);
    EXPECT_EQ(back.model.norm_stats.sd, st.model.norm_stats.sd);
    EXPECT_EQ(back.model.params.checksum(), st.model.params.checksum());
    EXPECT_EQ(back.model.params.names, st.model.params.names);
    ASSERT_TRUE(back.ema);
    EXPECT_EQ(back.ema->checksum(), st.ema->checksum());
    EXPECT_EQ(back.adam.step, st.adam.step);
    for (std::size_t i = 0; i < st.adam.m.size(); ++i) {
        EXPECT_EQ(back.adam.m[i], st.adam.m[i]);
        EXPECT_EQ(back.adam.v[i], st.adam.v[i]);
    }
    // Saving the loaded state reproduces the file byte for byte.
    save_checkpoint(dir / "b.ckpt", back);
    EXPECT_EQ(testutil::read_file(dir / "a.ckpt"), testutil::read_file(dir / "b.ckpt"));
}

TEST_F(CheckpointTest, ResumedTrainingMatchesUninterrupted) {
    TrainConfig tc;
    tc.steps = 2;
    tc.batch_size = 2;
    tc.seed = 9;
    const auto s = make_schedule(ScheduleKind::linear, 40);
    auto st = train(initial_state(cfg, 2), ds, tc, s).first;
    save_checkpoint(dir / "r.ckpt", st);
    const auto a = train(st, ds, tc, s).first;
    const auto b = train(load_checkpoint(dir / "r.ckpt"), ds, tc, s).first;
    EXPECT_EQ(a.model.params.checksum(), b.model.params.checksum());
}

TEST_F(CheckpointTest, TruncatedFileIsCorruption) {
    save_checkpoint(dir / "a.ckpt", trained_state(cfg, ds));
    const std::string bytes = testutil::read_file(dir / "a.ckpt");
    for (std::size_t keep : {bytes.size() - 1, bytes.size() / 2, bytes.size() / 10}) {
        testutil::write_file(dir / "t.ckpt", bytes.substr(0, keep));
        EXPECT_THROW(load_checkpoint(dir / "t.ckpt"), CorruptionError) << keep;
    }
}

TEST_F(CheckpointTest, FlippedByteIsCorruption) {
    save_checkpoint(dir / "a.ckpt", trained_state(cfg, ds));
    std::string bytes = testutil::read_file(dir / "a.ckpt");
    const auto first_blob = bytes.find('\n', bytes.find("\nblob ") + 1);
    ASSERT_NE(first_blob, std::string::npos);
    bytes[first_blob + 3] ^= 0x01;
    testutil::write_file(dir / "f.ckpt", bytes);
    EXPECT_THROW(load_checkpoint(dir / "f.ckpt"), CorruptionError);
}

TEST_F(CheckpointTest, VersionMismatchIsIncompatible) {
    save_checkpoint(dir / "a.ckpt", trained_state(cfg, ds));
    std::string bytes = testutil::read_file(dir / "a.ckpt");
    const std::string key = "format_version " + std::to_string(kCheckpointVersion);
    const auto pos = bytes.find(key);
    ASSERT_NE(pos, std::string::npos);
    bytes.replace(pos, key.size(), "format_version " + std::to_string(kCheckpointVersion + 1));
    testutil::write_file(dir / "v.ckpt", bytes);
    EXPECT_THROW(load_checkpoint(dir / "v.ckpt"), IncompatibleError);
}

TEST_F(CheckpointTest, DifferentLengthNamesBothShapes) {
    auto wide = cfg;
    wide.L = 32;
    save_checkpoint(dir / "a.ckpt", trained_state(cfg, ds));
    try {
        load_checkpoint(dir / "a.ckpt", &wide);
        FAIL() << "expected IncompatibleError";
    } catch (const IncompatibleError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("16"), std::string::npos) << msg;
        EXPECT_NE(msg.find("32"), std::string::npos) << msg;
    }
    EXPECT_NO_THROW(load_checkpoint(dir / "a.ckpt", &cfg));
}

TEST_F(CheckpointTest, MissingFileAndGarbage) {
    EXPECT_THROW(load_checkpoint(dir / "nope.ckpt"), IoError);
    testutil::write_file(dir / "g.ckpt", "hello world\n");
    EXPECT_THROW(load_checkpoint(dir / "g.ckpt"), CorruptionError);
}
