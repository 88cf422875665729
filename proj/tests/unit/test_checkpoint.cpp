#include <gtest/gtest.h>

#include "sdm/checkpoint.hpp"
#include "test_support.hpp"

using namespace sdm;

namespace {

Checkpoint trained_checkpoint() {
    NetConfig net;
    net.hidden_dim = 8;
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.seed = 3;
    cfg.chain_grad = ChainGrad::last_step;
    const NoiseSchedule sch(ScheduleConfig{});
    auto state = TrainState::fresh(net, cfg);
    fit(state, generate_swirl(32, 1, 0.01).points, cfg, sch);
    return Checkpoint::capture(sch.config(), cfg, state);
}

} // namespace

TEST(Checkpoint, RoundTripIsByteIdentical) {
    const auto c = trained_checkpoint();
    const auto dir = test::temp_dir("ckpt");
    save_checkpoint(c, (dir / "a.sdmc").string());
    const auto back = load_checkpoint((dir / "a.sdmc").string());
    save_checkpoint(back, (dir / "b.sdmc").string());
    EXPECT_EQ(test::read_file(dir / "a.sdmc"), test::read_file(dir / "b.sdmc"));

    EXPECT_EQ(back.schedule, c.schedule);
    EXPECT_EQ(back.net, c.net);
    EXPECT_EQ(back.train, c.train);
    EXPECT_TRUE(back.params == c.params);
    EXPECT_EQ(back.adam.step, c.adam.step);
    EXPECT_EQ(back.adam_fidelity.step, c.adam_fidelity.step);
    EXPECT_TRUE(back.adam_fidelity.v == c.adam_fidelity.v);
    EXPECT_GT(c.adam_fidelity.step, 0u);
    EXPECT_EQ(back.epoch, 2);
    EXPECT_EQ(back.seed, 3u);
}

TEST(Checkpoint, HeaderLayout) {
    const auto bytes = encode_checkpoint(trained_checkpoint());
    EXPECT_EQ(bytes.substr(0, 4), "SDMC");
    EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 1); // version, little-endian
    EXPECT_EQ(static_cast<unsigned char>(bytes[8]), 6); // section count
    EXPECT_EQ(bytes.substr(12, 4), "SCHD");
}

TEST(Checkpoint, RejectsCorruptInput) {
    const auto bytes = encode_checkpoint(trained_checkpoint());

    auto wrong_version = bytes;
    wrong_version[4] = 2;
    EXPECT_THROW(decode_checkpoint(wrong_version), VersionError);

    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    EXPECT_THROW(decode_checkpoint(bad_magic), ParseError);

    for (std::size_t cut : {std::size_t{0}, std::size_t{10}, bytes.size() / 2, bytes.size() - 1})
        EXPECT_THROW(decode_checkpoint(bytes.substr(0, cut)), ParseError) << cut;

    EXPECT_THROW(decode_checkpoint(bytes + "x"), ParseError);
    EXPECT_THROW(load_checkpoint("/nonexistent/ckpt.sdmc"), IoError);
}

TEST(Checkpoint, RejectsParameterCountMismatch) {
    auto c = trained_checkpoint();
    c.params.conservativeResize(c.params.size() - 1);
    EXPECT_THROW(decode_checkpoint(encode_checkpoint(c)), ParseError);

    c = trained_checkpoint();
    c.adam_fidelity.m.conservativeResize(3);
    EXPECT_THROW(decode_checkpoint(encode_checkpoint(c)), ParseError);
}
