// Copyright (c) 2026, The mole-advice Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cstring>

#include "mole/checkpoint.hpp"
#include "mole/errors.hpp"
#include "test_util.hpp"

namespace mole {
namespace {

ModelConfig small_config() {
    ModelConfig c;
    c.d_model = 8;
    c.n_heads = 2;
    c.d_ff = 16;
    c.max_seq_len = 16;
    c.n_layers = 1;
    c.seed = 4;
    return c;
}

TEST(Checkpoint, HeaderLayoutIsBitExact) {
    auto model = BaseModel::init(small_config());
    const auto bytes = checkpoint::serialize(model);
    ASSERT_GE(bytes.size(), 16u);
    EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "MOLE");
    EXPECT_EQ(bytes[4], 1);
    EXPECT_EQ(bytes[5], 0);
    EXPECT_EQ(bytes[6], 0);
    EXPECT_EQ(bytes[7], 0);
    std::uint64_t hlen = 0;
    for (int i = 7; i >= 0; --i) hlen = (hlen << 8) | bytes[8 + i];
    const auto header = nlohmann::json::parse(std::string(bytes.begin() + 16, bytes.begin() + 16 + hlen));
    EXPECT_EQ(header["meta"]["kind"], "base");
    EXPECT_EQ(header["meta"]["config"]["d_model"], 8);

    const std::size_t payload = 16 + hlen;
    std::size_t expected_offset = 0;
    const auto& params = model.parameters();
    ASSERT_EQ(header["tensors"].size(), params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& e = header["tensors"][i];
        EXPECT_EQ(e["name"], params[i].name);
        EXPECT_EQ(e["dtype"], "f64");
        EXPECT_EQ(e["shape"].get<Shape>(), params[i].tensor.shape());
        EXPECT_EQ(e["byte_offset"].get<std::size_t>(), expected_offset);
        double first;
        std::memcpy(&first, bytes.data() + payload + expected_offset, sizeof(double));
        EXPECT_EQ(first, params[i].tensor.data()[0]);
        expected_offset += params[i].tensor.size() * sizeof(double);
    }
    EXPECT_EQ(bytes.size(), payload + expected_offset);
}

TEST(Checkpoint, BaseRoundTripIsBitIdentical) {
    auto model = BaseModel::init(small_config());
    const auto once = checkpoint::serialize(model);
    const auto loaded = checkpoint::deserialize_base(once);
    EXPECT_EQ(checkpoint::serialize(loaded), once);
    EXPECT_EQ(loaded.config(), model.config());
}

TEST(Checkpoint, ExpertRoundTripIsBitIdentical) {
    auto e = LoraExpert::init("airline", small_config(), 2, 5.5, 7);
    const auto once = checkpoint::serialize(e, small_config());
    auto loaded = checkpoint::deserialize_expert(once);
    EXPECT_EQ(loaded.expert.id(), "airline");
    EXPECT_EQ(loaded.expert.rank(), 2);
    EXPECT_EQ(loaded.expert.alpha(), 5.5);
    EXPECT_EQ(checkpoint::serialize(loaded.expert, loaded.config), once);
}

TEST(Checkpoint, MoleRoundTripIsBitIdentical) {
    auto c = small_config();
    auto mole = MoleModel::with_uniform_gates(BaseModel::init(c), {LoraExpert::init("airline", c, 2, 4, 1),
                                                                    LoraExpert::init("restaurant", c, 3, 6, 2)});
    mole.gates().weights.begin()->second.data()[3] = 0.125;
    const auto once = checkpoint::serialize(mole);
    auto loaded = checkpoint::deserialize_mole(once);
    EXPECT_EQ(loaded.experts().size(), 2u);
    EXPECT_EQ(loaded.experts()[1].id(), "restaurant");
    EXPECT_EQ(loaded.experts()[1].rank(), 3);
    EXPECT_EQ(checkpoint::serialize(loaded), once);
}

TEST(Checkpoint, FileRoundTrip) {
    auto dir = testing::scratch_dir("ckpt");
    auto model = BaseModel::init(small_config());
    checkpoint::save(dir / "base.mole", model);
    auto loaded = checkpoint::load_base(dir / "base.mole");
    EXPECT_EQ(checkpoint::parameter_digest(loaded), checkpoint::parameter_digest(model));
    EXPECT_EQ(checkpoint::sha256_file(dir / "base.mole"), checkpoint::sha256_hex(checkpoint::serialize(model)));
}

TEST(Checkpoint, RejectsCorruptInput) {
    auto bytes = checkpoint::serialize(BaseModel::init(small_config()));
    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    EXPECT_THROW(checkpoint::decode(bad_magic), FormatError);
    auto bad_version = bytes;
    bad_version[4] = 2;
    EXPECT_THROW(checkpoint::decode(bad_version), FormatError);
    auto truncated = std::vector<std::uint8_t>(bytes.begin(), bytes.end() - 8);
    EXPECT_THROW(checkpoint::decode(truncated), FormatError);
    EXPECT_THROW(checkpoint::deserialize_expert(bytes), FormatError);
    EXPECT_THROW(checkpoint::load_base("/nonexistent/dir/x.mole"), IoError);
}

TEST(Checkpoint, Sha256KnownVector) {
    const std::string abc = "abc";
    EXPECT_EQ(checkpoint::sha256_hex({reinterpret_cast<const std::uint8_t*>(abc.data()), abc.size()}),
              "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Checkpoint, ParameterDigestIgnoresFrozenFlag) {
    auto model = BaseModel::init(small_config());
    const auto d = checkpoint::parameter_digest(model);
    model.set_frozen(false);
    EXPECT_EQ(checkpoint::parameter_digest(model), d);
    model.param("tok_emb").data()[0] += 1e-3;
    EXPECT_NE(checkpoint::parameter_digest(model), d);
}

}  // namespace
}  // namespace mole
