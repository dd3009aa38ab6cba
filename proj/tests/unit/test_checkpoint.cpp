#include "profact/checkpoint.hpp"
#include "profact/error.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <fstream>

using namespace profact;
using testing_support::random_image;
using testing_support::temp_dir;

TEST(Checkpoint, RoundTripIsBitIdentical) {
    const auto dir = temp_dir("ckpt");
    ProFact model(ModelConfig::tiny(), 1);
    save_checkpoint(model, dir / "m.ckpt", {{"epoch", 3}});
    LoadedCheckpoint back = load_checkpoint(dir / "m.ckpt");
    EXPECT_EQ(back.meta["epoch"], 3);
    EXPECT_EQ(weights_hash(*back.model), weights_hash(model));
    const Image img = random_image(40, 33, 2);
    const Prediction a = model.predict(img), b = back.model->predict(img);
    EXPECT_TRUE(std::ranges::equal(a.refined.probs(), b.refined.probs()));
    EXPECT_TRUE(std::ranges::equal(a.coarse.probs(), b.coarse.probs()));
}

TEST(Checkpoint, HashTracksValues) {
    ProFact a(ModelConfig::tiny(), 4), b(ModelConfig::tiny(), 4);
    EXPECT_EQ(weights_hash(a), weights_hash(b));
    EXPECT_EQ(weights_hash(a).size(), 16u);
    b.clb.decoder.named_parameters()[0].second.mutable_data()[0] += 1e-12;
    EXPECT_NE(weights_hash(a), weights_hash(b));
    copy_weights(a, b);
    EXPECT_EQ(weights_hash(a), weights_hash(b));
}

TEST(Checkpoint, StrictLoadRejectsOtherArchitectures) {
    const auto dir = temp_dir("ckpt_strict");
    ProFact tiny(ModelConfig::tiny(), 5);
    save_checkpoint(tiny, dir / "t.ckpt");
    ProFact desk(ModelConfig::desk(), 5);
    EXPECT_ANY_THROW(load_weights(desk, dir / "t.ckpt"));
    EXPECT_THROW(load_checkpoint(dir / "none.ckpt"), FileNotFound);
    std::ofstream(dir / "junk.ckpt") << "garbage bytes";
    EXPECT_THROW(load_checkpoint(dir / "junk.ckpt"), DataUnavailable);
}

TEST(Checkpoint, ArchiveRoundTrip) {
    const auto dir = temp_dir("archive");
    TensorArchive a;
    a.header = {{"note", "x"}};
    a.tensors["w"] = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    write_archive(a, dir / "a.bin");
    const TensorArchive b = read_archive(dir / "a.bin");
    EXPECT_EQ(b.header["note"], "x");
    EXPECT_EQ(b.tensors.at("w").shape(), (Shape{2, 3}));
    EXPECT_TRUE(std::ranges::equal(b.tensors.at("w").data(), a.tensors["w"].data()));
}

TEST(BackboneImport, SplitsFusedKeyValueWeights) {
    const auto dir = temp_dir("import");
    ProFact model(ModelConfig::tiny(), 6);
    const KeyMap map = mit_key_map(model.config().encoder);
    const int c = model.config().encoder.channels[0];
    std::vector<double> kv(static_cast<size_t>(2 * c * c));
    for (size_t i = 0; i < kv.size(); ++i) kv[i] = 0.001 * static_cast<double>(i);
    TensorArchive a;
    a.tensors["block1.0.attn.kv.weight"] = Tensor::from_data({2 * c, c}, kv);
    a.tensors["mystery.weight"] = Tensor::zeros({1});
    write_archive(a, dir / "mit.bin");
    const ImportReport r = import_backbone(model, dir / "mit.bin", map);
    EXPECT_TRUE(r.file_present);
    EXPECT_EQ(r.loaded.size(), 2u);  // k and v targets
    ASSERT_EQ(r.unmapped.size(), 1u);
    for (const auto& [name, p] : model.named_parameters()) {
        if (name == "clb.encoder.stage1.block0.attn.k.weight") EXPECT_EQ(p.data()[1], 0.001);
        if (name == "clb.encoder.stage1.block0.attn.v.weight") EXPECT_EQ(p.data()[0], 0.001 * c * c);
    }
    EXPECT_FALSE(import_backbone(model, dir / "absent.bin", map).file_present);
    TensorArchive bad;
    bad.tensors["block1.0.attn.kv.weight"] = Tensor::zeros({3, c});
    write_archive(bad, dir / "bad.bin");
    EXPECT_THROW(import_backbone(model, dir / "bad.bin", map), ShapeMismatch);
}

TEST(BackboneImport, KeyMapFileOverrides) {
    const auto dir = temp_dir("keymap");
    std::ofstream(dir / "map.json") << R"({"a.weight": "clb.encoder.stage1.norm.weight", "b": ["x", "y"]})";
    const KeyMap m = read_key_map(dir / "map.json");
    EXPECT_EQ(m.at("a.weight"), std::vector<std::string>{"clb.encoder.stage1.norm.weight"});
    EXPECT_EQ(m.at("b").size(), 2u);
}
