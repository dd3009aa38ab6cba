#include "profact/datamodel.hpp"
#include "profact/error.hpp"
#include "profact/image_io.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <limits>

using namespace profact;
using testing_support::random_image;
using testing_support::rect_mask;
using testing_support::temp_dir;

TEST(Image, RejectsWrongBufferSize) {
    EXPECT_THROW(Image(2, 2, std::vector<float>(11)), ShapeMismatch);
}

TEST(Image, ValidateRejectsOutOfRangeAndNan) {
    EXPECT_NO_THROW(Image::filled(2, 2, 0, 0.5f, 1).validate());
    std::vector<float> px(12, 0.5f);
    px[3] = 1.5f;
    EXPECT_THROW(Image(2, 2, px).validate(), ValueOutOfRange);
    px[3] = std::numeric_limits<float>::quiet_NaN();
    EXPECT_THROW(Image(2, 2, px).validate(), ValueOutOfRange);
}

TEST(BinaryMask, FromValuesRequiresStrictBinary) {
    const std::vector<float> ok{0, 1, 1, 0};
    EXPECT_EQ(BinaryMask::from_values(2, 2, ok).count(), 2);
    const std::vector<float> soft{0, 0.5f, 1, 0};
    EXPECT_THROW(BinaryMask::from_values(2, 2, soft), ValueOutOfRange);
}

TEST(BinaryMask, AreaRatio) {
    EXPECT_DOUBLE_EQ(rect_mask(10, 10, 0, 0, 5, 2).area_ratio(), 0.1);
}

TEST(Pairs, ValidatePairChecksShape) {
    EXPECT_THROW(validate_pair(Image::filled(4, 4, 0, 0, 0), BinaryMask::zeros(4, 5)), ShapeMismatch);
    EXPECT_NO_THROW(validate_pair(Image::filled(4, 4, 0, 0, 0), BinaryMask::zeros(4, 4)));
}

TEST(Padding, PadToMultipleAndCropBack) {
    const Image img = random_image(37, 50, 3);
    PaddedImage p = pad_to_multiple(img, 32);
    EXPECT_EQ(p.image.height(), 64);
    EXPECT_EQ(p.image.width(), 64);
    EXPECT_EQ(p.original_height, 37);
    EXPECT_EQ(p.original_width, 50);
    // Reflection without edge repeat: padded row 37 mirrors row 35.
    EXPECT_EQ(p.image.at(37, 4, 1), img.at(35, 4, 1));
    EXPECT_EQ(p.image.at(5, 51, 2), img.at(5, 47, 2));
    const Image back = crop_image(p.image, 37, 50);
    EXPECT_TRUE(std::equal(back.pixels().begin(), back.pixels().end(), img.pixels().begin()));
}

TEST(Padding, AlreadyAlignedIsUnchanged) {
    const Image img = random_image(64, 32, 4);
    PaddedImage p = pad_to_multiple(img, 32);
    EXPECT_EQ(p.image.height(), 64);
    EXPECT_EQ(p.image.width(), 32);
}

TEST(Tensors, ImageTensorLayoutIsChannelMajor) {
    const Image img = random_image(3, 4, 5);
    Tensor t = image_to_tensor(img);
    ASSERT_EQ(t.shape(), (Shape{1, 3, 3, 4}));
    EXPECT_FLOAT_EQ(static_cast<float>(t.data()[(2 * 3 + 1) * 4 + 3]), img.at(1, 3, 2));
    const BinaryMask m = rect_mask(3, 4, 0, 0, 1, 2);
    Tensor mt = masks_to_tensor(std::span<const BinaryMask>(&m, 1));
    EXPECT_EQ(mt.shape(), (Shape{1, 1, 3, 4}));
    EXPECT_EQ(mt.data()[1], 1.0);
    EXPECT_EQ(mt.data()[2], 0.0);
}

TEST(ImageIo, PngRoundTripIsQuantization) {
    const auto dir = temp_dir("io");
    const Image img = random_image(9, 7, 6);
    write_image(dir / "a.png", img);
    const Image back = read_image(dir / "a.png");
    const Image q = quantize_8bit(img);
    EXPECT_TRUE(std::equal(back.pixels().begin(), back.pixels().end(), q.pixels().begin()));
    for (size_t i = 0; i < q.pixels().size(); ++i) {
        EXPECT_NEAR(q.pixels()[i], img.pixels()[i], 0.5 / 255 + 1e-6);
    }
}

TEST(ImageIo, MaskAndProbMapFiles) {
    const auto dir = temp_dir("io_mask");
    const BinaryMask m = rect_mask(6, 8, 1, 2, 4, 7);
    write_mask(dir / "m.png", m);
    const BinaryMask back = read_mask(dir / "m.png");
    EXPECT_TRUE(std::equal(back.labels().begin(), back.labels().end(), m.labels().begin()));
    ProbMap p(1, 3, {0.0f, 0.5f, 1.0f});
    write_probmap(dir / "p.png", p);
    const ProbMap g = read_gray(dir / "p.png");
    EXPECT_FLOAT_EQ(g.at(0, 0), 0.0f);
    EXPECT_FLOAT_EQ(g.at(0, 1), 128.0f / 255.0f);
    EXPECT_FLOAT_EQ(g.at(0, 2), 1.0f);
}

TEST(ImageIo, MissingAndCorruptFiles) {
    const auto dir = temp_dir("io_bad");
    EXPECT_THROW(read_image(dir / "nope.png"), FileNotFound);
    std::ofstream(dir / "bad.png") << "not an image";
    EXPECT_THROW(read_image(dir / "bad.png"), DataUnavailable);
}

TEST(ImageIo, JpegQuality100IsNearlyLossless) {
    // Noise keeps every chroma detail; full-resolution chroma must preserve it.
    const Image img = quantize_8bit(random_image(32, 32, 8));
    const Image j = jpeg_roundtrip(img, 100);
    float worst = 0;
    for (size_t i = 0; i < img.pixels().size(); ++i) {
        worst = std::max(worst, std::abs(j.pixels()[i] - img.pixels()[i]));
    }
    EXPECT_LT(worst, 8.0f / 255.0f);
    EXPECT_THROW(jpeg_roundtrip(img, 0), ParamOutOfRange);
}

TEST(Manipulation, ValidateRanges) {
    ManipulationParams p;
    EXPECT_NO_THROW(p.validate());
    EXPECT_TRUE(p.is_identity());
    p.apply_scale = true;
    p.scale = 2.5;
    EXPECT_THROW(p.validate(), ParamOutOfRange);
    p.scale = 1.5;
    EXPECT_FALSE(p.is_identity());
    p.apply_rotation = true;
    p.rotation_deg = 181;
    EXPECT_THROW(p.validate(), ParamOutOfRange);
}

TEST(Manipulation, JsonRoundTrip) {
    ManipulationParams p;
    p.apply_rotation = true;
    p.rotation_deg = -33.5;
    p.apply_flip = true;
    p.flip = Flip::vertical;
    p.apply_deform = true;
    p.deform_x = 0.7;
    p.deform_y = 1.9;
    const ManipulationParams q = nlohmann::json(p).get<ManipulationParams>();
    EXPECT_EQ(nlohmann::json(q), nlohmann::json(p));
    EXPECT_FALSE(q.apply_scale);
    EXPECT_EQ(q.flip, Flip::vertical);
}

TEST(Enums, StringRoundTrips) {
    EXPECT_EQ(forgery_mode_from_string(to_string(ForgeryMode::copymove)), ForgeryMode::copymove);
    EXPECT_EQ(flip_from_string("both"), Flip::both);
    EXPECT_THROW(forgery_mode_from_string("inpaint"), ValueOutOfRange);
}

TEST(ForgerySample, MetadataCarriesProvenance) {
    ForgerySample s;
    s.image = Image::filled(4, 4, 0, 0, 0);
    s.mask = rect_mask(4, 4, 0, 0, 2, 2);
    s.provenance = {"fg", "bg", "ann"};
    const auto j = s.metadata();
    EXPECT_EQ(j["provenance"]["annotation"], "ann");
    EXPECT_DOUBLE_EQ(j["mask_area_ratio"].get<double>(), 0.25);
}
