#include "profact/error.hpp"
#include "profact/feedback.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <set>

using namespace profact;
using testing_support::check_gradients;
using testing_support::random_tensor;

namespace {
int64_t support(const Tensor& t) {
    return std::count_if(t.data().begin(), t.data().end(), [](double v) { return v > 0; });
}
} // namespace

TEST(GaussianKernel, NormalizedAndSymmetric) {
    for (const auto& [size, sigma] : std::vector<std::pair<int, double>>{{7, 1.0}, {31, 4.0}}) {
        const auto k = gaussian_kernel(size, sigma);
        ASSERT_EQ(k.size(), static_cast<size_t>(size * size));
        double s = 0;
        for (double v : k) s += v;
        EXPECT_NEAR(s, 1.0, 1e-12);
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                EXPECT_DOUBLE_EQ(k[y * size + x], k[x * size + y]);
                EXPECT_DOUBLE_EQ(k[y * size + x], k[(size - 1 - y) * size + x]);
            }
        const int c = size / 2;
        EXPECT_NEAR(k[c * size + c + 1] / k[c * size + c], std::exp(-0.5 / (sigma * sigma)), 1e-12);
    }
}

TEST(HamConfig, Validation) {
    EXPECT_NO_THROW(HamConfig::desk().validate());
    EXPECT_EQ(HamConfig::full().gaussian_kernel_size, 31);
    HamConfig c;
    c.gaussian_kernel_size = 6;
    EXPECT_THROW(c.validate(), ConfigError);
    c = HamConfig{};
    c.gaussian_sigma = 0;
    EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Ham, OutputDominatesDownsampledMap) {
    nn::Rng rng(1);
    Ham ham(HamConfig::desk(), rng);
    NoGradGuard guard;
    for (int i = 0; i < 20; ++i) {
        const HamTrace t = ham.trace(random_tensor({1, 1, 16, 16}, 100 + i, 0, 1));
        ASSERT_EQ(t.output.shape(), (Shape{1, 1, 8, 8}));
        for (size_t k = 0; k < t.output.data().size(); ++k) {
            EXPECT_GE(t.output.data()[k], t.downsampled.data()[k]);
            EXPECT_GE(t.output.data()[k], 0.0);
            EXPECT_LE(t.output.data()[k], 1.0 + 1e-12);
        }
    }
}

TEST(Ham, SinglePixelSupportGrows) {
    nn::Rng rng(2);
    Ham ham(HamConfig::desk(), rng);
    NoGradGuard guard;
    Tensor m = Tensor::zeros({1, 1, 32, 32});
    m.mutable_data()[16 * 32 + 16] = 1.0;
    const HamTrace t = ham.trace(m);
    EXPECT_GT(support(t.output), support(t.downsampled));
    EXPECT_NEAR(*std::max_element(t.normalized.data().begin(), t.normalized.data().end()), 1.0, 1e-12);
}

TEST(Ham, AllZeroMapStaysZero) {
    nn::Rng rng(3);
    Ham ham(HamConfig::desk(), rng);
    NoGradGuard guard;
    const Tensor out = ham.forward(Tensor::zeros({1, 1, 8, 8}));
    for (double v : out.data()) EXPECT_EQ(v, 0.0);
}

TEST(Ham, GradientsMatchFiniteDifferences) {
    nn::Rng rng(4);
    Ham ham(HamConfig::desk(), rng);
    Tensor m = random_tensor({1, 1, 32, 32}, 5, 0, 1, true);
    const Tensor probe = random_tensor({1, 1, 16, 16}, 6);
    auto loss = [&] { return ops::sum(ops::mul(ham.forward(m), probe)); };
    std::vector<Tensor> params = ham.parameters();
    params.push_back(m);
    for (const auto& g : check_gradients(loss, params, 10, 7)) EXPECT_LT(g.rel_error, 1e-3) << g.where;
}

TEST(FeedbackFuse, ResizesAttentionOntoFeatures) {
    NoGradGuard guard;
    const Tensor f = random_tensor({2, 3, 4, 4}, 8);
    const Tensor y = feedback_fuse(Tensor::full({2, 1, 8, 8}, 0.5), f);
    ASSERT_EQ(y.shape(), f.shape());
    for (size_t i = 0; i < y.data().size(); ++i) EXPECT_NEAR(y.data()[i], 0.5 * f.data()[i], 1e-12);
    EXPECT_THROW(feedback_fuse(Tensor::zeros({1, 1, 8, 8}), f), ShapeMismatch);
}

TEST(FeedbackBranch, ProducesQuarterScaleLogits) {
    nn::Rng rng(9);
    const EncoderConfig enc = EncoderConfig::tiny();
    FeedbackBranch feb(enc, CspmConfig{}, 16, rng);
    NoGradGuard guard;
    const FebOutput out = feb.forward(random_tensor({1, enc.channels[1], 8, 8}, 10));
    EXPECT_EQ(out.x3.shape(), (Shape{1, enc.channels[2], 4, 4}));
    EXPECT_EQ(out.x4.shape(), (Shape{1, enc.channels[3], 2, 2}));
    EXPECT_EQ(out.logits.shape(), (Shape{1, 1, 16, 16}));
}
