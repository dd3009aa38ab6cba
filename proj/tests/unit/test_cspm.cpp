#include "profact/cspm.hpp"
#include "profact/error.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace profact;
using testing_support::check_gradients;
using testing_support::random_tensor;

TEST(CspmConfig, Validation) {
    EXPECT_NO_THROW(CspmConfig{}.validate());
    CspmConfig c;
    c.dilation_rates = {1, 1};
    EXPECT_THROW(c.validate(), ConfigError);
    c.dilation_rates = {};
    EXPECT_THROW(c.validate(), ConfigError);
    c = CspmConfig{};
    c.cot_kernel = 4;
    EXPECT_THROW(c.validate(), ConfigError);
    c = CspmConfig{};
    c.attention_softmax = true;
    EXPECT_EQ(nlohmann::json(c).get<CspmConfig>().attention_softmax, true);
}

TEST(CspmConfig, GroupCount) {
    EXPECT_EQ(cot_groups(64), 4);
    EXPECT_EQ(cot_groups(3), 3);
    EXPECT_EQ(cot_groups(6), 3);
    EXPECT_EQ(cot_groups(1), 1);
}

TEST(Cspm, PreservesShapeAndStaysFinite) {
    nn::Rng rng(1);
    Cspm m(8, CspmConfig{}, rng);
    NoGradGuard guard;
    for (int s : {4, 8, 13}) {
        const Tensor y = m.forward(random_tensor({2, 8, s, s}, 2, -10, 10));
        EXPECT_EQ(y.shape(), (Shape{2, 8, s, s}));
        for (double v : y.data()) ASSERT_TRUE(std::isfinite(v));
    }
}

TEST(Cspm, ZeroAttentionLeavesStaticContext) {
    nn::Rng rng(3);
    CotBlock cot(8, CspmConfig{}, rng);
    for (Tensor* t : {&cot.theta.weight, &cot.delta.weight, &cot.value.weight}) {
        std::fill(t->mutable_data().begin(), t->mutable_data().end(), 0.0);
    }
    NoGradGuard guard;
    const Tensor x = random_tensor({1, 8, 6, 6}, 4);
    const Tensor y = cot.forward(x);
    const Tensor s = cot.static_context(x);
    for (size_t i = 0; i < y.data().size(); ++i) EXPECT_NEAR(y.data()[i], s.data()[i], 1e-12);
}

TEST(Cspm, DilatedBranchMatchesDirectConvolution) {
    nn::Rng rng(5);
    CspmConfig cfg;
    cfg.dilation_rates = {2};
    DilatedPyramid pyr(2, cfg, rng);
    NoGradGuard guard;
    const int h = 7, w = 6, r = 2;
    const Tensor x = random_tensor({1, 2, h, w}, 6);
    const Tensor y = pyr.branch(x, 1);
    ASSERT_EQ(y.shape(), (Shape{1, 2, h, w}));
    const auto& wt = pyr.dilated[0]->weight.data();
    const auto& b = pyr.dilated[0]->bias.data();
    for (int co = 0; co < 2; ++co)
        for (int oy = 0; oy < h; ++oy)
            for (int ox = 0; ox < w; ++ox) {
                double acc = b[co];
                for (int ci = 0; ci < 2; ++ci)
                    for (int ky = 0; ky < 3; ++ky)
                        for (int kx = 0; kx < 3; ++kx) {
                            const int iy = oy + (ky - 1) * r, ix = ox + (kx - 1) * r;
                            if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                            acc += wt[((co * 2 + ci) * 3 + ky) * 3 + kx] * x.data()[(ci * h + iy) * w + ix];
                        }
                EXPECT_NEAR(y.data()[(co * h + oy) * w + ox], acc, 1e-12);
            }
}

TEST(Cspm, GradientReachesEveryBranch) {
    nn::Rng rng(7);
    Cspm m(4, CspmConfig{}, rng);
    const Tensor x = random_tensor({1, 4, 6, 6}, 8);
    m.zero_grad();
    ops::sum(ops::mul(m.forward(x), random_tensor({1, 4, 6, 6}, 9))).backward();
    for (const auto& [name, p] : m.named_parameters()) {
        if (name.find("weight") == std::string::npos) continue;
        double norm = 0;
        for (double g : p.grad()) norm += g * g;
        EXPECT_GT(norm, 0.0) << name;
    }
}

TEST(Cspm, CotGradientsMatchFiniteDifferences) {
    nn::Rng rng(10);
    CotBlock cot(4, CspmConfig{}, rng);
    const Tensor x = random_tensor({1, 4, 5, 5}, 11);
    const Tensor probe = random_tensor({1, 4, 5, 5}, 12);
    auto loss = [&] { return ops::sum(ops::mul(cot.forward(x), probe)); };
    for (const auto& g : check_gradients(loss, cot.parameters(), 10, 13)) {
        EXPECT_LT(g.rel_error, 1e-3) << g.where;
    }
}

TEST(Cspm, AblationsKeepShape) {
    nn::Rng rng(14);
    CspmConfig cfg;
    cfg.attention_softmax = true;
    cfg.pooling_pyramid = true;
    Cspm m(4, cfg, rng);
    NoGradGuard guard;
    EXPECT_EQ(m.forward(random_tensor({1, 4, 8, 8}, 15)).shape(), (Shape{1, 4, 8, 8}));
}
