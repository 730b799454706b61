#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "fseg/grad_check.hpp"
#include "fseg/loss.hpp"
#include "fseg/optim.hpp"
#include "fseg/train.hpp"

using namespace fseg;

namespace {

double bce_dice_reference(const std::vector<double>& x, const std::vector<double>& t) {
    double bce = 0, inter = 0, denom = 0;
    for (size_t i = 0; i < x.size(); ++i) {
        const double p = 1.0 / (1.0 + std::exp(-x[i]));
        bce += std::log1p(std::exp(-std::abs(x[i]))) + std::max(x[i], 0.0) - x[i] * t[i];
        inter += p * t[i];
        denom += p + t[i];
    }
    bce /= (double)x.size();
    return bce + 1.0 - (2.0 * inter + 1.0) / (denom + 1.0);
}

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.channels = {4, 8, 8, 8};
    cfg.input_h = cfg.input_w = 32;
    cfg.cd = 8;
    cfg.fam_dim = 8;
    return cfg;
}

std::vector<Sample> tiny_dataset() {
    SyntheticSpec spec;
    spec.count = 4;
    spec.resolution = 32;
    spec.seed = 7;
    return gen_synthetic(spec);
}

}  // namespace

TEST_CASE("saturated positive logits on an all-ones target give near-zero loss") {
    Tensor<double> x(Shape{1, 1, 3, 3}, std::vector<double>(9, 50.0));
    Tensor<double> t(Shape{1, 1, 3, 3}, std::vector<double>(9, 1.0));
    CHECK(bce_dice_loss(x, t).data()[0] == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("zero logits on an all-ones target give the closed-form value") {
    const size_t n = 16;
    Tensor<double> x(Shape{1, 1, 4, 4}, std::vector<double>(n, 0.0));
    Tensor<double> t(Shape{1, 1, 4, 4}, std::vector<double>(n, 1.0));
    const double expect = std::log(2.0) + 1.0 - ((double)n + 1.0) / (1.5 * n + 1.0);
    CHECK(bce_dice_loss(x, t).data()[0] == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("loss matches a pixel-loop reference on random inputs") {
    Rng rng(11);
    for (int rep = 0; rep < 20; ++rep) {
        Shape s{1 + rng.below(3), 1, 2 + rng.below(6), 2 + rng.below(6)};
        auto x = random_tensor<double>(s, rng, -4.0, 4.0);
        std::vector<double> tv(x.size());
        for (auto& v : tv) v = rng.bernoulli(0.5) ? 1.0 : 0.0;
        Tensor<double> t(s, std::vector<double>(tv));
        const double got = bce_dice_loss(x, t).data()[0];
        CHECK(std::abs(got - bce_dice_reference(x.data(), tv)) < 1e-12);
    }
}

TEST_CASE("non-binary target is rejected") {
    Tensor<double> x(Shape{1, 1, 2, 2}, {0, 0, 0, 0});
    Tensor<double> t(Shape{1, 1, 2, 2}, {0, 0.5, 1, 0});
    CHECK_THROWS_AS(bce_dice_loss(x, t), TensorError);
}

TEST_CASE("deep supervision sums per-head losses with their weights") {
    Rng rng(13);
    SegmentationHeads<double> heads;
    auto m = random_tensor<double>(Shape{2, 1, 4, 4}, rng, -2.0, 2.0);
    heads.p1 = heads.p2 = heads.p3 = heads.p4 = heads.phat = m;
    std::vector<double> tv(m.size());
    for (auto& v : tv) v = rng.bernoulli(0.5) ? 1.0 : 0.0;
    Tensor<double> t(m.shape(), std::move(tv));
    const double single = bce_dice_loss(m, t).data()[0];
    CHECK(total_loss(heads, t).data()[0] == doctest::Approx(5.0 * single).epsilon(1e-12));
    CHECK(total_loss(heads, t, {1, 1, 1, 1, 0}).data()[0] ==
          doctest::Approx(4.0 * single).epsilon(1e-12));
}

TEST_CASE("loss gradient passes finite differences") {
    Rng rng(17);
    auto x = random_tensor<double>(Shape{1, 1, 5, 5}, rng, -2.0, 2.0);
    std::vector<double> tv(x.size());
    for (auto& v : tv) v = rng.bernoulli(0.5) ? 1.0 : 0.0;
    Tensor<double> t(x.shape(), std::move(tv));
    auto rep = grad_check(
        [&](const std::vector<Tensor<double>>& in) { return bce_dice_loss(in[0], t); }, {x});
    CHECK(rep.max_rel_err < 1e-5);
}

TEST_CASE("Adam first step matches the hand recurrence") {
    ParamMap<double> pm;
    Tensor<double> w(Shape{1}, {0.5});
    w.set_requires_grad(true);
    pm.add("w", w);
    Adam<double> opt;
    opt.init(pm);
    w.zero_grad();
    w.impl()->grad = {1.0};
    opt.step(pm, 0.1);
    // m-hat = v-hat = 1 after bias correction, so the step is lr/(1 + eps)
    CHECK(w.data()[0] == doctest::Approx(0.5 - 0.1 / (1.0 + 1e-8)).epsilon(1e-14));
}

TEST_CASE("Adam leaves zero-gradient parameters in place") {
    ParamMap<double> pm;
    Tensor<double> w(Shape{2}, {1.0, -1.0});
    w.set_requires_grad(true);
    pm.add("w", w);
    Adam<double> opt;
    opt.init(pm);
    w.zero_grad();
    opt.step(pm, 0.1);
    CHECK(w.data()[0] == 1.0);
    CHECK(w.data()[1] == -1.0);
}

TEST_CASE("Adam drives a quadratic toward its minimum") {
    ParamMap<double> pm;
    Tensor<double> w(Shape{1}, {3.0});
    w.set_requires_grad(true);
    pm.add("w", w);
    Adam<double> opt;
    opt.init(pm);
    for (int i = 0; i < 400; ++i) {
        pm.zero_grad();
        Tensor<double> loss = mul(w, w);
        loss.backward();
        opt.step(pm, 0.05);
    }
    CHECK(std::abs(w.data()[0]) < 0.05);
}

TEST_CASE("optimizer trajectories are bitwise deterministic") {
    auto run = [] {
        auto model = FocusNet<float>::make(tiny_config(), 21);
        ParamMap<float> pm = model.parameters();
        Adam<float> opt;
        opt.init(pm);
        Rng rng(23);
        auto x = random_tensor<float>(Shape{2, 3, 32, 32}, rng, 0.0, 1.0);
        std::vector<float> tv(2 * 32 * 32);
        for (auto& v : tv) v = rng.bernoulli(0.5) ? 1.0f : 0.0f;
        Tensor<float> t(Shape{2, 1, 32, 32}, std::move(tv));
        for (int i = 0; i < 10; ++i) {
            pm.zero_grad();
            Rng frng(100 + i);
            auto heads = model.forward(x, frng, true);
            Tensor<float> loss = total_loss(heads, t);
            loss.backward();
            opt.step(pm, 1e-3f);
        }
        std::vector<float> out;
        for (const auto& [_, p] : pm.items)
            out.insert(out.end(), p.data().begin(), p.data().end());
        return out;
    };
    auto a = run(), b = run();
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("train config validation") {
    TrainConfig<float> cfg;
    cfg.patience = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.patience = 50;
    cfg.lr = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.lr = 1e-4;
    cfg.max_epochs = 10;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("training loop: step budget, best snapshot, identical logs across reruns") {
    auto data = tiny_dataset();
    TrainConfig<float> cfg;
    cfg.batch = 2;
    cfg.max_epochs = 3;
    cfg.patience = 3;
    cfg.seed = 5;
    cfg.augment_enabled = true;

    auto run = [&] {
        auto model = FocusNet<float>::make(tiny_config(), 29);
        return train(model, data, data, cfg);
    };
    auto r1 = run(), r2 = run();
    REQUIRE(r1.log.size() == r2.log.size());
    for (size_t i = 0; i < r1.log.size(); ++i) {
        CHECK(r1.log[i].train_loss == r2.log[i].train_loss);
        CHECK(r1.log[i].val_mdsc == r2.log[i].val_mdsc);
    }
    CHECK(r1.steps == 3 * 2);
    CHECK(r1.best.tensors.size() ==
          FocusNet<float>::make(tiny_config(), 29).parameters().items.size());
    CHECK(r1.best_epoch >= 1);

    auto model = FocusNet<float>::make(tiny_config(), 29);
    auto capped = train(model, data, data, cfg, {}, 1);
    CHECK(capped.steps == 1);
}
