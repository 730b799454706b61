#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cstdio>
#include <fstream>

#include "fseg/checkpoint.hpp"
#include "fseg/grad_check.hpp"
#include "fseg/model.hpp"
#include "fseg/verify.hpp"

using namespace fseg;

namespace {

ModelConfig desk_config() {
    ModelConfig cfg;
    cfg.channels = {16, 32, 48, 64};
    cfg.input_h = cfg.input_w = 64;
    return cfg;
}

template <typename T>
Tensor<T> random_image(size_t h, size_t w, Rng& rng) {
    return random_tensor<T>(Shape{1, 3, h, w}, rng, 0.0, 1.0);
}

}  // namespace

TEST_CASE("forward produces five head maps at input resolution") {
    ModelConfig cfg = desk_config();
    auto model = FocusNet<double>::make(cfg, 7);
    Rng rng(1);
    auto x = random_image<double>(64, 64, rng);
    Rng frng(2);
    auto heads = model.forward(x, frng, false);
    for (const Tensor<double>* m : {&heads.p1, &heads.p2, &heads.p3, &heads.p4, &heads.phat})
        CHECK(m->shape() == Shape{1, 1, 64, 64});
    CHECK(heads.f1.shape() == Shape{1, 16, 16, 16});
    CHECK(heads.f2.shape() == Shape{1, 32, 8, 8});
    CHECK(heads.t_detail.shape() == Shape{1, 16, 16, 16});
    CHECK(heads.fhat1.shape() == Shape{1, 32, 8, 8});
}

TEST_CASE("fused map equals the elementwise sum of the four heads") {
    auto model = FocusNet<double>::make(desk_config(), 9);
    Rng rng(3);
    auto x = random_image<double>(64, 64, rng);
    Rng frng(4);
    auto heads = model.forward(x, frng, false);
    for (size_t i = 0; i < heads.phat.size(); ++i) {
        const double s = heads.p1.data()[i] + heads.p2.data()[i] + heads.p3.data()[i] +
                         heads.p4.data()[i];
        CHECK(heads.phat.data()[i] == s);
    }
}

TEST_CASE("zeroed refine stack reduces the refined maps to the upsampled coarse maps") {
    auto model = FocusNet<double>::make(desk_config(), 11);
    std::fill(model.fam.refine_head.weight.raw_data().begin(),
              model.fam.refine_head.weight.raw_data().end(), 0.0);
    std::fill(model.fam.refine_head.bias.raw_data().begin(),
              model.fam.refine_head.bias.raw_data().end(), 0.0);
    Rng rng(5);
    auto x = random_image<double>(64, 64, rng);

    FeaturePyramid<double> fp = model.backbone.forward(x, false);
    Tensor<double> t_detail = model.dem.forward(fp.f1, false);
    DecoderOutput<double> dm = model.cidm_m.forward(fp.f2, fp.f3, fp.f4);
    DecoderOutput<double> da = model.cidm_a.forward(fp.f2, fp.f3, fp.f4);
    Rng r3(0), r4(0);
    FamState<double> s3 = model.fam.forward(t_detail, dm.fhat, dm.p, r3, false);
    FamState<double> s4 = model.fam.forward(t_detail, da.fhat, da.p, r4, false);

    Tensor<double> up1 = bilinear_resize(dm.p, t_detail.dim(2), t_detail.dim(3));
    Tensor<double> up2 = bilinear_resize(da.p, t_detail.dim(2), t_detail.dim(3));
    for (size_t i = 0; i < up1.size(); ++i) {
        CHECK(s3.p_refined.data()[i] == up1.data()[i]);
        CHECK(s4.p_refined.data()[i] == up2.data()[i]);
    }
}

TEST_CASE("full-scale shape contract") {
    ModelConfig cfg;
    cfg.channels = {64, 128, 320, 512};
    cfg.input_h = cfg.input_w = 352;
    auto model = FocusNet<float>::make(cfg, 1);
    Rng rng(6);
    auto x = random_tensor<float>(Shape{1, 3, 352, 352}, rng, 0.0, 1.0);
    Rng frng(7);
    auto heads = model.forward(x, frng, false);
    FeaturePyramid<float> fp = model.backbone.forward(x, false);
    CHECK(fp.f1.shape() == Shape{1, 64, 88, 88});
    CHECK(fp.f2.shape() == Shape{1, 128, 44, 44});
    CHECK(fp.f3.shape() == Shape{1, 320, 22, 22});
    CHECK(fp.f4.shape() == Shape{1, 512, 11, 11});
    for (const Tensor<float>* m : {&heads.p1, &heads.p2, &heads.p3, &heads.p4, &heads.phat})
        CHECK(m->shape() == Shape{1, 1, 352, 352});
}

TEST_CASE("cost table params agree with the parameter map") {
    auto model = FocusNet<float>::make(desk_config(), 13);
    size_t table_params = 0;
    for (const auto& mc : cost_table(model, 64, 64)) table_params += mc.params;
    CHECK(table_params == count_params(model));
    CHECK(estimate_macs(model, 64, 64) > 0);
}

TEST_CASE("first backbone conv MACs follow the formula") {
    auto model = FocusNet<float>::make(desk_config(), 13);
    // stage 1: 7x7 stride 4 pad 3, 3 -> 16 channels, 64x64 input -> 16x16 out
    const size_t expect = 16ull * 16 * 16 * 3 * 7 * 7;
    CHECK(conv_macs(model.backbone.stages[0].down, 64, 64) == expect);
}

TEST_CASE("checkpoint round trip is byte-identical and prediction-stable") {
    auto model = FocusNet<float>::make(desk_config(), 17);
    ParamMap<float> pm = model.parameters();
    Checkpoint ck = checkpoint_from_params(pm, "k=v\n");
    const std::string p1 = "ck_roundtrip_1.fseg", p2 = "ck_roundtrip_2.fseg";
    save_checkpoint(ck, p1);
    Checkpoint loaded = load_checkpoint(p1);
    save_checkpoint(loaded, p2);

    std::ifstream a(p1, std::ios::binary), b(p2, std::ios::binary);
    std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
    std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
    CHECK(sa == sb);

    Rng rng(8);
    auto x = random_image<float>(64, 64, rng);
    Rng f1(9);
    auto before = model.forward(x, f1, false);

    auto model2 = FocusNet<float>::make(desk_config(), 999);  // different init
    ParamMap<float> pm2 = model2.parameters();
    apply_checkpoint(loaded, pm2);
    Rng f2(9);
    auto after = model2.forward(x, f2, false);
    for (size_t i = 0; i < before.phat.size(); ++i)
        CHECK(before.phat.data()[i] == after.phat.data()[i]);

    std::remove(p1.c_str());
    std::remove(p2.c_str());
}

TEST_CASE("checkpoint validation rejects mismatches") {
    auto model = FocusNet<float>::make(desk_config(), 19);
    ParamMap<float> pm = model.parameters();
    Checkpoint ck = checkpoint_from_params(pm, "");

    Checkpoint renamed = ck;
    renamed.tensors[0].name = "no_such_param";
    CHECK_THROWS_AS(apply_checkpoint(renamed, pm), CheckpointError);

    Checkpoint truncated = ck;
    truncated.tensors.pop_back();
    CHECK_THROWS_AS(apply_checkpoint(truncated, pm), CheckpointError);

    Checkpoint reshaped = ck;
    reshaped.tensors[0].shape[0] += 1;
    CHECK_THROWS_AS(apply_checkpoint(reshaped, pm), CheckpointError);
}

TEST_CASE("full model gradient passes finite differences, three seeds") {
    for (uint64_t seed : {81u, 82u, 83u})
        for (const auto& r : verify_model(seed)) {
            INFO(r.name, " worst rel err ", r.max_rel_err);
            CHECK(r.pass);
        }
}
