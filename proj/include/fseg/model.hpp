#pragma once

// Backbone stand-in, full-network wiring, and parameter/MAC accounting.
// The backbone is a conv pyramid emitting four maps at strides 4/8/16/32,
// matching the output contract of heavier pretrained encoders.

#include <array>

#include "fseg/cidm.hpp"
#include "fseg/dem.hpp"
#include "fseg/fam.hpp"

namespace fseg {

struct ModelConfig {
    std::array<size_t, 4> channels = {16, 32, 48, 64};  // full scale: 64,128,320,512
    size_t blocks_per_stage = 1;   // refinement blocks after each downsample
    size_t input_h = 64, input_w = 64;  // divisible by 32
    size_t cd = 32;                // common decoder width
    size_t ca_reduction = 16;
    size_t eca_kernel = 3;
    size_t fam_dim = 32;
    size_t fam_window = 3;
    size_t fam_pool = 3;
    size_t fam_heads = 1;
    double fam_dropout = 0.1;
    bool fam_scale_logits = true;
    bool dem_eca_first = false;

    void validate() const {
        if (input_h % 32 != 0 || input_w % 32 != 0)
            op_error("config", "input resolution must be divisible by 32");
        if (channels[0] % 4 != 0) op_error("config", "stage-1 channels must be divisible by 4");
    }
};

template <typename T>
struct FeaturePyramid {
    Tensor<T> f1, f2, f3, f4;  // strides 4/8/16/32
};

template <typename T>
struct SegmentationHeads {
    Tensor<T> p1, p2, p3, p4;  // supervised maps at input resolution
    Tensor<T> phat;            // elementwise sum of the four
    // intermediates for inspection dumps
    Tensor<T> f1, f2, t_detail, fhat1, fhat2;
};

// ---------------------------------------------------------------------------

template <typename T>
struct BackboneStage {
    Conv2d<T> down;
    BatchNorm2d<T> bn;
    std::vector<Conv2d<T>> blocks;
    std::vector<BatchNorm2d<T>> block_bns;

    static BackboneStage make(size_t in_ch, size_t out_ch, size_t k, size_t stride, size_t pad,
                              size_t n_blocks, Rng rng) {
        BackboneStage s;
        s.down = Conv2d<T>::make(in_ch, out_ch, k, k, stride, stride, pad, pad, rng.split("down"));
        s.bn = BatchNorm2d<T>::make(out_ch);
        for (size_t i = 0; i < n_blocks; ++i) {
            s.blocks.push_back(
                Conv2d<T>::make(out_ch, out_ch, 3, 3, 1, 1, 1, 1, rng.split("block" + std::to_string(i))));
            s.block_bns.push_back(BatchNorm2d<T>::make(out_ch));
        }
        return s;
    }

    Tensor<T> forward(const Tensor<T>& x, bool train) {
        Tensor<T> y = relu(bn.forward(down.forward(x), train));
        for (size_t i = 0; i < blocks.size(); ++i)
            y = relu(block_bns[i].forward(blocks[i].forward(y), train));
        return y;
    }

    void collect(const std::string& prefix, ParamMap<T>& pm) const {
        down.collect(prefix + ".down", pm);
        bn.collect(prefix + ".bn", pm);
        for (size_t i = 0; i < blocks.size(); ++i) {
            blocks[i].collect(prefix + ".block" + std::to_string(i), pm);
            block_bns[i].collect(prefix + ".block" + std::to_string(i) + "_bn", pm);
        }
    }
};

template <typename T>
struct Backbone {
    std::array<BackboneStage<T>, 4> stages;

    static Backbone make(const ModelConfig& cfg, Rng rng) {
        Backbone b;
        b.stages[0] = BackboneStage<T>::make(3, cfg.channels[0], 7, 4, 3, cfg.blocks_per_stage,
                                             rng.split("stage1"));
        for (size_t i = 1; i < 4; ++i)
            b.stages[i] = BackboneStage<T>::make(cfg.channels[i - 1], cfg.channels[i], 3, 2, 1,
                                                 cfg.blocks_per_stage,
                                                 rng.split("stage" + std::to_string(i + 1)));
        return b;
    }

    FeaturePyramid<T> forward(const Tensor<T>& image, bool train) {
        if (image.dim(2) % 32 != 0 || image.dim(3) % 32 != 0)
            op_error("backbone", "input resolution not divisible by 32");
        FeaturePyramid<T> fp;
        fp.f1 = stages[0].forward(image, train);
        fp.f2 = stages[1].forward(fp.f1, train);
        fp.f3 = stages[2].forward(fp.f2, train);
        fp.f4 = stages[3].forward(fp.f3, train);
        return fp;
    }

    void collect(const std::string& prefix, ParamMap<T>& pm) const {
        for (size_t i = 0; i < 4; ++i)
            stages[i].collect(prefix + ".stage" + std::to_string(i + 1), pm);
    }
};

// ---------------------------------------------------------------------------

template <typename T>
struct FocusNet {
    ModelConfig cfg;
    Backbone<T> backbone;
    Dem<T> dem;
    Cidm<T> cidm_m, cidm_a;
    Fam<T> fam;  // one shared instance for both decoder outputs

    static FocusNet make(const ModelConfig& cfg, uint64_t seed) {
        cfg.validate();
        Rng rng(seed);
        FocusNet m;
        m.cfg = cfg;
        m.backbone = Backbone<T>::make(cfg, rng.split("backbone"));
        m.dem = Dem<T>::make(cfg.channels[0], cfg.eca_kernel, rng.split("dem"));
        m.dem.eca_first = cfg.dem_eca_first;
        m.cidm_m = Cidm<T>::make(cfg.channels[1], cfg.channels[2], cfg.channels[3], cfg.cd,
                                 CidmVariant::Multiplicative, cfg.ca_reduction, rng.split("cidm_m"));
        m.cidm_a = Cidm<T>::make(cfg.channels[1], cfg.channels[2], cfg.channels[3], cfg.cd,
                                 CidmVariant::Additive, cfg.ca_reduction, rng.split("cidm_a"));
        FamConfig<T> fc;
        fc.embed_dim = cfg.fam_dim;
        fc.local_window = cfg.fam_window;
        fc.pool_size = cfg.fam_pool;
        fc.head_count = cfg.fam_heads;
        fc.width = cfg.cd;
        fc.dropout_rate = T(cfg.fam_dropout);
        fc.scale_logits = cfg.fam_scale_logits;
        m.fam = Fam<T>::make(cfg.channels[0], fc, cfg.ca_reduction, rng.split("fam"));
        return m;
    }

    SegmentationHeads<T> forward(const Tensor<T>& image, Rng& rng, bool train) {
        const size_t H = image.dim(2), W = image.dim(3);
        FeaturePyramid<T> fp = backbone.forward(image, train);
        Tensor<T> t_detail = dem.forward(fp.f1, train);
        DecoderOutput<T> dm = cidm_m.forward(fp.f2, fp.f3, fp.f4);
        DecoderOutput<T> da = cidm_a.forward(fp.f2, fp.f3, fp.f4);
        Rng rng3 = rng.split("fam_m");
        Rng rng4 = rng.split("fam_a");
        FamState<T> s3 = fam.forward(t_detail, dm.fhat, dm.p, rng3, train);
        FamState<T> s4 = fam.forward(t_detail, da.fhat, da.p, rng4, train);

        SegmentationHeads<T> heads;
        heads.p1 = bilinear_resize(dm.p, H, W);
        heads.p2 = bilinear_resize(da.p, H, W);
        heads.p3 = bilinear_resize(s3.p_refined, H, W);
        heads.p4 = bilinear_resize(s4.p_refined, H, W);
        heads.phat = add(add(add(heads.p1, heads.p2), heads.p3), heads.p4);
        heads.f1 = fp.f1;
        heads.f2 = fp.f2;
        heads.t_detail = t_detail;
        heads.fhat1 = dm.fhat;
        heads.fhat2 = da.fhat;
        return heads;
    }

    ParamMap<T> parameters() const {
        ParamMap<T> pm;
        backbone.collect("backbone", pm);
        dem.collect("dem", pm);
        cidm_m.collect("cidm_m", pm);
        cidm_a.collect("cidm_a", pm);
        fam.collect("fam", pm);
        return pm;
    }
};

template <typename T>
inline size_t count_params(const FocusNet<T>& model) {
    return model.parameters().count_trainable();
}

// ---------------------------------------------------------------------------
// Analytic multiply-accumulate accounting (batch 1). Formula sheet:
//   conv2d          Cout * H' * W' * Cin * kh * kw
//   deform conv     main-conv + offset-conv MACs + 4 * Cin * kh * kw * H' * W'
//                   (four corner products per bilinear tap)
//   linear over N   N * in * out
//   attention       N * (w^2 + p^2) * d for the scores and the same again
//                   for the weighted value sum
//   bilinear resize 4 * C * H' * W'
//   BN, activations, pooling: not counted (no multiply-accumulate chains)

struct ModuleCost {
    std::string name;
    size_t params = 0;
    size_t macs = 0;
};

template <typename T>
inline size_t conv_macs(const Conv2d<T>& c, size_t h_in, size_t w_in) {
    const size_t ho = conv_out_extent(h_in, c.weight.dim(2), c.sy, c.py);
    const size_t wo = conv_out_extent(w_in, c.weight.dim(3), c.sx, c.px);
    return c.weight.dim(0) * ho * wo * c.weight.dim(1) * c.weight.dim(2) * c.weight.dim(3);
}

template <typename T>
inline size_t deform_conv_macs(const DeformConv2d<T>& d, size_t h, size_t w) {
    const size_t taps = d.main.weight.dim(2) * d.main.weight.dim(3);
    return conv_macs(d.main, h, w) + conv_macs(d.offset_predictor, h, w) +
           4 * d.main.weight.dim(1) * taps * h * w;
}

template <typename T>
inline size_t ca_macs(const ChannelAttention<T>& ca) {
    const size_t c = ca.fc1.weight.dim(0), hidden = ca.fc1.weight.dim(1);
    return 2 * (c * hidden + hidden * c);  // avg and max paths through the MLP
}

template <typename T>
inline std::vector<ModuleCost> cost_table(const FocusNet<T>& model, size_t H, size_t W) {
    const auto& cfg = model.cfg;
    std::vector<ModuleCost> table;
    auto params_of = [](auto collect_fn) {
        ParamMap<T> pm;
        collect_fn(pm);
        return pm.count_trainable();
    };

    // backbone
    {
        ModuleCost mc{"backbone", 0, 0};
        mc.params = params_of([&](ParamMap<T>& pm) { model.backbone.collect("b", pm); });
        size_t h = H, w = W;
        for (size_t i = 0; i < 4; ++i) {
            const auto& st = model.backbone.stages[i];
            mc.macs += conv_macs(st.down, h, w);
            h = conv_out_extent(h, st.down.weight.dim(2), st.down.sy, st.down.py);
            w = conv_out_extent(w, st.down.weight.dim(3), st.down.sx, st.down.px);
            for (const auto& blk : st.blocks) mc.macs += conv_macs(blk, h, w);
        }
        table.push_back(mc);
    }
    const size_t h4 = H / 4, w4 = W / 4, h8 = H / 8, w8 = W / 8;
    const size_t h16 = H / 16, w16 = W / 16, h32 = H / 32, w32 = W / 32;

    // dem (operates at stride 4)
    {
        ModuleCost mc{"dem", 0, 0};
        mc.params = params_of([&](ParamMap<T>& pm) { model.dem.collect("d", pm); });
        for (const auto& br : model.dem.branches) {
            mc.macs += deform_conv_macs(br.dconv31, h4, w4);
            mc.macs += deform_conv_macs(br.dconv13, h4, w4);
        }
        mc.macs += conv_macs(model.dem.fuse1, h4, w4);
        mc.macs += conv_macs(model.dem.fuse2, h4, w4);
        mc.macs += cfg.channels[0] * model.dem.eca.weight.size();  // conv1d over channels
        table.push_back(mc);
    }

    // the two decoders
    for (const Cidm<T>* cd : {&model.cidm_m, &model.cidm_a}) {
        ModuleCost mc{cd->variant == CidmVariant::Multiplicative ? "cidm_m" : "cidm_a", 0, 0};
        mc.params = params_of([&](ParamMap<T>& pm) { cd->collect("c", pm); });
        mc.macs += conv_macs(cd->proj2, h8, w8) + conv_macs(cd->proj3, h16, w16) +
                   conv_macs(cd->proj4, h32, w32);
        mc.macs += conv_macs(cd->fuse_f3, h16, w16);
        mc.macs += conv_macs(cd->fuse_f2_inner, h8, w8);
        mc.macs += conv_macs(cd->fuse_f2_outer, h8, w8);
        mc.macs += 4 * cd->cd * h8 * w8;   // Up4(f4')
        mc.macs += 4 * cd->cd * h16 * w16; // Up2(f4')
        mc.macs += 4 * cd->cd * h8 * w8;   // Up2 in the F3 line
        mc.macs += 4 * cd->cd * h8 * w8;   // Up2(f3')
        mc.macs += ca_macs(cd->ca);
        mc.macs += conv_macs(cd->sa.conv, h8, w8);
        mc.macs += conv_macs(cd->out_conv, h8, w8);
        mc.macs += conv_macs(cd->head, h8, w8);
        table.push_back(mc);
    }

    // fam, invoked twice on the stride-4 grid
    {
        ModuleCost mc{"fam", 0, 0};
        mc.params = params_of([&](ParamMap<T>& pm) { model.fam.collect("f", pm); });
        const size_t n = h4 * w4, d = cfg.fam_dim;
        const size_t keys = cfg.fam_window * cfg.fam_window + cfg.fam_pool * cfg.fam_pool;
        size_t once = 0;
        once += conv_macs(model.fam.t_proj, h4, w4);
        once += 4 * 32 * h4 * w4;      // F-hat upsample
        once += 4 * 1 * h4 * w4;       // coarse-map upsample
        once += n * 32 * d;            // q_linear
        once += n * 32 * 2 * d;        // kv_local
        once += cfg.fam_pool * cfg.fam_pool * 32 * 2 * d;  // kv_pool
        once += n * keys * d;          // similarity scores
        once += n * keys * d;          // weighted value sum
        once += n * d * 32;            // out_linear
        once += ca_macs(model.fam.ca);
        once += conv_macs(model.fam.refine1, h4, w4) + conv_macs(model.fam.refine2, h4, w4) +
                conv_macs(model.fam.refine_head, h4, w4);
        mc.macs = 2 * once;
        table.push_back(mc);
    }

    // head upsamples to full resolution
    {
        ModuleCost mc{"fusion", 0, 4 * 1 * H * W * 4};
        table.push_back(mc);
    }
    return table;
}

template <typename T>
inline size_t estimate_macs(const FocusNet<T>& model, size_t H, size_t W) {
    size_t total = 0;
    for (const auto& mc : cost_table(model, H, W)) total += mc.macs;
    return total;
}

}  // namespace fseg
