#pragma once

// Cross-semantic Interaction Decoder Module. Fuses the three deep encoder
// levels into a feature map F-hat on the stride-8 grid plus a coarse
// one-channel logit map. Two variants: the multiplicative one combines the
// aligned levels elementwise by product, the additive one by sum. Only the
// alignment stage differs; the gate multiplications of the interaction stage
// are identical in both.

#include "fseg/attention.hpp"
#include "fseg/nn_ops.hpp"

namespace fseg {

enum class CidmVariant { Multiplicative, Additive };

template <typename T>
struct CidmAligned {
    Tensor<T> F2, F3, F4;  // all [B,Cd,H/8,W/8]
};

template <typename T>
struct DecoderOutput {
    Tensor<T> fhat;  // [B,Cd,H/8,W/8]
    Tensor<T> p;     // [B,1,H/8,W/8]
};

template <typename T>
struct Cidm {
    Conv2d<T> proj2, proj3, proj4;  // 1x1 projections to the common width Cd
    Conv2d<T> fuse_f3;              // conv on Up2(f4') in the F3 line
    Conv2d<T> fuse_f2_inner;        // conv on Up2(f3') in the F2 line
    Conv2d<T> fuse_f2_outer;        // outer conv of the F2 line
    ChannelAttention<T> ca;
    SpatialAttention<T> sa;
    Conv2d<T> out_conv;  // 4*Cd -> Cd
    Conv2d<T> head;      // Cd -> 1
    CidmVariant variant = CidmVariant::Multiplicative;
    size_t cd = 32;

    static Cidm make(size_t c2, size_t c3, size_t c4, size_t cd, CidmVariant variant,
                     size_t ca_reduction, Rng rng) {
        Cidm m;
        m.cd = cd;
        m.variant = variant;
        m.proj2 = Conv2d<T>::make(c2, cd, 1, 1, 1, 1, 0, 0, rng.split("proj2"));
        m.proj3 = Conv2d<T>::make(c3, cd, 1, 1, 1, 1, 0, 0, rng.split("proj3"));
        m.proj4 = Conv2d<T>::make(c4, cd, 1, 1, 1, 1, 0, 0, rng.split("proj4"));
        m.fuse_f3 = Conv2d<T>::make(cd, cd, 3, 3, 1, 1, 1, 1, rng.split("fuse_f3"));
        m.fuse_f2_inner = Conv2d<T>::make(cd, cd, 3, 3, 1, 1, 1, 1, rng.split("fuse_f2_inner"));
        m.fuse_f2_outer = Conv2d<T>::make(cd, cd, 3, 3, 1, 1, 1, 1, rng.split("fuse_f2_outer"));
        m.ca = ChannelAttention<T>::make(cd, ca_reduction, rng.split("ca"));
        m.sa = SpatialAttention<T>::make(rng.split("sa"));
        m.out_conv = Conv2d<T>::make(4 * cd, cd, 3, 3, 1, 1, 1, 1, rng.split("out_conv"));
        m.head = Conv2d<T>::make(cd, 1, 1, 1, 1, 1, 0, 0, rng.split("head"));
        return m;
    }

    Tensor<T> combine(const Tensor<T>& a, const Tensor<T>& b) const {
        return variant == CidmVariant::Multiplicative ? mul(a, b) : add(a, b);
    }

    // f2/f3/f4 at strides 8/16/32; outputs aligned on the stride-8 grid.
    CidmAligned<T> align(const Tensor<T>& f2, const Tensor<T>& f3, const Tensor<T>& f4) const {
        if (f3.dim(2) * 2 != f2.dim(2) || f4.dim(2) * 4 != f2.dim(2) ||
            f3.dim(3) * 2 != f2.dim(3) || f4.dim(3) * 4 != f2.dim(3))
            op_error("cidm_align", "pyramid shapes inconsistent with stride ratios: f2 " +
                                       shape_str(f2.shape()) + " f3 " + shape_str(f3.shape()) +
                                       " f4 " + shape_str(f4.shape()));
        Tensor<T> f2p = proj2.forward(f2);
        Tensor<T> f3p = proj3.forward(f3);
        Tensor<T> f4p = proj4.forward(f4);
        CidmAligned<T> out;
        out.F4 = bilinear_upsample(f4p, 4);
        out.F3 = bilinear_upsample(combine(fuse_f3.forward(bilinear_upsample(f4p, 2)), f3p), 2);
        out.F2 = fuse_f2_outer.forward(combine(
            combine(bilinear_upsample(f4p, 4), fuse_f2_inner.forward(bilinear_upsample(f3p, 2))),
            f2p));
        return out;
    }

    DecoderOutput<T> interact(const CidmAligned<T>& a) const {
        if (a.F2.shape() != a.F3.shape() || a.F2.shape() != a.F4.shape())
            op_error("cidm_interact", "aligned features disagree in shape");
        Tensor<T> f31 = mul(a.F3, ca.forward(a.F4));
        Tensor<T> f32 = mul(a.F3, sa.forward(a.F2));
        Tensor<T> fhat = out_conv.forward(concat<T>({a.F2, f31, f32, a.F4}, 1));
        DecoderOutput<T> out;
        out.fhat = fhat;
        out.p = head.forward(fhat);
        return out;
    }

    DecoderOutput<T> forward(const Tensor<T>& f2, const Tensor<T>& f3, const Tensor<T>& f4) const {
        return interact(align(f2, f3, f4));
    }

    void collect(const std::string& prefix, ParamMap<T>& pm) const {
        proj2.collect(prefix + ".proj2", pm);
        proj3.collect(prefix + ".proj3", pm);
        proj4.collect(prefix + ".proj4", pm);
        fuse_f3.collect(prefix + ".fuse_f3", pm);
        fuse_f2_inner.collect(prefix + ".fuse_f2_inner", pm);
        fuse_f2_outer.collect(prefix + ".fuse_f2_outer", pm);
        ca.collect(prefix + ".ca", pm);
        sa.collect(prefix + ".sa", pm);
        out_conv.collect(prefix + ".out_conv", pm);
        head.collect(prefix + ".head", pm);
    }
};

}  // namespace fseg
