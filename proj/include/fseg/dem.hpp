#pragma once

// Detail Enhancement Module: the shallow feature is split into four channel
// groups, each run through a 3x1 then 1x3 deformable conv (BN+ReLU after
// each), re-concatenated, then fused through 1x1 conv, an ECA gate, and a
// final 1x1 conv + BN + ReLU.

#include <array>

#include "fseg/attention.hpp"
#include "fseg/nn_ops.hpp"

namespace fseg {

template <typename T>
struct DemBranch {
    DeformConv2d<T> dconv31;  // 3x1, pad (1,0)
    BatchNorm2d<T> bn1;
    DeformConv2d<T> dconv13;  // 1x3, pad (0,1)
    BatchNorm2d<T> bn2;

    static DemBranch make(size_t ch, Rng rng) {
        DemBranch b;
        b.dconv31 = DeformConv2d<T>::make(ch, ch, 3, 1, 1, 0, rng.split("dconv31"));
        b.bn1 = BatchNorm2d<T>::make(ch);
        b.dconv13 = DeformConv2d<T>::make(ch, ch, 1, 3, 0, 1, rng.split("dconv13"));
        b.bn2 = BatchNorm2d<T>::make(ch);
        return b;
    }

    Tensor<T> forward(const Tensor<T>& x, bool train) {
        Tensor<T> y = relu(bn1.forward(dconv31.forward(x), train));
        return relu(bn2.forward(dconv13.forward(y), train));
    }

    void collect(const std::string& prefix, ParamMap<T>& pm) const {
        dconv31.collect(prefix + ".dconv31", pm);
        bn1.collect(prefix + ".bn1", pm);
        dconv13.collect(prefix + ".dconv13", pm);
        bn2.collect(prefix + ".bn2", pm);
    }
};

template <typename T>
struct Dem {
    std::array<DemBranch<T>, 4> branches;
    Conv2d<T> fuse1;  // 1x1, C1 -> C1
    EfficientChannelAttention<T> eca;
    Conv2d<T> fuse2;  // 1x1, C1 -> C1 (the BRU conv)
    BatchNorm2d<T> bn_out;
    // Ablation switch: false keeps the equation order Conv1x1 -> ECA -> BRU,
    // true applies the ECA gate to the concatenated map before both convs.
    bool eca_first = false;

    static Dem make(size_t c1, size_t eca_kernel, Rng rng) {
        if (c1 % 4 != 0)
            op_error("dem", "channel count " + std::to_string(c1) + " not divisible by 4");
        Dem d;
        for (size_t i = 0; i < 4; ++i)
            d.branches[i] = DemBranch<T>::make(c1 / 4, rng.split("branch" + std::to_string(i)));
        d.fuse1 = Conv2d<T>::make(c1, c1, 1, 1, 1, 1, 0, 0, rng.split("fuse1"));
        d.eca = EfficientChannelAttention<T>::make(eca_kernel, rng.split("eca"));
        d.fuse2 = Conv2d<T>::make(c1, c1, 1, 1, 1, 1, 0, 0, rng.split("fuse2"));
        d.bn_out = BatchNorm2d<T>::make(c1);
        return d;
    }

    // f1 [B,C1,H/4,W/4] -> T' with the same shape.
    Tensor<T> forward(const Tensor<T>& f1, bool train) {
        auto groups = split(f1, 1, 4);
        std::vector<Tensor<T>> refined;
        for (size_t i = 0; i < 4; ++i) refined.push_back(branches[i].forward(groups[i], train));
        Tensor<T> cat = concat<T>(refined, 1);
        Tensor<T> gated;
        if (eca_first) {
            Tensor<T> g = mul(cat, eca.forward(cat));
            gated = fuse1.forward(g);
        } else {
            Tensor<T> mid = fuse1.forward(cat);
            gated = mul(mid, eca.forward(mid));
        }
        return relu(bn_out.forward(fuse2.forward(gated), train));
    }

    void collect(const std::string& prefix, ParamMap<T>& pm) const {
        for (size_t i = 0; i < 4; ++i)
            branches[i].collect(prefix + ".branch" + std::to_string(i), pm);
        fuse1.collect(prefix + ".fuse1", pm);
        eca.collect(prefix + ".eca", pm);
        fuse2.collect(prefix + ".fuse2", pm);
        bn_out.collect(prefix + ".bn_out", pm);
    }
};

}  // namespace fseg
