#pragma once

// The three reused attention gates: channel attention (CBAM channel gate),
// spatial attention (CBAM spatial gate), efficient channel attention.
// Each returns a sigmoid gate; the caller multiplies.

#include "fseg/nn_ops.hpp"

namespace fseg {

template <typename T>
struct ChannelAttention {
    Linear<T> fc1;  // C -> C/r
    Linear<T> fc2;  // C/r -> C
    size_t channels = 0;

    static ChannelAttention make(size_t ch, size_t reduction, Rng rng) {
        ChannelAttention ca;
        ca.channels = ch;
        const size_t hidden = std::max<size_t>(1, ch / reduction);
        ca.fc1 = Linear<T>::make(ch, hidden, rng.split("fc1"));
        ca.fc2 = Linear<T>::make(hidden, ch, rng.split("fc2"));
        return ca;
    }

    // gate [B,C,1,1] = sigmoid(MLP(avgpool) + MLP(maxpool))
    Tensor<T> forward(const Tensor<T>& x) const {
        Tensor<T> avg = global_avg_pool(x);
        Tensor<T> mx = global_max_pool(x);
        Tensor<T> a = fc2.forward(relu(fc1.forward(avg)));
        Tensor<T> m = fc2.forward(relu(fc1.forward(mx)));
        Tensor<T> gate = sigmoid(add(a, m));
        return reshape(gate, Shape{x.dim(0), x.dim(1), 1, 1});
    }

    void collect(const std::string& prefix, ParamMap<T>& pm) const {
        fc1.collect(prefix + ".fc1", pm);
        fc2.collect(prefix + ".fc2", pm);
    }
};

template <typename T>
struct SpatialAttention {
    Conv2d<T> conv;  // 2 -> 1, 7x7, pad 3

    static SpatialAttention make(Rng rng) {
        SpatialAttention sa;
        sa.conv = Conv2d<T>::make(2, 1, 7, 7, 1, 1, 3, 3, rng);
        return sa;
    }

    // gate [B,1,H,W] = sigmoid(conv7x7(concat(channel-max, channel-mean)))
    Tensor<T> forward(const Tensor<T>& x) const {
        Tensor<T> mx = max_axis(x, 1);
        Tensor<T> avg = mean_axes(x, {1});
        return sigmoid(conv.forward(concat<T>({mx, avg}, 1)));
    }

    void collect(const std::string& prefix, ParamMap<T>& pm) const {
        conv.collect(prefix + ".conv", pm);
    }
};

template <typename T>
struct EfficientChannelAttention {
    Tensor<T> weight;  // [k]
    Tensor<T> bias;    // [1]

    static EfficientChannelAttention make(size_t kernel, Rng rng) {
        if (kernel % 2 == 0) op_error("eca", "kernel size must be odd");
        EfficientChannelAttention e;
        std::vector<T> w(kernel);
        for (auto& v : w) v = T(rng.normal(0.0, std::sqrt(2.0 / (double)kernel)));
        e.weight = Tensor<T>(Shape{kernel}, std::move(w), true);
        e.bias = Tensor<T>::zeros(Shape{1}, true);
        return e;
    }

    // gate [B,C,1,1] = sigmoid(conv1d_k over the channel sequence of GAP(x))
    Tensor<T> forward(const Tensor<T>& x) const {
        Tensor<T> gap = global_avg_pool(x);
        Tensor<T> gate = sigmoid(conv1d_channels(gap, weight, bias));
        return reshape(gate, Shape{x.dim(0), x.dim(1), 1, 1});
    }

    void collect(const std::string& prefix, ParamMap<T>& pm) const {
        pm.add(prefix + ".weight", weight);
        pm.add(prefix + ".bias", bias);
    }
};

}  // namespace fseg
