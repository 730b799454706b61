#pragma once

// BCE + Dice segmentation loss with deep supervision over the five head maps.
// BCE is computed from logits in the stable softplus form.

#include <array>

#include "fseg/model.hpp"
#include "fseg/tensor.hpp"

namespace fseg {

// L = mean(softplus(x) - x*t) + (1 - (2*sum(p*t)+eps) / (sum(p)+sum(t)+eps)),
// p = sigmoid(x), eps = 1.
template <typename T>
inline Tensor<T> bce_dice_loss(const Tensor<T>& logits, const Tensor<T>& target,
                               T dice_smooth = T(1)) {
    if (logits.shape() != target.shape()) shape_error("bce_dice_loss", logits.shape(), target.shape());
    for (T v : target.data())
        if (v != T(0) && v != T(1)) op_error("bce_dice_loss", "target is not binary");
    const T inv_n = T(1) / T(logits.size());
    Tensor<T> bce = mul_scalar(sum_all(sub(softplus(logits), mul(logits, target))), inv_n);
    Tensor<T> p = sigmoid(logits);
    Tensor<T> inter = sum_all(mul(p, target));
    Tensor<T> denom = add(sum_all(p), sum_all(target));
    Tensor<T> dice = sub(Tensor<T>::scalar(T(1)),
                         div(add_scalar(mul_scalar(inter, T(2)), dice_smooth),
                             add_scalar(denom, dice_smooth)));
    return add(bce, dice);
}

// Deep supervision: sum of weighted per-head losses over {P1,P2,P3,P4,P-hat}.
template <typename T>
inline Tensor<T> total_loss(const SegmentationHeads<T>& heads, const Tensor<T>& target,
                            const std::array<T, 5>& weights = {1, 1, 1, 1, 1}) {
    const Tensor<T>* maps[5] = {&heads.p1, &heads.p2, &heads.p3, &heads.p4, &heads.phat};
    Tensor<T> loss = Tensor<T>::scalar(T(0));
    for (size_t i = 0; i < 5; ++i) {
        if (weights[i] == T(0)) continue;
        loss = add(loss, mul_scalar(bce_dice_loss(*maps[i], target), weights[i]));
    }
    return loss;
}

}  // namespace fseg
