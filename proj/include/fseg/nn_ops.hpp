#pragma once

// Network primitives: standard and deformable convolution, batch norm,
// resizing, pooling, linear, dropout, and the neighborhood gather used by the
// windowed attention path. All are differentiable through the tensor graph.

#include <cmath>
#include <memory>
#include <vector>

#include "fseg/params.hpp"
#include "fseg/random.hpp"
#include "fseg/tensor.hpp"

namespace fseg {

// ---------------------------------------------------------------------------
// conv2d: cross-correlation + bias. x [B,Ci,H,W], w [Co,Ci,kh,kw], b [Co].

inline size_t conv_out_extent(size_t in, size_t k, size_t stride, size_t pad) {
    return (in + 2 * pad - k) / stride + 1;
}

template <typename T>
inline Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                        size_t sy, size_t sx, size_t py, size_t px) {
    if (x.rank() != 4 || w.rank() != 4) op_error("conv2d", "expects 4-d input and weight");
    const size_t B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
    const size_t Co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    if (w.dim(1) != Ci)
        op_error("conv2d", "channel mismatch: input has " + std::to_string(Ci) +
                               ", weight expects " + std::to_string(w.dim(1)));
    if (b.size() != Co) op_error("conv2d", "bias size mismatch");
    if (H + 2 * py < kh || W + 2 * px < kw) op_error("conv2d", "input smaller than kernel");
    const size_t Ho = conv_out_extent(H, kh, sy, py);
    const size_t Wo = conv_out_extent(W, kw, sx, px);

    auto pxi = x.impl();
    auto pw = w.impl();
    auto pb = b.impl();
    std::vector<T> out(B * Co * Ho * Wo);
    for (size_t n = 0; n < B; ++n)
        for (size_t co = 0; co < Co; ++co)
            for (size_t oy = 0; oy < Ho; ++oy)
                for (size_t ox = 0; ox < Wo; ++ox) {
                    T acc = pb->data[co];
                    for (size_t ci = 0; ci < Ci; ++ci)
                        for (size_t ky = 0; ky < kh; ++ky) {
                            const long iy = (long)(oy * sy + ky) - (long)py;
                            if (iy < 0 || iy >= (long)H) continue;
                            for (size_t kx = 0; kx < kw; ++kx) {
                                const long ix = (long)(ox * sx + kx) - (long)px;
                                if (ix < 0 || ix >= (long)W) continue;
                                acc += pw->data[((co * Ci + ci) * kh + ky) * kw + kx] *
                                       pxi->data[((n * Ci + ci) * H + iy) * W + ix];
                            }
                        }
                    out[((n * Co + co) * Ho + oy) * Wo + ox] = acc;
                }

    bool tracked = track_grad<T>({x, w, b});
    return make_node<T>(
        Shape{B, Co, Ho, Wo}, std::move(out), tracked, {pxi, pw, pb},
        [=](TensorImpl<T>& self) {
            const bool gx = pxi->requires_grad, gw = pw->requires_grad, gb = pb->requires_grad;
            if (gx) pxi->ensure_grad();
            if (gw) pw->ensure_grad();
            if (gb) pb->ensure_grad();
            for (size_t n = 0; n < B; ++n)
                for (size_t co = 0; co < Co; ++co)
                    for (size_t oy = 0; oy < Ho; ++oy)
                        for (size_t ox = 0; ox < Wo; ++ox) {
                            const T g = self.grad[((n * Co + co) * Ho + oy) * Wo + ox];
                            if (g == T(0)) continue;
                            if (gb) pb->grad[co] += g;
                            for (size_t ci = 0; ci < Ci; ++ci)
                                for (size_t ky = 0; ky < kh; ++ky) {
                                    const long iy = (long)(oy * sy + ky) - (long)py;
                                    if (iy < 0 || iy >= (long)H) continue;
                                    for (size_t kx = 0; kx < kw; ++kx) {
                                        const long ix = (long)(ox * sx + kx) - (long)px;
                                        if (ix < 0 || ix >= (long)W) continue;
                                        const size_t wi = ((co * Ci + ci) * kh + ky) * kw + kx;
                                        const size_t xi = ((n * Ci + ci) * H + iy) * W + ix;
                                        if (gx) pxi->grad[xi] += g * pw->data[wi];
                                        if (gw) pw->grad[wi] += g * pxi->data[xi];
                                    }
                                }
                        }
        });
}

template <typename T>
struct Conv2d {
    Tensor<T> weight;  // [Co,Ci,kh,kw]
    Tensor<T> bias;    // [Co]
    size_t sy = 1, sx = 1, py = 0, px = 0;

    static Conv2d make(size_t in_ch, size_t out_ch, size_t kh, size_t kw, size_t sy, size_t sx,
                       size_t py, size_t px, Rng rng) {
        Conv2d c;
        const size_t fan_in = in_ch * kh * kw;
        const T std_dev = std::sqrt(T(2) / T(fan_in));
        std::vector<T> w(out_ch * in_ch * kh * kw);
        for (auto& v : w) v = T(rng.normal(0.0, (double)std_dev));
        c.weight = Tensor<T>(Shape{out_ch, in_ch, kh, kw}, std::move(w), true);
        c.bias = Tensor<T>::zeros(Shape{out_ch}, true);
        c.sy = sy;
        c.sx = sx;
        c.py = py;
        c.px = px;
        return c;
    }

    Tensor<T> forward(const Tensor<T>& x) const { return conv2d(x, weight, bias, sy, sx, py, px); }

    void collect(const std::string& prefix, ParamMap<T>& pm) const {
        pm.add(prefix + ".weight", weight);
        pm.add(prefix + ".bias", bias);
    }

    size_t param_count() const { return weight.size() + bias.size(); }
};

// ---------------------------------------------------------------------------
// Deformable convolution, DCNv1 semantics: per-tap offsets sampled bilinearly,
// zero outside the input, no modulation mask. Offsets come from a sibling conv
// initialized to zero so a fresh module reduces to standard convolution.
//
// offsets: [B, 2*kh*kw, Ho, Wo], channel 2t = dy, 2t+1 = dx for tap t.

template <typename T>
inline Tensor<T> deform_conv2d_raw(const Tensor<T>& x, const Tensor<T>& offsets,
                                   const Tensor<T>& w, const Tensor<T>& b, size_t sy, size_t sx,
                                   size_t py, size_t px) {
    const size_t B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
    const size_t Co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    if (w.dim(1) != Ci) op_error("deform_conv2d", "channel mismatch");
    const size_t Ho = conv_out_extent(H, kh, sy, py);
    const size_t Wo = conv_out_extent(W, kw, sx, px);
    if (offsets.shape() != Shape{B, 2 * kh * kw, Ho, Wo})
        shape_error("deform_conv2d offsets", offsets.shape(), Shape{B, 2 * kh * kw, Ho, Wo});

    auto pxi = x.impl();
    auto po = offsets.impl();
    auto pw = w.impl();
    auto pb = b.impl();

    auto sample = [&](size_t n, size_t ci, T ry, T rx) -> T {
        // Bilinear read with zero padding outside [0,H)x[0,W).
        const long y0 = (long)std::floor(ry), x0 = (long)std::floor(rx);
        const T fy = ry - (T)y0, fx = rx - (T)x0;
        T acc = 0;
        for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
                const long yy = y0 + dy, xx = x0 + dx;
                if (yy < 0 || yy >= (long)H || xx < 0 || xx >= (long)W) continue;
                const T wgt = (dy ? fy : T(1) - fy) * (dx ? fx : T(1) - fx);
                acc += wgt * pxi->data[((n * Ci + ci) * H + yy) * W + xx];
            }
        return acc;
    };

    std::vector<T> out(B * Co * Ho * Wo);
    for (size_t n = 0; n < B; ++n)
        for (size_t oy = 0; oy < Ho; ++oy)
            for (size_t ox = 0; ox < Wo; ++ox) {
                for (size_t co = 0; co < Co; ++co) {
                    T acc = pb->data[co];
                    for (size_t ky = 0; ky < kh; ++ky)
                        for (size_t kx = 0; kx < kw; ++kx) {
                            const size_t t = ky * kw + kx;
                            const T dy = po->data[((n * 2 * kh * kw + 2 * t) * Ho + oy) * Wo + ox];
                            const T dx =
                                po->data[((n * 2 * kh * kw + 2 * t + 1) * Ho + oy) * Wo + ox];
                            const T ry = (T)((long)(oy * sy + ky) - (long)py) + dy;
                            const T rx = (T)((long)(ox * sx + kx) - (long)px) + dx;
                            for (size_t ci = 0; ci < Ci; ++ci)
                                acc += pw->data[((co * Ci + ci) * kh + ky) * kw + kx] *
                                       sample(n, ci, ry, rx);
                        }
                    out[((n * Co + co) * Ho + oy) * Wo + ox] = acc;
                }
            }

    bool tracked = track_grad<T>({x, offsets, w, b});
    return make_node<T>(
        Shape{B, Co, Ho, Wo}, std::move(out), tracked, {pxi, po, pw, pb},
        [=](TensorImpl<T>& self) {
            const bool gx = pxi->requires_grad, go = po->requires_grad, gw = pw->requires_grad,
                       gb = pb->requires_grad;
            if (gx) pxi->ensure_grad();
            if (go) po->ensure_grad();
            if (gw) pw->ensure_grad();
            if (gb) pb->ensure_grad();
            for (size_t n = 0; n < B; ++n)
                for (size_t oy = 0; oy < Ho; ++oy)
                    for (size_t ox = 0; ox < Wo; ++ox)
                        for (size_t ky = 0; ky < kh; ++ky)
                            for (size_t kx = 0; kx < kw; ++kx) {
                                const size_t t = ky * kw + kx;
                                const size_t oyi =
                                    ((n * 2 * kh * kw + 2 * t) * Ho + oy) * Wo + ox;
                                const size_t oxi =
                                    ((n * 2 * kh * kw + 2 * t + 1) * Ho + oy) * Wo + ox;
                                const T dy = po->data[oyi], dx = po->data[oxi];
                                const T ry = (T)((long)(oy * sy + ky) - (long)py) + dy;
                                const T rx = (T)((long)(ox * sx + kx) - (long)px) + dx;
                                const long y0 = (long)std::floor(ry), x0 = (long)std::floor(rx);
                                const T fy = ry - (T)y0, fx = rx - (T)x0;
                                for (size_t co = 0; co < Co; ++co) {
                                    const T g = self.grad[((n * Co + co) * Ho + oy) * Wo + ox];
                                    if (g == T(0)) continue;
                                    if (gb && ky == 0 && kx == 0) pb->grad[co] += g;
                                    for (size_t ci = 0; ci < Ci; ++ci) {
                                        const size_t wi = ((co * Ci + ci) * kh + ky) * kw + kx;
                                        const T wv = pw->data[wi];
                                        T sampled = 0, dsy = 0, dsx = 0;
                                        for (int cy = 0; cy < 2; ++cy)
                                            for (int cx = 0; cx < 2; ++cx) {
                                                const long yy = y0 + cy, xx = x0 + cx;
                                                if (yy < 0 || yy >= (long)H || xx < 0 ||
                                                    xx >= (long)W)
                                                    continue;
                                                const size_t xi =
                                                    ((n * Ci + ci) * H + yy) * W + xx;
                                                const T v = pxi->data[xi];
                                                const T wy = cy ? fy : T(1) - fy;
                                                const T wx = cx ? fx : T(1) - fx;
                                                sampled += wy * wx * v;
                                                dsy += (cy ? T(1) : T(-1)) * wx * v;
                                                dsx += (cx ? T(1) : T(-1)) * wy * v;
                                                if (gx) pxi->grad[xi] += g * wv * wy * wx;
                                            }
                                        if (gw) pw->grad[wi] += g * sampled;
                                        if (go) {
                                            po->grad[oyi] += g * wv * dsy;
                                            po->grad[oxi] += g * wv * dsx;
                                        }
                                    }
                                }
                            }
        });
}

template <typename T>
struct DeformConv2d {
    Conv2d<T> main;
    Conv2d<T> offset_predictor;  // 2*kh*kw output channels, zero-initialized

    static DeformConv2d make(size_t in_ch, size_t out_ch, size_t kh, size_t kw, size_t py,
                             size_t px, Rng rng) {
        DeformConv2d d;
        d.main = Conv2d<T>::make(in_ch, out_ch, kh, kw, 1, 1, py, px, rng);
        d.offset_predictor = Conv2d<T>::make(in_ch, 2 * kh * kw, kh, kw, 1, 1, py, px, rng);
        // Zero init guarantees exact standard-conv behavior at start.
        std::fill(d.offset_predictor.weight.raw_data().begin(),
                  d.offset_predictor.weight.raw_data().end(), T(0));
        return d;
    }

    Tensor<T> forward(const Tensor<T>& x) const {
        Tensor<T> offsets = offset_predictor.forward(x);
        return deform_conv2d_raw(x, offsets, main.weight, main.bias, main.sy, main.sx, main.py,
                                 main.px);
    }

    void collect(const std::string& prefix, ParamMap<T>& pm) const {
        main.collect(prefix + ".main", pm);
        offset_predictor.collect(prefix + ".offset", pm);
    }
};

// ---------------------------------------------------------------------------
// Bilinear resize, half-pixel-center convention (align_corners=false), edge
// clamped. Identity when the target equals the source extents.

template <typename T>
inline Tensor<T> bilinear_resize(const Tensor<T>& x, size_t Ho, size_t Wo) {
    if (x.rank() != 4) op_error("bilinear_resize", "expects 4-d input");
    if (Ho == 0 || Wo == 0) op_error("bilinear_resize", "zero target extent");
    const size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (Ho == H && Wo == W) {
        // Exact identity path.
        auto px = x.impl();
        bool tracked = track_grad<T>({x});
        return make_node<T>(x.shape(), px->data, tracked, {px}, [px](TensorImpl<T>& self) {
            if (!px->requires_grad) return;
            px->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) px->grad[i] += self.grad[i];
        });
    }

    struct Tap {
        size_t y0, y1, x0, x1;
        T fy, fx;
    };
    auto taps = std::make_shared<std::vector<Tap>>(Ho * Wo);
    const T scale_y = (T)H / (T)Ho, scale_x = (T)W / (T)Wo;
    for (size_t oy = 0; oy < Ho; ++oy)
        for (size_t ox = 0; ox < Wo; ++ox) {
            T sy = ((T)oy + T(0.5)) * scale_y - T(0.5);
            T sx = ((T)ox + T(0.5)) * scale_x - T(0.5);
            sy = std::min(std::max(sy, T(0)), (T)(H - 1));
            sx = std::min(std::max(sx, T(0)), (T)(W - 1));
            Tap t;
            t.y0 = (size_t)sy;
            t.x0 = (size_t)sx;
            t.y1 = std::min(t.y0 + 1, H - 1);
            t.x1 = std::min(t.x0 + 1, W - 1);
            t.fy = sy - (T)t.y0;
            t.fx = sx - (T)t.x0;
            (*taps)[oy * Wo + ox] = t;
        }

    auto px = x.impl();
    std::vector<T> out(B * C * Ho * Wo);
    for (size_t n = 0; n < B; ++n)
        for (size_t c = 0; c < C; ++c) {
            const T* plane = px->data.data() + (n * C + c) * H * W;
            T* oplane = out.data() + (n * C + c) * Ho * Wo;
            for (size_t i = 0; i < Ho * Wo; ++i) {
                const Tap& t = (*taps)[i];
                oplane[i] = (T(1) - t.fy) * ((T(1) - t.fx) * plane[t.y0 * W + t.x0] +
                                             t.fx * plane[t.y0 * W + t.x1]) +
                            t.fy * ((T(1) - t.fx) * plane[t.y1 * W + t.x0] +
                                    t.fx * plane[t.y1 * W + t.x1]);
            }
        }
    bool tracked = track_grad<T>({x});
    return make_node<T>(Shape{B, C, Ho, Wo}, std::move(out), tracked, {px},
                        [px, taps, B, C, H, W, Ho, Wo](TensorImpl<T>& self) {
                            if (!px->requires_grad) return;
                            px->ensure_grad();
                            for (size_t n = 0; n < B; ++n)
                                for (size_t c = 0; c < C; ++c) {
                                    T* gplane = px->grad.data() + (n * C + c) * H * W;
                                    const T* gout = self.grad.data() + (n * C + c) * Ho * Wo;
                                    for (size_t i = 0; i < Ho * Wo; ++i) {
                                        const auto& t = (*taps)[i];
                                        const T g = gout[i];
                                        gplane[t.y0 * W + t.x0] += g * (T(1) - t.fy) * (T(1) - t.fx);
                                        gplane[t.y0 * W + t.x1] += g * (T(1) - t.fy) * t.fx;
                                        gplane[t.y1 * W + t.x0] += g * t.fy * (T(1) - t.fx);
                                        gplane[t.y1 * W + t.x1] += g * t.fy * t.fx;
                                    }
                                }
                        });
}

template <typename T>
inline Tensor<T> bilinear_upsample(const Tensor<T>& x, size_t factor) {
    return bilinear_resize(x, x.dim(2) * factor, x.dim(3) * factor);
}

// ---------------------------------------------------------------------------
// Adaptive average pooling. Bin i covers [floor(i*H/h), ceil((i+1)*H/h)).

template <typename T>
inline Tensor<T> adaptive_avg_pool(const Tensor<T>& x, size_t ho, size_t wo) {
    if (x.rank() != 4) op_error("adaptive_avg_pool", "expects 4-d input");
    const size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (ho > H || wo > W) op_error("adaptive_avg_pool", "output larger than input");
    auto bin = [](size_t i, size_t in, size_t out) {
        const size_t lo = i * in / out;
        const size_t hi = ((i + 1) * in + out - 1) / out;  // ceil
        return std::pair<size_t, size_t>{lo, hi};
    };
    auto px = x.impl();
    std::vector<T> out(B * C * ho * wo);
    for (size_t n = 0; n < B; ++n)
        for (size_t c = 0; c < C; ++c) {
            const T* plane = px->data.data() + (n * C + c) * H * W;
            for (size_t oy = 0; oy < ho; ++oy) {
                auto [y0, y1] = bin(oy, H, ho);
                for (size_t ox = 0; ox < wo; ++ox) {
                    auto [x0, x1] = bin(ox, W, wo);
                    T acc = 0;
                    for (size_t y = y0; y < y1; ++y)
                        for (size_t xx = x0; xx < x1; ++xx) acc += plane[y * W + xx];
                    out[((n * C + c) * ho + oy) * wo + ox] = acc / (T)((y1 - y0) * (x1 - x0));
                }
            }
        }
    bool tracked = track_grad<T>({x});
    return make_node<T>(Shape{B, C, ho, wo}, std::move(out), tracked, {px},
                        [px, bin, B, C, H, W, ho, wo](TensorImpl<T>& self) {
                            if (!px->requires_grad) return;
                            px->ensure_grad();
                            for (size_t n = 0; n < B; ++n)
                                for (size_t c = 0; c < C; ++c) {
                                    T* gplane = px->grad.data() + (n * C + c) * H * W;
                                    for (size_t oy = 0; oy < ho; ++oy) {
                                        auto [y0, y1] = bin(oy, H, ho);
                                        for (size_t ox = 0; ox < wo; ++ox) {
                                            auto [x0, x1] = bin(ox, W, wo);
                                            const T g =
                                                self.grad[((n * C + c) * ho + oy) * wo + ox] /
                                                (T)((y1 - y0) * (x1 - x0));
                                            for (size_t y = y0; y < y1; ++y)
                                                for (size_t xx = x0; xx < x1; ++xx)
                                                    gplane[y * W + xx] += g;
                                        }
                                    }
                                }
                        });
}

// ---------------------------------------------------------------------------
// Neighborhood gather for windowed attention: out[b,t,c,y,x] = x[b,c,y+dy,x+dx]
// for tap t = (dy+r)*w + (dx+r), zero outside borders. Output [B,w*w,C,H,W].

template <typename T>
inline Tensor<T> neighborhood_unfold(const Tensor<T>& x, size_t window) {
    if (x.rank() != 4) op_error("neighborhood_unfold", "expects 4-d input");
    if (window % 2 == 0) op_error("neighborhood_unfold", "window must be odd");
    const size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const size_t ww = window * window;
    const long r = (long)(window / 2);
    auto px = x.impl();
    std::vector<T> out(B * ww * C * H * W, T(0));
    for (size_t n = 0; n < B; ++n)
        for (size_t t = 0; t < ww; ++t) {
            const long dy = (long)(t / window) - r, dx = (long)(t % window) - r;
            for (size_t c = 0; c < C; ++c)
                for (size_t y = 0; y < H; ++y) {
                    const long sy = (long)y + dy;
                    if (sy < 0 || sy >= (long)H) continue;
                    for (size_t xx = 0; xx < W; ++xx) {
                        const long sx = (long)xx + dx;
                        if (sx < 0 || sx >= (long)W) continue;
                        out[(((n * ww + t) * C + c) * H + y) * W + xx] =
                            px->data[((n * C + c) * H + sy) * W + sx];
                    }
                }
        }
    bool tracked = track_grad<T>({x});
    return make_node<T>(Shape{B, ww, C, H, W}, std::move(out), tracked, {px},
                        [px, B, C, H, W, window, ww, r](TensorImpl<T>& self) {
                            if (!px->requires_grad) return;
                            px->ensure_grad();
                            for (size_t n = 0; n < B; ++n)
                                for (size_t t = 0; t < ww; ++t) {
                                    const long dy = (long)(t / window) - r;
                                    const long dx = (long)(t % window) - r;
                                    for (size_t c = 0; c < C; ++c)
                                        for (size_t y = 0; y < H; ++y) {
                                            const long sy = (long)y + dy;
                                            if (sy < 0 || sy >= (long)H) continue;
                                            for (size_t xx = 0; xx < W; ++xx) {
                                                const long sx = (long)xx + dx;
                                                if (sx < 0 || sx >= (long)W) continue;
                                                px->grad[((n * C + c) * H + sy) * W + sx] +=
                                                    self.grad[(((n * ww + t) * C + c) * H + y) * W +
                                                              xx];
                                            }
                                        }
                                }
                        });
}

// ---------------------------------------------------------------------------
// Batch normalization over (B,H,W) per channel, composed from primitives so
// gradients come from the graph. Running stats are plain buffers updated
// outside the graph in train mode.

template <typename T>
struct BatchNorm2d {
    Tensor<T> gamma;  // [C]
    Tensor<T> beta;   // [C]
    Tensor<T> running_mean;  // [C], non-trainable state
    Tensor<T> running_var;   // [C], non-trainable state, >= 0
    T momentum = T(0.1);
    T eps = T(1e-5);

    static BatchNorm2d make(size_t ch) {
        BatchNorm2d bn;
        bn.gamma = Tensor<T>::full(Shape{ch}, T(1), true);
        bn.beta = Tensor<T>::zeros(Shape{ch}, true);
        bn.running_mean = Tensor<T>::zeros(Shape{ch});
        bn.running_var = Tensor<T>::full(Shape{ch}, T(1));
        return bn;
    }

    Tensor<T> forward(const Tensor<T>& x, bool train) {
        const size_t C = x.dim(1);
        if (C != gamma.size()) op_error("batch_norm", "channel mismatch");
        Tensor<T> g = reshape(gamma, Shape{1, C, 1, 1});
        Tensor<T> bt = reshape(beta, Shape{1, C, 1, 1});
        Tensor<T> mu, var;
        if (train) {
            mu = mean_axes(x, {0, 2, 3});
            Tensor<T> xc = sub(x, mu);
            var = mean_axes(mul(xc, xc), {0, 2, 3});
            const size_t n = x.dim(0) * x.dim(2) * x.dim(3);
            for (size_t c = 0; c < C; ++c) {
                running_mean.raw_data()[c] =
                    (T(1) - momentum) * running_mean.data()[c] + momentum * mu.data()[c];
                // Unbiased variance for the running estimate.
                T uv = var.data()[c] * (T)n / (T)(n > 1 ? n - 1 : 1);
                running_var.raw_data()[c] = (T(1) - momentum) * running_var.data()[c] + momentum * uv;
            }
        } else {
            mu = reshape(running_mean, Shape{1, C, 1, 1});
            var = reshape(running_var, Shape{1, C, 1, 1});
        }
        Tensor<T> inv = div(ones_like(var), sqrt_t(add_scalar(var, eps)));
        return add(mul(mul(sub(x, mu), inv), g), bt);
    }

    void collect(const std::string& prefix, ParamMap<T>& pm) const {
        pm.add(prefix + ".gamma", gamma);
        pm.add(prefix + ".beta", beta);
        pm.add(prefix + ".running_mean", running_mean);
        pm.add(prefix + ".running_var", running_var);
    }
};

// ---------------------------------------------------------------------------
// Linear layers

template <typename T>
inline Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    // x [m,k], w [k,n], b [n]
    Tensor<T> y = matmul(x, w);
    return add(y, reshape(b, Shape{1, b.size()}));
}

template <typename T>
struct Linear {
    Tensor<T> weight;  // [in,out]
    Tensor<T> bias;    // [out]

    static Linear make(size_t in, size_t out, Rng rng) {
        Linear l;
        const T std_dev = std::sqrt(T(2) / T(in));
        std::vector<T> w(in * out);
        for (auto& v : w) v = T(rng.normal(0.0, (double)std_dev));
        l.weight = Tensor<T>(Shape{in, out}, std::move(w), true);
        l.bias = Tensor<T>::zeros(Shape{out}, true);
        return l;
    }

    Tensor<T> forward(const Tensor<T>& x) const { return linear(x, weight, bias); }

    void collect(const std::string& prefix, ParamMap<T>& pm) const {
        pm.add(prefix + ".weight", weight);
        pm.add(prefix + ".bias", bias);
    }
};

// Apply a linear map across the channel axis of a feature map:
// [B,C,H,W] -> [B,out,H,W].
template <typename T>
inline Tensor<T> pixelwise_linear(const Tensor<T>& x, const Linear<T>& l) {
    const size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    Tensor<T> flat = reshape(permute(x, {0, 2, 3, 1}), Shape{B * H * W, C});
    Tensor<T> y = l.forward(flat);
    const size_t out = l.bias.size();
    return permute(reshape(y, Shape{B, H, W, out}), {0, 3, 1, 2});
}

// ---------------------------------------------------------------------------
// Dropout: scales survivors by 1/(1-rate) in train mode, identity in eval.

template <typename T>
inline Tensor<T> dropout(const Tensor<T>& x, T rate, Rng& rng, bool train) {
    if (!train || rate <= T(0)) return x;
    if (rate >= T(1)) op_error("dropout", "rate must be < 1");
    std::vector<T> mask(x.size());
    const T keep = T(1) / (T(1) - rate);
    for (auto& m : mask) m = rng.uniform() < (double)rate ? T(0) : keep;
    return mul(x, Tensor<T>(x.shape(), std::move(mask)));
}

// ---------------------------------------------------------------------------
// 1-D convolution over the channel axis of [B,C] rows (ECA), zero padded.

template <typename T>
inline Tensor<T> conv1d_channels(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    if (x.rank() != 2 || w.rank() != 1 || b.size() != 1)
        op_error("conv1d_channels", "expects x [B,C], kernel [k], bias [1]");
    const size_t B = x.dim(0), C = x.dim(1), k = w.size();
    if (k % 2 == 0) op_error("conv1d_channels", "kernel size must be odd");
    const long r = (long)(k / 2);
    auto pxi = x.impl();
    auto pw = w.impl();
    auto pb = b.impl();
    std::vector<T> out(B * C);
    for (size_t n = 0; n < B; ++n)
        for (size_t c = 0; c < C; ++c) {
            T acc = pb->data[0];
            for (size_t j = 0; j < k; ++j) {
                const long cc = (long)c + (long)j - r;
                if (cc < 0 || cc >= (long)C) continue;
                acc += pw->data[j] * pxi->data[n * C + cc];
            }
            out[n * C + c] = acc;
        }
    bool tracked = track_grad<T>({x, w, b});
    return make_node<T>(Shape{B, C}, std::move(out), tracked, {pxi, pw, pb},
                        [pxi, pw, pb, B, C, k, r](TensorImpl<T>& self) {
                            const bool gx = pxi->requires_grad, gw = pw->requires_grad,
                                       gb = pb->requires_grad;
                            if (gx) pxi->ensure_grad();
                            if (gw) pw->ensure_grad();
                            if (gb) pb->ensure_grad();
                            for (size_t n = 0; n < B; ++n)
                                for (size_t c = 0; c < C; ++c) {
                                    const T g = self.grad[n * C + c];
                                    if (gb) pb->grad[0] += g;
                                    for (size_t j = 0; j < k; ++j) {
                                        const long cc = (long)c + (long)j - r;
                                        if (cc < 0 || cc >= (long)C) continue;
                                        if (gx) pxi->grad[n * C + cc] += g * pw->data[j];
                                        if (gw) pw->grad[j] += g * pxi->data[n * C + cc];
                                    }
                                }
                        });
}

// ---------------------------------------------------------------------------
// Global pools over the spatial axes: [B,C,H,W] -> [B,C]

template <typename T>
inline Tensor<T> global_avg_pool(const Tensor<T>& x) {
    return reshape(mean_axes(x, {2, 3}), Shape{x.dim(0), x.dim(1)});
}

template <typename T>
inline Tensor<T> global_max_pool(const Tensor<T>& x) {
    return reshape(max_axis(max_axis(x, 3), 2), Shape{x.dim(0), x.dim(1)});
}

}  // namespace fseg
