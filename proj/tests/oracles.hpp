#pragma once

// Independent loop-based reference implementations used by the test suites.
// Everything here is written against plain double buffers, with no reuse of
// the library's compute kernels, so agreement is meaningful.

#include <cmath>
#include <vector>

#include "fseg/tensor.hpp"

namespace oracle {

struct Arr {
    fseg::Shape shape;
    std::vector<double> v;

    size_t dim(size_t i) const { return shape[i]; }
    size_t size() const { return v.size(); }
};

template <typename T>
inline Arr from_tensor(const fseg::Tensor<T>& t) {
    Arr a;
    a.shape = t.shape();
    a.v.assign(t.data().begin(), t.data().end());
    return a;
}

inline double max_abs_diff(const Arr& a, const std::vector<double>& b) {
    double m = 0.0;
    for (size_t i = 0; i < a.v.size(); ++i) m = std::max(m, std::fabs(a.v[i] - b[i]));
    return m;
}

template <typename T>
inline double max_abs_diff(const fseg::Tensor<T>& t, const Arr& b) {
    double m = 0.0;
    for (size_t i = 0; i < t.size(); ++i) m = std::max(m, std::fabs((double)t.data()[i] - b.v[i]));
    return m;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// ---------------------------------------------------------------------------
// Spatial primitives

inline Arr conv2d(const Arr& x, const Arr& w, const Arr& b, size_t sy, size_t sx, size_t py,
                  size_t px) {
    const size_t B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
    const size_t Co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    const size_t Ho = (H + 2 * py - kh) / sy + 1;
    const size_t Wo = (W + 2 * px - kw) / sx + 1;
    Arr out{{B, Co, Ho, Wo}, std::vector<double>(B * Co * Ho * Wo)};
    for (size_t n = 0; n < B; ++n)
        for (size_t co = 0; co < Co; ++co)
            for (size_t oy = 0; oy < Ho; ++oy)
                for (size_t ox = 0; ox < Wo; ++ox) {
                    double acc = b.v[co];
                    for (size_t ci = 0; ci < Ci; ++ci)
                        for (size_t ky = 0; ky < kh; ++ky)
                            for (size_t kx = 0; kx < kw; ++kx) {
                                const long yy = (long)(oy * sy + ky) - (long)py;
                                const long xx = (long)(ox * sx + kx) - (long)px;
                                if (yy < 0 || yy >= (long)H || xx < 0 || xx >= (long)W) continue;
                                acc += w.v[((co * Ci + ci) * kh + ky) * kw + kx] *
                                       x.v[((n * Ci + ci) * H + yy) * W + xx];
                            }
                    out.v[((n * Co + co) * Ho + oy) * Wo + ox] = acc;
                }
    return out;
}

inline double bilinear_read(const std::vector<double>& plane, size_t H, size_t W, double ry,
                            double rx) {
    // zero padding outside the plane
    const long y0 = (long)std::floor(ry), x0 = (long)std::floor(rx);
    const double fy = ry - (double)y0, fx = rx - (double)x0;
    double acc = 0.0;
    for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx) {
            const long yy = y0 + dy, xx = x0 + dx;
            if (yy < 0 || yy >= (long)H || xx < 0 || xx >= (long)W) continue;
            acc += (dy ? fy : 1.0 - fy) * (dx ? fx : 1.0 - fx) * plane[yy * W + xx];
        }
    return acc;
}

inline Arr deform_conv2d(const Arr& x, const Arr& off, const Arr& w, const Arr& b, size_t sy,
                         size_t sx, size_t py, size_t px) {
    const size_t B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
    const size_t Co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    const size_t Ho = (H + 2 * py - kh) / sy + 1;
    const size_t Wo = (W + 2 * px - kw) / sx + 1;
    Arr out{{B, Co, Ho, Wo}, std::vector<double>(B * Co * Ho * Wo)};
    for (size_t n = 0; n < B; ++n)
        for (size_t co = 0; co < Co; ++co)
            for (size_t oy = 0; oy < Ho; ++oy)
                for (size_t ox = 0; ox < Wo; ++ox) {
                    double acc = b.v[co];
                    for (size_t ky = 0; ky < kh; ++ky)
                        for (size_t kx = 0; kx < kw; ++kx) {
                            const size_t t = ky * kw + kx;
                            const double dy =
                                off.v[((n * 2 * kh * kw + 2 * t) * Ho + oy) * Wo + ox];
                            const double dx =
                                off.v[((n * 2 * kh * kw + 2 * t + 1) * Ho + oy) * Wo + ox];
                            const double ry = (double)((long)(oy * sy + ky) - (long)py) + dy;
                            const double rx = (double)((long)(ox * sx + kx) - (long)px) + dx;
                            for (size_t ci = 0; ci < Ci; ++ci) {
                                std::vector<double> plane(
                                    x.v.begin() + (n * Ci + ci) * H * W,
                                    x.v.begin() + (n * Ci + ci + 1) * H * W);
                                acc += w.v[((co * Ci + ci) * kh + ky) * kw + kx] *
                                       bilinear_read(plane, H, W, ry, rx);
                            }
                        }
                    out.v[((n * Co + co) * Ho + oy) * Wo + ox] = acc;
                }
    return out;
}

inline Arr bilinear_resize(const Arr& x, size_t Ho, size_t Wo) {
    const size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    Arr out{{B, C, Ho, Wo}, std::vector<double>(B * C * Ho * Wo)};
    if (Ho == H && Wo == W) {
        out.v = x.v;
        return out;
    }
    for (size_t n = 0; n < B; ++n)
        for (size_t c = 0; c < C; ++c)
            for (size_t oy = 0; oy < Ho; ++oy)
                for (size_t ox = 0; ox < Wo; ++ox) {
                    double sy = ((double)oy + 0.5) * (double)H / (double)Ho - 0.5;
                    double sx = ((double)ox + 0.5) * (double)W / (double)Wo - 0.5;
                    sy = std::min(std::max(sy, 0.0), (double)(H - 1));
                    sx = std::min(std::max(sx, 0.0), (double)(W - 1));
                    const size_t y0 = (size_t)sy, x0 = (size_t)sx;
                    const size_t y1 = std::min(y0 + 1, H - 1), x1 = std::min(x0 + 1, W - 1);
                    const double fy = sy - (double)y0, fx = sx - (double)x0;
                    const double* p = x.v.data() + (n * C + c) * H * W;
                    out.v[((n * C + c) * Ho + oy) * Wo + ox] =
                        (1 - fy) * ((1 - fx) * p[y0 * W + x0] + fx * p[y0 * W + x1]) +
                        fy * ((1 - fx) * p[y1 * W + x0] + fx * p[y1 * W + x1]);
                }
    return out;
}

inline Arr adaptive_avg_pool(const Arr& x, size_t ho, size_t wo) {
    const size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    Arr out{{B, C, ho, wo}, std::vector<double>(B * C * ho * wo)};
    for (size_t n = 0; n < B; ++n)
        for (size_t c = 0; c < C; ++c)
            for (size_t oy = 0; oy < ho; ++oy)
                for (size_t ox = 0; ox < wo; ++ox) {
                    const size_t y0 = oy * H / ho, y1 = ((oy + 1) * H + ho - 1) / ho;
                    const size_t x0 = ox * W / wo, x1 = ((ox + 1) * W + wo - 1) / wo;
                    double acc = 0.0;
                    for (size_t y = y0; y < y1; ++y)
                        for (size_t xx = x0; xx < x1; ++xx)
                            acc += x.v[((n * C + c) * H + y) * W + xx];
                    out.v[((n * C + c) * ho + oy) * wo + ox] =
                        acc / (double)((y1 - y0) * (x1 - x0));
                }
    return out;
}

// ---------------------------------------------------------------------------
// Elementwise & channel helpers on feature maps [B,C,H,W]

inline Arr map(const Arr& x, double (*f)(double)) {
    Arr out = x;
    for (auto& v : out.v) v = f(v);
    return out;
}

inline Arr hadamard(const Arr& a, const Arr& b) {
    // b may be [B,C,1,1] or [B,1,H,W] or the full shape
    Arr out = a;
    const size_t B = a.dim(0), C = a.dim(1), H = a.dim(2), W = a.dim(3);
    for (size_t n = 0; n < B; ++n)
        for (size_t c = 0; c < C; ++c)
            for (size_t y = 0; y < H; ++y)
                for (size_t x = 0; x < W; ++x) {
                    const size_t bc = b.dim(1) == 1 ? 0 : c;
                    const size_t by = b.dim(2) == 1 ? 0 : y;
                    const size_t bx = b.dim(3) == 1 ? 0 : x;
                    out.v[((n * C + c) * H + y) * W + x] *=
                        b.v[((n * b.dim(1) + bc) * b.dim(2) + by) * b.dim(3) + bx];
                }
    return out;
}

inline Arr sum(const Arr& a, const Arr& b) {
    Arr out = a;
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] += b.v[i];
    return out;
}

// linear map along channels: weight [in,out], bias [out]
inline Arr pixelwise_linear(const Arr& x, const Arr& w, const Arr& b) {
    const size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const size_t out_ch = b.size();
    Arr out{{B, out_ch, H, W}, std::vector<double>(B * out_ch * H * W)};
    for (size_t n = 0; n < B; ++n)
        for (size_t o = 0; o < out_ch; ++o)
            for (size_t y = 0; y < H; ++y)
                for (size_t x2 = 0; x2 < W; ++x2) {
                    double acc = b.v[o];
                    for (size_t c = 0; c < C; ++c)
                        acc += w.v[c * out_ch + o] * x.v[((n * C + c) * H + y) * W + x2];
                    out.v[((n * out_ch + o) * H + y) * W + x2] = acc;
                }
    return out;
}

// CBAM channel gate from MLP weights: returns [B,C,1,1]
inline Arr channel_gate(const Arr& x, const Arr& w1, const Arr& b1, const Arr& w2,
                        const Arr& b2) {
    const size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const size_t hidden = b1.size();
    Arr gate{{B, C, 1, 1}, std::vector<double>(B * C)};
    for (size_t n = 0; n < B; ++n) {
        std::vector<double> avg(C, 0.0), mx(C, -1e300);
        for (size_t c = 0; c < C; ++c)
            for (size_t i = 0; i < H * W; ++i) {
                const double v = x.v[(n * C + c) * H * W + i];
                avg[c] += v / (double)(H * W);
                mx[c] = std::max(mx[c], v);
            }
        auto mlp = [&](const std::vector<double>& in) {
            std::vector<double> h(hidden), o(C);
            for (size_t j = 0; j < hidden; ++j) {
                h[j] = b1.v[j];
                for (size_t c = 0; c < C; ++c) h[j] += w1.v[c * hidden + j] * in[c];
                h[j] = std::max(0.0, h[j]);
            }
            for (size_t c = 0; c < C; ++c) {
                o[c] = b2.v[c];
                for (size_t j = 0; j < hidden; ++j) o[c] += w2.v[j * C + c] * h[j];
            }
            return o;
        };
        auto oa = mlp(avg), om = mlp(mx);
        for (size_t c = 0; c < C; ++c) gate.v[n * C + c] = sigmoid(oa[c] + om[c]);
    }
    return gate;
}

// CBAM spatial gate from the 7x7 conv weights: returns [B,1,H,W]
inline Arr spatial_gate(const Arr& x, const Arr& w, const Arr& b) {
    const size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    Arr stats{{B, 2, H, W}, std::vector<double>(B * 2 * H * W)};
    for (size_t n = 0; n < B; ++n)
        for (size_t i = 0; i < H * W; ++i) {
            double mx = -1e300, avg = 0.0;
            for (size_t c = 0; c < C; ++c) {
                const double v = x.v[(n * C + c) * H * W + i];
                mx = std::max(mx, v);
                avg += v / (double)C;
            }
            stats.v[(n * 2 + 0) * H * W + i] = mx;
            stats.v[(n * 2 + 1) * H * W + i] = avg;
        }
    return map(conv2d(stats, w, b, 1, 1, 3, 3), sigmoid);
}

// ECA gate: sliding 1-d window over per-channel global averages, [B,C,1,1]
inline Arr eca_gate(const Arr& x, const Arr& w, const Arr& b) {
    const size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const size_t k = w.size();
    const long r = (long)(k / 2);
    Arr gate{{B, C, 1, 1}, std::vector<double>(B * C)};
    for (size_t n = 0; n < B; ++n) {
        std::vector<double> gap(C, 0.0);
        for (size_t c = 0; c < C; ++c)
            for (size_t i = 0; i < H * W; ++i)
                gap[c] += x.v[(n * C + c) * H * W + i] / (double)(H * W);
        for (size_t c = 0; c < C; ++c) {
            double acc = b.v[0];
            for (size_t j = 0; j < k; ++j) {
                const long cc = (long)c + (long)j - r;
                if (cc < 0 || cc >= (long)C) continue;
                acc += w.v[j] * gap[cc];
            }
            gate.v[n * C + c] = sigmoid(acc);
        }
    }
    return gate;
}

// batch-stat normalization (train mode), eps 1e-5
inline Arr batchnorm_train(const Arr& x, const Arr& gamma, const Arr& beta) {
    const size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const size_t n = B * H * W;
    Arr out = x;
    for (size_t c = 0; c < C; ++c) {
        double mu = 0.0, var = 0.0;
        for (size_t b2 = 0; b2 < B; ++b2)
            for (size_t i = 0; i < H * W; ++i) mu += x.v[(b2 * C + c) * H * W + i] / (double)n;
        for (size_t b2 = 0; b2 < B; ++b2)
            for (size_t i = 0; i < H * W; ++i) {
                const double d = x.v[(b2 * C + c) * H * W + i] - mu;
                var += d * d / (double)n;
            }
        const double inv = 1.0 / std::sqrt(var + 1e-5);
        for (size_t b2 = 0; b2 < B; ++b2)
            for (size_t i = 0; i < H * W; ++i)
                out.v[(b2 * C + c) * H * W + i] =
                    (x.v[(b2 * C + c) * H * W + i] - mu) * inv * gamma.v[c] + beta.v[c];
    }
    return out;
}

inline Arr relu(const Arr& x) {
    Arr out = x;
    for (auto& v : out.v) v = std::max(0.0, v);
    return out;
}

}  // namespace oracle
