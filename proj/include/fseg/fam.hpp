#pragma once

// Focus Attention Module. A shared query comes from the detail map; keys and
// values come from a decoder feature map through two paths: a sliding w x w
// neighborhood around each query pixel (zero-padded borders) and a p x p
// adaptive-average-pooled global token grid. Both paths compete in one joint
// softmax per pixel. One parameter set serves both decoder outputs.

#include "fseg/attention.hpp"
#include "fseg/nn_ops.hpp"

namespace fseg {

template <typename T>
struct FamConfig {
    size_t embed_dim = 32;     // d
    size_t local_window = 3;   // w, odd
    size_t pool_size = 3;      // p
    size_t head_count = 1;     // must divide d
    size_t width = 32;         // channel width of T'32 / F-hat / O_r
    T dropout_rate = T(0.1);
    bool scale_logits = true;  // 1/sqrt(d/head_count) on the similarity scores
};

// Spatial-layout token set produced by the projection stage.
template <typename T>
struct FamTokens {
    Tensor<T> q;        // [B,d,H,W]
    Tensor<T> k_local;  // [B,w*w,d,H,W]
    Tensor<T> v_local;  // [B,w*w,d,H,W]
    Tensor<T> k_pool;   // [B,p*p,d]
    Tensor<T> v_pool;   // [B,p*p,d]
};

// Per-forward introspection (verification suites read these).
template <typename T>
struct FamState {
    FamTokens<T> tokens;
    Tensor<T> attn;       // [B,heads,w*w+p*p,H,W], post-softmax
    Tensor<T> refined;    // O_r [B,width,H,W]
    Tensor<T> contextual; // O_f [B,width,H,W]
    Tensor<T> p_refined;  // [B,1,H,W]
};

template <typename T>
struct Fam {
    Conv2d<T> t_proj;      // C1 -> 32, 1x1
    Linear<T> q_linear;    // 32 -> d
    Linear<T> kv_local;    // 32 -> 2d
    Linear<T> kv_pool;     // 32 -> 2d
    Linear<T> out_linear;  // d -> 32
    ChannelAttention<T> ca;
    Conv2d<T> refine1, refine2;  // 3x3, 32 -> 32
    Conv2d<T> refine_head;       // 1x1, 32 -> 1
    FamConfig<T> cfg;

    static Fam make(size_t c1, FamConfig<T> cfg, size_t ca_reduction, Rng rng) {
        if (cfg.local_window % 2 == 0) op_error("fam", "local window must be odd");
        if (cfg.embed_dim % cfg.head_count != 0)
            op_error("fam", "embed dim not divisible by head count");
        Fam f;
        f.cfg = cfg;
        f.t_proj = Conv2d<T>::make(c1, cfg.width, 1, 1, 1, 1, 0, 0, rng.split("t_proj"));
        f.q_linear = Linear<T>::make(cfg.width, cfg.embed_dim, rng.split("q_linear"));
        f.kv_local = Linear<T>::make(cfg.width, 2 * cfg.embed_dim, rng.split("kv_local"));
        f.kv_pool = Linear<T>::make(cfg.width, 2 * cfg.embed_dim, rng.split("kv_pool"));
        f.out_linear = Linear<T>::make(cfg.embed_dim, cfg.width, rng.split("out_linear"));
        f.ca = ChannelAttention<T>::make(cfg.width, ca_reduction, rng.split("ca"));
        f.refine1 = Conv2d<T>::make(cfg.width, cfg.width, 3, 3, 1, 1, 1, 1, rng.split("refine1"));
        f.refine2 = Conv2d<T>::make(cfg.width, cfg.width, 3, 3, 1, 1, 1, 1, rng.split("refine2"));
        f.refine_head = Conv2d<T>::make(cfg.width, 1, 1, 1, 1, 1, 0, 0, rng.split("refine_head"));
        return f;
    }

    // t32 and fup both [B,width,H,W] on the detail grid.
    FamTokens<T> tokens(const Tensor<T>& t32, const Tensor<T>& fup) const {
        if (t32.shape() != fup.shape()) shape_error("fam_tokens", t32.shape(), fup.shape());
        const size_t d = cfg.embed_dim, w = cfg.local_window, p = cfg.pool_size;
        const size_t B = fup.dim(0), H = fup.dim(2), W = fup.dim(3);
        FamTokens<T> tk;
        tk.q = pixelwise_linear(t32, q_linear);
        // local: Linear, then neighborhood gather, then channel split
        Tensor<T> kv_l = neighborhood_unfold(pixelwise_linear(fup, kv_local), w);
        auto kl_vl = split(kv_l, 2, 2);
        tk.k_local = kl_vl[0];
        tk.v_local = kl_vl[1];
        // pool: adaptive average pooling, then Linear, then channel split
        Tensor<T> pooled = pixelwise_linear(adaptive_avg_pool(fup, p, p), kv_pool);
        Tensor<T> seq = permute(reshape(pooled, Shape{B, 2 * d, p * p}), {0, 2, 1});
        auto kp_vp = split(seq, 2, 2);
        tk.k_pool = kp_vp[0];
        tk.v_pool = kp_vp[1];
        (void)H;
        (void)W;
        return tk;
    }

    // Joint softmax over the w*w local and p*p pooled keys of every pixel.
    // Returns O_r and the attention map.
    std::pair<Tensor<T>, Tensor<T>> attend(const FamTokens<T>& tk, Rng& rng, bool train) const {
        const size_t d = cfg.embed_dim, h = cfg.head_count, dh = d / h;
        const size_t w2 = cfg.local_window * cfg.local_window;
        const size_t p2 = cfg.pool_size * cfg.pool_size;
        const size_t B = tk.q.dim(0), H = tk.q.dim(2), W = tk.q.dim(3);

        Tensor<T> q6 = reshape(tk.q, Shape{B, 1, h, dh, H, W});
        Tensor<T> kl6 = reshape(tk.k_local, Shape{B, w2, h, dh, H, W});
        Tensor<T> kp6 = reshape(tk.k_pool, Shape{B, p2, h, dh, 1, 1});
        Tensor<T> s_local = sum_axes(mul(q6, kl6), {3});  // [B,w2,h,1,H,W]
        Tensor<T> s_pool = sum_axes(mul(q6, kp6), {3});   // [B,p2,h,1,H,W]
        Tensor<T> logits = concat<T>({reshape(s_local, Shape{B, w2, h, H, W}),
                                      reshape(s_pool, Shape{B, p2, h, H, W})},
                                     1);
        if (cfg.scale_logits) logits = mul_scalar(logits, T(1) / std::sqrt(T(dh)));
        for (T v : logits.data())
            if (!std::isfinite(v)) op_error("fam_attend", "non-finite attention logits");
        Tensor<T> attn = softmax(logits, 1);  // [B,w2+p2,h,H,W]

        Tensor<T> a_local = reshape(slice_axis(attn, 1, 0, w2), Shape{B, w2, h, 1, H, W});
        Tensor<T> a_pool = reshape(slice_axis(attn, 1, w2, p2), Shape{B, p2, h, 1, H, W});
        Tensor<T> vl6 = reshape(tk.v_local, Shape{B, w2, h, dh, H, W});
        Tensor<T> vp6 = reshape(tk.v_pool, Shape{B, p2, h, dh, 1, 1});
        Tensor<T> o_local = sum_axes(mul(a_local, vl6), {1});  // [B,1,h,dh,H,W]
        Tensor<T> o_pool = sum_axes(mul(a_pool, vp6), {1});
        Tensor<T> o = reshape(add(o_local, o_pool), Shape{B, d, H, W});
        Tensor<T> o_r = pixelwise_linear(o, out_linear);
        Rng drop_rng = rng.split("fam_dropout");
        o_r = dropout(o_r, cfg.dropout_rate, drop_rng, train);
        // Report attention as [B,heads,w2+p2,H,W].
        return {o_r, permute(attn, {0, 2, 1, 3, 4})};
    }

    // O_f = O_r (.) (F-hat * CA(F-hat)) (.) T'32;  P' = P + conv stack(O_f)
    std::pair<Tensor<T>, Tensor<T>> fuse(const Tensor<T>& o_r, const Tensor<T>& fup,
                                         const Tensor<T>& t32, const Tensor<T>& p_coarse) const {
        if (p_coarse.dim(2) != fup.dim(2) || p_coarse.dim(3) != fup.dim(3))
            shape_error("fam_fuse", p_coarse.shape(), fup.shape());
        Tensor<T> f_ca = mul(fup, ca.forward(fup));
        Tensor<T> o_f = mul(mul(o_r, f_ca), t32);
        Tensor<T> p_ref =
            add(p_coarse, refine_head.forward(refine2.forward(refine1.forward(o_f))));
        return {p_ref, o_f};
    }

    // Full pass: raw detail map T' [B,C1,H,W]; decoder feature and coarse map
    // at half that resolution (stride 8), upsampled here to the detail grid.
    FamState<T> forward(const Tensor<T>& t_detail, const Tensor<T>& fhat,
                        const Tensor<T>& p_coarse, Rng& rng, bool train) const {
        Tensor<T> t32 = t_proj.forward(t_detail);
        Tensor<T> fup = bilinear_resize(fhat, t32.dim(2), t32.dim(3));
        Tensor<T> pup = bilinear_resize(p_coarse, t32.dim(2), t32.dim(3));
        FamState<T> st;
        st.tokens = tokens(t32, fup);
        auto [o_r, attn] = attend(st.tokens, rng, train);
        st.attn = attn;
        st.refined = o_r;
        auto [p_ref, o_f] = fuse(o_r, fup, t32, pup);
        st.contextual = o_f;
        st.p_refined = p_ref;
        return st;
    }

    void collect(const std::string& prefix, ParamMap<T>& pm) const {
        t_proj.collect(prefix + ".t_proj", pm);
        q_linear.collect(prefix + ".q_linear", pm);
        kv_local.collect(prefix + ".kv_local", pm);
        kv_pool.collect(prefix + ".kv_pool", pm);
        out_linear.collect(prefix + ".out_linear", pm);
        ca.collect(prefix + ".ca", pm);
        refine1.collect(prefix + ".refine1", pm);
        refine2.collect(prefix + ".refine2", pm);
        refine_head.collect(prefix + ".refine_head", pm);
    }
};

}  // namespace fseg
