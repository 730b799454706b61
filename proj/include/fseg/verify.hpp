#pragma once

// 64-bit gradient verification suites, shared between the CLI and the test
// binaries. Each suite builds small module instances, runs central finite
// differences against the analytic gradients, and reports the worst relative
// error seen across the requested seeds.

#include <string>
#include <vector>

#include "fseg/grad_check.hpp"
#include "fseg/model.hpp"

namespace fseg {

struct VerifyResult {
    std::string name;
    double max_rel_err = 0.0;
    bool pass = true;

    void fold(const GradCheckReport& rep) {
        if (rep.max_rel_err > max_rel_err) max_rel_err = rep.max_rel_err;
        pass = pass && rep.pass;
    }
};

namespace verify_detail {

using Fn = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

inline void run(VerifyResult& r, const Fn& f, std::vector<Tensor<double>> inputs,
                size_t max_elems = 0, uint64_t seed = 0) {
    r.fold(grad_check(f, std::move(inputs), 1e-5, 1e-5, max_elems, seed));
}

// gather a module's trainable parameters so grad_check can perturb them
template <typename T>
inline std::vector<Tensor<T>> trainables(const ParamMap<T>& pm) {
    std::vector<Tensor<T>> out;
    for (const auto& [name, t] : pm.items)
        if (t.requires_grad()) out.push_back(t);
    return out;
}

template <typename T, typename M>
inline std::vector<Tensor<T>> module_trainables(const M& mod) {
    ParamMap<T> pm;
    mod.collect("m", pm);
    return trainables(pm);
}

// Zero-initialized biases and betas leave pre-activations of all-zero ReLU
// patches at exactly 0, putting kinks right on the probe points. Verification
// nudges every all-zero trainable off the origin first.
template <typename T>
inline void jitter_zero_params(ParamMap<T>& pm, Rng rng) {
    for (auto& [name, t] : pm.items) {
        if (!t.requires_grad()) continue;
        bool all_zero = true;
        for (T v : t.data()) all_zero = all_zero && v == T(0);
        if (all_zero)
            for (auto& v : t.raw_data()) v = (T)rng.uniform(0.02, 0.12);
    }
}

template <typename T, typename M>
inline void jitter_module_zeros(M& mod, Rng rng) {
    ParamMap<T> pm;
    mod.collect("m", pm);
    jitter_zero_params(pm, rng);
}

}  // namespace verify_detail

// ---------------------------------------------------------------------------
// Primitive ops

inline std::vector<VerifyResult> verify_tensor(uint64_t seed) {
    using namespace verify_detail;
    Rng rng(seed);
    std::vector<VerifyResult> out;

    auto scalar_of = [](Tensor<double> t) { return sum_all(mul(t, t)); };

    {
        VerifyResult r{"tensor.binary_broadcast"};
        auto a = random_tensor<double>(Shape{2, 3, 1, 4}, rng);
        auto b = random_tensor<double>(Shape{2, 1, 5, 4}, rng, 0.5, 1.5);
        run(r, [](const auto& in) { return sum_all(add(in[0], in[1])); }, {a, b});
        run(r, [](const auto& in) { return sum_all(mul(in[0], in[1])); }, {a, b});
        run(r, [](const auto& in) { return sum_all(sub(in[0], in[1])); }, {a, b});
        run(r, [](const auto& in) { return sum_all(div(in[0], in[1])); }, {a, b});
        out.push_back(r);
    }
    {
        VerifyResult r{"tensor.unary"};
        auto pos = random_tensor<double>(Shape{3, 4}, rng, 0.5, 2.0);
        auto any = random_tensor<double>(Shape{3, 4}, rng, -2.0, 2.0);
        // keep relu probes off the kink
        for (auto& v : any.raw_data())
            if (std::fabs(v) < 0.05) v = v < 0 ? -0.05 : 0.05;
        run(r, [](const auto& in) { return sum_all(mul(relu(in[0]), in[0])); }, {any});
        run(r, [](const auto& in) { return sum_all(sigmoid(in[0])); }, {any});
        run(r, [](const auto& in) { return sum_all(exp_t(in[0])); }, {any});
        run(r, [](const auto& in) { return sum_all(log_t(in[0])); }, {pos});
        run(r, [](const auto& in) { return sum_all(sqrt_t(in[0])); }, {pos});
        run(r, [](const auto& in) { return sum_all(softplus(in[0])); }, {any});
        run(r, [](const auto& in) { return sum_all(mul_scalar(add_scalar(in[0], 0.3), 1.7)); },
            {any});
        run(r, [](const auto& in) { return sum_all(neg(in[0])); }, {any});
        out.push_back(r);
    }
    {
        VerifyResult r{"tensor.reductions"};
        auto a = random_tensor<double>(Shape{2, 3, 4}, rng);
        run(r, [&](const auto& in) { return scalar_of(sum_axes(in[0], {1})); }, {a});
        run(r, [&](const auto& in) { return scalar_of(mean_axes(in[0], {0, 2})); }, {a});
        run(r, [&](const auto& in) { return scalar_of(max_axis(in[0], 2)); }, {a});
        out.push_back(r);
    }
    {
        VerifyResult r{"tensor.structure"};
        auto a = random_tensor<double>(Shape{2, 6, 3}, rng);
        auto b = random_tensor<double>(Shape{2, 2, 3}, rng);
        run(r, [&](const auto& in) { return scalar_of(reshape(in[0], Shape{4, 9})); }, {a});
        run(r, [&](const auto& in) { return scalar_of(permute(in[0], {2, 0, 1})); }, {a});
        run(r,
            [&](const auto& in) { return scalar_of(concat<double>({in[0], in[1]}, 1)); },
            {a, b});
        run(r, [&](const auto& in) { return scalar_of(split(in[0], 1, 3)[1]); }, {a});
        run(r, [&](const auto& in) { return scalar_of(slice_axis(in[0], 1, 2, 3)); }, {a});
        out.push_back(r);
    }
    {
        VerifyResult r{"tensor.matmul_softmax"};
        auto a = random_tensor<double>(Shape{3, 4}, rng);
        auto b = random_tensor<double>(Shape{4, 5}, rng);
        run(r, [&](const auto& in) { return scalar_of(matmul(in[0], in[1])); }, {a, b});
        run(r, [&](const auto& in) { return scalar_of(softmax(in[0], 1)); }, {a});
        out.push_back(r);
    }
    return out;
}

// ---------------------------------------------------------------------------
// NN building blocks

inline std::vector<VerifyResult> verify_nn(uint64_t seed) {
    using namespace verify_detail;
    Rng rng(seed);
    std::vector<VerifyResult> out;

    auto scalar_of = [](Tensor<double> t) { return sum_all(mul(t, t)); };

    {
        VerifyResult r{"nn.conv2d"};
        auto x = random_tensor<double>(Shape{2, 3, 5, 6}, rng);
        auto w = random_tensor<double>(Shape{4, 3, 3, 3}, rng, -0.5, 0.5);
        auto b = random_tensor<double>(Shape{4}, rng);
        run(r,
            [](const auto& in) {
                return sum_all(mul(conv2d(in[0], in[1], in[2], 2, 1, 1, 1),
                                   conv2d(in[0], in[1], in[2], 2, 1, 1, 1)));
            },
            {x, w, b});
        out.push_back(r);
    }
    {
        VerifyResult r{"nn.deform_conv2d"};
        auto x = random_tensor<double>(Shape{1, 2, 5, 5}, rng);
        auto off = random_tensor<double>(Shape{1, 18, 5, 5}, rng, -0.8, 0.8);
        auto w = random_tensor<double>(Shape{3, 2, 3, 3}, rng, -0.5, 0.5);
        auto b = random_tensor<double>(Shape{3}, rng);
        run(r,
            [&](const auto& in) {
                return scalar_of(deform_conv2d_raw(in[0], in[1], in[2], in[3], 1, 1, 1, 1));
            },
            {x, off, w, b});
        out.push_back(r);
    }
    {
        VerifyResult r{"nn.resize_pool"};
        auto x = random_tensor<double>(Shape{2, 3, 4, 5}, rng);
        run(r, [&](const auto& in) { return scalar_of(bilinear_resize(in[0], 7, 9)); }, {x});
        run(r, [&](const auto& in) { return scalar_of(bilinear_resize(in[0], 2, 3)); }, {x});
        run(r, [&](const auto& in) { return scalar_of(adaptive_avg_pool(in[0], 3, 3)); }, {x});
        run(r, [&](const auto& in) { return scalar_of(global_avg_pool(in[0])); }, {x});
        run(r, [&](const auto& in) { return scalar_of(neighborhood_unfold(in[0], 3)); }, {x});
        out.push_back(r);
    }
    {
        VerifyResult r{"nn.linear_conv1d"};
        auto x = random_tensor<double>(Shape{4, 5}, rng);
        auto w = random_tensor<double>(Shape{5, 3}, rng);
        auto b = random_tensor<double>(Shape{3}, rng);
        run(r, [&](const auto& in) { return scalar_of(linear(in[0], in[1], in[2])); },
            {x, w, b});
        auto seq = random_tensor<double>(Shape{2, 6}, rng);
        auto kw = random_tensor<double>(Shape{3}, rng);
        auto kb = random_tensor<double>(Shape{1}, rng);
        run(r,
            [&](const auto& in) { return scalar_of(conv1d_channels(in[0], in[1], in[2])); },
            {seq, kw, kb});
        out.push_back(r);
    }
    {
        VerifyResult r{"nn.batchnorm"};
        auto bn = BatchNorm2d<double>::make(3);
        auto x = random_tensor<double>(Shape{2, 3, 4, 4}, rng);
        std::vector<Tensor<double>> inputs{x, bn.gamma, bn.beta};
        run(r,
            [&](const auto& in) {
                // stats are recomputed from the batch each call, so the running
                // buffers drifting across probes does not affect the output
                return scalar_of(bn.forward(in[0], true));
            },
            inputs);
        out.push_back(r);
    }
    {
        VerifyResult r{"nn.dropout"};
        auto x = random_tensor<double>(Shape{2, 3, 4, 4}, rng);
        run(r,
            [&](const auto& in) {
                Rng drng(1234);  // fixed stream: same mask on every probe
                return scalar_of(dropout(in[0], 0.3, drng, true));
            },
            {x});
        out.push_back(r);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Composed modules (eval mode, sampled coordinates for the wide ones)

inline std::vector<VerifyResult> verify_cidm(uint64_t seed) {
    using namespace verify_detail;
    std::vector<VerifyResult> out;
    for (CidmVariant variant : {CidmVariant::Multiplicative, CidmVariant::Additive}) {
        Rng rng(seed);
        VerifyResult r{variant == CidmVariant::Multiplicative ? "cidm.multiplicative"
                                                              : "cidm.additive"};
        auto mod = Cidm<double>::make(6, 8, 10, 8, variant, 4, Rng(seed ^ 77));
        jitter_module_zeros<double>(mod, rng.split("zeros"));
        auto f2 = random_tensor<double>(Shape{1, 6, 8, 8}, rng);
        auto f3 = random_tensor<double>(Shape{1, 8, 4, 4}, rng);
        auto f4 = random_tensor<double>(Shape{1, 10, 2, 2}, rng);
        std::vector<Tensor<double>> inputs{f2, f3, f4};
        for (auto& p : module_trainables<double>(mod)) inputs.push_back(p);
        run(r,
            [&](const auto& in) {
                auto o = mod.forward(in[0], in[1], in[2]);
                return add(sum_all(mul(o.fhat, o.fhat)), sum_all(mul(o.p, o.p)));
            },
            inputs, 24, seed);
        out.push_back(r);
    }
    return out;
}

// Fresh deformable convs keep their offsets at exactly zero, which parks the
// bilinear taps on lattice corners where sampling is non-differentiable.
// Finite differences straddle that kink, so verification nudges the offset
// predictors off the lattice first.
template <typename T>
inline void jitter_offsets(Dem<T>& dem, Rng rng) {
    for (auto& br : dem.branches)
        for (auto* dc : {&br.dconv31, &br.dconv13}) {
            for (auto& w : dc->offset_predictor.weight.raw_data())
                w = (T)rng.uniform(-0.05, 0.05);
            // Bias too: ReLU-sparse inputs leave all-zero patches, and a zero
            // offset parks the tap exactly on a lattice corner.
            for (auto& w : dc->offset_predictor.bias.raw_data())
                w = (T)rng.uniform(0.05, 0.15);
        }
}

inline std::vector<VerifyResult> verify_dem(uint64_t seed) {
    using namespace verify_detail;
    Rng rng(seed);
    VerifyResult r{"dem"};
    auto mod = Dem<double>::make(8, 3, Rng(seed ^ 78));
    jitter_module_zeros<double>(mod, rng.split("zeros"));
    jitter_offsets(mod, rng.split("offsets"));
    auto f1 = random_tensor<double>(Shape{1, 8, 6, 6}, rng);
    std::vector<Tensor<double>> inputs{f1};
    for (auto& p : module_trainables<double>(mod)) inputs.push_back(p);
    run(r,
        [&](const auto& in) {
            auto y = mod.forward(in[0], false);
            return sum_all(mul(y, y));
        },
        inputs, 24, seed);
    return {r};
}

inline std::vector<VerifyResult> verify_fam(uint64_t seed) {
    using namespace verify_detail;
    Rng rng(seed);
    VerifyResult r{"fam"};
    FamConfig<double> cfg;
    cfg.embed_dim = 8;
    cfg.width = 8;
    auto mod = Fam<double>::make(8, cfg, 4, Rng(seed ^ 79));
    jitter_module_zeros<double>(mod, rng.split("zeros"));
    auto t = random_tensor<double>(Shape{1, 8, 6, 6}, rng);
    auto fhat = random_tensor<double>(Shape{1, 8, 3, 3}, rng);
    auto p = random_tensor<double>(Shape{1, 1, 3, 3}, rng);
    std::vector<Tensor<double>> inputs{t, fhat, p};
    for (auto& pp : module_trainables<double>(mod)) inputs.push_back(pp);
    run(r,
        [&](const auto& in) {
            Rng drng(0);
            auto s = mod.forward(in[0], in[1], in[2], drng, false);
            return sum_all(mul(s.p_refined, s.p_refined));
        },
        inputs, 16, seed);
    return {r};
}

inline std::vector<VerifyResult> verify_model(uint64_t seed) {
    using namespace verify_detail;
    Rng rng(seed);
    VerifyResult r{"model"};
    ModelConfig mc;
    mc.channels = {4, 8, 8, 8};
    mc.input_h = mc.input_w = 32;
    mc.cd = 8;
    mc.ca_reduction = 4;
    mc.fam_dim = 8;
    auto model = FocusNet<double>::make(mc, seed ^ 80);
    ParamMap<double> pmj = model.parameters();
    verify_detail::jitter_zero_params(pmj, rng.split("zeros"));
    jitter_offsets(model.dem, rng.split("offsets"));
    auto x = random_tensor<double>(Shape{1, 3, 32, 32}, rng, 0.0, 1.0);
    std::vector<Tensor<double>> inputs{x};
    for (auto& p : trainables(model.parameters())) inputs.push_back(p);
    run(r,
        [&](const auto& in) {
            Rng frng(0);
            auto heads = model.forward(in[0], frng, false);
            return sum_all(mul(heads.phat, heads.phat));
        },
        inputs, 4, seed);
    return {r};
}

inline std::vector<VerifyResult> verify_module(const std::string& which, uint64_t seed) {
    std::vector<VerifyResult> out;
    auto append = [&](std::vector<VerifyResult> v) {
        for (auto& r : v) out.push_back(std::move(r));
    };
    if (which == "all" || which == "tensor") append(verify_tensor(seed));
    if (which == "all" || which == "nn") append(verify_nn(seed));
    if (which == "all" || which == "cidm") append(verify_cidm(seed));
    if (which == "all" || which == "dem") append(verify_dem(seed));
    if (which == "all" || which == "fam") append(verify_fam(seed));
    if (which == "all" || which == "model") append(verify_model(seed));
    if (out.empty()) op_error("gradcheck", "unknown module: " + which);
    return out;
}

}  // namespace fseg
