#pragma once

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "axialfuse/gradcheck.hpp"
#include "axialfuse/model.hpp"
#include "axialfuse/training.hpp"

namespace axialfuse {

struct SuiteEntry {
    std::string name;
    double tol = 1e-4;
    std::function<GradcheckReport()> run;
};

struct SuiteResult {
    std::string name;
    double tol = 1e-4;
    double max_rel_err = 0.0;
    bool pass = false;
};

namespace detail {

inline TensorT<double> random_t(const Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> vals(numel_of(shape));
    for (double& v : vals) v = dist(rng);
    return TensorT<double>::leaf(shape, std::move(vals));
}

// Check d loss / d p for one parameter by substituting probe values.
template <typename LossFn>
GradcheckReport check_param(ParameterT<double>& p, LossFn loss_fn, double eps = 1e-5, double tol = 1e-4) {
    TensorT<double> base = TensorT<double>::leaf(p.value.shape(), p.value.data());
    TensorT<double> saved = p.value;
    auto f = [&](const TensorT<double>& probe) {
        p.value = probe;
        TensorT<double> loss = loss_fn();
        p.value = saved;
        return loss;
    };
    GradcheckReport rep = gradcheck(f, base, eps, tol);
    p.value = saved;
    return rep;
}

template <typename LossFn>
GradcheckReport worst_over_params(std::vector<ParameterT<double>*> params, LossFn loss_fn,
                                  double eps = 1e-5, double tol = 1e-4) {
    GradcheckReport worst;
    worst.pass = true;
    for (auto* p : params) {
        GradcheckReport r = check_param(*p, loss_fn, eps, tol);
        if (r.max_rel_err > worst.max_rel_err) worst.max_rel_err = r.max_rel_err;
        worst.pass = worst.pass && r.pass;
    }
    return worst;
}

}  // namespace detail

// The 64-bit gradient-check suite the `gradcheck` subcommand runs: every
// registered op, every trainable block, and the end-to-end model at desk
// scale (1e-3 there, 1e-4 elsewhere).
inline std::vector<SuiteEntry> gradcheck_suite_entries() {
    std::vector<SuiteEntry> entries;
    auto put = [&](std::string name, double tol, std::function<GradcheckReport()> run) {
        entries.push_back({std::move(name), tol, std::move(run)});
    };
    using Td = TensorT<double>;

    put("matmul", 1e-4, [] {
        std::mt19937_64 rng(101);
        Td a = detail::random_t({4, 5}, rng);
        Td b = detail::random_t({5, 3}, rng);
        auto r1 = gradcheck([&](const Td& x) { return sum_all(tanh_op(matmul(x, b))); }, a);
        auto r2 = gradcheck([&](const Td& x) { return sum_all(tanh_op(matmul(a, x))); }, b);
        return r1.max_rel_err >= r2.max_rel_err ? r1 : r2;
    });
    put("matmul_batched", 1e-4, [] {
        std::mt19937_64 rng(102);
        Td a = detail::random_t({2, 3, 4}, rng);
        Td b = detail::random_t({2, 4, 3}, rng);
        return gradcheck([&](const Td& x) { return sum_all(tanh_op(matmul(x, b))); }, a);
    });
    put("softmax", 1e-4, [] {
        std::mt19937_64 rng(103);
        Td x = detail::random_t({3, 7}, rng, -2.0, 2.0);
        Td w = detail::random_t({3, 7}, rng);
        return gradcheck([&](const Td& v) { return sum_all(mul(w, softmax(v, 1))); }, x);
    });
    put("layernorm", 1e-4, [] {
        std::mt19937_64 rng(104);
        Td x = detail::random_t({3, 8}, rng);
        Td g = detail::random_t({8}, rng, 0.5, 1.5);
        Td b = detail::random_t({8}, rng, -0.2, 0.2);
        Td w = detail::random_t({3, 8}, rng);
        auto rx = gradcheck([&](const Td& v) { return sum_all(mul(w, layernorm(v, g, b, 1e-6))); }, x);
        auto rg = gradcheck([&](const Td& v) { return sum_all(mul(w, layernorm(x, v, b, 1e-6))); }, g);
        auto rb = gradcheck([&](const Td& v) { return sum_all(mul(w, layernorm(x, g, v, 1e-6))); }, b);
        GradcheckReport worst = rx;
        if (rg.max_rel_err > worst.max_rel_err) worst = rg;
        if (rb.max_rel_err > worst.max_rel_err) worst = rb;
        worst.pass = rx.pass && rg.pass && rb.pass;
        return worst;
    });
    put("elementwise_add_sub_mul", 1e-4, [] {
        std::mt19937_64 rng(105);
        Td a = detail::random_t({3, 4}, rng);
        Td b = detail::random_t({4}, rng);  // broadcast path
        return gradcheck([&](const Td& x) { return sum_all(mul(sub(add(x, b), b), x)); }, a);
    });
    put("tanh", 1e-4, [] {
        std::mt19937_64 rng(106);
        return gradcheck([](const Td& x) { return sum_all(tanh_op(x)); }, detail::random_t({11}, rng));
    });
    put("sigmoid", 1e-4, [] {
        std::mt19937_64 rng(107);
        return gradcheck([](const Td& x) { return sum_all(sigmoid_op(x)); }, detail::random_t({11}, rng));
    });
    put("gelu", 1e-4, [] {
        std::mt19937_64 rng(108);
        return gradcheck([](const Td& x) { return sum_all(gelu_op(x)); }, detail::random_t({11}, rng, -2.0, 2.0));
    });
    put("relu", 1e-4, [] {
        std::mt19937_64 rng(109);
        // keep probes away from the kink at 0
        Td x = detail::random_t({8}, rng, 0.2, 1.0);
        Td y = detail::random_t({8}, rng, -1.0, -0.2);
        auto r1 = gradcheck([](const Td& v) { return sum_all(relu_op(v)); }, x);
        auto r2 = gradcheck([](const Td& v) { return sum_all(relu_op(v)); }, y);
        return r1.max_rel_err >= r2.max_rel_err ? r1 : r2;
    });
    put("scale", 1e-4, [] {
        std::mt19937_64 rng(110);
        return gradcheck([](const Td& x) { return sum_all(scale(x, 2.5)); }, detail::random_t({9}, rng));
    });
    put("reduce_mean_sum", 1e-4, [] {
        std::mt19937_64 rng(111);
        Td x = detail::random_t({3, 5}, rng);
        auto r1 = gradcheck([](const Td& v) { return sum_all(tanh_op(reduce(v, Reduce::mean, 1))); }, x);
        auto r2 = gradcheck([](const Td& v) { return sum_all(tanh_op(reduce(v, Reduce::sum, 0))); }, x);
        return r1.max_rel_err >= r2.max_rel_err ? r1 : r2;
    });
    put("reduce_max", 1e-4, [] {
        std::mt19937_64 rng(112);
        // well-separated values keep the argmax stable under +-eps
        std::vector<double> vals = {0.1, 0.9, -0.4, 0.5, 0.2, -0.8};
        return gradcheck([](const Td& v) { return sum_all(tanh_op(reduce(v, Reduce::max, 1))); },
                         Td::leaf({2, 3}, std::move(vals)));
    });
    put("reshape_permute_concat_slice", 1e-4, [] {
        std::mt19937_64 rng(113);
        Td x = detail::random_t({2, 6}, rng);
        Td y = detail::random_t({3, 4}, rng);
        return gradcheck(
            [&](const Td& v) {
                Td r = permute(reshape(v, {3, 4}), {1, 0});
                Td c = concat<double>({r, permute(y, {1, 0})}, 0);
                return sum_all(tanh_op(slice(c, 0, 1, 5)));
            },
            x);
    });
    put("conv1d", 1e-4, [] {
        std::mt19937_64 rng(114);
        Td x = detail::random_t({9}, rng);
        Td w = detail::random_t({3}, rng);
        Td b = detail::random_t({1}, rng);
        auto rx = gradcheck([&](const Td& v) { return sum_all(tanh_op(conv1d_same(v, w, b))); }, x);
        auto rw = gradcheck([&](const Td& v) { return sum_all(tanh_op(conv1d_same(x, v, b))); }, w);
        auto rb = gradcheck([&](const Td& v) { return sum_all(tanh_op(conv1d_same(x, w, v))); }, b);
        GradcheckReport worst = rx;
        if (rw.max_rel_err > worst.max_rel_err) worst = rw;
        if (rb.max_rel_err > worst.max_rel_err) worst = rb;
        worst.pass = rx.pass && rw.pass && rb.pass;
        return worst;
    });
    put("cross_entropy", 1e-4, [] {
        std::mt19937_64 rng(115);
        Td logits = detail::random_t({4, 3}, rng, -2.0, 2.0);
        std::vector<int> labels = {0, 2, 1, 2};
        return gradcheck([&](const Td& v) { return cross_entropy(v, labels); }, logits);
    });
    put("bce_with_logits", 1e-4, [] {
        std::mt19937_64 rng(116);
        Td logits = detail::random_t({5, 2}, rng, -2.0, 2.0);
        std::vector<int> labels = {0, 1, 1, 0, 1};
        return gradcheck([&](const Td& v) { return bce_with_logits(v, labels); }, logits);
    });
    put("rica_block", 1e-4, [] {
        std::mt19937_64 rng(117);
        RicaBlockT<double> rica("rica", 16, rng);
        // exercise the gates: nonzero mix scalars
        rica.alpha_d.value.mutable_data()[0] = 0.3;
        rica.alpha_e.value.mutable_data()[0] = -0.2;
        Td x = detail::random_t({6, 16}, rng);
        auto rx = gradcheck([&](const Td& v) { return sum_all(tanh_op(rica.forward(v))); }, x);
        std::vector<ParameterT<double>*> ps = {&rica.conv_w, &rica.conv_b, &rica.squeeze.w,
                                               &rica.squeeze.b, &rica.expand.w, &rica.expand.b,
                                               &rica.alpha_d, &rica.alpha_e};
        auto rp = detail::worst_over_params(ps, [&] { return sum_all(tanh_op(rica.forward(x))); });
        GradcheckReport worst = rx.max_rel_err >= rp.max_rel_err ? rx : rp;
        worst.pass = rx.pass && rp.pass;
        return worst;
    });
    put("self_attention_layer", 1e-4, [] {
        std::mt19937_64 rng(118);
        EncoderConfig cfg;
        cfg.embed_dim = 16;
        cfg.heads = 4;
        cfg.layers = 1;
        cfg.mode = EncoderMode::self;
        EncoderLayerT<double> layer("self", cfg, rng);
        Td t = detail::random_t({5, 16}, rng);
        auto rt = gradcheck([&](const Td& v) { return sum_all(tanh_op(layer.forward_self(v))); }, t);
        ParamRegistryT<double> reg;
        layer.collect(reg);
        auto rp = detail::worst_over_params(reg.items, [&] { return sum_all(tanh_op(layer.forward_self(t))); });
        GradcheckReport worst = rt.max_rel_err >= rp.max_rel_err ? rt : rp;
        worst.pass = rt.pass && rp.pass;
        return worst;
    });
    put("cross_attention_layer", 1e-4, [] {
        std::mt19937_64 rng(119);
        EncoderConfig cfg;
        cfg.embed_dim = 16;
        cfg.heads = 4;
        cfg.layers = 1;
        cfg.mode = EncoderMode::cross;
        EncoderLayerT<double> layer("cross", cfg, rng);
        Td q = detail::random_t({4, 16}, rng);
        Td kv = detail::random_t({6, 16}, rng);
        auto rq = gradcheck([&](const Td& v) { return sum_all(tanh_op(layer.forward_cross(v, kv))); }, q);
        auto rk = gradcheck([&](const Td& v) { return sum_all(tanh_op(layer.forward_cross(q, v))); }, kv);
        ParamRegistryT<double> reg;
        layer.collect(reg);
        auto rp = detail::worst_over_params(reg.items, [&] { return sum_all(tanh_op(layer.forward_cross(q, kv))); });
        GradcheckReport worst = rq;
        if (rk.max_rel_err > worst.max_rel_err) worst = rk;
        if (rp.max_rel_err > worst.max_rel_err) worst = rp;
        worst.pass = rq.pass && rk.pass && rp.pass;
        return worst;
    });
    put("mlp_head", 1e-4, [] {
        std::mt19937_64 rng(120);
        HeadT<double> head("head", 16, 3, rng);
        Td cls = detail::random_t({1, 16}, rng);
        auto rc = gradcheck([&](const Td& v) { return sum_all(tanh_op(head.forward(v))); }, cls);
        ParamRegistryT<double> reg;
        head.collect(reg);
        auto rp = detail::worst_over_params(reg.items, [&] { return sum_all(tanh_op(head.forward(cls))); });
        GradcheckReport worst = rc.max_rel_err >= rp.max_rel_err ? rc : rp;
        worst.pass = rc.pass && rp.pass;
        return worst;
    });
    put("model_end_to_end", 1e-3, [] {
        ModelConfig cfg;
        cfg.embed_dim = 16;
        cfg.layers = 1;
        cfg.heads = 2;
        cfg.num_classes = 2;
        cfg.slice_size = 8;
        cfg.vol_d = cfg.vol_h = cfg.vol_w = 8;
        cfg.extractor.embed_dim = 16;
        cfg.extractor.patch = 4;
        cfg.extractor.seed = 11;
        ModelT<double> model(cfg, 2024);
        Volume vol = synth_volume(1, 8, 555, "gradcheck");
        auto seqs = model.extract_features(vol);
        std::vector<int> labels = {1};
        auto loss_fn = [&] {
            LogitsT<double> lg = model.forward_from_sequences(seqs);
            return classification_loss(reshape(lg.fused, {1, 2}), labels, Task::binary);
        };
        return detail::worst_over_params(model.params().items, loss_fn, 1e-5, 1e-3);
    });
    return entries;
}

inline std::vector<SuiteResult> run_suite(const std::vector<SuiteEntry>& entries) {
    std::vector<SuiteResult> results;
    for (const auto& e : entries) {
        GradcheckReport rep = e.run();
        results.push_back({e.name, e.tol, rep.max_rel_err, rep.max_rel_err < e.tol});
    }
    return results;
}

inline std::vector<SuiteResult> run_gradcheck_suite(const std::vector<SuiteEntry>& extra = {}) {
    auto entries = gradcheck_suite_entries();
    entries.insert(entries.end(), extra.begin(), extra.end());
    return run_suite(entries);
}

}  // namespace axialfuse
