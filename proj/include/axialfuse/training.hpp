#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "axialfuse/model.hpp"
#include "axialfuse/planar.hpp"
#include "axialfuse/volume.hpp"

namespace axialfuse {

// ---------------------------------------------------------------------------
// Losses (fused tape ops, stable log-sum-exp forms)
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> cross_entropy(const TensorT<T>& logits, const std::vector<int>& labels) {
    if (logits.rank() != 2) throw DimensionError("cross_entropy: logits must be 2-d, got " + shape_str(logits.shape()));
    int b = logits.shape()[0], c = logits.shape()[1];
    if (static_cast<int>(labels.size()) != b)
        throw ContractError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " + std::to_string(b));
    for (int y : labels)
        if (y < 0 || y >= c)
            throw ContractError("cross_entropy: label " + std::to_string(y) + " out of range [0," + std::to_string(c) + ")");
    const auto& ld = logits.data();
    T total = T(0);
    for (int i = 0; i < b; ++i) {
        const T* row = ld.data() + static_cast<size_t>(i) * c;
        T mx = row[0];
        for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        T sum = T(0);
        for (int j = 0; j < c; ++j) sum += std::exp(row[j] - mx);
        total += mx + std::log(sum) - row[static_cast<size_t>(labels[static_cast<size_t>(i)])];
    }
    T loss = total / static_cast<T>(b);
    auto backward = [b, c, labels](typename TensorT<T>::Impl& o) {
        auto& p = *o.parents[0].impl;
        if (!p.requires_grad) return;
        detail::ensure_grad<T>(p);
        T g = o.grad[0] / static_cast<T>(b);
        for (int i = 0; i < b; ++i) {
            const T* row = p.data.data() + static_cast<size_t>(i) * c;
            T mx = row[0];
            for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
            T sum = T(0);
            for (int j = 0; j < c; ++j) sum += std::exp(row[j] - mx);
            for (int j = 0; j < c; ++j) {
                T soft = std::exp(row[j] - mx) / sum;
                T onehot = labels[static_cast<size_t>(i)] == j ? T(1) : T(0);
                p.grad[static_cast<size_t>(i) * c + j] += g * (soft - onehot);
            }
        }
    };
    return detail::make_op<T>({1}, {loss}, "cross_entropy", {logits}, backward);
}

// Binary cross-entropy with logits on the scalar logit z = l[1] - l[0].
template <typename T>
TensorT<T> bce_with_logits(const TensorT<T>& logits, const std::vector<int>& labels) {
    if (logits.rank() != 2 || logits.shape()[1] != 2)
        throw DimensionError("bce_with_logits: logits must be (B,2), got " + shape_str(logits.shape()));
    int b = logits.shape()[0];
    if (static_cast<int>(labels.size()) != b)
        throw ContractError("bce_with_logits: " + std::to_string(labels.size()) + " labels for batch of " + std::to_string(b));
    for (int y : labels)
        if (y != 0 && y != 1) throw ContractError("bce_with_logits: label " + std::to_string(y) + " not in {0,1}");
    const auto& ld = logits.data();
    T total = T(0);
    for (int i = 0; i < b; ++i) {
        T z = ld[static_cast<size_t>(i) * 2 + 1] - ld[static_cast<size_t>(i) * 2];
        T y = static_cast<T>(labels[static_cast<size_t>(i)]);
        total += std::max(z, T(0)) - z * y + std::log1p(std::exp(-std::abs(z)));
    }
    T loss = total / static_cast<T>(b);
    auto backward = [b, labels](typename TensorT<T>::Impl& o) {
        auto& p = *o.parents[0].impl;
        if (!p.requires_grad) return;
        detail::ensure_grad<T>(p);
        T g = o.grad[0] / static_cast<T>(b);
        for (int i = 0; i < b; ++i) {
            T z = p.data[static_cast<size_t>(i) * 2 + 1] - p.data[static_cast<size_t>(i) * 2];
            T sig = z >= T(0) ? T(1) / (T(1) + std::exp(-z)) : std::exp(z) / (T(1) + std::exp(z));
            T dz = g * (sig - static_cast<T>(labels[static_cast<size_t>(i)]));
            p.grad[static_cast<size_t>(i) * 2 + 1] += dz;
            p.grad[static_cast<size_t>(i) * 2] -= dz;
        }
    };
    return detail::make_op<T>({1}, {loss}, "bce_with_logits", {logits}, backward);
}

template <typename T>
TensorT<T> classification_loss(const TensorT<T>& logits, const std::vector<int>& labels, Task task) {
    if (task == Task::binary) return bce_with_logits(logits, labels);
    return cross_entropy(logits, labels);
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

template <typename T>
struct AdamStateT {
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    std::vector<std::vector<T>> m, v;
    long step = 0;

    explicit AdamStateT(const ParamRegistryT<T>& params) {
        for (const auto* p : params.items) {
            m.emplace_back(p->value.numel(), T(0));
            v.emplace_back(p->value.numel(), T(0));
        }
    }

    // Bias-corrected update. Frozen parameters are untouched; a missing
    // gradient on a trainable parameter is a caller bug.
    void step_update(ParamRegistryT<T>& params, double lr) {
        ++step;
        double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
        double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
        for (size_t pi = 0; pi < params.items.size(); ++pi) {
            ParameterT<T>& p = *params.items[pi];
            if (p.frozen) continue;
            if (p.grad().empty())
                throw ContractError("adam: missing gradient for parameter '" + p.name + "'");
            auto& data = p.value.mutable_data();
            const auto& grad = p.grad();
            auto& mi = m[pi];
            auto& vi = v[pi];
            for (size_t j = 0; j < data.size(); ++j) {
                double g = static_cast<double>(grad[j]);
                double mj = beta1 * static_cast<double>(mi[j]) + (1.0 - beta1) * g;
                double vj = beta2 * static_cast<double>(vi[j]) + (1.0 - beta2) * g * g;
                mi[j] = static_cast<T>(mj);
                vi[j] = static_cast<T>(vj);
                double mhat = mj / bc1, vhat = vj / bc2;
                data[j] = static_cast<T>(static_cast<double>(data[j]) - lr * mhat / (std::sqrt(vhat) + eps));
            }
        }
    }
};

using AdamState = AdamStateT<float>;

// ---------------------------------------------------------------------------
// Learning-rate schedule: linear warmup to lr_max over the first
// warmup_epochs, then cosine annealing with warm restarts (cycle lengths
// T0, T0*Tmult, ...), floored at lr_init.
// ---------------------------------------------------------------------------

struct ScheduleSpec {
    double lr_init = 1e-12;
    double lr_max = 1e-5;
    int warmup_epochs = 5;
    int t0_epochs = 10;
    int tmult = 2;
    int epochs = 100;
    long steps_per_epoch = 1;

    void validate() const {
        if (lr_init < 0 || lr_max < lr_init) throw ContractError("schedule: need 0 <= lr_init <= lr_max");
        if (warmup_epochs < 0 || t0_epochs < 1 || tmult < 1 || epochs < 1 || steps_per_epoch < 1)
            throw ContractError("schedule: epoch/cycle fields must be positive");
    }
};

inline double lr_at(long step, const ScheduleSpec& spec) {
    spec.validate();
    if (step < 0) throw ContractError("lr_at: step must be >= 0");
    long warm = static_cast<long>(spec.warmup_epochs) * spec.steps_per_epoch;
    if (step < warm)
        return spec.lr_init + (spec.lr_max - spec.lr_init) * static_cast<double>(step) / static_cast<double>(warm);
    long tau = step - warm;
    long cycle = static_cast<long>(spec.t0_epochs) * spec.steps_per_epoch;
    while (tau >= cycle) {
        tau -= cycle;
        cycle *= spec.tmult;
    }
    double phase = static_cast<double>(tau) / static_cast<double>(cycle);
    return spec.lr_init + (spec.lr_max - spec.lr_init) * (1.0 + std::cos(M_PI * phase)) / 2.0;
}

// ---------------------------------------------------------------------------
// Macro one-vs-rest AUC, Mann-Whitney with midranks. All numerators are
// kept as doubled integers so the result is exact and matches a pairwise
// oracle bit for bit.
// ---------------------------------------------------------------------------

struct AucResult {
    std::optional<double> macro;
    std::vector<std::optional<double>> per_class;
    std::vector<int> skipped_classes;  // classes lacking a positive or negative
};

inline std::optional<double> binary_auc(const std::vector<double>& scores, const std::vector<bool>& positive) {
    size_t n = scores.size();
    long long n1 = 0;
    for (bool b : positive) n1 += b ? 1 : 0;
    long long n0 = static_cast<long long>(n) - n1;
    if (n1 == 0 || n0 == 0) return std::nullopt;
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return scores[a] < scores[b]; });
    // doubled midranks: tie group over sorted positions [a,b) gets a+b+1
    std::vector<long long> rank2(n);
    size_t a = 0;
    while (a < n) {
        size_t b = a + 1;
        while (b < n && scores[order[b]] == scores[order[a]]) ++b;
        for (size_t k = a; k < b; ++k) rank2[order[k]] = static_cast<long long>(a) + static_cast<long long>(b) + 1;
        a = b;
    }
    long long rank2_pos = 0;
    for (size_t i = 0; i < n; ++i)
        if (positive[i]) rank2_pos += rank2[i];
    long long u2 = rank2_pos - n1 * (n1 + 1);  // 2 * Mann-Whitney U
    return static_cast<double>(u2) / static_cast<double>(2 * n1 * n0);
}

inline AucResult macro_ovr_auc(const std::vector<std::vector<double>>& scores,
                               const std::vector<int>& labels, int num_classes) {
    AucResult res;
    res.per_class.resize(static_cast<size_t>(num_classes));
    double sum = 0.0;
    int valid = 0;
    for (int c = 0; c < num_classes; ++c) {
        std::vector<double> s(labels.size());
        std::vector<bool> pos(labels.size());
        for (size_t i = 0; i < labels.size(); ++i) {
            s[i] = scores[i][static_cast<size_t>(c)];
            pos[i] = labels[i] == c;
        }
        auto auc = binary_auc(s, pos);
        res.per_class[static_cast<size_t>(c)] = auc;
        if (auc) {
            sum += *auc;
            ++valid;
        } else {
            res.skipped_classes.push_back(c);
        }
    }
    if (valid > 0) res.macro = sum / valid;
    return res;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct EvalReport {
    Split split = Split::validation;
    double mean_loss = 0.0;
    double accuracy = 0.0;
    std::optional<double> auc;
    int correct = 0, total = 0;
    std::vector<int> per_class_counts;
};

template <typename T>
std::vector<double> softmax_probs(const TensorT<T>& logits_row) {
    const auto& d = logits_row.data();
    double mx = static_cast<double>(d[0]);
    for (T v : d) mx = std::max(mx, static_cast<double>(v));
    std::vector<double> out(d.size());
    double sum = 0.0;
    for (size_t i = 0; i < d.size(); ++i) {
        out[i] = std::exp(static_cast<double>(d[i]) - mx);
        sum += out[i];
    }
    for (double& p : out) p /= sum;
    return out;
}

// Evaluation never augments: there is no augmentation input on this path.
template <typename T>
EvalReport evaluate(const ModelT<T>& model, const RunManifest& manifest, Split split) {
    auto entries = manifest.split_entries(split);
    if (entries.empty()) throw ContractError(std::string("evaluate: split '") + split_token(split) + "' is empty");
    EvalReport rep;
    rep.split = split;
    rep.per_class_counts.assign(static_cast<size_t>(manifest.num_classes), 0);
    std::vector<std::vector<double>> all_probs;
    std::vector<int> all_labels;
    double loss_sum = 0.0;
    for (const auto* e : entries) {
        Volume v = read_volume(manifest.resolve(*e));
        LogitsT<T> logits = model.forward(v);
        TensorT<T> row = reshape(logits.fused, {1, manifest.num_classes});
        loss_sum += static_cast<double>(classification_loss(row, {e->label}, manifest.task).data()[0]);
        std::vector<double> probs = softmax_probs(logits.fused);
        int pred = 0;
        for (size_t c = 1; c < probs.size(); ++c)
            if (probs[c] > probs[static_cast<size_t>(pred)]) pred = static_cast<int>(c);
        if (pred == e->label) ++rep.correct;
        ++rep.total;
        ++rep.per_class_counts[static_cast<size_t>(e->label)];
        all_probs.push_back(std::move(probs));
        all_labels.push_back(e->label);
    }
    rep.mean_loss = loss_sum / rep.total;
    rep.accuracy = static_cast<double>(rep.correct) / rep.total;
    rep.auc = macro_ovr_auc(all_probs, all_labels, manifest.num_classes).macro;
    return rep;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct TrainOptions {
    ScheduleSpec schedule;  // steps_per_epoch is filled in from the manifest
    int batch_size = 4;
    AugmentPolicy augment;  // applied to the train split only
    uint64_t seed = 0;
    std::string out_dir;  // when set: metrics.log and best.axc are written here
};

struct TrainResult {
    std::vector<std::string> log_lines;
    int best_epoch = 0;
    double best_val_accuracy = -1.0;
    double final_train_loss = 0.0;
    double final_train_accuracy = 0.0;
    EvalReport test_report;
    long total_steps = 0;
};

inline std::string metrics_line(int epoch, const char* split, double loss, double acc,
                                const std::optional<double>& auc, double lr) {
    std::string line = "epoch " + std::to_string(epoch) + " split " + split + " loss " + fmt_g(loss) +
                       " acc " + fmt_g(acc) + " auc " + (auc ? fmt_g(*auc) : std::string("na")) +
                       " lr " + fmt_g(lr);
    return line;
}

template <typename T>
TrainResult train_loop(ModelT<T>& model, const RunManifest& manifest, TrainOptions opts) {
    if (manifest.num_classes != model.config().num_classes)
        throw ContractError("train: manifest has " + std::to_string(manifest.num_classes) +
                            " classes, model expects " + std::to_string(model.config().num_classes));
    auto train_entries = manifest.split_entries(Split::train);
    if (train_entries.empty() || manifest.split_entries(Split::validation).empty() ||
        manifest.split_entries(Split::test).empty())
        throw ContractError("train: every split must be non-empty for a training run");
    if (opts.batch_size < 1) throw ContractError("train: batch size must be >= 1");

    long n_train = static_cast<long>(train_entries.size());
    opts.schedule.steps_per_epoch = (n_train + opts.batch_size - 1) / opts.batch_size;
    opts.schedule.validate();

    AdamStateT<T> adam(model.params());
    TrainResult result;
    std::vector<std::vector<T>> best_snapshot = model.snapshot();
    long global_step = 0;

    for (int epoch = 0; epoch < opts.schedule.epochs; ++epoch) {
        std::vector<size_t> order(train_entries.size());
        std::iota(order.begin(), order.end(), size_t{0});
        std::mt19937_64 shuffle_rng(mix_seed(opts.seed, "shuffle-" + std::to_string(epoch)));
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        std::mt19937_64 drop_rng(mix_seed(opts.seed, "dropout-" + std::to_string(epoch)));
        DropoutCtx drop_ctx{model.config().dropout, &drop_rng};
        const DropoutCtx* drop = model.config().dropout > 0.0 ? &drop_ctx : nullptr;

        double loss_sum = 0.0;
        int correct = 0;
        std::vector<std::vector<double>> epoch_probs;
        std::vector<int> epoch_labels;

        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(opts.batch_size)) {
            size_t stop = std::min(order.size(), start + static_cast<size_t>(opts.batch_size));
            std::vector<TensorT<T>> rows;
            std::vector<int> labels;
            for (size_t bi = start; bi < stop; ++bi) {
                const ManifestEntry& e = *train_entries[order[bi]];
                Volume v = read_volume(manifest.resolve(e));
                std::mt19937_64 aug_rng(mix_seed(
                    mix_seed(opts.seed + opts.augment.stream, v.id), "augment-" + std::to_string(epoch)));
                v = augment(v, opts.augment, aug_rng);
                LogitsT<T> logits = model.forward(v, drop);
                rows.push_back(reshape(logits.fused, {1, manifest.num_classes}));
                labels.push_back(e.label);
                std::vector<double> probs = softmax_probs(logits.fused);
                int pred = 0;
                for (size_t c = 1; c < probs.size(); ++c)
                    if (probs[c] > probs[static_cast<size_t>(pred)]) pred = static_cast<int>(c);
                if (pred == e.label) ++correct;
                epoch_probs.push_back(std::move(probs));
                epoch_labels.push_back(e.label);
            }
            TensorT<T> batch = rows.size() == 1 ? rows[0] : concat(rows, 0);
            TensorT<T> loss = classification_loss(batch, labels, manifest.task);
            loss_sum += static_cast<double>(loss.data()[0]) * static_cast<double>(labels.size());
            model.params().zero_grad();
            backward(loss);
            double lr = lr_at(global_step, opts.schedule);
            adam.step_update(model.params(), lr);
            ++global_step;
        }
        double epoch_lr = lr_at(global_step - 1, opts.schedule);
        double train_loss = loss_sum / static_cast<double>(n_train);
        double train_acc = static_cast<double>(correct) / static_cast<double>(n_train);
        auto train_auc = macro_ovr_auc(epoch_probs, epoch_labels, manifest.num_classes).macro;
        result.log_lines.push_back(metrics_line(epoch, "train", train_loss, train_acc, train_auc, epoch_lr));
        result.final_train_loss = train_loss;
        result.final_train_accuracy = train_acc;

        EvalReport val = evaluate(model, manifest, Split::validation);
        result.log_lines.push_back(
            metrics_line(epoch, "validation", val.mean_loss, val.accuracy, val.auc, epoch_lr));
        if (val.accuracy > result.best_val_accuracy) {  // ties keep the earlier epoch
            result.best_val_accuracy = val.accuracy;
            result.best_epoch = epoch;
            best_snapshot = model.snapshot();
        }
    }
    result.total_steps = global_step;

    model.restore(best_snapshot);
    result.test_report = evaluate(model, manifest, Split::test);
    double last_lr = lr_at(global_step - 1, opts.schedule);
    result.log_lines.push_back(metrics_line(result.best_epoch, "test", result.test_report.mean_loss,
                                            result.test_report.accuracy, result.test_report.auc, last_lr));

    if (!opts.out_dir.empty()) {
        std::error_code ec;
        std::filesystem::create_directories(opts.out_dir, ec);
        if (ec) throw IoError("cannot create output directory '" + opts.out_dir + "': " + ec.message());
        std::ofstream log((std::filesystem::path(opts.out_dir) / "metrics.log").string());
        if (!log) throw IoError("cannot write metrics log under '" + opts.out_dir + "'");
        for (const auto& line : result.log_lines) log << line << "\n";
        model.save_params((std::filesystem::path(opts.out_dir) / "best.axc").string());
    }
    return result;
}

}  // namespace axialfuse
