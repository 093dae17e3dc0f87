// Acceptance suite: one test per acceptance criterion, each at its stated
// tolerance. Every test prints one pass/fail line through the runner.

#include <gtest/gtest.h>

#include <chrono>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

#include "axialfuse/gradcheck_suite.hpp"
#include "axialfuse/model.hpp"
#include "axialfuse/training.hpp"

using namespace axialfuse;
namespace fs = std::filesystem;

namespace {

fs::path test_dir(const std::string& name) {
    fs::path dir = fs::path(::testing::TempDir()) / ("acceptance_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::vector<unsigned char> read_bytes_of(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return std::vector<unsigned char>(std::istreambuf_iterator<char>(is), {});
}

void write_bytes_to(const fs::path& p, const std::vector<unsigned char>& bytes) {
    std::ofstream os(p, std::ios::binary);
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

template <typename T>
TensorT<T> random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<T> vals(numel_of(shape));
    for (T& v : vals) v = static_cast<T>(dist(rng));
    return TensorT<T>::leaf(shape, std::move(vals));
}

template <typename T>
void randomize_params(ParamRegistryT<T>& reg, std::mt19937_64& rng, double sigma = 0.2) {
    std::normal_distribution<double> dist(0.0, sigma);
    for (auto* p : reg.items)
        for (T& v : p->value.mutable_data()) v = static_cast<T>(dist(rng));
}

std::optional<double> pairwise_auc_oracle(const std::vector<double>& scores,
                                          const std::vector<bool>& positive) {
    long long n1 = 0, n0 = 0, num2 = 0;
    for (size_t i = 0; i < scores.size(); ++i) (positive[i] ? n1 : n0) += 1;
    if (n1 == 0 || n0 == 0) return std::nullopt;
    for (size_t i = 0; i < scores.size(); ++i) {
        if (!positive[i]) continue;
        for (size_t j = 0; j < scores.size(); ++j) {
            if (positive[j]) continue;
            if (scores[i] > scores[j]) num2 += 2;
            else if (scores[i] == scores[j]) num2 += 1;
        }
    }
    return static_cast<double>(num2) / static_cast<double>(2 * n1 * n0);
}

ModelConfig small_model_config(Fusion fusion = Fusion::dual_axial) {
    ModelConfig cfg;
    cfg.embed_dim = 16;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.num_classes = 2;
    cfg.slice_size = 8;
    cfg.vol_d = cfg.vol_h = cfg.vol_w = 8;
    cfg.fusion = fusion;
    cfg.extractor.embed_dim = 16;
    cfg.extractor.patch = 4;
    cfg.extractor.seed = 5;
    return cfg;
}

template <typename T>
std::array<PlaneSequenceT<T>, 3> random_sequences(int rows, int e, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    std::array<PlaneSequenceT<T>, 3> seqs;
    const Plane planes[3] = {Plane::axial, Plane::coronal, Plane::sagittal};
    for (int p = 0; p < 3; ++p) {
        auto& s = seqs[static_cast<size_t>(p)];
        s.plane = planes[p];
        s.rows = rows;
        s.embed_dim = e;
        s.source_id = "acceptance";
        s.features.resize(static_cast<size_t>(rows) * e);
        for (T& v : s.features) v = static_cast<T>(dist(rng));
    }
    return seqs;
}

}  // namespace

// Criterion: every registered op and block passes 64-bit central-difference
// checks at < 1e-4, the end-to-end model at < 1e-3, within 2 minutes.
TEST(Acceptance, GradientSuite) {
    auto t0 = std::chrono::steady_clock::now();
    auto results = run_gradcheck_suite();
    double elapsed =
        std::chrono::duration_cast<std::chrono::seconds>(std::chrono::steady_clock::now() - t0).count();
    ASSERT_GE(results.size(), 21u);
    for (const auto& r : results)
        EXPECT_TRUE(r.pass) << r.name << " max_rel_err=" << r.max_rel_err << " tol=" << r.tol;
    bool has_end_to_end = false;
    for (const auto& r : results)
        if (r.name == "model_end_to_end") {
            has_end_to_end = true;
            EXPECT_LT(r.max_rel_err, 1e-3);
        }
    EXPECT_TRUE(has_end_to_end);
    EXPECT_LT(elapsed, 120.0);
}

// Criterion: over >= 100 random configurations, every attention probability
// row sums to 1 +- 1e-6.
TEST(Acceptance, AttentionNormalization) {
    std::mt19937_64 seeds(2025);
    int configs = 0;
    for (int trial = 0; trial < 110; ++trial) {
        std::mt19937_64 rng(seeds());
        std::uniform_int_distribution<int> head_pick(1, 4);
        int heads = head_pick(rng);
        int dh = 2 + static_cast<int>(rng() % 5);
        int e = heads * dh;
        int tq = 1 + static_cast<int>(rng() % 7);
        int tkv = 1 + static_cast<int>(rng() % 7);
        bool cross = trial % 2 == 0;
        EncoderConfig cfg;
        cfg.embed_dim = e;
        cfg.layers = 1;
        cfg.heads = heads;
        cfg.mode = cross ? EncoderMode::cross : EncoderMode::self;
        EncoderLayerT<float> layer("a", cfg, rng);
        ParamRegistryT<float> reg;
        layer.collect(reg);
        randomize_params(reg, rng, 0.5);
        auto q = random_tensor<float>({tq, e}, rng, -3.0, 3.0);
        std::vector<TensorT<float>> probe;
        if (cross) {
            auto kv = random_tensor<float>({tkv, e}, rng, -3.0, 3.0);
            layer.forward_cross(q, kv, &probe);
        } else {
            tkv = tq;
            layer.forward_self(q, &probe);
        }
        ASSERT_EQ(probe.size(), 1u);
        for (int h = 0; h < heads; ++h)
            for (int i = 0; i < tq; ++i) {
                double sum = 0;
                for (int k = 0; k < tkv; ++k) sum += probe[0].at({h, i, k});
                ASSERT_NEAR(sum, 1.0, 1e-6) << "config " << trial;
            }
        ++configs;
    }
    EXPECT_GE(configs, 100);
}

// Criterion: with one kv token the cross-attention output ignores the query
// values exactly, and a residual-enabled variant differs whenever q does
// not equal the output. Both on >= 20 seeds.
TEST(Acceptance, ResidualOmissionWitness) {
    for (uint64_t seed = 0; seed < 20; ++seed) {
        std::mt19937_64 rng(9000 + seed);
        EncoderConfig cfg;
        cfg.embed_dim = 16;
        cfg.layers = 1;
        cfg.heads = 4;
        cfg.mode = EncoderMode::cross;
        EncoderLayerT<double> layer("w", cfg, rng);
        ParamRegistryT<double> reg;
        layer.collect(reg);
        randomize_params(reg, rng);
        auto kv = random_tensor<double>({1, 16}, rng);
        auto q1 = random_tensor<double>({5, 16}, rng);
        auto q2 = random_tensor<double>({5, 16}, rng);
        auto o1 = layer.forward_cross(q1, kv);
        auto o2 = layer.forward_cross(q2, kv);
        ASSERT_EQ(o1.data(), o2.data()) << "seed " << seed;
        auto with_res = layer.forward_cross(q1, kv, nullptr, nullptr, /*query_residual=*/true);
        ASSERT_NE(with_res.data(), o1.data()) << "seed " << seed;
    }
}

// Criterion: dual_axial vs reversed_qkv on identical inputs and parameters
// produce fused logits differing by > 1e-3 on >= 20 seeds.
TEST(Acceptance, Directionality) {
    for (uint64_t seed = 0; seed < 20; ++seed) {
        ModelT<double> dual(small_model_config(Fusion::dual_axial), 500 + seed);
        ModelT<double> rev(small_model_config(Fusion::reversed_qkv), 500 + seed);
        // identical parameter values in both models; construction order is
        // fusion-independent, so equal-seeded draws line up one to one
        std::mt19937_64 pr1(6000 + seed), pr2(6000 + seed);
        randomize_params(dual.params(), pr1);
        randomize_params(rev.params(), pr2);
        auto seqs = random_sequences<double>(8, 16, 7000 + seed);
        auto a = dual.forward_from_sequences(seqs);
        auto b = rev.forward_from_sequences(seqs);
        double diff = 0;
        for (size_t i = 0; i < a.fused.numel(); ++i)
            diff = std::max(diff, std::abs(a.fused.data()[i] - b.fused.data()[i]));
        EXPECT_GT(diff, 1e-3) << "seed " << seed;
    }
}

// Criterion: perturbing only the sagittal input changes only the
// axial-sagittal head; the axial-coronal head is bit-identical.
TEST(Acceptance, GraphIsolation) {
    for (uint64_t seed = 0; seed < 10; ++seed) {
        ModelT<double> model(small_model_config(), 600 + seed);
        auto seqs = random_sequences<double>(8, 16, 8000 + seed);
        auto perturbed = seqs;
        for (auto& v : perturbed[2].features) v += 0.125;
        auto a = model.forward_from_sequences(seqs);
        auto b = model.forward_from_sequences(perturbed);
        ASSERT_EQ(a.head_primary.data(), b.head_primary.data()) << "seed " << seed;
        ASSERT_NE(a.head_secondary.data(), b.head_secondary.data()) << "seed " << seed;
    }
}

// Criterion: 2-class synthetic dataset, 20 train volumes of 16^3, desk
// config E=32/N=2/H=2, 200 steps, lr_max 1e-3 -> train accuracy 1.0, train
// loss < 0.05, validation accuracy >= 0.8, under 5 minutes.
TEST(Acceptance, OverfitSurrogate) {
    auto t0 = std::chrono::steady_clock::now();
    auto dir = test_dir("overfit");
    SynthSpec spec;
    spec.n_train = 10;  // per class: 20 train volumes total
    spec.n_validation = 2;
    spec.n_test = 2;
    spec.num_classes = 2;
    spec.side = 16;
    spec.seed = 7;
    RunManifest man = synth_dataset(spec, dir.string());
    ASSERT_EQ(man.split_entries(Split::train).size(), 20u);

    ModelConfig cfg;
    cfg.embed_dim = 32;
    cfg.layers = 2;
    cfg.heads = 2;
    cfg.num_classes = 2;
    cfg.slice_size = 32;
    cfg.vol_d = cfg.vol_h = cfg.vol_w = 16;
    cfg.extractor.embed_dim = 32;
    cfg.extractor.patch = 8;
    cfg.extractor.seed = 1;
    Model model(cfg, 42);

    TrainOptions opts;
    opts.schedule.lr_max = 1e-3;  // warmup 5 epochs, T0=10, Tmult=2 defaults
    opts.schedule.epochs = 40;    // 20 volumes / batch 4 = 5 steps/epoch -> 200 steps
    opts.batch_size = 4;
    opts.augment = AugmentPolicy::none();
    opts.seed = 9;
    TrainResult res = train_loop(model, man, opts);
    double elapsed =
        std::chrono::duration_cast<std::chrono::seconds>(std::chrono::steady_clock::now() - t0).count();

    EXPECT_EQ(res.total_steps, 200);
    EXPECT_EQ(res.final_train_accuracy, 1.0);
    EXPECT_LT(res.final_train_loss, 0.05);
    EXPECT_GE(res.best_val_accuracy, 0.8);
    EXPECT_LT(elapsed, 300.0);
}

// Criterion: macro OVR AUC matches an O(n^2) pairwise oracle exactly on
// >= 100 fuzzed instances (n <= 50, up to 11 classes, with ties).
TEST(Acceptance, MetricOracle) {
    std::mt19937_64 rng(31337);
    int instances = 0;
    for (int trial = 0; trial < 120; ++trial) {
        int classes = 2 + static_cast<int>(rng() % 10);  // 2..11
        int n = 5 + static_cast<int>(rng() % 46);        // 5..50
        std::uniform_int_distribution<int> label_of(0, classes - 1);
        std::uniform_int_distribution<int> quant(0, 7);  // heavy ties
        std::vector<std::vector<double>> scores(static_cast<size_t>(n), std::vector<double>(static_cast<size_t>(classes)));
        std::vector<int> labels(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) {
            labels[static_cast<size_t>(i)] = label_of(rng);
            for (int c = 0; c < classes; ++c)
                scores[static_cast<size_t>(i)][static_cast<size_t>(c)] = quant(rng) / 7.0;
        }
        AucResult lib = macro_ovr_auc(scores, labels, classes);
        double sum = 0;
        int valid = 0;
        for (int c = 0; c < classes; ++c) {
            std::vector<double> s(static_cast<size_t>(n));
            std::vector<bool> pos(static_cast<size_t>(n));
            for (int i = 0; i < n; ++i) {
                s[static_cast<size_t>(i)] = scores[static_cast<size_t>(i)][static_cast<size_t>(c)];
                pos[static_cast<size_t>(i)] = labels[static_cast<size_t>(i)] == c;
            }
            auto want = pairwise_auc_oracle(s, pos);
            ASSERT_EQ(lib.per_class[static_cast<size_t>(c)].has_value(), want.has_value());
            if (want) {
                ASSERT_EQ(*lib.per_class[static_cast<size_t>(c)], *want) << "trial " << trial;
                sum += *want;
                ++valid;
            }
        }
        if (valid) {
            ASSERT_TRUE(lib.macro.has_value());
            ASSERT_EQ(*lib.macro, sum / valid);
        } else {
            ASSERT_FALSE(lib.macro.has_value());
        }
        ++instances;
    }
    EXPECT_GE(instances, 100);
}

// Criterion: two full train runs with the same seed produce bit-identical
// metric logs and checkpoints.
TEST(Acceptance, Determinism) {
    auto data_dir = test_dir("det_data");
    SynthSpec spec;
    spec.n_train = 3;
    spec.n_validation = 1;
    spec.n_test = 1;
    spec.num_classes = 2;
    spec.side = 8;
    spec.seed = 21;
    RunManifest man = synth_dataset(spec, data_dir.string());
    auto run = [&](const fs::path& out) {
        Model model(small_model_config(), 77);
        TrainOptions opts;
        opts.schedule.epochs = 3;
        opts.schedule.warmup_epochs = 1;
        opts.schedule.lr_max = 1e-3;
        opts.batch_size = 4;
        opts.augment = AugmentPolicy::all(0.5);  // augmentation active and still deterministic
        opts.seed = 13;
        opts.out_dir = out.string();
        return train_loop(model, man, opts);
    };
    auto d1 = test_dir("det_run1"), d2 = test_dir("det_run2");
    TrainResult r1 = run(d1);
    TrainResult r2 = run(d2);
    EXPECT_EQ(r1.log_lines, r2.log_lines);
    EXPECT_EQ(read_bytes_of(d1 / "metrics.log"), read_bytes_of(d2 / "metrics.log"));
    EXPECT_EQ(read_bytes_of(d1 / "best.axc"), read_bytes_of(d2 / "best.axc"));
    EXPECT_FALSE(read_bytes_of(d1 / "metrics.log").empty());
}

// Criterion: AXV1/AXE1/AXC1 round-trips are bit-exact; a corpus of corrupt
// fixtures yields the documented error type, never a crash.
TEST(Acceptance, Formats) {
    auto dir = test_dir("formats");
    // AXV1 round trip
    std::mt19937_64 rng(5150);
    Volume vol;
    vol.d = vol.h = vol.w = 8;
    vol.id = "fmt";
    vol.voxels.resize(vol.numel());
    std::uniform_real_distribution<float> unit(0.0f, 1.0f);
    for (float& v : vol.voxels) v = unit(rng);
    std::string vpath = (dir / "v.axv").string();
    write_volume(vol, vpath);
    Volume vol2 = read_volume(vpath);
    ASSERT_EQ(0, std::memcmp(vol.voxels.data(), vol2.voxels.data(), vol.voxels.size() * sizeof(float)));

    // AXE1 round trip
    PlaneSequence seq;
    seq.plane = Plane::coronal;
    seq.rows = 6;
    seq.embed_dim = 16;
    seq.source_id = "fmt";
    seq.features.resize(96);
    for (float& v : seq.features) v = unit(rng) * 4 - 2;
    std::string epath = (dir / "e.axe").string();
    write_cache({seq}, epath);
    EmbeddingCache cache = read_cache(epath);
    const auto& rows = cache.lookup("fmt", Plane::coronal);
    ASSERT_EQ(0, std::memcmp(rows.data(), seq.features.data(), rows.size() * sizeof(float)));

    // AXC1 round trip: identical forward after reload
    ModelConfig mcfg = small_model_config();
    Model m1(mcfg, 31);
    std::string cpath = (dir / "m.axc").string();
    m1.save_params(cpath);
    Model m2(mcfg, 32);
    m2.load_params(cpath, true);
    Volume probe = synth_volume(1, 8, 99, "probe");
    Logits l1 = m1.forward(probe);
    Logits l2 = m2.forward(probe);
    ASSERT_EQ(l1.fused.data(), l2.fused.data());

    // corrupt fixture corpus across the three formats
    auto v_bytes = read_bytes_of(vpath);
    auto e_bytes = read_bytes_of(epath);
    auto c_bytes = read_bytes_of(cpath);
    int checked = 0;
    auto expect_format_error = [&](std::vector<unsigned char> bytes, const std::string& name,
                                   auto reader) {
        fs::path p = dir / name;
        write_bytes_to(p, bytes);
        try {
            reader(p.string());
            ADD_FAILURE() << name << " should have failed";
        } catch (const FormatError&) {
            ++checked;
        }
        // LookupError/other exceptions would fall through and fail the test
    };
    auto read_vol = [](const std::string& p) { read_volume(p); };
    auto read_cch = [](const std::string& p) { read_cache(p); };
    auto read_ckp = [](const std::string& p) { Model::peek_config(p); };

    auto mutate = [](std::vector<unsigned char> b, size_t off, unsigned char v) {
        b[off] = v;
        return b;
    };
    auto truncate = [](std::vector<unsigned char> b, size_t n) {
        b.resize(b.size() - n);
        return b;
    };
    // AXV1
    expect_format_error(mutate(v_bytes, 0, 'X'), "v_bad_magic.axv", read_vol);
    expect_format_error(mutate(v_bytes, 4, 3), "v_bad_version.axv", read_vol);
    expect_format_error(mutate(v_bytes, 5, 1), "v_bad_dtype.axv", read_vol);
    expect_format_error(mutate(v_bytes, 6, 4), "v_bad_ndim.axv", read_vol);
    expect_format_error(truncate(v_bytes, 13), "v_truncated.axv", read_vol);
    {
        auto b = v_bytes;
        b.push_back(7);
        expect_format_error(b, "v_trailing.axv", read_vol);
    }
    // AXE1
    expect_format_error(mutate(e_bytes, 0, 'Z'), "e_bad_magic.axe", read_cch);
    expect_format_error(mutate(e_bytes, 4, 2), "e_bad_version.axe", read_cch);
    expect_format_error(truncate(e_bytes, 5), "e_truncated.axe", read_cch);
    expect_format_error(mutate(e_bytes, 18, 9), "e_bad_plane.axe", read_cch);  // plane code byte
    // AXC1
    expect_format_error(mutate(c_bytes, 0, 'Q'), "c_bad_magic.axc", read_ckp);
    expect_format_error(mutate(c_bytes, 4, 9), "c_bad_version.axc", read_ckp);
    expect_format_error(mutate(c_bytes, 21, 7), "c_bad_fusion.axc", read_ckp);  // fusion code byte
    {
        auto b = c_bytes;
        b.resize(10);
        expect_format_error(b, "c_truncated.axc", read_ckp);
    }
    EXPECT_GE(checked, 10);
}

// Criterion: lr schedule hits 1e-12 at step 0, lr_max at warmup end and at
// each restart, and the midpoint at each half-cycle, to 1e-12 relative.
TEST(Acceptance, Schedule) {
    ScheduleSpec spec;
    spec.lr_init = 1e-12;
    spec.lr_max = 1e-4;
    spec.warmup_epochs = 5;
    spec.t0_epochs = 10;
    spec.tmult = 2;
    spec.epochs = 200;
    spec.steps_per_epoch = 4;
    auto rel_close = [](double got, double want) {
        return std::abs(got - want) <= 1e-12 * std::max(std::abs(got), std::abs(want));
    };
    EXPECT_EQ(lr_at(0, spec), 1e-12);
    long warm = 5 * 4;
    EXPECT_TRUE(rel_close(lr_at(warm, spec), 1e-4));
    // restart points: warm, warm + T0*spe, warm + (T0 + 2 T0)*spe, ...
    long cycle = 10 * 4;
    long at = warm;
    for (int k = 0; k < 4; ++k) {
        EXPECT_TRUE(rel_close(lr_at(at, spec), spec.lr_max)) << "restart " << k;
        EXPECT_TRUE(rel_close(lr_at(at + cycle / 2, spec), (spec.lr_max + spec.lr_init) / 2))
            << "half-cycle " << k;
        at += cycle;
        cycle *= 2;
    }
}

// Criterion: plane decomposition/reassembly is bit-exact for 100 random
// volumes; the delta-voxel locator works for all three planes.
TEST(Acceptance, Slicing) {
    std::mt19937_64 rng(4242);
    for (int trial = 0; trial < 100; ++trial) {
        int d = 2 + static_cast<int>(rng() % 15);
        int h = 2 + static_cast<int>(rng() % 15);
        int w = 2 + static_cast<int>(rng() % 15);
        Volume v;
        v.d = d;
        v.h = h;
        v.w = w;
        v.id = "t" + std::to_string(trial);
        v.voxels.resize(v.numel());
        std::uniform_real_distribution<float> unit(0.0f, 1.0f);
        for (float& x : v.voxels) x = unit(rng);
        for (Plane p : {Plane::axial, Plane::coronal, Plane::sagittal}) {
            Volume back = assemble_from_slices(slice_plane(v, p), d, h, w);
            ASSERT_EQ(0, std::memcmp(v.voxels.data(), back.voxels.data(), v.voxels.size() * sizeof(float)))
                << "trial " << trial << " plane " << plane_token(p);
        }
    }
    // delta-voxel locator
    Volume v;
    v.d = 7;
    v.h = 9;
    v.w = 11;
    v.id = "delta";
    v.voxels.assign(v.numel(), 0.0f);
    v.at(3, 5, 8) = 1.0f;
    struct Want {
        Plane plane;
        int index;
    } wants[] = {{Plane::axial, 3}, {Plane::coronal, 5}, {Plane::sagittal, 8}};
    for (const auto& wnt : wants) {
        RawSlices s = slice_plane(v, wnt.plane);
        for (int i = 0; i < s.count; ++i) {
            float mx = 0;
            for (int r = 0; r < s.rows; ++r)
                for (int c = 0; c < s.cols; ++c) mx = std::max(mx, s.at(i, r, c));
            ASSERT_EQ(mx > 0, i == wnt.index) << plane_token(wnt.plane) << " slice " << i;
        }
    }
}
