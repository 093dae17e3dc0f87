#include <gtest/gtest.h>

#include <cstring>
#include <random>

#include "axialfuse/planar.hpp"

using namespace axialfuse;

namespace {

Volume random_volume(int d, int h, int w, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> dist(0.0f, 1.0f);
    Volume v;
    v.d = d;
    v.h = h;
    v.w = w;
    v.id = "rv";
    v.voxels.resize(v.numel());
    for (float& x : v.voxels) x = dist(rng);
    return v;
}

bool volumes_equal(const Volume& a, const Volume& b) {
    return a.d == b.d && a.h == b.h && a.w == b.w &&
           std::memcmp(a.voxels.data(), b.voxels.data(), a.voxels.size() * sizeof(float)) == 0;
}

// independent closed-form sampler for the resize oracle
float oracle_bilinear(const std::vector<float>& img, int rows, int cols, int out, int oy, int ox) {
    auto src = [&](int o, int in_len) {
        float s = (o + 0.5f) * (static_cast<float>(in_len) / out) - 0.5f;
        return std::min(std::max(s, 0.0f), static_cast<float>(in_len - 1));
    };
    float sy = src(oy, rows), sx = src(ox, cols);
    int y0 = static_cast<int>(sy), x0 = static_cast<int>(sx);
    int y1 = std::min(y0 + 1, rows - 1), x1 = std::min(x0 + 1, cols - 1);
    float fy = sy - y0, fx = sx - x0;
    return img[y0 * cols + x0] * (1 - fy) * (1 - fx) + img[y0 * cols + x1] * (1 - fy) * fx +
           img[y1 * cols + x0] * fy * (1 - fx) + img[y1 * cols + x1] * fy * fx;
}

}  // namespace

TEST(SlicePlane, Shapes64Cube) {
    Volume v = random_volume(64, 64, 64, 1);
    for (Plane p : {Plane::axial, Plane::coronal, Plane::sagittal}) {
        RawSlices s = slice_plane(v, p);
        EXPECT_EQ(s.count, 64);
        EXPECT_EQ(s.rows, 64);
        EXPECT_EQ(s.cols, 64);
    }
}

TEST(SlicePlane, AxesFollowAnatomy) {
    Volume v = random_volume(4, 6, 8, 2);
    RawSlices ax = slice_plane(v, Plane::axial);
    EXPECT_EQ(ax.count, 4);
    EXPECT_EQ(ax.rows, 6);
    EXPECT_EQ(ax.cols, 8);
    RawSlices cor = slice_plane(v, Plane::coronal);
    EXPECT_EQ(cor.count, 6);
    EXPECT_EQ(cor.rows, 4);
    EXPECT_EQ(cor.cols, 8);
    RawSlices sag = slice_plane(v, Plane::sagittal);
    EXPECT_EQ(sag.count, 8);
    EXPECT_EQ(sag.rows, 4);
    EXPECT_EQ(sag.cols, 6);
    EXPECT_FLOAT_EQ(ax.at(1, 2, 3), v.at(1, 2, 3));
    EXPECT_FLOAT_EQ(cor.at(2, 1, 3), v.at(1, 2, 3));
    EXPECT_FLOAT_EQ(sag.at(3, 1, 2), v.at(1, 2, 3));
}

TEST(SlicePlane, DeltaVoxelLocator) {
    Volume v;
    v.d = 5;
    v.h = 6;
    v.w = 7;
    v.id = "delta";
    v.voxels.assign(v.numel(), 0.0f);
    int dd = 2, hh = 4, ww = 5;
    v.at(dd, hh, ww) = 1.0f;
    struct Expect {
        Plane plane;
        int index;
    } cases[] = {{Plane::axial, dd}, {Plane::coronal, hh}, {Plane::sagittal, ww}};
    for (const auto& c : cases) {
        RawSlices s = slice_plane(v, c.plane);
        for (int i = 0; i < s.count; ++i) {
            float mx = 0;
            for (int r = 0; r < s.rows; ++r)
                for (int col = 0; col < s.cols; ++col) mx = std::max(mx, s.at(i, r, col));
            EXPECT_EQ(mx > 0, i == c.index) << plane_token(c.plane) << " slice " << i;
        }
    }
}

TEST(SlicePlane, ReassemblyIsBitExact) {
    Volume v = random_volume(6, 5, 9, 3);
    for (Plane p : {Plane::axial, Plane::coronal, Plane::sagittal}) {
        Volume back = assemble_from_slices(slice_plane(v, p), v.d, v.h, v.w);
        EXPECT_TRUE(volumes_equal(v, back)) << plane_token(p);
    }
}

TEST(Resize, ConstantStaysConstant) {
    RawSlices raw;
    raw.plane = Plane::axial;
    raw.count = 2;
    raw.rows = 5;
    raw.cols = 5;
    raw.data.assign(50, 0.4f);
    PlaneStack out = resize_bilinear(raw, 9);
    for (float v : out.data) EXPECT_FLOAT_EQ(v, 0.4f);
}

TEST(Resize, IdentityScaleTriplicatesInput) {
    Volume v = random_volume(4, 6, 6, 4);
    RawSlices raw = slice_plane(v, Plane::axial);
    PlaneStack out = resize_bilinear(raw, 6);
    ASSERT_EQ(out.d_plane, 4);
    for (int c = 0; c < 3; ++c)
        for (int d = 0; d < 4; ++d)
            for (int y = 0; y < 6; ++y)
                for (int x = 0; x < 6; ++x)
                    ASSERT_EQ(out.at(c, d, y, x), raw.at(d, y, x));
}

TEST(Resize, TwoByTwoUpsampleMatchesFrozenOracle) {
    RawSlices raw;
    raw.plane = Plane::axial;
    raw.count = 1;
    raw.rows = 2;
    raw.cols = 2;
    raw.data = {0, 1, 2, 3};
    PlaneStack out = resize_bilinear(raw, 4);
    // values computed with the closed-form align-corners-false sampler
    const float want[16] = {0.0f, 0.25f, 0.75f, 1.0f,  0.5f, 0.75f, 1.25f, 1.5f,
                            1.5f, 1.75f, 2.25f, 2.5f, 2.0f, 2.25f, 2.75f, 3.0f};
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) {
            EXPECT_FLOAT_EQ(out.at(0, 0, y, x), want[y * 4 + x]);
            EXPECT_FLOAT_EQ(out.at(0, 0, y, x), oracle_bilinear(raw.data, 2, 2, 4, y, x));
        }
}

TEST(Resize, RandomDownAndUpMatchOracle) {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<float> dist(0, 1);
    RawSlices raw;
    raw.plane = Plane::coronal;
    raw.count = 1;
    raw.rows = 7;
    raw.cols = 9;
    raw.data.resize(63);
    for (float& v : raw.data) v = dist(rng);
    for (int s : {3, 5, 12}) {
        PlaneStack out = resize_bilinear(raw, s);
        for (int y = 0; y < s; ++y)
            for (int x = 0; x < s; ++x)
                ASSERT_NEAR(out.at(0, 0, y, x), oracle_bilinear(raw.data, 7, 9, s, y, x), 1e-6);
    }
}

TEST(Resize, ChannelsAreBitIdentical) {
    Volume v = random_volume(3, 8, 8, 6);
    PlaneStack out = resize_bilinear(slice_plane(v, Plane::sagittal), 5);
    size_t channel = static_cast<size_t>(out.d_plane) * out.s * out.s;
    EXPECT_EQ(0, std::memcmp(out.data.data(), out.data.data() + channel, channel * sizeof(float)));
    EXPECT_EQ(0, std::memcmp(out.data.data(), out.data.data() + 2 * channel, channel * sizeof(float)));
}

TEST(Resize, NoOvershootBeyondInputEnvelope) {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<float> dist(0.2f, 0.8f);
    RawSlices raw;
    raw.plane = Plane::axial;
    raw.count = 1;
    raw.rows = 6;
    raw.cols = 6;
    raw.data.resize(36);
    float lo = 1.0f, hi = 0.0f;
    for (float& v : raw.data) {
        v = dist(rng);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    PlaneStack out = resize_bilinear(raw, 17);
    for (float v : out.data) {
        EXPECT_GE(v, lo);
        EXPECT_LE(v, hi);
    }
}

TEST(Augment, DisabledPolicyIsIdentity) {
    Volume v = random_volume(8, 8, 8, 8);
    std::mt19937_64 rng(1);
    Volume out = augment(v, AugmentPolicy::none(), rng);
    EXPECT_TRUE(volumes_equal(v, out));
    Volume out2 = augment(v, AugmentPolicy::all(0.0), rng);
    EXPECT_TRUE(volumes_equal(v, out2));
}

TEST(Augment, FlipIsInvolution) {
    Volume v = random_volume(6, 7, 8, 9);
    for (int axis = 0; axis < 3; ++axis) {
        Volume f = v;
        apply_flip(f, axis);
        EXPECT_FALSE(volumes_equal(v, f));
        apply_flip(f, axis);
        EXPECT_TRUE(volumes_equal(v, f)) << "axis " << axis;
    }
}

TEST(Augment, GammaOneIsIdentity) {
    Volume v = random_volume(5, 5, 5, 10);
    Volume g = v;
    apply_gamma(g, 1.0);
    EXPECT_TRUE(volumes_equal(v, g));
}

TEST(Augment, PolicyLevelFlipTwiceWithSameStreamIsIdentity) {
    AugmentPolicy only_flip;
    only_flip.flip.enabled = true;
    only_flip.flip.prob = 1.0;
    Volume v = random_volume(6, 6, 6, 11);
    std::mt19937_64 r1(12345), r2(12345);
    Volume once = augment(v, only_flip, r1);
    std::mt19937_64 r1b(12345);
    Volume twice = augment(once, only_flip, r1b);  // same stream -> same axis
    EXPECT_FALSE(volumes_equal(v, once));
    EXPECT_TRUE(volumes_equal(v, twice));
}

TEST(Augment, DeterministicGivenSeedAndSensitiveToIt) {
    Volume v = random_volume(8, 8, 8, 12);
    AugmentPolicy policy = AugmentPolicy::all(1.0);
    std::mt19937_64 a(77), b(77), c(78);
    Volume o1 = augment(v, policy, a);
    Volume o2 = augment(v, policy, b);
    Volume o3 = augment(v, policy, c);
    EXPECT_TRUE(volumes_equal(o1, o2));
    EXPECT_FALSE(volumes_equal(o1, o3));
}

TEST(Augment, OutputStaysInUnitRangeAndFinite) {
    for (uint64_t seed = 0; seed < 10; ++seed) {
        Volume v = random_volume(9, 9, 9, 100 + seed);
        std::mt19937_64 rng(seed);
        Volume out = augment(v, AugmentPolicy::all(1.0), rng);
        for (float x : out.voxels) {
            ASSERT_TRUE(std::isfinite(x));
            ASSERT_GE(x, 0.0f);
            ASSERT_LE(x, 1.0f);
        }
    }
}

TEST(Augment, AnisotropyChangesThenRestoresShape) {
    Volume v = random_volume(10, 10, 10, 13);
    Volume out = v;
    apply_anisotropy(out, 1, 2.0);
    EXPECT_EQ(out.d, 10);
    EXPECT_EQ(out.h, 10);
    EXPECT_EQ(out.w, 10);
    EXPECT_FALSE(volumes_equal(v, out));  // information was lost and re-interpolated
}

TEST(Augment, AffineZeroAnglesUnitScaleIsIdentity) {
    Volume v = random_volume(6, 6, 6, 14);
    Volume out = v;
    apply_affine(out, {0.0, 0.0, 0.0}, 1.0);
    for (size_t i = 0; i < v.voxels.size(); ++i) ASSERT_NEAR(out.voxels[i], v.voxels[i], 1e-6f);
}
