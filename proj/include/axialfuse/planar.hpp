#pragma once

#include <array>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "axialfuse/common.hpp"
#include "axialfuse/volume.hpp"

namespace axialfuse {

enum class Plane { axial, coronal, sagittal };

inline const char* plane_token(Plane p) {
    switch (p) {
        case Plane::axial: return "axial";
        case Plane::coronal: return "coronal";
        default: return "sagittal";
    }
}

inline Plane parse_plane(const std::string& tok) {
    if (tok == "axial") return Plane::axial;
    if (tok == "coronal") return Plane::coronal;
    if (tok == "sagittal") return Plane::sagittal;
    throw ParseError("unknown plane token '" + tok + "'");
}

// Raw slice stack straight out of slice_plane, before resize/triplication.
struct RawSlices {
    Plane plane = Plane::axial;
    int count = 0, rows = 0, cols = 0;
    std::vector<float> data;  // (count, rows, cols)
    std::string source_id;

    float at(int s, int r, int c) const { return data[(static_cast<size_t>(s) * rows + r) * cols + c]; }
};

// Axial slices index along D (each H x W), coronal along H (each D x W),
// sagittal along W (each D x H). Slice order follows the normal axis.
inline RawSlices slice_plane(const Volume& v, Plane plane) {
    RawSlices out;
    out.plane = plane;
    out.source_id = v.id;
    switch (plane) {
        case Plane::axial: out.count = v.d; out.rows = v.h; out.cols = v.w; break;
        case Plane::coronal: out.count = v.h; out.rows = v.d; out.cols = v.w; break;
        case Plane::sagittal: out.count = v.w; out.rows = v.d; out.cols = v.h; break;
    }
    out.data.resize(static_cast<size_t>(out.count) * out.rows * out.cols);
    size_t i = 0;
    for (int s = 0; s < out.count; ++s)
        for (int r = 0; r < out.rows; ++r)
            for (int c = 0; c < out.cols; ++c, ++i) {
                switch (plane) {
                    case Plane::axial: out.data[i] = v.at(s, r, c); break;
                    case Plane::coronal: out.data[i] = v.at(r, s, c); break;
                    case Plane::sagittal: out.data[i] = v.at(r, c, s); break;
                }
            }
    return out;
}

// Inverse of slice_plane; the decomposition is a lossless re-partition.
inline Volume assemble_from_slices(const RawSlices& raw, int d, int h, int w) {
    Volume v;
    v.d = d;
    v.h = h;
    v.w = w;
    v.id = raw.source_id;
    v.voxels.assign(v.numel(), 0.0f);
    for (int s = 0; s < raw.count; ++s)
        for (int r = 0; r < raw.rows; ++r)
            for (int c = 0; c < raw.cols; ++c) {
                float val = raw.at(s, r, c);
                switch (raw.plane) {
                    case Plane::axial: v.at(s, r, c) = val; break;
                    case Plane::coronal: v.at(r, s, c) = val; break;
                    case Plane::sagittal: v.at(r, c, s) = val; break;
                }
            }
    return v;
}

// Resized, channel-triplicated slice stack ready for the extractor.
// Layout (C=3, D_plane, S, S), channel outermost, matching the dump format.
struct PlaneStack {
    Plane plane = Plane::axial;
    int d_plane = 0, s = 0;
    std::vector<float> data;
    std::string source_id;

    static constexpr int channels = 3;
    float at(int c, int d, int y, int x) const {
        return data[((static_cast<size_t>(c) * d_plane + d) * s + y) * s + x];
    }
    const float* slice_channel(int c, int d) const {
        return data.data() + (static_cast<size_t>(c) * d_plane + d) * s * s;
    }
};

namespace detail {

// align-corners-false source coordinate, edge-clamped
inline float sample_bilinear(const float* img, int rows, int cols, float sy, float sx) {
    sy = std::min(std::max(sy, 0.0f), static_cast<float>(rows - 1));
    sx = std::min(std::max(sx, 0.0f), static_cast<float>(cols - 1));
    int y0 = static_cast<int>(sy), x0 = static_cast<int>(sx);
    int y1 = std::min(y0 + 1, rows - 1), x1 = std::min(x0 + 1, cols - 1);
    float fy = sy - y0, fx = sx - x0;
    float a = img[y0 * cols + x0], b = img[y0 * cols + x1];
    float c = img[y1 * cols + x0], d = img[y1 * cols + x1];
    float top = a + (b - a) * fx;
    float bot = c + (d - c) * fx;
    return top + (bot - top) * fy;
}

}  // namespace detail

inline PlaneStack resize_bilinear(const RawSlices& raw, int s) {
    if (s < 2) throw ContractError("resize_bilinear: target extent must be >= 2, got " + std::to_string(s));
    PlaneStack out;
    out.plane = raw.plane;
    out.d_plane = raw.count;
    out.s = s;
    out.source_id = raw.source_id;
    out.data.resize(static_cast<size_t>(3) * raw.count * s * s);
    float ry = static_cast<float>(raw.rows) / s;
    float rx = static_cast<float>(raw.cols) / s;
    std::vector<float> one(static_cast<size_t>(s) * s);
    for (int d = 0; d < raw.count; ++d) {
        const float* img = raw.data.data() + static_cast<size_t>(d) * raw.rows * raw.cols;
        if (s == raw.rows && s == raw.cols) {
            std::copy(img, img + one.size(), one.begin());
        } else {
            for (int y = 0; y < s; ++y)
                for (int x = 0; x < s; ++x)
                    one[static_cast<size_t>(y) * s + x] = detail::sample_bilinear(
                        img, raw.rows, raw.cols, (y + 0.5f) * ry - 0.5f, (x + 0.5f) * rx - 0.5f);
        }
        for (int c = 0; c < 3; ++c)
            std::copy(one.begin(), one.end(),
                      out.data.begin() + ((static_cast<size_t>(c) * raw.count + d) * s * s));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Training-time augmentation. All six transforms act on the 3D volume, in
// the fixed order anisotropy -> affine -> flip -> noise -> blur -> gamma,
// so every plane sees one consistent geometry.
// ---------------------------------------------------------------------------

struct AugmentPolicy {
    struct Item {
        bool enabled = false;
        double prob = 0.0;
    };
    Item anisotropy, affine, flip, noise, blur, gamma;
    uint64_t stream = 0;

    static AugmentPolicy none() { return AugmentPolicy{}; }
    static AugmentPolicy all(double prob) {
        AugmentPolicy p;
        for (Item* it : {&p.anisotropy, &p.affine, &p.flip, &p.noise, &p.blur, &p.gamma}) {
            it->enabled = prob > 0.0;
            it->prob = prob;
        }
        return p;
    }
    bool is_identity() const {
        for (const Item* it : {&anisotropy, &affine, &flip, &noise, &blur, &gamma})
            if (it->enabled && it->prob > 0.0) return false;
        return true;
    }
};

namespace detail {

// 1D linear resample of one axis (align-corners-false, edge clamp)
inline void resample_axis(Volume& v, int axis, int new_len) {
    int ext[3] = {v.d, v.h, v.w};
    int old_len = ext[axis];
    if (new_len == old_len) return;
    int ne[3] = {ext[0], ext[1], ext[2]};
    ne[axis] = new_len;
    Volume out;
    out.d = ne[0];
    out.h = ne[1];
    out.w = ne[2];
    out.id = v.id;
    out.voxels.resize(out.numel());
    float ratio = static_cast<float>(old_len) / new_len;
    for (int z = 0; z < out.d; ++z)
        for (int y = 0; y < out.h; ++y)
            for (int x = 0; x < out.w; ++x) {
                int idx[3] = {z, y, x};
                float src = (idx[axis] + 0.5f) * ratio - 0.5f;
                src = std::min(std::max(src, 0.0f), static_cast<float>(old_len - 1));
                int i0 = static_cast<int>(src);
                int i1 = std::min(i0 + 1, old_len - 1);
                float f = src - i0;
                int p0[3] = {z, y, x}, p1[3] = {z, y, x};
                p0[axis] = i0;
                p1[axis] = i1;
                float a = v.at(p0[0], p0[1], p0[2]);
                float b = v.at(p1[0], p1[1], p1[2]);
                out.at(z, y, x) = a + (b - a) * f;
            }
    v = std::move(out);
}

inline float sample_trilinear_zero(const Volume& v, float sz, float sy, float sx) {
    if (sz <= -1.0f || sy <= -1.0f || sx <= -1.0f || sz >= static_cast<float>(v.d) ||
        sy >= static_cast<float>(v.h) || sx >= static_cast<float>(v.w))
        return 0.0f;
    int z0 = static_cast<int>(std::floor(sz)), y0 = static_cast<int>(std::floor(sy)),
        x0 = static_cast<int>(std::floor(sx));
    float fz = sz - z0, fy = sy - y0, fx = sx - x0;
    float acc = 0.0f;
    for (int dz = 0; dz < 2; ++dz)
        for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
                int z = z0 + dz, y = y0 + dy, x = x0 + dx;
                if (z < 0 || y < 0 || x < 0 || z >= v.d || y >= v.h || x >= v.w) continue;
                float wgt = (dz ? fz : 1.0f - fz) * (dy ? fy : 1.0f - fy) * (dx ? fx : 1.0f - fx);
                acc += wgt * v.at(z, y, x);
            }
    return acc;
}

}  // namespace detail

inline void apply_anisotropy(Volume& v, int axis, double factor) {
    int ext[3] = {v.d, v.h, v.w};
    int down = std::max(2, static_cast<int>(std::lround(ext[axis] / factor)));
    detail::resample_axis(v, axis, down);
    detail::resample_axis(v, axis, ext[axis]);
}

// rotation angles in radians per axis, uniform scale; zero padding outside
inline void apply_affine(Volume& v, const std::array<double, 3>& angles, double scl) {
    auto R = detail::rotation_zyx(angles[0], angles[1], angles[2]);
    double cz = (v.d - 1) / 2.0, cy = (v.h - 1) / 2.0, cx = (v.w - 1) / 2.0;
    Volume out = v;
    // inverse map: source = (1/s) * R^T * (p - c) + c
    for (int z = 0; z < v.d; ++z)
        for (int y = 0; y < v.h; ++y)
            for (int x = 0; x < v.w; ++x) {
                double p[3] = {z - cz, y - cy, x - cx};
                double sz = (R[0][0] * p[0] + R[1][0] * p[1] + R[2][0] * p[2]) / scl + cz;
                double sy = (R[0][1] * p[0] + R[1][1] * p[1] + R[2][1] * p[2]) / scl + cy;
                double sx = (R[0][2] * p[0] + R[1][2] * p[1] + R[2][2] * p[2]) / scl + cx;
                out.at(z, y, x) = detail::sample_trilinear_zero(v, static_cast<float>(sz),
                                                                static_cast<float>(sy),
                                                                static_cast<float>(sx));
            }
    v = std::move(out);
}

inline void apply_flip(Volume& v, int axis) {
    Volume out = v;
    for (int z = 0; z < v.d; ++z)
        for (int y = 0; y < v.h; ++y)
            for (int x = 0; x < v.w; ++x) {
                int src[3] = {z, y, x};
                int ext[3] = {v.d, v.h, v.w};
                src[axis] = ext[axis] - 1 - src[axis];
                out.at(z, y, x) = v.at(src[0], src[1], src[2]);
            }
    v = std::move(out);
}

inline void apply_noise(Volume& v, double sigma, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, sigma);
    for (float& x : v.voxels)
        x = static_cast<float>(std::min(1.0, std::max(0.0, x + dist(rng))));
}

inline void apply_blur(Volume& v, double sigma) {
    int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<float> kernel(static_cast<size_t>(2 * radius + 1));
    for (int t = -radius; t <= radius; ++t)
        kernel[static_cast<size_t>(t + radius)] = static_cast<float>(std::exp(-0.5 * t * t / (sigma * sigma)));
    // separable passes; at borders the kernel renormalizes over the valid
    // support so constants stay constant
    for (int axis = 0; axis < 3; ++axis) {
        Volume out = v;
        int ext[3] = {v.d, v.h, v.w};
        for (int z = 0; z < v.d; ++z)
            for (int y = 0; y < v.h; ++y)
                for (int x = 0; x < v.w; ++x) {
                    int idx[3] = {z, y, x};
                    float acc = 0.0f, wsum = 0.0f;
                    for (int t = -radius; t <= radius; ++t) {
                        int j = idx[axis] + t;
                        if (j < 0 || j >= ext[axis]) continue;
                        int p[3] = {z, y, x};
                        p[axis] = j;
                        float wgt = kernel[static_cast<size_t>(t + radius)];
                        acc += wgt * v.at(p[0], p[1], p[2]);
                        wsum += wgt;
                    }
                    out.at(z, y, x) = acc / wsum;
                }
        v = std::move(out);
    }
}

inline void apply_gamma(Volume& v, double gamma) {
    for (float& x : v.voxels) x = static_cast<float>(std::pow(static_cast<double>(x), gamma));
}

constexpr double kDeg2Rad = 0.017453292519943295;

inline Volume augment(const Volume& input, const AugmentPolicy& policy, std::mt19937_64& rng) {
    Volume v = input;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<int> axis3(0, 2);

    if (policy.anisotropy.enabled && unit(rng) < policy.anisotropy.prob) {
        int axis = axis3(rng);
        double factor = 1.5 + 1.5 * unit(rng);
        apply_anisotropy(v, axis, factor);
    }
    if (policy.affine.enabled && unit(rng) < policy.affine.prob) {
        std::array<double, 3> angles;
        for (double& a : angles) a = (unit(rng) * 20.0 - 10.0) * kDeg2Rad;
        double scl = 0.9 + 0.2 * unit(rng);
        apply_affine(v, angles, scl);
    }
    if (policy.flip.enabled && unit(rng) < policy.flip.prob) apply_flip(v, axis3(rng));
    if (policy.noise.enabled && unit(rng) < policy.noise.prob) apply_noise(v, 0.05 * unit(rng), rng);
    if (policy.blur.enabled && unit(rng) < policy.blur.prob) apply_blur(v, 0.25 + 0.75 * unit(rng));
    if (policy.gamma.enabled && unit(rng) < policy.gamma.prob)
        apply_gamma(v, std::exp(unit(rng) * 0.6 - 0.3));

    for (float& x : v.voxels) x = std::min(1.0f, std::max(0.0f, x));
    v.validate("augment");
    return v;
}

}  // namespace axialfuse
