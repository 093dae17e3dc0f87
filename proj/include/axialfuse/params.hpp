#pragma once

#include <random>
#include <string>
#include <vector>

#include "axialfuse/tensor.hpp"

namespace axialfuse {

// Named trainable (or frozen) tensor. A frozen parameter never requires
// grad, so the tape skips it and the optimizer never touches it.
template <typename T>
struct ParameterT {
    TensorT<T> value;
    std::string name;
    bool frozen = false;

    ParameterT() = default;
    ParameterT(std::string n, TensorT<T> v, bool froz = false)
        : value(std::move(v)), name(std::move(n)), frozen(froz) {
        value.impl->requires_grad = !frozen;
    }

    const std::vector<T>& grad() const { return value.grad(); }
    void zero_grad() { value.zero_grad(); }
};

using Parameter = ParameterT<float>;

// Flat list of parameter pointers in registration order. Registration order
// is the checkpoint order, so it must be deterministic.
template <typename T>
struct ParamRegistryT {
    std::vector<ParameterT<T>*> items;

    void add(ParameterT<T>& p) { items.push_back(&p); }
    size_t size() const { return items.size(); }
    size_t scalar_count() const {
        size_t n = 0;
        for (auto* p : items) n += p->value.numel();
        return n;
    }
    void zero_grad() {
        for (auto* p : items) p->zero_grad();
    }
};

// Truncated normal init (resample outside 2 sigma), ViT convention.
template <typename T>
void fill_trunc_normal(TensorT<T>& t, std::mt19937_64& rng, double sigma = 0.02) {
    std::normal_distribution<double> dist(0.0, sigma);
    for (T& v : t.mutable_data()) {
        double d = dist(rng);
        while (std::abs(d) > 2.0 * sigma) d = dist(rng);
        v = static_cast<T>(d);
    }
}

}  // namespace axialfuse
