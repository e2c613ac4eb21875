#pragma once

#include <string>
#include <utility>
#include <vector>

#include "iidm/rng.hpp"
#include "iidm/tensor.hpp"

namespace iidm {

/// Ordered collection of named trainable tensors. Registration order drives
/// the optimizer; checkpoints re-sort lexicographically on save.
class ParamRegistry {
public:
    Tensor add(const std::string& name, Tensor t);
    const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
    std::vector<Tensor> tensors() const;
    Tensor find(const std::string& name) const; // throws if absent
    bool contains(const std::string& name) const;
    void zero_grad();

private:
    std::vector<std::pair<std::string, Tensor>> entries_;
};

struct Conv2d {
    Tensor w; // (Cout,Cin,k,k)
    Tensor b; // (Cout)
    int stride = 1;

    static Conv2d make(ParamRegistry& reg, const std::string& name, int cin, int cout, int k,
                       int stride, Prng& rng);
    Tensor operator()(const Tensor& x) const { return conv2d(x, w, b, stride); }
};

struct Linear {
    Tensor w; // (in,out)
    Tensor b; // (out)

    static Linear make(ParamRegistry& reg, const std::string& name, int in, int out, Prng& rng);
    Tensor operator()(const Tensor& x) const { return add_rowvec(matmul(x, w), b); }
};

} // namespace iidm
