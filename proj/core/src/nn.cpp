#include "iidm/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace iidm {

Tensor ParamRegistry::add(const std::string& name, Tensor t) {
    if (contains(name)) throw std::invalid_argument("ParamRegistry: duplicate name " + name);
    entries_.emplace_back(name, t);
    return t;
}

std::vector<Tensor> ParamRegistry::tensors() const {
    std::vector<Tensor> out;
    out.reserve(entries_.size());
    for (const auto& [name, t] : entries_) out.push_back(t);
    return out;
}

Tensor ParamRegistry::find(const std::string& name) const {
    for (const auto& [n, t] : entries_)
        if (n == name) return t;
    throw std::invalid_argument("ParamRegistry: no parameter named " + name);
}

bool ParamRegistry::contains(const std::string& name) const {
    for (const auto& [n, t] : entries_)
        if (n == name) return true;
    return false;
}

void ParamRegistry::zero_grad() {
    for (auto& [name, t] : entries_) t.zero_grad();
}

Conv2d Conv2d::make(ParamRegistry& reg, const std::string& name, int cin, int cout, int k,
                    int stride, Prng& rng) {
    const double std = std::sqrt(2.0 / (static_cast<double>(cin) * k * k));
    Conv2d c;
    c.w = reg.add(name + ".w", Tensor::randn({cout, cin, k, k}, rng, std, true));
    c.b = reg.add(name + ".b", Tensor::zeros({cout}, true));
    c.stride = stride;
    return c;
}

Linear Linear::make(ParamRegistry& reg, const std::string& name, int in, int out, Prng& rng) {
    const double std = std::sqrt(2.0 / static_cast<double>(in));
    Linear l;
    l.w = reg.add(name + ".w", Tensor::randn({in, out}, rng, std, true));
    l.b = reg.add(name + ".b", Tensor::zeros({out}, true));
    return l;
}

} // namespace iidm
