#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "iidm/nn.hpp"

namespace iidm {

/// Named-blob parameter container. On disk: "CKP1" magic, LE u32 entry count,
/// then per entry a LE u32 name length, the name bytes, a LE u32 value count
/// and f32 LE values. Entries are ordered lexicographically by name, which the
/// loader enforces, so identical states always serialize to identical bytes.
class Checkpoint {
public:
    void put(const std::string& name, std::span<const double> values);
    void put_scalar(const std::string& name, double value);
    void put_params(const ParamRegistry& reg, const std::string& prefix = "");

    bool contains(const std::string& name) const;
    const std::vector<float>& blob(const std::string& name) const;
    double scalar(const std::string& name) const;
    std::vector<double> values(const std::string& name) const;

    /// Copies blobs into same-named registry parameters; every parameter must
    /// be present with a matching element count.
    void load_params_into(ParamRegistry& reg, const std::string& prefix = "") const;

    const std::map<std::string, std::vector<float>>& entries() const { return entries_; }

    void save(const std::string& path) const;
    static Checkpoint load(const std::string& path);

private:
    std::map<std::string, std::vector<float>> entries_;
};

} // namespace iidm
