#include "iidm/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace iidm {

namespace {

void put_u32le(std::ostream& os, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                                static_cast<unsigned char>((v >> 8) & 0xff),
                                static_cast<unsigned char>((v >> 16) & 0xff),
                                static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32le(std::istream& is, const char* what) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4))
        throw std::runtime_error(std::string("checkpoint: truncated ") + what);
    return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
           (std::uint32_t(b[3]) << 24);
}

} // namespace

void Checkpoint::put(const std::string& name, std::span<const double> values) {
    std::vector<float> f(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) f[i] = static_cast<float>(values[i]);
    entries_[name] = std::move(f);
}

void Checkpoint::put_scalar(const std::string& name, double value) {
    entries_[name] = {static_cast<float>(value)};
}

void Checkpoint::put_params(const ParamRegistry& reg, const std::string& prefix) {
    for (const auto& [name, t] : reg.entries()) put(prefix + name, t.data());
}

bool Checkpoint::contains(const std::string& name) const { return entries_.count(name) != 0; }

const std::vector<float>& Checkpoint::blob(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::runtime_error("checkpoint: missing entry " + name);
    return it->second;
}

double Checkpoint::scalar(const std::string& name) const {
    const auto& b = blob(name);
    if (b.size() != 1) throw std::runtime_error("checkpoint: entry " + name + " is not a scalar");
    return static_cast<double>(b[0]);
}

std::vector<double> Checkpoint::values(const std::string& name) const {
    const auto& b = blob(name);
    return std::vector<double>(b.begin(), b.end());
}

void Checkpoint::load_params_into(ParamRegistry& reg, const std::string& prefix) const {
    for (const auto& [name, t] : reg.entries()) {
        const auto& b = blob(prefix + name);
        Tensor handle = t; // shared node, cheap copy
        auto dst = handle.mutable_data();
        if (b.size() != dst.size())
            throw std::runtime_error("checkpoint: size mismatch for " + prefix + name);
        for (std::size_t i = 0; i < b.size(); ++i) dst[i] = static_cast<double>(b[i]);
    }
}

void Checkpoint::save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("checkpoint: cannot open for write: " + path);
    os.write("CKP1", 4);
    put_u32le(os, static_cast<std::uint32_t>(entries_.size()));
    for (const auto& [name, values] : entries_) { // std::map iterates lexicographically
        put_u32le(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_u32le(os, static_cast<std::uint32_t>(values.size()));
        for (float v : values) {
            std::uint32_t bits;
            std::memcpy(&bits, &v, 4);
            put_u32le(os, bits);
        }
    }
    if (!os) throw std::runtime_error("checkpoint: write failed: " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open for read: " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "CKP1", 4) != 0)
        throw std::runtime_error("checkpoint: bad magic in " + path);
    const std::uint32_t count = get_u32le(is, "entry count");
    Checkpoint ck;
    std::string prev;
    for (std::uint32_t e = 0; e < count; ++e) {
        const std::uint32_t name_len = get_u32le(is, "name length");
        std::string name(name_len, '\0');
        if (!is.read(name.data(), name_len)) throw std::runtime_error("checkpoint: truncated name");
        if (e > 0 && !(prev < name))
            throw std::runtime_error("checkpoint: entries out of lexicographic order");
        prev = name;
        const std::uint32_t n = get_u32le(is, "value count");
        std::vector<float> values(n);
        for (std::uint32_t i = 0; i < n; ++i) {
            const std::uint32_t bits = get_u32le(is, "values");
            float v;
            std::memcpy(&v, &bits, 4);
            values[i] = v;
        }
        ck.entries_[name] = std::move(values);
    }
    return ck;
}

} // namespace iidm
