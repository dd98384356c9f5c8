#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "salfx/image_io.hpp"
#include "salfx/net.hpp"

// Binary checkpoint layout (all integers u32 little-endian):
//   "SALF" | version
//   repeated until EOF: name_len | name bytes | rank | dims... | float64 LE values
// Besides the network weights two metadata tensors are stored:
//   meta.input_size [1]  and  meta.phase [1]
namespace salfx::checkpoint {

inline constexpr std::uint32_t kVersion = 1;
inline constexpr char kMagic[4] = {'S', 'A', 'L', 'F'};

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct NamedTensor {
    std::string name;
    Tensor value;
};

namespace detail {

inline void put_u32(std::vector<unsigned char>& out, std::uint32_t v)
{
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

inline void put_f64(std::vector<unsigned char>& out, double v)
{
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>(bits >> (8 * i)));
}

class Reader {
public:
    explicit Reader(const std::vector<unsigned char>& b) : b_(b) {}

    bool at_end() const { return pos_ == b_.size(); }

    std::uint32_t u32()
    {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b_[pos_++]) << (8 * i);
        return v;
    }

    double f64()
    {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b_[pos_++]) << (8 * i);
        return std::bit_cast<double>(v);
    }

    std::string bytes(std::size_t n)
    {
        need(n);
        std::string s(b_.begin() + static_cast<std::ptrdiff_t>(pos_),
                      b_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
        pos_ += n;
        return s;
    }

private:
    void need(std::size_t n) const
    {
        if (b_.size() - pos_ < n) throw FormatError("checkpoint truncated at byte " + std::to_string(pos_));
    }

    const std::vector<unsigned char>& b_;
    std::size_t pos_ = 0;
};

} // namespace detail

inline std::vector<unsigned char> encode(const std::vector<NamedTensor>& tensors)
{
    std::vector<unsigned char> out(kMagic, kMagic + 4);
    detail::put_u32(out, kVersion);
    for (const auto& t : tensors) {
        detail::put_u32(out, static_cast<std::uint32_t>(t.name.size()));
        out.insert(out.end(), t.name.begin(), t.name.end());
        detail::put_u32(out, static_cast<std::uint32_t>(t.value.rank()));
        for (std::size_t d : t.value.shape()) detail::put_u32(out, static_cast<std::uint32_t>(d));
        for (double v : t.value.data()) detail::put_f64(out, v);
    }
    return out;
}

inline std::vector<NamedTensor> decode(const std::vector<unsigned char>& bytes)
{
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw FormatError("not a SALF checkpoint");
    detail::Reader r(bytes);
    r.bytes(4);
    const std::uint32_t version = r.u32();
    if (version != kVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
    std::vector<NamedTensor> out;
    while (!r.at_end()) {
        NamedTensor t;
        t.name = r.bytes(r.u32());
        const std::uint32_t rank = r.u32();
        if (rank == 0 || rank > 4) throw FormatError("tensor '" + t.name + "' has invalid rank");
        Shape shape(rank);
        for (auto& d : shape) d = r.u32();
        std::vector<double> data(shape_numel(shape));
        for (double& v : data) v = r.f64();
        t.value = Tensor(std::move(shape), std::move(data));
        out.push_back(std::move(t));
    }
    return out;
}

inline std::vector<NamedTensor> to_tensors(const TwoBranchNet& net)
{
    std::vector<NamedTensor> out;
    for (const Parameter* p : net.parameters()) out.push_back({p->name, p->value});
    out.push_back({"meta.input_size", Tensor::scalar(static_cast<double>(net.config().input_size))});
    out.push_back({"meta.phase", Tensor::scalar(static_cast<double>(static_cast<int>(net.phase())))});
    return out;
}

/// Rebuild a network; channel counts are recovered from the weight shapes.
inline TwoBranchNet from_tensors(const std::vector<NamedTensor>& tensors)
{
    std::map<std::string, const Tensor*> by_name;
    for (const auto& t : tensors) by_name[t.name] = &t.value;
    auto get = [&](const std::string& name) -> const Tensor& {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw FormatError("checkpoint lacks tensor '" + name + "'");
        return *it->second;
    };
    const auto input_size = static_cast<std::size_t>(get("meta.input_size")[0]);
    NetworkConfig cfg = NetworkConfig::for_input(input_size, get("head.fc.weight").dim(0));
    cfg.rgb_channels = {get("rgb.conv1.weight").dim(0), get("rgb.conv2.weight").dim(0),
                        get("rgb.conv3.weight").dim(0)};
    cfg.saliency_channels = {get("sal.conv1.weight").dim(0), get("sal.conv2.weight").dim(0),
                             get("sal.conv3.weight").dim(0), get("sal.conv4.weight").dim(0)};
    cfg.head_channels = get("head.conv.weight").dim(0);

    TwoBranchNet net(cfg);
    for (Parameter* p : net.parameters()) {
        const Tensor& v = get(p->name);
        if (v.shape() != p->value.shape())
            throw FormatError("tensor '" + p->name + "' has shape " + to_string(v.shape()) +
                              ", expected " + to_string(p->value.shape()));
        p->value = v;
        p->zero_grad();
    }
    if (auto it = by_name.find("meta.phase"); it != by_name.end())
        net.set_phase(static_cast<TrainingPhase>(static_cast<int>((*it->second)[0])));
    if (net.phase() == TrainingPhase::selective) net.freeze_for_selective_training();
    return net;
}

inline void save(const std::filesystem::path& path, const TwoBranchNet& net)
{
    io::write_bytes(path, encode(to_tensors(net)));
}

inline TwoBranchNet load(const std::filesystem::path& path)
{
    return from_tensors(decode(io::read_bytes(path)));
}

} // namespace salfx::checkpoint
