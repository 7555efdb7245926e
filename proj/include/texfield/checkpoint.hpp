#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "texfield/binio.hpp"
#include "texfield/tensor.hpp"

namespace texfield {

// Self-describing model snapshot: a free-form JSON meta block (architecture,
// bounding box, resolution, ...) plus named parameter tensors and, when saved
// mid-training, the full optimizer state so a resumed run continues exactly.
//
// Layout (all little-endian):
//   "IFCK"  u32 version
//   u64 meta_len, meta JSON bytes
//   u64 param_count, then per parameter:
//     u32 name_len + name, u32 rank, u32 extents[rank], f64 data[numel]
//   u8 has_adam; if set:
//     f64 lr, beta1, beta2, eps; u64 step_count
//     u64 entry_count, then per entry:
//       u32 name_len + name, u64 len, f64 first[len], f64 second[len]
struct Checkpoint {
    nlohmann::json meta;
    std::map<std::string, Tensor> params;
    bool has_adam = false;
    AdamState adam;
};

inline constexpr char kCheckpointMagic[4] = {'I', 'F', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    binio::atomic_write(path, [&](std::ostream& os) {
        binio::write_magic(os, kCheckpointMagic);
        binio::write_scalar<std::uint32_t>(os, kCheckpointVersion);
        const std::string meta = ck.meta.dump();
        binio::write_scalar<std::uint64_t>(os, meta.size());
        os.write(meta.data(), static_cast<std::streamsize>(meta.size()));
        binio::write_scalar<std::uint64_t>(os, ck.params.size());
        for (const auto& [name, t] : ck.params) {
            binio::write_string(os, name);
            binio::write_scalar<std::uint32_t>(os, static_cast<std::uint32_t>(t.shape().size()));
            for (int d : t.shape()) binio::write_scalar<std::uint32_t>(os, static_cast<std::uint32_t>(d));
            binio::write_array(os, t.data().data(), t.data().size());
        }
        binio::write_scalar<std::uint8_t>(os, ck.has_adam ? 1 : 0);
        if (ck.has_adam) {
            binio::write_scalar<double>(os, ck.adam.lr);
            binio::write_scalar<double>(os, ck.adam.beta1);
            binio::write_scalar<double>(os, ck.adam.beta2);
            binio::write_scalar<double>(os, ck.adam.eps);
            binio::write_scalar<std::uint64_t>(os, ck.adam.step_count);
            binio::write_scalar<std::uint64_t>(os, ck.adam.first_moment.size());
            for (const auto& [name, m] : ck.adam.first_moment) {
                auto vit = ck.adam.second_moment.find(name);
                if (vit == ck.adam.second_moment.end() || vit->second.size() != m.size())
                    throw std::runtime_error("optimizer state inconsistent for parameter " + name);
                binio::write_string(os, name);
                binio::write_scalar<std::uint64_t>(os, m.size());
                binio::write_array(os, m.data(), m.size());
                binio::write_array(os, vit->second.data(), vit->second.size());
            }
        }
    });
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is = binio::open_in(path);
    binio::expect_magic(is, kCheckpointMagic, path);
    const auto version = binio::read_scalar<std::uint32_t>(is, "version");
    if (version != kCheckpointVersion)
        throw std::runtime_error(path + ": unsupported checkpoint version " + std::to_string(version));

    Checkpoint ck;
    const auto meta_len = binio::read_scalar<std::uint64_t>(is, "meta length");
    std::string meta(meta_len, '\0');
    if (meta_len) {
        is.read(meta.data(), static_cast<std::streamsize>(meta_len));
        if (!is) throw std::runtime_error(path + ": truncated meta block");
    }
    ck.meta = nlohmann::json::parse(meta);

    const auto n_params = binio::read_scalar<std::uint64_t>(is, "parameter count");
    for (std::uint64_t i = 0; i < n_params; ++i) {
        const std::string name = binio::read_string(is, "parameter name");
        const auto rank = binio::read_scalar<std::uint32_t>(is, "parameter rank");
        Shape shape(rank);
        for (auto& d : shape) d = static_cast<int>(binio::read_scalar<std::uint32_t>(is, "extent"));
        std::vector<double> data(static_cast<std::size_t>(numel(shape)));
        binio::read_array(is, data.data(), data.size(), "parameter data");
        ck.params.emplace(name, Tensor::from_data(std::move(shape), std::move(data)));
    }

    const auto has_adam = binio::read_scalar<std::uint8_t>(is, "optimizer flag");
    if (has_adam) {
        ck.has_adam = true;
        ck.adam.lr = binio::read_scalar<double>(is, "lr");
        ck.adam.beta1 = binio::read_scalar<double>(is, "beta1");
        ck.adam.beta2 = binio::read_scalar<double>(is, "beta2");
        ck.adam.eps = binio::read_scalar<double>(is, "eps");
        ck.adam.step_count = binio::read_scalar<std::uint64_t>(is, "step count");
        const auto n = binio::read_scalar<std::uint64_t>(is, "moment entry count");
        for (std::uint64_t i = 0; i < n; ++i) {
            const std::string name = binio::read_string(is, "moment name");
            const auto len = binio::read_scalar<std::uint64_t>(is, "moment length");
            std::vector<double> m(len), v(len);
            binio::read_array(is, m.data(), len, "first moment");
            binio::read_array(is, v.data(), len, "second moment");
            ck.adam.first_moment.emplace(name, std::move(m));
            ck.adam.second_moment.emplace(name, std::move(v));
        }
    }
    return ck;
}

}  // namespace texfield
