#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "texfield/rng.hpp"
#include "texfield/tensor.hpp"

namespace texfield {

// A grid encoder (stacked 3d convolutions, two per scale, max-pooled between
// scales) feeding a point-wise mlp decoder that reads feature vectors gathered
// trilinearly at query points from every scale plus the raw input grid.
struct ModelConfig {
    int in_channels = 4;                      // [r,g,b,occ] for texture, [occ] for geometry
    int out_channels = 3;                     // rgb, or 1 occupancy logit
    std::vector<int> channels = {8, 16, 24, 32};  // encoder width per scale
    int kernel = 3;
    int hidden = 128;
    int hidden_layers = 3;
    bool sigmoid_head = true;                 // bounded rgb output; logits when false

    int levels() const { return static_cast<int>(channels.size()); }

    // width of the per-point feature vector fed to the decoder
    int feature_length() const {
        int f = in_channels;
        for (int c : channels) f += c;
        return f;
    }

    void validate() const {
        if (in_channels < 1 || out_channels < 1)
            throw std::invalid_argument("model: channel counts must be positive");
        if (channels.empty()) throw std::invalid_argument("model: need at least one encoder scale");
        for (int c : channels)
            if (c < 1) throw std::invalid_argument("model: encoder widths must be positive");
        if (kernel < 1 || kernel % 2 == 0)
            throw std::invalid_argument("model: kernel size must be odd and positive");
        if (hidden < 1 || hidden_layers < 1)
            throw std::invalid_argument("model: decoder dimensions must be positive");
    }
};

inline nlohmann::json model_config_to_json(const ModelConfig& cfg) {
    return {
        {"in_channels", cfg.in_channels}, {"out_channels", cfg.out_channels},
        {"channels", cfg.channels},       {"kernel", cfg.kernel},
        {"hidden", cfg.hidden},           {"hidden_layers", cfg.hidden_layers},
        {"sigmoid_head", cfg.sigmoid_head},
    };
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig cfg;
    cfg.in_channels = j.at("in_channels").get<int>();
    cfg.out_channels = j.at("out_channels").get<int>();
    cfg.channels = j.at("channels").get<std::vector<int>>();
    cfg.kernel = j.at("kernel").get<int>();
    cfg.hidden = j.at("hidden").get<int>();
    cfg.hidden_layers = j.at("hidden_layers").get<int>();
    cfg.sigmoid_head = j.at("sigmoid_head").get<bool>();
    cfg.validate();
    return cfg;
}

using ModelParams = std::map<std::string, Tensor>;

// Shorthand presets used by the cli.
inline ModelConfig geometry_model_config() {
    ModelConfig cfg;
    cfg.in_channels = 1;
    cfg.out_channels = 1;
    cfg.sigmoid_head = false;  // occupancy head stays a logit; the loss applies sigmoid
    return cfg;
}

inline ModelConfig texture_model_config() {
    ModelConfig cfg;
    cfg.in_channels = 4;
    cfg.out_channels = 3;
    cfg.sigmoid_head = true;
    return cfg;
}

namespace detail {

inline Tensor init_weight(Shape shape, int fan_in, double gain, Rng& rng) {
    Tensor t = Tensor::zeros(std::move(shape));
    const double s = gain * std::sqrt(2.0 / fan_in);
    for (double& v : t.data()) v = s * rng.normal();
    t.set_requires_grad(true);
    return t;
}

}  // namespace detail

// Parameter names: enc.s<scale>.c<conv>.{w,b} and dec.{h<i>,out}.{w,b}.
// Weights are fan-in-scaled normal draws; the output head starts near zero so
// untrained predictions sit at the head's neutral point.
inline ModelParams init_model(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(mix_seed(seed, 0x6d6f64656cULL));  // distinct stream per purpose
    ModelParams p;
    int cin = cfg.in_channels;
    for (int s = 0; s < cfg.levels(); ++s) {
        const int cout = cfg.channels[s];
        for (int c = 0; c < 2; ++c) {
            const int in_c = c == 0 ? cin : cout;
            const std::string base = "enc.s" + std::to_string(s) + ".c" + std::to_string(c);
            p[base + ".w"] = detail::init_weight({cout, in_c, cfg.kernel, cfg.kernel, cfg.kernel},
                                                 in_c * cfg.kernel * cfg.kernel * cfg.kernel, 1.0, rng);
            p[base + ".b"] = Tensor::zeros({cout}).set_requires_grad(true);
        }
        cin = cout;
    }
    int fin = cfg.feature_length();
    for (int h = 0; h < cfg.hidden_layers; ++h) {
        const std::string base = "dec.h" + std::to_string(h);
        p[base + ".w"] = detail::init_weight({cfg.hidden, fin}, fin, 1.0, rng);
        p[base + ".b"] = Tensor::zeros({cfg.hidden}).set_requires_grad(true);
        fin = cfg.hidden;
    }
    p["dec.out.w"] = detail::init_weight({cfg.out_channels, fin}, fin, 0.01, rng);
    p["dec.out.b"] = Tensor::zeros({cfg.out_channels}).set_requires_grad(true);
    return p;
}

namespace detail {

inline const Tensor& param(const ModelParams& p, const std::string& name) {
    const auto it = p.find(name);
    if (it == p.end()) throw std::invalid_argument("model: missing parameter " + name);
    return it->second;
}

}  // namespace detail

// Multi-scale feature grids. Element 0 is the raw input itself; element k+1
// is the scale-k output at resolution R / 2^k.
inline std::vector<Tensor> encode(const ModelConfig& cfg, const ModelParams& p, const Tensor& input) {
    if (input.shape().size() != 4 || input.shape()[0] != cfg.in_channels)
        throw std::invalid_argument("encode: input shape " + shape_str(input.shape()) +
                                    " does not match " + std::to_string(cfg.in_channels) + " channels");
    const int pad = (cfg.kernel - 1) / 2;
    std::vector<Tensor> grids;
    grids.reserve(cfg.levels() + 1);
    grids.push_back(input);
    Tensor x = input;
    for (int s = 0; s < cfg.levels(); ++s) {
        const std::string base = "enc.s" + std::to_string(s);
        x = relu(conv3d(x, detail::param(p, base + ".c0.w"), detail::param(p, base + ".c0.b"), pad));
        x = relu(conv3d(x, detail::param(p, base + ".c1.w"), detail::param(p, base + ".c1.b"), pad));
        grids.push_back(x);
        if (s + 1 < cfg.levels()) x = maxpool3d(x, 2);
    }
    return grids;
}

// Per-point feature vectors (P, feature_length): trilinear reads of every
// grid, concatenated coarse scales after fine.
inline Tensor query_features(const std::vector<Tensor>& grids, const BBox& box,
                             const std::vector<Vec3>& points) {
    std::vector<Tensor> parts;
    parts.reserve(grids.size());
    for (const Tensor& g : grids) parts.push_back(trilinear_gather(g, box, points));
    return concat_cols(parts);
}

// Point-wise mlp on gathered features -> (P, out_channels).
inline Tensor decode(const ModelConfig& cfg, const ModelParams& p, const Tensor& features) {
    Tensor x = features;
    for (int h = 0; h < cfg.hidden_layers; ++h) {
        const std::string base = "dec.h" + std::to_string(h);
        x = relu(linear(x, detail::param(p, base + ".w"), detail::param(p, base + ".b")));
    }
    x = linear(x, detail::param(p, "dec.out.w"), detail::param(p, "dec.out.b"));
    return cfg.sigmoid_head ? sigmoid(x) : x;
}

// Full forward pass for one input grid.
inline Tensor predict(const ModelConfig& cfg, const ModelParams& p, const Tensor& input,
                      const BBox& box, const std::vector<Vec3>& points) {
    return decode(cfg, p, query_features(encode(cfg, p, input), box, points));
}

}  // namespace texfield
