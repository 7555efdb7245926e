#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "texfield/checkpoint.hpp"
#include "texfield/ifnet.hpp"
#include "texfield/sampling.hpp"
#include "texfield/voxelize.hpp"

namespace texfield {

enum class TrainMode { geometry, texture };

inline std::string to_string(TrainMode m) { return m == TrainMode::geometry ? "geometry" : "texture"; }

inline TrainMode train_mode_from_string(const std::string& s) {
    if (s == "geometry") return TrainMode::geometry;
    if (s == "texture") return TrainMode::texture;
    throw std::invalid_argument("unknown training mode '" + s + "' (geometry or texture)");
}

// One training shape: its voxelized input grid plus the full pool of
// supervision points it was prepared with.
struct TrainItem {
    std::string name;
    Tensor input;                                // (C, R, R, R)
    std::vector<Vec3> points;
    std::vector<std::array<double, 3>> colors;   // texture mode
    std::vector<std::uint8_t> labels;            // geometry mode

    std::size_t pool_size() const { return points.size(); }
};

struct TrainConfig {
    TrainMode mode = TrainMode::geometry;
    int res = 32;
    int batch_size = 1;
    int points_per_item = 1024;
    std::uint64_t steps = 1000;
    double lr = 1e-4;
    std::uint64_t seed = 0;
    std::size_t subsample = 50000;   // per-epoch pool subsample, clamped to the pool
    std::uint64_t checkpoint_every = 0;  // extra snapshots mid-run; final always written
    BBox box;
    std::string ckpt_path;
    std::string trace_path;          // csv: step,loss,mean_loss; empty disables
};

// Geometry input: occupancy of the observed partial surface.
inline TrainItem make_geometry_item(std::string name, const std::vector<Vec3>& input_points,
                                    OccupancyPoints pool, int res, const BBox& box) {
    TrainItem item;
    item.name = std::move(name);
    item.input = voxelize_occupancy(input_points, res, box).to_tensor();
    item.points = std::move(pool.points);
    item.labels = std::move(pool.labels);
    return item;
}

// Texture input: observed partial colors stacked on the occupancy of the
// complete geometry (ground-truth surface in training, reconstructed surface
// at inference), supervised by colored points on the complete surface.
inline TrainItem make_texture_item(std::string name, const ColoredPoints& partial_surface,
                                   const std::vector<Vec3>& complete_surface_points,
                                   ColoredPoints pool, int res, const BBox& box) {
    TrainItem item;
    item.name = std::move(name);
    item.input = stack_input(partial_surface, complete_surface_points, res, box).to_tensor();
    item.points = std::move(pool.points);
    item.colors = std::move(pool.colors);
    return item;
}

// ---------------------------------------------------------------------------
// deterministic step planning
//
// Every random choice is re-derived from (seed, purpose, coordinates), so a
// resumed run replays the exact remaining schedule of a fresh one.

namespace detail {

inline constexpr std::uint64_t kShuffleStream = 0x73687566666c65ULL;   // item order per epoch
inline constexpr std::uint64_t kSubsampleStream = 0x737562706f6f6cULL; // pool subsample per epoch
inline constexpr std::uint64_t kPointStream = 0x706f696e7473ULL;       // points per step/slot

}  // namespace detail

struct BatchSlot {
    int item = 0;
    std::vector<int> point_idx;  // indices into the item's full pool
};

inline std::uint64_t steps_per_epoch(std::size_t n_items, int batch_size) {
    return (n_items + batch_size - 1) / static_cast<std::uint64_t>(batch_size);
}

inline std::vector<BatchSlot> plan_step(const TrainConfig& cfg, const std::vector<TrainItem>& items,
                                        std::uint64_t step) {
    const std::uint64_t spe = steps_per_epoch(items.size(), cfg.batch_size);
    const std::uint64_t epoch = step / spe;
    const std::uint64_t pos = step % spe;

    Rng shuffle_rng(mix_seed(cfg.seed, detail::kShuffleStream, epoch));
    const std::vector<int> perm = shuffle_rng.permutation(static_cast<int>(items.size()));

    std::vector<BatchSlot> slots;
    for (std::uint64_t b = 0; b < static_cast<std::uint64_t>(cfg.batch_size); ++b) {
        const std::uint64_t k = pos * cfg.batch_size + b;
        if (k >= items.size()) break;  // short final batch of the epoch
        BatchSlot slot;
        slot.item = perm[static_cast<std::size_t>(k)];
        const auto& item = items[static_cast<std::size_t>(slot.item)];
        const int pool = static_cast<int>(item.pool_size());
        const int sub_n = static_cast<int>(std::min<std::size_t>(cfg.subsample, item.pool_size()));

        Rng sub_rng(mix_seed(cfg.seed, detail::kSubsampleStream,
                             epoch * items.size() + static_cast<std::uint64_t>(slot.item)));
        const std::vector<int> sub = sub_rng.sample_without_replacement(pool, sub_n);

        Rng pt_rng(mix_seed(cfg.seed, detail::kPointStream, step * cfg.batch_size + b));
        const int want = std::min(cfg.points_per_item, sub_n);
        const std::vector<int> pick = pt_rng.sample_without_replacement(sub_n, want);
        slot.point_idx.reserve(static_cast<std::size_t>(want));
        for (int i : pick) slot.point_idx.push_back(sub[static_cast<std::size_t>(i)]);
        slots.push_back(std::move(slot));
    }
    return slots;
}

// ---------------------------------------------------------------------------
// one optimization step

struct StepStats {
    double loss = 0.0;       // texture: summed |err| over the batch; geometry: mean bce
    double mean_loss = 0.0;  // per-scalar average either way
};

inline StepStats train_step(const ModelConfig& mcfg, const TrainConfig& cfg, ModelParams& params,
                            AdamState& adam, const std::vector<TrainItem>& items,
                            const std::vector<BatchSlot>& slots) {
    Tensor total;
    std::size_t total_scalars = 0;
    for (const BatchSlot& slot : slots) {
        const TrainItem& item = items[static_cast<std::size_t>(slot.item)];
        const std::size_t np = slot.point_idx.size();
        std::vector<Vec3> pts;
        pts.reserve(np);
        for (int i : slot.point_idx) pts.push_back(item.points[static_cast<std::size_t>(i)]);

        const Tensor pred = predict(mcfg, params, item.input, cfg.box, pts);

        Tensor item_loss;
        if (cfg.mode == TrainMode::texture) {
            std::vector<double> target(np * 3);
            for (std::size_t i = 0; i < np; ++i)
                for (int c = 0; c < 3; ++c)
                    target[i * 3 + c] = item.colors[static_cast<std::size_t>(slot.point_idx[i])][c];
            item_loss = l1_loss(pred, Tensor::from_data({static_cast<int>(np), 3}, std::move(target)));
            total_scalars += np * 3;
        } else {
            std::vector<double> target(np);
            for (std::size_t i = 0; i < np; ++i)
                target[i] = item.labels[static_cast<std::size_t>(slot.point_idx[i])];
            item_loss = bce_loss(pred, Tensor::from_data({static_cast<int>(np), 1}, std::move(target)));
            total_scalars += np;
        }
        total = total.defined() ? add(total, item_loss) : item_loss;
    }
    if (!total.defined()) throw std::invalid_argument("train_step: empty batch");
    if (cfg.mode == TrainMode::geometry && slots.size() > 1)
        total = scale(total, 1.0 / static_cast<double>(slots.size()));

    for (auto& [name, p] : params) p.zero_grad();
    backward(total);
    adam.lr = cfg.lr;
    adam_step(params, adam);

    StepStats st;
    st.loss = total.item();
    st.mean_loss = cfg.mode == TrainMode::texture
                       ? st.loss / static_cast<double>(total_scalars)
                       : st.loss;
    return st;
}

// ---------------------------------------------------------------------------
// full loop with checkpointing and resume

inline Checkpoint make_checkpoint(const ModelConfig& mcfg, const TrainConfig& cfg,
                                  const ModelParams& params, const AdamState& adam) {
    Checkpoint ck;
    ck.meta = {
        {"mode", to_string(cfg.mode)},
        {"model", model_config_to_json(mcfg)},
        {"res", cfg.res},
        {"bbox", {cfg.box.min.x, cfg.box.max.x, cfg.box.min.y, cfg.box.max.y, cfg.box.min.z, cfg.box.max.z}},
        {"seed", cfg.seed},
        {"steps_completed", adam.step_count},
    };
    ck.params = params;
    ck.has_adam = true;
    ck.adam = adam;
    return ck;
}

inline BBox bbox_from_meta(const nlohmann::json& j) {
    const auto v = j.get<std::vector<double>>();
    if (v.size() != 6) throw std::runtime_error("checkpoint bbox must have 6 numbers");
    BBox b;
    b.min = {v[0], v[2], v[4]};
    b.max = {v[1], v[3], v[5]};
    return b;
}

struct TrainResult {
    std::uint64_t steps_run = 0;
    StepStats last;
};

// Runs (or resumes) the optimization to cfg.steps total steps. `log` receives
// progress lines; pass nullptr for silence.
inline TrainResult train(const ModelConfig& mcfg, const TrainConfig& cfg, ModelParams& params,
                         AdamState& adam, const std::vector<TrainItem>& items,
                         std::ostream* log = nullptr) {
    if (items.empty()) throw std::invalid_argument("train: no items");
    for (const TrainItem& item : items)
        if (item.pool_size() == 0)
            throw std::invalid_argument("train: item " + item.name + " has an empty point pool");
    // parameters may come from a checkpoint, where they load as plain values
    for (auto& [name, p] : params) p.set_requires_grad(true);

    std::ofstream trace;
    if (!cfg.trace_path.empty()) {
        const bool fresh = adam.step_count == 0 || !std::filesystem::exists(cfg.trace_path);
        trace.open(cfg.trace_path, fresh ? std::ios::trunc : std::ios::app);
        if (!trace) throw std::runtime_error("cannot open trace file: " + cfg.trace_path);
        if (fresh) trace << "step,loss,mean_loss\n";
    }

    TrainResult result;
    for (std::uint64_t step = adam.step_count; step < cfg.steps; ++step) {
        const std::vector<BatchSlot> slots = plan_step(cfg, items, step);
        const StepStats st = train_step(mcfg, cfg, params, adam, items, slots);
        result.last = st;
        ++result.steps_run;
        if (trace.is_open()) {
            trace.precision(17);
            trace << step << ',' << st.loss << ',' << st.mean_loss << '\n';
        }
        if (log && ((step + 1) % 100 == 0 || step + 1 == cfg.steps))
            *log << "step " << (step + 1) << "/" << cfg.steps << "  loss " << st.loss
                 << "  mean " << st.mean_loss << '\n';
        if (!cfg.ckpt_path.empty() && cfg.checkpoint_every > 0 &&
            (step + 1) % cfg.checkpoint_every == 0 && step + 1 < cfg.steps)
            save_checkpoint(cfg.ckpt_path, make_checkpoint(mcfg, cfg, params, adam));
    }
    if (!cfg.ckpt_path.empty())
        save_checkpoint(cfg.ckpt_path, make_checkpoint(mcfg, cfg, params, adam));
    return result;
}

// ---------------------------------------------------------------------------
// dataset directory layout shared between the prepare and train commands

inline constexpr const char* kItemMeta = "item.json";
inline constexpr const char* kPartialObjFile = "partial.obj";
inline constexpr const char* kInputPsetFile = "input_points.pset";
inline constexpr const char* kOccupancyPsetFile = "occupancy.pset";
inline constexpr const char* kSurfacePsetFile = "surface_rgb.pset";

// Loads every item directory under root (identified by item.json) and builds
// mode-appropriate training items at the given grid resolution.
inline std::vector<TrainItem> load_train_items(const std::string& root, TrainMode mode, int res,
                                               const BBox& box) {
    std::vector<std::filesystem::path> dirs;
    for (const auto& e : std::filesystem::directory_iterator(root))
        if (e.is_directory() && std::filesystem::exists(e.path() / kItemMeta))
            dirs.push_back(e.path());
    std::sort(dirs.begin(), dirs.end());
    if (dirs.empty())
        throw std::runtime_error("no prepared items (directories with " + std::string(kItemMeta) +
                                 ") under " + root);

    std::vector<TrainItem> items;
    items.reserve(dirs.size());
    for (const auto& dir : dirs) {
        const ColoredPoints input_pts = load_colored_pset((dir / kInputPsetFile).string());
        if (mode == TrainMode::geometry) {
            OccupancyPoints pool = load_occupancy_pset((dir / kOccupancyPsetFile).string());
            items.push_back(make_geometry_item(dir.filename().string(), input_pts.points,
                                               std::move(pool), res, box));
        } else {
            ColoredPoints pool = load_colored_pset((dir / kSurfacePsetFile).string());
            const std::vector<Vec3> gt_surface = pool.points;  // read before pool is moved
            items.push_back(make_texture_item(dir.filename().string(), input_pts, gt_surface,
                                              std::move(pool), res, box));
        }
    }
    return items;
}

}  // namespace texfield
