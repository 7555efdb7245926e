#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "texfield/checkpoint.hpp"
#include "texfield/ifnet.hpp"
#include "texfield/primitives.hpp"
#include "texfield/reconstruct.hpp"
#include "texfield/sampling.hpp"
#include "texfield/training.hpp"

namespace texfield {

// The floor keeps near-zero entries from amplifying finite-difference
// roundoff (~eps * |loss| / h absolute) into spurious relative error.
inline double grad_rel_err(double a, double b, double floor = 1e-6) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Worst relative error between reverse-mode and central-difference gradients
// over every entry of every listed tensor. grad_fault, when nonzero, corrupts
// one analytic gradient entry so the caller can prove the comparison bites.
inline double finite_difference_worst(std::vector<Tensor> params,
                                      const std::function<Tensor()>& lossfn,
                                      double grad_fault = 0.0, double h = 1e-5,
                                      double floor = 1e-6) {
    for (Tensor& p : params) p.zero_grad();
    backward(lossfn());
    if (grad_fault != 0.0 && !params.empty()) params[0].grad()[0] += grad_fault;
    double worst = 0.0;
    NoGradGuard ng;  // finite-difference probes need values only
    for (Tensor& p : params) {
        for (std::size_t i = 0; i < p.data().size(); ++i) {
            const double orig = p.data()[i];
            p.data()[i] = orig + h;
            const double lp = lossfn().item();
            p.data()[i] = orig - h;
            const double lm = lossfn().item();
            p.data()[i] = orig;
            worst = std::max(worst, grad_rel_err((lp - lm) / (2.0 * h), p.grad()[i], floor));
        }
    }
    return worst;
}

struct CheckResult {
    std::string name;
    bool ok = false;
    std::string detail;
};

namespace detail {

inline constexpr double kGradTol = 1e-4;

inline CheckResult grad_check(const std::string& layer, std::vector<Tensor> params,
                              const std::function<Tensor()>& lossfn, double fault) {
    const double worst = finite_difference_worst(std::move(params), lossfn, fault, 1e-5, 1e-3);
    std::ostringstream os;
    os << "worst rel err " << worst << " (tol " << kGradTol << ")";
    return {"grad." + layer, worst < kGradTol, os.str()};
}

inline Tensor random_tensor(Shape shape, Rng& rng, double s = 1.0) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.data()) v = s * rng.normal();
    return t;
}

}  // namespace detail

// Fast structural diagnostics for deployments: gradient spot checks on every
// layer kind, interpolation exactness, iso-surface extraction, inside/outside
// sanity, serialization and determinism round trips. inject_fault names a
// layer ("conv3d", "linear", "trilinear") whose gradient is corrupted on
// purpose; the matching check must then fail, proving the harness catches lies.
inline std::vector<CheckResult> run_selftest(const std::string& inject_fault = "") {
    if (!inject_fault.empty() && inject_fault != "conv3d" && inject_fault != "linear" &&
        inject_fault != "trilinear")
        throw std::invalid_argument("unknown fault target '" + inject_fault +
                                    "' (conv3d, linear, trilinear)");
    auto fault_for = [&](const char* layer) { return inject_fault == layer ? 0.05 : 0.0; };

    std::vector<CheckResult> results;
    Rng rng(20240816);

    {  // conv3d gradient
        Tensor in = detail::random_tensor({2, 4, 4, 4}, rng).set_requires_grad(true);
        Tensor w = detail::random_tensor({3, 2, 3, 3, 3}, rng, 0.3).set_requires_grad(true);
        Tensor b = detail::random_tensor({3}, rng, 0.1).set_requires_grad(true);
        results.push_back(detail::grad_check(
            "conv3d", {w, b, in}, [&] { return sum(sigmoid(conv3d(in, w, b, 1))); },
            fault_for("conv3d")));
    }
    {  // linear gradient
        Tensor in = detail::random_tensor({5, 7}, rng).set_requires_grad(true);
        Tensor w = detail::random_tensor({4, 7}, rng, 0.3).set_requires_grad(true);
        Tensor b = detail::random_tensor({4}, rng, 0.1).set_requires_grad(true);
        results.push_back(detail::grad_check(
            "linear", {w, b, in}, [&] { return sum(sigmoid(linear(in, w, b))); },
            fault_for("linear")));
    }
    {  // trilinear gather gradient
        Tensor g = detail::random_tensor({3, 4, 5, 6}, rng).set_requires_grad(true);
        BBox bb;
        bb.min = {-1.0, -0.5, 0.0};
        bb.max = {1.0, 1.5, 2.0};
        std::vector<Vec3> pts;
        for (int i = 0; i < 24; ++i) pts.push_back(rng.uniform_in_box(bb));
        pts.push_back({-3.0, -3.0, -3.0});  // clamped corner
        results.push_back(detail::grad_check(
            "trilinear", {g}, [&] { return sum(sigmoid(trilinear_gather(g, bb, pts))); },
            fault_for("trilinear")));
    }
    {  // loss gradients
        Tensor z = detail::random_tensor({12}, rng, 2.0).set_requires_grad(true);
        Tensor y = Tensor::zeros({12});
        for (double& v : y.data()) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
        Tensor p = detail::random_tensor({12}, rng).set_requires_grad(true);
        Tensor t = detail::random_tensor({12}, rng);
        results.push_back(detail::grad_check(
            "losses", {z, p}, [&] { return add(bce_loss(z, y), l1_loss(p, t)); }, 0.0));
    }
    {  // end-to-end gradient through a tiny full model
        ModelConfig cfg;
        cfg.in_channels = 2;
        cfg.out_channels = 2;
        cfg.channels = {3, 4};
        cfg.hidden = 8;
        cfg.hidden_layers = 2;
        cfg.sigmoid_head = true;
        ModelParams params = init_model(cfg, 5);
        Tensor input = detail::random_tensor({2, 8, 8, 8}, rng, 0.5);
        BBox bb;
        bb.min = {-0.5, -0.5, -0.5};
        bb.max = {0.5, 0.5, 0.5};
        std::vector<Vec3> pts;
        for (int i = 0; i < 6; ++i) pts.push_back(rng.uniform_in_box(bb));
        Tensor target = detail::random_tensor({6, 2}, rng, 0.3);
        std::vector<Tensor> plist;
        for (auto& [name, p] : params) plist.push_back(p);
        results.push_back(detail::grad_check(
            "end_to_end", plist,
            [&] { return l1_loss(predict(cfg, params, input, bb, pts), target); }, 0.0));
    }
    {  // trilinear interpolation reproduces an affine field exactly
        const int R = 8;
        BBox bb;
        bb.min = {-1.0, -1.0, -1.0};
        bb.max = {1.0, 1.0, 1.0};
        auto f = [](const Vec3& p) { return 2.0 * p.x - p.y + 3.0 * p.z + 1.0; };
        Tensor grid = Tensor::zeros({1, R, R, R});
        for (int ix = 0; ix < R; ++ix)
            for (int iy = 0; iy < R; ++iy)
                for (int iz = 0; iz < R; ++iz)
                    grid.data()[(static_cast<std::size_t>(ix) * R + iy) * R + iz] =
                        f(grid_node(bb, R, ix, iy, iz));
        // stay inside the node hull, where no clamping applies
        BBox hull;
        const double cell = 2.0 / R;
        hull.min = {-1.0 + cell, -1.0 + cell, -1.0 + cell};
        hull.max = {1.0 - cell, 1.0 - cell, 1.0 - cell};
        std::vector<Vec3> pts;
        for (int i = 0; i < 100; ++i) pts.push_back(rng.uniform_in_box(hull));
        const Tensor out = trilinear_gather(grid, bb, pts);
        double worst = 0.0;
        for (std::size_t i = 0; i < pts.size(); ++i)
            worst = std::max(worst, std::abs(out.data()[i] - f(pts[i])));
        std::ostringstream os;
        os << "max abs err " << worst << " (tol 1e-9)";
        results.push_back({"trilinear.affine", worst < 1e-9, os.str()});
    }
    {  // marching cubes on an analytic sphere field
        const int R = 32;
        const double r = 0.35;
        VoxelGrid field;
        field.channels = 1;
        field.res = R;
        field.box.min = {-0.5, -0.5, -0.5};
        field.box.max = {0.5, 0.5, 0.5};
        field.values.resize(static_cast<std::size_t>(R) * R * R);
        std::size_t i = 0;
        for (int ix = 0; ix < R; ++ix)
            for (int iy = 0; iy < R; ++iy)
                for (int iz = 0; iz < R; ++iz, ++i)
                    field.values[i] = sigmoid_scalar(20.0 * (r - norm(grid_node(field.box, R, ix, iy, iz))));
        const ColoredMesh m = marching_cubes(field);
        const double vol = mesh_signed_volume(m);
        const double area = mesh_area(m);
        const double vol_exact = 4.0 / 3.0 * std::numbers::pi * r * r * r;
        const double area_exact = 4.0 * std::numbers::pi * r * r;
        const std::size_t open = mesh_open_edge_count(m);
        const bool ok = open == 0 && std::abs(vol - vol_exact) / vol_exact < 0.05 &&
                        std::abs(area - area_exact) / area_exact < 0.05 && vol > 0.0;
        std::ostringstream os;
        os << "open edges " << open << ", volume " << vol << " vs " << vol_exact << ", area "
           << area << " vs " << area_exact;
        results.push_back({"marching_cubes.sphere", ok, os.str()});
    }
    {  // inside/outside testing against an analytic box
        BBox inner;
        inner.min = {-0.3, -0.2, -0.1};
        inner.max = {0.3, 0.2, 0.1};
        const TexturedMesh box_mesh = make_box(inner);
        const OccupancyTester tester(box_mesh);
        BBox outer;
        outer.min = {-0.5, -0.5, -0.5};
        outer.max = {0.5, 0.5, 0.5};
        int correct = 0;
        const int n = 2000;
        for (int k = 0; k < n; ++k) {
            const Vec3 p = rng.uniform_in_box(outer);
            if (tester.inside(p) == inner.contains(p)) ++correct;
        }
        std::ostringstream os;
        os << correct << "/" << n << " agree with the analytic box";
        results.push_back({"occupancy.box", correct >= n * 99 / 100, os.str()});
    }
    {  // checkpoint round trip
        ModelConfig cfg = geometry_model_config();
        cfg.channels = {3, 4};
        cfg.hidden = 8;
        ModelParams params = init_model(cfg, 9);
        AdamState adam;
        adam.step_count = 17;
        for (auto& [name, p] : params) {
            adam.first_moment[name].assign(p.data().size(), 0.25);
            adam.second_moment[name].assign(p.data().size(), 0.5);
        }
        Checkpoint ck;
        ck.meta = {{"mode", "geometry"}, {"model", model_config_to_json(cfg)}, {"res", 8}};
        ck.params = params;
        ck.has_adam = true;
        ck.adam = adam;
        const std::string path = (std::filesystem::temp_directory_path() / "texfield_selftest.ifck").string();
        save_checkpoint(path, ck);
        const Checkpoint back = load_checkpoint(path);
        bool ok = back.meta == ck.meta && back.has_adam && back.adam.step_count == 17 &&
                  back.params.size() == params.size() &&
                  back.adam.first_moment == adam.first_moment &&
                  back.adam.second_moment == adam.second_moment;
        for (const auto& [name, p] : params) {
            const auto it = back.params.find(name);
            ok = ok && it != back.params.end() && it->second.data() == p.data() &&
                 it->second.shape() == p.shape();
        }
        std::filesystem::remove(path);
        results.push_back({"checkpoint.roundtrip", ok, ok ? "bit-exact" : "mismatch after reload"});
    }
    {  // an uninterrupted run and a save/reload/resume run agree bitwise
        ModelConfig cfg = geometry_model_config();
        cfg.channels = {3, 4};
        cfg.hidden = 8;
        cfg.hidden_layers = 2;
        TrainConfig t;
        t.mode = TrainMode::geometry;
        t.res = 8;
        t.points_per_item = 32;
        t.steps = 10;
        t.lr = 1e-3;
        t.seed = 21;
        t.box.min = {-0.5, -0.5, -0.5};
        t.box.max = {0.5, 0.5, 0.5};
        t.subsample = 64;

        TrainItem item;
        item.name = "t";
        Rng drng(33);
        item.input = detail::random_tensor({1, 8, 8, 8}, drng, 0.5);
        for (int k = 0; k < 128; ++k) {
            item.points.push_back(drng.uniform_in_box(t.box));
            item.labels.push_back(drng.uniform() < 0.5 ? 0 : 1);
        }
        const std::vector<TrainItem> items{item};

        ModelParams p1 = init_model(cfg, t.seed);
        AdamState a1;
        train(cfg, t, p1, a1, items, nullptr);

        const std::string path =
            (std::filesystem::temp_directory_path() / "texfield_selftest_resume.ifck").string();
        {
            ModelParams p = init_model(cfg, t.seed);
            AdamState a;
            TrainConfig half = t;
            half.steps = 5;
            train(cfg, half, p, a, items, nullptr);
            save_checkpoint(path, make_checkpoint(cfg, half, p, a));
        }
        Checkpoint ck = load_checkpoint(path);
        train(cfg, t, ck.params, ck.adam, items, nullptr);
        std::filesystem::remove(path);

        bool ok = p1.size() == ck.params.size() && ck.adam.step_count == 10;
        for (const auto& [name, p] : p1) {
            const auto it = ck.params.find(name);
            ok = ok && it != ck.params.end() && it->second.data() == p.data();
        }
        results.push_back({"determinism.train", ok,
                           ok ? "resumed run matches the uninterrupted one bitwise"
                              : "resume diverged from the uninterrupted run"});
    }
    return results;
}

}  // namespace texfield
