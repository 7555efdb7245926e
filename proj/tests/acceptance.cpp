// Acceptance gate: one pass/fail line per criterion, every tolerance pinned
// in this file. Exit code is the number of failed criteria. Runs the two
// overfit demonstrations, so expect roughly fifteen minutes on a laptop CPU.
#include <chrono>
#include <cstdarg>
#include <cstdlib>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "texfield/primitives.hpp"
#include "texfield/reconstruct.hpp"
#include "texfield/sampling.hpp"
#include "texfield/training.hpp"
#include "test_util.hpp"

#ifndef TEXFIELD_CLI_PATH
#error "TEXFIELD_CLI_PATH must point at the built binary"
#endif

using namespace texfield;

namespace {

struct Failure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

double seconds_since(const std::chrono::steady_clock::time_point& t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, ...) {
    char buf[512];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof buf, f, ap);
    va_end(ap);
    return buf;
}

void require(bool ok, const std::string& detail) {
    if (!ok) throw Failure(detail);
}

int spawn_cli(const testutil::TempDir& dir, const std::string& args) {
    const std::string cmd = std::string(TEXFIELD_CLI_PATH) + " " + args + " > '" +
                            dir.file("cli_out.txt") + "' 2> '" + dir.file("cli_err.txt") + "'";
    const int raw = std::system(cmd.c_str());
    return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
}

Tensor rand_tensor(Shape shape, Rng& rng, double s = 1.0) {
    std::vector<double> d(static_cast<std::size_t>(numel(shape)));
    for (auto& v : d) v = s * (rng.uniform() * 2.0 - 1.0);
    return Tensor::from_data(std::move(shape), std::move(d));
}

// Central finite differences over every entry of every parameter.
double fd_worst_rel(std::vector<Tensor> params, const std::function<Tensor()>& lossfn) {
    constexpr double h = 1e-5, floor_ = 1e-6;
    for (auto& p : params) p.zero_grad();
    backward(lossfn());
    double worst = 0.0;
    NoGradGuard ng;
    for (auto& p : params) {
        for (std::size_t i = 0; i < p.data().size(); ++i) {
            const double keep = p.data()[i];
            p.data()[i] = keep + h;
            const double up = lossfn().item();
            p.data()[i] = keep - h;
            const double dn = lossfn().item();
            p.data()[i] = keep;
            const double num = (up - dn) / (2.0 * h);
            const double rel = std::abs(p.grad()[i] - num) /
                               std::max({std::abs(p.grad()[i]), std::abs(num), floor_});
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

// Overfit fixture shared by criteria 7, 8 and 10: a two-hemisphere sphere,
// one synthesized hole, and the three supervision pools.
struct OverfitFixture {
    TexturedMesh sphere;
    PartialScan part;
    BBox box{{-0.6, -0.6, -0.6}, {0.6, 0.6, 0.6}};
    ColoredPoints partial_colored;
    OccupancyPoints occ_pool;
    ColoredPoints color_pool;
    std::string geo_ckpt;  // filled by criterion 7
    std::string tex_ckpt;  // filled by criterion 8
};

OverfitFixture make_overfit_fixture() {
    OverfitFixture fx;
    fx.sphere = make_uv_sphere(0.4, 13, 24);
    Rng hole_rng(1234);
    fx.part = synthesize_partial(fx.sphere, 1, 0.15, 0.25, hole_rng);
    Rng rng(99);
    fx.partial_colored = sample_colored_surface(fx.part.mesh, 100000, rng);
    const OccupancyTester tester(fx.sphere);
    fx.occ_pool = sample_occupancy(fx.sphere, tester, 100000, rng);
    fx.color_pool = sample_colored_surface(fx.sphere, 100000, rng);
    return fx;
}

// ---------------------------------------------------------------------------
// criteria

std::string c1_gradients() {
    const auto t0 = std::chrono::steady_clock::now();
    constexpr double tol = 1e-4;
    double worst = 0.0;
    auto probe = [&](const char* layer, std::vector<Tensor> params,
                     const std::function<Tensor()>& loss) {
        const double rel = fd_worst_rel(std::move(params), loss);
        worst = std::max(worst, rel);
        require(rel < tol, fmt("%s gradient rel err %.3g exceeds %.0e", layer, rel, tol));
    };

    Rng rng(401);
    {
        Tensor in = rand_tensor({2, 4, 4, 4}, rng).set_requires_grad(true);
        Tensor w = rand_tensor({3, 2, 3, 3, 3}, rng, 0.4).set_requires_grad(true);
        Tensor b = rand_tensor({3}, rng, 0.1).set_requires_grad(true);
        probe("conv3d", {in, w, b},
              [&] { return scale(sum(sigmoid(conv3d(in, w, b, 1))), 0.1); });
    }
    {
        Tensor in = rand_tensor({2, 4, 4, 4}, rng).set_requires_grad(true);
        probe("maxpool3d", {in}, [&] { return scale(sum(sigmoid(maxpool3d(in, 2))), 0.5); });
    }
    {
        Tensor in = rand_tensor({5, 7}, rng).set_requires_grad(true);
        Tensor w = rand_tensor({4, 7}, rng, 0.4).set_requires_grad(true);
        Tensor b = rand_tensor({4}, rng, 0.1).set_requires_grad(true);
        probe("linear", {in, w, b}, [&] { return scale(sum(sigmoid(linear(in, w, b))), 0.1); });
    }
    {
        Tensor g = rand_tensor({3, 4, 5, 6}, rng).set_requires_grad(true);
        const BBox bb({-1.0, -0.5, 0.0}, {1.0, 1.5, 2.0});
        std::vector<Vec3> pts;
        for (int i = 0; i < 24; ++i) pts.push_back(rng.uniform_in_box(bb));
        pts.push_back({-9.0, -9.0, -9.0});  // clamped corner
        probe("trilinear", {g},
              [&] { return scale(sum(sigmoid(trilinear_gather(g, bb, pts))), 0.1); });
    }
    {
        Tensor a = rand_tensor({3, 5}, rng).set_requires_grad(true);
        Tensor b = rand_tensor({3, 5}, rng).set_requires_grad(true);
        probe("elementwise", {a, b},
              [&] { return scale(inner(sigmoid(add(a, scale(b, -0.5))), relu(add(a, b))), 0.1); });
        probe("concat", {a, b},
              [&] { return scale(sum(sigmoid(concat_cols({a, b}))), 0.1); });
    }
    {
        Tensor p = rand_tensor({4, 3}, rng).set_requires_grad(true);
        Tensor t = rand_tensor({4, 3}, rng);
        for (double& v : t.data()) v += 3.0;  // keep the differences away from zero
        probe("l1_loss", {p}, [&] { return scale(l1_loss(p, t), 0.05); });

        Tensor z = rand_tensor({12}, rng, 2.0).set_requires_grad(true);
        Tensor y = Tensor::zeros({12});
        for (double& v : y.data()) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
        probe("bce_loss", {z}, [&] { return scale(bce_loss(z, y), 0.2); });
    }

    // both full networks at R=8 with two scales
    ModelConfig base;
    base.channels = {4, 6};
    base.hidden = 16;
    base.hidden_layers = 2;
    const BBox bb({-0.5, -0.5, -0.5}, {0.5, 0.5, 0.5});
    std::vector<Vec3> pts;
    for (int i = 0; i < 6; ++i) pts.push_back(rng.uniform_in_box(bb));

    {
        ModelConfig cfg = base;
        cfg.in_channels = 1;
        cfg.out_channels = 1;
        cfg.sigmoid_head = false;
        ModelParams params = init_model(cfg, 17);
        const Tensor input = rand_tensor({1, 8, 8, 8}, rng, 0.5);
        Tensor labels = Tensor::zeros({6, 1});
        for (double& v : labels.data()) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
        std::vector<Tensor> plist;
        for (auto& [name, p] : params) plist.push_back(p);
        probe("occupancy network", plist,
              [&] { return bce_loss(predict(cfg, params, input, bb, pts), labels); });
    }
    {
        ModelConfig cfg = base;
        cfg.in_channels = 4;
        cfg.out_channels = 3;
        cfg.sigmoid_head = true;
        ModelParams params = init_model(cfg, 18);
        const Tensor input = rand_tensor({4, 8, 8, 8}, rng, 0.5);
        const Tensor target = rand_tensor({6, 3}, rng, 0.4);
        std::vector<Tensor> plist;
        for (auto& [name, p] : params) plist.push_back(p);
        probe("color network", plist,
              [&] { return scale(l1_loss(predict(cfg, params, input, bb, pts), target), 0.2); });
    }

    const double s = seconds_since(t0);
    require(s < 60.0, fmt("gradient suite took %.1f s (budget 60)", s));
    return fmt("worst rel err %.3g over 9 layer probes + 2 full nets (tol 1e-4), %.1f s (budget 60)",
               worst, s);
}

std::string c2_trilinear_affine() {
    const int res = 16;
    const BBox box({-1.0, -1.0, -1.0}, {1.0, 1.0, 1.0});
    auto f = [](const Vec3& p) { return 2.0 * p.x - p.y + 3.0 * p.z + 1.0; };

    Tensor grid = Tensor::zeros({1, res, res, res});
    for (int ix = 0; ix < res; ++ix)
        for (int iy = 0; iy < res; ++iy)
            for (int iz = 0; iz < res; ++iz)
                grid.data()[(static_cast<std::size_t>(ix) * res + iy) * res + iz] =
                    f(grid_node(box, res, ix, iy, iz));

    // interior = inside the node hull, where interpolation is exact for affine f
    const double cell = 2.0 / res;
    const BBox hull({-1.0 + cell, -1.0 + cell, -1.0 + cell}, {1.0 - cell, 1.0 - cell, 1.0 - cell});
    Rng rng(402);
    std::vector<Vec3> pts;
    for (int i = 0; i < 100; ++i) pts.push_back(rng.uniform_in_box(hull));

    const Tensor out = trilinear_gather(grid, box, pts);
    double worst = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i)
        worst = std::max(worst, std::abs(out.data()[i] - f(pts[i])));
    require(worst < 1e-9, fmt("max abs err %.3g exceeds 1e-9", worst));
    return fmt("2x-y+3z+1 reproduced at 100 interior points, max abs err %.3g (tol 1e-9)", worst);
}

std::string c3_l1_oracle() {
    Rng rng(403);
    constexpr int B = 2, P = 64;
    std::vector<Tensor> preds, targets;
    for (int b = 0; b < B; ++b) {
        preds.push_back(rand_tensor({P, 3}, rng).set_requires_grad(true));
        targets.push_back(rand_tensor({P, 3}, rng));
    }

    const Tensor vec = add(l1_loss(preds[0], targets[0]), l1_loss(preds[1], targets[1]));

    long double loop = 0.0L;
    for (int b = 0; b < B; ++b)
        for (std::size_t i = 0; i < static_cast<std::size_t>(P) * 3; ++i)
            loop += std::abs(static_cast<long double>(preds[static_cast<std::size_t>(b)].data()[i]) -
                             targets[static_cast<std::size_t>(b)].data()[i]);

    const double diff = std::abs(vec.item() - static_cast<double>(loop));
    require(diff <= 1e-10, fmt("vectorized vs loop differ by %.3g (tol 1e-10)", diff));
    return fmt("batched L1 (B=2, P=64) matches the explicit loop within %.3g (tol 1e-10)", diff);
}

std::string c4_occupancy_oracle() {
    Rng rng(404);
    std::size_t agree = 0, total = 0;

    {  // sphere, analytic inside test ||p|| < r
        const double r = 0.4;
        const TexturedMesh mesh = make_uv_sphere(r, 20, 40);
        const OccupancyTester tester(mesh);
        const BBox around({-0.55, -0.55, -0.55}, {0.55, 0.55, 0.55});
        std::size_t n = 0;
        while (n < 10000) {
            const Vec3 p = rng.uniform_in_box(around);
            if (std::abs(norm(p) - r) <= 0.01) continue;  // skip the ambiguous band
            ++n;
            ++total;
            if (tester.inside(p) == (norm(p) < r)) ++agree;
        }
    }
    {  // box, analytic inside test
        const BBox inner({-0.3, -0.2, -0.1}, {0.3, 0.2, 0.1});
        const TexturedMesh mesh = make_box(inner);
        const OccupancyTester tester(mesh);
        const BBox around({-0.55, -0.55, -0.55}, {0.55, 0.55, 0.55});
        auto surface_dist = [&](const Vec3& p) {
            const double dx = std::max({inner.min.x - p.x, p.x - inner.max.x,
                                        -(std::min(p.x - inner.min.x, inner.max.x - p.x))});
            const double dy = std::max({inner.min.y - p.y, p.y - inner.max.y,
                                        -(std::min(p.y - inner.min.y, inner.max.y - p.y))});
            const double dz = std::max({inner.min.z - p.z, p.z - inner.max.z,
                                        -(std::min(p.z - inner.min.z, inner.max.z - p.z))});
            if (inner.contains(p)) return std::min({-dx, -dy, -dz});
            const double ox = std::max(dx, 0.0), oy = std::max(dy, 0.0), oz = std::max(dz, 0.0);
            return std::sqrt(ox * ox + oy * oy + oz * oz);
        };
        std::size_t n = 0;
        while (n < 10000) {
            const Vec3 p = rng.uniform_in_box(around);
            if (surface_dist(p) <= 0.01) continue;
            ++n;
            ++total;
            if (tester.inside(p) == inner.contains(p)) ++agree;
        }
    }

    const double frac = static_cast<double>(agree) / static_cast<double>(total);
    require(frac >= 0.99, fmt("only %.4f of labels agree (needs >= 0.99)", frac));
    return fmt("%zu/%zu labels agree with the analytic sphere+box (needs >= 99%%)", agree, total);
}

std::string c5_sampling_statistics() {
    const TexturedMesh sphere = make_uv_sphere(0.4, 20, 40);
    const OccupancyTester tester(sphere);

    OccupancySamplingConfig base;  // sigma 0.015 / 0.2, split 0.5, 100k points
    OccupancySamplingConfig no_near = base;
    no_near.sigma_small = 1e-12;
    OccupancySamplingConfig no_far = base;
    no_far.sigma_large = 1e-12;

    // with a fixed seed the draw sequence does not depend on the sigmas, so
    // differencing paired runs isolates the per-point Gaussian displacement
    Rng ra(405);
    const OccupancyPoints run = sample_occupancy(sphere, tester, base, ra);
    Rng rb(405);
    const OccupancyPoints flat_near = sample_occupancy(sphere, tester, no_near, rb);
    Rng rc(405);
    const OccupancyPoints flat_far = sample_occupancy(sphere, tester, no_far, rc);

    const std::size_t near = (base.total_points + 1) / 2;  // ceil of the 50/50 split
    auto band_stddevs = [](const OccupancyPoints& a, const OccupancyPoints& b, std::size_t from,
                           std::size_t to) {
        std::array<double, 3> mean{}, var{};
        const double n = static_cast<double>(to - from);
        for (std::size_t i = from; i < to; ++i) {
            const Vec3 d = a.points[i] - b.points[i];
            mean[0] += d.x;
            mean[1] += d.y;
            mean[2] += d.z;
        }
        for (double& m : mean) m /= n;
        for (std::size_t i = from; i < to; ++i) {
            const Vec3 d = a.points[i] - b.points[i];
            var[0] += (d.x - mean[0]) * (d.x - mean[0]);
            var[1] += (d.y - mean[1]) * (d.y - mean[1]);
            var[2] += (d.z - mean[2]) * (d.z - mean[2]);
        }
        std::array<double, 3> sd;
        for (int c = 0; c < 3; ++c) sd[static_cast<std::size_t>(c)] =
            std::sqrt(var[static_cast<std::size_t>(c)] / n);
        return sd;
    };

    const auto sd_near = band_stddevs(run, flat_near, 0, near);
    const auto sd_far = band_stddevs(run, flat_far, near, base.total_points);
    double worst_rel = 0.0;
    for (int c = 0; c < 3; ++c) {
        const double rn = std::abs(sd_near[static_cast<std::size_t>(c)] / 0.015 - 1.0);
        const double rf = std::abs(sd_far[static_cast<std::size_t>(c)] / 0.2 - 1.0);
        worst_rel = std::max({worst_rel, rn, rf});
        require(rn <= 0.02, fmt("near-band sd[%d] = %.5f, off by %.3f%% (tol 2%%)", c,
                                sd_near[static_cast<std::size_t>(c)], 100.0 * rn));
        require(rf <= 0.02, fmt("far-band sd[%d] = %.5f, off by %.3f%% (tol 2%%)", c,
                                sd_far[static_cast<std::size_t>(c)], 100.0 * rf));
    }

    std::size_t inside = 0;
    for (std::size_t i = 0; i < near; ++i)
        if (run.labels[i]) ++inside;
    const double frac = static_cast<double>(inside) / static_cast<double>(near);
    require(frac > 0.3 && frac < 0.7, fmt("tight-band inside fraction %.3f outside (0.3,0.7)", frac));

    return fmt("displacement sd within %.2f%% of 0.015/0.2 per component at 100k (tol 2%%); "
               "tight-band inside fraction %.3f in (0.3,0.7)",
               100.0 * worst_rel, frac);
}

std::string c6_marching_cubes() {
    const auto t0 = std::chrono::steady_clock::now();
    const int res = 64;
    const double r = 0.35;
    VoxelGrid field;
    field.channels = 1;
    field.res = res;
    field.box = BBox({-0.5, -0.5, -0.5}, {0.5, 0.5, 0.5});
    field.values.resize(static_cast<std::size_t>(res) * res * res);
    std::size_t i = 0;
    for (int ix = 0; ix < res; ++ix)
        for (int iy = 0; iy < res; ++iy)
            for (int iz = 0; iz < res; ++iz, ++i)
                field.values[i] =
                    sigmoid_scalar(20.0 * (r - norm(grid_node(field.box, res, ix, iy, iz))));

    const ColoredMesh mesh = marching_cubes(field, 0.5);
    const std::size_t open = mesh_open_edge_count(mesh);
    const double area = mesh_area(mesh);
    const double vol = mesh_signed_volume(mesh);
    const double area_exact = 4.0 * std::numbers::pi * r * r;
    const double vol_exact = 4.0 / 3.0 * std::numbers::pi * r * r * r;
    const double s = seconds_since(t0);

    require(open == 0, fmt("%zu open edges (mesh must be watertight)", open));
    require(std::abs(area - area_exact) / area_exact < 0.05,
            fmt("area %.5f vs %.5f, off by %.2f%% (tol 5%%)", area, area_exact,
                100.0 * std::abs(area - area_exact) / area_exact));
    require(std::abs(vol - vol_exact) / vol_exact < 0.05,
            fmt("volume %.5f vs %.5f, off by %.2f%% (tol 5%%)", vol, vol_exact,
                100.0 * std::abs(vol - vol_exact) / vol_exact));
    require(s < 30.0, fmt("took %.1f s (budget 30)", s));
    return fmt("watertight, area off %.2f%%, volume off %.2f%% (tol 5%%), %.1f s (budget 30)",
               100.0 * std::abs(area - area_exact) / area_exact,
               100.0 * std::abs(vol - vol_exact) / vol_exact, s);
}

std::string c7_geometry_overfit(OverfitFixture& fx, const testutil::TempDir& dir) {
    const auto t0 = std::chrono::steady_clock::now();

    TrainConfig g;
    g.mode = TrainMode::geometry;
    g.res = 32;
    g.batch_size = 1;
    g.points_per_item = 1024;
    g.steps = 2000;  // the step ceiling in the criterion
    g.lr = 1e-3;
    g.seed = 7;
    g.box = fx.box;
    g.ckpt_path = dir.file("geo.ifck");

    const ModelConfig gm = geometry_model_config();
    ModelParams gp = init_model(gm, g.seed);
    std::vector<TrainItem> items;
    items.push_back(make_geometry_item("sph", fx.partial_colored.points, fx.occ_pool, g.res, fx.box));
    AdamState adam;
    train(gm, g, gp, adam, items, nullptr);
    fx.geo_ckpt = g.ckpt_path;

    const Checkpoint ck = load_checkpoint(fx.geo_ckpt);
    ReconstructOptions opt;
    opt.res_eval = 64;
    opt.vox_samples = 100000;
    opt.seed = 7;
    opt.box = fx.box;
    const ReconstructResult rec = reconstruct_full(fx.part.mesh, ck, nullptr, opt);

    ColoredMesh gt;
    gt.vertices = fx.sphere.vertices;
    for (const auto& f : fx.sphere.faces) gt.faces.push_back({f[0].v, f[1].v, f[2].v});
    const double iou = mesh_iou(rec.mesh, gt, fx.box, 100000, 2024);
    const double minutes = seconds_since(t0) / 60.0;

    require(iou >= 0.95, fmt("IoU %.4f (needs >= 0.95)", iou));
    require(minutes < 30.0, fmt("took %.1f min (budget 30)", minutes));
    return fmt("hole completed, IoU %.4f vs ground truth (needs >= 0.95), 2000 steps in %.1f min "
               "(budget 30)",
               iou, minutes);
}

std::string c8_texture_overfit(OverfitFixture& fx, const testutil::TempDir& dir) {
    TrainConfig t;
    t.mode = TrainMode::texture;
    t.res = 32;
    t.batch_size = 1;
    t.points_per_item = 1024;
    t.steps = 2000;  // the step ceiling in the criterion
    t.lr = 1e-3;
    t.seed = 11;
    t.box = fx.box;
    t.ckpt_path = dir.file("tex.ifck");

    const ModelConfig tm = texture_model_config();
    ModelParams tp = init_model(tm, t.seed);
    std::vector<TrainItem> items;
    items.push_back(
        make_texture_item("sph", fx.partial_colored, fx.color_pool.points, fx.color_pool, t.res, fx.box));
    AdamState adam;
    train(tm, t, tp, adam, items, nullptr);
    fx.tex_ckpt = t.ckpt_path;

    // color the ground-truth vertices: observed partial colors + completed
    // geometry in the occupancy channel, exactly as at training time
    const Checkpoint ck = load_checkpoint(fx.tex_ckpt);
    const Tensor input = stack_input(fx.partial_colored, fx.color_pool.points, t.res, fx.box).to_tensor();
    const auto pred = colorize(tm, ck.params, input, fx.box, fx.sphere.vertices);

    const Vec3 hc = fx.part.holes.at(0).center;
    const double hr = fx.part.holes.at(0).radius;
    double l1_sum = 0.0;
    std::size_t l1_n = 0, hole_ok = 0, hole_n = 0;
    for (std::size_t i = 0; i < fx.sphere.vertices.size(); ++i) {
        const auto want = sphere_expected_color(fx.sphere.vertices[i]);
        double l1 = 0.0, linf = 0.0;
        for (int c = 0; c < 3; ++c) {
            const double d = std::abs(pred[i][static_cast<std::size_t>(c)] -
                                      want[static_cast<std::size_t>(c)]);
            l1 += d;
            linf = std::max(linf, d);
        }
        if (dist(fx.sphere.vertices[i], hc) <= hr) {
            ++hole_n;
            if (linf <= 0.1) ++hole_ok;
        } else {
            l1_sum += l1 / 3.0;
            ++l1_n;
        }
    }
    const double mean_l1 = l1_sum / static_cast<double>(l1_n);
    const double hole_frac = static_cast<double>(hole_ok) / static_cast<double>(hole_n);

    require(mean_l1 <= 0.05, fmt("unmasked mean L1 %.5f (needs <= 0.05)", mean_l1));
    require(hole_frac >= 0.9,
            fmt("only %zu/%zu hole vertices within 0.1 (needs >= 90%%)", hole_ok, hole_n));
    return fmt("unmasked mean L1 %.5f over %zu vertices (needs <= 0.05); in-painting %zu/%zu hole "
               "vertices within 0.1 Linf (needs >= 90%%)",
               mean_l1, l1_n, hole_ok, hole_n);
}

std::string c9_determinism(const testutil::TempDir& dir) {
    std::filesystem::create_directories(dir.path / "det" / "shapes");
    save_textured_obj(dir.file("det/shapes/ball.obj"), make_uv_sphere(0.4, 9, 16));
    require(spawn_cli(dir, "prepare --input-dir " + dir.file("det/shapes") + " --out-dir " +
                               dir.file("det/data") +
                               " --holes 1 --radius-min 0.15 --radius-max 0.25 --variants 1"
                               " --seed 5 --points 1200 --vox-samples 1000") == 0,
            "prepare run failed");

    const std::string common = " --data " + dir.file("det/data") +
                               " --res 8 --steps 5 --points-per-item 32 --batch-size 1"
                               " --lr 1e-3 --seed 9 --bbox unit --subsample 256";
    for (const char* tag : {"a", "b"})
        require(spawn_cli(dir, std::string("train --mode geometry --ckpt-out ") +
                                   dir.file(std::string("det/") + tag + ".ifck") + " --trace-out " +
                                   dir.file(std::string("det/") + tag + ".csv") + common) == 0,
                std::string("train run ") + tag + " failed");

    const std::string trace_a = testutil::slurp(dir.file("det/a.csv"));
    require(!trace_a.empty(), "empty loss trace");
    require(trace_a == testutil::slurp(dir.file("det/b.csv")),
            "twin train runs wrote different loss traces");
    require(testutil::slurp(dir.file("det/a.ifck")) == testutil::slurp(dir.file("det/b.ifck")),
            "twin train runs wrote different checkpoints");

    const std::string recon = "reconstruct --partial " + dir.file("det/data/ball_v00/partial.obj") +
                              " --geo-ckpt " + dir.file("det/a.ifck") +
                              " --res-eval 16 --bbox=-0.6,-0.6,-0.6,0.6,0.6,0.6"
                              " --vox-samples 2000 --seed 3";
    for (const char* tag : {"r1", "r2"})
        require(spawn_cli(dir, recon + " --out " + dir.file(std::string("det/") + tag + ".ply") +
                                   " --field-out " + dir.file(std::string("det/") + tag + ".feld")) == 0,
                std::string("reconstruct run ") + tag + " failed");

    const std::string ply = testutil::slurp(dir.file("det/r1.ply"));
    const std::string field = testutil::slurp(dir.file("det/r1.feld"));
    require(!ply.empty() && !field.empty(), "empty reconstruction outputs");
    require(ply == testutil::slurp(dir.file("det/r2.ply")),
            "twin reconstruct runs wrote different meshes");
    require(field == testutil::slurp(dir.file("det/r2.feld")),
            "twin reconstruct runs wrote different fields");
    return fmt("twin seeded runs byte-identical: loss trace (%zu B), checkpoint, mesh (%zu B), "
               "field dump",
               trace_a.size(), ply.size());
}

std::string c10_end_to_end(const OverfitFixture& fx, const testutil::TempDir& dir) {
    require(!fx.geo_ckpt.empty() && !fx.tex_ckpt.empty(),
            "overfit checkpoints unavailable (criteria 7/8 did not complete)");
    save_textured_obj(dir.file("partial.obj"), fx.part.mesh);

    const int code =
        spawn_cli(dir, "reconstruct --partial " + dir.file("partial.obj") + " --geo-ckpt " +
                           fx.geo_ckpt + " --tex-ckpt " + fx.tex_ckpt +
                           " --res-eval 64 --bbox=-0.6,-0.6,-0.6,0.6,0.6,0.6"
                           " --vox-samples 100000 --seed 7 --out " +
                           dir.file("completed.ply"));
    require(code == 0, fmt("reconstruct exited with %d", code));

    const ColoredMesh mesh = load_colored_ply(dir.file("completed.ply"));
    require(!mesh.faces.empty(), "reconstruction has no faces");
    require(mesh.colors.size() == mesh.vertices.size(),
            fmt("%zu colors for %zu vertices", mesh.colors.size(), mesh.vertices.size()));
    for (const auto& c : mesh.colors)
        for (double v : c)
            require(v >= 0.0 && v <= 1.0, fmt("color component %.3f out of range", v));
    return fmt("partial scan -> colored PLY: %zu vertices, %zu faces, all colors in range",
               mesh.vertices.size(), mesh.faces.size());
}

}  // namespace

int main() {
    std::setvbuf(stdout, nullptr, _IONBF, 0);
    testutil::TempDir dir;
    std::optional<OverfitFixture> fixture;

    int failures = 0;
    auto run = [&](int id, const char* what, const std::function<std::string()>& fn) {
        std::string detail;
        bool ok = false;
        try {
            detail = fn();
            ok = true;
        } catch (const std::exception& e) {
            detail = e.what();
        }
        if (!ok) ++failures;
        std::printf("[%2d] %s — %s: %s\n", id, ok ? "PASS" : "FAIL", what, detail.c_str());
    };

    run(1, "gradient fidelity vs central differences", c1_gradients);
    run(2, "trilinear interpolation exactness", c2_trilinear_affine);
    run(3, "vectorized L1 equals the explicit loop", c3_l1_oracle);
    run(4, "ray-parity occupancy vs analytic labels", c4_occupancy_oracle);
    run(5, "two-band sampling statistics", c5_sampling_statistics);
    run(6, "marching cubes on an analytic sphere field", c6_marching_cubes);
    run(7, "geometry completion overfit", [&] {
        fixture = make_overfit_fixture();
        return c7_geometry_overfit(*fixture, dir);
    });
    run(8, "texture in-painting overfit", [&] {
        if (!fixture) throw Failure("fixture unavailable (criterion 7 did not build it)");
        return c8_texture_overfit(*fixture, dir);
    });
    run(9, "seeded runs are bit-identical", [&] { return c9_determinism(dir); });
    run(10, "operator flow emits a valid colored mesh", [&] {
        if (!fixture) throw Failure("fixture unavailable (criterion 7 did not build it)");
        return c10_end_to_end(*fixture, dir);
    });

    std::printf("acceptance: %d/10 criteria passed\n", 10 - failures);
    return failures;
}
