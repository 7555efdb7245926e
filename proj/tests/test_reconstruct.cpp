#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <set>

#include "texfield/primitives.hpp"
#include "texfield/reconstruct.hpp"
#include "texfield/sampling.hpp"
#include "texfield/selfcheck.hpp"
#include "texfield/voxelize.hpp"
#include "test_util.hpp"

using namespace texfield;
using testutil::TempDir;

namespace {

ColoredMesh as_colored(const TexturedMesh& m) {
    ColoredMesh out;
    out.vertices = m.vertices;
    for (const auto& f : m.faces) out.faces.push_back({f[0].v, f[1].v, f[2].v});
    return out;
}

VoxelGrid sphere_field(int res, double r, double sharp = 20.0) {
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
                    sigmoid_scalar(sharp * (r - norm(grid_node(field.box, res, ix, iy, iz))));
    return field;
}

ModelConfig tiny_config(int in_c, int out_c, bool sigmoid_head) {
    ModelConfig cfg;
    cfg.in_channels = in_c;
    cfg.out_channels = out_c;
    cfg.channels = {3, 4};
    cfg.hidden = 8;
    cfg.hidden_layers = 2;
    cfg.sigmoid_head = sigmoid_head;
    return cfg;
}

void zero_params(ModelParams& params) {
    for (auto& [name, p] : params) std::fill(p.data().begin(), p.data().end(), 0.0);
}

double logit(double c) { return std::log(c / (1.0 - c)); }

// A model that thresholds the trilinearly interpolated input occupancy at 0.5:
// the first feature column is passed through both hidden layers untouched and
// the head maps it to the logit 40*g - 20.
Checkpoint threshold_geometry_checkpoint(const BBox& box) {
    ModelConfig cfg = tiny_config(1, 1, false);
    ModelParams params = init_model(cfg, 1);
    zero_params(params);
    params.at("dec.h0.w").data()[0] = 1.0;
    params.at("dec.h1.w").data()[0] = 1.0;
    params.at("dec.out.w").data()[0] = 40.0;
    params.at("dec.out.b").data()[0] = -20.0;

    TrainConfig t;
    t.mode = TrainMode::geometry;
    t.res = 8;
    t.seed = 0;
    t.box = box;
    return make_checkpoint(cfg, t, params, AdamState{});
}

Checkpoint constant_color_checkpoint(const BBox& box, const std::array<double, 3>& c) {
    ModelConfig cfg = tiny_config(4, 3, true);
    ModelParams params = init_model(cfg, 2);
    zero_params(params);
    for (int k = 0; k < 3; ++k) params.at("dec.out.b").data()[static_cast<std::size_t>(k)] = logit(c[k]);

    TrainConfig t;
    t.mode = TrainMode::texture;
    t.res = 8;
    t.seed = 0;
    t.box = box;
    return make_checkpoint(cfg, t, params, AdamState{});
}

}  // namespace

TEST_CASE("field evaluation is chunk-invariant and probability-valued") {
    ModelConfig cfg = tiny_config(1, 1, false);
    ModelParams params = init_model(cfg, 3);
    Rng rng(50);
    std::vector<double> d(8 * 8 * 8);
    for (auto& v : d) v = rng.uniform();
    const Tensor input = Tensor::from_data({1, 8, 8, 8}, std::move(d));
    const BBox box({-0.5, -0.5, -0.5}, {0.5, 0.5, 0.5});

    VoxelGrid small_chunks = evaluate_field(cfg, params, input, box, 12, 64);
    VoxelGrid one_chunk = evaluate_field(cfg, params, input, box, 12, 1u << 20);
    CHECK(small_chunks.values == one_chunk.values);
    CHECK(small_chunks.res == 12);
    for (double v : small_chunks.values) {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
    }

    ModelConfig rgb = tiny_config(4, 3, true);
    CHECK_THROWS_AS(evaluate_field(rgb, init_model(rgb, 4), Tensor::zeros({4, 8, 8, 8}), box, 8),
                    std::invalid_argument);
}

TEST_CASE("marching cubes recovers an analytic sphere") {
    const double r = 0.35;
    const ColoredMesh m = marching_cubes(sphere_field(32, r));
    REQUIRE_FALSE(m.faces.empty());
    CHECK(mesh_open_edge_count(m) == 0);

    const double vol = mesh_signed_volume(m);
    const double area = mesh_area(m);
    CHECK(vol > 0.0);  // outward orientation
    CHECK(std::abs(vol - 4.0 / 3.0 * std::numbers::pi * r * r * r) <
          0.05 * 4.0 / 3.0 * std::numbers::pi * r * r * r);
    CHECK(std::abs(area - 4.0 * std::numbers::pi * r * r) < 0.05 * 4.0 * std::numbers::pi * r * r);

    // every vertex sits close to the true surface
    for (const Vec3& v : m.vertices) CHECK(std::abs(norm(v) - r) < 0.04);
}

TEST_CASE("marching cubes edge cases") {
    VoxelGrid flat;
    flat.channels = 1;
    flat.res = 8;
    flat.box = BBox({-0.5, -0.5, -0.5}, {0.5, 0.5, 0.5});
    flat.values.assign(8 * 8 * 8, 0.0);
    CHECK(marching_cubes(flat).faces.empty());
    flat.values.assign(8 * 8 * 8, 1.0);
    CHECK(marching_cubes(flat).faces.empty());

    // one hot node produces a tiny closed diamond around it
    flat.values.assign(8 * 8 * 8, 0.0);
    flat.values[(static_cast<std::size_t>(4) * 8 + 4) * 8 + 4] = 1.0;
    const ColoredMesh spot = marching_cubes(flat);
    CHECK(spot.faces.size() == 8);
    CHECK(mesh_open_edge_count(spot) == 0);
    CHECK(mesh_signed_volume(spot) > 0.0);

    VoxelGrid multi = flat;
    multi.channels = 3;
    multi.values.resize(3 * 8 * 8 * 8);
    CHECK_THROWS_AS(marching_cubes(multi), std::invalid_argument);
    VoxelGrid tiny;
    tiny.channels = 1;
    tiny.res = 1;
    tiny.values.assign(1, 0.0);
    CHECK_THROWS_AS(marching_cubes(tiny), std::invalid_argument);
}

TEST_CASE("mesh measures agree with box analytics") {
    const BBox b({-0.3, -0.2, -0.1}, {0.3, 0.2, 0.1});
    ColoredMesh box_mesh = as_colored(make_box(b));
    const double a = 0.6, bb = 0.4, c = 0.2;
    CHECK(mesh_area(box_mesh) == Catch::Approx(2.0 * (a * bb + bb * c + c * a)).margin(1e-12));
    CHECK(mesh_signed_volume(box_mesh) == Catch::Approx(a * bb * c).margin(1e-12));
    CHECK(mesh_open_edge_count(box_mesh) == 0);

    box_mesh.faces.pop_back();
    CHECK(mesh_open_edge_count(box_mesh) == 3);
}

TEST_CASE("volumetric IoU behaves on known configurations") {
    const BBox domain({-0.4, -0.4, -0.4}, {0.4, 0.4, 0.4});
    const ColoredMesh big = as_colored(make_box(BBox({-0.3, -0.2, -0.1}, {0.3, 0.2, 0.1})));
    const ColoredMesh half = as_colored(make_box(BBox({-0.15, -0.1, -0.05}, {0.15, 0.1, 0.05})));

    CHECK(mesh_iou(big, big, domain, 20000, 7) == 1.0);
    CHECK(mesh_iou(big, half, domain, 100000, 7) == Catch::Approx(0.125).margin(0.02));

    const ColoredMesh left = as_colored(make_box(BBox({-0.35, -0.1, -0.1}, {-0.05, 0.1, 0.1})));
    const ColoredMesh right = as_colored(make_box(BBox({0.05, -0.1, -0.1}, {0.35, 0.1, 0.1})));
    CHECK(mesh_iou(left, right, domain, 20000, 7) == 0.0);
}

TEST_CASE("colorize is chunk-invariant and clamps to unit range") {
    ModelConfig cfg = tiny_config(4, 3, true);
    ModelParams params = init_model(cfg, 6);
    Rng rng(51);
    std::vector<double> d(4 * 8 * 8 * 8);
    for (auto& v : d) v = rng.uniform() * 2.0 - 1.0;
    const Tensor input = Tensor::from_data({4, 8, 8, 8}, std::move(d));
    const BBox box({-0.5, -0.5, -0.5}, {0.5, 0.5, 0.5});
    std::vector<Vec3> verts;
    for (int i = 0; i < 100; ++i) verts.push_back(rng.uniform_in_box(box));

    auto a = colorize(cfg, params, input, box, verts, 7);
    auto b = colorize(cfg, params, input, box, verts, 1u << 20);
    REQUIRE(a.size() == verts.size());
    CHECK(a == b);
    for (const auto& c : a)
        for (double v : c) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }

    ModelConfig geo = tiny_config(1, 1, false);
    CHECK_THROWS_AS(colorize(geo, init_model(geo, 7), Tensor::zeros({1, 8, 8, 8}), box, verts),
                    std::invalid_argument);
}

TEST_CASE("constant-color head paints every vertex the bias color") {
    const BBox box({-0.6, -0.6, -0.6}, {0.6, 0.6, 0.6});
    const std::array<double, 3> want{0.8, 0.2, 0.4};
    const Checkpoint tck = constant_color_checkpoint(box, want);
    const ModelConfig cfg = model_config_from_json(tck.meta.at("model"));

    Rng rng(52);
    std::vector<Vec3> verts;
    for (int i = 0; i < 40; ++i) verts.push_back(rng.uniform_in_box(box));
    auto colors = colorize(cfg, tck.params, Tensor::full({4, 8, 8, 8}, -1.0), box, verts);
    for (const auto& c : colors)
        for (int k = 0; k < 3; ++k) CHECK(c[static_cast<std::size_t>(k)] ==
                                          Catch::Approx(want[static_cast<std::size_t>(k)]).margin(1e-12));
}

TEST_CASE("full reconstruction completes a scan end to end") {
    TempDir dir;
    const BBox box({-0.6, -0.6, -0.6}, {0.6, 0.6, 0.6});
    const TexturedMesh sphere = make_uv_sphere(0.4, 13, 24);
    const Checkpoint gck = threshold_geometry_checkpoint(box);
    const Checkpoint tck = constant_color_checkpoint(box, {0.8, 0.2, 0.4});

    ReconstructOptions opt;
    opt.res_eval = 16;
    opt.vox_samples = 20000;
    opt.seed = 3;
    opt.box = box;

    const ReconstructResult rec = reconstruct_full(sphere, gck, &tck, opt);
    REQUIRE_FALSE(rec.mesh.vertices.empty());
    REQUIRE_FALSE(rec.mesh.faces.empty());
    REQUIRE(rec.mesh.colors.size() == rec.mesh.vertices.size());
    CHECK(rec.dropped_input_points == 0);
    CHECK(rec.field.res == 16);
    for (const auto& c : rec.mesh.colors) {
        CHECK(c[0] == Catch::Approx(0.8).margin(1e-9));
        CHECK(c[1] == Catch::Approx(0.2).margin(1e-9));
        CHECK(c[2] == Catch::Approx(0.4).margin(1e-9));
    }
    // vertices stay within 1.5 input cells of the shell the occupancy marked
    for (const Vec3& v : rec.mesh.vertices) CHECK(std::abs(norm(v) - 0.4) < 1.5 * 1.2 / 8.0);

    // deterministic across repeat runs
    const ReconstructResult again = reconstruct_full(sphere, gck, &tck, opt);
    CHECK(again.mesh.vertices.size() == rec.mesh.vertices.size());
    CHECK(again.field.values == rec.field.values);

    // geometry-only mode leaves the colors empty
    const ReconstructResult bare = reconstruct_full(sphere, gck, nullptr, opt);
    CHECK(bare.mesh.colors.empty());
    CHECK(bare.mesh.faces.size() == rec.mesh.faces.size());

    // the colored result round-trips through the mesh file
    save_colored_ply(dir.file("rec.ply"), rec.mesh);
    const ColoredMesh back = load_colored_ply(dir.file("rec.ply"));
    CHECK(back.vertices.size() == rec.mesh.vertices.size());
    CHECK(back.faces.size() == rec.mesh.faces.size());
    CHECK(back.colors.size() == rec.mesh.colors.size());
}

TEST_CASE("reconstruction rejects checkpoints in the wrong role") {
    const BBox box({-0.6, -0.6, -0.6}, {0.6, 0.6, 0.6});
    const TexturedMesh sphere = make_uv_sphere(0.4, 13, 24);
    const Checkpoint gck = threshold_geometry_checkpoint(box);
    const Checkpoint tck = constant_color_checkpoint(box, {0.5, 0.5, 0.5});

    ReconstructOptions opt;
    opt.res_eval = 8;
    opt.vox_samples = 1000;
    opt.box = box;

    CHECK_THROWS_WITH(reconstruct_full(sphere, tck, nullptr, opt),
                      Catch::Matchers::ContainsSubstring("mismatch"));
    CHECK_THROWS_WITH(reconstruct_full(sphere, gck, &gck, opt),
                      Catch::Matchers::ContainsSubstring("mismatch"));

    Checkpoint naked;
    naked.params = gck.params;
    CHECK_THROWS_WITH(reconstruct_full(sphere, naked, nullptr, opt),
                      Catch::Matchers::ContainsSubstring("metadata"));

    ReconstructOptions bad = opt;
    bad.res_eval = 1;
    CHECK_THROWS_AS(reconstruct_full(sphere, gck, nullptr, bad), std::invalid_argument);

    // texture model demands a textured partial
    const TexturedMesh plain = make_box(BBox({-0.2, -0.2, -0.2}, {0.2, 0.2, 0.2}));
    CHECK_THROWS_WITH(reconstruct_full(plain, gck, &tck, opt),
                      Catch::Matchers::ContainsSubstring("atlas"));
}

TEST_CASE("the built-in selftest passes and catches injected faults") {
    const std::vector<CheckResult> clean = run_selftest();
    std::set<std::string> names;
    for (const auto& r : clean) {
        INFO(r.name << ": " << r.detail);
        CHECK(r.ok);
        names.insert(r.name);
    }
    for (const char* want : {"grad.conv3d", "grad.linear", "grad.trilinear", "grad.losses",
                             "grad.end_to_end", "trilinear.affine", "marching_cubes.sphere",
                             "occupancy.box", "checkpoint.roundtrip", "determinism.train"})
        CHECK(names.count(want) == 1);

    const std::vector<CheckResult> faulty = run_selftest("linear");
    for (const auto& r : faulty) {
        if (r.name == "grad.linear") CHECK_FALSE(r.ok);
        else CHECK(r.ok);
    }

    CHECK_THROWS_AS(run_selftest("relu"), std::invalid_argument);
}
