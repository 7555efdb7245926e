#pragma once

#include <cstdint>
#include <unordered_map>
#include <utility>
#include <vector>

#include "texfield/checkpoint.hpp"
#include "texfield/ifnet.hpp"
#include "texfield/marching_tables.hpp"
#include "texfield/mesh.hpp"
#include "texfield/sampling.hpp"
#include "texfield/voxelize.hpp"

namespace texfield {

inline constexpr std::size_t kEvalChunk = 8192;
inline constexpr double kIsoLevel = 0.5;

// World position of a grid sample: cell centers, matching the trilinear node
// convention.
inline Vec3 grid_node(const BBox& box, int res, int ix, int iy, int iz) {
    const Vec3 ext = box.extent();
    return {box.min.x + (ix + 0.5) * ext.x / res,
            box.min.y + (iy + 0.5) * ext.y / res,
            box.min.z + (iz + 0.5) * ext.z / res};
}

// Dense occupancy-probability field at res^3 cell centers. Chunk size only
// batches the decoder; results are identical for any chunking because each
// point's path through the network is independent.
inline VoxelGrid evaluate_field(const ModelConfig& cfg, const ModelParams& params,
                                const Tensor& input, const BBox& box, int res,
                                std::size_t chunk = kEvalChunk) {
    if (cfg.out_channels != 1)
        throw std::invalid_argument("evaluate_field: needs a single-channel occupancy model");
    NoGradGuard ng;
    const std::vector<Tensor> grids = encode(cfg, params, input);

    VoxelGrid field;
    field.channels = 1;
    field.res = res;
    field.box = box;
    field.values.resize(static_cast<std::size_t>(res) * res * res);

    std::vector<Vec3> pts;
    pts.reserve(chunk);
    std::size_t base = 0;
    auto flush = [&]() {
        if (pts.empty()) return;
        const Tensor logits = decode(cfg, params, query_features(grids, box, pts));
        for (std::size_t i = 0; i < pts.size(); ++i)
            field.values[base + i] = sigmoid_scalar(logits.data()[i]);
        base += pts.size();
        pts.clear();
    };
    for (int ix = 0; ix < res; ++ix)
        for (int iy = 0; iy < res; ++iy)
            for (int iz = 0; iz < res; ++iz) {
                pts.push_back(grid_node(box, res, ix, iy, iz));
                if (pts.size() == chunk) flush();
            }
    flush();
    return field;
}

// Per-vertex colors from the texture model, chunked like evaluate_field.
inline std::vector<std::array<double, 3>> colorize(const ModelConfig& cfg, const ModelParams& params,
                                                   const Tensor& input, const BBox& box,
                                                   const std::vector<Vec3>& vertices,
                                                   std::size_t chunk = kEvalChunk) {
    if (cfg.out_channels != 3)
        throw std::invalid_argument("colorize: needs an rgb model");
    NoGradGuard ng;
    const std::vector<Tensor> grids = encode(cfg, params, input);
    std::vector<std::array<double, 3>> colors(vertices.size());
    for (std::size_t at = 0; at < vertices.size(); at += chunk) {
        const std::size_t n = std::min(chunk, vertices.size() - at);
        const std::vector<Vec3> pts(vertices.begin() + static_cast<std::ptrdiff_t>(at),
                                    vertices.begin() + static_cast<std::ptrdiff_t>(at + n));
        const Tensor rgb = decode(cfg, params, query_features(grids, box, pts));
        for (std::size_t i = 0; i < n; ++i)
            for (int c = 0; c < 3; ++c)
                colors[at + i][c] = std::clamp(rgb.data()[i * 3 + c], 0.0, 1.0);
    }
    return colors;
}

// ---------------------------------------------------------------------------
// field files: "FELD", res u32, bbox 6 x f64, f32 values (x-major)

inline constexpr char kFieldMagic[4] = {'F', 'E', 'L', 'D'};

inline void save_field(const std::string& path, const VoxelGrid& field) {
    if (field.channels != 1) throw std::invalid_argument("save_field: field must have one channel");
    binio::atomic_write(path, [&](std::ostream& os) {
        binio::write_magic(os, kFieldMagic);
        binio::write_scalar<std::uint32_t>(os, static_cast<std::uint32_t>(field.res));
        for (int a = 0; a < 3; ++a) binio::write_scalar<double>(os, field.box.min[a]);
        for (int a = 0; a < 3; ++a) binio::write_scalar<double>(os, field.box.max[a]);
        for (double v : field.values) binio::write_scalar<float>(os, static_cast<float>(v));
    });
}

inline VoxelGrid load_field(const std::string& path) {
    std::ifstream is = binio::open_in(path);
    binio::expect_magic(is, kFieldMagic, path);
    VoxelGrid g;
    g.channels = 1;
    g.res = static_cast<int>(binio::read_scalar<std::uint32_t>(is, "resolution"));
    for (int a = 0; a < 3; ++a) g.box.min[a] = binio::read_scalar<double>(is, "bbox");
    for (int a = 0; a < 3; ++a) g.box.max[a] = binio::read_scalar<double>(is, "bbox");
    g.values.resize(static_cast<std::size_t>(g.res) * g.res * g.res);
    for (double& v : g.values) v = binio::read_scalar<float>(is, "values");
    return g;
}

// ---------------------------------------------------------------------------
// marching cubes

namespace detail {

// cube corner offsets in the classic table order
inline constexpr int kCubeCorner[8][3] = {
    {0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
    {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1},
};

// each cube edge as (corner a, corner b)
inline constexpr int kCubeEdge[12][2] = {
    {0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {5, 6},
    {6, 7}, {7, 4}, {0, 4}, {1, 5}, {2, 6}, {3, 7},
};

// lattice edges are identified by their lower endpoint and axis so shared
// cube faces weld to the same vertex
inline std::int64_t edge_key(int res, int ix, int iy, int iz, int cx, int cy, int cz,
                             int dx, int dy, int dz) {
    const int lx = ix + std::min(cx, cx + dx);
    const int ly = iy + std::min(cy, cy + dy);
    const int lz = iz + std::min(cz, cz + dz);
    const int axis = dx != 0 ? 0 : (dy != 0 ? 1 : 2);
    return ((static_cast<std::int64_t>(lx) * res + ly) * res + lz) * 3 + axis;
}

}  // namespace detail

// Extracts the iso-surface of a field sampled at cell centers. Vertices on
// shared lattice edges are welded, so a field whose iso-surface stays inside
// the grid yields a closed 2-manifold. Triangles wind with outward normals
// pointing toward lower field values.
inline ColoredMesh marching_cubes(const VoxelGrid& field, double iso = kIsoLevel) {
    if (field.channels != 1)
        throw std::invalid_argument("marching_cubes: field must have one channel");
    const int res = field.res;
    if (res < 2) throw std::invalid_argument("marching_cubes: need at least a 2^3 field");
    const BBox& box = field.box;

    ColoredMesh mesh;
    std::unordered_map<std::int64_t, int> edge_vertex;

    auto value = [&](int ix, int iy, int iz) {
        return field.values[(static_cast<std::size_t>(ix) * res + iy) * res + iz];
    };

    for (int ix = 0; ix + 1 < res; ++ix)
        for (int iy = 0; iy + 1 < res; ++iy)
            for (int iz = 0; iz + 1 < res; ++iz) {
                double vals[8];
                int ci = 0;
                for (int c = 0; c < 8; ++c) {
                    vals[c] = value(ix + detail::kCubeCorner[c][0], iy + detail::kCubeCorner[c][1],
                                    iz + detail::kCubeCorner[c][2]);
                    if (vals[c] < iso) ci |= 1 << c;
                }
                const int mask = kMcEdgeMask[ci];
                if (mask == 0) continue;

                int edge_to_vertex[12];
                for (int e = 0; e < 12; ++e) {
                    if (!(mask & (1 << e))) continue;
                    const int a = detail::kCubeEdge[e][0];
                    const int b = detail::kCubeEdge[e][1];
                    const std::int64_t key = detail::edge_key(
                        res, ix, iy, iz, detail::kCubeCorner[a][0], detail::kCubeCorner[a][1],
                        detail::kCubeCorner[a][2], detail::kCubeCorner[b][0] - detail::kCubeCorner[a][0],
                        detail::kCubeCorner[b][1] - detail::kCubeCorner[a][1],
                        detail::kCubeCorner[b][2] - detail::kCubeCorner[a][2]);
                    const auto it = edge_vertex.find(key);
                    if (it != edge_vertex.end()) {
                        edge_to_vertex[e] = it->second;
                        continue;
                    }
                    const double va = vals[a], vb = vals[b];
                    double t = std::abs(vb - va) > 1e-300 ? (iso - va) / (vb - va) : 0.5;
                    t = std::clamp(t, 0.0, 1.0);
                    const Vec3 pa = grid_node(box, res, ix + detail::kCubeCorner[a][0],
                                              iy + detail::kCubeCorner[a][1], iz + detail::kCubeCorner[a][2]);
                    const Vec3 pb = grid_node(box, res, ix + detail::kCubeCorner[b][0],
                                              iy + detail::kCubeCorner[b][1], iz + detail::kCubeCorner[b][2]);
                    const Vec3 p{pa.x + t * (pb.x - pa.x), pa.y + t * (pb.y - pa.y),
                                 pa.z + t * (pb.z - pa.z)};
                    const int idx = static_cast<int>(mesh.vertices.size());
                    mesh.vertices.push_back(p);
                    edge_vertex.emplace(key, idx);
                    edge_to_vertex[e] = idx;
                }

                for (int m = 0; kMcTriangles[ci][m] != -1; m += 3)
                    mesh.faces.push_back({edge_to_vertex[kMcTriangles[ci][m]],
                                          edge_to_vertex[kMcTriangles[ci][m + 1]],
                                          edge_to_vertex[kMcTriangles[ci][m + 2]]});
            }
    return mesh;
}

// ---------------------------------------------------------------------------
// mesh measures

inline double mesh_area(const ColoredMesh& mesh) {
    double total = 0.0;
    for (const auto& f : mesh.faces)
        total += triangle_area(mesh.vertices[f[0]], mesh.vertices[f[1]], mesh.vertices[f[2]]);
    return total;
}

// Positive for outward-wound closed meshes.
inline double mesh_signed_volume(const ColoredMesh& mesh) {
    double total = 0.0;
    for (const auto& f : mesh.faces) {
        const Vec3& a = mesh.vertices[f[0]];
        const Vec3& b = mesh.vertices[f[1]];
        const Vec3& c = mesh.vertices[f[2]];
        total += dot(a, cross(b, c)) / 6.0;
    }
    return total;
}

// Number of undirected edges whose triangle incidence differs from 2. Zero
// means the surface is closed and edge-manifold.
inline std::size_t mesh_open_edge_count(const ColoredMesh& mesh) {
    std::unordered_map<std::int64_t, int> incidence;
    incidence.reserve(mesh.faces.size() * 3);
    const std::int64_t n = static_cast<std::int64_t>(mesh.vertices.size());
    for (const auto& f : mesh.faces)
        for (int c = 0; c < 3; ++c) {
            const int u = f[c], v = f[(c + 1) % 3];
            const std::int64_t key = std::min(u, v) * n + std::max(u, v);
            incidence[key] += 1;
        }
    std::size_t bad = 0;
    for (const auto& [key, cnt] : incidence)
        if (cnt != 2) ++bad;
    return bad;
}

// Area-uniform points on a reconstructed (index-face) mesh.
inline std::vector<Vec3> sample_mesh_points(const ColoredMesh& mesh, std::size_t n, Rng& rng) {
    TexturedMesh shim;
    shim.vertices = mesh.vertices;
    shim.faces.reserve(mesh.faces.size());
    for (const auto& f : mesh.faces)
        shim.faces.push_back({Corner{f[0], -1}, Corner{f[1], -1}, Corner{f[2], -1}});
    return sample_surface_points(shim, n, rng);
}

// Volumetric intersection-over-union estimated on uniform samples in the box.
inline double mesh_iou(const ColoredMesh& a, const ColoredMesh& b, const BBox& box, std::size_t n,
                       std::uint64_t seed) {
    const OccupancyTester ta(a.vertices, a.faces);
    const OccupancyTester tb(b.vertices, b.faces);
    Rng rng(mix_seed(seed, 0x696f75ULL));
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const Vec3 p = rng.uniform_in_box(box);
        const bool ia = ta.inside(p);
        const bool ib = tb.inside(p);
        if (ia && ib) ++inter;
        if (ia || ib) ++uni;
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

// ---------------------------------------------------------------------------
// end-to-end inference

struct ReconstructOptions {
    int res_eval = 64;
    std::size_t vox_samples = 100000;
    std::uint64_t seed = 0;
    double iso = kIsoLevel;
    BBox box;                 // working volume (already resolved by the caller)
    bool unit_frame = false;  // normalize the partial first, un-normalize the output
    std::size_t chunk = kEvalChunk;
};

struct ReconstructResult {
    ColoredMesh mesh;   // colors filled when a texture model was supplied
    VoxelGrid field;    // occupancy probabilities used for extraction
    std::size_t dropped_input_points = 0;
};

namespace detail {

inline constexpr std::uint64_t kPartialSampleStream = 0x7061727469616cULL;
inline constexpr std::uint64_t kReconSampleStream = 0x7265636f6eULL;

inline void check_model_meta(const Checkpoint& ck, const char* role, const std::string& want_mode,
                             int want_out) {
    if (!ck.meta.contains("model") || !ck.meta.contains("res"))
        throw std::invalid_argument(std::string(role) +
                                    " checkpoint is missing its model/res metadata");
    const std::string mode = ck.meta.value("mode", "");
    const ModelConfig cfg = model_config_from_json(ck.meta.at("model"));
    if (mode != want_mode || cfg.out_channels != want_out)
        throw std::invalid_argument(
            std::string(role) + " checkpoint mismatch: got mode '" + mode + "' with model " +
            ck.meta.at("model").dump() + ", expected mode '" + want_mode + "' with " +
            std::to_string(want_out) + " output channel(s)");
}

}  // namespace detail

// Completes a partial scan: voxelize, predict the occupancy field, extract the
// iso-surface, then (with a texture model) regress per-vertex colors with the
// reconstructed geometry itself occupying the input's geometry channel.
inline ReconstructResult reconstruct_full(const TexturedMesh& partial, const Checkpoint& geo,
                                          const Checkpoint* tex, const ReconstructOptions& opt) {
    detail::check_model_meta(geo, "geometry", "geometry", 1);
    if (tex) detail::check_model_meta(*tex, "texture", "texture", 3);
    if (opt.res_eval < 2) throw std::invalid_argument("reconstruct: res_eval must be at least 2");

    TexturedMesh work = partial;
    UnitTransform tf;
    if (opt.unit_frame) {
        auto [m, t] = normalize_object(partial);
        work = std::move(m);
        tf = t;
    }

    const ModelConfig geo_cfg = model_config_from_json(geo.meta.at("model"));
    const int geo_res = geo.meta.at("res").get<int>();

    Rng part_rng(mix_seed(opt.seed, detail::kPartialSampleStream));
    const bool want_color = tex != nullptr;
    ColoredPoints partial_pts;
    if (want_color) {
        if (!work.has_texture())
            throw std::invalid_argument("reconstruct: texture model given but the partial scan has no atlas");
        partial_pts = sample_colored_surface(work, opt.vox_samples, part_rng);
    } else {
        partial_pts.points = sample_surface_points(work, opt.vox_samples, part_rng);
    }

    ReconstructResult result;
    const Tensor geo_input =
        voxelize_occupancy(partial_pts.points, geo_res, opt.box, &result.dropped_input_points)
            .to_tensor();
    result.field = evaluate_field(geo_cfg, geo.params, geo_input, opt.box, opt.res_eval, opt.chunk);
    result.mesh = marching_cubes(result.field, opt.iso);

    if (tex && !result.mesh.vertices.empty()) {
        const ModelConfig tex_cfg = model_config_from_json(tex->meta.at("model"));
        const int tex_res = tex->meta.at("res").get<int>();
        Rng recon_rng(mix_seed(opt.seed, detail::kReconSampleStream));
        const std::vector<Vec3> recon_pts = sample_mesh_points(result.mesh, opt.vox_samples, recon_rng);
        std::size_t dropped = 0;
        const Tensor tex_input = stack_input(partial_pts, recon_pts, tex_res, opt.box, &dropped).to_tensor();
        result.dropped_input_points += dropped;
        result.mesh.colors = colorize(tex_cfg, tex->params, tex_input, opt.box, result.mesh.vertices,
                                      opt.chunk);
    }

    if (opt.unit_frame)
        for (Vec3& v : result.mesh.vertices) v = tf.to_world(v);
    return result;
}

}  // namespace texfield
