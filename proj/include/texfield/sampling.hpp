#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "texfield/binio.hpp"
#include "texfield/mesh.hpp"
#include "texfield/rng.hpp"

namespace texfield {

// ---------------------------------------------------------------------------
// surface sampling

struct SurfacePoint {
    Vec3 p;
    int face = -1;
    double b0 = 0, b1 = 0, b2 = 0;  // barycentric weights of the face corners
};

namespace detail {

// cumulative face areas; zero-area faces get zero mass and are never drawn
inline std::vector<double> face_area_cdf(const std::vector<Vec3>& verts,
                                         const std::vector<Face>& faces) {
    std::vector<double> cdf(faces.size());
    double total = 0.0;
    for (std::size_t i = 0; i < faces.size(); ++i) {
        const double a = triangle_area(verts[faces[i][0].v], verts[faces[i][1].v],
                                       verts[faces[i][2].v]);
        total += std::isfinite(a) ? a : 0.0;
        cdf[i] = total;
    }
    if (!(total > 0.0))
        throw std::invalid_argument("surface sampling: mesh has no positive-area faces");
    return cdf;
}

}  // namespace detail

inline double mesh_area(const TexturedMesh& mesh) {
    double total = 0.0;
    for (const Face& f : mesh.faces)
        total += triangle_area(mesh.vertices[f[0].v], mesh.vertices[f[1].v], mesh.vertices[f[2].v]);
    return total;
}

// Draws n area-uniform points. Faces are picked from the area distribution,
// positions by square-root barycentric warping so density is uniform within a
// face. Consumes exactly 3 rng draws per point.
inline std::vector<SurfacePoint> sample_surface(const TexturedMesh& mesh, std::size_t n, Rng& rng) {
    const std::vector<double> cdf = detail::face_area_cdf(mesh.vertices, mesh.faces);
    const double total = cdf.back();
    std::vector<SurfacePoint> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double r = rng.uniform() * total;
        const auto it = std::upper_bound(cdf.begin(), cdf.end(), r);
        const int fi = static_cast<int>(std::min<std::size_t>(it - cdf.begin(), cdf.size() - 1));
        const double su = std::sqrt(rng.uniform());
        const double v = rng.uniform();
        SurfacePoint s;
        s.face = fi;
        s.b0 = 1.0 - su;
        s.b1 = su * (1.0 - v);
        s.b2 = su * v;
        const Face& f = mesh.faces[fi];
        const Vec3& p0 = mesh.vertices[f[0].v];
        const Vec3& p1 = mesh.vertices[f[1].v];
        const Vec3& p2 = mesh.vertices[f[2].v];
        s.p = {s.b0 * p0.x + s.b1 * p1.x + s.b2 * p2.x,
               s.b0 * p0.y + s.b1 * p1.y + s.b2 * p2.y,
               s.b0 * p0.z + s.b1 * p1.z + s.b2 * p2.z};
        out.push_back(s);
    }
    return out;
}

// Color of a surface point: barycentric uv interpolation, then nearest texel.
// uv outside [0,1] is clamped by the atlas lookup.
inline std::array<double, 3> surface_color(const TexturedMesh& mesh, const SurfacePoint& s) {
    if (!mesh.atlas.has_value())
        throw std::invalid_argument("surface_color: mesh has no texture atlas");
    const Face& f = mesh.faces[s.face];
    if (f[0].vt < 0 || f[1].vt < 0 || f[2].vt < 0)
        throw std::invalid_argument("surface_color: face " + std::to_string(s.face) +
                                    " has no texture coordinates");
    const auto& t0 = mesh.uvs[f[0].vt];
    const auto& t1 = mesh.uvs[f[1].vt];
    const auto& t2 = mesh.uvs[f[2].vt];
    const double u = s.b0 * t0[0] + s.b1 * t1[0] + s.b2 * t2[0];
    const double v = s.b0 * t0[1] + s.b1 * t1[1] + s.b2 * t2[1];
    return mesh.atlas->sample_nearest(u, v);
}

// ---------------------------------------------------------------------------
// inside/outside testing

// Point-in-mesh queries by ray parity along each coordinate axis with a
// majority vote. Projected 2D binning makes queries cheap; grazing hits are
// retried with small deterministic offsets rather than rng draws.
class OccupancyTester {
public:
    OccupancyTester(const std::vector<Vec3>& verts, const std::vector<Face>& faces)
        : verts_(verts) {
        faces_.reserve(faces.size());
        for (const Face& f : faces) faces_.push_back({f[0].v, f[1].v, f[2].v});
        init();
    }
    OccupancyTester(const std::vector<Vec3>& verts, const std::vector<std::array<int, 3>>& faces)
        : verts_(verts), faces_(faces) {
        init();
    }
    explicit OccupancyTester(const TexturedMesh& mesh) : OccupancyTester(mesh.vertices, mesh.faces) {}

    bool inside(const Vec3& p) const {
        int votes = 0;
        for (int axis = 0; axis < 3; ++axis)
            if (parity_along(axis, p)) ++votes;
        return votes >= 2;
    }

private:
    // axis ray +a from p: facet crossing count parity in the (u,v) projection,
    // u/v being the other two axes
    struct AxisGrid {
        int nu = 0, nv = 0;
        double u0 = 0, v0 = 0, du = 1, dv = 1;
        std::vector<std::vector<int>> cells;
    };

    std::vector<Vec3> verts_;
    std::vector<std::array<int, 3>> faces_;
    AxisGrid grids_[3];
    double diag_ = 1.0;

    static void axes_of(int axis, int& ua, int& va) {
        ua = (axis + 1) % 3;
        va = (axis + 2) % 3;
    }

    void init() {
        BBox b = mesh_bounds(verts_);
        if (!b.valid()) throw std::invalid_argument("occupancy: empty mesh");
        diag_ = norm(b.extent());
        if (!(diag_ > 0)) diag_ = 1.0;
        const int bins = std::clamp(static_cast<int>(std::sqrt(static_cast<double>(faces_.size()))), 4, 256);
        for (int axis = 0; axis < 3; ++axis) {
            int ua, va;
            axes_of(axis, ua, va);
            AxisGrid& g = grids_[axis];
            g.nu = g.nv = bins;
            const double pad = 1e-9 * diag_;
            g.u0 = b.min[ua] - pad;
            g.v0 = b.min[va] - pad;
            g.du = (b.max[ua] - b.min[ua] + 2 * pad) / bins;
            g.dv = (b.max[va] - b.min[va] + 2 * pad) / bins;
            if (!(g.du > 0)) g.du = 1.0;
            if (!(g.dv > 0)) g.dv = 1.0;
            g.cells.assign(static_cast<std::size_t>(bins) * bins, {});
            for (std::size_t fi = 0; fi < faces_.size(); ++fi) {
                double ulo = 1e300, uhi = -1e300, vlo = 1e300, vhi = -1e300;
                for (int c = 0; c < 3; ++c) {
                    const Vec3& p = verts_[faces_[fi][c]];
                    ulo = std::min(ulo, p[ua]); uhi = std::max(uhi, p[ua]);
                    vlo = std::min(vlo, p[va]); vhi = std::max(vhi, p[va]);
                }
                const int iu0 = std::clamp(static_cast<int>((ulo - g.u0) / g.du), 0, bins - 1);
                const int iu1 = std::clamp(static_cast<int>((uhi - g.u0) / g.du), 0, bins - 1);
                const int iv0 = std::clamp(static_cast<int>((vlo - g.v0) / g.dv), 0, bins - 1);
                const int iv1 = std::clamp(static_cast<int>((vhi - g.v0) / g.dv), 0, bins - 1);
                for (int iu = iu0; iu <= iu1; ++iu)
                    for (int iv = iv0; iv <= iv1; ++iv)
                        g.cells[static_cast<std::size_t>(iu) * bins + iv].push_back(static_cast<int>(fi));
            }
        }
    }

    // crossing count along +axis, or nullopt on a grazing/degenerate hit
    std::optional<int> try_count(int axis, const Vec3& p, double ju, double jv) const {
        int ua, va;
        axes_of(axis, ua, va);
        const AxisGrid& g = grids_[axis];
        const double qu = p[ua] + ju;
        const double qv = p[va] + jv;
        const int iu = static_cast<int>((qu - g.u0) / g.du);
        const int iv = static_cast<int>((qv - g.v0) / g.dv);
        if (iu < 0 || iu >= g.nu || iv < 0 || iv >= g.nv) return 0;
        const double tol = 1e-12 * diag_ * diag_;
        int count = 0;
        for (int fi : g.cells[static_cast<std::size_t>(iu) * g.nu + iv]) {
            const Vec3& a = verts_[faces_[fi][0]];
            const Vec3& b = verts_[faces_[fi][1]];
            const Vec3& c = verts_[faces_[fi][2]];
            const double e0 = (b[ua] - a[ua]) * (qv - a[va]) - (b[va] - a[va]) * (qu - a[ua]);
            const double e1 = (c[ua] - b[ua]) * (qv - b[va]) - (c[va] - b[va]) * (qu - b[ua]);
            const double e2 = (a[ua] - c[ua]) * (qv - c[va]) - (a[va] - c[va]) * (qu - c[ua]);
            const bool pos = e0 > tol && e1 > tol && e2 > tol;
            const bool neg = e0 < -tol && e1 < -tol && e2 < -tol;
            if (!pos && !neg) {
                // definitely outside only when some pair of signs disagrees firmly
                const bool out = (e0 > tol && e1 < -tol) || (e0 < -tol && e1 > tol) ||
                                 (e0 > tol && e2 < -tol) || (e0 < -tol && e2 > tol) ||
                                 (e1 > tol && e2 < -tol) || (e1 < -tol && e2 > tol);
                if (out) continue;
                return std::nullopt;  // grazing an edge or a degenerate projection
            }
            const double area2 = e0 + e1 + e2;  // signed, consistent with e-sign
            const double l0 = e1 / area2, l1 = e2 / area2, l2 = e0 / area2;
            const double t = l0 * a[axis] + l1 * b[axis] + l2 * c[axis];
            if (std::abs(t - p[axis]) < 1e-12 * diag_) return std::nullopt;  // on-surface graze
            if (t > p[axis]) ++count;
        }
        return count;
    }

    bool parity_along(int axis, const Vec3& p) const {
        // deterministic jitter schedule; the two offsets use unrelated
        // irrational multipliers so retries don't slide along an edge
        for (int attempt = 0; attempt < 8; ++attempt) {
            const double s = attempt == 0 ? 0.0 : diag_ * 1e-7 * attempt;
            const auto r = try_count(axis, p, s * 0.7548776662466927, s * 0.5698402909980532);
            if (r.has_value()) return (*r % 2) == 1;
        }
        // give up on cleanliness: count with the last jitter, treating grazes as misses
        int ua, va;
        axes_of(axis, ua, va);
        const AxisGrid& g = grids_[axis];
        const double qu = p[ua] + diag_ * 7e-7 * 0.7548776662466927;
        const double qv = p[va] + diag_ * 7e-7 * 0.5698402909980532;
        const int iu = static_cast<int>((qu - g.u0) / g.du);
        const int iv = static_cast<int>((qv - g.v0) / g.dv);
        if (iu < 0 || iu >= g.nu || iv < 0 || iv >= g.nv) return false;
        int count = 0;
        for (int fi : g.cells[static_cast<std::size_t>(iu) * g.nu + iv]) {
            const Vec3& a = verts_[faces_[fi][0]];
            const Vec3& b = verts_[faces_[fi][1]];
            const Vec3& c = verts_[faces_[fi][2]];
            const double e0 = (b[ua] - a[ua]) * (qv - a[va]) - (b[va] - a[va]) * (qu - a[ua]);
            const double e1 = (c[ua] - b[ua]) * (qv - b[va]) - (c[va] - b[va]) * (qu - b[ua]);
            const double e2 = (a[ua] - c[ua]) * (qv - c[va]) - (a[va] - c[va]) * (qu - c[ua]);
            const bool pos = e0 > 0 && e1 > 0 && e2 > 0;
            const bool neg = e0 < 0 && e1 < 0 && e2 < 0;
            if (!pos && !neg) continue;
            const double area2 = e0 + e1 + e2;
            const double t = (e1 * a[axis] + e2 * b[axis] + e0 * c[axis]) / area2;
            if (t > p[axis]) ++count;
        }
        return (count % 2) == 1;
    }
};

// ---------------------------------------------------------------------------
// training signal

struct OccupancyPoints {
    std::vector<Vec3> points;
    std::vector<std::uint8_t> labels;  // 1 inside, 0 outside
};

struct ColoredPoints {
    std::vector<Vec3> points;
    std::vector<std::array<double, 3>> colors;  // [0,1]
};

// Gaussian displacement scales around the surface: a tight band that teaches
// the boundary and a loose one that covers the rest of the volume.
inline constexpr double kSigmaNear = 0.015;
inline constexpr double kSigmaFar = 0.2;

struct OccupancySamplingConfig {
    std::size_t total_points = 100000;
    std::size_t sub_sample = 50000;   // per-epoch draw, consumed by training
    double sigma_small = kSigmaNear;
    double sigma_large = kSigmaFar;
    double split = 0.5;               // fraction of points in the tight band

    void validate() const {
        if (sub_sample == 0 || sub_sample > total_points)
            throw std::invalid_argument("occupancy sampling: need 0 < sub_sample <= total_points");
        if (!(sigma_small > 0.0) || !(sigma_large > 0.0))
            throw std::invalid_argument("occupancy sampling: sigmas must be positive");
        if (!(split > 0.0) || !(split < 1.0))
            throw std::invalid_argument("occupancy sampling: split must be in (0,1)");
    }
};

namespace detail {

inline OccupancyPoints sample_occupancy_impl(const TexturedMesh& mesh,
                                             const OccupancyTester& tester, std::size_t n,
                                             std::size_t n_near, double sigma_near,
                                             double sigma_far, Rng& rng) {
    const std::vector<SurfacePoint> base = sample_surface(mesh, n, rng);
    OccupancyPoints out;
    out.points.reserve(n);
    out.labels.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double sigma = i < n_near ? sigma_near : sigma_far;
        Vec3 p = base[i].p;
        p.x += sigma * rng.normal();
        p.y += sigma * rng.normal();
        p.z += sigma * rng.normal();
        out.points.push_back(p);
        out.labels.push_back(tester.inside(p) ? 1 : 0);
    }
    return out;
}

}  // namespace detail

// Occupancy supervision: surface points pushed off the shape by isotropic
// Gaussian noise, half with sigma_near and half with sigma_far (the first
// half of the result is the near band), labeled inside/outside.
inline OccupancyPoints sample_occupancy(const TexturedMesh& mesh, const OccupancyTester& tester,
                                        std::size_t n, Rng& rng, double sigma_near = kSigmaNear,
                                        double sigma_far = kSigmaFar) {
    return detail::sample_occupancy_impl(mesh, tester, n, (n + 1) / 2, sigma_near, sigma_far, rng);
}

inline OccupancyPoints sample_occupancy(const TexturedMesh& mesh, const OccupancyTester& tester,
                                        const OccupancySamplingConfig& cfg, Rng& rng) {
    cfg.validate();
    const auto n_near = static_cast<std::size_t>(
        std::ceil(cfg.split * static_cast<double>(cfg.total_points)));
    return detail::sample_occupancy_impl(mesh, tester, cfg.total_points, n_near, cfg.sigma_small,
                                         cfg.sigma_large, rng);
}

// Texture supervision and voxelization input: points on the surface itself,
// each carrying its atlas color.
inline ColoredPoints sample_colored_surface(const TexturedMesh& mesh, std::size_t n, Rng& rng) {
    const std::vector<SurfacePoint> base = sample_surface(mesh, n, rng);
    ColoredPoints out;
    out.points.reserve(n);
    out.colors.reserve(n);
    for (const SurfacePoint& s : base) {
        out.points.push_back(s.p);
        out.colors.push_back(surface_color(mesh, s));
    }
    return out;
}

// Uncolored variant for geometry-only inputs.
inline std::vector<Vec3> sample_surface_points(const TexturedMesh& mesh, std::size_t n, Rng& rng) {
    const std::vector<SurfacePoint> base = sample_surface(mesh, n, rng);
    std::vector<Vec3> out;
    out.reserve(n);
    for (const SurfacePoint& s : base) out.push_back(s.p);
    return out;
}

// ---------------------------------------------------------------------------
// partial scan synthesis

struct Hole {
    Vec3 center;
    double radius = 0.0;
};

struct PartialScan {
    TexturedMesh mesh;        // same vertices/uvs, reduced face set
    std::vector<Hole> holes;  // removal balls actually applied
};

struct HoleSpec {
    int hole_count = 1;
    double radius_min = 0.0;
    double radius_max = 0.0;
    std::uint64_t seed = 0;

    void validate() const {
        if (hole_count < 1) throw std::invalid_argument("hole spec: need at least one hole");
        if (!(radius_min > 0.0) || radius_max < radius_min)
            throw std::invalid_argument("hole spec: need 0 < radius_min <= radius_max");
    }
};

// Cuts spherical holes: each removes the faces whose centroid falls within a
// ball centered on a random surface point. Total removed area is capped at
// max_removed_fraction of the original surface; candidate balls violating the
// cap (or removing nothing) are redrawn a bounded number of times, after which
// remaining holes are skipped.
inline PartialScan synthesize_partial(const TexturedMesh& mesh, int holes, double radius_min,
                                      double radius_max, Rng& rng,
                                      double max_removed_fraction = 0.6) {
    if (holes < 1) throw std::invalid_argument("synthesize_partial: need at least one hole");
    if (!(radius_min > 0.0) || radius_max < radius_min)
        throw std::invalid_argument("synthesize_partial: bad radius range");

    const double total_area = mesh_area(mesh);
    PartialScan out;
    out.mesh = mesh;
    double removed_area = 0.0;
    bool budget_blocked = false;  // distinguishes oversized balls from no-op ones

    for (int h = 0; h < holes; ++h) {
        bool placed = false;
        for (int attempt = 0; attempt < 16 && !placed; ++attempt) {
            const std::vector<SurfacePoint> pick = sample_surface(out.mesh, 1, rng);
            const double radius = rng.uniform(radius_min, radius_max);
            const Vec3 center = pick[0].p;

            std::vector<Face> kept;
            kept.reserve(out.mesh.faces.size());
            double cut_area = 0.0;
            for (const Face& f : out.mesh.faces) {
                const Vec3& a = out.mesh.vertices[f[0].v];
                const Vec3& b = out.mesh.vertices[f[1].v];
                const Vec3& c = out.mesh.vertices[f[2].v];
                const Vec3 centroid{(a.x + b.x + c.x) / 3.0, (a.y + b.y + c.y) / 3.0,
                                    (a.z + b.z + c.z) / 3.0};
                if (dist(centroid, center) <= radius)
                    cut_area += triangle_area(a, b, c);
                else
                    kept.push_back(f);
            }
            if (cut_area <= 0.0) continue;  // ball missed every centroid: no-op draw
            if (removed_area + cut_area > max_removed_fraction * total_area) {
                budget_blocked = true;
                continue;
            }
            out.mesh.faces = std::move(kept);
            removed_area += cut_area;
            out.holes.push_back({center, radius});
            placed = true;
        }
        if (!placed) break;  // this radius range can't cut anything more
    }
    // Radii too small to catch a centroid degrade to the identity; radii so
    // large every candidate would blow the area budget are a caller error.
    if (out.holes.empty() && budget_blocked)
        throw std::runtime_error("synthesize_partial: could not place any hole within the area budget");
    return out;
}

inline PartialScan synthesize_partial(const TexturedMesh& mesh, const HoleSpec& spec,
                                      double max_removed_fraction = 0.6) {
    spec.validate();
    Rng rng(spec.seed);
    return synthesize_partial(mesh, spec.hole_count, spec.radius_min, spec.radius_max, rng,
                              max_removed_fraction);
}

// ---------------------------------------------------------------------------
// point set files
//
// Layout (little-endian): "PSET", kind u8 (0 occupancy / 1 colored), count u64,
// xyz f32 triplets, then u8 labels or f32 rgb triplets.

inline constexpr char kPointSetMagic[4] = {'P', 'S', 'E', 'T'};

inline void save_occupancy_pset(const std::string& path, const OccupancyPoints& ps) {
    if (ps.points.size() != ps.labels.size())
        throw std::invalid_argument("pset: point/label count mismatch");
    binio::atomic_write(path, [&](std::ostream& os) {
        binio::write_magic(os, kPointSetMagic);
        binio::write_scalar<std::uint8_t>(os, 0);
        binio::write_scalar<std::uint64_t>(os, ps.points.size());
        for (const Vec3& p : ps.points) {
            binio::write_scalar<float>(os, static_cast<float>(p.x));
            binio::write_scalar<float>(os, static_cast<float>(p.y));
            binio::write_scalar<float>(os, static_cast<float>(p.z));
        }
        binio::write_array(os, ps.labels.data(), ps.labels.size());
    });
}

inline void save_colored_pset(const std::string& path, const ColoredPoints& ps) {
    if (ps.points.size() != ps.colors.size())
        throw std::invalid_argument("pset: point/color count mismatch");
    binio::atomic_write(path, [&](std::ostream& os) {
        binio::write_magic(os, kPointSetMagic);
        binio::write_scalar<std::uint8_t>(os, 1);
        binio::write_scalar<std::uint64_t>(os, ps.points.size());
        for (const Vec3& p : ps.points) {
            binio::write_scalar<float>(os, static_cast<float>(p.x));
            binio::write_scalar<float>(os, static_cast<float>(p.y));
            binio::write_scalar<float>(os, static_cast<float>(p.z));
        }
        for (const auto& c : ps.colors)
            for (int k = 0; k < 3; ++k) binio::write_scalar<float>(os, static_cast<float>(c[k]));
    });
}

namespace detail {

inline std::vector<Vec3> read_pset_points(std::istream& is, std::uint64_t n) {
    std::vector<Vec3> pts(n);
    for (auto& p : pts) {
        p.x = binio::read_scalar<float>(is, "point");
        p.y = binio::read_scalar<float>(is, "point");
        p.z = binio::read_scalar<float>(is, "point");
    }
    return pts;
}

}  // namespace detail

inline OccupancyPoints load_occupancy_pset(const std::string& path) {
    std::ifstream is = binio::open_in(path);
    binio::expect_magic(is, kPointSetMagic, path);
    const auto kind = binio::read_scalar<std::uint8_t>(is, "kind");
    if (kind != 0) throw std::runtime_error(path + ": not an occupancy point set");
    const auto n = binio::read_scalar<std::uint64_t>(is, "count");
    OccupancyPoints ps;
    ps.points = detail::read_pset_points(is, n);
    ps.labels.resize(n);
    binio::read_array(is, ps.labels.data(), n, "labels");
    for (std::uint8_t l : ps.labels)
        if (l > 1) throw std::runtime_error(path + ": invalid occupancy label");
    return ps;
}

inline ColoredPoints load_colored_pset(const std::string& path) {
    std::ifstream is = binio::open_in(path);
    binio::expect_magic(is, kPointSetMagic, path);
    const auto kind = binio::read_scalar<std::uint8_t>(is, "kind");
    if (kind != 1) throw std::runtime_error(path + ": not a colored point set");
    const auto n = binio::read_scalar<std::uint64_t>(is, "count");
    ColoredPoints ps;
    ps.points = detail::read_pset_points(is, n);
    ps.colors.resize(n);
    for (auto& c : ps.colors)
        for (int k = 0; k < 3; ++k) c[k] = binio::read_scalar<float>(is, "color");
    return ps;
}

}  // namespace texfield
