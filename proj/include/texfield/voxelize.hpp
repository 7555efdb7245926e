#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "texfield/binio.hpp"
#include "texfield/sampling.hpp"
#include "texfield/tensor.hpp"

namespace texfield {

inline constexpr int kMinGridRes = 8;
inline constexpr int kMaxGridRes = 512;

// Dense voxel grid over a bounding box; channel-major storage, x outermost
// within a channel: flat = ((c*R + ix)*R + iy)*R + iz.
struct VoxelGrid {
    int channels = 0;
    int res = 0;
    BBox box;
    std::vector<double> values;

    double& at(int c, int ix, int iy, int iz) {
        return values[((static_cast<std::size_t>(c) * res + ix) * res + iy) * res + iz];
    }
    double at(int c, int ix, int iy, int iz) const {
        return values[((static_cast<std::size_t>(c) * res + ix) * res + iy) * res + iz];
    }

    Tensor to_tensor() const {
        return Tensor::from_data({channels, res, res, res}, values);
    }
};

namespace detail {

inline void check_grid_args(int res, const BBox& box) {
    if (res < kMinGridRes || res > kMaxGridRes)
        throw std::invalid_argument("voxelize: resolution " + std::to_string(res) +
                                    " outside [" + std::to_string(kMinGridRes) + ", " +
                                    std::to_string(kMaxGridRes) + "]");
    if (!box.valid()) throw std::invalid_argument("voxelize: degenerate bounding box");
}

// cell index per axis over half-open [min, max); returns false when outside
inline bool locate_cell(const BBox& box, int res, const Vec3& p, int idx[3]) {
    const Vec3 ext = box.extent();
    for (int a = 0; a < 3; ++a) {
        const double t = (p[a] - box.min[a]) / ext[a];
        const int i = static_cast<int>(std::floor(t * res));
        if (i < 0 || i >= res) return false;
        idx[a] = i;
    }
    return true;
}

}  // namespace detail

// Marks cells containing at least one point with 1.0. Points outside the box
// are skipped; their count lands in *dropped when given.
inline VoxelGrid voxelize_occupancy(const std::vector<Vec3>& points, int res, const BBox& box,
                                    std::size_t* dropped = nullptr) {
    detail::check_grid_args(res, box);
    VoxelGrid g;
    g.channels = 1;
    g.res = res;
    g.box = box;
    g.values.assign(static_cast<std::size_t>(res) * res * res, 0.0);
    std::size_t out_count = 0;
    for (const Vec3& p : points) {
        int idx[3];
        if (!detail::locate_cell(box, res, p, idx)) {
            ++out_count;
            continue;
        }
        g.at(0, idx[0], idx[1], idx[2]) = 1.0;
    }
    if (dropped) *dropped = out_count;
    return g;
}

// Color channel value marking cells no point landed in. The network learns to
// tell "unobserved" apart from dark colors by this sentinel sitting outside
// the [0,1] color range.
inline constexpr double kUnobservedColor = -1.0;

// Mean color of the points landing in each cell, kUnobservedColor elsewhere.
// Channel order [r, g, b]. Points outside the box are skipped and counted.
inline VoxelGrid voxelize_colors(const ColoredPoints& pts, int res, const BBox& box,
                                 std::size_t* dropped = nullptr) {
    detail::check_grid_args(res, box);
    VoxelGrid g;
    g.channels = 3;
    g.res = res;
    g.box = box;
    const std::size_t cells = static_cast<std::size_t>(res) * res * res;
    g.values.assign(cells * 3, 0.0);
    std::vector<std::uint32_t> counts(cells, 0);
    std::size_t out_count = 0;
    for (std::size_t i = 0; i < pts.points.size(); ++i) {
        int idx[3];
        if (!detail::locate_cell(box, res, pts.points[i], idx)) {
            ++out_count;
            continue;
        }
        const std::size_t cell = (static_cast<std::size_t>(idx[0]) * res + idx[1]) * res + idx[2];
        for (int c = 0; c < 3; ++c) g.values[c * cells + cell] += pts.colors[i][c];
        counts[cell] += 1;
    }
    for (std::size_t cell = 0; cell < cells; ++cell) {
        if (counts[cell] == 0) {
            for (int c = 0; c < 3; ++c) g.values[c * cells + cell] = kUnobservedColor;
        } else {
            for (int c = 0; c < 3; ++c) g.values[c * cells + cell] /= counts[cell];
        }
    }
    if (dropped) *dropped = out_count;
    return g;
}

// 4-channel network input [r, g, b, occupancy]: colors of the observed partial
// surface plus an occupancy channel, usually voxelized from a different (more
// complete) point cloud than the colors.
inline VoxelGrid stack_input(const ColoredPoints& color_points, const std::vector<Vec3>& occ_points,
                             int res, const BBox& box, std::size_t* dropped = nullptr) {
    std::size_t d0 = 0, d1 = 0;
    VoxelGrid colors = voxelize_colors(color_points, res, box, &d0);
    const VoxelGrid occ = voxelize_occupancy(occ_points, res, box, &d1);
    VoxelGrid g;
    g.channels = 4;
    g.res = res;
    g.box = box;
    g.values = std::move(colors.values);
    g.values.insert(g.values.end(), occ.values.begin(), occ.values.end());
    if (dropped) *dropped = d0 + d1;
    return g;
}

// ---------------------------------------------------------------------------
// grid files: "VOXL", version u32, channels u32, res u32, bbox 6 x f64, f32 values

inline constexpr char kVoxelMagic[4] = {'V', 'O', 'X', 'L'};
inline constexpr std::uint32_t kVoxelVersion = 1;

inline void save_voxel_grid(const std::string& path, const VoxelGrid& g) {
    binio::atomic_write(path, [&](std::ostream& os) {
        binio::write_magic(os, kVoxelMagic);
        binio::write_scalar<std::uint32_t>(os, kVoxelVersion);
        binio::write_scalar<std::uint32_t>(os, static_cast<std::uint32_t>(g.channels));
        binio::write_scalar<std::uint32_t>(os, static_cast<std::uint32_t>(g.res));
        for (int a = 0; a < 3; ++a) binio::write_scalar<double>(os, g.box.min[a]);
        for (int a = 0; a < 3; ++a) binio::write_scalar<double>(os, g.box.max[a]);
        for (double v : g.values) binio::write_scalar<float>(os, static_cast<float>(v));
    });
}

inline VoxelGrid load_voxel_grid(const std::string& path) {
    std::ifstream is = binio::open_in(path);
    binio::expect_magic(is, kVoxelMagic, path);
    const auto version = binio::read_scalar<std::uint32_t>(is, "version");
    if (version != kVoxelVersion)
        throw std::runtime_error(path + ": unsupported grid version " + std::to_string(version));
    VoxelGrid g;
    g.channels = static_cast<int>(binio::read_scalar<std::uint32_t>(is, "channels"));
    g.res = static_cast<int>(binio::read_scalar<std::uint32_t>(is, "resolution"));
    for (int a = 0; a < 3; ++a) g.box.min[a] = binio::read_scalar<double>(is, "bbox");
    for (int a = 0; a < 3; ++a) g.box.max[a] = binio::read_scalar<double>(is, "bbox");
    const std::size_t n = static_cast<std::size_t>(g.channels) * g.res * g.res * g.res;
    g.values.resize(n);
    for (double& v : g.values) v = binio::read_scalar<float>(is, "values");
    return g;
}

}  // namespace texfield
