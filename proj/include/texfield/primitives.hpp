#pragma once

#include <array>
#include <cmath>
#include <numbers>

#include "texfield/mesh.hpp"

namespace texfield {

// Fixture colors for the two-tone sphere atlas: red above the equator, blue
// below. Chosen away from 0/255 so off-by-one rounding shows up in tests.
inline constexpr std::array<double, 3> kSphereTopColor = {230.0 / 255.0, 38.0 / 255.0, 26.0 / 255.0};
inline constexpr std::array<double, 3> kSphereBottomColor = {26.0 / 255.0, 51.0 / 255.0, 217.0 / 255.0};

inline std::array<double, 3> sphere_expected_color(const Vec3& p) {
    return p.y > 0.0 ? kSphereTopColor : kSphereBottomColor;
}

// Latitude/longitude sphere with outward-facing triangles and a small two-tone
// atlas (top half of the image red, bottom half blue; v=1 maps to the north
// pole). Odd stack counts keep vertex rings off the equator.
inline TexturedMesh make_uv_sphere(double radius, int stacks, int slices,
                                   const Vec3& center = {0.0, 0.0, 0.0}) {
    if (stacks < 3 || slices < 3)
        throw std::invalid_argument("make_uv_sphere: need at least 3 stacks and slices");
    TexturedMesh mesh;

    // vertices: north pole, rings 1..stacks-1, south pole
    mesh.vertices.push_back({center.x, center.y + radius, center.z});
    for (int i = 1; i < stacks; ++i) {
        const double phi = std::numbers::pi * i / stacks;
        const double y = radius * std::cos(phi);
        const double ring = radius * std::sin(phi);
        for (int j = 0; j < slices; ++j) {
            const double theta = 2.0 * std::numbers::pi * j / slices;
            mesh.vertices.push_back({center.x + ring * std::cos(theta), center.y + y,
                                     center.z + ring * std::sin(theta)});
        }
    }
    mesh.vertices.push_back({center.x, center.y - radius, center.z});
    const int south = static_cast<int>(mesh.vertices.size()) - 1;

    // uv lattice keeps the seam column duplicated so u interpolates cleanly
    for (int i = 0; i <= stacks; ++i)
        for (int j = 0; j <= slices; ++j)
            mesh.uvs.push_back({static_cast<double>(j) / slices, 1.0 - static_cast<double>(i) / stacks});

    auto vid = [&](int i, int j) {
        if (i == 0) return 0;
        if (i == stacks) return south;
        return 1 + (i - 1) * slices + (j % slices);
    };
    auto tid = [&](int i, int j) { return i * (slices + 1) + j; };

    for (int i = 0; i < stacks; ++i)
        for (int j = 0; j < slices; ++j) {
            const Corner a{vid(i, j), tid(i, j)};
            const Corner d{vid(i, j + 1), tid(i, j + 1)};
            const Corner b{vid(i + 1, j), tid(i + 1, j)};
            const Corner c{vid(i + 1, j + 1), tid(i + 1, j + 1)};
            if (i > 0) mesh.faces.push_back({a, d, c});           // a==d at the north pole
            if (i + 1 < stacks) mesh.faces.push_back({a, c, b});  // b==c at the south pole
        }

    Image atlas;
    atlas.width = 8;
    atlas.height = 8;
    atlas.pixels.resize(8 * 8 * 3);
    for (int r = 0; r < 8; ++r)
        for (int col = 0; col < 8; ++col) {
            std::uint8_t* t = atlas.texel(r, col);
            const auto& c = r < 4 ? kSphereTopColor : kSphereBottomColor;
            t[0] = color_byte(c[0]);
            t[1] = color_byte(c[1]);
            t[2] = color_byte(c[2]);
        }
    mesh.atlas = std::move(atlas);
    return mesh;
}

// Axis-aligned box as 12 outward triangles, untextured.
inline TexturedMesh make_box(const BBox& b) {
    TexturedMesh mesh;
    for (int i = 0; i < 8; ++i)
        mesh.vertices.push_back({i & 1 ? b.max.x : b.min.x, i & 2 ? b.max.y : b.min.y,
                                 i & 4 ? b.max.z : b.min.z});
    // corner bits: 1 -> +x, 2 -> +y, 4 -> +z
    static constexpr int quads[6][4] = {
        {0, 4, 6, 2},  // -x
        {1, 3, 7, 5},  // +x
        {0, 1, 5, 4},  // -y
        {2, 6, 7, 3},  // +y
        {0, 2, 3, 1},  // -z
        {4, 5, 7, 6},  // +z
    };
    for (const auto& q : quads) {
        mesh.faces.push_back({Corner{q[0], -1}, Corner{q[1], -1}, Corner{q[2], -1}});
        mesh.faces.push_back({Corner{q[0], -1}, Corner{q[2], -1}, Corner{q[3], -1}});
    }
    return mesh;
}

}  // namespace texfield
