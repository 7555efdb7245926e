#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "texfield/binio.hpp"
#include "texfield/geometry.hpp"
#include "texfield/image.hpp"

namespace texfield {

struct Corner {
    int v = -1;   // vertex index
    int vt = -1;  // uv index, -1 when the face has no texture coordinates
};

using Face = std::array<Corner, 3>;

// Triangle mesh with optional uv mapping into a texture atlas.
struct TexturedMesh {
    std::vector<Vec3> vertices;
    std::vector<std::array<double, 2>> uvs;
    std::vector<Face> faces;
    std::optional<Image> atlas;

    bool has_texture() const { return atlas.has_value() && !uvs.empty(); }
};

// Reconstruction output: one rgb color per vertex, channels in [0,1].
struct ColoredMesh {
    std::vector<Vec3> vertices;
    std::vector<std::array<double, 3>> colors;  // empty for uncolored geometry
    std::vector<std::array<int, 3>> faces;
};

inline BBox mesh_bounds(const std::vector<Vec3>& vertices) {
    BBox b;
    for (const Vec3& v : vertices) b.expand(v);
    return b;
}

// ---------------------------------------------------------------------------
// obj / mtl

namespace detail {

inline Corner parse_obj_corner(const std::string& tok, int n_v, int n_vt, int line_no) {
    // v, v/vt, v/vt/vn or v//vn; indices are 1-based, negative counts from the end
    Corner c;
    std::size_t s0 = tok.find('/');
    auto resolve = [line_no](const std::string& s, int n, const char* what) {
        long i = std::stol(s);
        if (i < 0) i += n; else i -= 1;
        if (i < 0 || i >= n)
            throw std::invalid_argument("obj line " + std::to_string(line_no) + ": " + what +
                                        " index " + s + " out of range");
        return static_cast<int>(i);
    };
    if (s0 == std::string::npos) {
        c.v = resolve(tok, n_v, "vertex");
        return c;
    }
    c.v = resolve(tok.substr(0, s0), n_v, "vertex");
    std::size_t s1 = tok.find('/', s0 + 1);
    const std::string vt = tok.substr(s0 + 1, s1 == std::string::npos ? std::string::npos : s1 - s0 - 1);
    if (!vt.empty()) c.vt = resolve(vt, n_vt, "uv");
    return c;
}

inline std::string mtl_map_kd_path(const std::string& rest) {
    // map_Kd may carry option flags; the file name is the last token then
    std::string trimmed = rest;
    const auto b = trimmed.find_first_not_of(" \t");
    if (b == std::string::npos) return {};
    trimmed = trimmed.substr(b, trimmed.find_last_not_of(" \t\r") - b + 1);
    if (!trimmed.empty() && trimmed[0] == '-') {
        const auto last = trimmed.find_last_of(" \t");
        if (last != std::string::npos) return trimmed.substr(last + 1);
    }
    return trimmed;
}

// first map_Kd found in the mtl file
inline std::string parse_mtl_for_atlas(const std::string& mtl_path) {
    std::ifstream is(mtl_path);
    if (!is) return {};
    std::string line;
    while (std::getline(is, line)) {
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (key == "map_Kd") {
            std::string rest;
            std::getline(ls, rest);
            const std::string p = mtl_map_kd_path(rest);
            if (!p.empty()) return p;
        }
    }
    return {};
}

}  // namespace detail

// Loads a triangle mesh, fan-triangulating larger polygons. Texture lookups
// resolve through the first mtl map_Kd entry, relative to the obj's directory;
// an unreadable atlas demotes the mesh to untextured with a warning.
inline TexturedMesh load_obj(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open for reading: " + path);

    TexturedMesh mesh;
    std::string atlas_file;
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        std::istringstream ls(line);
        std::string key;
        if (!(ls >> key) || key[0] == '#') continue;
        if (key == "v") {
            Vec3 p;
            if (!(ls >> p.x >> p.y >> p.z))
                throw std::invalid_argument("obj line " + std::to_string(line_no) + ": malformed vertex");
            mesh.vertices.push_back(p);
        } else if (key == "vt") {
            double u, v;
            if (!(ls >> u >> v))
                throw std::invalid_argument("obj line " + std::to_string(line_no) + ": malformed uv");
            mesh.uvs.push_back({u, v});
        } else if (key == "f") {
            std::vector<Corner> corners;
            std::string tok;
            while (ls >> tok)
                corners.push_back(detail::parse_obj_corner(tok, static_cast<int>(mesh.vertices.size()),
                                                           static_cast<int>(mesh.uvs.size()), line_no));
            if (corners.size() < 3)
                throw std::invalid_argument("obj line " + std::to_string(line_no) +
                                            ": face needs at least 3 corners");
            for (std::size_t i = 1; i + 1 < corners.size(); ++i)
                mesh.faces.push_back({corners[0], corners[i], corners[i + 1]});
        } else if (key == "mtllib") {
            std::string mtl;
            ls >> mtl;
            if (!mtl.empty() && atlas_file.empty()) {
                const auto mtl_path = std::filesystem::path(path).parent_path() / mtl;
                atlas_file = detail::parse_mtl_for_atlas(mtl_path.string());
            }
        }
        // vn, g, o, s, usemtl and anything else: irrelevant here
    }

    if (!atlas_file.empty()) {
        const auto atlas_path = std::filesystem::path(path).parent_path() / atlas_file;
        try {
            mesh.atlas = load_image(atlas_path.string());
        } catch (const std::exception& e) {
            std::cerr << "warning: " << path << ": texture atlas unavailable (" << e.what()
                      << "); continuing without texture\n";
            mesh.atlas.reset();
        }
    }
    return mesh;
}

// Writes obj (+ mtl + ppm atlas when textured) so partial scans round-trip
// through the same loader. Indices are 1-based per the format.
inline void save_textured_obj(const std::string& obj_path, const TexturedMesh& mesh) {
    const std::filesystem::path p(obj_path);
    const std::string stem = p.stem().string();
    std::ofstream os(obj_path);
    if (!os) throw std::runtime_error("cannot open for writing: " + obj_path);
    os.precision(17);
    if (mesh.has_texture()) os << "mtllib " << stem << ".mtl\n";
    for (const Vec3& v : mesh.vertices) os << "v " << v.x << ' ' << v.y << ' ' << v.z << '\n';
    for (const auto& uv : mesh.uvs) os << "vt " << uv[0] << ' ' << uv[1] << '\n';
    if (mesh.has_texture()) os << "usemtl material0\n";
    for (const Face& f : mesh.faces) {
        os << 'f';
        for (const Corner& c : f) {
            os << ' ' << c.v + 1;
            if (c.vt >= 0) os << '/' << c.vt + 1;
        }
        os << '\n';
    }
    if (!os) throw std::runtime_error("write failed: " + obj_path);
    if (mesh.has_texture()) {
        const auto mtl_path = p.parent_path() / (stem + ".mtl");
        const std::string atlas_name = stem + "_atlas.ppm";
        std::ofstream ms(mtl_path);
        if (!ms) throw std::runtime_error("cannot open for writing: " + mtl_path.string());
        ms << "newmtl material0\nmap_Kd " << atlas_name << '\n';
        save_ppm((p.parent_path() / atlas_name).string(), *mesh.atlas);
    }
}

// ---------------------------------------------------------------------------
// ply

inline std::uint8_t color_byte(double c) {
    c = std::clamp(c, 0.0, 1.0);
    return static_cast<std::uint8_t>(std::floor(c * 255.0 + 0.5));
}

// Binary little-endian ply: float32 positions, uchar rgb, triangle faces.
// Colors may be absent (geometry-only output).
inline void save_colored_ply(const std::string& path, const ColoredMesh& mesh) {
    if (!mesh.colors.empty() && mesh.colors.size() != mesh.vertices.size())
        throw std::invalid_argument("ply: color count " + std::to_string(mesh.colors.size()) +
                                    " does not match vertex count " +
                                    std::to_string(mesh.vertices.size()));
    binio::atomic_write(path, [&](std::ostream& os) {
        const bool colored = !mesh.colors.empty();
        os << "ply\nformat binary_little_endian 1.0\n"
           << "element vertex " << mesh.vertices.size() << '\n'
           << "property float x\nproperty float y\nproperty float z\n";
        if (colored)
            os << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
        os << "element face " << mesh.faces.size() << '\n'
           << "property list uchar int vertex_indices\nend_header\n";
        for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
            const Vec3& v = mesh.vertices[i];
            binio::write_scalar<float>(os, static_cast<float>(v.x));
            binio::write_scalar<float>(os, static_cast<float>(v.y));
            binio::write_scalar<float>(os, static_cast<float>(v.z));
            if (colored)
                for (int c = 0; c < 3; ++c)
                    binio::write_scalar<std::uint8_t>(os, color_byte(mesh.colors[i][c]));
        }
        for (const auto& f : mesh.faces) {
            binio::write_scalar<std::uint8_t>(os, 3);
            for (int c = 0; c < 3; ++c) binio::write_scalar<std::int32_t>(os, f[c]);
        }
    });
}

// Reads back the subset of ply this project writes (binary little-endian,
// float xyz, optional uchar rgb, uchar-counted int triangle lists).
inline ColoredMesh load_colored_ply(const std::string& path) {
    std::ifstream is = binio::open_in(path);
    std::string line;
    if (!std::getline(is, line) || line != "ply")
        throw std::runtime_error(path + ": not a ply file");

    std::size_t n_vertex = 0, n_face = 0;
    bool colored = false, in_vertex = false;
    std::vector<std::string> vertex_props;
    while (std::getline(is, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (key == "format") {
            std::string fmt;
            ls >> fmt;
            if (fmt != "binary_little_endian")
                throw std::runtime_error(path + ": unsupported ply format " + fmt);
        } else if (key == "element") {
            std::string what;
            std::size_t n;
            ls >> what >> n;
            in_vertex = (what == "vertex");
            if (what == "vertex") n_vertex = n;
            else if (what == "face") n_face = n;
            else throw std::runtime_error(path + ": unsupported ply element " + what);
        } else if (key == "property" && in_vertex) {
            std::string type, name;
            ls >> type >> name;
            vertex_props.push_back(type + ":" + name);
        } else if (key == "end_header") {
            break;
        }
    }
    const std::vector<std::string> plain = {"float:x", "float:y", "float:z"};
    const std::vector<std::string> rgb = {"float:x", "float:y", "float:z",
                                          "uchar:red", "uchar:green", "uchar:blue"};
    if (vertex_props == rgb) colored = true;
    else if (vertex_props != plain)
        throw std::runtime_error(path + ": unsupported vertex layout");

    ColoredMesh mesh;
    mesh.vertices.resize(n_vertex);
    if (colored) mesh.colors.resize(n_vertex);
    for (std::size_t i = 0; i < n_vertex; ++i) {
        mesh.vertices[i].x = binio::read_scalar<float>(is, "vertex");
        mesh.vertices[i].y = binio::read_scalar<float>(is, "vertex");
        mesh.vertices[i].z = binio::read_scalar<float>(is, "vertex");
        if (colored)
            for (int c = 0; c < 3; ++c)
                mesh.colors[i][c] = binio::read_scalar<std::uint8_t>(is, "color") / 255.0;
    }
    mesh.faces.resize(n_face);
    for (std::size_t i = 0; i < n_face; ++i) {
        const auto cnt = binio::read_scalar<std::uint8_t>(is, "face size");
        if (cnt != 3) throw std::runtime_error(path + ": non-triangle face in ply");
        for (int c = 0; c < 3; ++c) {
            const auto idx = binio::read_scalar<std::int32_t>(is, "face index");
            if (idx < 0 || static_cast<std::size_t>(idx) >= n_vertex)
                throw std::runtime_error(path + ": face index out of range");
            mesh.faces[i][c] = idx;
        }
    }
    return mesh;
}

// ---------------------------------------------------------------------------
// normalization

// Maps between an object's source frame and the centered unit frame where the
// bounding box fits [-0.5, 0.5] on its longest axis.
struct UnitTransform {
    Vec3 center{0.0, 0.0, 0.0};
    double scale = 1.0;  // longest bounding box edge in the source frame

    Vec3 to_unit(const Vec3& p) const {
        return {(p.x - center.x) / scale, (p.y - center.y) / scale, (p.z - center.z) / scale};
    }
    Vec3 to_world(const Vec3& p) const {
        return {p.x * scale + center.x, p.y * scale + center.y, p.z * scale + center.z};
    }
};

// Centers the mesh and scales by the longest bounding box edge; the returned
// transform maps results back to the source frame.
inline std::pair<TexturedMesh, UnitTransform> normalize_object(const TexturedMesh& mesh) {
    if (mesh.vertices.empty())
        throw std::invalid_argument("normalize_object: mesh has no vertices");
    const BBox b = mesh_bounds(mesh.vertices);
    UnitTransform t;
    t.center = b.center();
    t.scale = b.longest_edge();
    if (!(t.scale > 0.0))
        throw std::invalid_argument("normalize_object: degenerate mesh extent");
    TexturedMesh out = mesh;
    for (Vec3& v : out.vertices) v = t.to_unit(v);
    return {std::move(out), t};
}

// Fixed working volume for human scans: x and z span [-0.8, 0.8], y spans
// [-0.15, 2.1] with the feet near the origin.
inline BBox human_bbox() {
    BBox b;
    b.min = {-0.8, -0.15, -0.8};
    b.max = {0.8, 2.1, 0.8};
    return b;
}

// Working volume matching normalize_object output, with a small margin so
// surface samples displaced off the shape stay inside.
inline BBox unit_bbox(double margin = 0.1) {
    BBox b;
    b.min = {-0.5 - margin, -0.5 - margin, -0.5 - margin};
    b.max = {0.5 + margin, 0.5 + margin, 0.5 + margin};
    return b;
}

}  // namespace texfield
