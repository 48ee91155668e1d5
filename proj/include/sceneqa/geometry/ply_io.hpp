#pragma once

// Minimal PLY subset: ASCII or binary little endian, float x/y/z and optional
// uchar red/green/blue, plus a raw .xyz format (packed float32 LE triplets).
// Header errors carry the offending line number.

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "sceneqa/core/error.hpp"
#include "sceneqa/geometry/pointcloud.hpp"

namespace sceneqa {

namespace detail {

inline float read_f32_le(const char* p) {
    std::uint32_t bits = 0;
    for (int i = 0; i < 4; ++i)
        bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

inline void write_f32_le(std::string& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

}  // namespace detail

inline void write_ply(const std::string& path, const PointCloud& pc, bool binary = true) {
    pc.validate();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("ply: cannot open '" + path + "' for writing");
    out << "ply\n";
    out << (binary ? "format binary_little_endian 1.0\n" : "format ascii 1.0\n");
    out << "element vertex " << pc.size() << "\n";
    out << "property float x\nproperty float y\nproperty float z\n";
    if (pc.has_colors())
        out << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
    out << "end_header\n";
    for (std::size_t i = 0; i < pc.size(); ++i) {
        if (binary) {
            std::string rec;
            for (int a = 0; a < 3; ++a)
                detail::write_f32_le(rec, static_cast<float>(pc.points[i][a]));
            if (pc.has_colors())
                for (int a = 0; a < 3; ++a)
                    rec.push_back(static_cast<char>(
                        static_cast<int>(pc.colors[i][a] * 255.0 + 0.5)));
            out.write(rec.data(), static_cast<std::streamsize>(rec.size()));
        } else {
            out << static_cast<float>(pc.points[i][0]) << " "
                << static_cast<float>(pc.points[i][1]) << " "
                << static_cast<float>(pc.points[i][2]);
            if (pc.has_colors())
                for (int a = 0; a < 3; ++a)
                    out << " " << static_cast<int>(pc.colors[i][a] * 255.0 + 0.5);
            out << "\n";
        }
    }
    if (!out) throw DataError("ply: write to '" + path + "' failed");
}

inline PointCloud read_ply(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("ply: cannot open '" + path + "'");

    auto fail = [&](int line, const std::string& what) {
        throw DataError("ply: " + path + " line " + std::to_string(line) + ": " + what);
    };

    std::string line;
    int line_no = 0;
    auto next_line = [&]() -> std::string {
        if (!std::getline(in, line)) fail(line_no + 1, "unexpected end of header");
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        return line;
    };

    if (next_line() != "ply") fail(line_no, "missing 'ply' magic");
    bool binary = false;
    {
        std::string fmt = next_line();
        if (fmt == "format binary_little_endian 1.0")
            binary = true;
        else if (fmt == "format ascii 1.0")
            binary = false;
        else
            fail(line_no, "unsupported format '" + fmt + "'");
    }

    long vertex_count = -1;
    std::vector<std::string> props;
    while (true) {
        std::string l = next_line();
        if (l == "end_header") break;
        std::istringstream ss(l);
        std::string word;
        ss >> word;
        if (word == "comment") continue;
        if (word == "element") {
            std::string name;
            long count = 0;
            ss >> name >> count;
            if (name != "vertex") fail(line_no, "unsupported element '" + name + "'");
            if (vertex_count >= 0) fail(line_no, "duplicate vertex element");
            if (count < 1) fail(line_no, "vertex count must be at least 1");
            vertex_count = count;
            continue;
        }
        if (word == "property") {
            std::string type, name;
            ss >> type >> name;
            bool coord = name == "x" || name == "y" || name == "z";
            bool chan = name == "red" || name == "green" || name == "blue";
            if (coord && type != "float" && type != "float32")
                fail(line_no, "property " + name + " must be float, got '" + type + "'");
            if (chan && type != "uchar" && type != "uint8")
                fail(line_no, "property " + name + " must be uchar, got '" + type + "'");
            if (!coord && !chan) fail(line_no, "unsupported property '" + name + "'");
            props.push_back(name);
            continue;
        }
        fail(line_no, "unrecognized header line '" + l + "'");
    }
    if (vertex_count < 0) fail(line_no, "no vertex element declared");
    bool has_colors = props.size() == 6;
    {
        std::vector<std::string> want = {"x", "y", "z"};
        if (has_colors) {
            want.push_back("red");
            want.push_back("green");
            want.push_back("blue");
        }
        if (props != want) fail(line_no, "properties must be x y z [red green blue] in order");
    }

    PointCloud pc;
    pc.points.reserve(static_cast<std::size_t>(vertex_count));
    if (has_colors) pc.colors.reserve(static_cast<std::size_t>(vertex_count));
    if (binary) {
        const std::size_t rec = 12 + (has_colors ? 3 : 0);
        std::string buf(rec, '\0');
        for (long i = 0; i < vertex_count; ++i) {
            in.read(buf.data(), static_cast<std::streamsize>(rec));
            if (static_cast<std::size_t>(in.gcount()) != rec)
                throw DataError("ply: " + path + ": truncated binary payload at vertex " +
                                std::to_string(i) + " (byte offset " +
                                std::to_string(static_cast<long long>(in.tellg())) + ")");
            std::array<double, 3> p;
            for (int a = 0; a < 3; ++a)
                p[static_cast<std::size_t>(a)] =
                    static_cast<double>(detail::read_f32_le(buf.data() + 4 * a));
            pc.points.push_back(p);
            if (has_colors) {
                std::array<double, 3> c;
                for (int a = 0; a < 3; ++a)
                    c[static_cast<std::size_t>(a)] =
                        static_cast<unsigned char>(buf[12 + static_cast<std::size_t>(a)]) / 255.0;
                pc.colors.push_back(c);
            }
        }
    } else {
        for (long i = 0; i < vertex_count; ++i) {
            if (!std::getline(in, line))
                fail(line_no + 1, "truncated ascii payload at vertex " + std::to_string(i));
            ++line_no;
            std::istringstream ss(line);
            std::array<double, 3> p;
            if (!(ss >> p[0] >> p[1] >> p[2]))
                fail(line_no, "bad vertex coordinates");
            pc.points.push_back(p);
            if (has_colors) {
                int r, g, b;
                if (!(ss >> r >> g >> b)) fail(line_no, "bad vertex colors");
                pc.colors.push_back({r / 255.0, g / 255.0, b / 255.0});
            }
        }
    }
    pc.validate();
    return pc;
}

// Raw xyz: packed little-endian float32 triplets, no header.
inline void write_xyz(const std::string& path, const PointCloud& pc) {
    pc.validate();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("xyz: cannot open '" + path + "' for writing");
    std::string bytes;
    bytes.reserve(pc.size() * 12);
    for (const auto& p : pc.points)
        for (int a = 0; a < 3; ++a) detail::write_f32_le(bytes, static_cast<float>(p[a]));
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("xyz: write to '" + path + "' failed");
}

inline PointCloud read_xyz(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("xyz: cannot open '" + path + "'");
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.empty() || bytes.size() % 12 != 0)
        throw DataError("xyz: " + path + " length " + std::to_string(bytes.size()) +
                        " is not a positive multiple of 12");
    PointCloud pc;
    pc.points.reserve(bytes.size() / 12);
    for (std::size_t off = 0; off < bytes.size(); off += 12) {
        std::array<double, 3> p;
        for (int a = 0; a < 3; ++a)
            p[static_cast<std::size_t>(a)] =
                static_cast<double>(detail::read_f32_le(bytes.data() + off + 4 * a));
        pc.points.push_back(p);
    }
    pc.validate();
    return pc;
}

// Dispatch on extension; the dataset manifest stores relative paths.
inline PointCloud read_point_cloud(const std::string& path) {
    if (path.size() >= 4 && path.compare(path.size() - 4, 4, ".xyz") == 0) return read_xyz(path);
    return read_ply(path);
}

}  // namespace sceneqa
