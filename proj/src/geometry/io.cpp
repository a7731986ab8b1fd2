#include "carm/io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace carm {

namespace {

static_assert(std::endian::native == std::endian::little, "PLY codec assumes a little-endian host");

std::string path_str(const std::filesystem::path& p) { return p.string(); }

}  // namespace

void write_ply(const std::filesystem::path& path, const TaggedPointCloud& cloud)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path_str(path) + "' for writing");

    out << "ply\n"
        << "format binary_little_endian 1.0\n"
        << "comment frame " << to_string(cloud.frame) << "\n"
        << "element vertex " << cloud.points.size() << "\n"
        << "property float x\n"
        << "property float y\n"
        << "property float z\n"
        << "end_header\n";

    std::vector<float> buffer;
    buffer.reserve(cloud.points.size() * 3);
    for (const auto& p : cloud.points) {
        buffer.push_back(static_cast<float>(p.x()));
        buffer.push_back(static_cast<float>(p.y()));
        buffer.push_back(static_cast<float>(p.z()));
    }
    out.write(reinterpret_cast<const char*>(buffer.data()),
              static_cast<std::streamsize>(buffer.size() * sizeof(float)));
    if (!out) throw IoError("failed writing '" + path_str(path) + "'");
}

TaggedPointCloud read_ply(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path_str(path) + "'");

    const auto fail = [&](const std::string& why) -> ParseError {
        return ParseError(path_str(path) + ": " + why);
    };

    std::string line;
    if (!std::getline(in, line) || line != "ply") throw fail("missing 'ply' magic");

    TaggedPointCloud cloud;
    std::size_t count = 0;
    bool have_count = false;
    int float_props = 0;
    bool binary_le = false;
    while (true) {
        if (!std::getline(in, line)) throw fail("header not terminated");
        if (line == "end_header") break;
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (key == "format") {
            std::string fmt;
            ls >> fmt;
            binary_le = fmt == "binary_little_endian";
        } else if (key == "comment") {
            std::string tag, value;
            ls >> tag >> value;
            if (tag == "frame") {
                try {
                    cloud.frame = frame_from_string(value);
                } catch (const Error& e) {
                    throw fail(e.what());
                }
            }
        } else if (key == "element") {
            std::string name;
            ls >> name >> count;
            if (name != "vertex" || !ls) throw fail("expected a single vertex element");
            have_count = true;
        } else if (key == "property") {
            std::string type, name;
            ls >> type >> name;
            const std::string expected = float_props == 0 ? "x" : float_props == 1 ? "y" : "z";
            if (type != "float" || name != expected || float_props >= 3)
                throw fail("unsupported property '" + line + "'");
            ++float_props;
        } else {
            throw fail("unexpected header line '" + line + "'");
        }
    }
    if (!binary_le) throw fail("only binary_little_endian is supported");
    if (!have_count || float_props != 3) throw fail("incomplete vertex declaration");

    std::vector<float> buffer(count * 3);
    in.read(reinterpret_cast<char*>(buffer.data()),
            static_cast<std::streamsize>(buffer.size() * sizeof(float)));
    if (static_cast<std::size_t>(in.gcount()) != buffer.size() * sizeof(float))
        throw fail("truncated vertex data (expected " + std::to_string(count) + " points)");

    cloud.points.reserve(count);
    for (std::size_t i = 0; i < count; ++i)
        cloud.points.emplace_back(buffer[3 * i], buffer[3 * i + 1], buffer[3 * i + 2]);
    return cloud;
}

nlohmann::json transform_to_matrix_json(const RigidTransform& t)
{
    const Mat4 m = t.matrix();
    nlohmann::json rows = nlohmann::json::array();
    for (int r = 0; r < 4; ++r) rows.push_back({m(r, 0), m(r, 1), m(r, 2), m(r, 3)});
    return rows;
}

RigidTransform transform_from_matrix_json(const nlohmann::json& j)
{
    if (!j.is_array() || j.size() != 4) throw ParseError("transform matrix must have 4 rows");
    Mat4 m;
    for (int r = 0; r < 4; ++r) {
        if (!j[r].is_array() || j[r].size() != 4) throw ParseError("transform matrix rows need 4 entries");
        for (int c = 0; c < 4; ++c) m(r, c) = j[r][c].get<double>();
    }
    try {
        return RigidTransform::from_matrix(m);
    } catch (const InvalidArgumentError& e) {
        throw ParseError(e.what());
    }
}

nlohmann::json transform_to_json(const RigidTransform& t)
{
    const Quat& q = t.rotation();
    return {{"q", {q.w(), q.x(), q.y(), q.z()}}, {"t", vec3_to_json(t.translation())}};
}

RigidTransform transform_from_json(const nlohmann::json& j)
{
    try {
        const auto& q = j.at("q");
        if (q.size() != 4) throw ParseError("quaternion needs 4 entries");
        return {Quat(q[0].get<double>(), q[1].get<double>(), q[2].get<double>(), q[3].get<double>()),
                vec3_from_json(j.at("t"))};
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("bad transform: ") + e.what());
    }
}

nlohmann::json vec3_to_json(const Vec3& v) { return {v.x(), v.y(), v.z()}; }

Vec3 vec3_from_json(const nlohmann::json& j)
{
    if (!j.is_array() || j.size() != 3) throw ParseError("expected a 3-vector");
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

std::string read_text_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path_str(path) + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path_str(path) + "' for writing");
    out << text;
    if (!out) throw IoError("failed writing '" + path_str(path) + "'");
}

}  // namespace carm
