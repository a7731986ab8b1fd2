#pragma once

#include "carm/geometry.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>

namespace carm {

class IoError : public Error {
public:
    using Error::Error;
};

class ParseError : public Error {
public:
    using Error::Error;
};

// Binary little-endian PLY, float32 x/y/z in millimetres. The cloud frame is
// kept in a "comment frame <name>" header line.
void write_ply(const std::filesystem::path& path, const TaggedPointCloud& cloud);
TaggedPointCloud read_ply(const std::filesystem::path& path);

/// Row-major 4x4 matrix as nested arrays.
nlohmann::json transform_to_matrix_json(const RigidTransform& t);
RigidTransform transform_from_matrix_json(const nlohmann::json& j);

/// {"q":[w,x,y,z],"t":[x,y,z]}; reloads bit-exactly.
nlohmann::json transform_to_json(const RigidTransform& t);
RigidTransform transform_from_json(const nlohmann::json& j);

nlohmann::json vec3_to_json(const Vec3& v);
Vec3 vec3_from_json(const nlohmann::json& j);

/// Reads a whole file; throws IoError naming the path.
std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace carm
