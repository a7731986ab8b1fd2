#include "carm/depth_sensor.hpp"

#include "carm/io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

namespace carm {

namespace {

void add_noise(DepthImage& img, const RenderOptions& options)
{
    if (options.noise_sigma_mm < 0.0) throw InvalidArgumentError("noise sigma must be non-negative");
    if (options.noise_sigma_mm == 0.0) return;
    std::mt19937_64 rng(options.seed);
    std::normal_distribution<double> noise(0.0, options.noise_sigma_mm);
    for (double& d : img.depth) {
        if (d <= 0.0) continue;
        d = std::max(d + noise(rng), 0.0);
    }
}

}  // namespace

RigidTransform look_at(const Vec3& eye, const Vec3& target, const Vec3& up)
{
    const Vec3 forward = target - eye;
    if (forward.norm() < 1e-9) throw InvalidArgumentError("look_at: eye and target coincide");
    Mat3 r;
    r.col(2) = forward.normalized();
    const Vec3 right = r.col(2).cross(up);
    if (right.norm() < 1e-9) throw InvalidArgumentError("look_at: viewing direction is parallel to up");
    r.col(0) = right.normalized();
    r.col(1) = r.col(2).cross(r.col(0));
    return {r, eye};
}

void CameraIntrinsics::validate() const
{
    if (!(fx > 0.0 && fy > 0.0)) throw InvalidArgumentError("focal lengths must be positive");
    if (width <= 0 || height <= 0) throw InvalidArgumentError("image size must be positive");
    if (!(cx >= 0.0 && cx < width && cy >= 0.0 && cy < height))
        throw InvalidArgumentError("principal point must lie inside the image");
}

Eigen::Vector2d CameraIntrinsics::project(const Vec3& p) const
{
    return {fx * p.x() / p.z() + cx, fy * p.y() / p.z() + cy};
}

Vec3 CameraIntrinsics::ray(double u, double v) const { return {(u - cx) / fx, (v - cy) / fy, 1.0}; }

DepthImage::DepthImage(const CameraIntrinsics& k, double t)
    : intrinsics(k), depth(static_cast<std::size_t>(k.width) * k.height, 0.0), timestamp(t)
{
}

std::size_t DepthImage::valid_count() const
{
    return static_cast<std::size_t>(std::count_if(depth.begin(), depth.end(), [](double d) { return d > 0.0; }));
}

DepthImage render_depth(const SurfaceModel& scene, const RigidTransform& camera_pose,
                        const CameraIntrinsics& k, const RenderOptions& options)
{
    k.validate();
    DepthImage img(k, options.timestamp);
    const Vec3 origin = camera_pose.translation();
    for (int v = 0; v < k.height; ++v) {
        for (int u = 0; u < k.width; ++u) {
            const Vec3 ray_cam = k.ray(u, v);
            const double norm = ray_cam.norm();
            const Vec3 dir = camera_pose.rotation() * (ray_cam / norm);
            if (auto t = intersect_ray(scene, origin, dir)) img.at(u, v) = *t / norm;
        }
    }
    add_noise(img, options);
    return img;
}

DepthImage render_depth(const TaggedPointCloud& scene, const RigidTransform& camera_pose,
                        const CameraIntrinsics& k, const RenderOptions& options)
{
    k.validate();
    if (scene.frame != Frame::World) throw FrameMismatchError("render_depth expects a World-frame scene cloud");
    DepthImage img(k, options.timestamp);
    const RigidTransform world_to_camera = camera_pose.inverse();
    for (const auto& pw : scene.points) {
        const Vec3 pc = world_to_camera.apply(pw);
        if (pc.z() <= 0.0) continue;
        const Eigen::Vector2d px = k.project(pc);
        const long u = std::lround(px.x());
        const long v = std::lround(px.y());
        if (u < 0 || v < 0 || u >= k.width || v >= k.height) continue;
        double& slot = img.at(static_cast<int>(u), static_cast<int>(v));
        if (slot == 0.0 || pc.z() < slot) slot = pc.z();
    }
    add_noise(img, options);
    return img;
}

TaggedPointCloud unproject_depth(const DepthImage& img)
{
    const CameraIntrinsics& k = img.intrinsics;
    TaggedPointCloud cloud{Frame::IRSensor, {}, img.timestamp};
    cloud.points.reserve(img.valid_count());
    for (int v = 0; v < k.height; ++v)
        for (int u = 0; u < k.width; ++u)
            if (const double d = img.at(u, v); d > 0.0)
                cloud.points.emplace_back((u - k.cx) * d / k.fx, (v - k.cy) * d / k.fy, d);
    return cloud;
}

TaggedPointCloud sense_points(const TaggedPointCloud& scene, const RigidTransform& camera_pose,
                              const CameraIntrinsics& k, bool cull_to_frustum)
{
    if (scene.frame != Frame::World) throw FrameMismatchError("sense_points expects a World-frame scene cloud");
    const RigidTransform world_to_camera = camera_pose.inverse();
    TaggedPointCloud out{Frame::IRSensor, {}, scene.timestamp};
    out.points.reserve(scene.points.size());
    for (const auto& pw : scene.points) {
        const Vec3 pc = world_to_camera.apply(pw);
        if (cull_to_frustum) {
            if (pc.z() <= 0.0) continue;
            const Eigen::Vector2d px = k.project(pc);
            if (px.x() < -0.5 || px.y() < -0.5 || px.x() >= k.width - 0.5 || px.y() >= k.height - 0.5) continue;
        }
        out.points.push_back(pc);
    }
    return out;
}

void write_depth_pgm(const std::filesystem::path& path, const DepthImage& img)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out << "P5\n" << img.intrinsics.width << " " << img.intrinsics.height << "\n65535\n";
    std::string bytes;
    bytes.reserve(img.depth.size() * 2);
    for (double d : img.depth) {
        const double units = std::round(d * 10.0);
        const auto q = static_cast<std::uint16_t>(std::clamp(units, 0.0, 65535.0));
        bytes.push_back(static_cast<char>(q >> 8));
        bytes.push_back(static_cast<char>(q & 0xFF));
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing '" + path.string() + "'");

    nlohmann::json sidecar{{"intrinsics", to_json(img.intrinsics)},
                           {"timestamp", img.timestamp},
                           {"depth_unit_mm", 0.1}};
    write_text_file(path.string() + ".json", sidecar.dump(2) + "\n");
}

DepthImage read_depth_pgm(const std::filesystem::path& path)
{
    nlohmann::json sidecar;
    try {
        sidecar = nlohmann::json::parse(read_text_file(path.string() + ".json"));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path.string() + ".json: " + e.what());
    }
    const CameraIntrinsics k = intrinsics_from_json(sidecar.at("intrinsics"));
    DepthImage img(k, sidecar.value("timestamp", 0.0));

    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    std::string magic;
    int w = 0, h = 0, maxval = 0;
    in >> magic >> w >> h >> maxval;
    in.get();
    if (magic != "P5" || maxval != 65535) throw ParseError(path.string() + ": not a 16-bit P5 image");
    if (w != k.width || h != k.height) throw ParseError(path.string() + ": size does not match intrinsics");
    std::vector<unsigned char> bytes(img.depth.size() * 2);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (static_cast<std::size_t>(in.gcount()) != bytes.size()) throw ParseError(path.string() + ": truncated pixel data");
    for (std::size_t i = 0; i < img.depth.size(); ++i)
        img.depth[i] = static_cast<double>((bytes[2 * i] << 8) | bytes[2 * i + 1]) * 0.1;
    return img;
}

nlohmann::json to_json(const CameraIntrinsics& k)
{
    return {{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy}, {"width", k.width}, {"height", k.height}};
}

CameraIntrinsics intrinsics_from_json(const nlohmann::json& j)
{
    CameraIntrinsics k;
    try {
        k.fx = j.value("fx", k.fx);
        k.fy = j.value("fy", k.fy);
        k.width = j.value("width", k.width);
        k.height = j.value("height", k.height);
        k.cx = j.value("cx", k.width / 2.0);
        k.cy = j.value("cy", k.height / 2.0);
    } catch (const nlohmann::json::exception& e) {
        throw InvalidArgumentError(std::string("bad intrinsics: ") + e.what());
    }
    k.validate();
    return k;
}

}  // namespace carm
