#include "carm/primitives.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>

namespace carm {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

double wrap_two_pi(double a)
{
    a = std::fmod(a, 2.0 * kPi);
    return a < 0.0 ? a + 2.0 * kPi : a;
}

bool torus_angle_in_range(const PartialTorusShape& s, const Vec3& p)
{
    const double rel = wrap_two_pi(std::atan2(p.y(), p.x()) - deg2rad(s.start_deg));
    return rel <= deg2rad(s.sweep_deg) + 1e-12;
}

// Signed distance to the full (closed) torus tube.
double torus_sdf(const PartialTorusShape& s, const Vec3& p)
{
    const double rho = std::hypot(p.x(), p.y());
    return std::hypot(rho - s.major_radius, p.z()) - s.minor_radius;
}

Vec3 torus_sdf_gradient(const PartialTorusShape& s, const Vec3& p)
{
    const double rho = std::hypot(p.x(), p.y());
    const double q = std::hypot(rho - s.major_radius, p.z());
    if (q < 1e-300) return Vec3::UnitZ();
    const double radial = (rho - s.major_radius) / q;
    if (rho < 1e-300) return Vec3(0, 0, p.z() / q);
    return {radial * p.x() / rho, radial * p.y() / rho, p.z() / q};
}

double box_distance(const BoxShape& b, const Vec3& p)
{
    const Vec3 q = p.cwiseAbs() - b.half_extents;
    const double outside = q.cwiseMax(0.0).norm();
    const double inside = std::min(q.maxCoeff(), 0.0);
    return std::abs(outside + inside);
}

double cylinder_distance(const CylinderShape& c, const Vec3& p)
{
    const double dr = std::hypot(p.x(), p.y()) - c.radius;
    const double dz = p.z() < 0.0 ? -p.z() : (p.z() > c.height ? p.z() - c.height : 0.0);
    return std::hypot(dr, dz);
}

double torus_distance(const PartialTorusShape& s, const Vec3& p)
{
    if (torus_angle_in_range(s, p)) return std::abs(torus_sdf(s, p));
    double best = std::numeric_limits<double>::infinity();
    for (double end_deg : {s.start_deg, s.start_deg + s.sweep_deg}) {
        const double a = deg2rad(end_deg);
        const Vec3 radial(std::cos(a), std::sin(a), 0.0);
        const Vec3 normal(-std::sin(a), std::cos(a), 0.0);
        const Vec3 rel = p - s.major_radius * radial;
        const double off_plane = rel.dot(normal);
        const double in_plane = (rel - off_plane * normal).norm();
        best = std::min(best, std::hypot(off_plane, in_plane - s.minor_radius));
    }
    return best;
}

std::optional<double> box_ray(const BoxShape& b, const Vec3& o, const Vec3& d, double min_t)
{
    double t_near = -std::numeric_limits<double>::infinity();
    double t_far = std::numeric_limits<double>::infinity();
    for (int i = 0; i < 3; ++i) {
        if (std::abs(d[i]) < 1e-300) {
            if (std::abs(o[i]) > b.half_extents[i]) return std::nullopt;
            continue;
        }
        double t1 = (-b.half_extents[i] - o[i]) / d[i];
        double t2 = (b.half_extents[i] - o[i]) / d[i];
        if (t1 > t2) std::swap(t1, t2);
        t_near = std::max(t_near, t1);
        t_far = std::min(t_far, t2);
    }
    if (t_near > t_far) return std::nullopt;
    if (t_near > min_t) return t_near;
    if (t_far > min_t) return t_far;
    return std::nullopt;
}

std::optional<double> cylinder_ray(const CylinderShape& c, const Vec3& o, const Vec3& d, double min_t)
{
    const double a = d.x() * d.x() + d.y() * d.y();
    if (a < 1e-18) return std::nullopt;
    const double b = 2.0 * (o.x() * d.x() + o.y() * d.y());
    const double cc = o.x() * o.x() + o.y() * o.y() - c.radius * c.radius;
    const double disc = b * b - 4.0 * a * cc;
    if (disc < 0.0) return std::nullopt;
    const double q = -0.5 * (b + std::copysign(std::sqrt(disc), b));
    std::array<double, 2> roots{q / a, q != 0.0 ? cc / q : q / a};
    std::sort(roots.begin(), roots.end());
    for (double t : roots) {
        // One Newton step on the radial residual tightens far-away hits.
        const Vec3 p0 = o + t * d;
        const double rho = std::hypot(p0.x(), p0.y());
        const double slope = rho > 0.0 ? (p0.x() * d.x() + p0.y() * d.y()) / rho : 0.0;
        if (std::abs(slope) > 1e-9) t -= (rho - c.radius) / slope;
        if (t <= min_t) continue;
        const double z = o.z() + t * d.z();
        if (z >= 0.0 && z <= c.height) return t;
    }
    return std::nullopt;
}

// Newton on the tube distance along the ray; returns the root near `s`.
std::optional<double> refine_torus_root(const PartialTorusShape& s, const Vec3& o, const Vec3& d,
                                        double t)
{
    for (int it = 0; it < 60; ++it) {
        const Vec3 p = o + t * d;
        const double g = torus_sdf(s, p);
        if (std::abs(g) < 1e-11) return t;
        const double slope = torus_sdf_gradient(s, p).dot(d);
        if (std::abs(slope) < 1e-9) break;
        const double step = g / slope;
        if (std::abs(step) > 1.0) break;
        t -= step;
    }
    const double g = torus_sdf(s, o + t * d);
    if (std::abs(g) < 1e-9) return t;
    return std::nullopt;
}

std::optional<double> torus_ray(const PartialTorusShape& s, const Vec3& o, const Vec3& d, double min_t)
{
    // Clip the march to the bounding sphere.
    const double bound = s.major_radius + s.minor_radius;
    const double b = o.dot(d);
    const double disc = b * b - (o.squaredNorm() - bound * bound);
    if (disc < 0.0) return std::nullopt;
    const double root = std::sqrt(disc);
    const double t_end = -b + root;
    if (t_end <= min_t) return std::nullopt;
    double t = std::max(-b - root, min_t);

    constexpr double kNear = 1e-3;
    constexpr double kMinStep = 1e-4;
    for (int it = 0; it < 4000 && t <= t_end + kNear; ++it) {
        const Vec3 p = o + t * d;
        const double g = torus_sdf(s, p);
        const double slope = torus_sdf_gradient(s, p).dot(d);
        const bool inside = g < 0.0;
        const bool approaching = inside ? slope > 0.0 : slope < 0.0;
        if (std::abs(g) < kNear && approaching) {
            if (auto hit = refine_torus_root(s, o, d, t); hit && *hit > min_t) {
                if (torus_angle_in_range(s, o + *hit * d)) return hit;
                // Passing through a cut-away part of the ring.
                t = *hit + 10.0 * kMinStep;
                continue;
            }
        }
        t += std::max(std::abs(g), kMinStep);
    }
    return std::nullopt;
}

// Largest-remainder split of `count` proportional to `weights`.
std::vector<std::size_t> apportion(std::size_t count, const std::vector<double>& weights)
{
    const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
    std::vector<std::size_t> out(weights.size());
    std::vector<std::pair<double, std::size_t>> rema;
    std::size_t used = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        const double exact = static_cast<double>(count) * weights[i] / total;
        out[i] = static_cast<std::size_t>(std::floor(exact));
        used += out[i];
        rema.emplace_back(exact - static_cast<double>(out[i]), i);
    }
    std::stable_sort(rema.begin(), rema.end(), [](auto& a, auto& b) { return a.first > b.first; });
    for (std::size_t k = 0; used < count; ++k, ++used) ++out[rema[k % rema.size()].second];
    return out;
}

std::vector<Vec3> sample_box(const BoxShape& b, std::size_t count, std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    const Vec3& h = b.half_extents;
    // Faces: +-x, +-y, +-z. Each face spans the two remaining axes.
    const std::vector<double> areas{h.y() * h.z(), h.y() * h.z(), h.x() * h.z(),
                                    h.x() * h.z(), h.x() * h.y(), h.x() * h.y()};
    const auto counts = apportion(count, areas);
    std::vector<Vec3> pts;
    pts.reserve(count);
    for (int face = 0; face < 6; ++face) {
        const int axis = face / 2;
        const double sign = face % 2 == 0 ? 1.0 : -1.0;
        const int a1 = (axis + 1) % 3;
        const int a2 = (axis + 2) % 3;
        const std::size_t n = counts[face];
        for (std::size_t i = 0; i < n; ++i) {
            const double s = (static_cast<double>(i) + uni(rng)) / static_cast<double>(n);
            const double r = uni(rng);
            Vec3 p;
            p[axis] = sign * h[axis];
            p[a1] = (2.0 * s - 1.0) * h[a1];
            p[a2] = (2.0 * r - 1.0) * h[a2];
            pts.push_back(p);
        }
    }
    return pts;
}

std::vector<Vec3> sample_cylinder(const CylinderShape& c, std::size_t count, std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::vector<Vec3> pts;
    pts.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const double phi = 2.0 * kPi * (static_cast<double>(i) + uni(rng)) / static_cast<double>(count);
        const double z = c.height * uni(rng);
        pts.emplace_back(c.radius * std::cos(phi), c.radius * std::sin(phi), z);
    }
    return pts;
}

// Inverse CDF of the tube angle v under the area element (R + r cos v).
double tube_angle_from_uniform(double u, double major, double minor)
{
    const double target = 2.0 * kPi * major * u;
    double v = 2.0 * kPi * u;
    for (int it = 0; it < 50; ++it) {
        const double f = major * v + minor * std::sin(v) - target;
        const double step = f / (major + minor * std::cos(v));
        v -= step;
        if (std::abs(step) < 1e-15) break;
    }
    return v;
}

std::vector<Vec3> sample_torus(const PartialTorusShape& s, std::size_t count, std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::vector<Vec3> pts;
    pts.reserve(count);
    const double start = deg2rad(s.start_deg);
    const double sweep = deg2rad(s.sweep_deg);
    for (std::size_t i = 0; i < count; ++i) {
        const double theta = start + sweep * (static_cast<double>(i) + uni(rng)) / static_cast<double>(count);
        const double v = tube_angle_from_uniform(uni(rng), s.major_radius, s.minor_radius);
        const double ring = s.major_radius + s.minor_radius * std::cos(v);
        pts.emplace_back(ring * std::cos(theta), ring * std::sin(theta), s.minor_radius * std::sin(v));
    }
    return pts;
}

}  // namespace

double surface_area(const Shape& shape)
{
    return std::visit(
        Overloaded{
            [](const BoxShape& b) {
                const Vec3& h = b.half_extents;
                return 8.0 * (h.x() * h.y() + h.y() * h.z() + h.x() * h.z());
            },
            [](const CylinderShape& c) { return 2.0 * kPi * c.radius * c.height; },
            [](const PartialTorusShape& t) {
                return deg2rad(t.sweep_deg) * t.major_radius * 2.0 * kPi * t.minor_radius;
            },
        },
        shape);
}

double surface_area(const SurfaceModel& model)
{
    double total = 0.0;
    for (const auto& p : model) total += surface_area(p.shape);
    return total;
}

double distance_to_surface(const PlacedPrimitive& primitive, const Vec3& p)
{
    const Vec3 local = primitive.pose.inverse().apply(p);
    return std::visit(Overloaded{
                          [&](const BoxShape& b) { return box_distance(b, local); },
                          [&](const CylinderShape& c) { return cylinder_distance(c, local); },
                          [&](const PartialTorusShape& t) { return torus_distance(t, local); },
                      },
                      primitive.shape);
}

double distance_to_surface(const SurfaceModel& model, const Vec3& p)
{
    double best = std::numeric_limits<double>::infinity();
    for (const auto& prim : model) best = std::min(best, distance_to_surface(prim, p));
    return best;
}

std::optional<double> intersect_ray(const PlacedPrimitive& primitive, const Vec3& origin,
                                    const Vec3& dir, double min_t)
{
    const RigidTransform to_local = primitive.pose.inverse();
    const Vec3 o = to_local.apply(origin);
    const Vec3 d = to_local.rotation() * dir;
    return std::visit(Overloaded{
                          [&](const BoxShape& b) { return box_ray(b, o, d, min_t); },
                          [&](const CylinderShape& c) { return cylinder_ray(c, o, d, min_t); },
                          [&](const PartialTorusShape& t) { return torus_ray(t, o, d, min_t); },
                      },
                      primitive.shape);
}

std::optional<double> intersect_ray(const SurfaceModel& model, const Vec3& origin, const Vec3& dir,
                                    double min_t)
{
    std::optional<double> best;
    for (const auto& prim : model)
        if (auto t = intersect_ray(prim, origin, dir, min_t); t && (!best || *t < *best)) best = t;
    return best;
}

std::vector<Vec3> sample_local(const Shape& shape, std::size_t count, std::mt19937_64& rng)
{
    if (count == 0) return {};
    return std::visit(
        Overloaded{
            [&](const BoxShape& b) { return sample_box(b, count, rng); },
            [&](const CylinderShape& c) { return sample_cylinder(c, count, rng); },
            [&](const PartialTorusShape& t) { return sample_torus(t, count, rng); },
        },
        shape);
}

}  // namespace carm
