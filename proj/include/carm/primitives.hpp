#pragma once

#include "carm/geometry.hpp"

#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

namespace carm {

/// Closed box surface (six faces) centred on the local origin.
struct BoxShape {
    Vec3 half_extents{1.0, 1.0, 1.0};
};

/// Open cylinder wall around local +z, spanning z in [0, height]. No caps.
struct CylinderShape {
    double radius = 1.0;
    double height = 1.0;
};

/// Tube of a torus around local +z, restricted to major angles
/// [start_deg, start_deg + sweep_deg] measured from +x towards +y. Open ends.
struct PartialTorusShape {
    double major_radius = 2.0;
    double minor_radius = 0.5;
    double start_deg = 0.0;
    double sweep_deg = 180.0;
};

using Shape = std::variant<BoxShape, CylinderShape, PartialTorusShape>;

struct PlacedPrimitive {
    std::string name;
    Shape shape;
    RigidTransform pose;  ///< World <- local
};

using SurfaceModel = std::vector<PlacedPrimitive>;

/// Closed-form area in mm^2.
double surface_area(const Shape& shape);
double surface_area(const SurfaceModel& model);

/// Unsigned distance from a point (in the primitive's parent frame) to its surface.
double distance_to_surface(const PlacedPrimitive& primitive, const Vec3& p);
double distance_to_surface(const SurfaceModel& model, const Vec3& p);

/// Smallest ray parameter t > min_t where origin + t * dir meets the surface.
/// `dir` must be unit length; both vectors are in the parent frame.
std::optional<double> intersect_ray(const PlacedPrimitive& primitive, const Vec3& origin,
                                    const Vec3& dir, double min_t = 1e-9);
std::optional<double> intersect_ray(const SurfaceModel& model, const Vec3& origin, const Vec3& dir,
                                    double min_t = 1e-9);

/// Area-uniform stratified samples on the surface, in local coordinates.
std::vector<Vec3> sample_local(const Shape& shape, std::size_t count, std::mt19937_64& rng);

}  // namespace carm
