#pragma once

#include <array>

#include "sport/geometry.hpp"
#include "sport/scene.hpp"

namespace sport::diffusion {

/// Diffusion state of one pose: workspace-normalized translation followed by
/// the first two columns of the rotation matrix.
using PoseVector = std::array<double, 9>;

/// Maps the workspace box (x, y over the table; z over [0, z_max]) onto
/// [-1, 1]^3.
geometry::Vec3 normalize_point(const geometry::Vec3& p, const scene::Workspace& ws);
geometry::Vec3 denormalize_point(const geometry::Vec3& p, const scene::Workspace& ws);

/// Translations outside the workspace are clamped onto it (with a warning on
/// stderr) before normalization.
PoseVector pose_to_vector(const geometry::Pose& pose, const scene::Workspace& ws);
/// Un-normalizes the translation and Gram-Schmidts the two rotation columns.
/// Throws DegenerateRotation for (near-)parallel columns.
geometry::Pose vector_to_pose(const PoseVector& v, const scene::Workspace& ws);

}  // namespace sport::diffusion
