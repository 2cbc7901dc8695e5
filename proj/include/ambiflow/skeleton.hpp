#pragma once

#include <Eigen/Core>
#include <array>
#include <cstddef>
#include <string>
#include <vector>

namespace ambiflow {

/// Kinematic tree over J joints rooted at the pelvis.
struct Skeleton {
  std::vector<std::string> names;
  /// Parent joint per joint, -1 for the root.
  std::vector<int> parents;
  /// (parent, child) per bone, J - 1 bones.
  std::vector<std::array<std::size_t, 2>> bones;
  /// Pelvis/root, left hip and right hip. Their heatmap coefficients are
  /// dropped from the condition vector.
  std::vector<std::size_t> hips;
  /// Bone lengths in metres, same order as `bones`.
  std::vector<double> bone_lengths;
  /// Unit direction of every bone in the rest pose (world frame, y up).
  std::vector<Eigen::Vector3d> rest_directions;

  std::size_t joints() const { return names.size(); }
  std::size_t bone_count() const { return bones.size(); }
  std::size_t root() const { return 0; }
  bool is_hip(std::size_t joint) const;
  void validate() const;

  /// J x (J - 1) incidence matrix C with bone_k = X C[:, k] for X in R^{3 x J}.
  Eigen::MatrixXd bone_matrix() const;

  /// 16-joint human body: pelvis, legs, spine, thorax, head and arms, with
  /// average adult proportions.
  static Skeleton human16();
};

}  // namespace ambiflow
