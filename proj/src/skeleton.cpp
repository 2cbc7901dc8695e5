#include "ambiflow/skeleton.hpp"

#include <algorithm>

#include "ambiflow/error.hpp"

namespace ambiflow {

bool Skeleton::is_hip(std::size_t joint) const {
  return std::find(hips.begin(), hips.end(), joint) != hips.end();
}

void Skeleton::validate() const {
  const std::size_t j = joints();
  if (j < 2) throw InvalidArgument("skeleton needs at least two joints");
  if (parents.size() != j) throw InvalidArgument("skeleton: one parent entry per joint required");
  if (bones.size() != j - 1) throw InvalidArgument("skeleton: expected J - 1 bones");
  if (bone_lengths.size() != bones.size() || rest_directions.size() != bones.size()) {
    throw InvalidArgument("skeleton: bone lengths/directions must match the bone list");
  }
  if (parents[0] != -1) throw InvalidArgument("skeleton: joint 0 must be the root");
  for (std::size_t i = 1; i < j; ++i) {
    if (parents[i] < 0 || static_cast<std::size_t>(parents[i]) >= i) {
      throw InvalidArgument("skeleton: parents must precede children");
    }
  }
  for (std::size_t k = 0; k < bones.size(); ++k) {
    if (bones[k][0] >= j || bones[k][1] >= j ||
        parents[bones[k][1]] != static_cast<int>(bones[k][0])) {
      throw InvalidArgument("skeleton: bone list disagrees with parent table");
    }
    if (!(bone_lengths[k] > 0.0)) throw InvalidArgument("skeleton: bone lengths must be > 0");
  }
  for (auto h : hips)
    if (h >= j) throw InvalidArgument("skeleton: hip index out of range");
}

Eigen::MatrixXd Skeleton::bone_matrix() const {
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(joints()),
                                            static_cast<Eigen::Index>(bone_count()));
  for (std::size_t k = 0; k < bones.size(); ++k) {
    c(static_cast<Eigen::Index>(bones[k][0]), static_cast<Eigen::Index>(k)) = -1.0;
    c(static_cast<Eigen::Index>(bones[k][1]), static_cast<Eigen::Index>(k)) = 1.0;
  }
  return c;
}

Skeleton Skeleton::human16() {
  Skeleton s;
  s.names = {"pelvis", "r_hip",   "r_knee",     "r_ankle",  "l_hip",      "l_knee",
             "l_ankle", "spine",  "thorax",     "head",     "l_shoulder", "l_elbow",
             "l_wrist", "r_shoulder", "r_elbow", "r_wrist"};
  s.parents = {-1, 0, 1, 2, 0, 4, 5, 0, 7, 8, 8, 10, 11, 8, 13, 14};
  for (std::size_t i = 1; i < s.parents.size(); ++i) {
    s.bones.push_back({static_cast<std::size_t>(s.parents[i]), i});
  }
  s.hips = {0, 1, 4};
  // metres
  s.bone_lengths = {0.13, 0.45, 0.44, 0.13, 0.45, 0.44, 0.23, 0.25,
                    0.20, 0.15, 0.28, 0.25, 0.15, 0.28, 0.25};
  const Eigen::Vector3d down(0, -1, 0), up(0, 1, 0), left(1, 0, 0), right(-1, 0, 0);
  s.rest_directions = {right, down, down, left, down, down, up, up,
                       up,    left, down, down, right, down, down};
  return s;
}

}  // namespace ambiflow
