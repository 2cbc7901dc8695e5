#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ambiflow/data.hpp"
#include "ambiflow/flow.hpp"
#include "ambiflow/skeleton.hpp"

namespace ambiflow::eval {

/// Sampled hypotheses for a dataset. Each sample holds (M + 1) x 3J rows in
/// the network's pose space (mean-centred metres): row 0 is the z0 pose,
/// rows 1..M the sampled hypotheses.
struct HypothesisFile {
  std::size_t joints = 0;
  std::size_t count = 0;  // M
  bool forced_z0 = false;
  std::vector<nd::Tensor> samples;

  bool operator==(const HypothesisFile&) const = default;
};

/// Per-sample streams are derived from (seed, sample index), so the result
/// does not depend on the worker count.
HypothesisFile sample_dataset(const flow::FlowModel& model, const data::Prepared& prepared, std::size_t count,
                              std::uint64_t seed, bool force_z0 = false);

inline constexpr std::uint32_t kHypothesisVersion = 1;

/// "AFHY", u32 version, u32 J, u32 M, u8 forced_z0, u64 samples, f64 rows,
/// trailing CRC32.
void write_hypotheses(const std::filesystem::path& path, const HypothesisFile& file);
HypothesisFile read_hypotheses(const std::filesystem::path& path);

struct EvalOptions {
  double pck_threshold = 150.0;
  double ambiguous_threshold = 5.0;
  bool procrustes_scale = true;
  bool ambiguous_only = false;
  bool noise_baseline = false;
  std::size_t noise_samples = 200;
  /// Depth std of the noise baseline in mm; negative means "use the flow's
  /// mean depth spread on the evaluated samples".
  double noise_depth_sigma = -1.0;
  std::vector<std::size_t> m_grid = {1, 2, 5, 10, 20, 50, 100, 200};
  double sigma_t = 2.1;
  double mm_per_px = 10.0;
  std::uint64_t seed = 0;
};

/// Metrics of one sample; poses are hip-centred and in mm.
struct SampleRow {
  std::size_t index = 0;
  bool ambiguous = false;
  double z0_mpjpe = 0, z0_pmpjpe = 0, z0_pck = 0, z0_cps = 0;
  double best_mpjpe = 0, best_pmpjpe = 0, best_pck = 0, best_cps = 0;
  double worst_mpjpe = 0, worst_pmpjpe = 0;
  double spread_x = 0, spread_y = 0, spread_depth = 0;
  double z0_reprojection = 0;
  double median_reprojection = 0;
};

struct EvalReport {
  std::size_t hypotheses = 0;
  std::vector<SampleRow> rows;
  SampleRow mean;  // field-wise mean over rows
  /// Median over all (sample, hypothesis) pairs of the reprojection L1 and
  /// median over samples of the z0 reprojection L1.
  double median_hyp_reprojection = 0.0;
  double median_z0_reprojection = 0.0;
  /// Mean over joints whose fitted std exceeds sigma_t of
  /// (hypothesis std in px) / (fitted std), per axis.
  double uncertain_ratio_x = 0.0, uncertain_ratio_y = 0.0;
  std::size_t uncertain_joints = 0;
  /// Mean hypothesis std in px of the remaining joints, per axis.
  double certain_std_x = 0.0, certain_std_y = 0.0;
  /// Mean per-joint spread (x, y, depth), mm, J entries.
  std::vector<std::array<double, 3>> joint_spread;
  std::vector<std::size_t> m_grid;
  std::vector<double> flow_best_of_m;
  std::vector<double> baseline_best_of_m;  // empty without the baseline
  double baseline_depth_sigma = 0.0;
};

EvalReport evaluate(const HypothesisFile& hyps, const std::vector<data::Sample>& samples, const Skeleton& skeleton,
                    const EvalOptions& options);

std::string per_sample_csv(const EvalReport& report);
std::string error_vs_m_csv(const EvalReport& report);
std::string spread_csv(const EvalReport& report);
std::string summary_text(const EvalReport& report);

}  // namespace ambiflow::eval
