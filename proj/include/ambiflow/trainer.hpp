#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ambiflow/data.hpp"
#include "ambiflow/flow.hpp"
#include "ambiflow/losses.hpp"
#include "ambiflow/nd/optim.hpp"
#include "ambiflow/posedisc.hpp"
#include "ambiflow/skeleton.hpp"

namespace ambiflow::trainer {

struct TrainConfig {
  std::size_t epochs = 155;
  std::size_t batch = 64;
  double lr = 1e-4;
  /// Zero-based epoch from which the learning rate is halved.
  std::size_t lr_halve_epoch = 150;
  double beta1 = 0.5;
  double beta2 = 0.9;
  /// Inverse passes per training sample (hypotheses for L_MB and L_HM).
  std::size_t hypotheses = 200;
  double clip = 15.0;
  double lambda_gp = 10.0;
  /// Run the discriminator update (phase 5).
  bool train_disc = true;
  losses::LossWeights weights;
  std::uint64_t seed = 0;
  /// Write a checkpoint every this many epochs (0 disables).
  std::size_t checkpoint_every = 1;

  void validate() const;
  double learning_rate(std::size_t epoch) const;
};

/// Loss values of one step; undefined parts are reported as 0.
struct StepReport {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double lr = 0.0;
  double l2d = 0.0, gen = 0.0, mmd = 0.0, det = 0.0, mb = 0.0, hm = 0.0;
  double total = 0.0;
  double disc_total = 0.0, disc_wasserstein = 0.0, disc_penalty = 0.0;
  /// Mean and bound of all z drawn for the inverse passes.
  double z_mean = 0.0;
  std::size_t z_count = 0;

  bool operator==(const StepReport&) const = default;
};

std::string history_csv_header();
std::string history_csv_row(const StepReport& r);
std::string history_csv(const std::vector<StepReport>& history);

/// Flow, discriminator and both optimizers, advanced one step at a time.
class Trainer {
 public:
  Trainer(const Skeleton& skeleton, flow::FlowConfig flow_config, posedisc::DiscriminatorConfig disc_config,
          TrainConfig config);

  /// One iteration on a normalized batch: forward path with L_2D and L_MMD,
  /// L inverse passes with L_gen, L_MB and L_HM, one inverse pass from the
  /// forward latents with L_det, clipped flow update, then one critic update.
  StepReport step(const data::Prepared& batch);

  /// Runs the remaining epochs over `data`. `on_epoch` is called after every
  /// epoch (after the checkpoint, if any).
  void train(const data::Prepared& data, const std::optional<std::filesystem::path>& checkpoint = std::nullopt,
             const std::function<void(const Trainer&)>& on_epoch = {});

  const flow::FlowModel& flow() const { return flow_; }
  const posedisc::Discriminator& disc() const { return disc_; }
  const TrainConfig& config() const { return config_; }
  const std::vector<StepReport>& history() const { return history_; }
  std::size_t epoch() const { return epoch_; }
  std::size_t global_step() const { return step_; }

  /// Model, optimizer moments, counters and history.
  void save_checkpoint(const std::filesystem::path& path) const;
  static Trainer load_checkpoint(const std::filesystem::path& path, const Skeleton& skeleton, TrainConfig config);

 private:
  const Skeleton* skeleton_;
  TrainConfig config_;
  flow::FlowModel flow_;
  posedisc::Discriminator disc_;
  nd::Adam flow_opt_;
  nd::Adam disc_opt_;
  std::size_t epoch_ = 0;
  std::size_t step_ = 0;
  std::vector<StepReport> history_;
};

/// Batch order of one epoch; a pure function of (seed, epoch, n).
std::vector<std::size_t> epoch_order(std::uint64_t seed, std::size_t epoch, std::size_t n);

struct SmokeReport {
  double total_initial = 0.0;  // first step, before any update
  double total_final = 0.0;    // mean over the last 20 steps
  double l2d_initial = 0.0;
  double l2d_final = 0.0;
  double z0_mpjpe_mm = 0.0;
  double median_hyp_reprojection = 0.0;
  double median_z0_reprojection = 0.0;
};

/// Trains on a tiny dataset for `steps` full-batch steps and measures how far
/// the losses fall.
SmokeReport overfit_smoke(const std::vector<data::Sample>& samples, const Skeleton& skeleton,
                          const flow::FlowConfig& flow_config, const TrainConfig& config, std::size_t steps);

/// L1 distance (normalized 2D units) between the detections and the
/// orthographic reprojection of each pose, per pose row. Poses are
/// mean-centred metres; `norm` holds the detection normalization.
std::vector<double> reprojection_l1(const nd::Tensor& poses, std::span<const double> y_normalized,
                                    const data::Norm2D& norm, const data::Camera& camera);

}  // namespace ambiflow::trainer
