#include "ambiflow/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "ambiflow/binio.hpp"
#include "ambiflow/error.hpp"
#include "ambiflow/metrics.hpp"
#include "ambiflow/model_io.hpp"

namespace ambiflow::trainer {

using nd::Var;

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;

nd::Tensor normal_tensor(std::size_t rows, std::size_t cols, Rng rng) {
  nd::Tensor t = nd::Tensor::zeros(rows, cols);
  for (double& v : t.values()) v = rng.normal();
  return t;
}

void require_finite(const Var& part, const char* name) {
  if (part.defined() && !std::isfinite(part.item())) {
    throw NumericError(std::string("training step produced a non-finite value in loss term ") + name);
  }
}

/// Runs `f`, prefixing any numeric failure with the loss term it belongs to.
template <class F>
Var term(const char* name, F&& f) {
  try {
    return f();
  } catch (const NumericError& e) {
    throw NumericError(std::string("loss term ") + name + ": " + e.what());
  }
}

double value_or_zero(const Var& v) { return v.defined() ? v.item() : 0.0; }

void copy_values(const std::vector<Var>& from, const std::vector<Var>& to) {
  for (std::size_t i = 0; i < from.size(); ++i) {
    Var dst = to[i];
    dst.mutable_value() = from[i].value();
  }
}

void encode_adam(binio::Writer& w, const nd::Adam& opt) {
  w.u64(opt.steps());
  for (std::size_t i = 0; i < opt.params().size(); ++i) {
    model_io::encode_tensor(w, opt.first_moments()[i]);
    model_io::encode_tensor(w, opt.second_moments()[i]);
  }
}

void decode_adam(binio::Reader& r, nd::Adam& opt) {
  const std::uint64_t t = r.u64();
  std::vector<nd::Tensor> m, v;
  for (std::size_t i = 0; i < opt.params().size(); ++i) {
    m.push_back(model_io::decode_tensor(r));
    v.push_back(model_io::decode_tensor(r));
  }
  opt.restore(t, std::move(m), std::move(v));
}

constexpr std::size_t kReportDoubles = 12;

void encode_report(binio::Writer& w, const StepReport& s) {
  w.u64(s.epoch);
  w.u64(s.step);
  w.u64(s.z_count);
  for (double v : {s.lr, s.l2d, s.gen, s.mmd, s.det, s.mb, s.hm, s.total, s.disc_total, s.disc_wasserstein,
                   s.disc_penalty, s.z_mean})
    w.f64(v);
}

StepReport decode_report(binio::Reader& r) {
  StepReport s;
  s.epoch = r.u64();
  s.step = r.u64();
  s.z_count = r.u64();
  double* fields[kReportDoubles] = {&s.lr,  &s.l2d, &s.gen,        &s.mmd,        &s.det,          &s.mb,
                                    &s.hm,  &s.total, &s.disc_total, &s.disc_wasserstein, &s.disc_penalty, &s.z_mean};
  for (double* f : fields) *f = r.f64();
  return s;
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("epochs must be > 0");
  if (batch < 2) throw ConfigError("batch must be >= 2 (the MMD estimator needs two samples)");
  if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("Adam betas must lie in [0, 1)");
  if (hypotheses < 2) throw ConfigError("hypotheses must be >= 2");
  if (!(clip > 0.0)) throw ConfigError("clip must be > 0");
  if (lambda_gp < 0.0) throw ConfigError("lambda_gp must be >= 0");
  weights.validate();
  if (weights.k > hypotheses) throw ConfigError("k must not exceed the number of hypotheses");
}

double TrainConfig::learning_rate(std::size_t epoch) const { return epoch >= lr_halve_epoch ? 0.5 * lr : lr; }

std::string history_csv_header() {
  return "epoch,step,lr,l2d,gen,mmd,det,mb,hm,total,disc_total,disc_wasserstein,disc_penalty,z_mean\n";
}

std::string history_csv_row(const StepReport& r) {
  std::string s = std::to_string(r.epoch) + "," + std::to_string(r.step);
  for (double v : {r.lr, r.l2d, r.gen, r.mmd, r.det, r.mb, r.hm, r.total, r.disc_total, r.disc_wasserstein,
                   r.disc_penalty, r.z_mean})
    s += "," + binio::format_double(v);
  return s + "\n";
}

std::string history_csv(const std::vector<StepReport>& history) {
  std::string out = history_csv_header();
  for (const auto& r : history) out += history_csv_row(r);
  return out;
}

std::vector<std::size_t> epoch_order(std::uint64_t seed, std::size_t epoch, std::size_t n) {
  Rng rng(seed, "epoch-shuffle", epoch);
  return flow::random_permutation(n, rng);
}

Trainer::Trainer(const Skeleton& skeleton, flow::FlowConfig flow_config, posedisc::DiscriminatorConfig disc_config,
                 TrainConfig config)
    : skeleton_(&skeleton),
      config_(config),
      flow_((config.validate(), flow_config)),
      disc_(skeleton, disc_config),
      flow_opt_(flow_.params(), {config.lr, config.beta1, config.beta2}),
      disc_opt_(disc_.params(), {config.lr, config.beta1, config.beta2}) {
  if (flow_config.joints != skeleton.joints()) throw ConfigError("flow joint count does not match the skeleton");
}

StepReport Trainer::step(const data::Prepared& batch) {
  const std::size_t n = batch.size();
  if (n < 2) throw InvalidArgument("train_step: batch needs at least two samples");
  const auto& w = config_.weights;
  const std::size_t jz = flow_.config().z_dim();
  const std::size_t l = config_.hypotheses;
  const double lr = config_.learning_rate(epoch_);
  flow_opt_.set_lr(lr);
  disc_opt_.set_lr(lr);
  Rng rng(config_.seed, "train-step", step_);
  const posedisc::Critic critic = [this](const Var& p) { return disc_(p); };

  StepReport rep;
  rep.epoch = epoch_;
  rep.step = step_;
  rep.lr = lr;

  Var x(batch.x), y(batch.y), cond(batch.condition);
  Var c = term("condition encoder", [&] { return flow_.encode(cond); });
  losses::LossParts parts;

  // (1) forward path
  flow::FlowModel::ForwardResult fwd;
  parts.l2d = term("L_2D", [&] {
    fwd = flow_.forward_encoded(x, c);
    return losses::l2d(y, fwd.y);
  });
  if (w.mmd != 0.0) {
    parts.mmd = term("L_MMD", [&] {
      Var target = nd::concat_cols({y, Var(normal_tensor(n, jz, rng.derive("mmd-latent")))});
      Var produced = nd::concat_cols({nd::stop_gradient(fwd.y), fwd.z});
      return losses::mmd_unbiased(target, produced);
    });
  }

  // (2) L inverse passes from random latents
  if (w.gen != 0.0 || w.mb != 0.0 || w.hm != 0.0) {
    nd::Tensor z = normal_tensor(n * l, jz, rng.derive("hypothesis-latent"));
    double zs = 0.0;
    for (double v : z.values()) zs += v;
    rep.z_count = z.size();
    rep.z_mean = zs / static_cast<double>(z.size());
    Var hyps = term("inverse path", [&] { return flow_.inverse_encoded(nd::repeat_rows(y, l), Var(std::move(z)), c, l); });
    if (w.gen != 0.0) parts.gen = term("L_gen", [&] { return posedisc::gen_loss(critic, hyps); });
    if (w.mb != 0.0) parts.mb = term("L_MB", [&] { return losses::l_mb_batch(hyps, x, l, w.k); });
    if (w.hm != 0.0) parts.hm = term("L_HM", [&] { return losses::l_hm_batch(hyps, l, batch.covariances(), w); });
  }

  // (3) inverse pass from the forward latents
  if (w.det != 0.0) parts.det = term("L_det", [&] { return losses::l_det(x, flow_.inverse_encoded(y, fwd.z, c)); });

  require_finite(parts.l2d, "L_2D");
  require_finite(parts.mmd, "L_MMD");
  require_finite(parts.gen, "L_gen");
  require_finite(parts.mb, "L_MB");
  require_finite(parts.hm, "L_HM");
  require_finite(parts.det, "L_det");
  Var total = losses::total_nf_loss(parts, w);
  require_finite(total, "L_NF");

  // (4) flow update from the gradients of both directions
  std::vector<Var> flow_params = flow_opt_.params();
  std::vector<Var> disc_params = disc_opt_.params();
  nd::zero_grads(flow_params);
  nd::backward(total);
  nd::clip_gradients(flow_params, -config_.clip, config_.clip);
  flow_opt_.step();
  nd::zero_grads(disc_params);

  // (5) critic update on fresh fakes
  if (config_.train_disc) {
    nd::Tensor fake;
    {
      nd::NoGradGuard no_grad;
      fake = flow_.inverse(y, Var(normal_tensor(n, jz, rng.derive("critic-latent"))), cond).value();
    }
    Rng gp_rng = rng.derive("critic-mix");
    const auto dl = posedisc::disc_loss(critic, batch.x, fake, config_.lambda_gp, gp_rng);
    require_finite(dl.total, "critic");
    nd::backward(dl.total);
    nd::clip_gradients(disc_params, -config_.clip, config_.clip);
    disc_opt_.step();
    nd::zero_grads(disc_params);
    rep.disc_total = dl.total.item();
    rep.disc_wasserstein = dl.wasserstein.item();
    rep.disc_penalty = dl.penalty.item();
  }
  nd::zero_grads(flow_params);

  rep.l2d = value_or_zero(parts.l2d);
  rep.gen = value_or_zero(parts.gen);
  rep.mmd = value_or_zero(parts.mmd);
  rep.det = value_or_zero(parts.det);
  rep.mb = value_or_zero(parts.mb);
  rep.hm = value_or_zero(parts.hm);
  rep.total = total.item();
  ++step_;
  history_.push_back(rep);
  return rep;
}

void Trainer::train(const data::Prepared& data, const std::optional<std::filesystem::path>& checkpoint,
                    const std::function<void(const Trainer&)>& on_epoch) {
  if (data.size() < 2) throw InvalidArgument("train: dataset needs at least two samples");
  while (epoch_ < config_.epochs) {
    const auto order = epoch_order(config_.seed, epoch_, data.size());
    for (std::size_t start = 0; start < order.size(); start += config_.batch) {
      const std::size_t count = std::min(config_.batch, order.size() - start);
      if (count < 2) continue;
      step(data.subset(std::span<const std::size_t>(order).subspan(start, count)));
    }
    ++epoch_;
    if (checkpoint && config_.checkpoint_every > 0 &&
        (epoch_ % config_.checkpoint_every == 0 || epoch_ == config_.epochs)) {
      save_checkpoint(*checkpoint);
    }
    if (on_epoch) on_epoch(*this);
  }
}

void Trainer::save_checkpoint(const std::filesystem::path& path) const {
  binio::Writer w;
  w.raw("AFCK");
  w.u32(kCheckpointVersion);
  w.u64(config_.seed);
  w.u64(epoch_);
  w.u64(step_);
  model_io::encode_model(w, flow_, &disc_);
  encode_adam(w, flow_opt_);
  encode_adam(w, disc_opt_);
  w.u64(history_.size());
  for (const auto& r : history_) encode_report(w, r);
  w.u32(binio::crc32(w.bytes()));
  binio::write_file(path, w.bytes());
}

Trainer Trainer::load_checkpoint(const std::filesystem::path& path, const Skeleton& skeleton, TrainConfig config) {
  const auto bytes = binio::read_file(path);
  binio::Reader r(model_io::verified_payload(bytes, "checkpoint"));
  if (r.raw(4) != "AFCK") throw FormatError("checkpoint: bad magic");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw VersionError("checkpoint: unsupported format version " + std::to_string(version));
  }
  const std::uint64_t seed = r.u64();
  if (seed != config.seed) throw ConfigError("checkpoint was written with a different seed");
  const std::size_t epoch = r.u64();
  const std::size_t step = r.u64();
  model_io::Model m = model_io::decode_model(r, skeleton);
  if (!m.disc) throw FormatError("checkpoint: discriminator weights missing");
  Trainer t(skeleton, m.flow.config(), m.disc->config(), config);
  t.flow_.set_permutations(m.flow.permutations());
  copy_values(m.flow.params(), t.flow_.params());
  copy_values(m.disc->params(), t.disc_.params());
  decode_adam(r, t.flow_opt_);
  decode_adam(r, t.disc_opt_);
  const std::uint64_t rows = r.u64();
  for (std::uint64_t i = 0; i < rows; ++i) t.history_.push_back(decode_report(r));
  if (r.remaining() != 0) throw FormatError("checkpoint: trailing bytes");
  t.epoch_ = epoch;
  t.step_ = step;
  return t;
}

std::vector<double> reprojection_l1(const nd::Tensor& poses, std::span<const double> y_normalized,
                                    const data::Norm2D& norm, const data::Camera& camera) {
  if (!camera.orthographic) throw InvalidArgument("reprojection_l1: only orthographic cameras are supported");
  const std::size_t j = y_normalized.size() / 2;
  if (poses.cols() != 3 * j) throw ShapeError("reprojection_l1: pose/detection joint count mismatch");
  std::vector<double> out(poses.rows());
  for (std::size_t r = 0; r < poses.rows(); ++r) {
    double s = 0.0;
    for (std::size_t i = 0; i < j; ++i) {
      s += std::abs(camera.focal * poses(r, 3 * i) / norm.std - y_normalized[2 * i]);
      s += std::abs(camera.focal * poses(r, 3 * i + 1) / norm.std - y_normalized[2 * i + 1]);
    }
    out[r] = s;
  }
  return out;
}

namespace {
double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double hi = v[mid];
  if (v.size() % 2 == 1) return hi;
  return 0.5 * (hi + *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid)));
}

double window_mean(const std::vector<StepReport>& h, std::size_t begin, std::size_t end, double StepReport::*field) {
  end = std::min(end, h.size());
  begin = std::min(begin, end);
  if (begin == end) return 0.0;
  double s = 0.0;
  for (std::size_t i = begin; i < end; ++i) s += h[i].*field;
  return s / static_cast<double>(end - begin);
}
}  // namespace

SmokeReport overfit_smoke(const std::vector<data::Sample>& samples, const Skeleton& skeleton,
                          const flow::FlowConfig& flow_config, const TrainConfig& config, std::size_t steps) {
  const data::Prepared prepared = data::prepare(samples, skeleton);
  Trainer t(skeleton, flow_config, {}, config);
  for (std::size_t s = 0; s < steps; ++s) t.step(prepared);

  SmokeReport rep;
  const auto& h = t.history();
  rep.total_initial = window_mean(h, 0, 1, &StepReport::total);
  rep.total_final = window_mean(h, h.size() >= 20 ? h.size() - 20 : 0, h.size(), &StepReport::total);
  rep.l2d_initial = window_mean(h, 0, 1, &StepReport::l2d);
  rep.l2d_final = window_mean(h, h.size() >= 20 ? h.size() - 20 : 0, h.size(), &StepReport::l2d);

  Rng rng(config.seed, "smoke-eval");
  std::vector<double> hyp_err, z0_err;
  double mpjpe_sum = 0.0;
  const std::size_t dx = prepared.x.cols(), dy = prepared.y.cols(), dc = prepared.condition.cols();
  for (std::size_t i = 0; i < prepared.size(); ++i) {
    const nd::Tensor y = nd::Tensor::matrix(1, dy, {prepared.y.data() + i * dy, prepared.y.data() + (i + 1) * dy});
    const nd::Tensor c =
        nd::Tensor::matrix(1, dc, {prepared.condition.data() + i * dc, prepared.condition.data() + (i + 1) * dc});
    Rng r = rng.derive("sample", i);
    const auto set = flow::sample_hypotheses(t.flow(), y, c, 50, r);
    const std::span<const double> yv = y.values();
    for (double e : reprojection_l1(set.poses, yv, prepared.norms[i], samples[i].camera)) hyp_err.push_back(e);
    z0_err.push_back(reprojection_l1(set.z0_pose, yv, prepared.norms[i], samples[i].camera)[0]);
    std::vector<double> pred(set.z0_pose.values().begin(), set.z0_pose.values().end());
    std::vector<double> truth(prepared.x.data() + i * dx, prepared.x.data() + (i + 1) * dx);
    for (auto& v : pred) v *= 1000.0;
    for (auto& v : truth) v *= 1000.0;
    mpjpe_sum += metrics::mpjpe(metrics::hip_center(pred), metrics::hip_center(truth));
  }
  rep.z0_mpjpe_mm = mpjpe_sum / static_cast<double>(prepared.size());
  rep.median_hyp_reprojection = median(hyp_err);
  rep.median_z0_reprojection = median(z0_err);
  return rep;
}

}  // namespace ambiflow::trainer
