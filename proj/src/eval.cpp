#include "ambiflow/eval.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "ambiflow/binio.hpp"
#include "ambiflow/error.hpp"
#include "ambiflow/metrics.hpp"
#include "ambiflow/model_io.hpp"
#include "ambiflow/parallel.hpp"
#include "ambiflow/trainer.hpp"

namespace ambiflow::eval {

namespace {

nd::Tensor row_of(const nd::Tensor& t, std::size_t r) {
  return nd::Tensor::matrix(1, t.cols(), {t.data() + r * t.cols(), t.data() + (r + 1) * t.cols()});
}

/// Rows [begin, begin + count) converted to hip-centred mm.
nd::Tensor to_mm_hip(const nd::Tensor& poses, std::size_t begin, std::size_t count) {
  const std::size_t d = poses.cols();
  nd::Tensor out = nd::Tensor::zeros(count, d);
  for (std::size_t r = 0; r < count; ++r) {
    std::vector<double> p(poses.data() + (begin + r) * d, poses.data() + (begin + r + 1) * d);
    for (double& v : p) v *= 1000.0;
    const auto c = metrics::hip_center(p);
    std::copy(c.begin(), c.end(), out.data() + r * d);
  }
  return out;
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double hi = v[mid];
  if (v.size() % 2 == 1) return hi;
  return 0.5 * (hi + *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid)));
}

std::span<const double> row_span(const nd::Tensor& t, std::size_t r) { return {t.data() + r * t.cols(), t.cols()}; }

/// Best MPJPE among the first m rows, for every m in the grid.
std::vector<double> best_prefix(const nd::Tensor& hyps, std::span<const double> truth,
                                const std::vector<std::size_t>& grid) {
  std::vector<double> out;
  double best = std::numeric_limits<double>::infinity();
  std::size_t done = 0;
  for (std::size_t m : grid) {
    for (; done < std::min(m, hyps.rows()); ++done) best = std::min(best, metrics::mpjpe(row_span(hyps, done), truth));
    out.push_back(best);
  }
  return out;
}

}  // namespace

HypothesisFile sample_dataset(const flow::FlowModel& model, const data::Prepared& prepared, std::size_t count,
                              std::uint64_t seed, bool force_z0) {
  if (count == 0) throw InvalidArgument("sample: M must be at least 1");
  HypothesisFile out;
  out.joints = model.config().joints;
  out.count = count;
  out.forced_z0 = force_z0;
  out.samples.resize(prepared.size());
  parallel_for(prepared.size(), [&](std::size_t i) {
    Rng rng(seed, "hypotheses", i);
    const auto set =
        flow::sample_hypotheses(model, row_of(prepared.y, i), row_of(prepared.condition, i), count, rng, true, force_z0);
    nd::Tensor rows = nd::Tensor::zeros(count + 1, set.poses.cols());
    std::copy(set.z0_pose.values().begin(), set.z0_pose.values().end(), rows.data());
    std::copy(set.poses.values().begin(), set.poses.values().end(), rows.data() + set.poses.cols());
    out.samples[i] = std::move(rows);
  });
  return out;
}

void write_hypotheses(const std::filesystem::path& path, const HypothesisFile& file) {
  binio::Writer w;
  w.raw("AFHY");
  w.u32(kHypothesisVersion);
  w.u32(static_cast<std::uint32_t>(file.joints));
  w.u32(static_cast<std::uint32_t>(file.count));
  w.u8(file.forced_z0 ? 1 : 0);
  w.u64(file.samples.size());
  for (const auto& s : file.samples) {
    if (s.rows() != file.count + 1 || s.cols() != 3 * file.joints) throw ShapeError("hypothesis block has wrong shape");
    for (double v : s.values()) w.f64(v);
  }
  w.u32(binio::crc32(w.bytes()));
  binio::write_file(path, w.bytes());
}

HypothesisFile read_hypotheses(const std::filesystem::path& path) {
  const auto bytes = binio::read_file(path);
  binio::Reader r(model_io::verified_payload(bytes, "hypotheses"));
  if (r.raw(4) != "AFHY") throw FormatError("hypotheses: bad magic");
  const std::uint32_t version = r.u32();
  if (version != kHypothesisVersion) {
    throw VersionError("hypotheses: unsupported format version " + std::to_string(version));
  }
  HypothesisFile f;
  f.joints = r.u32();
  f.count = r.u32();
  f.forced_z0 = r.u8() != 0;
  const std::uint64_t n = r.u64();
  const std::size_t per = (f.count + 1) * 3 * f.joints;
  if (per == 0 || n * per * 8 != r.remaining()) throw FormatError("hypotheses: size does not match the header");
  f.samples.resize(static_cast<std::size_t>(n));
  for (auto& s : f.samples) {
    s = nd::Tensor::zeros(f.count + 1, 3 * f.joints);
    for (double& v : s.storage()) v = r.f64();
  }
  return f;
}

EvalReport evaluate(const HypothesisFile& hyps, const std::vector<data::Sample>& samples, const Skeleton& skeleton,
                    const EvalOptions& options) {
  if (hyps.samples.size() != samples.size()) {
    throw InvalidArgument("eval: hypothesis file has " + std::to_string(hyps.samples.size()) +
                          " samples, dataset has " + std::to_string(samples.size()));
  }
  if (hyps.joints != skeleton.joints()) throw InvalidArgument("eval: joint count mismatch");
  const std::size_t j = skeleton.joints(), m = hyps.count;

  std::vector<std::size_t> selected;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!options.ambiguous_only || heatmap::is_ambiguous(samples[i].gaussians, options.ambiguous_threshold)) {
      selected.push_back(i);
    }
  }

  EvalReport rep;
  rep.hypotheses = m;
  for (auto g : options.m_grid)
    if (g >= 1 && g <= m) rep.m_grid.push_back(g);
  rep.rows.resize(selected.size());
  std::vector<std::vector<double>> reproj(selected.size());
  std::vector<std::vector<double>> flow_curve(selected.size());
  std::vector<metrics::Spread> spreads(selected.size());
  std::vector<nd::Tensor> z0s(selected.size());
  std::vector<std::vector<double>> truths(selected.size());

  parallel_for(selected.size(), [&](std::size_t s) {
    const std::size_t idx = selected[s];
    const data::Sample& sample = samples[idx];
    const nd::Tensor& block = hyps.samples[idx];
    std::vector<double> truth = data::normalize_3d(sample.pose3d);
    for (double& v : truth) v *= 1000.0;
    truth = metrics::hip_center(truth);
    const nd::Tensor z0 = to_mm_hip(block, 0, 1);
    const nd::Tensor set = to_mm_hip(block, 1, m);
    const auto z0v = row_span(z0, 0);

    SampleRow& row = rep.rows[s];
    row.index = idx;
    row.ambiguous = heatmap::is_ambiguous(sample.gaussians, options.ambiguous_threshold);
    row.z0_mpjpe = metrics::mpjpe(z0v, truth);
    row.z0_pmpjpe = metrics::pmpjpe(z0v, truth, options.procrustes_scale);
    row.z0_pck = metrics::pck(z0v, truth, options.pck_threshold);
    row.z0_cps = metrics::cps(z0v, truth);
    row.best_mpjpe = row.worst_mpjpe = metrics::mpjpe(row_span(set, 0), truth);
    row.best_pmpjpe = row.worst_pmpjpe = metrics::pmpjpe(row_span(set, 0), truth, options.procrustes_scale);
    row.best_pck = metrics::pck(row_span(set, 0), truth, options.pck_threshold);
    row.best_cps = metrics::cps(row_span(set, 0), truth);
    for (std::size_t h = 1; h < m; ++h) {
      const auto p = row_span(set, h);
      const double e = metrics::mpjpe(p, truth);
      const double pe = metrics::pmpjpe(p, truth, options.procrustes_scale);
      row.best_mpjpe = std::min(row.best_mpjpe, e);
      row.worst_mpjpe = std::max(row.worst_mpjpe, e);
      row.best_pmpjpe = std::min(row.best_pmpjpe, pe);
      row.worst_pmpjpe = std::max(row.worst_pmpjpe, pe);
      row.best_pck = std::max(row.best_pck, metrics::pck(p, truth, options.pck_threshold));
      row.best_cps = std::max(row.best_cps, metrics::cps(p, truth));
    }
    if (m >= 2) {
      spreads[s] = metrics::hypothesis_spread(set);
      const Eigen::Vector3d ms = spreads[s].mean_stddev();
      row.spread_x = ms[0];
      row.spread_y = ms[1];
      row.spread_depth = ms[2];
    }
    data::Norm2D norm;
    const auto y = data::network_input_2d(sample.detections(), sample.camera, &norm);
    nd::Tensor raw_set = nd::Tensor::zeros(m, 3 * j);
    std::copy(block.data() + 3 * j, block.data() + block.size(), raw_set.data());
    reproj[s] = trainer::reprojection_l1(raw_set, y, norm, sample.camera);
    row.median_reprojection = median(reproj[s]);
    row.z0_reprojection = trainer::reprojection_l1(row_of(block, 0), y, norm, sample.camera)[0];
    flow_curve[s] = best_prefix(set, truth, rep.m_grid);
    z0s[s] = z0;
    truths[s] = std::move(truth);
  });

  const double n = static_cast<double>(selected.size());
  if (!selected.empty()) {
    auto& a = rep.mean;
    for (const auto& r : rep.rows) {
      for (auto [dst, src] : {std::pair{&a.z0_mpjpe, r.z0_mpjpe}, {&a.z0_pmpjpe, r.z0_pmpjpe}, {&a.z0_pck, r.z0_pck},
                              {&a.z0_cps, r.z0_cps}, {&a.best_mpjpe, r.best_mpjpe}, {&a.best_pmpjpe, r.best_pmpjpe},
                              {&a.best_pck, r.best_pck}, {&a.best_cps, r.best_cps}, {&a.worst_mpjpe, r.worst_mpjpe},
                              {&a.worst_pmpjpe, r.worst_pmpjpe}, {&a.spread_x, r.spread_x},
                              {&a.spread_y, r.spread_y}, {&a.spread_depth, r.spread_depth},
                              {&a.z0_reprojection, r.z0_reprojection},
                              {&a.median_reprojection, r.median_reprojection}})
        *dst += src / n;
    }
    std::vector<double> all, z0r;
    for (std::size_t s = 0; s < selected.size(); ++s) {
      all.insert(all.end(), reproj[s].begin(), reproj[s].end());
      z0r.push_back(rep.rows[s].z0_reprojection);
    }
    rep.median_hyp_reprojection = median(all);
    rep.median_z0_reprojection = median(z0r);

    rep.flow_best_of_m.assign(rep.m_grid.size(), 0.0);
    for (const auto& c : flow_curve)
      for (std::size_t g = 0; g < c.size(); ++g) rep.flow_best_of_m[g] += c[g] / n;

    if (m >= 2) {
      rep.joint_spread.assign(j, {0.0, 0.0, 0.0});
      double rx = 0, ry = 0, cx = 0, cy = 0;
      std::size_t nu = 0, nc = 0;
      for (std::size_t s = 0; s < selected.size(); ++s) {
        const auto& gs = samples[selected[s]].gaussians;
        for (std::size_t k = 0; k < j; ++k) {
          const Eigen::Vector3d sd = spreads[s].stddev[k];
          for (int a2 = 0; a2 < 3; ++a2) rep.joint_spread[k][static_cast<std::size_t>(a2)] += sd[a2] / n;
          const double px = sd[0] / options.mm_per_px, py = sd[1] / options.mm_per_px;
          if (gs[k].sigma_x() > options.sigma_t || gs[k].sigma_y() > options.sigma_t) {
            rx += px / gs[k].sigma_x();
            ry += py / gs[k].sigma_y();
            ++nu;
          } else {
            cx += px;
            cy += py;
            ++nc;
          }
        }
      }
      rep.uncertain_joints = nu;
      if (nu) {
        rep.uncertain_ratio_x = rx / static_cast<double>(nu);
        rep.uncertain_ratio_y = ry / static_cast<double>(nu);
      }
      if (nc) {
        rep.certain_std_x = cx / static_cast<double>(nc);
        rep.certain_std_y = cy / static_cast<double>(nc);
      }
    }

    if (options.noise_baseline) {
      rep.baseline_depth_sigma = options.noise_depth_sigma >= 0.0 ? options.noise_depth_sigma : rep.mean.spread_depth;
      std::vector<std::size_t> grid;
      for (auto g : options.m_grid)
        if (g >= 1 && g <= options.noise_samples) grid.push_back(g);
      rep.baseline_best_of_m.assign(grid.size(), 0.0);
      std::vector<std::vector<double>> curves(selected.size());
      parallel_for(selected.size(), [&](std::size_t s) {
        Rng rng(options.seed, "noise-baseline", selected[s]);
        const auto base = metrics::noise_baseline(row_span(z0s[s], 0), samples[selected[s]].gaussians,
                                                  options.noise_samples, rep.baseline_depth_sigma, rng,
                                                  options.mm_per_px);
        curves[s] = best_prefix(base, truths[s], grid);
      });
      for (const auto& c : curves)
        for (std::size_t g = 0; g < c.size(); ++g) rep.baseline_best_of_m[g] += c[g] / n;
    }
  }
  return rep;
}

std::string per_sample_csv(const EvalReport& report) {
  std::string out =
      "sample,ambiguous,z0_mpjpe,z0_pmpjpe,z0_pck,z0_cps,best_mpjpe,best_pmpjpe,best_pck,best_cps,worst_mpjpe,"
      "worst_pmpjpe,spread_x,spread_y,spread_depth,z0_reprojection,median_reprojection\n";
  for (const auto& r : report.rows) {
    out += std::to_string(r.index) + "," + (r.ambiguous ? "1" : "0");
    for (double v : {r.z0_mpjpe, r.z0_pmpjpe, r.z0_pck, r.z0_cps, r.best_mpjpe, r.best_pmpjpe, r.best_pck, r.best_cps,
                     r.worst_mpjpe, r.worst_pmpjpe, r.spread_x, r.spread_y, r.spread_depth, r.z0_reprojection,
                     r.median_reprojection})
      out += "," + binio::format_double(v);
    out += "\n";
  }
  return out;
}

std::string error_vs_m_csv(const EvalReport& report) {
  const bool base = !report.baseline_best_of_m.empty();
  std::string out = base ? "m,flow_best_mpjpe,baseline_best_mpjpe\n" : "m,flow_best_mpjpe\n";
  for (std::size_t g = 0; g < report.m_grid.size(); ++g) {
    out += std::to_string(report.m_grid[g]) + "," +
           (g < report.flow_best_of_m.size() ? binio::format_double(report.flow_best_of_m[g]) : std::string("nan"));
    if (base) {
      out += "," + (g < report.baseline_best_of_m.size() ? binio::format_double(report.baseline_best_of_m[g])
                                                         : std::string("nan"));
    }
    out += "\n";
  }
  return out;
}

std::string spread_csv(const EvalReport& report) {
  std::string out = "joint,std_x,std_y,std_depth\n";
  for (std::size_t k = 0; k < report.joint_spread.size(); ++k) {
    out += std::to_string(k);
    for (double v : report.joint_spread[k]) out += "," + binio::format_double(v);
    out += "\n";
  }
  return out;
}

std::string summary_text(const EvalReport& r) {
  std::ostringstream o;
  o.setf(std::ios::fixed);
  o.precision(3);
  const auto& a = r.mean;
  o << "samples " << r.rows.size() << "\n"
    << "hypotheses " << r.hypotheses << "\n"
    << "z0 mpjpe_mm " << a.z0_mpjpe << " pmpjpe_mm " << a.z0_pmpjpe << " pck " << a.z0_pck << " cps_mm " << a.z0_cps
    << "\n"
    << "best mpjpe_mm " << a.best_mpjpe << " pmpjpe_mm " << a.best_pmpjpe << " pck " << a.best_pck << " cps_mm "
    << a.best_cps << "\n"
    << "worst mpjpe_mm " << a.worst_mpjpe << " pmpjpe_mm " << a.worst_pmpjpe << "\n"
    << "spread_mm x " << a.spread_x << " y " << a.spread_y << " depth " << a.spread_depth << "\n"
    << "reprojection_l1 median_hypothesis " << r.median_hyp_reprojection << " median_z0 " << r.median_z0_reprojection
    << "\n"
    << "uncertain_joints " << r.uncertain_joints << " std_ratio x " << r.uncertain_ratio_x << " y "
    << r.uncertain_ratio_y << "\n"
    << "certain_joint_std_px x " << r.certain_std_x << " y " << r.certain_std_y << "\n";
  if (!r.baseline_best_of_m.empty()) {
    o << "noise_baseline depth_sigma_mm " << r.baseline_depth_sigma << " best_mpjpe_mm "
      << r.baseline_best_of_m.back() << "\n";
  }
  if (r.rows.empty()) o << "warning: empty evaluation subset\n";
  return o.str();
}

}  // namespace ambiflow::eval
