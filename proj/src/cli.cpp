#include "ambiflow/cli.hpp"

#include <CLI11.hpp>
#include <iostream>

#include "ambiflow/binio.hpp"
#include "ambiflow/data.hpp"
#include "ambiflow/error.hpp"
#include "ambiflow/eval.hpp"
#include "ambiflow/heatmap.hpp"
#include "ambiflow/model_io.hpp"
#include "ambiflow/parallel.hpp"
#include "ambiflow/plot.hpp"
#include "ambiflow/trainer.hpp"

namespace ambiflow::cli {

namespace {

void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

void ensure_parent(const std::filesystem::path& file) {
  if (file.has_parent_path()) ensure_dir(file.parent_path());
}

void echo_config(const config::Config& cfg, const std::filesystem::path& path) {
  binio::write_text(path, cfg.dump());
}

std::filesystem::path with_suffix(const std::filesystem::path& p, const std::string& suffix) {
  return p.string() + suffix;
}

}  // namespace

config::Config load_config(const Common& common) {
  config::Config cfg;
  if (common.desk) cfg.load_text(config::desk_profile());
  if (common.config_file) cfg.load_file(*common.config_file);
  for (const auto& s : common.overrides) cfg.set_assignment(s);
  if (common.seed) cfg.set("seed", std::to_string(*common.seed));
  return cfg;
}

void cmd_gen(config::Config cfg, const GenArgs& args, std::ostream& out) {
  if (args.occlusion) cfg.set("gen.occlusion", binio::format_double(*args.occlusion));
  if (args.count) cfg.set("gen.count", std::to_string(*args.count));
  const Skeleton skel = Skeleton::human16();
  const data::GenConfig g = cfg.gen_config();
  std::vector<data::Sample> samples(g.count);
  parallel_for(g.count, [&](std::size_t i) { samples[i] = data::generate_sample(g, skel, i); });
  ensure_parent(args.out);
  data::write_dataset(args.out, samples);
  echo_config(cfg, with_suffix(args.out, ".config.txt"));

  std::size_t occluded_samples = 0, occluded_joints = 0, ambiguous = 0;
  for (const auto& s : samples) {
    std::size_t n = 0;
    for (bool o : s.occluded) n += o ? 1 : 0;
    occluded_joints += n;
    occluded_samples += n ? 1 : 0;
    ambiguous += heatmap::is_ambiguous(s.gaussians, cfg.get_double("eval.ambiguous_threshold")) ? 1 : 0;
  }
  out << "samples " << samples.size() << "\n"
      << "joints " << skel.joints() << "\n"
      << "occluded_samples " << occluded_samples << "\n"
      << "occluded_joints " << occluded_joints << "\n"
      << "ambiguous_samples " << ambiguous << "\n";

  if (args.heatmaps && !samples.empty()) {
    heatmap::HeatmapStack stack{g.camera.width, g.camera.height, {}};
    for (const auto& gs : samples.front().gaussians) {
      stack.joints.push_back(heatmap::synthesize_heatmap(gs, stack.width, stack.height));
    }
    ensure_parent(*args.heatmaps);
    heatmap::write_heatmaps(*args.heatmaps, stack);
    out << "heatmaps " << args.heatmaps->string() << "\n";
  }
}

void cmd_train(config::Config cfg, const TrainArgs& args, std::ostream& out) {
  if (args.epochs) cfg.set("train.epochs", std::to_string(*args.epochs));
  const Skeleton skel = Skeleton::human16();
  const auto samples = data::read_dataset(args.data);
  if (samples.size() < 2) throw InvalidArgument("train: dataset needs at least two samples");
  const data::Prepared prepared = data::prepare(samples, skel);
  const trainer::TrainConfig tc = cfg.train_config();
  ensure_dir(args.out_dir);
  echo_config(cfg, args.out_dir / "effective_config.txt");
  const auto checkpoint = args.out_dir / "checkpoint.bin";

  std::optional<trainer::Trainer> t;
  if (args.resume && std::filesystem::exists(checkpoint)) {
    t.emplace(trainer::Trainer::load_checkpoint(checkpoint, skel, tc));
    out << "resumed at epoch " << t->epoch() << "\n";
  } else {
    t.emplace(skel, cfg.flow_config(skel.joints(), prepared.condition.cols()), cfg.disc_config(), tc);
  }
  t->train(prepared, checkpoint, [&](const trainer::Trainer& tr) {
    const auto& last = tr.history().back();
    out << "epoch " << tr.epoch() << " total " << last.total << " l2d " << last.l2d << "\n";
    binio::write_text(args.out_dir / "history.csv", trainer::history_csv(tr.history()));
  });
  if (!t->history().empty() || t->epoch() > 0) {
    binio::write_text(args.out_dir / "history.csv", trainer::history_csv(t->history()));
  }
  model_io::write_model(args.out_dir / "model.bin", t->flow(), &t->disc());
  out << "wrote " << (args.out_dir / "model.bin").string() << "\n";
}

void cmd_sample(config::Config cfg, const SampleArgs& args, std::ostream& out) {
  if (args.count) cfg.set("sample.count", std::to_string(*args.count));
  const std::size_t m = cfg.get_size("sample.count");
  if (m == 0) throw InvalidArgument("sample: M must be at least 1");
  const Skeleton skel = Skeleton::human16();
  const auto model = model_io::read_model(args.model, skel);
  const auto samples = data::read_dataset(args.data);
  const auto prepared = data::prepare(samples, skel);
  const auto file = eval::sample_dataset(model.flow, prepared, m, cfg.seed(), args.z0);
  ensure_parent(args.out);
  eval::write_hypotheses(args.out, file);
  echo_config(cfg, with_suffix(args.out, ".config.txt"));
  out << "samples " << file.samples.size() << "\n"
      << "rows " << file.samples.size() * (m + 1) << "\n";
}

void cmd_eval(const config::Config& cfg, const EvalArgs& args, std::ostream& out) {
  const Skeleton skel = Skeleton::human16();
  const auto hyps = eval::read_hypotheses(args.hypotheses);
  const auto samples = data::read_dataset(args.data);
  eval::EvalOptions o = cfg.eval_options();
  o.ambiguous_only = args.ambiguous_only;
  o.noise_baseline = args.noise_baseline;
  const auto report = eval::evaluate(hyps, samples, skel, o);
  ensure_dir(args.out_dir);
  echo_config(cfg, args.out_dir / "effective_config.txt");
  binio::write_text(args.out_dir / "per_sample.csv", eval::per_sample_csv(report));
  binio::write_text(args.out_dir / "error_vs_m.csv", eval::error_vs_m_csv(report));
  binio::write_text(args.out_dir / "spread.csv", eval::spread_csv(report));
  const std::string summary = eval::summary_text(report);
  binio::write_text(args.out_dir / "summary.txt", summary);
  out << summary;
}

void cmd_fit_heatmaps(const config::Config&, const FitArgs& args, std::ostream& out) {
  const auto stack = heatmap::read_heatmaps(args.heatmaps);
  std::string csv = heatmap::fits_csv_header() + "\n";
  std::size_t warnings = 0;
  for (std::size_t j = 0; j < stack.joints.size(); ++j) {
    const auto [col, row] = heatmap::argmax(stack.joints[j]);
    const auto fit = heatmap::fit_gaussian(
        stack.joints[j], heatmap::Gaussian2D::initial(static_cast<double>(col), static_cast<double>(row)));
    warnings += fit.warning() ? 1 : 0;
    csv += heatmap::fits_csv_row(j, fit) + "\n";
  }
  ensure_parent(args.out);
  binio::write_text(args.out, csv);
  out << "fitted " << stack.joints.size() << " heatmaps, " << warnings << " with warnings\n";
}

void cmd_plot(const config::Config& cfg, const PlotArgs& args, std::ostream& out) {
  if (!args.history && !args.report_dir) throw InvalidArgument("plot: pass --history and/or --report");
  ensure_dir(args.out_dir);
  echo_config(cfg, args.out_dir / "effective_config.txt");
  if (args.history) {
    const auto table = plot::epoch_means(plot::parse_csv(binio::read_text(*args.history)));
    std::vector<plot::Series> series;
    const auto epochs = table.values("epoch");
    for (const char* name : {"l2d", "mmd", "det", "mb", "hm", "gen"}) series.push_back({name, epochs, table.values(name)});
    binio::write_text(args.out_dir / "loss_curves.csv", plot::write_csv(table));
    binio::write_text(args.out_dir / "loss_curves.svg", plot::line_chart_svg("Training losses", "epoch", "loss", series));
    out << "wrote loss_curves.svg\n";
  }
  if (args.report_dir) {
    const auto curve = plot::parse_csv(binio::read_text(*args.report_dir / "error_vs_m.csv"));
    if (curve.rows.empty()) throw InvalidArgument("plot: error-vs-M table is empty");
    std::vector<plot::Series> series{{"flow best-of-M", curve.values("m"), curve.values("flow_best_mpjpe")}};
    if (std::find(curve.header.begin(), curve.header.end(), "baseline_best_mpjpe") != curve.header.end()) {
      series.push_back({"z0 + noise", curve.values("m"), curve.values("baseline_best_mpjpe")});
    }
    binio::write_text(args.out_dir / "error_vs_m.csv", plot::write_csv(curve));
    binio::write_text(args.out_dir / "error_vs_m.svg",
                      plot::line_chart_svg("Best-of-M error", "hypotheses M", "MPJPE (mm)", series));

    const auto spread = plot::parse_csv(binio::read_text(*args.report_dir / "spread.csv"));
    if (spread.rows.empty()) throw InvalidArgument("plot: spread table is empty");
    const Skeleton skel = Skeleton::human16();
    std::vector<std::string> labels;
    for (double j : spread.values("joint")) {
      const auto k = static_cast<std::size_t>(j);
      labels.push_back(k < skel.names.size() ? skel.names[k] : std::to_string(k));
    }
    binio::write_text(args.out_dir / "spread.csv", plot::write_csv(spread));
    binio::write_text(args.out_dir / "spread.svg",
                      plot::bar_chart_svg("Hypothesis std per joint (mm)", labels,
                                          {{"x", {}, spread.values("std_x")},
                                           {"y", {}, spread.values("std_y")},
                                           {"depth", {}, spread.values("std_depth")}}));
    out << "wrote error_vs_m.svg and spread.svg\n";
  }
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Conditional normalizing flow for multi-hypothesis 3D pose lifting"};
  app.require_subcommand(1);
  Common common;
  std::string config_file;
  std::uint64_t seed = 0;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_file, "key=value config file");
    sub->add_option("--set", common.overrides, "override one config key (key=value)")->take_all();
    sub->add_option("--seed", seed, "random seed for every stream");
    sub->add_flag("--desk", common.desk, "apply the single-core desk profile before the config file");
  };

  GenArgs gen;
  double occlusion = 0.0;
  std::size_t count = 0;
  std::string heatmaps;
  auto* g = app.add_subcommand("gen", "generate a synthetic dataset");
  add_common(g);
  g->add_option("--out", gen.out, "dataset file")->required();
  auto* occ_opt = g->add_option("--occlusion", occlusion, "fraction of samples with occluded joints");
  auto* count_opt = g->add_option("--count", count, "number of samples");
  auto* hm_opt = g->add_option("--heatmaps", heatmaps, "also write the first sample's heatmaps");

  TrainArgs train;
  std::size_t epochs = 0;
  auto* t = app.add_subcommand("train", "train the flow and the pose critic");
  add_common(t);
  t->add_option("--data", train.data, "dataset file")->required();
  t->add_option("--out-dir", train.out_dir, "output directory")->required();
  auto* epochs_opt = t->add_option("--epochs", epochs, "number of epochs");
  t->add_flag("--resume", train.resume, "continue from out-dir/checkpoint.bin");

  SampleArgs sample;
  std::size_t m = 0;
  auto* s = app.add_subcommand("sample", "draw pose hypotheses for every sample");
  add_common(s);
  s->add_option("--model", sample.model, "model file")->required();
  s->add_option("--data", sample.data, "dataset file")->required();
  s->add_option("--out", sample.out, "hypothesis file")->required();
  auto* m_opt = s->add_option("-M,--count", m, "hypotheses per sample");
  s->add_flag("--z0", sample.z0, "use the all-zero latent for every hypothesis");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "evaluate hypotheses against ground truth");
  add_common(e);
  e->add_option("--hypotheses", ev.hypotheses, "hypothesis file")->required();
  e->add_option("--data", ev.data, "dataset file")->required();
  e->add_option("--out-dir", ev.out_dir, "output directory")->required();
  e->add_flag("--ambiguous-only", ev.ambiguous_only, "restrict to samples with an uncertain joint");
  e->add_flag("--noise-baseline", ev.noise_baseline, "also evaluate z0 plus heatmap noise");

  FitArgs fit;
  auto* f = app.add_subcommand("fit-heatmaps", "fit a 2D Gaussian to every heatmap of a stack");
  add_common(f);
  f->add_option("--heatmaps", fit.heatmaps, "heatmap stack file")->required();
  f->add_option("--out", fit.out, "CSV of fitted Gaussians")->required();

  PlotArgs pl;
  std::string history, report;
  auto* p = app.add_subcommand("plot", "render SVG charts with CSV twins");
  add_common(p);
  auto* hist_opt = p->add_option("--history", history, "training history CSV");
  auto* rep_opt = p->add_option("--report", report, "evaluation output directory");
  p->add_option("--out-dir", pl.out_dir, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& ex) {
    const int code = app.exit(ex, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (!config_file.empty()) common.config_file = config_file;
    for (auto* sub : app.get_subcommands())
      if (sub->count("--seed")) common.seed = seed;
    const config::Config cfg = load_config(common);
    if (g->parsed()) {
      if (occ_opt->count()) gen.occlusion = occlusion;
      if (count_opt->count()) gen.count = count;
      if (hm_opt->count()) gen.heatmaps = heatmaps;
      cmd_gen(cfg, gen, out);
    } else if (t->parsed()) {
      if (epochs_opt->count()) train.epochs = epochs;
      cmd_train(cfg, train, out);
    } else if (s->parsed()) {
      if (m_opt->count()) sample.count = m;
      cmd_sample(cfg, sample, out);
    } else if (e->parsed()) {
      cmd_eval(cfg, ev, out);
    } else if (f->parsed()) {
      cmd_fit_heatmaps(cfg, fit, out);
    } else if (p->parsed()) {
      if (hist_opt->count()) pl.history = history;
      if (rep_opt->count()) pl.report_dir = report;
      cmd_plot(cfg, pl, out);
    }
  } catch (const ConfigError& ex) {
    err << "config error: " << ex.what() << "\n";
    return kExitConfig;
  } catch (const IoError& ex) {
    err << "i/o error: " << ex.what() << "\n";
    return kExitIo;
  } catch (const NumericError& ex) {
    err << "numeric error: " << ex.what() << "\n";
    return kExitNumeric;
  } catch (const Error& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitInput;
  } catch (const std::exception& ex) {
    err << "internal error: " << ex.what() << "\n";
    return kExitInternal;
  }
  return kExitOk;
}

}  // namespace ambiflow::cli
