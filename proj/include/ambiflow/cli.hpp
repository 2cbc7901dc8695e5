#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ambiflow/config.hpp"

namespace ambiflow::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInternal = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitIo = 3;
inline constexpr int kExitNumeric = 4;
inline constexpr int kExitInput = 5;

/// Options shared by every subcommand.
struct Common {
  std::optional<std::filesystem::path> config_file;
  std::vector<std::string> overrides;  // key=value
  std::optional<std::uint64_t> seed;
  bool desk = false;
};

/// Defaults, then the desk profile, the config file, --set overrides and
/// finally --seed.
config::Config load_config(const Common& common);

struct GenArgs {
  std::filesystem::path out;
  std::optional<double> occlusion;
  std::optional<std::size_t> count;
  std::optional<std::filesystem::path> heatmaps;
};

struct TrainArgs {
  std::filesystem::path data;
  std::filesystem::path out_dir;
  std::optional<std::size_t> epochs;
  bool resume = false;
};

struct SampleArgs {
  std::filesystem::path model;
  std::filesystem::path data;
  std::filesystem::path out;
  std::optional<std::size_t> count;
  bool z0 = false;
};

struct EvalArgs {
  std::filesystem::path hypotheses;
  std::filesystem::path data;
  std::filesystem::path out_dir;
  bool ambiguous_only = false;
  bool noise_baseline = false;
};

struct FitArgs {
  std::filesystem::path heatmaps;
  std::filesystem::path out;
};

struct PlotArgs {
  std::optional<std::filesystem::path> history;
  std::optional<std::filesystem::path> report_dir;
  std::filesystem::path out_dir;
};

void cmd_gen(config::Config cfg, const GenArgs& args, std::ostream& out);
void cmd_train(config::Config cfg, const TrainArgs& args, std::ostream& out);
void cmd_sample(config::Config cfg, const SampleArgs& args, std::ostream& out);
void cmd_eval(const config::Config& cfg, const EvalArgs& args, std::ostream& out);
void cmd_fit_heatmaps(const config::Config& cfg, const FitArgs& args, std::ostream& out);
void cmd_plot(const config::Config& cfg, const PlotArgs& args, std::ostream& out);

/// Parses argv, runs one subcommand and maps failures to exit codes.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace ambiflow::cli
