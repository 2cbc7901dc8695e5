#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ambiflow/data.hpp"
#include "ambiflow/eval.hpp"
#include "ambiflow/flow.hpp"
#include "ambiflow/posedisc.hpp"
#include "ambiflow/trainer.hpp"

namespace ambiflow::config {

/// Flat key=value settings over a fixed schema. Every key has a default;
/// setting a key outside the schema is an error.
///
/// File syntax: one `key = value` per line, `#` starts a comment, and
/// `include <path>` splices another file (relative to the including file).
class Config {
 public:
  Config();

  void set(const std::string& key, const std::string& value);
  /// Parses "key=value".
  void set_assignment(const std::string& assignment);
  void load_file(const std::filesystem::path& path);
  void load_text(const std::string& text, const std::filesystem::path& base_dir = {});

  const std::string& get(const std::string& key) const;
  double get_double(const std::string& key) const;
  std::int64_t get_int(const std::string& key) const;
  std::size_t get_size(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<double> get_list(const std::string& key) const;

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  /// All keys in sorted order, one `key = value` line each.
  std::string dump() const;

  std::uint64_t seed() const;
  data::GenConfig gen_config() const;
  flow::FlowConfig flow_config(std::size_t joints, std::size_t condition_dim) const;
  posedisc::DiscriminatorConfig disc_config() const;
  trainer::TrainConfig train_config() const;
  /// Evaluation settings; the subset and baseline switches stay at their defaults.
  eval::EvalOptions eval_options() const;

 private:
  void load_text_depth(const std::string& text, const std::filesystem::path& base_dir, int depth);
  std::map<std::string, std::string> values_;
};

/// Settings sized for a single desktop core: narrower subnets, fewer
/// hypotheses per step, a higher learning rate over 30 epochs, and a heatmap
/// loss weight scaled down to match the reduced capacity.
std::string desk_profile();

}  // namespace ambiflow::config
