#include "ambiflow/config.hpp"

#include <algorithm>
#include <charconv>
#include <sstream>

#include "ambiflow/binio.hpp"
#include "ambiflow/error.hpp"

namespace ambiflow::config {

namespace {

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

const std::map<std::string, std::string>& defaults() {
  static const std::map<std::string, std::string> d = {
      {"seed", "0"},
      {"gen.count", "5000"},
      {"gen.occlusion", "0.3"},
      {"gen.max_occluded", "3"},
      {"gen.sigma_min", "4"},
      {"gen.sigma_max", "10"},
      {"gen.fit_heatmaps", "true"},
      {"gen.depth", "5"},
      {"camera.orthographic", "true"},
      {"camera.focal", "100"},
      {"camera.cx", "160"},
      {"camera.cy", "160"},
      {"camera.width", "320"},
      {"camera.height", "320"},
      {"flow.blocks", "8"},
      {"flow.subnet_hidden", "1024"},
      {"flow.encoder_hidden", "256"},
      {"flow.encoder_out", "56"},
      {"flow.clamp_alpha", "2"},
      {"flow.zero_init_last", "true"},
      {"disc.hidden", "100"},
      {"disc.leaky_slope", "0.2"},
      {"train.epochs", "155"},
      {"train.batch", "64"},
      {"train.lr", "1e-4"},
      {"train.lr_halve_epoch", "150"},
      {"train.beta1", "0.5"},
      {"train.beta2", "0.9"},
      {"train.hypotheses", "200"},
      {"train.clip", "15"},
      {"train.lambda_gp", "10"},
      {"train.disc", "true"},
      {"train.checkpoint_every", "1"},
      {"loss.mmd", "10"},
      {"loss.det", "4"},
      {"loss.mb", "4"},
      {"loss.hm", "750"},
      {"loss.gen", "1"},
      {"loss.k", "5"},
      {"loss.sigma_t", "2.1"},
      {"loss.mm_per_px", "10"},
      {"sample.count", "200"},
      {"eval.pck_threshold", "150"},
      {"eval.ambiguous_threshold", "5"},
      {"eval.procrustes_scale", "true"},
      {"eval.noise_samples", "200"},
      {"eval.noise_depth_sigma", "-1"},
      {"eval.m_grid", "1,2,5,10,20,50,100,200"},
  };
  return d;
}

}  // namespace

Config::Config() : values_(defaults()) {}

void Config::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  // The current value fixes the key's kind; defaults are always well-typed.
  const auto is_number = [](const std::string& s) {
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    return !s.empty() && ec == std::errc() && ptr == s.data() + s.size();
  };
  const auto is_bool = [](const std::string& s) {
    return s == "true" || s == "false" || s == "1" || s == "0" || s == "yes" || s == "no";
  };
  const std::string& old = it->second;
  bool ok = true;
  if (old == "true" || old == "false") {
    ok = is_bool(value);
  } else if (old.find(',') != std::string::npos) {
    std::istringstream in(value);
    std::string item;
    while (ok && std::getline(in, item, ',')) ok = is_number(trim(item));
    ok = ok && !value.empty();
  } else if (is_number(old)) {
    ok = is_number(value);
  }
  if (!ok) throw ConfigError(key + ": value '" + value + "' does not match the type of '" + old + "'");
  it->second = value;
}

void Config::set_assignment(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + assignment + "'");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void Config::load_file(const std::filesystem::path& path) {
  std::string text;
  try {
    text = binio::read_text(path);
  } catch (const IoError& e) {
    throw ConfigError(std::string("cannot read config file: ") + e.what());
  }
  load_text_depth(text, path.parent_path(), 0);
}

void Config::load_text(const std::string& text, const std::filesystem::path& base_dir) {
  load_text_depth(text, base_dir, 0);
}

void Config::load_text_depth(const std::string& text, const std::filesystem::path& base_dir, int depth) {
  if (depth > 16) throw ConfigError("config include nesting is too deep (cycle?)");
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.rfind("include", 0) == 0 && line.find('=') == std::string::npos) {
      const std::filesystem::path inc = base_dir / trim(line.substr(7));
      std::string sub;
      try {
        sub = binio::read_text(inc);
      } catch (const IoError& e) {
        throw ConfigError("line " + std::to_string(number) + ": cannot include " + inc.string());
      }
      load_text_depth(sub, inc.parent_path(), depth + 1);
      continue;
    }
    try {
      set_assignment(line);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(number) + ": " + e.what());
    }
  }
}

const std::string& Config::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

double Config::get_double(const std::string& key) const {
  const std::string& v = get(key);
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return out;
}

std::int64_t Config::get_int(const std::string& key) const {
  const std::string& v = get(key);
  std::int64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError(key + ": expected an integer, got '" + v + "'");
  }
  return out;
}

std::size_t Config::get_size(const std::string& key) const {
  const std::int64_t v = get_int(key);
  if (v < 0) throw ConfigError(key + ": must be >= 0");
  return static_cast<std::size_t>(v);
}

bool Config::get_bool(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected true/false, got '" + v + "'");
}

std::vector<double> Config::get_list(const std::string& key) const {
  std::vector<double> out;
  std::istringstream in(get(key));
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (item.empty() || ec != std::errc() || ptr != item.data() + item.size()) {
      throw ConfigError(key + ": bad list element '" + item + "'");
    }
    out.push_back(v);
  }
  return out;
}

std::string Config::dump() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

std::uint64_t Config::seed() const { return static_cast<std::uint64_t>(get_int("seed")); }

data::GenConfig Config::gen_config() const {
  data::GenConfig g;
  g.count = get_size("gen.count");
  g.occlusion_rate = get_double("gen.occlusion");
  g.max_occluded = get_size("gen.max_occluded");
  g.occluded_sigma_min = get_double("gen.sigma_min");
  g.occluded_sigma_max = get_double("gen.sigma_max");
  g.fit_heatmaps = get_bool("gen.fit_heatmaps");
  g.depth = get_double("gen.depth");
  g.camera.orthographic = get_bool("camera.orthographic");
  g.camera.focal = get_double("camera.focal");
  g.camera.cx = get_double("camera.cx");
  g.camera.cy = get_double("camera.cy");
  g.camera.width = static_cast<std::uint32_t>(get_size("camera.width"));
  g.camera.height = static_cast<std::uint32_t>(get_size("camera.height"));
  g.seed = seed();
  if (g.occlusion_rate < 0.0 || g.occlusion_rate > 1.0) throw ConfigError("gen.occlusion must lie in [0, 1]");
  if (!(g.occluded_sigma_min > 0.0) || g.occluded_sigma_max < g.occluded_sigma_min) {
    throw ConfigError("gen.sigma_min/gen.sigma_max must satisfy 0 < min <= max");
  }
  if (!(g.camera.focal > 0.0)) throw ConfigError("camera.focal must be > 0");
  return g;
}

flow::FlowConfig Config::flow_config(std::size_t joints, std::size_t condition_dim) const {
  flow::FlowConfig f;
  f.joints = joints;
  f.condition_dim = condition_dim;
  f.blocks = get_size("flow.blocks");
  f.subnet_hidden = get_size("flow.subnet_hidden");
  f.encoder_hidden = get_size("flow.encoder_hidden");
  f.encoder_out = get_size("flow.encoder_out");
  f.clamp_alpha = get_double("flow.clamp_alpha");
  f.zero_init_last = get_bool("flow.zero_init_last");
  f.seed = seed();
  f.validate();
  return f;
}

posedisc::DiscriminatorConfig Config::disc_config() const {
  posedisc::DiscriminatorConfig d;
  d.hidden = get_size("disc.hidden");
  d.leaky_slope = get_double("disc.leaky_slope");
  d.seed = seed();
  if (d.hidden == 0) throw ConfigError("disc.hidden must be > 0");
  return d;
}

trainer::TrainConfig Config::train_config() const {
  trainer::TrainConfig t;
  t.epochs = get_size("train.epochs");
  t.batch = get_size("train.batch");
  t.lr = get_double("train.lr");
  t.lr_halve_epoch = get_size("train.lr_halve_epoch");
  t.beta1 = get_double("train.beta1");
  t.beta2 = get_double("train.beta2");
  t.hypotheses = get_size("train.hypotheses");
  t.clip = get_double("train.clip");
  t.lambda_gp = get_double("train.lambda_gp");
  t.train_disc = get_bool("train.disc");
  t.checkpoint_every = get_size("train.checkpoint_every");
  t.weights.mmd = get_double("loss.mmd");
  t.weights.det = get_double("loss.det");
  t.weights.mb = get_double("loss.mb");
  t.weights.hm = get_double("loss.hm");
  t.weights.gen = get_double("loss.gen");
  t.weights.k = get_size("loss.k");
  t.weights.sigma_t = get_double("loss.sigma_t");
  t.weights.mm_per_px = get_double("loss.mm_per_px");
  t.seed = seed();
  t.validate();
  return t;
}

eval::EvalOptions Config::eval_options() const {
  eval::EvalOptions o;
  o.pck_threshold = get_double("eval.pck_threshold");
  o.ambiguous_threshold = get_double("eval.ambiguous_threshold");
  o.procrustes_scale = get_bool("eval.procrustes_scale");
  o.noise_samples = get_size("eval.noise_samples");
  o.noise_depth_sigma = get_double("eval.noise_depth_sigma");
  o.m_grid.clear();
  for (double v : get_list("eval.m_grid")) {
    if (!(v >= 1.0)) throw ConfigError("eval.m_grid entries must be >= 1");
    o.m_grid.push_back(static_cast<std::size_t>(v));
  }
  o.sigma_t = get_double("loss.sigma_t");
  o.mm_per_px = get_double("loss.mm_per_px");
  o.seed = seed();
  return o;
}

std::string desk_profile() {
  return "flow.subnet_hidden = 256\n"
         "train.hypotheses = 16\n"
         "train.epochs = 30\n"
         "train.lr = 5e-4\n"
         "train.lr_halve_epoch = 28\n"
         "loss.hm = 20\n";
}

}  // namespace ambiflow::config
