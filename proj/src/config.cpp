#include "mapfm/config.hpp"

#include <cstdio>
#include <functional>
#include <sstream>

#include "mapfm/error.hpp"
#include "mapfm/io.hpp"

namespace mapfm {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

std::string unquote(const std::string& s) {
  if (s.size() >= 2 && (s.front() == '"' || s.front() == '\'') && s.back() == s.front()) return s.substr(1, s.size() - 2);
  return s;
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> split_list(const std::string& raw) {
  std::string s = trim(raw);
  if (!s.empty() && s.front() == '[') {
    if (s.back() != ']') throw Error("unterminated list");
    s = s.substr(1, s.size() - 2);
  }
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(unquote(item));
  }
  return out;
}

template <class T>
T parse_number(const std::string& s) {
  std::size_t pos = 0;
  T v{};
  if constexpr (std::is_same_v<T, double>) v = std::stod(s, &pos);
  else if constexpr (std::is_same_v<T, std::uint64_t>) {
    if (!s.empty() && s[0] == '-') throw std::invalid_argument("negative");
    v = std::stoull(s, &pos);
  } else v = static_cast<T>(std::stoll(s, &pos));
  if (pos != s.size()) throw std::invalid_argument("trailing characters");
  return v;
}

bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "on" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "off" || s == "no") return false;
  throw std::invalid_argument("not a boolean");
}

struct Field {
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
};

using Fields = std::map<std::string, Field>;

void add(Fields& f, const std::string& k, int& v) {
  f[k] = {[&v](const std::string& s) { v = parse_number<int>(s); }, [&v] { return std::to_string(v); }};
}
void add(Fields& f, const std::string& k, double& v) {
  f[k] = {[&v](const std::string& s) { v = parse_number<double>(s); }, [&v] { return fmt_double(v); }};
}
void add(Fields& f, const std::string& k, std::uint64_t& v) {
  f[k] = {[&v](const std::string& s) { v = parse_number<std::uint64_t>(s); }, [&v] { return std::to_string(v); }};
}
void add(Fields& f, const std::string& k, bool& v) {
  f[k] = {[&v](const std::string& s) { v = parse_bool(s); }, [&v] { return std::string(v ? "true" : "false"); }};
}
void add(Fields& f, const std::string& k, std::string& v) {
  f[k] = {[&v](const std::string& s) { v = s; }, [&v] { return v; }};
}
void add(Fields& f, const std::string& k, std::vector<int>& v) {
  f[k] = {[&v](const std::string& s) {
            v.clear();
            for (const auto& x : split_list(s)) v.push_back(parse_number<int>(x));
          },
          [&v] {
            std::string out;
            for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + std::to_string(v[i]);
            return "[" + out + "]";
          }};
}
void add(Fields& f, const std::string& k, std::vector<double>& v) {
  f[k] = {[&v](const std::string& s) {
            v.clear();
            for (const auto& x : split_list(s)) v.push_back(parse_number<double>(x));
          },
          [&v] {
            std::string out;
            for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + fmt_double(v[i]);
            return "[" + out + "]";
          }};
}
template <class E, class From>
void add_enum(Fields& f, const std::string& k, E& v, From from) {
  f[k] = {[&v, from](const std::string& s) { v = from(s); }, [&v] { return std::string(to_string(v)); }};
}

Fields bind(TrainConfig& c) {
  Fields f;
  add(f, "train.learning_rate", c.learning_rate);
  add(f, "train.steps", c.steps);
  add(f, "train.batch_size", c.batch_size);
  add(f, "train.seed", c.seed);
  add(f, "train.eval_every", c.eval_every);
  add(f, "train.holdout_fraction", c.holdout_fraction);
  add(f, "train.score_threshold", c.score_threshold);
  add(f, "train.arss_enabled", c.model.arss_enabled);

  BEVGridSpec& g = c.data.grid;
  add(f, "grid.rows", g.rows);
  add(f, "grid.cols", g.cols);
  add(f, "grid.x_min", g.x_min);
  add(f, "grid.x_max", g.x_max);
  add(f, "grid.y_min", g.y_min);
  add(f, "grid.y_max", g.y_max);
  add(f, "grid.resolution", g.resolution);

  BackboneConfig& b = c.model.backbone;
  add(f, "backbone.patch_size", b.patch_size);
  add(f, "backbone.embed_dim", b.embed_dim);
  add(f, "backbone.num_blocks", b.num_blocks);
  add(f, "backbone.num_heads", b.num_heads);
  add(f, "backbone.mlp_ratio", b.mlp_ratio);
  add_enum(f, "backbone.aggregation", b.aggregation, aggregation_from_string);
  add(f, "backbone.tap_blocks", b.tap_blocks);
  add_enum(f, "backbone.freeze_policy", b.freeze_policy, freeze_policy_from_string);

  BEVEncoderConfig& e = c.model.bev;
  add(f, "bev.channels", e.bev_channels);
  add(f, "bev.pillar_heights", e.pillar_heights);
  add(f, "bev.refine_layers", e.num_refine_layers);
  add(f, "bev.num_heads", e.num_heads);

  DecoderConfig& d = c.model.decoder;
  add(f, "decoder.num_instances", d.num_instances);
  add(f, "decoder.points_per_element", d.points_per_element);
  add(f, "decoder.num_layers", d.num_layers);
  add(f, "decoder.num_heads", d.num_heads);
  add(f, "decoder.channels", d.channels);

  const char* beta[] = {"weights.pts", "weights.cls", "weights.dir", "weights.bevseg", "weights.pvseg", "weights.surf"};
  for (std::size_t i = 0; i < 6; ++i) add(f, beta[i], c.weights.beta[i]);
  add(f, "match.cls", c.match.cls);
  add(f, "match.pts", c.match.pts);

  add(f, "eval.thresholds", c.eval.thresholds);
  add(f, "eval.n_interp", c.eval.n_interp);

  SceneConfig& s = c.data.scene;
  add(f, "scene.curvature_max", s.curvature_max);
  add(f, "scene.straight_probability", s.straight_probability);
  add(f, "scene.heading_max", s.heading_max);
  add(f, "scene.lateral_offset_max", s.lateral_offset_max);
  add(f, "scene.lanes_min", s.lanes_min);
  add(f, "scene.lanes_max", s.lanes_max);
  add(f, "scene.lane_width", s.lane_width);
  add(f, "scene.crossings_min", s.crossings_min);
  add(f, "scene.crossings_max", s.crossings_max);
  add(f, "scene.crossing_depth", s.crossing_depth);
  add(f, "scene.crossing_range", s.crossing_range);
  add(f, "scene.road_extent", s.road_extent);
  add(f, "scene.bev_margin", s.bev_margin);
  add(f, "scene.max_attempts", s.max_attempts);

  RigConfig& r = c.data.rig;
  add(f, "rig.num_cameras", r.num_cameras);
  add(f, "rig.image_height", r.image_height);
  add(f, "rig.image_width", r.image_width);
  add(f, "rig.mount_height", r.mount_height);
  add(f, "rig.pitch_down_deg", r.pitch_down_deg);
  add(f, "rig.hfov_deg", r.hfov_deg);
  add(f, "rig.yaw_offset_deg", r.yaw_offset_deg);

  RenderConfig& rd = c.data.render;
  add(f, "render.gt_points", rd.gt_points);
  add(f, "render.line_thickness", rd.line_thickness);
  add(f, "render.pv_radius_px", rd.pv_radius_px);
  add(f, "render.sample_step", rd.sample_step);
  add(f, "render.noise_amplitude", rd.noise_amplitude);

  add(f, "data.master_seed", c.data.master_seed);
  add(f, "data.num_scenes", c.num_scenes);
  add(f, "data.threads", c.data.threads);

  add(f, "ablation.num_scenes", c.ablation.num_scenes);
  add(f, "ablation.seeds", c.ablation.seeds);
  add(f, "ablation.data", c.ablation.data);
  return f;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0)) throw Error("config: train.learning_rate must be > 0");
  if (steps < 1 || batch_size < 1 || eval_every < 1) throw Error("config: train counts must be positive");
  if (holdout_fraction < 0 || holdout_fraction >= 1) throw Error("config: train.holdout_fraction must be in [0, 1)");
  if (score_threshold < 0 || score_threshold > 1) throw Error("config: train.score_threshold must be in [0, 1]");
  for (double b : weights.beta)
    if (!(b >= 0)) throw Error("config: loss weights must be >= 0");
  if (num_scenes < 0) throw Error("config: data.num_scenes must be >= 0");
  if (ablation.seeds.empty()) throw Error("config: ablation.seeds is empty");
  data.grid.validate();
  model.validate();
  eval.validate();
}

KeyValues parse_key_values(const std::string& text) {
  KeyValues kv;
  std::stringstream ss(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash = line.find_first_of("#;");
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[' && line.find('=') == std::string::npos) {
      if (line.back() != ']') throw Error("config line " + std::to_string(lineno) + ": bad section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error("config line " + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw Error("config line " + std::to_string(lineno) + ": empty key");
    if (!section.empty()) key = section + "." + key;
    if (kv.contains(key)) throw Error("config line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    kv[key] = unquote(trim(line.substr(eq + 1)));
  }
  return kv;
}

TrainConfig config_from_key_values(const KeyValues& kv) {
  TrainConfig cfg;
  Fields f = bind(cfg);
  for (const auto& [k, v] : kv) {
    auto it = f.find(k);
    if (it == f.end()) throw Error("config: unknown key '" + k + "'");
    try {
      it->second.set(v);
    } catch (const Error& e) {
      throw Error("config: key '" + k + "': " + e.what());
    } catch (const std::exception&) {
      throw Error("config: key '" + k + "': cannot parse value '" + v + "'");
    }
  }
  cfg.validate();
  return cfg;
}

TrainConfig load_config(const std::filesystem::path& path) {
  try {
    return config_from_key_values(parse_key_values(read_text(path)));
  } catch (const Error& e) {
    const std::string msg = e.what();
    if (msg.find(path.string()) != std::string::npos) throw;
    throw Error(path.string() + ": " + msg);
  }
}

KeyValues config_to_key_values(const TrainConfig& cfg) {
  TrainConfig copy = cfg;
  KeyValues kv;
  for (const auto& [k, field] : bind(copy)) kv[k] = field.get();
  return kv;
}

std::string config_to_text(const TrainConfig& cfg) {
  std::string out;
  for (const auto& [k, v] : config_to_key_values(cfg)) out += k + " = " + v + "\n";
  return out;
}

}  // namespace mapfm
