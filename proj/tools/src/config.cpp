// SPDX-License-Identifier: Apache-2.0

#include "config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace rblr::cli {

namespace {

using nlohmann::json;

// Key path plus type checks over one JSON object.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be an object");
  }

  void allow(std::initializer_list<const char*> keys) const {
    std::set<std::string> ok(keys.begin(), keys.end());
    for (const auto& [k, v] : j_.items()) {
      if (!ok.count(k)) throw ConfigError("unknown key '" + join(k) + "'");
    }
  }

  bool has(const char* k) const { return j_.contains(k); }
  const json& raw(const char* k) const { return j_.at(k); }
  Section sub(const char* k) const { return Section(j_.at(k), join(k)); }
  std::string key(const char* k) const { return join(k); }

  double number(const char* k, double def) const {
    if (!has(k)) return def;
    if (!j_.at(k).is_number()) throw ConfigError("'" + join(k) + "' must be a number");
    return j_.at(k).get<double>();
  }
  std::int64_t integer(const char* k, std::int64_t def) const {
    if (!has(k)) return def;
    if (!j_.at(k).is_number_integer()) throw ConfigError("'" + join(k) + "' must be an integer");
    return j_.at(k).get<std::int64_t>();
  }
  std::string string(const char* k, const std::string& def) const {
    if (!has(k)) return def;
    if (!j_.at(k).is_string()) throw ConfigError("'" + join(k) + "' must be a string");
    return j_.at(k).get<std::string>();
  }
  bool boolean(const char* k, bool def) const {
    if (!has(k)) return def;
    if (!j_.at(k).is_boolean()) throw ConfigError("'" + join(k) + "' must be true or false");
    return j_.at(k).get<bool>();
  }
  std::vector<std::int64_t> int_list(const char* k) const {
    const json& v = j_.at(k);
    if (!v.is_array()) throw ConfigError("'" + join(k) + "' must be a list of integers");
    std::vector<std::int64_t> out;
    for (const auto& e : v) {
      if (!e.is_number_integer()) throw ConfigError("'" + join(k) + "' must be a list of integers");
      out.push_back(e.get<std::int64_t>());
    }
    return out;
  }

  std::string where() const { return path_.empty() ? "config" : "'" + path_ + "'"; }

 private:
  std::string join(const std::string& k) const { return path_.empty() ? k : path_ + "." + k; }
  const json& j_;
  std::string path_;
};

int positive_int(const Section& s, const char* k, std::int64_t def) {
  const auto v = s.integer(k, def);
  if (v < 1 || v > std::numeric_limits<int>::max()) throw ConfigError("'" + s.key(k) + "' must be a positive integer");
  return static_cast<int>(v);
}

NetworkSpec parse_network(const Section& s) {
  if (s.has("preset")) {
    s.allow({"preset", "input_shape"});
    const std::string p = s.string("preset", "");
    Shape input{240, 424, 72, 6};
    if (s.has("input_shape")) {
      const auto d = s.int_list("input_shape");
      if (d.size() != 4) throw ConfigError("'" + s.key("input_shape") + "' needs 4 entries");
      input = {d[0], d[1], d[2], d[3]};
    }
    if (p == "reference-blr4") return reference_network(ReferenceVariant::Blr4, input);
    if (p == "reference-blr8") return reference_network(ReferenceVariant::Blr8, input);
    if (p == "reference-full") return reference_network(ReferenceVariant::Full, input);
    throw ConfigError("'" + s.key("preset") + "': unknown preset '" + p +
                      "' (expected reference-blr4, reference-blr8 or reference-full)");
  }
  s.allow({"input_shape", "h", "activation", "layers"});
  NetworkSpec spec;
  if (!s.has("input_shape")) throw ConfigError("'" + s.key("input_shape") + "' is required");
  const auto d = s.int_list("input_shape");
  if (d.size() != 4) throw ConfigError("'" + s.key("input_shape") + "' needs 4 entries");
  spec.input_shape = {d[0], d[1], d[2], d[3]};
  if (!spec.input_shape.valid()) throw ConfigError("'" + s.key("input_shape") + "' entries must be positive");
  spec.h = s.number("h", 0.1);
  const std::string act = s.string("activation", "relu");
  if (act == "relu") {
    spec.activation = Activation::relu();
  } else if (act == "identity") {
    spec.activation = Activation::identity();
  } else {
    throw ConfigError("'" + s.key("activation") + "' must be relu or identity");
  }

  Shape cur = spec.input_shape;
  if (s.has("layers")) {
    const json& layers = s.raw("layers");
    if (!layers.is_array()) throw ConfigError("'" + s.key("layers") + "' must be a list");
    for (std::size_t k = 0; k < layers.size(); ++k) {
      const Section l(layers[k], s.key("layers") + "[" + std::to_string(k) + "]");
      l.allow({"m", "resolution", "repeat"});
      ResolutionChange r;
      try {
        r = resolution_from_string(l.string("resolution", "identity"));
      } catch (const std::invalid_argument& e) {
        throw ConfigError("'" + l.key("resolution") + "': " + e.what());
      }
      const int repeat = positive_int(l, "repeat", 1);
      for (int rep = 0; rep < repeat; ++rep) {
        try {
          cur = resolution_output_shape(rep == 0 ? r : ResolutionChange::Identity, cur);
        } catch (const ShapeError& e) {
          throw ConfigError(l.where() + ": " + e.what());
        }
        LayerSpec ls;
        ls.n = static_cast<int>(cur.nchan);
        ls.resolution = rep == 0 ? r : ResolutionChange::Identity;
        if (!l.has("m") || (l.raw("m").is_string() && l.raw("m") == "full")) {
          ls.m = ls.n;
        } else {
          ls.m = std::min(positive_int(l, "m", 1), ls.n);
        }
        spec.layers.push_back(ls);
      }
    }
  }
  try {
    spec.validate();
  } catch (const ShapeError& e) {
    throw ConfigError(std::string("network: ") + e.what());
  }
  return spec;
}

RankEvent parse_event(const Section& e) {
  e.allow({"at_iteration", "plateau", "new_m"});
  RankEvent ev;
  if (!e.has("new_m")) throw ConfigError("'" + e.key("new_m") + "' is required");
  ev.new_m = positive_int(e, "new_m", 1);
  ev.at_iteration = static_cast<int>(e.integer("at_iteration", 0));
  if (ev.at_iteration < 0) throw ConfigError("'" + e.key("at_iteration") + "' must be >= 0");
  if (e.has("plateau")) {
    const Section p = e.sub("plateau");
    p.allow({"window", "tau"});
    ev.trigger = RankEvent::Trigger::Plateau;
    ev.window = positive_int(p, "window", 10);
    if (ev.window < 2) throw ConfigError("'" + p.key("window") + "' must be >= 2");
    ev.tau = p.number("tau", 0.01);
  } else if (!e.has("at_iteration")) {
    throw ConfigError(e.where() + " needs at_iteration or plateau");
  }
  return ev;
}

TrainConfig parse_train(const Section& s) {
  s.allow({"lr", "iterations", "optimizer", "momentum", "beta1", "beta2", "epsilon", "init_scale_factor", "seed",
           "rank_schedule"});
  TrainConfig t;
  t.lr = s.number("lr", t.lr);
  if (!(t.lr >= 0.0)) throw ConfigError("'" + s.key("lr") + "' must be >= 0");
  const auto it = s.integer("iterations", t.iterations);
  if (it < 0 || it > std::numeric_limits<int>::max()) throw ConfigError("'" + s.key("iterations") + "' must be >= 0");
  t.iterations = static_cast<int>(it);
  const std::string opt = s.string("optimizer", "sgd");
  if (opt == "sgd") {
    t.optimizer = OptimizerKind::SGD;
  } else if (opt == "momentum") {
    t.optimizer = OptimizerKind::Momentum;
  } else if (opt == "adam") {
    t.optimizer = OptimizerKind::Adam;
  } else {
    throw ConfigError("'" + s.key("optimizer") + "' must be sgd, momentum or adam");
  }
  t.momentum = s.number("momentum", t.momentum);
  t.beta1 = s.number("beta1", t.beta1);
  t.beta2 = s.number("beta2", t.beta2);
  t.epsilon = s.number("epsilon", t.epsilon);
  t.init_scale_factor = s.number("init_scale_factor", t.init_scale_factor);
  if (!(t.init_scale_factor >= 0.0)) throw ConfigError("'" + s.key("init_scale_factor") + "' must be >= 0");
  const auto seed = s.integer("seed", 0);
  if (seed < 0) throw ConfigError("'" + s.key("seed") + "' must be >= 0");
  t.seed = static_cast<std::uint64_t>(seed);
  if (s.has("rank_schedule")) {
    const json& list = s.raw("rank_schedule");
    if (!list.is_array()) throw ConfigError("'" + s.key("rank_schedule") + "' must be a list");
    for (std::size_t k = 0; k < list.size(); ++k) {
      t.rank_schedule.push_back(parse_event(Section(list[k], s.key("rank_schedule") + "[" + std::to_string(k) + "]")));
    }
  }
  return t;
}

void parse_data(const Section& s, RunConfig& cfg) {
  s.allow({"synthetic", "frames"});
  if (s.has("synthetic") == s.has("frames")) throw ConfigError("'data' needs exactly one of synthetic or frames");
  if (s.has("synthetic")) {
    const Section y = s.sub("synthetic");
    y.allow({"dims", "seed", "coarsenings"});
    SyntheticData d;
    if (y.has("dims")) {
      const auto dims = y.int_list("dims");
      if (dims.size() != 3) throw ConfigError("'" + y.key("dims") + "' needs 3 entries (nx, ny, nt)");
      d.nx = dims[0];
      d.ny = dims[1];
      d.nt = dims[2];
    }
    const auto seed = y.integer("seed", 1);
    if (seed < 0) throw ConfigError("'" + y.key("seed") + "' must be >= 0");
    d.seed = static_cast<std::uint64_t>(seed);
    d.coarsenings = static_cast<int>(y.integer("coarsenings", 0));
    if (d.coarsenings < 0 || d.coarsenings > 20) throw ConfigError("'" + y.key("coarsenings") + "' out of range");
    cfg.synthetic = d;
  } else {
    const Section f = s.sub("frames");
    f.allow({"manifest", "labels", "labeled_slices", "classes"});
    FramesData d;
    if (!f.has("manifest") || !f.has("labels")) throw ConfigError("'data.frames' needs manifest and labels");
    d.manifest = cfg.base_dir / f.string("manifest", "");
    d.labels = cfg.base_dir / f.string("labels", "");
    if (f.has("labeled_slices")) {
      for (auto v : f.int_list("labeled_slices")) d.labeled_slices.push_back(static_cast<int>(v));
    }
    d.classes = positive_int(f, "classes", 2);
    cfg.frames = d;
  }
}

void parse_plan(const Section& s, PlanOptions& p) {
  s.allow({"sweep", "input_channels", "fixed_side", "fixed_layers", "fixed_coarsenings", "blr_rank", "input_sides",
           "depths", "coarsening_counts"});
  p.sweep = s.boolean("sweep", false);
  auto& c = p.curves;
  c.input_channels = positive_int(s, "input_channels", c.input_channels);
  c.fixed_side = positive_int(s, "fixed_side", c.fixed_side);
  c.fixed_layers = positive_int(s, "fixed_layers", c.fixed_layers);
  c.fixed_coarsenings = static_cast<int>(s.integer("fixed_coarsenings", c.fixed_coarsenings));
  c.blr_rank = positive_int(s, "blr_rank", c.blr_rank);
  if (s.has("input_sides")) c.input_sides = s.int_list("input_sides");
  if (s.has("depths")) {
    c.depths.clear();
    for (auto v : s.int_list("depths")) c.depths.push_back(static_cast<int>(v));
  }
  if (s.has("coarsening_counts")) {
    c.coarsening_counts.clear();
    for (auto v : s.int_list("coarsening_counts")) c.coarsening_counts.push_back(static_cast<int>(v));
  }
}

}  // namespace

RunConfig parse_config(const std::string& text, const std::filesystem::path& base_dir) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig cfg;
  cfg.base_dir = base_dir;
  const Section root(j, "");
  root.allow({"network", "train", "data", "plan", "output"});
  if (root.has("network")) cfg.network = parse_network(root.sub("network"));
  if (root.has("train")) cfg.train = parse_train(root.sub("train"));
  if (root.has("data")) parse_data(root.sub("data"), cfg);
  if (root.has("plan")) parse_plan(root.sub("plan"), cfg.plan);
  if (root.has("output")) {
    const Section o = root.sub("output");
    o.allow({"dir"});
    cfg.out_dir = o.string("dir", cfg.out_dir.string());
  }
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.parent_path().empty() ? "." : path.parent_path());
}

Dataset load_dataset(const RunConfig& cfg) {
  if (cfg.synthetic) {
    const auto& s = *cfg.synthetic;
    return make_dataset(make_synthetic_video(s.nx, s.ny, s.nt, s.seed, s.coarsenings));
  }
  if (cfg.frames) {
    const auto& f = *cfg.frames;
    Dataset d;
    d.video = import_frames(f.manifest);
    const Shape s = d.video.shape();
    d.labels = read_labels(f.labels, s);
    d.classes = f.classes;
    d.labeled_slices = f.labeled_slices;
    if (d.labeled_slices.empty()) {
      for (int z = 0; z < s.nz; ++z) d.labeled_slices.push_back(z);
    }
    const auto plane = static_cast<std::size_t>(s.nx * s.ny);
    d.loss_mask.assign(d.labels.size(), 0);
    d.eval_mask.assign(d.labels.size(), 1);
    for (int z : d.labeled_slices) {
      if (z < 0 || z >= s.nz) throw ConfigError("labeled slice " + std::to_string(z) + " outside the video");
      std::fill_n(d.loss_mask.begin() + static_cast<std::ptrdiff_t>(plane * static_cast<std::size_t>(z)), plane, 1);
    }
    return d;
  }
  throw ConfigError("config has no 'data' section");
}

}  // namespace rblr::cli
