// Copyright 2026 The difflab Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdio>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "difflab/common.hpp"
#include "difflab/guidance.hpp"
#include "difflab/losses.hpp"
#include "difflab/mixture.hpp"
#include "difflab/motion.hpp"
#include "difflab/schedule.hpp"

namespace difflab {

using nlohmann::json;

inline std::string fmt_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline json to_json(const Vec& v) {
  json arr = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

inline Vec vec_from_json(const json& arr) {
  if (!arr.is_array()) throw ConfigError("expected a JSON array of numbers");
  Vec v(static_cast<Eigen::Index>(arr.size()));
  for (std::size_t i = 0; i < arr.size(); ++i) {
    v[static_cast<Eigen::Index>(i)] = arr[i].get<double>();
  }
  return v;
}

inline void reject_unknown_keys(const json& obj,
                                std::initializer_list<const char*> allowed,
                                const std::string& where) {
  for (const auto& [key, value] : obj.items()) {
    (void)value;
    bool ok = false;
    for (const char* a : allowed) {
      if (key == a) ok = true;
    }
    if (!ok) throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

// ---------------------------------------------------------------------------
// Mixture model <-> {weights, means, variances}.
// ---------------------------------------------------------------------------

inline json mixture_to_json(const MixtureModel& m) {
  json j;
  j["weights"] = json::array();
  j["means"] = json::array();
  j["variances"] = json::array();
  for (int i = 0; i < m.components(); ++i) {
    j["weights"].push_back(m.weight(i));
    j["means"].push_back(to_json(m.mean(i)));
    j["variances"].push_back(m.variance(i));
  }
  return j;
}

inline MixtureModel mixture_from_json(const json& j) {
  reject_unknown_keys(j, {"weights", "means", "variances", "kind"}, "mixture");
  std::vector<double> w, v;
  std::vector<Vec> mu;
  for (const auto& x : j.at("weights")) w.push_back(x.get<double>());
  for (const auto& x : j.at("variances")) v.push_back(x.get<double>());
  for (const auto& x : j.at("means")) mu.push_back(vec_from_json(x));
  return MixtureModel(std::move(w), std::move(mu), std::move(v));
}

// ---------------------------------------------------------------------------
// Guidance config <-> JSON (stable enum strings).
// ---------------------------------------------------------------------------

inline GuidanceMethod guidance_method_from_string(const std::string& s) {
  if (s == "exact") return GuidanceMethod::kExact;
  if (s == "tweedie") return GuidanceMethod::kTweedie;
  if (s == "lgd-mc") return GuidanceMethod::kLgdMc;
  if (s == "smoothed") return GuidanceMethod::kSmoothed;
  if (s == "random-aug") return GuidanceMethod::kRandomAug;
  throw ConfigError("unknown guidance method '" + s + "'");
}

inline OptimizerKind optimizer_from_string(const std::string& s) {
  if (s == "gd") return OptimizerKind::kGd;
  if (s == "pgd") return OptimizerKind::kPgd;
  throw ConfigError("unknown optimizer '" + s + "'");
}

inline TransformSpec transform_from_json(const json& j) {
  reject_unknown_keys(j, {"kind", "param"}, "transform");
  const std::string kind = j.at("kind").get<std::string>();
  TransformSpec t;
  t.param = j.value("param", 0.0);
  if (kind == "identity") t.kind = TransformSpec::Kind::kIdentity;
  else if (kind == "jitter") t.kind = TransformSpec::Kind::kJitter;
  else if (kind == "scale") t.kind = TransformSpec::Kind::kScale;
  else if (kind == "shift") t.kind = TransformSpec::Kind::kShift;
  else if (kind == "mask") t.kind = TransformSpec::Kind::kMask;
  else throw ConfigError("unknown transform kind '" + kind + "'");
  return t;
}

inline json transform_to_json(const TransformSpec& t) {
  return json{{"kind", to_string(t.kind)}, {"param", t.param}};
}

inline GuidanceConfig guidance_from_json(const json& j) {
  reject_unknown_keys(j,
                      {"method", "optimizer", "eta", "eta_rule", "lgd_mc",
                       "smoothed", "random_aug", "resampling"},
                      "guidance");
  GuidanceConfig g;
  g.method = guidance_method_from_string(j.at("method").get<std::string>());
  g.optimizer = optimizer_from_string(j.value("optimizer", "gd"));
  g.eta = j.value("eta", 0.5);
  const std::string rule = j.value("eta_rule", "sigma-scaled");
  if (rule == "sigma-scaled") g.eta_rule = EtaRule::kSigmaScaled;
  else if (rule == "constant") g.eta_rule = EtaRule::kConstant;
  else throw ConfigError("unknown eta_rule '" + rule + "'");

  if (j.contains("lgd_mc")) {
    const json& l = j.at("lgd_mc");
    reject_unknown_keys(l, {"n", "gamma"}, "lgd_mc");
    g.lgd_n = l.value("n", g.lgd_n);
    g.lgd_gamma = l.value("gamma", g.lgd_gamma);
  }
  if (j.contains("smoothed")) {
    const json& s = j.at("smoothed");
    reject_unknown_keys(s, {"m", "sigma_rule", "sigma"}, "smoothed");
    g.smooth_m = s.value("m", g.smooth_m);
    const std::string sr = s.value("sigma_rule", "noise-scale");
    if (sr == "noise-scale") g.smooth_rule = SmoothSigmaRule::kNoiseScale;
    else if (sr == "constant") g.smooth_rule = SmoothSigmaRule::kConstant;
    else throw ConfigError("unknown sigma_rule '" + sr + "'");
    g.smooth_sigma = s.value("sigma", g.smooth_sigma);
  }
  if (j.contains("random_aug")) {
    const json& r = j.at("random_aug");
    reject_unknown_keys(r, {"k", "resample_per_step", "transforms"},
                        "random_aug");
    g.aug_k = r.value("k", g.aug_k);
    g.aug_resample_per_step = r.value("resample_per_step", true);
    if (r.contains("transforms")) {
      g.augset.families.clear();
      for (const auto& t : r.at("transforms")) {
        g.augset.families.push_back(transform_from_json(t));
      }
    }
  }
  if (j.contains("resampling")) {
    const json& r = j.at("resampling");
    reject_unknown_keys(r, {"s", "t_hi", "t_lo"}, "resampling");
    ResamplePlan plan;
    plan.s = r.value("s", 1);
    plan.t_hi = r.value("t_hi", 0.8);
    plan.t_lo = r.value("t_lo", 0.3);
    g.resampling = plan;
  }
  g.validate();
  return g;
}

/// Full round-trip form with every default materialized.
inline json guidance_to_json(const GuidanceConfig& g) {
  json j;
  j["method"] = to_string(g.method);
  j["optimizer"] = to_string(g.optimizer);
  j["eta"] = g.eta;
  j["eta_rule"] =
      g.eta_rule == EtaRule::kSigmaScaled ? "sigma-scaled" : "constant";
  j["lgd_mc"] = json{{"n", g.lgd_n}, {"gamma", g.lgd_gamma}};
  j["smoothed"] = json{
      {"m", g.smooth_m},
      {"sigma_rule",
       g.smooth_rule == SmoothSigmaRule::kNoiseScale ? "noise-scale"
                                                     : "constant"},
      {"sigma", g.smooth_sigma}};
  json transforms = json::array();
  for (const auto& t : g.augset.families) transforms.push_back(transform_to_json(t));
  j["random_aug"] = json{{"k", g.aug_k},
                         {"resample_per_step", g.aug_resample_per_step},
                         {"transforms", transforms}};
  if (g.resampling) {
    j["resampling"] = json{{"s", g.resampling->s},
                           {"t_hi", g.resampling->t_hi},
                           {"t_lo", g.resampling->t_lo}};
  }
  return j;
}

// ---------------------------------------------------------------------------
// Losses and trajectory priors.
// ---------------------------------------------------------------------------

inline TrajectoryPrior::Params trajectory_params_from_json(const json& j) {
  reject_unknown_keys(
      j, {"kind", "frames", "length_scale", "amplitude", "pin_start"},
      "trajectory-prior");
  TrajectoryPrior::Params p;
  p.frames = j.value("frames", 32);
  p.length_scale = j.value("length_scale", 8.0);
  p.amplitude = j.value("amplitude", 1.0);
  p.pin_start = j.value("pin_start", true);
  return p;
}

inline json trajectory_params_to_json(const TrajectoryPrior::Params& p) {
  return json{{"kind", "trajectory-prior"},
              {"frames", p.frames},
              {"length_scale", p.length_scale},
              {"amplitude", p.amplitude},
              {"pin_start", p.pin_start}};
}

inline MotionCondition motion_condition_from_json(const json& j) {
  MotionCondition c;
  if (j.contains("target")) c.target = vec_from_json(j.at("target"));
  if (j.contains("obstacles")) {
    for (const auto& o : j.at("obstacles")) {
      reject_unknown_keys(o, {"center", "radius"}, "obstacle");
      Obstacle obs;
      obs.center = vec_from_json(o.at("center"));
      obs.radius = o.at("radius").get<double>();
      c.obstacles.push_back(std::move(obs));
    }
  }
  c.sharpness = j.value("sharpness", 50.0);
  c.penalty = j.value("penalty", 100.0);
  c.validate();
  return c;
}

/// Builds the loss named by the spec object against the active model.
inline std::unique_ptr<LossFunction> loss_from_json(
    const json& j, const MixtureModel* mixture, const TrajectoryPrior* prior) {
  const std::string kind = j.at("kind").get<std::string>();
  const double scale = j.value("scale", 1.0);
  if (kind == "quadratic-target") {
    reject_unknown_keys(j, {"kind", "target", "scale"}, "loss");
    return std::make_unique<QuadraticTargetLoss>(vec_from_json(j.at("target")),
                                                 scale);
  }
  if (kind == "component-logloss") {
    reject_unknown_keys(j, {"kind", "class_index", "scale"}, "loss");
    if (mixture == nullptr) {
      throw ConfigError("component-logloss requires a mixture model");
    }
    return std::make_unique<ComponentLogLoss>(
        *mixture, j.at("class_index").get<int>(), scale);
  }
  if (kind == "motion") {
    reject_unknown_keys(
        j, {"kind", "target", "obstacles", "sharpness", "penalty", "scale"},
        "loss");
    if (prior == nullptr) {
      throw ConfigError("motion loss requires a trajectory-prior model");
    }
    return std::make_unique<MotionLoss>(*prior, motion_condition_from_json(j),
                                        scale);
  }
  throw ConfigError("unknown loss kind '" + kind + "'");
}

// ---------------------------------------------------------------------------
// CSV and SVG emission.
// ---------------------------------------------------------------------------

inline void write_text_file(const std::string& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot open for writing: " + path);
  out << body;
}

inline std::string trace_csv_header() {
  return "run_id,step_index,t,loss,grad_norm,step_size\n";
}

inline void append_trace_csv(std::string& body, const std::string& run_id,
                             const SampleTrace& trace) {
  for (const auto& s : trace.steps) {
    body += run_id;
    body += ',';
    body += std::to_string(s.node);
    body += ',';
    body += std::to_string(s.t);
    body += ',';
    body += fmt_g17(s.loss);
    body += ',';
    body += fmt_g17(s.grad_norm);
    body += ',';
    body += fmt_g17(s.step_size);
    body += '\n';
  }
}

inline std::string trajectory_csv(const std::vector<std::string>& run_ids,
                                  const std::vector<Mat>& frames) {
  std::string body = "run_id,frame,x,y\n";
  for (std::size_t r = 0; r < frames.size(); ++r) {
    for (Eigen::Index i = 0; i < frames[r].rows(); ++i) {
      body += run_ids[r];
      body += ',';
      body += std::to_string(i);
      body += ',';
      body += fmt_g17(frames[r](i, 0));
      body += ',';
      body += fmt_g17(frames[r](i, 1));
      body += '\n';
    }
  }
  return body;
}

namespace svg {

struct Mapper {
  double x0, x1, y0, y1;  // data bounds
  double w, h, pad;
  double px(double x) const {
    return pad + (x - x0) / (x1 - x0 + 1e-300) * (w - 2 * pad);
  }
  double py(double y) const {
    return h - pad - (y - y0) / (y1 - y0 + 1e-300) * (h - 2 * pad);
  }
};

inline std::string header(double w, double h) {
  return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" +
         std::to_string(static_cast<int>(w)) + "\" height=\"" +
         std::to_string(static_cast<int>(h)) + "\" viewBox=\"0 0 " +
         std::to_string(static_cast<int>(w)) + " " +
         std::to_string(static_cast<int>(h)) +
         "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
}

inline const char* palette(std::size_t i) {
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                  "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};
  return kColors[i % 8];
}

inline std::string polyline(const std::vector<double>& xs,
                            const std::vector<double>& ys, const Mapper& m,
                            const char* color, double width = 1.0) {
  std::string s = "<polyline fill=\"none\" stroke=\"";
  s += color;
  s += "\" stroke-width=\"" + std::to_string(width) + "\" points=\"";
  char buf[64];
  for (std::size_t i = 0; i < xs.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.2f,%.2f ", m.px(xs[i]), m.py(ys[i]));
    s += buf;
  }
  s += "\"/>\n";
  return s;
}

inline std::string text(double x, double y, const std::string& label,
                        const char* color = "#333333", int size = 12) {
  return "<text x=\"" + std::to_string(x) + "\" y=\"" + std::to_string(y) +
         "\" font-family=\"monospace\" font-size=\"" + std::to_string(size) +
         "\" fill=\"" + color + "\">" + label + "</text>\n";
}

}  // namespace svg

/// Per-method loss traces on a log scale, one polyline per run.
inline std::string svg_loss_traces(
    const std::vector<std::string>& labels,
    const std::vector<std::vector<std::vector<double>>>& losses_per_cell) {
  const double W = 860, H = 520, PAD = 50;
  double ymin = 1e300, ymax = -1e300;
  std::size_t max_len = 2;
  for (const auto& cell : losses_per_cell) {
    for (const auto& run : cell) {
      max_len = std::max(max_len, run.size());
      for (double l : run) {
        const double v = std::log10(std::max(l, 1e-12));
        ymin = std::min(ymin, v);
        ymax = std::max(ymax, v);
      }
    }
  }
  if (ymin > ymax) {
    ymin = 0;
    ymax = 1;
  }
  svg::Mapper m{0, static_cast<double>(max_len - 1), ymin, ymax, W, H, PAD};
  std::string out = svg::header(W, H);
  out += svg::text(PAD, 20, "log10 guidance loss vs step");
  for (std::size_t c = 0; c < losses_per_cell.size(); ++c) {
    out += svg::text(PAD + 220.0 * static_cast<double>(c), 36, labels[c],
                     svg::palette(c));
    for (const auto& run : losses_per_cell[c]) {
      std::vector<double> xs, ys;
      for (std::size_t i = 0; i < run.size(); ++i) {
        xs.push_back(static_cast<double>(i));
        ys.push_back(std::log10(std::max(run[i], 1e-12)));
      }
      out += svg::polyline(xs, ys, m, svg::palette(c), 0.7);
    }
  }
  out += "</svg>\n";
  return out;
}

/// Bar chart of a per-method scalar metric.
inline std::string svg_comparison_bars(const std::vector<std::string>& labels,
                                       const std::vector<double>& values,
                                       const std::string& title) {
  const double W = 860, H = 420, PAD = 60;
  double vmax = 1e-12;
  for (double v : values) vmax = std::max(vmax, v);
  std::string out = svg::header(W, H);
  out += svg::text(PAD, 24, title);
  const double bar_w = (W - 2 * PAD) / std::max<std::size_t>(values.size(), 1);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double bh = (H - 2 * PAD) * values[i] / vmax;
    const double x = PAD + bar_w * static_cast<double>(i) + 6;
    const double y = H - PAD - bh;
    out += "<rect x=\"" + std::to_string(x) + "\" y=\"" + std::to_string(y) +
           "\" width=\"" + std::to_string(bar_w - 12) + "\" height=\"" +
           std::to_string(bh) + "\" fill=\"" + svg::palette(i) + "\"/>\n";
    out += svg::text(x, H - PAD + 16, labels[i], "#333333", 11);
    out += svg::text(x, y - 4, fmt_g17(values[i]).substr(0, 8), "#333333", 11);
  }
  out += "</svg>\n";
  return out;
}

/// Trajectory overlay: sampled paths, obstacles as circles, target as cross.
inline std::string svg_trajectories(const std::vector<Mat>& frames,
                                    const MotionCondition& cond) {
  const double W = 640, H = 640, PAD = 40;
  double x0 = -1, x1 = 1, y0 = -1, y1 = 1;
  for (const auto& f : frames) {
    for (Eigen::Index i = 0; i < f.rows(); ++i) {
      x0 = std::min(x0, f(i, 0));
      x1 = std::max(x1, f(i, 0));
      y0 = std::min(y0, f(i, 1));
      y1 = std::max(y1, f(i, 1));
    }
  }
  if (cond.target.size() == 2) {
    x0 = std::min(x0, cond.target[0] - 0.5);
    x1 = std::max(x1, cond.target[0] + 0.5);
    y0 = std::min(y0, cond.target[1] - 0.5);
    y1 = std::max(y1, cond.target[1] + 0.5);
  }
  svg::Mapper m{x0, x1, y0, y1, W, H, PAD};
  std::string out = svg::header(W, H);
  for (const auto& obs : cond.obstacles) {
    const double r =
        obs.radius / (x1 - x0 + 1e-300) * (W - 2 * PAD);
    out += "<circle cx=\"" + std::to_string(m.px(obs.center[0])) + "\" cy=\"" +
           std::to_string(m.py(obs.center[1])) + "\" r=\"" +
           std::to_string(r) +
           "\" fill=\"#f4cccc\" stroke=\"#d62728\"/>\n";
  }
  for (std::size_t k = 0; k < frames.size(); ++k) {
    std::vector<double> xs, ys;
    for (Eigen::Index i = 0; i < frames[k].rows(); ++i) {
      xs.push_back(frames[k](i, 0));
      ys.push_back(frames[k](i, 1));
    }
    out += svg::polyline(xs, ys, m, svg::palette(k), 1.0);
  }
  if (cond.target.size() == 2) {
    const double cx = m.px(cond.target[0]), cy = m.py(cond.target[1]);
    out += "<path d=\"M " + std::to_string(cx - 8) + " " + std::to_string(cy) +
           " L " + std::to_string(cx + 8) + " " + std::to_string(cy) + " M " +
           std::to_string(cx) + " " + std::to_string(cy - 8) + " L " +
           std::to_string(cx) + " " + std::to_string(cy + 8) +
           "\" stroke=\"black\" stroke-width=\"2\"/>\n";
  }
  out += "</svg>\n";
  return out;
}

}  // namespace difflab
