#pragma once

// Pipeline configuration and its key-value file format.
//
// One `key = value` pair per line; `#` starts a comment; blank lines are
// ignored. Keys are the field names listed by PipelineConfig::keys(). Booleans
// accept true/false/1/0. Unknown keys and out-of-range values are errors.

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "dqomap/association.hpp"
#include "dqomap/errors.hpp"
#include "dqomap/masks.hpp"
#include "dqomap/quadric_optimizer.hpp"
#include "dqomap/renderer.hpp"

namespace dqo {

inline std::string to_string(AssociationStrategy s) {
  switch (s) {
    case AssociationStrategy::iou_only: return "iou_only";
    case AssociationStrategy::qd_only: return "qd_only";
    case AssociationStrategy::qd_iou: return "qd_iou";
  }
  return "?";
}

inline AssociationStrategy strategy_from_string(const std::string& s) {
  if (s == "iou_only") return AssociationStrategy::iou_only;
  if (s == "qd_only") return AssociationStrategy::qd_only;
  if (s == "qd_iou") return AssociationStrategy::qd_iou;
  throw ConfigError("unknown association strategy '" + s + "' (iou_only, qd_only, qd_iou)");
}

struct PipelineConfig {
  // association
  double iou_gate = 0.3;
  double qd_accept = 0.6;
  double tau = 1.0;
  double t_thre = 0.85;
  double merge_d = 0.1;
  std::string strategy = "qd_iou";
  // quadric optimizer
  int quadric_max_iters = 200;
  double quadric_rel_tol = 1e-4;
  int quadric_window = 5;
  int min_obs = 3;
  int quadric_max_obs = 60;  // observations used per optimization, evenly subsampled; 0 = all
  bool yaw_only = false;
  double min_ray_spread = 5e-3;  // below this the views are too alike to constrain depth
  // update masks and densification
  double theta_alpha = 0.9;
  double theta_d = 0.1;
  double theta_c = 0.1;
  bool include_background = false;
  double og = kOpaqueInit;
  double tg = kTransparentInit;
  int stride = 4;
  // Gaussian optimization
  bool enable_gaussians = true;
  bool train_all = false;
  double lambda = 0.5;
  int gaussian_iters = 30;
  int frame_window = 1;
  double lr_mean = 1e-4;
  double lr_scale = 5e-4;
  double lr_rotation = 5e-3;
  double lr_opacity = 0.02;
  double lr_color = 0.02;
  // evaluation and execution
  double recon_threshold_cm = 5.0;
  int seed = 0;
  int workers = 1;

  using Field = std::variant<double PipelineConfig::*, int PipelineConfig::*, bool PipelineConfig::*,
                             std::string PipelineConfig::*>;
  struct Key {
    const char* name;
    Field field;
    double lo, hi;  // inclusive numeric range
    const char* help;
  };

  static const std::vector<Key>& keys() {
    static const double inf = std::numeric_limits<double>::infinity();
    static const std::vector<Key> k = {
        {"iou_gate", &PipelineConfig::iou_gate, 0, 1, "coarse association 2D IoU gate"},
        {"qd_accept", &PipelineConfig::qd_accept, 0, 1, "minimum quadric similarity to accept a match"},
        {"tau", &PipelineConfig::tau, 1e-9, inf, "quadric similarity decay"},
        {"t_thre", &PipelineConfig::t_thre, 0, 1, "projected overlap ratio for occlusion merging"},
        {"merge_d", &PipelineConfig::merge_d, 0, inf, "containment slack for occlusion merging"},
        {"strategy", &PipelineConfig::strategy, 0, 0, "association strategy: qd_iou, iou_only, qd_only"},
        {"quadric_max_iters", &PipelineConfig::quadric_max_iters, 0, 1e6, "pose optimizer iteration cap"},
        {"quadric_rel_tol", &PipelineConfig::quadric_rel_tol, 0, 1, "pose optimizer relative tolerance"},
        {"quadric_window", &PipelineConfig::quadric_window, 1, 1000, "pose optimizer convergence window"},
        {"min_obs", &PipelineConfig::min_obs, 1, 1e6, "observations before a track is optimized"},
        {"quadric_max_obs", &PipelineConfig::quadric_max_obs, 0, 1e6, "observations per pose optimization (0 = all)"},
        {"yaw_only", &PipelineConfig::yaw_only, 0, 1, "optimize only the rotation about z"},
        {"min_ray_spread", &PipelineConfig::min_ray_spread, 0, 1, "viewing-ray spread needed before pose optimization"},
        {"theta_alpha", &PipelineConfig::theta_alpha, 0, 1, "instance accumulation threshold"},
        {"theta_d", &PipelineConfig::theta_d, 0, inf, "depth error threshold (m)"},
        {"theta_c", &PipelineConfig::theta_c, 0, 1, "color error threshold"},
        {"include_background", &PipelineConfig::include_background, 0, 1, "grow masks on background pixels"},
        {"og", &PipelineConfig::og, kOpacitySplit, 1, "initial opacity of opaque Gaussians"},
        {"tg", &PipelineConfig::tg, 0, kOpacitySplit, "initial opacity of transparent Gaussians"},
        {"stride", &PipelineConfig::stride, 1, 1024, "densification pixel spacing"},
        {"enable_gaussians", &PipelineConfig::enable_gaussians, 0, 1, "run the Gaussian mapping stage"},
        {"train_all", &PipelineConfig::train_all, 0, 1, "optimize every visible Gaussian instead of masked ones"},
        {"lambda", &PipelineConfig::lambda, 0, inf, "instance loss weight"},
        {"gaussian_iters", &PipelineConfig::gaussian_iters, 0, 1e6, "Gaussian optimizer steps per frame"},
        {"frame_window", &PipelineConfig::frame_window, 1, 1000, "recent frames in the Gaussian loss"},
        {"lr_mean", &PipelineConfig::lr_mean, 0, inf, "learning rate for means"},
        {"lr_scale", &PipelineConfig::lr_scale, 0, inf, "learning rate for scales"},
        {"lr_rotation", &PipelineConfig::lr_rotation, 0, inf, "learning rate for rotations"},
        {"lr_opacity", &PipelineConfig::lr_opacity, 0, inf, "learning rate for opacities"},
        {"lr_color", &PipelineConfig::lr_color, 0, inf, "learning rate for colors"},
        {"recon_threshold_cm", &PipelineConfig::recon_threshold_cm, 0, inf, "completion ratio threshold (cm)"},
        {"seed", &PipelineConfig::seed, 0, 2147483647, "random seed"},
        {"workers", &PipelineConfig::workers, 1, 1024, "worker threads"},
    };
    return k;
  }

  static const Key& key(const std::string& name) {
    for (const auto& k : keys())
      if (name == k.name) return k;
    throw ConfigError("unknown config key '" + name + "'");
  }

  void set(const std::string& name, const std::string& value) {
    const Key& k = key(name);
    auto bad = [&] { return ConfigError("invalid value '" + value + "' for " + name); };
    std::visit(
        [&](auto member) {
          using T = std::remove_reference_t<decltype(this->*member)>;
          if constexpr (std::is_same_v<T, std::string>) {
            this->*member = value;
          } else if constexpr (std::is_same_v<T, bool>) {
            if (value == "true" || value == "1") this->*member = true;
            else if (value == "false" || value == "0") this->*member = false;
            else throw bad();
          } else {
            std::istringstream is(value);
            T v;
            if (!(is >> v) || !(is >> std::ws).eof()) throw bad();
            this->*member = v;
          }
        },
        k.field);
    validate();
  }

  std::string get(const std::string& name) const {
    const Key& k = key(name);
    return std::visit(
        [&](auto member) -> std::string {
          using T = std::remove_cvref_t<decltype(this->*member)>;
          if constexpr (std::is_same_v<T, std::string>) {
            return this->*member;
          } else if constexpr (std::is_same_v<T, bool>) {
            return this->*member ? "true" : "false";
          } else {
            char buf[64];
            const auto r = std::to_chars(buf, buf + sizeof buf, this->*member);  // shortest exact form
            return std::string(buf, r.ptr);
          }
        },
        k.field);
  }

  void validate() const {
    for (const auto& k : keys()) {
      std::visit(
          [&](auto member) {
            using T = std::remove_cvref_t<decltype(this->*member)>;
            if constexpr (std::is_arithmetic_v<T> && !std::is_same_v<T, bool>) {
              const double v = static_cast<double>(this->*member);
              if (!(v >= k.lo && v <= k.hi))
                throw ConfigError(std::string(k.name) + " = " + get(k.name) + " is outside [" + std::to_string(k.lo) +
                                  ", " + std::to_string(k.hi) + "]");
            }
          },
          k.field);
    }
    strategy_from_string(strategy);
  }

  std::string to_text() const {
    std::string out;
    for (const auto& k : keys()) out += std::string(k.name) + " = " + get(k.name) + "\n";
    return out;
  }

  static PipelineConfig from_text(const std::string& text, const std::string& origin = "<config>") {
    PipelineConfig c;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (const auto h = line.find('#'); h != std::string::npos) line.erase(h);
      const auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return std::string();
        return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
      };
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
      try {
        c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
      } catch (const ConfigError& e) {
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
      }
    }
    return c;
  }

  static PipelineConfig load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot read config file " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return from_text(ss.str(), path);
  }

  bool operator==(const PipelineConfig&) const = default;

  AssocConfig assoc() const {
    AssocConfig a;
    a.iou_gate = iou_gate;
    a.qd_accept = qd_accept;
    a.tau = tau;
    a.t_thre = t_thre;
    a.merge_d = merge_d;
    a.strategy = strategy_from_string(strategy);
    return a;
  }

  OptimConfig quadric() const {
    OptimConfig o;
    o.max_iters = quadric_max_iters;
    o.rel_tol = quadric_rel_tol;
    o.window = quadric_window;
    o.min_obs = min_obs;
    o.yaw_only = yaw_only;
    o.min_ray_spread = min_ray_spread;
    return o;
  }

  MaskConfig masks() const { return {theta_alpha, theta_d, theta_c, include_background}; }

  DensifyConfig densify() const { return {stride, og, tg}; }

  ObjectOptimConfig gaussians() const {
    ObjectOptimConfig o;
    o.iters = gaussian_iters;
    o.lr_mean = lr_mean;
    o.lr_scale = lr_scale;
    o.lr_rotation = lr_rotation;
    o.lr_opacity = lr_opacity;
    o.lr_color = lr_color;
    o.lambda = lambda;
    o.fit_background = include_background;
    return o;
  }
};

}  // namespace dqo
