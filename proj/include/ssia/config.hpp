#pragma once

// Plain-text key=value run configuration covering the network, training plan
// and rain synthesizer. Unknown keys are rejected by name; CLI flags are
// applied on top of file values.

#include <fstream>
#include <stdexcept>
#include <string>

#include "ssia/derain_net.hpp"
#include "ssia/metrics.hpp"
#include "ssia/training.hpp"

namespace ssia {

struct RunConfig {
  NetConfig net;
  TrainPlan plan;
  RainSynthesisParams rain;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("config key '" + key + "': expected a boolean, got '" + v + "'");
}

inline int parse_int(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  int out = 0;
  try {
    out = std::stoi(v, &pos);
  } catch (const std::exception&) {
    pos = std::string::npos;
  }
  if (pos != v.size())
    throw std::invalid_argument("config key '" + key + "': expected an integer, got '" + v + "'");
  return out;
}

inline double parse_double(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double out = 0;
  try {
    out = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = std::string::npos;
  }
  if (pos != v.size())
    throw std::invalid_argument("config key '" + key + "': expected a number, got '" + v + "'");
  return out;
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  unsigned long long out = 0;
  try {
    out = std::stoull(v, &pos);
  } catch (const std::exception&) {
    pos = std::string::npos;
  }
  if (pos != v.size())
    throw std::invalid_argument("config key '" + key + "': expected an unsigned integer, got '" + v + "'");
  return out;
}

}  // namespace detail

inline LossKind parse_loss_kind(const std::string& v) {
  if (v == "neg_ssim") return LossKind::kNegSsim;
  if (v == "mae") return LossKind::kMae;
  if (v == "mse") return LossKind::kMse;
  throw std::invalid_argument("unknown loss '" + v +
                              "' (expected neg_ssim, mae or mse)");
}

inline void set_config_value(RunConfig& c, const std::string& key,
                             const std::string& value) {
  using detail::parse_bool;
  using detail::parse_double;
  using detail::parse_int;
  using detail::parse_u64;

  if (key == "channels") c.net.channels = parse_int(key, value);
  else if (key == "stages") c.net.stages = parse_int(key, value);
  else if (key == "use_sian") c.net.use_sian = parse_bool(key, value);
  else if (key == "use_lstm") c.net.use_lstm = parse_bool(key, value);
  else if (key == "sian_single_conv") c.net.sian_single_conv = parse_bool(key, value);
  else if (key == "share_sian_heads") c.net.share_sian_heads = parse_bool(key, value);
  else if (key == "lstm_pre_convs") c.net.lstm_pre_convs = parse_bool(key, value);
  else if (key == "sigma") c.net.sigma = parse_double(key, value);
  else if (key == "sigma_prime") c.net.sigma_prime = parse_double(key, value);
  else if (key == "k") c.net.k = parse_double(key, value);
  else if (key == "epochs") c.plan.epochs = parse_int(key, value);
  else if (key == "batch_size") c.plan.batch_size = parse_int(key, value);
  else if (key == "patch_size") c.plan.patch_size = parse_int(key, value);
  else if (key == "patch_stride") c.plan.patch_stride = parse_int(key, value);
  else if (key == "flip") c.plan.flip = parse_bool(key, value);
  else if (key == "seed") {
    c.plan.seed = parse_u64(key, value);
    c.rain.seed = c.plan.seed;
  } else if (key == "loss") c.plan.loss = parse_loss_kind(value);
  else if (key == "lr") c.plan.lr = parse_double(key, value);
  else if (key == "max_steps") c.plan.max_steps = parse_int(key, value);
  else if (key == "rain_count_min") c.rain.count_min = parse_int(key, value);
  else if (key == "rain_count_max") c.rain.count_max = parse_int(key, value);
  else if (key == "rain_length_min") c.rain.length_min = parse_double(key, value);
  else if (key == "rain_length_max") c.rain.length_max = parse_double(key, value);
  else if (key == "rain_width_min") c.rain.width_min = parse_double(key, value);
  else if (key == "rain_width_max") c.rain.width_max = parse_double(key, value);
  else if (key == "rain_angle_max_deg") c.rain.angle_max_deg = parse_double(key, value);
  else if (key == "rain_intensity_min") c.rain.intensity_min = parse_double(key, value);
  else if (key == "rain_intensity_max") c.rain.intensity_max = parse_double(key, value);
  else if (key == "rain_blur_sigma") c.rain.blur_sigma = parse_double(key, value);
  else if (key == "rain_seed") c.rain.seed = parse_u64(key, value);
  else
    throw std::invalid_argument("unknown config key '" + key + "'");
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path);
  RunConfig c;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument(path + ":" + std::to_string(lineno) +
                                  ": expected key=value, got '" + line + "'");
    set_config_value(c, detail::trim(line.substr(0, eq)),
                     detail::trim(line.substr(eq + 1)));
  }
  return c;
}

}  // namespace ssia
