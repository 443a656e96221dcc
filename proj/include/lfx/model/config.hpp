#pragma once

#include <cstddef>
#include <string>

#include <json.hpp>
#include "lfx/error.hpp"
#include "lfx/model/xmask.hpp"

namespace lfx::model {

enum class Task { SSR, ASR };

inline std::string to_string(Task t) { return t == Task::SSR ? "ssr" : "asr"; }

inline Task parse_task(const std::string& s) {
  if (s == "ssr" || s == "SSR") return Task::SSR;
  if (s == "asr" || s == "ASR") return Task::ASR;
  throw ConfigError("unknown task '" + s + "' (expected ssr or asr)");
}

struct C42BlockConfig {
  std::size_t channels = 64;
  std::size_t angular = 5;
  bool use_vsi = true;
  double slope = 0.1;
};

struct MHXAConfig {
  std::size_t channels = 64;
  std::size_t heads = 4;
  double d_max = 2.0;
  double eps = 1e-5;
};

// d_max defaults by task: 2 px (SSR), 6 px (real-scene ASR), 18 px
// (synthetic ASR).
inline constexpr double kDmaxSSR = 2.0;
inline constexpr double kDmaxASRReal = 6.0;
inline constexpr double kDmaxASRSynthetic = 18.0;

struct NetworkConfig {
  Task task = Task::SSR;
  std::size_t in_channels = 1;
  std::size_t channels = 64;
  std::size_t n_c42 = 6;
  std::size_t n_epix = 6;
  std::size_t heads = 4;
  double d_max = kDmaxSSR;
  std::size_t scale = 2;      // SSR factor alpha
  std::size_t angular = 5;    // SSR angular size A (U = V = A)
  std::size_t asr_in = 2;     // ASR sparse angular size
  std::size_t asr_out = 7;    // ASR dense angular size
  std::size_t asr_stride = 6; // beta: angular sampling stride of the sparse views
  bool bicubic_skip = true;
  bool use_vsi = true;
  bool use_epixformer = true;
  bool tie_epix_weights = false;
  bool asr_copy_inputs = false;

  std::size_t input_angular() const { return task == Task::SSR ? angular : asr_in; }
  std::size_t output_angular() const { return task == Task::SSR ? angular : asr_out; }

  void validate() const {
    if (channels == 0 || in_channels == 0) throw ConfigError("model: channels must be >= 1");
    if (heads == 0 || channels % heads != 0)
      throw ConfigError("model: channels must be divisible by heads");
    if (!(d_max > 0.0)) throw ConfigError("model: d_max must be > 0");
    if (task == Task::SSR) {
      if (scale != 2 && scale != 4) throw ConfigError("model: SSR scale must be 2 or 4");
      if (angular == 0) throw ConfigError("model: angular must be >= 1");
    } else {
      if (asr_in == 0 || asr_out <= asr_in) throw ConfigError("model: ASR needs asr_out > asr_in");
      if (asr_in >= 2 && (asr_out - 1) % (asr_in - 1) != 0)
        throw ConfigError("model: ASR grid must place sparse views on the dense grid");
    }
  }

  // Full-size defaults for each task.
  static NetworkConfig full_ssr(std::size_t scale = 2) {
    NetworkConfig c;
    c.task = Task::SSR;
    c.scale = scale;
    return c;
  }
  static NetworkConfig full_asr(bool synthetic = false) {
    NetworkConfig c;
    c.task = Task::ASR;
    c.d_max = synthetic ? kDmaxASRSynthetic : kDmaxASRReal;
    return c;
  }
};

inline nlohmann::json to_json(const NetworkConfig& c) {
  return {{"task", to_string(c.task)},
          {"in_channels", c.in_channels},
          {"channels", c.channels},
          {"n_c42", c.n_c42},
          {"n_epix", c.n_epix},
          {"heads", c.heads},
          {"d_max", c.d_max == kUnbounded ? nlohmann::json("inf") : nlohmann::json(c.d_max)},
          {"scale", c.scale},
          {"angular", c.angular},
          {"asr_in", c.asr_in},
          {"asr_out", c.asr_out},
          {"asr_stride", c.asr_stride},
          {"bicubic_skip", c.bicubic_skip},
          {"use_vsi", c.use_vsi},
          {"use_epixformer", c.use_epixformer},
          {"tie_epix_weights", c.tie_epix_weights},
          {"asr_copy_inputs", c.asr_copy_inputs}};
}

inline double parse_dmax(const nlohmann::json& j) {
  if (j.is_string()) {
    if (j.get<std::string>() == "inf") return kUnbounded;
    throw ConfigError("model: d_max must be a number or \"inf\"");
  }
  return j.get<double>();
}

// Missing keys keep their defaults; unknown keys are rejected.
inline NetworkConfig network_config_from_json(const nlohmann::json& j) {
  NetworkConfig c;
  if (!j.is_object()) throw ConfigError("model: config must be an object");
  try {
    for (auto it = j.begin(); it != j.end(); ++it) {
      const auto& k = it.key();
      const auto& v = it.value();
      if (k == "task") c.task = parse_task(v.get<std::string>());
      else if (k == "in_channels") c.in_channels = v.get<std::size_t>();
      else if (k == "channels") c.channels = v.get<std::size_t>();
      else if (k == "n_c42") c.n_c42 = v.get<std::size_t>();
      else if (k == "n_epix") c.n_epix = v.get<std::size_t>();
      else if (k == "heads") c.heads = v.get<std::size_t>();
      else if (k == "d_max") c.d_max = parse_dmax(v);
      else if (k == "scale") c.scale = v.get<std::size_t>();
      else if (k == "angular") c.angular = v.get<std::size_t>();
      else if (k == "asr_in") c.asr_in = v.get<std::size_t>();
      else if (k == "asr_out") c.asr_out = v.get<std::size_t>();
      else if (k == "asr_stride") c.asr_stride = v.get<std::size_t>();
      else if (k == "bicubic_skip") c.bicubic_skip = v.get<bool>();
      else if (k == "use_vsi") c.use_vsi = v.get<bool>();
      else if (k == "use_epixformer") c.use_epixformer = v.get<bool>();
      else if (k == "tie_epix_weights") c.tie_epix_weights = v.get<bool>();
      else if (k == "asr_copy_inputs") c.asr_copy_inputs = v.get<bool>();
      else throw ConfigError("model: unknown key '" + k + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
  c.validate();
  return c;
}

}  // namespace lfx::model
