#pragma once

#include "trajgp/autodiff/tape.hpp"

#include <filesystem>
#include <map>
#include <string>

namespace trajgp::ad {

/// Named trainable tensors. Ordered so iteration (and therefore every
/// serialized form) is deterministic.
using ParamStore = std::map<std::string, Matrix>;

/// Registers every entry of the store as a trainable leaf on the tape.
std::map<std::string, Var> bind_params(Tape& tape, const ParamStore& params);

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// Global gradient-norm clip; <= 0 disables clipping.
  double clip_norm = 0.0;
};

struct AdamState {
  std::map<std::string, Matrix> first_moment;
  std::map<std::string, Matrix> second_moment;
  long step = 0;
};

/// One Adam update. Parameters without a gradient entry are left untouched.
/// A non-finite gradient rejects the whole step (nothing is modified) and
/// throws NumericalError naming the offending parameter.
void adam_step(ParamStore& params, const Gradients& grads, AdamState& state, const AdamConfig& config);

/// Serializes parameters as JSON: name -> {shape, little-endian IEEE-754
/// doubles in base64}. Decoding reproduces every bit.
std::string encode_params(const ParamStore& params);
ParamStore decode_params(const std::string& json_text);

}  // namespace trajgp::ad
