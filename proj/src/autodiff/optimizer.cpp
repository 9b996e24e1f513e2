#include "trajgp/autodiff/optimizer.hpp"

#include "trajgp/encoding.hpp"

#include <nlohmann/json.hpp>

#include <bit>
#include <cmath>
#include <cstring>

namespace trajgp::ad {

std::map<std::string, Var> bind_params(Tape& tape, const ParamStore& params) {
  std::map<std::string, Var> vars;
  for (const auto& [name, value] : params) vars.emplace(name, tape.parameter(name, value));
  return vars;
}

void adam_step(ParamStore& params, const Gradients& grads, AdamState& state, const AdamConfig& config) {
  double norm2 = 0.0;
  for (const auto& [name, g] : grads) {
    auto it = params.find(name);
    if (it == params.end()) throw Error("adam_step: gradient for unknown parameter '" + name + "'");
    if (it->second.rows() != g.rows() || it->second.cols() != g.cols()) {
      throw ShapeError("adam_step: gradient shape mismatch for '" + name + "'");
    }
    if (!g.allFinite()) throw NumericalError("adam_step: non-finite gradient for parameter '" + name + "'");
    norm2 += g.squaredNorm();
  }
  double clip = 1.0;
  if (config.clip_norm > 0.0 && std::sqrt(norm2) > config.clip_norm) {
    clip = config.clip_norm / std::sqrt(norm2);
  }

  ++state.step;
  const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
  for (const auto& [name, g_raw] : grads) {
    Matrix& p = params.at(name);
    auto [m_it, m_new] = state.first_moment.try_emplace(name, Matrix::Zero(p.rows(), p.cols()));
    auto [v_it, v_new] = state.second_moment.try_emplace(name, Matrix::Zero(p.rows(), p.cols()));
    Matrix& m = m_it->second;
    Matrix& v = v_it->second;
    const Matrix g = clip * g_raw;
    m = config.beta1 * m + (1.0 - config.beta1) * g;
    v = config.beta2 * v + (1.0 - config.beta2) * g.cwiseAbs2();
    p.array() -= config.learning_rate * (m.array() / bc1) / ((v.array() / bc2).sqrt() + config.epsilon);
  }
}

std::string encode_params(const ParamStore& params) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [name, value] : params) {
    std::string bytes(static_cast<std::size_t>(value.size()) * sizeof(double), '\0');
    for (Eigen::Index i = 0; i < value.size(); ++i) {
      std::uint64_t bits = std::bit_cast<std::uint64_t>(value.data()[i]);
      for (int b = 0; b < 8; ++b) bytes[static_cast<std::size_t>(i) * 8 + b] = static_cast<char>((bits >> (8 * b)) & 0xff);
    }
    j[name] = {{"shape", {value.rows(), value.cols()}}, {"data", base64_encode(bytes)}};
  }
  return j.dump();
}

ParamStore decode_params(const std::string& json_text) {
  ParamStore params;
  const nlohmann::json j = nlohmann::json::parse(json_text);
  for (const auto& [name, entry] : j.items()) {
    const auto rows = entry.at("shape").at(0).get<Eigen::Index>();
    const auto cols = entry.at("shape").at(1).get<Eigen::Index>();
    const std::string bytes = base64_decode(entry.at("data").get<std::string>());
    if (bytes.size() != static_cast<std::size_t>(rows * cols) * sizeof(double)) {
      throw DataError("checkpoint entry '" + name + "' has " + std::to_string(bytes.size()) +
                      " bytes, expected " + std::to_string(rows * cols * 8));
    }
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      std::uint64_t bits = 0;
      for (int b = 0; b < 8; ++b) {
        bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[static_cast<std::size_t>(i) * 8 + b])) << (8 * b);
      }
      m.data()[i] = std::bit_cast<double>(bits);
    }
    params.emplace(name, std::move(m));
  }
  return params;
}

}  // namespace trajgp::ad
