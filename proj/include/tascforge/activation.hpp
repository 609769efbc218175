#pragma once

#include <cmath>
#include <string>

#include "tascforge/errors.hpp"

namespace tascforge {

enum class Activation { Sigmoid, TanH, ReLU, ELU, SELU };

inline constexpr double kSeluLambda = 1.0507009873554804934193349852946;
inline constexpr double kSeluAlpha = 1.6732632423543772848170429916717;

inline const char* activation_name(Activation a) {
  switch (a) {
    case Activation::Sigmoid: return "sigmoid";
    case Activation::TanH: return "tanh";
    case Activation::ReLU: return "relu";
    case Activation::ELU: return "elu";
    case Activation::SELU: return "selu";
  }
  return "?";
}

inline Activation activation_from_name(const std::string& s) {
  if (s == "sigmoid") return Activation::Sigmoid;
  if (s == "tanh") return Activation::TanH;
  if (s == "relu") return Activation::ReLU;
  if (s == "elu") return Activation::ELU;
  if (s == "selu") return Activation::SELU;
  fail(ErrorCode::InvalidConfig, "unknown activation '" + s + "'");
}

inline double activate(Activation a, double x) {
  switch (a) {
    case Activation::Sigmoid: return 1.0 / (1.0 + std::exp(-x));
    case Activation::TanH: return std::tanh(x);
    case Activation::ReLU: return x > 0.0 ? x : 0.0;
    case Activation::ELU: return x > 0.0 ? x : std::expm1(x);
    case Activation::SELU:
      return x > 0.0 ? kSeluLambda * x : kSeluLambda * kSeluAlpha * std::expm1(x);
  }
  return x;
}

// Derivative expressed through the pre-activation x.
inline double activate_grad(Activation a, double x) {
  switch (a) {
    case Activation::Sigmoid: {
      double s = 1.0 / (1.0 + std::exp(-x));
      return s * (1.0 - s);
    }
    case Activation::TanH: {
      double t = std::tanh(x);
      return 1.0 - t * t;
    }
    case Activation::ReLU: return x > 0.0 ? 1.0 : 0.0;
    case Activation::ELU: return x > 0.0 ? 1.0 : std::exp(x);
    case Activation::SELU:
      return x > 0.0 ? kSeluLambda : kSeluLambda * kSeluAlpha * std::exp(x);
  }
  return 1.0;
}

}  // namespace tascforge
