#include "dropbp/submodules.hpp"

#include <cmath>

#include "dropbp/error.hpp"

namespace dropbp {

BigInt binomial(unsigned n, unsigned k) {
  if (k > n) return 0;
  if (k > n - k) k = n - k;
  BigInt result = 1;
  // Each partial product is itself a binomial coefficient, so the division
  // is exact.
  for (unsigned i = 1; i <= k; ++i) {
    result *= n - k + i;
    result /= i;
  }
  return result;
}

std::vector<BigRational> binomial_weights(unsigned n) {
  const BigInt total = BigInt(1) << n;
  std::vector<BigRational> w;
  w.reserve(n + 1);
  for (unsigned k = 0; k <= n; ++k) w.emplace_back(binomial(n, k), total);
  return w;
}

SubmoduleMethod parse_submodule_method(const std::string& text) {
  if (text == "freeze") return SubmoduleMethod::freeze;
  if (text == "dropbp") return SubmoduleMethod::dropbp;
  throw InputError("unknown submodule method '" + text + "' (expected freeze or dropbp)");
}

const char* to_string(SubmoduleMethod method) {
  return method == SubmoduleMethod::freeze ? "freeze" : "dropbp";
}

SubmoduleCount submodule_count(std::size_t n_layers, double p, SubmoduleMethod method) {
  if (!(p >= 0.0 && p <= 1.0)) throw ArgumentError("skip rate outside [0, 1]");
  const double trained = static_cast<double>(n_layers) * (1.0 - p);
  SubmoduleCount out;
  out.trained_layers = static_cast<std::size_t>(std::floor(trained + 1e-9));
  out.floored = std::abs(trained - std::round(trained)) > 1e-9;
  const auto m = static_cast<unsigned>(out.trained_layers);
  if (method == SubmoduleMethod::freeze) {
    out.count = BigInt(1) << m;
  } else {
    out.count = 0;
    for (unsigned i = 0; i <= m; ++i) out.count += binomial(static_cast<unsigned>(n_layers), i);
  }
  return out;
}

}  // namespace dropbp
