#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

namespace dropbp {

using BigInt = boost::multiprecision::cpp_int;
using BigRational = boost::multiprecision::cpp_rational;

BigInt binomial(unsigned n, unsigned k);
// C(n, k) / 2^n for k = 0..n, exact.
std::vector<BigRational> binomial_weights(unsigned n);

enum class SubmoduleMethod { freeze, dropbp };
SubmoduleMethod parse_submodule_method(const std::string& text);
const char* to_string(SubmoduleMethod method);

struct SubmoduleCount {
  BigInt count;
  std::size_t trained_layers = 0;  // floor(n_layers * (1 - p))
  bool floored = false;            // n_layers * (1 - p) was not an integer
};

// Number of residual-expansion paths that receive gradient.
//   freeze: 2^m, the paths through the m trained layers
//   dropbp: sum_{i=0}^{m} C(n_layers, i), paths of length at most m
SubmoduleCount submodule_count(std::size_t n_layers, double p, SubmoduleMethod method);

}  // namespace dropbp
