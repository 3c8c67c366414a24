#pragma once

#include <random>

#include "tsq/symbol.hpp"

namespace tsq::testing {

// Random real-valued symbol of total degree <= 2 on `modes` modes.
inline ComplexPolynomial random_quadratic_symbol(int modes, std::mt19937_64& rng, double hbar = 1.0) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  ComplexPolynomial h(modes, hbar);
  std::vector<std::pair<std::vector<int>, std::vector<int>>> shapes;
  std::vector<int> zero(modes, 0);
  for (int i = 0; i < modes; ++i) {
    std::vector<int> e = zero;
    e[i] = 1;
    shapes.push_back({e, zero});
    for (int j = i; j < modes; ++j) {
      std::vector<int> f = e;
      f[j] += 1;
      shapes.push_back({f, zero});
    }
    for (int j = 0; j < modes; ++j) {
      std::vector<int> g = zero;
      g[j] = 1;
      if (j >= i) shapes.push_back({e, g});
    }
  }
  h.add_term({zero, zero}, u(rng));
  for (const auto& [a, b] : shapes) {
    const Complex c(u(rng), u(rng));
    if (a == b) {
      h.add_term({a, b}, c.real());
    } else {
      h.add_term({a, b}, c);
      h.add_term({b, a}, std::conj(c));
    }
  }
  return h;
}

}  // namespace tsq::testing
