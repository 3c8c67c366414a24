#include <cmath>
#include <sstream>

#include "doctest.h"
#include "tsq/grid.hpp"

using namespace tsq;

TEST_CASE("grid shape and validation") {
  const PhaseGrid g = PhaseGrid::uniform(2, -1.0, 1.0, 0.1);
  CHECK(g.dims() == 2);
  CHECK(g.axis(0).count == 21);
  CHECK(g.size() == 441);
  CHECK(g.axis(0).label == "x1");
  CHECK(g.axis(1).label == "y1");
  CHECK(g.point(22)[0] == doctest::Approx(-0.9));
  CHECK(g.point(22)[1] == doctest::Approx(-0.9));
  CHECK(g.interior(22, 1));
  CHECK_FALSE(g.interior(22, 2));
  CHECK_THROWS_AS(PhaseGrid::uniform(1, 0.0, 1.0, 0.1), Error);  // 11 points
  CHECK_THROWS_AS(PhaseGrid({GridAxis{0.0, -0.1, 20, "x"}}), Error);
}

TEST_CASE("fornberg weights reproduce classic stencils") {
  const auto w = fd_weights({-1, 0, 1}, 0.0, 2);
  CHECK(w[0] == doctest::Approx(1.0));
  CHECK(w[1] == doctest::Approx(-2.0));
  CHECK(w[2] == doctest::Approx(1.0));
  const auto w4 = fd_weights({-2, -1, 0, 1, 2}, 0.0, 1);
  CHECK(w4[0] == doctest::Approx(1.0 / 12));
  CHECK(w4[1] == doctest::Approx(-2.0 / 3));
  CHECK(w4[3] == doctest::Approx(2.0 / 3));
}

TEST_CASE("grid derivatives are fourth-order accurate") {
  auto err = [](double h, int order, bool edges) {
    const PhaseGrid g = PhaseGrid::uniform(1, -2.0, 2.0, h);
    Vec f(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) f[i] = std::sin(1.3 * g.point(i)[0]);
    const Vec d = grid_derivative(g, f, 0, order);
    const int skip = edges ? 0 : stencil_half_width(order);
    double worst = 0;
    for (int i = skip; i < static_cast<int>(g.size()) - skip; ++i) {
      const double x = g.point(i)[0];
      const double exact = std::pow(1.3, order) * std::sin(1.3 * x + order * M_PI / 2);
      worst = std::max(worst, std::abs(d[i] - exact));
    }
    return worst;
  };
  for (int order = 1; order <= kMaxStencilOrder; ++order) {
    const double h = order <= 4 ? 0.04 : 0.2;
    CHECK(std::log2(err(h, order, false) / err(h / 2, order, false)) > 3.5);
  }
  // one-sided edge windows keep first derivatives fourth order
  CHECK(std::log2(err(0.04, 1, true) / err(0.02, 1, true)) > 3.5);
  CHECK_THROWS_AS(stencil_half_width(7), Error);
}

TEST_CASE("polynomials are differentiated exactly") {
  const PhaseGrid g = PhaseGrid::uniform(2, -1.0, 1.0, 0.1);
  Vec f(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    const Vec p = g.point(i);
    f[i] = p[0] * p[0] * p[0] * p[1];
  }
  const Vec dxy = grid_derivative(g, grid_derivative(g, f, 0, 2), 1, 1);
  for (std::size_t i = 0; i < g.size(); ++i) CHECK(dxy[i] == doctest::Approx(6 * g.point(i)[0]).epsilon(1e-9));
}

TEST_CASE("field integrals honour the measure") {
  const PhaseGrid g = PhaseGrid::uniform(2, -6, 6, 0.1);
  QField q{g, Vec(g.size()), 0.0, Measure::alpha_area};
  for (std::size_t i = 0; i < g.size(); ++i) q.values[i] = std::exp(-g.point(i).squaredNorm() / 2) / M_PI;
  CHECK(q.integral() == doctest::Approx(1.0).epsilon(1e-7));
  q.measure = Measure::phase_space;
  CHECK(q.integral() == doctest::Approx(2.0).epsilon(1e-7));
}

TEST_CASE("field csv") {
  const PhaseGrid g = PhaseGrid::uniform(2, 0, 1.5, 0.1);
  QField q{g, Vec::Ones(g.size()), 0.0, Measure::phase_space};
  std::ostringstream out;
  write_field_csv(out, q);
  std::istringstream in(out.str());
  std::string header;
  std::getline(in, header);
  CHECK(header == "x1,y1,Q");
  int lines = 0;
  std::string line;
  while (std::getline(in, line)) ++lines;
  CHECK(lines == static_cast<int>(g.size()));
}
