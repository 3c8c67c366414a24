#pragma once

// Rectangular phase-space grids, finite-difference stencils, and gridded densities.

#include <iosfwd>
#include <string>
#include <vector>

#include "tsq/common.hpp"

namespace tsq {

struct GridAxis {
  double min = 0.0;
  double spacing = 0.0;
  int count = 0;
  std::string label;

  [[nodiscard]] double coord(int i) const { return min + spacing * i; }
  [[nodiscard]] double max() const { return coord(count - 1); }
};

class PhaseGrid {
 public:
  PhaseGrid() = default;
  explicit PhaseGrid(std::vector<GridAxis> axes);

  /// Uniform grid [lo, hi] with spacing h on each of `dims` axes, labelled x1..xN, y1..yN
  /// when dims is even (phase space), or a1.. otherwise.
  static PhaseGrid uniform(int dims, double lo, double hi, double h);

  [[nodiscard]] int dims() const { return static_cast<int>(axes_.size()); }
  [[nodiscard]] const GridAxis& axis(int k) const { return axes_[k]; }
  [[nodiscard]] const std::vector<GridAxis>& axes() const { return axes_; }
  [[nodiscard]] std::size_t size() const { return size_; }
  [[nodiscard]] double cell_volume() const;
  [[nodiscard]] std::size_t stride(int k) const { return strides_[k]; }

  [[nodiscard]] std::vector<int> unflatten(std::size_t flat) const;
  [[nodiscard]] Vec point(std::size_t flat) const;
  /// True if every index lies at least `margin` cells away from the grid edge.
  [[nodiscard]] bool interior(std::size_t flat, int margin) const;
  bool operator==(const PhaseGrid& o) const;

 private:
  std::vector<GridAxis> axes_;
  std::vector<std::size_t> strides_;
  std::size_t size_ = 0;
};

/// Finite-difference weights (Fornberg) for the `order`-th derivative at `x0` given nodes.
std::vector<double> fd_weights(const std::vector<double>& nodes, double x0, int order);

/// Highest derivative order supported by the stencil tables.
inline constexpr int kMaxStencilOrder = 6;
/// Stencil half width for 4th-order-accurate central differences of a given derivative order.
int stencil_half_width(int order);

/// d^order f / d axis^order with 4th-order central stencils, one-sided near the edges.
Vec grid_derivative(const PhaseGrid& g, const Vec& f, int axis, int order);
CVec grid_derivative(const PhaseGrid& g, const CVec& f, int axis, int order);

/// Area element convention for a gridded density.
enum class Measure {
  phase_space,  // density w.r.t. d phi (product of real coordinates)
  alpha_area,   // density w.r.t. d^2N alpha = d phi / 2^N (Husimi convention)
};

/// Real density sampled on a PhaseGrid.
struct QField {
  PhaseGrid grid;
  Vec values;
  double time = 0.0;
  Measure measure = Measure::alpha_area;

  [[nodiscard]] double volume_factor() const;
  [[nodiscard]] double integral() const;
  [[nodiscard]] double integral_of(const Vec& weights) const;
  [[nodiscard]] double min_value() const { return values.minCoeff(); }
};

/// Relative L2 norm of `a` against `ref` over interior points (margin cells excluded).
double relative_l2(const PhaseGrid& g, const Vec& a, const Vec& ref, int margin);
double max_abs_interior(const PhaseGrid& g, const Vec& a, int margin);

/// CSV with one column per grid axis followed by a value column.
void write_field_csv(std::ostream& out, const QField& q, const std::string& value_label = "Q");

}  // namespace tsq
