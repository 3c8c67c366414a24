#include "tsq/grid.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <mutex>
#include <ostream>

namespace tsq {

PhaseGrid::PhaseGrid(std::vector<GridAxis> axes) : axes_(std::move(axes)) {
  require(!axes_.empty(), ErrorKind::dimension, "grid needs at least one axis");
  strides_.assign(axes_.size(), 1);
  size_ = 1;
  for (int k = dims() - 1; k >= 0; --k) {
    const auto& a = axes_[k];
    require(a.spacing > 0.0, ErrorKind::config, "grid spacing must be positive");
    require(a.count >= 16, ErrorKind::config, "grid needs at least 16 points per axis");
    strides_[k] = size_;
    size_ *= static_cast<std::size_t>(a.count);
  }
}

PhaseGrid PhaseGrid::uniform(int dims, double lo, double hi, double h) {
  require(hi > lo && h > 0, ErrorKind::config, "bad uniform grid bounds");
  const int count = static_cast<int>(std::lround((hi - lo) / h)) + 1;
  std::vector<GridAxis> axes;
  for (int k = 0; k < dims; ++k) {
    std::string label;
    if (dims % 2 == 0)
      label = (k < dims / 2 ? "x" : "y") + std::to_string(k % (dims / 2) + 1);
    else
      label = "a" + std::to_string(k + 1);
    axes.push_back(GridAxis{lo, h, count, label});
  }
  return PhaseGrid(std::move(axes));
}

double PhaseGrid::cell_volume() const {
  double v = 1.0;
  for (const auto& a : axes_) v *= a.spacing;
  return v;
}

std::vector<int> PhaseGrid::unflatten(std::size_t flat) const {
  std::vector<int> idx(axes_.size());
  for (int k = 0; k < dims(); ++k) {
    idx[k] = static_cast<int>(flat / strides_[k]);
    flat %= strides_[k];
  }
  return idx;
}

Vec PhaseGrid::point(std::size_t flat) const {
  Vec p(dims());
  for (int k = 0; k < dims(); ++k) {
    const auto i = static_cast<int>(flat / strides_[k]);
    flat %= strides_[k];
    p[k] = axes_[k].coord(i);
  }
  return p;
}

bool PhaseGrid::interior(std::size_t flat, int margin) const {
  for (int k = 0; k < dims(); ++k) {
    const auto i = static_cast<int>(flat / strides_[k]);
    flat %= strides_[k];
    if (i < margin || i >= axes_[k].count - margin) return false;
  }
  return true;
}

bool PhaseGrid::operator==(const PhaseGrid& o) const {
  if (axes_.size() != o.axes_.size()) return false;
  for (std::size_t k = 0; k < axes_.size(); ++k)
    if (axes_[k].min != o.axes_[k].min || axes_[k].spacing != o.axes_[k].spacing ||
        axes_[k].count != o.axes_[k].count)
      return false;
  return true;
}

std::vector<double> fd_weights(const std::vector<double>& x, double x0, int m) {
  // Fornberg, "Generation of finite difference formulas on arbitrarily spaced grids" (1988).
  const int n = static_cast<int>(x.size()) - 1;
  std::vector<std::vector<double>> c(n + 1, std::vector<double>(m + 1, 0.0));
  double c1 = 1.0;
  double c4 = x[0] - x0;
  c[0][0] = 1.0;
  for (int i = 1; i <= n; ++i) {
    const int mn = std::min(i, m);
    double c2 = 1.0;
    const double c5 = c4;
    c4 = x[i] - x0;
    for (int j = 0; j < i; ++j) {
      const double c3 = x[i] - x[j];
      c2 *= c3;
      if (j == i - 1) {
        for (int k = mn; k >= 1; --k) c[i][k] = c1 * (k * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
        c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
      }
      for (int k = mn; k >= 1; --k) c[j][k] = (c4 * c[j][k] - k * c[j][k - 1]) / c3;
      c[j][0] = c4 * c[j][0] / c3;
    }
    c1 = c2;
  }
  std::vector<double> w(n + 1);
  for (int i = 0; i <= n; ++i) w[i] = c[i][m];
  return w;
}

int stencil_half_width(int order) {
  require(order >= 1 && order <= kMaxStencilOrder, ErrorKind::unsupported_order,
          "derivative order " + std::to_string(order) + " exceeds supported stencil order " +
              std::to_string(kMaxStencilOrder));
  return (order + 1) / 2 + 1;
}

namespace {

// table[j] = weights (unit spacing) for evaluation at node j of a window of 2*hw+1 nodes.
const std::vector<std::vector<double>>& stencil_table(int order) {
  static std::mutex mutex;
  static std::map<int, std::vector<std::vector<double>>> cache;
  std::lock_guard lock(mutex);
  auto it = cache.find(order);
  if (it != cache.end()) return it->second;
  const int hw = stencil_half_width(order);
  const int width = 2 * hw + 1;
  std::vector<double> nodes(width);
  for (int i = 0; i < width; ++i) nodes[i] = i;
  std::vector<std::vector<double>> table(width);
  for (int j = 0; j < width; ++j) table[j] = fd_weights(nodes, j, order);
  return cache.emplace(order, std::move(table)).first->second;
}

template <typename VecT>
VecT derivative_impl(const PhaseGrid& g, const VecT& f, int axis, int order) {
  require(static_cast<std::size_t>(f.size()) == g.size(), ErrorKind::dimension, "field size does not match grid");
  require(axis >= 0 && axis < g.dims(), ErrorKind::dimension, "derivative axis out of range");
  if (order == 0) return f;
  const auto& table = stencil_table(order);
  const int hw = stencil_half_width(order);
  const int width = 2 * hw + 1;
  const int count = g.axis(axis).count;
  require(count >= width, ErrorKind::config, "grid axis too short for stencil");
  const double scale = std::pow(g.axis(axis).spacing, -order);
  const std::size_t stride = g.stride(axis);
  const std::size_t outer = g.size() / (stride * count);
  VecT out(f.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t inner = 0; inner < stride; ++inner) {
      const std::size_t base = o * stride * count + inner;
      for (int i = 0; i < count; ++i) {
        const int start = std::clamp(i - hw, 0, count - width);
        const auto& w = table[i - start];
        typename VecT::Scalar acc{};
        for (int k = 0; k < width; ++k) acc += w[k] * f[base + (start + k) * stride];
        out[base + i * stride] = acc * scale;
      }
    }
  }
  return out;
}

}  // namespace

Vec grid_derivative(const PhaseGrid& g, const Vec& f, int axis, int order) {
  return derivative_impl(g, f, axis, order);
}

CVec grid_derivative(const PhaseGrid& g, const CVec& f, int axis, int order) {
  return derivative_impl(g, f, axis, order);
}

double QField::volume_factor() const {
  double v = grid.cell_volume();
  if (measure == Measure::alpha_area) v /= std::pow(2.0, grid.dims() / 2);
  return v;
}

double QField::integral() const { return values.sum() * volume_factor(); }

double QField::integral_of(const Vec& weights) const { return values.dot(weights) * volume_factor(); }

double relative_l2(const PhaseGrid& g, const Vec& a, const Vec& ref, int margin) {
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!g.interior(i, margin)) continue;
    num += (a[i] - ref[i]) * (a[i] - ref[i]);
    den += ref[i] * ref[i];
  }
  if (den == 0.0) return num == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return std::sqrt(num / den);
}

double max_abs_interior(const PhaseGrid& g, const Vec& a, int margin) {
  double m = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i)
    if (g.interior(i, margin)) m = std::max(m, std::abs(a[i]));
  return m;
}

void write_field_csv(std::ostream& out, const QField& q, const std::string& value_label) {
  for (const auto& a : q.grid.axes()) out << a.label << ',';
  out << value_label << '\n';
  for (std::size_t i = 0; i < q.grid.size(); ++i) {
    const Vec p = q.grid.point(i);
    for (Eigen::Index k = 0; k < p.size(); ++k) out << fmt_num(p[k]) << ',';
    out << fmt_num(q.values[i]) << '\n';
  }
}

}  // namespace tsq
