#include "sser/basis.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace sser {

double Box::volume() const {
  double v = 1.0;
  for (std::size_t i = 0; i < dim(); ++i) v *= width(i);
  return v;
}

bool Box::contains(std::span<const double> u) const {
  for (std::size_t i = 0; i < dim(); ++i) {
    if (u[i] < lo[i] || u[i] > hi[i]) return false;
  }
  return true;
}

std::vector<double> Box::center() const {
  std::vector<double> c(dim());
  for (std::size_t i = 0; i < dim(); ++i) c[i] = 0.5 * (lo[i] + hi[i]);
  return c;
}

void legendre_table(double t, int max_degree, double* out) {
  out[0] = 1.0;
  if (max_degree == 0) return;
  double p_prev = 1.0;
  double p_curr = t;
  out[1] = std::sqrt(3.0) * t;
  for (int n = 1; n < max_degree; ++n) {
    const double p_next = ((2.0 * n + 1.0) * t * p_curr - n * p_prev) / (n + 1.0);
    p_prev = p_curr;
    p_curr = p_next;
    out[n + 1] = std::sqrt(2.0 * n + 3.0) * p_curr;
  }
}

double legendre(int degree, double t) {
  std::vector<double> table(static_cast<std::size_t>(degree) + 1);
  legendre_table(t, degree, table.data());
  return table.back();
}

BasisSpec::BasisSpec(std::vector<MultiIndex> multi_indices, std::vector<double> center, std::vector<double> half_width,
                     ExpansionSpace space)
    : multi_indices_(std::move(multi_indices)),
      center_(std::move(center)),
      half_width_(std::move(half_width)),
      space_(space) {
  const std::size_t m = center_.size();
  if (half_width_.size() != m) throw std::invalid_argument("basis center/half-width size mismatch");
  for (double h : half_width_) {
    if (!(h > 0.0) || !std::isfinite(h)) throw std::invalid_argument("basis half-widths must be positive and finite");
  }
  dim_max_degree_.assign(m, 0);
  factor_offset_.push_back(0);
  std::set<MultiIndex> seen;
  for (const auto& alpha : multi_indices_) {
    if (alpha.size() != m) throw std::invalid_argument("multi-index length differs from basis dimension");
    if (!seen.insert(alpha).second) throw std::invalid_argument("duplicate multi-index in basis");
    int degree = 0;
    for (std::size_t i = 0; i < m; ++i) {
      if (alpha[i] < 0) throw std::invalid_argument("negative polynomial degree");
      if (alpha[i] > 0) {
        factor_dim_.push_back(static_cast<int>(i));
        factor_degree_.push_back(alpha[i]);
        dim_max_degree_[i] = std::max(dim_max_degree_[i], alpha[i]);
      }
      degree += alpha[i];
    }
    factor_offset_.push_back(factor_dim_.size());
    total_degree_.push_back(degree);
    max_degree_ = std::max(max_degree_, degree);
  }
}

void BasisSpec::evaluate_terms(std::span<const double> point, std::span<double> out) const {
  const std::size_t m = dim();
  const int stride = max_degree_ + 1;
  thread_local std::vector<double> table;
  table.resize(m * static_cast<std::size_t>(stride));
  for (std::size_t i = 0; i < m; ++i) {
    if (dim_max_degree_[i] == 0) continue;
    const double t = (point[i] - center_[i]) / half_width_[i];
    legendre_table(t, dim_max_degree_[i], table.data() + i * stride);
  }
  for (std::size_t term = 0; term < size(); ++term) {
    double v = 1.0;
    for (std::size_t f = factor_offset_[term]; f < factor_offset_[term + 1]; ++f) {
      v *= table[static_cast<std::size_t>(factor_dim_[f]) * stride + factor_degree_[f]];
    }
    out[term] = v;
  }
}

Matrix BasisSpec::design_matrix(const PointMatrix& points) const {
  Matrix psi(points.rows(), static_cast<Eigen::Index>(size()));
  std::vector<double> row(size());
  for (Eigen::Index r = 0; r < points.rows(); ++r) {
    evaluate_terms(std::span<const double>(points.row(r).data(), dim()), row);
    for (std::size_t t = 0; t < size(); ++t) psi(r, static_cast<Eigen::Index>(t)) = row[t];
  }
  return psi;
}

BasisSpec BasisSpec::subset(std::span<const std::size_t> terms) const {
  std::vector<MultiIndex> chosen;
  chosen.reserve(terms.size());
  for (std::size_t t : terms) chosen.push_back(multi_indices_.at(t));
  return BasisSpec(std::move(chosen), center_, half_width_, space_);
}

namespace {

void enumerate(std::size_t dim, std::size_t pos, int remaining, int rank_left, MultiIndex& current,
               std::vector<MultiIndex>& out) {
  if (pos == dim) {
    out.push_back(current);
    return;
  }
  for (int d = 0; d <= remaining; ++d) {
    if (d > 0 && rank_left == 0) break;
    current[pos] = d;
    enumerate(dim, pos + 1, remaining - d, d > 0 ? rank_left - 1 : rank_left, current, out);
  }
  current[pos] = 0;
}

}  // namespace

std::vector<MultiIndex> total_degree_set(std::size_t dim, int p_max, int rank_limit) {
  if (p_max < 0) throw std::invalid_argument("p_max must be >= 0");
  if (rank_limit < 1) throw std::invalid_argument("rank_limit must be >= 1");
  if (dim == 0) throw std::invalid_argument("basis dimension must be >= 1");
  std::vector<MultiIndex> out;
  MultiIndex current(dim, 0);
  enumerate(dim, 0, p_max, rank_limit, current, out);
  auto degree = [](const MultiIndex& a) {
    int s = 0;
    for (int v : a) s += v;
    return s;
  };
  std::stable_sort(out.begin(), out.end(), [&](const MultiIndex& a, const MultiIndex& b) {
    const int da = degree(a), db = degree(b);
    if (da != db) return da < db;
    return a > b;  // within a degree, higher powers of early variables first
  });
  return out;
}

BasisSpec build_basis(const Box& box, int p_max, int rank_limit, ExpansionSpace space) {
  if (box.dim() == 0 || box.hi.size() != box.dim()) throw std::invalid_argument("basis box is malformed");
  std::vector<double> center(box.dim()), half(box.dim());
  for (std::size_t i = 0; i < box.dim(); ++i) {
    if (!(box.hi[i] > box.lo[i])) throw std::invalid_argument("basis box is empty in some dimension");
    center[i] = 0.5 * (box.lo[i] + box.hi[i]);
    half[i] = 0.5 * (box.hi[i] - box.lo[i]);
  }
  return BasisSpec(total_degree_set(box.dim(), p_max, rank_limit), std::move(center), std::move(half), space);
}

}  // namespace sser
