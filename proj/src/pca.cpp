#include "cdk/pca.hpp"

#include <algorithm>
#include <cmath>

#include "cdk/error.hpp"

namespace cdk {

namespace {

// Deterministic sign: make each column's largest-magnitude entry positive.
void fix_signs(Eigen::MatrixXd& v) {
  for (Eigen::Index c = 0; c < v.cols(); ++c) {
    Eigen::Index imax = 0;
    v.col(c).cwiseAbs().maxCoeff(&imax);
    if (v(imax, c) < 0.0) v.col(c) = -v.col(c);
  }
}

// Eigendecomposition of a symmetric matrix, eigenvalues descending.
void sym_eig_desc(const Eigen::MatrixXd& s, Eigen::VectorXd& evals, Eigen::MatrixXd& evecs) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(s);
  require(solver.info() == Eigen::Success, "eigendecomposition failed to converge");
  const Eigen::Index d = s.rows();
  evals.resize(d);
  evecs.resize(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    evals(i) = solver.eigenvalues()(d - 1 - i);
    evecs.col(i) = solver.eigenvectors().col(d - 1 - i);
  }
}

Eigen::MatrixXd covariance(const Eigen::MatrixXd& centered) {
  const double denom = std::max<double>(1.0, static_cast<double>(centered.rows() - 1));
  return centered.transpose() * centered / denom;
}

}  // namespace

FeatureMatrix feature_matrix_from_grid(const FeatureGrid& grid) {
  validate_feature_grid(grid);
  const int64_t T = grid.frames(), D = grid.feature_dim(), h = grid.grid_h(), w = grid.grid_w();
  FeatureMatrix out;
  out.rows.resize(T * h * w, D);
  for (int64_t t = 0; t < T; ++t)
    for (int64_t i = 0; i < h; ++i)
      for (int64_t j = 0; j < w; ++j)
        for (int64_t d = 0; d < D; ++d)
          out.rows(t * h * w + i * w + j, d) =
              static_cast<double>(grid.data[((t * D + d) * h + i) * w + j]);
  return out;
}

FeatureMatrix center_rows(const FeatureMatrix& x) {
  FeatureMatrix out;
  out.rows = x.rows.rowwise() - x.rows.colwise().mean();
  out.centered = true;
  return out;
}

const char* basis_kind_name(BasisKind k) {
  switch (k) {
    case BasisKind::standard_pca: return "standard_pca";
    case BasisKind::style_invariant: return "style_invariant";
    case BasisKind::bottom_eigen: return "bottom_eigen";
    case BasisKind::random_orthogonal: return "random_orthogonal";
  }
  return "?";
}

BasisKind basis_kind_from_name(const std::string& name) {
  if (name == "standard" || name == "standard_pca") return BasisKind::standard_pca;
  if (name == "style-invariant" || name == "style_invariant") return BasisKind::style_invariant;
  if (name == "bottom" || name == "bottom_eigen") return BasisKind::bottom_eigen;
  if (name == "random" || name == "random_orthogonal") return BasisKind::random_orthogonal;
  throw ContractError("unknown basis kind: " + name);
}

Eigen::MatrixXd projector(const ProjectionBasis& basis) {
  const Eigen::Index d = basis.vectors.rows();
  return Eigen::MatrixXd::Identity(d, d) - basis.vectors * basis.vectors.transpose();
}

double explained_variance_pct(const FeatureMatrix& x, const Eigen::MatrixXd& v) {
  FeatureMatrix c = x.centered ? x : center_rows(x);
  Eigen::MatrixXd cov = covariance(c.rows);
  double total = cov.trace();
  if (total <= 0.0) return 0.0;
  double captured = (v.transpose() * cov * v).trace();
  return 100.0 * captured / total;
}

ProjectionBasis standard_pca(const FeatureMatrix& x, int64_t k) {
  const int64_t m = x.rows.rows(), d = x.rows.cols();
  require(m >= 2, "standard_pca: need at least 2 samples");
  require(k >= 1 && k <= std::min<int64_t>(m - 1, d),
          "standard_pca: K=" + std::to_string(k) + " out of range [1, min(M-1,D)=" +
              std::to_string(std::min<int64_t>(m - 1, d)) + "]");
  FeatureMatrix c = x.centered ? x : center_rows(x);
  Eigen::VectorXd evals;
  Eigen::MatrixXd evecs;
  sym_eig_desc(covariance(c.rows), evals, evecs);

  double total = 0.0, top = 0.0;
  for (Eigen::Index i = 0; i < evals.size(); ++i) total += std::max(0.0, evals(i));
  for (Eigen::Index i = 0; i < k; ++i) top += std::max(0.0, evals(i));

  ProjectionBasis basis;
  basis.kind = BasisKind::standard_pca;
  basis.vectors = evecs.leftCols(k);
  fix_signs(basis.vectors);
  basis.explained_variance_pct = total > 0.0 ? 100.0 * top / total : 0.0;
  return basis;
}

ProjectionBasis style_invariant_basis(const FeatureMatrix& f_real, const FeatureMatrix& f_style,
                                      int64_t k_style, int64_t d_out) {
  require(f_real.rows.rows() == f_style.rows.rows() && f_real.rows.cols() == f_style.rows.cols(),
          "style_invariant_basis: real and styled matrices must be row-paired with equal shape");
  const int64_t m = f_real.rows.rows(), d = f_real.rows.cols();
  require(k_style >= 1 && d_out >= 1 && k_style + d_out <= d,
          "style_invariant_basis: need K_style + D_out <= D");

  // S = D^T D / M on raw differences, exactly as defined
  Eigen::MatrixXd diff = f_real.rows - f_style.rows;
  Eigen::MatrixXd s = diff.transpose() * diff / static_cast<double>(m);
  require(s.norm() > 1e-12, "zero style covariance: real and styled features are identical");

  Eigen::VectorXd evals;
  Eigen::MatrixXd evecs;
  sym_eig_desc(s, evals, evecs);
  Eigen::MatrixXd style_dirs = evecs.leftCols(k_style);
  Eigen::MatrixXd complement = evecs.rightCols(d - k_style);  // orthonormal basis of range(P)

  // standard PCA of the cleaned features, expressed in complement coordinates
  FeatureMatrix cleaned;
  cleaned.rows = f_real.rows * complement;  // M x (D - k_style)
  ProjectionBasis inner = standard_pca(cleaned, d_out);

  ProjectionBasis basis;
  basis.kind = BasisKind::style_invariant;
  basis.vectors = complement * inner.vectors;
  fix_signs(basis.vectors);
  basis.explained_variance_pct = explained_variance_pct(f_real, basis.vectors);
  return basis;
}

ProjectionBasis tail_drop_basis(const FeatureMatrix& x, int64_t k) {
  require(k == 8 || k == 16 || k == 32 || k == 64,
          "tail_drop_basis: k must be one of {8,16,32,64}, got " + std::to_string(k));
  const int64_t m = x.rows.rows(), d = x.rows.cols();
  require(std::min<int64_t>(m - 1, d) >= 64,
          "tail_drop_basis: need min(M-1,D) >= 64 for the 64-component basis");
  ProjectionBasis full = standard_pca(x, 64);
  ProjectionBasis basis;
  basis.kind = BasisKind::standard_pca;
  basis.vectors = full.vectors.leftCols(k);
  basis.explained_variance_pct = explained_variance_pct(x, basis.vectors);
  return basis;
}

int64_t sample_tail_drop_k(Rng& rng) {
  static const int64_t choices[4] = {8, 16, 32, 64};
  return choices[rng.uniform_int(4)];
}

ProjectionBasis bottom_eigen_basis(const FeatureMatrix& x, int64_t k) {
  const int64_t m = x.rows.rows(), d = x.rows.cols();
  require(m >= 2, "bottom_eigen_basis: need at least 2 samples");
  require(k >= 1 && k <= d, "bottom_eigen_basis: K out of range");
  FeatureMatrix c = x.centered ? x : center_rows(x);
  Eigen::VectorXd evals;
  Eigen::MatrixXd evecs;
  sym_eig_desc(covariance(c.rows), evals, evecs);

  double total = 0.0, bottom = 0.0;
  for (Eigen::Index i = 0; i < evals.size(); ++i) total += std::max(0.0, evals(i));
  for (Eigen::Index i = d - k; i < d; ++i) bottom += std::max(0.0, evals(i));

  ProjectionBasis basis;
  basis.kind = BasisKind::bottom_eigen;
  basis.vectors = evecs.rightCols(k);
  fix_signs(basis.vectors);
  basis.explained_variance_pct = total > 0.0 ? 100.0 * bottom / total : 0.0;
  return basis;
}

ProjectionBasis random_orthogonal_basis(int64_t d, int64_t k, Rng& rng) {
  require(k >= 1 && k <= d, "random_orthogonal_basis: K out of range");
  Eigen::MatrixXd gauss(d, k);
  for (int64_t i = 0; i < d; ++i)
    for (int64_t j = 0; j < k; ++j) gauss(i, j) = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(gauss);
  ProjectionBasis basis;
  basis.kind = BasisKind::random_orthogonal;
  basis.vectors = qr.householderQ() * Eigen::MatrixXd::Identity(d, k);
  fix_signs(basis.vectors);
  basis.explained_variance_pct = 0.0;  // data-free construction
  return basis;
}

DisentanglementReport disentanglement_report(const FeatureMatrix& f_real,
                                             const FeatureMatrix& f_style,
                                             const ProjectionBasis& basis) {
  require(f_real.rows.rows() == f_style.rows.rows() &&
              f_real.rows.cols() == f_style.rows.cols(),
          "disentanglement_report: matrices must be row-paired");
  require(f_real.rows.cols() == basis.vectors.rows(),
          "disentanglement_report: basis dimension mismatch");

  Eigen::MatrixXd pr = f_real.rows * basis.vectors;   // M x K coordinates
  Eigen::MatrixXd ps = f_style.rows * basis.vectors;

  DisentanglementReport rep;
  double sum = 0.0;
  int64_t used = 0;
  for (Eigen::Index i = 0; i < pr.rows(); ++i) {
    double na = pr.row(i).norm(), nb = ps.row(i).norm();
    if (na < 1e-12 || nb < 1e-12) {
      ++rep.excluded_rows;
      continue;
    }
    sum += pr.row(i).dot(ps.row(i)) / (na * nb);
    ++used;
  }
  rep.cosine_similarity = used > 0 ? sum / static_cast<double>(used) : 0.0;
  rep.explained_variance_pct = explained_variance_pct(f_real, basis.vectors);
  return rep;
}

}  // namespace cdk
