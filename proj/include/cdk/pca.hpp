#pragma once

#include <string>

#include <Eigen/Dense>

#include "cdk/features.hpp"
#include "cdk/rng.hpp"

namespace cdk {

// Rows are patch features (M x D).
struct FeatureMatrix {
  Eigen::MatrixXd rows;
  bool centered = false;
};

FeatureMatrix feature_matrix_from_grid(const FeatureGrid& grid);
FeatureMatrix center_rows(const FeatureMatrix& x);

enum class BasisKind { standard_pca, style_invariant, bottom_eigen, random_orthogonal };

const char* basis_kind_name(BasisKind k);
BasisKind basis_kind_from_name(const std::string& name);

// Orthonormal D x K projection basis.
struct ProjectionBasis {
  Eigen::MatrixXd vectors;  // D x K, orthonormal columns
  BasisKind kind = BasisKind::standard_pca;
  double explained_variance_pct = 0.0;

  int64_t dim() const { return vectors.rows(); }
  int64_t components() const { return vectors.cols(); }
};

// P = I - V V^T
Eigen::MatrixXd projector(const ProjectionBasis& basis);

// Fraction (in %) of X's centered variance captured by the span of V.
double explained_variance_pct(const FeatureMatrix& x, const Eigen::MatrixXd& v);

// Top-K principal directions of the centered rows.
ProjectionBasis standard_pca(const FeatureMatrix& x, int64_t k);

// Removes the top-K_style eigendirections of the uncentered difference
// covariance S = D^T D / M before running standard PCA on the cleaned
// features; the result is orthogonal to the removed style directions.
// Explained variance is reported against the raw (uncleaned) features.
ProjectionBasis style_invariant_basis(const FeatureMatrix& f_real, const FeatureMatrix& f_style,
                                      int64_t k_style, int64_t d_out);

// k-column prefix of a fixed 64-component PCA basis; k in {8,16,32,64}.
ProjectionBasis tail_drop_basis(const FeatureMatrix& x, int64_t k);
int64_t sample_tail_drop_k(Rng& rng);

ProjectionBasis bottom_eigen_basis(const FeatureMatrix& x, int64_t k);
ProjectionBasis random_orthogonal_basis(int64_t d, int64_t k, Rng& rng);

struct DisentanglementReport {
  double cosine_similarity = 0.0;
  double explained_variance_pct = 0.0;
  int64_t excluded_rows = 0;  // zero-norm projections
};

// Mean cosine similarity between basis-projected paired rows; explained
// variance is measured on the real features.
DisentanglementReport disentanglement_report(const FeatureMatrix& f_real,
                                             const FeatureMatrix& f_style,
                                             const ProjectionBasis& basis);

}  // namespace cdk
