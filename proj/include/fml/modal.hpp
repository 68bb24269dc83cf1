#pragma once

// Least-squares projection of nodal snapshots onto a finite sine basis.

#include "fml/autodiff.hpp"
#include "fml/datasets.hpp"

#include <Eigen/Cholesky>

namespace fml {

enum class BasisKind { sine };

class Basis {
public:
	/// psi_m(x) = sin(m x), m = 1..p, at the n mesh nodes (n x 1).
	static Basis sine(const Matrix& mesh_x, int p);

	BasisKind kind() const { return kind_; }
	int modes() const { return static_cast<int>(eval_.rows()); }
	int nodes() const { return static_cast<int>(eval_.cols()); }
	/// Psi(X), p x n.
	const Matrix& eval_matrix() const { return eval_; }
	const Matrix& mesh() const { return mesh_; }
	/// Condition number of Psi Psi^T.
	double gram_condition() const { return condition_; }

	/// V = (Psi Psi^T)^-1 Psi U for an n x d_u snapshot.
	Matrix project_forward(const Matrix& snapshot) const;
	/// Psi^T V, n x d_u.
	Matrix project_backward(const Matrix& coeffs) const;

private:
	BasisKind kind_ = BasisKind::sine;
	Matrix mesh_;
	Matrix eval_;
	Eigen::LLT<Eigen::MatrixXd> gram_;
	double condition_ = 1.0;
};

inline Matrix project_forward(const Basis& basis, const Matrix& snapshot) { return basis.project_forward(snapshot); }
inline Matrix project_backward(const Basis& basis, const Matrix& coeffs) { return basis.project_backward(coeffs); }

/// Maps every snapshot row (n d_u values, node-major) to its p d_u modal
/// coefficients (mode-major). Times are preserved.
TrajectorySet project_trajectory_set(const Basis& basis, const TrajectorySet& ts, int channels = 1);

/// Snapshot row (1 x n d_u) <-> n x d_u matrix.
Matrix snapshot_matrix(const Matrix& row, int channels);
Matrix snapshot_row(const Matrix& snapshot);

} // namespace fml
