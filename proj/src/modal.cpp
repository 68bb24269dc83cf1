#include "fml/modal.hpp"

#include "fml/errors.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>

namespace fml {

Basis Basis::sine(const Matrix& mesh_x, int p)
{
	if (mesh_x.cols() != 1)
		throw DimensionError("sine basis needs a 1-D mesh, got " + shape_string(mesh_x));
	const Eigen::Index n = mesh_x.rows();
	if (p < 1 || p > n)
		throw DomainError("mode count " + std::to_string(p) + " must lie in [1, " + std::to_string(n) + "]");
	Basis b;
	b.mesh_ = mesh_x;
	b.eval_.resize(p, n);
	for (int m = 0; m < p; ++m)
		for (Eigen::Index j = 0; j < n; ++j)
			b.eval_(m, j) = std::sin((m + 1) * mesh_x(j, 0));

	const Eigen::MatrixXd gram = b.eval_ * b.eval_.transpose();
	const Eigen::VectorXd ev = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(gram, Eigen::EigenvaluesOnly).eigenvalues();
	b.condition_ = ev.minCoeff() > 0.0 ? ev.maxCoeff() / ev.minCoeff() : std::numeric_limits<double>::infinity();
	if (!(b.condition_ <= 1e12))
		throw NumericError("sine basis Gram matrix is near singular (condition " + format_double(b.condition_) + ")");
	b.gram_.compute(gram);
	return b;
}

Matrix Basis::project_forward(const Matrix& snapshot) const
{
	if (snapshot.rows() != nodes())
		throw DimensionError("snapshot " + shape_string(snapshot) + " on a basis with " + std::to_string(nodes()) +
		                     " nodes");
	const Eigen::MatrixXd rhs = eval_ * snapshot;
	return gram_.solve(rhs);
}

Matrix Basis::project_backward(const Matrix& coeffs) const
{
	if (coeffs.rows() != modes())
		throw DimensionError("coefficients " + shape_string(coeffs) + " for a basis with " + std::to_string(modes()) +
		                     " modes");
	return eval_.transpose() * coeffs;
}

Matrix snapshot_matrix(const Matrix& row, int channels)
{
	if (row.rows() != 1 || channels < 1 || row.cols() % channels != 0)
		throw DimensionError("snapshot row " + shape_string(row) + " with " + std::to_string(channels) + " channels");
	return row.reshaped<Eigen::RowMajor>(row.cols() / channels, channels);
}

Matrix snapshot_row(const Matrix& snapshot)
{
	return snapshot.reshaped<Eigen::RowMajor>(1, snapshot.size());
}

TrajectorySet project_trajectory_set(const Basis& basis, const TrajectorySet& ts, int channels)
{
	if (ts.width() != static_cast<Eigen::Index>(basis.nodes()) * channels)
		throw DimensionError("snapshot width " + std::to_string(ts.width()) + " does not match " +
		                     std::to_string(basis.nodes()) + " nodes x " + std::to_string(channels) + " channels");
	TrajectorySet out;
	for (int m = 1; m <= basis.modes(); ++m)
		for (int c = 1; c <= channels; ++c)
			out.names.push_back(channels == 1 ? "v" + std::to_string(m)
			                                  : "v" + std::to_string(m) + "_" + std::to_string(c));
	for (const auto& tr : ts.trajectories) {
		Trajectory t;
		t.times = tr.times;
		t.states.resize(tr.length(), static_cast<Eigen::Index>(basis.modes()) * channels);
		for (Eigen::Index k = 0; k < tr.length(); ++k)
			t.states.row(k) = snapshot_row(basis.project_forward(snapshot_matrix(tr.states.row(k), channels)));
		out.trajectories.push_back(std::move(t));
	}
	return out;
}

} // namespace fml
