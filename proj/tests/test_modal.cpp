#include "fml/errors.hpp"
#include "fml/modal.hpp"
#include "fml/simulate.hpp"

#include "support.hpp"

#include <doctest.h>

using namespace fml;
using fml::testing::random_matrix;

namespace {

const BurgersGrid kGrid;

Matrix nodal(const std::function<double(double)>& f)
{
	const Matrix x = kGrid.nodes();
	Matrix u(x.rows(), 1);
	for (Eigen::Index i = 0; i < x.rows(); ++i)
		u(i, 0) = f(x(i, 0));
	return u;
}

} // namespace

TEST_SUITE("modal")
{
	TEST_CASE("sine basis")
	{
		const Basis b = Basis::sine(kGrid.nodes(), 10);
		CHECK(b.modes() == 10);
		CHECK(b.nodes() == 128);
		const Matrix gram = b.eval_matrix() * b.eval_matrix().transpose();
		const Matrix off = gram - Matrix(gram.diagonal().asDiagonal());
		CHECK(off.cwiseAbs().maxCoeff() < 1e-9 * 128);
		CHECK((gram.diagonal().array() - 64.0).abs().maxCoeff() < 1.0);
		CHECK(b.gram_condition() < 1.01);

		Matrix edge(2, 1);
		edge << 0.0, 2.0 * 3.14159265358979323846;
		Vector coeffs = Vector::Ones(10);
		CHECK(sine_series(coeffs, edge.col(0)).cwiseAbs().maxCoeff() == 0.0);

		CHECK_THROWS_AS(Basis::sine(kGrid.nodes(), 129), DomainError);
		CHECK_THROWS_AS(Basis::sine(kGrid.nodes(), 0), DomainError);
		// every node at the same place: singular Gram
		CHECK_THROWS_AS(Basis::sine(Matrix::Constant(20, 1, 1.0), 3), NumericError);
	}

	TEST_CASE("forward projection")
	{
		const Basis b = Basis::sine(kGrid.nodes(), 10);
		const Matrix v1 = b.project_forward(nodal([](double x) { return std::sin(x); }));
		Matrix e1 = Matrix::Zero(10, 1);
		e1(0, 0) = 1.0;
		CHECK((v1 - e1).cwiseAbs().maxCoeff() < 1e-10);

		const Matrix v = b.project_forward(nodal([](double x) { return 2 * std::sin(3 * x) - 0.5 * std::sin(7 * x); }));
		CHECK(std::abs(v(2, 0) - 2.0) < 1e-10);
		CHECK(std::abs(v(6, 0) + 0.5) < 1e-10);
		for (int m : {0, 1, 3, 4, 5, 7, 8, 9})
			CHECK(std::abs(v(m, 0)) < 1e-10);

		const Matrix u = nodal([](double x) { return std::sin(x) + std::sin(20 * x); });
		const Matrix best = b.project_forward(u);
		const double r0 = (b.project_backward(best) - u).squaredNorm();
		std::mt19937_64 rng(3);
		bool optimal = true;
		for (int k = 0; k < 1000; ++k)
			optimal = optimal && r0 <= (b.project_backward(best + 1e-3 * random_matrix(10, 1, rng)) - u).squaredNorm();
		CHECK(optimal);
		CHECK_THROWS_AS(b.project_forward(Matrix::Zero(127, 1)), DimensionError);
	}

	TEST_CASE("backward projection and round trips")
	{
		const Basis b = Basis::sine(kGrid.nodes(), 10);
		CHECK(b.project_backward(Matrix::Zero(10, 1)).isZero(0.0));
		std::mt19937_64 rng(4);
		const Matrix v = random_matrix(10, 2, rng);
		const Matrix u = b.project_backward(v);
		CHECK((b.project_forward(u) - v).cwiseAbs().maxCoeff() < 1e-10);
		CHECK((b.project_backward(b.project_forward(u)) - u).cwiseAbs().maxCoeff() < 1e-10);
		CHECK_THROWS_AS(b.project_backward(Matrix::Zero(9, 1)), DimensionError);

		const Matrix u1 = random_matrix(128, 1, rng);
		const Matrix u2 = random_matrix(128, 1, rng);
		const Matrix lin = b.project_forward(2.5 * u1 - 0.7 * u2) -
		                   (2.5 * b.project_forward(u1) - 0.7 * b.project_forward(u2));
		CHECK(lin.cwiseAbs().maxCoeff() < 1e-10);
	}

	TEST_CASE("trajectory projection")
	{
		const Basis b = Basis::sine(kGrid.nodes(), 10);
		Trajectory still;
		still.times = Vector::LinSpaced(4, 0.0, 0.3);
		still.states = nodal([](double x) { return std::sin(2 * x); }).transpose().replicate(4, 1);
		TrajectorySet ts;
		ts.trajectories.push_back(still);
		const TrajectorySet modal = project_trajectory_set(b, ts);
		CHECK(modal.width() == 10);
		CHECK(modal.trajectories[0].times == still.times);
		for (Eigen::Index k = 1; k < 4; ++k)
			CHECK(modal.trajectories[0].states.row(k) == modal.trajectories[0].states.row(0));

		const TrajectorySet burgers = generate_trajectories(SystemKind::burgers, 3, 10, 0.05, 2, 1, kGrid);
		const TrajectorySet coeffs = project_trajectory_set(b, burgers);
		for (std::size_t i = 0; i < 3; ++i)
			for (Eigen::Index k = 0; k < 11; ++k)
				CHECK(coeffs.trajectories[i].states.row(k).squaredNorm() <=
				      burgers.trajectories[i].states.row(k).squaredNorm() * (2.0 / 128) + 1e-8);
	}

	TEST_CASE("multi-channel snapshots")
	{
		std::mt19937_64 rng(5);
		const Matrix snap = random_matrix(128, 2, rng);
		const Matrix row = snapshot_row(snap);
		CHECK(row.rows() == 1);
		CHECK(row.cols() == 256);
		CHECK(row(0, 1) == snap(0, 1));
		CHECK(snapshot_matrix(row, 2) == snap);
	}
}
