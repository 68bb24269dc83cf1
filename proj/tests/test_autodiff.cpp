#include "fml/autodiff.hpp"
#include "fml/errors.hpp"
#include "fml/networks.hpp"
#include "fml/training.hpp"

#include "support.hpp"

#include <doctest.h>

using namespace fml;
using fml::testing::max_input_grad_error;
using fml::testing::random_matrix;

namespace {

Matrix mat(std::initializer_list<std::initializer_list<double>> rows)
{
	Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
	Eigen::Index i = 0;
	for (const auto& r : rows) {
		Eigen::Index j = 0;
		for (double v : r)
			m(i, j++) = v;
		++i;
	}
	return m;
}

} // namespace

TEST_SUITE("autodiff")
{
	TEST_CASE("matmul values and shape errors")
	{
		Tape t;
		CHECK(matmul(t.constant(mat({{1, 0}, {0, 1}})), t.constant(mat({{3}, {4}}))).value() == mat({{3}, {4}}));
		CHECK(matmul(t.constant(mat({{1, 2}})), t.constant(mat({{3}, {4}}))).scalar() == 11.0);
		CHECK_THROWS_AS(matmul(t.constant(Matrix::Zero(2, 3)), t.constant(Matrix::Zero(2, 3))), DimensionError);
	}

	TEST_CASE("matmul gradient against finite differences")
	{
		std::mt19937_64 rng(1);
		const Matrix a = random_matrix(3, 4, rng);
		const Matrix b = random_matrix(4, 2, rng);
		CHECK(max_input_grad_error(a, [&](Tape& t, Var x) { return sum(matmul(x, t.constant(b))); }) < 1e-6);
		CHECK(max_input_grad_error(b, [&](Tape& t, Var x) { return sum(matmul(t.constant(a), x)); }) < 1e-6);
	}

	TEST_CASE("pointwise values")
	{
		CHECK(gelu(0.0) == 0.0);
		Tape t;
		CHECK(tanh(t.constant(Matrix::Zero(1, 1))).scalar() == 0.0);
		CHECK(relu(t.constant(Matrix::Constant(1, 1, -1.0))).scalar() == 0.0);
		CHECK_THROWS_AS(add(t.constant(Matrix::Zero(1, 2)), t.constant(Matrix::Zero(2, 1))), DimensionError);
		CHECK_THROWS_AS(mul(t.constant(Matrix::Zero(1, 2)), t.constant(Matrix::Zero(1, 3))), DimensionError);
	}

	TEST_CASE("erf approximation stays within its stated error")
	{
		for (double x = -4.0; x <= 4.0; x += 0.01)
			CHECK(std::abs(erf_as(x) - std::erf(x)) <= 1.5e-7);
	}

	TEST_CASE("gelu derivative")
	{
		const double h = 1e-5;
		const double fd = (gelu(0.7 + h) - gelu(0.7 - h)) / (2 * h);
		CHECK(std::abs(gelu_derivative(0.7) - fd) / std::abs(fd) < 1e-6);
		std::mt19937_64 rng(2);
		const Matrix x = random_matrix(3, 3, rng, -3, 3);
		CHECK(max_input_grad_error(x, [](Tape&, Var v) { return sum(gelu(v)); }) < 1e-6);
		CHECK(max_input_grad_error(x, [](Tape&, Var v) { return sum(tanh(v)); }) < 1e-6);
		CHECK(max_input_grad_error(x, [](Tape&, Var v) { return sum(exp(v)); }) < 1e-6);
		CHECK(max_input_grad_error(x, [](Tape&, Var v) { return sum(softplus(v)); }) < 1e-6);
		CHECK(max_input_grad_error(x, [&x](Tape& t, Var v) { return sum(mul(v, t.constant(x))); }) < 1e-6);
	}

	TEST_CASE("softmax rows")
	{
		Tape t;
		const Matrix s = softmax_rows(t.constant(mat({{0, 0}}))).value();
		CHECK(s(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
		const Matrix s3 = softmax_rows(t.constant(mat({{0, std::log(3.0)}}))).value();
		CHECK(s3(0, 0) == doctest::Approx(0.25).epsilon(1e-14));
		CHECK(s3(0, 1) == doctest::Approx(0.75).epsilon(1e-14));

		std::mt19937_64 rng(3);
		const Matrix x = random_matrix(3, 4, rng, -5, 5);
		const Matrix w = random_matrix(3, 4, rng);
		CHECK(max_input_grad_error(x, [&](Tape& tt, Var v) { return sum(mul(softmax_rows(v), tt.constant(w))); }) <
		      1e-6);
		const Matrix p = softmax_rows(x);
		CHECK((p.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-12);
		Matrix shifted = x;
		shifted.row(1).array() += 17.0;
		CHECK((softmax_rows(shifted) - p).cwiseAbs().maxCoeff() < 1e-12);

		Matrix bad = x;
		bad(0, 0) = NAN;
		CHECK_THROWS_AS(softmax_rows(bad), NumericError);
	}

	TEST_CASE("reductions")
	{
		Tape t;
		CHECK(sum_of_squares(t.constant(mat({{3, 4}}))).scalar() == 25.0);
		CHECK(mean(t.constant(mat({{1, 2, 3}}))).scalar() == 2.0);
		Var v = t.variable(mat({{3, 4}}));
		t.backward(sum_of_squares(v));
		CHECK(v.grad() == mat({{6, 8}}));
		CHECK_THROWS_AS(sum(t.constant(Matrix(0, 0))), DomainError);

		std::mt19937_64 rng(4);
		const Matrix x = random_matrix(2, 5, rng);
		CHECK(max_input_grad_error(x, [](Tape&, Var a) { return mean(a); }) < 1e-6);
	}

	TEST_CASE("concat columns")
	{
		Tape t;
		CHECK(concat_cols(t.constant(mat({{1}})), t.constant(mat({{2}}))).value() == mat({{1, 2}}));
		Var a = t.variable(Matrix::Zero(2, 3));
		Var b = t.variable(Matrix::Zero(2, 1));
		Var c = concat_cols(a, b);
		CHECK(c.rows() == 2);
		CHECK(c.cols() == 4);
		t.backward(sum(c));
		CHECK(a.grad() == Matrix::Ones(2, 3));
		CHECK(b.grad() == Matrix::Ones(2, 1));
		CHECK_THROWS_AS(concat_cols(a, t.constant(Matrix::Zero(3, 1))), DimensionError);
	}

	TEST_CASE("backward basics")
	{
		Tape t;
		Var x = t.variable(mat({{2.5}}));
		t.backward(x);
		CHECK(x.grad()(0, 0) == 1.0);

		Tape t2;
		const Matrix xin = mat({{1}, {2}, {3}});
		Var w = t2.variable(Matrix::Constant(2, 3, 0.3));
		t2.backward(sum(matmul(w, t2.constant(xin))));
		CHECK(w.grad() == Matrix::Ones(2, 1) * xin.transpose());

		Tape t3;
		CHECK_THROWS_AS(t3.backward(t3.variable(Matrix::Zero(2, 1))), ContractError);
	}

	TEST_CASE("unreached parameters get zero gradient")
	{
		ParamSet ps;
		ps.add("used", Matrix::Constant(1, 1, 2.0));
		ps.add("unused", Matrix::Constant(1, 1, 5.0));
		ps.zero_grad();
		Tape t;
		ParamView pv(t, ps);
		t.backward(sum_of_squares(pv("used")));
		CHECK(ps.at("used").grad(0, 0) == 4.0);
		CHECK(ps.at("unused").grad(0, 0) == 0.0);
	}

	TEST_CASE("MLP gradients against finite differences")
	{
		const FnnSpec spec = FnnSpec::uniform(3, 8, 2, 2, Activation::tanh);
		ParamSet params = fnn_init(spec, 5);
		std::mt19937_64 rng(5);
		const Matrix x = random_matrix(6, 3, rng);
		const Matrix y = random_matrix(6, 2, rng);
		const auto check = fml::testing::check_gradients(
		    params,
		    [&](ParamView& pv) {
			    Tape& t = pv.tape();
			    return mse_loss(fnn_forward(pv, spec, t.constant(x)), t.constant(y));
		    },
		    1e-5);
		CHECK(check.max_rel < 1e-6);
	}

	TEST_CASE("backward is additive")
	{
		std::mt19937_64 rng(6);
		const Matrix x = random_matrix(1, 4, rng);
		auto grad_of = [&](int which) {
			Tape t;
			Var v = t.variable(x);
			Var f = sum(tanh(v));
			Var g = sum_of_squares(v);
			t.backward(which == 0 ? f : which == 1 ? g : add(f, g));
			return Matrix(v.grad());
		};
		CHECK((grad_of(2) - grad_of(0) - grad_of(1)).cwiseAbs().maxCoeff() < 1e-12);
	}

	TEST_CASE("determinism of forward and backward")
	{
		const FnnSpec spec = FnnSpec::uniform(2, 10, 3, 2);
		std::mt19937_64 rng(8);
		const Matrix x = random_matrix(4, 2, rng);
		auto run = [&]() {
			ParamSet ps = fnn_init(spec, 3);
			ps.zero_grad();
			Tape t;
			ParamView pv(t, ps);
			Var out = fnn_forward(pv, spec, t.constant(x));
			t.backward(sum_of_squares(out));
			return std::make_pair(Matrix(out.value()), Matrix(ps[0].grad));
		};
		const auto a = run();
		const auto b = run();
		CHECK((a.first.array() == b.first.array()).all());
		CHECK((a.second.array() == b.second.array()).all());
	}
}
