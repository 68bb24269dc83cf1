#pragma once

#include "fml/autodiff.hpp"
#include "fml/networks.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>

namespace fml::testing {

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double lo = -1.0,
                            double hi = 1.0)
{
	std::uniform_real_distribution<double> d(lo, hi);
	Matrix m(rows, cols);
	for (Eigen::Index i = 0; i < m.size(); ++i)
		m.data()[i] = d(rng);
	return m;
}

struct GradCheck {
	double max_rel = 0.0;
	double max_abs = 0.0;
	std::size_t checked = 0;
};

/// Compares tape gradients of `loss` with central differences of step h.
/// The relative error of each scalar is |g - fd| / (|g| + |fd| + 1e-12).
inline GradCheck check_gradients(ParamSet& params, const std::function<Var(ParamView&)>& loss, double h)
{
	params.zero_grad();
	{
		Tape tape;
		ParamView pv(tape, params);
		tape.backward(loss(pv));
	}
	auto value = [&]() {
		Tape tape;
		ParamView pv(tape, std::as_const(params));
		return loss(pv).scalar();
	};
	GradCheck out;
	for (std::size_t k = 0; k < params.scalar_count(); ++k) {
		double& p = params.scalar(k);
		const double saved = p;
		p = saved + h;
		const double up = value();
		p = saved - h;
		const double down = value();
		p = saved;
		const double fd = (up - down) / (2.0 * h);
		const double g = params.grad_scalar(k);
		const double abs_err = std::abs(g - fd);
		out.max_abs = std::max(out.max_abs, abs_err);
		out.max_rel = std::max(out.max_rel, abs_err / (std::abs(g) + std::abs(fd) + 1e-12));
		++out.checked;
	}
	return out;
}

/// Same check for a function of one tracked input matrix.
inline double max_input_grad_error(const Matrix& x, const std::function<Var(Tape&, Var)>& f, double h = 1e-5)
{
	Tape tape;
	Var v = tape.variable(x);
	tape.backward(f(tape, v));
	const Matrix g = v.grad();
	double worst = 0.0;
	for (Eigen::Index k = 0; k < x.size(); ++k) {
		auto eval = [&](double delta) {
			Matrix xp = x;
			xp.data()[k] += delta;
			Tape t;
			return f(t, t.constant(xp)).scalar();
		};
		const double fd = (eval(h) - eval(-h)) / (2.0 * h);
		const double gk = g.data()[k];
		worst = std::max(worst, std::abs(gk - fd) / (std::abs(gk) + std::abs(fd) + 1e-12));
	}
	return worst;
}

/// Fresh scratch directory below the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name)
{
	const auto dir = std::filesystem::temp_directory_path() / ("fml_test_" + name);
	std::filesystem::remove_all(dir);
	std::filesystem::create_directories(dir);
	return dir;
}

} // namespace fml::testing
