#include "fml/simulate.hpp"

#include "fml/errors.hpp"

#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace fml {

namespace {

std::string describe(const Vector& u)
{
	std::ostringstream out;
	out << "(";
	for (Eigen::Index i = 0; i < std::min<Eigen::Index>(u.size(), 6); ++i)
		out << (i ? ", " : "") << u(i);
	if (u.size() > 6)
		out << ", ...";
	out << ")";
	return out.str();
}

void check_finite(const Vector& u, double t)
{
	if (!u.allFinite())
		throw DivergenceError("non-finite state at t = " + format_double(t) + ": " + describe(u));
}

} // namespace

OdeSystem pendulum(PendulumParams p)
{
	OdeSystem sys;
	sys.dimension = 2;
	sys.name = "pendulum";
	sys.rhs = [p](const Vector& u) {
		Vector du(2);
		du << u(1), -p.alpha * u(1) - p.beta * std::sin(u(0));
		return du;
	};
	sys.jacobian = [p](const Vector& u) {
		Matrix j(2, 2);
		j << 0.0, 1.0, -p.beta * std::cos(u(0)), -p.alpha;
		return j;
	};
	return sys;
}

OdeSystem lorenz(LorenzParams p)
{
	OdeSystem sys;
	sys.dimension = 3;
	sys.name = "lorenz";
	sys.rhs = [p](const Vector& u) {
		Vector du(3);
		du << p.sigma * (u(1) - u(0)), u(0) * (p.rho - u(2)) - u(1), u(0) * u(1) - p.beta * u(2);
		return du;
	};
	sys.jacobian = [p](const Vector& u) {
		Matrix j(3, 3);
		j << -p.sigma, p.sigma, 0.0, p.rho - u(2), -1.0, -u(0), u(1), u(0), -p.beta;
		return j;
	};
	return sys;
}

OdeSystem robertson(RobertsonParams p)
{
	OdeSystem sys;
	sys.dimension = 3;
	sys.name = "robertson";
	sys.rhs = [p](const Vector& u) {
		const double a = p.k1 * u(0);
		const double b = p.k2 * u(1) * u(2);
		const double c = p.k3 * u(1) * u(1);
		Vector du(3);
		du << -a + b, a - b - c, c;
		return du;
	};
	sys.jacobian = [p](const Vector& u) {
		Matrix j(3, 3);
		j << -p.k1, p.k2 * u(2), p.k2 * u(1), p.k1, -p.k2 * u(2) - 2.0 * p.k3 * u(1), -p.k2 * u(1), 0.0,
		    2.0 * p.k3 * u(1), 0.0;
		return j;
	};
	return sys;
}

double jacobian_check(const OdeSystem& sys, double lo, double hi, int samples, std::uint64_t seed)
{
	if (!sys.has_jacobian())
		throw ContractError(sys.name + " has no Jacobian");
	std::mt19937_64 rng(seed);
	std::uniform_real_distribution<double> dist(lo, hi);
	double worst = 0.0;
	for (int s = 0; s < samples; ++s) {
		Vector u(sys.dimension);
		for (auto& v : u)
			v = dist(rng);
		const Matrix analytic = sys.jacobian(u);
		Matrix fd(sys.dimension, sys.dimension);
		for (int k = 0; k < sys.dimension; ++k) {
			const double h = 1e-6 * std::max(1.0, std::abs(u(k)));
			Vector up = u, um = u;
			up(k) += h;
			um(k) -= h;
			fd.col(k) = (sys.rhs(up) - sys.rhs(um)) / (2.0 * h);
		}
		const double scale = std::max(analytic.cwiseAbs().maxCoeff(), 1e-12);
		worst = std::max(worst, (analytic - fd).cwiseAbs().maxCoeff() / scale);
	}
	return worst;
}

Vector rk4_step(const OdeSystem& sys, const Vector& u, double dt)
{
	if (!(dt > 0.0))
		throw DomainError("RK4 step needs dt > 0");
	const Vector k1 = sys.rhs(u);
	const Vector k2 = sys.rhs(u + 0.5 * dt * k1);
	const Vector k3 = sys.rhs(u + 0.5 * dt * k2);
	const Vector k4 = sys.rhs(u + dt * k3);
	Vector next = u + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
	if (!next.allFinite())
		throw DivergenceError("non-finite RK4 step of size " + format_double(dt) + " from " + describe(u));
	return next;
}

Trajectory rk4_trajectory(const OdeSystem& sys, const Vector& u0, double dt, int steps, int record_every, double t0)
{
	if (!(dt > 0.0) || steps < 0 || record_every < 1)
		throw DomainError("RK4 trajectory needs dt > 0, steps >= 0 and record_every >= 1");
	if (steps % record_every != 0)
		throw DomainError("steps must be a multiple of record_every");
	if (u0.size() != sys.dimension)
		throw DimensionError("initial state of size " + std::to_string(u0.size()) + " for " + sys.name);
	const int records = steps / record_every;
	Trajectory tr;
	tr.times.resize(records + 1);
	tr.states.resize(records + 1, sys.dimension);
	tr.times(0) = t0;
	tr.states.row(0) = u0.transpose();
	Vector u = u0;
	for (int r = 1; r <= records; ++r) {
		for (int s = 0; s < record_every; ++s) {
			const double t = t0 + dt * ((r - 1) * record_every + s);
			try {
				u = rk4_step(sys, u, dt);
			} catch (const DivergenceError& e) {
				throw DivergenceError(sys.name + " at t = " + format_double(t) + ": " + e.what());
			}
		}
		tr.times(r) = t0 + dt * record_every * r;
		tr.states.row(r) = u.transpose();
	}
	return tr;
}

// ---------------------------------------------------------------------------
// Backward Euler with step doubling

namespace {

class BackwardEuler {
public:
	BackwardEuler(const OdeSystem& sys, const ImplicitOptions& opts) : sys_(sys), opts_(opts) {}

	/// Solves y = u + h f(y); false when Newton does not converge.
	bool step(const Vector& u, double h, Vector& y) const
	{
		const auto n = static_cast<Eigen::Index>(sys_.dimension);
		y = u;
		for (int it = 0; it < opts_.newton_iterations; ++it) {
			const Vector g = y - u - h * sys_.rhs(y);
			const Eigen::MatrixXd jg = Eigen::MatrixXd::Identity(n, n) - h * Eigen::MatrixXd(sys_.jacobian(y));
			const Vector delta = jg.partialPivLu().solve(g);
			if (!delta.allFinite())
				return false;
			y -= delta;
			if (delta.norm() < 1e-12 * (1.0 + y.norm()))
				return y.allFinite();
		}
		return false;
	}

private:
	const OdeSystem& sys_;
	const ImplicitOptions& opts_;
};

} // namespace

Trajectory implicit_trajectory(const OdeSystem& sys, const Vector& u0, const Vector& times,
                               const ImplicitOptions& opts, ImplicitStats* stats)
{
	if (!sys.has_jacobian())
		throw ContractError("implicit integration of " + sys.name + " needs a Jacobian");
	if (!(opts.tol > 0.0))
		throw DomainError("tolerance must be positive");
	if (times.size() < 1)
		throw DomainError("no output times");
	if (u0.size() != sys.dimension)
		throw DimensionError("initial state of size " + std::to_string(u0.size()) + " for " + sys.name);
	for (Eigen::Index k = 1; k < times.size(); ++k)
		if (!(times(k) > times(k - 1)))
			throw DomainError("output times must increase");

	const BackwardEuler be(sys, opts);
	ImplicitStats local;
	ImplicitStats& st = stats ? *stats : local;

	Trajectory tr;
	tr.times = times;
	tr.states.resize(times.size(), sys.dimension);
	tr.states.row(0) = u0.transpose();

	Vector u = u0;
	double t = times(0);
	double h = opts.initial_step;
	Vector full, mid, half;
	for (Eigen::Index k = 1; k < times.size(); ++k) {
		const double target = times(k);
		while (t < target) {
			int halvings = 0;
			for (;;) {
				if (opts.max_step > 0.0)
					h = std::min(h, opts.max_step);
				const bool last = t + h >= target;
				const double step = last ? target - t : h;
				const bool ok = be.step(u, step, full) && be.step(u, 0.5 * step, mid) && be.step(mid, 0.5 * step, half);
				if (!ok) {
					++st.newton_failures;
					if (++halvings > opts.max_halvings)
						throw StiffnessError("Newton iteration failed to converge at t = " + format_double(t) +
						                     " after " + std::to_string(opts.max_halvings) + " step halvings");
					h = 0.5 * step;
					continue;
				}
				const double err = (half - full).cwiseAbs().maxCoeff();
				const double allowed = opts.tol * (1.0 + u.cwiseAbs().maxCoeff());
				const double factor =
				    err > 0.0 ? std::clamp(0.9 * std::sqrt(allowed / err), 0.2, 4.0) : 4.0;
				if (err <= allowed) {
					++st.accepted;
					u = 2.0 * half - full;
					t = last ? target : t + step;
					check_finite(u, t);
					// A step clipped to hit an output time does not shrink the proposal.
					h = last ? std::max(h, step * factor) : step * factor;
					break;
				}
				++st.rejected;
				h = step * factor;
			}
		}
		tr.states.row(k) = u.transpose();
	}
	return tr;
}

Vector implicit_solve(const OdeSystem& sys, const Vector& u0, double t_end, const ImplicitOptions& opts,
                      ImplicitStats* stats)
{
	Vector times(2);
	times << 0.0, t_end;
	return implicit_trajectory(sys, u0, times, opts, stats).states.row(1).transpose();
}

// ---------------------------------------------------------------------------
// Burgers

Matrix BurgersGrid::nodes() const
{
	Matrix x(n, 1);
	const double h = spacing();
	for (int j = 0; j < n; ++j)
		x(j, 0) = h * (j + 1);
	return x;
}

namespace {

// Interior right-hand side; the ghost values at both ends are zero.
void burgers_rhs(const Vector& u, double h, double nu, Vector& du)
{
	const Eigen::Index n = u.size();
	du.resize(n);
	const double inv2h = 1.0 / (2.0 * h);
	const double invh2 = nu / (h * h);
	for (Eigen::Index j = 0; j < n; ++j) {
		const double left = j > 0 ? u(j - 1) : 0.0;
		const double right = j + 1 < n ? u(j + 1) : 0.0;
		du(j) = -(0.5 * right * right - 0.5 * left * left) * inv2h + (right - 2.0 * u(j) + left) * invh2;
	}
}

} // namespace

Trajectory burgers_trajectory(const BurgersGrid& grid, const Vector& u0, double lag, int records,
                              const BurgersOptions& opts)
{
	if (u0.size() != grid.n)
		throw DimensionError("Burgers state of size " + std::to_string(u0.size()) + " on " + std::to_string(grid.n) +
		                     " nodes");
	if (!(lag > 0.0) || records < 0)
		throw DomainError("Burgers trajectory needs lag > 0 and records >= 0");
	const double h = grid.spacing();
	Trajectory tr;
	tr.times.resize(records + 1);
	tr.states.resize(records + 1, grid.n);
	tr.times(0) = 0.0;
	tr.states.row(0) = u0.transpose();
	Vector u = u0, k1, k2, k3, k4, tmp;
	for (int r = 1; r <= records; ++r) {
		const double umax = u.cwiseAbs().maxCoeff();
		double dt = 0.25 * h * h / grid.nu;
		if (umax > 0.0)
			dt = std::min(dt, 0.5 * h / umax);
		dt /= opts.dt_refine;
		const auto substeps = static_cast<int>(std::ceil(lag / dt - 1e-9));
		dt = lag / substeps;
		for (int s = 0; s < substeps; ++s) {
			burgers_rhs(u, h, grid.nu, k1);
			tmp = u + 0.5 * dt * k1;
			burgers_rhs(tmp, h, grid.nu, k2);
			tmp = u + 0.5 * dt * k2;
			burgers_rhs(tmp, h, grid.nu, k3);
			tmp = u + dt * k3;
			burgers_rhs(tmp, h, grid.nu, k4);
			u += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
		}
		check_finite(u, lag * r);
		tr.times(r) = lag * r;
		tr.states.row(r) = u.transpose();
	}
	return tr;
}

Vector sine_series(const Vector& coeffs, const Vector& x)
{
	constexpr double two_pi = 2.0 * std::numbers::pi;
	Vector out = Vector::Zero(x.size());
	for (Eigen::Index i = 0; i < x.size(); ++i) {
		if (x(i) == 0.0 || x(i) == two_pi)
			continue;
		for (Eigen::Index m = 0; m < coeffs.size(); ++m)
			out(i) += coeffs(m) * std::sin(static_cast<double>(m + 1) * x(i));
	}
	return out;
}

// ---------------------------------------------------------------------------
// Sampling

SystemKind parse_system(const std::string& name)
{
	if (name == "pendulum")
		return SystemKind::pendulum;
	if (name == "lorenz")
		return SystemKind::lorenz;
	if (name == "robertson")
		return SystemKind::robertson;
	if (name == "burgers")
		return SystemKind::burgers;
	throw DomainError("unknown system '" + name + "'");
}

std::string to_string(SystemKind kind)
{
	switch (kind) {
	case SystemKind::pendulum: return "pendulum";
	case SystemKind::lorenz: return "lorenz";
	case SystemKind::robertson: return "robertson";
	case SystemKind::burgers: return "burgers";
	}
	return "unknown";
}

Vector sample_sine_coefficients(int modes, std::mt19937_64& rng)
{
	Vector a(modes);
	for (int m = 1; m <= modes; ++m)
		a(m - 1) = std::uniform_real_distribution<double>(-1.0 / m, 1.0 / m)(rng);
	return a;
}

std::vector<Vector> sample_initial_conditions(SystemKind kind, int count, std::uint64_t seed, const BurgersGrid& grid)
{
	if (count < 0)
		throw DomainError("negative sample count");
	constexpr double pi = std::numbers::pi;
	std::vector<Vector> out;
	out.reserve(static_cast<std::size_t>(count));
	for (int i = 0; i < count; ++i) {
		std::mt19937_64 rng(trajectory_seed(seed, static_cast<std::size_t>(i)));
		auto draw = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
		Vector u;
		switch (kind) {
		case SystemKind::pendulum:
			u.resize(2);
			u(0) = draw(-pi / 2, pi / 2);
			u(1) = draw(-pi, pi);
			break;
		case SystemKind::lorenz:
			u.resize(3);
			for (auto& v : u)
				v = draw(-pi / 2, pi / 2);
			break;
		case SystemKind::robertson:
			u.resize(3);
			u(0) = draw(0.0, 1.0);
			u(1) = draw(0.0, 5e-5);
			u(2) = draw(0.0, 1.0);
			break;
		case SystemKind::burgers:
			u = sine_series(sample_sine_coefficients(10, rng), grid.nodes().col(0));
			break;
		}
		out.push_back(std::move(u));
	}
	return out;
}

std::vector<double> sample_lags_loguniform(double lo_exp, double hi_exp, int count, std::uint64_t seed)
{
	if (!(lo_exp < hi_exp))
		throw DomainError("log-uniform lags need lo < hi");
	std::mt19937_64 rng(seed);
	std::uniform_real_distribution<double> dist(lo_exp, hi_exp);
	std::vector<double> out(static_cast<std::size_t>(std::max(count, 0)));
	for (auto& v : out)
		v = std::pow(10.0, dist(rng));
	return out;
}

std::vector<std::string> component_names(SystemKind kind, int width)
{
	std::vector<std::string> names;
	const std::string stem = kind == SystemKind::burgers ? "x" : "u";
	for (int i = 1; i <= width; ++i)
		names.push_back(stem + std::to_string(i));
	return names;
}

TrajectorySet generate_trajectories(SystemKind kind, int count, int length, double lag, std::uint64_t seed,
                                    int substeps, const BurgersGrid& grid)
{
	if (length < 0 || !(lag > 0.0) || substeps < 1)
		throw DomainError("trajectory generation needs length >= 0, lag > 0 and substeps >= 1");
	const auto ics = sample_initial_conditions(kind, count, seed, grid);
	TrajectorySet ts;
	for (const auto& u0 : ics) {
		switch (kind) {
		case SystemKind::pendulum:
			ts.trajectories.push_back(rk4_trajectory(pendulum(), u0, lag / substeps, length * substeps, substeps));
			break;
		case SystemKind::lorenz:
			ts.trajectories.push_back(rk4_trajectory(lorenz(), u0, lag / substeps, length * substeps, substeps));
			break;
		case SystemKind::robertson: {
			Vector times(length + 1);
			for (int k = 0; k <= length; ++k)
				times(k) = lag * k;
			ts.trajectories.push_back(implicit_trajectory(robertson(), u0, times));
			break;
		}
		case SystemKind::burgers:
			ts.trajectories.push_back(burgers_trajectory(grid, u0, lag, length));
			break;
		}
	}
	ts.names = component_names(kind, static_cast<int>(ts.width()));
	return ts;
}

OsgPairSet generate_robertson_triples(int count, double lo_exp, double hi_exp, std::uint64_t seed,
                                      const ImplicitOptions& opts)
{
	const auto ics = sample_initial_conditions(SystemKind::robertson, count, seed);
	const OdeSystem sys = robertson();
	OsgPairSet out;
	out.inputs.resize(count, 3);
	out.outputs.resize(count, 3);
	out.lags.resize(count, 1);
	out.lag_min = std::numeric_limits<double>::infinity();
	out.lag_max = 0.0;
	for (int i = 0; i < count; ++i) {
		const double lag =
		    sample_lags_loguniform(lo_exp, hi_exp, 1, trajectory_seed(seed, static_cast<std::size_t>(i)) + 0x5bd1e995)[0];
		out.inputs.row(i) = ics[static_cast<std::size_t>(i)].transpose();
		out.outputs.row(i) = implicit_solve(sys, ics[static_cast<std::size_t>(i)], lag, opts).transpose();
		out.lags(i, 0) = lag;
		out.lag_min = std::min(out.lag_min, lag);
		out.lag_max = std::max(out.lag_max, lag);
	}
	return out;
}

} // namespace fml
