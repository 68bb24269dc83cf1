#pragma once

// Reference integrators and the benchmark systems used to generate data.

#include "fml/autodiff.hpp"
#include "fml/datasets.hpp"

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace fml {

struct OdeSystem {
	using Rhs = std::function<Vector(const Vector&)>;
	using Jacobian = std::function<Matrix(const Vector&)>;

	int dimension = 0;
	std::string name;
	Rhs rhs;
	Jacobian jacobian; ///< may be empty

	bool has_jacobian() const { return static_cast<bool>(jacobian); }
};

struct PendulumParams {
	double alpha = 0.1;
	double beta = 9.80665;
};

struct LorenzParams {
	double sigma = 10.0;
	double rho = 28.0;
	double beta = 8.0 / 3.0;
};

struct RobertsonParams {
	double k1 = 0.04;
	double k2 = 1e4;
	double k3 = 3e7;
};

OdeSystem pendulum(PendulumParams p = {});
OdeSystem lorenz(LorenzParams p = {});
OdeSystem robertson(RobertsonParams p = {});

/// Maximum relative deviation between the analytic Jacobian and central
/// differences at `samples` random states drawn from [lo, hi]^n.
double jacobian_check(const OdeSystem& sys, double lo, double hi, int samples, std::uint64_t seed);

Vector rk4_step(const OdeSystem& sys, const Vector& u, double dt);

/// Takes `steps` RK4 steps of size dt and records the state every
/// `record_every` steps (steps must be a multiple of record_every).
Trajectory rk4_trajectory(const OdeSystem& sys, const Vector& u0, double dt, int steps, int record_every = 1,
                          double t0 = 0.0);

struct ImplicitOptions {
	double tol = 1e-8;
	double initial_step = 1e-8;
	double max_step = 0.0; ///< 0: unbounded
	int newton_iterations = 50;
	int max_halvings = 20;
};

struct ImplicitStats {
	long accepted = 0;
	long rejected = 0;
	long newton_failures = 0;
};

/// Backward Euler with Newton iterations and step-doubling error control.
/// `times` lists the output times; times(0) is the time of u0.
Trajectory implicit_trajectory(const OdeSystem& sys, const Vector& u0, const Vector& times,
                               const ImplicitOptions& opts = {}, ImplicitStats* stats = nullptr);
/// State at t_end starting from u0 at time 0.
Vector implicit_solve(const OdeSystem& sys, const Vector& u0, double t_end, const ImplicitOptions& opts = {},
                      ImplicitStats* stats = nullptr);

// ---------------------------------------------------------------------------
// Viscous Burgers on (0, 2 pi) with zero Dirichlet ends

struct BurgersGrid {
	int n = 128; ///< interior nodes
	double nu = 0.1;
	double length = 2.0 * 3.14159265358979323846;

	double spacing() const { return length / (n + 1); }
	/// Interior node coordinates x_j = j h, j = 1..n (n x 1).
	Matrix nodes() const;
};

struct BurgersOptions {
	/// Divides the CFL-safe internal step.
	double dt_refine = 1.0;
};

/// L records spaced by `lag`; rows are nodal snapshots of the interior nodes.
Trajectory burgers_trajectory(const BurgersGrid& grid, const Vector& u0, double lag, int records,
                              const BurgersOptions& opts = {});

/// sum_m a_m sin(m x) at every x; exactly 0 at x = 0 and x = length.
Vector sine_series(const Vector& coeffs, const Vector& x);

// ---------------------------------------------------------------------------
// Sampling

enum class SystemKind { pendulum, lorenz, robertson, burgers };

SystemKind parse_system(const std::string& name);
std::string to_string(SystemKind kind);

/// Initial states; for burgers the nodal values on `grid` of a random sine series.
std::vector<Vector> sample_initial_conditions(SystemKind kind, int count, std::uint64_t seed,
                                              const BurgersGrid& grid = {});
/// Coefficients a_m ~ U[-1/m, 1/m], m = 1..modes.
Vector sample_sine_coefficients(int modes, std::mt19937_64& rng);

/// 10^U with U ~ U[lo, hi].
std::vector<double> sample_lags_loguniform(double lo_exp, double hi_exp, int count, std::uint64_t seed);

/// Seed of trajectory `index` in a set generated from `seed`.
inline std::uint64_t trajectory_seed(std::uint64_t seed, std::size_t index) { return seed ^ index; }

/// Fixed-lag trajectories from sampled initial conditions.
TrajectorySet generate_trajectories(SystemKind kind, int count, int length, double lag, std::uint64_t seed,
                                    int substeps = 1, const BurgersGrid& grid = {});

/// Independent (u0, lag, u_out) triples for the stiff system: u0 from the
/// sampling box, lag from 10^U[lo_exp, hi_exp].
OsgPairSet generate_robertson_triples(int count, double lo_exp, double hi_exp, std::uint64_t seed,
                                      const ImplicitOptions& opts = {});

std::vector<std::string> component_names(SystemKind kind, int width);

} // namespace fml
