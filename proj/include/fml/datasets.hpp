#pragma once

#include "fml/autodiff.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace fml {

/// Time-stamped states; row k of `states` is observed at times(k).
struct Trajectory {
	Vector times;
	Matrix states;

	Eigen::Index length() const { return states.rows(); }
	Eigen::Index width() const { return states.cols(); }
	void validate() const;
};

struct TrajectorySet {
	std::vector<Trajectory> trajectories;
	std::vector<std::string> names;

	std::size_t size() const { return trajectories.size(); }
	bool empty() const { return trajectories.empty(); }
	Eigen::Index width() const;
	void validate() const;

	/// Keeps only the listed state columns (partial observation).
	TrajectorySet select_components(const std::vector<int>& columns) const;
};

/// Fixed-lag input/output pairs.
struct PairSet {
	Matrix inputs;
	Matrix outputs;
	double lag = 0.0;

	Eigen::Index size() const { return inputs.rows(); }
};

/// Pairs with per-row lags.
struct OsgPairSet {
	Matrix inputs;
	Matrix lags; ///< J x 1
	Matrix outputs;
	double lag_min = 0.0;
	double lag_max = 0.0;

	Eigen::Index size() const { return inputs.rows(); }
};

/// Windows of M + 2 + K consecutive states. Row j of `windows` concatenates
/// the window's states oldest first, each `width` columns wide.
struct BurstSet {
	Matrix windows;
	int memory = 0;
	int multistep = 0;
	int width = 0;
	double lag = 0.0;

	int window_length() const { return memory + 2 + multistep; }
	Eigen::Index size() const { return windows.rows(); }
	/// State at window position k for every burst (J x width).
	Matrix slot(int k) const { return windows.middleCols(static_cast<Eigen::Index>(k) * width, width); }
};

/// Per-component z-score statistics. A stats vector shorter than the data
/// width is tiled, so one set of channel statistics can normalize memory
/// windows or nodal snapshots.
struct NormStats {
	RowVector mean;
	RowVector std;
	bool varied_lag = false;
	double lag_mean = 0.0; ///< of log10(lag)
	double lag_std = 1.0;

	Eigen::Index width() const { return mean.size(); }
	Matrix apply(const Matrix& data) const;
	Matrix invert(const Matrix& data) const;
	/// Pure scale part: maps a state difference into normalized units.
	Matrix scale_only(const Matrix& data) const;

	/// Statistics with mean 0 and std 1.
	static NormStats identity(Eigen::Index width);
};

inline constexpr double kStdFloor = 1e-12;

/// Columnwise mean/std over the rows of `data`.
NormStats normalize_fit(const Matrix& data);
/// Mean/std per channel pooled over every node: column c belongs to channel c % channels.
NormStats normalize_fit_pooled(const Matrix& data, int channels);
/// Adds log10-lag statistics.
void normalize_fit_lags(NormStats& stats, const Matrix& lags);
Matrix normalize_apply(const NormStats& stats, const Matrix& data);
Matrix normalize_invert(const NormStats& stats, const Matrix& data);

// ---------------------------------------------------------------------------
// Rearrangement

/// Consecutive pairs of every trajectory; lags must agree within `rel_tol`.
PairSet segment_fixed(const TrajectorySet& ts, double rel_tol = 1e-9);
/// Consecutive pairs with their individual lags.
OsgPairSet segment_osg(const TrajectorySet& ts);
/// `bursts_per_traj` random windows of length M + 2 + K from each trajectory.
BurstSet make_bursts(const TrajectorySet& ts, int memory, int multistep, int bursts_per_traj, std::uint64_t seed,
                     double rel_tol = 1e-9);
/// Every admissible window (stride 1) from each trajectory.
BurstSet all_windows(const TrajectorySet& ts, int memory, int multistep, double rel_tol = 1e-9);

/// v -> v (1 + eps), eps ~ U[-eta, eta] i.i.d. over every stored state value.
TrajectorySet add_multiplicative_noise(const TrajectorySet& ts, double eta, std::uint64_t seed);

/// Splits whole trajectories; returns (train, test).
std::pair<TrajectorySet, TrajectorySet> train_test_split(const TrajectorySet& ts, double test_fraction,
                                                         std::uint64_t seed);

// ---------------------------------------------------------------------------
// Files

/// Reads a manifest (one CSV path per line, relative to the manifest, `#`
/// comments) and every listed CSV. A CSV whose header starts with `dt` holds
/// varied-lag triples and expands into two-row trajectories.
TrajectorySet load_trajectories(const std::filesystem::path& manifest);
Trajectory read_trajectory_csv(const std::filesystem::path& path, std::vector<std::string>* names = nullptr);
void write_trajectory_csv(const std::filesystem::path& path, const Trajectory& traj,
                          const std::vector<std::string>& names);
/// Writes one CSV per trajectory (`<stem>_<index>.csv`) and a manifest listing them.
void write_trajectory_set(const std::filesystem::path& dir, const std::string& stem, const TrajectorySet& ts,
                          const std::filesystem::path& manifest_name = "manifest.txt");
/// `dt,<name>_in...,<name>_out...` rows.
void write_triples_csv(const std::filesystem::path& path, const OsgPairSet& triples,
                       const std::vector<std::string>& names);
Matrix read_mesh_csv(const std::filesystem::path& path);
void write_mesh_csv(const std::filesystem::path& path, const Matrix& mesh);

/// Formats with 17 significant digits.
std::string format_double(double v);

} // namespace fml
