#pragma once

#include "fml/datasets.hpp"
#include "fml/model.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <variant>
#include <vector>

namespace fml {

struct TrainConfig {
	int epochs = 100;
	int batch_size = 10;
	double lr = 1e-3;
	double lr_min = 0.0;
	int multistep = 0; ///< K; must match the burst windows when training on bursts
	double gdsg_lambda = 0.0;
	int gdsg_pairs = 1; ///< Q
	std::uint64_t seed = 0;
	double clip_norm = 10.0; ///< global gradient l2 clip, <= 0 disables
	/// Fills the seconds column of the loss record. Off by default so that the
	/// record is reproducible byte for byte.
	bool record_wall_time = false;

	void validate() const;
};

struct AdamState {
	double beta1 = 0.9;
	double beta2 = 0.999;
	double eps = 1e-8;
	long step = 0;
	std::vector<Matrix> m;
	std::vector<Matrix> v;
};

/// Bias-corrected Adam update of every parameter from its grad buffer.
void adam_step(AdamState& state, ParamSet& params, double lr);

/// eta_min + (eta0 - eta_min) (1 + cos(pi t / T)) / 2.
double cosine_lr(double eta0, double eta_min, int t, int total);

struct LossRecord {
	std::vector<double> mean_loss;
	std::vector<double> lr;
	std::vector<double> seconds;

	std::size_t size() const { return mean_loss.size(); }
	/// `epoch,mean_loss,lr,seconds`, epochs counted from 1.
	void write_csv(const std::filesystem::path& path) const;
};

/// (1/J) sum_j |pred_j - target_j|^2.
double mse_loss(const Matrix& pred, const Matrix& target);
Var mse_loss(Var pred, Var target);

/// Rolls the model K + 1 steps from the first M + 1 states of every window
/// (J x (M+2+K) m, oldest first) and averages the per-step MSE.
Var multistep_rollout_loss(const ModelBundle& model, ParamView& pv, const Matrix& windows, int memory, int multistep);
double multistep_rollout_loss(const ModelBundle& model, const Matrix& windows, int memory, int multistep);

struct GdsgProbes {
	Matrix u0;   ///< count x m
	Matrix lag0; ///< count x 1
	Matrix lag1; ///< count x 1
};

/// u0 uniform in the box [lo, hi]; lags log-uniform on [lag_min, max(lag_max / 2, lag_min)].
GdsgProbes sample_gdsg_inputs(const RowVector& lo, const RowVector& hi, double lag_min, double lag_max, int count,
                              std::mt19937_64& rng);
GdsgProbes sample_gdsg_inputs(const RowVector& lo, const RowVector& hi, double lag_min, double lag_max, int count,
                              std::uint64_t seed);

/// Semigroup residual summed over the probe rows:
/// 1/2 (|F(u, d0+d1) - F(F(u, d0), d1)|^2 + |F(u, d0+d1) - F(F(u, d1), d0)|^2).
/// Works with plain matrices and tape variables alike.
template <typename Flow, typename T>
auto gdsg_residual(Flow&& flow, const T& u0, const T& lag0, const T& lag1)
{
	const T total = lag0 + lag1;
	const T direct = flow(u0, total);
	const T first = flow(flow(u0, lag0), lag1);
	const T second = flow(flow(u0, lag1), lag0);
	const T e1 = direct - first;
	const T e2 = direct - second;
	return 0.5 * (sum_of_squares(e1) + sum_of_squares(e2));
}

/// (sum_j |u_out - F(u_in, lag)|^2 + lambda / Q sum_q R_q) / ((1 + lambda) J)
/// with J Q probe residuals.
Var gdsg_loss(const ModelBundle& model, ParamView& pv, const Matrix& inputs, const Matrix& lags,
              const Matrix& outputs, double lambda, int pairs, const GdsgProbes& probes);

using TrainingData = std::variant<PairSet, OsgPairSet, BurstSet>;

/// Called after every epoch with the epoch number (from 1) and the mean loss.
using EpochCallback = std::function<void(int epoch, const ModelBundle& model, double mean_loss)>;

/// Fits normalization (and the gResNet prior) on the data, then runs
/// mini-batch Adam with cosine annealing in normalized coordinates.
LossRecord train_model(ModelBundle& model, const TrainingData& data, const TrainConfig& cfg,
                       const EpochCallback& on_epoch = {});

struct TrainResult {
	ModelBundle model;
	LossRecord record;
};

TrainResult train(const ModelSpec& spec, const TrainingData& data, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

} // namespace fml
