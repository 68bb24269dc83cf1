#include "fml/training.hpp"

#include "fml/errors.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

namespace fml {

void TrainConfig::validate() const
{
	if (epochs < 1 || batch_size < 1)
		throw ConfigError("epochs and batch size must be at least 1");
	if (!(lr >= 0.0) || lr_min < 0.0 || lr_min > lr)
		throw ConfigError("learning rates must satisfy 0 <= lr_min <= lr");
	if (multistep < 0)
		throw ConfigError("multistep K must be non-negative");
	if (gdsg_lambda < 0.0)
		throw ConfigError("GDSG lambda must be non-negative");
	if (gdsg_lambda > 0.0 && gdsg_pairs < 1)
		throw ConfigError("GDSG needs Q >= 1 when lambda > 0");
}

void adam_step(AdamState& state, ParamSet& params, double lr)
{
	if (state.m.size() != params.size()) {
		state.m.clear();
		state.v.clear();
		for (const auto& e : params) {
			state.m.push_back(Matrix::Zero(e.value.rows(), e.value.cols()));
			state.v.push_back(Matrix::Zero(e.value.rows(), e.value.cols()));
		}
		state.step = 0;
	}
	++state.step;
	const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
	const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
	for (std::size_t i = 0; i < params.size(); ++i) {
		auto& e = params[i];
		if (e.grad.size() == 0)
			continue;
		if (e.grad.rows() != e.value.rows() || e.grad.cols() != e.value.cols())
			throw DimensionError("gradient of " + e.name + " has shape " + shape_string(e.grad));
		auto& m = state.m[i];
		auto& v = state.v[i];
		m = state.beta1 * m + (1.0 - state.beta1) * e.grad;
		v = state.beta2 * v + (1.0 - state.beta2) * e.grad.cwiseAbs2();
		e.value.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + state.eps);
	}
}

double cosine_lr(double eta0, double eta_min, int t, int total)
{
	if (total < 1 || t < 0 || t > total)
		throw DomainError("cosine schedule epoch " + std::to_string(t) + " outside [0, " + std::to_string(total) + "]");
	if (t == total)
		return eta_min;
	return eta_min + (eta0 - eta_min) * (1.0 + std::cos(std::numbers::pi * t / total)) / 2.0;
}

void LossRecord::write_csv(const std::filesystem::path& path) const
{
	std::ofstream out(path);
	if (!out)
		throw ParseError(path.string() + ": cannot write loss record");
	out << "epoch,mean_loss,lr,seconds\n";
	for (std::size_t e = 0; e < size(); ++e)
		out << e + 1 << ',' << format_double(mean_loss[e]) << ',' << format_double(lr[e]) << ','
		    << format_double(seconds[e]) << '\n';
}

// ---------------------------------------------------------------------------
// Losses

double mse_loss(const Matrix& pred, const Matrix& target)
{
	if (pred.rows() != target.rows() || pred.cols() != target.cols())
		throw DimensionError("mse_loss: " + shape_string(pred) + " vs " + shape_string(target));
	if (pred.rows() == 0)
		throw DomainError("mse_loss of an empty batch");
	return sum_of_squares(Matrix(pred - target)) / static_cast<double>(pred.rows());
}

Var mse_loss(Var pred, Var target)
{
	if (pred.rows() != target.rows() || pred.cols() != target.cols())
		throw DimensionError("mse_loss: " + shape_string(pred.value()) + " vs " + shape_string(target.value()));
	if (pred.rows() == 0)
		throw DomainError("mse_loss of an empty batch");
	return scale(sum_of_squares(pred - target), 1.0 / static_cast<double>(pred.rows()));
}

Var multistep_rollout_loss(const ModelBundle& model, ParamView& pv, const Matrix& windows, int memory, int multistep)
{
	const int m = model.state_width;
	const int len = memory + 2 + multistep;
	if (model.memory != memory)
		throw DimensionError("model memory " + std::to_string(model.memory) + " vs window memory " +
		                     std::to_string(memory));
	if (windows.cols() != static_cast<Eigen::Index>(len) * m)
		throw DimensionError("windows " + shape_string(windows) + " do not hold " + std::to_string(len) +
		                     " states of width " + std::to_string(m));
	Tape& t = pv.tape();
	auto slot = [&](int k) { return windows.middleCols(static_cast<Eigen::Index>(k) * m, m); };

	// Newest state first.
	std::vector<Var> memory_states;
	for (int k = memory; k >= 0; --k)
		memory_states.push_back(t.constant(slot(k)));
	const Var no_lag = t.constant(Matrix());
	Var total;
	for (int k = 0; k <= multistep; ++k) {
		Var input = memory_states.size() == 1 ? memory_states.front() : concat_cols(memory_states);
		Var next = model.step(pv, input, no_lag);
		Var err = sum_of_squares(next - t.constant(slot(memory + 1 + k)));
		total = k == 0 ? err : total + err;
		memory_states.pop_back();
		memory_states.insert(memory_states.begin(), next);
	}
	return scale(total, 1.0 / (static_cast<double>(windows.rows()) * (multistep + 1)));
}

double multistep_rollout_loss(const ModelBundle& model, const Matrix& windows, int memory, int multistep)
{
	Tape tape;
	ParamView pv(tape, model.params);
	return multistep_rollout_loss(model, pv, windows, memory, multistep).scalar();
}

GdsgProbes sample_gdsg_inputs(const RowVector& lo, const RowVector& hi, double lag_min, double lag_max, int count,
                              std::mt19937_64& rng)
{
	if (lo.size() != hi.size())
		throw DimensionError("probe box bounds differ in width");
	if (!(lag_min > 0.0) || !(lag_max >= lag_min))
		throw DomainError("probe lags need 0 < lag_min <= lag_max");
	GdsgProbes p;
	p.u0.resize(count, lo.size());
	p.lag0.resize(count, 1);
	p.lag1.resize(count, 1);
	const double a = std::log10(lag_min);
	const double b = std::log10(std::max(lag_max / 2.0, lag_min));
	std::uniform_real_distribution<double> unit(0.0, 1.0);
	for (int i = 0; i < count; ++i) {
		for (Eigen::Index c = 0; c < lo.size(); ++c)
			p.u0(i, c) = lo(c) + (hi(c) - lo(c)) * unit(rng);
		p.lag0(i, 0) = std::pow(10.0, a + (b - a) * unit(rng));
		p.lag1(i, 0) = std::pow(10.0, a + (b - a) * unit(rng));
	}
	return p;
}

GdsgProbes sample_gdsg_inputs(const RowVector& lo, const RowVector& hi, double lag_min, double lag_max, int count,
                              std::uint64_t seed)
{
	std::mt19937_64 rng(seed);
	return sample_gdsg_inputs(lo, hi, lag_min, lag_max, count, rng);
}

Var gdsg_loss(const ModelBundle& model, ParamView& pv, const Matrix& inputs, const Matrix& lags,
              const Matrix& outputs, double lambda, int pairs, const GdsgProbes& probes)
{
	if (inputs.rows() == 0)
		throw DomainError("gdsg_loss of an empty batch");
	Tape& t = pv.tape();
	const double j = static_cast<double>(inputs.rows());
	Var fit = sum_of_squares(model.step(pv, t.constant(inputs), t.constant(lags)) - t.constant(outputs));
	if (lambda == 0.0)
		return scale(fit, 1.0 / j);
	auto flow = [&](Var u, Var d) { return model.step(pv, u, d); };
	Var residual = gdsg_residual(flow, t.constant(probes.u0), t.constant(probes.lag0), t.constant(probes.lag1));
	return scale(fit + scale(residual, lambda / pairs), 1.0 / ((1.0 + lambda) * j));
}

// ---------------------------------------------------------------------------
// Training loop

namespace {

bool fixed_lag_kind(ModelKind k)
{
	return k == ModelKind::resnet || k == ModelKind::gresnet || k == ModelKind::pit_resnet;
}

NormStats fit_stats(const ModelBundle& model, const Matrix& states)
{
	if (model.kind == ModelKind::pit_resnet)
		return normalize_fit_pooled(states, model.pit->channels);
	return normalize_fit(states);
}

BurstSet as_bursts(const PairSet& pairs)
{
	BurstSet b;
	b.memory = 0;
	b.multistep = 0;
	b.width = static_cast<int>(pairs.inputs.cols());
	b.lag = pairs.lag;
	b.windows.resize(pairs.size(), 2 * pairs.inputs.cols());
	b.windows << pairs.inputs, pairs.outputs;
	return b;
}

Matrix gather(const Matrix& src, const std::vector<Eigen::Index>& order, std::size_t start, std::size_t count)
{
	Matrix out(static_cast<Eigen::Index>(count), src.cols());
	for (std::size_t i = 0; i < count; ++i)
		out.row(static_cast<Eigen::Index>(i)) = src.row(order[start + i]);
	return out;
}

void clip_gradients(ParamSet& params, double max_norm)
{
	if (max_norm <= 0.0)
		return;
	const double norm = params.grad_norm();
	if (norm > max_norm)
		for (auto& e : params)
			if (e.grad.size() != 0)
				e.grad *= max_norm / norm;
}

// Normalized training arrays for one of the two loss families.
struct Prepared {
	bool varied = false;
	Matrix windows; // fixed lag
	int memory = 0;
	int multistep = 0;
	Matrix inputs, lags, outputs; // varied lag
	RowVector lo, hi;
	Eigen::Index size() const { return varied ? inputs.rows() : windows.rows(); }
};

Prepared prepare_fixed(ModelBundle& model, const BurstSet& bursts, const TrainConfig& cfg)
{
	if (!fixed_lag_kind(model.kind))
		throw ConfigError(to_string(model.kind) + " models need varied-lag training data");
	if (bursts.width != model.state_width)
		throw ConfigError("data width " + std::to_string(bursts.width) + " does not match model width " +
		                  std::to_string(model.state_width));
	if (bursts.memory != model.memory)
		throw ConfigError("data memory M = " + std::to_string(bursts.memory) + " but model has M = " +
		                  std::to_string(model.memory));
	if (cfg.multistep != bursts.multistep)
		throw ConfigError("config K = " + std::to_string(cfg.multistep) + " but windows hold K = " +
		                  std::to_string(bursts.multistep));
	const int m = bursts.width;
	const int len = bursts.window_length();
	const Matrix states = bursts.windows.reshaped<Eigen::RowMajor>(bursts.size() * len, m);
	model.norm = fit_stats(model, states);
	model.lag = bursts.lag;
	model.multistep = bursts.multistep;

	Prepared p;
	p.windows = model.norm.apply(bursts.windows);
	p.memory = bursts.memory;
	p.multistep = bursts.multistep;

	if (model.kind == ModelKind::gresnet) {
		// Every transition inside every window, newest state first.
		const int transitions = len - 1 - bursts.memory;
		const Eigen::Index rows = p.windows.rows() * transitions;
		Matrix in(rows, static_cast<Eigen::Index>(bursts.memory + 1) * m), out(rows, m);
		Eigen::Index r = 0;
		for (Eigen::Index j = 0; j < p.windows.rows(); ++j)
			for (int k = 0; k < transitions; ++k, ++r) {
				for (int s = 0; s <= bursts.memory; ++s)
					in.block(r, static_cast<Eigen::Index>(s) * m, 1, m) =
					    p.windows.block(j, static_cast<Eigen::Index>(k + bursts.memory - s) * m, 1, m);
				out.row(r) = p.windows.block(j, static_cast<Eigen::Index>(k + bursts.memory + 1) * m, 1, m);
			}
		model.prior = affine_fit(in, out);
	}
	return p;
}

Prepared prepare_varied(ModelBundle& model, const OsgPairSet& pairs, const TrainConfig& cfg)
{
	if (!is_varied_lag(model.kind))
		throw ConfigError(to_string(model.kind) + " models need fixed-lag training data");
	if (pairs.inputs.cols() != model.state_width)
		throw ConfigError("data width " + std::to_string(pairs.inputs.cols()) + " does not match model width " +
		                  std::to_string(model.state_width));
	if (cfg.multistep != 0)
		throw ConfigError("multistep loss needs fixed-lag bursts");
	if ((pairs.lags.array() < 0.0).any())
		throw DataError("negative lag in training data");
	model.norm = normalize_fit(pairs.inputs);
	normalize_fit_lags(model.norm, pairs.lags);
	model.encoding.log10 = true;
	model.encoding.mean = model.norm.lag_mean;
	model.encoding.std = model.norm.lag_std;
	model.lag_min = pairs.lag_min;
	model.lag_max = pairs.lag_max;

	Prepared p;
	p.varied = true;
	p.inputs = model.norm.apply(pairs.inputs);
	p.outputs = model.norm.apply(pairs.outputs);
	p.lags = pairs.lags;
	p.lo = p.inputs.colwise().minCoeff();
	p.hi = p.inputs.colwise().maxCoeff();
	return p;
}

} // namespace

LossRecord train_model(ModelBundle& model, const TrainingData& data, const TrainConfig& cfg,
                       const EpochCallback& on_epoch)
{
	cfg.validate();
	Prepared prep = std::visit(
	    [&](const auto& d) -> Prepared {
		    using D = std::decay_t<decltype(d)>;
		    if constexpr (std::is_same_v<D, OsgPairSet>)
			    return prepare_varied(model, d, cfg);
		    else if constexpr (std::is_same_v<D, PairSet>)
			    return prepare_fixed(model, as_bursts(d), cfg);
		    else
			    return prepare_fixed(model, d, cfg);
	    },
	    data);
	if (prep.varied && cfg.gdsg_lambda > 0.0 && !(model.lag_min > 0.0))
		throw DataError("GDSG probes need strictly positive training lags");

	const auto total = static_cast<std::size_t>(prep.size());
	const auto batch = static_cast<std::size_t>(cfg.batch_size);
	if (total < batch)
		throw ConfigError("batch size " + std::to_string(batch) + " exceeds the " + std::to_string(total) +
		                  " training samples");
	const std::size_t batches = total / batch;

	model.info["epochs"] = std::to_string(cfg.epochs);
	model.info["batch_size"] = std::to_string(cfg.batch_size);
	model.info["lr"] = format_double(cfg.lr);
	model.info["lr_min"] = format_double(cfg.lr_min);
	model.info["lr_schedule"] = "cosine_per_epoch";
	model.info["gdsg_lambda"] = format_double(cfg.gdsg_lambda);
	model.info["gdsg_pairs"] = std::to_string(cfg.gdsg_pairs);
	model.info["train_seed"] = std::to_string(cfg.seed);

	std::mt19937_64 rng(cfg.seed);
	std::vector<Eigen::Index> order(total);
	std::iota(order.begin(), order.end(), Eigen::Index{0});
	AdamState adam;
	LossRecord record;
	using Clock = std::chrono::steady_clock;
	const auto started = Clock::now();

	for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
		const double lr = cosine_lr(cfg.lr, cfg.lr_min, epoch, cfg.epochs);
		std::shuffle(order.begin(), order.end(), rng);
		double sum = 0.0;
		for (std::size_t b = 0; b < batches; ++b) {
			Tape tape;
			ParamView pv(tape, model.params);
			Var loss;
			if (prep.varied) {
				const Matrix in = gather(prep.inputs, order, b * batch, batch);
				const Matrix lags = gather(prep.lags, order, b * batch, batch);
				const Matrix out = gather(prep.outputs, order, b * batch, batch);
				GdsgProbes probes;
				if (cfg.gdsg_lambda > 0.0)
					probes = sample_gdsg_inputs(prep.lo, prep.hi, model.lag_min, model.lag_max,
					                            static_cast<int>(batch) * cfg.gdsg_pairs, rng);
				loss = gdsg_loss(model, pv, in, lags, out, cfg.gdsg_lambda, cfg.gdsg_pairs, probes);
			} else {
				const Matrix windows = gather(prep.windows, order, b * batch, batch);
				loss = multistep_rollout_loss(model, pv, windows, prep.memory, prep.multistep);
			}
			if (!std::isfinite(loss.scalar()))
				throw DivergenceError("non-finite training loss at epoch " + std::to_string(epoch + 1) + ", batch " +
				                      std::to_string(b + 1));
			model.params.zero_grad();
			tape.backward(loss);
			clip_gradients(model.params, cfg.clip_norm);
			adam_step(adam, model.params, lr);
			sum += loss.scalar();
		}
		const double mean = sum / static_cast<double>(batches);
		record.mean_loss.push_back(mean);
		record.lr.push_back(lr);
		record.seconds.push_back(
		    cfg.record_wall_time ? std::chrono::duration<double>(Clock::now() - started).count() : 0.0);
		if (on_epoch)
			on_epoch(epoch + 1, model, mean);
	}
	return record;
}

TrainResult train(const ModelSpec& spec, const TrainingData& data, const TrainConfig& cfg,
                  const EpochCallback& on_epoch)
{
	TrainResult r{make_model(spec, cfg.seed), {}};
	r.record = train_model(r.model, data, cfg, on_epoch);
	return r;
}

} // namespace fml
