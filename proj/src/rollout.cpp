#include "fml/rollout.hpp"

#include "fml/errors.hpp"

#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fml {

StepSchedule StepSchedule::fixed(double lag, int steps)
{
	if (!(lag > 0.0) || steps < 0)
		throw DomainError("fixed schedule needs lag > 0 and steps >= 0");
	StepSchedule s;
	s.kind_ = Kind::fixed;
	s.lags_.assign(static_cast<std::size_t>(steps), lag);
	return s;
}

StepSchedule StepSchedule::doubling(double start, double cap, double t_end)
{
	if (!(start > 0.0) || !(cap >= start) || !(t_end > 0.0))
		throw DomainError("doubling schedule needs 0 < start <= cap and t_end > 0");
	StepSchedule s;
	s.kind_ = Kind::doubling;
	double lag = start;
	double t = 0.0;
	while (t < t_end) {
		s.lags_.push_back(lag);
		t += lag;
		lag = std::min(2.0 * lag, cap);
	}
	return s;
}

StepSchedule StepSchedule::explicit_list(std::vector<double> lags)
{
	for (double d : lags)
		if (!(d >= 0.0))
			throw DomainError("schedule lags must be non-negative");
	StepSchedule s;
	s.kind_ = Kind::explicit_list;
	s.lags_ = std::move(lags);
	return s;
}

StepSchedule StepSchedule::parse(const std::string& text, double default_t_end)
{
	std::vector<std::string> parts;
	std::istringstream in(text);
	for (std::string p; std::getline(in, p, ':');)
		parts.push_back(p);
	try {
		if (!parts.empty() && parts[0] == "fixed" && parts.size() == 3)
			return fixed(std::stod(parts[1]), std::stoi(parts[2]));
		if (!parts.empty() && parts[0] == "doubling" && (parts.size() == 3 || parts.size() == 4))
			return doubling(std::stod(parts[1]), std::stod(parts[2]),
			                parts.size() == 4 ? std::stod(parts[3]) : default_t_end);
		if (!parts.empty() && parts[0] == "list" && parts.size() == 2) {
			std::vector<double> lags;
			std::istringstream list(parts[1]);
			for (std::string v; std::getline(list, v, ',');)
				lags.push_back(std::stod(v));
			return explicit_list(std::move(lags));
		}
	} catch (const std::invalid_argument&) {
	} catch (const std::out_of_range&) {
	}
	throw ConfigError("cannot parse schedule '" + text +
	                  "' (expected fixed:<lag>:<steps>, doubling:<start>:<cap>[:<t_end>] or list:<l1>,<l2>,...)");
}

void PredictionResult::write_csv(const std::filesystem::path& path) const
{
	std::ofstream out(path);
	if (!out)
		throw ParseError(path.string() + ": cannot write prediction");
	const Eigen::Index m = states.cols();
	auto name = [&](Eigen::Index c) {
		return static_cast<std::size_t>(c) < names.size() ? names[static_cast<std::size_t>(c)]
		                                                 : "u" + std::to_string(c + 1);
	};
	out << 't';
	for (Eigen::Index c = 0; c < m; ++c)
		out << ',' << name(c);
	std::optional<StepMetrics> err;
	if (reference) {
		for (Eigen::Index c = 0; c < m; ++c)
			out << ",ref_" << name(c);
		out << ",l2,rel_l2,linf";
		err = metrics(states, *reference);
	}
	out << '\n';
	for (Eigen::Index r = 0; r < states.rows(); ++r) {
		out << format_double(times(r));
		for (Eigen::Index c = 0; c < m; ++c)
			out << ',' << format_double(states(r, c));
		if (err) {
			for (Eigen::Index c = 0; c < m; ++c)
				out << ',' << format_double((*reference)(r, c));
			out << ',' << format_double(err->l2(r)) << ',' << format_double(err->rel_l2(r)) << ','
			    << format_double(err->linf(r));
		}
		out << '\n';
	}
}

namespace {

void check_state(const Matrix& u, int step)
{
	if (!u.allFinite())
		throw DivergenceError("prediction became non-finite at step " + std::to_string(step));
}

void require_fixed(const ModelBundle& model)
{
	if (model.varied_lag())
		throw ContractError(to_string(model.kind) + " models need a step schedule");
}

} // namespace

PredictionResult predict_fixed(const ModelBundle& model, const RowVector& u0, int steps)
{
	require_fixed(model);
	if (model.memory != 0)
		throw ContractError("memory models need " + std::to_string(model.memory + 1) + " seed states");
	return predict_memory(model, u0, steps);
}

PredictionResult predict_memory(const ModelBundle& model, const Matrix& seeds, int steps)
{
	require_fixed(model);
	const int m = model.state_width;
	if (seeds.rows() != model.memory + 1)
		throw ContractError("model with M = " + std::to_string(model.memory) + " needs " +
		                    std::to_string(model.memory + 1) + " seed states, got " + std::to_string(seeds.rows()));
	if (seeds.cols() != m)
		throw DimensionError("seed width " + std::to_string(seeds.cols()) + " vs model width " + std::to_string(m));
	if (steps < 0)
		throw DomainError("negative step count");

	const Eigen::Index rows = seeds.rows() + steps;
	PredictionResult r;
	r.states.resize(rows, m);
	r.times.resize(rows);
	r.states.topRows(seeds.rows()) = seeds;
	for (Eigen::Index k = 0; k < rows; ++k)
		r.times(k) = model.lag * static_cast<double>(k);

	// Normalized window, newest first.
	Matrix window(1, static_cast<Eigen::Index>(model.memory + 1) * m);
	for (int s = 0; s <= model.memory; ++s)
		window.middleCols(static_cast<Eigen::Index>(s) * m, m) = model.norm.apply(seeds.row(model.memory - s));
	for (int k = 0; k < steps; ++k) {
		const Matrix next = model.step(window);
		check_state(next, k + 1);
		if (model.memory > 0) {
			const Matrix older = window.leftCols(static_cast<Eigen::Index>(model.memory) * m);
			window.rightCols(older.cols()) = older;
		}
		window.leftCols(m) = next;
		r.states.row(seeds.rows() + k) = model.norm.invert(next);
	}
	return r;
}

PredictionResult predict_varied(const ModelBundle& model, const RowVector& u0, const StepSchedule& schedule,
                                std::vector<std::string>* warnings)
{
	if (!model.varied_lag())
		throw ContractError(to_string(model.kind) + " models use a fixed lag");
	if (u0.size() != model.state_width)
		throw DimensionError("initial state width " + std::to_string(u0.size()) + " vs model width " +
		                     std::to_string(model.state_width));
	const auto& lags = schedule.lags();
	const auto rows = static_cast<Eigen::Index>(lags.size()) + 1;
	PredictionResult r;
	r.times.resize(rows);
	r.states.resize(rows, model.state_width);
	r.times(0) = 0.0;
	r.states.row(0) = u0;
	Matrix u = model.norm.apply(u0);
	bool warned = false;
	for (std::size_t k = 0; k < lags.size(); ++k) {
		const double d = lags[k];
		const bool outside = d > 0.0 && (d < model.lag_min * (1.0 - 1e-12) || d > model.lag_max * (1.0 + 1e-12));
		if (outside && !warned) {
			const std::string msg = "lag " + format_double(d) + " at step " + std::to_string(k + 1) +
			                        " lies outside the trained range [" + format_double(model.lag_min) + ", " +
			                        format_double(model.lag_max) + "]";
			if (warnings)
				warnings->push_back(msg);
			else
				std::cerr << "warning: " << msg << '\n';
			warned = true;
		}
		u = model.step(u, Matrix::Constant(1, 1, d));
		check_state(u, static_cast<int>(k + 1));
		r.times(static_cast<Eigen::Index>(k) + 1) = r.times(static_cast<Eigen::Index>(k)) + d;
		r.states.row(static_cast<Eigen::Index>(k) + 1) = model.norm.invert(u);
	}
	return r;
}

PredictionResult rollout_modal(const ModelBundle& model, const Basis& basis, const Matrix& nodal_u0, int steps,
                               int channels)
{
	const Matrix u0 = nodal_u0.rows() == 1 ? snapshot_matrix(nodal_u0, channels) : nodal_u0;
	const Matrix v0 = snapshot_row(basis.project_forward(u0));
	const PredictionResult modal = predict_fixed(model, v0, steps);
	PredictionResult r;
	r.times = modal.times;
	r.states.resize(modal.states.rows(), static_cast<Eigen::Index>(basis.nodes()) * channels);
	for (Eigen::Index k = 0; k < modal.states.rows(); ++k)
		r.states.row(k) = snapshot_row(basis.project_backward(snapshot_matrix(modal.states.row(k), channels)));
	return r;
}

StepMetrics metrics(const Matrix& pred, const Matrix& ref)
{
	if (pred.rows() != ref.rows() || pred.cols() != ref.cols())
		throw DimensionError("metrics: prediction " + shape_string(pred) + " vs reference " + shape_string(ref));
	StepMetrics m;
	m.l2.resize(pred.rows());
	m.rel_l2.resize(pred.rows());
	m.linf.resize(pred.rows());
	for (Eigen::Index k = 0; k < pred.rows(); ++k) {
		const auto diff = pred.row(k) - ref.row(k);
		m.l2(k) = diff.norm();
		m.rel_l2(k) = m.l2(k) / std::max(ref.row(k).norm(), 1e-12);
		m.linf(k) = pred.cols() ? diff.cwiseAbs().maxCoeff() : 0.0;
	}
	return m;
}

StepMetrics aggregate(const std::vector<StepMetrics>& runs)
{
	if (runs.empty())
		throw DomainError("no runs to aggregate");
	StepMetrics out = runs.front();
	for (std::size_t i = 1; i < runs.size(); ++i) {
		if (runs[i].l2.size() != out.l2.size())
			throw DimensionError("runs of different lengths cannot be aggregated");
		out.l2 += runs[i].l2;
		out.rel_l2 += runs[i].rel_l2;
		out.linf += runs[i].linf;
	}
	const double n = static_cast<double>(runs.size());
	out.l2 /= n;
	out.rel_l2 /= n;
	out.linf /= n;
	return out;
}

void write_metrics_csv(const std::filesystem::path& path, const Vector& times, const StepMetrics& m)
{
	if (times.size() != m.l2.size())
		throw DimensionError("metrics and times differ in length");
	std::ofstream out(path);
	if (!out)
		throw ParseError(path.string() + ": cannot write metrics");
	out << "t,l2,rel_l2,linf\n";
	for (Eigen::Index k = 0; k < times.size(); ++k)
		out << format_double(times(k)) << ',' << format_double(m.l2(k)) << ',' << format_double(m.rel_l2(k)) << ','
		    << format_double(m.linf(k)) << '\n';
}

} // namespace fml
