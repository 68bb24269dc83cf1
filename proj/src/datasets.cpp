#include "fml/datasets.hpp"

#include "fml/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace fml {

namespace fs = std::filesystem;

void Trajectory::validate() const
{
	if (times.size() != states.rows())
		throw DataError("trajectory has " + std::to_string(times.size()) + " time stamps but " +
		                std::to_string(states.rows()) + " states");
	for (Eigen::Index k = 1; k < times.size(); ++k)
		if (!(times(k) > times(k - 1)))
			throw DataError("time stamps not strictly increasing at row " + std::to_string(k));
}

Eigen::Index TrajectorySet::width() const
{
	return trajectories.empty() ? 0 : trajectories.front().width();
}

void TrajectorySet::validate() const
{
	for (std::size_t i = 0; i < trajectories.size(); ++i) {
		trajectories[i].validate();
		if (trajectories[i].width() != width())
			throw DataError("trajectory " + std::to_string(i) + " has width " +
			                std::to_string(trajectories[i].width()) + ", expected " + std::to_string(width()));
	}
}

TrajectorySet TrajectorySet::select_components(const std::vector<int>& columns) const
{
	TrajectorySet out;
	for (int c : columns) {
		if (c < 0 || c >= width())
			throw DomainError("component index " + std::to_string(c) + " outside state width " +
			                  std::to_string(width()));
		out.names.push_back(static_cast<std::size_t>(c) < names.size() ? names[static_cast<std::size_t>(c)]
		                                                               : "u" + std::to_string(c + 1));
	}
	for (const auto& tr : trajectories) {
		Trajectory t;
		t.times = tr.times;
		t.states.resize(tr.length(), static_cast<Eigen::Index>(columns.size()));
		for (std::size_t k = 0; k < columns.size(); ++k)
			t.states.col(static_cast<Eigen::Index>(k)) = tr.states.col(columns[k]);
		out.trajectories.push_back(std::move(t));
	}
	return out;
}

// ---------------------------------------------------------------------------
// Normalization

namespace {

template <typename Fn>
Matrix tiled(const NormStats& s, const Matrix& data, Fn fn)
{
	const Eigen::Index w = s.width();
	if (w == 0 || data.cols() % w != 0)
		throw DimensionError("normalization of width " + std::to_string(w) + " applied to " + shape_string(data));
	Matrix out(data.rows(), data.cols());
	for (Eigen::Index c = 0; c < data.cols(); ++c)
		out.col(c) = data.col(c).unaryExpr([&](double v) { return fn(v, s.mean(c % w), s.std(c % w)); });
	return out;
}

} // namespace

Matrix NormStats::apply(const Matrix& data) const
{
	return tiled(*this, data, [](double v, double m, double s) { return (v - m) / s; });
}

Matrix NormStats::invert(const Matrix& data) const
{
	return tiled(*this, data, [](double v, double m, double s) { return v * s + m; });
}

Matrix NormStats::scale_only(const Matrix& data) const
{
	return tiled(*this, data, [](double v, double, double s) { return v / s; });
}

NormStats NormStats::identity(Eigen::Index width)
{
	NormStats s;
	s.mean = RowVector::Zero(width);
	s.std = RowVector::Ones(width);
	return s;
}

NormStats normalize_fit(const Matrix& data)
{
	return normalize_fit_pooled(data, static_cast<int>(data.cols()));
}

NormStats normalize_fit_pooled(const Matrix& data, int channels)
{
	if (data.rows() == 0 || channels <= 0 || data.cols() % channels != 0)
		throw DimensionError("cannot fit normalization of " + std::to_string(channels) + " channels to " +
		                     shape_string(data));
	NormStats s;
	s.mean = RowVector::Zero(channels);
	s.std = RowVector::Zero(channels);
	std::vector<double> count(static_cast<std::size_t>(channels), 0.0);
	for (Eigen::Index c = 0; c < data.cols(); ++c) {
		s.mean(c % channels) += data.col(c).sum();
		count[static_cast<std::size_t>(c % channels)] += static_cast<double>(data.rows());
	}
	for (int c = 0; c < channels; ++c)
		s.mean(c) /= count[static_cast<std::size_t>(c)];
	for (Eigen::Index c = 0; c < data.cols(); ++c)
		s.std(c % channels) += (data.col(c).array() - s.mean(c % channels)).square().sum();
	for (int c = 0; c < channels; ++c)
		s.std(c) = std::max(std::sqrt(s.std(c) / count[static_cast<std::size_t>(c)]), kStdFloor);
	return s;
}

void normalize_fit_lags(NormStats& stats, const Matrix& lags)
{
	if (lags.size() == 0)
		throw DataError("no lags to normalize");
	const Eigen::ArrayXd logs = lags.reshaped().unaryExpr([](double d) { return std::log10(std::max(d, 1e-30)); });
	stats.varied_lag = true;
	stats.lag_mean = logs.mean();
	stats.lag_std = std::max(std::sqrt((logs - stats.lag_mean).square().mean()), kStdFloor);
}

Matrix normalize_apply(const NormStats& stats, const Matrix& data)
{
	return stats.apply(data);
}

Matrix normalize_invert(const NormStats& stats, const Matrix& data)
{
	return stats.invert(data);
}

// ---------------------------------------------------------------------------
// Rearrangement

namespace {

double fixed_lag_of(const TrajectorySet& ts, double rel_tol)
{
	double lag = 0.0;
	for (std::size_t i = 0; i < ts.size(); ++i) {
		const Vector& t = ts.trajectories[i].times;
		for (Eigen::Index k = 1; k < t.size(); ++k) {
			const double d = t(k) - t(k - 1);
			if (lag == 0.0)
				lag = d;
			else if (std::abs(d - lag) > rel_tol * std::abs(lag))
				throw DataError("trajectory " + std::to_string(i) + " has lag " + format_double(d) + " at row " +
				                std::to_string(k) + ", expected " + format_double(lag));
		}
	}
	return lag;
}

} // namespace

PairSet segment_fixed(const TrajectorySet& ts, double rel_tol)
{
	ts.validate();
	PairSet out;
	out.lag = fixed_lag_of(ts, rel_tol);
	Eigen::Index total = 0;
	for (const auto& tr : ts.trajectories)
		total += std::max<Eigen::Index>(tr.length() - 1, 0);
	out.inputs.resize(total, ts.width());
	out.outputs.resize(total, ts.width());
	Eigen::Index row = 0;
	for (const auto& tr : ts.trajectories) {
		const Eigen::Index k = tr.length() - 1;
		if (k <= 0)
			continue;
		out.inputs.middleRows(row, k) = tr.states.topRows(k);
		out.outputs.middleRows(row, k) = tr.states.bottomRows(k);
		row += k;
	}
	return out;
}

OsgPairSet segment_osg(const TrajectorySet& ts)
{
	ts.validate();
	OsgPairSet out;
	Eigen::Index total = 0;
	for (const auto& tr : ts.trajectories)
		total += std::max<Eigen::Index>(tr.length() - 1, 0);
	out.inputs.resize(total, ts.width());
	out.outputs.resize(total, ts.width());
	out.lags.resize(total, 1);
	Eigen::Index row = 0;
	out.lag_min = std::numeric_limits<double>::infinity();
	out.lag_max = 0.0;
	for (std::size_t i = 0; i < ts.size(); ++i) {
		const auto& tr = ts.trajectories[i];
		for (Eigen::Index k = 0; k + 1 < tr.length(); ++k, ++row) {
			const double d = tr.times(k + 1) - tr.times(k);
			if (!(d > 0.0))
				throw DataError("trajectory " + std::to_string(i) + " has non-positive lag at row " +
				                std::to_string(k + 1));
			out.inputs.row(row) = tr.states.row(k);
			out.outputs.row(row) = tr.states.row(k + 1);
			out.lags(row, 0) = d;
			out.lag_min = std::min(out.lag_min, d);
			out.lag_max = std::max(out.lag_max, d);
		}
	}
	if (total == 0)
		out.lag_min = 0.0;
	return out;
}

BurstSet make_bursts(const TrajectorySet& ts, int memory, int multistep, int bursts_per_traj, std::uint64_t seed,
                     double rel_tol)
{
	if (memory < 0 || multistep < 0 || bursts_per_traj < 1)
		throw DomainError("burst sampling needs M >= 0, K >= 0 and at least one burst per trajectory");
	ts.validate();
	BurstSet out;
	out.memory = memory;
	out.multistep = multistep;
	out.width = static_cast<int>(ts.width());
	out.lag = fixed_lag_of(ts, rel_tol);
	const int len = out.window_length();
	out.windows.resize(static_cast<Eigen::Index>(ts.size()) * bursts_per_traj,
	                   static_cast<Eigen::Index>(len) * out.width);

	std::mt19937_64 rng(seed);
	Eigen::Index row = 0;
	for (std::size_t i = 0; i < ts.size(); ++i) {
		const auto& tr = ts.trajectories[i];
		const auto admissible = static_cast<int>(tr.length()) - len + 1;
		if (admissible < 1)
			throw DataError("trajectory " + std::to_string(i) + " has length " + std::to_string(tr.length()) +
			                ", bursts need at least " + std::to_string(len));
		std::vector<int> offsets;
		if (bursts_per_traj <= admissible) {
			std::vector<int> all(static_cast<std::size_t>(admissible));
			std::iota(all.begin(), all.end(), 0);
			for (int k = 0; k < bursts_per_traj; ++k) {
				std::uniform_int_distribution<int> pick(k, admissible - 1);
				std::swap(all[static_cast<std::size_t>(k)], all[static_cast<std::size_t>(pick(rng))]);
			}
			offsets.assign(all.begin(), all.begin() + bursts_per_traj);
		} else {
			std::uniform_int_distribution<int> pick(0, admissible - 1);
			for (int k = 0; k < bursts_per_traj; ++k)
				offsets.push_back(pick(rng));
		}
		for (int off : offsets) {
			for (int k = 0; k < len; ++k)
				out.windows.block(row, static_cast<Eigen::Index>(k) * out.width, 1, out.width) = tr.states.row(off + k);
			++row;
		}
	}
	return out;
}

BurstSet all_windows(const TrajectorySet& ts, int memory, int multistep, double rel_tol)
{
	if (memory < 0 || multistep < 0)
		throw DomainError("windows need M >= 0 and K >= 0");
	ts.validate();
	BurstSet out;
	out.memory = memory;
	out.multistep = multistep;
	out.width = static_cast<int>(ts.width());
	out.lag = fixed_lag_of(ts, rel_tol);
	const int len = out.window_length();
	Eigen::Index total = 0;
	for (const auto& tr : ts.trajectories)
		total += std::max<Eigen::Index>(tr.length() - len + 1, 0);
	out.windows.resize(total, static_cast<Eigen::Index>(len) * out.width);
	Eigen::Index row = 0;
	for (const auto& tr : ts.trajectories)
		for (Eigen::Index off = 0; off + len <= tr.length(); ++off, ++row)
			for (int k = 0; k < len; ++k)
				out.windows.block(row, static_cast<Eigen::Index>(k) * out.width, 1, out.width) = tr.states.row(off + k);
	return out;
}

TrajectorySet add_multiplicative_noise(const TrajectorySet& ts, double eta, std::uint64_t seed)
{
	if (eta < 0.0)
		throw DomainError("noise level must be non-negative");
	TrajectorySet out = ts;
	if (eta == 0.0)
		return out;
	std::mt19937_64 rng(seed);
	std::uniform_real_distribution<double> eps(-eta, eta);
	for (auto& tr : out.trajectories)
		for (Eigen::Index i = 0; i < tr.states.size(); ++i)
			tr.states.data()[i] *= 1.0 + eps(rng);
	return out;
}

std::pair<TrajectorySet, TrajectorySet> train_test_split(const TrajectorySet& ts, double test_fraction,
                                                         std::uint64_t seed)
{
	if (!(test_fraction >= 0.0 && test_fraction < 1.0))
		throw DomainError("test fraction must lie in [0, 1)");
	std::vector<std::size_t> order(ts.size());
	std::iota(order.begin(), order.end(), 0);
	std::mt19937_64 rng(seed);
	std::shuffle(order.begin(), order.end(), rng);
	const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(ts.size())));
	std::sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
	std::sort(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());
	TrajectorySet train, test;
	train.names = test.names = ts.names;
	for (std::size_t k = 0; k < order.size(); ++k)
		(k < n_test ? test : train).trajectories.push_back(ts.trajectories[order[k]]);
	return {std::move(train), std::move(test)};
}

// ---------------------------------------------------------------------------
// Files

std::string format_double(double v)
{
	char buf[40];
	std::snprintf(buf, sizeof buf, "%.17g", v);
	return buf;
}

namespace {

std::vector<std::string> split_csv(const std::string& line)
{
	std::vector<std::string> out;
	std::string cell;
	std::istringstream in(line);
	while (std::getline(in, cell, ','))
		out.push_back(cell);
	if (!line.empty() && line.back() == ',')
		out.emplace_back();
	return out;
}

double parse_number(const std::string& s, const fs::path& file, std::size_t line)
{
	try {
		std::size_t used = 0;
		const double v = std::stod(s, &used);
		if (used != s.size() && s.find_first_not_of(" \t\r", used) != std::string::npos)
			throw std::invalid_argument(s);
		return v;
	} catch (const std::exception&) {
		throw ParseError(file.string() + ":" + std::to_string(line) + ": cannot parse number '" + s + "'");
	}
}

std::string strip(std::string s)
{
	while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\t'))
		s.pop_back();
	std::size_t i = 0;
	while (i < s.size() && (s[i] == ' ' || s[i] == '\t'))
		++i;
	return s.substr(i);
}

struct CsvTable {
	std::vector<std::string> header;
	std::vector<std::vector<double>> rows;
};

CsvTable read_csv(const fs::path& path)
{
	std::ifstream in(path);
	if (!in)
		throw ParseError(path.string() + ": cannot open file");
	CsvTable table;
	std::string line;
	std::size_t lineno = 0;
	while (std::getline(in, line)) {
		++lineno;
		line = strip(line);
		if (line.empty())
			continue;
		auto cells = split_csv(line);
		if (table.header.empty()) {
			for (auto& c : cells)
				table.header.push_back(strip(c));
			continue;
		}
		if (cells.size() != table.header.size())
			throw ParseError(path.string() + ":" + std::to_string(lineno) + ": expected " +
			                 std::to_string(table.header.size()) + " columns, found " + std::to_string(cells.size()));
		std::vector<double> row;
		row.reserve(cells.size());
		for (const auto& c : cells)
			row.push_back(parse_number(strip(c), path, lineno));
		table.rows.push_back(std::move(row));
	}
	if (table.header.empty())
		throw ParseError(path.string() + ": missing header");
	return table;
}

std::vector<std::string> stem_names(const std::vector<std::string>& cols, std::size_t from, std::size_t count,
                                    const std::string& suffix)
{
	std::vector<std::string> out;
	for (std::size_t k = 0; k < count; ++k) {
		std::string n = cols[from + k];
		if (n.size() > suffix.size() && n.compare(n.size() - suffix.size(), suffix.size(), suffix) == 0)
			n.resize(n.size() - suffix.size());
		out.push_back(n);
	}
	return out;
}

} // namespace

Trajectory read_trajectory_csv(const fs::path& path, std::vector<std::string>* names)
{
	std::ifstream in(path);
	if (!in)
		throw ParseError(path.string() + ": cannot open file");
	Trajectory tr;
	std::string line;
	std::size_t lineno = 0;
	std::size_t width = 0;
	std::vector<std::vector<double>> rows;
	std::vector<std::size_t> line_of_row;
	while (std::getline(in, line)) {
		++lineno;
		line = strip(line);
		if (line.empty())
			continue;
		auto cells = split_csv(line);
		if (width == 0) {
			if (cells.size() < 2 || strip(cells[0]) != "t")
				throw ParseError(path.string() + ":" + std::to_string(lineno) +
				                 ": header must be 't,<name1>,...,<namem>'");
			width = cells.size();
			if (names != nullptr) {
				names->clear();
				for (std::size_t k = 1; k < cells.size(); ++k)
					names->push_back(strip(cells[k]));
			}
			continue;
		}
		if (cells.size() != width)
			throw ParseError(path.string() + ":" + std::to_string(lineno) + ": expected " + std::to_string(width) +
			                 " columns, found " + std::to_string(cells.size()));
		std::vector<double> row;
		for (const auto& c : cells)
			row.push_back(parse_number(strip(c), path, lineno));
		if (!rows.empty() && !(row[0] > rows.back()[0]))
			throw ParseError(path.string() + ":" + std::to_string(lineno) + ": time " + format_double(row[0]) +
			                 " does not increase");
		rows.push_back(std::move(row));
		line_of_row.push_back(lineno);
	}
	if (width == 0)
		throw ParseError(path.string() + ": missing header");
	tr.times.resize(static_cast<Eigen::Index>(rows.size()));
	tr.states.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(width - 1));
	for (std::size_t r = 0; r < rows.size(); ++r) {
		tr.times(static_cast<Eigen::Index>(r)) = rows[r][0];
		for (std::size_t c = 1; c < width; ++c)
			tr.states(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c - 1)) = rows[r][c];
	}
	return tr;
}

TrajectorySet load_trajectories(const fs::path& manifest)
{
	std::ifstream in(manifest);
	if (!in)
		throw ParseError(manifest.string() + ": cannot open manifest");
	const fs::path base = manifest.parent_path();
	TrajectorySet ts;
	std::string line;
	std::size_t lineno = 0;
	while (std::getline(in, line)) {
		++lineno;
		if (auto hash = line.find('#'); hash != std::string::npos)
			line.resize(hash);
		line = strip(line);
		if (line.empty())
			continue;
		const fs::path file = base / line;
		if (!fs::exists(file))
			throw ParseError(manifest.string() + ":" + std::to_string(lineno) + ": missing file " + file.string());

		std::ifstream probe(file);
		std::string first;
		std::getline(probe, first);
		if (first.rfind("dt,", 0) == 0) {
			const CsvTable table = read_csv(file);
			const std::size_t m = (table.header.size() - 1) / 2;
			if (table.header.size() != 2 * m + 1 || m == 0)
				throw ParseError(file.string() + ": triple header must be 'dt,<in...>,<out...>'");
			auto names = stem_names(table.header, 1, m, "_in");
			if (ts.names.empty())
				ts.names = names;
			for (std::size_t r = 0; r < table.rows.size(); ++r) {
				const auto& row = table.rows[r];
				if (!(row[0] > 0.0))
					throw ParseError(file.string() + ":" + std::to_string(r + 2) + ": lag must be positive");
				Trajectory tr;
				tr.times = Vector(2);
				tr.times << 0.0, row[0];
				tr.states.resize(2, static_cast<Eigen::Index>(m));
				for (std::size_t c = 0; c < m; ++c) {
					tr.states(0, static_cast<Eigen::Index>(c)) = row[1 + c];
					tr.states(1, static_cast<Eigen::Index>(c)) = row[1 + m + c];
				}
				ts.trajectories.push_back(std::move(tr));
			}
			continue;
		}
		std::vector<std::string> names;
		Trajectory tr = read_trajectory_csv(file, &names);
		if (ts.names.empty())
			ts.names = names;
		if (!ts.trajectories.empty() && tr.width() != ts.width())
			throw ParseError(file.string() + ": width " + std::to_string(tr.width()) + " differs from " +
			                 std::to_string(ts.width()) + " in earlier files");
		ts.trajectories.push_back(std::move(tr));
	}
	return ts;
}

void write_trajectory_csv(const fs::path& path, const Trajectory& traj, const std::vector<std::string>& names)
{
	std::ofstream out(path);
	if (!out)
		throw ParseError(path.string() + ": cannot write file");
	out << "t";
	for (Eigen::Index c = 0; c < traj.width(); ++c)
		out << ','
		    << (static_cast<std::size_t>(c) < names.size() ? names[static_cast<std::size_t>(c)]
		                                                  : "u" + std::to_string(c + 1));
	out << '\n';
	for (Eigen::Index r = 0; r < traj.length(); ++r) {
		out << format_double(traj.times(r));
		for (Eigen::Index c = 0; c < traj.width(); ++c)
			out << ',' << format_double(traj.states(r, c));
		out << '\n';
	}
}

void write_trajectory_set(const fs::path& dir, const std::string& stem, const TrajectorySet& ts,
                          const fs::path& manifest_name)
{
	fs::create_directories(dir);
	std::ofstream manifest(dir / manifest_name);
	if (!manifest)
		throw ParseError((dir / manifest_name).string() + ": cannot write manifest");
	manifest << "# " << ts.size() << " trajectories\n";
	for (std::size_t i = 0; i < ts.size(); ++i) {
		char name[64];
		std::snprintf(name, sizeof name, "%s_%05zu.csv", stem.c_str(), i);
		write_trajectory_csv(dir / name, ts.trajectories[i], ts.names);
		manifest << name << '\n';
	}
}

void write_triples_csv(const fs::path& path, const OsgPairSet& triples, const std::vector<std::string>& names)
{
	std::ofstream out(path);
	if (!out)
		throw ParseError(path.string() + ": cannot write file");
	const Eigen::Index m = triples.inputs.cols();
	auto name = [&](Eigen::Index c) {
		return static_cast<std::size_t>(c) < names.size() ? names[static_cast<std::size_t>(c)]
		                                                 : "u" + std::to_string(c + 1);
	};
	out << "dt";
	for (Eigen::Index c = 0; c < m; ++c)
		out << ',' << name(c) << "_in";
	for (Eigen::Index c = 0; c < m; ++c)
		out << ',' << name(c) << "_out";
	out << '\n';
	for (Eigen::Index r = 0; r < triples.size(); ++r) {
		out << format_double(triples.lags(r, 0));
		for (Eigen::Index c = 0; c < m; ++c)
			out << ',' << format_double(triples.inputs(r, c));
		for (Eigen::Index c = 0; c < m; ++c)
			out << ',' << format_double(triples.outputs(r, c));
		out << '\n';
	}
}

Matrix read_mesh_csv(const fs::path& path)
{
	const CsvTable table = read_csv(path);
	Matrix mesh(static_cast<Eigen::Index>(table.rows.size()), static_cast<Eigen::Index>(table.header.size()));
	for (std::size_t r = 0; r < table.rows.size(); ++r)
		for (std::size_t c = 0; c < table.header.size(); ++c)
			mesh(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = table.rows[r][c];
	return mesh;
}

void write_mesh_csv(const fs::path& path, const Matrix& mesh)
{
	std::ofstream out(path);
	if (!out)
		throw ParseError(path.string() + ": cannot write file");
	for (Eigen::Index c = 0; c < mesh.cols(); ++c)
		out << (c ? "," : "") << 'x' << (c + 1);
	out << '\n';
	for (Eigen::Index r = 0; r < mesh.rows(); ++r) {
		for (Eigen::Index c = 0; c < mesh.cols(); ++c)
			out << (c ? "," : "") << format_double(mesh(r, c));
		out << '\n';
	}
}

} // namespace fml
