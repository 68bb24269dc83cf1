#include "fml/cli.hpp"

#include "fml/errors.hpp"
#include "fml/modal.hpp"
#include "fml/rollout.hpp"
#include "fml/simulate.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <sstream>

namespace fml {

namespace fs = std::filesystem;

namespace {

constexpr const char* kToolVersion = "0.1.0";

std::string trim(const std::string& s)
{
	const auto a = s.find_first_not_of(" \t\r");
	if (a == std::string::npos)
		return {};
	const auto b = s.find_last_not_of(" \t\r");
	return s.substr(a, b - a + 1);
}

long long to_integer(const std::string& v)
{
	std::size_t used = 0;
	const long long x = std::stoll(v, &used);
	if (used != v.size())
		throw std::invalid_argument(v);
	return x;
}

int to_int(const std::string& v)
{
	return static_cast<int>(to_integer(v));
}

std::uint64_t to_u64(const std::string& v)
{
	std::size_t used = 0;
	if (!v.empty() && v[0] == '-')
		throw std::invalid_argument(v);
	const unsigned long long x = std::stoull(v, &used);
	if (used != v.size())
		throw std::invalid_argument(v);
	return x;
}

double to_double(const std::string& v)
{
	std::size_t used = 0;
	const double x = std::stod(v, &used);
	if (used != v.size())
		throw std::invalid_argument(v);
	return x;
}

bool to_bool(const std::string& v)
{
	if (v == "true" || v == "1" || v == "yes")
		return true;
	if (v == "false" || v == "0" || v == "no")
		return false;
	throw std::invalid_argument(v);
}

std::vector<int> to_int_list(const std::string& v)
{
	std::vector<int> out;
	std::istringstream in(v);
	for (std::string item; std::getline(in, item, ',');) {
		item = trim(item);
		if (!item.empty())
			out.push_back(to_int(item));
	}
	return out;
}

fs::path resolve(const fs::path& base, const std::string& v)
{
	if (v.empty())
		return {};
	const fs::path p(v);
	return p.is_absolute() || base.empty() ? p : base / p;
}

std::string join_ints(const std::vector<int>& v)
{
	std::string out;
	for (std::size_t i = 0; i < v.size(); ++i)
		out += (i ? "," : "") + std::to_string(v[i]);
	return out;
}

std::string timestamp()
{
	const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
	std::tm tm{};
	gmtime_r(&now, &tm);
	std::ostringstream out;
	out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
	return out.str();
}

void write_run_manifest(const fs::path& dir, const std::string& command, std::uint64_t seed,
                        const std::vector<fs::path>& artifacts)
{
	std::ofstream out(dir / "run_manifest.txt");
	if (!out)
		throw ParseError((dir / "run_manifest.txt").string() + ": cannot write");
	out << "command = " << command << '\n';
	out << "tool_version = " << kToolVersion << '\n';
	out << "created = " << timestamp() << '\n';
	out << "seed = " << seed << '\n';
	for (const auto& a : artifacts)
		out << "artifact = " << a.string() << '\n';
}

} // namespace

// ---------------------------------------------------------------------------
// Config

Config Config::parse(const std::string& text, const fs::path& base_dir, const std::string& origin)
{
	Config c;
	using Setter = std::function<void(const std::string&)>;
	std::map<std::string, std::map<std::string, Setter>> keys;
	auto& d = keys["data"];
	d["train"] = [&](const std::string& v) { c.data.train = resolve(base_dir, v); };
	d["test"] = [&](const std::string& v) { c.data.test = resolve(base_dir, v); };
	d["mesh"] = [&](const std::string& v) { c.data.mesh = resolve(base_dir, v); };
	d["memory"] = [&](const std::string& v) { c.data.memory = to_int(v); };
	d["multistep"] = [&](const std::string& v) { c.data.multistep = to_int(v); };
	d["bursts"] = [&](const std::string& v) { c.data.bursts = to_int(v); };
	d["noise"] = [&](const std::string& v) { c.data.noise = to_double(v); };
	d["components"] = [&](const std::string& v) { c.data.components = to_int_list(v); };
	d["modes"] = [&](const std::string& v) { c.data.modes = to_int(v); };
	d["seed"] = [&](const std::string& v) { c.data.seed = to_u64(v); };
	auto& n = keys["network"];
	n["kind"] = [&](const std::string& v) { c.network.kind = parse_model_kind(v); };
	n["depth"] = [&](const std::string& v) { c.network.depth = to_int(v); };
	n["width"] = [&](const std::string& v) { c.network.width = to_int(v); };
	n["activation"] = [&](const std::string& v) { c.network.activation = parse_activation(v); };
	n["latent_nodes"] = [&](const std::string& v) { c.network.latent_nodes = to_int(v); };
	n["channels"] = [&](const std::string& v) { c.network.channels = to_int(v); };
	auto& t = keys["training"];
	t["epochs"] = [&](const std::string& v) { c.training.epochs = to_int(v); };
	t["batch_size"] = [&](const std::string& v) { c.training.batch_size = to_int(v); };
	t["lr"] = [&](const std::string& v) { c.training.lr = to_double(v); };
	t["lr_min"] = [&](const std::string& v) { c.training.lr_min = to_double(v); };
	t["gdsg_lambda"] = [&](const std::string& v) { c.training.gdsg_lambda = to_double(v); };
	t["gdsg_pairs"] = [&](const std::string& v) { c.training.gdsg_pairs = to_int(v); };
	t["seed"] = [&](const std::string& v) { c.training.seed = to_u64(v); };
	t["clip_norm"] = [&](const std::string& v) { c.training.clip_norm = to_double(v); };
	t["record_wall_time"] = [&](const std::string& v) { c.training.record_wall_time = to_bool(v); };

	std::istringstream in(text);
	std::string line, section;
	std::size_t lineno = 0;
	auto fail = [&](const std::string& msg) {
		throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + msg);
	};
	while (std::getline(in, line)) {
		++lineno;
		if (auto h = line.find_first_of("#;"); h != std::string::npos)
			line.resize(h);
		line = trim(line);
		if (line.empty())
			continue;
		if (line.front() == '[') {
			if (line.back() != ']')
				fail("malformed section header");
			section = trim(line.substr(1, line.size() - 2));
			if (!keys.count(section))
				fail("unknown section [" + section + "] (expected [data], [network] or [training])");
			continue;
		}
		const auto eq = line.find('=');
		if (eq == std::string::npos)
			fail("expected 'key = value'");
		if (section.empty())
			fail("setting outside of a section");
		const std::string key = trim(line.substr(0, eq));
		const std::string value = trim(line.substr(eq + 1));
		const auto& table = keys.at(section);
		auto it = table.find(key);
		if (it == table.end())
			fail("unknown key '" + key + "' in [" + section + "]");
		try {
			it->second(value);
		} catch (const ConfigError& e) {
			fail(e.what());
		} catch (const Error& e) {
			fail(e.what());
		} catch (const std::exception&) {
			fail("invalid value '" + value + "' for " + key);
		}
	}
	c.training.multistep = c.data.multistep;
	try {
		c.training.validate();
	} catch (const ConfigError& e) {
		throw ConfigError(origin + ": " + e.what());
	}
	if (c.data.memory < 0 || c.data.multistep < 0 || c.data.bursts < 0 || c.data.modes < 0 || c.data.noise < 0.0)
		throw ConfigError(origin + ": memory, multistep, bursts, modes and noise must be non-negative");
	if (c.network.depth < 1 || c.network.width < 1 || c.network.channels < 1)
		throw ConfigError(origin + ": network depth, width and channels must be positive");
	return c;
}

Config Config::load(const fs::path& path)
{
	std::ifstream in(path);
	if (!in)
		throw ConfigError(path.string() + ": cannot open config");
	std::stringstream text;
	text << in.rdbuf();
	return parse(text.str(), fs::absolute(path).parent_path(), path.string());
}

std::string Config::echo() const
{
	auto abs = [](const fs::path& p) { return p.empty() ? std::string() : fs::absolute(p).lexically_normal().string(); };
	std::ostringstream out;
	out << "[data]\n";
	out << "train = " << abs(data.train) << '\n';
	out << "test = " << abs(data.test) << '\n';
	out << "mesh = " << abs(data.mesh) << '\n';
	out << "memory = " << data.memory << '\n';
	out << "multistep = " << data.multistep << '\n';
	out << "bursts = " << data.bursts << '\n';
	out << "noise = " << format_double(data.noise) << '\n';
	out << "components = " << join_ints(data.components) << '\n';
	out << "modes = " << data.modes << '\n';
	out << "seed = " << data.seed << '\n';
	out << "\n[network]\n";
	out << "kind = " << to_string(network.kind) << '\n';
	out << "depth = " << network.depth << '\n';
	out << "width = " << network.width << '\n';
	out << "activation = " << to_string(network.activation) << '\n';
	out << "latent_nodes = " << network.latent_nodes << '\n';
	out << "channels = " << network.channels << '\n';
	out << "\n[training]\n";
	out << "epochs = " << training.epochs << '\n';
	out << "batch_size = " << training.batch_size << '\n';
	out << "lr = " << format_double(training.lr) << '\n';
	out << "lr_min = " << format_double(training.lr_min) << '\n';
	out << "# cosine annealing, advanced once per epoch\n";
	out << "gdsg_lambda = " << format_double(training.gdsg_lambda) << '\n';
	out << "gdsg_pairs = " << training.gdsg_pairs << '\n';
	out << "seed = " << training.seed << '\n';
	out << "clip_norm = " << format_double(training.clip_norm) << '\n';
	out << "record_wall_time = " << (training.record_wall_time ? "true" : "false") << '\n';
	return out.str();
}

int exit_code_for(const std::exception& e)
{
	if (dynamic_cast<const ConfigError*>(&e))
		return kExitConfig;
	if (dynamic_cast<const NumericError*>(&e))
		return kExitDivergence;
	if (dynamic_cast<const DataError*>(&e) || dynamic_cast<const ParseError*>(&e) ||
	    dynamic_cast<const DimensionError*>(&e) || dynamic_cast<const ContractError*>(&e) ||
	    dynamic_cast<const DomainError*>(&e) || dynamic_cast<const fs::filesystem_error*>(&e))
		return kExitData;
	return kExitFailure;
}

// ---------------------------------------------------------------------------
// Commands

std::vector<fs::path> cmd_generate(const GenerateOptions& opts)
{
	SystemKind kind;
	try {
		kind = parse_system(opts.system);
	} catch (const DomainError& e) {
		throw ConfigError(e.what());
	}
	if (opts.count < 1 || opts.length < 0 || !(opts.dt > 0.0))
		throw ConfigError("generate needs count >= 1, length >= 0 and dt > 0");
	fs::create_directories(opts.out);
	std::vector<fs::path> written;
	if (kind == SystemKind::robertson) {
		ImplicitOptions io;
		io.tol = opts.tol;
		const OsgPairSet triples = generate_robertson_triples(opts.count, opts.lag_lo_exp, opts.lag_hi_exp, opts.seed, io);
		write_triples_csv(opts.out / "triples.csv", triples, component_names(kind, 3));
		std::ofstream manifest(opts.out / "manifest.txt");
		manifest << "# " << opts.count << " (u0, dt, u_out) triples\ntriples.csv\n";
		written = {opts.out / "triples.csv", opts.out / "manifest.txt"};
	} else {
		BurgersGrid grid;
		grid.n = opts.nodes;
		const TrajectorySet ts = generate_trajectories(kind, opts.count, opts.length, opts.dt, opts.seed,
		                                               opts.substeps, grid);
		write_trajectory_set(opts.out, opts.system, ts);
		for (std::size_t i = 0; i < ts.size(); ++i) {
			char name[64];
			std::snprintf(name, sizeof name, "%s_%05zu.csv", opts.system.c_str(), i);
			written.push_back(opts.out / name);
		}
		written.push_back(opts.out / "manifest.txt");
		if (kind == SystemKind::burgers) {
			write_mesh_csv(opts.out / "mesh.csv", grid.nodes());
			written.push_back(opts.out / "mesh.csv");
		}
	}
	write_run_manifest(opts.out, "generate " + opts.system, opts.seed, written);
	return written;
}

PreparedRun prepare_run(const Config& cfg)
{
	if (cfg.data.train.empty())
		throw ConfigError("[data] train manifest is required");
	TrajectorySet ts = load_trajectories(cfg.data.train);
	if (ts.empty())
		throw DataError(cfg.data.train.string() + ": no trajectories");
	if (!cfg.data.components.empty())
		ts = ts.select_components(cfg.data.components);
	if (cfg.data.noise > 0.0)
		ts = add_multiplicative_noise(ts, cfg.data.noise, cfg.data.seed);

	PreparedRun run;
	if (cfg.data.modes > 0) {
		if (cfg.data.mesh.empty())
			throw ConfigError("modal learning needs [data] mesh");
		const Matrix mesh = read_mesh_csv(cfg.data.mesh);
		const Basis basis = Basis::sine(mesh, cfg.data.modes);
		ts = project_trajectory_set(basis, ts, cfg.network.channels);
		run.modal_mesh = mesh;
	}

	ModelSpec& spec = run.spec;
	spec.kind = cfg.network.kind;
	spec.state_width = static_cast<int>(ts.width());
	spec.memory = cfg.data.memory;
	spec.depth = cfg.network.depth;
	spec.width = cfg.network.width;
	spec.activation = cfg.network.activation;
	spec.channels = cfg.network.channels;
	spec.latent_nodes = cfg.network.latent_nodes;
	if (spec.kind == ModelKind::pit_resnet) {
		if (cfg.data.mesh.empty())
			throw ConfigError("PiT models need [data] mesh");
		if (cfg.data.modes > 0)
			throw ConfigError("PiT models learn nodal values; set modes = 0");
		spec.mesh = read_mesh_csv(cfg.data.mesh);
	}

	if (is_varied_lag(spec.kind)) {
		if (cfg.data.memory != 0 || cfg.data.multistep != 0)
			throw ConfigError("varied-lag models take neither memory nor multistep terms");
		run.data = segment_osg(ts);
	} else if (cfg.data.bursts > 0) {
		run.data = make_bursts(ts, cfg.data.memory, cfg.data.multistep, cfg.data.bursts, cfg.data.seed);
	} else if (cfg.data.memory == 0 && cfg.data.multistep == 0) {
		run.data = segment_fixed(ts);
	} else {
		run.data = all_windows(ts, cfg.data.memory, cfg.data.multistep);
	}
	return run;
}

std::vector<fs::path> cmd_train(const TrainOptions& opts)
{
	Config cfg = Config::load(opts.config);
	if (opts.seed) {
		cfg.training.seed = *opts.seed;
		cfg.data.seed = *opts.seed;
	}
	const PreparedRun run = prepare_run(cfg);
	TrainResult result = train(run.spec, run.data, cfg.training);
	if (run.modal_mesh) {
		result.model.modes = cfg.data.modes;
		result.model.modal_mesh = *run.modal_mesh;
	}

	fs::create_directories(opts.out);
	const fs::path model = opts.out / "model.due";
	const fs::path loss = opts.out / "loss.csv";
	const fs::path echo = opts.out / "config_echo.ini";
	save_model(result.model, model);
	result.record.write_csv(loss);
	{
		std::ofstream out(echo);
		out << cfg.echo();
	}
	const std::vector<fs::path> written{model, loss, echo};
	write_run_manifest(opts.out, "train " + opts.config.string(), cfg.training.seed, written);
	return written;
}

namespace {

Matrix parse_state(const std::string& text)
{
	std::vector<double> v;
	std::istringstream in(text);
	for (std::string item; std::getline(in, item, ',');) {
		try {
			v.push_back(to_double(trim(item)));
		} catch (const std::exception&) {
			throw ConfigError("cannot parse initial state '" + text + "'");
		}
	}
	Matrix u(1, static_cast<Eigen::Index>(v.size()));
	for (std::size_t i = 0; i < v.size(); ++i)
		u(0, static_cast<Eigen::Index>(i)) = v[i];
	return u;
}

Basis model_basis(const ModelBundle& model)
{
	return Basis::sine(model.modal_mesh, model.modes);
}

int model_channels(const ModelBundle& model, const Basis& basis)
{
	return model.state_width / basis.modes();
}

} // namespace

std::vector<fs::path> cmd_predict(const PredictOptions& opts)
{
	const ModelBundle model = load_model(opts.model);
	Matrix seeds;
	std::vector<std::string> names;
	if (!opts.ic_file.empty()) {
		const Trajectory tr = read_trajectory_csv(opts.ic_file, &names);
		const Eigen::Index want = model.varied_lag() ? 1 : model.memory + 1;
		if (tr.length() < want)
			throw ContractError("model with M = " + std::to_string(model.memory) + " needs " + std::to_string(want) +
			                    " seed rows, " + opts.ic_file.string() + " has " + std::to_string(tr.length()));
		seeds = tr.states.topRows(want);
	} else if (!opts.ic.empty()) {
		seeds = parse_state(opts.ic);
	} else {
		throw ConfigError("predict needs --ic or --ic-file");
	}

	PredictionResult result;
	if (model.varied_lag()) {
		if (opts.schedule.empty())
			throw ConfigError(to_string(model.kind) + " models need --schedule");
		result = predict_varied(model, seeds.row(0), StepSchedule::parse(opts.schedule));
	} else {
		if (opts.steps < 0)
			throw ConfigError("fixed-lag models need --steps");
		if (model.modes > 0) {
			const Basis basis = model_basis(model);
			result = rollout_modal(model, basis, seeds.row(0), opts.steps, model_channels(model, basis));
		} else {
			result = predict_memory(model, seeds, opts.steps);
		}
	}
	result.names = names;

	if (!opts.reference.empty()) {
		const Trajectory ref = read_trajectory_csv(opts.reference);
		if (ref.width() != result.states.cols() || ref.length() < result.states.rows())
			throw DimensionError("reference " + opts.reference.string() + " has " + std::to_string(ref.length()) +
			                     " rows of width " + std::to_string(ref.width()) + ", prediction needs " +
			                     std::to_string(result.states.rows()) + " of width " +
			                     std::to_string(result.states.cols()));
		result.reference = ref.states.topRows(result.states.rows());
	}

	fs::create_directories(opts.out);
	const fs::path csv = opts.out / "prediction.csv";
	result.write_csv(csv);
	write_run_manifest(opts.out, "predict " + opts.model.string(), model.seed, {csv});
	return {csv};
}

std::vector<fs::path> cmd_evaluate(const EvaluateOptions& opts)
{
	const ModelBundle model = load_model(opts.model);
	const TrajectorySet test = load_trajectories(opts.test_manifest);
	if (test.empty())
		throw DataError(opts.test_manifest.string() + ": no test trajectories");
	const int seeds = model.varied_lag() ? 1 : model.memory + 1;

	Eigen::Index shortest = test.trajectories.front().length();
	for (const auto& tr : test.trajectories)
		shortest = std::min(shortest, tr.length());
	const Eigen::Index max_steps = shortest - seeds;
	if (max_steps < 0)
		throw DataError("test trajectories are shorter than the " + std::to_string(seeds) + " seed states");
	const Eigen::Index steps = opts.steps < 0 ? max_steps : opts.steps;
	if (steps > max_steps)
		throw DataError("requested " + std::to_string(steps) + " steps but test trajectories allow " +
		                std::to_string(max_steps));
	const Eigen::Index rows = seeds + steps;

	std::optional<Basis> basis;
	if (model.modes > 0)
		basis = model_basis(model);

	std::vector<StepMetrics> runs;
	Vector times;
	for (std::size_t i = 0; i < test.size(); ++i) {
		const Trajectory& tr = test.trajectories[i];
		PredictionResult pred;
		if (model.varied_lag()) {
			std::vector<double> lags;
			for (Eigen::Index k = 1; k < rows; ++k)
				lags.push_back(tr.times(k) - tr.times(k - 1));
			std::vector<std::string> warnings;
			pred = predict_varied(model, tr.states.row(0), StepSchedule::explicit_list(lags), &warnings);
		} else {
			for (Eigen::Index k = 1; k < rows; ++k) {
				const double d = tr.times(k) - tr.times(k - 1);
				if (std::abs(d - model.lag) > 1e-6 * std::abs(model.lag))
					throw DataError("test trajectory " + std::to_string(i) + " has lag " + format_double(d) +
					                ", model was trained with " + format_double(model.lag));
			}
			if (basis)
				pred = rollout_modal(model, *basis, tr.states.row(0), static_cast<int>(steps),
				                     model_channels(model, *basis));
			else
				pred = predict_memory(model, tr.states.topRows(seeds), static_cast<int>(steps));
		}
		runs.push_back(metrics(pred.states, tr.states.topRows(rows)));
		if (i == 0)
			times = (tr.times.head(rows).array() - tr.times(0)).matrix();
	}
	const StepMetrics mean = aggregate(runs);

	fs::create_directories(opts.out);
	const fs::path csv = opts.out / "metrics.csv";
	write_metrics_csv(csv, times, mean);
	write_run_manifest(opts.out, "evaluate " + opts.model.string(), model.seed, {csv});
	return {csv};
}

} // namespace fml
