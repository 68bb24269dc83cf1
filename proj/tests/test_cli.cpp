#include "fml/cli.hpp"
#include "fml/errors.hpp"
#include "fml/rollout.hpp"
#include "fml/simulate.hpp"

#include "support.hpp"

#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

using namespace fml;
namespace fs = std::filesystem;
using fml::testing::scratch_dir;

namespace {

std::string slurp(const fs::path& p)
{
	std::ifstream in(p, std::ios::binary);
	std::stringstream s;
	s << in.rdbuf();
	return s.str();
}

std::size_t line_count(const fs::path& p)
{
	std::ifstream in(p);
	std::size_t n = 0;
	for (std::string line; std::getline(in, line);)
		++n;
	return n;
}

std::vector<std::vector<double>> read_numeric_csv(const fs::path& p)
{
	std::ifstream in(p);
	std::string line;
	std::getline(in, line);
	std::vector<std::vector<double>> rows;
	while (std::getline(in, line)) {
		std::vector<double> row;
		std::istringstream cells(line);
		for (std::string c; std::getline(cells, c, ',');)
			row.push_back(std::stod(c));
		rows.push_back(row);
	}
	return rows;
}

int run_cli(const std::string& args)
{
	const std::string cmd = std::string(FML_EXECUTABLE) + " " + args + " >/dev/null 2>&1";
	const int status = std::system(cmd.c_str());
	return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

void write_text(const fs::path& p, const std::string& text)
{
	std::ofstream out(p);
	out << text;
}

// Trajectories of du/dt = -k u sampled exactly.
void write_decay_set(const fs::path& dir, double k, double lag, int length)
{
	TrajectorySet ts;
	ts.names = {"u1", "u2"};
	for (double a : {0.5, -1.5}) {
		Trajectory t;
		t.times.resize(length + 1);
		t.states.resize(length + 1, 2);
		for (int i = 0; i <= length; ++i) {
			t.times(i) = i * lag;
			t.states(i, 0) = a * std::exp(-k * i * lag);
			t.states(i, 1) = -0.25 * a * std::exp(-k * i * lag);
		}
		ts.trajectories.push_back(t);
	}
	write_trajectory_set(dir, "decay", ts);
}

std::string pendulum_config(const fs::path& data, int epochs)
{
	return "[data]\ntrain = " + (data / "manifest.txt").string() +
	       "\nmultistep = 2\nbursts = 4\nseed = 3\n"
	       "[network]\nkind = resnet\ndepth = 2\nwidth = 8\nactivation = gelu\n"
	       "[training]\nepochs = " +
	       std::to_string(epochs) + "\nbatch_size = 8\nlr = 1e-3\nseed = 3\n";
}

} // namespace

TEST_SUITE("cli")
{
	TEST_CASE("generate writes deterministic pendulum data")
	{
		const auto dir = scratch_dir("cli_generate");
		REQUIRE(run_cli("generate pendulum --count 10 --length 100 --dt 0.02 --seed 1 --out " + (dir / "a").string()) ==
		        0);
		REQUIRE(run_cli("generate pendulum --count 10 --length 100 --dt 0.02 --seed 1 --out " + (dir / "b").string()) ==
		        0);
		const TrajectorySet ts = load_trajectories(dir / "a" / "manifest.txt");
		CHECK(ts.size() == 10);
		int csvs = 0;
		for (const auto& e : fs::directory_iterator(dir / "a")) {
			if (e.path().extension() != ".csv")
				continue;
			++csvs;
			CHECK(line_count(e.path()) == 102);
			CHECK(slurp(e.path()) == slurp(dir / "b" / e.path().filename()));
		}
		CHECK(csvs == 10);

		auto energy = [](const RowVector& u) { return 0.5 * u(1) * u(1) + 9.80665 * (1 - std::cos(u(0))); };
		double worst = -INFINITY;
		for (const auto& t : ts.trajectories)
			for (Eigen::Index k = 1; k < t.length(); ++k)
				worst = std::max(worst, energy(t.states.row(k)) - energy(t.states.row(k - 1)));
		CHECK(worst <= 1e-8);

		CHECK(run_cli("generate heat --out " + (dir / "c").string()) != 0);
	}

	TEST_CASE("generate robertson and burgers")
	{
		const auto dir = scratch_dir("cli_generate_more");
		REQUIRE(run_cli("generate robertson --count 5 --tol 1e-8 --out " + (dir / "r").string()) == 0);
		const TrajectorySet r = load_trajectories(dir / "r" / "manifest.txt");
		CHECK(r.size() == 5);
		REQUIRE(run_cli("generate burgers --count 2 --length 4 --dt 0.05 --nodes 32 --out " + (dir / "b").string()) == 0);
		CHECK(read_mesh_csv(dir / "b" / "mesh.csv").rows() == 32);
		CHECK(load_trajectories(dir / "b" / "manifest.txt").width() == 32);
	}

	TEST_CASE("config parsing")
	{
		const Config c = Config::parse("# comment\n[data]\ntrain = d/m.txt\nmemory = 2\n[network]\nkind = gresnet\n"
		                               "[training]\nepochs = 7 ; trailing\n",
		                               "/base");
		CHECK(c.data.train == fs::path("/base/d/m.txt"));
		CHECK(c.data.memory == 2);
		CHECK(c.network.kind == ModelKind::gresnet);
		CHECK(c.training.epochs == 7);

		try {
			Config::parse("[data]\nmemory = 1\nwibble = 3\n", {}, "run.ini");
			FAIL("expected ConfigError");
		} catch (const ConfigError& e) {
			CHECK(std::string(e.what()).find("run.ini:3") != std::string::npos);
		}
		CHECK_THROWS_AS(Config::parse("[model]\n"), ConfigError);
		CHECK_THROWS_AS(Config::parse("epochs = 3\n"), ConfigError);
		CHECK_THROWS_AS(Config::parse("[training]\nepochs = many\n"), ConfigError);
		CHECK_THROWS_AS(Config::parse("[network]\nkind = transformer\n"), ConfigError);

		const Config again = Config::parse(c.echo());
		CHECK(again.echo() == c.echo());
	}

	TEST_CASE("train, echo and rerun")
	{
		const auto dir = scratch_dir("cli_train");
		GenerateOptions g;
		g.system = "pendulum";
		g.count = 8;
		g.length = 30;
		g.out = dir / "data";
		cmd_generate(g);
		write_text(dir / "run.ini", pendulum_config(dir / "data", 20));

		REQUIRE(run_cli("train " + (dir / "run.ini").string() + " --out " + (dir / "one").string()) == 0);
		for (const char* f : {"model.due", "loss.csv", "config_echo.ini", "run_manifest.txt"})
			CHECK(fs::exists(dir / "one" / f));
		CHECK(line_count(dir / "one" / "loss.csv") == 21);
		const auto loss = read_numeric_csv(dir / "one" / "loss.csv");
		CHECK(loss.back()[1] < loss.front()[1]);

		std::ifstream manifest(dir / "one" / "run_manifest.txt");
		for (std::string line; std::getline(manifest, line);)
			if (line.rfind("artifact = ", 0) == 0)
				CHECK(fs::exists(line.substr(11)));

		TrainOptions again;
		again.config = dir / "one" / "config_echo.ini";
		again.out = dir / "two";
		cmd_train(again);
		CHECK(slurp(dir / "one" / "loss.csv") == slurp(dir / "two" / "loss.csv"));
		CHECK(slurp(dir / "one" / "model.due") == slurp(dir / "two" / "model.due"));
	}

	TEST_CASE("shipped recipes")
	{
		const fs::path recipes = fs::path(FML_SOURCE_DIR) / "recipes";
		int count = 0;
		for (const auto& e : fs::directory_iterator(recipes)) {
			CAPTURE(e.path().string());
			CHECK_NOTHROW(Config::load(e.path()));
			++count;
		}
		CHECK(count >= 7);

		// pendulum recipe end to end on freshly generated data
		const auto dir = scratch_dir("cli_recipe");
		GenerateOptions g;
		g.system = "pendulum";
		g.count = 100;
		g.length = 100;
		g.out = dir / "data" / "pendulum";
		cmd_generate(g);
		fs::create_directories(dir / "recipes");
		fs::copy_file(recipes / "pendulum.ini", dir / "recipes" / "pendulum.ini");
		REQUIRE(run_cli("train " + (dir / "recipes" / "pendulum.ini").string() + " --out " + (dir / "run").string()) ==
		        0);
		const Config cfg = Config::load(dir / "recipes" / "pendulum.ini");
		const auto loss = read_numeric_csv(dir / "run" / "loss.csv");
		CHECK(loss.size() == static_cast<std::size_t>(cfg.training.epochs));
		CHECK(loss.back()[1] < loss.front()[1]);
	}

	TEST_CASE("exit codes")
	{
		const auto dir = scratch_dir("cli_exit");
		write_text(dir / "bad.ini", "[data]\nnonsense = 1\n");
		CHECK(run_cli("train " + (dir / "bad.ini").string() + " --out " + (dir / "o").string()) == 2);
		write_text(dir / "missing.ini", "[data]\ntrain = nowhere/manifest.txt\n");
		CHECK(run_cli("train " + (dir / "missing.ini").string() + " --out " + (dir / "o").string()) == 3);
		CHECK(run_cli("--no-such-flag") == 2);

		ModelSpec spec;
		spec.state_width = 1;
		ModelBundle m = make_model(spec, 0);
		m.lag = 0.1;
		m.params.at("net.b" + std::to_string(m.core.widths.size() - 1)).value.setConstant(1e308);
		save_model(m, dir / "blowup.due");
		CHECK(run_cli("predict " + (dir / "blowup.due").string() + " --ic 1e308 --steps 3 --out " +
		              (dir / "p").string()) == 4);
		CHECK(exit_code_for(StiffnessError("x")) == 4);
		CHECK(exit_code_for(DataError("x")) == 3);
		CHECK(exit_code_for(std::runtime_error("x")) == 1);
	}

	TEST_CASE("a failed training run leaves no model file")
	{
		const auto dir = scratch_dir("cli_fail");
		GenerateOptions g;
		g.system = "pendulum";
		g.count = 4;
		g.length = 20;
		g.out = dir / "data";
		cmd_generate(g);
		write_text(dir / "run.ini", pendulum_config(dir / "data", 20) + "lr = 1e150\nclip_norm = 0\n");
		CHECK(run_cli("train " + (dir / "run.ini").string() + " --out " + (dir / "o").string()) == 4);
		CHECK_FALSE(fs::exists(dir / "o" / "model.due"));
	}

	TEST_CASE("predict")
	{
		const auto dir = scratch_dir("cli_predict");
		ModelSpec spec;
		spec.state_width = 2;
		ModelBundle id = make_model(spec, 0);
		id.lag = 0.1;
		for (auto& e : id.params)
			e.value.setZero();
		save_model(id, dir / "id.due");
		PredictOptions p;
		p.model = dir / "id.due";
		p.ic = "0.25,-1.5";
		p.steps = 5;
		p.out = dir / "p1";
		cmd_predict(p);
		const auto rows = read_numeric_csv(dir / "p1" / "prediction.csv");
		REQUIRE(rows.size() == 6);
		for (const auto& r : rows) {
			CHECK(r[1] == 0.25);
			CHECK(r[2] == -1.5);
		}

		spec.kind = ModelKind::osgnet;
		ModelBundle osg = make_model(spec, 1);
		osg.lag_min = 5e-5;
		osg.lag_max = 300;
		for (auto& e : osg.params)
			e.value.setZero();
		save_model(osg, dir / "osg.due");
		CHECK(run_cli("predict " + (dir / "osg.due").string() + " --ic 1,0 --schedule doubling:5e-5:300 --out " +
		              (dir / "p2").string()) == 0);
		const auto timeline = read_numeric_csv(dir / "p2" / "prediction.csv");
		const std::vector<double> lags = StepSchedule::doubling(5e-5, 300, 1e5).lags();
		REQUIRE(timeline.size() == lags.size() + 1);
		double t = 0.0;
		for (std::size_t k = 0; k < lags.size(); ++k) {
			t += lags[k];
			CHECK(timeline[k + 1][0] == t);
		}

		spec.kind = ModelKind::resnet;
		spec.state_width = 1;
		spec.memory = 10;
		ModelBundle mem = make_model(spec, 2);
		mem.lag = 0.02;
		save_model(mem, dir / "mem.due");
		CHECK(run_cli("predict " + (dir / "mem.due").string() + " --ic 0.3 --steps 4 --out " + (dir / "p3").string()) ==
		      3);
		Trajectory seeds;
		seeds.times = Vector::LinSpaced(11, 0.0, 0.2);
		seeds.states = Matrix::Constant(11, 1, 0.3);
		write_trajectory_csv(dir / "seeds.csv", seeds, {"u1"});
		CHECK(run_cli("predict " + (dir / "mem.due").string() + " --ic-file " + (dir / "seeds.csv").string() +
		              " --steps 4 --out " + (dir / "p4").string()) == 0);
		CHECK(line_count(dir / "p4" / "prediction.csv") == 16);
	}

	TEST_CASE("evaluate")
	{
		const auto dir = scratch_dir("cli_evaluate");
		const double k = 0.7, lag = 0.1;
		write_decay_set(dir / "test", k, lag, 12);

		// exact flow as a frozen prior with a zero correction
		ModelSpec spec;
		spec.kind = ModelKind::gresnet;
		spec.state_width = 2;
		ModelBundle exact = make_model(spec, 0);
		exact.lag = lag;
		exact.prior = AffinePrior{std::exp(-k * lag) * Matrix::Identity(2, 2), RowVector::Zero(2)};
		for (auto& e : exact.params)
			e.value.setZero();
		save_model(exact, dir / "exact.due");
		EvaluateOptions e;
		e.model = dir / "exact.due";
		e.test_manifest = dir / "test" / "manifest.txt";
		e.steps = 10;
		e.out = dir / "e1";
		cmd_evaluate(e);
		const auto rows = read_numeric_csv(dir / "e1" / "metrics.csv");
		CHECK(rows.size() == 11);
		for (const auto& r : rows)
			for (std::size_t c = 1; c < r.size(); ++c)
				CHECK(r[c] < 1e-10);

		// identity model: error of each trajectory is |u0| (1 - e^{-k t})
		spec.kind = ModelKind::resnet;
		ModelBundle id = make_model(spec, 0);
		id.lag = lag;
		for (auto& p : id.params)
			p.value.setZero();
		save_model(id, dir / "id.due");
		e.model = dir / "id.due";
		e.steps = -1;
		e.out = dir / "e2";
		cmd_evaluate(e);
		const auto idrows = read_numeric_csv(dir / "e2" / "metrics.csv");
		CHECK(idrows.size() == 13);
		const double n1 = std::hypot(0.5, 0.125), n2 = std::hypot(1.5, 0.375);
		for (std::size_t i = 0; i < idrows.size(); ++i) {
			const double decay = 1.0 - std::exp(-k * static_cast<double>(i) * lag);
			CHECK(idrows[i][1] == doctest::Approx(0.5 * (n1 + n2) * decay).epsilon(1e-12));
		}

		id.lag = 0.2;
		save_model(id, dir / "wrong_lag.due");
		e.model = dir / "wrong_lag.due";
		CHECK_THROWS_AS(cmd_evaluate(e), DataError);
	}
}
