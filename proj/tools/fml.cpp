#include "fml/cli.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv)
{
	CLI::App app{"Flow map learning: generate data, train, predict and evaluate"};
	app.require_subcommand(1);
	app.fallthrough();

	std::uint64_t seed = 0;
	std::string out;
	app.add_option("--seed", seed, "Random seed")->capture_default_str();
	app.add_option("--out", out, "Output directory");

	fml::GenerateOptions gen;
	auto* generate = app.add_subcommand("generate", "Simulate a benchmark system");
	generate->add_option("system", gen.system, "pendulum, lorenz, robertson or burgers")->required();
	generate->add_option("--count", gen.count, "Number of trajectories (robertson: triples)")->capture_default_str();
	generate->add_option("--length", gen.length, "Recorded steps per trajectory")->capture_default_str();
	generate->add_option("--dt", gen.dt, "Record lag")->capture_default_str();
	generate->add_option("--substeps", gen.substeps, "Integrator steps per record (RK4)")->capture_default_str();
	generate->add_option("--nodes", gen.nodes, "Interior grid nodes (burgers)")->capture_default_str();
	generate->add_option("--lag-lo", gen.lag_lo_exp, "log10 of the smallest lag (robertson)")->capture_default_str();
	generate->add_option("--lag-hi", gen.lag_hi_exp, "log10 of the largest lag (robertson)")->capture_default_str();
	generate->add_option("--tol", gen.tol, "Implicit integrator tolerance (robertson)")->capture_default_str();

	fml::TrainOptions tr;
	auto* train = app.add_subcommand("train", "Train a model from a config file");
	train->add_option("config", tr.config, "Config file")->required()->check(CLI::ExistingFile);

	fml::PredictOptions pr;
	auto* predict = app.add_subcommand("predict", "Roll a trained model forward");
	predict->add_option("model", pr.model, "Model file")->required()->check(CLI::ExistingFile);
	predict->add_option("--ic", pr.ic, "Initial state, comma separated");
	predict->add_option("--ic-file", pr.ic_file, "Trajectory CSV whose first rows seed the rollout");
	predict->add_option("--reference", pr.reference, "Reference trajectory CSV");
	predict->add_option("--steps", pr.steps, "Steps for fixed-lag models");
	predict->add_option("--schedule", pr.schedule, "fixed:<lag>:<n>, doubling:<start>:<cap>[:<t_end>] or list:<l1>,...");

	fml::EvaluateOptions ev;
	auto* evaluate = app.add_subcommand("evaluate", "Average errors over a test set");
	evaluate->add_option("model", ev.model, "Model file")->required()->check(CLI::ExistingFile);
	evaluate->add_option("test", ev.test_manifest, "Test manifest")->required()->check(CLI::ExistingFile);
	evaluate->add_option("--steps", ev.steps, "Rollout horizon");

	try {
		app.parse(argc, argv);
	} catch (const CLI::ParseError& e) {
		const int code = app.exit(e);
		return code == 0 ? 0 : fml::kExitConfig;
	}

	const bool seed_given = app.count("--seed") > 0;
	try {
		std::vector<std::filesystem::path> written;
		if (*generate) {
			gen.seed = seed;
			if (!out.empty())
				gen.out = out;
			written = fml::cmd_generate(gen);
		} else if (*train) {
			if (seed_given)
				tr.seed = seed;
			if (!out.empty())
				tr.out = out;
			written = fml::cmd_train(tr);
		} else if (*predict) {
			if (!out.empty())
				pr.out = out;
			written = fml::cmd_predict(pr);
		} else if (*evaluate) {
			if (!out.empty())
				ev.out = out;
			written = fml::cmd_evaluate(ev);
		}
		for (const auto& p : written)
			std::cout << p.string() << '\n';
	} catch (const std::exception& e) {
		std::cerr << "error: " << e.what() << '\n';
		return fml::exit_code_for(e);
	}
	return fml::kExitOk;
}
