#pragma once

// Config files and the subcommands behind the `fml` executable.

#include "fml/model.hpp"
#include "fml/training.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace fml {

/// Resolved run configuration. Files use `[data]`, `[network]` and
/// `[training]` sections of `key = value` lines; `#` and `;` start comments.
struct Config {
	struct Data {
		std::filesystem::path train;   ///< manifest
		std::filesystem::path test;    ///< optional manifest
		std::filesystem::path mesh;    ///< node coordinates (modal and PiT)
		int memory = 0;
		int multistep = 0;
		int bursts = 0; ///< per trajectory; 0 takes every window
		double noise = 0.0;
		std::vector<int> components; ///< observed columns; empty keeps all
		int modes = 0;                ///< > 0 learns sine-mode coefficients
		std::uint64_t seed = 0;
	} data;

	struct Network {
		ModelKind kind = ModelKind::resnet;
		int depth = 3;
		int width = 10;
		Activation activation = Activation::gelu;
		int latent_nodes = 0;
		int channels = 1;
	} network;

	TrainConfig training;

	/// Throws ConfigError with the offending line.
	static Config parse(const std::string& text, const std::filesystem::path& base_dir = {},
	                    const std::string& origin = "config");
	static Config load(const std::filesystem::path& path);
	/// Every setting, paths absolute; parsing the echo reproduces the config.
	std::string echo() const;
};

/// Process exit codes.
enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitConfig = 2, kExitData = 3, kExitDivergence = 4 };

/// Maps an exception to its exit code.
int exit_code_for(const std::exception& e);

struct GenerateOptions {
	std::string system;
	int count = 10;
	int length = 100;
	double dt = 0.02;
	int substeps = 1;
	int nodes = 128;
	double lag_lo_exp = -4.5; ///< robertson triples
	double lag_hi_exp = 2.5;
	double tol = 1e-10;
	std::uint64_t seed = 0;
	std::filesystem::path out = "data";
};

struct TrainOptions {
	std::filesystem::path config;
	std::optional<std::uint64_t> seed;
	std::filesystem::path out = "run";
};

struct PredictOptions {
	std::filesystem::path model;
	std::string ic;                    ///< comma-separated state
	std::filesystem::path ic_file;     ///< trajectory CSV; first M+1 rows seed the rollout
	std::filesystem::path reference;   ///< trajectory CSV compared row by row
	int steps = -1;
	std::string schedule;
	std::filesystem::path out = "predict";
};

struct EvaluateOptions {
	std::filesystem::path model;
	std::filesystem::path test_manifest;
	int steps = -1; ///< -1: as long as the shortest test trajectory allows
	std::filesystem::path out = "evaluate";
};

/// Each returns the list of written files (also recorded in run_manifest.txt).
std::vector<std::filesystem::path> cmd_generate(const GenerateOptions& opts);
std::vector<std::filesystem::path> cmd_train(const TrainOptions& opts);
std::vector<std::filesystem::path> cmd_predict(const PredictOptions& opts);
std::vector<std::filesystem::path> cmd_evaluate(const EvaluateOptions& opts);

/// Training data and model spec derived from a config (shared by cmd_train and tests).
struct PreparedRun {
	ModelSpec spec;
	TrainingData data;
	std::optional<Matrix> modal_mesh;
};
PreparedRun prepare_run(const Config& cfg);

} // namespace fml
