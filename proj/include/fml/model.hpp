#pragma once

// A trained model together with everything needed to apply it to raw data.

#include "fml/datasets.hpp"
#include "fml/networks.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>

namespace fml {

enum class ModelKind { resnet, gresnet, osgnet, dual_osgnet, pit_resnet };

ModelKind parse_model_kind(const std::string& name);
std::string to_string(ModelKind kind);
/// True for the kinds that take the time step as an input.
bool is_varied_lag(ModelKind kind);

/// Architecture of a model before any parameters exist.
struct ModelSpec {
	ModelKind kind = ModelKind::resnet;
	int state_width = 0; ///< m; for PiT the nodal width n d_u
	int memory = 0;      ///< M
	int depth = 3;
	int width = 10;
	Activation activation = Activation::gelu;
	// PiT only
	Matrix mesh;
	int latent_nodes = 0; ///< 0: ceil(n / 4)
	int channels = 1;
};

struct ModelBundle {
	ModelKind kind = ModelKind::resnet;
	int state_width = 0;
	int memory = 0;
	int multistep = 0;
	FnnSpec core;
	FnnSpec gate;
	std::optional<PitSpec> pit;
	ParamSet params;
	std::optional<AffinePrior> prior;
	NormStats norm;
	LagEncoding encoding;
	double lag = 0.0;
	double lag_min = 0.0;
	double lag_max = 0.0;
	std::uint64_t seed = 0;
	/// Modal models: number of modes and the nodal mesh of the basis.
	int modes = 0;
	Matrix modal_mesh;
	/// Free-form settings echoed into the model file.
	std::map<std::string, std::string> info;

	bool varied_lag() const { return is_varied_lag(kind); }
	OsgNet osg_net() const;
	DualOsgNet dual_net() const;

	/// One step in normalized coordinates. `window` holds M + 1 states per row,
	/// newest first; `lags` (B x 1) is only read by varied-lag kinds.
	Var step(ParamView& pv, Var window, Var lags) const;
	Matrix step(const Matrix& window, const Matrix& lags = {}) const;

	/// PiT step on a mesh other than the training mesh (normalized nodal values, 1 x n d_u).
	Matrix step_on_mesh(const Matrix& mesh, const Matrix& u) const;
};

/// Fresh bundle with initialized parameters.
ModelBundle make_model(const ModelSpec& spec, std::uint64_t seed);

void save_model(const ModelBundle& bundle, const std::filesystem::path& path);
ModelBundle load_model(const std::filesystem::path& path);

} // namespace fml
