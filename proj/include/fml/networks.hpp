#pragma once

#include "fml/autodiff.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace fml {

/// Resolves parameter names to tape nodes. With gradient tracking enabled the
/// nodes are leaves bound to the ParamSet; otherwise they are constants.
class ParamView {
public:
	ParamView(Tape& tape, ParamSet& params, bool track_gradients = true);
	ParamView(Tape& tape, const ParamSet& params);

	Var operator()(const std::string& name);
	Tape& tape() { return *tape_; }
	const ParamSet& params() const { return *params_; }

private:
	Tape* tape_;
	ParamSet* params_;
	bool track_;
	std::map<std::string, Var> cache_;
};

// ---------------------------------------------------------------------------
// Fully connected network

/// Layer widths n_0 .. n_{L+1}; L = widths.size() - 2 hidden layers.
struct FnnSpec {
	std::vector<int> widths;
	Activation activation = Activation::gelu;

	int hidden_layers() const { return static_cast<int>(widths.size()) - 2; }
	int input_width() const { return widths.front(); }
	int output_width() const { return widths.back(); }
	void validate() const;

	/// `depth` hidden layers of `width` neurons between `in` and `out`.
	static FnnSpec uniform(int in, int width, int depth, int out, Activation act = Activation::gelu);
};

/// Glorot-uniform weights and zero biases, named `<prefix>W<l>` / `<prefix>b<l>`.
ParamSet fnn_init(const FnnSpec& spec, std::uint64_t seed);
void fnn_init_into(ParamSet& params, const FnnSpec& spec, const std::string& prefix, std::mt19937_64& rng);

/// Affine layers with the activation after every hidden layer, none on output.
Var fnn_forward(ParamView& pv, const FnnSpec& spec, Var x, const std::string& prefix = "");
Matrix fnn_forward(const ParamSet& params, const FnnSpec& spec, const Matrix& x, const std::string& prefix = "");

/// x + N(x).
Var resnet_forward(ParamView& pv, const FnnSpec& spec, Var x, const std::string& prefix = "");
Matrix resnet_forward(const ParamSet& params, const FnnSpec& spec, const Matrix& x, const std::string& prefix = "");

// ---------------------------------------------------------------------------
// Affine prior (modified DMD) and gResNet

struct AffinePrior {
	Matrix A;    ///< n x n
	RowVector b; ///< 1 x n

	/// Row-batched A u + b.
	Matrix apply(const Matrix& u) const;
	double residual(const Matrix& inputs, const Matrix& outputs) const;
};

/// Least-squares fit of outputs ~ A inputs + b over the rows of the pair set.
AffinePrior affine_fit(const Matrix& inputs, const Matrix& outputs);

/// A u + b + N(u). The prior is frozen and enters as a constant.
Var gresnet_forward(const AffinePrior& prior, ParamView& pv, const FnnSpec& spec, Var u,
                    const std::string& prefix = "");
Matrix gresnet_forward(const AffinePrior& prior, const ParamSet& params, const FnnSpec& spec, const Matrix& u,
                       const std::string& prefix = "");

// ---------------------------------------------------------------------------
// OSG-Net and dual OSG-Net

/// How the time step enters the network input channel. The multiplier in
/// u + lag * N(u, lag) always uses the raw lag.
struct LagEncoding {
	bool log10 = false;
	double mean = 0.0;
	double std = 1.0;

	/// Network-input feature for each lag (column vector).
	Matrix feature(const Matrix& lags) const;
	/// log10 of the floored lag, standardized with this encoding when log10 is set.
	Matrix log_feature(const Matrix& lags) const;
};

struct OsgNet {
	FnnSpec core; ///< input width n + 1, output width n
	LagEncoding encoding;
	std::string prefix = "osg.";

	int state_width() const { return core.output_width(); }
	void validate() const;
};

/// u + lag * N(concat(u, feature(lag))). Throws DomainError on a negative lag.
Var osgnet_forward(ParamView& pv, const OsgNet& net, Var u, Var lags);
Matrix osgnet_forward(const ParamSet& params, const OsgNet& net, const Matrix& u, const Matrix& lags);

struct DualOsgNet {
	OsgNet branch_a;
	OsgNet branch_b;
	FnnSpec gate; ///< 1 -> 2
	std::string gate_prefix = "gate.";

	void validate() const;
};

/// Gate weights (B x 2) from softmax(gate(log10 lag)).
Var dual_gate_weights(ParamView& pv, const DualOsgNet& net, Var lags);
Matrix dual_gate_weights(const ParamSet& params, const DualOsgNet& net, const Matrix& lags);

/// w1 * branch_a(u, lag) + w2 * branch_b(u, lag), evaluated as
/// u + lag * (w1 N_a + w2 N_b) so that lag = 0 is exactly the identity.
Var dual_osgnet_forward(ParamView& pv, const DualOsgNet& net, Var u, Var lags);
Matrix dual_osgnet_forward(const ParamSet& params, const DualOsgNet& net, const Matrix& u, const Matrix& lags);

void dual_osgnet_init(ParamSet& params, const DualOsgNet& net, std::mt19937_64& rng);

// ---------------------------------------------------------------------------
// Position-induced Transformer

/// Squared distances between rows: D(i, j) = |to_i - from_j|^2.
Matrix pairwise_sq_distances(const Matrix& from, const Matrix& to);

/// softmax(-lambda D) between two meshes; q x p for p source and q target points.
Matrix pit_attention_kernel(double lambda, const Matrix& from_mesh, const Matrix& to_mesh);
Var pit_attention_kernel(Var lambda, const Matrix& from_mesh, const Matrix& to_mesh);

/// Farthest-point subset of `n_ltt` mesh rows, seeded by the point nearest the centroid.
Matrix latent_mesh_coarsen(const Matrix& mesh, int n_ltt);

/// Mean distance from each row to its nearest other row.
double mean_nearest_neighbor_distance(const Matrix& mesh);

struct PitSpec {
	Matrix mesh;   ///< n x d training mesh
	Matrix latent; ///< n_ltt x d
	int depth = 4;
	int width = 64;
	int channels = 1; ///< d_u
	Activation activation = Activation::gelu;
	std::string prefix = "pit.";

	int coord_dim() const { return static_cast<int>(mesh.cols()); }
	void validate() const;
};

/// Glorot weights W_1..W_{L+1}; bandwidth parameters rho_l with
/// softplus(rho_l) = 1 / h^2 for the latent mesh spacing h.
void pit_init(ParamSet& params, const PitSpec& spec, std::mt19937_64& rng);

/// Current bandwidths softplus(rho_l), l = 1..L.
std::vector<double> pit_bandwidths(const ParamSet& params, const PitSpec& spec);

/// Evaluates the transformer on `mesh` (may differ from the training mesh).
/// `u` stacks B samples as (B n) x d_u. When `kernels` is non-null every
/// attention matrix is appended to it.
Var pit_forward(ParamView& pv, const PitSpec& spec, const Matrix& mesh, Var u,
                std::vector<Matrix>* kernels = nullptr);
Matrix pit_forward(const ParamSet& params, const PitSpec& spec, const Matrix& mesh, const Matrix& u);

/// Reinterprets the row-major storage with a new shape.
Var reshape(Var a, Eigen::Index rows, Eigen::Index cols);

} // namespace fml
