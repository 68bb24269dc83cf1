#include "fml/networks.hpp"

#include "fml/errors.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>

namespace fml {

namespace {

constexpr double kLagFloor = 1e-30;

Matrix glorot(int fan_in, int fan_out, std::mt19937_64& rng)
{
	const double bound = std::sqrt(6.0 / (fan_in + fan_out));
	std::uniform_real_distribution<double> dist(-bound, bound);
	Matrix w(fan_in, fan_out);
	for (Eigen::Index i = 0; i < w.size(); ++i)
		w.data()[i] = dist(rng);
	return w;
}

void check_lags(const Matrix& lags, Eigen::Index rows)
{
	if (lags.cols() != 1 || lags.rows() != rows)
		throw DimensionError("lag column " + shape_string(lags) + " does not match batch of " +
		                     std::to_string(rows));
	if ((lags.array() < 0.0).any())
		throw DomainError("negative time step passed to an OSG-Net");
}

} // namespace

// ---------------------------------------------------------------------------
// ParamView

ParamView::ParamView(Tape& tape, ParamSet& params, bool track_gradients)
    : tape_(&tape), params_(&params), track_(track_gradients)
{
}

ParamView::ParamView(Tape& tape, const ParamSet& params)
    : tape_(&tape), params_(const_cast<ParamSet*>(&params)), track_(false)
{
}

Var ParamView::operator()(const std::string& name)
{
	if (auto it = cache_.find(name); it != cache_.end())
		return it->second;
	const std::size_t idx = params_->index_of(name);
	if (idx == params_->size())
		throw ContractError("no parameter named '" + name + "'");
	Var v = track_ ? tape_->param(*params_, idx) : tape_->constant((*params_)[idx].value);
	cache_.emplace(name, v);
	return v;
}

// ---------------------------------------------------------------------------
// FNN

void FnnSpec::validate() const
{
	if (widths.size() < 3)
		throw DomainError("FNN needs at least one hidden layer");
	for (int w : widths)
		if (w <= 0)
			throw DomainError("FNN layer widths must be positive");
}

FnnSpec FnnSpec::uniform(int in, int width, int depth, int out, Activation act)
{
	FnnSpec s;
	s.widths.push_back(in);
	for (int i = 0; i < depth; ++i)
		s.widths.push_back(width);
	s.widths.push_back(out);
	s.activation = act;
	return s;
}

void fnn_init_into(ParamSet& params, const FnnSpec& spec, const std::string& prefix, std::mt19937_64& rng)
{
	spec.validate();
	for (std::size_t l = 1; l < spec.widths.size(); ++l) {
		const int fan_in = spec.widths[l - 1];
		const int fan_out = spec.widths[l];
		params.add(prefix + "W" + std::to_string(l), glorot(fan_in, fan_out, rng));
		params.add(prefix + "b" + std::to_string(l), Matrix::Zero(1, fan_out), 1);
	}
}

ParamSet fnn_init(const FnnSpec& spec, std::uint64_t seed)
{
	ParamSet p;
	std::mt19937_64 rng(seed);
	fnn_init_into(p, spec, "", rng);
	return p;
}

Var fnn_forward(ParamView& pv, const FnnSpec& spec, Var x, const std::string& prefix)
{
	if (x.cols() != spec.input_width())
		throw DimensionError("FNN input " + shape_string(x.value()) + " but network expects width " +
		                     std::to_string(spec.input_width()));
	Var h = x;
	const std::size_t layers = spec.widths.size() - 1;
	for (std::size_t l = 1; l <= layers; ++l) {
		h = add_row(matmul(h, pv(prefix + "W" + std::to_string(l))), pv(prefix + "b" + std::to_string(l)));
		if (l < layers)
			h = activate(h, spec.activation);
	}
	return h;
}

Matrix fnn_forward(const ParamSet& params, const FnnSpec& spec, const Matrix& x, const std::string& prefix)
{
	Tape tape;
	ParamView pv(tape, params);
	return fnn_forward(pv, spec, tape.constant(x), prefix).value();
}

Var resnet_forward(ParamView& pv, const FnnSpec& spec, Var x, const std::string& prefix)
{
	if (spec.input_width() != spec.output_width())
		throw DimensionError("ResNet core must map width " + std::to_string(spec.input_width()) + " to itself");
	return x + fnn_forward(pv, spec, x, prefix);
}

Matrix resnet_forward(const ParamSet& params, const FnnSpec& spec, const Matrix& x, const std::string& prefix)
{
	Tape tape;
	ParamView pv(tape, params);
	return resnet_forward(pv, spec, tape.constant(x), prefix).value();
}

// ---------------------------------------------------------------------------
// Affine prior

Matrix AffinePrior::apply(const Matrix& u) const
{
	if (u.cols() != A.cols())
		throw DimensionError("affine prior of width " + std::to_string(A.cols()) + " applied to " +
		                     shape_string(u));
	Matrix out = u * A.transpose();
	out.rowwise() += b;
	return out;
}

double AffinePrior::residual(const Matrix& inputs, const Matrix& outputs) const
{
	return (outputs - apply(inputs)).squaredNorm() / static_cast<double>(inputs.rows());
}

AffinePrior affine_fit(const Matrix& inputs, const Matrix& outputs)
{
	if (inputs.rows() != outputs.rows())
		throw DimensionError("affine_fit: " + shape_string(inputs) + " inputs vs " + shape_string(outputs) +
		                     " outputs");
	const Eigen::Index n = inputs.cols();
	const Eigen::Index j = inputs.rows();
	if (j < n + 1)
		throw DataError("affine_fit needs at least " + std::to_string(n + 1) + " pairs, got " +
		                std::to_string(j));

	// Normal equations (X X^T) C = X Y^T with X the inputs augmented by a row of ones.
	Matrix x(j, n + 1);
	x.leftCols(n) = inputs;
	x.col(n).setOnes();
	const Eigen::MatrixXd gram = x.transpose() * x;
	const Eigen::MatrixXd rhs = x.transpose() * outputs;

	Eigen::LLT<Eigen::MatrixXd> llt(gram);
	Eigen::MatrixXd coeffs;
	if (llt.info() == Eigen::Success && llt.rcond() > 1e-14) {
		coeffs = llt.solve(rhs);
	} else {
		const double ridge = 1e-10 * gram.trace();
		Eigen::MatrixXd reg = gram;
		reg.diagonal().array() += ridge;
		Eigen::LLT<Eigen::MatrixXd> llt_reg(reg);
		if (llt_reg.info() != Eigen::Success || !(llt_reg.rcond() > 1e-16))
			throw NumericError("affine_fit: normal equations singular even after ridge regularization");
		coeffs = llt_reg.solve(rhs);
	}
	if (!coeffs.allFinite())
		throw NumericError("affine_fit: non-finite solution");

	AffinePrior prior;
	prior.A = coeffs.topRows(n).transpose();
	prior.b = coeffs.row(n);
	return prior;
}

Var gresnet_forward(const AffinePrior& prior, ParamView& pv, const FnnSpec& spec, Var u, const std::string& prefix)
{
	if (prior.A.rows() != spec.output_width() || u.cols() != spec.input_width())
		throw DimensionError("gResNet prior and network widths disagree");
	Tape& t = pv.tape();
	Var affine = add_row(matmul(u, t.constant(prior.A.transpose())), t.constant(prior.b));
	return affine + fnn_forward(pv, spec, u, prefix);
}

Matrix gresnet_forward(const AffinePrior& prior, const ParamSet& params, const FnnSpec& spec, const Matrix& u,
                       const std::string& prefix)
{
	Tape tape;
	ParamView pv(tape, params);
	return gresnet_forward(prior, pv, spec, tape.constant(u), prefix).value();
}

// ---------------------------------------------------------------------------
// OSG-Net

Matrix LagEncoding::feature(const Matrix& lags) const
{
	if (log10)
		return log_feature(lags);
	return ((lags.array() - mean) / std).matrix();
}

Matrix LagEncoding::log_feature(const Matrix& lags) const
{
	Matrix out = lags.unaryExpr([](double d) { return std::log10(std::max(d, kLagFloor)); });
	if (log10)
		out = ((out.array() - mean) / std).matrix();
	return out;
}

void OsgNet::validate() const
{
	core.validate();
	if (core.input_width() != core.output_width() + 1)
		throw DimensionError("OSG-Net core must map width n+1 to n, got " + std::to_string(core.input_width()) +
		                     " -> " + std::to_string(core.output_width()));
}

namespace {

Var osg_increment(ParamView& pv, const OsgNet& net, Var u, Var lags)
{
	Tape& t = pv.tape();
	Var feat = t.constant(net.encoding.feature(lags.value()));
	return fnn_forward(pv, net.core, concat_cols(u, feat), net.prefix);
}

} // namespace

Var osgnet_forward(ParamView& pv, const OsgNet& net, Var u, Var lags)
{
	check_lags(lags.value(), u.rows());
	if (u.cols() != net.state_width())
		throw DimensionError("OSG-Net state width " + std::to_string(net.state_width()) + " vs input " +
		                     shape_string(u.value()));
	return u + mul_col(osg_increment(pv, net, u, lags), lags);
}

Matrix osgnet_forward(const ParamSet& params, const OsgNet& net, const Matrix& u, const Matrix& lags)
{
	Tape tape;
	ParamView pv(tape, params);
	return osgnet_forward(pv, net, tape.constant(u), tape.constant(lags)).value();
}

void DualOsgNet::validate() const
{
	branch_a.validate();
	branch_b.validate();
	gate.validate();
	if (branch_a.state_width() != branch_b.state_width())
		throw DimensionError("dual OSG-Net branches have different state widths");
	if (gate.input_width() != 1 || gate.output_width() != 2)
		throw DimensionError("dual OSG-Net gate must map width 1 to 2");
}

Var dual_gate_weights(ParamView& pv, const DualOsgNet& net, Var lags)
{
	Var feat = pv.tape().constant(net.branch_a.encoding.log_feature(lags.value()));
	return softmax_rows(fnn_forward(pv, net.gate, feat, net.gate_prefix));
}

Matrix dual_gate_weights(const ParamSet& params, const DualOsgNet& net, const Matrix& lags)
{
	Tape tape;
	ParamView pv(tape, params);
	return dual_gate_weights(pv, net, tape.constant(lags)).value();
}

Var dual_osgnet_forward(ParamView& pv, const DualOsgNet& net, Var u, Var lags)
{
	check_lags(lags.value(), u.rows());
	if (u.cols() != net.branch_a.state_width())
		throw DimensionError("dual OSG-Net state width " + std::to_string(net.branch_a.state_width()) +
		                     " vs input " + shape_string(u.value()));
	Var w = dual_gate_weights(pv, net, lags);
	Var inc_a = mul_col(osg_increment(pv, net.branch_a, u, lags), slice_cols(w, 0, 1));
	Var inc_b = mul_col(osg_increment(pv, net.branch_b, u, lags), slice_cols(w, 1, 1));
	return u + mul_col(inc_a + inc_b, lags);
}

Matrix dual_osgnet_forward(const ParamSet& params, const DualOsgNet& net, const Matrix& u, const Matrix& lags)
{
	Tape tape;
	ParamView pv(tape, params);
	return dual_osgnet_forward(pv, net, tape.constant(u), tape.constant(lags)).value();
}

void dual_osgnet_init(ParamSet& params, const DualOsgNet& net, std::mt19937_64& rng)
{
	net.validate();
	fnn_init_into(params, net.branch_a.core, net.branch_a.prefix, rng);
	fnn_init_into(params, net.branch_b.core, net.branch_b.prefix, rng);
	fnn_init_into(params, net.gate, net.gate_prefix, rng);
}

// ---------------------------------------------------------------------------
// PiT

Matrix pairwise_sq_distances(const Matrix& from, const Matrix& to)
{
	if (from.cols() != to.cols())
		throw DimensionError("meshes have coordinate widths " + std::to_string(from.cols()) + " and " +
		                     std::to_string(to.cols()));
	Matrix d(to.rows(), from.rows());
	for (Eigen::Index i = 0; i < to.rows(); ++i)
		for (Eigen::Index j = 0; j < from.rows(); ++j)
			d(i, j) = (to.row(i) - from.row(j)).squaredNorm();
	return d;
}

Matrix pit_attention_kernel(double lambda, const Matrix& from_mesh, const Matrix& to_mesh)
{
	if (lambda < 0.0)
		throw DomainError("attention bandwidth must be non-negative");
	return softmax_rows(Matrix(-lambda * pairwise_sq_distances(from_mesh, to_mesh)));
}

Var pit_attention_kernel(Var lambda, const Matrix& from_mesh, const Matrix& to_mesh)
{
	Tape& t = *lambda.tape();
	Var d = t.constant(-pairwise_sq_distances(from_mesh, to_mesh));
	return softmax_rows(scale_by(d, lambda));
}

Matrix latent_mesh_coarsen(const Matrix& mesh, int n_ltt)
{
	const auto n = static_cast<int>(mesh.rows());
	if (n_ltt < 1 || n_ltt > n)
		throw DomainError("latent mesh size " + std::to_string(n_ltt) + " outside [1, " + std::to_string(n) + "]");
	const RowVector centroid = mesh.colwise().mean();
	int first = 0;
	double best = std::numeric_limits<double>::infinity();
	for (int i = 0; i < n; ++i) {
		const double d = (mesh.row(i) - centroid).squaredNorm();
		if (d < best) {
			best = d;
			first = i;
		}
	}
	std::vector<int> chosen{first};
	Vector min_dist(n);
	for (int i = 0; i < n; ++i)
		min_dist(i) = (mesh.row(i) - mesh.row(first)).squaredNorm();
	while (static_cast<int>(chosen.size()) < n_ltt) {
		int next = 0;
		double far = -1.0;
		for (int i = 0; i < n; ++i)
			if (min_dist(i) > far) {
				far = min_dist(i);
				next = i;
			}
		chosen.push_back(next);
		for (int i = 0; i < n; ++i)
			min_dist(i) = std::min(min_dist(i), (mesh.row(i) - mesh.row(next)).squaredNorm());
	}
	Matrix out(n_ltt, mesh.cols());
	for (int k = 0; k < n_ltt; ++k)
		out.row(k) = mesh.row(chosen[static_cast<std::size_t>(k)]);
	return out;
}

double mean_nearest_neighbor_distance(const Matrix& mesh)
{
	if (mesh.rows() < 2)
		return 1.0;
	double total = 0.0;
	for (Eigen::Index i = 0; i < mesh.rows(); ++i) {
		double best = std::numeric_limits<double>::infinity();
		for (Eigen::Index j = 0; j < mesh.rows(); ++j)
			if (j != i)
				best = std::min(best, (mesh.row(i) - mesh.row(j)).squaredNorm());
		total += std::sqrt(best);
	}
	return total / static_cast<double>(mesh.rows());
}

void PitSpec::validate() const
{
	if (depth < 1 || width < 1 || channels < 1)
		throw DomainError("PiT depth, width and channel count must be positive");
	if (mesh.rows() < 1 || latent.rows() < 1)
		throw DomainError("PiT meshes must be non-empty");
	if (mesh.cols() != latent.cols())
		throw DimensionError("PiT mesh and latent mesh coordinate widths differ");
}

void pit_init(ParamSet& params, const PitSpec& spec, std::mt19937_64& rng)
{
	spec.validate();
	const int d_in = spec.channels + spec.coord_dim();
	for (int l = 1; l <= spec.depth + 1; ++l) {
		const int fan_in = l == 1 ? d_in : spec.width;
		const int fan_out = l == spec.depth + 1 ? spec.channels : spec.width;
		params.add(spec.prefix + "W" + std::to_string(l), glorot(fan_in, fan_out, rng));
	}
	const double h = mean_nearest_neighbor_distance(spec.latent);
	const double rho = inverse_softplus(1.0 / (h * h));
	for (int l = 1; l <= spec.depth; ++l)
		params.add(spec.prefix + "rho" + std::to_string(l), Matrix::Constant(1, 1, rho), 1);
}

std::vector<double> pit_bandwidths(const ParamSet& params, const PitSpec& spec)
{
	std::vector<double> out;
	for (int l = 1; l <= spec.depth; ++l)
		out.push_back(softplus(params.at(spec.prefix + "rho" + std::to_string(l)).value(0, 0)));
	return out;
}

Var reshape(Var a, Eigen::Index rows, Eigen::Index cols)
{
	if (rows * cols != a.value().size())
		throw DimensionError("cannot reshape " + shape_string(a.value()) + " to " + shape_string(rows, cols));
	Matrix out = Eigen::Map<const Matrix>(a.value().data(), rows, cols);
	const Eigen::Index r0 = a.rows();
	const Eigen::Index c0 = a.cols();
	return a.tape()->record(std::move(out), {a}, [a, r0, c0](Tape& t, int self) {
		t.accumulate(a.id(), Eigen::Map<const Matrix>(t.grad(self).data(), r0, c0));
	});
}

Var pit_forward(ParamView& pv, const PitSpec& spec, const Matrix& mesh, Var u, std::vector<Matrix>* kernels)
{
	const Eigen::Index n = mesh.rows();
	if (mesh.cols() != spec.coord_dim())
		throw DimensionError("evaluation mesh has coordinate width " + std::to_string(mesh.cols()) +
		                     ", PiT expects " + std::to_string(spec.coord_dim()));
	if (u.cols() != spec.channels || n == 0 || u.rows() % n != 0)
		throw DimensionError("PiT input " + shape_string(u.value()) + " does not stack samples on " +
		                     std::to_string(n) + " nodes with " + std::to_string(spec.channels) + " channels");
	Tape& t = pv.tape();
	const Eigen::Index batch = u.rows() / n;
	Matrix coords(batch * n, mesh.cols());
	for (Eigen::Index b = 0; b < batch; ++b)
		coords.middleRows(b * n, n) = mesh;

	Var h = concat_cols(u, t.constant(std::move(coords)));
	for (int l = 1; l <= spec.depth; ++l) {
		const Matrix& from = l == 1 ? mesh : spec.latent;
		const Matrix& to = l == spec.depth ? mesh : spec.latent;
		Var lambda = softplus(pv(spec.prefix + "rho" + std::to_string(l)));
		Var kernel = pit_attention_kernel(lambda, from, to);
		if (kernels != nullptr)
			kernels->push_back(kernel.value());
		Var w = pv(spec.prefix + "W" + std::to_string(l));
		// Same product either way; pick the cheaper association.
		const double p = static_cast<double>(from.rows());
		const double q = static_cast<double>(to.rows());
		const double din = static_cast<double>(w.rows());
		const double dout = static_cast<double>(w.cols());
		const bool mix_first = q * p * din + q * din * dout < p * din * dout + q * p * dout;
		Var z = mix_first ? matmul(mesh_mix(kernel, h), w) : mesh_mix(kernel, matmul(h, w));
		h = activate(z, spec.activation);
	}
	return matmul(h, pv(spec.prefix + "W" + std::to_string(spec.depth + 1)));
}

Matrix pit_forward(const ParamSet& params, const PitSpec& spec, const Matrix& mesh, const Matrix& u)
{
	Tape tape;
	ParamView pv(tape, params);
	return pit_forward(pv, spec, mesh, tape.constant(u)).value();
}

} // namespace fml
