#include "fml/autodiff.hpp"

#include "fml/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace fml {

std::string shape_string(Eigen::Index rows, Eigen::Index cols)
{
	return "[" + std::to_string(rows) + "x" + std::to_string(cols) + "]";
}

// ---------------------------------------------------------------------------
// ParamSet

std::size_t ParamSet::add(std::string name, Matrix value, int rank)
{
	if (contains(name))
		throw ContractError("duplicate parameter name '" + name + "'");
	Entry e;
	e.name = std::move(name);
	e.rank = rank;
	e.grad = Matrix::Zero(value.rows(), value.cols());
	e.value = std::move(value);
	entries_.push_back(std::move(e));
	return entries_.size() - 1;
}

std::size_t ParamSet::index_of(const std::string& name) const
{
	for (std::size_t i = 0; i < entries_.size(); ++i)
		if (entries_[i].name == name)
			return i;
	return entries_.size();
}

const ParamSet::Entry& ParamSet::at(const std::string& name) const
{
	const std::size_t i = index_of(name);
	if (i == entries_.size())
		throw ContractError("no parameter named '" + name + "'");
	return entries_[i];
}

ParamSet::Entry& ParamSet::at(const std::string& name)
{
	return const_cast<Entry&>(static_cast<const ParamSet&>(*this).at(name));
}

void ParamSet::zero_grad()
{
	for (auto& e : entries_)
		e.grad.setZero(e.value.rows(), e.value.cols());
}

std::size_t ParamSet::scalar_count() const
{
	std::size_t n = 0;
	for (const auto& e : entries_)
		n += static_cast<std::size_t>(e.value.size());
	return n;
}

double& ParamSet::scalar(std::size_t k)
{
	for (auto& e : entries_) {
		const auto n = static_cast<std::size_t>(e.value.size());
		if (k < n)
			return e.value.data()[k];
		k -= n;
	}
	throw ContractError("parameter scalar index out of range");
}

double ParamSet::grad_scalar(std::size_t k) const
{
	for (const auto& e : entries_) {
		const auto n = static_cast<std::size_t>(e.value.size());
		if (k < n)
			return e.grad.data()[k];
		k -= n;
	}
	throw ContractError("parameter scalar index out of range");
}

double ParamSet::grad_norm() const
{
	double s = 0.0;
	for (const auto& e : entries_)
		s += e.grad.squaredNorm();
	return std::sqrt(s);
}

// ---------------------------------------------------------------------------
// Var / Tape

const Matrix& Var::value() const
{
	return tape_->value(id_);
}

const Matrix& Var::grad() const
{
	return tape_->grad(id_);
}

Var Tape::push(Node node)
{
	nodes_.push_back(std::move(node));
	return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::constant(Matrix value)
{
	Node n;
	n.value = std::move(value);
	return push(std::move(n));
}

Var Tape::variable(Matrix value)
{
	Node n;
	n.value = std::move(value);
	n.requires_grad = true;
	return push(std::move(n));
}

Var Tape::param(ParamSet& params, std::size_t index)
{
	Node n;
	n.value = params[index].value;
	n.requires_grad = true;
	n.params = &params;
	n.param_index = index;
	return push(std::move(n));
}

std::vector<Var> Tape::bind(ParamSet& params)
{
	std::vector<Var> out;
	out.reserve(params.size());
	for (std::size_t i = 0; i < params.size(); ++i)
		out.push_back(param(params, i));
	return out;
}

Var Tape::record(Matrix value, std::initializer_list<Var> inputs, BackwardFn fn)
{
	return record(std::move(value), std::vector<Var>(inputs), std::move(fn));
}

Var Tape::record(Matrix value, const std::vector<Var>& inputs, BackwardFn fn)
{
	Node n;
	n.value = std::move(value);
	for (const Var& v : inputs) {
		if (v.tape() != this)
			throw ContractError("operand recorded on a different tape");
		if (requires_grad(v.id()))
			n.requires_grad = true;
	}
	if (n.requires_grad)
		n.backward = std::move(fn);
	return push(std::move(n));
}

void Tape::accumulate(int id, const Matrix& g)
{
	accumulate_expr(id, g);
}

void Tape::backward(Var seed)
{
	if (seed.tape() != this)
		throw ContractError("backward seed belongs to a different tape");
	const auto& sv = seed.value();
	if (sv.rows() != 1 || sv.cols() != 1)
		throw ContractError("backward seed must be scalar, got " + shape_string(sv));
	for (auto& n : nodes_)
		n.grad.resize(0, 0);
	auto& root = nodes_[static_cast<std::size_t>(seed.id())];
	if (!root.requires_grad)
		return;
	root.grad = Matrix::Ones(1, 1);
	for (int i = seed.id(); i >= 0; --i) {
		auto& n = nodes_[static_cast<std::size_t>(i)];
		if (n.grad.size() == 0)
			continue;
		if (n.backward)
			n.backward(*this, i);
		if (n.params != nullptr)
			(*n.params)[n.param_index].grad += n.grad;
	}
}

// ---------------------------------------------------------------------------
// Scalar activations

namespace {

constexpr double kAsP = 0.3275911;
constexpr double kAs[5] = {0.254829592, -0.284496736, 1.421413741, -1.453152027, 1.061405429};
constexpr double kInvSqrt2 = 0.70710678118654752440;

void check_same_shape(const Matrix& a, const Matrix& b, const char* op)
{
	if (a.rows() != b.rows() || a.cols() != b.cols())
		throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " +
		                     shape_string(b));
}

} // namespace

double erf_as(double x)
{
	const double ax = std::abs(x);
	const double t = 1.0 / (1.0 + kAsP * ax);
	const double poly = t * (kAs[0] + t * (kAs[1] + t * (kAs[2] + t * (kAs[3] + t * kAs[4]))));
	const double y = 1.0 - poly * std::exp(-ax * ax);
	return x < 0.0 ? -y : y;
}

double erf_as_derivative(double x)
{
	const double ax = std::abs(x);
	const double t = 1.0 / (1.0 + kAsP * ax);
	const double poly = t * (kAs[0] + t * (kAs[1] + t * (kAs[2] + t * (kAs[3] + t * kAs[4]))));
	const double dpoly_dt =
	    kAs[0] + t * (2.0 * kAs[1] + t * (3.0 * kAs[2] + t * (4.0 * kAs[3] + t * 5.0 * kAs[4])));
	// dt/d|x| = -p t^2; the result is even in x.
	return std::exp(-ax * ax) * (dpoly_dt * kAsP * t * t + 2.0 * ax * poly);
}

double gelu(double x)
{
	return x * 0.5 * (1.0 + erf_as(x * kInvSqrt2));
}

double gelu_derivative(double x)
{
	return 0.5 * (1.0 + erf_as(x * kInvSqrt2)) + x * 0.5 * erf_as_derivative(x * kInvSqrt2) * kInvSqrt2;
}

double softplus(double x)
{
	return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double inverse_softplus(double y)
{
	if (!(y > 0.0))
		throw DomainError("inverse_softplus requires a positive argument");
	return y > 30.0 ? y + std::log(-std::expm1(-y)) : std::log(std::expm1(y));
}

Activation parse_activation(const std::string& name)
{
	if (name == "tanh")
		return Activation::tanh;
	if (name == "relu")
		return Activation::relu;
	if (name == "gelu")
		return Activation::gelu;
	throw DomainError("unknown activation '" + name + "'");
}

std::string to_string(Activation a)
{
	switch (a) {
	case Activation::tanh:
		return "tanh";
	case Activation::relu:
		return "relu";
	case Activation::gelu:
		return "gelu";
	}
	return "?";
}

Matrix activate(const Matrix& x, Activation a)
{
	switch (a) {
	case Activation::tanh:
		return x.array().tanh().matrix();
	case Activation::relu:
		return x.cwiseMax(0.0);
	case Activation::gelu:
		return x.unaryExpr([](double v) { return gelu(v); });
	}
	return x;
}

// ---------------------------------------------------------------------------
// Tape operations

Var matmul(Var a, Var b)
{
	if (a.cols() != b.rows())
		throw DimensionError("matmul: inner dimensions disagree " + shape_string(a.value()) + " * " +
		                     shape_string(b.value()));
	Matrix out = a.value() * b.value();
	return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, int self) {
		const Matrix& g = t.grad(self);
		if (t.requires_grad(a.id()))
			t.accumulate_expr(a.id(), g * b.value().transpose());
		if (t.requires_grad(b.id()))
			t.accumulate_expr(b.id(), a.value().transpose() * g);
	});
}

Var add(Var a, Var b)
{
	check_same_shape(a.value(), b.value(), "add");
	Matrix out = a.value() + b.value();
	return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, int self) {
		t.accumulate(a.id(), t.grad(self));
		t.accumulate(b.id(), t.grad(self));
	});
}

Var sub(Var a, Var b)
{
	check_same_shape(a.value(), b.value(), "sub");
	Matrix out = a.value() - b.value();
	return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, int self) {
		t.accumulate(a.id(), t.grad(self));
		t.accumulate_expr(b.id(), -t.grad(self));
	});
}

Var mul(Var a, Var b)
{
	check_same_shape(a.value(), b.value(), "mul");
	Matrix out = a.value().cwiseProduct(b.value());
	return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, int self) {
		const Matrix& g = t.grad(self);
		t.accumulate_expr(a.id(), g.cwiseProduct(b.value()));
		t.accumulate_expr(b.id(), g.cwiseProduct(a.value()));
	});
}

Var scale(Var a, double c)
{
	Matrix out = c * a.value();
	return a.tape()->record(std::move(out), {a},
	                        [a, c](Tape& t, int self) { t.accumulate_expr(a.id(), c * t.grad(self)); });
}

Var exp(Var a)
{
	Matrix out = a.value().array().exp().matrix();
	return a.tape()->record(std::move(out), {a}, [a](Tape& t, int self) {
		t.accumulate_expr(a.id(), t.grad(self).cwiseProduct(t.value(self)));
	});
}

Var tanh(Var a)
{
	Matrix out = a.value().array().tanh().matrix();
	return a.tape()->record(std::move(out), {a}, [a](Tape& t, int self) {
		const auto y = t.value(self).array();
		t.accumulate_expr(a.id(), (t.grad(self).array() * (1.0 - y * y)).matrix());
	});
}

Var relu(Var a)
{
	Matrix out = a.value().cwiseMax(0.0);
	return a.tape()->record(std::move(out), {a}, [a](Tape& t, int self) {
		const auto mask = (a.value().array() > 0.0).cast<double>();
		t.accumulate_expr(a.id(), (t.grad(self).array() * mask).matrix());
	});
}

Var gelu(Var a)
{
	Matrix out = a.value().unaryExpr([](double v) { return gelu(v); });
	return a.tape()->record(std::move(out), {a}, [a](Tape& t, int self) {
		const Matrix d = a.value().unaryExpr([](double v) { return gelu_derivative(v); });
		t.accumulate_expr(a.id(), t.grad(self).cwiseProduct(d));
	});
}

Var softplus(Var a)
{
	Matrix out = a.value().unaryExpr([](double v) { return softplus(v); });
	return a.tape()->record(std::move(out), {a}, [a](Tape& t, int self) {
		const Matrix d = a.value().unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
		t.accumulate_expr(a.id(), t.grad(self).cwiseProduct(d));
	});
}

Var activate(Var a, Activation act)
{
	switch (act) {
	case Activation::tanh:
		return tanh(a);
	case Activation::relu:
		return relu(a);
	case Activation::gelu:
		return gelu(a);
	}
	return a;
}

Var add_row(Var a, Var bias)
{
	if (bias.rows() != 1 || bias.cols() != a.cols())
		throw DimensionError("add_row: bias " + shape_string(bias.value()) + " does not match " +
		                     shape_string(a.value()));
	Matrix out = a.value();
	out.rowwise() += bias.value().row(0);
	return a.tape()->record(std::move(out), {a, bias}, [a, bias](Tape& t, int self) {
		const Matrix& g = t.grad(self);
		t.accumulate(a.id(), g);
		t.accumulate_expr(bias.id(), g.colwise().sum());
	});
}

Var mul_col(Var a, Var c)
{
	if (c.cols() != 1 || c.rows() != a.rows())
		throw DimensionError("mul_col: column " + shape_string(c.value()) + " does not match " +
		                     shape_string(a.value()));
	Matrix out = a.value().array().colwise() * c.value().col(0).array();
	return a.tape()->record(std::move(out), {a, c}, [a, c](Tape& t, int self) {
		const Matrix& g = t.grad(self);
		if (t.requires_grad(a.id()))
			t.accumulate_expr(a.id(), (g.array().colwise() * c.value().col(0).array()).matrix());
		if (t.requires_grad(c.id()))
			t.accumulate_expr(c.id(), g.cwiseProduct(a.value()).rowwise().sum());
	});
}

Var scale_by(Var a, Var s)
{
	if (s.rows() != 1 || s.cols() != 1)
		throw DimensionError("scale_by: scale must be 1x1, got " + shape_string(s.value()));
	Matrix out = s.scalar() * a.value();
	return a.tape()->record(std::move(out), {a, s}, [a, s](Tape& t, int self) {
		const Matrix& g = t.grad(self);
		if (t.requires_grad(a.id()))
			t.accumulate_expr(a.id(), s.scalar() * g);
		if (t.requires_grad(s.id()))
			t.accumulate(s.id(), Matrix::Constant(1, 1, g.cwiseProduct(a.value()).sum()));
	});
}

Matrix softmax_rows(const Matrix& a)
{
	if (a.cols() < 1)
		throw DimensionError("softmax_rows: need at least one column");
	if (!a.allFinite())
		throw NumericError("softmax_rows: non-finite input");
	Matrix out(a.rows(), a.cols());
	for (Eigen::Index i = 0; i < a.rows(); ++i) {
		const double m = a.row(i).maxCoeff();
		out.row(i) = (a.row(i).array() - m).exp().matrix();
		out.row(i) /= out.row(i).sum();
	}
	return out;
}

Var softmax_rows(Var a)
{
	Matrix out = softmax_rows(a.value());
	return a.tape()->record(std::move(out), {a}, [a](Tape& t, int self) {
		const Matrix& y = t.value(self);
		const Matrix& g = t.grad(self);
		const Vector dots = g.cwiseProduct(y).rowwise().sum();
		Matrix d = y.array() * (g.array().colwise() - dots.array());
		t.accumulate(a.id(), d);
	});
}

Var sum(Var a)
{
	if (a.value().size() == 0)
		throw DomainError("sum of an empty tensor");
	Matrix out = Matrix::Constant(1, 1, a.value().sum());
	return a.tape()->record(std::move(out), {a}, [a](Tape& t, int self) {
		t.accumulate_expr(a.id(), Matrix::Constant(a.rows(), a.cols(), t.grad(self)(0, 0)));
	});
}

Var mean(Var a)
{
	if (a.value().size() == 0)
		throw DomainError("mean of an empty tensor");
	const double n = static_cast<double>(a.value().size());
	Matrix out = Matrix::Constant(1, 1, a.value().sum() / n);
	return a.tape()->record(std::move(out), {a}, [a, n](Tape& t, int self) {
		t.accumulate_expr(a.id(), Matrix::Constant(a.rows(), a.cols(), t.grad(self)(0, 0) / n));
	});
}

Var sum_of_squares(Var a)
{
	if (a.value().size() == 0)
		throw DomainError("sum_of_squares of an empty tensor");
	Matrix out = Matrix::Constant(1, 1, a.value().squaredNorm());
	return a.tape()->record(std::move(out), {a}, [a](Tape& t, int self) {
		t.accumulate_expr(a.id(), (2.0 * t.grad(self)(0, 0)) * a.value());
	});
}

Var concat_cols(Var a, Var b)
{
	return concat_cols(std::vector<Var>{a, b});
}

Var concat_cols(const std::vector<Var>& parts)
{
	if (parts.empty())
		throw DimensionError("concat_cols: no operands");
	const Eigen::Index rows = parts.front().rows();
	Eigen::Index cols = 0;
	for (const Var& p : parts) {
		if (p.rows() != rows)
			throw DimensionError("concat_cols: row mismatch " + shape_string(parts.front().value()) +
			                     " vs " + shape_string(p.value()));
		cols += p.cols();
	}
	Matrix out(rows, cols);
	Eigen::Index c = 0;
	for (const Var& p : parts) {
		out.middleCols(c, p.cols()) = p.value();
		c += p.cols();
	}
	return parts.front().tape()->record(std::move(out), parts, [parts](Tape& t, int self) {
		const Matrix& g = t.grad(self);
		Eigen::Index off = 0;
		for (const Var& p : parts) {
			if (t.requires_grad(p.id()))
				t.accumulate_expr(p.id(), g.middleCols(off, p.cols()));
			off += p.cols();
		}
	});
}

Var slice_cols(Var a, Eigen::Index start, Eigen::Index count)
{
	if (start < 0 || count < 0 || start + count > a.cols())
		throw DimensionError("slice_cols: range [" + std::to_string(start) + ", " +
		                     std::to_string(start + count) + ") outside " + shape_string(a.value()));
	Matrix out = a.value().middleCols(start, count);
	return a.tape()->record(std::move(out), {a}, [a, start, count](Tape& t, int self) {
		Matrix g = Matrix::Zero(a.rows(), a.cols());
		g.middleCols(start, count) = t.grad(self);
		t.accumulate(a.id(), g);
	});
}

Var mesh_mix(Var kernel, Var x)
{
	const Eigen::Index q = kernel.rows();
	const Eigen::Index p = kernel.cols();
	if (p == 0 || x.rows() % p != 0)
		throw DimensionError("mesh_mix: kernel " + shape_string(kernel.value()) +
		                     " incompatible with stacked input " + shape_string(x.value()));
	const Eigen::Index batch = x.rows() / p;
	const Matrix& a = kernel.value();
	const Matrix& xv = x.value();
	Matrix out(batch * q, xv.cols());
	for (Eigen::Index b = 0; b < batch; ++b)
		out.middleRows(b * q, q).noalias() = a * xv.middleRows(b * p, p);
	return kernel.tape()->record(std::move(out), {kernel, x}, [kernel, x, batch, p, q](Tape& t, int self) {
		const Matrix& g = t.grad(self);
		const Matrix& a = kernel.value();
		const Matrix& xv = x.value();
		if (t.requires_grad(kernel.id())) {
			Matrix ga = Matrix::Zero(q, p);
			for (Eigen::Index b = 0; b < batch; ++b)
				ga.noalias() += g.middleRows(b * q, q) * xv.middleRows(b * p, p).transpose();
			t.accumulate(kernel.id(), ga);
		}
		if (t.requires_grad(x.id())) {
			Matrix gx(batch * p, xv.cols());
			for (Eigen::Index b = 0; b < batch; ++b)
				gx.middleRows(b * p, p).noalias() = a.transpose() * g.middleRows(b * q, q);
			t.accumulate(x.id(), gx);
		}
	});
}

} // namespace fml
