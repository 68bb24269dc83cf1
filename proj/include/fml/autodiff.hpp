#pragma once

// Reverse-mode automatic differentiation over dense row-major matrices.
//
// A Tape records every operation of one forward pass (define-by-run). Calling
// backward() on a scalar node walks the tape in reverse and accumulates
// gradients into the ParamSet entries that were bound with Tape::param().
// Every tensor is rank <= 2; vectors are stored as 1 x n rows.

#include <Eigen/Core>

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

namespace fml {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;
using Vector = Eigen::VectorXd;

std::string shape_string(Eigen::Index rows, Eigen::Index cols);

template <typename Derived>
std::string shape_string(const Eigen::EigenBase<Derived>& m)
{
	return shape_string(m.rows(), m.cols());
}

/// Named trainable tensors with stable insertion order and matching gradient
/// buffers.
class ParamSet {
public:
	struct Entry {
		std::string name;
		int rank = 2; ///< 1 for vectors stored as 1 x n, 2 otherwise
		Matrix value;
		Matrix grad;
	};

	/// Appends a parameter. Throws ContractError on a duplicate name.
	std::size_t add(std::string name, Matrix value, int rank = 2);

	std::size_t size() const { return entries_.size(); }
	bool empty() const { return entries_.empty(); }

	Entry& operator[](std::size_t i) { return entries_[i]; }
	const Entry& operator[](std::size_t i) const { return entries_[i]; }

	/// Index of `name`, or size() when absent.
	std::size_t index_of(const std::string& name) const;
	const Entry& at(const std::string& name) const;
	Entry& at(const std::string& name);
	bool contains(const std::string& name) const { return index_of(name) < size(); }

	auto begin() { return entries_.begin(); }
	auto end() { return entries_.end(); }
	auto begin() const { return entries_.begin(); }
	auto end() const { return entries_.end(); }

	void zero_grad();

	/// Total number of scalar parameters.
	std::size_t scalar_count() const;
	/// k-th scalar in insertion order (row-major inside each entry).
	double& scalar(std::size_t k);
	double grad_scalar(std::size_t k) const;

	/// Global l2 norm of all gradient buffers.
	double grad_norm() const;

private:
	std::vector<Entry> entries_;
};

class Tape;

/// Handle to a node recorded on a Tape.
class Var {
public:
	Var() = default;

	const Matrix& value() const;
	/// Gradient after backward(); zero-sized if never reached.
	const Matrix& grad() const;
	Eigen::Index rows() const { return value().rows(); }
	Eigen::Index cols() const { return value().cols(); }
	double scalar() const { return value()(0, 0); }

	Tape* tape() const { return tape_; }
	int id() const { return id_; }
	bool valid() const { return tape_ != nullptr; }

private:
	friend class Tape;
	Var(Tape* tape, int id) : tape_(tape), id_(id) {}

	Tape* tape_ = nullptr;
	int id_ = -1;
};

class Tape {
public:
	using BackwardFn = std::function<void(Tape&, int self)>;

	Tape() = default;
	Tape(const Tape&) = delete;
	Tape& operator=(const Tape&) = delete;

	/// Detached value: takes part in the forward pass only.
	Var constant(Matrix value);
	/// Leaf whose gradient is tracked but not written to any ParamSet.
	Var variable(Matrix value);
	/// Leaf bound to params[index]; backward() accumulates into its grad.
	Var param(ParamSet& params, std::size_t index);
	/// Binds every entry of `params`, in order.
	std::vector<Var> bind(ParamSet& params);

	/// Seeds d(seed)/d(seed) = 1 and propagates. The seed must be 1 x 1.
	/// Gradients are accumulated (not overwritten) into bound ParamSets.
	void backward(Var seed);

	std::size_t size() const { return nodes_.size(); }

	// Building blocks for operations.
	Var record(Matrix value, std::initializer_list<Var> inputs, BackwardFn fn);
	Var record(Matrix value, const std::vector<Var>& inputs, BackwardFn fn);
	const Matrix& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
	const Matrix& grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }
	bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
	/// grad[id] += g, allocating the buffer on first use.
	void accumulate(int id, const Matrix& g);
	template <typename Expr>
	void accumulate_expr(int id, const Expr& g)
	{
		auto& node = nodes_[static_cast<std::size_t>(id)];
		if (!node.requires_grad)
			return;
		if (node.grad.size() == 0)
			node.grad = g;
		else
			node.grad += g;
	}

private:
	struct Node {
		Matrix value;
		Matrix grad;
		bool requires_grad = false;
		BackwardFn backward;
		ParamSet* params = nullptr;
		std::size_t param_index = 0;
	};

	Var push(Node node);
	std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Scalar activations (shared by the tape ops and straight-line evaluation).

/// erf via the Abramowitz-Stegun 7.1.26 rational approximation.
double erf_as(double x);
/// Exact derivative of erf_as.
double erf_as_derivative(double x);
/// x * Phi(x) with Phi computed from erf_as.
double gelu(double x);
double gelu_derivative(double x);
double softplus(double x);
double inverse_softplus(double y);

enum class Activation { tanh, relu, gelu };

Activation parse_activation(const std::string& name);
std::string to_string(Activation a);
/// Applies the activation elementwise without a tape.
Matrix activate(const Matrix& x, Activation a);

// ---------------------------------------------------------------------------
// Tape operations. All operands must live on the same tape.

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double c);
Var exp(Var a);
Var tanh(Var a);
Var relu(Var a);
Var gelu(Var a);
Var softplus(Var a);
Var activate(Var a, Activation act);

/// a (m x n) + bias (1 x n) broadcast over rows.
Var add_row(Var a, Var bias);
/// a (m x n) scaled row-wise by c (m x 1).
Var mul_col(Var a, Var c);
/// a scaled by the 1 x 1 node s.
Var scale_by(Var a, Var s);

Var softmax_rows(Var a);
Matrix softmax_rows(const Matrix& a);

Var sum(Var a);
Var mean(Var a);
Var sum_of_squares(Var a);

Var concat_cols(Var a, Var b);
Var concat_cols(const std::vector<Var>& parts);
Var slice_cols(Var a, Eigen::Index start, Eigen::Index count);

/// Applies the kernel A (q x p) to each of the row blocks of X ((B p) x d),
/// producing (B q) x d. Used for batched mesh-to-mesh attention.
Var mesh_mix(Var kernel, Var x);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(double c, Var a) { return scale(a, c); }
inline Var operator*(Var a, double c) { return scale(a, c); }
inline Var operator-(Var a) { return scale(a, -1.0); }

// Plain-matrix counterparts so that generic code can run with or without a tape.
inline double sum_of_squares(const Matrix& a) { return a.squaredNorm(); }

} // namespace fml
