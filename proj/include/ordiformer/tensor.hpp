#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace ordiformer {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using RowVectorX = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using Matrix = MatrixX<float>;
using RowVector = RowVectorX<float>;

struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct DomainError : std::domain_error {
    using std::domain_error::domain_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct UsageError : std::logic_error {
    using std::logic_error::logic_error;
};
struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct InputError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// A named trainable array. `decay` marks weights (as opposed to biases,
/// norms and embeddings) for the explicit L2 term.
struct Parameter {
    std::string name;
    Matrix value;
    Matrix grad;
    bool trainable = true;
    bool decay = true;

    Parameter() = default;
    Parameter(std::string n, Matrix v, bool decay_ = true)
        : name(std::move(n)), value(std::move(v)), grad(Matrix::Zero(value.rows(), value.cols())), decay(decay_) {}

    void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; valid as long as the
/// tape lives.
class Tensor {
   public:
    Tensor() = default;

    const Matrix& value() const;
    const Matrix& grad() const;
    Eigen::Index rows() const { return value().rows(); }
    Eigen::Index cols() const { return value().cols(); }
    std::vector<std::size_t> shape() const;
    std::size_t node_id() const { return id_; }
    Tape* tape() const { return tape_; }
    bool valid() const { return tape_ != nullptr; }

   private:
    friend class Tape;
    Tensor(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

/// Dynamic reverse-mode tape. Nodes are appended in evaluation order, so the
/// recording is already topologically sorted.
class Tape {
   public:
    using BackwardFn = std::function<void(Tape&, std::size_t self)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Tensor constant(Matrix value);
    /// Leaf that receives a gradient but is not tied to a Parameter.
    Tensor variable(Matrix value);
    /// Leaf bound to a Parameter; one node per parameter per tape.
    Tensor param(Parameter& p);

    /// Fills gradients of every node reachable from `root` and writes
    /// parameter gradients. Parameters registered on this tape but not
    /// reachable get zero gradients.
    void backward(const Tensor& root);

    std::size_t size() const { return nodes_.size(); }
    const Matrix& value(std::size_t id) const { return nodes_[id].value; }
    const Matrix& grad(std::size_t id) const { return nodes_[id].grad; }
    Matrix& grad_mut(std::size_t id) { return nodes_[id].grad; }
    const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_[id].inputs; }
    bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
    const std::string& op_name(std::size_t id) const { return nodes_[id].op; }

    /// Appends an op node. Throws NumericError if `value` has non-finite
    /// entries.
    Tensor record(std::string op, Matrix value, std::vector<std::size_t> inputs, BackwardFn backward);

    Tensor handle(std::size_t id) { return Tensor(this, id); }

   private:
    struct Node {
        std::string op;
        Matrix value;
        Matrix grad;
        std::vector<std::size_t> inputs;
        BackwardFn backward;
        Parameter* param = nullptr;
        bool needs_grad = false;
    };

    Tensor push_leaf(std::string op, Matrix value, bool needs_grad, Parameter* p);

    std::vector<Node> nodes_;
    std::unordered_map<const Parameter*, std::size_t> param_nodes_;
};

void check_finite(const Matrix& m, const std::string& where);

// Elementwise binary ops require equal shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

enum class ElementwiseKind { add, mul, sub, sigmoid, exp, log, gelu, softplus };

/// Dispatch form over the unary kinds.
Tensor elementwise(ElementwiseKind kind, const Tensor& a);
/// Dispatch form over the binary kinds.
Tensor elementwise(ElementwiseKind kind, const Tensor& a, const Tensor& b);

Tensor sigmoid(const Tensor& x);
Tensor exp(const Tensor& x);
/// Throws DomainError on any non-positive entry.
Tensor log(const Tensor& x);
/// tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
Tensor gelu(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor clamp_min(const Tensor& x, float floor);

Tensor scale(const Tensor& x, float s);
Tensor add_scalar(const Tensor& x, float s);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);

/// x[m x n] + row[1 x n] broadcast over rows.
Tensor add_row(const Tensor& x, const Tensor& row);
/// x[m x n] * col[m x 1] broadcast over columns.
Tensor mul_col(const Tensor& x, const Tensor& col);

/// axis 1: each row sums to one; axis 0: each column sums to one.
Tensor softmax(const Tensor& x, int axis = 1);
Tensor log_softmax(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// axis 0 collapses rows (result 1 x n); axis 1 collapses columns (m x 1).
Tensor sum(const Tensor& x, int axis);
Tensor mean(const Tensor& x, int axis);

/// Normalizes over the last axis then applies gain/bias (both 1 x n).
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps = 1e-5f);

/// Rows scaled to unit L2 norm. Throws NumericError on a zero row.
Tensor normalize_rows(const Tensor& x);
/// Rows divided by their sum; an all-zero row becomes uniform.
Tensor normalize_distribution_rows(const Tensor& x);

Tensor slice_cols(const Tensor& x, Eigen::Index start, Eigen::Index count);
Tensor slice_rows(const Tensor& x, Eigen::Index start, Eigen::Index count);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor concat_rows(const std::vector<Tensor>& parts);

/// Per-row KL(p || q) with q floored at `floor` before the log and
/// 0 log 0 := 0. Result is m x 1.
Tensor kl_divergence_rows(const Tensor& p, const Tensor& q, float floor = 1e-8f);

}  // namespace ordiformer
