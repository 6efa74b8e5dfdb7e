#include "ordiformer/tensor.hpp"

#include <cmath>
#include <sstream>

namespace ordiformer {

namespace {

std::string shape_str(const Matrix& m) {
    std::ostringstream os;
    os << "[" << m.rows() << "x" << m.cols() << "]";
    return os.str();
}

void require_same_tape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.tape() != b.tape()) {
        throw UsageError(std::string(op) + ": operands recorded on different tapes");
    }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    require_same_tape(a, b, op);
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.value()) + " vs " +
                             shape_str(b.value()));
    }
}

template <typename Expr>
void accumulate(Tape& t, std::size_t id, const Expr& g) {
    if (t.needs_grad(id)) t.grad_mut(id) += g;
}

float sigmoid_scalar(float x) {
    if (x >= 0.0f) return 1.0f / (1.0f + std::exp(-x));
    const float e = std::exp(x);
    return e / (1.0f + e);
}

float softplus_scalar(float x) { return std::max(x, 0.0f) + std::log1p(std::exp(-std::abs(x))); }

constexpr float kGeluK = 0.7978845608028654f;  // sqrt(2/pi)
constexpr float kGeluA = 0.044715f;

float gelu_scalar(float x) {
    return 0.5f * x * (1.0f + std::tanh(kGeluK * (x + kGeluA * x * x * x)));
}

float gelu_grad_scalar(float x) {
    const float t = std::tanh(kGeluK * (x + kGeluA * x * x * x));
    return 0.5f * (1.0f + t) + 0.5f * x * (1.0f - t * t) * kGeluK * (1.0f + 3.0f * kGeluA * x * x);
}

}  // namespace

const Matrix& Tensor::value() const { return tape_->value(id_); }
const Matrix& Tensor::grad() const { return tape_->grad(id_); }

std::vector<std::size_t> Tensor::shape() const {
    return {static_cast<std::size_t>(rows()), static_cast<std::size_t>(cols())};
}

void check_finite(const Matrix& m, const std::string& where) {
    if (!m.allFinite()) {
        throw NumericError("non-finite value produced by " + where + " " + shape_str(m));
    }
}

Tensor Tape::push_leaf(std::string op, Matrix value, bool needs_grad, Parameter* p) {
    check_finite(value, op);
    Node n;
    n.op = std::move(op);
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    n.param = p;
    nodes_.push_back(std::move(n));
    return Tensor(this, nodes_.size() - 1);
}

Tensor Tape::constant(Matrix value) { return push_leaf("constant", std::move(value), false, nullptr); }

Tensor Tape::variable(Matrix value) { return push_leaf("variable", std::move(value), true, nullptr); }

Tensor Tape::param(Parameter& p) {
    if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Tensor(this, it->second);
    Tensor t = push_leaf("param:" + p.name, p.value, p.trainable, &p);
    param_nodes_.emplace(&p, t.node_id());
    return t;
}

Tensor Tape::record(std::string op, Matrix value, std::vector<std::size_t> inputs, BackwardFn backward) {
    check_finite(value, op);
    bool needs = false;
    for (std::size_t i : inputs) needs = needs || nodes_[i].needs_grad;
    Node n;
    n.op = std::move(op);
    n.value = std::move(value);
    n.inputs = std::move(inputs);
    n.needs_grad = needs;
    if (needs) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Tensor(this, nodes_.size() - 1);
}

void Tape::backward(const Tensor& root) {
    if (root.tape() != this) throw UsageError("backward: root belongs to another tape");
    if (root.rows() != 1 || root.cols() != 1) {
        throw UsageError("backward: root must be scalar, got " + shape_str(root.value()));
    }
    for (auto& n : nodes_) {
        if (n.needs_grad) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
    }
    const std::size_t r = root.node_id();
    if (nodes_[r].needs_grad) {
        nodes_[r].grad(0, 0) = 1.0f;
        for (std::size_t i = r + 1; i-- > 0;) {
            if (nodes_[i].needs_grad && nodes_[i].backward) nodes_[i].backward(*this, i);
        }
    }
    for (auto& n : nodes_) {
        if (n.param != nullptr && n.param->trainable) n.param->grad = n.grad;
    }
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    return a.tape()->record("add", a.value() + b.value(), {a.node_id(), b.node_id()}, [](Tape& t, std::size_t s) {
        const auto& in = t.inputs(s);
        accumulate(t, in[0], t.grad(s));
        accumulate(t, in[1], t.grad(s));
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    return a.tape()->record("sub", a.value() - b.value(), {a.node_id(), b.node_id()}, [](Tape& t, std::size_t s) {
        const auto& in = t.inputs(s);
        accumulate(t, in[0], t.grad(s));
        accumulate(t, in[1], -t.grad(s));
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    Matrix v = a.value().cwiseProduct(b.value());
    return a.tape()->record("mul", std::move(v), {a.node_id(), b.node_id()}, [](Tape& t, std::size_t s) {
        const auto& in = t.inputs(s);
        accumulate(t, in[0], t.grad(s).cwiseProduct(t.value(in[1])));
        accumulate(t, in[1], t.grad(s).cwiseProduct(t.value(in[0])));
    });
}

Tensor sigmoid(const Tensor& x) {
    Matrix v = x.value().unaryExpr(&sigmoid_scalar);
    return x.tape()->record("sigmoid", std::move(v), {x.node_id()}, [](Tape& t, std::size_t s) {
        const Matrix& y = t.value(s);
        accumulate(t, t.inputs(s)[0], t.grad(s).cwiseProduct(y.cwiseProduct((1.0f - y.array()).matrix())));
    });
}

Tensor exp(const Tensor& x) {
    Matrix v = x.value().array().exp().matrix();
    return x.tape()->record("exp", std::move(v), {x.node_id()}, [](Tape& t, std::size_t s) {
        accumulate(t, t.inputs(s)[0], t.grad(s).cwiseProduct(t.value(s)));
    });
}

Tensor log(const Tensor& x) {
    if ((x.value().array() <= 0.0f).any()) throw DomainError("log: non-positive input");
    Matrix v = x.value().array().log().matrix();
    return x.tape()->record("log", std::move(v), {x.node_id()}, [](Tape& t, std::size_t s) {
        const auto in = t.inputs(s)[0];
        accumulate(t, in, t.grad(s).cwiseQuotient(t.value(in)));
    });
}

Tensor gelu(const Tensor& x) {
    Matrix v = x.value().unaryExpr(&gelu_scalar);
    return x.tape()->record("gelu", std::move(v), {x.node_id()}, [](Tape& t, std::size_t s) {
        const auto in = t.inputs(s)[0];
        accumulate(t, in, t.grad(s).cwiseProduct(t.value(in).unaryExpr(&gelu_grad_scalar)));
    });
}

Tensor softplus(const Tensor& x) {
    Matrix v = x.value().unaryExpr(&softplus_scalar);
    return x.tape()->record("softplus", std::move(v), {x.node_id()}, [](Tape& t, std::size_t s) {
        const auto in = t.inputs(s)[0];
        accumulate(t, in, t.grad(s).cwiseProduct(t.value(in).unaryExpr(&sigmoid_scalar)));
    });
}

Tensor clamp_min(const Tensor& x, float floor) {
    Matrix v = x.value().cwiseMax(floor);
    return x.tape()->record("clamp_min", std::move(v), {x.node_id()}, [floor](Tape& t, std::size_t s) {
        const auto in = t.inputs(s)[0];
        Matrix mask = (t.value(in).array() > floor).cast<float>().matrix();
        accumulate(t, in, t.grad(s).cwiseProduct(mask));
    });
}

Tensor relu(const Tensor& x) { return clamp_min(x, 0.0f); }

Tensor elementwise(ElementwiseKind kind, const Tensor& a) {
    switch (kind) {
        case ElementwiseKind::sigmoid: return sigmoid(a);
        case ElementwiseKind::exp: return exp(a);
        case ElementwiseKind::log: return log(a);
        case ElementwiseKind::gelu: return gelu(a);
        case ElementwiseKind::softplus: return softplus(a);
        default: throw UsageError("elementwise: binary kind given one operand");
    }
}

Tensor elementwise(ElementwiseKind kind, const Tensor& a, const Tensor& b) {
    switch (kind) {
        case ElementwiseKind::add: return add(a, b);
        case ElementwiseKind::sub: return sub(a, b);
        case ElementwiseKind::mul: return mul(a, b);
        default: throw UsageError("elementwise: unary kind given two operands");
    }
}

Tensor scale(const Tensor& x, float c) {
    return x.tape()->record("scale", x.value() * c, {x.node_id()}, [c](Tape& t, std::size_t s) {
        accumulate(t, t.inputs(s)[0], t.grad(s) * c);
    });
}

Tensor add_scalar(const Tensor& x, float c) {
    Matrix v = (x.value().array() + c).matrix();
    return x.tape()->record("add_scalar", std::move(v), {x.node_id()}, [](Tape& t, std::size_t s) {
        accumulate(t, t.inputs(s)[0], t.grad(s));
    });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_same_tape(a, b, "matmul");
    if (a.cols() != b.rows()) {
        throw DimensionError("matmul: inner extents differ " + shape_str(a.value()) + " * " + shape_str(b.value()));
    }
    // Dot products accumulate in double like every other reduction.
    Matrix v = (a.value().cast<double>() * b.value().cast<double>()).cast<float>();
    return a.tape()->record("matmul", std::move(v), {a.node_id(), b.node_id()}, [](Tape& t, std::size_t s) {
        const auto& in = t.inputs(s);
        if (t.needs_grad(in[0])) t.grad_mut(in[0]).noalias() += t.grad(s) * t.value(in[1]).transpose();
        if (t.needs_grad(in[1])) t.grad_mut(in[1]).noalias() += t.value(in[0]).transpose() * t.grad(s);
    });
}

Tensor transpose(const Tensor& x) {
    Matrix v = x.value().transpose();
    return x.tape()->record("transpose", std::move(v), {x.node_id()}, [](Tape& t, std::size_t s) {
        accumulate(t, t.inputs(s)[0], t.grad(s).transpose());
    });
}

Tensor add_row(const Tensor& x, const Tensor& row) {
    require_same_tape(x, row, "add_row");
    if (row.rows() != 1 || row.cols() != x.cols()) {
        throw DimensionError("add_row: " + shape_str(row.value()) + " cannot broadcast over " + shape_str(x.value()));
    }
    Matrix v = x.value().rowwise() + row.value().row(0);
    return x.tape()->record("add_row", std::move(v), {x.node_id(), row.node_id()}, [](Tape& t, std::size_t s) {
        const auto& in = t.inputs(s);
        accumulate(t, in[0], t.grad(s));
        if (t.needs_grad(in[1])) {
            t.grad_mut(in[1]) += t.grad(s).cast<double>().colwise().sum().cast<float>();
        }
    });
}

Tensor mul_col(const Tensor& x, const Tensor& col) {
    require_same_tape(x, col, "mul_col");
    if (col.cols() != 1 || col.rows() != x.rows()) {
        throw DimensionError("mul_col: " + shape_str(col.value()) + " cannot broadcast over " + shape_str(x.value()));
    }
    Matrix v = x.value().array().colwise() * col.value().col(0).array();
    return x.tape()->record("mul_col", std::move(v), {x.node_id(), col.node_id()}, [](Tape& t, std::size_t s) {
        const auto& in = t.inputs(s);
        if (t.needs_grad(in[0])) {
            t.grad_mut(in[0]) += (t.grad(s).array().colwise() * t.value(in[1]).col(0).array()).matrix();
        }
        if (t.needs_grad(in[1])) {
            t.grad_mut(in[1]) +=
                t.grad(s).cwiseProduct(t.value(in[0])).cast<double>().rowwise().sum().cast<float>();
        }
    });
}

namespace {

Matrix softmax_rows(const Matrix& x) {
    Matrix y(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const float m = x.row(i).maxCoeff();
        auto e = (x.row(i).array() - m).exp();
        y.row(i) = (e / static_cast<float>(e.cast<double>().sum())).matrix();
    }
    return y;
}

}  // namespace

Tensor softmax(const Tensor& x, int axis) {
    if (axis != 0 && axis != 1) throw DimensionError("softmax: axis must be 0 or 1");
    if (x.rows() == 0 || x.cols() == 0) throw DomainError("softmax: empty input");
    Matrix v = axis == 1 ? softmax_rows(x.value()) : Matrix(softmax_rows(x.value().transpose()).transpose());
    return x.tape()->record("softmax", std::move(v), {x.node_id()}, [axis](Tape& t, std::size_t s) {
        const Matrix& y = t.value(s);
        const Matrix& g = t.grad(s);
        Matrix gy = g.cwiseProduct(y);
        Matrix dx;
        if (axis == 1) {
            Eigen::VectorXf dot = gy.cast<double>().rowwise().sum().cast<float>();
            dx = (y.array() * (g.array().colwise() - dot.array())).matrix();
        } else {
            RowVector dot = gy.cast<double>().colwise().sum().cast<float>();
            dx = (y.array() * (g.array().rowwise() - dot.array())).matrix();
        }
        accumulate(t, t.inputs(s)[0], dx);
    });
}

Tensor log_softmax(const Tensor& x) {
    if (x.rows() == 0 || x.cols() == 0) throw DomainError("log_softmax: empty input");
    const Matrix& in = x.value();
    Matrix v(in.rows(), in.cols());
    for (Eigen::Index i = 0; i < in.rows(); ++i) {
        const float m = in.row(i).maxCoeff();
        const double lse = std::log((in.row(i).array() - m).cast<double>().exp().sum());
        v.row(i) = (in.row(i).array() - m - static_cast<float>(lse)).matrix();
    }
    return x.tape()->record("log_softmax", std::move(v), {x.node_id()}, [](Tape& t, std::size_t s) {
        const Matrix& g = t.grad(s);
        Matrix p = t.value(s).array().exp().matrix();
        Eigen::VectorXf gs = g.cast<double>().rowwise().sum().cast<float>();
        accumulate(t, t.inputs(s)[0], (g.array() - p.array().colwise() * gs.array()).matrix());
    });
}

Tensor sum(const Tensor& x) {
    Matrix v(1, 1);
    v(0, 0) = static_cast<float>(x.value().cast<double>().sum());
    return x.tape()->record("sum", std::move(v), {x.node_id()}, [](Tape& t, std::size_t s) {
        const auto in = t.inputs(s)[0];
        if (t.needs_grad(in)) t.grad_mut(in).array() += t.grad(s)(0, 0);
    });
}

Tensor mean(const Tensor& x) {
    const auto n = x.value().size();
    if (n == 0) throw DomainError("mean: empty reduction");
    Matrix v(1, 1);
    v(0, 0) = static_cast<float>(x.value().cast<double>().sum() / static_cast<double>(n));
    return x.tape()->record("mean", std::move(v), {x.node_id()}, [n](Tape& t, std::size_t s) {
        const auto in = t.inputs(s)[0];
        if (t.needs_grad(in)) t.grad_mut(in).array() += t.grad(s)(0, 0) / static_cast<float>(n);
    });
}

Tensor sum(const Tensor& x, int axis) {
    if (axis != 0 && axis != 1) throw DimensionError("sum: axis must be 0 or 1");
    Matrix v = axis == 0 ? Matrix(x.value().cast<double>().colwise().sum().cast<float>())
                         : Matrix(x.value().cast<double>().rowwise().sum().cast<float>());
    return x.tape()->record("sum_axis", std::move(v), {x.node_id()}, [axis](Tape& t, std::size_t s) {
        const auto in = t.inputs(s)[0];
        if (!t.needs_grad(in)) return;
        if (axis == 0) {
            t.grad_mut(in).rowwise() += t.grad(s).row(0);
        } else {
            t.grad_mut(in).colwise() += t.grad(s).col(0);
        }
    });
}

Tensor mean(const Tensor& x, int axis) {
    if (axis != 0 && axis != 1) throw DimensionError("mean: axis must be 0 or 1");
    const auto n = axis == 0 ? x.rows() : x.cols();
    if (n == 0) throw DomainError("mean: empty reduction");
    return scale(sum(x, axis), 1.0f / static_cast<float>(n));
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps) {
    require_same_tape(x, gain, "layer_norm");
    require_same_tape(x, bias, "layer_norm");
    if (eps <= 0.0f) throw DomainError("layer_norm: eps must be positive");
    const Eigen::Index n = x.cols();
    if (gain.rows() != 1 || gain.cols() != n || bias.rows() != 1 || bias.cols() != n) {
        throw DimensionError("layer_norm: gain/bias must be 1x" + std::to_string(n));
    }
    const Matrix& in = x.value();
    Matrix xhat(in.rows(), n);
    Eigen::VectorXf inv_std(in.rows());
    for (Eigen::Index i = 0; i < in.rows(); ++i) {
        const auto row = in.row(i).cast<double>();
        const double mu = row.mean();
        const double var = (row.array() - mu).square().mean();
        const double inv = 1.0 / std::sqrt(var + static_cast<double>(eps));
        inv_std(i) = static_cast<float>(inv);
        xhat.row(i) = ((row.array() - mu) * inv).cast<float>().matrix();
    }
    Matrix v = (xhat.array().rowwise() * gain.value().row(0).array()).rowwise() + bias.value().row(0).array();
    return x.tape()->record(
        "layer_norm", std::move(v), {x.node_id(), gain.node_id(), bias.node_id()},
        [xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, std::size_t s) {
            const auto& in = t.inputs(s);
            const Matrix& g = t.grad(s);
            if (t.needs_grad(in[1])) {
                t.grad_mut(in[1]) += g.cwiseProduct(xhat).cast<double>().colwise().sum().cast<float>();
            }
            if (t.needs_grad(in[2])) t.grad_mut(in[2]) += g.cast<double>().colwise().sum().cast<float>();
            if (!t.needs_grad(in[0])) return;
            const Matrix dxhat = g.array().rowwise() * t.value(in[1]).row(0).array();
            const double n = static_cast<double>(g.cols());
            Matrix dx(g.rows(), g.cols());
            for (Eigen::Index i = 0; i < g.rows(); ++i) {
                const auto d = dxhat.row(i).cast<double>();
                const auto xh = xhat.row(i).cast<double>();
                const double sum_d = d.sum();
                const double sum_dx = d.cwiseProduct(xh).sum();
                dx.row(i) = ((n * d.array() - sum_d - xh.array() * sum_dx) * (inv_std(i) / n)).cast<float>().matrix();
            }
            t.grad_mut(in[0]) += dx;
        });
}

Tensor normalize_rows(const Tensor& x) {
    const Matrix& in = x.value();
    Eigen::VectorXf norms = in.cast<double>().rowwise().norm().cast<float>();
    if ((norms.array() <= 0.0f).any()) throw NumericError("normalize_rows: zero-norm row");
    Matrix v = in.array().colwise() / norms.array();
    return x.tape()->record("normalize_rows", std::move(v), {x.node_id()},
                            [norms = std::move(norms)](Tape& t, std::size_t s) {
                                const Matrix& y = t.value(s);
                                const Matrix& g = t.grad(s);
                                Eigen::VectorXf dot = g.cwiseProduct(y).cast<double>().rowwise().sum().cast<float>();
                                Matrix dx = ((g.array() - y.array().colwise() * dot.array()).colwise() /
                                             norms.array())
                                                .matrix();
                                accumulate(t, t.inputs(s)[0], dx);
                            });
}

Tensor normalize_distribution_rows(const Tensor& x) {
    const Matrix& in = x.value();
    Eigen::VectorXf sums = in.cast<double>().rowwise().sum().cast<float>();
    Matrix v(in.rows(), in.cols());
    for (Eigen::Index i = 0; i < in.rows(); ++i) {
        if (sums(i) > 0.0f) {
            v.row(i) = in.row(i) / sums(i);
        } else {
            v.row(i).setConstant(1.0f / static_cast<float>(in.cols()));
        }
    }
    return x.tape()->record("normalize_distribution_rows", std::move(v), {x.node_id()},
                            [sums = std::move(sums)](Tape& t, std::size_t s) {
                                const Matrix& y = t.value(s);
                                const Matrix& g = t.grad(s);
                                Matrix dx = Matrix::Zero(g.rows(), g.cols());
                                for (Eigen::Index i = 0; i < g.rows(); ++i) {
                                    if (sums(i) <= 0.0f) continue;
                                    const float dot = static_cast<float>(g.row(i).cast<double>().dot(y.row(i).cast<double>()));
                                    dx.row(i) = (g.row(i).array() - dot) / sums(i);
                                }
                                accumulate(t, t.inputs(s)[0], dx);
                            });
}

Tensor slice_cols(const Tensor& x, Eigen::Index start, Eigen::Index count) {
    if (start < 0 || count < 0 || start + count > x.cols()) {
        throw DimensionError("slice_cols: range out of bounds for " + shape_str(x.value()));
    }
    Matrix v = x.value().middleCols(start, count);
    return x.tape()->record("slice_cols", std::move(v), {x.node_id()}, [start, count](Tape& t, std::size_t s) {
        const auto in = t.inputs(s)[0];
        if (t.needs_grad(in)) t.grad_mut(in).middleCols(start, count) += t.grad(s);
    });
}

Tensor slice_rows(const Tensor& x, Eigen::Index start, Eigen::Index count) {
    if (start < 0 || count < 0 || start + count > x.rows()) {
        throw DimensionError("slice_rows: range out of bounds for " + shape_str(x.value()));
    }
    Matrix v = x.value().middleRows(start, count);
    return x.tape()->record("slice_rows", std::move(v), {x.node_id()}, [start, count](Tape& t, std::size_t s) {
        const auto in = t.inputs(s)[0];
        if (t.needs_grad(in)) t.grad_mut(in).middleRows(start, count) += t.grad(s);
    });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw DimensionError("concat_cols: no operands");
    Eigen::Index cols = 0;
    std::vector<std::size_t> ids;
    for (const auto& p : parts) {
        require_same_tape(parts[0], p, "concat_cols");
        if (p.rows() != parts[0].rows()) throw DimensionError("concat_cols: row counts differ");
        cols += p.cols();
        ids.push_back(p.node_id());
    }
    Matrix v(parts[0].rows(), cols);
    Eigen::Index at = 0;
    for (const auto& p : parts) {
        v.middleCols(at, p.cols()) = p.value();
        at += p.cols();
    }
    return parts[0].tape()->record("concat_cols", std::move(v), std::move(ids), [](Tape& t, std::size_t s) {
        Eigen::Index off = 0;
        for (std::size_t in : t.inputs(s)) {
            const auto c = t.value(in).cols();
            if (t.needs_grad(in)) t.grad_mut(in) += t.grad(s).middleCols(off, c);
            off += c;
        }
    });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw DimensionError("concat_rows: no operands");
    Eigen::Index rows = 0;
    std::vector<std::size_t> ids;
    for (const auto& p : parts) {
        require_same_tape(parts[0], p, "concat_rows");
        if (p.cols() != parts[0].cols()) throw DimensionError("concat_rows: column counts differ");
        rows += p.rows();
        ids.push_back(p.node_id());
    }
    Matrix v(rows, parts[0].cols());
    Eigen::Index at = 0;
    for (const auto& p : parts) {
        v.middleRows(at, p.rows()) = p.value();
        at += p.rows();
    }
    return parts[0].tape()->record("concat_rows", std::move(v), std::move(ids), [](Tape& t, std::size_t s) {
        Eigen::Index off = 0;
        for (std::size_t in : t.inputs(s)) {
            const auto r = t.value(in).rows();
            if (t.needs_grad(in)) t.grad_mut(in) += t.grad(s).middleRows(off, r);
            off += r;
        }
    });
}

Tensor kl_divergence_rows(const Tensor& p, const Tensor& q, float floor) {
    require_same_shape(p, q, "kl_divergence_rows");
    const Matrix& pv = p.value();
    const Matrix qf = q.value().cwiseMax(floor);
    Matrix v(pv.rows(), 1);
    for (Eigen::Index i = 0; i < pv.rows(); ++i) {
        double acc = 0.0;
        for (Eigen::Index c = 0; c < pv.cols(); ++c) {
            const double pc = pv(i, c);
            if (pc > 0.0) acc += pc * (std::log(pc) - std::log(static_cast<double>(qf(i, c))));
        }
        v(i, 0) = static_cast<float>(acc);
    }
    return p.tape()->record("kl_divergence_rows", std::move(v), {p.node_id(), q.node_id()},
                            [floor](Tape& t, std::size_t s) {
                                const auto& in = t.inputs(s);
                                const Matrix& pv = t.value(in[0]);
                                const Matrix& qv = t.value(in[1]);
                                const Matrix& g = t.grad(s);
                                Matrix dp = Matrix::Zero(pv.rows(), pv.cols());
                                Matrix dq = Matrix::Zero(pv.rows(), pv.cols());
                                for (Eigen::Index i = 0; i < pv.rows(); ++i) {
                                    for (Eigen::Index c = 0; c < pv.cols(); ++c) {
                                        const float pc = pv(i, c);
                                        const float qc = std::max(qv(i, c), floor);
                                        if (pc > 0.0f) dp(i, c) = g(i, 0) * (std::log(pc) - std::log(qc) + 1.0f);
                                        if (qv(i, c) > floor) dq(i, c) = -g(i, 0) * pc / qc;
                                    }
                                }
                                accumulate(t, in[0], dp);
                                accumulate(t, in[1], dq);
                            });
}

}  // namespace ordiformer
