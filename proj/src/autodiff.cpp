#include "mvhoi/autodiff.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace mvhoi::ad {

namespace {

void check_finite(const Matrix& m, const char* op) {
    if (!m.allFinite()) {
        throw std::domain_error(std::string("non-finite value produced by ") + op);
    }
}

Tape* tape_of(std::initializer_list<Var> vars) {
    Tape* t = nullptr;
    for (const Var& v : vars) {
        if (!v.valid()) {
            throw std::invalid_argument("invalid variable handle");
        }
        if (t != nullptr && v.tape != t) {
            throw std::invalid_argument("variables belong to different tapes");
        }
        t = v.tape;
    }
    return t;
}

enum class Broadcast { Full, Row, Col, Scalar };

Broadcast broadcast_kind(const Matrix& a, const Matrix& b, const char* op) {
    if (b.rows() == a.rows() && b.cols() == a.cols()) {
        return Broadcast::Full;
    }
    if (b.rows() == 1 && b.cols() == 1) {
        return Broadcast::Scalar;
    }
    if (b.rows() == 1 && b.cols() == a.cols()) {
        return Broadcast::Row;
    }
    if (b.cols() == 1 && b.rows() == a.rows()) {
        return Broadcast::Col;
    }
    throw std::invalid_argument(std::string("shape mismatch in ") + op + ": " + std::to_string(a.rows()) + "x" +
                                std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                                std::to_string(b.cols()));
}

// Expand b to a's shape.
Matrix expand(const Matrix& b, Index rows, Index cols, Broadcast kind) {
    switch (kind) {
    case Broadcast::Full:
        return b;
    case Broadcast::Row:
        return b.replicate(rows, 1);
    case Broadcast::Col:
        return b.replicate(1, cols);
    case Broadcast::Scalar:
        return Matrix::Constant(rows, cols, b(0, 0));
    }
    return b;
}

// Sum a full-shape gradient down to b's shape.
Matrix reduce(const Matrix& g, Broadcast kind) {
    switch (kind) {
    case Broadcast::Full:
        return g;
    case Broadcast::Row:
        return g.colwise().sum();
    case Broadcast::Col:
        return g.rowwise().sum();
    case Broadcast::Scalar:
        return Matrix::Constant(1, 1, g.sum());
    }
    return g;
}

} // namespace

const Matrix& Var::value() const { return tape->value(id); }

Tape::Tape(const ParamStore* params) : params_(params) {
    if (params_ != nullptr) {
        param_nodes_.assign(params_->size(), -1);
    }
}

Var Tape::record(Matrix value, std::vector<int> inputs, Backward backward, const char* op) {
    check_finite(value, op);
    const int id = static_cast<int>(nodes_.size());
    Node n;
    n.value = std::move(value);
    for (int in : inputs) {
        if (in < 0 || in >= id) {
            throw std::logic_error("tape order violated: input does not precede node");
        }
        n.needs_grad = n.needs_grad || nodes_[in].needs_grad;
    }
    n.inputs = std::move(inputs);
    if (n.needs_grad) {
        n.backward = std::move(backward);
    }
    nodes_.push_back(std::move(n));
    return Var{this, id};
}

Var Tape::constant(Matrix value) { return record(std::move(value), {}, nullptr, "constant"); }

Var Tape::input(Matrix value, bool requires_grad) {
    Var v = record(std::move(value), {}, nullptr, "input");
    nodes_[v.id].needs_grad = requires_grad;
    return v;
}

Var Tape::param(std::size_t id) {
    if (params_ == nullptr || id >= params_->size()) {
        throw std::out_of_range("parameter id not in attached store");
    }
    if (param_nodes_[id] >= 0) {
        return Var{this, param_nodes_[id]};
    }
    const Tensor& t = (*params_)[id];
    Var v = record(t.value(), {}, nullptr, params_->name(id).c_str());
    nodes_[v.id].needs_grad = t.requires_grad();
    nodes_[v.id].param_id = static_cast<long>(id);
    param_nodes_[id] = v.id;
    return v;
}

Var Tape::param(const std::string& name) {
    if (params_ == nullptr) {
        throw std::out_of_range("no parameter store attached");
    }
    return param(params_->id(name));
}

const Matrix& Tape::grad(Var v) const {
    static const Matrix empty;
    const Node& n = nodes_.at(v.id);
    return n.grad.size() == 0 ? empty : n.grad;
}

Gradients Tape::backward(Var loss) {
    if (loss.tape != this) {
        throw std::invalid_argument("loss belongs to another tape");
    }
    const Matrix& lv = value(loss.id);
    if (lv.rows() != 1 || lv.cols() != 1) {
        throw std::invalid_argument("backward requires a scalar loss");
    }
    if (backward_done_) {
        throw std::logic_error("tape already traversed");
    }
    backward_done_ = true;

    accumulate(loss.id, Matrix::Ones(1, 1));
    for (int i = loss.id; i >= 0; --i) {
        Node& n = nodes_[i];
        if (!n.needs_grad || n.grad.size() == 0 || !n.backward) {
            continue;
        }
        n.backward(*this, i);
    }

    Gradients out;
    if (params_ != nullptr) {
        out = zero_gradients(*params_);
        for (std::size_t p = 0; p < param_nodes_.size(); ++p) {
            const int node = param_nodes_[p];
            if (node >= 0 && nodes_[node].grad.size() != 0) {
                out[p] = nodes_[node].grad;
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------- elementwise

Var add(Var a, Var b) {
    Tape* t = tape_of({a, b});
    const Matrix& av = a.value();
    const Broadcast kind = broadcast_kind(av, b.value(), "add");
    Matrix out = av + expand(b.value(), av.rows(), av.cols(), kind);
    return t->record(std::move(out), {a.id, b.id},
                     [a = a.id, b = b.id, kind](Tape& tp, int self) {
                         const Matrix& g = tp.upstream(self);
                         tp.accumulate(a, g);
                         if (tp.needs_grad(b)) {
                             tp.accumulate(b, reduce(g, kind));
                         }
                     },
                     "add");
}

Var sub(Var a, Var b) {
    Tape* t = tape_of({a, b});
    const Matrix& av = a.value();
    const Broadcast kind = broadcast_kind(av, b.value(), "sub");
    Matrix out = av - expand(b.value(), av.rows(), av.cols(), kind);
    return t->record(std::move(out), {a.id, b.id},
                     [a = a.id, b = b.id, kind](Tape& tp, int self) {
                         const Matrix& g = tp.upstream(self);
                         tp.accumulate(a, g);
                         if (tp.needs_grad(b)) {
                             tp.accumulate(b, -reduce(g, kind));
                         }
                     },
                     "sub");
}

Var mul(Var a, Var b) {
    Tape* t = tape_of({a, b});
    const Matrix& av = a.value();
    const Broadcast kind = broadcast_kind(av, b.value(), "mul");
    Matrix out = av.cwiseProduct(expand(b.value(), av.rows(), av.cols(), kind));
    return t->record(std::move(out), {a.id, b.id},
                     [a = a.id, b = b.id, kind](Tape& tp, int self) {
                         const Matrix& g = tp.upstream(self);
                         const Matrix& av = tp.value(a);
                         if (tp.needs_grad(a)) {
                             tp.accumulate(a, g.cwiseProduct(expand(tp.value(b), av.rows(), av.cols(), kind)));
                         }
                         if (tp.needs_grad(b)) {
                             tp.accumulate(b, reduce(g.cwiseProduct(av), kind));
                         }
                     },
                     "mul");
}

Var div(Var a, Var b) {
    Tape* t = tape_of({a, b});
    const Matrix& av = a.value();
    const Broadcast kind = broadcast_kind(av, b.value(), "div");
    Matrix out = av.cwiseQuotient(expand(b.value(), av.rows(), av.cols(), kind));
    return t->record(std::move(out), {a.id, b.id},
                     [a = a.id, b = b.id, kind](Tape& tp, int self) {
                         const Matrix& g = tp.upstream(self);
                         const Matrix& av = tp.value(a);
                         const Matrix bv = expand(tp.value(b), av.rows(), av.cols(), kind);
                         if (tp.needs_grad(a)) {
                             tp.accumulate(a, g.cwiseQuotient(bv));
                         }
                         if (tp.needs_grad(b)) {
                             Matrix gb = -g.cwiseProduct(av).cwiseQuotient(bv.cwiseProduct(bv));
                             tp.accumulate(b, reduce(gb, kind));
                         }
                     },
                     "div");
}

Var scale(Var a, double s) {
    Tape* t = tape_of({a});
    return t->record(a.value() * s, {a.id},
                     [a = a.id, s](Tape& tp, int self) { tp.accumulate(a, tp.upstream(self) * s); }, "scale");
}

Var add_scalar(Var a, double s) {
    Tape* t = tape_of({a});
    Matrix out = a.value().array() + s;
    return t->record(std::move(out), {a.id},
                     [a = a.id](Tape& tp, int self) { tp.accumulate(a, tp.upstream(self)); }, "add_scalar");
}

// ---------------------------------------------------------------- structure

Var matmul(Var a, Var b) {
    Tape* t = tape_of({a, b});
    if (a.cols() != b.rows()) {
        throw std::invalid_argument("shape mismatch in matmul: " + std::to_string(a.rows()) + "x" +
                                    std::to_string(a.cols()) + " * " + std::to_string(b.rows()) + "x" +
                                    std::to_string(b.cols()));
    }
    Matrix out = a.value() * b.value();
    return t->record(std::move(out), {a.id, b.id},
                     [a = a.id, b = b.id](Tape& tp, int self) {
                         const Matrix& g = tp.upstream(self);
                         if (tp.needs_grad(a)) {
                             tp.accumulate(a, g * tp.value(b).transpose());
                         }
                         if (tp.needs_grad(b)) {
                             tp.accumulate(b, tp.value(a).transpose() * g);
                         }
                     },
                     "matmul");
}

Var transpose(Var a) {
    Tape* t = tape_of({a});
    Matrix out = a.value().transpose();
    return t->record(std::move(out), {a.id},
                     [a = a.id](Tape& tp, int self) { tp.accumulate(a, tp.upstream(self).transpose()); },
                     "transpose");
}

Var reshape(Var a, Index rows, Index cols) {
    Tape* t = tape_of({a});
    if (rows * cols != a.value().size()) {
        throw std::invalid_argument("reshape changes element count");
    }
    const Index ar = a.rows();
    const Index ac = a.cols();
    Matrix out = Eigen::Map<const Matrix>(a.value().data(), rows, cols);
    return t->record(std::move(out), {a.id},
                     [a = a.id, ar, ac](Tape& tp, int self) {
                         const Matrix& g = tp.upstream(self);
                         tp.accumulate(a, Eigen::Map<const Matrix>(g.data(), ar, ac));
                     },
                     "reshape");
}

Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) {
        throw std::invalid_argument("concat of zero parts");
    }
    Tape* t = parts.front().tape;
    const Index cols = parts.front().cols();
    Index rows = 0;
    std::vector<int> ids;
    std::vector<Index> offsets;
    for (const Var& p : parts) {
        tape_of({parts.front(), p});
        if (p.cols() != cols) {
            throw std::invalid_argument("shape mismatch in concat_rows");
        }
        offsets.push_back(rows);
        rows += p.rows();
        ids.push_back(p.id);
    }
    Matrix out(rows, cols);
    for (std::size_t i = 0; i < parts.size(); ++i) {
        out.middleRows(offsets[i], parts[i].rows()) = parts[i].value();
    }
    return t->record(std::move(out), ids,
                     [ids, offsets](Tape& tp, int self) {
                         const Matrix& g = tp.upstream(self);
                         for (std::size_t i = 0; i < ids.size(); ++i) {
                             if (tp.needs_grad(ids[i])) {
                                 tp.accumulate(ids[i], g.middleRows(offsets[i], tp.value(ids[i]).rows()));
                             }
                         }
                     },
                     "concat_rows");
}

Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) {
        throw std::invalid_argument("concat of zero parts");
    }
    Tape* t = parts.front().tape;
    const Index rows = parts.front().rows();
    Index cols = 0;
    std::vector<int> ids;
    std::vector<Index> offsets;
    for (const Var& p : parts) {
        tape_of({parts.front(), p});
        if (p.rows() != rows) {
            throw std::invalid_argument("shape mismatch in concat_cols");
        }
        offsets.push_back(cols);
        cols += p.cols();
        ids.push_back(p.id);
    }
    Matrix out(rows, cols);
    for (std::size_t i = 0; i < parts.size(); ++i) {
        out.middleCols(offsets[i], parts[i].cols()) = parts[i].value();
    }
    return t->record(std::move(out), ids,
                     [ids, offsets](Tape& tp, int self) {
                         const Matrix& g = tp.upstream(self);
                         for (std::size_t i = 0; i < ids.size(); ++i) {
                             if (tp.needs_grad(ids[i])) {
                                 tp.accumulate(ids[i], g.middleCols(offsets[i], tp.value(ids[i]).cols()));
                             }
                         }
                     },
                     "concat_cols");
}

Var slice_rows(Var a, Index start, Index count) {
    Tape* t = tape_of({a});
    if (start < 0 || count < 0 || start + count > a.rows()) {
        throw std::out_of_range("slice_rows out of range");
    }
    Matrix out = a.value().middleRows(start, count);
    return t->record(std::move(out), {a.id},
                     [a = a.id, start, count](Tape& tp, int self) {
                         Matrix g = Matrix::Zero(tp.value(a).rows(), tp.value(a).cols());
                         g.middleRows(start, count) = tp.upstream(self);
                         tp.accumulate(a, g);
                     },
                     "slice_rows");
}

Var slice_cols(Var a, Index start, Index count) {
    Tape* t = tape_of({a});
    if (start < 0 || count < 0 || start + count > a.cols()) {
        throw std::out_of_range("slice_cols out of range");
    }
    Matrix out = a.value().middleCols(start, count);
    return t->record(std::move(out), {a.id},
                     [a = a.id, start, count](Tape& tp, int self) {
                         Matrix g = Matrix::Zero(tp.value(a).rows(), tp.value(a).cols());
                         g.middleCols(start, count) = tp.upstream(self);
                         tp.accumulate(a, g);
                     },
                     "slice_cols");
}

// ---------------------------------------------------------------- reductions

Var sum(Var a, Axis axis) {
    Tape* t = tape_of({a});
    Matrix out = axis == Axis::Rows ? Matrix(a.value().colwise().sum()) : Matrix(a.value().rowwise().sum());
    return t->record(std::move(out), {a.id},
                     [a = a.id, axis](Tape& tp, int self) {
                         const Matrix& g = tp.upstream(self);
                         const Index r = tp.value(a).rows();
                         const Index c = tp.value(a).cols();
                         if (axis == Axis::Rows) {
                             tp.accumulate(a, g.replicate(r, 1));
                         } else {
                             tp.accumulate(a, g.replicate(1, c));
                         }
                     },
                     "sum");
}

Var mean(Var a, Axis axis) {
    const Index n = axis == Axis::Rows ? a.rows() : a.cols();
    return scale(sum(a, axis), 1.0 / static_cast<double>(n));
}

Var sum_all(Var a) {
    Tape* t = tape_of({a});
    return t->record(Matrix::Constant(1, 1, a.value().sum()), {a.id},
                     [a = a.id](Tape& tp, int self) {
                         const double g = tp.upstream(self)(0, 0);
                         tp.accumulate(a, Matrix::Constant(tp.value(a).rows(), tp.value(a).cols(), g));
                     },
                     "sum_all");
}

Var mean_all(Var a) { return scale(sum_all(a), 1.0 / static_cast<double>(a.value().size())); }

// ---------------------------------------------------------------- nonlinear

Var layer_norm(Var x, Var gain, Var bias, double eps) {
    Tape* t = tape_of({x, gain, bias});
    const Matrix& xv = x.value();
    const Index d = xv.cols();
    if (gain.rows() != 1 || gain.cols() != d || bias.rows() != 1 || bias.cols() != d) {
        throw std::invalid_argument("shape mismatch in layer_norm");
    }
    Eigen::VectorXd mu = xv.rowwise().mean();
    Matrix centered = xv.colwise() - mu;
    Eigen::VectorXd inv_std =
        ((centered.array().square().rowwise().sum() / static_cast<double>(d)) + eps).rsqrt().matrix();
    Matrix xhat = centered.array().colwise() * inv_std.array();
    Matrix out = (xhat.array().rowwise() * gain.value().row(0).array()).rowwise() + bias.value().row(0).array();
    return t->record(
        std::move(out), {x.id, gain.id, bias.id},
        [x = x.id, g = gain.id, b = bias.id, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& tp,
                                                                                                      int self) {
            const Matrix& up = tp.upstream(self);
            if (tp.needs_grad(g)) {
                tp.accumulate(g, (up.array() * xhat.array()).colwise().sum().matrix());
            }
            if (tp.needs_grad(b)) {
                tp.accumulate(b, up.colwise().sum());
            }
            if (tp.needs_grad(x)) {
                const Matrix dxhat = up.array().rowwise() * tp.value(g).row(0).array();
                const double dn = static_cast<double>(dxhat.cols());
                Eigen::VectorXd m1 = dxhat.rowwise().sum() / dn;
                Eigen::VectorXd m2 = (dxhat.array() * xhat.array()).rowwise().sum().matrix() / dn;
                Matrix dx = dxhat;
                dx.colwise() -= m1;
                dx -= (xhat.array().colwise() * m2.array()).matrix();
                dx = dx.array().colwise() * inv_std.array();
                tp.accumulate(x, dx);
            }
        },
        "layer_norm");
}

Var gelu(Var x) {
    Tape* t = tape_of({x});
    const Matrix& xv = x.value();
    Matrix out = xv.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0)); });
    return t->record(std::move(out), {x.id},
                     [x = x.id](Tape& tp, int self) {
                         const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
                         Matrix d = tp.value(x).unaryExpr([inv_sqrt_2pi](double v) {
                             return 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0)) +
                                    v * inv_sqrt_2pi * std::exp(-0.5 * v * v);
                         });
                         tp.accumulate(x, tp.upstream(self).cwiseProduct(d));
                     },
                     "gelu");
}

Matrix softmax_rows(const Matrix& logits) {
    Matrix p = logits.colwise() - logits.rowwise().maxCoeff();
    p = p.array().exp();
    Eigen::VectorXd s = p.rowwise().sum();
    return p.array().colwise() / s.array();
}

namespace {

// Gradient of row softmax given probabilities and upstream gradient.
Matrix softmax_backward(const Matrix& p, const Matrix& g) {
    Eigen::VectorXd dot = (p.array() * g.array()).rowwise().sum();
    return p.array() * (g.colwise() - dot).array();
}

} // namespace

Var softmax_with_bias(Var logits, Var bias) {
    Tape* t = tape_of({logits, bias});
    if (logits.rows() != bias.rows() || logits.cols() != bias.cols()) {
        throw std::invalid_argument("shape mismatch in softmax_with_bias");
    }
    if (!logits.value().allFinite() || !bias.value().allFinite()) {
        throw std::domain_error("non-finite input to softmax_with_bias");
    }
    Matrix out = softmax_rows(logits.value() + bias.value());
    return t->record(std::move(out), {logits.id, bias.id},
                     [l = logits.id, b = bias.id](Tape& tp, int self) {
                         const Matrix gz = softmax_backward(tp.value(self), tp.upstream(self));
                         tp.accumulate(l, gz);
                         tp.accumulate(b, gz);
                     },
                     "softmax_with_bias");
}

// ---------------------------------------------------------------- indexing

Var gather(Var a, std::shared_ptr<const IndexVector> index, Index rows, Index cols) {
    Tape* t = tape_of({a});
    if (!index || static_cast<Index>(index->size()) != rows * cols) {
        throw std::invalid_argument("gather index size does not match output shape");
    }
    const Matrix& av = a.value();
    const Index n = av.size();
    Matrix out(rows, cols);
    const double* src = av.data();
    double* dst = out.data();
    for (Index i = 0; i < rows * cols; ++i) {
        const Index j = (*index)[static_cast<std::size_t>(i)];
        if (j < 0 || j >= n) {
            throw std::out_of_range("gather index out of range");
        }
        dst[i] = src[j];
    }
    return t->record(std::move(out), {a.id},
                     [a = a.id, index](Tape& tp, int self) {
                         const Matrix& g = tp.upstream(self);
                         Matrix ga = Matrix::Zero(tp.value(a).rows(), tp.value(a).cols());
                         const double* gs = g.data();
                         double* gd = ga.data();
                         for (std::size_t i = 0; i < index->size(); ++i) {
                             gd[(*index)[i]] += gs[i];
                         }
                         tp.accumulate(a, ga);
                     },
                     "gather");
}

Var gather_rows(Var table, std::shared_ptr<const IndexVector> rows) {
    Tape* t = tape_of({table});
    const Matrix& tv = table.value();
    Matrix out(static_cast<Index>(rows->size()), tv.cols());
    for (std::size_t i = 0; i < rows->size(); ++i) {
        const Index r = (*rows)[i];
        if (r < 0 || r >= tv.rows()) {
            throw std::out_of_range("gather_rows index out of range");
        }
        out.row(static_cast<Index>(i)) = tv.row(r);
    }
    return t->record(std::move(out), {table.id},
                     [table = table.id, rows](Tape& tp, int self) {
                         const Matrix& g = tp.upstream(self);
                         Matrix gt = Matrix::Zero(tp.value(table).rows(), tp.value(table).cols());
                         for (std::size_t i = 0; i < rows->size(); ++i) {
                             gt.row((*rows)[i]) += g.row(static_cast<Index>(i));
                         }
                         tp.accumulate(table, gt);
                     },
                     "gather_rows");
}

// ---------------------------------------------------------------- attention

Var attention(Var q, Var k, Var v, std::shared_ptr<const AttentionLayout> layout, int heads, AttentionTap* tap) {
    Tape* t = tape_of({q, k, v});
    const Index rows = q.rows();
    const Index d = q.cols();
    if (k.rows() != rows || v.rows() != rows || k.cols() != d || v.cols() != d || layout->rows != rows) {
        throw std::invalid_argument("shape mismatch in attention");
    }
    if (heads < 1 || d % heads != 0) {
        throw std::invalid_argument("model width not divisible by head count");
    }
    const Index dh = d / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    const auto& groups = layout->groups;

    // probs[g * heads + h]
    auto probs = std::make_shared<std::vector<Matrix>>(groups.size() * static_cast<std::size_t>(heads));
    Matrix out = Matrix::Zero(rows, d);
    if (tap != nullptr) {
        tap->mean_probs.assign(groups.size(), Matrix());
    }
    const Matrix& qv = q.value();
    const Matrix& kv = k.value();
    const Matrix& vv = v.value();
    for (std::size_t g = 0; g < groups.size(); ++g) {
        const auto& grp = groups[g];
        if (grp.key_bias.size() != 0 && grp.key_bias.size() != static_cast<Index>(grp.keys.size())) {
            throw std::invalid_argument("attention key bias size mismatch");
        }
        const Matrix qg = qv(grp.queries, Eigen::all);
        const Matrix kg = kv(grp.keys, Eigen::all);
        const Matrix vg = vv(grp.keys, Eigen::all);
        Matrix og(qg.rows(), d);
        for (int h = 0; h < heads; ++h) {
            Matrix logits = (qg.middleCols(h * dh, dh) * kg.middleCols(h * dh, dh).transpose()) * inv_sqrt;
            if (grp.key_bias.size() != 0) {
                logits.rowwise() += grp.key_bias;
            }
            Matrix p = softmax_rows(logits);
            og.middleCols(h * dh, dh) = p * vg.middleCols(h * dh, dh);
            if (tap != nullptr) {
                if (h == 0) {
                    tap->mean_probs[g] = p / static_cast<double>(heads);
                } else {
                    tap->mean_probs[g] += p / static_cast<double>(heads);
                }
            }
            (*probs)[g * static_cast<std::size_t>(heads) + static_cast<std::size_t>(h)] = std::move(p);
        }
        out(grp.queries, Eigen::all) = og;
    }
    return t->record(
        std::move(out), {q.id, k.id, v.id},
        [q = q.id, k = k.id, v = v.id, layout, heads, dh, inv_sqrt, probs](Tape& tp, int self) {
            const Matrix& g = tp.upstream(self);
            const Matrix& qv = tp.value(q);
            const Matrix& kv = tp.value(k);
            const Matrix& vv = tp.value(v);
            const Index rows = qv.rows();
            const Index d = qv.cols();
            Matrix gq = Matrix::Zero(rows, d);
            Matrix gk = Matrix::Zero(rows, d);
            Matrix gv = Matrix::Zero(rows, d);
            const auto& groups = layout->groups;
            for (std::size_t gi = 0; gi < groups.size(); ++gi) {
                const auto& grp = groups[gi];
                const Matrix qg = qv(grp.queries, Eigen::all);
                const Matrix kg = kv(grp.keys, Eigen::all);
                const Matrix vg = vv(grp.keys, Eigen::all);
                const Matrix og = g(grp.queries, Eigen::all);
                Matrix dq(qg.rows(), d);
                Matrix dk(kg.rows(), d);
                Matrix dv(kg.rows(), d);
                for (int h = 0; h < heads; ++h) {
                    const Matrix& p = (*probs)[gi * static_cast<std::size_t>(heads) + static_cast<std::size_t>(h)];
                    const auto go = og.middleCols(h * dh, dh);
                    dv.middleCols(h * dh, dh) = p.transpose() * go;
                    const Matrix dp = go * vg.middleCols(h * dh, dh).transpose();
                    const Matrix ds = softmax_backward(p, dp) * inv_sqrt;
                    dq.middleCols(h * dh, dh) = ds * kg.middleCols(h * dh, dh);
                    dk.middleCols(h * dh, dh) = ds.transpose() * qg.middleCols(h * dh, dh);
                }
                for (std::size_t i = 0; i < grp.queries.size(); ++i) {
                    gq.row(grp.queries[i]) += dq.row(static_cast<Index>(i));
                }
                for (std::size_t i = 0; i < grp.keys.size(); ++i) {
                    gk.row(grp.keys[i]) += dk.row(static_cast<Index>(i));
                    gv.row(grp.keys[i]) += dv.row(static_cast<Index>(i));
                }
            }
            tp.accumulate(q, gq);
            tp.accumulate(k, gk);
            tp.accumulate(v, gv);
        },
        "attention");
}

} // namespace mvhoi::ad
