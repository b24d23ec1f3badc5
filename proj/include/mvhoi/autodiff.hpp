#pragma once

#include "mvhoi/tensor.hpp"

#include <functional>
#include <memory>
#include <vector>

namespace mvhoi::ad {

class Tape;

// Handle to a node recorded on a tape.
struct Var {
    Tape* tape = nullptr;
    int id = -1;

    const Matrix& value() const;
    Index rows() const { return value().rows(); }
    Index cols() const { return value().cols(); }
    bool valid() const { return tape != nullptr && id >= 0; }
};

// Reverse-mode tape. Nodes are appended in evaluation order, so the node
// vector is always a topological order of the computation.
class Tape {
public:
    using Backward = std::function<void(Tape&, int)>;

    explicit Tape(const ParamStore* params = nullptr);

    Var constant(Matrix value);
    // Leaf that accumulates a gradient readable through grad().
    Var input(Matrix value, bool requires_grad = true);
    // Parameter leaf, memoized per id.
    Var param(std::size_t id);
    Var param(const std::string& name);

    const Matrix& value(int node) const { return nodes_[node].value; }
    const Matrix& grad(Var v) const;
    bool needs_grad(int node) const { return nodes_[node].needs_grad; }
    std::size_t size() const { return nodes_.size(); }
    const ParamStore* params() const { return params_; }

    // Gradients for every parameter of the attached store. Loss must be 1x1.
    Gradients backward(Var loss);

    // Op plumbing.
    Var record(Matrix value, std::vector<int> inputs, Backward backward, const char* op);
    const Matrix& upstream(int node) const { return nodes_[node].grad; }

    template <typename Expr>
    void accumulate(int node, const Expr& g) {
        auto& n = nodes_[node];
        if (!n.needs_grad) {
            return;
        }
        if (n.grad.size() == 0) {
            n.grad = g;
        } else {
            n.grad += g;
        }
    }

private:
    struct Node {
        Matrix value;
        Matrix grad;
        std::vector<int> inputs;
        Backward backward;
        bool needs_grad = false;
        long param_id = -1;
    };

    const ParamStore* params_;
    std::vector<Node> nodes_;
    std::vector<int> param_nodes_;
    bool backward_done_ = false;
};

enum class Axis { Rows, Cols };

// Elementwise ops broadcast `b` when it is 1x1, 1xC, or Rx1.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);

Var matmul(Var a, Var b);
Var transpose(Var a);
Var reshape(Var a, Index rows, Index cols);
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);
Var slice_rows(Var a, Index start, Index count);
Var slice_cols(Var a, Index start, Index count);

// Reduce over the given axis; Axis::Rows collapses rows (result 1xC).
Var sum(Var a, Axis axis);
Var mean(Var a, Axis axis);
Var sum_all(Var a);
Var mean_all(Var a);

Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
Var gelu(Var x);

// Row-wise softmax(logits + bias), differentiable in both arguments.
Var softmax_with_bias(Var logits, Var bias);

// out.flat[i] = a.flat[index[i]] (row-major), shaped rows x cols.
Var gather(Var a, std::shared_ptr<const IndexVector> index, Index rows, Index cols);
Var gather_rows(Var table, std::shared_ptr<const IndexVector> rows);

// Multi-head attention over groups of rows. Each group lets its query rows
// attend to its key rows; an optional key bias is added to the scaled logits
// of every query in the group.
struct AttentionGroup {
    IndexVector queries;
    IndexVector keys;
    RowVector key_bias;  // empty, or one entry per key
};

struct AttentionLayout {
    std::vector<AttentionGroup> groups;
    Index rows = 0;  // total rows of q/k/v
};

// Head-averaged attention probabilities, one (queries x keys) matrix per group.
struct AttentionTap {
    std::vector<Matrix> mean_probs;
};

Var attention(Var q, Var k, Var v, std::shared_ptr<const AttentionLayout> layout, int heads,
              AttentionTap* tap = nullptr);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, double s) { return scale(a, s); }
inline Var operator*(double s, Var a) { return scale(a, s); }

// Plain row softmax kernel shared by the ops above.
Matrix softmax_rows(const Matrix& logits);

} // namespace mvhoi::ad
