#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace mvhoi {

using Index = Eigen::Index;

template <typename Scalar>
using MatrixT = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using RowVectorT = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using Matrix = MatrixT<double>;
using RowVector = RowVectorT<double>;
using IndexVector = std::vector<Index>;

// Dense row-major tensor. Rank-n shapes are stored as a 2D matrix whose
// column count is the last dimension.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Matrix value, bool requires_grad = false);
    Tensor(std::vector<Index> shape, Matrix value, bool requires_grad = false);

    const std::vector<Index>& shape() const { return shape_; }
    Index numel() const { return value_.size(); }
    Index rank() const { return static_cast<Index>(shape_.size()); }

    const Matrix& value() const { return value_; }
    Matrix& value() { return value_; }

    bool requires_grad() const { return requires_grad_; }
    void set_requires_grad(bool on) { requires_grad_ = on; }

    const std::optional<Matrix>& grad() const { return grad_; }
    void set_grad(Matrix g);
    void clear_grad() { grad_.reset(); }

private:
    std::vector<Index> shape_;
    Matrix value_;
    bool requires_grad_ = false;
    std::optional<Matrix> grad_;
};

// Named, ordered collection of trainable tensors. Ids are insertion order.
class ParamStore {
public:
    std::size_t add(const std::string& name, Matrix init);
    std::size_t add(const std::string& name, std::vector<Index> shape, Matrix init);

    std::size_t size() const { return tensors_.size(); }
    bool contains(const std::string& name) const { return index_.count(name) != 0; }
    std::size_t id(const std::string& name) const;

    const std::string& name(std::size_t id) const { return names_.at(id); }
    Tensor& operator[](std::size_t id) { return tensors_.at(id); }
    const Tensor& operator[](std::size_t id) const { return tensors_.at(id); }
    Tensor& operator[](const std::string& name) { return tensors_.at(id(name)); }
    const Tensor& operator[](const std::string& name) const { return tensors_.at(id(name)); }

    Index parameter_count() const;

private:
    std::vector<std::string> names_;
    std::vector<Tensor> tensors_;
    std::unordered_map<std::string, std::size_t> index_;
};

// Gradient per parameter id; unreachable parameters hold zeros.
using Gradients = std::vector<Matrix>;

Gradients zero_gradients(const ParamStore& params);
void accumulate(Gradients& into, const Gradients& from);
void scale(Gradients& grads, double factor);

} // namespace mvhoi
