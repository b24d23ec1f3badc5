#include "mvhoi/tensor.hpp"

#include <functional>
#include <numeric>
#include <stdexcept>

namespace mvhoi {

namespace {

Index shape_product(const std::vector<Index>& shape) {
    return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

} // namespace

Tensor::Tensor(Matrix value, bool requires_grad)
    : shape_{value.rows(), value.cols()}, value_(std::move(value)), requires_grad_(requires_grad) {}

Tensor::Tensor(std::vector<Index> shape, Matrix value, bool requires_grad)
    : shape_(std::move(shape)), value_(std::move(value)), requires_grad_(requires_grad) {
    if (shape_.empty() || shape_product(shape_) != value_.size()) {
        throw std::invalid_argument("tensor shape does not match value size");
    }
    if (value_.cols() != shape_.back()) {
        value_.resize(value_.size() / shape_.back(), shape_.back());
    }
}

void Tensor::set_grad(Matrix g) {
    if (g.rows() != value_.rows() || g.cols() != value_.cols()) {
        throw std::invalid_argument("gradient shape does not match tensor");
    }
    grad_ = std::move(g);
}

std::size_t ParamStore::add(const std::string& name, Matrix init) {
    std::vector<Index> shape{init.rows(), init.cols()};
    return add(name, std::move(shape), std::move(init));
}

std::size_t ParamStore::add(const std::string& name, std::vector<Index> shape, Matrix init) {
    if (contains(name)) {
        throw std::invalid_argument("duplicate parameter name: " + name);
    }
    if (!init.allFinite()) {
        throw std::domain_error("non-finite initial value for parameter " + name);
    }
    const std::size_t id = tensors_.size();
    names_.push_back(name);
    tensors_.emplace_back(std::move(shape), std::move(init), true);
    index_.emplace(name, id);
    return id;
}

std::size_t ParamStore::id(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) {
        throw std::out_of_range("unknown parameter: " + name);
    }
    return it->second;
}

Index ParamStore::parameter_count() const {
    Index n = 0;
    for (const auto& t : tensors_) {
        n += t.numel();
    }
    return n;
}

Gradients zero_gradients(const ParamStore& params) {
    Gradients g(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        g[i] = Matrix::Zero(params[i].value().rows(), params[i].value().cols());
    }
    return g;
}

void accumulate(Gradients& into, const Gradients& from) {
    if (into.size() != from.size()) {
        throw std::invalid_argument("gradient sets differ in size");
    }
    for (std::size_t i = 0; i < into.size(); ++i) {
        into[i] += from[i];
    }
}

void scale(Gradients& grads, double factor) {
    for (auto& g : grads) {
        g *= factor;
    }
}

} // namespace mvhoi
