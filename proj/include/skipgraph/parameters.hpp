#pragma once

#include <string>
#include <vector>

#include "skipgraph/tensor.hpp"

namespace skipgraph {

template <Real T>
struct Parameter {
    std::string name;
    Tensor<T> value;
};

/// Owns the named learnable tensors and non-learnable buffers (batch-norm
/// running statistics) of a model. Names and storage are unique.
template <Real T>
class ParameterStore {
public:
    Tensor<T> add(std::string name, Tensor<T> value);
    Tensor<T> add_buffer(std::string name, Tensor<T> value);

    const std::vector<Parameter<T>>& params() const { return params_; }
    const std::vector<Parameter<T>>& buffers() const { return buffers_; }

    const Parameter<T>* find(const std::string& name) const;

    /// Total number of learnable scalars.
    std::size_t count() const;
    void zero_grad();

private:
    void check_unique(const std::string& name, const Tensor<T>& value) const;

    std::vector<Parameter<T>> params_;
    std::vector<Parameter<T>> buffers_;
};

extern template class ParameterStore<float>;
extern template class ParameterStore<double>;
extern template class ParameterStore<long double>;

} // namespace skipgraph
