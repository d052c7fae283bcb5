#include "skipgraph/parameters.hpp"

namespace skipgraph {

template <Real T>
void ParameterStore<T>::check_unique(const std::string& name, const Tensor<T>& value) const {
    if (!value.defined()) throw ValidationError("parameter '" + name + "' is undefined");
    for (const auto* list : {&params_, &buffers_})
        for (const auto& p : *list) {
            if (p.name == name) throw ValidationError("duplicate parameter name '" + name + "'");
            if (p.value.same_storage(value))
                throw ValidationError("tensor registered twice ('" + p.name + "' and '" + name + "')");
        }
}

template <Real T>
Tensor<T> ParameterStore<T>::add(std::string name, Tensor<T> value) {
    check_unique(name, value);
    value.set_requires_grad(true);
    params_.push_back({std::move(name), value});
    return value;
}

template <Real T>
Tensor<T> ParameterStore<T>::add_buffer(std::string name, Tensor<T> value) {
    check_unique(name, value);
    buffers_.push_back({std::move(name), value});
    return value;
}

template <Real T>
const Parameter<T>* ParameterStore<T>::find(const std::string& name) const {
    for (const auto* list : {&params_, &buffers_})
        for (const auto& p : *list)
            if (p.name == name) return &p;
    return nullptr;
}

template <Real T>
std::size_t ParameterStore<T>::count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.numel();
    return n;
}

template <Real T>
void ParameterStore<T>::zero_grad() {
    for (auto& p : params_) p.value.zero_grad();
}

template class ParameterStore<float>;
template class ParameterStore<double>;
template class ParameterStore<long double>;

} // namespace skipgraph
