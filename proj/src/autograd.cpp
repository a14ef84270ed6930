#include "moma/autograd.hpp"

namespace moma {

namespace {
thread_local bool g_grad_enabled = true;
thread_local GraphT<float>* g_current_f32 = nullptr;
thread_local GraphT<double>* g_current_f64 = nullptr;

template <typename S>
GraphT<S>*& current_slot() {
    if constexpr (std::is_same_v<S, float>)
        return g_current_f32;
    else
        return g_current_f64;
}
}  // namespace

bool GradMode::enabled() { return g_grad_enabled; }
void GradMode::set_enabled(bool v) { g_grad_enabled = v; }

template <typename S>
GraphT<S>* GraphT<S>::current() {
    return current_slot<S>();
}

template <typename S>
GraphScopeT<S>::GraphScopeT(GraphT<S>& g) : prev_(current_slot<S>()) {
    current_slot<S>() = &g;
}

template <typename S>
GraphScopeT<S>::~GraphScopeT() {
    current_slot<S>() = prev_;
}

template class GraphT<float>;
template class GraphT<double>;
template class GraphScopeT<float>;
template class GraphScopeT<double>;

}  // namespace moma
