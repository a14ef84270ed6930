#pragma once

#include <functional>
#include <span>
#include <vector>

#include "moma/tensor.hpp"

namespace moma {

// Thread-local switch consulted by every primitive before recording a node.
// Forward results are bitwise identical with tracking on or off.
class GradMode {
public:
    static bool enabled();
    static void set_enabled(bool v);
};

class NoGradGuard {
public:
    NoGradGuard() : prev_(GradMode::enabled()) { GradMode::set_enabled(false); }
    ~NoGradGuard() { GradMode::set_enabled(prev_); }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

// Routes gradient contributions during one backward sweep. Intermediate
// results accumulate into pass-local per-node buffers; tracked leaves
// accumulate into their persistent grad storage.
template <typename S>
class BackwardPassT {
public:
    BackwardPassT(size_t node_count, uint64_t epoch) : node_grads_(node_count), epoch_(epoch) {}

    // Gradient sink for tensor t, zero-initialized on first access.
    // Returns nullptr when t does not participate (untracked constant).
    std::vector<S>* sink(TensorT<S> t) {
        if (t.graph_node() >= 0 && t.graph_epoch() == epoch_) {
            auto& g = node_grads_[static_cast<size_t>(t.graph_node())];
            if (g.empty()) g.assign(static_cast<size_t>(t.numel()), S(0));
            return &g;
        }
        if (t.requires_grad()) return &t.grad_buffer();
        return nullptr;
    }

    void accumulate(const TensorT<S>& t, std::span<const S> g) {
        std::vector<S>* s = sink(t);
        if (!s) return;
        for (size_t i = 0; i < s->size(); ++i) (*s)[i] += g[i];
    }

    std::vector<S>& node_grad(int64_t id) { return node_grads_[static_cast<size_t>(id)]; }
    bool node_reached(int64_t id) const { return !node_grads_[static_cast<size_t>(id)].empty(); }
    void release(int64_t id) {
        std::vector<S>().swap(node_grads_[static_cast<size_t>(id)]);
    }

private:
    std::vector<std::vector<S>> node_grads_;
    uint64_t epoch_;
};

// Reverse-mode tape. Nodes are appended in construction order, which is a
// topological order by definition; backward makes one reverse sweep. One graph
// per training step: clear() drops all nodes and bumps the epoch so stale
// tensor handles degrade to constants instead of touching freed nodes.
template <typename S>
class GraphT {
public:
    using BackwardFn = std::function<void(std::span<const S> out_grad, BackwardPassT<S>& pass)>;

    GraphT() = default;
    GraphT(const GraphT&) = delete;
    GraphT& operator=(const GraphT&) = delete;

    int64_t add_node(const char* tag, BackwardFn fn) {
        nodes_.push_back({tag, std::move(fn)});
        return static_cast<int64_t>(nodes_.size()) - 1;
    }

    uint64_t epoch() const { return epoch_; }
    size_t size() const { return nodes_.size(); }

    // Seeds d(loss)/d(loss) = 1 and sweeps the tape in reverse construction
    // order. Repeated calls without zero_grad accumulate into leaf grads.
    void backward(const TensorT<S>& loss) {
        if (loss.numel() != 1)
            throw ValueError("backward: loss must be scalar, got " + shape_str(loss.shape()));
        if (loss.graph_node() < 0 || loss.graph_epoch() != epoch_) {
            // Constant or leaf loss: d(loss)/d(loss) = 1 is all there is.
            TensorT<S> l = loss;
            if (l.requires_grad()) l.grad_buffer()[0] += S(1);
            return;
        }
        BackwardPassT<S> pass(nodes_.size(), epoch_);
        pass.node_grad(loss.graph_node()).assign(1, S(1));
        for (int64_t i = loss.graph_node(); i >= 0; --i) {
            if (!pass.node_reached(i)) continue;
            nodes_[static_cast<size_t>(i)].fn(pass.node_grad(i), pass);
            pass.release(i);
        }
    }

    void clear() {
        nodes_.clear();
        ++epoch_;
    }

    static GraphT* current();

private:
    struct Node {
        const char* tag;
        BackwardFn fn;
    };

    std::vector<Node> nodes_;
    uint64_t epoch_ = 1;

    friend class GraphScopeT_friend;
};

// Binds a graph as the thread's active tape for the enclosed scope.
template <typename S>
class GraphScopeT {
public:
    explicit GraphScopeT(GraphT<S>& g);
    ~GraphScopeT();
    GraphScopeT(const GraphScopeT&) = delete;
    GraphScopeT& operator=(const GraphScopeT&) = delete;

private:
    GraphT<S>* prev_;
};

using Graph = GraphT<float>;
using Graph64 = GraphT<double>;
using GraphScope = GraphScopeT<float>;
using GraphScope64 = GraphScopeT<double>;

// True when ops applied to t must record a node on graph g.
template <typename S>
inline bool tracked(const TensorT<S>& t, const GraphT<S>* g) {
    if (t.requires_grad()) return true;
    return g && t.graph_node() >= 0 && t.graph_epoch() == g->epoch();
}

// Convenience: backward through the thread's active graph.
template <typename S>
void backward(const TensorT<S>& loss) {
    GraphT<S>* g = GraphT<S>::current();
    if (!g) throw ValueError("backward: no active graph in scope");
    g->backward(loss);
}

}  // namespace moma
