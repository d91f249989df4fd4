#ifndef ECOPRUNE_TAPE_HPP
#define ECOPRUNE_TAPE_HPP

#include <atomic>
#include <functional>
#include <utility>
#include <vector>

#include "tensor.hpp"

namespace ecoprune {

// Process-wide accounting of forward floats retained by live tapes.
// The checkpointed engine's memory claim is measured against these counters.
struct MemoryStats {
    static std::atomic<long long>& live() {
        static std::atomic<long long> v{0};
        return v;
    }
    static std::atomic<long long>& peak() {
        static std::atomic<long long> v{0};
        return v;
    }
    static void add(long long n) {
        long long cur = live().fetch_add(n) + n;
        long long p = peak().load();
        while (cur > p && !peak().compare_exchange_weak(p, cur)) {
        }
    }
    static void sub(long long n) { live().fetch_sub(n); }
    static void reset_peak() { peak().store(live().load()); }
};

class Tape;

struct Var {
    Tape* tape = nullptr;
    int id = -1;
    bool valid() const { return tape != nullptr && id >= 0; }
};

// Reverse-mode tape. Nodes are appended in evaluation order; backward walks
// them in reverse, so accumulation order is fixed by insertion index.
// A tape is single-threaded and consumable by exactly one backward pass.
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, const Tensor& cot)>;

    Tape() = default;
    ~Tape() { release(); }
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var leaf(Tensor value, bool requires_grad = false) {
        return push(std::move(value), requires_grad, BackwardFn{});
    }

    Var node(Tensor value, bool needs_grad, BackwardFn fn) {
        return push(std::move(value), needs_grad, std::move(fn));
    }

    const Tensor& value(Var v) const { return nodes_[v.id].value; }
    const Tensor& value(int id) const { return nodes_[id].value; }

    bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }

    void backward(Var loss) {
        if (loss.tape != this) throw contract_error("backward: loss from another tape");
        if (consumed_) throw contract_error("backward: tape already consumed");
        if (nodes_[loss.id].value.numel() != 1)
            throw contract_error("backward: loss is not a scalar");
        consumed_ = true;
        grads_.assign(nodes_.size(), Tensor{});
        grads_[loss.id] = Tensor(nodes_[loss.id].value.shape, {1.0});
        for (int i = loss.id; i >= 0; --i) {
            if (!nodes_[i].needs_grad || grads_[i].data.empty()) continue;
            if (nodes_[i].backward) nodes_[i].backward(*this, grads_[i]);
        }
    }

    // gradient of the last backward() w.r.t. v; zeros if none flowed
    Tensor grad(Var v) const {
        if (!consumed_) throw contract_error("grad: backward() not run");
        if (grads_[v.id].data.empty()) return Tensor::zeros(nodes_[v.id].value.shape);
        return grads_[v.id];
    }

    void accumulate(int id, const Tensor& g) {
        if (!nodes_[id].needs_grad) return;
        if (grads_[id].data.empty()) {
            grads_[id] = g;
        } else {
            check_same_shape("grad accumulate", grads_[id], g);
            for (std::size_t k = 0; k < g.numel(); ++k) grads_[id].data[k] += g.data[k];
        }
    }

    long long live_float_count() const { return registered_; }

    void release() {
        MemoryStats::sub(registered_);
        registered_ = 0;
        nodes_.clear();
        grads_.clear();
    }

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        bool needs_grad;
        BackwardFn backward;
    };

    Var push(Tensor value, bool needs_grad, BackwardFn fn) {
        long long n = static_cast<long long>(value.numel());
        registered_ += n;
        MemoryStats::add(n);
        nodes_.push_back(Node{std::move(value), needs_grad, std::move(fn)});
        return Var{this, static_cast<int>(nodes_.size()) - 1};
    }

    std::vector<Node> nodes_;
    std::vector<Tensor> grads_;
    long long registered_ = 0;
    bool consumed_ = false;
};

}  // namespace ecoprune

#endif
