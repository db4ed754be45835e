#pragma once

// Tape-based reverse-mode autodiff. Recording an op evaluates it eagerly via
// eval_op and appends a node; backward walks the tape once in reverse,
// accumulating parent gradients in a fixed order so results are reproducible
// bit-for-bit across runs.

#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "uninext/kernels.hpp"

namespace uninext {

template <typename T>
class Tape;

// Lightweight handle to a tape node.
template <typename T>
struct Var {
    Tape<T>* tape = nullptr;
    int32_t id = -1;

    bool valid() const { return tape != nullptr && id >= 0; }
    // By value: a Tensor is a cheap handle onto shared storage, and the node
    // array may reallocate whenever another op is recorded, so references
    // into it must not escape.
    Tensor<T> val() const;
    Dims dims() const { return val().dims(); }
    int64_t rank() const { return val().rank(); }
    int64_t dim(int64_t i) const { return val().dim(i); }
};

template <typename T>
struct Node {
    OpKind kind = OpKind::kLeaf;
    Attrs attrs;
    std::vector<int32_t> parents;
    Tensor<T> value;
    Tensor<T> grad;  // undefined until touched by backward
};

template <typename T>
class Tape {
public:
    Var<T> leaf(Tensor<T> value) {
        Node<T> n;
        n.value = std::move(value);
        nodes_.push_back(std::move(n));
        return Var<T>{this, static_cast<int32_t>(nodes_.size() - 1)};
    }

    // Validated by the op layer; evaluates eagerly and records the node.
    Var<T> apply(OpKind kind, const std::vector<Var<T>>& parents, Attrs attrs = {}) {
        std::vector<Tensor<T>> vals;
        vals.reserve(parents.size());
        Node<T> n;
        n.kind = kind;
        n.attrs = std::move(attrs);
        for (const Var<T>& p : parents) {
            if (p.tape != this || p.id < 0 || p.id >= size()) {
                throw UsageError(std::string(op_name(kind)) + ": input is not a node of this tape");
            }
            n.parents.push_back(p.id);
            vals.push_back(nodes_[p.id].value);
        }
        n.value = eval_op<T>(kind, vals, n.attrs);
        nodes_.push_back(std::move(n));
        return Var<T>{this, static_cast<int32_t>(nodes_.size() - 1)};
    }

    int32_t size() const { return static_cast<int32_t>(nodes_.size()); }
    // The reference is invalidated by the next leaf()/apply(); use and drop.
    const Node<T>& node(int32_t id) const { return nodes_[static_cast<size_t>(id)]; }
    Tensor<T> value(int32_t id) const { return nodes_[static_cast<size_t>(id)].value; }

    // Reverse pass from a scalar root. Clears previous gradients first.
    void backward(const Var<T>& root) {
        if (root.tape != this || root.id < 0 || root.id >= size()) {
            throw StateError("backward called before any forward produced the root node");
        }
        Node<T>& rn = nodes_[static_cast<size_t>(root.id)];
        if (rn.value.numel() != 1) {
            throw UsageError("backward: root must be scalar, got " + dims_str(rn.value.dims()));
        }
        for (Node<T>& n : nodes_) n.grad = Tensor<T>();
        rn.grad = Tensor<T>::full(rn.value.dims(), T(1));
        std::vector<Tensor<T>> vals;
        std::vector<Tensor<T>*> slots;
        for (int32_t i = root.id; i >= 0; --i) {
            Node<T>& n = nodes_[static_cast<size_t>(i)];
            if (!n.grad.defined() || n.kind == OpKind::kLeaf) continue;
            vals.clear();
            slots.clear();
            for (int32_t p : n.parents) {
                Node<T>& pn = nodes_[static_cast<size_t>(p)];
                vals.push_back(pn.value);
                if (!pn.grad.defined()) pn.grad = Tensor<T>(pn.value.dims());
                slots.push_back(&pn.grad);
            }
            backward_op<T>(n.kind, n.value, n.grad, vals, n.attrs, slots);
        }
        ran_backward_ = true;
    }

    // Gradient of the last backward root w.r.t. `v`; zeros for untouched nodes.
    Tensor<T> grad(const Var<T>& v) const {
        if (!ran_backward_) {
            throw StateError("gradient read before backward");
        }
        const Node<T>& n = nodes_[static_cast<size_t>(v.id)];
        return n.grad.defined() ? n.grad : Tensor<T>(n.value.dims());
    }

    // Re-evaluates a node from its parents' recorded values.
    Tensor<T> recompute(int32_t id) const {
        const Node<T>& n = nodes_[static_cast<size_t>(id)];
        if (n.kind == OpKind::kLeaf) return n.value;
        std::vector<Tensor<T>> vals;
        for (int32_t p : n.parents) vals.push_back(nodes_[static_cast<size_t>(p)].value);
        return eval_op<T>(n.kind, vals, n.attrs);
    }

    void clear() {
        nodes_.clear();
        ran_backward_ = false;
    }

private:
    std::vector<Node<T>> nodes_;
    bool ran_backward_ = false;
};

template <typename T>
Tensor<T> Var<T>::val() const {
    if (!valid()) throw StateError("reading value of an unbound Var");
    return tape->value(id);
}

// Every non-leaf node re-evaluates to its recorded value, bit for bit.
template <typename T>
bool tape_replay_matches(const Tape<T>& tape) {
    for (int32_t i = 0; i < tape.size(); ++i) {
        if (tape.node(i).kind == OpKind::kLeaf) continue;
        if (!bitwise_equal(tape.recompute(i), tape.node(i).value)) return false;
    }
    return true;
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checking.
// ---------------------------------------------------------------------------
struct GradCheckOptions {
    double eps = 1e-4;        // central-difference step, scaled by |x| per coordinate
    int64_t max_coords = 0;   // 0 = probe every coordinate of every leaf
    uint64_t sample_seed = 7; // stream for coordinate subsampling
    // Noise floor for low-precision scalars: a coordinate is skipped only when
    // BOTH the analytic and the central-difference gradient are below this
    // magnitude (i.e. both agree the coordinate is negligible, and the
    // difference quotient is beneath the objective's evaluation noise). A
    // large analytic gradient against a tiny numeric one is still compared.
    double min_grad = 0.0;
    // Five-point stencil (O(h^4) truncation) instead of the two-point central
    // difference; twice the evaluations, for objectives whose curvature at a
    // noise-limited step size dominates the two-point error.
    bool high_order = false;
};

// build: (Tape<T>&, leaves) -> scalar Var. Returns the max relative error
//   |g_ad - g_fd| / max(|g_ad|, |g_fd|, 1e-8)
// between reverse-mode and central-difference gradients over the probed
// coordinates of every leaf.
template <typename T, class BuildFn>
double grad_check(BuildFn&& build, const std::vector<Tensor<T>>& points,
                  const GradCheckOptions& opt = {}) {
    auto eval = [&](const std::vector<Tensor<T>>& pts) -> double {
        Tape<T> tape;
        std::vector<Var<T>> leaves;
        leaves.reserve(pts.size());
        for (const auto& p : pts) leaves.push_back(tape.leaf(p));
        Var<T> root = build(tape, leaves);
        if (root.val().numel() != 1) {
            throw UsageError("grad_check: objective must be scalar, got " +
                             dims_str(root.dims()));
        }
        const double v = static_cast<double>(root.val()[0]);
        if (!std::isfinite(v)) throw NumericError("grad_check: non-finite objective value");
        return v;
    };

    // Analytic gradients at the unperturbed point.
    Tape<T> tape;
    std::vector<Var<T>> leaves;
    for (const auto& p : points) leaves.push_back(tape.leaf(p.clone()));
    Var<T> root = build(tape, leaves);
    if (root.val().numel() != 1) {
        throw UsageError("grad_check: objective must be scalar, got " + dims_str(root.dims()));
    }
    tape.backward(root);
    std::vector<Tensor<T>> grads;
    for (const auto& l : leaves) grads.push_back(tape.grad(l));

    // Coordinates to probe.
    std::vector<std::pair<size_t, int64_t>> coords;
    for (size_t li = 0; li < points.size(); ++li) {
        for (int64_t i = 0; i < points[li].numel(); ++i) coords.emplace_back(li, i);
    }
    if (opt.max_coords > 0 && opt.max_coords < static_cast<int64_t>(coords.size())) {
        Rng rng(opt.sample_seed, 0x5eedc0de);
        for (int64_t i = 0; i < opt.max_coords; ++i) {
            const int64_t j = i + rng.next_index(static_cast<int64_t>(coords.size()) - i);
            std::swap(coords[static_cast<size_t>(i)], coords[static_cast<size_t>(j)]);
        }
        coords.resize(static_cast<size_t>(opt.max_coords));
    }

    std::vector<Tensor<T>> work;
    work.reserve(points.size());
    for (const auto& p : points) work.push_back(p.clone());

    double max_rel = 0.0;
    for (const auto& [li, i] : coords) {
        T& slot = work[li][i];
        const T saved = slot;
        const double h = opt.eps * std::max(1.0, std::abs(static_cast<double>(saved)));
        auto eval_at = [&](double offset) {
            slot = static_cast<T>(static_cast<double>(saved) + offset);
            const double f = eval(work);
            slot = saved;
            return f;
        };
        double fd;
        if (opt.high_order) {
            const double f1 = eval_at(h), fm1 = eval_at(-h);
            const double f2 = eval_at(2.0 * h), fm2 = eval_at(-2.0 * h);
            fd = (8.0 * (f1 - fm1) - (f2 - fm2)) / (12.0 * h);
        } else {
            const double fp = eval_at(h);
            const double fm = eval_at(-h);
            fd = (fp - fm) / (2.0 * h);
        }
        const double ad = static_cast<double>(grads[li][i]);
        if (!std::isfinite(fd) || !std::isfinite(ad)) {
            throw NumericError("grad_check: non-finite gradient entry");
        }
        if (std::abs(ad) < opt.min_grad && std::abs(fd) < opt.min_grad) continue;
        const double rel =
            std::abs(ad - fd) / std::max({std::abs(ad), std::abs(fd), 1e-8});
        max_rel = std::max(max_rel, rel);
    }
    return max_rel;
}

// Like grad_check, but the finite-difference reference is evaluated in
// 64-bit storage at the exactly upcast probe points, while the analytic
// gradients stay in T. A 32-bit graph's own forward rounding otherwise
// dominates the difference quotient (the quotient divides an O(eps*|f|)
// evaluation error by eps), hiding the quantity under test — the 32-bit
// reverse-mode gradients. `build` must be a precision-generic callable:
// (Tape<U>&, vector<Var<U>>) -> scalar Var<U> for U in {T, double}.
template <typename T, class BuildFn>
double grad_check_f64ref(BuildFn&& build, const std::vector<Tensor<T>>& points,
                         const GradCheckOptions& opt = {}) {
    // Analytic gradients in T storage at the unperturbed point.
    Tape<T> tape;
    std::vector<Var<T>> leaves;
    for (const auto& p : points) leaves.push_back(tape.leaf(p.clone()));
    Var<T> root = build(tape, leaves);
    if (root.val().numel() != 1) {
        throw UsageError("grad_check_f64ref: objective must be scalar, got " +
                         dims_str(root.dims()));
    }
    if (!std::isfinite(static_cast<double>(root.val()[0]))) {
        throw NumericError("grad_check_f64ref: non-finite objective value");
    }
    tape.backward(root);
    std::vector<Tensor<T>> grads;
    for (const auto& l : leaves) grads.push_back(tape.grad(l));

    std::vector<std::pair<size_t, int64_t>> coords;
    for (size_t li = 0; li < points.size(); ++li) {
        for (int64_t i = 0; i < points[li].numel(); ++i) coords.emplace_back(li, i);
    }
    if (opt.max_coords > 0 && opt.max_coords < static_cast<int64_t>(coords.size())) {
        Rng rng(opt.sample_seed, 0x5eedc0de);
        for (int64_t i = 0; i < opt.max_coords; ++i) {
            const int64_t j = i + rng.next_index(static_cast<int64_t>(coords.size()) - i);
            std::swap(coords[static_cast<size_t>(i)], coords[static_cast<size_t>(j)]);
        }
        coords.resize(static_cast<size_t>(opt.max_coords));
    }

    std::vector<Tensor<double>> work;
    work.reserve(points.size());
    for (const auto& p : points) {
        Tensor<double> c(p.dims());
        for (int64_t i = 0; i < p.numel(); ++i) c[i] = static_cast<double>(p[i]);
        work.push_back(std::move(c));
    }
    auto eval = [&](const std::vector<Tensor<double>>& pts) -> double {
        Tape<double> t64;
        std::vector<Var<double>> l64;
        l64.reserve(pts.size());
        for (const auto& p : pts) l64.push_back(t64.leaf(p));
        const double v = static_cast<double>(build(t64, l64).val()[0]);
        if (!std::isfinite(v)) {
            throw NumericError("grad_check_f64ref: non-finite objective value");
        }
        return v;
    };

    double max_rel = 0.0;
    for (const auto& [li, i] : coords) {
        double& slot = work[li][i];
        const double saved = slot;
        const double h = opt.eps * std::max(1.0, std::abs(saved));
        auto eval_at = [&](double offset) {
            slot = saved + offset;
            const double f = eval(work);
            slot = saved;
            return f;
        };
        double fd;
        if (opt.high_order) {
            const double f1 = eval_at(h), fm1 = eval_at(-h);
            const double f2 = eval_at(2.0 * h), fm2 = eval_at(-2.0 * h);
            fd = (8.0 * (f1 - fm1) - (f2 - fm2)) / (12.0 * h);
        } else {
            fd = (eval_at(h) - eval_at(-h)) / (2.0 * h);
        }
        const double ad = static_cast<double>(grads[li][i]);
        if (!std::isfinite(fd) || !std::isfinite(ad)) {
            throw NumericError("grad_check_f64ref: non-finite gradient entry");
        }
        if (std::abs(ad) < opt.min_grad && std::abs(fd) < opt.min_grad) continue;
        const double rel =
            std::abs(ad - fd) / std::max({std::abs(ad), std::abs(fd), 1e-8});
        max_rel = std::max(max_rel, rel);
    }
    return max_rel;
}

}  // namespace uninext
