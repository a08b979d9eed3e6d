#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "csfc/errors.hpp"
#include "csfc/rng.hpp"

namespace csfc {

/// One named dimension of a tensor.
struct Axis {
    std::string name;
    std::size_t size = 0;

    bool operator==(const Axis&) const = default;
};

using Axes = std::vector<Axis>;

std::string axes_to_string(const Axes& axes);

namespace detail {

/// Autodiff graph node. Tensors are value-semantic handles onto these;
/// data is immutable after construction except for gradient accumulation
/// and explicit in-place parameter updates by the optimizer.
template <typename T>
struct Node {
    Axes axes;
    std::vector<T> data;
    std::vector<T> grad; // empty until first accumulation
    bool requires_grad = false;
    std::string name;
    std::vector<std::shared_ptr<Node>> parents;
    // Called with *this after this node's grad is final; accumulates into
    // the parents' grads.
    std::function<void(Node&)> backward_fn;

    std::vector<T>& ensure_grad() {
        if (grad.size() != data.size()) {
            grad.assign(data.size(), T(0));
        }
        return grad;
    }
};

} // namespace detail

/// Named-axis dense tensor with reverse-mode differentiation.
///
/// Axis names are the only way operations line up dimensions; there is no
/// positional broadcasting. Any op handed an undeclared axis name throws.
template <typename T>
class Tensor {
public:
    using NodePtr = std::shared_ptr<detail::Node<T>>;

    Tensor() = default;

    static Tensor zeros(Axes axes);
    static Tensor full(Axes axes, T value);
    static Tensor from_data(Axes axes, std::vector<T> data);
    static Tensor scalar(T value) { return from_data({}, {value}); }
    /// Elementwise uniform(lo, hi) draws in row-major order.
    static Tensor uniform(Axes axes, T lo, T hi, Rng& rng);

    bool valid() const { return node_ != nullptr; }
    const Axes& axes() const { return node_->axes; }
    std::size_t rank() const { return node_->axes.size(); }
    std::size_t size() const { return node_->data.size(); }

    bool has_axis(std::string_view name) const;
    /// Position of `name` in axes(); throws AxisError when absent.
    std::size_t axis_index(std::string_view name) const;
    std::size_t axis_size(std::string_view name) const;

    std::span<const T> data() const { return node_->data; }
    std::span<T> mutable_data() { return node_->data; }

    /// Value of a rank-0 / single-element tensor.
    T value() const;
    /// Row-major element access by multi-index (test convenience).
    T at(const std::vector<std::size_t>& index) const;

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool v) { node_->requires_grad = v; }
    bool has_grad() const { return node_->grad.size() == node_->data.size(); }
    std::span<const T> grad() const;
    std::span<T> mutable_grad() { return node_->ensure_grad(); }
    void zero_grad();

    const std::string& name() const { return node_->name; }
    void set_name(std::string n) { node_->name = std::move(n); }

    NodePtr node() const { return node_; }
    explicit Tensor(NodePtr node) : node_(std::move(node)) {}

private:
    NodePtr node_;
};

/// Builds a graph node from already-computed forward data. `backward`
/// receives the finished node (grad populated) and must accumulate into the
/// parents' grads with +=. Parents without requires_grad are pruned.
template <typename T>
Tensor<T> make_op(Axes axes, std::vector<T> data, std::vector<Tensor<T>> parents,
                  std::function<void(detail::Node<T>&)> backward);

// ---- arithmetic over named axes ----

/// Generalized product contracting exactly one shared axis: the result
/// carries the union of the non-contracted axes (lhs order first) and each
/// entry is the sum of products over `axis`.
template <typename T>
Tensor<T> contract(const Tensor<T>& a, const Tensor<T>& b, std::string_view axis);

/// Elementwise ops require identical axis lists (names, sizes, order).
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);
template <typename T>
Tensor<T> relu(const Tensor<T>& a);

/// Numerically stable softmax along `axis` (max-subtracted). NaN input is a
/// NumericError.
template <typename T>
Tensor<T> softmax(const Tensor<T>& t, std::string_view axis);

/// Softmax along `axis` restricted to positions with keep != 0. `keep` is
/// aligned elementwise with `t` (row-major). Slices with no kept position
/// come out all-zero.
template <typename T>
Tensor<T> masked_softmax(const Tensor<T>& t, const std::vector<std::uint8_t>& keep,
                         std::string_view axis);

/// Standardizes each slice along `axis` (biased variance, eps inside the
/// square root), then applies the affine gain/bias which must span exactly
/// [axis].
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& t, std::string_view axis, const Tensor<T>& gain,
                     const Tensor<T>& bias, T eps);

/// Sum of every element, as a rank-0 tensor.
template <typename T>
Tensor<T> sum_all(const Tensor<T>& t);

/// Explicit axis expansion: prepends `axis` and tiles the data. The only
/// broadcast this library performs.
template <typename T>
Tensor<T> expand_front(const Tensor<T>& t, const Axis& axis);

/// Merges two adjacent axes (first must immediately precede second) into one
/// axis of the product size. Row-major layout makes this a relabeling.
template <typename T>
Tensor<T> merge_axes(const Tensor<T>& t, std::string_view first, std::string_view second,
                     std::string_view merged);

template <typename T>
Tensor<T> rename_axis(const Tensor<T>& t, std::string_view from, std::string_view to);

/// Row lookup into `table` ([rows, rest...]) for each id; output axes are
/// id_axes + rest. Ids out of [0, rows) throw IndexError, never clamp.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, const std::vector<int>& ids, Axes id_axes);

/// Inverted dropout: scales kept entries by 1/(1-rate). Identity when
/// rng == nullptr (evaluation mode) or rate == 0.
template <typename T>
Tensor<T> dropout(const Tensor<T>& t, T rate, Rng* rng);

/// Mean token-level cross entropy of rank-2 logits [pos, class_axis] against
/// integer targets, skipping positions whose target equals ignore_id.
/// Throws Error when every position is ignored.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& targets,
                        std::string_view class_axis, int ignore_id);

/// Reverse-mode sweep from a scalar loss. Gradients of reachable
/// requires_grad tensors accumulate additively (not reset).
template <typename T>
void backward(const Tensor<T>& loss);

// ---- finite-difference verification ----

struct GradEntry {
    std::string name;
    double max_rel_err = 0.0;
    double analytic = 0.0; // analytic gradient at the worst element
    double numeric = 0.0;  // central-difference estimate at the worst element
};

struct GradReport {
    std::vector<GradEntry> entries;
    double max_rel_err = 0.0;

    bool passed(double tol) const { return max_rel_err <= tol; }
    std::string to_string() const;
};

/// Central-difference check of d f / d p for every element of every listed
/// parameter: rel err = |a - n| / max(|a|, |n|, 1e-8). `f` must rebuild its
/// graph on each call (it is invoked repeatedly with perturbed parameters)
/// and must be deterministic. 64-bit only; finite differences are not
/// trustworthy at float precision.
GradReport grad_check(const std::function<Tensor<double>()>& f,
                      const std::vector<std::pair<std::string, Tensor<double>>>& params,
                      double eps);

} // namespace csfc
