#include "csfc/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <unordered_set>

namespace csfc {

namespace {

std::size_t product(const Axes& axes) {
    std::size_t n = 1;
    for (const auto& a : axes) n *= a.size;
    return n;
}

std::vector<std::size_t> row_major_strides(const Axes& axes) {
    std::vector<std::size_t> s(axes.size(), 1);
    for (std::size_t i = axes.size(); i-- > 1;) {
        s[i - 1] = s[i] * axes[i].size;
    }
    return s;
}

void validate_axes(const Axes& axes) {
    for (std::size_t i = 0; i < axes.size(); ++i) {
        if (axes[i].name.empty()) {
            throw AxisError("axis name must not be empty");
        }
        if (axes[i].size == 0) {
            throw ShapeError("axis '" + axes[i].name + "' must have positive size");
        }
        for (std::size_t j = i + 1; j < axes.size(); ++j) {
            if (axes[i].name == axes[j].name) {
                throw AxisError("duplicate axis name '" + axes[i].name + "'");
            }
        }
    }
}

std::size_t find_axis(const Axes& axes, std::string_view name) {
    for (std::size_t i = 0; i < axes.size(); ++i) {
        if (axes[i].name == name) return i;
    }
    throw AxisError("unknown axis '" + std::string(name) + "' in " + axes_to_string(axes));
}

bool contains_axis(const Axes& axes, std::string_view name) {
    return std::any_of(axes.begin(), axes.end(),
                       [&](const Axis& a) { return a.name == name; });
}

/// Accumulates out[o] += sum a[ia] * b[ib], where indices are matched by
/// axis name across all three tensors and axes absent from `out_axes` are
/// summed over. Axis sizes must already be consistent.
template <typename T>
void accumulate_product(const Axes& a_axes, const T* a, const Axes& b_axes, const T* b,
                        const Axes& out_axes, T* out) {
    Axes u = out_axes;
    for (const auto& ax : a_axes) {
        if (!contains_axis(u, ax.name)) u.push_back(ax);
    }
    for (const auto& ax : b_axes) {
        if (!contains_axis(u, ax.name)) u.push_back(ax);
    }

    const auto sa = row_major_strides(a_axes);
    const auto sb = row_major_strides(b_axes);
    const auto so = row_major_strides(out_axes);
    std::vector<std::size_t> ua(u.size(), 0), ub(u.size(), 0), uo(u.size(), 0);
    std::vector<std::size_t> usize(u.size());
    for (std::size_t i = 0; i < u.size(); ++i) {
        usize[i] = u[i].size;
        for (std::size_t j = 0; j < a_axes.size(); ++j) {
            if (a_axes[j].name == u[i].name) ua[i] = sa[j];
        }
        for (std::size_t j = 0; j < b_axes.size(); ++j) {
            if (b_axes[j].name == u[i].name) ub[i] = sb[j];
        }
        for (std::size_t j = 0; j < out_axes.size(); ++j) {
            if (out_axes[j].name == u[i].name) uo[i] = so[j];
        }
    }

    if (u.empty()) {
        out[0] += a[0] * b[0];
        return;
    }

    std::vector<std::size_t> idx(u.size(), 0);
    std::size_t oa = 0, ob = 0, oo = 0;
    for (;;) {
        out[oo] += a[oa] * b[ob];
        std::size_t k = u.size();
        while (k-- > 0) {
            ++idx[k];
            oa += ua[k];
            ob += ub[k];
            oo += uo[k];
            if (idx[k] < usize[k]) break;
            idx[k] = 0;
            oa -= ua[k] * usize[k];
            ob -= ub[k] * usize[k];
            oo -= uo[k] * usize[k];
            if (k == 0) return;
        }
    }
}

template <typename T>
void require_same_axes(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    const Axes& x = a.axes();
    const Axes& y = b.axes();
    if (x.size() != y.size()) {
        throw ShapeError(std::string(op) + ": rank mismatch " + axes_to_string(x) +
                         " vs " + axes_to_string(y));
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (x[i].name != y[i].name) {
            throw AxisError(std::string(op) + ": axis mismatch " + axes_to_string(x) +
                            " vs " + axes_to_string(y));
        }
        if (x[i].size != y[i].size) {
            throw ShapeError(std::string(op) + ": size mismatch " + axes_to_string(x) +
                             " vs " + axes_to_string(y));
        }
    }
}

template <typename T>
void require_finite(const Tensor<T>& t, const char* op) {
    for (T v : t.data()) {
        if (std::isnan(v)) {
            throw NumericError(std::string(op) + ": input contains NaN");
        }
    }
}

} // namespace

std::string axes_to_string(const Axes& axes) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < axes.size(); ++i) {
        if (i) os << ", ";
        os << axes[i].name << '=' << axes[i].size;
    }
    os << ']';
    return os.str();
}

// ---- Tensor handle ----

template <typename T>
Tensor<T> Tensor<T>::zeros(Axes axes) {
    validate_axes(axes);
    auto node = std::make_shared<detail::Node<T>>();
    node->data.assign(product(axes), T(0));
    node->axes = std::move(axes);
    return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::full(Axes axes, T value) {
    Tensor t = zeros(std::move(axes));
    std::fill(t.node_->data.begin(), t.node_->data.end(), value);
    return t;
}

template <typename T>
Tensor<T> Tensor<T>::from_data(Axes axes, std::vector<T> data) {
    validate_axes(axes);
    if (data.size() != product(axes)) {
        throw ShapeError("from_data: " + std::to_string(data.size()) +
                         " values do not fill " + axes_to_string(axes));
    }
    auto node = std::make_shared<detail::Node<T>>();
    node->axes = std::move(axes);
    node->data = std::move(data);
    return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::uniform(Axes axes, T lo, T hi, Rng& rng) {
    Tensor t = zeros(std::move(axes));
    for (T& v : t.node_->data) {
        v = static_cast<T>(rng.uniform(static_cast<double>(lo), static_cast<double>(hi)));
    }
    return t;
}

template <typename T>
bool Tensor<T>::has_axis(std::string_view name) const {
    return contains_axis(node_->axes, name);
}

template <typename T>
std::size_t Tensor<T>::axis_index(std::string_view name) const {
    return find_axis(node_->axes, name);
}

template <typename T>
std::size_t Tensor<T>::axis_size(std::string_view name) const {
    return node_->axes[find_axis(node_->axes, name)].size;
}

template <typename T>
T Tensor<T>::value() const {
    if (node_->data.size() != 1) {
        throw ShapeError("value: tensor " + axes_to_string(node_->axes) +
                         " has more than one element");
    }
    return node_->data[0];
}

template <typename T>
T Tensor<T>::at(const std::vector<std::size_t>& index) const {
    const Axes& axes = node_->axes;
    if (index.size() != axes.size()) {
        throw ShapeError("at: index rank " + std::to_string(index.size()) +
                         " vs tensor " + axes_to_string(axes));
    }
    const auto strides = row_major_strides(axes);
    std::size_t off = 0;
    for (std::size_t i = 0; i < index.size(); ++i) {
        if (index[i] >= axes[i].size) {
            throw IndexError("at: index " + std::to_string(index[i]) +
                             " out of range for axis '" + axes[i].name + "'");
        }
        off += index[i] * strides[i];
    }
    return node_->data[off];
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
    return node_->ensure_grad();
}

template <typename T>
void Tensor<T>::zero_grad() {
    if (!node_->grad.empty()) {
        std::fill(node_->grad.begin(), node_->grad.end(), T(0));
    }
}

// ---- graph construction ----

template <typename T>
Tensor<T> make_op(Axes axes, std::vector<T> data, std::vector<Tensor<T>> parents,
                  std::function<void(detail::Node<T>&)> backward) {
    validate_axes(axes);
    if (data.size() != product(axes)) {
        throw ShapeError("make_op: " + std::to_string(data.size()) +
                         " values do not fill " + axes_to_string(axes));
    }
    auto node = std::make_shared<detail::Node<T>>();
    node->axes = std::move(axes);
    node->data = std::move(data);
    for (const auto& p : parents) {
        node->parents.push_back(p.node());
        if (p.requires_grad()) node->requires_grad = true;
    }
    if (node->requires_grad) {
        node->backward_fn = std::move(backward);
    }
    return Tensor<T>(std::move(node));
}

// ---- operations ----

template <typename T>
Tensor<T> contract(const Tensor<T>& a, const Tensor<T>& b, std::string_view axis) {
    const std::size_t ia = find_axis(a.axes(), axis);
    const std::size_t ib = find_axis(b.axes(), axis);
    if (a.axes()[ia].size != b.axes()[ib].size) {
        throw ShapeError("contract: axis '" + std::string(axis) + "' has size " +
                         std::to_string(a.axes()[ia].size) + " vs " +
                         std::to_string(b.axes()[ib].size));
    }
    Axes out_axes;
    for (const auto& ax : a.axes()) {
        if (ax.name != axis) out_axes.push_back(ax);
    }
    for (const auto& ax : b.axes()) {
        if (ax.name == axis) continue;
        if (contains_axis(out_axes, ax.name)) {
            throw AxisError("contract: axis '" + ax.name +
                            "' appears in both operands but is not contracted");
        }
        out_axes.push_back(ax);
    }

    std::vector<T> out(product(out_axes), T(0));
    accumulate_product(a.axes(), a.data().data(), b.axes(), b.data().data(), out_axes,
                       out.data());

    auto an = a.node();
    auto bn = b.node();
    return make_op<T>(
        out_axes, std::move(out), {a, b}, [an, bn](detail::Node<T>& self) {
            if (an->requires_grad) {
                accumulate_product(self.axes, self.grad.data(), bn->axes,
                                   bn->data.data(), an->axes, an->ensure_grad().data());
            }
            if (bn->requires_grad) {
                accumulate_product(self.axes, self.grad.data(), an->axes,
                                   an->data.data(), bn->axes, bn->ensure_grad().data());
            }
        });
}

namespace {

template <typename T, typename Fwd, typename Bwd>
Tensor<T> binary_elementwise(const Tensor<T>& a, const Tensor<T>& b, const char* op,
                             Fwd fwd, Bwd bwd) {
    require_same_axes(a, b, op);
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = fwd(a.data()[i], b.data()[i]);
    }
    auto an = a.node();
    auto bn = b.node();
    return make_op<T>(a.axes(), std::move(out), {a, b}, [an, bn, bwd](detail::Node<T>& self) {
        bwd(self, *an, *bn);
    });
}

} // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_elementwise(
        a, b, "add", [](T x, T y) { return x + y; },
        [](detail::Node<T>& self, detail::Node<T>& an, detail::Node<T>& bn) {
            if (an.requires_grad) {
                auto& g = an.ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
            }
            if (bn.requires_grad) {
                auto& g = bn.ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
            }
        });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_elementwise(
        a, b, "sub", [](T x, T y) { return x - y; },
        [](detail::Node<T>& self, detail::Node<T>& an, detail::Node<T>& bn) {
            if (an.requires_grad) {
                auto& g = an.ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
            }
            if (bn.requires_grad) {
                auto& g = bn.ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
            }
        });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_elementwise(
        a, b, "mul", [](T x, T y) { return x * y; },
        [](detail::Node<T>& self, detail::Node<T>& an, detail::Node<T>& bn) {
            if (an.requires_grad) {
                auto& g = an.ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bn.data[i];
            }
            if (bn.requires_grad) {
                auto& g = bn.ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * an.data[i];
            }
        });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * factor;
    auto an = a.node();
    return make_op<T>(a.axes(), std::move(out), {a}, [an, factor](detail::Node<T>& self) {
        if (!an->requires_grad) return;
        auto& g = an->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
    });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a.data()[i] > T(0) ? a.data()[i] : T(0);
    }
    auto an = a.node();
    return make_op<T>(a.axes(), std::move(out), {a}, [an](detail::Node<T>& self) {
        if (!an->requires_grad) return;
        auto& g = an->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (an->data[i] > T(0)) g[i] += self.grad[i];
        }
    });
}

namespace {

/// Iterates a tensor as (outer, axis, inner) with the softmax/norm axis in
/// the middle; calls fn(base_offset, stride, count) once per slice.
template <typename Fn>
void for_each_slice(const Axes& axes, std::size_t axis_idx, Fn fn) {
    const auto strides = row_major_strides(axes);
    const std::size_t count = axes[axis_idx].size;
    const std::size_t stride = strides[axis_idx];
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis_idx; ++i) outer *= axes[i].size;
    for (std::size_t i = axis_idx + 1; i < axes.size(); ++i) inner *= axes[i].size;
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            fn(o * count * inner + in, stride, count);
        }
    }
}

template <typename T>
void softmax_backward_slices(detail::Node<T>& self, detail::Node<T>& parent,
                             std::size_t axis_idx) {
    auto& g = parent.ensure_grad();
    for_each_slice(self.axes, axis_idx, [&](std::size_t base, std::size_t stride,
                                            std::size_t count) {
        T dot = T(0);
        for (std::size_t i = 0; i < count; ++i) {
            const std::size_t k = base + i * stride;
            dot += self.grad[k] * self.data[k];
        }
        for (std::size_t i = 0; i < count; ++i) {
            const std::size_t k = base + i * stride;
            g[k] += self.data[k] * (self.grad[k] - dot);
        }
    });
}

} // namespace

template <typename T>
Tensor<T> softmax(const Tensor<T>& t, std::string_view axis) {
    require_finite(t, "softmax");
    const std::size_t ai = find_axis(t.axes(), axis);
    std::vector<T> out(t.size());
    const T* x = t.data().data();
    for_each_slice(t.axes(), ai, [&](std::size_t base, std::size_t stride,
                                     std::size_t count) {
        T mx = x[base];
        for (std::size_t i = 1; i < count; ++i) mx = std::max(mx, x[base + i * stride]);
        T denom = T(0);
        for (std::size_t i = 0; i < count; ++i) {
            const std::size_t k = base + i * stride;
            out[k] = std::exp(x[k] - mx);
            denom += out[k];
        }
        for (std::size_t i = 0; i < count; ++i) out[base + i * stride] /= denom;
    });
    auto tn = t.node();
    return make_op<T>(t.axes(), std::move(out), {t}, [tn, ai](detail::Node<T>& self) {
        if (tn->requires_grad) softmax_backward_slices(self, *tn, ai);
    });
}

template <typename T>
Tensor<T> masked_softmax(const Tensor<T>& t, const std::vector<std::uint8_t>& keep,
                         std::string_view axis) {
    require_finite(t, "masked_softmax");
    if (keep.size() != t.size()) {
        throw ShapeError("masked_softmax: mask has " + std::to_string(keep.size()) +
                         " entries for tensor " + axes_to_string(t.axes()));
    }
    const std::size_t ai = find_axis(t.axes(), axis);
    std::vector<T> out(t.size(), T(0));
    const T* x = t.data().data();
    for_each_slice(t.axes(), ai, [&](std::size_t base, std::size_t stride,
                                     std::size_t count) {
        T mx = T(0);
        bool any = false;
        for (std::size_t i = 0; i < count; ++i) {
            const std::size_t k = base + i * stride;
            if (keep[k] && (!any || x[k] > mx)) {
                mx = x[k];
                any = true;
            }
        }
        if (!any) return; // fully masked slice stays zero
        T denom = T(0);
        for (std::size_t i = 0; i < count; ++i) {
            const std::size_t k = base + i * stride;
            if (keep[k]) {
                out[k] = std::exp(x[k] - mx);
                denom += out[k];
            }
        }
        for (std::size_t i = 0; i < count; ++i) {
            const std::size_t k = base + i * stride;
            if (keep[k]) out[k] /= denom;
        }
    });
    auto tn = t.node();
    return make_op<T>(t.axes(), std::move(out), {t}, [tn, ai](detail::Node<T>& self) {
        // y is zero at masked positions, so the usual softmax rule already
        // sends them zero gradient.
        if (tn->requires_grad) softmax_backward_slices(self, *tn, ai);
    });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& t, std::string_view axis, const Tensor<T>& gain,
                     const Tensor<T>& bias, T eps) {
    const std::size_t ai = find_axis(t.axes(), axis);
    const std::size_t n = t.axes()[ai].size;
    const Axes want{{std::string(axis), n}};
    if (gain.axes() != want || bias.axes() != want) {
        throw ShapeError("layer_norm: gain/bias must have axes " + axes_to_string(want));
    }

    std::vector<T> out(t.size());
    auto xhat = std::make_shared<std::vector<T>>(t.size());
    auto inv_s = std::make_shared<std::vector<T>>();
    inv_s->reserve(t.size() / n);
    const T* x = t.data().data();
    const T* g = gain.data().data();
    const T* b = bias.data().data();
    for_each_slice(t.axes(), ai, [&](std::size_t base, std::size_t stride,
                                     std::size_t count) {
        T mean = T(0);
        for (std::size_t i = 0; i < count; ++i) mean += x[base + i * stride];
        mean /= static_cast<T>(count);
        T var = T(0);
        for (std::size_t i = 0; i < count; ++i) {
            const T d = x[base + i * stride] - mean;
            var += d * d;
        }
        var /= static_cast<T>(count);
        const T is = T(1) / std::sqrt(var + eps);
        inv_s->push_back(is);
        for (std::size_t i = 0; i < count; ++i) {
            const std::size_t k = base + i * stride;
            (*xhat)[k] = (x[k] - mean) * is;
            out[k] = g[i] * (*xhat)[k] + b[i];
        }
    });

    auto tn = t.node();
    auto gn = gain.node();
    auto bn = bias.node();
    return make_op<T>(
        t.axes(), std::move(out), {t, gain, bias},
        [tn, gn, bn, ai, xhat, inv_s](detail::Node<T>& self) {
            std::size_t slice = 0;
            for_each_slice(self.axes, ai, [&](std::size_t base, std::size_t stride,
                                              std::size_t count) {
                const T is = (*inv_s)[slice++];
                if (gn->requires_grad) {
                    auto& gg = gn->ensure_grad();
                    for (std::size_t i = 0; i < count; ++i) {
                        const std::size_t k = base + i * stride;
                        gg[i] += self.grad[k] * (*xhat)[k];
                    }
                }
                if (bn->requires_grad) {
                    auto& bg = bn->ensure_grad();
                    for (std::size_t i = 0; i < count; ++i) {
                        bg[i] += self.grad[base + i * stride];
                    }
                }
                if (tn->requires_grad) {
                    auto& tg = tn->ensure_grad();
                    T mean_u = T(0), mean_ux = T(0);
                    for (std::size_t i = 0; i < count; ++i) {
                        const std::size_t k = base + i * stride;
                        const T u = gn->data[i] * self.grad[k];
                        mean_u += u;
                        mean_ux += u * (*xhat)[k];
                    }
                    mean_u /= static_cast<T>(count);
                    mean_ux /= static_cast<T>(count);
                    for (std::size_t i = 0; i < count; ++i) {
                        const std::size_t k = base + i * stride;
                        const T u = gn->data[i] * self.grad[k];
                        tg[k] += is * (u - mean_u - (*xhat)[k] * mean_ux);
                    }
                }
            });
        });
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& t) {
    T total = T(0);
    for (T v : t.data()) total += v;
    auto tn = t.node();
    return make_op<T>({}, {total}, {t}, [tn](detail::Node<T>& self) {
        if (!tn->requires_grad) return;
        auto& g = tn->ensure_grad();
        for (T& v : g) v += self.grad[0];
    });
}

template <typename T>
Tensor<T> expand_front(const Tensor<T>& t, const Axis& axis) {
    if (contains_axis(t.axes(), axis.name)) {
        throw AxisError("expand_front: axis '" + axis.name + "' already present");
    }
    if (axis.size == 0) {
        throw ShapeError("expand_front: axis '" + axis.name + "' must have positive size");
    }
    Axes out_axes{axis};
    out_axes.insert(out_axes.end(), t.axes().begin(), t.axes().end());
    std::vector<T> out;
    out.reserve(t.size() * axis.size);
    for (std::size_t r = 0; r < axis.size; ++r) {
        out.insert(out.end(), t.data().begin(), t.data().end());
    }
    auto tn = t.node();
    const std::size_t block = t.size();
    return make_op<T>(out_axes, std::move(out), {t},
                      [tn, block](detail::Node<T>& self) {
                          if (!tn->requires_grad) return;
                          auto& g = tn->ensure_grad();
                          for (std::size_t i = 0; i < self.grad.size(); ++i) {
                              g[i % block] += self.grad[i];
                          }
                      });
}

template <typename T>
Tensor<T> merge_axes(const Tensor<T>& t, std::string_view first, std::string_view second,
                     std::string_view merged) {
    const std::size_t i = find_axis(t.axes(), first);
    const std::size_t j = find_axis(t.axes(), second);
    if (j != i + 1) {
        throw AxisError("merge_axes: '" + std::string(first) + "' must immediately precede '" +
                        std::string(second) + "' in " + axes_to_string(t.axes()));
    }
    Axes out_axes;
    for (std::size_t k = 0; k < t.axes().size(); ++k) {
        if (k == i) {
            out_axes.push_back({std::string(merged), t.axes()[i].size * t.axes()[j].size});
        } else if (k != j) {
            out_axes.push_back(t.axes()[k]);
        }
    }
    validate_axes(out_axes);
    std::vector<T> out(t.data().begin(), t.data().end());
    auto tn = t.node();
    return make_op<T>(out_axes, std::move(out), {t}, [tn](detail::Node<T>& self) {
        if (!tn->requires_grad) return;
        auto& g = tn->ensure_grad();
        for (std::size_t k = 0; k < g.size(); ++k) g[k] += self.grad[k];
    });
}

template <typename T>
Tensor<T> rename_axis(const Tensor<T>& t, std::string_view from, std::string_view to) {
    const std::size_t i = find_axis(t.axes(), from);
    Axes out_axes = t.axes();
    out_axes[i].name = std::string(to);
    validate_axes(out_axes);
    std::vector<T> out(t.data().begin(), t.data().end());
    auto tn = t.node();
    return make_op<T>(out_axes, std::move(out), {t}, [tn](detail::Node<T>& self) {
        if (!tn->requires_grad) return;
        auto& g = tn->ensure_grad();
        for (std::size_t k = 0; k < g.size(); ++k) g[k] += self.grad[k];
    });
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, const std::vector<int>& ids, Axes id_axes) {
    if (table.rank() == 0) {
        throw ShapeError("gather_rows: table must have a leading row axis");
    }
    validate_axes(id_axes);
    std::size_t want = 1;
    for (const auto& a : id_axes) want *= a.size;
    if (ids.size() != want) {
        throw ShapeError("gather_rows: " + std::to_string(ids.size()) +
                         " ids do not fill " + axes_to_string(id_axes));
    }
    const std::size_t rows = table.axes()[0].size;
    const std::size_t width = table.size() / rows;
    for (int id : ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= rows) {
            throw IndexError("gather_rows: id " + std::to_string(id) +
                             " out of range for axis '" + table.axes()[0].name + "' of size " +
                             std::to_string(rows));
        }
    }
    Axes out_axes = id_axes;
    for (std::size_t k = 1; k < table.axes().size(); ++k) {
        out_axes.push_back(table.axes()[k]);
    }
    validate_axes(out_axes);
    std::vector<T> out(ids.size() * width);
    const T* src = table.data().data();
    for (std::size_t r = 0; r < ids.size(); ++r) {
        std::copy_n(src + static_cast<std::size_t>(ids[r]) * width, width,
                    out.begin() + r * width);
    }
    auto tn = table.node();
    auto held = std::make_shared<std::vector<int>>(ids);
    return make_op<T>(out_axes, std::move(out), {table},
                      [tn, held, width](detail::Node<T>& self) {
                          if (!tn->requires_grad) return;
                          auto& g = tn->ensure_grad();
                          for (std::size_t r = 0; r < held->size(); ++r) {
                              T* dst = g.data() + static_cast<std::size_t>((*held)[r]) * width;
                              const T* sg = self.grad.data() + r * width;
                              for (std::size_t k = 0; k < width; ++k) dst[k] += sg[k];
                          }
                      });
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& t, T rate, Rng* rng) {
    if (rate < T(0) || rate >= T(1)) {
        throw ConfigError("dropout: rate must lie in [0, 1)");
    }
    if (rng == nullptr || rate == T(0)) {
        return t;
    }
    const T keep_scale = T(1) / (T(1) - rate);
    auto mask = std::make_shared<std::vector<T>>(t.size());
    std::vector<T> out(t.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const bool keep = rng->next_double() >= static_cast<double>(rate);
        (*mask)[i] = keep ? keep_scale : T(0);
        out[i] = t.data()[i] * (*mask)[i];
    }
    auto tn = t.node();
    return make_op<T>(t.axes(), std::move(out), {t}, [tn, mask](detail::Node<T>& self) {
        if (!tn->requires_grad) return;
        auto& g = tn->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * (*mask)[i];
    });
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& targets,
                        std::string_view class_axis, int ignore_id) {
    if (logits.rank() != 2) {
        throw ShapeError("cross_entropy: logits must be rank 2, got " +
                         axes_to_string(logits.axes()));
    }
    const std::size_t ci = find_axis(logits.axes(), class_axis);
    const std::size_t pi = 1 - ci;
    const std::size_t classes = logits.axes()[ci].size;
    const std::size_t positions = logits.axes()[pi].size;
    if (targets.size() != positions) {
        throw ShapeError("cross_entropy: " + std::to_string(targets.size()) +
                         " targets for " + std::to_string(positions) + " positions");
    }
    const auto strides = row_major_strides(logits.axes());
    const std::size_t cs = strides[ci];
    const std::size_t ps = strides[pi];

    auto probs = std::make_shared<std::vector<T>>(logits.size(), T(0));
    auto counted = std::make_shared<std::vector<std::size_t>>();
    const T* x = logits.data().data();
    T total = T(0);
    for (std::size_t p = 0; p < positions; ++p) {
        const int tgt = targets[p];
        if (tgt == ignore_id) continue;
        if (tgt < 0 || static_cast<std::size_t>(tgt) >= classes) {
            throw IndexError("cross_entropy: target " + std::to_string(tgt) +
                             " out of range for axis '" + std::string(class_axis) +
                             "' of size " + std::to_string(classes));
        }
        counted->push_back(p);
        const std::size_t base = p * ps;
        T mx = x[base];
        for (std::size_t c = 1; c < classes; ++c) mx = std::max(mx, x[base + c * cs]);
        T denom = T(0);
        for (std::size_t c = 0; c < classes; ++c) {
            const T e = std::exp(x[base + c * cs] - mx);
            (*probs)[base + c * cs] = e;
            denom += e;
        }
        for (std::size_t c = 0; c < classes; ++c) (*probs)[base + c * cs] /= denom;
        total -= std::log((*probs)[base + static_cast<std::size_t>(tgt) * cs]);
    }
    if (counted->empty()) {
        throw Error("cross_entropy: every position has the ignored target id");
    }
    total /= static_cast<T>(counted->size());

    auto ln = logits.node();
    auto held = std::make_shared<std::vector<int>>(targets);
    return make_op<T>(
        {}, {total}, {logits},
        [ln, probs, counted, held, cs, ps, classes](detail::Node<T>& self) {
            if (!ln->requires_grad) return;
            auto& g = ln->ensure_grad();
            const T inv = self.grad[0] / static_cast<T>(counted->size());
            for (std::size_t p : *counted) {
                const std::size_t base = p * ps;
                const auto tgt = static_cast<std::size_t>((*held)[p]);
                for (std::size_t c = 0; c < classes; ++c) {
                    const std::size_t k = base + c * cs;
                    T v = (*probs)[k];
                    if (c == tgt) v -= T(1);
                    g[k] += v * inv;
                }
            }
        });
}

// ---- backward sweep ----

template <typename T>
void backward(const Tensor<T>& loss) {
    if (loss.size() != 1) {
        throw ShapeError("backward: loss must be a single value, got " +
                         axes_to_string(loss.axes()));
    }
    using NodeT = detail::Node<T>;
    NodeT* root = loss.node().get();
    if (!root->requires_grad) return;

    // Iterative post-order over the parent DAG; reversing it gives a
    // topological order with every consumer ahead of its producers.
    std::vector<NodeT*> order;
    std::unordered_set<NodeT*> seen;
    std::vector<std::pair<NodeT*, bool>> stack{{root, false}};
    while (!stack.empty()) {
        auto [node, finished] = stack.back();
        stack.pop_back();
        if (finished) {
            order.push_back(node);
            continue;
        }
        if (!seen.insert(node).second) continue;
        stack.emplace_back(node, true);
        for (const auto& p : node->parents) {
            if (p->requires_grad && !seen.count(p.get())) {
                stack.emplace_back(p.get(), false);
            }
        }
    }

    root->ensure_grad()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        NodeT* n = *it;
        if (n->backward_fn && !n->grad.empty()) {
            n->backward_fn(*n);
        }
    }
}

// ---- finite differences ----

std::string GradReport::to_string() const {
    std::ostringstream os;
    for (const auto& e : entries) {
        char line[256];
        std::snprintf(line, sizeof(line), "%-24s rel_err=%.3e analytic=%.6e numeric=%.6e",
                      e.name.c_str(), e.max_rel_err, e.analytic, e.numeric);
        os << line << '\n';
    }
    char tail[64];
    std::snprintf(tail, sizeof(tail), "max rel_err=%.3e", max_rel_err);
    os << tail;
    return os.str();
}

GradReport grad_check(const std::function<Tensor<double>()>& f,
                      const std::vector<std::pair<std::string, Tensor<double>>>& params,
                      double eps) {
    if (eps <= 0.0) {
        throw ConfigError("grad_check: eps must be positive");
    }
    GradReport report;
    for (auto& [name, p] : params) {
        Tensor<double> t = p;
        t.set_requires_grad(true);
        t.zero_grad();
    }
    Tensor<double> loss = f();
    backward(loss);

    for (const auto& [name, p] : params) {
        Tensor<double> t = p;
        std::vector<double> analytic(t.grad().begin(), t.grad().end());
        GradEntry entry;
        entry.name = name;
        auto data = t.mutable_data();
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double saved = data[i];
            data[i] = saved + eps;
            const double up = f().value();
            data[i] = saved - eps;
            const double down = f().value();
            data[i] = saved;
            const double numeric = (up - down) / (2.0 * eps);
            const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
            const double rel = std::abs(analytic[i] - numeric) / denom;
            if (rel >= entry.max_rel_err) {
                entry.max_rel_err = rel;
                entry.analytic = analytic[i];
                entry.numeric = numeric;
            }
        }
        report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
        report.entries.push_back(std::move(entry));
    }
    return report;
}

// ---- explicit instantiations ----

#define CSFC_INSTANTIATE_TENSOR(T)                                                        \
    template class Tensor<T>;                                                             \
    template Tensor<T> make_op<T>(Axes, std::vector<T>, std::vector<Tensor<T>>,           \
                                  std::function<void(detail::Node<T>&)>);                 \
    template Tensor<T> contract<T>(const Tensor<T>&, const Tensor<T>&, std::string_view); \
    template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                        \
    template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                        \
    template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                        \
    template Tensor<T> scale<T>(const Tensor<T>&, T);                                     \
    template Tensor<T> relu<T>(const Tensor<T>&);                                         \
    template Tensor<T> softmax<T>(const Tensor<T>&, std::string_view);                    \
    template Tensor<T> masked_softmax<T>(const Tensor<T>&,                                \
                                         const std::vector<std::uint8_t>&,                \
                                         std::string_view);                               \
    template Tensor<T> layer_norm<T>(const Tensor<T>&, std::string_view,                  \
                                     const Tensor<T>&, const Tensor<T>&, T);              \
    template Tensor<T> sum_all<T>(const Tensor<T>&);                                      \
    template Tensor<T> expand_front<T>(const Tensor<T>&, const Axis&);                    \
    template Tensor<T> merge_axes<T>(const Tensor<T>&, std::string_view,                  \
                                     std::string_view, std::string_view);                 \
    template Tensor<T> rename_axis<T>(const Tensor<T>&, std::string_view,                 \
                                      std::string_view);                                  \
    template Tensor<T> gather_rows<T>(const Tensor<T>&, const std::vector<int>&, Axes);   \
    template Tensor<T> dropout<T>(const Tensor<T>&, T, Rng*);                             \
    template Tensor<T> cross_entropy<T>(const Tensor<T>&, const std::vector<int>&,        \
                                        std::string_view, int);                           \
    template void backward<T>(const Tensor<T>&);

CSFC_INSTANTIATE_TENSOR(float)
CSFC_INSTANTIATE_TENSOR(double)

#undef CSFC_INSTANTIATE_TENSOR

} // namespace csfc
