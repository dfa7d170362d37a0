#include "jamident/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

namespace jamident::ad {

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

std::size_t shape_numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

namespace {

std::atomic<std::uint64_t> g_visit_epoch{0};

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

[[noreturn]] void shape_error(const char* op, const std::string& what, const Shape& a) {
    throw std::invalid_argument(std::string(op) + ": " + what + ", got " + shape_str(a));
}

template <class T>
void require_defined(const Tensor<T>& t, const char* op) {
    if (!t.defined()) throw std::invalid_argument(std::string(op) + ": undefined tensor");
}

template <class T>
void require_2d(const Tensor<T>& t, const char* op) {
    require_defined(t, op);
    if (t.dim() != 2) shape_error(op, "expected a 2-D tensor", t.shape());
}

template <class T>
std::shared_ptr<Node<T>> make_node(Shape shape, const char* op, std::initializer_list<const Tensor<T>*> parents) {
    auto n = std::make_shared<Node<T>>();
    n->value.assign(shape_numel(shape), T(0));
    n->shape = std::move(shape);
    n->op = op;
    for (const auto* p : parents)
        if (p && p->defined() && p->requires_grad()) n->requires_grad = true;
    if (n->requires_grad) {
        for (const auto* p : parents)
            if (p && p->defined()) n->parents.push_back(p->node_ptr());
    }
    return n;
}

template <class T>
Node<T>* grad_target(const Tensor<T>& t) {
    if (!t.defined() || !t.requires_grad()) return nullptr;
    t.node()->ensure_grad();
    return t.node();
}

// c[m x n] += a[m x k] * b[k x n]
template <class T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        T* ci = c + i * n;
        const T* ai = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = ai[p];
            const T* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

// c[m x n] += a[m x k] * b[n x k]^T
template <class T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* ai = a + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const T* bj = b + j * k;
            T acc = T(0);
            for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
            c[i * n + j] += acc;
        }
    }
}

// c[k x n] += a[m x k]^T * b[m x n]
template <class T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* ai = a + i * k;
        const T* bi = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = ai[p];
            T* cp = c + p * n;
            for (std::size_t j = 0; j < n; ++j) cp[j] += av * bi[j];
        }
    }
}

std::vector<std::size_t> resolve_segments(std::span<const std::size_t> segments, std::size_t rows, const char* op) {
    if (segments.empty()) return {rows};
    const std::size_t total = std::accumulate(segments.begin(), segments.end(), std::size_t{0});
    if (total != rows)
        throw std::invalid_argument(std::string(op) + ": segments cover " + std::to_string(total) + " rows, tensor has " +
                                    std::to_string(rows));
    return {segments.begin(), segments.end()};
}

} // namespace

// ---- Tensor members -----------------------------------------------------

template <class T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), T(0), requires_grad);
}

template <class T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
    auto n = std::make_shared<Node<T>>();
    n->value.assign(shape_numel(shape), value);
    n->shape = std::move(shape);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

template <class T>
Tensor<T> Tensor<T>::from_data(Shape shape, std::vector<T> data, bool requires_grad) {
    if (shape_numel(shape) != data.size())
        throw std::invalid_argument("from_data: " + std::to_string(data.size()) + " values for shape " + shape_str(shape));
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    n->value = std::move(data);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

template <class T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
    return full({1}, value, requires_grad);
}

template <class T>
std::vector<T> Tensor<T>::grad_or_zero() const {
    if (node_->grad.empty()) return std::vector<T>(node_->value.size(), T(0));
    return node_->grad;
}

template <class T>
T Tensor<T>::item() const {
    if (numel() != 1) throw std::invalid_argument("item: tensor is not a scalar, shape " + shape_str(shape()));
    return node_->value[0];
}

template <class T>
Tensor<T> Tensor<T>::detach(bool requires_grad) const {
    return from_data(node_->shape, node_->value, requires_grad);
}

template <class T>
void Tensor<T>::backward() {
    if (numel() != 1) throw std::invalid_argument("backward: loss must be a scalar, shape " + shape_str(shape()));
    if (node_->backward_ran) throw std::logic_error("backward: already called on this graph; call reset_backward() first");
    node_->backward_ran = true;
    if (!node_->requires_grad) return;

    // Iterative post-order DFS gives a topological order (parents first).
    const std::uint64_t mark = ++g_visit_epoch;
    std::vector<Node<T>*> order;
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    node_->visit_mark = mark;
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            Node<T>* p = n->parents[next++].get();
            if (p->requires_grad && p->visit_mark != mark) {
                p->visit_mark = mark;
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    node_->ensure_grad();
    node_->grad[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* n = *it;
        if (n->backward && !n->grad.empty()) n->backward(*n);
    }
}

template <class T>
void Tensor<T>::reset_backward() {
    const std::uint64_t mark = ++g_visit_epoch;
    std::vector<Node<T>*> stack{node_.get()};
    node_->visit_mark = mark;
    while (!stack.empty()) {
        Node<T>* n = stack.back();
        stack.pop_back();
        if (n->backward) n->grad.clear();
        for (auto& p : n->parents)
            if (p->visit_mark != mark) {
                p->visit_mark = mark;
                stack.push_back(p.get());
            }
    }
    node_->backward_ran = false;
}

// ---- elementwise ----------------------------------------------------------

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    require_defined(a, "add");
    require_defined(b, "add");
    if (a.shape() != b.shape()) shape_error("add", a.shape(), b.shape());
    auto n = make_node<T>(a.shape(), "add", {&a, &b});
    for (std::size_t i = 0; i < n->value.size(); ++i) n->value[i] = a.data()[i] + b.data()[i];
    if (n->requires_grad) {
        n->backward = [a, b](Node<T>& self) {
            for (auto* g : {grad_target(a), grad_target(b)})
                if (g)
                    for (std::size_t i = 0; i < self.grad.size(); ++i) g->grad[i] += self.grad[i];
        };
    }
    return Tensor<T>(n);
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    require_defined(a, "sub");
    require_defined(b, "sub");
    if (a.shape() != b.shape()) shape_error("sub", a.shape(), b.shape());
    auto n = make_node<T>(a.shape(), "sub", {&a, &b});
    for (std::size_t i = 0; i < n->value.size(); ++i) n->value[i] = a.data()[i] - b.data()[i];
    if (n->requires_grad) {
        n->backward = [a, b](Node<T>& self) {
            if (auto* g = grad_target(a))
                for (std::size_t i = 0; i < self.grad.size(); ++i) g->grad[i] += self.grad[i];
            if (auto* g = grad_target(b))
                for (std::size_t i = 0; i < self.grad.size(); ++i) g->grad[i] -= self.grad[i];
        };
    }
    return Tensor<T>(n);
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    require_defined(a, "mul");
    require_defined(b, "mul");
    if (a.shape() != b.shape()) shape_error("mul", a.shape(), b.shape());
    auto n = make_node<T>(a.shape(), "mul", {&a, &b});
    for (std::size_t i = 0; i < n->value.size(); ++i) n->value[i] = a.data()[i] * b.data()[i];
    if (n->requires_grad) {
        n->backward = [a, b](Node<T>& self) {
            if (auto* g = grad_target(a))
                for (std::size_t i = 0; i < self.grad.size(); ++i) g->grad[i] += self.grad[i] * b.data()[i];
            if (auto* g = grad_target(b))
                for (std::size_t i = 0; i < self.grad.size(); ++i) g->grad[i] += self.grad[i] * a.data()[i];
        };
    }
    return Tensor<T>(n);
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T s) {
    require_defined(a, "scale");
    auto n = make_node<T>(a.shape(), "scale", {&a});
    for (std::size_t i = 0; i < n->value.size(); ++i) n->value[i] = a.data()[i] * s;
    if (n->requires_grad) {
        n->backward = [a, s](Node<T>& self) {
            if (auto* g = grad_target(a))
                for (std::size_t i = 0; i < self.grad.size(); ++i) g->grad[i] += self.grad[i] * s;
        };
    }
    return Tensor<T>(n);
}

template <class T>
Tensor<T> add_bias(const Tensor<T>& a, const Tensor<T>& bias) {
    require_2d(a, "add_bias");
    require_defined(bias, "add_bias");
    const std::size_t m = a.size(0), c = a.size(1);
    if (bias.numel() != c) shape_error("add_bias", a.shape(), bias.shape());
    auto n = make_node<T>(a.shape(), "add_bias", {&a, &bias});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < c; ++j) n->value[i * c + j] = a.data()[i * c + j] + bias.data()[j];
    if (n->requires_grad) {
        n->backward = [a, bias, m, c](Node<T>& self) {
            if (auto* g = grad_target(a))
                for (std::size_t i = 0; i < self.grad.size(); ++i) g->grad[i] += self.grad[i];
            if (auto* g = grad_target(bias))
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < c; ++j) g->grad[j] += self.grad[i * c + j];
        };
    }
    return Tensor<T>(n);
}

template <class T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
    require_defined(a, "reshape");
    if (shape_numel(shape) != a.numel()) shape_error("reshape", a.shape(), shape);
    auto n = make_node<T>(std::move(shape), "reshape", {&a});
    std::copy(a.data().begin(), a.data().end(), n->value.begin());
    if (n->requires_grad) {
        n->backward = [a](Node<T>& self) {
            if (auto* g = grad_target(a))
                for (std::size_t i = 0; i < self.grad.size(); ++i) g->grad[i] += self.grad[i];
        };
    }
    return Tensor<T>(n);
}

template <class T>
Tensor<T> transpose(const Tensor<T>& a) {
    require_2d(a, "transpose");
    const std::size_t r = a.size(0), c = a.size(1);
    auto n = make_node<T>({c, r}, "transpose", {&a});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) n->value[j * r + i] = a.data()[i * c + j];
    if (n->requires_grad) {
        n->backward = [a, r, c](Node<T>& self) {
            if (auto* g = grad_target(a))
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < c; ++j) g->grad[i * c + j] += self.grad[j * r + i];
        };
    }
    return Tensor<T>(n);
}

template <class T>
Tensor<T> concat(std::span<const Tensor<T>> parts, std::size_t axis) {
    if (parts.empty()) throw std::invalid_argument("concat: no inputs");
    if (axis > 1) throw std::invalid_argument("concat: axis must be 0 or 1");
    for (const auto& p : parts) require_2d(p, "concat");
    const std::size_t other = parts[0].size(1 - axis);
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (p.size(1 - axis) != other) shape_error("concat", parts[0].shape(), p.shape());
        total += p.size(axis);
    }
    Shape out = axis == 0 ? Shape{total, other} : Shape{other, total};

    auto n = std::make_shared<Node<T>>();
    n->shape = out;
    n->value.assign(shape_numel(out), T(0));
    n->op = "concat";
    for (const auto& p : parts) n->requires_grad = n->requires_grad || p.requires_grad();

    const std::size_t cols = out[1];
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const std::size_t pr = p.size(0), pc = p.size(1);
        for (std::size_t i = 0; i < pr; ++i)
            for (std::size_t j = 0; j < pc; ++j) {
                const std::size_t oi = axis == 0 ? offset + i : i;
                const std::size_t oj = axis == 0 ? j : offset + j;
                n->value[oi * cols + oj] = p.data()[i * pc + j];
            }
        offset += p.size(axis);
    }

    if (n->requires_grad) {
        std::vector<Tensor<T>> keep(parts.begin(), parts.end());
        for (const auto& p : keep) n->parents.push_back(p.node_ptr());
        n->backward = [keep, axis, cols](Node<T>& self) {
            std::size_t off = 0;
            for (const auto& p : keep) {
                const std::size_t pr = p.size(0), pc = p.size(1);
                if (auto* g = grad_target(p)) {
                    for (std::size_t i = 0; i < pr; ++i)
                        for (std::size_t j = 0; j < pc; ++j) {
                            const std::size_t oi = axis == 0 ? off + i : i;
                            const std::size_t oj = axis == 0 ? j : off + j;
                            g->grad[i * pc + j] += self.grad[oi * cols + oj];
                        }
                }
                off += p.size(axis);
            }
        };
    }
    return Tensor<T>(n);
}

template <class T>
std::vector<Tensor<T>> split(const Tensor<T>& a, std::span<const std::size_t> sizes, std::size_t axis) {
    require_2d(a, "split");
    if (axis > 1) throw std::invalid_argument("split: axis must be 0 or 1");
    const std::size_t total = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
    if (total != a.size(axis))
        shape_error("split", "sizes sum to " + std::to_string(total) + " along axis " + std::to_string(axis), a.shape());

    const std::size_t rows = a.size(0), cols = a.size(1);
    std::vector<Tensor<T>> out;
    out.reserve(sizes.size());
    std::size_t offset = 0;
    for (std::size_t s : sizes) {
        Shape shp = axis == 0 ? Shape{s, cols} : Shape{rows, s};
        auto n = make_node<T>(shp, "split", {&a});
        const std::size_t pc = shp[1];
        for (std::size_t i = 0; i < shp[0]; ++i)
            for (std::size_t j = 0; j < pc; ++j) {
                const std::size_t si = axis == 0 ? offset + i : i;
                const std::size_t sj = axis == 0 ? j : offset + j;
                n->value[i * pc + j] = a.data()[si * cols + sj];
            }
        if (n->requires_grad) {
            n->backward = [a, axis, offset, cols, shp](Node<T>& self) {
                if (auto* g = grad_target(a)) {
                    const std::size_t pc = shp[1];
                    for (std::size_t i = 0; i < shp[0]; ++i)
                        for (std::size_t j = 0; j < pc; ++j) {
                            const std::size_t si = axis == 0 ? offset + i : i;
                            const std::size_t sj = axis == 0 ? j : offset + j;
                            g->grad[si * cols + sj] += self.grad[i * pc + j];
                        }
                }
            };
        }
        out.emplace_back(n);
        offset += s;
    }
    return out;
}

template <class T>
Tensor<T> gather_rows(const Tensor<T>& a, std::span<const std::size_t> rows) {
    require_2d(a, "gather_rows");
    const std::size_t r = a.size(0), c = a.size(1);
    for (auto i : rows)
        if (i >= r) shape_error("gather_rows", "row index " + std::to_string(i) + " out of range", a.shape());
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    auto n = make_node<T>({idx.size(), c}, "gather_rows", {&a});
    for (std::size_t k = 0; k < idx.size(); ++k)
        std::copy_n(a.data().begin() + static_cast<std::ptrdiff_t>(idx[k] * c), c,
                    n->value.begin() + static_cast<std::ptrdiff_t>(k * c));
    if (n->requires_grad) {
        n->backward = [a, idx, c](Node<T>& self) {
            if (auto* g = grad_target(a))
                for (std::size_t k = 0; k < idx.size(); ++k)
                    for (std::size_t j = 0; j < c; ++j) g->grad[idx[k] * c + j] += self.grad[k * c + j];
        };
    }
    return Tensor<T>(n);
}

template <class T>
Tensor<T> gather(const Tensor<T>& a, std::vector<std::size_t> index, Shape out_shape) {
    require_defined(a, "gather");
    if (shape_numel(out_shape) != index.size()) shape_error("gather", "index count does not match output shape", out_shape);
    for (auto i : index)
        if (i >= a.numel()) shape_error("gather", "flat index " + std::to_string(i) + " out of range", a.shape());
    auto n = make_node<T>(std::move(out_shape), "gather", {&a});
    for (std::size_t k = 0; k < index.size(); ++k) n->value[k] = a.data()[index[k]];
    if (n->requires_grad) {
        n->backward = [a, index = std::move(index)](Node<T>& self) {
            if (auto* g = grad_target(a))
                for (std::size_t k = 0; k < index.size(); ++k) g->grad[index[k]] += self.grad[k];
        };
    }
    return Tensor<T>(n);
}

// ---- linear algebra -------------------------------------------------------

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    require_2d(a, "matmul");
    require_2d(b, "matmul");
    const std::size_t m = a.size(0), k = a.size(1), nn = b.size(1);
    if (b.size(0) != k) shape_error("matmul", a.shape(), b.shape());
    auto n = make_node<T>({m, nn}, "matmul", {&a, &b});
    gemm_nn(a.data().data(), b.data().data(), n->value.data(), m, k, nn);
    if (n->requires_grad) {
        n->backward = [a, b, m, k, nn](Node<T>& self) {
            if (auto* g = grad_target(a)) gemm_nt(self.grad.data(), b.data().data(), g->grad.data(), m, nn, k);
            if (auto* g = grad_target(b)) gemm_tn(a.data().data(), self.grad.data(), g->grad.data(), m, k, nn);
        };
    }
    return Tensor<T>(n);
}

template <class T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
    require_2d(a, "matmul_nt");
    require_2d(b, "matmul_nt");
    const std::size_t m = a.size(0), k = a.size(1), nn = b.size(0);
    if (b.size(1) != k) shape_error("matmul_nt", a.shape(), b.shape());
    auto n = make_node<T>({m, nn}, "matmul_nt", {&a, &b});
    gemm_nt(a.data().data(), b.data().data(), n->value.data(), m, k, nn);
    if (n->requires_grad) {
        n->backward = [a, b, m, k, nn](Node<T>& self) {
            // dA = dC * B ; dB = dC^T * A
            if (auto* g = grad_target(a)) gemm_nn(self.grad.data(), b.data().data(), g->grad.data(), m, nn, k);
            if (auto* g = grad_target(b)) gemm_tn(self.grad.data(), a.data().data(), g->grad.data(), m, nn, k);
        };
    }
    return Tensor<T>(n);
}

// ---- activations & normalization -----------------------------------------

template <class T>
Tensor<T> relu(const Tensor<T>& a) {
    require_defined(a, "relu");
    auto n = make_node<T>(a.shape(), "relu", {&a});
    for (std::size_t i = 0; i < n->value.size(); ++i) n->value[i] = a.data()[i] > T(0) ? a.data()[i] : T(0);
    if (n->requires_grad) {
        n->backward = [a](Node<T>& self) {
            if (auto* g = grad_target(a))
                for (std::size_t i = 0; i < self.grad.size(); ++i)
                    if (a.data()[i] > T(0)) g->grad[i] += self.grad[i];
        };
    }
    return Tensor<T>(n);
}

template <class T>
Tensor<T> silu(const Tensor<T>& a) {
    require_defined(a, "silu");
    auto n = make_node<T>(a.shape(), "silu", {&a});
    std::vector<T> sig(a.numel());
    for (std::size_t i = 0; i < n->value.size(); ++i) {
        const T x = a.data()[i];
        sig[i] = T(1) / (T(1) + std::exp(-x));
        n->value[i] = x * sig[i];
    }
    if (n->requires_grad) {
        n->backward = [a, sig = std::move(sig)](Node<T>& self) {
            if (auto* g = grad_target(a))
                for (std::size_t i = 0; i < self.grad.size(); ++i) {
                    const T x = a.data()[i];
                    g->grad[i] += self.grad[i] * sig[i] * (T(1) + x * (T(1) - sig[i]));
                }
        };
    }
    return Tensor<T>(n);
}

template <class T>
Tensor<T> softmax(const Tensor<T>& a) {
    require_2d(a, "softmax");
    const std::size_t r = a.size(0), c = a.size(1);
    auto n = make_node<T>(a.shape(), "softmax", {&a});
    for (std::size_t i = 0; i < r; ++i) {
        const T* x = a.data().data() + i * c;
        T* y = n->value.data() + i * c;
        const T mx = *std::max_element(x, x + c);
        T s = T(0);
        for (std::size_t j = 0; j < c; ++j) {
            y[j] = std::exp(x[j] - mx);
            s += y[j];
        }
        for (std::size_t j = 0; j < c; ++j) y[j] /= s;
    }
    if (n->requires_grad) {
        n->backward = [a, r, c](Node<T>& self) {
            if (auto* g = grad_target(a))
                for (std::size_t i = 0; i < r; ++i) {
                    const T* y = self.value.data() + i * c;
                    const T* dy = self.grad.data() + i * c;
                    T dot = T(0);
                    for (std::size_t j = 0; j < c; ++j) dot += dy[j] * y[j];
                    for (std::size_t j = 0; j < c; ++j) g->grad[i * c + j] += y[j] * (dy[j] - dot);
                }
        };
    }
    return Tensor<T>(n);
}

template <class T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
    require_2d(x, "layernorm");
    const std::size_t r = x.size(0), c = x.size(1);
    const bool affine = gamma.defined();
    if (affine != beta.defined()) throw std::invalid_argument("layernorm: gamma and beta must both be set or unset");
    if (affine && (gamma.numel() != c || beta.numel() != c)) shape_error("layernorm", x.shape(), gamma.shape());

    auto n = make_node<T>(x.shape(), "layernorm", {&x, &gamma, &beta});
    std::vector<T> xhat(x.numel());
    std::vector<T> inv_std(r);
    for (std::size_t i = 0; i < r; ++i) {
        const T* xi = x.data().data() + i * c;
        T mu = T(0);
        for (std::size_t j = 0; j < c; ++j) mu += xi[j];
        mu /= static_cast<T>(c);
        T var = T(0);
        for (std::size_t j = 0; j < c; ++j) var += (xi[j] - mu) * (xi[j] - mu);
        var /= static_cast<T>(c);
        inv_std[i] = T(1) / std::sqrt(var + eps);
        for (std::size_t j = 0; j < c; ++j) {
            xhat[i * c + j] = (xi[j] - mu) * inv_std[i];
            n->value[i * c + j] = affine ? xhat[i * c + j] * gamma.data()[j] + beta.data()[j] : xhat[i * c + j];
        }
    }
    if (n->requires_grad) {
        n->backward = [x, gamma, beta, affine, r, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
            if (affine) {
                if (auto* g = grad_target(gamma))
                    for (std::size_t i = 0; i < r; ++i)
                        for (std::size_t j = 0; j < c; ++j) g->grad[j] += self.grad[i * c + j] * xhat[i * c + j];
                if (auto* g = grad_target(beta))
                    for (std::size_t i = 0; i < r; ++i)
                        for (std::size_t j = 0; j < c; ++j) g->grad[j] += self.grad[i * c + j];
            }
            if (auto* g = grad_target(x)) {
                std::vector<T> dxhat(c);
                const T inv_c = T(1) / static_cast<T>(c);
                for (std::size_t i = 0; i < r; ++i) {
                    T s1 = T(0), s2 = T(0);
                    for (std::size_t j = 0; j < c; ++j) {
                        dxhat[j] = self.grad[i * c + j] * (affine ? gamma.data()[j] : T(1));
                        s1 += dxhat[j];
                        s2 += dxhat[j] * xhat[i * c + j];
                    }
                    for (std::size_t j = 0; j < c; ++j)
                        g->grad[i * c + j] += inv_std[i] * (dxhat[j] - inv_c * s1 - xhat[i * c + j] * inv_c * s2);
                }
            }
        };
    }
    return Tensor<T>(n);
}

template <class T>
Tensor<T> batchnorm1d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, Tensor<T>& running_mean,
                      Tensor<T>& running_var, bool training, T momentum, T eps) {
    require_2d(x, "batchnorm1d");
    const std::size_t r = x.size(0), c = x.size(1);
    for (const Tensor<T>* t : {&gamma, &beta, static_cast<const Tensor<T>*>(&running_mean), static_cast<const Tensor<T>*>(&running_var)}) {
        require_defined(*t, "batchnorm1d");
        if (t->numel() != c) shape_error("batchnorm1d", x.shape(), t->shape());
    }
    if (training && r < 2) shape_error("batchnorm1d", "training mode needs at least 2 rows", x.shape());

    std::vector<T> mu(c, T(0)), inv_std(c, T(0));
    if (training) {
        std::vector<T> var(c, T(0));
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) mu[j] += x.data()[i * c + j];
        for (auto& v : mu) v /= static_cast<T>(r);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) {
                const T d = x.data()[i * c + j] - mu[j];
                var[j] += d * d;
            }
        auto rm = running_mean.mutable_data();
        auto rv = running_var.mutable_data();
        for (std::size_t j = 0; j < c; ++j) {
            var[j] /= static_cast<T>(r);
            inv_std[j] = T(1) / std::sqrt(var[j] + eps);
            rm[j] = (T(1) - momentum) * rm[j] + momentum * mu[j];
            rv[j] = (T(1) - momentum) * rv[j] + momentum * var[j] * static_cast<T>(r) / static_cast<T>(r - 1);
        }
    } else {
        for (std::size_t j = 0; j < c; ++j) {
            mu[j] = running_mean.data()[j];
            inv_std[j] = T(1) / std::sqrt(running_var.data()[j] + eps);
        }
    }

    auto n = make_node<T>(x.shape(), "batchnorm1d", {&x, &gamma, &beta});
    std::vector<T> xhat(x.numel());
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) {
            xhat[i * c + j] = (x.data()[i * c + j] - mu[j]) * inv_std[j];
            n->value[i * c + j] = xhat[i * c + j] * gamma.data()[j] + beta.data()[j];
        }
    if (n->requires_grad) {
        n->backward = [x, gamma, beta, training, r, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
            if (auto* g = grad_target(gamma))
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < c; ++j) g->grad[j] += self.grad[i * c + j] * xhat[i * c + j];
            if (auto* g = grad_target(beta))
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < c; ++j) g->grad[j] += self.grad[i * c + j];
            if (auto* g = grad_target(x)) {
                if (!training) {
                    for (std::size_t i = 0; i < r; ++i)
                        for (std::size_t j = 0; j < c; ++j)
                            g->grad[i * c + j] += self.grad[i * c + j] * gamma.data()[j] * inv_std[j];
                    return;
                }
                std::vector<T> s1(c, T(0)), s2(c, T(0));
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < c; ++j) {
                        const T dxh = self.grad[i * c + j] * gamma.data()[j];
                        s1[j] += dxh;
                        s2[j] += dxh * xhat[i * c + j];
                    }
                const T inv_r = T(1) / static_cast<T>(r);
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < c; ++j) {
                        const T dxh = self.grad[i * c + j] * gamma.data()[j];
                        g->grad[i * c + j] += inv_std[j] * (dxh - inv_r * s1[j] - xhat[i * c + j] * inv_r * s2[j]);
                    }
            }
        };
    }
    return Tensor<T>(n);
}

template <class T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::span<const std::size_t> segments) {
    require_2d(x, "conv1d");
    require_defined(weight, "conv1d");
    if (weight.dim() != 3) shape_error("conv1d", "weight must be K x Cin x Cout", weight.shape());
    const std::size_t rows = x.size(0), cin = x.size(1);
    const std::size_t k = weight.size(0), cout = weight.size(2);
    if (weight.size(1) != cin) shape_error("conv1d", x.shape(), weight.shape());
    if (k % 2 == 0) shape_error("conv1d", "kernel size must be odd", weight.shape());
    if (bias.defined() && bias.numel() != cout) shape_error("conv1d", weight.shape(), bias.shape());
    const auto segs = resolve_segments(segments, rows, "conv1d");
    const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(k / 2);

    // (output row, tap, source row) triples, respecting segment boundaries.
    struct Tap {
        std::size_t out, tap, src;
    };
    std::vector<Tap> taps;
    taps.reserve(rows * k);
    std::size_t base = 0;
    for (std::size_t len : segs) {
        for (std::size_t l = 0; l < len; ++l)
            for (std::size_t t = 0; t < k; ++t) {
                const std::ptrdiff_t s = static_cast<std::ptrdiff_t>(l) + static_cast<std::ptrdiff_t>(t) - pad;
                if (s >= 0 && s < static_cast<std::ptrdiff_t>(len)) taps.push_back({base + l, t, base + static_cast<std::size_t>(s)});
            }
        base += len;
    }

    auto n = make_node<T>({rows, cout}, "conv1d", {&x, &weight, &bias});
    const T* w = weight.data().data();
    for (const auto& tp : taps)
        gemm_nn(x.data().data() + tp.src * cin, w + tp.tap * cin * cout, n->value.data() + tp.out * cout, 1, cin, cout);
    if (bias.defined())
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < cout; ++j) n->value[i * cout + j] += bias.data()[j];

    if (n->requires_grad) {
        n->backward = [x, weight, bias, taps = std::move(taps), rows, cin, cout](Node<T>& self) {
            if (auto* g = grad_target(x))
                for (const auto& tp : taps)
                    gemm_nt(self.grad.data() + tp.out * cout, weight.data().data() + tp.tap * cin * cout,
                            g->grad.data() + tp.src * cin, 1, cout, cin);
            if (auto* g = grad_target(weight))
                for (const auto& tp : taps)
                    gemm_tn(x.data().data() + tp.src * cin, self.grad.data() + tp.out * cout,
                            g->grad.data() + tp.tap * cin * cout, 1, cin, cout);
            if (auto* g = grad_target(bias))
                for (std::size_t i = 0; i < rows; ++i)
                    for (std::size_t j = 0; j < cout; ++j) g->grad[j] += self.grad[i * cout + j];
        };
    }
    return Tensor<T>(n);
}

// ---- reductions & losses ----------------------------------------------------

template <class T>
Tensor<T> sum(const Tensor<T>& a) {
    require_defined(a, "sum");
    auto n = make_node<T>({1}, "sum", {&a});
    n->value[0] = std::accumulate(a.data().begin(), a.data().end(), T(0));
    if (n->requires_grad) {
        n->backward = [a](Node<T>& self) {
            if (auto* g = grad_target(a))
                for (auto& v : g->grad) v += self.grad[0];
        };
    }
    return Tensor<T>(n);
}

template <class T>
Tensor<T> mean(const Tensor<T>& a, std::size_t axis) {
    require_2d(a, "mean");
    if (axis > 1) throw std::invalid_argument("mean: axis must be 0 or 1");
    const std::size_t r = a.size(0), c = a.size(1);
    const std::size_t len = axis == 0 ? c : r;
    const T inv = T(1) / static_cast<T>(axis == 0 ? r : c);
    auto n = make_node<T>({len}, "mean", {&a});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) n->value[axis == 0 ? j : i] += a.data()[i * c + j] * inv;
    if (n->requires_grad) {
        n->backward = [a, axis, r, c, inv](Node<T>& self) {
            if (auto* g = grad_target(a))
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < c; ++j) g->grad[i * c + j] += self.grad[axis == 0 ? j : i] * inv;
        };
    }
    return Tensor<T>(n);
}

template <class T>
Tensor<T> segment_mean(const Tensor<T>& a, std::span<const std::size_t> segments) {
    require_2d(a, "segment_mean");
    const std::size_t c = a.size(1);
    auto segs = resolve_segments(segments, a.size(0), "segment_mean");
    for (auto s : segs)
        if (s == 0) shape_error("segment_mean", "empty segment", a.shape());
    auto n = make_node<T>({segs.size(), c}, "segment_mean", {&a});
    std::size_t base = 0;
    for (std::size_t b = 0; b < segs.size(); ++b) {
        const T inv = T(1) / static_cast<T>(segs[b]);
        for (std::size_t i = 0; i < segs[b]; ++i)
            for (std::size_t j = 0; j < c; ++j) n->value[b * c + j] += a.data()[(base + i) * c + j] * inv;
        base += segs[b];
    }
    if (n->requires_grad) {
        n->backward = [a, segs = std::move(segs), c](Node<T>& self) {
            if (auto* g = grad_target(a)) {
                std::size_t base = 0;
                for (std::size_t b = 0; b < segs.size(); ++b) {
                    const T inv = T(1) / static_cast<T>(segs[b]);
                    for (std::size_t i = 0; i < segs[b]; ++i)
                        for (std::size_t j = 0; j < c; ++j) g->grad[(base + i) * c + j] += self.grad[b * c + j] * inv;
                    base += segs[b];
                }
            }
        };
    }
    return Tensor<T>(n);
}

template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
    require_2d(logits, "cross_entropy");
    const std::size_t b = logits.size(0), k = logits.size(1);
    if (labels.size() != b)
        shape_error("cross_entropy", std::to_string(labels.size()) + " labels for the batch", logits.shape());
    for (int y : labels)
        if (y < 0 || static_cast<std::size_t>(y) >= k)
            shape_error("cross_entropy", "label " + std::to_string(y) + " out of range", logits.shape());

    auto n = make_node<T>({1}, "cross_entropy", {&logits});
    std::vector<T> probs(b * k);
    T loss = T(0);
    for (std::size_t i = 0; i < b; ++i) {
        const T* x = logits.data().data() + i * k;
        const T mx = *std::max_element(x, x + k);
        T s = T(0);
        for (std::size_t j = 0; j < k; ++j) s += std::exp(x[j] - mx);
        const T lse = mx + std::log(s);
        loss += lse - x[labels[i]];
        for (std::size_t j = 0; j < k; ++j) probs[i * k + j] = std::exp(x[j] - lse);
    }
    n->value[0] = loss / static_cast<T>(b);
    if (n->requires_grad) {
        std::vector<int> ys(labels.begin(), labels.end());
        n->backward = [logits, probs = std::move(probs), ys = std::move(ys), b, k](Node<T>& self) {
            if (auto* g = grad_target(logits)) {
                const T s = self.grad[0] / static_cast<T>(b);
                for (std::size_t i = 0; i < b; ++i)
                    for (std::size_t j = 0; j < k; ++j)
                        g->grad[i * k + j] += s * (probs[i * k + j] - (static_cast<int>(j) == ys[i] ? T(1) : T(0)));
            }
        };
    }
    return Tensor<T>(n);
}

template <class T>
Tensor<T> nll_prob(const Tensor<T>& probs, std::span<const int> labels) {
    require_2d(probs, "nll_prob");
    const std::size_t b = probs.size(0), k = probs.size(1);
    if (labels.size() != b) shape_error("nll_prob", std::to_string(labels.size()) + " labels for the batch", probs.shape());
    for (int y : labels)
        if (y < 0 || static_cast<std::size_t>(y) >= k)
            shape_error("nll_prob", "label " + std::to_string(y) + " out of range", probs.shape());
    const T floor = std::numeric_limits<T>::min();
    auto n = make_node<T>({1}, "nll_prob", {&probs});
    T loss = T(0);
    for (std::size_t i = 0; i < b; ++i) loss -= std::log(std::max(probs.data()[i * k + labels[i]], floor));
    n->value[0] = loss / static_cast<T>(b);
    if (n->requires_grad) {
        std::vector<int> ys(labels.begin(), labels.end());
        n->backward = [probs, ys = std::move(ys), b, k, floor](Node<T>& self) {
            if (auto* g = grad_target(probs))
                for (std::size_t i = 0; i < b; ++i) {
                    const std::size_t idx = i * k + static_cast<std::size_t>(ys[i]);
                    g->grad[idx] -= self.grad[0] / (static_cast<T>(b) * std::max(probs.data()[idx], floor));
                }
        };
    }
    return Tensor<T>(n);
}

template <class T>
Tensor<T> gaussian_noise_add(const Tensor<T>& x, T stddev, Rng& rng) {
    require_defined(x, "gaussian_noise_add");
    if (stddev < T(0)) throw std::invalid_argument("gaussian_noise_add: negative standard deviation");
    auto n = make_node<T>(x.shape(), "gaussian_noise_add", {&x});
    std::normal_distribution<double> gauss(0.0, static_cast<double>(stddev));
    for (std::size_t i = 0; i < n->value.size(); ++i)
        n->value[i] = x.data()[i] + (stddev > T(0) ? static_cast<T>(gauss(rng)) : T(0));
    if (n->requires_grad) {
        n->backward = [x](Node<T>& self) {
            if (auto* g = grad_target(x))
                for (std::size_t i = 0; i < self.grad.size(); ++i) g->grad[i] += self.grad[i];
        };
    }
    return Tensor<T>(n);
}

// ---- optimizer --------------------------------------------------------------

template <class T>
void sgd_step(ParamList<T>& params, T lr) {
    bool any = false;
    for (const auto& p : params)
        if (p.trainable && p.tensor.has_grad()) any = true;
    if (!any) throw std::logic_error("sgd_step: no gradients populated; run backward() first");
    for (auto& p : params) {
        if (!p.trainable) continue;
        if (p.tensor.has_grad()) {
            auto v = p.tensor.mutable_data();
            const auto g = p.tensor.grad();
            for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr * g[i];
        }
        p.tensor.clear_grad();
    }
}

template <class T>
void zero_grad(ParamList<T>& params) {
    for (auto& p : params) p.tensor.clear_grad();
}

// ---- explicit instantiation ---------------------------------------------------

#define JAMIDENT_INSTANTIATE_AD(T)                                                                               \
    template class Tensor<T>;                                                                                    \
    template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                                  \
    template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                                  \
    template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                                  \
    template Tensor<T> scale(const Tensor<T>&, T);                                                               \
    template Tensor<T> add_bias(const Tensor<T>&, const Tensor<T>&);                                             \
    template Tensor<T> reshape(const Tensor<T>&, Shape);                                                         \
    template Tensor<T> transpose(const Tensor<T>&);                                                              \
    template Tensor<T> concat(std::span<const Tensor<T>>, std::size_t);                                          \
    template std::vector<Tensor<T>> split(const Tensor<T>&, std::span<const std::size_t>, std::size_t);          \
    template Tensor<T> gather_rows(const Tensor<T>&, std::span<const std::size_t>);                              \
    template Tensor<T> gather(const Tensor<T>&, std::vector<std::size_t>, Shape);                                \
    template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                               \
    template Tensor<T> matmul_nt(const Tensor<T>&, const Tensor<T>&);                                            \
    template Tensor<T> relu(const Tensor<T>&);                                                                   \
    template Tensor<T> silu(const Tensor<T>&);                                                                   \
    template Tensor<T> softmax(const Tensor<T>&);                                                                \
    template Tensor<T> layernorm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);                       \
    template Tensor<T> batchnorm1d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Tensor<T>&, Tensor<T>&, \
                                   bool, T, T);                                                                  \
    template Tensor<T> conv1d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::span<const std::size_t>); \
    template Tensor<T> sum(const Tensor<T>&);                                                                    \
    template Tensor<T> mean(const Tensor<T>&, std::size_t);                                                      \
    template Tensor<T> segment_mean(const Tensor<T>&, std::span<const std::size_t>);                             \
    template Tensor<T> cross_entropy(const Tensor<T>&, std::span<const int>);                                    \
    template Tensor<T> nll_prob(const Tensor<T>&, std::span<const int>);                                         \
    template Tensor<T> gaussian_noise_add(const Tensor<T>&, T, Rng&);                                            \
    template void sgd_step(ParamList<T>&, T);                                                                    \
    template void zero_grad(ParamList<T>&);

JAMIDENT_INSTANTIATE_AD(float)
JAMIDENT_INSTANTIATE_AD(double)

#undef JAMIDENT_INSTANTIATE_AD

} // namespace jamident::ad
