#pragma once

// Dense row-major tensors with reverse-mode automatic differentiation.
//
// A Tensor is a shared handle to a graph Node. Operations create new nodes
// holding the forward value plus a closure that pushes the node's gradient
// into its parents. Graphs are confined to one thread; leaves (parameters)
// accumulate gradients across any number of backward passes until cleared.
//
// Instantiated for float (training) and double (gradient checks).

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "jamident/rng.hpp"

namespace jamident::ad {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

template <class T>
struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // empty until something flows in
    bool requires_grad = false;
    bool backward_ran = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;
    std::uint64_t visit_mark = 0;

    void ensure_grad() {
        if (grad.empty()) grad.assign(value.size(), T(0));
    }
};

template <class T>
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, T value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<T> data, bool requires_grad = false);
    static Tensor scalar(T value, bool requires_grad = false);

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    std::size_t dim() const { return node_->shape.size(); }
    std::size_t size(std::size_t axis) const { return node_->shape.at(axis); }
    std::size_t numel() const { return node_->value.size(); }
    bool requires_grad() const { return node_->requires_grad; }
    const char* op() const { return node_->op; }

    std::span<const T> data() const { return node_->value; }
    // Direct write access, meant for leaves (parameter updates, loading).
    std::span<T> mutable_data() { return node_->value; }

    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const T> grad() const { return node_->grad; }
    std::span<T> mutable_grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    // Gradient buffer, or zeros when nothing has flowed in.
    std::vector<T> grad_or_zero() const;
    void clear_grad() { node_->grad.clear(); }

    T item() const;
    T at(std::size_t i, std::size_t j) const { return node_->value[i * node_->shape.at(1) + j]; }

    // Reverse pass from a scalar. Throws std::logic_error when called a
    // second time on the same graph without reset_backward().
    void backward();
    // Clears non-leaf gradients reachable from this node and re-arms backward().
    void reset_backward();

    Node<T>* node() const { return node_.get(); }
    const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

    // Copy of the value as a new leaf with no history.
    Tensor detach(bool requires_grad = false) const;

private:
    std::shared_ptr<Node<T>> node_;
};

// ---- elementwise / shape ops -------------------------------------------

template <class T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <class T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <class T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);  // Hadamard
template <class T> Tensor<T> scale(const Tensor<T>& a, T s);
// a: m x n, bias: n. Row-broadcast add.
template <class T> Tensor<T> add_bias(const Tensor<T>& a, const Tensor<T>& bias);
template <class T> Tensor<T> reshape(const Tensor<T>& a, Shape shape);
// 2-D only.
template <class T> Tensor<T> transpose(const Tensor<T>& a);
// 2-D tensors along axis 0 (rows) or 1 (columns).
template <class T> Tensor<T> concat(std::span<const Tensor<T>> parts, std::size_t axis);
template <class T> std::vector<Tensor<T>> split(const Tensor<T>& a, std::span<const std::size_t> sizes, std::size_t axis);
template <class T> Tensor<T> gather_rows(const Tensor<T>& a, std::span<const std::size_t> rows);
// out[i] = a.flat[index[i]]; gradient scatters back.
template <class T> Tensor<T> gather(const Tensor<T>& a, std::vector<std::size_t> index, Shape out_shape);

// ---- linear algebra ----------------------------------------------------

template <class T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);     // (m,k)x(k,n)
template <class T> Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b);  // (m,k)x(n,k)^T

// ---- activations & normalization ---------------------------------------

template <class T> Tensor<T> relu(const Tensor<T>& a);
template <class T> Tensor<T> silu(const Tensor<T>& a);
// Row softmax over the last dimension of a 2-D tensor.
template <class T> Tensor<T> softmax(const Tensor<T>& a);
// Normalizes each row of a 2-D tensor; gamma/beta (length = cols) may be
// undefined for the non-affine form.
template <class T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-5));

// Batch normalization over the rows of x (rows x C). In training mode batch
// statistics are used and the running buffers updated with the given
// momentum (unbiased variance); in eval mode the running buffers are used.
template <class T>
Tensor<T> batchnorm1d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, Tensor<T>& running_mean,
                      Tensor<T>& running_var, bool training, T momentum = T(0.1), T eps = T(1e-5));

// 1-D convolution along rows of x (L x Cin), stride 1, zero padding
// (K-1)/2. weight: K x Cin x Cout, bias: Cout (may be undefined).
// segments partitions the rows into independent sequences; padding applies
// at every segment boundary. Empty segments means one sequence.
template <class T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::span<const std::size_t> segments = {});

// ---- reductions & losses -----------------------------------------------

template <class T> Tensor<T> sum(const Tensor<T>& a);
// 2-D mean along axis 0 (-> cols) or 1 (-> rows).
template <class T> Tensor<T> mean(const Tensor<T>& a, std::size_t axis);
// Mean over each row segment: (sum segments) x C -> segments.size() x C.
template <class T> Tensor<T> segment_mean(const Tensor<T>& a, std::span<const std::size_t> segments);
// Mean cross entropy of logits (B x K) against integer labels.
template <class T> Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels);
// Mean negative log of probabilities (B x K) at the labels.
template <class T> Tensor<T> nll_prob(const Tensor<T>& probs, std::span<const int> labels);
// x + N(0, std^2) noise drawn from rng; gradient passes through unchanged.
template <class T> Tensor<T> gaussian_noise_add(const Tensor<T>& x, T stddev, Rng& rng);

// ---- parameters & optimizer -------------------------------------------

template <class T>
struct Param {
    std::string name;
    Tensor<T> tensor;
    bool trainable = true;
};

template <class T>
using ParamList = std::vector<Param<T>>;

// p <- p - lr * grad for every trainable parameter, then clears gradients.
// Parameters without a gradient buffer count as zero gradient; throws
// std::logic_error if no trainable parameter has a gradient at all.
template <class T> void sgd_step(ParamList<T>& params, T lr);

template <class T> void zero_grad(ParamList<T>& params);

} // namespace jamident::ad
