#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace cft {

using Shape = std::vector<int64_t>;

struct TensorError : std::runtime_error {
    explicit TensorError(const std::string& msg) : std::runtime_error(msg) {}
};

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Counts fused multiply-adds attributed to labeled op groups. Install one with
// CounterGuard; matmul-class kernels then report into the current label.
class OpCounter {
public:
    void add(const std::string& label, uint64_t muladds) {
        by_label_[label] += muladds;
        total_ += muladds;
    }
    uint64_t total() const { return total_; }
    uint64_t labeled(const std::string& label) const {
        auto it = by_label_.find(label);
        return it == by_label_.end() ? 0 : it->second;
    }
    const std::map<std::string, uint64_t>& by_label() const { return by_label_; }
    void reset() {
        by_label_.clear();
        total_ = 0;
    }

private:
    std::map<std::string, uint64_t> by_label_;
    uint64_t total_ = 0;
};

OpCounter* active_counter();
const std::string& current_count_label();

struct CounterGuard {
    explicit CounterGuard(OpCounter& counter);
    ~CounterGuard();
    CounterGuard(const CounterGuard&) = delete;
    CounterGuard& operator=(const CounterGuard&) = delete;

private:
    OpCounter* prev_;
};

struct LabelGuard {
    explicit LabelGuard(std::string label);
    ~LabelGuard();
    LabelGuard(const LabelGuard&) = delete;
    LabelGuard& operator=(const LabelGuard&) = delete;

private:
    std::string prev_;
};

// Thread-local autograd switch. With grad disabled ops skip graph construction;
// forward values are unchanged.
bool grad_enabled();
struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

struct TensorNode {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // sized on first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backward_fn;

    int64_t numel() const { return static_cast<int64_t>(value.size()); }
    void accumulate(const std::vector<double>& g);
    double* grad_data();
};

// Dense N-d real tensor with reverse-mode gradients. Copies alias the same
// node; clone() makes an independent value.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double v, bool requires_grad = false);
    static Tensor scalar(double v, bool requires_grad = false);
    static Tensor from_vector(Shape shape, std::vector<double> data, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node().shape; }
    int64_t numel() const { return node().numel(); }
    int64_t dim(int i) const { return node().shape.at(static_cast<size_t>(i)); }
    int rank() const { return static_cast<int>(node().shape.size()); }

    const std::vector<double>& values() const { return node().value; }
    std::vector<double>& mutable_values() { return node().value; }
    double item() const;
    double at(std::initializer_list<int64_t> idx) const;

    bool requires_grad() const { return node().requires_grad; }
    Tensor& set_requires_grad(bool v) {
        node().requires_grad = v;
        return *this;
    }
    bool has_grad() const { return !node().grad.empty(); }
    const std::vector<double>& grad() const;
    void zero_grad() { node().grad.assign(node().value.size(), 0.0); }

    Tensor clone() const;
    bool is_leaf() const { return node().parents.empty(); }

    std::shared_ptr<TensorNode> node_ptr() const { return node_; }
    TensorNode& node() const {
        if (!node_) throw TensorError("use of undefined tensor");
        return *node_;
    }

private:
    explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}
    std::shared_ptr<TensorNode> node_;
    friend Tensor make_op_result(Shape shape, std::vector<double> value, const char* op,
                                 std::vector<Tensor> parents,
                                 std::function<void(TensorNode&)> backward_fn);
};

// Deterministic seeded generator used for every initialization.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ULL) {}
    uint64_t next_u64();
    double uniform();                       // [0, 1)
    double uniform(double lo, double hi);   // [lo, hi)
    double normal();                        // standard normal
    int64_t uniform_int(int64_t lo, int64_t hi);  // inclusive bounds
    Rng fork(uint64_t stream);              // independent child stream

private:
    uint64_t state_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

Tensor randn(Shape shape, Rng& rng, double stddev = 1.0, bool requires_grad = false);
Tensor rand_uniform(Shape shape, Rng& rng, double lo, double hi, bool requires_grad = false);

// --- differentiable ops ----------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);     // [m,k] x [k,n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // [m,k] x [n,k]^T -> [m,n]
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double s);
Tensor add_scalar(const Tensor& x, double s);
Tensor add_rowvec(const Tensor& x, const Tensor& v);  // v broadcast over rows
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor exp_op(const Tensor& x);
Tensor log_op(const Tensor& x);
Tensor abs_op(const Tensor& x);
Tensor clamp(const Tensor& x, double lo, double hi);
Tensor softmax(const Tensor& x, int axis);
// mask: 1 = attend, 0 = excluded exactly (no -inf arithmetic; masked outputs
// and their gradients are exactly zero).
Tensor masked_softmax(const Tensor& x, const std::vector<uint8_t>& mask, int axis);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& x, int axis, int64_t start, int64_t len);
Tensor reshape(const Tensor& x, Shape new_shape);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor gather_rows(const Tensor& x, const std::vector<int64_t>& rows);
// inverse of gather_rows for disjoint row sets; rows not written stay zero
Tensor scatter_rows(const Tensor& x, const std::vector<int64_t>& rows, int64_t out_rows);
Tensor repeat_rows(const Tensor& x, int64_t times);  // each row repeated `times` consecutively
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad);
Tensor upsample2x(const Tensor& x);  // NHWC nearest neighbor
Tensor sinusoidal_encode(const Tensor& values, int dim, double temperature);

void backward(const Tensor& loss);

}  // namespace cft
