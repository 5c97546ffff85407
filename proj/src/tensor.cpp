#include "cft/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>
#include <unordered_set>

namespace cft {

int64_t shape_numel(const Shape& shape) {
    int64_t n = 1;
    for (int64_t e : shape) {
        if (e <= 0) throw TensorError("non-positive shape extent in " + shape_str(shape));
        n *= e;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << "]";
    return os.str();
}

namespace {

thread_local OpCounter* g_counter = nullptr;
thread_local std::string g_count_label = "unlabeled";
thread_local bool g_grad_enabled = true;

void count_muladds(uint64_t n) {
    if (g_counter) g_counter->add(g_count_label, n);
}

void check_finite(const char* op, const std::vector<double>& v) {
    for (double x : v) {
        if (!std::isfinite(x)) throw TensorError(std::string(op) + " produced a non-finite value");
    }
}

}  // namespace

OpCounter* active_counter() { return g_counter; }
const std::string& current_count_label() { return g_count_label; }

CounterGuard::CounterGuard(OpCounter& counter) : prev_(g_counter) { g_counter = &counter; }
CounterGuard::~CounterGuard() { g_counter = prev_; }

LabelGuard::LabelGuard(std::string label) : prev_(g_count_label) { g_count_label = std::move(label); }
LabelGuard::~LabelGuard() { g_count_label = prev_; }

bool grad_enabled() { return g_grad_enabled; }
NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

void TensorNode::accumulate(const std::vector<double>& g) {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    for (size_t i = 0; i < g.size(); ++i) grad[i] += g[i];
}

double* TensorNode::grad_data() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad.data();
}

Tensor make_op_result(Shape shape, std::vector<double> value, const char* op, std::vector<Tensor> parents,
                      std::function<void(TensorNode&)> backward_fn) {
    check_finite(op, value);
    auto node = std::make_shared<TensorNode>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    if (g_grad_enabled) {
        bool needs = false;
        for (const Tensor& p : parents) needs = needs || p.requires_grad();
        if (needs) {
            node->requires_grad = true;
            node->parents.reserve(parents.size());
            for (const Tensor& p : parents) node->parents.push_back(p.node_ptr());
            node->backward_fn = std::move(backward_fn);
        }
    }
    return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
    auto node = std::make_shared<TensorNode>();
    int64_t n = shape_numel(shape);
    node->shape = std::move(shape);
    node->value.assign(static_cast<size_t>(n), v);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::scalar(double v, bool requires_grad) {
    return from_vector({1}, {v}, requires_grad);
}

Tensor Tensor::from_vector(Shape shape, std::vector<double> data, bool requires_grad) {
    if (shape_numel(shape) != static_cast<int64_t>(data.size()))
        throw TensorError("data length does not match shape " + shape_str(shape));
    check_finite("from_vector", data);
    auto node = std::make_shared<TensorNode>();
    node->shape = std::move(shape);
    node->value = std::move(data);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

double Tensor::item() const {
    if (numel() != 1) throw TensorError("item() on non-scalar tensor " + shape_str(shape()));
    return node().value[0];
}

double Tensor::at(std::initializer_list<int64_t> idx) const {
    const Shape& s = shape();
    if (idx.size() != s.size()) throw TensorError("index rank mismatch");
    int64_t flat = 0;
    size_t d = 0;
    for (int64_t i : idx) {
        if (i < 0 || i >= s[d]) throw TensorError("index out of range");
        flat = flat * s[d] + i;
        ++d;
    }
    return node().value[static_cast<size_t>(flat)];
}

const std::vector<double>& Tensor::grad() const {
    if (node().grad.empty()) throw TensorError("tensor has no gradient");
    return node().grad;
}

Tensor Tensor::clone() const {
    return from_vector(shape(), values(), requires_grad());
}

uint64_t Rng::next_u64() {
    // splitmix64
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

double Rng::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
    if (have_spare_) {
        have_spare_ = false;
        return spare_;
    }
    double u1 = 0.0;
    while (u1 == 0.0) u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double th = 2.0 * M_PI * u2;
    spare_ = r * std::sin(th);
    have_spare_ = true;
    return r * std::cos(th);
}

int64_t Rng::uniform_int(int64_t lo, int64_t hi) {
    if (hi < lo) throw TensorError("uniform_int: empty range");
    uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int64_t>(next_u64() % span);
}

Rng Rng::fork(uint64_t stream) {
    Rng child(state_ ^ (0xd1342543de82ef95ULL * (stream + 1)));
    child.next_u64();
    return child;
}

Tensor randn(Shape shape, Rng& rng, double stddev, bool requires_grad) {
    int64_t n = shape_numel(shape);
    std::vector<double> data(static_cast<size_t>(n));
    for (double& v : data) v = stddev * rng.normal();
    return Tensor::from_vector(std::move(shape), std::move(data), requires_grad);
}

Tensor rand_uniform(Shape shape, Rng& rng, double lo, double hi, bool requires_grad) {
    int64_t n = shape_numel(shape);
    std::vector<double> data(static_cast<size_t>(n));
    for (double& v : data) v = rng.uniform(lo, hi);
    return Tensor::from_vector(std::move(shape), std::move(data), requires_grad);
}

// --- kernels ----------------------------------------------------------------

namespace {

// C[m,n] += A[m,k] * B[k,n]
void gemm_nn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (int64_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            const double* brow = b + p * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[m,n] += A[m,k] * B[n,k]^T; goes through a transposed copy of B so the
// inner loop stays in axpy form (vectorizes without relaxed FP).
void gemm_nt(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
    std::vector<double> bt(static_cast<size_t>(k * n));
    for (int64_t j = 0; j < n; ++j)
        for (int64_t p = 0; p < k; ++p) bt[static_cast<size_t>(p * n + j)] = b[j * k + p];
    gemm_nn(a, bt.data(), c, m, k, n);
}

// C[k,n] += A[m,k]^T * B[m,n]
void gemm_tn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        const double* brow = b + i * n;
        for (int64_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            double* crow = c + p * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void require_rank2(const Tensor& t, const char* op) {
    if (t.rank() != 2) throw TensorError(std::string(op) + ": expected rank-2 tensor, got " + shape_str(t.shape()));
}

int64_t axis_stride(const Shape& s, int axis) {
    int64_t st = 1;
    for (size_t d = static_cast<size_t>(axis) + 1; d < s.size(); ++d) st *= s[d];
    return st;
}

int normalize_axis(const Shape& s, int axis, const char* op) {
    int r = static_cast<int>(s.size());
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) throw TensorError(std::string(op) + ": axis out of range for " + shape_str(s));
    return axis;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank2(a, "matmul");
    require_rank2(b, "matmul");
    const int64_t m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
    if (k != k2)
        throw TensorError("matmul: inner extents differ, " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::vector<double> out(static_cast<size_t>(m * n), 0.0);
    gemm_nn(a.values().data(), b.values().data(), out.data(), m, k, n);
    count_muladds(static_cast<uint64_t>(m) * k * n);
    return make_op_result({m, n}, std::move(out), "matmul", {a, b}, [m, k, n](TensorNode& self) {
        TensorNode& na = *self.parents[0];
        TensorNode& nb = *self.parents[1];
        if (na.requires_grad) gemm_nt(self.grad.data(), nb.value.data(), na.grad_data(), m, n, k);
        if (nb.requires_grad) gemm_tn(na.value.data(), self.grad.data(), nb.grad_data(), m, k, n);
    });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    require_rank2(a, "matmul_nt");
    require_rank2(b, "matmul_nt");
    const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
    if (k != b.dim(1))
        throw TensorError("matmul_nt: inner extents differ, " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::vector<double> out(static_cast<size_t>(m * n), 0.0);
    gemm_nt(a.values().data(), b.values().data(), out.data(), m, k, n);
    count_muladds(static_cast<uint64_t>(m) * k * n);
    return make_op_result({m, n}, std::move(out), "matmul_nt", {a, b}, [m, k, n](TensorNode& self) {
        TensorNode& na = *self.parents[0];
        TensorNode& nb = *self.parents[1];
        // dA = dC * B ; dB = dC^T * A
        if (na.requires_grad) gemm_nn(self.grad.data(), nb.value.data(), na.grad_data(), m, n, k);
        if (nb.requires_grad) gemm_tn(self.grad.data(), na.value.data(), nb.grad_data(), m, n, k);
    });
}

namespace {

template <class Fwd, class Bwd>
Tensor binary_same_shape(const Tensor& a, const Tensor& b, const char* op, Fwd fwd, Bwd bwd) {
    if (a.shape() != b.shape())
        throw TensorError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const auto& av = a.values();
    const auto& bv = b.values();
    std::vector<double> out(av.size());
    for (size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i], bv[i]);
    return make_op_result(a.shape(), std::move(out), op, {a, b}, bwd);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_same_shape(
        a, b, "add", [](double x, double y) { return x + y; },
        [](TensorNode& self) {
            for (auto& p : self.parents)
                if (p->requires_grad) p->accumulate(self.grad);
        });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_same_shape(
        a, b, "sub", [](double x, double y) { return x - y; },
        [](TensorNode& self) {
            TensorNode& na = *self.parents[0];
            TensorNode& nb = *self.parents[1];
            if (na.requires_grad) na.accumulate(self.grad);
            if (nb.requires_grad) {
                double* g = nb.grad_data();
                for (size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
            }
        });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_same_shape(
        a, b, "mul", [](double x, double y) { return x * y; },
        [](TensorNode& self) {
            TensorNode& na = *self.parents[0];
            TensorNode& nb = *self.parents[1];
            if (na.requires_grad) {
                double* g = na.grad_data();
                for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * nb.value[i];
            }
            if (nb.requires_grad) {
                double* g = nb.grad_data();
                for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * na.value[i];
            }
        });
}

namespace {

// dfdx: (x, y) -> dy/dx. Template so the per-element calls inline.
template <class Fwd, class Dfdx>
Tensor unary(const Tensor& x, const char* op, Fwd fwd, Dfdx dfdx) {
    const auto& xv = x.values();
    std::vector<double> out(xv.size());
    for (size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
    return make_op_result(x.shape(), std::move(out), op, {x}, [dfdx](TensorNode& self) {
        TensorNode& nx = *self.parents[0];
        if (!nx.requires_grad) return;
        double* g = nx.grad_data();
        for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * dfdx(nx.value[i], self.value[i]);
    });
}

}  // namespace

Tensor scale(const Tensor& x, double s) {
    return unary(
        x, "scale", [s](double v) { return s * v; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& x, double s) {
    return unary(
        x, "add_scalar", [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}

Tensor add_rowvec(const Tensor& x, const Tensor& v) {
    const Shape& s = x.shape();
    const int64_t cols = s.back();
    if (v.numel() != cols)
        throw TensorError("add_rowvec: vector length " + shape_str(v.shape()) + " does not match last axis of " +
                          shape_str(s));
    const auto& xv = x.values();
    const auto& vv = v.values();
    std::vector<double> out(xv.size());
    for (size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] + vv[i % static_cast<size_t>(cols)];
    return make_op_result(s, std::move(out), "add_rowvec", {x, v}, [cols](TensorNode& self) {
        TensorNode& nx = *self.parents[0];
        TensorNode& nv = *self.parents[1];
        if (nx.requires_grad) nx.accumulate(self.grad);
        if (nv.requires_grad) {
            double* g = nv.grad_data();
            for (size_t i = 0; i < self.grad.size(); ++i) g[i % static_cast<size_t>(cols)] += self.grad[i];
        }
    });
}

Tensor relu(const Tensor& x) {
    return unary(
        x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
        [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
    return unary(
        x, "sigmoid", [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor exp_op(const Tensor& x) {
    return unary(
        x, "exp", [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log_op(const Tensor& x) {
    return unary(
        x, "log", [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor abs_op(const Tensor& x) {
    return unary(
        x, "abs", [](double v) { return std::fabs(v); },
        [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
    if (lo > hi) throw TensorError("clamp: lo > hi");
    return unary(
        x, "clamp", [lo, hi](double v) { return std::min(std::max(v, lo), hi); },
        [lo, hi](double v, double) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

namespace {

// Shared masked/unmasked softmax along `axis`. Empty mask = all attend.
Tensor softmax_impl(const Tensor& x, const std::vector<uint8_t>& mask, int axis_in) {
    const Shape& s = x.shape();
    const int axis = normalize_axis(s, axis_in, "softmax");
    if (!mask.empty() && mask.size() != x.values().size())
        throw TensorError("masked_softmax: mask size does not match tensor");
    const int64_t n_axis = s[static_cast<size_t>(axis)];
    const int64_t stride = axis_stride(s, axis);
    const int64_t total = x.numel();
    const int64_t outer = total / (n_axis * stride);
    const auto& xv = x.values();
    std::vector<double> out(xv.size(), 0.0);
    for (int64_t o = 0; o < outer; ++o) {
        for (int64_t in = 0; in < stride; ++in) {
            const int64_t base = o * n_axis * stride + in;
            double mx = -std::numeric_limits<double>::infinity();
            for (int64_t i = 0; i < n_axis; ++i) {
                const int64_t idx = base + i * stride;
                if (!mask.empty() && !mask[static_cast<size_t>(idx)]) continue;
                mx = std::max(mx, xv[static_cast<size_t>(idx)]);
            }
            if (mx == -std::numeric_limits<double>::infinity()) continue;  // fully masked lane
            double denom = 0.0;
            for (int64_t i = 0; i < n_axis; ++i) {
                const int64_t idx = base + i * stride;
                if (!mask.empty() && !mask[static_cast<size_t>(idx)]) continue;
                const double e = std::exp(xv[static_cast<size_t>(idx)] - mx);
                out[static_cast<size_t>(idx)] = e;
                denom += e;
            }
            for (int64_t i = 0; i < n_axis; ++i) {
                const int64_t idx = base + i * stride;
                if (!mask.empty() && !mask[static_cast<size_t>(idx)]) continue;
                out[static_cast<size_t>(idx)] /= denom;
            }
        }
    }
    return make_op_result(s, std::move(out), "softmax", {x},
                          [mask, n_axis, stride, outer](TensorNode& self) {
                              TensorNode& nx = *self.parents[0];
                              if (!nx.requires_grad) return;
                              double* g = nx.grad_data();
                              for (int64_t o = 0; o < outer; ++o) {
                                  for (int64_t in = 0; in < stride; ++in) {
                                      const int64_t base = o * n_axis * stride + in;
                                      double dot = 0.0;
                                      for (int64_t i = 0; i < n_axis; ++i) {
                                          const size_t idx = static_cast<size_t>(base + i * stride);
                                          if (!mask.empty() && !mask[idx]) continue;
                                          dot += self.grad[idx] * self.value[idx];
                                      }
                                      for (int64_t i = 0; i < n_axis; ++i) {
                                          const size_t idx = static_cast<size_t>(base + i * stride);
                                          if (!mask.empty() && !mask[idx]) continue;
                                          g[idx] += self.value[idx] * (self.grad[idx] - dot);
                                      }
                                  }
                              }
                          });
}

}  // namespace

Tensor softmax(const Tensor& x, int axis) { return softmax_impl(x, {}, axis); }

Tensor masked_softmax(const Tensor& x, const std::vector<uint8_t>& mask, int axis) {
    return softmax_impl(x, mask, axis);
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
    const Shape& s = x.shape();
    const int64_t cols = s.back();
    if (gain.numel() != cols || bias.numel() != cols)
        throw TensorError("layer_norm: gain/bias length must match last axis of " + shape_str(s));
    constexpr double kEps = 1e-6;
    const int64_t rows = x.numel() / cols;
    const auto& xv = x.values();
    const auto& gv = gain.values();
    const auto& bv = bias.values();
    std::vector<double> out(xv.size());
    std::vector<double> xhat(xv.size());
    std::vector<double> inv_std(static_cast<size_t>(rows));
    for (int64_t r = 0; r < rows; ++r) {
        const double* row = xv.data() + r * cols;
        double mu = 0.0;
        for (int64_t c = 0; c < cols; ++c) mu += row[c];
        mu /= static_cast<double>(cols);
        double var = 0.0;
        for (int64_t c = 0; c < cols; ++c) var += (row[c] - mu) * (row[c] - mu);
        var /= static_cast<double>(cols);
        const double is = 1.0 / std::sqrt(var + kEps);
        inv_std[static_cast<size_t>(r)] = is;
        for (int64_t c = 0; c < cols; ++c) {
            const size_t idx = static_cast<size_t>(r * cols + c);
            xhat[idx] = (row[c] - mu) * is;
            out[idx] = gv[static_cast<size_t>(c)] * xhat[idx] + bv[static_cast<size_t>(c)];
        }
    }
    return make_op_result(s, std::move(out), "layer_norm", {x, gain, bias},
                          [rows, cols, xhat = std::move(xhat), inv_std = std::move(inv_std)](TensorNode& self) {
                              TensorNode& nx = *self.parents[0];
                              TensorNode& ng = *self.parents[1];
                              TensorNode& nb = *self.parents[2];
                              const auto& gv = ng.value;
                              if (ng.requires_grad || nb.requires_grad) {
                                  double* gg = ng.requires_grad ? ng.grad_data() : nullptr;
                                  double* gb = nb.requires_grad ? nb.grad_data() : nullptr;
                                  for (int64_t r = 0; r < rows; ++r) {
                                      for (int64_t c = 0; c < cols; ++c) {
                                          const size_t idx = static_cast<size_t>(r * cols + c);
                                          if (gg) gg[static_cast<size_t>(c)] += self.grad[idx] * xhat[idx];
                                          if (gb) gb[static_cast<size_t>(c)] += self.grad[idx];
                                      }
                                  }
                              }
                              if (!nx.requires_grad) return;
                              double* gx = nx.grad_data();
                              for (int64_t r = 0; r < rows; ++r) {
                                  double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
                                  for (int64_t c = 0; c < cols; ++c) {
                                      const size_t idx = static_cast<size_t>(r * cols + c);
                                      const double dxh = self.grad[idx] * gv[static_cast<size_t>(c)];
                                      mean_dxhat += dxh;
                                      mean_dxhat_xhat += dxh * xhat[idx];
                                  }
                                  mean_dxhat /= static_cast<double>(cols);
                                  mean_dxhat_xhat /= static_cast<double>(cols);
                                  const double is = inv_std[static_cast<size_t>(r)];
                                  for (int64_t c = 0; c < cols; ++c) {
                                      const size_t idx = static_cast<size_t>(r * cols + c);
                                      const double dxh = self.grad[idx] * gv[static_cast<size_t>(c)];
                                      gx[idx] += is * (dxh - mean_dxhat - xhat[idx] * mean_dxhat_xhat);
                                  }
                              }
                          });
}

Tensor concat(const std::vector<Tensor>& parts, int axis_in) {
    if (parts.empty()) throw TensorError("concat: no inputs");
    const Shape& s0 = parts[0].shape();
    const int axis = normalize_axis(s0, axis_in, "concat");
    Shape out_shape = s0;
    int64_t axis_total = 0;
    for (const Tensor& p : parts) {
        const Shape& s = p.shape();
        if (s.size() != s0.size()) throw TensorError("concat: rank mismatch");
        for (size_t d = 0; d < s.size(); ++d)
            if (static_cast<int>(d) != axis && s[d] != s0[d])
                throw TensorError("concat: shape mismatch " + shape_str(s) + " vs " + shape_str(s0));
        axis_total += s[static_cast<size_t>(axis)];
    }
    out_shape[static_cast<size_t>(axis)] = axis_total;
    const int64_t stride = axis_stride(out_shape, axis);
    const int64_t outer = shape_numel(out_shape) / (axis_total * stride);
    std::vector<double> out(static_cast<size_t>(shape_numel(out_shape)));
    std::vector<int64_t> offsets;  // axis offset of each part
    int64_t off = 0;
    for (const Tensor& p : parts) {
        offsets.push_back(off);
        const int64_t pa = p.dim(axis);
        const auto& pv = p.values();
        for (int64_t o = 0; o < outer; ++o) {
            const double* src = pv.data() + o * pa * stride;
            double* dst = out.data() + (o * axis_total + off) * stride;
            std::memcpy(dst, src, static_cast<size_t>(pa * stride) * sizeof(double));
        }
        off += pa;
    }
    std::vector<Tensor> parents = parts;
    std::vector<int64_t> part_axis;
    for (const Tensor& p : parts) part_axis.push_back(p.dim(axis));
    return make_op_result(out_shape, std::move(out), "concat", std::move(parents),
                          [offsets, part_axis, axis_total, stride, outer](TensorNode& self) {
                              for (size_t pi = 0; pi < self.parents.size(); ++pi) {
                                  TensorNode& p = *self.parents[pi];
                                  if (!p.requires_grad) continue;
                                  double* g = p.grad_data();
                                  const int64_t pa = part_axis[pi];
                                  for (int64_t o = 0; o < outer; ++o) {
                                      const double* src = self.grad.data() + (o * axis_total + offsets[pi]) * stride;
                                      double* dst = g + o * pa * stride;
                                      for (int64_t i = 0; i < pa * stride; ++i) dst[i] += src[i];
                                  }
                              }
                          });
}

Tensor slice(const Tensor& x, int axis_in, int64_t start, int64_t len) {
    const Shape& s = x.shape();
    const int axis = normalize_axis(s, axis_in, "slice");
    const int64_t extent = s[static_cast<size_t>(axis)];
    if (start < 0 || len <= 0 || start + len > extent)
        throw TensorError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + len) +
                          ") out of bounds for axis extent " + std::to_string(extent));
    Shape out_shape = s;
    out_shape[static_cast<size_t>(axis)] = len;
    const int64_t stride = axis_stride(s, axis);
    const int64_t outer = x.numel() / (extent * stride);
    std::vector<double> out(static_cast<size_t>(shape_numel(out_shape)));
    const auto& xv = x.values();
    for (int64_t o = 0; o < outer; ++o) {
        const double* src = xv.data() + (o * extent + start) * stride;
        double* dst = out.data() + o * len * stride;
        std::memcpy(dst, src, static_cast<size_t>(len * stride) * sizeof(double));
    }
    return make_op_result(out_shape, std::move(out), "slice", {x},
                          [extent, start, len, stride, outer](TensorNode& self) {
                              TensorNode& nx = *self.parents[0];
                              if (!nx.requires_grad) return;
                              double* g = nx.grad_data();
                              for (int64_t o = 0; o < outer; ++o) {
                                  const double* src = self.grad.data() + o * len * stride;
                                  double* dst = g + (o * extent + start) * stride;
                                  for (int64_t i = 0; i < len * stride; ++i) dst[i] += src[i];
                              }
                          });
}

Tensor reshape(const Tensor& x, Shape new_shape) {
    if (shape_numel(new_shape) != x.numel())
        throw TensorError("reshape: element count mismatch " + shape_str(x.shape()) + " -> " + shape_str(new_shape));
    return make_op_result(std::move(new_shape), x.values(), "reshape", {x}, [](TensorNode& self) {
        TensorNode& nx = *self.parents[0];
        if (nx.requires_grad) nx.accumulate(self.grad);
    });
}

Tensor sum(const Tensor& x) {
    double acc = 0.0;
    for (double v : x.values()) acc += v;
    return make_op_result({1}, {acc}, "sum", {x}, [](TensorNode& self) {
        TensorNode& nx = *self.parents[0];
        if (!nx.requires_grad) return;
        double* g = nx.grad_data();
        const double gs = self.grad[0];
        for (size_t i = 0; i < nx.value.size(); ++i) g[i] += gs;
    });
}

Tensor mean(const Tensor& x) {
    return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor gather_rows(const Tensor& x, const std::vector<int64_t>& rows) {
    require_rank2(x, "gather_rows");
    const int64_t n = x.dim(0), c = x.dim(1);
    for (int64_t r : rows)
        if (r < 0 || r >= n) throw TensorError("gather_rows: row index out of range");
    std::vector<double> out(rows.size() * static_cast<size_t>(c));
    const auto& xv = x.values();
    for (size_t i = 0; i < rows.size(); ++i)
        std::memcpy(out.data() + i * static_cast<size_t>(c), xv.data() + rows[i] * c,
                    static_cast<size_t>(c) * sizeof(double));
    return make_op_result({static_cast<int64_t>(rows.size()), c}, std::move(out), "gather_rows", {x},
                          [rows, c](TensorNode& self) {
                              TensorNode& nx = *self.parents[0];
                              if (!nx.requires_grad) return;
                              double* g = nx.grad_data();
                              for (size_t i = 0; i < rows.size(); ++i) {
                                  const double* src = self.grad.data() + i * static_cast<size_t>(c);
                                  double* dst = g + rows[i] * c;
                                  for (int64_t j = 0; j < c; ++j) dst[j] += src[j];
                              }
                          });
}

Tensor scatter_rows(const Tensor& x, const std::vector<int64_t>& rows, int64_t out_rows) {
    require_rank2(x, "scatter_rows");
    if (static_cast<int64_t>(rows.size()) != x.dim(0))
        throw TensorError("scatter_rows: index count does not match rows");
    const int64_t c = x.dim(1);
    std::vector<uint8_t> seen(static_cast<size_t>(out_rows), 0);
    for (int64_t r : rows) {
        if (r < 0 || r >= out_rows) throw TensorError("scatter_rows: row index out of range");
        if (seen[static_cast<size_t>(r)]) throw TensorError("scatter_rows: duplicate row index");
        seen[static_cast<size_t>(r)] = 1;
    }
    std::vector<double> out(static_cast<size_t>(out_rows * c), 0.0);
    const auto& xv = x.values();
    for (size_t i = 0; i < rows.size(); ++i)
        std::memcpy(out.data() + rows[i] * c, xv.data() + i * static_cast<size_t>(c),
                    static_cast<size_t>(c) * sizeof(double));
    return make_op_result({out_rows, c}, std::move(out), "scatter_rows", {x}, [rows, c](TensorNode& self) {
        TensorNode& nx = *self.parents[0];
        if (!nx.requires_grad) return;
        double* g = nx.grad_data();
        for (size_t i = 0; i < rows.size(); ++i) {
            const double* src = self.grad.data() + rows[i] * c;
            double* dst = g + i * static_cast<size_t>(c);
            for (int64_t j = 0; j < c; ++j) dst[j] += src[j];
        }
    });
}

Tensor repeat_rows(const Tensor& x, int64_t times) {
    require_rank2(x, "repeat_rows");
    if (times <= 0) throw TensorError("repeat_rows: times must be positive");
    const int64_t n = x.dim(0), c = x.dim(1);
    std::vector<double> out(static_cast<size_t>(n * times * c));
    const auto& xv = x.values();
    for (int64_t i = 0; i < n; ++i)
        for (int64_t t = 0; t < times; ++t)
            std::memcpy(out.data() + (i * times + t) * c, xv.data() + i * c, static_cast<size_t>(c) * sizeof(double));
    return make_op_result({n * times, c}, std::move(out), "repeat_rows", {x}, [n, times, c](TensorNode& self) {
        TensorNode& nx = *self.parents[0];
        if (!nx.requires_grad) return;
        double* g = nx.grad_data();
        for (int64_t i = 0; i < n; ++i)
            for (int64_t t = 0; t < times; ++t) {
                const double* src = self.grad.data() + (i * times + t) * c;
                for (int64_t j = 0; j < c; ++j) g[i * c + j] += src[j];
            }
    });
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
    if (x.rank() != 4) throw TensorError("conv2d: input must be NHWC, got " + shape_str(x.shape()));
    if (w.rank() != 4) throw TensorError("conv2d: weights must be [kh,kw,cin,cout], got " + shape_str(w.shape()));
    const int64_t N = x.dim(0), H = x.dim(1), W = x.dim(2), Cin = x.dim(3);
    const int64_t kh = w.dim(0), kw = w.dim(1), Cout = w.dim(3);
    if (w.dim(2) != Cin) throw TensorError("conv2d: channel mismatch");
    if (b.numel() != Cout) throw TensorError("conv2d: bias length mismatch");
    if (stride < 1) throw TensorError("conv2d: bad stride");
    const int64_t Ho = (H + 2 * pad - kh) / stride + 1;
    const int64_t Wo = (W + 2 * pad - kw) / stride + 1;
    if (Ho <= 0 || Wo <= 0) throw TensorError("conv2d: empty output");
    const auto& xv = x.values();
    const auto& wv = w.values();
    const auto& bv = b.values();
    std::vector<double> out(static_cast<size_t>(N * Ho * Wo * Cout));
    for (int64_t n = 0; n < N; ++n)
        for (int64_t ho = 0; ho < Ho; ++ho)
            for (int64_t wo = 0; wo < Wo; ++wo) {
                double* orow = out.data() + ((n * Ho + ho) * Wo + wo) * Cout;
                for (int64_t co = 0; co < Cout; ++co) orow[co] = bv[static_cast<size_t>(co)];
                for (int64_t ki = 0; ki < kh; ++ki) {
                    const int64_t hi = ho * stride - pad + ki;
                    if (hi < 0 || hi >= H) continue;
                    for (int64_t kj = 0; kj < kw; ++kj) {
                        const int64_t wi = wo * stride - pad + kj;
                        if (wi < 0 || wi >= W) continue;
                        const double* xrow = xv.data() + ((n * H + hi) * W + wi) * Cin;
                        const double* wrow = wv.data() + (ki * kw + kj) * Cin * Cout;
                        for (int64_t ci = 0; ci < Cin; ++ci) {
                            const double pix = xrow[ci];
                            if (pix == 0.0) continue;
                            const double* wcol = wrow + ci * Cout;
                            for (int64_t co = 0; co < Cout; ++co) orow[co] += pix * wcol[co];
                        }
                    }
                }
            }
    count_muladds(static_cast<uint64_t>(N * Ho * Wo) * static_cast<uint64_t>(kh * kw * Cin * Cout));
    return make_op_result(
        {N, Ho, Wo, Cout}, std::move(out), "conv2d", {x, w, b},
        [N, H, W, Cin, kh, kw, Cout, Ho, Wo, stride, pad](TensorNode& self) {
            TensorNode& nx = *self.parents[0];
            TensorNode& nw = *self.parents[1];
            TensorNode& nb = *self.parents[2];
            double* gx = nx.requires_grad ? nx.grad_data() : nullptr;
            double* gw = nw.requires_grad ? nw.grad_data() : nullptr;
            double* gb = nb.requires_grad ? nb.grad_data() : nullptr;
            for (int64_t n = 0; n < N; ++n)
                for (int64_t ho = 0; ho < Ho; ++ho)
                    for (int64_t wo = 0; wo < Wo; ++wo) {
                        const double* grow = self.grad.data() + ((n * Ho + ho) * Wo + wo) * Cout;
                        if (gb)
                            for (int64_t co = 0; co < Cout; ++co) gb[co] += grow[co];
                        for (int64_t ki = 0; ki < kh; ++ki) {
                            const int64_t hi = ho * stride - pad + ki;
                            if (hi < 0 || hi >= H) continue;
                            for (int64_t kj = 0; kj < kw; ++kj) {
                                const int64_t wi = wo * stride - pad + kj;
                                if (wi < 0 || wi >= W) continue;
                                const int64_t xoff = ((n * H + hi) * W + wi) * Cin;
                                const int64_t woff = (ki * kw + kj) * Cin * Cout;
                                for (int64_t ci = 0; ci < Cin; ++ci) {
                                    const double pix = nx.value[static_cast<size_t>(xoff + ci)];
                                    const double* wcol = nw.value.data() + woff + ci * Cout;
                                    double acc = 0.0;
                                    for (int64_t co = 0; co < Cout; ++co) {
                                        acc += grow[co] * wcol[co];
                                        if (gw) gw[woff + ci * Cout + co] += grow[co] * pix;
                                    }
                                    if (gx) gx[xoff + ci] += acc;
                                }
                            }
                        }
                    }
        });
}

Tensor upsample2x(const Tensor& x) {
    if (x.rank() != 4) throw TensorError("upsample2x: input must be NHWC");
    const int64_t N = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
    std::vector<double> out(static_cast<size_t>(N * 2 * H * 2 * W * C));
    const auto& xv = x.values();
    for (int64_t n = 0; n < N; ++n)
        for (int64_t h = 0; h < 2 * H; ++h)
            for (int64_t w = 0; w < 2 * W; ++w)
                std::memcpy(out.data() + ((n * 2 * H + h) * 2 * W + w) * C,
                            xv.data() + ((n * H + h / 2) * W + w / 2) * C, static_cast<size_t>(C) * sizeof(double));
    return make_op_result({N, 2 * H, 2 * W, C}, std::move(out), "upsample2x", {x}, [N, H, W, C](TensorNode& self) {
        TensorNode& nx = *self.parents[0];
        if (!nx.requires_grad) return;
        double* g = nx.grad_data();
        for (int64_t n = 0; n < N; ++n)
            for (int64_t h = 0; h < 2 * H; ++h)
                for (int64_t w = 0; w < 2 * W; ++w) {
                    const double* src = self.grad.data() + ((n * 2 * H + h) * 2 * W + w) * C;
                    double* dst = g + ((n * H + h / 2) * W + w / 2) * C;
                    for (int64_t c = 0; c < C; ++c) dst[c] += src[c];
                }
    });
}

Tensor sinusoidal_encode(const Tensor& values, int dim, double temperature) {
    if (dim <= 0 || dim % 2 != 0) throw TensorError("sinusoidal_encode: dim must be positive and even");
    const int64_t n = values.numel();
    const int pairs = dim / 2;
    std::vector<double> freqs(static_cast<size_t>(pairs));
    for (int i = 0; i < pairs; ++i)
        freqs[static_cast<size_t>(i)] = 1.0 / std::pow(temperature, (2.0 * i) / static_cast<double>(dim));
    const auto& vv = values.values();
    std::vector<double> out(static_cast<size_t>(n * dim));
    for (int64_t r = 0; r < n; ++r)
        for (int i = 0; i < pairs; ++i) {
            const double a = vv[static_cast<size_t>(r)] * freqs[static_cast<size_t>(i)];
            out[static_cast<size_t>(r * dim + 2 * i)] = std::sin(a);
            out[static_cast<size_t>(r * dim + 2 * i + 1)] = std::cos(a);
        }
    return make_op_result({n, dim}, std::move(out), "sinusoidal_encode", {values},
                          [n, pairs, dim, freqs](TensorNode& self) {
                              TensorNode& nv = *self.parents[0];
                              if (!nv.requires_grad) return;
                              double* g = nv.grad_data();
                              for (int64_t r = 0; r < n; ++r) {
                                  double acc = 0.0;
                                  for (int i = 0; i < pairs; ++i) {
                                      const size_t is = static_cast<size_t>(r * dim + 2 * i);
                                      const double f = freqs[static_cast<size_t>(i)];
                                      // d sin = f cos, d cos = -f sin; reuse forward outputs
                                      acc += self.grad[is] * f * self.value[is + 1];
                                      acc -= self.grad[is + 1] * f * self.value[is];
                                  }
                                  g[static_cast<size_t>(r)] += acc;
                              }
                          });
}

void backward(const Tensor& loss) {
    if (loss.numel() != 1) throw TensorError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    TensorNode* root = &loss.node();
    if (!root->requires_grad) throw TensorError("backward: loss does not require grad");
    // iterative post-order topological sort
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> visited;
    std::vector<std::pair<TensorNode*, size_t>> stack;
    stack.emplace_back(root, 0);
    visited.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            TensorNode* p = node->parents[next++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    root->grad.assign(1, 1.0);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode* node = *it;
        if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
    }
}

}  // namespace cft
