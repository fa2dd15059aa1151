#include "petnas/autodiff.hpp"

#include <cmath>
#include <sstream>

#include "petnas/errors.hpp"

namespace petnas {

namespace {

thread_local Tape* g_active_tape = nullptr;

int shape_product(const std::vector<int>& shape) {
  int n = 1;
  for (int d : shape) n *= d;
  return n;
}

using Impl = std::shared_ptr<detail::TensorImpl>;

bool want_grad(std::initializer_list<const Tensor*> inputs) {
  if (!Tape::active()) return false;
  for (const Tensor* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

// --- raw matrix kernels (row-major) ---

// c += a[m,k] * b[k,n]
void mm_nn_acc(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    for (int p = 0; p < k; ++p) {
      const double av = ai[p];
      const double* bp = b + p * n;
      for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// c += a[m,k] * b[n,k]^T
void mm_nt_acc(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    for (int j = 0; j < n; ++j) {
      const double* bj = b + j * k;
      double s = 0.0;
      for (int p = 0; p < k; ++p) s += ai[p] * bj[p];
      ci[j] += s;
    }
  }
}

// c += a[k,m]^T * b[k,n]
void mm_tn_acc(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int p = 0; p < k; ++p) {
    const double* ap = a + p * m;
    const double* bp = b + p * n;
    for (int i = 0; i < m; ++i) {
      const double av = ap[i];
      double* ci = c + i * n;
      for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

void check_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2)
    throw DimensionError(std::string(op) + ": expected rank-2 tensor, got shape " +
                         shape_string(t.shape()));
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

double gelu_value(double x) {
  const double u = kGeluC * (x + kGeluA * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(u));
}

double gelu_derivative(double x) {
  const double u = kGeluC * (x + kGeluA * x * x * x);
  const double t = std::tanh(u);
  const double du = kGeluC * (1.0 + 3.0 * kGeluA * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

}  // namespace

std::string shape_string(const std::vector<int>& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// --- Tensor ---

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(std::vector<int> shape, double value, bool requires_grad) {
  auto impl = std::make_shared<detail::TensorImpl>();
  for (int d : shape)
    if (d <= 0) throw DimensionError("tensor dimension must be positive, got shape " + shape_string(shape));
  impl->data.assign(shape_product(shape), value);
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<double> data, bool requires_grad) {
  if (shape_product(shape) != static_cast<int>(data.size()))
    throw DimensionError("data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_string(shape));
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({}, {value}, requires_grad);
}

int Tensor::rows() const {
  check_rank2(*this, "rows");
  return impl_->shape[0];
}

int Tensor::cols() const {
  check_rank2(*this, "cols");
  return impl_->shape[1];
}

double Tensor::item() const {
  if (size() != 1) throw UsageError("item(): tensor is not a scalar, shape " + shape_string(shape()));
  return impl_->data[0];
}

Tensor Tensor::clone() const {
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = impl_->shape;
  impl->data = impl_->data;
  impl->requires_grad = impl_->requires_grad;
  return Tensor(std::move(impl));
}

// --- Tape ---

Tape::Tape() {
  if (g_active_tape) throw UsageError("a tape is already active on this thread");
  g_active_tape = this;
}

Tape::~Tape() {
  if (g_active_tape == this) g_active_tape = nullptr;
}

Tape* Tape::active() {
  // A spent tape no longer records; forwards after backward() are value-only.
  if (g_active_tape && g_active_tape->spent_) return nullptr;
  return g_active_tape;
}

void Tape::record(std::function<void()> step) {
  if (spent_) throw UsageError("tape already consumed by backward()");
  steps_.push_back(std::move(step));
}

void Tape::backward(const Tensor& loss) {
  if (spent_) throw UsageError("tape already consumed by backward()");
  if (!loss.defined() || loss.size() != 1 || loss.rank() != 0)
    throw UsageError("backward() requires a scalar loss, got shape " +
                     (loss.defined() ? shape_string(loss.shape()) : std::string("<empty>")));
  if (!loss.requires_grad())
    throw UsageError("backward() on a loss that was not produced by taped ops");
  spent_ = true;
  loss.impl()->grad_buffer()[0] += 1.0;
  for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
  steps_.clear();
}

// --- op helpers ---

namespace {

Tensor make_output(std::vector<int> shape, bool track) {
  Tensor out = Tensor::zeros(std::move(shape), track);
  return out;
}

// Returns false when the output never received a gradient; such branches
// contribute nothing.
bool out_grad_ready(const Impl& out) { return !out->grad.empty(); }

}  // namespace

// --- ops ---

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_rank2(a, "matmul");
  check_rank2(b, "matmul");
  const int m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k)
    throw DimensionError("matmul: inner dimensions disagree: " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  const bool track = want_grad({&a, &b});
  Tensor out = make_output({m, n}, track);
  mm_nn_acc(a.values().data(), b.values().data(), out.values().data(), m, k, n);
  if (track) {
    Tape::active()->record([ai = a.impl(), bi = b.impl(), oi = out.impl(), m, k, n] {
      if (!out_grad_ready(oi)) return;
      const double* go = oi->grad.data();
      if (ai->requires_grad)  // dA += dC * B^T
        mm_nt_acc(go, bi->data.data(), ai->grad_buffer().data(), m, n, k);
      if (bi->requires_grad)  // dB += A^T * dC
        mm_tn_acc(ai->data.data(), go, bi->grad_buffer().data(), k, m, n);
    });
  }
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  check_rank2(a, "matmul_nt");
  check_rank2(b, "matmul_nt");
  const int m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k)
    throw DimensionError("matmul_nt: inner dimensions disagree: " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()) + " transposed");
  const bool track = want_grad({&a, &b});
  Tensor out = make_output({m, n}, track);
  mm_nt_acc(a.values().data(), b.values().data(), out.values().data(), m, k, n);
  if (track) {
    Tape::active()->record([ai = a.impl(), bi = b.impl(), oi = out.impl(), m, k, n] {
      if (!out_grad_ready(oi)) return;
      const double* go = oi->grad.data();
      if (ai->requires_grad)  // dA += dC * B
        mm_nn_acc(go, bi->data.data(), ai->grad_buffer().data(), m, n, k);
      if (bi->requires_grad)  // dB += dC^T * A
        mm_tn_acc(go, ai->data.data(), bi->grad_buffer().data(), n, m, k);
    });
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  const bool same = a.shape() == b.shape();
  const bool bias_style = !same && b.rank() == 1 && a.rank() >= 1 &&
                          a.shape().back() == b.shape()[0];
  if (!same && !bias_style)
    throw DimensionError("add: incompatible shapes " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()));
  const bool track = want_grad({&a, &b});
  Tensor out = make_output(a.shape(), track);
  const int n = a.size();
  const auto& av = a.values();
  const auto& bv = b.values();
  auto& ov = out.values();
  if (same) {
    for (int i = 0; i < n; ++i) ov[i] = av[i] + bv[i];
  } else {
    const int last = b.size();
    for (int i = 0; i < n; ++i) ov[i] = av[i] + bv[i % last];
  }
  if (track) {
    Tape::active()->record([ai = a.impl(), bi = b.impl(), oi = out.impl(), same, n] {
      if (!out_grad_ready(oi)) return;
      const double* go = oi->grad.data();
      if (ai->requires_grad) {
        double* ga = ai->grad_buffer().data();
        for (int i = 0; i < n; ++i) ga[i] += go[i];
      }
      if (bi->requires_grad) {
        double* gb = bi->grad_buffer().data();
        if (same) {
          for (int i = 0; i < n; ++i) gb[i] += go[i];
        } else {
          const int last = bi->size();
          for (int i = 0; i < n; ++i) gb[i % last] += go[i];
        }
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw DimensionError("mul: incompatible shapes " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()));
  const bool track = want_grad({&a, &b});
  Tensor out = make_output(a.shape(), track);
  const int n = a.size();
  for (int i = 0; i < n; ++i) out.values()[i] = a.values()[i] * b.values()[i];
  if (track) {
    Tape::active()->record([ai = a.impl(), bi = b.impl(), oi = out.impl(), n] {
      if (!out_grad_ready(oi)) return;
      const double* go = oi->grad.data();
      if (ai->requires_grad) {
        double* ga = ai->grad_buffer().data();
        for (int i = 0; i < n; ++i) ga[i] += go[i] * bi->data[i];
      }
      if (bi->requires_grad) {
        double* gb = bi->grad_buffer().data();
        for (int i = 0; i < n; ++i) gb[i] += go[i] * ai->data[i];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& a, double c) {
  const bool track = want_grad({&a});
  Tensor out = make_output(a.shape(), track);
  const int n = a.size();
  for (int i = 0; i < n; ++i) out.values()[i] = a.values()[i] * c;
  if (track) {
    Tape::active()->record([ai = a.impl(), oi = out.impl(), c, n] {
      if (!out_grad_ready(oi) || !ai->requires_grad) return;
      double* ga = ai->grad_buffer().data();
      for (int i = 0; i < n; ++i) ga[i] += oi->grad[i] * c;
    });
  }
  return out;
}

Tensor relu(const Tensor& a) {
  const bool track = want_grad({&a});
  Tensor out = make_output(a.shape(), track);
  const int n = a.size();
  for (int i = 0; i < n; ++i) out.values()[i] = a.values()[i] > 0.0 ? a.values()[i] : 0.0;
  if (track) {
    Tape::active()->record([ai = a.impl(), oi = out.impl(), n] {
      if (!out_grad_ready(oi) || !ai->requires_grad) return;
      double* ga = ai->grad_buffer().data();
      for (int i = 0; i < n; ++i)
        if (ai->data[i] > 0.0) ga[i] += oi->grad[i];
    });
  }
  return out;
}

Tensor gelu(const Tensor& a) {
  const bool track = want_grad({&a});
  Tensor out = make_output(a.shape(), track);
  const int n = a.size();
  for (int i = 0; i < n; ++i) out.values()[i] = gelu_value(a.values()[i]);
  if (track) {
    Tape::active()->record([ai = a.impl(), oi = out.impl(), n] {
      if (!out_grad_ready(oi) || !ai->requires_grad) return;
      double* ga = ai->grad_buffer().data();
      for (int i = 0; i < n; ++i) ga[i] += oi->grad[i] * gelu_derivative(ai->data[i]);
    });
  }
  return out;
}

Tensor softmax_rows(const Tensor& a) {
  check_rank2(a, "softmax_rows");
  const int m = a.rows(), n = a.cols();
  const bool track = want_grad({&a});
  Tensor out = make_output(a.shape(), track);
  for (int i = 0; i < m; ++i) {
    const double* xi = a.values().data() + i * n;
    double* oi = out.values().data() + i * n;
    double mx = xi[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, xi[j]);
    double z = 0.0;
    for (int j = 0; j < n; ++j) {
      oi[j] = std::exp(xi[j] - mx);
      z += oi[j];
    }
    for (int j = 0; j < n; ++j) oi[j] /= z;
  }
  if (track) {
    Tape::active()->record([ai = a.impl(), oi = out.impl(), m, n] {
      if (!out_grad_ready(oi) || !ai->requires_grad) return;
      double* ga = ai->grad_buffer().data();
      for (int i = 0; i < m; ++i) {
        const double* p = oi->data.data() + i * n;
        const double* gp = oi->grad.data() + i * n;
        double dot = 0.0;
        for (int j = 0; j < n; ++j) dot += gp[j] * p[j];
        double* gi = ga + i * n;
        for (int j = 0; j < n; ++j) gi[j] += p[j] * (gp[j] - dot);
      }
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.rank() < 1) throw DimensionError("layer_norm: rank-0 input");
  const int n = x.shape().back();
  if (gain.rank() != 1 || gain.size() != n || bias.rank() != 1 || bias.size() != n)
    throw DimensionError("layer_norm: gain/bias must be vectors of length " + std::to_string(n));
  const int rows = x.size() / n;
  const bool track = want_grad({&x, &gain, &bias});
  Tensor out = make_output(x.shape(), track);
  // Cache per-row inverse stddev and normalized values for the backward pass.
  auto inv_sd = std::make_shared<std::vector<double>>(rows);
  auto xhat = std::make_shared<std::vector<double>>(rows * n);
  for (int r = 0; r < rows; ++r) {
    const double* xr = x.values().data() + r * n;
    double mu = 0.0;
    for (int j = 0; j < n; ++j) mu += xr[j];
    mu /= n;
    double var = 0.0;
    for (int j = 0; j < n; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= n;
    const double s = 1.0 / std::sqrt(var + eps);
    (*inv_sd)[r] = s;
    double* hr = xhat->data() + r * n;
    double* orow = out.values().data() + r * n;
    for (int j = 0; j < n; ++j) {
      hr[j] = (xr[j] - mu) * s;
      orow[j] = gain.values()[j] * hr[j] + bias.values()[j];
    }
  }
  if (track) {
    Tape::active()->record([xi = x.impl(), gi = gain.impl(), bi = bias.impl(), oi = out.impl(),
                            inv_sd, xhat, rows, n] {
      if (!out_grad_ready(oi)) return;
      for (int r = 0; r < rows; ++r) {
        const double* go = oi->grad.data() + r * n;
        const double* hr = xhat->data() + r * n;
        if (gi->requires_grad) {
          double* gg = gi->grad_buffer().data();
          for (int j = 0; j < n; ++j) gg[j] += go[j] * hr[j];
        }
        if (bi->requires_grad) {
          double* gb = bi->grad_buffer().data();
          for (int j = 0; j < n; ++j) gb[j] += go[j];
        }
        if (xi->requires_grad) {
          double* gx = xi->grad_buffer().data() + r * n;
          const double s = (*inv_sd)[r];
          double mean_gy = 0.0, mean_gyh = 0.0;
          for (int j = 0; j < n; ++j) {
            const double gy = go[j] * gi->data[j];
            mean_gy += gy;
            mean_gyh += gy * hr[j];
          }
          mean_gy /= n;
          mean_gyh /= n;
          for (int j = 0; j < n; ++j) {
            const double gy = go[j] * gi->data[j];
            gx[j] += s * (gy - mean_gy - hr[j] * mean_gyh);
          }
        }
      }
    });
  }
  return out;
}

Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  check_rank2(logits, "softmax_cross_entropy");
  const int b = logits.rows(), c = logits.cols();
  if (static_cast<int>(labels.size()) != b)
    throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                         " labels for batch of " + std::to_string(b));
  for (int i = 0; i < b; ++i)
    if (labels[i] < 0 || labels[i] >= c)
      throw InputError("label " + std::to_string(labels[i]) + " out of range [0," +
                       std::to_string(c) + ") at batch index " + std::to_string(i));
  const bool track = want_grad({&logits});
  // Hold softmax probabilities for the backward pass.
  auto probs = std::make_shared<std::vector<double>>(b * c);
  double loss = 0.0;
  for (int i = 0; i < b; ++i) {
    const double* li = logits.values().data() + i * c;
    double mx = li[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, li[j]);
    double z = 0.0;
    double* pi = probs->data() + i * c;
    for (int j = 0; j < c; ++j) {
      pi[j] = std::exp(li[j] - mx);
      z += pi[j];
    }
    for (int j = 0; j < c; ++j) pi[j] /= z;
    loss += -(li[labels[i]] - mx - std::log(z));
  }
  loss /= b;
  Tensor out = Tensor::scalar(loss, track);
  if (track) {
    Tape::active()->record([li = logits.impl(), oi = out.impl(), probs, labels, b, c] {
      if (!out_grad_ready(oi) || !li->requires_grad) return;
      const double go = oi->grad[0];
      double* gl = li->grad_buffer().data();
      for (int i = 0; i < b; ++i) {
        const double* pi = probs->data() + i * c;
        for (int j = 0; j < c; ++j) {
          const double indicator = (j == labels[i]) ? 1.0 : 0.0;
          gl[i * c + j] += go * (pi[j] - indicator) / b;
        }
      }
    });
  }
  return out;
}

Tensor sum(const Tensor& a) {
  const bool track = want_grad({&a});
  double s = 0.0;
  for (double v : a.values()) s += v;
  Tensor out = Tensor::scalar(s, track);
  if (track) {
    Tape::active()->record([ai = a.impl(), oi = out.impl()] {
      if (!out_grad_ready(oi) || !ai->requires_grad) return;
      const double go = oi->grad[0];
      double* ga = ai->grad_buffer().data();
      for (int i = 0; i < ai->size(); ++i) ga[i] += go;
    });
  }
  return out;
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / a.size()); }

Tensor take_row(const Tensor& a, int row) {
  check_rank2(a, "take_row");
  if (row < 0 || row >= a.rows())
    throw DimensionError("take_row: row " + std::to_string(row) + " out of " +
                         std::to_string(a.rows()));
  const int n = a.cols();
  const bool track = want_grad({&a});
  Tensor out = make_output({1, n}, track);
  const double* src = a.values().data() + row * n;
  std::copy(src, src + n, out.values().data());
  if (track) {
    Tape::active()->record([ai = a.impl(), oi = out.impl(), row, n] {
      if (!out_grad_ready(oi) || !ai->requires_grad) return;
      double* ga = ai->grad_buffer().data() + row * n;
      for (int j = 0; j < n; ++j) ga[j] += oi->grad[j];
    });
  }
  return out;
}

Tensor stack_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("stack_rows: empty input");
  const int n = parts[0].cols();
  for (const Tensor& p : parts)
    if (p.rank() != 2 || p.rows() != 1 || p.cols() != n)
      throw DimensionError("stack_rows: all parts must be [1," + std::to_string(n) + "]");
  bool track = false;
  if (Tape::active())
    for (const Tensor& p : parts) track = track || p.requires_grad();
  const int k = static_cast<int>(parts.size());
  Tensor out = make_output({k, n}, track);
  for (int i = 0; i < k; ++i)
    std::copy(parts[i].values().begin(), parts[i].values().end(),
              out.values().begin() + i * n);
  if (track) {
    std::vector<Impl> impls;
    impls.reserve(parts.size());
    for (const Tensor& p : parts) impls.push_back(p.impl());
    Tape::active()->record([impls = std::move(impls), oi = out.impl(), n] {
      if (!out_grad_ready(oi)) return;
      for (size_t i = 0; i < impls.size(); ++i) {
        if (!impls[i]->requires_grad) continue;
        double* g = impls[i]->grad_buffer().data();
        const double* go = oi->grad.data() + i * n;
        for (int j = 0; j < n; ++j) g[j] += go[j];
      }
    });
  }
  return out;
}

Tensor slice_cols(const Tensor& a, int start, int len) {
  check_rank2(a, "slice_cols");
  if (start < 0 || len <= 0 || start + len > a.cols())
    throw DimensionError("slice_cols: [" + std::to_string(start) + "," +
                         std::to_string(start + len) + ") out of " + std::to_string(a.cols()) +
                         " columns");
  const int m = a.rows(), n = a.cols();
  const bool track = want_grad({&a});
  Tensor out = make_output({m, len}, track);
  for (int i = 0; i < m; ++i)
    std::copy(a.values().begin() + i * n + start, a.values().begin() + i * n + start + len,
              out.values().begin() + i * len);
  if (track) {
    Tape::active()->record([ai = a.impl(), oi = out.impl(), start, len, m, n] {
      if (!out_grad_ready(oi) || !ai->requires_grad) return;
      double* ga = ai->grad_buffer().data();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < len; ++j) ga[i * n + start + j] += oi->grad[i * len + j];
    });
  }
  return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: empty input");
  const int m = parts[0].rows();
  int total = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != 2 || p.rows() != m)
      throw DimensionError("concat_cols: row counts disagree");
    total += p.cols();
  }
  bool track = false;
  if (Tape::active())
    for (const Tensor& p : parts) track = track || p.requires_grad();
  Tensor out = make_output({m, total}, track);
  int offset = 0;
  for (const Tensor& p : parts) {
    const int w = p.cols();
    for (int i = 0; i < m; ++i)
      std::copy(p.values().begin() + i * w, p.values().begin() + (i + 1) * w,
                out.values().begin() + i * total + offset);
    offset += w;
  }
  if (track) {
    std::vector<Impl> impls;
    std::vector<int> widths;
    for (const Tensor& p : parts) {
      impls.push_back(p.impl());
      widths.push_back(p.cols());
    }
    Tape::active()->record(
        [impls = std::move(impls), widths = std::move(widths), oi = out.impl(), m, total] {
          if (!out_grad_ready(oi)) return;
          int offset = 0;
          for (size_t k = 0; k < impls.size(); ++k) {
            const int w = widths[k];
            if (impls[k]->requires_grad) {
              double* g = impls[k]->grad_buffer().data();
              for (int i = 0; i < m; ++i)
                for (int j = 0; j < w; ++j) g[i * w + j] += oi->grad[i * total + offset + j];
            }
            offset += w;
          }
        });
  }
  return out;
}

Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids) {
  check_rank2(table, "embedding_lookup");
  const int v = table.rows(), d = table.cols();
  for (int id : ids)
    if (id < 0 || id >= v)
      throw InputError("token id " + std::to_string(id) + " out of vocabulary [0," +
                       std::to_string(v) + ")");
  if (ids.empty()) throw DimensionError("embedding_lookup: empty id list");
  const int L = static_cast<int>(ids.size());
  const bool track = want_grad({&table});
  Tensor out = make_output({L, d}, track);
  for (int i = 0; i < L; ++i)
    std::copy(table.values().begin() + ids[i] * d, table.values().begin() + (ids[i] + 1) * d,
              out.values().begin() + i * d);
  if (track) {
    Tape::active()->record([ti = table.impl(), oi = out.impl(), ids, L, d] {
      if (!out_grad_ready(oi) || !ti->requires_grad) return;
      double* g = ti->grad_buffer().data();
      for (int i = 0; i < L; ++i)
        for (int j = 0; j < d; ++j) g[ids[i] * d + j] += oi->grad[i * d + j];
    });
  }
  return out;
}

}  // namespace petnas
