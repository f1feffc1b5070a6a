#include "cl4st/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>
#include <utility>

#include "cl4st/kernels.hpp"

namespace cl4st::ad {

namespace {

Var make_node(std::size_t rows, std::size_t cols, std::vector<Var> parents) {
  auto n = std::make_shared<Node>();
  n->rows = rows;
  n->cols = cols;
  n->val.assign(rows * cols, 0.0);
  n->parents = std::move(parents);
  n->requires_grad = false;
  for (const auto& p : n->parents) {
    if (p->requires_grad) n->requires_grad = true;
  }
  // grad stays empty until backward() actually reaches this node; eager
  // allocation here doubles the cost of building large tapes.
  return n;
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a->rows != b->rows || a->cols != b->cols) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
  }
}

void ensure_grad(Node& n) {
  if (n.grad.empty()) n.grad.assign(n.size(), 0.0);
}

}  // namespace

Var constant(std::size_t rows, std::size_t cols, std::vector<double> data) {
  if (data.size() != rows * cols) {
    throw std::invalid_argument("constant: data size mismatch");
  }
  auto n = std::make_shared<Node>();
  n->rows = rows;
  n->cols = cols;
  n->val = std::move(data);
  return n;
}

Var constant_scalar(double v) { return constant(1, 1, {v}); }

Var leaf(std::size_t rows, std::size_t cols, std::vector<double> data) {
  auto n = constant(rows, cols, std::move(data));
  n->requires_grad = true;
  n->grad.assign(n->size(), 0.0);
  return n;
}

Var zeros_like_leaf(std::size_t rows, std::size_t cols) {
  return leaf(rows, cols, std::vector<double>(rows * cols, 0.0));
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  auto n = make_node(a->rows, a->cols, {a, b});
  for (std::size_t i = 0; i < n->size(); ++i) n->val[i] = a->val[i] + b->val[i];
  n->backprop = [](Node& self) {
    for (int k = 0; k < 2; ++k) {
      Node& p = *self.parents[k];
      if (!p.requires_grad) continue;
      ensure_grad(p);
      kernels::axpy(1.0, self.grad.data(), p.grad.data(), self.size());
    }
  };
  return n;
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  auto n = make_node(a->rows, a->cols, {a, b});
  for (std::size_t i = 0; i < n->size(); ++i) n->val[i] = a->val[i] - b->val[i];
  n->backprop = [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) {
      ensure_grad(pa);
      kernels::axpy(1.0, self.grad.data(), pa.grad.data(), self.size());
    }
    if (pb.requires_grad) {
      ensure_grad(pb);
      kernels::axpy(-1.0, self.grad.data(), pb.grad.data(), self.size());
    }
  };
  return n;
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  auto n = make_node(a->rows, a->cols, {a, b});
  for (std::size_t i = 0; i < n->size(); ++i) n->val[i] = a->val[i] * b->val[i];
  n->backprop = [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) {
      ensure_grad(pa);
      for (std::size_t i = 0; i < self.size(); ++i)
        pa.grad[i] += self.grad[i] * pb.val[i];
    }
    if (pb.requires_grad) {
      ensure_grad(pb);
      for (std::size_t i = 0; i < self.size(); ++i)
        pb.grad[i] += self.grad[i] * pa.val[i];
    }
  };
  return n;
}

Var div(const Var& a, const Var& b) {
  require_same_shape(a, b, "div");
  auto n = make_node(a->rows, a->cols, {a, b});
  for (std::size_t i = 0; i < n->size(); ++i) n->val[i] = a->val[i] / b->val[i];
  n->backprop = [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) {
      ensure_grad(pa);
      for (std::size_t i = 0; i < self.size(); ++i)
        pa.grad[i] += self.grad[i] / pb.val[i];
    }
    if (pb.requires_grad) {
      ensure_grad(pb);
      for (std::size_t i = 0; i < self.size(); ++i)
        pb.grad[i] -= self.grad[i] * pa.val[i] / (pb.val[i] * pb.val[i]);
    }
  };
  return n;
}

Var scale(const Var& a, double s) {
  auto n = make_node(a->rows, a->cols, {a});
  for (std::size_t i = 0; i < n->size(); ++i) n->val[i] = a->val[i] * s;
  n->backprop = [s](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    ensure_grad(p);
    kernels::axpy(s, self.grad.data(), p.grad.data(), self.size());
  };
  return n;
}

Var add_scalar(const Var& a, double s) {
  auto n = make_node(a->rows, a->cols, {a});
  for (std::size_t i = 0; i < n->size(); ++i) n->val[i] = a->val[i] + s;
  n->backprop = [](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    ensure_grad(p);
    kernels::axpy(1.0, self.grad.data(), p.grad.data(), self.size());
  };
  return n;
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var matmul(const Var& a, const Var& b) {
  if (a->cols != b->rows) throw std::invalid_argument("matmul: inner dim mismatch");
  auto n = make_node(a->rows, b->cols, {a, b});
  kernels::matmul(a->val.data(), b->val.data(), n->val.data(), a->rows, a->cols, b->cols);
  n->backprop = [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    // dA += dC * B^T ; dB += A^T * dC
    if (pa.requires_grad) {
      ensure_grad(pa);
      kernels::matmul_nt_acc(self.grad.data(), pb.val.data(), pa.grad.data(),
                             pa.rows, pb.cols, pa.cols);
    }
    if (pb.requires_grad) {
      ensure_grad(pb);
      kernels::matmul_tn_acc(pa.val.data(), self.grad.data(), pb.grad.data(),
                             pb.rows, pa.rows, pb.cols);
    }
  };
  return n;
}

Var add_row_broadcast(const Var& a, const Var& bias) {
  if (bias->rows != 1 || bias->cols != a->cols) {
    throw std::invalid_argument("add_row_broadcast: bias shape mismatch");
  }
  auto n = make_node(a->rows, a->cols, {a, bias});
  for (std::size_t r = 0; r < a->rows; ++r)
    for (std::size_t c = 0; c < a->cols; ++c)
      n->at(r, c) = a->at(r, c) + bias->val[c];
  n->backprop = [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) {
      ensure_grad(pa);
      kernels::axpy(1.0, self.grad.data(), pa.grad.data(), self.size());
    }
    if (pb.requires_grad) {
      ensure_grad(pb);
      for (std::size_t r = 0; r < self.rows; ++r)
        for (std::size_t c = 0; c < self.cols; ++c)
          pb.grad[c] += self.grad[r * self.cols + c];
    }
  };
  return n;
}

Var mul_col_broadcast(const Var& a, const Var& colvec) {
  if (colvec->cols != 1 || colvec->rows != a->rows) {
    throw std::invalid_argument("mul_col_broadcast: colvec shape mismatch");
  }
  auto n = make_node(a->rows, a->cols, {a, colvec});
  for (std::size_t r = 0; r < a->rows; ++r)
    for (std::size_t c = 0; c < a->cols; ++c)
      n->at(r, c) = a->at(r, c) * colvec->val[r];
  n->backprop = [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pv = *self.parents[1];
    if (pa.requires_grad) {
      ensure_grad(pa);
      for (std::size_t r = 0; r < self.rows; ++r)
        for (std::size_t c = 0; c < self.cols; ++c)
          pa.grad[r * self.cols + c] += self.grad[r * self.cols + c] * pv.val[r];
    }
    if (pv.requires_grad) {
      ensure_grad(pv);
      for (std::size_t r = 0; r < self.rows; ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < self.cols; ++c)
          acc += self.grad[r * self.cols + c] * pa.val[r * self.cols + c];
        pv.grad[r] += acc;
      }
    }
  };
  return n;
}

Var transpose(const Var& a) {
  auto n = make_node(a->cols, a->rows, {a});
  for (std::size_t r = 0; r < a->rows; ++r)
    for (std::size_t c = 0; c < a->cols; ++c) n->at(c, r) = a->at(r, c);
  n->backprop = [](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    ensure_grad(p);
    for (std::size_t r = 0; r < self.rows; ++r)
      for (std::size_t c = 0; c < self.cols; ++c)
        p.grad[c * p.cols + r] += self.grad[r * self.cols + c];
  };
  return n;
}

Var reshape(const Var& a, std::size_t rows, std::size_t cols) {
  if (rows * cols != a->size()) throw std::invalid_argument("reshape: size mismatch");
  auto n = make_node(rows, cols, {a});
  n->val = a->val;
  n->backprop = [](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    ensure_grad(p);
    kernels::axpy(1.0, self.grad.data(), p.grad.data(), self.size());
  };
  return n;
}

Var permute_rows(const Var& a, std::vector<std::size_t> perm) {
  if (perm.size() != a->rows) throw std::invalid_argument("permute_rows: size mismatch");
  auto n = make_node(a->rows, a->cols, {a});
  const std::size_t c = a->cols;
  for (std::size_t r = 0; r < a->rows; ++r)
    std::copy_n(a->val.data() + perm[r] * c, c, n->val.data() + r * c);
  n->backprop = [perm = std::move(perm)](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    ensure_grad(p);
    const std::size_t c = self.cols;
    for (std::size_t r = 0; r < self.rows; ++r)
      kernels::axpy(1.0, self.grad.data() + r * c, p.grad.data() + perm[r] * c, c);
  };
  return n;
}

Var gather_rows(const Var& a, std::vector<std::size_t> idx) {
  for (auto i : idx)
    if (i >= a->rows) throw std::invalid_argument("gather_rows: index out of range");
  auto n = make_node(idx.size(), a->cols, {a});
  const std::size_t c = a->cols;
  for (std::size_t r = 0; r < idx.size(); ++r)
    std::copy_n(a->val.data() + idx[r] * c, c, n->val.data() + r * c);
  n->backprop = [idx = std::move(idx)](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    ensure_grad(p);
    const std::size_t c = self.cols;
    for (std::size_t r = 0; r < self.rows; ++r)
      kernels::axpy(1.0, self.grad.data() + r * c, p.grad.data() + idx[r] * c, c);
  };
  return n;
}

Var scatter_add_rows(const Var& a, std::vector<std::size_t> dst, std::size_t out_rows) {
  if (dst.size() != a->rows) throw std::invalid_argument("scatter_add_rows: index count");
  for (auto i : dst)
    if (i >= out_rows) throw std::invalid_argument("scatter_add_rows: index out of range");
  auto n = make_node(out_rows, a->cols, {a});
  const std::size_t c = a->cols;
  for (std::size_t r = 0; r < a->rows; ++r)
    kernels::axpy(1.0, a->val.data() + r * c, n->val.data() + dst[r] * c, c);
  n->backprop = [dst = std::move(dst)](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    ensure_grad(p);
    const std::size_t c = self.cols;
    for (std::size_t r = 0; r < p.rows; ++r)
      kernels::axpy(1.0, self.grad.data() + dst[r] * c, p.grad.data() + r * c, c);
  };
  return n;
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
  std::size_t rows = parts[0]->rows, cols = 0;
  for (const auto& p : parts) {
    if (p->rows != rows) throw std::invalid_argument("concat_cols: row mismatch");
    cols += p->cols;
  }
  auto n = make_node(rows, cols, parts);
  std::size_t off = 0;
  for (const auto& p : parts) {
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(p->val.data() + r * p->cols, p->cols, n->val.data() + r * cols + off);
    off += p->cols;
  }
  n->backprop = [](Node& self) {
    std::size_t off = 0;
    for (auto& pp : self.parents) {
      Node& p = *pp;
      if (p.requires_grad) {
        ensure_grad(p);
        for (std::size_t r = 0; r < self.rows; ++r)
          kernels::axpy(1.0, self.grad.data() + r * self.cols + off,
                        p.grad.data() + r * p.cols, p.cols);
      }
      off += p.cols;
    }
  };
  return n;
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
  std::size_t cols = parts[0]->cols, rows = 0;
  for (const auto& p : parts) {
    if (p->cols != cols) throw std::invalid_argument("concat_rows: col mismatch");
    rows += p->rows;
  }
  auto n = make_node(rows, cols, parts);
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy_n(p->val.data(), p->size(), n->val.data() + off);
    off += p->size();
  }
  n->backprop = [](Node& self) {
    std::size_t off = 0;
    for (auto& pp : self.parents) {
      Node& p = *pp;
      if (p.requires_grad) {
        ensure_grad(p);
        kernels::axpy(1.0, self.grad.data() + off, p.grad.data(), p.size());
      }
      off += p.size();
    }
  };
  return n;
}

Var slice_cols(const Var& a, std::size_t c0, std::size_t c1) {
  if (c0 >= c1 || c1 > a->cols) throw std::invalid_argument("slice_cols: bad range");
  auto n = make_node(a->rows, c1 - c0, {a});
  for (std::size_t r = 0; r < a->rows; ++r)
    std::copy_n(a->val.data() + r * a->cols + c0, c1 - c0, n->val.data() + r * n->cols);
  n->backprop = [c0](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    ensure_grad(p);
    for (std::size_t r = 0; r < self.rows; ++r)
      kernels::axpy(1.0, self.grad.data() + r * self.cols,
                    p.grad.data() + r * p.cols + c0, self.cols);
  };
  return n;
}

namespace {
Var pointwise(const Var& a, double (*f)(double), double (*df)(double)) {
  auto n = make_node(a->rows, a->cols, {a});
  for (std::size_t i = 0; i < n->size(); ++i) n->val[i] = f(a->val[i]);
  n->backprop = [df](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    ensure_grad(p);
    for (std::size_t i = 0; i < self.size(); ++i)
      p.grad[i] += self.grad[i] * df(p.val[i]);
  };
  return n;
}
}  // namespace

Var relu(const Var& a) {
  return pointwise(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Var leaky_relu(const Var& a, double slope) {
  auto n = make_node(a->rows, a->cols, {a});
  for (std::size_t i = 0; i < n->size(); ++i) {
    const double x = a->val[i];
    n->val[i] = x > 0.0 ? x : slope * x;
  }
  n->backprop = [slope](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    ensure_grad(p);
    for (std::size_t i = 0; i < self.size(); ++i)
      p.grad[i] += self.grad[i] * (p.val[i] > 0.0 ? 1.0 : slope);
  };
  return n;
}

Var elu(const Var& a) {
  return pointwise(
      a, [](double x) { return x > 0.0 ? x : std::expm1(x); },
      [](double x) { return x > 0.0 ? 1.0 : std::exp(x); });
}

Var exp_(const Var& a) {
  auto n = make_node(a->rows, a->cols, {a});
  for (std::size_t i = 0; i < n->size(); ++i) n->val[i] = std::exp(a->val[i]);
  n->backprop = [](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    ensure_grad(p);
    for (std::size_t i = 0; i < self.size(); ++i)
      p.grad[i] += self.grad[i] * self.val[i];
  };
  return n;
}

Var log_(const Var& a) {
  return pointwise(
      a, [](double x) { return std::log(x); }, [](double x) { return 1.0 / x; });
}

Var square(const Var& a) {
  return pointwise(
      a, [](double x) { return x * x; }, [](double x) { return 2.0 * x; });
}

Var sqrt_(const Var& a) {
  auto n = make_node(a->rows, a->cols, {a});
  for (std::size_t i = 0; i < n->size(); ++i) n->val[i] = std::sqrt(a->val[i]);
  n->backprop = [](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    ensure_grad(p);
    for (std::size_t i = 0; i < self.size(); ++i)
      p.grad[i] += self.grad[i] * 0.5 / self.val[i];
  };
  return n;
}

Var sum(const Var& a) {
  auto n = make_node(1, 1, {a});
  double acc = 0.0;
  for (double v : a->val) acc += v;
  n->val[0] = acc;
  n->backprop = [](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    ensure_grad(p);
    const double g = self.grad[0];
    for (std::size_t i = 0; i < p.size(); ++i) p.grad[i] += g;
  };
  return n;
}

Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a->size())); }

Var mean_rows(const Var& a) {
  auto n = make_node(1, a->cols, {a});
  const double inv = 1.0 / static_cast<double>(a->rows);
  for (std::size_t r = 0; r < a->rows; ++r)
    for (std::size_t c = 0; c < a->cols; ++c) n->val[c] += a->at(r, c) * inv;
  n->backprop = [inv](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    ensure_grad(p);
    for (std::size_t r = 0; r < p.rows; ++r)
      for (std::size_t c = 0; c < p.cols; ++c)
        p.grad[r * p.cols + c] += self.grad[c] * inv;
  };
  return n;
}

Var softmax_rows(const Var& a) {
  auto n = make_node(a->rows, a->cols, {a});
  for (std::size_t r = 0; r < a->rows; ++r) {
    const double* x = a->val.data() + r * a->cols;
    double* y = n->val.data() + r * a->cols;
    double mx = x[0];
    for (std::size_t c = 1; c < a->cols; ++c) mx = std::max(mx, x[c]);
    double z = 0.0;
    for (std::size_t c = 0; c < a->cols; ++c) z += (y[c] = std::exp(x[c] - mx));
    for (std::size_t c = 0; c < a->cols; ++c) y[c] /= z;
  }
  n->backprop = [](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    ensure_grad(p);
    for (std::size_t r = 0; r < self.rows; ++r) {
      const double* y = self.val.data() + r * self.cols;
      const double* gy = self.grad.data() + r * self.cols;
      double dot = 0.0;
      for (std::size_t c = 0; c < self.cols; ++c) dot += y[c] * gy[c];
      double* gx = p.grad.data() + r * self.cols;
      for (std::size_t c = 0; c < self.cols; ++c) gx[c] += y[c] * (gy[c] - dot);
    }
  };
  return n;
}

Var logsumexp_rows(const Var& a) {
  auto n = make_node(a->rows, 1, {a});
  for (std::size_t r = 0; r < a->rows; ++r) {
    const double* x = a->val.data() + r * a->cols;
    double mx = x[0];
    for (std::size_t c = 1; c < a->cols; ++c) mx = std::max(mx, x[c]);
    double z = 0.0;
    for (std::size_t c = 0; c < a->cols; ++c) z += std::exp(x[c] - mx);
    n->val[r] = mx + std::log(z);
  }
  n->backprop = [](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    ensure_grad(p);
    for (std::size_t r = 0; r < self.rows; ++r) {
      const double* x = p.val.data() + r * p.cols;
      double* gx = p.grad.data() + r * p.cols;
      const double lse = self.val[r];
      const double g = self.grad[r];
      for (std::size_t c = 0; c < p.cols; ++c)
        gx[c] += g * std::exp(x[c] - lse);
    }
  };
  return n;
}

Var row_l2_normalize(const Var& a, double eps) {
  auto n = make_node(a->rows, a->cols, {a});
  std::vector<double> norms(a->rows);
  for (std::size_t r = 0; r < a->rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < a->cols; ++c) s += a->at(r, c) * a->at(r, c);
    norms[r] = std::sqrt(s) + eps;
    for (std::size_t c = 0; c < a->cols; ++c) n->at(r, c) = a->at(r, c) / norms[r];
  }
  n->backprop = [norms = std::move(norms)](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    ensure_grad(p);
    for (std::size_t r = 0; r < self.rows; ++r) {
      const double* y = self.val.data() + r * self.cols;
      const double* gy = self.grad.data() + r * self.cols;
      double dot = 0.0;
      for (std::size_t c = 0; c < self.cols; ++c) dot += y[c] * gy[c];
      double* gx = p.grad.data() + r * self.cols;
      for (std::size_t c = 0; c < self.cols; ++c)
        gx[c] += (gy[c] - y[c] * dot) / norms[r];
    }
  };
  return n;
}

Var segment_softmax(const Var& a, std::vector<std::size_t> offsets) {
  if (a->cols != 1) throw std::invalid_argument("segment_softmax: expects column vector");
  if (offsets.empty() || offsets.back() != a->rows)
    throw std::invalid_argument("segment_softmax: bad offsets");
  auto n = make_node(a->rows, 1, {a});
  for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
    const std::size_t b = offsets[s], e = offsets[s + 1];
    if (b == e) continue;
    double mx = a->val[b];
    for (std::size_t i = b + 1; i < e; ++i) mx = std::max(mx, a->val[i]);
    double z = 0.0;
    for (std::size_t i = b; i < e; ++i) z += (n->val[i] = std::exp(a->val[i] - mx));
    for (std::size_t i = b; i < e; ++i) n->val[i] /= z;
  }
  n->backprop = [offsets = std::move(offsets)](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    ensure_grad(p);
    for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
      const std::size_t b = offsets[s], e = offsets[s + 1];
      double dot = 0.0;
      for (std::size_t i = b; i < e; ++i) dot += self.val[i] * self.grad[i];
      for (std::size_t i = b; i < e; ++i)
        p.grad[i] += self.val[i] * (self.grad[i] - dot);
    }
  };
  return n;
}

Var huber(const Var& pred, const std::vector<double>& target, double delta) {
  if (target.size() != pred->size()) throw std::invalid_argument("huber: shape mismatch");
  if (delta <= 0.0) throw std::invalid_argument("huber: delta must be > 0");
  auto n = make_node(1, 1, {pred});
  const double inv = 1.0 / static_cast<double>(pred->size());
  double acc = 0.0;
  for (std::size_t i = 0; i < pred->size(); ++i) {
    const double r = target[i] - pred->val[i];
    const double ar = std::abs(r);
    acc += ar <= delta ? 0.5 * r * r : delta * (ar - 0.5 * delta);
  }
  n->val[0] = acc * inv;
  n->backprop = [target, delta, inv](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    ensure_grad(p);
    const double g = self.grad[0] * inv;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double r = target[i] - p.val[i];
      const double d = std::abs(r) <= delta ? r : delta * (r > 0.0 ? 1.0 : -1.0);
      p.grad[i] += -g * d;  // d/dpred = -dL/dr
    }
  };
  return n;
}

Var mse(const Var& pred, const std::vector<double>& target) {
  if (target.size() != pred->size()) throw std::invalid_argument("mse: shape mismatch");
  auto n = make_node(1, 1, {pred});
  const double inv = 1.0 / static_cast<double>(pred->size());
  double acc = 0.0;
  for (std::size_t i = 0; i < pred->size(); ++i) {
    const double r = target[i] - pred->val[i];
    acc += r * r;
  }
  n->val[0] = acc * inv;
  n->backprop = [target, inv](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    ensure_grad(p);
    const double g = self.grad[0] * inv;
    for (std::size_t i = 0; i < p.size(); ++i)
      p.grad[i] += g * 2.0 * (p.val[i] - target[i]);
  };
  return n;
}

Var straight_through(const Var& soft, const std::vector<double>& hard) {
  if (hard.size() != soft->size())
    throw std::invalid_argument("straight_through: shape mismatch");
  auto n = make_node(soft->rows, soft->cols, {soft});
  n->val = hard;
  n->backprop = [](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    ensure_grad(p);
    kernels::axpy(1.0, self.grad.data(), p.grad.data(), self.size());
  };
  return n;
}

void backward(const Var& root) {
  if (root->size() != 1) throw std::invalid_argument("backward: root must be scalar");
  // Topological order via iterative DFS.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* child = node->parents[next++].get();
      if (child->requires_grad && !visited.count(child)) {
        visited.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  // order is children-before-parents; walk in reverse.
  if (root->grad.empty()) root->grad.assign(1, 0.0);
  root->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backprop && node->requires_grad && !node->grad.empty()) node->backprop(*node);
  }
}

void zero_grad(const std::vector<Var>& params) {
  for (const auto& p : params) std::fill(p->grad.begin(), p->grad.end(), 0.0);
}

}  // namespace cl4st::ad
