// Copyright (C) 2026 The causalvid authors
// SPDX-License-Identifier: Apache-2.0

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "causalvid/autograd.hpp"
#include "causalvid/error.hpp"

namespace cvs::ag {

namespace {

using MatR = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;

using Backward = std::function<void(Node&)>;

Tensor make_op(Shape shape, std::vector<double> value, std::initializer_list<Tensor> inputs,
               Backward backward) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  if (grad_enabled()) {
    bool need = false;
    for (const auto& t : inputs) need = need || t.requires_grad();
    if (need) {
      n->requires_grad = true;
      for (const auto& t : inputs) n->parents.push_back(t.node_ptr());
      n->backward = std::move(backward);
    }
  }
  return Tensor(std::move(n));
}

void check_same(const Tensor& a, const Tensor& b, const char* op) {
  require(a.shape() == b.shape(), ErrorKind::Contract,
          std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
              shape_str(b.shape()));
}

Node& parent(Node& self, std::size_t i) { return *self.parents[i]; }

template <class F>
Tensor unary(const Tensor& a, F f, std::function<double(double x, double y)> dfdx) {
  std::vector<double> out(a.values().size());
  const auto& in = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  return make_op(a.shape(), std::move(out), {a}, [dfdx](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i)
      g[i] += self.grad[i] * dfdx(p.value[i], self.value[i]);
  });
}

// Splits a shape into [rows, last].
std::pair<std::int64_t, std::int64_t> rows_last(const Shape& s) {
  require(!s.empty(), ErrorKind::Contract, "expected rank >= 1");
  const std::int64_t last = s.back();
  return {last == 0 ? 0 : numel(s) / last, last};
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same(a, b, "add");
  std::vector<double> out(a.values());
  const auto& bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (int k = 0; k < 2; ++k) {
      Node& p = parent(self, k);
      if (!p.requires_grad) continue;
      auto& g = p.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same(a, b, "sub");
  std::vector<double> out(a.values());
  const auto& bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (int k = 0; k < 2; ++k) {
      Node& p = parent(self, k);
      if (!p.requires_grad) continue;
      auto& g = p.ensure_grad();
      const double sign = k == 0 ? 1.0 : -1.0;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign * self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same(a, b, "mul");
  std::vector<double> out(a.values());
  const auto& bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    if (pa.requires_grad) {
      auto& g = pa.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.value[i];
    }
  });
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.values());
  for (auto& v : out) v *= s;
  return make_op(a.shape(), std::move(out), {a}, [s](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
  });
}

Tensor add_scalar(const Tensor& a, double s) {
  std::vector<double> out(a.values());
  for (auto& v : out) v += s;
  return make_op(a.shape(), std::move(out), {a}, [](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

namespace {
std::size_t trailing_block(const Tensor& a, const Tensor& b, const char* op) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  bool ok = sb.size() <= sa.size();
  for (std::size_t i = 0; ok && i < sb.size(); ++i)
    ok = sb[sb.size() - 1 - i] == sa[sa.size() - 1 - i];
  require(ok, ErrorKind::Contract,
          std::string(op) + ": " + shape_str(sb) + " is not a trailing shape of " +
              shape_str(sa));
  return static_cast<std::size_t>(numel(sb));
}
}  // namespace

Tensor add_trailing(const Tensor& a, const Tensor& b) {
  const std::size_t block = trailing_block(a, b, "add_trailing");
  std::vector<double> out(a.values());
  const auto& bv = b.values();
  for (std::size_t i = 0; i < out.size(); i += block)
    for (std::size_t j = 0; j < block; ++j) out[i + j] += bv[j];
  return make_op(a.shape(), std::move(out), {a, b}, [block](Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    if (pa.requires_grad) {
      auto& g = pa.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); i += block)
        for (std::size_t j = 0; j < block; ++j) g[j] += self.grad[i + j];
    }
  });
}

Tensor mul_trailing(const Tensor& a, const Tensor& b) {
  const std::size_t block = trailing_block(a, b, "mul_trailing");
  std::vector<double> out(a.values());
  const auto& bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i % block];
  return make_op(a.shape(), std::move(out), {a, b}, [block](Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    if (pa.requires_grad) {
      auto& g = pa.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.value[i % block];
    }
    if (pb.requires_grad) {
      auto& g = pb.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        g[i % block] += self.grad[i] * pa.value[i];
    }
  });
}

Tensor silu(const Tensor& a) {
  return unary(
      a, [](double x) { return x / (1.0 + std::exp(-x)); },
      [](double x, double) {
        const double s = 1.0 / (1.0 + std::exp(-x));
        return s * (1.0 + x * (1.0 - s));
      });
}

Tensor relu(const Tensor& a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor exp(const Tensor& a) {
  return unary(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor square(const Tensor& a) {
  return unary(
      a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor sqrt(const Tensor& a) {
  return unary(
      a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

Tensor sum(const Tensor& a) {
  const auto& v = a.values();
  double s = 0.0;
  for (double x : v) s += x;
  return make_op({}, {s}, {a}, [](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (auto& x : g) x += self.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  require(a.numel() > 0, ErrorKind::Contract, "mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor mean_rows(const Tensor& a) {
  auto [rows, cols] = rows_last(a.shape());
  require(rows > 0, ErrorKind::Contract, "mean_rows of empty tensor");
  std::vector<double> out(static_cast<std::size_t>(cols), 0.0);
  const auto& v = a.values();
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t c = 0; c < cols; ++c) out[c] += v[r * cols + c];
  const double inv = 1.0 / static_cast<double>(rows);
  for (auto& x : out) x *= inv;
  return make_op({cols}, std::move(out), {a}, [rows, cols, inv](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (std::int64_t r = 0; r < rows; ++r)
      for (std::int64_t c = 0; c < cols; ++c) g[r * cols + c] += inv * self.grad[c];
  });
}

Tensor dot(const Tensor& a, const Tensor& b) {
  check_same(a, b, "dot");
  const auto& av = a.values();
  const auto& bv = b.values();
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) s += av[i] * bv[i];
  return make_op({}, {s}, {a, b}, [](Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    const double go = self.grad[0];
    if (pa.requires_grad) {
      auto& g = pa.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += go * pb.value[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += go * pa.value[i];
    }
  });
}

Tensor div(const Tensor& a, const Tensor& b) {
  check_same(a, b, "div");
  std::vector<double> out(a.values());
  const auto& bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] /= bv[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    if (pa.requires_grad) {
      auto& g = pa.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / pb.value[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i)
        g[i] -= self.grad[i] * self.value[i] / pb.value[i];
    }
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  require(numel(shape) == a.numel(), ErrorKind::Contract,
          "reshape " + shape_str(a.shape()) + " -> " + shape_str(shape));
  return make_op(std::move(shape), a.values(), {a}, [](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor permute(const Tensor& a, const std::vector<int>& perm) {
  const auto& in_shape = a.shape();
  const std::size_t r = in_shape.size();
  require(perm.size() == r, ErrorKind::Contract, "permute: rank mismatch");
  {
    std::vector<int> check(perm);
    std::sort(check.begin(), check.end());
    for (std::size_t i = 0; i < r; ++i)
      require(check[i] == static_cast<int>(i), ErrorKind::Contract, "permute: not a permutation");
  }
  std::vector<std::int64_t> in_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * in_shape[i];
  Shape out_shape(r);
  std::vector<std::int64_t> src_stride(r);
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = in_shape[static_cast<std::size_t>(perm[i])];
    src_stride[i] = in_strides[static_cast<std::size_t>(perm[i])];
  }
  const std::int64_t n = a.numel();
  // Flat source index for every output position.
  auto index = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(n));
  {
    std::vector<std::int64_t> counter(r, 0);
    std::int64_t src = 0;
    for (std::int64_t o = 0; o < n; ++o) {
      (*index)[static_cast<std::size_t>(o)] = src;
      for (std::size_t d = r; d-- > 0;) {
        if (++counter[d] < out_shape[d]) {
          src += src_stride[d];
          break;
        }
        src -= src_stride[d] * (out_shape[d] - 1);
        counter[d] = 0;
      }
    }
  }
  std::vector<double> out(static_cast<std::size_t>(n));
  const auto& v = a.values();
  for (std::int64_t o = 0; o < n; ++o) out[o] = v[(*index)[o]];
  return make_op(std::move(out_shape), std::move(out), {a}, [index](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (std::size_t o = 0; o < self.grad.size(); ++o) g[(*index)[o]] += self.grad[o];
  });
}

Tensor concat_last(const Tensor& a, const Tensor& b) {
  auto [ra, ca] = rows_last(a.shape());
  auto [rb, cb] = rows_last(b.shape());
  Shape lead_a(a.shape().begin(), a.shape().end() - 1);
  Shape lead_b(b.shape().begin(), b.shape().end() - 1);
  require(lead_a == lead_b, ErrorKind::Contract,
          "concat_last: leading shapes differ " + shape_str(a.shape()) + " vs " +
              shape_str(b.shape()));
  const std::int64_t c = ca + cb;
  std::vector<double> out(static_cast<std::size_t>(ra * c));
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::int64_t r = 0; r < ra; ++r) {
    std::copy_n(av.begin() + r * ca, ca, out.begin() + r * c);
    std::copy_n(bv.begin() + r * cb, cb, out.begin() + r * c + ca);
  }
  Shape shape = lead_a;
  shape.push_back(c);
  return make_op(std::move(shape), std::move(out), {a, b}, [ra, ca, cb, c](Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    if (pa.requires_grad) {
      auto& g = pa.ensure_grad();
      for (std::int64_t r = 0; r < ra; ++r)
        for (std::int64_t j = 0; j < ca; ++j) g[r * ca + j] += self.grad[r * c + j];
    }
    if (pb.requires_grad) {
      auto& g = pb.ensure_grad();
      for (std::int64_t r = 0; r < ra; ++r)
        for (std::int64_t j = 0; j < cb; ++j) g[r * cb + j] += self.grad[r * c + ca + j];
    }
  });
}

Tensor gather_rows(const Tensor& a, std::span<const std::int64_t> index) {
  auto [rows, cols] = rows_last(a.shape());
  auto idx = std::make_shared<std::vector<std::int64_t>>(index.begin(), index.end());
  std::vector<double> out(idx->size() * static_cast<std::size_t>(cols));
  const auto& v = a.values();
  for (std::size_t i = 0; i < idx->size(); ++i) {
    const auto r = (*idx)[i];
    require(r >= 0 && r < rows, ErrorKind::Range, "gather_rows: index out of range");
    std::copy_n(v.begin() + r * cols, cols, out.begin() + static_cast<std::int64_t>(i) * cols);
  }
  return make_op({static_cast<std::int64_t>(idx->size()), cols}, std::move(out), {a},
                 [idx, cols](Node& self) {
                   Node& p = parent(self, 0);
                   if (!p.requires_grad) return;
                   auto& g = p.ensure_grad();
                   for (std::size_t i = 0; i < idx->size(); ++i)
                     for (std::int64_t c = 0; c < cols; ++c)
                       g[(*idx)[i] * cols + c] += self.grad[i * cols + c];
                 });
}

Tensor merge_rows(const Tensor& a, std::span<const std::int64_t> ia, const Tensor& b,
                  std::span<const std::int64_t> ib, std::int64_t n) {
  auto [ra, ca] = rows_last(a.shape());
  auto [rb, cb] = rows_last(b.shape());
  require(ca == cb || ra == 0 || rb == 0, ErrorKind::Contract, "merge_rows: column mismatch");
  const std::int64_t cols = ra > 0 ? ca : cb;
  require(static_cast<std::int64_t>(ia.size()) == ra &&
              static_cast<std::int64_t>(ib.size()) == rb && ra + rb == n,
          ErrorKind::Contract, "merge_rows: index sets do not partition the output");
  auto idx_a = std::make_shared<std::vector<std::int64_t>>(ia.begin(), ia.end());
  auto idx_b = std::make_shared<std::vector<std::int64_t>>(ib.begin(), ib.end());
  std::vector<double> out(static_cast<std::size_t>(n * cols));
  std::vector<char> hit(static_cast<std::size_t>(n), 0);
  auto place = [&](const std::vector<double>& src, const std::vector<std::int64_t>& idx) {
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const auto r = idx[i];
      require(r >= 0 && r < n && !hit[r], ErrorKind::Contract,
              "merge_rows: index sets do not partition the output");
      hit[r] = 1;
      std::copy_n(src.begin() + static_cast<std::int64_t>(i) * cols, cols, out.begin() + r * cols);
    }
  };
  place(a.values(), *idx_a);
  place(b.values(), *idx_b);
  return make_op({n, cols}, std::move(out), {a, b}, [idx_a, idx_b, cols](Node& self) {
    for (int k = 0; k < 2; ++k) {
      Node& p = parent(self, k);
      if (!p.requires_grad) continue;
      auto& g = p.ensure_grad();
      const auto& idx = k == 0 ? *idx_a : *idx_b;
      for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::int64_t c = 0; c < cols; ++c) g[i * cols + c] += self.grad[idx[i] * cols + c];
    }
  });
}

Tensor straight_through_rows(const Tensor& a, const Tensor& s) {
  auto [rows, cols] = rows_last(a.shape());
  require(s.numel() == rows, ErrorKind::Contract, "straight_through_rows: one scalar per row");
  return make_op(a.shape(), a.values(), {a, s}, [rows, cols](Node& self) {
    Node& pa = parent(self, 0);
    Node& ps = parent(self, 1);
    if (pa.requires_grad) {
      auto& g = pa.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (ps.requires_grad) {
      auto& g = ps.ensure_grad();
      for (std::int64_t r = 0; r < rows; ++r) {
        double acc = 0.0;
        for (std::int64_t c = 0; c < cols; ++c)
          acc += self.grad[r * cols + c] * pa.value[r * cols + c];
        g[r] += acc;
      }
    }
  });
}

Tensor matmul(const Tensor& x, const Tensor& w) {
  require(w.rank() == 2, ErrorKind::Contract, "matmul: weight must be rank 2");
  auto [rows, k] = rows_last(x.shape());
  require(k == w.dim(0), ErrorKind::Contract,
          "matmul: " + shape_str(x.shape()) + " x " + shape_str(w.shape()));
  const std::int64_t m = w.dim(1);
  std::vector<double> out(static_cast<std::size_t>(rows * m));
  MapR(out.data(), rows, m).noalias() =
      CMapR(x.values().data(), rows, k) * CMapR(w.values().data(), k, m);
  Shape shape(x.shape().begin(), x.shape().end() - 1);
  shape.push_back(m);
  return make_op(std::move(shape), std::move(out), {x, w}, [rows, k, m](Node& self) {
    Node& px = parent(self, 0);
    Node& pw = parent(self, 1);
    CMapR g(self.grad.data(), rows, m);
    if (px.requires_grad) {
      auto& gx = px.ensure_grad();
      MapR(gx.data(), rows, k).noalias() += g * CMapR(pw.value.data(), k, m).transpose();
    }
    if (pw.requires_grad) {
      auto& gw = pw.ensure_grad();
      MapR(gw.data(), k, m).noalias() += CMapR(px.value.data(), rows, k).transpose() * g;
    }
  });
}

Tensor bmm(const Tensor& a, const Tensor& b) {
  require(a.rank() == 3 && b.rank() == 3 && a.dim(0) == b.dim(0) && a.dim(2) == b.dim(1),
          ErrorKind::Contract, "bmm: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const auto B = a.dim(0), M = a.dim(1), K = a.dim(2), N = b.dim(2);
  std::vector<double> out(static_cast<std::size_t>(B * M * N));
  for (std::int64_t i = 0; i < B; ++i)
    MapR(out.data() + i * M * N, M, N).noalias() =
        CMapR(a.values().data() + i * M * K, M, K) * CMapR(b.values().data() + i * K * N, K, N);
  return make_op({B, M, N}, std::move(out), {a, b}, [B, M, K, N](Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    for (std::int64_t i = 0; i < B; ++i) {
      CMapR g(self.grad.data() + i * M * N, M, N);
      if (pa.requires_grad)
        MapR(pa.ensure_grad().data() + i * M * K, M, K).noalias() +=
            g * CMapR(pb.value.data() + i * K * N, K, N).transpose();
      if (pb.requires_grad)
        MapR(pb.ensure_grad().data() + i * K * N, K, N).noalias() +=
            CMapR(pa.value.data() + i * M * K, M, K).transpose() * g;
    }
  });
}

Tensor bmm_bt(const Tensor& a, const Tensor& b) {
  require(a.rank() == 3 && b.rank() == 3 && a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2),
          ErrorKind::Contract,
          "bmm_bt: " + shape_str(a.shape()) + " x " + shape_str(b.shape()) + "^T");
  const auto B = a.dim(0), M = a.dim(1), K = a.dim(2), N = b.dim(1);
  std::vector<double> out(static_cast<std::size_t>(B * M * N));
  for (std::int64_t i = 0; i < B; ++i)
    MapR(out.data() + i * M * N, M, N).noalias() =
        CMapR(a.values().data() + i * M * K, M, K) *
        CMapR(b.values().data() + i * N * K, N, K).transpose();
  return make_op({B, M, N}, std::move(out), {a, b}, [B, M, K, N](Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    for (std::int64_t i = 0; i < B; ++i) {
      CMapR g(self.grad.data() + i * M * N, M, N);
      if (pa.requires_grad)
        MapR(pa.ensure_grad().data() + i * M * K, M, K).noalias() +=
            g * CMapR(pb.value.data() + i * N * K, N, K);
      if (pb.requires_grad)
        MapR(pb.ensure_grad().data() + i * N * K, N, K).noalias() +=
            g.transpose() * CMapR(pa.value.data() + i * M * K, M, K);
    }
  });
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, double scale) {
  require(q.rank() == 3 && k.rank() == 3 && v.rank() == 3 && q.dim(0) == k.dim(0) &&
              k.dim(0) == v.dim(0) && q.dim(2) == k.dim(2) && k.dim(1) == v.dim(1),
          ErrorKind::Contract,
          "attention: q " + shape_str(q.shape()) + " k " + shape_str(k.shape()) + " v " +
              shape_str(v.shape()));
  const auto B = q.dim(0), S = q.dim(1), D = q.dim(2), T = k.dim(1), E = v.dim(2);
  auto probs = std::make_shared<std::vector<double>>(static_cast<std::size_t>(B * S * T));
  std::vector<double> out(static_cast<std::size_t>(B * S * E));
  for (std::int64_t b = 0; b < B; ++b) {
    MapR P(probs->data() + b * S * T, S, T);
    P.noalias() = scale * (CMapR(q.values().data() + b * S * D, S, D) *
                           CMapR(k.values().data() + b * T * D, T, D).transpose());
    for (std::int64_t r = 0; r < S; ++r) {
      double* row = probs->data() + (b * S + r) * T;
      const double mx = *std::max_element(row, row + T);
      double z = 0.0;
      for (std::int64_t c = 0; c < T; ++c) z += (row[c] = std::exp(row[c] - mx));
      const double iz = 1.0 / z;
      for (std::int64_t c = 0; c < T; ++c) row[c] *= iz;
    }
    MapR(out.data() + b * S * E, S, E).noalias() = P * CMapR(v.values().data() + b * T * E, T, E);
  }
  return make_op({B, S, E}, std::move(out), {q, k, v}, [B, S, D, T, E, scale, probs](Node& self) {
    Node& pq = parent(self, 0);
    Node& pk = parent(self, 1);
    Node& pv = parent(self, 2);
    MatR dP(S, T);
    for (std::int64_t b = 0; b < B; ++b) {
      CMapR P(probs->data() + b * S * T, S, T);
      CMapR dO(self.grad.data() + b * S * E, S, E);
      if (pv.requires_grad)
        MapR(pv.ensure_grad().data() + b * T * E, T, E).noalias() += P.transpose() * dO;
      if (!pq.requires_grad && !pk.requires_grad) continue;
      dP.noalias() = dO * CMapR(pv.value.data() + b * T * E, T, E).transpose();
      for (std::int64_t r = 0; r < S; ++r) {
        const double s = dP.row(r).dot(P.row(r));
        dP.row(r) = P.row(r).cwiseProduct((dP.row(r).array() - s).matrix());
      }
      if (pq.requires_grad)
        MapR(pq.ensure_grad().data() + b * S * D, S, D).noalias() +=
            scale * (dP * CMapR(pk.value.data() + b * T * D, T, D));
      if (pk.requires_grad)
        MapR(pk.ensure_grad().data() + b * T * D, T, D).noalias() +=
            scale * (dP.transpose() * CMapR(pq.value.data() + b * S * D, S, D));
    }
  });
}

Tensor softmax_last(const Tensor& a) {
  auto [rows, cols] = rows_last(a.shape());
  std::vector<double> out(a.values());
  for (std::int64_t r = 0; r < rows; ++r) {
    double* row = out.data() + r * cols;
    const double mx = *std::max_element(row, row + cols);
    double z = 0.0;
    for (std::int64_t c = 0; c < cols; ++c) z += (row[c] = std::exp(row[c] - mx));
    for (std::int64_t c = 0; c < cols; ++c) row[c] /= z;
  }
  return make_op(a.shape(), std::move(out), {a}, [rows, cols](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (std::int64_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * cols;
      const double* gy = self.grad.data() + r * cols;
      double s = 0.0;
      for (std::int64_t c = 0; c < cols; ++c) s += gy[c] * y[c];
      for (std::int64_t c = 0; c < cols; ++c) g[r * cols + c] += y[c] * (gy[c] - s);
    }
  });
}

Tensor log_softmax_last(const Tensor& a) {
  auto [rows, cols] = rows_last(a.shape());
  std::vector<double> out(a.values());
  for (std::int64_t r = 0; r < rows; ++r) {
    double* row = out.data() + r * cols;
    const double mx = *std::max_element(row, row + cols);
    double z = 0.0;
    for (std::int64_t c = 0; c < cols; ++c) z += std::exp(row[c] - mx);
    const double lse = mx + std::log(z);
    for (std::int64_t c = 0; c < cols; ++c) row[c] -= lse;
  }
  return make_op(a.shape(), std::move(out), {a}, [rows, cols](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (std::int64_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * cols;
      const double* gy = self.grad.data() + r * cols;
      double s = 0.0;
      for (std::int64_t c = 0; c < cols; ++c) s += gy[c];
      for (std::int64_t c = 0; c < cols; ++c) g[r * cols + c] += gy[c] - std::exp(y[c]) * s;
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  auto [rows, cols] = rows_last(x.shape());
  require(gamma.numel() == cols && beta.numel() == cols, ErrorKind::Contract,
          "layer_norm: affine size mismatch");
  auto xhat = std::make_shared<std::vector<double>>(x.values().size());
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows));
  std::vector<double> out(x.values().size());
  const auto& v = x.values();
  const auto& gv = gamma.values();
  const auto& bv = beta.values();
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* row = v.data() + r * cols;
    double mu = 0.0;
    for (std::int64_t c = 0; c < cols; ++c) mu += row[c];
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (std::int64_t c = 0; c < cols; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= static_cast<double>(cols);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::int64_t c = 0; c < cols; ++c) {
      const double h = (row[c] - mu) * is;
      (*xhat)[r * cols + c] = h;
      out[r * cols + c] = h * gv[c] + bv[c];
    }
  }
  return make_op(x.shape(), std::move(out), {x, gamma, beta},
                 [rows, cols, xhat, inv_std](Node& self) {
                   Node& px = parent(self, 0);
                   Node& pg = parent(self, 1);
                   Node& pb = parent(self, 2);
                   const double n = static_cast<double>(cols);
                   for (std::int64_t r = 0; r < rows; ++r) {
                     const double* gy = self.grad.data() + r * cols;
                     const double* h = xhat->data() + r * cols;
                     if (pg.requires_grad) {
                       auto& g = pg.ensure_grad();
                       for (std::int64_t c = 0; c < cols; ++c) g[c] += gy[c] * h[c];
                     }
                     if (pb.requires_grad) {
                       auto& g = pb.ensure_grad();
                       for (std::int64_t c = 0; c < cols; ++c) g[c] += gy[c];
                     }
                     if (px.requires_grad) {
                       auto& g = px.ensure_grad();
                       double s1 = 0.0, s2 = 0.0;
                       for (std::int64_t c = 0; c < cols; ++c) {
                         const double gh = gy[c] * pg.value[c];
                         s1 += gh;
                         s2 += gh * h[c];
                       }
                       const double is = (*inv_std)[r];
                       for (std::int64_t c = 0; c < cols; ++c) {
                         const double gh = gy[c] * pg.value[c];
                         g[r * cols + c] += is / n * (n * gh - s1 - h[c] * s2);
                       }
                     }
                   }
                 });
}

namespace {
struct Nhwc {
  std::int64_t n, h, w, c;
};
Nhwc nhwc(const Tensor& x, const char* op) {
  require(x.rank() == 4, ErrorKind::Contract,
          std::string(op) + ": expected [N, H, W, C], got " + shape_str(x.shape()));
  return {x.dim(0), x.dim(1), x.dim(2), x.dim(3)};
}
}  // namespace

Tensor im2col3x3(const Tensor& x) {
  const auto [N, H, W, C] = nhwc(x, "im2col3x3");
  const std::int64_t K = 9 * C;
  std::vector<double> out(static_cast<std::size_t>(N * H * W * K), 0.0);
  const auto& v = x.values();
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t y = 0; y < H; ++y)
      for (std::int64_t xx = 0; xx < W; ++xx) {
        double* dst = out.data() + ((n * H + y) * W + xx) * K;
        for (int ky = 0; ky < 3; ++ky) {
          const std::int64_t sy = y + ky - 1;
          if (sy < 0 || sy >= H) continue;
          for (int kx = 0; kx < 3; ++kx) {
            const std::int64_t sx = xx + kx - 1;
            if (sx < 0 || sx >= W) continue;
            std::copy_n(v.begin() + ((n * H + sy) * W + sx) * C, C, dst + (ky * 3 + kx) * C);
          }
        }
      }
  return make_op({N, H, W, K}, std::move(out), {x}, [N, H, W, C, K](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (std::int64_t n = 0; n < N; ++n)
      for (std::int64_t y = 0; y < H; ++y)
        for (std::int64_t xx = 0; xx < W; ++xx) {
          const double* src = self.grad.data() + ((n * H + y) * W + xx) * K;
          for (int ky = 0; ky < 3; ++ky) {
            const std::int64_t sy = y + ky - 1;
            if (sy < 0 || sy >= H) continue;
            for (int kx = 0; kx < 3; ++kx) {
              const std::int64_t sx = xx + kx - 1;
              if (sx < 0 || sx >= W) continue;
              double* d = g.data() + ((n * H + sy) * W + sx) * C;
              const double* s = src + (ky * 3 + kx) * C;
              for (std::int64_t c = 0; c < C; ++c) d[c] += s[c];
            }
          }
        }
  });
}

Tensor avg_pool2(const Tensor& x) {
  const auto [N, H, W, C] = nhwc(x, "avg_pool2");
  require(H % 2 == 0 && W % 2 == 0, ErrorKind::Contract, "avg_pool2: odd spatial size");
  const std::int64_t Ho = H / 2, Wo = W / 2;
  std::vector<double> out(static_cast<std::size_t>(N * Ho * Wo * C), 0.0);
  const auto& v = x.values();
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t y = 0; y < H; ++y)
      for (std::int64_t xx = 0; xx < W; ++xx)
        for (std::int64_t c = 0; c < C; ++c)
          out[((n * Ho + y / 2) * Wo + xx / 2) * C + c] += 0.25 * v[((n * H + y) * W + xx) * C + c];
  return make_op({N, Ho, Wo, C}, std::move(out), {x}, [N, H, W, C, Ho, Wo](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (std::int64_t n = 0; n < N; ++n)
      for (std::int64_t y = 0; y < H; ++y)
        for (std::int64_t xx = 0; xx < W; ++xx)
          for (std::int64_t c = 0; c < C; ++c)
            g[((n * H + y) * W + xx) * C + c] +=
                0.25 * self.grad[((n * Ho + y / 2) * Wo + xx / 2) * C + c];
  });
}

Tensor upsample_nearest2(const Tensor& x) {
  const auto [N, H, W, C] = nhwc(x, "upsample_nearest2");
  const std::int64_t Ho = H * 2, Wo = W * 2;
  std::vector<double> out(static_cast<std::size_t>(N * Ho * Wo * C));
  const auto& v = x.values();
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t y = 0; y < Ho; ++y)
      for (std::int64_t xx = 0; xx < Wo; ++xx)
        std::copy_n(v.begin() + ((n * H + y / 2) * W + xx / 2) * C, C,
                    out.begin() + ((n * Ho + y) * Wo + xx) * C);
  return make_op({N, Ho, Wo, C}, std::move(out), {x}, [N, H, W, C, Ho, Wo](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (std::int64_t n = 0; n < N; ++n)
      for (std::int64_t y = 0; y < Ho; ++y)
        for (std::int64_t xx = 0; xx < Wo; ++xx)
          for (std::int64_t c = 0; c < C; ++c)
            g[((n * H + y / 2) * W + xx / 2) * C + c] += self.grad[((n * Ho + y) * Wo + xx) * C + c];
  });
}

namespace {
struct Tap {
  std::int64_t i0, i1;
  double w0, w1;
};
std::vector<Tap> bilinear_taps(std::int64_t in, std::int64_t out) {
  std::vector<Tap> taps(static_cast<std::size_t>(out));
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::int64_t o = 0; o < out; ++o) {
    double s = (static_cast<double>(o) + 0.5) * ratio - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(in - 1));
    const auto i0 = static_cast<std::int64_t>(std::floor(s));
    const auto i1 = std::min(i0 + 1, in - 1);
    const double f = s - static_cast<double>(i0);
    taps[o] = {i0, i1, 1.0 - f, f};
  }
  return taps;
}
}  // namespace

Tensor resize_bilinear(const Tensor& x, std::int64_t out_h, std::int64_t out_w) {
  const auto [N, H, W, C] = nhwc(x, "resize_bilinear");
  require(out_h > 0 && out_w > 0, ErrorKind::Config, "resize_bilinear: empty target");
  auto ty = std::make_shared<std::vector<Tap>>(bilinear_taps(H, out_h));
  auto tx = std::make_shared<std::vector<Tap>>(bilinear_taps(W, out_w));
  std::vector<double> out(static_cast<std::size_t>(N * out_h * out_w * C));
  const auto& v = x.values();
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t y = 0; y < out_h; ++y) {
      const Tap& a = (*ty)[y];
      for (std::int64_t xx = 0; xx < out_w; ++xx) {
        const Tap& b = (*tx)[xx];
        const double* p00 = v.data() + ((n * H + a.i0) * W + b.i0) * C;
        const double* p01 = v.data() + ((n * H + a.i0) * W + b.i1) * C;
        const double* p10 = v.data() + ((n * H + a.i1) * W + b.i0) * C;
        const double* p11 = v.data() + ((n * H + a.i1) * W + b.i1) * C;
        double* d = out.data() + ((n * out_h + y) * out_w + xx) * C;
        for (std::int64_t c = 0; c < C; ++c)
          d[c] = a.w0 * (b.w0 * p00[c] + b.w1 * p01[c]) + a.w1 * (b.w0 * p10[c] + b.w1 * p11[c]);
      }
    }
  return make_op({N, out_h, out_w, C}, std::move(out), {x},
                 [N, H, W, C, out_h, out_w, ty, tx](Node& self) {
                   Node& p = parent(self, 0);
                   if (!p.requires_grad) return;
                   auto& g = p.ensure_grad();
                   for (std::int64_t n = 0; n < N; ++n)
                     for (std::int64_t y = 0; y < out_h; ++y) {
                       const Tap& a = (*ty)[y];
                       for (std::int64_t xx = 0; xx < out_w; ++xx) {
                         const Tap& b = (*tx)[xx];
                         const double* s = self.grad.data() + ((n * out_h + y) * out_w + xx) * C;
                         double* g00 = g.data() + ((n * H + a.i0) * W + b.i0) * C;
                         double* g01 = g.data() + ((n * H + a.i0) * W + b.i1) * C;
                         double* g10 = g.data() + ((n * H + a.i1) * W + b.i0) * C;
                         double* g11 = g.data() + ((n * H + a.i1) * W + b.i1) * C;
                         for (std::int64_t c = 0; c < C; ++c) {
                           g00[c] += a.w0 * b.w0 * s[c];
                           g01[c] += a.w0 * b.w1 * s[c];
                           g10[c] += a.w1 * b.w0 * s[c];
                           g11[c] += a.w1 * b.w1 * s[c];
                         }
                       }
                     }
                 });
}

}  // namespace cvs::ag
