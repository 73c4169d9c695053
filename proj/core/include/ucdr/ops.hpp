#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "ucdr/errors.hpp"
#include "ucdr/tensor.hpp"

// Differentiable tensor operations. Each op computes its value eagerly and,
// when a tape is active and an input is tracked, records a closure that
// accumulates input gradients from the output gradient.

namespace ucdr {

namespace detail {

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ContractError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                        shape_to_string(b.shape()));
  }
}

template <typename T>
void check_rank(const Tensor<T>& a, std::size_t rank, const char* op) {
  if (a.rank() != rank) {
    throw ContractError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                        shape_to_string(a.shape()));
  }
}

// C[m x n] += A[m x k] * B[k x n]
template <typename T>
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      if (av == T(0)) continue;
      const T* brow = b + p * n;
      T* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m x n] += A[m x k] * B^T where B is [n x k]
template <typename T>
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T acc = T(0);
      const T* arow = a + i * k;
      const T* brow = b + j * k;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      c[i * n + j] += acc;
    }
  }
}

// C[m x n] += A^T * B where A is [k x m], B is [k x n]
template <typename T>
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c) {
  for (std::size_t p = 0; p < k; ++p) {
    const T* arow = a + p * m;
    const T* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T av = arow[i];
      if (av == T(0)) continue;
      T* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace detail

// ---- elementwise arithmetic ----

// add(a, b): same-shape elementwise sum, or matrix [R x C] plus row vector
// [C] broadcast over rows.
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  const bool broadcast = a.rank() == 2 && b.rank() == 1 && a.shape()[1] == b.shape()[0];
  if (!broadcast) detail::check_same_shape(a, b, "add");

  Tensor<T> out = Tensor<T>::zeros(a.shape());
  auto av = a.data();
  auto bv = b.data();
  auto ov = out.data();
  if (broadcast) {
    const std::size_t rows = a.shape()[0], cols = a.shape()[1];
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) ov[r * cols + c] = av[r * cols + c] + bv[c];
  } else {
    for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] + bv[i];
  }

  auto* tape = Tape<T>::current();
  if (tape && (tape->tracks(a) || tape->tracks(b))) {
    auto as = a.storage(), bs = b.storage(), os = out.storage();
    tape->record(os, [as, bs, os, tape, broadcast] {
      const auto& g = os->grad;
      if (detail::wants_grad(*as, tape)) {
        auto& da = detail::grad_buffer(*as);
        for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
      }
      if (detail::wants_grad(*bs, tape)) {
        auto& db = detail::grad_buffer(*bs);
        if (broadcast) {
          const std::size_t cols = bs->data.size();
          const std::size_t rows = g.size() / cols;
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) db[c] += g[r * cols + c];
        } else {
          for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i];
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "sub");
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  auto av = a.data();
  auto bv = b.data();
  auto ov = out.data();
  for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] - bv[i];

  auto* tape = Tape<T>::current();
  if (tape && (tape->tracks(a) || tape->tracks(b))) {
    auto as = a.storage(), bs = b.storage(), os = out.storage();
    tape->record(os, [as, bs, os, tape] {
      const auto& g = os->grad;
      if (detail::wants_grad(*as, tape)) {
        auto& da = detail::grad_buffer(*as);
        for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
      }
      if (detail::wants_grad(*bs, tape)) {
        auto& db = detail::grad_buffer(*bs);
        for (std::size_t i = 0; i < g.size(); ++i) db[i] -= g[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "mul");
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  auto av = a.data();
  auto bv = b.data();
  auto ov = out.data();
  for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] * bv[i];

  auto* tape = Tape<T>::current();
  if (tape && (tape->tracks(a) || tape->tracks(b))) {
    auto as = a.storage(), bs = b.storage(), os = out.storage();
    tape->record(os, [as, bs, os, tape] {
      const auto& g = os->grad;
      if (detail::wants_grad(*as, tape)) {
        auto& da = detail::grad_buffer(*as);
        for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * bs->data[i];
      }
      if (detail::wants_grad(*bs, tape)) {
        auto& db = detail::grad_buffer(*bs);
        for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i] * as->data[i];
      }
    });
  }
  return out;
}

// Multiply by a compile-time constant (not differentiated through).
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  auto av = a.data();
  auto ov = out.data();
  for (std::size_t i = 0; i < av.size(); ++i) ov[i] = factor * av[i];

  auto* tape = Tape<T>::current();
  if (tape && tape->tracks(a)) {
    auto as = a.storage(), os = out.storage();
    tape->record(os, [as, os, factor] {
      const auto& g = os->grad;
      auto& da = detail::grad_buffer(*as);
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += factor * g[i];
    });
  }
  return out;
}

// Multiply tensor a by a rank-0 tensor s; gradients flow to both.
template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, const Tensor<T>& s) {
  if (s.size() != 1) throw ContractError("mul_scalar: scale must be a single element");
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  const T sv = s.data()[0];
  auto av = a.data();
  auto ov = out.data();
  for (std::size_t i = 0; i < av.size(); ++i) ov[i] = sv * av[i];

  auto* tape = Tape<T>::current();
  if (tape && (tape->tracks(a) || tape->tracks(s))) {
    auto as = a.storage(), ss = s.storage(), os = out.storage();
    tape->record(os, [as, ss, os, tape] {
      const auto& g = os->grad;
      if (detail::wants_grad(*as, tape)) {
        auto& da = detail::grad_buffer(*as);
        for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * ss->data[0];
      }
      if (detail::wants_grad(*ss, tape)) {
        auto& ds = detail::grad_buffer(*ss);
        for (std::size_t i = 0; i < g.size(); ++i) ds[0] += g[i] * as->data[i];
      }
    });
  }
  return out;
}

// ---- linear algebra ----

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_rank(a, 2, "matmul");
  detail::check_rank(b, 2, "matmul");
  if (a.shape()[1] != b.shape()[0]) {
    throw ContractError("matmul: inner dimensions disagree, " + shape_to_string(a.shape()) + " vs " +
                        shape_to_string(b.shape()));
  }
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  Tensor<T> out = Tensor<T>::zeros({m, n});
  detail::gemm_nn(m, k, n, a.data().data(), b.data().data(), out.data().data());

  auto* tape = Tape<T>::current();
  if (tape && (tape->tracks(a) || tape->tracks(b))) {
    auto as = a.storage(), bs = b.storage(), os = out.storage();
    tape->record(os, [as, bs, os, tape, m, k, n] {
      const T* g = os->grad.data();
      if (detail::wants_grad(*as, tape)) {
        auto& da = detail::grad_buffer(*as);
        detail::gemm_nt(m, n, k, g, bs->data.data(), da.data());  // dA = G * B^T
      }
      if (detail::wants_grad(*bs, tape)) {
        auto& db = detail::grad_buffer(*bs);
        detail::gemm_tn(k, m, n, as->data.data(), g, db.data());  // dB = A^T * G
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  detail::check_rank(a, 2, "transpose");
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  Tensor<T> out = Tensor<T>::zeros({c, r});
  auto av = a.data();
  auto ov = out.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) ov[j * r + i] = av[i * c + j];

  auto* tape = Tape<T>::current();
  if (tape && tape->tracks(a)) {
    auto as = a.storage(), os = out.storage();
    tape->record(os, [as, os, r, c] {
      const auto& g = os->grad;
      auto& da = detail::grad_buffer(*as);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) da[i * c + j] += g[j * r + i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> dot(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_rank(a, 1, "dot");
  detail::check_same_shape(a, b, "dot");
  T acc = T(0);
  auto av = a.data();
  auto bv = b.data();
  for (std::size_t i = 0; i < av.size(); ++i) acc += av[i] * bv[i];
  Tensor<T> out = Tensor<T>::scalar(acc);

  auto* tape = Tape<T>::current();
  if (tape && (tape->tracks(a) || tape->tracks(b))) {
    auto as = a.storage(), bs = b.storage(), os = out.storage();
    tape->record(os, [as, bs, os, tape] {
      const T g = os->grad[0];
      if (detail::wants_grad(*as, tape)) {
        auto& da = detail::grad_buffer(*as);
        for (std::size_t i = 0; i < da.size(); ++i) da[i] += g * bs->data[i];
      }
      if (detail::wants_grad(*bs, tape)) {
        auto& db = detail::grad_buffer(*bs);
        for (std::size_t i = 0; i < db.size(); ++i) db[i] += g * as->data[i];
      }
    });
  }
  return out;
}

// ---- structural ops ----

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape new_shape) {
  if (shape_size(new_shape) != a.size()) {
    throw ContractError("reshape: cannot view " + shape_to_string(a.shape()) + " as " +
                        shape_to_string(new_shape));
  }
  Tensor<T> out = Tensor<T>::from_data(std::move(new_shape), std::vector<T>(a.data().begin(), a.data().end()));

  auto* tape = Tape<T>::current();
  if (tape && tape->tracks(a)) {
    auto as = a.storage(), os = out.storage();
    tape->record(os, [as, os] {
      const auto& g = os->grad;
      auto& da = detail::grad_buffer(*as);
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
    });
  }
  return out;
}

// Concatenates tensors of equal rank along `axis` (rank 1 axis 0, or rank 2
// axis 0/1).
template <typename T>
Tensor<T> concat(std::span<const Tensor<T>> parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  const std::size_t rank = parts[0].rank();
  if (rank == 0 || rank > 2 || axis >= rank) {
    throw ContractError("concat: unsupported rank " + std::to_string(rank) + " with axis " + std::to_string(axis));
  }
  for (const auto& p : parts) {
    if (p.rank() != rank) throw ContractError("concat: mixed ranks");
    for (std::size_t d = 0; d < rank; ++d) {
      if (d != axis && p.shape()[d] != parts[0].shape()[d]) {
        throw ContractError("concat: shape mismatch " + shape_to_string(p.shape()) + " vs " +
                            shape_to_string(parts[0].shape()));
      }
    }
  }

  Shape out_shape = parts[0].shape();
  out_shape[axis] = 0;
  for (const auto& p : parts) out_shape[axis] += p.shape()[axis];
  Tensor<T> out = Tensor<T>::zeros(out_shape);
  auto ov = out.data();

  std::vector<std::size_t> offsets(parts.size());
  if (rank == 1 || axis == 0) {
    std::size_t pos = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
      offsets[p] = pos;
      auto pv = parts[p].data();
      std::copy(pv.begin(), pv.end(), ov.begin() + static_cast<std::ptrdiff_t>(pos));
      pos += pv.size();
    }
  } else {  // rank 2, axis 1
    const std::size_t rows = out_shape[0], out_cols = out_shape[1];
    std::size_t col = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
      offsets[p] = col;
      const std::size_t cols = parts[p].shape()[1];
      auto pv = parts[p].data();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) ov[r * out_cols + col + c] = pv[r * cols + c];
      col += cols;
    }
  }

  auto* tape = Tape<T>::current();
  bool any = false;
  if (tape)
    for (const auto& p : parts) any = any || tape->tracks(p);
  if (tape && any) {
    std::vector<std::shared_ptr<TensorStorage<T>>> ps;
    ps.reserve(parts.size());
    for (const auto& p : parts) ps.push_back(p.storage());
    auto os = out.storage();
    tape->record(os, [ps, os, offsets, tape, rank, axis, out_shape] {
      const auto& g = os->grad;
      for (std::size_t p = 0; p < ps.size(); ++p) {
        if (!detail::wants_grad(*ps[p], tape)) continue;
        auto& dp = detail::grad_buffer(*ps[p]);
        if (rank == 1 || axis == 0) {
          for (std::size_t i = 0; i < dp.size(); ++i) dp[i] += g[offsets[p] + i];
        } else {
          const std::size_t rows = out_shape[0], out_cols = out_shape[1];
          const std::size_t cols = ps[p]->shape[1];
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) dp[r * cols + c] += g[r * out_cols + offsets[p] + c];
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat(std::initializer_list<Tensor<T>> parts, std::size_t axis) {
  std::vector<Tensor<T>> v(parts);
  return concat(std::span<const Tensor<T>>(v.data(), v.size()), axis);
}

// Selects rows of a rank-2 tensor; duplicate indices are allowed and their
// gradients accumulate.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& m, std::span<const std::size_t> indices) {
  detail::check_rank(m, 2, "gather_rows");
  const std::size_t rows = m.shape()[0], cols = m.shape()[1];
  for (std::size_t idx : indices) {
    if (idx >= rows) {
      throw ContractError("gather_rows: row " + std::to_string(idx) + " out of range for " +
                          shape_to_string(m.shape()));
    }
  }
  Tensor<T> out = Tensor<T>::zeros({indices.size(), cols});
  auto mv = m.data();
  auto ov = out.data();
  for (std::size_t i = 0; i < indices.size(); ++i)
    for (std::size_t c = 0; c < cols; ++c) ov[i * cols + c] = mv[indices[i] * cols + c];

  auto* tape = Tape<T>::current();
  if (tape && tape->tracks(m)) {
    auto ms = m.storage(), os = out.storage();
    std::vector<std::size_t> idx(indices.begin(), indices.end());
    tape->record(os, [ms, os, idx, cols] {
      const auto& g = os->grad;
      auto& dm = detail::grad_buffer(*ms);
      for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t c = 0; c < cols; ++c) dm[idx[i] * cols + c] += g[i * cols + c];
    });
  }
  return out;
}

// Places the entries of a rank-1 tensor at `indices` within a zero vector of
// length `out_size`. Indices must be unique.
template <typename T>
Tensor<T> scatter(const Tensor<T>& values, std::span<const std::size_t> indices, std::size_t out_size) {
  detail::check_rank(values, 1, "scatter");
  if (values.size() != indices.size()) {
    throw ContractError("scatter: " + std::to_string(values.size()) + " values but " +
                        std::to_string(indices.size()) + " indices");
  }
  std::vector<char> seen(out_size, 0);
  for (std::size_t idx : indices) {
    if (idx >= out_size) throw ContractError("scatter: index " + std::to_string(idx) + " out of range");
    if (seen[idx]) throw ContractError("scatter: duplicate index " + std::to_string(idx));
    seen[idx] = 1;
  }
  Tensor<T> out = Tensor<T>::zeros({out_size});
  auto vv = values.data();
  auto ov = out.data();
  for (std::size_t i = 0; i < indices.size(); ++i) ov[indices[i]] = vv[i];

  auto* tape = Tape<T>::current();
  if (tape && tape->tracks(values)) {
    auto vs = values.storage(), os = out.storage();
    std::vector<std::size_t> idx(indices.begin(), indices.end());
    tape->record(os, [vs, os, idx] {
      const auto& g = os->grad;
      auto& dv = detail::grad_buffer(*vs);
      for (std::size_t i = 0; i < idx.size(); ++i) dv[i] += g[idx[i]];
    });
  }
  return out;
}

template <typename T>
Tensor<T> select_element(const Tensor<T>& a, std::size_t index) {
  detail::check_rank(a, 1, "select_element");
  if (index >= a.size()) {
    throw ContractError("select_element: index " + std::to_string(index) + " out of range for " +
                        shape_to_string(a.shape()));
  }
  Tensor<T> out = Tensor<T>::scalar(a.data()[index]);

  auto* tape = Tape<T>::current();
  if (tape && tape->tracks(a)) {
    auto as = a.storage(), os = out.storage();
    tape->record(os, [as, os, index] {
      auto& da = detail::grad_buffer(*as);
      da[index] += os->grad[0];
    });
  }
  return out;
}

// ---- reductions ----

template <typename T>
Tensor<T> sum_all(const Tensor<T>& a) {
  T acc = T(0);
  for (T v : a.data()) acc += v;
  Tensor<T> out = Tensor<T>::scalar(acc);

  auto* tape = Tape<T>::current();
  if (tape && tape->tracks(a)) {
    auto as = a.storage(), os = out.storage();
    tape->record(os, [as, os] {
      const T g = os->grad[0];
      auto& da = detail::grad_buffer(*as);
      for (T& v : da) v += g;
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& a) {
  if (a.size() == 0) throw ContractError("mean_all: empty tensor");
  return scale(sum_all(a), T(1) / static_cast<T>(a.size()));
}

// Mean over rows of a rank-2 tensor (axis 0), producing a row vector.
template <typename T>
Tensor<T> mean_rows(const Tensor<T>& a) {
  detail::check_rank(a, 2, "mean_rows");
  const std::size_t rows = a.shape()[0], cols = a.shape()[1];
  if (rows == 0) throw ContractError("mean_rows: no rows");
  Tensor<T> out = Tensor<T>::zeros({cols});
  auto av = a.data();
  auto ov = out.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) ov[c] += av[r * cols + c];
  const T inv = T(1) / static_cast<T>(rows);
  for (std::size_t c = 0; c < cols; ++c) ov[c] *= inv;

  auto* tape = Tape<T>::current();
  if (tape && tape->tracks(a)) {
    auto as = a.storage(), os = out.storage();
    tape->record(os, [as, os, rows, cols, inv] {
      const auto& g = os->grad;
      auto& da = detail::grad_buffer(*as);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) da[r * cols + c] += inv * g[c];
    });
  }
  return out;
}

// ---- nonlinearities ----

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  auto av = a.data();
  auto ov = out.data();
  for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] > T(0) ? av[i] : T(0);

  auto* tape = Tape<T>::current();
  if (tape && tape->tracks(a)) {
    auto as = a.storage(), os = out.storage();
    tape->record(os, [as, os] {
      const auto& g = os->grad;
      auto& da = detail::grad_buffer(*as);
      for (std::size_t i = 0; i < g.size(); ++i)
        if (as->data[i] > T(0)) da[i] += g[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> vexp(const Tensor<T>& a) {
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  auto av = a.data();
  auto ov = out.data();
  for (std::size_t i = 0; i < av.size(); ++i) ov[i] = std::exp(av[i]);

  auto* tape = Tape<T>::current();
  if (tape && tape->tracks(a)) {
    auto as = a.storage(), os = out.storage();
    tape->record(os, [as, os] {
      const auto& g = os->grad;
      auto& da = detail::grad_buffer(*as);
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * os->data[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> vlog(const Tensor<T>& a) {
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  auto av = a.data();
  auto ov = out.data();
  for (std::size_t i = 0; i < av.size(); ++i) {
    if (!(av[i] > T(0))) {
      throw DegenerateInputError("vlog: non-positive input " + std::to_string(static_cast<double>(av[i])));
    }
    ov[i] = std::log(av[i]);
  }

  auto* tape = Tape<T>::current();
  if (tape && tape->tracks(a)) {
    auto as = a.storage(), os = out.storage();
    tape->record(os, [as, os] {
      const auto& g = os->grad;
      auto& da = detail::grad_buffer(*as);
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] / as->data[i];
    });
  }
  return out;
}

namespace detail {

template <typename T>
void softmax_row(const T* x, T* y, std::size_t n) {
  T m = x[0];
  for (std::size_t i = 1; i < n; ++i) m = std::max(m, x[i]);
  T z = T(0);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = std::exp(x[i] - m);
    z += y[i];
  }
  for (std::size_t i = 0; i < n; ++i) y[i] /= z;
}

}  // namespace detail

// Softmax over a rank-1 tensor, or row-wise over a rank-2 tensor. Uses
// max-subtraction so finite inputs give finite, positive outputs.
template <typename T>
Tensor<T> softmax(const Tensor<T>& a) {
  if (a.rank() != 1 && a.rank() != 2) {
    throw ContractError("softmax: expected rank 1 or 2, got " + shape_to_string(a.shape()));
  }
  const std::size_t cols = a.rank() == 1 ? a.shape()[0] : a.shape()[1];
  const std::size_t rows = a.size() / cols;
  if (cols == 0) throw ContractError("softmax: empty input");
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  auto av = a.data();
  auto ov = out.data();
  for (std::size_t r = 0; r < rows; ++r) detail::softmax_row(av.data() + r * cols, ov.data() + r * cols, cols);

  auto* tape = Tape<T>::current();
  if (tape && tape->tracks(a)) {
    auto as = a.storage(), os = out.storage();
    tape->record(os, [as, os, rows, cols] {
      const auto& g = os->grad;
      const auto& y = os->data;
      auto& da = detail::grad_buffer(*as);
      for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t base = r * cols;
        T gy = T(0);
        for (std::size_t i = 0; i < cols; ++i) gy += g[base + i] * y[base + i];
        for (std::size_t i = 0; i < cols; ++i) da[base + i] += y[base + i] * (g[base + i] - gy);
      }
    });
  }
  return out;
}

// Numerically stable log(sum(exp(x))) of a rank-1 tensor.
template <typename T>
Tensor<T> log_sum_exp(const Tensor<T>& a) {
  detail::check_rank(a, 1, "log_sum_exp");
  if (a.size() == 0) throw ContractError("log_sum_exp: empty input");
  auto av = a.data();
  T m = av[0];
  for (std::size_t i = 1; i < av.size(); ++i) m = std::max(m, av[i]);
  T z = T(0);
  for (std::size_t i = 0; i < av.size(); ++i) z += std::exp(av[i] - m);
  Tensor<T> out = Tensor<T>::scalar(m + std::log(z));

  auto* tape = Tape<T>::current();
  if (tape && tape->tracks(a)) {
    auto as = a.storage(), os = out.storage();
    tape->record(os, [as, os, m, z] {
      const T g = os->grad[0];
      auto& da = detail::grad_buffer(*as);
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += g * std::exp(as->data[i] - m) / z;
    });
  }
  return out;
}

// L2-normalizes a rank-1 tensor, or each row of a rank-2 tensor. A zero row
// either throws or, when `zero_row` is provided, maps to zero and sets the
// flag (its subgradient is taken as zero).
template <typename T>
Tensor<T> l2_normalize(const Tensor<T>& a, bool* zero_row = nullptr) {
  if (a.rank() != 1 && a.rank() != 2) {
    throw ContractError("l2_normalize: expected rank 1 or 2, got " + shape_to_string(a.shape()));
  }
  const std::size_t cols = a.rank() == 1 ? a.shape()[0] : a.shape()[1];
  const std::size_t rows = a.size() / cols;
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  auto av = a.data();
  auto ov = out.data();
  std::vector<T> norms(rows, T(0));
  for (std::size_t r = 0; r < rows; ++r) {
    T sq = T(0);
    for (std::size_t c = 0; c < cols; ++c) sq += av[r * cols + c] * av[r * cols + c];
    const T n = std::sqrt(sq);
    norms[r] = n;
    if (n == T(0)) {
      if (!zero_row) throw DegenerateInputError("l2_normalize: zero vector");
      *zero_row = true;
      continue;  // output row stays zero
    }
    for (std::size_t c = 0; c < cols; ++c) ov[r * cols + c] = av[r * cols + c] / n;
  }

  auto* tape = Tape<T>::current();
  if (tape && tape->tracks(a)) {
    auto as = a.storage(), os = out.storage();
    tape->record(os, [as, os, norms, rows, cols] {
      const auto& g = os->grad;
      const auto& y = os->data;
      auto& da = detail::grad_buffer(*as);
      for (std::size_t r = 0; r < rows; ++r) {
        if (norms[r] == T(0)) continue;
        const std::size_t base = r * cols;
        T gy = T(0);
        for (std::size_t c = 0; c < cols; ++c) gy += g[base + c] * y[base + c];
        for (std::size_t c = 0; c < cols; ++c) da[base + c] += (g[base + c] - gy * y[base + c]) / norms[r];
      }
    });
  }
  return out;
}

// ---- distances and similarities ----

template <typename T>
Tensor<T> squared_euclidean(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_rank(a, 1, "squared_euclidean");
  detail::check_same_shape(a, b, "squared_euclidean");
  auto av = a.data();
  auto bv = b.data();
  T acc = T(0);
  for (std::size_t i = 0; i < av.size(); ++i) {
    const T d = av[i] - bv[i];
    acc += d * d;
  }
  Tensor<T> out = Tensor<T>::scalar(acc);

  auto* tape = Tape<T>::current();
  if (tape && (tape->tracks(a) || tape->tracks(b))) {
    auto as = a.storage(), bs = b.storage(), os = out.storage();
    tape->record(os, [as, bs, os, tape] {
      const T g = os->grad[0];
      if (detail::wants_grad(*as, tape)) {
        auto& da = detail::grad_buffer(*as);
        for (std::size_t i = 0; i < da.size(); ++i) da[i] += T(2) * g * (as->data[i] - bs->data[i]);
      }
      if (detail::wants_grad(*bs, tape)) {
        auto& db = detail::grad_buffer(*bs);
        for (std::size_t i = 0; i < db.size(); ++i) db[i] -= T(2) * g * (as->data[i] - bs->data[i]);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> cosine_similarity(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_rank(a, 1, "cosine_similarity");
  detail::check_same_shape(a, b, "cosine_similarity");
  auto av = a.data();
  auto bv = b.data();
  T ab = T(0), aa = T(0), bb = T(0);
  for (std::size_t i = 0; i < av.size(); ++i) {
    ab += av[i] * bv[i];
    aa += av[i] * av[i];
    bb += bv[i] * bv[i];
  }
  const T na = std::sqrt(aa), nb = std::sqrt(bb);
  if (na == T(0) || nb == T(0)) throw DegenerateInputError("cosine_similarity: zero vector");
  const T s = ab / (na * nb);
  Tensor<T> out = Tensor<T>::scalar(s);

  auto* tape = Tape<T>::current();
  if (tape && (tape->tracks(a) || tape->tracks(b))) {
    auto as = a.storage(), bs = b.storage(), os = out.storage();
    tape->record(os, [as, bs, os, tape, na, nb, s] {
      const T g = os->grad[0];
      if (detail::wants_grad(*as, tape)) {
        auto& da = detail::grad_buffer(*as);
        for (std::size_t i = 0; i < da.size(); ++i)
          da[i] += g * (bs->data[i] / (na * nb) - s * as->data[i] / (na * na));
      }
      if (detail::wants_grad(*bs, tape)) {
        auto& db = detail::grad_buffer(*bs);
        for (std::size_t i = 0; i < db.size(); ++i)
          db[i] += g * (as->data[i] / (na * nb) - s * bs->data[i] / (nb * nb));
      }
    });
  }
  return out;
}

// ---- layer normalization ----

// Row-wise layer normalization with learnable gain and bias:
// y = gain * (x - mean) / sqrt(var + eps) + bias, variance is the population
// variance over the row.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& a, const Tensor<T>& gain, const Tensor<T>& bias, T eps = T(1e-5)) {
  if (a.rank() != 1 && a.rank() != 2) {
    throw ContractError("layer_norm: expected rank 1 or 2, got " + shape_to_string(a.shape()));
  }
  const std::size_t cols = a.rank() == 1 ? a.shape()[0] : a.shape()[1];
  const std::size_t rows = a.size() / cols;
  detail::check_rank(gain, 1, "layer_norm");
  detail::check_rank(bias, 1, "layer_norm");
  if (gain.size() != cols || bias.size() != cols) {
    throw ContractError("layer_norm: gain/bias size must match row width " + std::to_string(cols));
  }

  Tensor<T> out = Tensor<T>::zeros(a.shape());
  auto av = a.data();
  auto gv = gain.data();
  auto bv = bias.data();
  auto ov = out.data();
  std::vector<T> inv_sigma(rows), xhat(a.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t base = r * cols;
    T mu = T(0);
    for (std::size_t c = 0; c < cols; ++c) mu += av[base + c];
    mu /= static_cast<T>(cols);
    T var = T(0);
    for (std::size_t c = 0; c < cols; ++c) {
      const T d = av[base + c] - mu;
      var += d * d;
    }
    var /= static_cast<T>(cols);
    const T is = T(1) / std::sqrt(var + eps);
    inv_sigma[r] = is;
    for (std::size_t c = 0; c < cols; ++c) {
      xhat[base + c] = (av[base + c] - mu) * is;
      ov[base + c] = gv[c] * xhat[base + c] + bv[c];
    }
  }

  auto* tape = Tape<T>::current();
  if (tape && (tape->tracks(a) || tape->tracks(gain) || tape->tracks(bias))) {
    auto as = a.storage(), gs = gain.storage(), bs = bias.storage(), os = out.storage();
    tape->record(os, [as, gs, bs, os, tape, inv_sigma, xhat, rows, cols] {
      const auto& g = os->grad;
      if (detail::wants_grad(*gs, tape)) {
        auto& dg = detail::grad_buffer(*gs);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < cols; ++c) dg[c] += g[r * cols + c] * xhat[r * cols + c];
      }
      if (detail::wants_grad(*bs, tape)) {
        auto& db = detail::grad_buffer(*bs);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < cols; ++c) db[c] += g[r * cols + c];
      }
      if (detail::wants_grad(*as, tape)) {
        auto& da = detail::grad_buffer(*as);
        for (std::size_t r = 0; r < rows; ++r) {
          const std::size_t base = r * cols;
          T mean_dx = T(0), mean_dx_xhat = T(0);
          for (std::size_t c = 0; c < cols; ++c) {
            const T dxhat = g[base + c] * gs->data[c];
            mean_dx += dxhat;
            mean_dx_xhat += dxhat * xhat[base + c];
          }
          mean_dx /= static_cast<T>(cols);
          mean_dx_xhat /= static_cast<T>(cols);
          for (std::size_t c = 0; c < cols; ++c) {
            const T dxhat = g[base + c] * gs->data[c];
            da[base + c] += inv_sigma[r] * (dxhat - mean_dx - xhat[base + c] * mean_dx_xhat);
          }
        }
      }
    });
  }
  return out;
}

}  // namespace ucdr
