#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <vector>

#include "ucnerf/kernels/dispatch.hpp"

namespace ucnerf {

// Define-by-run reverse-mode tape over 2D row-major tensors. Values are
// computed eagerly as nodes are added; backward_multi seeds any set of nodes
// and sweeps the tape once. Leaves created with requires_grad=true (params,
// or inputs under test) receive gradients; everything downstream of them does
// too. stopgrad() cuts the flow.
template <typename T>
class Graph {
 public:
  using Id = int32_t;

  enum class Op {
    leaf,
    add,
    sub,
    mul,
    affine,       // s*x + c
    linear,       // x[m,k] @ w[k,n] + b
    relu,
    softplus,
    sigmoid,
    expe,
    sinv,
    cosv,
    recip,
    square,
    absval,
    softmax_rows,
    sum_all,
    mean_all,
    sum_cols,
    group_mean,   // rows grouped in blocks of K
    expand_rows,  // repeat each row K times
    mul_colvec,   // x[m,n] * s[m,1]
    concat_cols,
    slice_cols,
    gather_rows,
    gather_bilinear,
    gather_trilinear,
    variance_views,
    variance_views_masked,
    transmittance,
    composite,
    avgpool2,
    upsample2,
    weighted_sum,
    stopgrad,
  };

  struct Node {
    Op op;
    int64_t rows = 0, cols = 0;
    std::vector<Id> in;
    std::vector<T> val;
    std::vector<T> grad;
    std::vector<T> aux;
    std::vector<int64_t> iattr;
    std::vector<T> fattr;
    std::shared_ptr<const std::vector<int32_t>> idx;
    std::shared_ptr<const std::vector<T>> coords;
    std::vector<std::shared_ptr<const std::vector<T>>> masks;
    bool requires_grad = false;
  };

  int64_t size() const { return static_cast<int64_t>(nodes_.size()); }
  int64_t rows(Id i) const { return at(i).rows; }
  int64_t cols(Id i) const { return at(i).cols; }
  const std::vector<T>& val(Id i) const { return at(i).val; }
  const std::vector<T>& grad(Id i) const { return at(i).grad; }
  T scalar(Id i) const {
    check(at(i).val.size() == 1, "scalar: node not 1x1");
    return at(i).val[0];
  }

  // ---- leaves ----

  Id value(int64_t r, int64_t c, std::vector<T> data,
           bool requires_grad = false) {
    check(static_cast<int64_t>(data.size()) == r * c, "value: size mismatch");
    Node n;
    n.op = Op::leaf;
    n.rows = r;
    n.cols = c;
    n.val = std::move(data);
    n.requires_grad = requires_grad;
    return push(std::move(n));
  }
  Id constant_scalar(T v) { return value(1, 1, {v}); }
  Id zeros(int64_t r, int64_t c, bool requires_grad = false) {
    return value(r, c, std::vector<T>(r * c, T(0)), requires_grad);
  }

  // ---- elementwise ----

  Id add(Id a, Id b) { return binary(Op::add, a, b); }
  Id sub(Id a, Id b) { return binary(Op::sub, a, b); }
  Id mul(Id a, Id b) { return binary(Op::mul, a, b); }

  Id affine(Id x, T s, T c) {
    Node n = unary_node(Op::affine, x);
    n.fattr = {s, c};
    const auto& xv = at(x).val;
    for (size_t i = 0; i < xv.size(); ++i) n.val[i] = s * xv[i] + c;
    return push(std::move(n));
  }

  Id relu(Id x) {
    Node n = unary_node(Op::relu, x);
    kernels<T>().relu(at(x).val.data(), n.val.data(), n.val.size());
    return push(std::move(n));
  }

  Id softplus(Id x) {
    Node n = unary_node(Op::softplus, x);
    const auto& xv = at(x).val;
    for (size_t i = 0; i < xv.size(); ++i) {
      const T v = xv[i];
      n.val[i] = v > T(0) ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
    }
    return push(std::move(n));
  }

  Id sigmoid(Id x) {
    Node n = unary_node(Op::sigmoid, x);
    const auto& xv = at(x).val;
    for (size_t i = 0; i < xv.size(); ++i) {
      const T v = xv[i];
      n.val[i] = v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                           : std::exp(v) / (T(1) + std::exp(v));
    }
    return push(std::move(n));
  }

  Id expe(Id x) {
    Node n = unary_node(Op::expe, x);
    const auto& xv = at(x).val;
    for (size_t i = 0; i < xv.size(); ++i) n.val[i] = std::exp(xv[i]);
    return push(std::move(n));
  }

  Id square(Id x) {
    Node n = unary_node(Op::square, x);
    kernels<T>().vmul(at(x).val.data(), at(x).val.data(), n.val.data(),
                      n.val.size());
    return push(std::move(n));
  }

  Id absval(Id x) {
    Node n = unary_node(Op::absval, x);
    const auto& xv = at(x).val;
    for (size_t i = 0; i < xv.size(); ++i) n.val[i] = std::abs(xv[i]);
    return push(std::move(n));
  }

  Id sinv(Id x) {
    Node n = unary_node(Op::sinv, x);
    const auto& xv = at(x).val;
    for (size_t i = 0; i < xv.size(); ++i) n.val[i] = std::sin(xv[i]);
    return push(std::move(n));
  }

  Id cosv(Id x) {
    Node n = unary_node(Op::cosv, x);
    const auto& xv = at(x).val;
    for (size_t i = 0; i < xv.size(); ++i) n.val[i] = std::cos(xv[i]);
    return push(std::move(n));
  }

  Id recip(Id x) {
    Node n = unary_node(Op::recip, x);
    const auto& xv = at(x).val;
    for (size_t i = 0; i < xv.size(); ++i) n.val[i] = T(1) / xv[i];
    return push(std::move(n));
  }

  // ---- linear algebra ----

  Id linear(Id x, Id w, Id b = -1) {
    const Node& xn = at(x);
    const Node& wn = at(w);
    check(xn.cols == wn.rows, "linear: inner dim mismatch");
    const T* bias = nullptr;
    if (b >= 0) {
      const Node& bn = at(b);
      check(bn.rows == 1 && bn.cols == wn.cols, "linear: bias shape");
      bias = bn.val.data();
    }
    Node n;
    n.op = Op::linear;
    n.rows = xn.rows;
    n.cols = wn.cols;
    n.in = b >= 0 ? std::vector<Id>{x, w, b} : std::vector<Id>{x, w};
    n.val.resize(n.rows * n.cols);
    n.requires_grad = any_requires(n.in);
    kernels<T>().gemm(xn.val.data(), wn.val.data(), bias, n.val.data(),
                      static_cast<int>(xn.rows), static_cast<int>(xn.cols),
                      static_cast<int>(wn.cols), false);
    return push(std::move(n));
  }

  Id softmax_rows(Id x) {
    Node n = unary_node(Op::softmax_rows, x);
    const auto& xv = at(x).val;
    const int64_t m = n.rows, c = n.cols;
    for (int64_t i = 0; i < m; ++i) {
      const T* xr = xv.data() + i * c;
      T* yr = n.val.data() + i * c;
      T mx = xr[0];
      for (int64_t j = 1; j < c; ++j) mx = std::max(mx, xr[j]);
      T s = 0;
      for (int64_t j = 0; j < c; ++j) {
        yr[j] = std::exp(xr[j] - mx);
        s += yr[j];
      }
      const T inv = T(1) / s;
      for (int64_t j = 0; j < c; ++j) yr[j] *= inv;
    }
    return push(std::move(n));
  }

  // ---- reductions / reshaping ----

  Id sum_all(Id x) {
    Node n;
    n.op = Op::sum_all;
    n.rows = n.cols = 1;
    n.in = {x};
    n.requires_grad = at(x).requires_grad;
    T s = 0;
    for (T v : at(x).val) s += v;
    n.val = {s};
    return push(std::move(n));
  }

  Id mean_all(Id x) {
    Node n;
    n.op = Op::mean_all;
    n.rows = n.cols = 1;
    n.in = {x};
    n.requires_grad = at(x).requires_grad;
    T s = 0;
    for (T v : at(x).val) s += v;
    n.val = {s / static_cast<T>(at(x).val.size())};
    return push(std::move(n));
  }

  Id sum_cols(Id x) {
    const Node& xn = at(x);
    Node n;
    n.op = Op::sum_cols;
    n.rows = xn.rows;
    n.cols = 1;
    n.in = {x};
    n.requires_grad = xn.requires_grad;
    n.val.resize(xn.rows);
    for (int64_t i = 0; i < xn.rows; ++i) {
      T s = 0;
      const T* xr = xn.val.data() + i * xn.cols;
      for (int64_t j = 0; j < xn.cols; ++j) s += xr[j];
      n.val[i] = s;
    }
    return push(std::move(n));
  }

  // Mean over consecutive row blocks of size K.
  Id group_mean(Id x, int64_t K) {
    const Node& xn = at(x);
    check(K > 0 && xn.rows % K == 0, "group_mean: rows % K != 0");
    Node n;
    n.op = Op::group_mean;
    n.rows = xn.rows / K;
    n.cols = xn.cols;
    n.in = {x};
    n.iattr = {K};
    n.requires_grad = xn.requires_grad;
    n.val.assign(n.rows * n.cols, T(0));
    for (int64_t g = 0; g < n.rows; ++g) {
      T* yr = n.val.data() + g * n.cols;
      for (int64_t r = 0; r < K; ++r) {
        const T* xr = xn.val.data() + (g * K + r) * xn.cols;
        for (int64_t j = 0; j < n.cols; ++j) yr[j] += xr[j];
      }
      for (int64_t j = 0; j < n.cols; ++j) yr[j] /= static_cast<T>(K);
    }
    return push(std::move(n));
  }

  Id expand_rows(Id x, int64_t K) {
    const Node& xn = at(x);
    check(K > 0, "expand_rows: K <= 0");
    Node n;
    n.op = Op::expand_rows;
    n.rows = xn.rows * K;
    n.cols = xn.cols;
    n.in = {x};
    n.iattr = {K};
    n.requires_grad = xn.requires_grad;
    n.val.resize(n.rows * n.cols);
    for (int64_t g = 0; g < xn.rows; ++g)
      for (int64_t r = 0; r < K; ++r)
        std::copy_n(xn.val.data() + g * xn.cols, xn.cols,
                    n.val.data() + (g * K + r) * n.cols);
    return push(std::move(n));
  }

  Id mul_colvec(Id x, Id s) {
    const Node& xn = at(x);
    const Node& sn = at(s);
    check(sn.rows == xn.rows && sn.cols == 1, "mul_colvec: scale shape");
    Node n;
    n.op = Op::mul_colvec;
    n.rows = xn.rows;
    n.cols = xn.cols;
    n.in = {x, s};
    n.requires_grad = xn.requires_grad || sn.requires_grad;
    n.val.resize(n.rows * n.cols);
    for (int64_t i = 0; i < n.rows; ++i) {
      const T sv = sn.val[i];
      const T* xr = xn.val.data() + i * n.cols;
      T* yr = n.val.data() + i * n.cols;
      for (int64_t j = 0; j < n.cols; ++j) yr[j] = xr[j] * sv;
    }
    return push(std::move(n));
  }

  Id concat_cols(const std::vector<Id>& ids) {
    check(!ids.empty(), "concat_cols: empty");
    int64_t m = at(ids[0]).rows, c = 0;
    for (Id id : ids) {
      check(at(id).rows == m, "concat_cols: row mismatch");
      c += at(id).cols;
    }
    Node n;
    n.op = Op::concat_cols;
    n.rows = m;
    n.cols = c;
    n.in = ids;
    n.requires_grad = any_requires(ids);
    n.val.resize(m * c);
    for (int64_t i = 0; i < m; ++i) {
      T* yr = n.val.data() + i * c;
      for (Id id : ids) {
        const Node& xn = at(id);
        std::copy_n(xn.val.data() + i * xn.cols, xn.cols, yr);
        yr += xn.cols;
      }
    }
    return push(std::move(n));
  }

  Id slice_cols(Id x, int64_t c0, int64_t c1) {
    const Node& xn = at(x);
    check(0 <= c0 && c0 < c1 && c1 <= xn.cols, "slice_cols: range");
    Node n;
    n.op = Op::slice_cols;
    n.rows = xn.rows;
    n.cols = c1 - c0;
    n.in = {x};
    n.iattr = {c0};
    n.requires_grad = xn.requires_grad;
    n.val.resize(n.rows * n.cols);
    for (int64_t i = 0; i < n.rows; ++i)
      std::copy_n(xn.val.data() + i * xn.cols + c0, n.cols,
                  n.val.data() + i * n.cols);
    return push(std::move(n));
  }

  // ---- gathers ----

  // out[p] = x[idx[p]] with idx == -1 meaning a zero row; consecutive groups
  // of `group` gathered rows are laid out as one output row (same flat
  // layout), which turns this into im2col when idx enumerates neighborhoods.
  Id gather_rows(Id x, std::shared_ptr<const std::vector<int32_t>> idx,
                 int64_t group = 1) {
    const Node& xn = at(x);
    const int64_t k = static_cast<int64_t>(idx->size());
    check(group > 0 && k % group == 0, "gather_rows: group");
    Node n;
    n.op = Op::gather_rows;
    n.rows = k / group;
    n.cols = xn.cols * group;
    n.in = {x};
    n.idx = std::move(idx);
    n.requires_grad = xn.requires_grad;
    n.val.resize(k * xn.cols);
    const auto& im = *n.idx;
    for (int64_t p = 0; p < k; ++p) {
      T* yr = n.val.data() + p * xn.cols;
      const int32_t src = im[p];
      if (src < 0) {
        std::fill_n(yr, xn.cols, T(0));
      } else {
        check(src < xn.rows, "gather_rows: index out of range");
        std::copy_n(xn.val.data() + static_cast<int64_t>(src) * xn.cols,
                    xn.cols, yr);
      }
    }
    return push(std::move(n));
  }

  // uv holds (u, v) pixel positions; border-clamped bilinear sample of a
  // [H*W, C] grid.
  Id gather_bilinear(Id x, int64_t H, int64_t W,
                     std::shared_ptr<const std::vector<T>> uv) {
    const Node& xn = at(x);
    check(xn.rows == H * W, "gather_bilinear: grid shape");
    const int64_t k = static_cast<int64_t>(uv->size()) / 2;
    Node n;
    n.op = Op::gather_bilinear;
    n.rows = k;
    n.cols = xn.cols;
    n.in = {x};
    n.iattr = {H, W};
    n.coords = std::move(uv);
    n.requires_grad = xn.requires_grad;
    n.val.assign(k * xn.cols, T(0));
    const int64_t C = xn.cols;
    for (int64_t p = 0; p < k; ++p) {
      int64_t corner[4];
      T wgt[4];
      bilinear_setup((*n.coords)[2 * p], (*n.coords)[2 * p + 1], H, W, corner,
                     wgt);
      T* yr = n.val.data() + p * C;
      for (int q = 0; q < 4; ++q)
        kernels<T>().axpy(wgt[q], xn.val.data() + corner[q] * C, yr, C);
    }
    return push(std::move(n));
  }

  // xyz holds (pd, pv, pu) fractional indices into a [D*H*W, C] volume
  // (plane, row, column); border-clamped trilinear sample.
  Id gather_trilinear(Id x, int64_t D, int64_t H, int64_t W,
                      std::shared_ptr<const std::vector<T>> xyz) {
    const Node& xn = at(x);
    check(xn.rows == D * H * W, "gather_trilinear: volume shape");
    const int64_t k = static_cast<int64_t>(xyz->size()) / 3;
    Node n;
    n.op = Op::gather_trilinear;
    n.rows = k;
    n.cols = xn.cols;
    n.in = {x};
    n.iattr = {D, H, W};
    n.coords = std::move(xyz);
    n.requires_grad = xn.requires_grad;
    n.val.assign(k * xn.cols, T(0));
    const int64_t C = xn.cols;
    for (int64_t p = 0; p < k; ++p) {
      int64_t corner[8];
      T wgt[8];
      trilinear_setup((*n.coords)[3 * p], (*n.coords)[3 * p + 1],
                      (*n.coords)[3 * p + 2], D, H, W, corner, wgt);
      T* yr = n.val.data() + p * C;
      for (int q = 0; q < 8; ++q)
        kernels<T>().axpy(wgt[q], xn.val.data() + corner[q] * C, yr, C);
    }
    return push(std::move(n));
  }

  // ---- multi-view / rendering ----

  // Elementwise variance across same-shaped inputs: E[x^2] - E[x]^2.
  Id variance_views(const std::vector<Id>& ids) {
    check(ids.size() >= 2, "variance_views: need >= 2 views");
    const Node& x0 = at(ids[0]);
    for (Id id : ids)
      check(at(id).rows == x0.rows && at(id).cols == x0.cols,
            "variance_views: shape mismatch");
    Node n;
    n.op = Op::variance_views;
    n.rows = x0.rows;
    n.cols = x0.cols;
    n.in = ids;
    n.requires_grad = any_requires(ids);
    const size_t sz = x0.val.size();
    const T invV = T(1) / static_cast<T>(ids.size());
    n.aux.assign(sz, T(0));  // mean, reused in backward
    n.val.assign(sz, T(0));
    for (Id id : ids) {
      const auto& xv = at(id).val;
      for (size_t i = 0; i < sz; ++i) {
        n.aux[i] += xv[i];
        n.val[i] += xv[i] * xv[i];
      }
    }
    for (size_t i = 0; i < sz; ++i) {
      n.aux[i] *= invV;
      n.val[i] = n.val[i] * invV - n.aux[i] * n.aux[i];
    }
    return push(std::move(n));
  }

  // Per-row masked variance across views. masks[v] has one 0/1 entry per row,
  // broadcast over columns; rows with fewer than 2 valid views get `fill`.
  Id variance_views_masked(const std::vector<Id>& ids,
                           std::vector<std::shared_ptr<const std::vector<T>>> masks,
                           T fill) {
    check(ids.size() >= 2, "variance_views_masked: need >= 2 views");
    check(masks.size() == ids.size(), "variance_views_masked: mask arity");
    const Node& x0 = at(ids[0]);
    for (size_t v = 0; v < ids.size(); ++v) {
      check(at(ids[v]).rows == x0.rows && at(ids[v]).cols == x0.cols,
            "variance_views_masked: shape mismatch");
      check(static_cast<int64_t>(masks[v]->size()) == x0.rows,
            "variance_views_masked: mask size");
    }
    Node n;
    n.op = Op::variance_views_masked;
    n.rows = x0.rows;
    n.cols = x0.cols;
    n.in = ids;
    n.masks = std::move(masks);
    n.fattr = {fill};
    n.requires_grad = any_requires(ids);
    const int64_t C = x0.cols;
    n.aux.assign(n.rows * (C + 1), T(0));  // per-row: C means then count
    n.val.assign(n.rows * C, T(0));
    for (int64_t r = 0; r < n.rows; ++r) {
      T* mean = n.aux.data() + r * (C + 1);
      T cnt = 0;
      T* out = n.val.data() + r * C;
      for (size_t v = 0; v < n.in.size(); ++v) {
        if ((*n.masks[v])[r] == T(0)) continue;
        cnt += T(1);
        const T* xr = at(n.in[v]).val.data() + r * C;
        for (int64_t c = 0; c < C; ++c) {
          mean[c] += xr[c];
          out[c] += xr[c] * xr[c];
        }
      }
      mean[C] = cnt;
      if (cnt < T(2)) {
        for (int64_t c = 0; c < C; ++c) out[c] = fill;
        for (int64_t c = 0; c < C; ++c) mean[c] = T(0);
      } else {
        const T inv = T(1) / cnt;
        for (int64_t c = 0; c < C; ++c) {
          mean[c] *= inv;
          out[c] = out[c] * inv - mean[c] * mean[c];
        }
      }
    }
    return push(std::move(n));
  }

  // Per-sample transmittance T_i = exp(-sum_{j<i} sigma_j*delta_j) within each
  // ray. sigma [R*S,1]; td as in composite. Output [R*S,1].
  Id transmittance(Id sigma, std::shared_ptr<const std::vector<T>> td,
                   int64_t R, int64_t S) {
    const Node& sn = at(sigma);
    check(sn.rows == R * S && sn.cols == 1, "transmittance: sigma shape");
    check(static_cast<int64_t>(td->size()) == 2 * R * S,
          "transmittance: td size");
    for (int64_t i = 0; i < R * S; ++i)
      check(sn.val[i] >= T(0), "transmittance: negative density");
    Node n;
    n.op = Op::transmittance;
    n.rows = R * S;
    n.cols = 1;
    n.in = {sigma};
    n.iattr = {R, S};
    n.coords = std::move(td);
    n.requires_grad = sn.requires_grad;
    n.val.resize(R * S);
    const auto& tdv = *n.coords;
    for (int64_t r = 0; r < R; ++r) {
      T trans = T(1);
      for (int64_t s = 0; s < S; ++s) {
        const int64_t i = r * S + s;
        n.val[i] = trans;
        trans *= std::exp(-sn.val[i] * tdv[2 * i + 1]);
      }
    }
    return push(std::move(n));
  }

  // Volume rendering of R rays with S samples each. sigma [R*S,1] >= 0,
  // color [R*S,3]; td holds per-sample (t, delta) pairs, length 2*R*S.
  // Output [R,5]: color xyz, expected depth, tail transmittance T_{S+1}.
  Id composite(Id sigma, Id color, std::shared_ptr<const std::vector<T>> td,
               int64_t R, int64_t S) {
    const Node& sn = at(sigma);
    const Node& cn = at(color);
    check(sn.rows == R * S && sn.cols == 1, "composite: sigma shape");
    check(cn.rows == R * S && cn.cols == 3, "composite: color shape");
    check(static_cast<int64_t>(td->size()) == 2 * R * S, "composite: td size");
    Node n;
    n.op = Op::composite;
    n.rows = R;
    n.cols = 5;
    n.in = {sigma, color};
    n.iattr = {R, S};
    n.coords = std::move(td);
    n.requires_grad = sn.requires_grad || cn.requires_grad;
    n.val.assign(R * 5, T(0));
    n.aux.resize(R * S * 2);  // per-sample w and Tr
    const auto& tdv = *n.coords;
    for (int64_t r = 0; r < R; ++r) {
      T trans = T(1);
      T* out = n.val.data() + r * 5;
      for (int64_t s = 0; s < S; ++s) {
        const int64_t i = r * S + s;
        const T t = tdv[2 * i], delta = tdv[2 * i + 1];
        const T a = -std::expm1(-sn.val[i] * delta);  // 1 - exp(-sigma*delta)
        const T w = trans * a;
        n.aux[2 * i] = w;
        n.aux[2 * i + 1] = trans;
        const T* c = cn.val.data() + i * 3;
        out[0] += w * c[0];
        out[1] += w * c[1];
        out[2] += w * c[2];
        out[3] += w * t;
        trans *= T(1) - a;
      }
      out[4] = trans;
    }
    return push(std::move(n));
  }

  Id stopgrad(Id x) {
    Node n;
    n.op = Op::stopgrad;
    n.rows = at(x).rows;
    n.cols = at(x).cols;
    n.in = {x};
    n.val = at(x).val;
    n.requires_grad = false;
    return push(std::move(n));
  }

  Id avgpool2(Id x, int64_t H, int64_t W) {
    const Node& xn = at(x);
    check(xn.rows == H * W && H % 2 == 0 && W % 2 == 0, "avgpool2: shape");
    Node n;
    n.op = Op::avgpool2;
    n.rows = (H / 2) * (W / 2);
    n.cols = xn.cols;
    n.in = {x};
    n.iattr = {H, W};
    n.requires_grad = xn.requires_grad;
    n.val.assign(n.rows * n.cols, T(0));
    const int64_t C = xn.cols, Wo = W / 2;
    for (int64_t y = 0; y < H; ++y)
      for (int64_t x2 = 0; x2 < W; ++x2) {
        const T* src = xn.val.data() + (y * W + x2) * C;
        T* dst = n.val.data() + ((y / 2) * Wo + x2 / 2) * C;
        for (int64_t c = 0; c < C; ++c) dst[c] += src[c] * T(0.25);
      }
    return push(std::move(n));
  }

  Id upsample2(Id x, int64_t H, int64_t W) {
    const Node& xn = at(x);
    check(xn.rows == H * W, "upsample2: shape");
    Node n;
    n.op = Op::upsample2;
    n.rows = 4 * H * W;
    n.cols = xn.cols;
    n.in = {x};
    n.iattr = {H, W};
    n.requires_grad = xn.requires_grad;
    n.val.resize(n.rows * n.cols);
    const int64_t C = xn.cols, Wo = 2 * W;
    for (int64_t y = 0; y < 2 * H; ++y)
      for (int64_t x2 = 0; x2 < Wo; ++x2)
        std::copy_n(xn.val.data() + ((y / 2) * W + x2 / 2) * C, C,
                    n.val.data() + (y * Wo + x2) * C);
    return push(std::move(n));
  }

  // sum_i coeff_i * x_i over same-shaped inputs.
  Id weighted_sum(const std::vector<Id>& ids, const std::vector<T>& coeffs) {
    check(!ids.empty() && ids.size() == coeffs.size(), "weighted_sum: arity");
    const Node& x0 = at(ids[0]);
    Node n;
    n.op = Op::weighted_sum;
    n.rows = x0.rows;
    n.cols = x0.cols;
    n.in = ids;
    n.fattr = coeffs;
    n.requires_grad = any_requires(ids);
    n.val.assign(x0.val.size(), T(0));
    for (size_t v = 0; v < ids.size(); ++v) {
      const Node& xn = at(ids[v]);
      check(xn.rows == n.rows && xn.cols == n.cols, "weighted_sum: shape");
      kernels<T>().axpy(coeffs[v], xn.val.data(), n.val.data(), n.val.size());
    }
    return push(std::move(n));
  }

  // ---- backward ----

  struct Seed {
    Id id;
    std::vector<T> g;
  };

  void backward(Id loss) {
    check(at(loss).val.size() == 1, "backward: loss not scalar");
    backward_multi({Seed{loss, {T(1)}}});
  }

  void backward_multi(const std::vector<Seed>& seeds) {
    for (const Seed& s : seeds) {
      Node& n = nodes_[s.id];
      if (!n.requires_grad && n.op == Op::leaf) continue;
      check(s.g.size() == n.val.size(), "backward_multi: seed size");
      ensure_grad(s.id);
      for (size_t i = 0; i < s.g.size(); ++i) n.grad[i] += s.g[i];
    }
    for (Id i = static_cast<Id>(nodes_.size()) - 1; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.grad.empty() || n.op == Op::leaf) continue;
      op_backward(i);
    }
  }

 private:
  std::vector<Node> nodes_;

  static void check(bool ok, const char* msg) {
    if (!ok) throw std::invalid_argument(msg);
  }

  const Node& at(Id i) const {
    check(i >= 0 && i < static_cast<Id>(nodes_.size()), "bad node id");
    return nodes_[i];
  }

  Id push(Node&& n) {
    nodes_.push_back(std::move(n));
    return static_cast<Id>(nodes_.size()) - 1;
  }

  bool any_requires(const std::vector<Id>& ids) const {
    for (Id id : ids)
      if (at(id).requires_grad) return true;
    return false;
  }

  Node unary_node(Op op, Id x) {
    Node n;
    n.op = op;
    n.rows = at(x).rows;
    n.cols = at(x).cols;
    n.in = {x};
    n.requires_grad = at(x).requires_grad;
    n.val.resize(at(x).val.size());
    return n;
  }

  Id binary(Op op, Id a, Id b) {
    const Node& an = at(a);
    const Node& bn = at(b);
    check(an.rows == bn.rows && an.cols == bn.cols, "binary: shape mismatch");
    Node n;
    n.op = op;
    n.rows = an.rows;
    n.cols = an.cols;
    n.in = {a, b};
    n.requires_grad = an.requires_grad || bn.requires_grad;
    n.val.resize(an.val.size());
    const size_t sz = n.val.size();
    switch (op) {
      case Op::add:
        for (size_t i = 0; i < sz; ++i) n.val[i] = an.val[i] + bn.val[i];
        break;
      case Op::sub:
        for (size_t i = 0; i < sz; ++i) n.val[i] = an.val[i] - bn.val[i];
        break;
      case Op::mul:
        kernels<T>().vmul(an.val.data(), bn.val.data(), n.val.data(), sz);
        break;
      default:
        check(false, "binary: bad op");
    }
    return push(std::move(n));
  }

  void ensure_grad(Id i) {
    Node& n = nodes_[i];
    if (n.grad.empty()) n.grad.assign(n.val.size(), T(0));
  }

  // Returns grad buffer of input `slot` of node i, or nullptr when that
  // input does not require grad.
  T* in_grad(Id i, size_t slot) {
    const Id src = nodes_[i].in[slot];
    if (!nodes_[src].requires_grad) return nullptr;
    ensure_grad(src);
    return nodes_[src].grad.data();
  }

  static void bilinear_setup(T u, T v, int64_t H, int64_t W, int64_t* corner,
                             T* wgt) {
    const T uc = std::min(std::max(u, T(0)), static_cast<T>(W - 1));
    const T vc = std::min(std::max(v, T(0)), static_cast<T>(H - 1));
    const int64_t x0 = std::min(static_cast<int64_t>(uc), W - 2 >= 0 ? W - 2 : 0);
    const int64_t y0 = std::min(static_cast<int64_t>(vc), H - 2 >= 0 ? H - 2 : 0);
    const T fu = uc - static_cast<T>(x0);
    const T fv = vc - static_cast<T>(y0);
    const int64_t x1 = std::min(x0 + 1, W - 1);
    const int64_t y1 = std::min(y0 + 1, H - 1);
    corner[0] = y0 * W + x0;
    corner[1] = y0 * W + x1;
    corner[2] = y1 * W + x0;
    corner[3] = y1 * W + x1;
    wgt[0] = (T(1) - fu) * (T(1) - fv);
    wgt[1] = fu * (T(1) - fv);
    wgt[2] = (T(1) - fu) * fv;
    wgt[3] = fu * fv;
  }

  static void trilinear_setup(T pd, T pv, T pu, int64_t D, int64_t H,
                              int64_t W, int64_t* corner, T* wgt) {
    const T dc = std::min(std::max(pd, T(0)), static_cast<T>(D - 1));
    const T vc = std::min(std::max(pv, T(0)), static_cast<T>(H - 1));
    const T uc = std::min(std::max(pu, T(0)), static_cast<T>(W - 1));
    const int64_t d0 = std::min(static_cast<int64_t>(dc), D - 2 >= 0 ? D - 2 : 0);
    const int64_t y0 = std::min(static_cast<int64_t>(vc), H - 2 >= 0 ? H - 2 : 0);
    const int64_t x0 = std::min(static_cast<int64_t>(uc), W - 2 >= 0 ? W - 2 : 0);
    const T fd = dc - static_cast<T>(d0);
    const T fv = vc - static_cast<T>(y0);
    const T fu = uc - static_cast<T>(x0);
    const int64_t d1 = std::min(d0 + 1, D - 1);
    const int64_t y1 = std::min(y0 + 1, H - 1);
    const int64_t x1 = std::min(x0 + 1, W - 1);
    int q = 0;
    for (int dd = 0; dd < 2; ++dd)
      for (int yy = 0; yy < 2; ++yy)
        for (int xx = 0; xx < 2; ++xx, ++q) {
          corner[q] = (dd ? d1 : d0) * H * W + (yy ? y1 : y0) * W +
                      (xx ? x1 : x0);
          wgt[q] = (dd ? fd : T(1) - fd) * (yy ? fv : T(1) - fv) *
                   (xx ? fu : T(1) - fu);
        }
  }

  void op_backward(Id i) {
    Node& n = nodes_[i];
    const T* dy = n.grad.data();
    const size_t sz = n.val.size();
    switch (n.op) {
      case Op::add: {
        for (int s = 0; s < 2; ++s)
          if (T* g = in_grad(i, s))
            for (size_t j = 0; j < sz; ++j) g[j] += dy[j];
        break;
      }
      case Op::sub: {
        if (T* g = in_grad(i, 0))
          for (size_t j = 0; j < sz; ++j) g[j] += dy[j];
        if (T* g = in_grad(i, 1))
          for (size_t j = 0; j < sz; ++j) g[j] -= dy[j];
        break;
      }
      case Op::mul: {
        if (T* g = in_grad(i, 0))
          kernels<T>().vmul_acc(dy, at(n.in[1]).val.data(), g, sz);
        if (T* g = in_grad(i, 1))
          kernels<T>().vmul_acc(dy, at(n.in[0]).val.data(), g, sz);
        break;
      }
      case Op::affine: {
        if (T* g = in_grad(i, 0)) kernels<T>().axpy(n.fattr[0], dy, g, sz);
        break;
      }
      case Op::linear: {
        const Node& xn = at(n.in[0]);
        const Node& wn = at(n.in[1]);
        const int m = static_cast<int>(xn.rows);
        const int k = static_cast<int>(xn.cols);
        const int nn = static_cast<int>(wn.cols);
        if (T* g = in_grad(i, 0))
          kernels<T>().gemm_nt(dy, wn.val.data(), g, m, k, nn, true);
        if (T* g = in_grad(i, 1))
          kernels<T>().gemm_tn(xn.val.data(), dy, g, m, k, nn);
        if (n.in.size() == 3)
          if (T* g = in_grad(i, 2))
            for (int r = 0; r < m; ++r)
              for (int j = 0; j < nn; ++j) g[j] += dy[r * nn + j];
        break;
      }
      case Op::relu: {
        if (T* g = in_grad(i, 0))
          kernels<T>().relu_bwd(at(n.in[0]).val.data(), dy, g, sz);
        break;
      }
      case Op::softplus: {
        if (T* g = in_grad(i, 0))
          for (size_t j = 0; j < sz; ++j)
            g[j] += dy[j] * (T(1) - std::exp(-n.val[j]));
        break;
      }
      case Op::sigmoid: {
        if (T* g = in_grad(i, 0))
          for (size_t j = 0; j < sz; ++j)
            g[j] += dy[j] * n.val[j] * (T(1) - n.val[j]);
        break;
      }
      case Op::expe: {
        if (T* g = in_grad(i, 0)) kernels<T>().vmul_acc(dy, n.val.data(), g, sz);
        break;
      }
      case Op::sinv: {
        if (T* g = in_grad(i, 0)) {
          const auto& xv = at(n.in[0]).val;
          for (size_t j = 0; j < sz; ++j) g[j] += dy[j] * std::cos(xv[j]);
        }
        break;
      }
      case Op::cosv: {
        if (T* g = in_grad(i, 0)) {
          const auto& xv = at(n.in[0]).val;
          for (size_t j = 0; j < sz; ++j) g[j] -= dy[j] * std::sin(xv[j]);
        }
        break;
      }
      case Op::recip: {
        if (T* g = in_grad(i, 0)) {
          for (size_t j = 0; j < sz; ++j)
            g[j] -= dy[j] * n.val[j] * n.val[j];
        }
        break;
      }
      case Op::square: {
        if (T* g = in_grad(i, 0)) {
          const auto& xv = at(n.in[0]).val;
          for (size_t j = 0; j < sz; ++j) g[j] += dy[j] * T(2) * xv[j];
        }
        break;
      }
      case Op::absval: {
        if (T* g = in_grad(i, 0)) {
          const auto& xv = at(n.in[0]).val;
          for (size_t j = 0; j < sz; ++j)
            g[j] += xv[j] > T(0) ? dy[j] : (xv[j] < T(0) ? -dy[j] : T(0));
        }
        break;
      }
      case Op::softmax_rows: {
        if (T* g = in_grad(i, 0)) {
          const int64_t m = n.rows, c = n.cols;
          for (int64_t r = 0; r < m; ++r) {
            const T* p = n.val.data() + r * c;
            const T* dyr = dy + r * c;
            const T d = kernels<T>().dot(dyr, p, c);
            T* gr = g + r * c;
            for (int64_t j = 0; j < c; ++j) gr[j] += p[j] * (dyr[j] - d);
          }
        }
        break;
      }
      case Op::sum_all: {
        if (T* g = in_grad(i, 0)) {
          const size_t xn = at(n.in[0]).val.size();
          for (size_t j = 0; j < xn; ++j) g[j] += dy[0];
        }
        break;
      }
      case Op::mean_all: {
        if (T* g = in_grad(i, 0)) {
          const size_t xn = at(n.in[0]).val.size();
          const T f = dy[0] / static_cast<T>(xn);
          for (size_t j = 0; j < xn; ++j) g[j] += f;
        }
        break;
      }
      case Op::sum_cols: {
        if (T* g = in_grad(i, 0)) {
          const Node& xn = at(n.in[0]);
          for (int64_t r = 0; r < xn.rows; ++r)
            for (int64_t j = 0; j < xn.cols; ++j) g[r * xn.cols + j] += dy[r];
        }
        break;
      }
      case Op::group_mean: {
        if (T* g = in_grad(i, 0)) {
          const int64_t K = n.iattr[0];
          const T f = T(1) / static_cast<T>(K);
          for (int64_t gr = 0; gr < n.rows; ++gr)
            for (int64_t r = 0; r < K; ++r)
              kernels<T>().axpy(f, dy + gr * n.cols,
                                g + (gr * K + r) * n.cols, n.cols);
        }
        break;
      }
      case Op::expand_rows: {
        if (T* g = in_grad(i, 0)) {
          const int64_t K = n.iattr[0];
          const Node& xn = at(n.in[0]);
          for (int64_t gr = 0; gr < xn.rows; ++gr)
            for (int64_t r = 0; r < K; ++r)
              kernels<T>().axpy(T(1), dy + (gr * K + r) * n.cols,
                                g + gr * n.cols, n.cols);
        }
        break;
      }
      case Op::mul_colvec: {
        const Node& xn = at(n.in[0]);
        const Node& sn = at(n.in[1]);
        if (T* g = in_grad(i, 0))
          for (int64_t r = 0; r < n.rows; ++r)
            kernels<T>().axpy(sn.val[r], dy + r * n.cols, g + r * n.cols,
                              n.cols);
        if (T* g = in_grad(i, 1))
          for (int64_t r = 0; r < n.rows; ++r)
            g[r] += kernels<T>().dot(dy + r * n.cols, xn.val.data() + r * n.cols,
                                     n.cols);
        break;
      }
      case Op::concat_cols: {
        int64_t off = 0;
        for (size_t s = 0; s < n.in.size(); ++s) {
          const Node& xn = at(n.in[s]);
          if (T* g = in_grad(i, s))
            for (int64_t r = 0; r < n.rows; ++r)
              for (int64_t j = 0; j < xn.cols; ++j)
                g[r * xn.cols + j] += dy[r * n.cols + off + j];
          off += xn.cols;
        }
        break;
      }
      case Op::slice_cols: {
        if (T* g = in_grad(i, 0)) {
          const Node& xn = at(n.in[0]);
          const int64_t c0 = n.iattr[0];
          for (int64_t r = 0; r < n.rows; ++r)
            for (int64_t j = 0; j < n.cols; ++j)
              g[r * xn.cols + c0 + j] += dy[r * n.cols + j];
        }
        break;
      }
      case Op::gather_rows: {
        if (T* g = in_grad(i, 0)) {
          const Node& xn = at(n.in[0]);
          const auto& im = *n.idx;
          const int64_t C = xn.cols;
          for (size_t p = 0; p < im.size(); ++p)
            if (im[p] >= 0)
              kernels<T>().axpy(T(1), dy + p * C,
                                g + static_cast<int64_t>(im[p]) * C, C);
        }
        break;
      }
      case Op::gather_bilinear: {
        if (T* g = in_grad(i, 0)) {
          const int64_t H = n.iattr[0], W = n.iattr[1], C = n.cols;
          for (int64_t p = 0; p < n.rows; ++p) {
            int64_t corner[4];
            T wgt[4];
            bilinear_setup((*n.coords)[2 * p], (*n.coords)[2 * p + 1], H, W,
                           corner, wgt);
            for (int q = 0; q < 4; ++q)
              kernels<T>().axpy(wgt[q], dy + p * C, g + corner[q] * C, C);
          }
        }
        break;
      }
      case Op::gather_trilinear: {
        if (T* g = in_grad(i, 0)) {
          const int64_t D = n.iattr[0], H = n.iattr[1], W = n.iattr[2];
          const int64_t C = n.cols;
          for (int64_t p = 0; p < n.rows; ++p) {
            int64_t corner[8];
            T wgt[8];
            trilinear_setup((*n.coords)[3 * p], (*n.coords)[3 * p + 1],
                            (*n.coords)[3 * p + 2], D, H, W, corner, wgt);
            for (int q = 0; q < 8; ++q)
              kernels<T>().axpy(wgt[q], dy + p * C, g + corner[q] * C, C);
          }
        }
        break;
      }
      case Op::variance_views: {
        const T f = T(2) / static_cast<T>(n.in.size());
        for (size_t v = 0; v < n.in.size(); ++v)
          if (T* g = in_grad(i, v)) {
            const auto& xv = at(n.in[v]).val;
            for (size_t j = 0; j < sz; ++j)
              g[j] += dy[j] * f * (xv[j] - n.aux[j]);
          }
        break;
      }
      case Op::variance_views_masked: {
        const int64_t C = n.cols;
        for (size_t v = 0; v < n.in.size(); ++v)
          if (T* g = in_grad(i, v)) {
            const auto& xv = at(n.in[v]).val;
            const auto& mk = *n.masks[v];
            for (int64_t r = 0; r < n.rows; ++r) {
              if (mk[r] == T(0)) continue;
              const T* mean = n.aux.data() + r * (C + 1);
              const T cnt = mean[C];
              if (cnt < T(2)) continue;
              const T f = T(2) / cnt;
              for (int64_t c = 0; c < C; ++c)
                g[r * C + c] += dy[r * C + c] * f * (xv[r * C + c] - mean[c]);
            }
          }
        break;
      }
      case Op::transmittance: {
        if (T* gs = in_grad(i, 0)) {
          const int64_t R = n.iattr[0], S = n.iattr[1];
          const auto& tdv = *n.coords;
          for (int64_t r = 0; r < R; ++r) {
            T suffix = T(0);  // sum over later samples of dy_i * T_i
            for (int64_t s = S - 1; s >= 0; --s) {
              const int64_t j = r * S + s;
              gs[j] -= tdv[2 * j + 1] * suffix;
              suffix += dy[j] * n.val[j];
            }
          }
        }
        break;
      }
      case Op::composite: {
        const int64_t R = n.iattr[0], S = n.iattr[1];
        const Node& cn = at(n.in[1]);
        T* gs = in_grad(i, 0);
        T* gc = in_grad(i, 1);
        const auto& tdv = *n.coords;
        for (int64_t r = 0; r < R; ++r) {
          const T* dout = dy + r * 5;
          const T Tend = n.val[r * 5 + 4];
          T suffix = 0;
          for (int64_t s = S - 1; s >= 0; --s) {
            const int64_t idx = r * S + s;
            const T t = tdv[2 * idx], delta = tdv[2 * idx + 1];
            const T w = n.aux[2 * idx], tr = n.aux[2 * idx + 1];
            const T* c = cn.val.data() + idx * 3;
            if (gc)
              for (int q = 0; q < 3; ++q) gc[idx * 3 + q] += w * dout[q];
            const T gsamp = dout[0] * c[0] + dout[1] * c[1] + dout[2] * c[2] +
                            dout[3] * t;
            if (gs)
              gs[idx] += delta * (gsamp * (tr - w) - suffix - dout[4] * Tend);
            suffix += gsamp * w;
          }
        }
        break;
      }
      case Op::avgpool2: {
        if (T* g = in_grad(i, 0)) {
          const int64_t H = n.iattr[0], W = n.iattr[1], C = n.cols;
          const int64_t Wo = W / 2;
          for (int64_t y = 0; y < H; ++y)
            for (int64_t x2 = 0; x2 < W; ++x2)
              kernels<T>().axpy(T(0.25),
                                dy + ((y / 2) * Wo + x2 / 2) * C,
                                g + (y * W + x2) * C, C);
        }
        break;
      }
      case Op::upsample2: {
        if (T* g = in_grad(i, 0)) {
          const int64_t H = n.iattr[0], W = n.iattr[1], C = n.cols;
          const int64_t Wo = 2 * W;
          for (int64_t y = 0; y < 2 * H; ++y)
            for (int64_t x2 = 0; x2 < Wo; ++x2)
              kernels<T>().axpy(T(1), dy + (y * Wo + x2) * C,
                                g + ((y / 2) * W + x2 / 2) * C, C);
        }
        break;
      }
      case Op::weighted_sum: {
        for (size_t v = 0; v < n.in.size(); ++v)
          if (T* g = in_grad(i, v)) kernels<T>().axpy(n.fattr[v], dy, g, sz);
        break;
      }
      case Op::stopgrad:
      case Op::leaf:
        break;
    }
  }
};

}  // namespace ucnerf
