// Copyright (c) 2026, The mole-advice Authors
// SPDX-License-Identifier: Apache-2.0

#include "mole/ops.hpp"

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <numbers>
#include <string>

#include "mole/errors.hpp"

namespace mole::ops {
namespace {

using Impl = std::shared_ptr<TensorImpl>;

// Wraps a freshly computed value into a graph node when any input needs
// gradients. `fn` receives the output gradient.
template <class F>
Tensor record(Tensor out, std::string_view op, std::initializer_list<const Tensor*> inputs, F&& fn) {
    if (NoGradGuard::active()) return out;
    bool need = false;
    for (const auto* t : inputs) need = need || t->requires_grad();
    if (!need) return out;
    auto node = std::make_shared<Node>();
    node->op = op;
    for (const auto* t : inputs) node->inputs.push_back(t->impl());
    node->output = out.impl();
    node->backward = std::forward<F>(fn);
    out.impl()->requires_grad = true;
    out.impl()->grad_fn = std::move(node);
    return out;
}

void require_matrix(const Tensor& t, const char* op, const char* name) {
    if (t.rank() != 2) {
        throw ShapeError(std::string(op) + ": " + name + " must be 2-D, got " + shape_str(t.shape()));
    }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
}

// C[m×n] += A[m×k]·B[k×n]; accumulation over k in ascending order.
void mm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* ci = c + i * n;
        const double* ai = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ai[p];
            const double* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

// C[m×n] += A[m×k]·B[n×k]ᵀ
void mm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const double* bj = b + j * k;
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
            c[i * n + j] += acc;
        }
    }
}

// C[m×n] += A[k×m]ᵀ·B[k×n]
void mm_tn(const double* a, const double* b, double* c, std::size_t k, std::size_t m, std::size_t n) {
    for (std::size_t p = 0; p < k; ++p) {
        const double* ap = a + p * m;
        const double* bp = b + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const double av = ap[i];
            if (av == 0.0) continue;
            double* ci = c + i * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_matrix(a, "matmul", "lhs");
    require_matrix(b, "matmul", "rhs");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k) {
        throw ShapeError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " · " +
                         shape_str(b.shape()));
    }
    Tensor out({m, n});
    mm_nn(a.data().data(), b.data().data(), out.data().data(), m, k, n);
    Impl ai = a.impl(), bi = b.impl();
    return record(out, "matmul", {&a, &b}, [ai, bi, m, k, n](std::span<const double> g) {
        if (ai->requires_grad) mm_nt(g.data(), bi->data.data(), ensure_grad(*ai).data(), m, n, k);
        if (bi->requires_grad) mm_tn(ai->data.data(), g.data(), ensure_grad(*bi).data(), m, k, n);
    });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    require_matrix(a, "matmul_nt", "lhs");
    require_matrix(b, "matmul_nt", "rhs");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
    if (b.dim(1) != k) {
        throw ShapeError("matmul_nt: inner dimensions differ, " + shape_str(a.shape()) + " · " +
                         shape_str(b.shape()) + "ᵀ");
    }
    Tensor out({m, n});
    mm_nt(a.data().data(), b.data().data(), out.data().data(), m, k, n);
    Impl ai = a.impl(), bi = b.impl();
    return record(out, "matmul_nt", {&a, &b}, [ai, bi, m, k, n](std::span<const double> g) {
        if (ai->requires_grad) mm_nn(g.data(), bi->data.data(), ensure_grad(*ai).data(), m, n, k);
        if (bi->requires_grad) mm_tn(g.data(), ai->data.data(), ensure_grad(*bi).data(), m, n, k);
    });
}

Tensor transpose(const Tensor& a) {
    require_matrix(a, "transpose", "input");
    const std::size_t m = a.dim(0), n = a.dim(1);
    Tensor out({n, m});
    auto src = a.data();
    auto dst = out.data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) dst[j * m + i] = src[i * n + j];
    Impl ai = a.impl();
    return record(out, "transpose", {&a}, [ai, m, n](std::span<const double> g) {
        auto& ga = ensure_grad(*ai);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
    });
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    Tensor out(a.shape());
    auto o = out.data();
    auto x = a.data(), y = b.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
    Impl ai = a.impl(), bi = b.impl();
    return record(out, "add", {&a, &b}, [ai, bi](std::span<const double> g) {
        for (const auto& t : {ai, bi}) {
            if (!t->requires_grad) continue;
            auto& gt = ensure_grad(*t);
            for (std::size_t i = 0; i < g.size(); ++i) gt[i] += g[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    Tensor out(a.shape());
    auto o = out.data();
    auto x = a.data(), y = b.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] - y[i];
    Impl ai = a.impl(), bi = b.impl();
    return record(out, "sub", {&a, &b}, [ai, bi](std::span<const double> g) {
        if (ai->requires_grad) {
            auto& ga = ensure_grad(*ai);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (bi->requires_grad) {
            auto& gb = ensure_grad(*bi);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    Tensor out(a.shape());
    auto o = out.data();
    auto x = a.data(), y = b.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
    Impl ai = a.impl(), bi = b.impl();
    return record(out, "mul", {&a, &b}, [ai, bi](std::span<const double> g) {
        if (ai->requires_grad) {
            auto& ga = ensure_grad(*ai);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bi->data[i];
        }
        if (bi->requires_grad) {
            auto& gb = ensure_grad(*bi);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * ai->data[i];
        }
    });
}

Tensor scale(const Tensor& a, double s) {
    Tensor out(a.shape());
    auto o = out.data();
    auto x = a.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * s;
    Impl ai = a.impl();
    return record(out, "scale", {&a}, [ai, s](std::span<const double> g) {
        auto& ga = ensure_grad(*ai);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
    });
}

Tensor add_row(const Tensor& a, const Tensor& row) {
    require_matrix(a, "add_row", "input");
    const std::size_t m = a.dim(0), n = a.dim(1);
    if (row.size() != n || row.rank() != 1) {
        throw ShapeError("add_row: bias " + shape_str(row.shape()) + " does not match width of " +
                         shape_str(a.shape()));
    }
    Tensor out(a.shape());
    auto o = out.data();
    auto x = a.data(), r = row.data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) o[i * n + j] = x[i * n + j] + r[j];
    Impl ai = a.impl(), ri = row.impl();
    return record(out, "add_row", {&a, &row}, [ai, ri, m, n](std::span<const double> g) {
        if (ai->requires_grad) {
            auto& ga = ensure_grad(*ai);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (ri->requires_grad) {
            auto& gr = ensure_grad(*ri);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) gr[j] += g[i * n + j];
        }
    });
}

Tensor scale_rows(const Tensor& a, const Tensor& w) {
    require_matrix(a, "scale_rows", "input");
    const std::size_t m = a.dim(0), n = a.dim(1);
    if (w.size() != m) {
        throw ShapeError("scale_rows: weights " + shape_str(w.shape()) + " do not match rows of " +
                         shape_str(a.shape()));
    }
    Tensor out(a.shape());
    auto o = out.data();
    auto x = a.data(), s = w.data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) o[i * n + j] = x[i * n + j] * s[i];
    Impl ai = a.impl(), wi = w.impl();
    return record(out, "scale_rows", {&a, &w}, [ai, wi, m, n](std::span<const double> g) {
        if (ai->requires_grad) {
            auto& ga = ensure_grad(*ai);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[i * n + j] * wi->data[i];
        }
        if (wi->requires_grad) {
            auto& gw = ensure_grad(*wi);
            for (std::size_t i = 0; i < m; ++i) {
                double acc = 0.0;
                for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * ai->data[i * n + j];
                gw[i] += acc;
            }
        }
    });
}

Tensor sum(const Tensor& a) {
    double acc = 0.0;
    for (double v : a.data()) acc += v;
    Impl ai = a.impl();
    return record(Tensor::scalar(acc), "sum", {&a}, [ai](std::span<const double> g) {
        auto& ga = ensure_grad(*ai);
        for (auto& v : ga) v += g[0];
    });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

Tensor softmax(const Tensor& logits) {
    if (logits.rank() == 0) throw ShapeError("softmax: scalar input has no axis");
    const std::size_t n = logits.shape().back();
    const std::size_t rows = logits.size() / n;
    Tensor out(logits.shape());
    auto x = logits.data();
    auto y = out.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x.data() + r * n;
        double* yr = y.data() + r * n;
        const double mx = *std::max_element(xr, xr + n);
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) z += (yr[j] = std::exp(xr[j] - mx));
        for (std::size_t j = 0; j < n; ++j) yr[j] /= z;
    }
    Impl li = logits.impl();
    std::weak_ptr<TensorImpl> ow = out.impl();
    return record(out, "softmax", {&logits}, [li, ow, rows, n](std::span<const double> g) {
        auto o = ow.lock();
        auto& gl = ensure_grad(*li);
        for (std::size_t r = 0; r < rows; ++r) {
            const double* yr = o->data.data() + r * n;
            const double* gr = g.data() + r * n;
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) dot += yr[j] * gr[j];
            for (std::size_t j = 0; j < n; ++j) gl[r * n + j] += yr[j] * (gr[j] - dot);
        }
    });
}

Tensor causal_softmax(const Tensor& scores) {
    require_matrix(scores, "causal_softmax", "scores");
    const std::size_t len = scores.dim(0);
    if (scores.dim(1) != len) throw ShapeError("causal_softmax: scores must be square, got " + shape_str(scores.shape()));
    Tensor out(scores.shape());
    auto x = scores.data();
    auto y = out.data();
    for (std::size_t t = 0; t < len; ++t) {
        const double* xr = x.data() + t * len;
        double* yr = y.data() + t * len;
        const double mx = *std::max_element(xr, xr + t + 1);
        double z = 0.0;
        for (std::size_t s = 0; s <= t; ++s) z += (yr[s] = std::exp(xr[s] - mx));
        for (std::size_t s = 0; s <= t; ++s) yr[s] /= z;
    }
    Impl si = scores.impl();
    std::weak_ptr<TensorImpl> ow = out.impl();
    return record(out, "causal_softmax", {&scores}, [si, ow, len](std::span<const double> g) {
        auto o = ow.lock();
        auto& gs = ensure_grad(*si);
        for (std::size_t t = 0; t < len; ++t) {
            const double* yr = o->data.data() + t * len;
            const double* gr = g.data() + t * len;
            double dot = 0.0;
            for (std::size_t s = 0; s <= t; ++s) dot += yr[s] * gr[s];
            for (std::size_t s = 0; s <= t; ++s) gs[t * len + s] += yr[s] * (gr[s] - dot);
        }
    });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    require_matrix(x, "layer_norm", "input");
    const std::size_t m = x.dim(0), n = x.dim(1);
    if (gamma.size() != n || beta.size() != n) {
        throw ShapeError("layer_norm: affine params " + shape_str(gamma.shape()) + "/" +
                         shape_str(beta.shape()) + " do not match width " + std::to_string(n));
    }
    Tensor out(x.shape());
    std::vector<double> xhat(m * n), rstd(m);
    auto xv = x.data();
    auto y = out.data();
    auto gv = gamma.data(), bv = beta.data();
    for (std::size_t i = 0; i < m; ++i) {
        const double* xr = xv.data() + i * n;
        double mu = 0.0;
        for (std::size_t j = 0; j < n; ++j) mu += xr[j];
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) var += (xr[j] - mu) * (xr[j] - mu);
        var /= static_cast<double>(n);
        rstd[i] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < n; ++j) {
            xhat[i * n + j] = (xr[j] - mu) * rstd[i];
            y[i * n + j] = xhat[i * n + j] * gv[j] + bv[j];
        }
    }
    Impl xi = x.impl(), gi = gamma.impl(), bi = beta.impl();
    return record(out, "layer_norm", {&x, &gamma, &beta},
                  [xi, gi, bi, xhat = std::move(xhat), rstd = std::move(rstd), m, n](std::span<const double> g) {
                      if (gi->requires_grad) {
                          auto& gg = ensure_grad(*gi);
                          for (std::size_t i = 0; i < m; ++i)
                              for (std::size_t j = 0; j < n; ++j) gg[j] += g[i * n + j] * xhat[i * n + j];
                      }
                      if (bi->requires_grad) {
                          auto& gb = ensure_grad(*bi);
                          for (std::size_t i = 0; i < m; ++i)
                              for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
                      }
                      if (!xi->requires_grad) return;
                      auto& gx = ensure_grad(*xi);
                      const double inv_n = 1.0 / static_cast<double>(n);
                      for (std::size_t i = 0; i < m; ++i) {
                          double mean_d = 0.0, mean_dx = 0.0;
                          for (std::size_t j = 0; j < n; ++j) {
                              const double d = g[i * n + j] * gi->data[j];
                              mean_d += d;
                              mean_dx += d * xhat[i * n + j];
                          }
                          mean_d *= inv_n;
                          mean_dx *= inv_n;
                          for (std::size_t j = 0; j < n; ++j) {
                              const double d = g[i * n + j] * gi->data[j];
                              gx[i * n + j] += rstd[i] * (d - mean_d - xhat[i * n + j] * mean_dx);
                          }
                      }
                  });
}

Tensor gelu(const Tensor& x) {
    constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
    constexpr double kA = 0.044715;
    Tensor out(x.shape());
    auto xv = x.data();
    auto y = out.data();
    for (std::size_t i = 0; i < xv.size(); ++i) {
        const double v = xv[i];
        y[i] = 0.5 * v * (1.0 + std::tanh(kC * (v + kA * v * v * v)));
    }
    Impl xi = x.impl();
    return record(out, "gelu", {&x}, [xi](std::span<const double> g) {
        auto& gx = ensure_grad(*xi);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double v = xi->data[i];
            const double t = std::tanh(kC * (v + kA * v * v * v));
            const double d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * kC * (1.0 + 3.0 * kA * v * v);
            gx[i] += g[i] * d;
        }
    });
}

Tensor tanh(const Tensor& x) {
    Tensor out(x.shape());
    auto xv = x.data();
    auto y = out.data();
    for (std::size_t i = 0; i < xv.size(); ++i) y[i] = std::tanh(xv[i]);
    Impl xi = x.impl();
    std::weak_ptr<TensorImpl> ow = out.impl();
    return record(out, "tanh", {&x}, [xi, ow](std::span<const double> g) {
        auto o = ow.lock();
        auto& gx = ensure_grad(*xi);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (1.0 - o->data[i] * o->data[i]);
    });
}

Tensor embedding(const Tensor& table, std::span<const int> ids) {
    require_matrix(table, "embedding", "table");
    if (ids.empty()) throw ShapeError("embedding: empty id sequence");
    const std::size_t vocab = table.dim(0), d = table.dim(1);
    for (int id : ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
            throw VocabError("embedding: id " + std::to_string(id) + " outside vocabulary of " +
                             std::to_string(vocab));
        }
    }
    Tensor out({ids.size(), d});
    auto src = table.data();
    auto dst = out.data();
    for (std::size_t t = 0; t < ids.size(); ++t)
        std::copy_n(src.data() + static_cast<std::size_t>(ids[t]) * d, d, dst.data() + t * d);
    Impl ti = table.impl();
    std::vector<int> idv(ids.begin(), ids.end());
    return record(out, "embedding", {&table}, [ti, idv = std::move(idv), d](std::span<const double> g) {
        auto& gt = ensure_grad(*ti);
        for (std::size_t t = 0; t < idv.size(); ++t) {
            double* row = gt.data() + static_cast<std::size_t>(idv[t]) * d;
            for (std::size_t j = 0; j < d; ++j) row[j] += g[t * d + j];
        }
    });
}

Tensor slice_rows(const Tensor& x, std::size_t count) {
    require_matrix(x, "slice_rows", "input");
    if (count == 0 || count > x.dim(0)) {
        throw ShapeError("slice_rows: " + std::to_string(count) + " rows out of " + shape_str(x.shape()));
    }
    const std::size_t n = x.dim(1);
    Tensor out({count, n});
    std::copy_n(x.data().data(), count * n, out.data().data());
    Impl xi = x.impl();
    return record(out, "slice_rows", {&x}, [xi](std::span<const double> g) {
        auto& gx = ensure_grad(*xi);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
}

Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count) {
    require_matrix(x, "slice_cols", "input");
    const std::size_t m = x.dim(0), n = x.dim(1);
    if (count == 0 || start + count > n) {
        throw ShapeError("slice_cols: columns [" + std::to_string(start) + ", " + std::to_string(start + count) +
                         ") out of " + shape_str(x.shape()));
    }
    Tensor out({m, count});
    auto src = x.data();
    auto dst = out.data();
    for (std::size_t i = 0; i < m; ++i) std::copy_n(src.data() + i * n + start, count, dst.data() + i * count);
    Impl xi = x.impl();
    return record(out, "slice_cols", {&x}, [xi, m, n, start, count](std::span<const double> g) {
        auto& gx = ensure_grad(*xi);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < count; ++j) gx[i * n + start + j] += g[i * count + j];
    });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no inputs");
    const std::size_t m = parts.front().dim(0);
    std::size_t total = 0;
    for (const auto& p : parts) {
        require_matrix(p, "concat_cols", "part");
        if (p.dim(0) != m) throw ShapeError("concat_cols: row count mismatch " + shape_str(p.shape()));
        total += p.dim(1);
    }
    Tensor out({m, total});
    auto dst = out.data();
    std::size_t off = 0;
    bool need = false;
    for (const auto& p : parts) {
        const std::size_t w = p.dim(1);
        auto src = p.data();
        for (std::size_t i = 0; i < m; ++i) std::copy_n(src.data() + i * w, w, dst.data() + i * total + off);
        off += w;
        need = need || p.requires_grad();
    }
    if (!need || NoGradGuard::active()) return out;
    auto node = std::make_shared<Node>();
    node->op = "concat_cols";
    for (const auto& p : parts) node->inputs.push_back(p.impl());
    node->output = out.impl();
    std::vector<Impl> ins = node->inputs;
    node->backward = [ins, m, total](std::span<const double> g) {
        std::size_t off = 0;
        for (const auto& p : ins) {
            const std::size_t w = p->shape[1];
            if (p->requires_grad) {
                auto& gp = ensure_grad(*p);
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < w; ++j) gp[i * w + j] += g[i * total + off + j];
            }
            off += w;
        }
    };
    out.impl()->requires_grad = true;
    out.impl()->grad_fn = std::move(node);
    return out;
}

Tensor cross_entropy_sum(const Tensor& logits, std::span<const int> targets, std::span<const unsigned char> mask) {
    require_matrix(logits, "cross_entropy_sum", "logits");
    const std::size_t len = logits.dim(0), vocab = logits.dim(1);
    if (targets.size() != len || mask.size() != len) {
        throw ShapeError("cross_entropy_sum: " + std::to_string(targets.size()) + " targets / " +
                         std::to_string(mask.size()) + " mask entries for " + shape_str(logits.shape()));
    }
    std::vector<double> probs(len * vocab, 0.0);
    double total = 0.0;
    auto x = logits.data();
    for (std::size_t t = 0; t < len; ++t) {
        if (!mask[t]) continue;
        if (targets[t] < 0 || static_cast<std::size_t>(targets[t]) >= vocab) {
            throw VocabError("cross_entropy_sum: target " + std::to_string(targets[t]) + " outside vocabulary");
        }
        const double* xr = x.data() + t * vocab;
        const double mx = *std::max_element(xr, xr + vocab);
        double z = 0.0;
        for (std::size_t j = 0; j < vocab; ++j) z += (probs[t * vocab + j] = std::exp(xr[j] - mx));
        for (std::size_t j = 0; j < vocab; ++j) probs[t * vocab + j] /= z;
        total += (mx + std::log(z)) - xr[targets[t]];
    }
    Impl li = logits.impl();
    std::vector<int> tv(targets.begin(), targets.end());
    std::vector<unsigned char> mv(mask.begin(), mask.end());
    return record(Tensor::scalar(total), "cross_entropy_sum", {&logits},
                  [li, probs = std::move(probs), tv = std::move(tv), mv = std::move(mv), len, vocab](std::span<const double> g) {
                      auto& gl = ensure_grad(*li);
                      for (std::size_t t = 0; t < len; ++t) {
                          if (!mv[t]) continue;
                          for (std::size_t j = 0; j < vocab; ++j) gl[t * vocab + j] += g[0] * probs[t * vocab + j];
                          gl[t * vocab + static_cast<std::size_t>(tv[t])] -= g[0];
                      }
                  });
}

}  // namespace mole::ops
