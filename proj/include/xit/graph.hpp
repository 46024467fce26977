#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "xit/rng.hpp"
#include "xit/tensor.hpp"

namespace xit {

// Tape-based reverse-mode autodiff. A Graph is built fresh for every
// forward/backward pass (define-by-run); creation order doubles as the
// topological order, so backward() is a single reverse sweep.
//
// Ops are deliberately coarse where that keeps the tape small: attention,
// batch norm and the contrastive losses are single nodes with hand-written
// adjoints. Every adjoint here is covered by finite-difference tests.
template <typename S>
class Graph {
public:
    struct Node {
        Tensor<S> value;
        Tensor<S> grad;  // empty until touched by backward
        std::vector<Node*> parents;
        std::function<void(Node*)> backward;
        const char* name = "";
        bool requires_grad = false;
    };
    using NodeRef = Node*;

    bool check_finite = true;

    NodeRef leaf(Tensor<S> value, bool requires_grad = false, const char* name = "leaf") {
        return make(name, std::move(value), {}, nullptr, requires_grad);
    }

    // ---- elementwise ----

    NodeRef add(NodeRef a, NodeRef b) { return add_scaled(a, S(1), b, S(1), "add"); }
    NodeRef sub(NodeRef a, NodeRef b) { return add_scaled(a, S(1), b, S(-1), "sub"); }

    NodeRef add_scaled(NodeRef a, S ca, NodeRef b, S cb, const char* name = "add_scaled") {
        require_same_shape(a, b, name);
        Tensor<S> out = Tensor<S>::zeros_like(a->value);
        for (int64_t i = 0; i < out.size(); ++i) out[i] = ca * a->value[i] + cb * b->value[i];
        return make(name, std::move(out), {a, b}, [ca, cb](Node* n) {
            accumulate_scaled(n->parents[0], n->grad, ca);
            accumulate_scaled(n->parents[1], n->grad, cb);
        });
    }

    NodeRef mul(NodeRef a, NodeRef b) {
        require_same_shape(a, b, "mul");
        Tensor<S> out = Tensor<S>::zeros_like(a->value);
        for (int64_t i = 0; i < out.size(); ++i) out[i] = a->value[i] * b->value[i];
        return make("mul", std::move(out), {a, b}, [](Node* n) {
            Node *a = n->parents[0], *b = n->parents[1];
            if (a->requires_grad) {
                Tensor<S>& ga = ensure_grad(a);
                for (int64_t i = 0; i < n->grad.size(); ++i) ga[i] += n->grad[i] * b->value[i];
            }
            if (b->requires_grad) {
                Tensor<S>& gb = ensure_grad(b);
                for (int64_t i = 0; i < n->grad.size(); ++i) gb[i] += n->grad[i] * a->value[i];
            }
        });
    }

    NodeRef scale(NodeRef a, S c) {
        Tensor<S> out = Tensor<S>::zeros_like(a->value);
        for (int64_t i = 0; i < out.size(); ++i) out[i] = c * a->value[i];
        return make("scale", std::move(out), {a},
                    [c](Node* n) { accumulate_scaled(n->parents[0], n->grad, c); });
    }

    NodeRef relu(NodeRef a) {
        Tensor<S> out = Tensor<S>::zeros_like(a->value);
        for (int64_t i = 0; i < out.size(); ++i) out[i] = a->value[i] > S(0) ? a->value[i] : S(0);
        return make("relu", std::move(out), {a}, [](Node* n) {
            Node* a = n->parents[0];
            if (!a->requires_grad) return;
            Tensor<S>& ga = ensure_grad(a);
            for (int64_t i = 0; i < n->grad.size(); ++i)
                if (a->value[i] > S(0)) ga[i] += n->grad[i];
        });
    }

    // Inverted dropout; identity when p == 0.
    NodeRef dropout(NodeRef a, double p, Rng& rng) {
        if (p == 0.0) return a;
        if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout: p must be in [0,1)");
        auto mask = std::make_shared<Tensor<S>>(a->value.shape());
        const S keep = S(1.0 / (1.0 - p));
        for (int64_t i = 0; i < mask->size(); ++i)
            (*mask)[i] = rng.uniform() >= p ? keep : S(0);
        Tensor<S> out = Tensor<S>::zeros_like(a->value);
        for (int64_t i = 0; i < out.size(); ++i) out[i] = a->value[i] * (*mask)[i];
        return make("dropout", std::move(out), {a}, [mask](Node* n) {
            Node* a = n->parents[0];
            if (!a->requires_grad) return;
            Tensor<S>& ga = ensure_grad(a);
            for (int64_t i = 0; i < n->grad.size(); ++i) ga[i] += n->grad[i] * (*mask)[i];
        });
    }

    // ---- linear algebra ----

    NodeRef matmul(NodeRef a, NodeRef b) {
        if (a->value.rank() != 2 || b->value.rank() != 2 || a->value.dim(1) != b->value.dim(0))
            throw std::invalid_argument("matmul: incompatible shapes " +
                                        Tensor<S>::shape_str(a->value.shape()) + " x " +
                                        Tensor<S>::shape_str(b->value.shape()));
        const int64_t m = a->value.dim(0), k = a->value.dim(1), n = b->value.dim(1);
        Tensor<S> out({m, n});
        gemm(a->value.data(), b->value.data(), out.data(), m, k, n);
        return make("matmul", std::move(out), {a, b}, [m, k, n](Node* nd) {
            Node *a = nd->parents[0], *b = nd->parents[1];
            if (a->requires_grad) {  // dA += dY * B^T
                Tensor<S>& ga = ensure_grad(a);
                for (int64_t i = 0; i < m; ++i)
                    for (int64_t j = 0; j < n; ++j) {
                        const S g = nd->grad.at(i, j);
                        if (g == S(0)) continue;
                        const S* brow = b->value.data() + j;
                        for (int64_t p = 0; p < k; ++p) ga.at(i, p) += g * brow[p * n];
                    }
            }
            if (b->requires_grad) {  // dB += A^T * dY
                Tensor<S>& gb = ensure_grad(b);
                for (int64_t i = 0; i < m; ++i)
                    for (int64_t p = 0; p < k; ++p) {
                        const S av = a->value.at(i, p);
                        if (av == S(0)) continue;
                        S* grow = gb.data() + p * n;
                        const S* gy = nd->grad.data() + i * n;
                        for (int64_t j = 0; j < n; ++j) grow[j] += av * gy[j];
                    }
            }
        });
    }

    NodeRef transpose(NodeRef a) {
        if (a->value.rank() != 2) throw std::invalid_argument("transpose: rank-2 only");
        const int64_t m = a->value.dim(0), n = a->value.dim(1);
        Tensor<S> out({n, m});
        for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < n; ++j) out.at(j, i) = a->value.at(i, j);
        return make("transpose", std::move(out), {a}, [m, n](Node* nd) {
            Node* a = nd->parents[0];
            if (!a->requires_grad) return;
            Tensor<S>& ga = ensure_grad(a);
            for (int64_t i = 0; i < m; ++i)
                for (int64_t j = 0; j < n; ++j) ga.at(i, j) += nd->grad.at(j, i);
        });
    }

    // y = x * W^T + b with x (n,in), W (out,in), b (out).
    NodeRef linear(NodeRef x, NodeRef w, NodeRef b) {
        const int64_t n = x->value.dim(0), in = x->value.dim(1), out_dim = w->value.dim(0);
        if (w->value.dim(1) != in || (b && b->value.size() != out_dim))
            throw std::invalid_argument("linear: shape mismatch");
        Tensor<S> out({n, out_dim});
        for (int64_t i = 0; i < n; ++i) {
            const S* xi = x->value.data() + i * in;
            S* oi = out.data() + i * out_dim;
            for (int64_t o = 0; o < out_dim; ++o) {
                const S* wo = w->value.data() + o * in;
                S acc = b ? b->value[o] : S(0);
                for (int64_t p = 0; p < in; ++p) acc += xi[p] * wo[p];
                oi[o] = acc;
            }
        }
        std::vector<Node*> parents = {x, w};
        if (b) parents.push_back(b);
        return make("linear", std::move(out), std::move(parents), [n, in, out_dim](Node* nd) {
            Node *x = nd->parents[0], *w = nd->parents[1];
            Node* b = nd->parents.size() > 2 ? nd->parents[2] : nullptr;
            if (x->requires_grad) {
                Tensor<S>& gx = ensure_grad(x);
                for (int64_t i = 0; i < n; ++i)
                    for (int64_t o = 0; o < out_dim; ++o) {
                        const S g = nd->grad.at(i, o);
                        if (g == S(0)) continue;
                        const S* wo = w->value.data() + o * in;
                        S* gi = gx.data() + i * in;
                        for (int64_t p = 0; p < in; ++p) gi[p] += g * wo[p];
                    }
            }
            if (w->requires_grad) {
                Tensor<S>& gw = ensure_grad(w);
                for (int64_t i = 0; i < n; ++i) {
                    const S* xi = x->value.data() + i * in;
                    for (int64_t o = 0; o < out_dim; ++o) {
                        const S g = nd->grad.at(i, o);
                        if (g == S(0)) continue;
                        S* go = gw.data() + o * in;
                        for (int64_t p = 0; p < in; ++p) go[p] += g * xi[p];
                    }
                }
            }
            if (b && b->requires_grad) {
                Tensor<S>& gb = ensure_grad(b);
                for (int64_t i = 0; i < n; ++i)
                    for (int64_t o = 0; o < out_dim; ++o) gb[o] += nd->grad.at(i, o);
            }
        });
    }

    NodeRef linear_nobias(NodeRef x, NodeRef w) { return linear(x, w, nullptr); }

    // ---- convolution / pooling over (batch, channel, time) ----

    // Length-preserving 1D convolution, stride 1. Padding splits k-1 zeros
    // as floor left / ceil right.
    NodeRef conv1d(NodeRef x, NodeRef w, NodeRef b) {
        if (x->value.rank() != 3 || w->value.rank() != 3)
            throw std::invalid_argument("conv1d: expects (B,Cin,L) and (Cout,Cin,k)");
        const int64_t B = x->value.dim(0), cin = x->value.dim(1), L = x->value.dim(2);
        const int64_t cout = w->value.dim(0), k = w->value.dim(2);
        if (w->value.dim(1) != cin || (b && b->value.size() != cout))
            throw std::invalid_argument("conv1d: shape mismatch");
        const int64_t pl = (k - 1) / 2;
        Tensor<S> out({B, cout, L});
        for (int64_t bi = 0; bi < B; ++bi)
            for (int64_t co = 0; co < cout; ++co) {
                S* orow = &out.at(bi, co, 0);
                if (b)
                    for (int64_t l = 0; l < L; ++l) orow[l] = b->value[co];
                for (int64_t ci = 0; ci < cin; ++ci) {
                    const S* xrow = &x->value.at(bi, ci, 0);
                    const S* wrow = &w->value.at(co, ci, 0);
                    for (int64_t t = 0; t < k; ++t) {
                        const S wv = wrow[t];
                        if (wv == S(0)) continue;
                        const int64_t shift = t - pl;  // x index = l + shift
                        const int64_t lo = std::max<int64_t>(0, -shift);
                        const int64_t hi = std::min<int64_t>(L, L - shift);
                        for (int64_t l = lo; l < hi; ++l) orow[l] += wv * xrow[l + shift];
                    }
                }
            }
        std::vector<Node*> parents = {x, w};
        if (b) parents.push_back(b);
        return make("conv1d", std::move(out), std::move(parents), [B, cin, cout, L, k, pl](Node* nd) {
            Node *x = nd->parents[0], *w = nd->parents[1];
            Node* b = nd->parents.size() > 2 ? nd->parents[2] : nullptr;
            if (x->requires_grad) {
                Tensor<S>& gx = ensure_grad(x);
                for (int64_t bi = 0; bi < B; ++bi)
                    for (int64_t co = 0; co < cout; ++co) {
                        const S* grow = &nd->grad.at(bi, co, 0);
                        for (int64_t ci = 0; ci < cin; ++ci) {
                            S* gxrow = &gx.at(bi, ci, 0);
                            const S* wrow = &w->value.at(co, ci, 0);
                            for (int64_t t = 0; t < k; ++t) {
                                const S wv = wrow[t];
                                if (wv == S(0)) continue;
                                const int64_t shift = t - pl;
                                const int64_t lo = std::max<int64_t>(0, -shift);
                                const int64_t hi = std::min<int64_t>(L, L - shift);
                                for (int64_t l = lo; l < hi; ++l) gxrow[l + shift] += wv * grow[l];
                            }
                        }
                    }
            }
            if (w->requires_grad) {
                Tensor<S>& gw = ensure_grad(w);
                for (int64_t bi = 0; bi < B; ++bi)
                    for (int64_t co = 0; co < cout; ++co) {
                        const S* grow = &nd->grad.at(bi, co, 0);
                        for (int64_t ci = 0; ci < cin; ++ci) {
                            const S* xrow = &x->value.at(bi, ci, 0);
                            S* gwrow = &gw.at(co, ci, 0);
                            for (int64_t t = 0; t < k; ++t) {
                                const int64_t shift = t - pl;
                                const int64_t lo = std::max<int64_t>(0, -shift);
                                const int64_t hi = std::min<int64_t>(L, L - shift);
                                S acc = S(0);
                                for (int64_t l = lo; l < hi; ++l) acc += grow[l] * xrow[l + shift];
                                gwrow[t] += acc;
                            }
                        }
                    }
            }
            if (b && b->requires_grad) {
                Tensor<S>& gb = ensure_grad(b);
                for (int64_t bi = 0; bi < B; ++bi)
                    for (int64_t co = 0; co < cout; ++co) {
                        const S* grow = &nd->grad.at(bi, co, 0);
                        S acc = S(0);
                        for (int64_t l = 0; l < L; ++l) acc += grow[l];
                        gb[co] += acc;
                    }
            }
        });
    }

    // Max pool, kernel = stride. Ties route to the earliest index.
    NodeRef maxpool1d(NodeRef x, int64_t kernel) {
        const int64_t B = x->value.dim(0), C = x->value.dim(1), L = x->value.dim(2);
        const int64_t Lo = L / kernel;
        if (Lo < 1) throw std::invalid_argument("maxpool1d: input shorter than kernel");
        Tensor<S> out({B, C, Lo});
        auto argmax = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(B * C * Lo));
        int64_t idx = 0;
        for (int64_t bi = 0; bi < B; ++bi)
            for (int64_t c = 0; c < C; ++c)
                for (int64_t l = 0; l < Lo; ++l, ++idx) {
                    const int64_t base = l * kernel;
                    S best = x->value.at(bi, c, base);
                    int64_t bestj = base;
                    for (int64_t j = 1; j < kernel; ++j) {
                        const S v = x->value.at(bi, c, base + j);
                        if (v > best) {
                            best = v;
                            bestj = base + j;
                        }
                    }
                    out.at(bi, c, l) = best;
                    (*argmax)[static_cast<size_t>(idx)] = bestj;
                }
        return make("maxpool1d", std::move(out), {x}, [argmax, B, C, L, Lo](Node* nd) {
            Node* x = nd->parents[0];
            if (!x->requires_grad) return;
            Tensor<S>& gx = ensure_grad(x);
            int64_t idx = 0;
            for (int64_t bi = 0; bi < B; ++bi)
                for (int64_t c = 0; c < C; ++c)
                    for (int64_t l = 0; l < Lo; ++l, ++idx)
                        gx.at(bi, c, (*argmax)[static_cast<size_t>(idx)]) += nd->grad.at(bi, c, l);
        });
    }

    // ---- normalization ----

    struct BatchNormState {
        Tensor<S>* running_mean = nullptr;
        Tensor<S>* running_var = nullptr;
        bool train = true;
        bool update_running = true;
        double momentum = 0.1;
        double eps = 1e-5;
    };

    // Per-channel batch norm over (B, C, L): statistics across batch and time.
    NodeRef batchnorm_channels(NodeRef x, NodeRef gamma, NodeRef beta, const BatchNormState& st) {
        const int64_t B = x->value.dim(0), C = x->value.dim(1), L = x->value.dim(2);
        return batchnorm_impl(x, gamma, beta, st, C, B * L,
                              [B, C, L](Tensor<S>& t, int64_t c, auto&& fn) {
                                  for (int64_t bi = 0; bi < B; ++bi)
                                      for (int64_t l = 0; l < L; ++l) fn(t.at(bi, c, l));
                              });
    }

    // Per-feature batch norm over (N, F): statistics across the batch.
    NodeRef batchnorm_features(NodeRef x, NodeRef gamma, NodeRef beta, const BatchNormState& st) {
        const int64_t N = x->value.dim(0), F = x->value.dim(1);
        return batchnorm_impl(x, gamma, beta, st, F, N, [N, F](Tensor<S>& t, int64_t f, auto&& fn) {
            for (int64_t i = 0; i < N; ++i) fn(t.at(i, f));
        });
    }

    NodeRef layernorm_rows(NodeRef x, NodeRef gamma, NodeRef beta, double eps = 1e-5) {
        const int64_t n = x->value.dim(0), d = x->value.dim(1);
        if (gamma->value.size() != d || beta->value.size() != d)
            throw std::invalid_argument("layernorm: parameter size mismatch");
        Tensor<S> out({n, d});
        auto xhat = std::make_shared<Tensor<S>>(std::vector<int64_t>{n, d});
        auto inv_sd = std::make_shared<std::vector<S>>(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i) {
            const S* xi = x->value.data() + i * d;
            double mu = 0;
            for (int64_t j = 0; j < d; ++j) mu += xi[j];
            mu /= static_cast<double>(d);
            double var = 0;
            for (int64_t j = 0; j < d; ++j) var += (xi[j] - mu) * (xi[j] - mu);
            var /= static_cast<double>(d);
            const S isd = S(1.0 / std::sqrt(var + eps));
            (*inv_sd)[static_cast<size_t>(i)] = isd;
            for (int64_t j = 0; j < d; ++j) {
                const S xh = (xi[j] - S(mu)) * isd;
                xhat->at(i, j) = xh;
                out.at(i, j) = gamma->value[j] * xh + beta->value[j];
            }
        }
        return make("layernorm", std::move(out), {x, gamma, beta}, [xhat, inv_sd, n, d](Node* nd) {
            Node *x = nd->parents[0], *gamma = nd->parents[1], *beta = nd->parents[2];
            if (gamma->requires_grad) {
                Tensor<S>& gg = ensure_grad(gamma);
                for (int64_t i = 0; i < n; ++i)
                    for (int64_t j = 0; j < d; ++j) gg[j] += nd->grad.at(i, j) * xhat->at(i, j);
            }
            if (beta->requires_grad) {
                Tensor<S>& gb = ensure_grad(beta);
                for (int64_t i = 0; i < n; ++i)
                    for (int64_t j = 0; j < d; ++j) gb[j] += nd->grad.at(i, j);
            }
            if (x->requires_grad) {
                Tensor<S>& gx = ensure_grad(x);
                for (int64_t i = 0; i < n; ++i) {
                    double mean_gy = 0, mean_gyx = 0;
                    for (int64_t j = 0; j < d; ++j) {
                        const double gy = nd->grad.at(i, j) * gamma->value[j];
                        mean_gy += gy;
                        mean_gyx += gy * xhat->at(i, j);
                    }
                    mean_gy /= static_cast<double>(d);
                    mean_gyx /= static_cast<double>(d);
                    const S isd = (*inv_sd)[static_cast<size_t>(i)];
                    for (int64_t j = 0; j < d; ++j) {
                        const double gy = nd->grad.at(i, j) * gamma->value[j];
                        gx.at(i, j) += S((gy - mean_gy - xhat->at(i, j) * mean_gyx)) * isd;
                    }
                }
            }
        });
    }

    // ---- attention & token plumbing ----

    // Fused scaled-dot-product multi-head self-attention. q/k/v are already
    // projected, laid out as (B*N, C) with C = H * head_dim.
    NodeRef attention(NodeRef q, NodeRef k, NodeRef v, int64_t B, int64_t N, int64_t H) {
        const int64_t C = q->value.dim(1);
        if (q->value.dim(0) != B * N || C % H != 0)
            throw std::invalid_argument("attention: bad token layout");
        const int64_t hd = C / H;
        const S inv_sqrt = S(1.0 / std::sqrt(static_cast<double>(hd)));
        Tensor<S> out({B * N, C});
        auto probs = std::make_shared<std::vector<Tensor<S>>>();  // per (b,h): (N,N)
        probs->reserve(static_cast<size_t>(B * H));
        for (int64_t b = 0; b < B; ++b)
            for (int64_t h = 0; h < H; ++h) {
                Tensor<S> p({N, N});
                for (int64_t i = 0; i < N; ++i) {
                    const S* qi = q->value.data() + (b * N + i) * C + h * hd;
                    S mx = -std::numeric_limits<S>::infinity();
                    for (int64_t j = 0; j < N; ++j) {
                        const S* kj = k->value.data() + (b * N + j) * C + h * hd;
                        S s = S(0);
                        for (int64_t t = 0; t < hd; ++t) s += qi[t] * kj[t];
                        s *= inv_sqrt;
                        p.at(i, j) = s;
                        mx = std::max(mx, s);
                    }
                    S z = S(0);
                    for (int64_t j = 0; j < N; ++j) {
                        const S e = std::exp(p.at(i, j) - mx);
                        p.at(i, j) = e;
                        z += e;
                    }
                    for (int64_t j = 0; j < N; ++j) p.at(i, j) /= z;
                    S* oi = out.data() + (b * N + i) * C + h * hd;
                    std::fill(oi, oi + hd, S(0));
                    for (int64_t j = 0; j < N; ++j) {
                        const S pij = p.at(i, j);
                        const S* vj = v->value.data() + (b * N + j) * C + h * hd;
                        for (int64_t t = 0; t < hd; ++t) oi[t] += pij * vj[t];
                    }
                }
                probs->push_back(std::move(p));
            }
        return make("attention", std::move(out), {q, k, v}, [probs, B, N, H, C, hd, inv_sqrt](Node* nd) {
            Node *q = nd->parents[0], *k = nd->parents[1], *v = nd->parents[2];
            Tensor<S>& gq = ensure_grad(q);
            Tensor<S>& gk = ensure_grad(k);
            Tensor<S>& gv = ensure_grad(v);
            Tensor<S> dp({N, N}), ds({N, N});
            for (int64_t b = 0; b < B; ++b)
                for (int64_t h = 0; h < H; ++h) {
                    const Tensor<S>& p = (*probs)[static_cast<size_t>(b * H + h)];
                    // dV += P^T dO ; dP = dO V^T
                    for (int64_t i = 0; i < N; ++i) {
                        const S* go = nd->grad.data() + (b * N + i) * C + h * hd;
                        for (int64_t j = 0; j < N; ++j) {
                            const S* vj = v->value.data() + (b * N + j) * C + h * hd;
                            S* gvj = gv.data() + (b * N + j) * C + h * hd;
                            const S pij = p.at(i, j);
                            S acc = S(0);
                            for (int64_t t = 0; t < hd; ++t) {
                                acc += go[t] * vj[t];
                                gvj[t] += pij * go[t];
                            }
                            dp.at(i, j) = acc;
                        }
                    }
                    // dS = P o (dP - rowsum(dP o P))
                    for (int64_t i = 0; i < N; ++i) {
                        S rs = S(0);
                        for (int64_t j = 0; j < N; ++j) rs += dp.at(i, j) * p.at(i, j);
                        for (int64_t j = 0; j < N; ++j)
                            ds.at(i, j) = p.at(i, j) * (dp.at(i, j) - rs) * inv_sqrt;
                    }
                    // dQ += dS K ; dK += dS^T Q
                    for (int64_t i = 0; i < N; ++i) {
                        S* gqi = gq.data() + (b * N + i) * C + h * hd;
                        const S* qi = q->value.data() + (b * N + i) * C + h * hd;
                        for (int64_t j = 0; j < N; ++j) {
                            const S d = ds.at(i, j);
                            if (d == S(0)) continue;
                            const S* kj = k->value.data() + (b * N + j) * C + h * hd;
                            S* gkj = gk.data() + (b * N + j) * C + h * hd;
                            for (int64_t t = 0; t < hd; ++t) {
                                gqi[t] += d * kj[t];
                                gkj[t] += d * qi[t];
                            }
                        }
                    }
                }
        });
    }

    // (B*N, C) tokens + one learned (1, C) token -> (B*(N+1), C), token first in
    // every block.
    NodeRef prepend_token_per_block(NodeRef tokens, NodeRef tok, int64_t B, int64_t N) {
        const int64_t C = tokens->value.dim(1);
        if (tokens->value.dim(0) != B * N || tok->value.size() != C)
            throw std::invalid_argument("prepend_token_per_block: shape mismatch");
        Tensor<S> out({B * (N + 1), C});
        for (int64_t b = 0; b < B; ++b) {
            S* dst = out.data() + b * (N + 1) * C;
            std::copy(tok->value.data(), tok->value.data() + C, dst);
            std::copy(tokens->value.data() + b * N * C, tokens->value.data() + (b + 1) * N * C, dst + C);
        }
        return make("prepend_token", std::move(out), {tokens, tok}, [B, N, C](Node* nd) {
            Node *tokens = nd->parents[0], *tok = nd->parents[1];
            if (tok->requires_grad) {
                Tensor<S>& gt = ensure_grad(tok);
                for (int64_t b = 0; b < B; ++b) {
                    const S* g = nd->grad.data() + b * (N + 1) * C;
                    for (int64_t c = 0; c < C; ++c) gt[c] += g[c];
                }
            }
            if (tokens->requires_grad) {
                Tensor<S>& gx = ensure_grad(tokens);
                for (int64_t b = 0; b < B; ++b) {
                    const S* g = nd->grad.data() + (b * (N + 1) + 1) * C;
                    S* dst = gx.data() + b * N * C;
                    for (int64_t i = 0; i < N * C; ++i) dst[i] += g[i];
                }
            }
        });
    }

    // First row of each N-row block: (B*N, C) -> (B, C).
    NodeRef first_row_per_block(NodeRef x, int64_t B, int64_t N) {
        const int64_t C = x->value.dim(1);
        if (x->value.dim(0) != B * N) throw std::invalid_argument("first_row_per_block: shape mismatch");
        Tensor<S> out({B, C});
        for (int64_t b = 0; b < B; ++b)
            std::copy(x->value.data() + b * N * C, x->value.data() + b * N * C + C, out.data() + b * C);
        return make("first_row_per_block", std::move(out), {x}, [B, N, C](Node* nd) {
            Node* x = nd->parents[0];
            if (!x->requires_grad) return;
            Tensor<S>& gx = ensure_grad(x);
            for (int64_t b = 0; b < B; ++b)
                for (int64_t c = 0; c < C; ++c) gx.at(b * N, c) += nd->grad.at(b, c);
        });
    }

    // (B, C, L) -> (B*Lp, C) token rows in time order, keeping the first Lp steps.
    NodeRef time_tokens(NodeRef x, int64_t Lp) {
        const int64_t B = x->value.dim(0), C = x->value.dim(1), L = x->value.dim(2);
        if (Lp < 1 || Lp > L) throw std::invalid_argument("time_tokens: bad prefix length");
        Tensor<S> out({B * Lp, C});
        for (int64_t b = 0; b < B; ++b)
            for (int64_t l = 0; l < Lp; ++l)
                for (int64_t c = 0; c < C; ++c) out.at(b * Lp + l, c) = x->value.at(b, c, l);
        return make("time_tokens", std::move(out), {x}, [B, C, Lp](Node* nd) {
            Node* x = nd->parents[0];
            if (!x->requires_grad) return;
            Tensor<S>& gx = ensure_grad(x);
            for (int64_t b = 0; b < B; ++b)
                for (int64_t l = 0; l < Lp; ++l)
                    for (int64_t c = 0; c < C; ++c) gx.at(b, c, l) += nd->grad.at(b * Lp + l, c);
        });
    }

    // Last time step: (B, C, L) -> (B, C).
    NodeRef last_step(NodeRef x) {
        const int64_t B = x->value.dim(0), C = x->value.dim(1), L = x->value.dim(2);
        Tensor<S> out({B, C});
        for (int64_t b = 0; b < B; ++b)
            for (int64_t c = 0; c < C; ++c) out.at(b, c) = x->value.at(b, c, L - 1);
        return make("last_step", std::move(out), {x}, [B, C, L](Node* nd) {
            Node* x = nd->parents[0];
            if (!x->requires_grad) return;
            Tensor<S>& gx = ensure_grad(x);
            for (int64_t b = 0; b < B; ++b)
                for (int64_t c = 0; c < C; ++c) gx.at(b, c, L - 1) += nd->grad.at(b, c);
        });
    }

    // (B, C, L) -> (B, L*C); row b is [z^1 ; z^2 ; ... ; z^L] (time-major).
    NodeRef flatten_time_major(NodeRef x) {
        const int64_t B = x->value.dim(0), C = x->value.dim(1), L = x->value.dim(2);
        Tensor<S> out({B, L * C});
        for (int64_t b = 0; b < B; ++b)
            for (int64_t l = 0; l < L; ++l)
                for (int64_t c = 0; c < C; ++c) out.at(b, l * C + c) = x->value.at(b, c, l);
        return make("flatten_time_major", std::move(out), {x}, [B, C, L](Node* nd) {
            Node* x = nd->parents[0];
            if (!x->requires_grad) return;
            Tensor<S>& gx = ensure_grad(x);
            for (int64_t b = 0; b < B; ++b)
                for (int64_t l = 0; l < L; ++l)
                    for (int64_t c = 0; c < C; ++c) gx.at(b, c, l) += nd->grad.at(b, l * C + c);
        });
    }

    NodeRef concat_rows(const std::vector<NodeRef>& parts) {
        if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
        const int64_t C = parts[0]->value.dim(1);
        int64_t rows = 0;
        for (NodeRef p : parts) {
            if (p->value.dim(1) != C) throw std::invalid_argument("concat_rows: column mismatch");
            rows += p->value.dim(0);
        }
        Tensor<S> out({rows, C});
        int64_t r = 0;
        for (NodeRef p : parts) {
            std::copy(p->value.data(), p->value.data() + p->value.size(), out.data() + r * C);
            r += p->value.dim(0);
        }
        std::vector<Node*> parents(parts.begin(), parts.end());
        return make("concat_rows", std::move(out), std::move(parents), [C](Node* nd) {
            int64_t r = 0;
            for (Node* p : nd->parents) {
                const int64_t n = p->value.dim(0);
                if (p->requires_grad) {
                    Tensor<S>& gp = ensure_grad(p);
                    const S* src = nd->grad.data() + r * C;
                    for (int64_t i = 0; i < n * C; ++i) gp[i] += src[i];
                }
                r += n;
            }
        });
    }

    // Row i of the output is row (i+1) mod n of the input.
    NodeRef rotate_rows_up(NodeRef x) {
        const int64_t n = x->value.dim(0), C = x->value.dim(1);
        Tensor<S> out({n, C});
        for (int64_t i = 0; i < n; ++i) {
            const int64_t src = (i + 1) % n;
            std::copy(x->value.data() + src * C, x->value.data() + (src + 1) * C, out.data() + i * C);
        }
        return make("rotate_rows_up", std::move(out), {x}, [n, C](Node* nd) {
            Node* x = nd->parents[0];
            if (!x->requires_grad) return;
            Tensor<S>& gx = ensure_grad(x);
            for (int64_t i = 0; i < n; ++i) {
                const int64_t src = (i + 1) % n;
                for (int64_t c = 0; c < C; ++c) gx.at(src, c) += nd->grad.at(i, c);
            }
        });
    }

    NodeRef l2_normalize_rows(NodeRef x) {
        const int64_t n = x->value.dim(0), d = x->value.dim(1);
        Tensor<S> out({n, d});
        auto norms = std::make_shared<std::vector<S>>(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i) {
            double s = 0;
            for (int64_t j = 0; j < d; ++j) s += double(x->value.at(i, j)) * double(x->value.at(i, j));
            const S nm = S(std::sqrt(s));
            if (nm == S(0)) throw std::invalid_argument("l2_normalize_rows: zero-norm row " + std::to_string(i));
            (*norms)[static_cast<size_t>(i)] = nm;
            for (int64_t j = 0; j < d; ++j) out.at(i, j) = x->value.at(i, j) / nm;
        }
        return make("l2_normalize_rows", std::move(out), {x}, [norms, n, d](Node* nd) {
            Node* x = nd->parents[0];
            if (!x->requires_grad) return;
            Tensor<S>& gx = ensure_grad(x);
            for (int64_t i = 0; i < n; ++i) {
                S dot = S(0);
                for (int64_t j = 0; j < d; ++j) dot += nd->grad.at(i, j) * nd->value.at(i, j);
                const S inv = S(1) / (*norms)[static_cast<size_t>(i)];
                for (int64_t j = 0; j < d; ++j)
                    gx.at(i, j) += (nd->grad.at(i, j) - dot * nd->value.at(i, j)) * inv;
            }
        });
    }

    NodeRef sum_all(NodeRef x) {
        Tensor<S> out({1, 1});
        S acc = S(0);
        for (int64_t i = 0; i < x->value.size(); ++i) acc += x->value[i];
        out[0] = acc;
        return make("sum_all", std::move(out), {x}, [](Node* nd) {
            Node* x = nd->parents[0];
            if (!x->requires_grad) return;
            Tensor<S>& gx = ensure_grad(x);
            for (int64_t i = 0; i < gx.size(); ++i) gx[i] += nd->grad[0];
        });
    }

    // ---- loss heads (scalar outputs, shape {1,1}) ----

    // InfoNCE with positives on the diagonal: -1/B sum_i log softmax(row_i)[i].
    NodeRef info_nce_diag(NodeRef logits) {
        const int64_t B = logits->value.dim(0);
        if (logits->value.dim(1) != B) throw std::invalid_argument("info_nce_diag: square matrix required");
        auto probs = std::make_shared<Tensor<S>>(std::vector<int64_t>{B, B});
        double loss = 0;
        for (int64_t i = 0; i < B; ++i) {
            const S* row = logits->value.data() + i * B;
            S mx = row[0];
            for (int64_t j = 1; j < B; ++j) mx = std::max(mx, row[j]);
            double z = 0;
            for (int64_t j = 0; j < B; ++j) z += std::exp(double(row[j] - mx));
            const double lse = double(mx) + std::log(z);
            loss += lse - double(row[i]);
            for (int64_t j = 0; j < B; ++j)
                probs->at(i, j) = S(std::exp(double(row[j]) - lse));
        }
        Tensor<S> out({1, 1});
        out[0] = S(loss / double(B));
        return make("info_nce_diag", std::move(out), {logits}, [probs, B](Node* nd) {
            Node* logits = nd->parents[0];
            if (!logits->requires_grad) return;
            Tensor<S>& g = ensure_grad(logits);
            const S up = nd->grad[0] / S(B);
            for (int64_t i = 0; i < B; ++i)
                for (int64_t j = 0; j < B; ++j)
                    g.at(i, j) += up * (probs->at(i, j) - (i == j ? S(1) : S(0)));
        });
    }

    // Soft-weighted contrastive head over a (3B, 3B) similarity matrix laid out
    // as [left originals | interpolated view | right originals]. Per element i it
    // averages the four pair terms
    //   l(i, B+i, 1-l_i), l(B+i, i, 1-l_i), l(B+i, 2B+i, l_i), l(2B+i, B+i, l_i)
    // where l(a, b, mu) = -mu*S[a,b] + logsumexp_{k != a} S[a,k].
    NodeRef soft_contrast_terms(NodeRef sim, const std::vector<double>& lambdas) {
        const int64_t n = sim->value.dim(0);
        const int64_t B = static_cast<int64_t>(lambdas.size());
        if (sim->value.dim(1) != n || n != 3 * B)
            throw std::invalid_argument("soft_contrast_terms: expects (3B,3B) similarities");
        // Masked softmax (diagonal excluded) per row; rows are reused as loss anchors
        // with multiplicity 1,2,1 for (left, mixed, right).
        auto probs = std::make_shared<Tensor<S>>(std::vector<int64_t>{n, n});
        std::vector<double> lse(static_cast<size_t>(n));
        for (int64_t r = 0; r < n; ++r) {
            const S* row = sim->value.data() + r * n;
            double mx = -std::numeric_limits<double>::infinity();
            for (int64_t k = 0; k < n; ++k)
                if (k != r) mx = std::max(mx, double(row[k]));
            double z = 0;
            for (int64_t k = 0; k < n; ++k)
                if (k != r) z += std::exp(double(row[k]) - mx);
            lse[static_cast<size_t>(r)] = mx + std::log(z);
            for (int64_t k = 0; k < n; ++k)
                probs->at(r, k) = k == r ? S(0) : S(std::exp(double(row[k]) - lse[static_cast<size_t>(r)]));
        }
        double loss = 0;
        for (int64_t i = 0; i < B; ++i) {
            const double li = lambdas[static_cast<size_t>(i)];
            loss += -(1.0 - li) * (double(sim->value.at(i, B + i)) + double(sim->value.at(B + i, i)));
            loss += -li * (double(sim->value.at(B + i, 2 * B + i)) + double(sim->value.at(2 * B + i, B + i)));
            loss += lse[static_cast<size_t>(i)] + 2.0 * lse[static_cast<size_t>(B + i)] + lse[static_cast<size_t>(2 * B + i)];
        }
        Tensor<S> out({1, 1});
        out[0] = S(loss / double(4 * B));
        auto lam = std::make_shared<std::vector<double>>(lambdas);
        return make("soft_contrast_terms", std::move(out), {sim}, [probs, lam, n, B](Node* nd) {
            Node* sim = nd->parents[0];
            if (!sim->requires_grad) return;
            Tensor<S>& g = ensure_grad(sim);
            const double up = double(nd->grad[0]) / double(4 * B);
            for (int64_t i = 0; i < B; ++i) {
                const double li = (*lam)[static_cast<size_t>(i)];
                g.at(i, B + i) += S(-(1.0 - li) * up);
                g.at(B + i, i) += S(-(1.0 - li) * up);
                g.at(B + i, 2 * B + i) += S(-li * up);
                g.at(2 * B + i, B + i) += S(-li * up);
            }
            for (int64_t r = 0; r < n; ++r) {
                const double mult = (r >= B && r < 2 * B) ? 2.0 : 1.0;
                for (int64_t k = 0; k < n; ++k)
                    g.at(r, k) += S(mult * up * double(probs->at(r, k)));
            }
        });
    }

    // Mean cross-entropy from logits (N, C) against integer labels.
    NodeRef softmax_xent_mean(NodeRef logits, const std::vector<int>& labels) {
        const int64_t N = logits->value.dim(0), C = logits->value.dim(1);
        if (static_cast<int64_t>(labels.size()) != N)
            throw std::invalid_argument("softmax_xent_mean: label count mismatch");
        for (int y : labels)
            if (y < 0 || y >= C) throw std::out_of_range("softmax_xent_mean: label out of range");
        auto probs = std::make_shared<Tensor<S>>(std::vector<int64_t>{N, C});
        double loss = 0;
        for (int64_t i = 0; i < N; ++i) {
            const S* row = logits->value.data() + i * C;
            S mx = row[0];
            for (int64_t j = 1; j < C; ++j) mx = std::max(mx, row[j]);
            double z = 0;
            for (int64_t j = 0; j < C; ++j) z += std::exp(double(row[j] - mx));
            const double lse = double(mx) + std::log(z);
            loss += lse - double(row[labels[static_cast<size_t>(i)]]);
            for (int64_t j = 0; j < C; ++j) probs->at(i, j) = S(std::exp(double(row[j]) - lse));
        }
        Tensor<S> out({1, 1});
        out[0] = S(loss / double(N));
        auto lab = std::make_shared<std::vector<int>>(labels);
        return make("softmax_xent_mean", std::move(out), {logits}, [probs, lab, N, C](Node* nd) {
            Node* logits = nd->parents[0];
            if (!logits->requires_grad) return;
            Tensor<S>& g = ensure_grad(logits);
            const S up = nd->grad[0] / S(N);
            for (int64_t i = 0; i < N; ++i)
                for (int64_t j = 0; j < C; ++j)
                    g.at(i, j) += up * (probs->at(i, j) - (j == (*lab)[static_cast<size_t>(i)] ? S(1) : S(0)));
        });
    }

    // ---- driver ----

    void backward(NodeRef root) {
        if (root->value.size() != 1) throw std::invalid_argument("backward: root must be scalar");
        ensure_grad(root)[0] = S(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            Node& n = *it;
            if (n.grad.empty() || !n.backward) continue;
            n.backward(&n);
        }
    }

    size_t node_count() const { return nodes_.size(); }

    static Tensor<S>& ensure_grad(Node* n) {
        if (n->grad.empty()) n->grad = Tensor<S>::zeros_like(n->value);
        return n->grad;
    }

private:
    template <typename IterFn>
    NodeRef batchnorm_impl(NodeRef x, NodeRef gamma, NodeRef beta, const BatchNormState& st,
                           int64_t channels, int64_t per_channel, IterFn&& for_each) {
        if (gamma->value.size() != channels || beta->value.size() != channels)
            throw std::invalid_argument("batchnorm: parameter size mismatch");
        // Record each channel's flat element offsets once; forward and backward
        // walk the same order.
        auto offsets = std::make_shared<std::vector<std::vector<int64_t>>>(static_cast<size_t>(channels));
        for (int64_t c = 0; c < channels; ++c) {
            auto& offs = (*offsets)[static_cast<size_t>(c)];
            offs.reserve(static_cast<size_t>(per_channel));
            for_each(x->value, c, [&](S& v) {
                offs.push_back(static_cast<int64_t>(&v - x->value.data()));
            });
        }
        auto inv_sd = std::make_shared<std::vector<double>>(static_cast<size_t>(channels));
        auto xhat = std::make_shared<Tensor<S>>(x->value.shape());
        Tensor<S> out(x->value.shape());
        const double m = static_cast<double>(per_channel);
        for (int64_t c = 0; c < channels; ++c) {
            const auto& offs = (*offsets)[static_cast<size_t>(c)];
            double mu, var;
            if (st.train) {
                double s = 0;
                for (int64_t off : offs) s += double(x->value[off]);
                mu = s / m;
                double sq = 0;
                for (int64_t off : offs) sq += (double(x->value[off]) - mu) * (double(x->value[off]) - mu);
                var = sq / m;  // biased, used for normalization
                if (st.update_running) {
                    // running update uses the unbiased estimate, per the usual convention
                    const double unbiased = m > 1 ? sq / (m - 1) : 0.0;
                    Tensor<S>& rm = *st.running_mean;
                    Tensor<S>& rv = *st.running_var;
                    rm[c] = S((1.0 - st.momentum) * double(rm[c]) + st.momentum * mu);
                    rv[c] = S((1.0 - st.momentum) * double(rv[c]) + st.momentum * unbiased);
                }
            } else {
                mu = double((*st.running_mean)[c]);
                var = double((*st.running_var)[c]);
            }
            const double isd = 1.0 / std::sqrt(var + st.eps);
            (*inv_sd)[static_cast<size_t>(c)] = isd;
            const S g = gamma->value[c], b = beta->value[c];
            for (int64_t off : offs) {
                const S xh = S((double(x->value[off]) - mu) * isd);
                (*xhat)[off] = xh;
                out[off] = g * xh + b;
            }
        }
        const bool train = st.train;
        return make("batchnorm", std::move(out), {x, gamma, beta},
                    [offsets, inv_sd, xhat, channels, train, m](Node* nd) {
            Node *x = nd->parents[0], *gamma = nd->parents[1], *beta = nd->parents[2];
            for (int64_t c = 0; c < channels; ++c) {
                const auto& offs = (*offsets)[static_cast<size_t>(c)];
                double sum_gy = 0, sum_gy_xh = 0;
                for (int64_t off : offs) {
                    sum_gy += double(nd->grad[off]);
                    sum_gy_xh += double(nd->grad[off]) * double((*xhat)[off]);
                }
                if (gamma->requires_grad) ensure_grad(gamma)[c] += S(sum_gy_xh);
                if (beta->requires_grad) ensure_grad(beta)[c] += S(sum_gy);
                if (!x->requires_grad) continue;
                Tensor<S>& gx = ensure_grad(x);
                const double isd = (*inv_sd)[static_cast<size_t>(c)];
                const double g = double(gamma->value[c]);
                for (int64_t off : offs) {
                    const double gy = double(nd->grad[off]);
                    const double dx = train
                        ? g * isd * (gy - sum_gy / m - double((*xhat)[off]) * sum_gy_xh / m)
                        : g * isd * gy;
                    gx[off] += S(dx);
                }
            }
        });
    }

    static void accumulate_scaled(Node* p, const Tensor<S>& g, S c) {
        if (!p->requires_grad) return;
        Tensor<S>& gp = ensure_grad(p);
        for (int64_t i = 0; i < g.size(); ++i) gp[i] += c * g[i];
    }

    static void gemm(const S* a, const S* b, S* c, int64_t m, int64_t k, int64_t n) {
        for (int64_t i = 0; i < m; ++i) {
            S* ci = c + i * n;
            std::fill(ci, ci + n, S(0));
            for (int64_t p = 0; p < k; ++p) {
                const S av = a[i * k + p];
                if (av == S(0)) continue;
                const S* bp = b + p * n;
                for (int64_t j = 0; j < n; ++j) ci[j] += av * bp[j];
            }
        }
    }

    void require_same_shape(NodeRef a, NodeRef b, const char* name) {
        if (!a->value.same_shape(b->value))
            throw std::invalid_argument(std::string(name) + ": shape mismatch " +
                                        Tensor<S>::shape_str(a->value.shape()) + " vs " +
                                        Tensor<S>::shape_str(b->value.shape()));
    }

    NodeRef make(const char* name, Tensor<S> value, std::vector<Node*> parents,
                 std::function<void(Node*)> backward, bool leaf_requires_grad = false) {
        nodes_.emplace_back();
        Node& n = nodes_.back();
        n.value = std::move(value);
        n.parents = std::move(parents);
        n.name = name;
        if (n.parents.empty()) {
            n.requires_grad = leaf_requires_grad;
        } else {
            for (Node* p : n.parents) n.requires_grad = n.requires_grad || p->requires_grad;
            if (n.requires_grad) n.backward = std::move(backward);
        }
        if (check_finite && !n.value.all_finite())
            throw std::runtime_error(std::string("non-finite values produced by op '") + name + "'");
        return &n;
    }

    std::deque<Node> nodes_;
};

}  // namespace xit
