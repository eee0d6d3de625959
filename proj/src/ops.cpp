#include "lpt/ops.hpp"

#include <cmath>

namespace lpt::ops {

namespace {

constexpr double kNormFloor = 1e-12;

bool tracing(std::initializer_list<Tensor> ins) {
    if (!Tape::active()) return false;
    for (const auto& x : ins) {
        if (x.requires_grad()) return true;
    }
    return false;
}

void mark_traced(Tensor& out, std::initializer_list<Tensor> ins) {
    out.d_->requires_grad = true;
    Tape* t = Tape::active();
    for (const auto& x : ins) t->touch(x);
    t->touch(out);
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
}

// raw matmul into out (MxN += or =), row-major
void mm(const double* a, const double* b, double* c, std::size_t M, std::size_t K, std::size_t N,
        bool accumulate) {
    if (!accumulate) std::fill(c, c + M * N, 0.0);
    for (std::size_t i = 0; i < M; ++i) {
        const double* ai = a + i * K;
        double* ci = c + i * N;
        for (std::size_t k = 0; k < K; ++k) {
            double av = ai[k];
            if (av == 0.0) continue;
            const double* bk = b + k * N;
            for (std::size_t j = 0; j < N; ++j) ci[j] += av * bk[j];
        }
    }
}

double vnorm(const double* v, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += v[i] * v[i];
    return std::max(std::sqrt(s), kNormFloor);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
    if (tracing({a, b})) {
        mark_traced(out, {a, b});
        Tensor ac = a, bc = b, oc = out;
        Tape::active()->record([ac, bc, oc]() mutable {
            if (!oc.has_grad()) return;
            if (ac.requires_grad()) accumulate_grad(ac, oc.grad());
            if (bc.requires_grad()) accumulate_grad(bc, oc.grad());
        });
    }
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
    if (tracing({a, b})) {
        mark_traced(out, {a, b});
        Tensor ac = a, bc = b, oc = out;
        Tape::active()->record([ac, bc, oc]() mutable {
            if (!oc.has_grad()) return;
            if (ac.requires_grad()) accumulate_grad(ac, oc.grad());
            if (bc.requires_grad()) {
                auto& g = ensure_grad(bc);
                const auto& og = oc.grad();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] -= og[i];
            }
        });
    }
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
    if (tracing({a, b})) {
        mark_traced(out, {a, b});
        Tensor ac = a, bc = b, oc = out;
        Tape::active()->record([ac, bc, oc]() mutable {
            if (!oc.has_grad()) return;
            const auto& og = oc.grad();
            if (ac.requires_grad()) {
                auto& g = ensure_grad(ac);
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += og[i] * bc[i];
            }
            if (bc.requires_grad()) {
                auto& g = ensure_grad(bc);
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += og[i] * ac[i];
            }
        });
    }
    return out;
}

Tensor affine(const Tensor& x, double a, double b) {
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = a * x[i] + b;
    if (tracing({x})) {
        mark_traced(out, {x});
        Tensor xc = x, oc = out;
        Tape::active()->record([xc, oc, a]() mutable {
            if (!oc.has_grad() || !xc.requires_grad()) return;
            auto& g = ensure_grad(xc);
            const auto& og = oc.grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += a * og[i];
        });
    }
    return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.cols() != b.rows())
        throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a.shape()) +
                                    " and " + shape_str(b.shape()));
    const std::size_t M = a.rows(), K = a.cols(), N = b.cols();
    Tensor out(Shape{M, N});
    mm(a.data().data(), b.data().data(), out.data().data(), M, K, N, false);
    if (tracing({a, b})) {
        mark_traced(out, {a, b});
        Tensor ac = a, bc = b, oc = out;
        Tape::active()->record([ac, bc, oc, M, K, N]() mutable {
            if (!oc.has_grad()) return;
            const double* dc = oc.grad().data();
            if (ac.requires_grad()) {
                // dA = dC * B^T
                auto& ga = ensure_grad(ac);
                for (std::size_t i = 0; i < M; ++i)
                    for (std::size_t k = 0; k < K; ++k) {
                        double s = 0.0;
                        const double* bk = bc.data().data() + k * N;
                        const double* di = dc + i * N;
                        for (std::size_t j = 0; j < N; ++j) s += di[j] * bk[j];
                        ga[i * K + k] += s;
                    }
            }
            if (bc.requires_grad()) {
                // dB = A^T * dC
                auto& gb = ensure_grad(bc);
                for (std::size_t i = 0; i < M; ++i) {
                    const double* ai = ac.data().data() + i * K;
                    const double* di = dc + i * N;
                    for (std::size_t k = 0; k < K; ++k) {
                        double av = ai[k];
                        if (av == 0.0) continue;
                        double* gk = gb.data() + k * N;
                        for (std::size_t j = 0; j < N; ++j) gk[j] += av * di[j];
                    }
                }
            }
        });
    }
    return out;
}

Tensor transpose(const Tensor& x) {
    const std::size_t M = x.rows(), N = x.cols();
    Tensor out(Shape{N, M});
    for (std::size_t i = 0; i < M; ++i)
        for (std::size_t j = 0; j < N; ++j) out[j * M + i] = x[i * N + j];
    if (tracing({x})) {
        mark_traced(out, {x});
        Tensor xc = x, oc = out;
        Tape::active()->record([xc, oc, M, N]() mutable {
            if (!oc.has_grad() || !xc.requires_grad()) return;
            auto& g = ensure_grad(xc);
            const auto& og = oc.grad();
            for (std::size_t i = 0; i < M; ++i)
                for (std::size_t j = 0; j < N; ++j) g[i * N + j] += og[j * M + i];
        });
    }
    return out;
}

Tensor add_bias(const Tensor& x, const Tensor& b) {
    if (x.shape().size() != 2 || b.shape().size() != 1 || b.size() != x.cols())
        throw std::invalid_argument("add_bias: shapes " + shape_str(x.shape()) + " and " +
                                    shape_str(b.shape()));
    const std::size_t M = x.rows(), N = x.cols();
    Tensor out(Shape{M, N});
    for (std::size_t i = 0; i < M; ++i)
        for (std::size_t j = 0; j < N; ++j) out[i * N + j] = x[i * N + j] + b[j];
    if (tracing({x, b})) {
        mark_traced(out, {x, b});
        Tensor xc = x, bc = b, oc = out;
        Tape::active()->record([xc, bc, oc, M, N]() mutable {
            if (!oc.has_grad()) return;
            const auto& og = oc.grad();
            if (xc.requires_grad()) accumulate_grad(xc, og);
            if (bc.requires_grad()) {
                auto& g = ensure_grad(bc);
                for (std::size_t i = 0; i < M; ++i)
                    for (std::size_t j = 0; j < N; ++j) g[j] += og[i * N + j];
            }
        });
    }
    return out;
}

Tensor softmax(const Tensor& x, std::size_t axis) {
    const auto& sh = x.shape();
    std::size_t rank = sh.size();
    if (rank == 0 || rank > 2 || axis >= std::max<std::size_t>(rank, 1))
        throw std::invalid_argument("softmax: axis " + std::to_string(axis) +
                                    " invalid for shape " + shape_str(sh));
    // slice layout: `count` independent slices of length `len` with stride
    std::size_t len, count, stride, slice_step;
    if (rank == 1) {
        len = sh[0]; count = 1; stride = 1; slice_step = 0;
    } else if (axis == 1) {
        len = sh[1]; count = sh[0]; stride = 1; slice_step = sh[1];
    } else {
        len = sh[0]; count = sh[1]; stride = sh[1]; slice_step = 1;
    }
    Tensor out(x.shape());
    for (std::size_t s = 0; s < count; ++s) {
        const double* xs = x.data().data() + s * slice_step;
        double* os = out.data().data() + s * slice_step;
        double mx = xs[0];
        for (std::size_t i = 1; i < len; ++i) mx = std::max(mx, xs[i * stride]);
        double sum = 0.0;
        for (std::size_t i = 0; i < len; ++i) {
            double e = std::exp(xs[i * stride] - mx);
            os[i * stride] = e;
            sum += e;
        }
        for (std::size_t i = 0; i < len; ++i) os[i * stride] /= sum;
    }
    if (tracing({x})) {
        mark_traced(out, {x});
        Tensor xc = x, oc = out;
        Tape::active()->record([xc, oc, len, count, stride, slice_step]() mutable {
            if (!oc.has_grad() || !xc.requires_grad()) return;
            auto& g = ensure_grad(xc);
            const auto& og = oc.grad();
            for (std::size_t s = 0; s < count; ++s) {
                const double* ys = oc.data().data() + s * slice_step;
                const double* dys = og.data() + s * slice_step;
                double* gs = g.data() + s * slice_step;
                double dot = 0.0;
                for (std::size_t i = 0; i < len; ++i) dot += ys[i * stride] * dys[i * stride];
                for (std::size_t i = 0; i < len; ++i)
                    gs[i * stride] += ys[i * stride] * (dys[i * stride] - dot);
            }
        });
    }
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    if (eps <= 0.0) throw std::invalid_argument("layer_norm: eps must be > 0");
    std::size_t rank = x.shape().size();
    if (rank == 0 || rank > 2) throw std::invalid_argument("layer_norm: tensor must be 1-d or 2-d");
    std::size_t N = x.shape()[rank - 1];
    std::size_t M = (rank == 2) ? x.shape()[0] : 1;
    if (gain.size() != N || bias.size() != N)
        throw std::invalid_argument("layer_norm: gain/bias length " +
                                    std::to_string(gain.size()) + " vs last axis " +
                                    std::to_string(N));
    Tensor out(x.shape());
    std::vector<double> inv_std(M), xhat(M * N);
    for (std::size_t i = 0; i < M; ++i) {
        const double* xi = x.data().data() + i * N;
        double mean = 0.0;
        for (std::size_t j = 0; j < N; ++j) mean += xi[j];
        mean /= N;
        double var = 0.0;
        for (std::size_t j = 0; j < N; ++j) var += (xi[j] - mean) * (xi[j] - mean);
        var /= N;
        double is = 1.0 / std::sqrt(var + eps);
        inv_std[i] = is;
        for (std::size_t j = 0; j < N; ++j) {
            double xh = (xi[j] - mean) * is;
            xhat[i * N + j] = xh;
            out[i * N + j] = gain[j] * xh + bias[j];
        }
    }
    if (tracing({x, gain, bias})) {
        mark_traced(out, {x, gain, bias});
        Tensor xc = x, gc = gain, bc = bias, oc = out;
        auto isv = std::make_shared<std::vector<double>>(std::move(inv_std));
        auto xhv = std::make_shared<std::vector<double>>(std::move(xhat));
        Tape::active()->record([xc, gc, bc, oc, isv, xhv, M, N]() mutable {
            if (!oc.has_grad()) return;
            const auto& og = oc.grad();
            for (std::size_t i = 0; i < M; ++i) {
                const double* dy = og.data() + i * N;
                const double* xh = xhv->data() + i * N;
                if (xc.requires_grad()) {
                    auto& gx = ensure_grad(xc);
                    double m1 = 0.0, m2 = 0.0;
                    for (std::size_t j = 0; j < N; ++j) {
                        double gd = gc[j] * dy[j];
                        m1 += gd;
                        m2 += gd * xh[j];
                    }
                    m1 /= N;
                    m2 /= N;
                    for (std::size_t j = 0; j < N; ++j)
                        gx[i * N + j] += (*isv)[i] * (gc[j] * dy[j] - m1 - xh[j] * m2);
                }
                if (gc.requires_grad()) {
                    auto& gg = ensure_grad(gc);
                    for (std::size_t j = 0; j < N; ++j) gg[j] += dy[j] * xh[j];
                }
                if (bc.requires_grad()) {
                    auto& gb = ensure_grad(bc);
                    for (std::size_t j = 0; j < N; ++j) gb[j] += dy[j];
                }
            }
        });
    }
    return out;
}

Tensor activation(const Tensor& x, Act kind) {
    constexpr double c0 = 0.7978845608028654;  // sqrt(2/pi)
    constexpr double c1 = 0.044715;
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        double v = x[i];
        if (kind == Act::relu) {
            out[i] = v > 0.0 ? v : 0.0;
        } else {
            double t = std::tanh(c0 * (v + c1 * v * v * v));
            out[i] = 0.5 * v * (1.0 + t);
        }
    }
    if (tracing({x})) {
        mark_traced(out, {x});
        Tensor xc = x, oc = out;
        Tape::active()->record([xc, oc, kind]() mutable {
            if (!oc.has_grad() || !xc.requires_grad()) return;
            auto& g = ensure_grad(xc);
            const auto& og = oc.grad();
            for (std::size_t i = 0; i < g.size(); ++i) {
                double v = xc[i], d;
                if (kind == Act::relu) {
                    d = v > 0.0 ? 1.0 : 0.0;
                } else {
                    double u = c0 * (v + c1 * v * v * v);
                    double t = std::tanh(u);
                    double du = c0 * (1.0 + 3.0 * c1 * v * v);
                    d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
                }
                g[i] += og[i] * d;
            }
        });
    }
    return out;
}

Tensor log_clamped(const Tensor& x, double floor) {
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::log(std::max(x[i], floor));
    if (tracing({x})) {
        mark_traced(out, {x});
        Tensor xc = x, oc = out;
        Tape::active()->record([xc, oc, floor]() mutable {
            if (!oc.has_grad() || !xc.requires_grad()) return;
            auto& g = ensure_grad(xc);
            const auto& og = oc.grad();
            for (std::size_t i = 0; i < g.size(); ++i)
                if (xc[i] > floor) g[i] += og[i] / xc[i];
        });
    }
    return out;
}

Tensor pow_const(const Tensor& x, double p) {
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = (p == 0.0) ? 1.0 : std::pow(x[i], p);
    if (tracing({x})) {
        mark_traced(out, {x});
        Tensor xc = x, oc = out;
        Tape::active()->record([xc, oc, p]() mutable {
            if (!oc.has_grad() || !xc.requires_grad() || p == 0.0) return;
            auto& g = ensure_grad(xc);
            const auto& og = oc.grad();
            for (std::size_t i = 0; i < g.size(); ++i)
                g[i] += og[i] * p * std::pow(xc[i], p - 1.0);
        });
    }
    return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    if (shape.empty() || n != x.size())
        throw std::invalid_argument("reshape: " + shape_str(x.shape()) + " to " +
                                    shape_str(shape) + " changes element count");
    Tensor out(std::move(shape), x.data());
    if (tracing({x})) {
        mark_traced(out, {x});
        Tensor xc = x, oc = out;
        Tape::active()->record([xc, oc]() mutable {
            if (!oc.has_grad() || !xc.requires_grad()) return;
            accumulate_grad(xc, oc.grad());
        });
    }
    return out;
}

Tensor sum_all(const Tensor& x) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += x[i];
    Tensor out = Tensor::scalar(s);
    if (tracing({x})) {
        mark_traced(out, {x});
        Tensor xc = x, oc = out;
        Tape::active()->record([xc, oc]() mutable {
            if (!oc.has_grad() || !xc.requires_grad()) return;
            auto& g = ensure_grad(xc);
            double og = oc.grad()[0];
            for (auto& v : g) v += og;
        });
    }
    return out;
}

Tensor mean_all(const Tensor& x) { return affine(sum_all(x), 1.0 / double(x.size()), 0.0); }

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: empty input");
    std::size_t N = parts[0].cols(), M = 0;
    for (const auto& p : parts) {
        if (p.cols() != N)
            throw std::invalid_argument("concat_rows: column mismatch " + shape_str(p.shape()));
        M += p.rows();
    }
    Tensor out(Shape{M, N});
    std::size_t r = 0;
    for (const auto& p : parts) {
        std::copy(p.data().begin(), p.data().end(), out.data().begin() + r * N);
        r += p.rows();
    }
    bool any = false;
    if (Tape::active())
        for (const auto& p : parts) any = any || p.requires_grad();
    if (any) {
        out.d_->requires_grad = true;
        Tape* t = Tape::active();
        for (const auto& p : parts) t->touch(p);
        t->touch(out);
        auto pc = parts;
        Tensor oc = out;
        t->record([pc, oc, N]() mutable {
            if (!oc.has_grad()) return;
            const auto& og = oc.grad();
            std::size_t r = 0;
            for (auto& p : pc) {
                if (p.requires_grad()) {
                    auto& g = ensure_grad(p);
                    for (std::size_t i = 0; i < g.size(); ++i) g[i] += og[r * N + i];
                }
                r += p.rows();
            }
        });
    }
    return out;
}

Tensor slice_rows(const Tensor& x, std::size_t r0, std::size_t r1) {
    if (r0 >= r1 || r1 > x.rows())
        throw std::invalid_argument("slice_rows: bad range [" + std::to_string(r0) + ", " +
                                    std::to_string(r1) + ") of " + shape_str(x.shape()));
    std::size_t N = x.cols();
    Tensor out(Shape{r1 - r0, N});
    std::copy(x.data().begin() + r0 * N, x.data().begin() + r1 * N, out.data().begin());
    if (tracing({x})) {
        mark_traced(out, {x});
        Tensor xc = x, oc = out;
        Tape::active()->record([xc, oc, r0, N]() mutable {
            if (!oc.has_grad() || !xc.requires_grad()) return;
            auto& g = ensure_grad(xc);
            const auto& og = oc.grad();
            for (std::size_t i = 0; i < og.size(); ++i) g[r0 * N + i] += og[i];
        });
    }
    return out;
}

Tensor slice_cols(const Tensor& x, std::size_t c0, std::size_t c1) {
    if (c0 >= c1 || c1 > x.cols())
        throw std::invalid_argument("slice_cols: bad range [" + std::to_string(c0) + ", " +
                                    std::to_string(c1) + ") of " + shape_str(x.shape()));
    std::size_t M = x.rows(), N = x.cols(), W = c1 - c0;
    Tensor out(Shape{M, W});
    for (std::size_t i = 0; i < M; ++i)
        for (std::size_t j = 0; j < W; ++j) out[i * W + j] = x[i * N + c0 + j];
    if (tracing({x})) {
        mark_traced(out, {x});
        Tensor xc = x, oc = out;
        Tape::active()->record([xc, oc, c0, M, N, W]() mutable {
            if (!oc.has_grad() || !xc.requires_grad()) return;
            auto& g = ensure_grad(xc);
            const auto& og = oc.grad();
            for (std::size_t i = 0; i < M; ++i)
                for (std::size_t j = 0; j < W; ++j) g[i * N + c0 + j] += og[i * W + j];
        });
    }
    return out;
}

Tensor cosine_scores(const Tensor& weights, const Tensor& feature, double sigma) {
    if (weights.shape().size() != 2 || feature.shape().size() != 1 ||
        weights.cols() != feature.size())
        throw std::invalid_argument("cosine_scores: shapes " + shape_str(weights.shape()) +
                                    " and " + shape_str(feature.shape()));
    const std::size_t C = weights.rows(), D = weights.cols();
    double nc = vnorm(feature.data().data(), D);
    Tensor out(Shape{C});
    for (std::size_t i = 0; i < C; ++i) {
        const double* wi = weights.data().data() + i * D;
        double dotv = 0.0;
        for (std::size_t j = 0; j < D; ++j) dotv += wi[j] * feature[j];
        out[i] = sigma * dotv / (vnorm(wi, D) * nc);
    }
    if (tracing({weights, feature})) {
        mark_traced(out, {weights, feature});
        Tensor wc = weights, fc = feature, oc = out;
        Tape::active()->record([wc, fc, oc, sigma, C, D]() mutable {
            if (!oc.has_grad()) return;
            const auto& og = oc.grad();
            double nc = vnorm(fc.data().data(), D);
            for (std::size_t i = 0; i < C; ++i) {
                if (og[i] == 0.0) continue;
                const double* wi = wc.data().data() + i * D;
                double nw = vnorm(wi, D);
                double dotv = 0.0;
                for (std::size_t j = 0; j < D; ++j) dotv += wi[j] * fc[j];
                if (fc.requires_grad()) {
                    auto& g = ensure_grad(fc);
                    for (std::size_t j = 0; j < D; ++j)
                        g[j] += og[i] * sigma *
                                (wi[j] / (nw * nc) - dotv * fc[j] / (nw * nc * nc * nc));
                }
                if (wc.requires_grad()) {
                    auto& g = ensure_grad(wc);
                    for (std::size_t j = 0; j < D; ++j)
                        g[i * D + j] += og[i] * sigma *
                                        (fc[j] / (nw * nc) - dotv * wi[j] / (nw * nw * nw * nc));
                }
            }
        });
    }
    return out;
}

Tensor cosine_sim(const Tensor& a, const Tensor& b) {
    if (a.shape().size() != 1 || b.shape().size() != 1 || a.size() != b.size())
        throw std::invalid_argument("cosine_sim: shapes " + shape_str(a.shape()) + " and " +
                                    shape_str(b.shape()));
    const std::size_t D = a.size();
    double na = vnorm(a.data().data(), D), nb = vnorm(b.data().data(), D);
    double dotv = 0.0;
    for (std::size_t j = 0; j < D; ++j) dotv += a[j] * b[j];
    Tensor out = Tensor::scalar(dotv / (na * nb));
    if (tracing({a, b})) {
        mark_traced(out, {a, b});
        Tensor ac = a, bc = b, oc = out;
        Tape::active()->record([ac, bc, oc, D]() mutable {
            if (!oc.has_grad()) return;
            double og = oc.grad()[0];
            double na = vnorm(ac.data().data(), D), nb = vnorm(bc.data().data(), D);
            double dotv = 0.0;
            for (std::size_t j = 0; j < D; ++j) dotv += ac[j] * bc[j];
            if (ac.requires_grad()) {
                auto& g = ensure_grad(ac);
                for (std::size_t j = 0; j < D; ++j)
                    g[j] += og * (bc[j] / (na * nb) - dotv * ac[j] / (na * na * na * nb));
            }
            if (bc.requires_grad()) {
                auto& g = ensure_grad(bc);
                for (std::size_t j = 0; j < D; ++j)
                    g[j] += og * (ac[j] / (na * nb) - dotv * bc[j] / (na * nb * nb * nb));
            }
        });
    }
    return out;
}

}  // namespace lpt::ops
