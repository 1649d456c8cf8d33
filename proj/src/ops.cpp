#include "hkt/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include "hkt/errors.hpp"

namespace hkt {

namespace {

void check_finite(const Tensor& t, const char* op) {
    for (double v : t.data) {
        if (!std::isfinite(v)) {
            throw NumericError(std::string(op) + ": produced a non-finite value");
        }
    }
}

void require_same_shape(const TensorPtr& a, const TensorPtr& b, const char* op) {
    if (a->shape != b->shape) {
        throw DimensionError(std::string(op) + ": shapes disagree: " + shape_str(a->shape) +
                             " vs " + shape_str(b->shape));
    }
}

void require_rank(const TensorPtr& t, std::size_t rank, const char* op) {
    if (t->shape.size() != rank) {
        throw DimensionError(std::string(op) + ": expected rank-" + std::to_string(rank) +
                             " tensor, got " + shape_str(t->shape));
    }
}

}  // namespace

TensorPtr matmul(const TensorPtr& a, const TensorPtr& b) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    const std::size_t m = a->shape[0], k = a->shape[1], n = b->shape[1];
    if (b->shape[0] != k) {
        throw DimensionError("matmul: inner dimensions disagree: " + shape_str(a->shape) +
                             " vs " + shape_str(b->shape));
    }
    auto out = zeros({m, n});
    {
        const double* pa = a->data.data();
        const double* pb = b->data.data();
        double* po = out->data.data();
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t p = 0; p < k; ++p) {
                const double av = pa[i * k + p];
                const double* brow = pb + p * n;
                double* orow = po + i * n;
                for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
            }
        }
    }
    check_finite(*out, "matmul");
    const bool ga = tracks_grad(a), gb = tracks_grad(b);
    if (Tape* tape = Tape::active(); tape != nullptr && (ga || gb)) {
        tape->record(out, {a, b}, [a, b, out, ga, gb, m, k, n] {
            const double* g = out->grad.data();
            if (ga) {
                a->ensure_grad();
                // dA = G * B^T
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t p = 0; p < k; ++p) {
                        double acc = 0.0;
                        const double* grow = g + i * n;
                        const double* brow = b->data.data() + p * n;
                        for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                        a->grad[i * k + p] += acc;
                    }
                }
            }
            if (gb) {
                b->ensure_grad();
                // dB = A^T * G
                for (std::size_t p = 0; p < k; ++p) {
                    for (std::size_t i = 0; i < m; ++i) {
                        const double av = a->data[i * k + p];
                        const double* grow = g + i * n;
                        double* brow = b->grad.data() + p * n;
                        for (std::size_t j = 0; j < n; ++j) brow[j] += av * grow[j];
                    }
                }
            }
        });
    }
    return out;
}

TensorPtr transpose2d(const TensorPtr& a) {
    require_rank(a, 2, "transpose2d");
    const std::size_t m = a->shape[0], n = a->shape[1];
    auto out = zeros({n, m});
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) out->data[j * m + i] = a->data[i * n + j];
    }
    check_finite(*out, "transpose2d");
    if (Tape* tape = Tape::active(); tape != nullptr && tracks_grad(a)) {
        tape->record(out, {a}, [a, out, m, n] {
            a->ensure_grad();
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < n; ++j) a->grad[i * n + j] += out->grad[j * m + i];
            }
        });
    }
    return out;
}

TensorPtr reshape(const TensorPtr& a, std::vector<std::size_t> new_shape) {
    const std::size_t want = shape_numel(new_shape);
    if (new_shape.empty() || want != a->size()) {
        throw DimensionError("reshape: cannot view " + shape_str(a->shape) + " as " +
                             shape_str(new_shape));
    }
    auto out = from_data(std::move(new_shape), a->data);
    if (Tape* tape = Tape::active(); tape != nullptr && tracks_grad(a)) {
        tape->record(out, {a}, [a, out] {
            a->ensure_grad();
            for (std::size_t i = 0; i < a->grad.size(); ++i) a->grad[i] += out->grad[i];
        });
    }
    return out;
}

TensorPtr slice_sample(const TensorPtr& a, std::size_t index) {
    if (a->shape.empty()) throw DimensionError("slice_sample: scalar has no batch dimension");
    if (index >= a->shape[0]) {
        throw DimensionError("slice_sample: index " + std::to_string(index) +
                             " out of range for " + shape_str(a->shape));
    }
    std::vector<std::size_t> rest(a->shape.begin() + 1, a->shape.end());
    if (rest.empty()) rest = {1};
    const std::size_t slab = shape_numel(rest);
    std::vector<double> vals(a->data.begin() + static_cast<std::ptrdiff_t>(index * slab),
                             a->data.begin() + static_cast<std::ptrdiff_t>((index + 1) * slab));
    auto out = from_data(std::move(rest), std::move(vals));
    if (Tape* tape = Tape::active(); tape != nullptr && tracks_grad(a)) {
        tape->record(out, {a}, [a, out, index, slab] {
            a->ensure_grad();
            for (std::size_t i = 0; i < slab; ++i) a->grad[index * slab + i] += out->grad[i];
        });
    }
    return out;
}

TensorPtr stack_samples(const std::vector<TensorPtr>& samples) {
    if (samples.empty()) throw DimensionError("stack_samples: need at least one sample");
    const std::vector<std::size_t>& s = samples[0]->shape;
    for (const auto& t : samples) {
        if (t->shape != s) {
            throw DimensionError("stack_samples: sample shapes disagree: " + shape_str(s) +
                                 " vs " + shape_str(t->shape));
        }
    }
    const std::size_t count = samples.size();
    const std::size_t slab = shape_numel(s);
    std::vector<std::size_t> out_shape;
    out_shape.reserve(s.size() + 1);
    out_shape.push_back(count);
    out_shape.insert(out_shape.end(), s.begin(), s.end());
    auto out = zeros(std::move(out_shape));
    for (std::size_t i = 0; i < count; ++i) {
        std::copy(samples[i]->data.begin(), samples[i]->data.end(),
                  out->data.begin() + static_cast<std::ptrdiff_t>(i * slab));
    }
    check_finite(*out, "stack_samples");
    std::vector<bool> tracked(count);
    bool any = false;
    for (std::size_t i = 0; i < count; ++i) {
        tracked[i] = tracks_grad(samples[i]);
        any = any || tracked[i];
    }
    if (Tape* tape = Tape::active(); tape != nullptr && any) {
        std::vector<TensorPtr> inputs = samples;
        auto held = samples;
        tape->record(out, std::move(inputs),
                     [held = std::move(held), tracked = std::move(tracked), out, slab] {
                         for (std::size_t i = 0; i < held.size(); ++i) {
                             if (!tracked[i]) continue;
                             held[i]->ensure_grad();
                             for (std::size_t j = 0; j < slab; ++j) {
                                 held[i]->grad[j] += out->grad[i * slab + j];
                             }
                         }
                     });
    }
    return out;
}

TensorPtr softmax_rows(const TensorPtr& a) {
    require_rank(a, 2, "softmax_rows");
    const std::size_t m = a->shape[0], n = a->shape[1];
    auto out = zeros({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        const double* row = a->data.data() + i * n;
        double* orow = out->data.data() + i * n;
        double mx = row[0];
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            orow[j] = std::exp(row[j] - mx);
            sum += orow[j];
        }
        for (std::size_t j = 0; j < n; ++j) orow[j] /= sum;
    }
    check_finite(*out, "softmax_rows");
    if (Tape* tape = Tape::active(); tape != nullptr && tracks_grad(a)) {
        tape->record(out, {a}, [a, out, m, n] {
            a->ensure_grad();
            for (std::size_t i = 0; i < m; ++i) {
                const double* y = out->data.data() + i * n;
                const double* g = out->grad.data() + i * n;
                double dot = 0.0;
                for (std::size_t j = 0; j < n; ++j) dot += g[j] * y[j];
                double* ga = a->grad.data() + i * n;
                for (std::size_t j = 0; j < n; ++j) ga[j] += y[j] * (g[j] - dot);
            }
        });
    }
    return out;
}

TensorPtr conv1x1(const TensorPtr& x, const TensorPtr& w, const TensorPtr& b) {
    require_rank(x, 4, "conv1x1");
    require_rank(w, 2, "conv1x1");
    const std::size_t batch = x->shape[0], cin = x->shape[1], h = x->shape[2], wd = x->shape[3];
    const std::size_t cout = w->shape[0];
    if (w->shape[1] != cin) {
        throw DimensionError("conv1x1: weight " + shape_str(w->shape) +
                             " does not match input channels of " + shape_str(x->shape));
    }
    if (b != nullptr && (b->shape.size() != 1 || b->shape[0] != cout)) {
        throw DimensionError("conv1x1: bias " + shape_str(b->shape) + " does not match " +
                             std::to_string(cout) + " output channels");
    }
    const std::size_t hw = h * wd;
    auto out = zeros({batch, cout, h, wd});
    for (std::size_t nidx = 0; nidx < batch; ++nidx) {
        for (std::size_t co = 0; co < cout; ++co) {
            double* dst = out->data.data() + (nidx * cout + co) * hw;
            if (b != nullptr) {
                const double bv = b->data[co];
                for (std::size_t p = 0; p < hw; ++p) dst[p] = bv;
            }
            for (std::size_t ci = 0; ci < cin; ++ci) {
                const double wv = w->data[co * cin + ci];
                const double* src = x->data.data() + (nidx * cin + ci) * hw;
                for (std::size_t p = 0; p < hw; ++p) dst[p] += wv * src[p];
            }
        }
    }
    check_finite(*out, "conv1x1");
    const bool gx = tracks_grad(x), gw = tracks_grad(w);
    const bool gb = b != nullptr && tracks_grad(b);
    if (Tape* tape = Tape::active(); tape != nullptr && (gx || gw || gb)) {
        std::vector<TensorPtr> inputs = b != nullptr ? std::vector<TensorPtr>{x, w, b}
                                                     : std::vector<TensorPtr>{x, w};
        tape->record(out, std::move(inputs), [x, w, b, out, gx, gw, gb, batch, cin, cout, hw] {
            if (gx) x->ensure_grad();
            if (gw) w->ensure_grad();
            if (gb) b->ensure_grad();
            for (std::size_t nidx = 0; nidx < batch; ++nidx) {
                for (std::size_t co = 0; co < cout; ++co) {
                    const double* g = out->grad.data() + (nidx * cout + co) * hw;
                    if (gb) {
                        double acc = 0.0;
                        for (std::size_t p = 0; p < hw; ++p) acc += g[p];
                        b->grad[co] += acc;
                    }
                    for (std::size_t ci = 0; ci < cin; ++ci) {
                        const double* src = x->data.data() + (nidx * cin + ci) * hw;
                        if (gx) {
                            const double wv = w->data[co * cin + ci];
                            double* dx = x->grad.data() + (nidx * cin + ci) * hw;
                            for (std::size_t p = 0; p < hw; ++p) dx[p] += wv * g[p];
                        }
                        if (gw) {
                            double acc = 0.0;
                            for (std::size_t p = 0; p < hw; ++p) acc += g[p] * src[p];
                            w->grad[co * cin + ci] += acc;
                        }
                    }
                }
            }
        });
    }
    return out;
}

namespace {

// Per output index: the two source indices and the interpolation fraction.
struct ResizeAxis {
    std::vector<std::size_t> lo, hi;
    std::vector<double> frac;
};

ResizeAxis resize_axis(std::size_t src_len, std::size_t dst_len) {
    ResizeAxis ax;
    ax.lo.resize(dst_len);
    ax.hi.resize(dst_len);
    ax.frac.resize(dst_len);
    const double ratio = static_cast<double>(src_len) / static_cast<double>(dst_len);
    for (std::size_t i = 0; i < dst_len; ++i) {
        double src = (static_cast<double>(i) + 0.5) * ratio - 0.5;
        src = std::clamp(src, 0.0, static_cast<double>(src_len - 1));
        const auto lo = static_cast<std::size_t>(std::floor(src));
        ax.lo[i] = lo;
        ax.hi[i] = std::min(lo + 1, src_len - 1);
        ax.frac[i] = src - static_cast<double>(lo);
    }
    return ax;
}

}  // namespace

TensorPtr bilinear_resize(const TensorPtr& x, std::size_t out_h, std::size_t out_w) {
    require_rank(x, 4, "bilinear_resize");
    if (out_h == 0 || out_w == 0) {
        throw DimensionError("bilinear_resize: target size must be positive, got " +
                             std::to_string(out_h) + "x" + std::to_string(out_w));
    }
    const std::size_t batch = x->shape[0], ch = x->shape[1], h = x->shape[2], w = x->shape[3];
    if (out_h == h && out_w == w) {
        // Same-size resize is an elementwise identity, bit for bit.
        auto out = from_data(x->shape, x->data);
        if (Tape* tape = Tape::active(); tape != nullptr && tracks_grad(x)) {
            tape->record(out, {x}, [x, out] {
                x->ensure_grad();
                for (std::size_t i = 0; i < x->grad.size(); ++i) x->grad[i] += out->grad[i];
            });
        }
        return out;
    }
    const ResizeAxis ay = resize_axis(h, out_h);
    const ResizeAxis axx = resize_axis(w, out_w);
    auto out = zeros({batch, ch, out_h, out_w});
    const std::size_t planes = batch * ch;
    for (std::size_t pl = 0; pl < planes; ++pl) {
        const double* src = x->data.data() + pl * h * w;
        double* dst = out->data.data() + pl * out_h * out_w;
        for (std::size_t i = 0; i < out_h; ++i) {
            const double ty = ay.frac[i];
            const std::size_t r0 = ay.lo[i] * w, r1 = ay.hi[i] * w;
            for (std::size_t j = 0; j < out_w; ++j) {
                const double tx = axx.frac[j];
                const std::size_t c0 = axx.lo[j], c1 = axx.hi[j];
                dst[i * out_w + j] = (1.0 - ty) * ((1.0 - tx) * src[r0 + c0] + tx * src[r0 + c1]) +
                                     ty * ((1.0 - tx) * src[r1 + c0] + tx * src[r1 + c1]);
            }
        }
    }
    check_finite(*out, "bilinear_resize");
    if (Tape* tape = Tape::active(); tape != nullptr && tracks_grad(x)) {
        tape->record(out, {x}, [x, out, ay, axx, planes, h, w, out_h, out_w] {
            x->ensure_grad();
            for (std::size_t pl = 0; pl < planes; ++pl) {
                double* dx = x->grad.data() + pl * h * w;
                const double* g = out->grad.data() + pl * out_h * out_w;
                for (std::size_t i = 0; i < out_h; ++i) {
                    const double ty = ay.frac[i];
                    const std::size_t r0 = ay.lo[i] * w, r1 = ay.hi[i] * w;
                    for (std::size_t j = 0; j < out_w; ++j) {
                        const double tx = axx.frac[j];
                        const std::size_t c0 = axx.lo[j], c1 = axx.hi[j];
                        const double gv = g[i * out_w + j];
                        dx[r0 + c0] += (1.0 - ty) * (1.0 - tx) * gv;
                        dx[r0 + c1] += (1.0 - ty) * tx * gv;
                        dx[r1 + c0] += ty * (1.0 - tx) * gv;
                        dx[r1 + c1] += ty * tx * gv;
                    }
                }
            }
        });
    }
    return out;
}

TensorPtr add(const TensorPtr& a, const TensorPtr& b) {
    require_same_shape(a, b, "add");
    auto out = zeros(a->shape);
    for (std::size_t i = 0; i < out->size(); ++i) out->data[i] = a->data[i] + b->data[i];
    check_finite(*out, "add");
    const bool ga = tracks_grad(a), gb = tracks_grad(b);
    if (Tape* tape = Tape::active(); tape != nullptr && (ga || gb)) {
        tape->record(out, {a, b}, [a, b, out, ga, gb] {
            if (ga) {
                a->ensure_grad();
                for (std::size_t i = 0; i < out->grad.size(); ++i) a->grad[i] += out->grad[i];
            }
            if (gb) {
                b->ensure_grad();
                for (std::size_t i = 0; i < out->grad.size(); ++i) b->grad[i] += out->grad[i];
            }
        });
    }
    return out;
}

TensorPtr sub(const TensorPtr& a, const TensorPtr& b) {
    require_same_shape(a, b, "sub");
    auto out = zeros(a->shape);
    for (std::size_t i = 0; i < out->size(); ++i) out->data[i] = a->data[i] - b->data[i];
    check_finite(*out, "sub");
    const bool ga = tracks_grad(a), gb = tracks_grad(b);
    if (Tape* tape = Tape::active(); tape != nullptr && (ga || gb)) {
        tape->record(out, {a, b}, [a, b, out, ga, gb] {
            if (ga) {
                a->ensure_grad();
                for (std::size_t i = 0; i < out->grad.size(); ++i) a->grad[i] += out->grad[i];
            }
            if (gb) {
                b->ensure_grad();
                for (std::size_t i = 0; i < out->grad.size(); ++i) b->grad[i] -= out->grad[i];
            }
        });
    }
    return out;
}

TensorPtr scale(const TensorPtr& a, double c) {
    if (!std::isfinite(c)) throw NumericError("scale: factor is non-finite");
    auto out = zeros(a->shape);
    for (std::size_t i = 0; i < out->size(); ++i) out->data[i] = a->data[i] * c;
    check_finite(*out, "scale");
    if (Tape* tape = Tape::active(); tape != nullptr && tracks_grad(a)) {
        tape->record(out, {a}, [a, out, c] {
            a->ensure_grad();
            for (std::size_t i = 0; i < out->grad.size(); ++i) a->grad[i] += c * out->grad[i];
        });
    }
    return out;
}

TensorPtr hadamard(const TensorPtr& a, const TensorPtr& b) {
    require_same_shape(a, b, "hadamard");
    auto out = zeros(a->shape);
    for (std::size_t i = 0; i < out->size(); ++i) out->data[i] = a->data[i] * b->data[i];
    check_finite(*out, "hadamard");
    const bool ga = tracks_grad(a), gb = tracks_grad(b);
    if (Tape* tape = Tape::active(); tape != nullptr && (ga || gb)) {
        tape->record(out, {a, b}, [a, b, out, ga, gb] {
            if (ga) {
                a->ensure_grad();
                for (std::size_t i = 0; i < out->grad.size(); ++i) {
                    a->grad[i] += b->data[i] * out->grad[i];
                }
            }
            if (gb) {
                b->ensure_grad();
                for (std::size_t i = 0; i < out->grad.size(); ++i) {
                    b->grad[i] += a->data[i] * out->grad[i];
                }
            }
        });
    }
    return out;
}

TensorPtr add_rowvec(const TensorPtr& a, const TensorPtr& v) {
    require_rank(a, 2, "add_rowvec");
    require_rank(v, 1, "add_rowvec");
    const std::size_t m = a->shape[0], n = a->shape[1];
    if (v->shape[0] != n) {
        throw DimensionError("add_rowvec: vector " + shape_str(v->shape) +
                             " does not match columns of " + shape_str(a->shape));
    }
    auto out = zeros({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) out->data[i * n + j] = a->data[i * n + j] + v->data[j];
    }
    check_finite(*out, "add_rowvec");
    const bool ga = tracks_grad(a), gv = tracks_grad(v);
    if (Tape* tape = Tape::active(); tape != nullptr && (ga || gv)) {
        tape->record(out, {a, v}, [a, v, out, ga, gv, m, n] {
            if (ga) {
                a->ensure_grad();
                for (std::size_t i = 0; i < m * n; ++i) a->grad[i] += out->grad[i];
            }
            if (gv) {
                v->ensure_grad();
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t j = 0; j < n; ++j) v->grad[j] += out->grad[i * n + j];
                }
            }
        });
    }
    return out;
}

TensorPtr tanh_act(const TensorPtr& a) {
    auto out = zeros(a->shape);
    for (std::size_t i = 0; i < out->size(); ++i) out->data[i] = std::tanh(a->data[i]);
    check_finite(*out, "tanh");
    if (Tape* tape = Tape::active(); tape != nullptr && tracks_grad(a)) {
        tape->record(out, {a}, [a, out] {
            a->ensure_grad();
            for (std::size_t i = 0; i < out->grad.size(); ++i) {
                const double y = out->data[i];
                a->grad[i] += (1.0 - y * y) * out->grad[i];
            }
        });
    }
    return out;
}

TensorPtr sum_all(const TensorPtr& a) {
    double total = 0.0;
    for (double v : a->data) total += v;
    auto out = scalar_tensor(total);
    check_finite(*out, "sum_all");
    if (Tape* tape = Tape::active(); tape != nullptr && tracks_grad(a)) {
        tape->record(out, {a}, [a, out] {
            a->ensure_grad();
            const double g = out->grad[0];
            for (double& gi : a->grad) gi += g;
        });
    }
    return out;
}

TensorPtr mae_loss(const TensorPtr& pred, const TensorPtr& target) {
    require_same_shape(pred, target, "mae_loss");
    const std::size_t n = pred->size();
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) total += std::abs(pred->data[i] - target->data[i]);
    auto out = scalar_tensor(total / static_cast<double>(n));
    check_finite(*out, "mae_loss");
    const bool gp = tracks_grad(pred), gt = tracks_grad(target);
    if (Tape* tape = Tape::active(); tape != nullptr && (gp || gt)) {
        tape->record(out, {pred, target}, [pred, target, out, gp, gt, n] {
            if (gp) pred->ensure_grad();
            if (gt) target->ensure_grad();
            const double g = out->grad[0] / static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i) {
                const double d = pred->data[i] - target->data[i];
                // subgradient 0 at exact ties
                const double s = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
                if (gp) pred->grad[i] += g * s;
                if (gt) target->grad[i] -= g * s;
            }
        });
    }
    return out;
}

TensorPtr mse_loss(const TensorPtr& pred, const TensorPtr& target) {
    require_same_shape(pred, target, "mse_loss");
    const std::size_t n = pred->size();
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = pred->data[i] - target->data[i];
        total += d * d;
    }
    auto out = scalar_tensor(total / static_cast<double>(n));
    check_finite(*out, "mse_loss");
    const bool gp = tracks_grad(pred), gt = tracks_grad(target);
    if (Tape* tape = Tape::active(); tape != nullptr && (gp || gt)) {
        tape->record(out, {pred, target}, [pred, target, out, gp, gt, n] {
            if (gp) pred->ensure_grad();
            if (gt) target->ensure_grad();
            const double g = 2.0 * out->grad[0] / static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i) {
                const double d = pred->data[i] - target->data[i];
                if (gp) pred->grad[i] += g * d;
                if (gt) target->grad[i] -= g * d;
            }
        });
    }
    return out;
}

TensorPtr cross_entropy_loss(const TensorPtr& logits, const std::vector<int>& labels) {
    require_rank(logits, 2, "cross_entropy_loss");
    const std::size_t n = logits->shape[0], k = logits->shape[1];
    if (labels.size() != n) {
        throw DimensionError("cross_entropy_loss: " + std::to_string(labels.size()) +
                             " labels for " + std::to_string(n) + " rows");
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k) {
            throw ValidationError("cross_entropy_loss: label " + std::to_string(labels[i]) +
                                  " at row " + std::to_string(i) + " outside [0, " +
                                  std::to_string(k) + ")");
        }
    }
    // Probabilities are kept for the backward rule.
    std::vector<double> probs(n * k);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = logits->data.data() + i * k;
        double mx = row[0];
        for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            probs[i * k + j] = std::exp(row[j] - mx);
            sum += probs[i * k + j];
        }
        for (std::size_t j = 0; j < k; ++j) probs[i * k + j] /= sum;
        const double lse = mx + std::log(sum);
        total += lse - row[static_cast<std::size_t>(labels[i])];
    }
    auto out = scalar_tensor(total / static_cast<double>(n));
    check_finite(*out, "cross_entropy_loss");
    if (Tape* tape = Tape::active(); tape != nullptr && tracks_grad(logits)) {
        tape->record(out, {logits},
                     [logits, out, probs = std::move(probs), labels, n, k] {
                         logits->ensure_grad();
                         const double g = out->grad[0] / static_cast<double>(n);
                         for (std::size_t i = 0; i < n; ++i) {
                             const auto truth = static_cast<std::size_t>(labels[i]);
                             for (std::size_t j = 0; j < k; ++j) {
                                 const double onehot = j == truth ? 1.0 : 0.0;
                                 logits->grad[i * k + j] += g * (probs[i * k + j] - onehot);
                             }
                         }
                     });
    }
    return out;
}

double grad_check(const std::function<TensorPtr()>& f, const std::vector<TensorPtr>& params,
                  double epsilon) {
    if (Tape::active() != nullptr) {
        throw UsageError("grad_check: must not run under an active tape");
    }
    if (!(epsilon > 0.0)) throw ValidationError("grad_check: epsilon must be > 0");

    for (const auto& p : params) p->clear_grad();
    {
        Tape tape;
        TensorPtr loss = f();
        if (!loss->is_scalar()) throw UsageError("grad_check: f must return a scalar");
        if (!std::isfinite(loss->item())) throw NumericError("grad_check: f is non-finite");
        tape.run_backward(loss);
    }
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (const auto& p : params) {
        analytic.push_back(p->has_grad() ? p->grad : std::vector<double>(p->size(), 0.0));
    }

    double max_err = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor& p = *params[pi];
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double orig = p.data[i];
            p.data[i] = orig + epsilon;
            const double fp = f()->item();
            p.data[i] = orig - epsilon;
            const double fm = f()->item();
            p.data[i] = orig;
            if (!std::isfinite(fp) || !std::isfinite(fm)) {
                throw NumericError("grad_check: f is non-finite near the evaluation point");
            }
            const double numeric = (fp - fm) / (2.0 * epsilon);
            const double a = analytic[pi][i];
            const double err =
                std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
            max_err = std::max(max_err, err);
        }
    }
    for (const auto& p : params) p->clear_grad();
    return max_err;
}

Sgd::Sgd(std::vector<TensorPtr> params, double lr, double momentum)
    : params_(std::move(params)), lr_(lr), momentum_(momentum) {
    if (!(lr >= 0.0)) throw ValidationError("sgd: lr must be >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) {
        throw ValidationError("sgd: momentum must be in [0, 1)");
    }
    velocity_.reserve(params_.size());
    for (const auto& p : params_) {
        if (p == nullptr) throw ValidationError("sgd: null parameter");
        velocity_.emplace_back(p->size(), 0.0);
    }
}

void Sgd::step() {
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = *params_[i];
        if (!p.has_grad()) {
            throw UsageError("sgd step: parameter " + std::to_string(i) +
                             " has no gradient; run backward first");
        }
        std::vector<double>& v = velocity_[i];
        for (std::size_t j = 0; j < p.size(); ++j) {
            v[j] = momentum_ * v[j] + p.grad[j];
            p.data[j] -= lr_ * v[j];
        }
        p.zero_grad();
    }
}

void Sgd::zero_grad() {
    for (const auto& p : params_) p->zero_grad();
}

void Sgd::set_lr(double lr) {
    if (!(lr >= 0.0)) throw ValidationError("sgd: lr must be >= 0");
    lr_ = lr;
}

}  // namespace hkt
