#pragma once

// Minimal dense float32 tensor with reverse-mode autodiff.
// Operators record backward closures on an explicit Tape; calling
// fy::backward(loss, tape) replays them in reverse and accumulates
// gradients additively into each tensor's grad buffer.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace fy {

struct Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

struct Tensor {
    std::vector<long> shape;   // immutable after creation
    std::vector<float> data;   // row-major
    bool requires_grad = false;
    std::vector<float> grad;   // empty until first backward touch

    long numel() const {
        long n = 1;
        for (long s : shape) n *= s;
        return n;
    }
    long dim(size_t i) const { return shape.at(i); }
    size_t rank() const { return shape.size(); }

    void ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), 0.0f);
    }
    void zero_grad() {
        if (!grad.empty()) std::fill(grad.begin(), grad.end(), 0.0f);
    }

    static TensorPtr create(std::vector<long> shape, bool requires_grad = false) {
        auto t = std::make_shared<Tensor>();
        long n = 1;
        for (long s : shape) {
            if (s <= 0) throw std::invalid_argument("tensor extents must be positive");
            n *= s;
        }
        t->shape = std::move(shape);
        t->data.assign(static_cast<size_t>(n), 0.0f);
        t->requires_grad = requires_grad;
        return t;
    }

    static TensorPtr from_data(std::vector<long> shape, std::vector<float> values,
                               bool requires_grad = false) {
        auto t = create(std::move(shape), requires_grad);
        if (values.size() != t->data.size())
            throw std::invalid_argument("data length does not match shape product");
        t->data = std::move(values);
        return t;
    }

    static TensorPtr scalar(float v, bool requires_grad = false) {
        auto t = create({1}, requires_grad);
        t->data[0] = v;
        return t;
    }
};

inline std::string shape_str(const std::vector<long>& s) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

// Records backward closures for one forward pass. Not reusable after backward().
struct Tape {
    std::vector<std::function<void()>> nodes;
    bool consumed = false;

    void record(std::function<void()> fn) { nodes.push_back(std::move(fn)); }
    void clear() {
        nodes.clear();
        consumed = false;
    }
};

inline bool track(Tape* tape, std::initializer_list<TensorPtr> inputs) {
    if (!tape) return false;
    for (const auto& t : inputs)
        if (t && t->requires_grad) return true;
    return false;
}

inline void backward(const TensorPtr& loss, Tape& tape) {
    if (loss->numel() != 1) throw std::invalid_argument("backward: loss must be scalar");
    if (tape.consumed) throw std::logic_error("backward: tape already replayed");
    loss->ensure_grad();
    loss->grad[0] += 1.0f;
    for (auto it = tape.nodes.rbegin(); it != tape.nodes.rend(); ++it) (*it)();
    tape.consumed = true;
}

// ---------------------------------------------------------------------------
// elementwise activations

inline float sigmoid_scalar(float x) {
    if (x >= 0.0f) return 1.0f / (1.0f + std::exp(-x));
    float e = std::exp(x);
    return e / (1.0f + e);
}

inline TensorPtr sigmoid(Tape* tape, const TensorPtr& x) {
    auto out = Tensor::create(x->shape);
    for (size_t i = 0; i < x->data.size(); ++i) out->data[i] = sigmoid_scalar(x->data[i]);
    if (track(tape, {x})) {
        out->requires_grad = true;
        tape->record([x, out] {
            x->ensure_grad();
            for (size_t i = 0; i < x->data.size(); ++i) {
                float s = out->data[i];
                x->grad[i] += out->grad[i] * s * (1.0f - s);
            }
        });
    }
    return out;
}

inline TensorPtr leaky_relu(Tape* tape, const TensorPtr& x, float alpha = 0.1f) {
    if (!(alpha > 0.0f && alpha < 1.0f))
        throw std::invalid_argument("leaky_relu: alpha must be in (0,1)");
    auto out = Tensor::create(x->shape);
    for (size_t i = 0; i < x->data.size(); ++i) {
        float v = x->data[i];
        out->data[i] = v >= 0.0f ? v : alpha * v;
    }
    if (track(tape, {x})) {
        out->requires_grad = true;
        tape->record([x, out, alpha] {
            x->ensure_grad();
            for (size_t i = 0; i < x->data.size(); ++i)
                x->grad[i] += out->grad[i] * (x->data[i] >= 0.0f ? 1.0f : alpha);
        });
    }
    return out;
}

inline TensorPtr add(Tape* tape, const TensorPtr& a, const TensorPtr& b) {
    if (a->shape != b->shape)
        throw std::invalid_argument("add: shape mismatch " + shape_str(a->shape) + " vs " +
                                    shape_str(b->shape));
    auto out = Tensor::create(a->shape);
    for (size_t i = 0; i < a->data.size(); ++i) out->data[i] = a->data[i] + b->data[i];
    if (track(tape, {a, b})) {
        out->requires_grad = true;
        tape->record([a, b, out] {
            a->ensure_grad();
            b->ensure_grad();
            for (size_t i = 0; i < out->data.size(); ++i) {
                a->grad[i] += out->grad[i];
                b->grad[i] += out->grad[i];
            }
        });
    }
    return out;
}

inline TensorPtr sum_all(Tape* tape, const TensorPtr& x) {
    auto out = Tensor::scalar(0.0f);
    double acc = 0.0;
    for (float v : x->data) acc += v;
    out->data[0] = static_cast<float>(acc);
    if (track(tape, {x})) {
        out->requires_grad = true;
        tape->record([x, out] {
            x->ensure_grad();
            for (size_t i = 0; i < x->data.size(); ++i) x->grad[i] += out->grad[0];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// conv2d: NCHW input, OIKK weight, cross-correlation. im2col + GEMM.

namespace detail {

inline void im2col(const float* src, long C, long H, long W, long K, long stride, long pad,
                   long OH, long OW, float* col) {
    // col is (C*K*K) x (OH*OW), row-major
    for (long c = 0; c < C; ++c) {
        for (long ky = 0; ky < K; ++ky) {
            for (long kx = 0; kx < K; ++kx) {
                float* row = col + ((c * K + ky) * K + kx) * OH * OW;
                for (long oy = 0; oy < OH; ++oy) {
                    long iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= H) {
                        std::fill(row + oy * OW, row + (oy + 1) * OW, 0.0f);
                        continue;
                    }
                    const float* srow = src + (c * H + iy) * W;
                    for (long ox = 0; ox < OW; ++ox) {
                        long ix = ox * stride - pad + kx;
                        row[oy * OW + ox] = (ix >= 0 && ix < W) ? srow[ix] : 0.0f;
                    }
                }
            }
        }
    }
}

inline void col2im_accum(const float* col, long C, long H, long W, long K, long stride, long pad,
                         long OH, long OW, float* dst) {
    for (long c = 0; c < C; ++c) {
        for (long ky = 0; ky < K; ++ky) {
            for (long kx = 0; kx < K; ++kx) {
                const float* row = col + ((c * K + ky) * K + kx) * OH * OW;
                for (long oy = 0; oy < OH; ++oy) {
                    long iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= H) continue;
                    float* drow = dst + (c * H + iy) * W;
                    for (long ox = 0; ox < OW; ++ox) {
                        long ix = ox * stride - pad + kx;
                        if (ix >= 0 && ix < W) drow[ix] += row[oy * OW + ox];
                    }
                }
            }
        }
    }
}

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<RowMat>;
using CMapRM = Eigen::Map<const RowMat>;

}  // namespace detail

inline TensorPtr conv2d(Tape* tape, const TensorPtr& input, const TensorPtr& weight,
                        const TensorPtr& bias, long stride, long padding) {
    if (input->rank() != 4) throw std::invalid_argument("conv2d: input must be NCHW");
    if (weight->rank() != 4) throw std::invalid_argument("conv2d: weight must be OIKK");
    if (stride < 1) throw std::invalid_argument("conv2d: stride must be positive");
    if (padding < 0) throw std::invalid_argument("conv2d: padding must be non-negative");
    const long N = input->dim(0), C = input->dim(1), H = input->dim(2), W = input->dim(3);
    const long O = weight->dim(0), I = weight->dim(1), KH = weight->dim(2), KW = weight->dim(3);
    if (KH != KW) throw std::invalid_argument("conv2d: only square kernels supported");
    const long K = KH;
    if (C != I)
        throw std::invalid_argument("conv2d: input channels " + std::to_string(C) +
                                    " != weight input channels " + std::to_string(I));
    if (H + 2 * padding < K || W + 2 * padding < K)
        throw std::invalid_argument("conv2d: kernel larger than padded input");
    if (bias && bias->numel() != O)
        throw std::invalid_argument("conv2d: bias length must equal output channels");
    const long OH = (H + 2 * padding - K) / stride + 1;
    const long OW = (W + 2 * padding - K) / stride + 1;
    if (OH <= 0 || OW <= 0) throw std::invalid_argument("conv2d: zero-size spatial output");

    auto out = Tensor::create({N, O, OH, OW});
    const long ckk = C * K * K, sp = OH * OW;
    std::vector<float> col(static_cast<size_t>(ckk * sp));
    detail::CMapRM Wm(weight->data.data(), O, ckk);
    for (long n = 0; n < N; ++n) {
        detail::im2col(input->data.data() + n * C * H * W, C, H, W, K, stride, padding, OH, OW,
                       col.data());
        detail::CMapRM Cm(col.data(), ckk, sp);
        detail::MapRM Om(out->data.data() + n * O * sp, O, sp);
        Om.noalias() = Wm * Cm;
    }
    if (bias) {
        for (long n = 0; n < N; ++n)
            for (long o = 0; o < O; ++o) {
                float b = bias->data[o];
                float* p = out->data.data() + (n * O + o) * sp;
                for (long i = 0; i < sp; ++i) p[i] += b;
            }
    }

    if (track(tape, {input, weight, bias})) {
        out->requires_grad = true;
        tape->record([input, weight, bias, out, N, C, H, W, O, K, stride, padding, OH, OW] {
            const long ckk = C * K * K, sp = OH * OW;
            std::vector<float> col(static_cast<size_t>(ckk * sp));
            std::vector<float> dcol(static_cast<size_t>(ckk * sp));
            detail::CMapRM Wm(weight->data.data(), O, ckk);
            const bool need_dw = weight->requires_grad;
            // grads accumulate in image order (deterministic)
            if (need_dw) weight->ensure_grad();
            input->ensure_grad();
            if (bias && bias->requires_grad) bias->ensure_grad();
            for (long n = 0; n < N; ++n) {
                detail::CMapRM dOm(out->grad.data() + n * O * sp, O, sp);
                // dX
                detail::MapRM dCm(dcol.data(), ckk, sp);
                dCm.noalias() = Wm.transpose() * dOm;
                detail::col2im_accum(dcol.data(), C, H, W, K, stride, padding, OH, OW,
                                     input->grad.data() + n * C * H * W);
                // dW
                if (need_dw) {
                    detail::im2col(input->data.data() + n * C * H * W, C, H, W, K, stride,
                                   padding, OH, OW, col.data());
                    detail::CMapRM Cm(col.data(), ckk, sp);
                    detail::MapRM dWmap(weight->grad.data(), O, ckk);
                    dWmap.noalias() += dOm * Cm.transpose();
                }
                // db
                if (bias && bias->requires_grad) {
                    for (long o = 0; o < O; ++o) {
                        const float* p = out->grad.data() + (n * O + o) * sp;
                        double acc = 0.0;
                        for (long i = 0; i < sp; ++i) acc += p[i];
                        bias->grad[o] += static_cast<float>(acc);
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// batch norm (NCHW, per-channel). Training mode uses batch statistics and
// updates running stats in place; eval mode normalizes with running stats.

inline TensorPtr batch_norm2d(Tape* tape, const TensorPtr& input, const TensorPtr& gamma,
                              const TensorPtr& beta, float eps, bool training,
                              TensorPtr running_mean = nullptr, TensorPtr running_var = nullptr,
                              float momentum = 0.1f) {
    if (input->rank() != 4) throw std::invalid_argument("batch_norm2d: input must be NCHW");
    if (eps <= 0.0f) throw std::invalid_argument("batch_norm2d: eps must be positive");
    const long N = input->dim(0), C = input->dim(1), H = input->dim(2), W = input->dim(3);
    if (gamma->numel() != C || beta->numel() != C)
        throw std::invalid_argument("batch_norm2d: gamma/beta length must equal channels");
    if (!training && (!running_mean || !running_var))
        throw std::invalid_argument("batch_norm2d: eval mode requires running stats");

    const long sp = H * W;
    const long m = N * sp;
    auto out = Tensor::create(input->shape);
    auto mean = std::make_shared<std::vector<float>>(C);
    auto rstd = std::make_shared<std::vector<float>>(C);

    for (long c = 0; c < C; ++c) {
        float mu, var;
        if (training) {
            double acc = 0.0;
            for (long n = 0; n < N; ++n) {
                const float* p = input->data.data() + (n * C + c) * sp;
                for (long i = 0; i < sp; ++i) acc += p[i];
            }
            mu = static_cast<float>(acc / m);
            double vacc = 0.0;
            for (long n = 0; n < N; ++n) {
                const float* p = input->data.data() + (n * C + c) * sp;
                for (long i = 0; i < sp; ++i) {
                    double d = p[i] - mu;
                    vacc += d * d;
                }
            }
            var = static_cast<float>(vacc / m);
            if (running_mean && running_var) {
                running_mean->data[c] = (1.0f - momentum) * running_mean->data[c] + momentum * mu;
                running_var->data[c] = (1.0f - momentum) * running_var->data[c] + momentum * var;
            }
        } else {
            mu = running_mean->data[c];
            var = running_var->data[c];
        }
        float rs = 1.0f / std::sqrt(var + eps);
        (*mean)[c] = mu;
        (*rstd)[c] = rs;
        const float g = gamma->data[c], b = beta->data[c];
        for (long n = 0; n < N; ++n) {
            const float* p = input->data.data() + (n * C + c) * sp;
            float* q = out->data.data() + (n * C + c) * sp;
            for (long i = 0; i < sp; ++i) q[i] = (p[i] - mu) * rs * g + b;
        }
    }

    if (track(tape, {input, gamma, beta})) {
        out->requires_grad = true;
        tape->record([input, gamma, beta, out, mean, rstd, N, C, sp, m, training] {
            input->ensure_grad();
            if (gamma->requires_grad) gamma->ensure_grad();
            if (beta->requires_grad) beta->ensure_grad();
            for (long c = 0; c < C; ++c) {
                const float mu = (*mean)[c], rs = (*rstd)[c], g = gamma->data[c];
                double sum_dy = 0.0, sum_dy_xhat = 0.0;
                for (long n = 0; n < N; ++n) {
                    const float* dy = out->grad.data() + (n * C + c) * sp;
                    const float* x = input->data.data() + (n * C + c) * sp;
                    for (long i = 0; i < sp; ++i) {
                        sum_dy += dy[i];
                        sum_dy_xhat += dy[i] * (x[i] - mu) * rs;
                    }
                }
                if (gamma->requires_grad) gamma->grad[c] += static_cast<float>(sum_dy_xhat);
                if (beta->requires_grad) beta->grad[c] += static_cast<float>(sum_dy);
                if (training) {
                    const float inv_m = 1.0f / static_cast<float>(m);
                    for (long n = 0; n < N; ++n) {
                        const float* dy = out->grad.data() + (n * C + c) * sp;
                        const float* x = input->data.data() + (n * C + c) * sp;
                        float* dx = input->grad.data() + (n * C + c) * sp;
                        for (long i = 0; i < sp; ++i) {
                            float xhat = (x[i] - mu) * rs;
                            dx[i] += g * rs *
                                     (dy[i] - inv_m * static_cast<float>(sum_dy) -
                                      xhat * inv_m * static_cast<float>(sum_dy_xhat));
                        }
                    }
                } else {
                    for (long n = 0; n < N; ++n) {
                        const float* dy = out->grad.data() + (n * C + c) * sp;
                        float* dx = input->grad.data() + (n * C + c) * sp;
                        for (long i = 0; i < sp; ++i) dx[i] += dy[i] * g * rs;
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// concat along channels

inline TensorPtr concat_channels(Tape* tape, const std::vector<TensorPtr>& inputs) {
    if (inputs.empty()) throw std::invalid_argument("concat_channels: no inputs");
    const long N = inputs[0]->dim(0), H = inputs[0]->dim(2), W = inputs[0]->dim(3);
    long Ctot = 0;
    for (const auto& t : inputs) {
        if (t->rank() != 4 || t->dim(0) != N || t->dim(2) != H || t->dim(3) != W)
            throw std::invalid_argument("concat_channels: spatial/batch mismatch");
        Ctot += t->dim(1);
    }
    auto out = Tensor::create({N, Ctot, H, W});
    const long sp = H * W;
    for (long n = 0; n < N; ++n) {
        long coff = 0;
        for (const auto& t : inputs) {
            const long Ci = t->dim(1);
            std::copy_n(t->data.data() + n * Ci * sp, Ci * sp,
                        out->data.data() + (n * Ctot + coff) * sp);
            coff += Ci;
        }
    }
    bool any = false;
    for (const auto& t : inputs) any = any || t->requires_grad;
    if (tape && any) {
        out->requires_grad = true;
        tape->record([inputs, out, N, Ctot, sp] {
            for (const auto& t : inputs) t->ensure_grad();
            for (long n = 0; n < N; ++n) {
                long coff = 0;
                for (const auto& t : inputs) {
                    const long Ci = t->dim(1);
                    const float* src = out->grad.data() + (n * Ctot + coff) * sp;
                    float* dst = t->grad.data() + n * Ci * sp;
                    for (long i = 0; i < Ci * sp; ++i) dst[i] += src[i];
                    coff += Ci;
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// nearest-neighbor 2x upsample

inline TensorPtr upsample_nearest2x(Tape* tape, const TensorPtr& x) {
    if (x->rank() != 4) throw std::invalid_argument("upsample_nearest2x: input must be NCHW");
    const long N = x->dim(0), C = x->dim(1), H = x->dim(2), W = x->dim(3);
    auto out = Tensor::create({N, C, 2 * H, 2 * W});
    for (long nc = 0; nc < N * C; ++nc) {
        const float* src = x->data.data() + nc * H * W;
        float* dst = out->data.data() + nc * 4 * H * W;
        for (long y = 0; y < H; ++y)
            for (long xx = 0; xx < W; ++xx) {
                float v = src[y * W + xx];
                long base = (2 * y) * (2 * W) + 2 * xx;
                dst[base] = v;
                dst[base + 1] = v;
                dst[base + 2 * W] = v;
                dst[base + 2 * W + 1] = v;
            }
    }
    if (track(tape, {x})) {
        out->requires_grad = true;
        tape->record([x, out, N, C, H, W] {
            x->ensure_grad();
            for (long nc = 0; nc < N * C; ++nc) {
                const float* g = out->grad.data() + nc * 4 * H * W;
                float* dst = x->grad.data() + nc * H * W;
                for (long y = 0; y < H; ++y)
                    for (long xx = 0; xx < W; ++xx) {
                        long base = (2 * y) * (2 * W) + 2 * xx;
                        dst[y * W + xx] +=
                            g[base] + g[base + 1] + g[base + 2 * W] + g[base + 2 * W + 1];
                    }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// focus slicing: each 2x2 pixel neighborhood moves into channels.
// Slice order: (even row, even col), (even, odd), (odd, even), (odd, odd).

inline TensorPtr focus_slice(Tape* tape, const TensorPtr& x) {
    if (x->rank() != 4) throw std::invalid_argument("focus_slice: input must be NCHW");
    const long N = x->dim(0), C = x->dim(1), H = x->dim(2), W = x->dim(3);
    if (H % 2 != 0 || W % 2 != 0)
        throw std::invalid_argument("focus_slice: spatial dims must be even, got " +
                                    shape_str(x->shape));
    const long OH = H / 2, OW = W / 2;
    auto out = Tensor::create({N, 4 * C, OH, OW});
    static const long offs[4][2] = {{0, 0}, {0, 1}, {1, 0}, {1, 1}};
    for (long n = 0; n < N; ++n)
        for (long s = 0; s < 4; ++s)
            for (long c = 0; c < C; ++c) {
                const float* src = x->data.data() + (n * C + c) * H * W;
                float* dst = out->data.data() + ((n * 4 + s) * C + c) * OH * OW;
                for (long y = 0; y < OH; ++y)
                    for (long xx = 0; xx < OW; ++xx)
                        dst[y * OW + xx] = src[(2 * y + offs[s][0]) * W + 2 * xx + offs[s][1]];
            }
    if (track(tape, {x})) {
        out->requires_grad = true;
        tape->record([x, out, N, C, H, W, OH, OW] {
            x->ensure_grad();
            for (long n = 0; n < N; ++n)
                for (long s = 0; s < 4; ++s)
                    for (long c = 0; c < C; ++c) {
                        const float* g = out->grad.data() + ((n * 4 + s) * C + c) * OH * OW;
                        float* dst = x->grad.data() + (n * C + c) * H * W;
                        for (long y = 0; y < OH; ++y)
                            for (long xx = 0; xx < OW; ++xx)
                                dst[(2 * y + offs[s][0]) * W + 2 * xx + offs[s][1]] +=
                                    g[y * OW + xx];
                    }
        });
    }
    return out;
}

// Inverse of focus_slice; test/verification helper for the bijection property.
inline TensorPtr focus_unslice(const TensorPtr& sliced) {
    const long N = sliced->dim(0), C4 = sliced->dim(1), OH = sliced->dim(2), OW = sliced->dim(3);
    if (C4 % 4 != 0) throw std::invalid_argument("focus_unslice: channels must divide by 4");
    const long C = C4 / 4, H = 2 * OH, W = 2 * OW;
    auto out = Tensor::create({N, C, H, W});
    static const long offs[4][2] = {{0, 0}, {0, 1}, {1, 0}, {1, 1}};
    for (long n = 0; n < N; ++n)
        for (long s = 0; s < 4; ++s)
            for (long c = 0; c < C; ++c) {
                const float* src = sliced->data.data() + ((n * 4 + s) * C + c) * OH * OW;
                float* dst = out->data.data() + (n * C + c) * H * W;
                for (long y = 0; y < OH; ++y)
                    for (long xx = 0; xx < OW; ++xx)
                        dst[(2 * y + offs[s][0]) * W + 2 * xx + offs[s][1]] = src[y * OW + xx];
            }
    return out;
}

}  // namespace fy
