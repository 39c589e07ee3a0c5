#pragma once

// Compound detection loss: BCE-with-logits objectness and classification
// plus a 1-IoU box term at positive anchor assignments, all differentiable
// back into the three raw head maps.

#include <array>
#include <cmath>
#include <vector>

#include "fireyolo/box.hpp"
#include "fireyolo/detector.hpp"
#include "fireyolo/tensor.hpp"

namespace fy {

enum class Reduction { None, Mean, Sum };

struct LossConfig {
    float pos_weight = 1.0f;     // p_c: >1 favors recall, <1 favors precision
    float sample_weight = 1.0f;  // w_n
    Reduction reduction = Reduction::Mean;
    float lambda_obj = 600.0f;
    float lambda_cls = 150.0f;
    float lambda_box = 600.0f;
    float anchor_ratio_threshold = 4.0f;

    void validate() const {
        if (pos_weight <= 0) throw std::invalid_argument("LossConfig: pos_weight must be > 0");
        if (sample_weight <= 0) throw std::invalid_argument("LossConfig: sample_weight must be > 0");
        if (lambda_obj == 0 && lambda_cls == 0 && lambda_box == 0)
            throw std::invalid_argument("LossConfig: lambda weights must not all be zero");
        if (lambda_obj < 0 || lambda_cls < 0 || lambda_box < 0)
            throw std::invalid_argument("LossConfig: lambda weights must be non-negative");
    }
};

struct OptimizerConfig {
    float learning_rate = 0.001f;
    int epochs = 200;
    int batch_size = 64;
    bool linear_lr_decay = false;  // optional linear decay to 10% of base over the run

    void validate() const {
        if (learning_rate <= 0) throw std::invalid_argument("OptimizerConfig: lr must be > 0");
        if (epochs < 1) throw std::invalid_argument("OptimizerConfig: epochs must be >= 1");
        if (batch_size < 1) throw std::invalid_argument("OptimizerConfig: batch_size must be >= 1");
    }
};

// ---------------------------------------------------------------------------
// BCE with logits, numerically stable:
//   l = w * [ (1-y) x + (1 + (p-1) y) softplus(-x) ]
//   dl/dx = w * [ sigma(x) (1 - y + p y) - p y ]

inline float softplus_stable(float z) {
    return std::max(z, 0.0f) + std::log1p(std::exp(-std::fabs(z)));
}

inline float bce_element(float x, float y, float w, float p) {
    return w * ((1.0f - y) * x + (1.0f + (p - 1.0f) * y) * softplus_stable(-x));
}

inline float bce_element_dx(float x, float y, float w, float p) {
    float s = sigmoid_scalar(x);
    return w * (s * (1.0f - y + p * y) - p * y);
}

inline TensorPtr bce_with_logits(Tape* tape, const TensorPtr& logits, const TensorPtr& targets,
                                 float w_n, float pos_weight, Reduction reduction) {
    if (logits->shape != targets->shape)
        throw std::invalid_argument("bce_with_logits: shape mismatch " + shape_str(logits->shape) +
                                    " vs " + shape_str(targets->shape));
    for (float y : targets->data)
        if (y < 0.0f || y > 1.0f)
            throw std::invalid_argument("bce_with_logits: targets must lie in [0,1]");
    const size_t n = logits->data.size();
    TensorPtr out;
    if (reduction == Reduction::None) {
        out = Tensor::create(logits->shape);
        for (size_t i = 0; i < n; ++i)
            out->data[i] = bce_element(logits->data[i], targets->data[i], w_n, pos_weight);
    } else {
        double acc = 0.0;
        for (size_t i = 0; i < n; ++i)
            acc += bce_element(logits->data[i], targets->data[i], w_n, pos_weight);
        if (reduction == Reduction::Mean) acc /= static_cast<double>(n);
        out = Tensor::scalar(static_cast<float>(acc));
    }
    if (track(tape, {logits})) {
        out->requires_grad = true;
        tape->record([logits, targets, out, w_n, pos_weight, reduction, n] {
            logits->ensure_grad();
            for (size_t i = 0; i < n; ++i) {
                float g;
                switch (reduction) {
                    case Reduction::None: g = out->grad[i]; break;
                    case Reduction::Sum: g = out->grad[0]; break;
                    default: g = out->grad[0] / static_cast<float>(n); break;
                }
                logits->grad[i] +=
                    g * bce_element_dx(logits->data[i], targets->data[i], w_n, pos_weight);
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// 1 - IoU box loss on center-form boxes, with analytic gradient w.r.t. pred.

inline float iou_box_loss(const BoxXYWH& pred, const BoxXYWH& gt) {
    if (pred.w <= 0 || pred.h <= 0 || gt.w <= 0 || gt.h <= 0)
        throw std::invalid_argument("iou_box_loss: non-positive box dims");
    // a numerically blown-up prediction propagates as NaN so the training
    // loop can report divergence instead of dying inside iou()
    if (!(std::isfinite(pred.cx) && std::isfinite(pred.cy) && std::isfinite(pred.w) &&
          std::isfinite(pred.h)))
        return std::numeric_limits<float>::quiet_NaN();
    Box p = pred.to_corners();
    // a vanishingly thin prediction can collapse onto a line under float
    // rounding (cx +- w/2 == cx); it overlaps nothing, so the loss is 1
    if (!(p.x1 < p.x2 && p.y1 < p.y2)) return 1.0f;
    return 1.0f - iou(p, gt.to_corners());
}

// d(1-IoU)/d(cx, cy, w, h) of pred; returns the loss value.
inline float iou_box_loss_grad(const BoxXYWH& pred, const BoxXYWH& gt, float d_pred[4]) {
    Box p = pred.to_corners(), g = gt.to_corners();
    float ix1 = std::max(p.x1, g.x1), iy1 = std::max(p.y1, g.y1);
    float ix2 = std::min(p.x2, g.x2), iy2 = std::min(p.y2, g.y2);
    float iw = std::max(0.0f, ix2 - ix1), ih = std::max(0.0f, iy2 - iy1);
    float inter = iw * ih;
    float ap = p.area(), ag = g.area();
    float uni = ap + ag - inter;
    float val = uni > 0 ? inter / uni : 0.0f;

    // dI w.r.t. pred corners (zero where the grown edge is the gt's)
    float dI_px1 = 0, dI_px2 = 0, dI_py1 = 0, dI_py2 = 0;
    if (iw > 0 && ih > 0) {
        if (p.x1 > g.x1) dI_px1 = -ih;
        if (p.x2 < g.x2) dI_px2 = ih;
        if (p.y1 > g.y1) dI_py1 = -iw;
        if (p.y2 < g.y2) dI_py2 = iw;
    }
    // corners -> (cx, cy, w, h)
    float dI_cx = dI_px1 + dI_px2;
    float dI_cy = dI_py1 + dI_py2;
    float dI_w = 0.5f * (dI_px2 - dI_px1);
    float dI_h = 0.5f * (dI_py2 - dI_py1);
    float dAp_w = pred.h, dAp_h = pred.w;

    // IoU = I/U, dU = dAp - dI; loss = 1 - IoU
    auto d_loss = [&](float dI, float dAp) {
        float dU = dAp - dI;
        return -(dI * uni - inter * dU) / (uni * uni);
    };
    d_pred[0] = d_loss(dI_cx, 0.0f);
    d_pred[1] = d_loss(dI_cy, 0.0f);
    d_pred[2] = d_loss(dI_w, dAp_w);
    d_pred[3] = d_loss(dI_h, dAp_h);
    return 1.0f - val;
}

// ---------------------------------------------------------------------------
// target assignment

struct PositiveMatch {
    int scale = 0;
    long batch = 0;
    long gx = 0, gy = 0;
    int anchor = 0;
    int class_id = 0;
    BoxXYWH gt;  // input-image pixels
};

struct TargetAssignment {
    std::array<std::vector<float>, 3> obj_targets;  // per scale: N*3*gh*gw
    std::array<long, 3> grid{};
    long batch_size = 0;
    std::vector<PositiveMatch> positives;
};

inline TargetAssignment assign_targets(const std::vector<std::vector<BoxLabel>>& gt_per_image,
                                       const ModelConfig& mcfg, const LossConfig& lcfg) {
    TargetAssignment ta;
    ta.batch_size = static_cast<long>(gt_per_image.size());
    const float S = static_cast<float>(mcfg.input_size);
    for (int s = 0; s < 3; ++s) {
        ta.grid[s] = mcfg.input_size / mcfg.strides[s];
        ta.obj_targets[s].assign(static_cast<size_t>(ta.batch_size * 3 * ta.grid[s] * ta.grid[s]),
                                 0.0f);
    }
    auto occupied = [&](int s, long n, int a, long gy, long gx) -> float& {
        long g = ta.grid[s];
        return ta.obj_targets[s][((n * 3 + a) * g + gy) * g + gx];
    };
    for (long n = 0; n < ta.batch_size; ++n) {
        for (const auto& gt : gt_per_image[n]) {
            if (gt.cx < 0 || gt.cx > 1 || gt.cy < 0 || gt.cy > 1 || gt.w <= 0 || gt.h <= 0)
                throw std::invalid_argument("assign_targets: GT coordinates outside [0,1]");
            BoxXYWH px{gt.cx * S, gt.cy * S, gt.w * S, gt.h * S};
            bool any = false;
            float best_ratio = std::numeric_limits<float>::infinity();
            int best_s = 0, best_a = 0;
            for (int s = 0; s < 3; ++s) {
                long g = ta.grid[s];
                long gx = std::min<long>(g - 1, static_cast<long>(gt.cx * g));
                long gy = std::min<long>(g - 1, static_cast<long>(gt.cy * g));
                for (int a = 0; a < 3; ++a) {
                    const Anchor& an = mcfg.anchors[s][a];
                    float r = std::max(std::max(px.w / an.w, an.w / px.w),
                                       std::max(px.h / an.h, an.h / px.h));
                    if (r < best_ratio) {
                        best_ratio = r;
                        best_s = s;
                        best_a = a;
                    }
                    if (r < lcfg.anchor_ratio_threshold) {
                        any = true;
                        float& cell = occupied(s, n, a, gy, gx);
                        if (cell == 0.0f) {  // first GT claiming a cell/anchor wins
                            cell = 1.0f;
                            ta.positives.push_back({s, n, gx, gy, a, gt.class_id, px});
                        }
                    }
                }
            }
            if (!any) {  // fallback: every GT trains its single best-ratio anchor
                long g = ta.grid[best_s];
                long gx = std::min<long>(g - 1, static_cast<long>(gt.cx * g));
                long gy = std::min<long>(g - 1, static_cast<long>(gt.cy * g));
                float& cell = occupied(best_s, n, best_a, gy, gx);
                if (cell == 0.0f) {
                    cell = 1.0f;
                    ta.positives.push_back({best_s, n, gx, gy, best_a, gt.class_id, px});
                }
            }
        }
    }
    return ta;
}

// ---------------------------------------------------------------------------
// compound loss

struct LossBreakdown {
    TensorPtr total;  // scalar, differentiable
    double total_value = 0;
    double obj = 0, cls = 0, box = 0;  // unweighted components
};

// Bounded YOLO decode of one anchor's box channels at a grid cell.
inline BoxXYWH decode_box(float tx, float ty, float tw, float th, long gx, long gy, int stride,
                          const Anchor& anchor) {
    float sx = sigmoid_scalar(tx), sy = sigmoid_scalar(ty);
    float sw = sigmoid_scalar(tw), sh = sigmoid_scalar(th);
    BoxXYWH b;
    b.cx = (2.0f * sx - 0.5f + gx) * stride;
    b.cy = (2.0f * sy - 0.5f + gy) * stride;
    b.w = (2.0f * sw) * (2.0f * sw) * anchor.w;
    b.h = (2.0f * sh) * (2.0f * sh) * anchor.h;
    return b;
}

inline LossBreakdown compute_loss(Tape* tape, const std::array<TensorPtr, 3>& raw,
                                  const TargetAssignment& ta, const LossConfig& lcfg,
                                  const ModelConfig& mcfg) {
    lcfg.validate();
    const int cpa = mcfg.channels_per_anchor();
    const int C = mcfg.num_classes;
    for (int s = 0; s < 3; ++s) {
        if (raw[s]->dim(0) != ta.batch_size || raw[s]->dim(1) != 3 * cpa ||
            raw[s]->dim(2) != ta.grid[s] || raw[s]->dim(3) != ta.grid[s])
            throw std::invalid_argument("compute_loss: raw map / assignment mismatch at scale " +
                                        std::to_string(s));
    }
    const float w_n = lcfg.sample_weight;
    auto idx = [cpa, grid = ta.grid](int s, long n, int a, int ch, long gy, long gx) -> size_t {
        long g = grid[s];
        return static_cast<size_t>(((n * 3 * cpa + a * cpa + ch) * g + gy) * g + gx);
    };

    // objectness over every cell/anchor in every scale
    double obj_acc = 0.0;
    long obj_count = 0;
    for (int s = 0; s < 3; ++s) {
        long g = ta.grid[s];
        for (long n = 0; n < ta.batch_size; ++n)
            for (int a = 0; a < 3; ++a)
                for (long gy = 0; gy < g; ++gy)
                    for (long gx = 0; gx < g; ++gx) {
                        float x = raw[s]->data[idx(s, n, a, 4, gy, gx)];
                        float y = ta.obj_targets[s][((n * 3 + a) * g + gy) * g + gx];
                        obj_acc += bce_element(x, y, w_n, 1.0f);
                        ++obj_count;
                    }
    }
    const double obj_loss = obj_acc / obj_count;

    // classification + box at positives
    double cls_acc = 0.0, box_acc = 0.0;
    const long P = static_cast<long>(ta.positives.size());
    for (const auto& pm : ta.positives) {
        for (int c = 0; c < C; ++c) {
            float x = raw[pm.scale]->data[idx(pm.scale, pm.batch, pm.anchor, 5 + c, pm.gy, pm.gx)];
            float y = (c == pm.class_id) ? 1.0f : 0.0f;
            cls_acc += bce_element(x, y, w_n, lcfg.pos_weight);
        }
        float tx = raw[pm.scale]->data[idx(pm.scale, pm.batch, pm.anchor, 0, pm.gy, pm.gx)];
        float ty = raw[pm.scale]->data[idx(pm.scale, pm.batch, pm.anchor, 1, pm.gy, pm.gx)];
        float tw = raw[pm.scale]->data[idx(pm.scale, pm.batch, pm.anchor, 2, pm.gy, pm.gx)];
        float th = raw[pm.scale]->data[idx(pm.scale, pm.batch, pm.anchor, 3, pm.gy, pm.gx)];
        BoxXYWH pred = decode_box(tx, ty, tw, th, pm.gx, pm.gy, mcfg.strides[pm.scale],
                                  mcfg.anchors[pm.scale][pm.anchor]);
        box_acc += iou_box_loss(pred, pm.gt);
    }
    const double cls_loss = P > 0 ? cls_acc / (P * C) : 0.0;
    const double box_loss = P > 0 ? box_acc / P : 0.0;

    LossBreakdown lb;
    lb.obj = obj_loss;
    lb.cls = cls_loss;
    lb.box = box_loss;
    lb.total_value =
        lcfg.lambda_obj * obj_loss + lcfg.lambda_cls * cls_loss + lcfg.lambda_box * box_loss;
    lb.total = Tensor::scalar(static_cast<float>(lb.total_value));

    bool any_grad = false;
    for (const auto& r : raw) any_grad = any_grad || r->requires_grad;
    if (tape && any_grad) {
        lb.total->requires_grad = true;
        auto ta_copy = std::make_shared<TargetAssignment>(ta);
        auto total = lb.total;
        tape->record([raw, ta_copy, lcfg, mcfg, total, cpa, C, w_n, obj_count, P, idx] {
            const float g0 = total->grad[0];
            for (const auto& r : raw) r->ensure_grad();
            const float obj_scale = g0 * lcfg.lambda_obj / static_cast<float>(obj_count);
            for (int s = 0; s < 3; ++s) {
                long g = ta_copy->grid[s];
                for (long n = 0; n < ta_copy->batch_size; ++n)
                    for (int a = 0; a < 3; ++a)
                        for (long gy = 0; gy < g; ++gy)
                            for (long gx = 0; gx < g; ++gx) {
                                size_t i = idx(s, n, a, 4, gy, gx);
                                float x = raw[s]->data[i];
                                float y = ta_copy->obj_targets[s][((n * 3 + a) * g + gy) * g + gx];
                                raw[s]->grad[i] += obj_scale * bce_element_dx(x, y, w_n, 1.0f);
                            }
            }
            if (P > 0) {
                const float cls_scale = g0 * lcfg.lambda_cls / static_cast<float>(P * C);
                const float box_scale = g0 * lcfg.lambda_box / static_cast<float>(P);
                for (const auto& pm : ta_copy->positives) {
                    for (int c = 0; c < C; ++c) {
                        size_t i = idx(pm.scale, pm.batch, pm.anchor, 5 + c, pm.gy, pm.gx);
                        float y = (c == pm.class_id) ? 1.0f : 0.0f;
                        raw[pm.scale]->grad[i] +=
                            cls_scale * bce_element_dx(raw[pm.scale]->data[i], y, w_n,
                                                       lcfg.pos_weight);
                    }
                    size_t it[4];
                    float t[4];
                    for (int j = 0; j < 4; ++j) {
                        it[j] = idx(pm.scale, pm.batch, pm.anchor, j, pm.gy, pm.gx);
                        t[j] = raw[pm.scale]->data[it[j]];
                    }
                    const Anchor& an = mcfg.anchors[pm.scale][pm.anchor];
                    const int stride = mcfg.strides[pm.scale];
                    BoxXYWH pred = decode_box(t[0], t[1], t[2], t[3], pm.gx, pm.gy, stride, an);
                    float d_box[4];
                    iou_box_loss_grad(pred, pm.gt, d_box);
                    // chain through the bounded decode
                    float sx = sigmoid_scalar(t[0]), sy = sigmoid_scalar(t[1]);
                    float sw = sigmoid_scalar(t[2]), sh = sigmoid_scalar(t[3]);
                    float d_t[4];
                    d_t[0] = d_box[0] * 2.0f * sx * (1.0f - sx) * stride;
                    d_t[1] = d_box[1] * 2.0f * sy * (1.0f - sy) * stride;
                    d_t[2] = d_box[2] * 8.0f * an.w * sw * sw * (1.0f - sw);
                    d_t[3] = d_box[3] * 8.0f * an.h * sh * sh * (1.0f - sh);
                    for (int j = 0; j < 4; ++j)
                        raw[pm.scale]->grad[it[j]] += box_scale * d_t[j];
                }
            }
        });
    }
    return lb;
}

// ---------------------------------------------------------------------------
// vanilla SGD

inline void sgd_step(Registry& reg, float lr) {
    for (auto& [name, p] : reg.params) {
        if (p->grad.empty())
            throw std::logic_error("sgd_step: parameter has no gradient: " + name);
        for (size_t i = 0; i < p->data.size(); ++i) p->data[i] -= lr * p->grad[i];
        p->zero_grad();
    }
}

}  // namespace fy
