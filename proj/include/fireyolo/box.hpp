#pragma once

// Box geometry shared by dataset labels, the loss, inference and metrics.

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace fy {

// Normalized ground-truth label: center + size in [0,1] of the image dims.
struct BoxLabel {
    int class_id = 0;
    float cx = 0, cy = 0, w = 0, h = 0;
};

// Corner-form box in pixels.
struct Box {
    float x1 = 0, y1 = 0, x2 = 0, y2 = 0;
    float area() const { return (x2 - x1) * (y2 - y1); }
};

// Center-form box in pixels.
struct BoxXYWH {
    float cx = 0, cy = 0, w = 0, h = 0;
    Box to_corners() const { return {cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2}; }
};

struct Detection {
    int class_id = 0;
    float confidence = 0;
    Box box;
};

inline float iou(const Box& a, const Box& b) {
    if (!(a.x1 < a.x2 && a.y1 < a.y2 && b.x1 < b.x2 && b.y1 < b.y2))
        throw std::invalid_argument("iou: degenerate box");
    float ix1 = std::max(a.x1, b.x1), iy1 = std::max(a.y1, b.y1);
    float ix2 = std::min(a.x2, b.x2), iy2 = std::min(a.y2, b.y2);
    float iw = std::max(0.0f, ix2 - ix1), ih = std::max(0.0f, iy2 - iy1);
    float inter = iw * ih;
    float uni = a.area() + b.area() - inter;
    return uni > 0.0f ? inter / uni : 0.0f;
}

// Deterministic detection ordering: confidence desc, ties by x1 then y1 asc.
inline bool detection_before(const Detection& a, const Detection& b) {
    if (a.confidence != b.confidence) return a.confidence > b.confidence;
    if (a.box.x1 != b.box.x1) return a.box.x1 < b.box.x1;
    return a.box.y1 < b.box.y1;
}

}  // namespace fy
