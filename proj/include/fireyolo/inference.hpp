#pragma once

// Raw-map decoding, per-class NMS, and timed image / frame-sequence detection.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "fireyolo/box.hpp"
#include "fireyolo/dataset.hpp"
#include "fireyolo/detector.hpp"
#include "fireyolo/loss.hpp"

namespace fy {

struct InferenceConfig {
    float conf_threshold = 0.25f;
    float nms_iou_threshold = 0.45f;
    int max_detections = 300;

    void validate() const {
        if (!(conf_threshold > 0 && conf_threshold < 1))
            throw std::invalid_argument("InferenceConfig: conf_threshold must be in (0,1)");
        if (!(nms_iou_threshold > 0 && nms_iou_threshold < 1))
            throw std::invalid_argument("InferenceConfig: nms_iou_threshold must be in (0,1)");
        if (max_detections < 1)
            throw std::invalid_argument("InferenceConfig: max_detections must be >= 1");
    }
};

// Decode raw head maps into detections at model-input pixel scale.
// confidence = sigmoid(obj) * max_c sigmoid(cls_c).
inline std::vector<Detection> decode(const std::array<TensorPtr, 3>& raw, const ModelConfig& cfg,
                                     float conf_threshold) {
    const int cpa = cfg.channels_per_anchor();
    const int C = cfg.num_classes;
    std::vector<Detection> out;
    for (int s = 0; s < 3; ++s) {
        const long g = cfg.input_size / cfg.strides[s];
        if (raw[s]->dim(1) != 3 * cpa || raw[s]->dim(2) != g || raw[s]->dim(3) != g)
            throw std::invalid_argument("decode: raw map shape mismatch at scale " +
                                        std::to_string(s));
        if (raw[s]->dim(0) != 1)
            throw std::invalid_argument("decode: expects single-image maps");
        const float* d = raw[s]->data.data();
        auto at = [&](int a, int ch, long gy, long gx) {
            return d[((a * cpa + ch) * g + gy) * g + gx];
        };
        for (int a = 0; a < 3; ++a)
            for (long gy = 0; gy < g; ++gy)
                for (long gx = 0; gx < g; ++gx) {
                    float obj = sigmoid_scalar(at(a, 4, gy, gx));
                    int best_c = 0;
                    float best_p = 0.0f;
                    for (int c = 0; c < C; ++c) {
                        float p = sigmoid_scalar(at(a, 5 + c, gy, gx));
                        if (p > best_p) {
                            best_p = p;
                            best_c = c;
                        }
                    }
                    float conf = obj * best_p;
                    if (!(conf >= conf_threshold)) continue;  // also drops NaN
                    BoxXYWH b = decode_box(at(a, 0, gy, gx), at(a, 1, gy, gx), at(a, 2, gy, gx),
                                           at(a, 3, gy, gx), gx, gy, cfg.strides[s],
                                           cfg.anchors[s][a]);
                    Detection det;
                    det.class_id = best_c;
                    det.confidence = conf;
                    det.box = b.to_corners();
                    bool sane = det.box.x1 < det.box.x2 && det.box.y1 < det.box.y2 &&
                                std::isfinite(det.box.x1) && std::isfinite(det.box.y1) &&
                                std::isfinite(det.box.x2) && std::isfinite(det.box.y2);
                    if (sane) out.push_back(det);
                }
    }
    std::sort(out.begin(), out.end(), detection_before);
    return out;
}

// Greedy per-class NMS with deterministic tie-breaking.
inline std::vector<Detection> nms(std::vector<Detection> dets, float iou_threshold,
                                  int max_detections) {
    std::sort(dets.begin(), dets.end(), detection_before);
    std::vector<Detection> kept;
    for (const auto& d : dets) {
        bool suppressed = false;
        for (const auto& k : kept) {
            if (k.class_id != d.class_id) continue;
            if (iou(k.box, d.box) >= iou_threshold) {
                suppressed = true;
                break;
            }
        }
        if (!suppressed) {
            kept.push_back(d);
            if (static_cast<int>(kept.size()) >= max_detections) break;
        }
    }
    return kept;
}

struct DetectResult {
    std::vector<Detection> detections;  // original-image pixel coordinates
    double latency_seconds = 0;
};

inline DetectResult detect_image(const DetectorModel& model, const Image& image,
                                 const InferenceConfig& icfg) {
    icfg.validate();
    const int S = model.cfg.input_size;
    Image resized = stretch_resize_pixels(image, S, S);
    AnnotatedImage tmp;
    tmp.pixels = std::move(resized);
    auto input = images_to_tensor({&tmp});

    auto t0 = std::chrono::steady_clock::now();
    auto raw = model.forward(nullptr, input, /*training=*/false);
    auto dets = nms(decode(raw, model.cfg, icfg.conf_threshold), icfg.nms_iou_threshold,
                    icfg.max_detections);
    auto t1 = std::chrono::steady_clock::now();

    // inverse stretch back to original pixels, clamped to frame
    const float sx = static_cast<float>(image.width) / S;
    const float sy = static_cast<float>(image.height) / S;
    for (auto& d : dets) {
        d.box.x1 = std::clamp(d.box.x1 * sx, 0.0f, static_cast<float>(image.width));
        d.box.x2 = std::clamp(d.box.x2 * sx, 0.0f, static_cast<float>(image.width));
        d.box.y1 = std::clamp(d.box.y1 * sy, 0.0f, static_cast<float>(image.height));
        d.box.y2 = std::clamp(d.box.y2 * sy, 0.0f, static_cast<float>(image.height));
    }
    DetectResult r;
    r.detections = std::move(dets);
    r.latency_seconds = std::chrono::duration<double>(t1 - t0).count();
    return r;
}

struct TimingSummary {
    long frames = 0;
    double total_s = 0, mean_s = 0, median_s = 0, max_s = 0, fps = 0;

    static TimingSummary from_latencies(std::vector<double> lat) {
        TimingSummary t;
        t.frames = static_cast<long>(lat.size());
        if (lat.empty()) return t;
        for (double v : lat) {
            t.total_s += v;
            t.max_s = std::max(t.max_s, v);
        }
        t.mean_s = t.total_s / t.frames;
        std::sort(lat.begin(), lat.end());
        t.median_s = lat.size() % 2 ? lat[lat.size() / 2]
                                    : 0.5 * (lat[lat.size() / 2 - 1] + lat[lat.size() / 2]);
        t.fps = t.total_s > 0 ? t.frames / t.total_s : 0;
        return t;
    }

    void write_csv(const std::string& path) const {
        std::ofstream os(path);
        os << "frames,total_s,mean_s,median_s,max_s,fps\n";
        os << frames << "," << total_s << "," << mean_s << "," << median_s << "," << max_s << ","
           << fps << "\n";
    }
};

struct SequenceResult {
    std::vector<std::pair<std::string, std::vector<Detection>>> frames;  // frame name -> dets
    std::vector<std::pair<std::string, std::string>> skipped;            // frame, reason
    TimingSummary timing;
};

inline SequenceResult detect_sequence(const DetectorModel& model, const std::string& frame_dir,
                                      const InferenceConfig& icfg) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(frame_dir)) throw std::runtime_error("not a directory: " + frame_dir);
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(frame_dir))
        if (e.is_regular_file() && e.path().extension() == ".ppm") files.push_back(e.path());
    std::sort(files.begin(), files.end());

    SequenceResult sr;
    std::vector<double> latencies;
    for (const auto& f : files) {
        Image img;
        try {
            img = read_ppm(f.string());
        } catch (const std::exception& e) {
            sr.skipped.emplace_back(f.filename().string(), e.what());
            continue;
        }
        auto r = detect_image(model, img, icfg);
        latencies.push_back(r.latency_seconds);
        sr.frames.emplace_back(f.filename().string(), std::move(r.detections));
    }
    sr.timing = TimingSummary::from_latencies(std::move(latencies));
    return sr;
}

inline void write_detections_csv(const std::string& path,
                                 const std::vector<std::pair<std::string,
                                                             std::vector<Detection>>>& frames) {
    std::ofstream os(path);
    os << "frame,class_id,confidence,x1,y1,x2,y2\n";
    char conf[32];
    for (const auto& [name, dets] : frames)
        for (const auto& d : dets) {
            std::snprintf(conf, sizeof(conf), "%.6f", d.confidence);
            os << name << "," << d.class_id << "," << conf << "," << std::lround(d.box.x1) << ","
               << std::lround(d.box.y1) << "," << std::lround(d.box.x2) << ","
               << std::lround(d.box.y2) << "\n";
        }
}

}  // namespace fy
