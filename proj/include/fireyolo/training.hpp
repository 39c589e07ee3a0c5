#pragma once

// Epoch loop: deterministic shuffling, forward/loss/backward/SGD per batch,
// per-epoch validation metrics, best-mAP checkpointing, CSV history.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "fireyolo/dataset.hpp"
#include "fireyolo/detector.hpp"
#include "fireyolo/inference.hpp"
#include "fireyolo/loss.hpp"
#include "fireyolo/metrics.hpp"

namespace fy {

struct EpochStats {
    int epoch = 0;
    double loss_total = 0, loss_obj = 0, loss_cls = 0, loss_box = 0;
    double val_precision = 0, val_recall = 0, val_f1 = 0, val_map50 = 0;
    double epoch_seconds = 0;
};

struct TrainingHistory {
    std::vector<EpochStats> epochs;

    void write_csv(const std::string& path) const {
        std::ofstream os(path);
        os << "epoch,loss_total,loss_obj,loss_cls,loss_box,val_precision,val_recall,val_f1,"
              "val_map50,epoch_seconds\n";
        char buf[256];
        for (const auto& e : epochs) {
            std::snprintf(buf, sizeof(buf),
                          "%d,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.3f\n", e.epoch,
                          e.loss_total, e.loss_obj, e.loss_cls, e.loss_box, e.val_precision,
                          e.val_recall, e.val_f1, e.val_map50, e.epoch_seconds);
            os << buf;
        }
    }
};

struct TrainingDiverged : std::runtime_error {
    int epoch, batch;
    TrainingDiverged(int e, int b)
        : std::runtime_error("loss diverged to NaN at epoch " + std::to_string(e) + ", batch " +
                             std::to_string(b)),
          epoch(e),
          batch(b) {}
};

inline std::vector<GtBox> labels_to_gt(const std::vector<BoxLabel>& labels, int image_size) {
    std::vector<GtBox> out;
    const float S = static_cast<float>(image_size);
    for (const auto& l : labels) {
        BoxXYWH b{l.cx * S, l.cy * S, l.w * S, l.h * S};
        out.push_back({l.class_id, b.to_corners()});
    }
    return out;
}

// Run eval-mode inference over a set and score it; GT taken from the labels.
// Detections are decoded at a low threshold so the full PR range is present.
inline EvaluationReport validate_model(const DetectorModel& model,
                                       const std::vector<AnnotatedImage>& val_set,
                                       float match_iou = 0.5f, float decode_conf = 0.001f,
                                       float nms_iou = 0.45f) {
    std::vector<std::vector<Detection>> dets;
    std::vector<std::vector<GtBox>> gts;
    const int S = model.cfg.input_size;
    for (const auto& img : val_set) {
        AnnotatedImage resized = img.pixels.width == S && img.pixels.height == S
                                     ? img
                                     : stretch_resize(img, S);
        auto input = images_to_tensor({&resized});
        auto raw = model.forward(nullptr, input, /*training=*/false);
        dets.push_back(nms(decode(raw, model.cfg, decode_conf), nms_iou, 300));
        gts.push_back(labels_to_gt(resized.labels, S));
    }
    return evaluate_detections(dets, gts, match_iou);
}

inline TrainingHistory train(DetectorModel& model, const std::vector<AnnotatedImage>& train_set,
                             const std::vector<AnnotatedImage>& val_set,
                             const OptimizerConfig& ocfg, const LossConfig& lcfg, int seed,
                             const std::string& out_dir = "", bool quiet = true) {
    ocfg.validate();
    lcfg.validate();
    if (train_set.empty()) throw std::invalid_argument("train: empty training set");
    if (static_cast<size_t>(ocfg.batch_size) > train_set.size())
        throw std::invalid_argument("train: batch_size exceeds training set size");

    TrainingHistory history;
    double best_map = -1.0;
    for (int epoch = 0; epoch < ocfg.epochs; ++epoch) {
        auto t0 = std::chrono::steady_clock::now();
        float lr = ocfg.learning_rate;
        if (ocfg.linear_lr_decay && ocfg.epochs > 1)
            lr *= 1.0f - 0.9f * static_cast<float>(epoch) / (ocfg.epochs - 1);

        auto batches = make_batches(train_set, ocfg.batch_size, seed * 1000003 + epoch);
        double sum_total = 0, sum_obj = 0, sum_cls = 0, sum_box = 0;
        for (size_t b = 0; b < batches.size(); ++b) {
            Tape tape;
            auto raw = model.forward(&tape, batches[b].input, /*training=*/true);
            auto ta = assign_targets(batches[b].labels, model.cfg, lcfg);
            auto lb = compute_loss(&tape, raw, ta, lcfg, model.cfg);
            if (!std::isfinite(lb.total_value))
                throw TrainingDiverged(epoch, static_cast<int>(b));
            backward(lb.total, tape);
            sgd_step(model.registry, lr);
            sum_total += lb.total_value;
            sum_obj += lb.obj;
            sum_cls += lb.cls;
            sum_box += lb.box;
        }
        const double nb = static_cast<double>(batches.size());

        EvaluationReport rep;
        if (!val_set.empty()) rep = validate_model(model, val_set);

        EpochStats st;
        st.epoch = epoch;
        st.loss_total = sum_total / nb;
        st.loss_obj = sum_obj / nb;
        st.loss_cls = sum_cls / nb;
        st.loss_box = sum_box / nb;
        st.val_precision = rep.precision;
        st.val_recall = rep.recall;
        st.val_f1 = rep.best_f1;
        st.val_map50 = rep.map50;
        st.epoch_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        history.epochs.push_back(st);

        if (!out_dir.empty()) {
            namespace fs = std::filesystem;
            fs::create_directories(out_dir);
            model.save((fs::path(out_dir) / "last.ckpt").string());
            if (rep.map50 > best_map || val_set.empty()) {
                best_map = rep.map50;
                model.save((fs::path(out_dir) / "best.ckpt").string());
            }
            history.write_csv((fs::path(out_dir) / "history.csv").string());
        }
        if (!quiet) {
            std::printf("epoch %3d  loss %.4f (obj %.4f cls %.4f box %.4f)  mAP50 %.4f  F1 %.4f"
                        "  %.1fs\n",
                        epoch, st.loss_total, st.loss_obj, st.loss_cls, st.loss_box, st.val_map50,
                        st.val_f1, st.epoch_seconds);
            std::fflush(stdout);
        }
    }
    return history;
}

}  // namespace fy
