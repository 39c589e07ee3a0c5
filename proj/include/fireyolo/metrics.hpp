#pragma once

// Detection evaluation: IoU matching, Precision/Recall/F1, confidence
// sweeps, all-point-interpolated AP / mAP, curve emission and
// multi-model comparison tables.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fireyolo/box.hpp"

namespace fy {

struct MatchOutcome {
    // (confidence, is_tp) per detection, in match order (confidence desc)
    std::vector<std::pair<float, bool>> flags;
    long fn_count = 0;
    long gt_count = 0;
};

struct GtBox {
    int class_id = 0;
    Box box;
};

// Greedy matching: detections in confidence order, each TP if an unmatched
// same-class GT has IoU >= K (highest IoU, ties to lowest GT index).
inline MatchOutcome match_detections(std::vector<Detection> dets, const std::vector<GtBox>& gts,
                                     float iou_threshold) {
    std::sort(dets.begin(), dets.end(), detection_before);
    MatchOutcome out;
    out.gt_count = static_cast<long>(gts.size());
    std::vector<bool> used(gts.size(), false);
    for (const auto& d : dets) {
        int best = -1;
        float best_iou = 0.0f;
        for (size_t i = 0; i < gts.size(); ++i) {
            if (used[i] || gts[i].class_id != d.class_id) continue;
            float v = iou(d.box, gts[i].box);
            if (v >= iou_threshold && v > best_iou) {
                best_iou = v;
                best = static_cast<int>(i);
            }
        }
        if (best >= 0) {
            used[best] = true;
            out.flags.emplace_back(d.confidence, true);
        } else {
            out.flags.emplace_back(d.confidence, false);
        }
    }
    for (bool u : used)
        if (!u) ++out.fn_count;
    return out;
}

struct PRF1 {
    double precision = 1, recall = 1, f1 = 0;
};

// Degenerate conventions: P := 1 with no detections, R := 1 with no GT,
// F1 := 0 when P + R = 0.
inline PRF1 precision_recall_f1(long tp, long fp, long fn) {
    PRF1 r;
    r.precision = (tp + fp) > 0 ? static_cast<double>(tp) / (tp + fp) : 1.0;
    r.recall = (tp + fn) > 0 ? static_cast<double>(tp) / (tp + fn) : 1.0;
    r.f1 = (r.precision + r.recall) > 0
               ? 2.0 * r.precision * r.recall / (r.precision + r.recall)
               : 0.0;
    return r;
}

inline PRF1 precision_recall_f1(const MatchOutcome& m) {
    long tp = 0, fp = 0;
    for (const auto& [_, is_tp] : m.flags) (is_tp ? tp : fp)++;
    return precision_recall_f1(tp, fp, m.fn_count);
}

struct CurvePoint {
    double confidence = 0, precision = 1, recall = 1, f1 = 0;
};

inline std::vector<double> default_sweep_grid() {
    std::vector<double> g;
    for (int i = 0; i <= 100; ++i) g.push_back(i / 100.0);
    return g;
}

// Sweep over thresholds. Because matching processes detections in descending
// confidence, the matching of any confidence prefix equals the truncation of
// the full matching, so one sort + one match suffices.
inline std::vector<CurvePoint> confidence_sweep(const MatchOutcome& full,
                                                const std::vector<double>& grid) {
    std::vector<CurvePoint> out;
    // flags are confidence-descending
    for (double t : grid) {
        long tp = 0, fp = 0;
        for (const auto& [conf, is_tp] : full.flags) {
            if (conf < t) break;
            (is_tp ? tp : fp)++;
        }
        long fn = full.gt_count - tp;
        PRF1 p = precision_recall_f1(tp, fp, fn);
        out.push_back({t, p.precision, p.recall, p.f1});
    }
    return out;
}

// All-point interpolated AP from per-detection TP flags (confidence desc)
// and the GT count: right-max precision envelope, summed over recall steps.
inline double average_precision_from_flags(const std::vector<std::pair<float, bool>>& flags,
                                           long gt_count) {
    if (gt_count == 0) return flags.empty() ? 1.0 : 0.0;
    std::vector<double> prec, rec;
    long tp = 0, fp = 0;
    for (const auto& [_, is_tp] : flags) {
        (is_tp ? tp : fp)++;
        prec.push_back(static_cast<double>(tp) / (tp + fp));
        rec.push_back(static_cast<double>(tp) / gt_count);
    }
    // monotone envelope from the right
    for (int i = static_cast<int>(prec.size()) - 2; i >= 0; --i)
        prec[i] = std::max(prec[i], prec[i + 1]);
    double ap = 0.0, prev_r = 0.0;
    for (size_t i = 0; i < prec.size(); ++i) {
        if (rec[i] > prev_r) {
            ap += (rec[i] - prev_r) * prec[i];
            prev_r = rec[i];
        }
    }
    return ap;
}

inline double average_precision(const std::vector<Detection>& dets, const std::vector<GtBox>& gts,
                                float iou_threshold) {
    MatchOutcome m = match_detections(dets, gts, iou_threshold);
    return average_precision_from_flags(m.flags, m.gt_count);
}

inline double mean_average_precision(const std::vector<double>& per_class_aps) {
    if (per_class_aps.empty())
        throw std::invalid_argument("mean_average_precision: empty AP list");
    double acc = 0.0;
    for (double a : per_class_aps) acc += a;
    return acc / static_cast<double>(per_class_aps.size());
}

// ---------------------------------------------------------------------------
// dataset-level evaluation

struct EvaluationReport {
    std::string model_id;
    long model_size_bytes = 0;
    std::map<int, double> per_class_ap;
    double map50 = 0;
    std::vector<CurvePoint> curve;  // pooled over classes, 101-point grid
    double best_f1 = 0;
    double best_f1_threshold = 0;
    long tp = 0, fp = 0, fn = 0;  // at best-F1 threshold
    double precision = 0, recall = 0;  // at best-F1 threshold
};

// detections/gts are per-image lists; matching is within-image.
inline EvaluationReport evaluate_detections(
    const std::vector<std::vector<Detection>>& detections_per_image,
    const std::vector<std::vector<GtBox>>& gts_per_image, float iou_threshold,
    const std::vector<double>& grid = default_sweep_grid()) {
    if (detections_per_image.size() != gts_per_image.size())
        throw std::invalid_argument("evaluate_detections: image count mismatch");
    // pooled matching for curves
    MatchOutcome pooled;
    std::map<int, MatchOutcome> per_class;
    std::set<int> classes;
    for (const auto& gts : gts_per_image)
        for (const auto& g : gts) classes.insert(g.class_id);
    for (size_t i = 0; i < gts_per_image.size(); ++i) {
        MatchOutcome m = match_detections(detections_per_image[i], gts_per_image[i], iou_threshold);
        pooled.flags.insert(pooled.flags.end(), m.flags.begin(), m.flags.end());
        pooled.fn_count += m.fn_count;
        pooled.gt_count += m.gt_count;
        for (int c : classes) {
            std::vector<Detection> dc;
            std::vector<GtBox> gc;
            for (const auto& d : detections_per_image[i])
                if (d.class_id == c) dc.push_back(d);
            for (const auto& g : gts_per_image[i])
                if (g.class_id == c) gc.push_back(g);
            MatchOutcome mc = match_detections(dc, gc, iou_threshold);
            auto& acc = per_class[c];
            acc.flags.insert(acc.flags.end(), mc.flags.begin(), mc.flags.end());
            acc.fn_count += mc.fn_count;
            acc.gt_count += mc.gt_count;
        }
    }
    std::sort(pooled.flags.begin(), pooled.flags.end(),
              [](const auto& a, const auto& b) { return a.first > b.first; });

    EvaluationReport rep;
    std::vector<double> aps;
    for (auto& [c, m] : per_class) {
        std::sort(m.flags.begin(), m.flags.end(),
                  [](const auto& a, const auto& b) { return a.first > b.first; });
        double ap = average_precision_from_flags(m.flags, m.gt_count);
        rep.per_class_ap[c] = ap;
        aps.push_back(ap);
    }
    rep.map50 = mean_average_precision(aps);
    rep.curve = confidence_sweep(pooled, grid);
    for (const auto& p : rep.curve) {
        if (p.f1 > rep.best_f1) {
            rep.best_f1 = p.f1;
            rep.best_f1_threshold = p.confidence;
        }
    }
    // counts at the best threshold
    long tp = 0, fp = 0;
    for (const auto& [conf, is_tp] : pooled.flags) {
        if (conf < rep.best_f1_threshold) break;
        (is_tp ? tp : fp)++;
    }
    rep.tp = tp;
    rep.fp = fp;
    rep.fn = pooled.gt_count - tp;
    PRF1 prf = precision_recall_f1(tp, fp, rep.fn);
    rep.precision = prf.precision;
    rep.recall = prf.recall;
    return rep;
}

// ---------------------------------------------------------------------------
// curve emission: CSV + standalone SVG line charts

namespace detail_svg {

inline std::string fmt6(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

// Simple line chart over the unit square [0,1] x [0,1].
inline void write_line_chart(const std::string& path, const std::string& title,
                             const std::string& x_label, const std::string& y_label,
                             const std::vector<std::pair<double, double>>& pts) {
    const int Wpx = 640, Hpx = 480, m = 60;  // margins
    const int pw = Wpx - 2 * m, ph = Hpx - 2 * m;
    auto px = [&](double x) { return m + x * pw; };
    auto py = [&](double y) { return Hpx - m - y * ph; };
    std::ofstream os(path);
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << Wpx << "\" height=\"" << Hpx
       << "\" viewBox=\"0 0 " << Wpx << " " << Hpx << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << Wpx / 2 << "\" y=\"28\" text-anchor=\"middle\" font-size=\"18\">"
       << title << "</text>\n";
    // axes over [0,1] x [0,1]
    os << "<rect x=\"" << m << "\" y=\"" << m << "\" width=\"" << pw << "\" height=\"" << ph
       << "\" fill=\"none\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 5; ++i) {
        double v = i / 5.0;
        os << "<text x=\"" << px(v) << "\" y=\"" << Hpx - m + 20
           << "\" text-anchor=\"middle\" font-size=\"12\">" << fmt6(v).substr(0, 3) << "</text>\n";
        os << "<text x=\"" << m - 8 << "\" y=\"" << py(v) + 4
           << "\" text-anchor=\"end\" font-size=\"12\">" << fmt6(v).substr(0, 3) << "</text>\n";
        os << "<line x1=\"" << px(v) << "\" y1=\"" << Hpx - m << "\" x2=\"" << px(v) << "\" y2=\""
           << Hpx - m + 5 << "\" stroke=\"black\"/>\n";
        os << "<line x1=\"" << m - 5 << "\" y1=\"" << py(v) << "\" x2=\"" << m << "\" y2=\""
           << py(v) << "\" stroke=\"black\"/>\n";
    }
    os << "<text x=\"" << Wpx / 2 << "\" y=\"" << Hpx - 14
       << "\" text-anchor=\"middle\" font-size=\"14\">" << x_label << "</text>\n";
    os << "<text x=\"18\" y=\"" << Hpx / 2 << "\" text-anchor=\"middle\" font-size=\"14\" "
       << "transform=\"rotate(-90 18 " << Hpx / 2 << ")\">" << y_label << "</text>\n";
    os << "<polyline fill=\"none\" stroke=\"#d14\" stroke-width=\"2\" points=\"";
    for (const auto& [x, y] : pts)
        os << px(std::clamp(x, 0.0, 1.0)) << "," << py(std::clamp(y, 0.0, 1.0)) << " ";
    os << "\"/>\n</svg>\n";
}

}  // namespace detail_svg

inline void emit_curves(const EvaluationReport& rep, const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    auto write_csv = [&](const std::string& name, const std::string& header, auto value_of) {
        std::ofstream os((fs::path(out_dir) / name).string());
        if (!os) throw std::runtime_error("emit_curves: cannot write to " + out_dir);
        os << header << "\n";
        for (const auto& p : rep.curve) {
            auto [x, y] = value_of(p);
            os << detail_svg::fmt6(x) << "," << detail_svg::fmt6(y) << "\n";
        }
    };
    write_csv("p_vs_conf.csv", "confidence,value",
              [](const CurvePoint& p) { return std::pair{p.confidence, p.precision}; });
    write_csv("r_vs_conf.csv", "confidence,value",
              [](const CurvePoint& p) { return std::pair{p.confidence, p.recall}; });
    write_csv("f1_vs_conf.csv", "confidence,value",
              [](const CurvePoint& p) { return std::pair{p.confidence, p.f1}; });
    write_csv("p_vs_r.csv", "recall,precision",
              [](const CurvePoint& p) { return std::pair{p.recall, p.precision}; });

    auto pts = [&](auto value_of) {
        std::vector<std::pair<double, double>> v;
        for (const auto& p : rep.curve) v.push_back(value_of(p));
        return v;
    };
    const std::string tag = rep.model_id.empty() ? "" : " (" + rep.model_id + ")";
    detail_svg::write_line_chart(
        (fs::path(out_dir) / "p_vs_conf.svg").string(), "Precision vs Confidence" + tag,
        "confidence", "precision",
        pts([](const CurvePoint& p) { return std::pair{p.confidence, p.precision}; }));
    detail_svg::write_line_chart(
        (fs::path(out_dir) / "r_vs_conf.svg").string(), "Recall vs Confidence" + tag, "confidence",
        "recall", pts([](const CurvePoint& p) { return std::pair{p.confidence, p.recall}; }));
    detail_svg::write_line_chart(
        (fs::path(out_dir) / "f1_vs_conf.svg").string(), "F1 vs Confidence" + tag, "confidence",
        "F1", pts([](const CurvePoint& p) { return std::pair{p.confidence, p.f1}; }));
    detail_svg::write_line_chart(
        (fs::path(out_dir) / "p_vs_r.svg").string(), "Precision vs Recall" + tag, "recall",
        "precision", pts([](const CurvePoint& p) { return std::pair{p.recall, p.precision}; }));
}

// Table-4-style comparison: rows Precision / Recall / F1 / mAP / Model Size,
// one column per model. Scalars taken at each model's best-F1 threshold.
inline std::string compare_models(const std::vector<EvaluationReport>& reports,
                                  const std::string& csv_path = "") {
    if (reports.empty()) throw std::invalid_argument("compare_models: no reports");
    std::ostringstream text, csv;
    auto row = [&](const std::string& name, auto value_of) {
        text << name;
        csv << name;
        for (const auto& r : reports) {
            text << "\t" << value_of(r);
            csv << "," << value_of(r);
        }
        text << "\n";
        csv << "\n";
    };
    text << "metric";
    csv << "metric";
    for (const auto& r : reports) {
        text << "\t" << r.model_id;
        csv << "," << r.model_id;
    }
    text << "\n";
    csv << "\n";
    row("precision", [](const EvaluationReport& r) { return detail_svg::fmt6(r.precision); });
    row("recall", [](const EvaluationReport& r) { return detail_svg::fmt6(r.recall); });
    row("f1", [](const EvaluationReport& r) { return detail_svg::fmt6(r.best_f1); });
    row("f1_threshold",
        [](const EvaluationReport& r) { return detail_svg::fmt6(r.best_f1_threshold); });
    row("map50", [](const EvaluationReport& r) { return detail_svg::fmt6(r.map50); });
    row("model_size_bytes",
        [](const EvaluationReport& r) { return std::to_string(r.model_size_bytes); });
    if (!csv_path.empty()) {
        std::ofstream os(csv_path);
        os << csv.str();
    }
    return text.str();
}

}  // namespace fy
