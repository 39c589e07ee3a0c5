#pragma once

// YOLO-format dataset ingestion (PPM images + txt labels), stretch-resize
// preprocessing, deterministic splitting/batching, and a synthetic
// fire-blob generator for desk-scale experiments.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "fireyolo/box.hpp"
#include "fireyolo/tensor.hpp"

namespace fy {

struct Image {
    int width = 0, height = 0;
    std::vector<uint8_t> rgb;  // H*W*3, row-major

    uint8_t& at(int y, int x, int c) { return rgb[(y * width + x) * 3 + c]; }
    uint8_t at(int y, int x, int c) const { return rgb[(y * width + x) * 3 + c]; }
};

struct AnnotatedImage {
    Image pixels;
    std::vector<BoxLabel> labels;
    std::string source_id;
};

struct RejectionReport {
    std::vector<std::pair<std::string, std::string>> entries;  // filename, reason

    void write_csv(const std::string& path) const {
        std::ofstream os(path);
        os << "filename,reason\n";
        for (const auto& [f, r] : entries) os << f << "," << r << "\n";
    }
};

struct DatasetSplit {
    std::vector<AnnotatedImage> train, val;
    int seed = 0;
    float ratio = 0.5f;
};

// ---------------------------------------------------------------------------
// PPM (P6) I/O

inline Image read_ppm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open image: " + path);
    std::string magic;
    is >> magic;
    if (magic != "P6") throw std::runtime_error("not a binary PPM (P6): " + path);
    auto next_token = [&]() {
        std::string tok;
        for (;;) {
            is >> std::ws;
            if (is.peek() == '#') {
                std::string line;
                std::getline(is, line);
                continue;
            }
            is >> tok;
            return tok;
        }
    };
    int w = std::stoi(next_token());
    int h = std::stoi(next_token());
    int maxval = std::stoi(next_token());
    if (w <= 0 || h <= 0 || maxval != 255)
        throw std::runtime_error("unsupported PPM header in " + path);
    is.get();  // single whitespace after maxval
    Image img;
    img.width = w;
    img.height = h;
    img.rgb.resize(static_cast<size_t>(w) * h * 3);
    is.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
    if (!is) throw std::runtime_error("truncated PPM payload: " + path);
    return img;
}

inline void write_ppm(const std::string& path, const Image& img) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write image: " + path);
    os << "P6\n" << img.width << " " << img.height << "\n255\n";
    os.write(reinterpret_cast<const char*>(img.rgb.data()),
             static_cast<std::streamsize>(img.rgb.size()));
}

// ---------------------------------------------------------------------------
// label parsing

// Returns false with a reason instead of throwing; ingestion rejects per file.
inline bool parse_label_file(const std::string& path, std::vector<BoxLabel>& out,
                             std::string& reason) {
    std::ifstream is(path);
    if (!is) {
        reason = "missing label file";
        return false;
    }
    out.clear();
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty() || line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::istringstream ls(line);
        BoxLabel b;
        double cx, cy, w, h;
        if (!(ls >> b.class_id >> cx >> cy >> w >> h) || b.class_id < 0) {
            reason = "malformed label line " + std::to_string(lineno);
            return false;
        }
        std::string extra;
        if (ls >> extra) {
            reason = "malformed label line " + std::to_string(lineno);
            return false;
        }
        // tolerate tiny numeric overshoot, reject anything worse
        const double tol = 1e-3;
        if (cx < -tol || cx > 1 + tol || cy < -tol || cy > 1 + tol || w <= 0 || w > 1 + tol ||
            h <= 0 || h > 1 + tol) {
            reason = "label out of range at line " + std::to_string(lineno);
            return false;
        }
        b.cx = static_cast<float>(std::clamp(cx, 0.0, 1.0));
        b.cy = static_cast<float>(std::clamp(cy, 0.0, 1.0));
        b.w = static_cast<float>(std::min(w, 1.0));
        b.h = static_cast<float>(std::min(h, 1.0));
        out.push_back(b);
    }
    if (out.empty()) {
        reason = "empty label file";
        return false;
    }
    return true;
}

// ---------------------------------------------------------------------------
// ingestion

inline std::vector<AnnotatedImage> load_dataset(const std::string& image_dir,
                                                const std::string& label_dir,
                                                RejectionReport& report) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(image_dir)) throw std::runtime_error("not a directory: " + image_dir);
    if (!fs::is_directory(label_dir)) throw std::runtime_error("not a directory: " + label_dir);
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(image_dir))
        if (e.is_regular_file() && e.path().extension() == ".ppm") files.push_back(e.path());
    std::sort(files.begin(), files.end());

    std::vector<AnnotatedImage> out;
    for (const auto& f : files) {
        AnnotatedImage ai;
        ai.source_id = f.stem().string();
        try {
            ai.pixels = read_ppm(f.string());
        } catch (const std::exception& e) {
            report.entries.emplace_back(f.filename().string(), e.what());
            continue;
        }
        std::string reason;
        auto label_path = fs::path(label_dir) / (f.stem().string() + ".txt");
        if (!parse_label_file(label_path.string(), ai.labels, reason)) {
            report.entries.emplace_back(f.filename().string(), reason);
            continue;
        }
        out.push_back(std::move(ai));
    }
    return out;
}

// ---------------------------------------------------------------------------
// stretch resize: bilinear, corner-aligned, no aspect preservation.
// Normalized labels are unchanged by construction.

inline Image stretch_resize_pixels(const Image& src, int target_w, int target_h) {
    if (src.width == target_w && src.height == target_h) return src;
    Image dst;
    dst.width = target_w;
    dst.height = target_h;
    dst.rgb.resize(static_cast<size_t>(target_w) * target_h * 3);
    const float sx = target_w > 1 ? static_cast<float>(src.width - 1) / (target_w - 1) : 0.0f;
    const float sy = target_h > 1 ? static_cast<float>(src.height - 1) / (target_h - 1) : 0.0f;
    for (int y = 0; y < target_h; ++y) {
        float fy = y * sy;
        int y0 = static_cast<int>(fy);
        int y1 = std::min(y0 + 1, src.height - 1);
        float wy = fy - y0;
        for (int x = 0; x < target_w; ++x) {
            float fx = x * sx;
            int x0 = static_cast<int>(fx);
            int x1 = std::min(x0 + 1, src.width - 1);
            float wx = fx - x0;
            for (int c = 0; c < 3; ++c) {
                float v = (1 - wy) * ((1 - wx) * src.at(y0, x0, c) + wx * src.at(y0, x1, c)) +
                          wy * ((1 - wx) * src.at(y1, x0, c) + wx * src.at(y1, x1, c));
                dst.at(y, x, c) = static_cast<uint8_t>(std::lround(std::clamp(v, 0.0f, 255.0f)));
            }
        }
    }
    return dst;
}

inline AnnotatedImage stretch_resize(const AnnotatedImage& img, int target) {
    if (target <= 0 || target % 2 != 0)
        throw std::invalid_argument("stretch_resize: target must be even and positive");
    AnnotatedImage out;
    out.pixels = stretch_resize_pixels(img.pixels, target, target);
    out.labels = img.labels;
    out.source_id = img.source_id;
    return out;
}

// ---------------------------------------------------------------------------
// split

inline DatasetSplit split(std::vector<AnnotatedImage> images, float ratio, int seed) {
    if (images.empty()) throw std::invalid_argument("split: empty input");
    if (!(ratio > 0.0f && ratio < 1.0f)) throw std::invalid_argument("split: ratio must be in (0,1)");
    std::mt19937 rng(static_cast<uint32_t>(seed));
    std::shuffle(images.begin(), images.end(), rng);
    const size_t n_train =
        static_cast<size_t>(std::lround(ratio * static_cast<double>(images.size())));
    DatasetSplit s;
    s.seed = seed;
    s.ratio = ratio;
    s.train.assign(images.begin(), images.begin() + n_train);
    s.val.assign(images.begin() + n_train, images.end());
    return s;
}

inline void write_split_manifest(const std::string& path, const DatasetSplit& s) {
    std::ofstream os(path);
    for (const auto& i : s.train) os << "train " << i.source_id << "\n";
    for (const auto& i : s.val) os << "val " << i.source_id << "\n";
}

// ---------------------------------------------------------------------------
// batching

struct Batch {
    TensorPtr input;  // N x 3 x S x S, pixels in [0,1]
    std::vector<std::vector<BoxLabel>> labels;
};

inline TensorPtr images_to_tensor(const std::vector<const AnnotatedImage*>& imgs) {
    const long N = static_cast<long>(imgs.size());
    const long S = imgs[0]->pixels.width;
    auto t = Tensor::create({N, 3, S, S});
    for (long n = 0; n < N; ++n) {
        const Image& im = imgs[n]->pixels;
        if (im.width != S || im.height != S)
            throw std::invalid_argument("images_to_tensor: inconsistent image sizes");
        for (long c = 0; c < 3; ++c) {
            float* dst = t->data.data() + (n * 3 + c) * S * S;
            for (long i = 0; i < S * S; ++i) dst[i] = im.rgb[i * 3 + c] / 255.0f;
        }
    }
    return t;
}

inline std::vector<Batch> make_batches(const std::vector<AnnotatedImage>& images, int batch_size,
                                       int epoch_seed) {
    if (batch_size < 1) throw std::invalid_argument("make_batches: batch_size must be >= 1");
    std::vector<size_t> order(images.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::mt19937 rng(static_cast<uint32_t>(epoch_seed));
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<Batch> out;
    for (size_t start = 0; start < order.size(); start += batch_size) {
        size_t end = std::min(order.size(), start + batch_size);
        std::vector<const AnnotatedImage*> imgs;
        Batch b;
        for (size_t i = start; i < end; ++i) {
            imgs.push_back(&images[order[i]]);
            b.labels.push_back(images[order[i]].labels);
        }
        b.input = images_to_tensor(imgs);
        out.push_back(std::move(b));
    }
    return out;
}

// ---------------------------------------------------------------------------
// synthetic fire-blob generator

// Dark textured background; used for negatives and benchmarking frames.
inline Image synthetic_background(std::mt19937& rng, int size) {
    Image img;
    img.width = size;
    img.height = size;
    img.rgb.resize(static_cast<size_t>(size) * size * 3);
    std::uniform_int_distribution<int> base_r(15, 55), base_g(15, 50), base_b(15, 45);
    std::uniform_int_distribution<int> noise(-12, 12);
    int br = base_r(rng), bg = base_g(rng), bb = base_b(rng);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            int n = noise(rng);
            img.at(y, x, 0) = static_cast<uint8_t>(std::clamp(br + n, 0, 255));
            img.at(y, x, 1) = static_cast<uint8_t>(std::clamp(bg + n, 0, 255));
            img.at(y, x, 2) = static_cast<uint8_t>(std::clamp(bb + n, 0, 255));
        }
    // a few dim gray distractor rectangles
    std::uniform_int_distribution<int> nrect(1, 3);
    std::uniform_real_distribution<float> fpos(0.05f, 0.95f), fsize(0.04f, 0.2f);
    std::uniform_int_distribution<int> gray(50, 90);
    int rects = nrect(rng);
    for (int r = 0; r < rects; ++r) {
        int g = gray(rng);
        int x0 = static_cast<int>(fpos(rng) * size), y0 = static_cast<int>(fpos(rng) * size);
        int w = static_cast<int>(fsize(rng) * size), h = static_cast<int>(fsize(rng) * size);
        for (int y = y0; y < std::min(size, y0 + h); ++y)
            for (int x = x0; x < std::min(size, x0 + w); ++x)
                for (int c = 0; c < 3; ++c) img.at(y, x, c) = static_cast<uint8_t>(g - c * 8);
    }
    return img;
}

inline std::vector<AnnotatedImage> generate_synthetic(int count, int image_size, int seed) {
    if (count < 1) throw std::invalid_argument("generate_synthetic: count must be >= 1");
    std::mt19937 rng(static_cast<uint32_t>(seed));
    std::vector<AnnotatedImage> out;
    out.reserve(count);
    std::uniform_int_distribution<int> nblobs(1, 3);
    std::uniform_real_distribution<float> fdiam(0.05f, 0.40f);  // fraction of image width
    std::uniform_real_distribution<float> faspect(0.75f, 1.33f);
    std::uniform_real_distribution<float> fphase(0.0f, 6.2831853f);
    std::uniform_real_distribution<float> funit(0.0f, 1.0f);

    for (int i = 0; i < count; ++i) {
        AnnotatedImage ai;
        ai.source_id = "synth_" + std::to_string(i);
        ai.pixels = synthetic_background(rng, image_size);
        int k = nblobs(rng);
        struct Blob {
            float cx, cy, rx, ry, phase, lobes;
        };
        std::vector<Blob> blobs;
        for (int b = 0; b < k; ++b) {
            // rejection-sample centers so blobs stay apart and in frame
            for (int attempt = 0; attempt < 40; ++attempt) {
                float diam = fdiam(rng);
                float rx = diam * image_size / 2.0f;
                float ry = rx * faspect(rng);
                float margin_x = rx * 1.2f / image_size, margin_y = ry * 1.2f / image_size;
                float cx = margin_x + funit(rng) * (1.0f - 2 * margin_x);
                float cy = margin_y + funit(rng) * (1.0f - 2 * margin_y);
                bool ok = true;
                for (const auto& o : blobs) {
                    float dx = (cx - o.cx) * image_size, dy = (cy - o.cy) * image_size;
                    float min_d = std::max(rx, ry) + std::max(o.rx, o.ry) + 4.0f;
                    if (dx * dx + dy * dy < min_d * min_d) ok = false;
                }
                if (!ok && attempt < 39) continue;
                if (!ok) break;  // drop this blob rather than overlap
                Blob bl{cx, cy, rx, ry, fphase(rng), 3.0f + std::floor(funit(rng) * 4.0f)};
                blobs.push_back(bl);
                break;
            }
        }
        if (blobs.empty()) {
            // always at least one blob: place it dead center
            float rx = 0.15f * image_size;
            blobs.push_back({0.5f, 0.5f, rx, rx, 0.0f, 4.0f});
        }
        for (const auto& bl : blobs) {
            const float edge_amp = 0.15f;
            float px = bl.cx * image_size, py = bl.cy * image_size;
            float rmax = std::max(bl.rx, bl.ry) * (1.0f + edge_amp);
            int x0 = std::max(0, static_cast<int>(px - rmax - 1));
            int x1 = std::min(image_size - 1, static_cast<int>(px + rmax + 1));
            int y0 = std::max(0, static_cast<int>(py - rmax - 1));
            int y1 = std::min(image_size - 1, static_cast<int>(py + rmax + 1));
            for (int y = y0; y <= y1; ++y)
                for (int x = x0; x <= x1; ++x) {
                    float dx = (x - px) / bl.rx, dy = (y - py) / bl.ry;
                    float r = std::sqrt(dx * dx + dy * dy);
                    float theta = std::atan2(dy, dx);
                    float edge = 1.0f + edge_amp * std::sin(bl.lobes * theta + bl.phase);
                    if (r >= edge) continue;
                    float t = r / edge;  // 0 center .. 1 rim
                    // hot yellow-white core fading to deep orange-red rim
                    float fr = 255.0f;
                    float fg = 230.0f - 160.0f * t;
                    float fb = 120.0f - 110.0f * t;
                    float a = 1.0f - 0.35f * t * t;  // blend strength
                    ai.pixels.at(y, x, 0) = static_cast<uint8_t>(std::clamp(
                        (1 - a) * ai.pixels.at(y, x, 0) + a * fr, 0.0f, 255.0f));
                    ai.pixels.at(y, x, 1) = static_cast<uint8_t>(std::clamp(
                        (1 - a) * ai.pixels.at(y, x, 1) + a * fg, 0.0f, 255.0f));
                    ai.pixels.at(y, x, 2) = static_cast<uint8_t>(std::clamp(
                        (1 - a) * ai.pixels.at(y, x, 2) + a * std::max(fb, 0.0f), 0.0f, 255.0f));
                }
            BoxLabel label;
            label.class_id = 0;
            float bw = 2 * bl.rx * (1.0f + edge_amp) / image_size;
            float bh = 2 * bl.ry * (1.0f + edge_amp) / image_size;
            label.cx = std::clamp(bl.cx, bw / 2, 1.0f - bw / 2);
            label.cy = std::clamp(bl.cy, bh / 2, 1.0f - bh / 2);
            label.w = std::min(bw, 1.0f);
            label.h = std::min(bh, 1.0f);
            ai.labels.push_back(label);
        }
        out.push_back(std::move(ai));
    }
    return out;
}

inline void write_dataset(const std::string& dir, const std::vector<AnnotatedImage>& images) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(dir) / "images");
    fs::create_directories(fs::path(dir) / "labels");
    for (const auto& ai : images) {
        write_ppm((fs::path(dir) / "images" / (ai.source_id + ".ppm")).string(), ai.pixels);
        std::ofstream os((fs::path(dir) / "labels" / (ai.source_id + ".txt")).string());
        for (const auto& b : ai.labels)
            os << b.class_id << " " << b.cx << " " << b.cy << " " << b.w << " " << b.h << "\n";
    }
}

}  // namespace fy
