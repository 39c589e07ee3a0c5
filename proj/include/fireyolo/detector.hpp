#pragma once

// YOLOv5-style detector: focus stem, CSP backbone, FPN + PAN neck,
// three 1x1 anchor heads. Scaled by depth/width multiples with the
// usual n/s/m/l/x presets.

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "fireyolo/checkpoint.hpp"
#include "fireyolo/tensor.hpp"

#include <json.hpp>

namespace fy {

struct Anchor {
    float w = 0, h = 0;
};

struct ModelConfig {
    float depth_multiple = 0.33f;
    float width_multiple = 0.25f;
    int num_classes = 1;
    int input_size = 416;
    std::array<std::array<Anchor, 3>, 3> anchors{};  // per scale, small to large stride
    std::array<int, 3> strides{8, 16, 32};
    std::string preset_name = "custom";

    int channels_per_anchor() const { return 5 + num_classes; }
    int head_channels() const { return 3 * channels_per_anchor(); }

    void validate() const {
        if (depth_multiple <= 0 || width_multiple <= 0)
            throw std::invalid_argument("ModelConfig: multiples must be positive");
        if (num_classes < 1) throw std::invalid_argument("ModelConfig: num_classes must be >= 1");
        if (input_size <= 0 || input_size % 32 != 0)
            throw std::invalid_argument("ModelConfig: input_size must be a positive multiple of 32");
        for (const auto& scale : anchors)
            for (const auto& a : scale)
                if (a.w <= 0 || a.h <= 0)
                    throw std::invalid_argument("ModelConfig: anchor dims must be positive");
    }

    // Standard YOLO anchor set, defined at a 640 reference and scaled to input_size.
    static std::array<std::array<Anchor, 3>, 3> default_anchors(int input_size) {
        const float base[3][3][2] = {
            {{10, 13}, {16, 30}, {33, 23}},
            {{30, 61}, {62, 45}, {59, 119}},
            {{116, 90}, {156, 198}, {373, 326}},
        };
        float s = static_cast<float>(input_size) / 640.0f;
        std::array<std::array<Anchor, 3>, 3> out{};
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) out[i][j] = {base[i][j][0] * s, base[i][j][1] * s};
        return out;
    }

    static ModelConfig preset(const std::string& name, int num_classes = 1, int input_size = 416) {
        ModelConfig c;
        if (name == "n") {
            c.depth_multiple = 0.33f;
            c.width_multiple = 0.25f;
        } else if (name == "s") {
            c.depth_multiple = 0.33f;
            c.width_multiple = 0.50f;
        } else if (name == "m") {
            c.depth_multiple = 0.67f;
            c.width_multiple = 0.75f;
        } else if (name == "l") {
            c.depth_multiple = 1.0f;
            c.width_multiple = 1.0f;
        } else if (name == "x") {
            c.depth_multiple = 1.33f;
            c.width_multiple = 1.25f;
        } else {
            throw std::invalid_argument("unknown preset: " + name);
        }
        c.preset_name = name;
        c.num_classes = num_classes;
        c.input_size = input_size;
        c.anchors = default_anchors(input_size);
        c.validate();
        return c;
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["depth_multiple"] = depth_multiple;
        j["width_multiple"] = width_multiple;
        j["num_classes"] = num_classes;
        j["input_size"] = input_size;
        j["preset"] = preset_name;
        j["strides"] = strides;
        nlohmann::json a = nlohmann::json::array();
        for (const auto& scale : anchors) {
            nlohmann::json s = nlohmann::json::array();
            for (const auto& an : scale) s.push_back({an.w, an.h});
            a.push_back(s);
        }
        j["anchors"] = a;
        return j;
    }

    static ModelConfig from_json(const nlohmann::json& j) {
        ModelConfig c;
        c.depth_multiple = j.at("depth_multiple").get<float>();
        c.width_multiple = j.at("width_multiple").get<float>();
        c.num_classes = j.at("num_classes").get<int>();
        c.input_size = j.at("input_size").get<int>();
        c.preset_name = j.value("preset", "custom");
        for (int i = 0; i < 3; ++i) {
            c.strides[i] = j.at("strides")[i].get<int>();
            for (int k = 0; k < 3; ++k) {
                c.anchors[i][k].w = j.at("anchors")[i][k][0].get<float>();
                c.anchors[i][k].h = j.at("anchors")[i][k][1].get<float>();
            }
        }
        c.validate();
        return c;
    }
};

// Named parameters (trainable) and buffers (BN running stats).
struct Registry {
    std::vector<std::pair<std::string, TensorPtr>> params;
    std::vector<std::pair<std::string, TensorPtr>> buffers;

    void add_param(const std::string& name, const TensorPtr& t) {
        check_unique(name);
        t->requires_grad = true;
        params.emplace_back(name, t);
    }
    void add_buffer(const std::string& name, const TensorPtr& t) {
        check_unique(name);
        buffers.emplace_back(name, t);
    }
    void check_unique(const std::string& name) const {
        for (const auto& [n, _] : params)
            if (n == name) throw std::logic_error("registry: duplicate name " + name);
        for (const auto& [n, _] : buffers)
            if (n == name) throw std::logic_error("registry: duplicate name " + name);
    }
};

namespace detail {

inline long scaled_channels(long base, float width_multiple) {
    long c = 8 * std::lround(base * width_multiple / 8.0);
    return std::max<long>(8, c);
}

inline int scaled_repeats(int base, float depth_multiple) {
    return std::max(1, static_cast<int>(std::lround(base * depth_multiple)));
}

inline void kaiming_uniform(std::mt19937& rng, TensorPtr& w, long fan_in) {
    float bound = std::sqrt(6.0f / static_cast<float>(fan_in));
    std::uniform_real_distribution<float> dist(-bound, bound);
    for (auto& v : w->data) v = dist(rng);
}

}  // namespace detail

struct Conv2dLayer {
    TensorPtr w;  // O x I x K x K
    TensorPtr b;  // O, optional
    long stride = 1, pad = 0;

    void init(Registry& reg, std::mt19937& rng, const std::string& name, long in_ch, long out_ch,
              long k, long stride_, bool bias) {
        stride = stride_;
        pad = k / 2;
        w = Tensor::create({out_ch, in_ch, k, k});
        detail::kaiming_uniform(rng, w, in_ch * k * k);
        reg.add_param(name + ".weight", w);
        if (bias) {
            b = Tensor::create({out_ch});
            reg.add_param(name + ".bias", b);
        }
    }
    TensorPtr forward(Tape* tape, const TensorPtr& x) const {
        return conv2d(tape, x, w, b, stride, pad);
    }
};

struct BatchNormLayer {
    TensorPtr gamma, beta, run_mean, run_var;
    float eps = 1e-5f;
    float momentum = 0.1f;

    void init(Registry& reg, const std::string& name, long ch) {
        gamma = Tensor::create({ch});
        beta = Tensor::create({ch});
        run_mean = Tensor::create({ch});
        run_var = Tensor::create({ch});
        std::fill(gamma->data.begin(), gamma->data.end(), 1.0f);
        std::fill(run_var->data.begin(), run_var->data.end(), 1.0f);
        reg.add_param(name + ".gamma", gamma);
        reg.add_param(name + ".beta", beta);
        reg.add_buffer(name + ".running_mean", run_mean);
        reg.add_buffer(name + ".running_var", run_var);
    }
    TensorPtr forward(Tape* tape, const TensorPtr& x, bool training) const {
        return batch_norm2d(tape, x, gamma, beta, eps, training, run_mean, run_var, momentum);
    }
};

// conv (no bias) + BN + LeakyReLU
struct ConvBnAct {
    Conv2dLayer conv;
    BatchNormLayer bn;
    float alpha = 0.1f;

    void init(Registry& reg, std::mt19937& rng, const std::string& name, long in_ch, long out_ch,
              long k, long stride, float alpha_) {
        alpha = alpha_;
        conv.init(reg, rng, name + ".conv", in_ch, out_ch, k, stride, false);
        bn.init(reg, name + ".bn", out_ch);
    }
    TensorPtr forward(Tape* tape, const TensorPtr& x, bool training) const {
        return leaky_relu(tape, bn.forward(tape, conv.forward(tape, x), training), alpha);
    }
};

// 1x1 then 3x3 conv with additive shortcut
struct BottleneckBlock {
    ConvBnAct cv1, cv2;

    void init(Registry& reg, std::mt19937& rng, const std::string& name, long ch, float alpha) {
        cv1.init(reg, rng, name + ".cv1", ch, ch, 1, 1, alpha);
        cv2.init(reg, rng, name + ".cv2", ch, ch, 3, 1, alpha);
    }
    TensorPtr forward(Tape* tape, const TensorPtr& x, bool training) const {
        return add(tape, x, cv2.forward(tape, cv1.forward(tape, x, training), training));
    }
};

// Cross stage partial block: two channel-halved 1x1 paths, one through
// `repeats` residual bottlenecks, concatenated and fused by a 1x1 conv.
struct CspBlock {
    ConvBnAct cv1, cv2, cv3;
    std::vector<BottleneckBlock> bottlenecks;

    void init(Registry& reg, std::mt19937& rng, const std::string& name, long in_ch, long out_ch,
              int repeats, float alpha) {
        if (repeats < 1) throw std::invalid_argument("csp_block: repeats must be >= 1");
        long hidden = out_ch / 2;
        cv1.init(reg, rng, name + ".cv1", in_ch, hidden, 1, 1, alpha);
        cv2.init(reg, rng, name + ".cv2", in_ch, hidden, 1, 1, alpha);
        bottlenecks.resize(repeats);
        for (int i = 0; i < repeats; ++i)
            bottlenecks[i].init(reg, rng, name + ".m" + std::to_string(i), hidden, alpha);
        cv3.init(reg, rng, name + ".cv3", 2 * hidden, out_ch, 1, 1, alpha);
    }
    TensorPtr forward(Tape* tape, const TensorPtr& x, bool training) const {
        auto y1 = cv1.forward(tape, x, training);
        for (const auto& b : bottlenecks) y1 = b.forward(tape, y1, training);
        auto y2 = cv2.forward(tape, x, training);
        return cv3.forward(tape, concat_channels(tape, {y1, y2}), training);
    }
};

// Focus stem: 2x2 space-to-depth slicing then conv+BN+act.
struct FocusStem {
    ConvBnAct conv;

    void init(Registry& reg, std::mt19937& rng, const std::string& name, long in_ch, long out_ch,
              float alpha) {
        conv.init(reg, rng, name + ".conv", 4 * in_ch, out_ch, 3, 1, alpha);
    }
    TensorPtr forward(Tape* tape, const TensorPtr& x, bool training) const {
        return conv.forward(tape, focus_slice(tape, x), training);
    }
};

struct DetectorModel {
    ModelConfig cfg;
    float act_alpha = 0.1f;

    FocusStem stem;
    ConvBnAct down2, down3, down4, down5;
    CspBlock csp2, csp3, csp4, csp5;
    ConvBnAct neck_reduce5, neck_reduce4;
    CspBlock neck_td4, neck_td3;  // top-down junctions
    ConvBnAct neck_down3, neck_down4;
    CspBlock neck_bu4, neck_bu5;  // bottom-up junctions
    Conv2dLayer head3, head4, head5;

    Registry registry;

    std::array<TensorPtr, 3> forward(Tape* tape, const TensorPtr& batch, bool training) const {
        if (batch->rank() != 4 || batch->dim(1) != 3 || batch->dim(2) != cfg.input_size ||
            batch->dim(3) != cfg.input_size)
            throw std::invalid_argument("forward: expected Nx3x" + std::to_string(cfg.input_size) +
                                        "x" + std::to_string(cfg.input_size) + " input, got " +
                                        shape_str(batch->shape));
        auto x = stem.forward(tape, batch, training);
        auto p2 = csp2.forward(tape, down2.forward(tape, x, training), training);
        auto p3 = csp3.forward(tape, down3.forward(tape, p2, training), training);
        auto p4 = csp4.forward(tape, down4.forward(tape, p3, training), training);
        auto p5 = csp5.forward(tape, down5.forward(tape, p4, training), training);

        auto r5 = neck_reduce5.forward(tape, p5, training);
        auto t4 = neck_td4.forward(
            tape, concat_channels(tape, {upsample_nearest2x(tape, r5), p4}), training);
        auto r4 = neck_reduce4.forward(tape, t4, training);
        auto t3 = neck_td3.forward(
            tape, concat_channels(tape, {upsample_nearest2x(tape, r4), p3}), training);

        auto b4 = neck_bu4.forward(
            tape, concat_channels(tape, {neck_down3.forward(tape, t3, training), r4}), training);
        auto b5 = neck_bu5.forward(
            tape, concat_channels(tape, {neck_down4.forward(tape, b4, training), r5}), training);

        return {head3.forward(tape, t3), head4.forward(tape, b4), head5.forward(tape, b5)};
    }

    long param_count() const {
        long n = 0;
        for (const auto& [_, t] : registry.params) n += t->numel();
        return n;
    }

    void zero_grads() const {
        for (const auto& [_, t] : registry.params) t->zero_grad();
    }

    void save(const std::string& ckpt_path) const {
        std::vector<std::pair<std::string, TensorPtr>> entries = registry.params;
        entries.insert(entries.end(), registry.buffers.begin(), registry.buffers.end());
        save_checkpoint(ckpt_path, entries);
        std::ofstream js(ckpt_path + ".json");
        if (!js) throw std::runtime_error("cannot write sidecar for " + ckpt_path);
        js << cfg.to_json().dump(2) << "\n";
    }

    void load_weights(const std::string& ckpt_path) {
        auto entries = load_checkpoint(ckpt_path);
        auto restore = [&](std::vector<std::pair<std::string, TensorPtr>>& list) {
            for (auto& [name, t] : list) {
                auto it = entries.find(name);
                if (it == entries.end())
                    throw std::runtime_error("checkpoint missing entry: " + name);
                if (it->second->shape != t->shape)
                    throw std::runtime_error("checkpoint shape mismatch for " + name + ": " +
                                             shape_str(it->second->shape) + " vs " +
                                             shape_str(t->shape));
                t->data = it->second->data;
            }
        };
        restore(registry.params);
        restore(registry.buffers);
    }
};

inline DetectorModel build_model(const ModelConfig& cfg, uint64_t seed, float act_alpha = 0.1f) {
    cfg.validate();
    DetectorModel m;
    m.cfg = cfg;
    m.act_alpha = act_alpha;
    std::mt19937 rng(static_cast<uint32_t>(seed));
    Registry& reg = m.registry;
    auto ch = [&](long base) { return detail::scaled_channels(base, cfg.width_multiple); };
    auto rep = [&](int base) { return detail::scaled_repeats(base, cfg.depth_multiple); };
    const long c1 = ch(64), c2 = ch(128), c3 = ch(256), c4 = ch(512), c5 = ch(1024);
    const float a = act_alpha;

    m.stem.init(reg, rng, "stem", 3, c1, a);
    m.down2.init(reg, rng, "down2", c1, c2, 3, 2, a);
    m.csp2.init(reg, rng, "csp2", c2, c2, rep(3), a);
    m.down3.init(reg, rng, "down3", c2, c3, 3, 2, a);
    m.csp3.init(reg, rng, "csp3", c3, c3, rep(9), a);
    m.down4.init(reg, rng, "down4", c3, c4, 3, 2, a);
    m.csp4.init(reg, rng, "csp4", c4, c4, rep(9), a);
    m.down5.init(reg, rng, "down5", c4, c5, 3, 2, a);
    m.csp5.init(reg, rng, "csp5", c5, c5, rep(3), a);

    m.neck_reduce5.init(reg, rng, "neck.reduce5", c5, c4, 1, 1, a);
    m.neck_td4.init(reg, rng, "neck.td4", 2 * c4, c4, rep(3), a);
    m.neck_reduce4.init(reg, rng, "neck.reduce4", c4, c3, 1, 1, a);
    m.neck_td3.init(reg, rng, "neck.td3", 2 * c3, c3, rep(3), a);
    m.neck_down3.init(reg, rng, "neck.down3", c3, c3, 3, 2, a);
    m.neck_bu4.init(reg, rng, "neck.bu4", 2 * c3, c4, rep(3), a);
    m.neck_down4.init(reg, rng, "neck.down4", c4, c4, 3, 2, a);
    m.neck_bu5.init(reg, rng, "neck.bu5", 2 * c4, c5, rep(3), a);

    const long hc = cfg.head_channels();
    m.head3.init(reg, rng, "head3", c3, hc, 1, 1, true);
    m.head4.init(reg, rng, "head4", c4, hc, 1, 1, true);
    m.head5.init(reg, rng, "head5", c5, hc, 1, 1, true);

    // objects are rare: bias the objectness logits toward the background
    // prior so early epochs are not spent pushing a sea of easy negatives
    // down from sigma(0) = 0.5
    const int cpa = cfg.channels_per_anchor();
    const float obj_prior = std::log(0.01f / 0.99f);
    for (Conv2dLayer* h : {&m.head3, &m.head4, &m.head5})
        for (int a = 0; a < 3; ++a) h->b->data[a * cpa + 4] = obj_prior;
    return m;
}

inline DetectorModel load_model(const std::string& ckpt_path) {
    std::ifstream js(ckpt_path + ".json");
    if (!js) throw std::runtime_error("missing checkpoint sidecar: " + ckpt_path + ".json");
    nlohmann::json j;
    js >> j;
    auto cfg = ModelConfig::from_json(j);
    auto model = build_model(cfg, 0);
    model.load_weights(ckpt_path);
    return model;
}

}  // namespace fy
