#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "fireyolo/detector.hpp"

using namespace fy;

TEST_CASE("model config presets and validation") {
    auto n = ModelConfig::preset("n");
    CHECK(n.depth_multiple == Catch::Approx(0.33f));
    CHECK(n.width_multiple == Catch::Approx(0.25f));
    auto s = ModelConfig::preset("s");
    CHECK(s.width_multiple == Catch::Approx(0.50f));
    auto x = ModelConfig::preset("x", 1, 416);
    CHECK(x.depth_multiple == Catch::Approx(1.33f));
    CHECK(x.width_multiple == Catch::Approx(1.25f));
    CHECK_THROWS_AS(ModelConfig::preset("q"), std::invalid_argument);

    auto bad = ModelConfig::preset("n");
    bad.input_size = 100;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = ModelConfig::preset("n");
    bad.num_classes = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = ModelConfig::preset("n");
    bad.anchors[1][2].w = -4.0f;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

    // anchors scale with input size: first anchor is (10,13) at 640
    auto a416 = ModelConfig::default_anchors(416);
    CHECK(a416[0][0].w == Catch::Approx(10.0f * 416 / 640));
    CHECK(a416[2][2].h == Catch::Approx(326.0f * 416 / 640));
}

TEST_CASE("model config json round trip") {
    auto cfg = ModelConfig::preset("m", 4, 320);
    auto back = ModelConfig::from_json(cfg.to_json());
    CHECK(back.depth_multiple == cfg.depth_multiple);
    CHECK(back.width_multiple == cfg.width_multiple);
    CHECK(back.num_classes == 4);
    CHECK(back.input_size == 320);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            CHECK(back.anchors[i][j].w == cfg.anchors[i][j].w);
            CHECK(back.anchors[i][j].h == cfg.anchors[i][j].h);
        }
}

TEST_CASE("channel and repeat scaling rules") {
    CHECK(detail::scaled_channels(64, 0.25f) == 16);
    CHECK(detail::scaled_channels(64, 1.25f) == 80);
    CHECK(detail::scaled_channels(8, 0.25f) == 8);  // floor of 8
    CHECK(detail::scaled_repeats(3, 0.33f) == 1);
    CHECK(detail::scaled_repeats(9, 0.33f) == 3);
    CHECK(detail::scaled_repeats(3, 1.33f) == 4);
    CHECK(detail::scaled_repeats(1, 0.1f) == 1);  // floor of 1
}

TEST_CASE("focus stem slicing arithmetic") {
    std::mt19937 rng(21);
    Registry reg;
    FocusStem stem;
    stem.init(reg, rng, "stem", 3, 32, 0.1f);

    // 414x414 input: four slices -> 12x207x207, conv to 32 channels
    auto x = Tensor::create({1, 3, 414, 414});
    std::uniform_real_distribution<float> d(0.0f, 1.0f);
    for (auto& v : x->data) v = d(rng);
    auto pre = focus_slice(nullptr, x);
    REQUIRE(pre->shape == std::vector<long>{1, 12, 207, 207});
    auto post = stem.forward(nullptr, x, true);
    REQUIRE(post->shape == std::vector<long>{1, 32, 207, 207});

    // 416 -> 208
    auto x2 = Tensor::create({1, 3, 416, 416});
    CHECK(focus_slice(nullptr, x2)->shape == std::vector<long>{1, 12, 208, 208});

    // rearrangement conserves values
    double sx = 0.0, sp = 0.0;
    for (float v : x->data) sx += v;
    for (float v : pre->data) sp += v;
    CHECK(sp == Catch::Approx(sx).epsilon(1e-6));

    // bijection: unslice restores the input exactly
    auto restored = focus_unslice(pre);
    CHECK(restored->data == x->data);

    CHECK_THROWS_AS(focus_slice(nullptr, Tensor::create({1, 3, 5, 4})), std::invalid_argument);
}

TEST_CASE("csp block preserves spatial size and grows with repeats") {
    std::mt19937 rng(22);
    auto params_for_repeats = [&](int r) {
        Registry reg;
        CspBlock blk;
        blk.init(reg, rng, "csp", 64, 64, r, 0.1f);
        long n = 0;
        for (const auto& [_, t] : reg.params) n += t->numel();
        return std::make_pair(n, std::move(blk));
    };
    auto [n1, blk1] = params_for_repeats(1);
    auto [n2, blk2] = params_for_repeats(2);
    auto [n3, blk3] = params_for_repeats(3);
    CHECK(n1 < n2);
    CHECK(n2 < n3);

    auto x = Tensor::create({1, 64, 52, 52});
    std::uniform_real_distribution<float> d(-1.0f, 1.0f);
    for (auto& v : x->data) v = d(rng);
    auto y = blk1.forward(nullptr, x, true);
    CHECK(y->shape == std::vector<long>{1, 64, 52, 52});

    Registry reg;
    CspBlock bad;
    CHECK_THROWS_AS(bad.init(reg, rng, "csp", 64, 64, 0, 0.1f), std::invalid_argument);
}

TEST_CASE("preset parameter counts are ordered") {
    long prev = 0;
    for (const char* p : {"n", "s", "m", "l", "x"}) {
        auto model = build_model(ModelConfig::preset(p), 1);
        long count = model.param_count();
        CHECK(count > prev);
        prev = count;
    }
}

TEST_CASE("build is deterministic in the seed, param_count is not seed dependent") {
    auto cfg = ModelConfig::preset("n", 1, 64);
    auto a = build_model(cfg, 7);
    auto b = build_model(cfg, 7);
    auto c = build_model(cfg, 8);
    REQUIRE(a.registry.params.size() == b.registry.params.size());
    for (size_t i = 0; i < a.registry.params.size(); ++i) {
        CHECK(a.registry.params[i].first == b.registry.params[i].first);
        CHECK(a.registry.params[i].second->data == b.registry.params[i].second->data);
    }
    CHECK(a.param_count() == c.param_count());
    bool any_diff = false;
    for (size_t i = 0; i < a.registry.params.size(); ++i)
        if (a.registry.params[i].second->data != c.registry.params[i].second->data)
            any_diff = true;
    CHECK(any_diff);
}

TEST_CASE("doubling width_multiple doubles non-head channel counts") {
    auto narrow = ModelConfig::preset("n", 1, 64);
    auto wide = narrow;
    wide.width_multiple = 0.50f;
    auto ma = build_model(narrow, 1);
    auto mb = build_model(wide, 1);
    REQUIRE(ma.registry.params.size() == mb.registry.params.size());
    for (size_t i = 0; i < ma.registry.params.size(); ++i) {
        const auto& [name, ta] = ma.registry.params[i];
        const auto& tb = mb.registry.params[i].second;
        REQUIRE(mb.registry.params[i].first == name);
        bool head = name.rfind("head", 0) == 0;
        if (ta->rank() == 4) {
            // conv weight OxCxKxK: output channels double except the heads,
            // input channels double except the stem (fixed 12 slices)
            if (head)
                CHECK(tb->dim(0) == ta->dim(0));
            else
                CHECK(tb->dim(0) == 2 * ta->dim(0));
            if (name.rfind("stem", 0) == 0)
                CHECK(tb->dim(1) == ta->dim(1));
            else
                CHECK(tb->dim(1) == 2 * ta->dim(1));
        } else if (!head) {
            CHECK(tb->numel() == 2 * ta->numel());  // BN gamma/beta
        }
    }
}

TEST_CASE("forward produces three raw maps at strides 8 16 32") {
    auto cfg = ModelConfig::preset("n", 1, 416);
    auto model = build_model(cfg, 3);
    std::mt19937 rng(23);
    std::uniform_real_distribution<float> d(0.0f, 1.0f);
    auto batch = Tensor::create({1, 3, 416, 416});
    for (auto& v : batch->data) v = d(rng);

    auto maps = model.forward(nullptr, batch, false);
    CHECK(maps[0]->shape == std::vector<long>{1, 18, 52, 52});
    CHECK(maps[1]->shape == std::vector<long>{1, 18, 26, 26});
    CHECK(maps[2]->shape == std::vector<long>{1, 18, 13, 13});
    // spatial size times stride recovers the input size exactly
    CHECK(maps[0]->dim(2) * 8 == 416);
    CHECK(maps[1]->dim(2) * 16 == 416);
    CHECK(maps[2]->dim(2) * 32 == 416);

    CHECK_THROWS_AS(model.forward(nullptr, Tensor::create({1, 3, 224, 224}), false),
                    std::invalid_argument);
}

TEST_CASE("eval forward is per-image independent, train mode differs") {
    auto cfg = ModelConfig::preset("n", 1, 64);
    auto model = build_model(cfg, 4);
    std::mt19937 rng(24);
    std::uniform_real_distribution<float> d(0.0f, 1.0f);
    auto one = Tensor::create({1, 3, 64, 64});
    for (auto& v : one->data) v = d(rng);
    auto two = Tensor::create({2, 3, 64, 64});
    std::copy(one->data.begin(), one->data.end(), two->data.begin());
    std::copy(one->data.begin(), one->data.end(), two->data.begin() + one->data.size());

    auto maps = model.forward(nullptr, two, false);
    for (const auto& m : maps) {
        size_t half = m->data.size() / 2;
        for (size_t i = 0; i < half; ++i) CHECK(m->data[i] == m->data[half + i]);
    }

    // fresh running stats (mean 0 var 1) differ from batch stats here
    auto ev = model.forward(nullptr, one, false);
    auto tr = model.forward(nullptr, one, true);
    bool differs = false;
    for (size_t i = 0; i < ev[0]->data.size(); ++i)
        if (ev[0]->data[i] != tr[0]->data[i]) differs = true;
    CHECK(differs);
}

TEST_CASE("gradient reaches every registered parameter") {
    auto cfg = ModelConfig::preset("n", 1, 64);
    auto model = build_model(cfg, 5);
    std::mt19937 rng(25);
    std::uniform_real_distribution<float> d(0.0f, 1.0f);
    auto batch = Tensor::create({2, 3, 64, 64});
    for (auto& v : batch->data) v = d(rng);

    Tape tape;
    auto maps = model.forward(&tape, batch, true);
    auto loss = add(&tape, add(&tape, sum_all(&tape, sigmoid(&tape, maps[0])),
                               sum_all(&tape, sigmoid(&tape, maps[1]))),
                    sum_all(&tape, sigmoid(&tape, maps[2])));
    backward(loss, tape);

    for (const auto& [name, t] : model.registry.params) {
        INFO(name);
        REQUIRE(t->grad.size() == t->data.size());
        bool nonzero = false;
        for (float g : t->grad)
            if (g != 0.0f) nonzero = true;
        CHECK(nonzero);
    }
}

TEST_CASE("model save and load round trip") {
    auto cfg = ModelConfig::preset("n", 2, 64);
    auto model = build_model(cfg, 6);
    model.save("model_roundtrip.ckpt");

    auto loaded = load_model("model_roundtrip.ckpt");
    CHECK(loaded.cfg.num_classes == 2);
    CHECK(loaded.cfg.input_size == 64);
    REQUIRE(loaded.registry.params.size() == model.registry.params.size());
    for (size_t i = 0; i < model.registry.params.size(); ++i)
        CHECK(loaded.registry.params[i].second->data == model.registry.params[i].second->data);

    std::mt19937 rng(26);
    std::uniform_real_distribution<float> d(0.0f, 1.0f);
    auto batch = Tensor::create({1, 3, 64, 64});
    for (auto& v : batch->data) v = d(rng);
    auto a = model.forward(nullptr, batch, false);
    auto b = loaded.forward(nullptr, batch, false);
    for (int k = 0; k < 3; ++k) CHECK(a[k]->data == b[k]->data);

    std::remove("model_roundtrip.ckpt");
    std::remove("model_roundtrip.ckpt.json");
}
