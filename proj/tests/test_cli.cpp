// end-to-end checks of the fyolo command line tool. The binary path is baked
// in as the FYOLO_BIN compile definition (see CMakeLists.txt); an FYOLO_BIN
// environment variable overrides it.

#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

std::string binary() {
    if (const char* p = std::getenv("FYOLO_BIN")) return p;  // manual override
    return FYOLO_BIN;  // baked in by CMake
}

struct RunResult {
    int exit_code;
    std::string output;  // stdout + stderr interleaved
};

RunResult run(const std::string& args) {
    const std::string cmd = binary() + " " + args + " 2>&1";
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    std::string out;
    char buf[512];
    while (size_t n = fread(buf, 1, sizeof(buf), pipe)) out.append(buf, n);
    int status = pclose(pipe);
    int code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return {code, out};
}

struct TempDir {
    fs::path path;
    TempDir() {
        static std::mt19937_64 rng{std::random_device{}()};
        path = fs::temp_directory_path() / ("fyolo_cli_" + std::to_string(rng()));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    std::string str() const { return path.string(); }
};

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    REQUIRE(is.good());
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

std::vector<std::string> lines_of(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string line;
    while (std::getline(ss, line))
        if (!line.empty()) out.push_back(line);
    return out;
}

// history.csv with the wall-clock column chopped off, for determinism diffs
std::string history_without_times(const fs::path& p) {
    std::string out;
    for (const auto& line : lines_of(slurp(p))) {
        auto cut = line.rfind(',');
        REQUIRE(cut != std::string::npos);
        out += line.substr(0, cut);
        out += '\n';
    }
    return out;
}

size_t count_files(const fs::path& dir, const std::string& ext) {
    size_t n = 0;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.path().extension() == ext) ++n;
    return n;
}

}  // namespace

TEST_CASE("dataset synth is deterministic and writes the layout", "[cli]") {
    TempDir a, b;
    auto r1 = run("--out " + a.str() + " --seed 7 dataset synth --count 12 --size 64");
    REQUIRE(r1.exit_code == 0);
    auto r2 = run("--out " + b.str() + " --seed 7 dataset synth --count 12 --size 64");
    REQUIRE(r2.exit_code == 0);

    REQUIRE(fs::is_directory(a.path / "images"));
    REQUIRE(fs::is_directory(a.path / "labels"));
    CHECK(count_files(a.path / "images", ".ppm") == 12);
    CHECK(count_files(a.path / "labels", ".txt") == 12);
    CHECK(fs::exists(a.path / "config_resolved.txt"));

    // identical bytes image by image
    for (const auto& e : fs::directory_iterator(a.path / "images")) {
        auto other = b.path / "images" / e.path().filename();
        REQUIRE(fs::exists(other));
        CHECK(slurp(e.path()) == slurp(other));
    }
    for (const auto& e : fs::directory_iterator(a.path / "labels"))
        CHECK(slurp(e.path()) == slurp(b.path / "labels" / e.path().filename()));

    // different seed changes the pixels
    TempDir c;
    REQUIRE(run("--out " + c.str() + " --seed 8 dataset synth --count 12 --size 64").exit_code ==
            0);
    bool any_diff = false;
    for (const auto& e : fs::directory_iterator(a.path / "images"))
        if (slurp(e.path()) != slurp(c.path / "images" / e.path().filename())) any_diff = true;
    CHECK(any_diff);
}

TEST_CASE("dataset validate exit codes and rejection report", "[cli]") {
    TempDir data, out;
    REQUIRE(run("--out " + data.str() + " dataset synth --count 6 --size 64").exit_code == 0);

    SECTION("clean data exits 0") {
        auto r = run("--out " + out.str() + " dataset validate --data " + data.str());
        CHECK(r.exit_code == 0);
        auto rej = slurp(out.path / "rejections.csv");
        CHECK(lines_of(rej).size() == 1);  // header only
    }

    SECTION("a malformed label exits 2 and lands in the report") {
        std::ofstream bad(data.path / "labels" / "synth_0.txt");
        bad << "0 1.5 0.5 0.2 0.2\n";  // center out of range
        bad.close();
        auto r = run("--out " + out.str() + " dataset validate --data " + data.str());
        CHECK(r.exit_code == 2);
        auto rej = slurp(out.path / "rejections.csv");
        CHECK(lines_of(rej).size() == 2);
        CHECK(rej.find("synth_0") != std::string::npos);
    }

    SECTION("missing directory exits 1") {
        auto r = run("--out " + out.str() + " dataset validate --data /nonexistent/nowhere");
        CHECK(r.exit_code == 1);
    }
}

TEST_CASE("dataset split writes a manifest with the rounded counts", "[cli]") {
    TempDir data, out;
    REQUIRE(run("--out " + data.str() + " dataset synth --count 41 --size 64").exit_code == 0);
    auto r = run("--out " + out.str() + " --seed 3 dataset split --data " + data.str() +
                 " --ratio 0.5");
    REQUIRE(r.exit_code == 0);
    auto manifest = lines_of(slurp(out.path / "split_manifest.txt"));
    size_t n_train = 0, n_val = 0;
    for (const auto& l : manifest) {
        if (l.rfind("train ", 0) == 0) ++n_train;
        if (l.rfind("val ", 0) == 0) ++n_val;
    }
    CHECK(n_train == 21);  // lround(0.5 * 41)
    CHECK(n_val == 20);

    // same seed reproduces the same manifest
    TempDir out2;
    REQUIRE(run("--out " + out2.str() + " --seed 3 dataset split --data " + data.str() +
                " --ratio 0.5")
                .exit_code == 0);
    CHECK(slurp(out.path / "split_manifest.txt") == slurp(out2.path / "split_manifest.txt"));
}

TEST_CASE("train smoke run produces history, checkpoints and config echo", "[cli][training]") {
    TempDir out;
    const std::string args = " --quiet train --preset n --width 0.25 --synthetic 40 --size 96 "
                             "--epochs 2 --batch 8 --lr 0.001";
    auto r = run("--out " + out.str() + " --seed 11" + args);
    REQUIRE(r.exit_code == 0);

    REQUIRE(fs::exists(out.path / "history.csv"));
    auto hist = lines_of(slurp(out.path / "history.csv"));
    REQUIRE(hist.size() == 3);  // header + 2 epochs
    CHECK(hist[0].rfind("epoch,", 0) == 0);
    CHECK(fs::exists(out.path / "best.ckpt"));
    CHECK(fs::exists(out.path / "last.ckpt"));

    auto echo = slurp(out.path / "config_resolved.txt");
    CHECK(echo.find("command = train") != std::string::npos);
    CHECK(echo.find("epochs = 2") != std::string::npos);
    CHECK(echo.find("width = 0.25") != std::string::npos);
    CHECK(echo.find("seed = 11") != std::string::npos);

    SECTION("same seed reproduces the history apart from wall-clock times") {
        TempDir out2;
        REQUIRE(run("--out " + out2.str() + " --seed 11" + args).exit_code == 0);
        CHECK(history_without_times(out.path / "history.csv") ==
              history_without_times(out2.path / "history.csv"));
    }

    SECTION("eval on the trained checkpoint reports sane metrics") {
        TempDir eout;
        auto er = run("--out " + eout.str() + " --seed 11 eval " +
                      (out.path / "best.ckpt").string() + " --synthetic 20");
        REQUIRE(er.exit_code == 0);
        double map = -1;
        auto pos = er.output.find("mAP@0.5 ");
        REQUIRE(pos != std::string::npos);
        map = std::stod(er.output.substr(pos + 8));
        CHECK(map >= 0.0);
        CHECK(map <= 1.0);
        CHECK(fs::exists(eout.path / "comparison.csv"));
        CHECK(fs::exists(eout.path / "best" / "p_vs_r.csv"));
        CHECK(fs::exists(eout.path / "best" / "f1_vs_conf.svg"));
    }

    SECTION("eval of two checkpoints writes a two-column comparison") {
        TempDir eout;
        auto er = run("--out " + eout.str() + " --seed 11 eval " +
                      (out.path / "best.ckpt").string() + " " +
                      (out.path / "last.ckpt").string() + " --synthetic 20");
        REQUIRE(er.exit_code == 0);
        auto rows = lines_of(slurp(eout.path / "comparison.csv"));
        REQUIRE(!rows.empty());
        CHECK(rows[0] == "metric,best,last");
    }

    SECTION("eval with an empty evaluation side exits 1") {
        // one image at ratio 0.6 rounds to 1 train / 0 val
        auto er = run("--out " + out.str() + " eval " + (out.path / "best.ckpt").string() +
                      " --synthetic 1 --ratio 0.6");
        CHECK(er.exit_code == 1);
        CHECK(er.output.find("empty") != std::string::npos);
        // ratios outside (0,1) are rejected outright
        CHECK(run("--out " + out.str() + " eval " + (out.path / "best.ckpt").string() +
                  " --synthetic 20 --ratio 1.0")
                  .exit_code == 1);
    }

    SECTION("detect on a single frame writes csv, timing and overlay") {
        TempDir data, dout;
        REQUIRE(run("--out " + data.str() + " --seed 5 dataset synth --count 1 --size 96")
                    .exit_code == 0);
        const std::string img = (data.path / "images" / "synth_0.ppm").string();
        auto dr = run("--out " + dout.str() + " detect --ckpt " +
                      (out.path / "best.ckpt").string() + " --input " + img +
                      " --conf 0.1 --overlay");
        REQUIRE(dr.exit_code == 0);
        auto det = lines_of(slurp(dout.path / "detections.csv"));
        REQUIRE(!det.empty());
        CHECK(det[0] == "frame,class_id,confidence,x1,y1,x2,y2");
        auto timing = lines_of(slurp(dout.path / "timing.csv"));
        REQUIRE(timing.size() == 2);
        CHECK(timing[1].rfind("1,", 0) == 0);  // one frame
        CHECK(fs::exists(dout.path / "synth_0.svg"));

        // a harsher threshold still succeeds and only keeps rows above it
        TempDir dout2;
        auto dr2 = run("--out " + dout2.str() + " detect --ckpt " +
                       (out.path / "best.ckpt").string() + " --input " + img + " --conf 0.999");
        CHECK(dr2.exit_code == 0);
        auto rows = lines_of(slurp(dout2.path / "detections.csv"));
        CHECK(rows.size() <= det.size());
        for (size_t i = 1; i < rows.size(); ++i) {
            std::stringstream ss(rows[i].substr(rows[i].find(',', rows[i].find(',') + 1) + 1));
            double conf = 0;
            ss >> conf;
            CHECK(conf >= 0.999);
        }
    }

    SECTION("detect over a frame directory is deterministic") {
        TempDir data, d1, d2;
        REQUIRE(run("--out " + data.str() + " --seed 5 dataset synth --count 3 --size 96")
                    .exit_code == 0);
        const std::string dir = (data.path / "images").string();
        const std::string cmd = " detect --ckpt " + (out.path / "best.ckpt").string() +
                                " --input " + dir + " --conf 0.1";
        REQUIRE(run("--out " + d1.str() + cmd).exit_code == 0);
        REQUIRE(run("--out " + d2.str() + cmd).exit_code == 0);
        CHECK(slurp(d1.path / "detections.csv") == slurp(d2.path / "detections.csv"));
        auto timing = lines_of(slurp(d1.path / "timing.csv"));
        REQUIRE(timing.size() == 2);
        CHECK(timing[1].rfind("3,", 0) == 0);
    }

    SECTION("bench reports the requested frame count") {
        TempDir bout;
        auto br = run("--out " + bout.str() + " bench --ckpt " +
                      (out.path / "best.ckpt").string() + " --frames 5 --size 96");
        REQUIRE(br.exit_code == 0);
        CHECK(br.output.find("frames=5") != std::string::npos);
        auto timing = lines_of(slurp(bout.path / "timing.csv"));
        REQUIRE(timing.size() == 2);
        CHECK(timing[1].rfind("5,", 0) == 0);
    }
}

TEST_CASE("config file values sit between defaults and explicit flags", "[cli]") {
    TempDir out;
    std::ofstream cfgf(out.path / "run.cfg");
    cfgf << "count=9\nsize=48\n";
    cfgf.close();

    SECTION("file overrides the default") {
        TempDir o;
        auto r = run("--config " + (out.path / "run.cfg").string() + " --out " + o.str() +
                     " dataset synth");
        REQUIRE(r.exit_code == 0);
        CHECK(count_files(o.path / "images", ".ppm") == 9);
        auto echo = slurp(o.path / "config_resolved.txt");
        CHECK(echo.find("count = 9") != std::string::npos);
        CHECK(echo.find("size = 48") != std::string::npos);
    }

    SECTION("an explicit flag overrides the file") {
        TempDir o;
        auto r = run("--config " + (out.path / "run.cfg").string() + " --out " + o.str() +
                     " dataset synth --count 4");
        REQUIRE(r.exit_code == 0);
        CHECK(count_files(o.path / "images", ".ppm") == 4);
        auto echo = slurp(o.path / "config_resolved.txt");
        CHECK(echo.find("count = 4") != std::string::npos);
        CHECK(echo.find("size = 48") != std::string::npos);
    }
}

TEST_CASE("bad inputs exit 1", "[cli]") {
    TempDir out;
    CHECK(run("--out " + out.str() + " detect --ckpt /no/such.ckpt --input /no/such.ppm")
              .exit_code == 1);
    CHECK(run("--out " + out.str() + " eval /no/such.ckpt --synthetic 5").exit_code == 1);
    CHECK(run("--out " + out.str() + " bench --ckpt /no/such.ckpt").exit_code == 1);
    CHECK(run("--out " + out.str() + " train").exit_code == 1);  // no data source
    // unknown subcommand is a usage error, nonzero by CLI11
    CHECK(run("frobnicate").exit_code != 0);
}
