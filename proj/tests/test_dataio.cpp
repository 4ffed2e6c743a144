#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <map>

using namespace disdis;
using disdis::testing::scratch_dir;
using disdis::testing::slurp;
using disdis::testing::spit;

namespace {

std::vector<RawRecord> straight_track(std::int64_t ped, int steps, std::int64_t first_frame = 0,
                                      std::int64_t frame_step = 10) {
    std::vector<RawRecord> out;
    for (int t = 0; t < steps; ++t) {
        out.push_back({first_frame + t * frame_step, ped, 0.5 * t, 0.1 * t});
    }
    return out;
}

double max_pairwise_distance_change(const TrajectorySample& a, const TrajectorySample& b) {
    Eigen::Matrix<double, kWindowLen, 2> pa, pb;
    pa << a.obs, a.fut;
    pb << b.obs, b.fut;
    double worst = 0.0;
    for (int i = 0; i < kWindowLen; ++i) {
        for (int j = i + 1; j < kWindowLen; ++j) {
            worst = std::max(worst, std::abs((pa.row(i) - pa.row(j)).norm() - (pb.row(i) - pb.row(j)).norm()));
        }
    }
    return worst;
}

}  // namespace

TEST_CASE("load_scene parses records and sorts each pedestrian by frame") {
    const auto dir = scratch_dir("load");
    spit(dir / "s.txt", "20 3 2.0 -1.0\n10 3 1.5 -2.0\n\n10\t4\t0.0\t0.0\n");
    const std::vector<RawRecord> r = load_scene(dir / "s.txt");
    REQUIRE(r.size() == 3);
    CHECK(r[0].frame == 10);
    CHECK(r[0].ped_id == 3);
    CHECK(r[0].x == 1.5);
    CHECK(r[0].y == -2.0);
    CHECK(r[1].frame == 20);
    CHECK(r[2].ped_id == 4);
}

TEST_CASE("load_scene accepts benchmark-style float frame and id columns") {
    const auto dir = scratch_dir("load_float");
    spit(dir / "s.txt", "780.0\t1.0\t8.46\t3.59\n790.0\t1.0\t9.00\t3.50\n");
    const std::vector<RawRecord> r = load_scene(dir / "s.txt");
    REQUIRE(r.size() == 2);
    CHECK(r[1].frame == 790);
    CHECK(r[1].ped_id == 1);
}

TEST_CASE("load_scene on an empty file gives no records") {
    const auto dir = scratch_dir("load_empty");
    spit(dir / "s.txt", "");
    CHECK(load_scene(dir / "s.txt").empty());
}

TEST_CASE("load_scene reports malformed lines with their line number") {
    const auto dir = scratch_dir("load_bad");
    spit(dir / "arity.txt", "0 1 0.0 0.0\n10 3 1.5\n");
    try {
        load_scene(dir / "arity.txt");
        FAIL("short line accepted");
    } catch (const DataError& e) {
        CHECK(e.line() == 2);
    }
    spit(dir / "nonnum.txt", "0 1 0.0 0.0\n10 1 0.5 0.0\n20 1 abc 0.0\n");
    try {
        load_scene(dir / "nonnum.txt");
        FAIL("non-numeric field accepted");
    } catch (const DataError& e) {
        CHECK(e.line() == 3);
    }
    spit(dir / "frac.txt", "10.5 1 0.0 0.0\n");
    CHECK_THROWS_AS(load_scene(dir / "frac.txt"), DataError);
    spit(dir / "dup.txt", "10 1 0.0 0.0\n10 1 1.0 0.0\n");
    CHECK_THROWS_AS(load_scene(dir / "dup.txt"), DataError);
    CHECK_THROWS_AS(load_scene(dir / "missing.txt"), DataError);
}

TEST_CASE("window counts follow L - 19 per gap-free segment") {
    for (int steps : {19, 20, 25, 40}) {
        WindowSummary s;
        const auto w = window_scene(straight_track(1, steps), "s", &s);
        CHECK(w.size() == static_cast<std::size_t>(std::max(0, steps - 19)));
        CHECK(s.windows == w.size());
        CHECK(s.short_segments == (steps < 20 ? 1u : 0u));
    }
}

TEST_CASE("a 20-step track gives one window split 8 + 12") {
    const auto w = window_scene(straight_track(7, 20), "s");
    REQUIRE(w.size() == 1);
    CHECK(w[0].obs(0, 0) == 0.0);
    CHECK(w[0].obs(7, 0) == 0.5 * 7);
    CHECK(w[0].fut(0, 0) == 0.5 * 8);
    CHECK(w[0].fut(11, 0) == 0.5 * 19);
    CHECK(w[0].ped_id == 7);
    CHECK(w[0].first_frame == 0);
}

TEST_CASE("frame gaps split tracks into segments") {
    std::vector<RawRecord> r = straight_track(1, 22);
    std::vector<RawRecord> tail = straight_track(1, 25, 22 * 10 + 30);
    r.insert(r.end(), tail.begin(), tail.end());
    WindowSummary s;
    const auto w = window_scene(r, "s", &s);
    CHECK(s.segments == 2);
    CHECK(w.size() == 3 + 6);
    CHECK(infer_frame_step(r) == 10);
}

TEST_CASE("fixture scene windows match an independent segment count") {
    const std::filesystem::path path = std::filesystem::path(DISDIS_TEST_DATA) / "scene_a.txt";
    // independent pass over the raw text
    std::map<long, std::vector<long>> frames;
    {
        std::ifstream in(path);
        double f, p, x, y;
        while (in >> f >> p >> x >> y) frames[static_cast<long>(p)].push_back(static_cast<long>(f));
    }
    std::size_t expected = 0;
    for (auto& [ped, fs] : frames) {
        std::sort(fs.begin(), fs.end());
        long len = 1;
        for (std::size_t i = 1; i <= fs.size(); ++i) {
            if (i < fs.size() && fs[i] - fs[i - 1] == 10) {
                ++len;
            } else {
                expected += static_cast<std::size_t>(std::max(0L, len - 19));
                len = 1;
            }
        }
    }
    WindowSummary s;
    const auto w = window_scene(load_scene(path), "scene_a", &s);
    CHECK(expected > 0);
    CHECK(w.size() == expected);
    CHECK(s.tracks == frames.size());
}

TEST_CASE("normalize moves the last observation to the origin and round-trips") {
    TrajectorySample s;
    for (int t = 0; t < kObsLen; ++t) s.obs.row(t) << 3.0 - 0.1 * (7 - t), 4.0 + 0.2 * (7 - t);
    for (int t = 0; t < kPredLen; ++t) s.fut.row(t) << 3.0 + 0.3 * (t + 1), 4.0 - 0.1 * (t + 1);
    s.obs.row(7) << 3.0, 4.0;
    const TrajectorySample n = normalize(s);
    CHECK(n.obs.row(7).norm() == 0.0);
    CHECK(n.fut(0, 0) == doctest::Approx(s.fut(0, 0) - 3.0));
    CHECK(n.fut(0, 1) == doctest::Approx(s.fut(0, 1) - 4.0));
    const TrajectorySample nn = normalize(n);
    CHECK(nn.obs == n.obs);
    CHECK(nn.fut == n.fut);
    const TrajectorySample back = denormalize(n);
    CHECK((back.obs - s.obs).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((back.fut - s.fut).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("rotation about the origin") {
    TrajectorySample s;
    s.obs.row(0) << 1.0, 0.0;
    const TrajectorySample r = rotate(s, M_PI / 2);
    CHECK(r.obs(0, 0) == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(std::abs(r.obs(0, 0)) < 1e-15);
    CHECK(r.obs(0, 1) == doctest::Approx(1.0));

    const auto synth = synth_generate(default_personas(), 3, 5);
    for (const TrajectorySample& x : synth) {
        const auto copies = rotate_augment(x);
        REQUIRE(copies.size() == 24);
        CHECK(copies[0].obs == x.obs);
        CHECK(copies[0].fut == x.fut);
        for (const TrajectorySample& c : copies) {
            CHECK(max_pairwise_distance_change(x, c) <= 1e-12);
            CHECK(c.pattern_label == x.pattern_label);
        }
    }
}

TEST_CASE("synthetic generator: counts, labels and determinism") {
    const auto personas = default_personas();
    const auto a = synth_generate(personas, 250, 42);
    const auto b = synth_generate(personas, 250, 42);
    REQUIRE(a.size() == 1000);
    std::map<int, int> per_label;
    for (std::size_t i = 0; i < a.size(); ++i) {
        REQUIRE(a[i].pattern_label.has_value());
        ++per_label[*a[i].pattern_label];
        CHECK(a[i].obs == b[i].obs);
        CHECK(a[i].fut == b[i].fut);
        CHECK(a[i].obs.row(kObsLen - 1).norm() == 0.0);
    }
    CHECK(per_label.size() == 4);
    for (const auto& [label, n] : per_label) CHECK(n == 250);
    const auto c = synth_generate(personas, 250, 43);
    CHECK(c[0].fut != a[0].fut);
}

TEST_CASE("synthetic straight persona stays on a line") {
    std::vector<SyntheticPersona> ps = {{0, 0.0, 0.5, 0.0}, {1, 0.1, 0.5, 0.0}};
    SynthOptions opts;
    opts.base_speed = 0.5;
    const auto samples = synth_generate(ps, 5, 3, opts);
    for (const TrajectorySample& s : samples) {
        if (*s.pattern_label != 0) continue;
        const Eigen::RowVector2d dir = (s.obs.row(7) - s.obs.row(6)).normalized();
        for (int t = 0; t < kPredLen; ++t) {
            const Eigen::RowVector2d v = s.fut.row(t);
            CHECK(std::abs(dir(0) * v(1) - dir(1) * v(0)) < 1e-9);
            CHECK(dir.dot(v) > 0.0);
        }
    }
}

TEST_CASE("synthetic personas share the history prefix distribution") {
    // over the shared prefix every persona walks straight at the base speed
    const auto personas = default_personas();
    SynthOptions opts;
    const auto samples = synth_generate(personas, 400, 9, opts);
    std::map<int, std::vector<double>> prefix_speed;
    for (const TrajectorySample& s : samples) {
        for (int t = 1; t < opts.prefix_len; ++t) {
            prefix_speed[*s.pattern_label].push_back((s.obs.row(t) - s.obs.row(t - 1)).norm());
        }
    }
    for (const auto& [label, v] : prefix_speed) {
        double m = 0.0;
        for (double x : v) m += x;
        m /= static_cast<double>(v.size());
        CHECK(std::abs(m - opts.base_speed) < 0.02);
    }
}

TEST_CASE("synthetic generator rejects bad arguments") {
    const auto ps = default_personas();
    CHECK_THROWS_AS(synth_generate(ps, 0, 1), std::invalid_argument);
    CHECK_THROWS_AS(synth_generate(ps, -3, 1), std::invalid_argument);
    std::vector<SyntheticPersona> one = {ps[0]};
    CHECK_THROWS_AS(synth_generate(one, 10, 1), std::invalid_argument);
    std::vector<SyntheticPersona> dup = {ps[0], ps[0]};
    dup[1].pattern_id = 9;
    CHECK_THROWS_AS(synth_generate(dup, 10, 1), std::invalid_argument);
    std::vector<SyntheticPersona> bad = {ps[0], ps[1]};
    bad[1].speed = 0.0;
    CHECK_THROWS_AS(synth_generate(bad, 10, 1), std::invalid_argument);
    bad[1].speed = 0.5;
    bad[1].noise_sigma = -0.1;
    CHECK_THROWS_AS(synth_generate(bad, 10, 1), std::invalid_argument);
}

TEST_CASE("synthetic dump round-trips through the scene loader") {
    const auto dir = scratch_dir("dump");
    const auto samples = synth_generate(default_personas(), 4, 11);
    write_scene(dir / "synth.txt", samples);
    write_labels(dir / "labels.txt", samples);
    const auto windows = window_scene(load_scene(dir / "synth.txt"), "synth");
    REQUIRE(windows.size() == samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const TrajectorySample n = normalize(windows[i]);
        CHECK((n.obs - samples[i].obs).cwiseAbs().maxCoeff() < 1e-9);
        CHECK((n.fut - samples[i].fut).cwiseAbs().maxCoeff() < 1e-9);
    }
    std::istringstream labels(slurp(dir / "labels.txt"));
    std::int64_t ped;
    int pattern;
    std::size_t rows = 0;
    while (labels >> ped >> pattern) {
        CHECK(pattern == *samples[rows].pattern_label);
        ++rows;
    }
    CHECK(rows == samples.size());
}
