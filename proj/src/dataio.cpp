#include "disdis/dataio.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <random>
#include <sstream>

namespace disdis {

namespace {

template <typename T>
bool parse_number(const std::string& tok, T& out) {
    if constexpr (std::is_integral_v<T>) {
        const char* end = tok.data() + tok.size();
        auto [p, ec] = std::from_chars(tok.data(), end, out);
        if (ec == std::errc{} && p == end) return true;
        // Some benchmark exports write integral columns as "10.0".
        double d = 0.0;
        auto [p2, ec2] = std::from_chars(tok.data(), end, d);
        if (ec2 != std::errc{} || p2 != end || d != std::floor(d)) return false;
        out = static_cast<T>(d);
        return true;
    } else {
        const char* end = tok.data() + tok.size();
        auto [p, ec] = std::from_chars(tok.data(), end, out);
        return ec == std::errc{} && p == end && std::isfinite(out);
    }
}

}  // namespace

std::vector<RawRecord> load_scene(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open dataset file " + path.string());
    std::vector<RawRecord> records;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::istringstream ss(line);
        std::vector<std::string> toks;
        for (std::string t; ss >> t;) toks.push_back(t);
        if (toks.empty()) continue;
        if (toks.size() != 4) {
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected 4 columns, got " +
                                std::to_string(toks.size()),
                            lineno);
        }
        RawRecord r;
        if (!parse_number(toks[0], r.frame) || !parse_number(toks[1], r.ped_id) || !parse_number(toks[2], r.x) ||
            !parse_number(toks[3], r.y)) {
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": non-numeric field", lineno);
        }
        records.push_back(r);
    }
    std::stable_sort(records.begin(), records.end(), [](const RawRecord& a, const RawRecord& b) {
        return a.ped_id != b.ped_id ? a.ped_id < b.ped_id : a.frame < b.frame;
    });
    for (std::size_t i = 1; i < records.size(); ++i) {
        if (records[i].ped_id == records[i - 1].ped_id && records[i].frame == records[i - 1].frame) {
            throw DataError(path.string() + ": duplicate frame " + std::to_string(records[i].frame) +
                            " for pedestrian " + std::to_string(records[i].ped_id));
        }
    }
    return records;
}

std::int64_t infer_frame_step(std::span<const RawRecord> records) {
    std::map<std::int64_t, std::size_t> counts;
    for (std::size_t i = 1; i < records.size(); ++i) {
        if (records[i].ped_id != records[i - 1].ped_id) continue;
        const std::int64_t d = records[i].frame - records[i - 1].frame;
        if (d > 0) ++counts[d];
    }
    std::int64_t best = 1;
    std::size_t best_count = 0;
    for (const auto& [step, n] : counts) {
        if (n > best_count) {
            best = step;
            best_count = n;
        }
    }
    return best;
}

std::vector<TrajectorySample> window_scene(std::span<const RawRecord> records, const std::string& scene_id,
                                           WindowSummary* summary) {
    const std::int64_t step = infer_frame_step(records);
    WindowSummary sum;
    std::vector<TrajectorySample> out;

    auto emit_segment = [&](std::size_t begin, std::size_t end) {
        ++sum.segments;
        const std::size_t len = end - begin;
        if (len < static_cast<std::size_t>(kWindowLen)) {
            ++sum.short_segments;
            return;
        }
        for (std::size_t w = begin; w + kWindowLen <= end; ++w) {
            TrajectorySample s;
            for (int t = 0; t < kWindowLen; ++t) {
                const RawRecord& r = records[w + t];
                if (t < kObsLen) {
                    s.obs(t, 0) = r.x;
                    s.obs(t, 1) = r.y;
                } else {
                    s.fut(t - kObsLen, 0) = r.x;
                    s.fut(t - kObsLen, 1) = r.y;
                }
            }
            s.ped_id = records[w].ped_id;
            s.scene_id = scene_id;
            s.first_frame = records[w].frame;
            out.push_back(std::move(s));
            ++sum.windows;
        }
    };

    std::size_t i = 0;
    while (i < records.size()) {
        std::size_t j = i + 1;
        while (j < records.size() && records[j].ped_id == records[i].ped_id) ++j;
        ++sum.tracks;
        std::size_t seg = i;
        for (std::size_t k = i + 1; k < j; ++k) {
            if (records[k].frame - records[k - 1].frame != step) {
                emit_segment(seg, k);
                seg = k;
            }
        }
        emit_segment(seg, j);
        i = j;
    }
    if (summary != nullptr) *summary = sum;
    return out;
}

TrajectorySample normalize(const TrajectorySample& s) {
    TrajectorySample n = s;
    const Eigen::RowVector2d shift = -s.obs.row(kObsLen - 1);
    n.obs.rowwise() += shift;
    n.fut.rowwise() += shift;
    n.offset = s.offset + shift;
    return n;
}

TrajectorySample denormalize(const TrajectorySample& s) {
    TrajectorySample d = s;
    d.obs.rowwise() -= s.offset;
    d.fut.rowwise() -= s.offset;
    d.offset.setZero();
    return d;
}

TrajectorySample rotate(const TrajectorySample& s, double radians) {
    const double c = std::cos(radians);
    const double sn = std::sin(radians);
    Eigen::Matrix2d rt;  // transpose of the rotation, applied to row vectors
    rt << c, sn, -sn, c;
    TrajectorySample r = s;
    r.obs = s.obs * rt;
    r.fut = s.fut * rt;
    return r;
}

std::vector<TrajectorySample> rotate_augment(const TrajectorySample& s, double step_deg) {
    if (!(step_deg > 0.0)) throw std::invalid_argument("rotate_augment: step must be positive");
    const int copies = static_cast<int>(std::lround(360.0 / step_deg));
    std::vector<TrajectorySample> out;
    out.reserve(copies);
    out.push_back(s);
    for (int k = 1; k < copies; ++k) {
        out.push_back(rotate(s, k * step_deg * std::numbers::pi / 180.0));
    }
    return out;
}

std::vector<SyntheticPersona> default_personas() {
    return {
        {0, -0.12, 0.45, 0.04},
        {1, -0.03, 0.60, 0.04},
        {2, 0.03, 0.40, 0.04},
        {3, 0.12, 0.55, 0.04},
    };
}

std::vector<TrajectorySample> synth_generate(std::span<const SyntheticPersona> personas, int n_per_persona,
                                             std::uint64_t seed, const SynthOptions& opts) {
    if (n_per_persona <= 0) throw std::invalid_argument("synth_generate: n_per_persona must be positive");
    if (personas.size() < 2) throw std::invalid_argument("synth_generate: need at least two personas");
    for (std::size_t a = 0; a < personas.size(); ++a) {
        const SyntheticPersona& p = personas[a];
        if (!(p.speed > 0.0) || !(p.noise_sigma >= 0.0)) {
            throw std::invalid_argument("synth_generate: persona needs speed > 0 and noise_sigma >= 0");
        }
        for (std::size_t b = 0; b < a; ++b) {
            if (personas[b].turn_rate == p.turn_rate && personas[b].speed == p.speed) {
                throw std::invalid_argument("synth_generate: personas must differ in (turn_rate, speed)");
            }
        }
    }
    if (opts.prefix_len < 1 || opts.prefix_len > kObsLen) {
        throw std::invalid_argument("synth_generate: prefix_len must lie in [1, 8]");
    }

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> unit(0.0, 1.0);
    std::uniform_real_distribution<double> start(-opts.start_spread, opts.start_spread);

    std::vector<TrajectorySample> out;
    out.reserve(personas.size() * static_cast<std::size_t>(n_per_persona));
    std::int64_t ped = 0;
    for (const SyntheticPersona& p : personas) {
        for (int i = 0; i < n_per_persona; ++i) {
            Eigen::Matrix<double, kWindowLen, 2> path;
            double heading = opts.heading_jitter * unit(rng);
            Eigen::RowVector2d pos(start(rng), start(rng));
            path.row(0) = pos;
            for (int t = 1; t < kWindowLen; ++t) {
                double v = opts.base_speed;
                if (t >= opts.prefix_len) {
                    heading += p.turn_rate;
                    v = p.speed;
                }
                pos += v * Eigen::RowVector2d(std::cos(heading), std::sin(heading));
                path.row(t) = pos;
            }
            for (int t = 0; t < kWindowLen; ++t) {
                path(t, 0) += p.noise_sigma * unit(rng);
                path(t, 1) += p.noise_sigma * unit(rng);
            }
            TrajectorySample s;
            s.obs = path.topRows<kObsLen>();
            s.fut = path.bottomRows<kPredLen>();
            s.ped_id = ped++;
            s.scene_id = "synthetic";
            s.first_frame = 0;
            s.pattern_label = p.pattern_id;
            out.push_back(normalize(s));
        }
    }
    return out;
}

void write_scene(const std::filesystem::path& path, std::span<const TrajectorySample> samples) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << std::setprecision(17);
    for (const TrajectorySample& s : samples) {
        const TrajectorySample d = denormalize(s);
        for (int t = 0; t < kWindowLen; ++t) {
            const auto row = t < kObsLen ? Eigen::RowVector2d(d.obs.row(t)) : Eigen::RowVector2d(d.fut.row(t - kObsLen));
            out << (s.first_frame + t) << ' ' << s.ped_id << ' ' << row(0) << ' ' << row(1) << '\n';
        }
    }
    if (!out) throw DataError("write failed for " + path.string());
}

void write_labels(const std::filesystem::path& path, std::span<const TrajectorySample> samples) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    for (const TrajectorySample& s : samples) {
        out << s.ped_id << ' ' << s.pattern_label.value_or(-1) << '\n';
    }
    if (!out) throw DataError("write failed for " + path.string());
}

void sort_samples(std::vector<TrajectorySample>& samples) {
    std::stable_sort(samples.begin(), samples.end(), [](const TrajectorySample& a, const TrajectorySample& b) {
        if (a.scene_id != b.scene_id) return a.scene_id < b.scene_id;
        if (a.ped_id != b.ped_id) return a.ped_id < b.ped_id;
        return a.first_frame < b.first_frame;
    });
}

}  // namespace disdis
