#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace disdis {

inline constexpr int kObsLen = 8;
inline constexpr int kPredLen = 12;
inline constexpr int kWindowLen = kObsLen + kPredLen;

using ObsTrack = Eigen::Matrix<double, kObsLen, 2>;
using FutTrack = Eigen::Matrix<double, kPredLen, 2>;

/// Raised for unreadable or malformed dataset files. `line` is 1-based, 0 if not line-specific.
class DataError : public std::runtime_error {
public:
    DataError(const std::string& msg, std::size_t line = 0)
        : std::runtime_error(msg), line_(line) {}
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

struct RawRecord {
    std::int64_t frame = 0;
    std::int64_t ped_id = 0;
    double x = 0.0;
    double y = 0.0;
};

struct TrajectorySample {
    ObsTrack obs = ObsTrack::Zero();
    FutTrack fut = FutTrack::Zero();
    std::int64_t ped_id = 0;
    std::string scene_id;
    std::int64_t first_frame = 0;
    std::optional<int> pattern_label;
    /// Translation added by normalize(); denormalize() subtracts it.
    Eigen::RowVector2d offset = Eigen::RowVector2d::Zero();
};

struct SyntheticPersona {
    int pattern_id = 0;
    double turn_rate = 0.0;   // radians / step
    double speed = 0.5;       // meters / step
    double noise_sigma = 0.0; // meters
};

struct SynthOptions {
    /// Steps walked straight at `base_speed` before the persona's own kinematics take over.
    /// Every persona shares this prefix, so the observed history only hints at the pattern.
    int prefix_len = 5;
    double base_speed = 0.5;
    double heading_jitter = 0.1;  // std of the initial heading, radians
    double start_spread = 5.0;    // start positions uniform in [-spread, spread]^2
};

struct WindowSummary {
    std::size_t tracks = 0;
    std::size_t segments = 0;
    std::size_t short_segments = 0;  // segments with fewer than kWindowLen steps
    std::size_t windows = 0;
};

/// Parses "frame ped_id x y" lines, grouped by pedestrian and frame-sorted.
std::vector<RawRecord> load_scene(const std::filesystem::path& path);

/// Frame increment between consecutive observations of one pedestrian; the
/// most common positive per-pedestrian difference (smallest on ties), 1 if none.
std::int64_t infer_frame_step(std::span<const RawRecord> records);

/// Slides a 20-step window (stride 1) over every gap-free track segment.
std::vector<TrajectorySample> window_scene(std::span<const RawRecord> records, const std::string& scene_id,
                                           WindowSummary* summary = nullptr);

/// Translates all positions so the last observed position is the origin.
TrajectorySample normalize(const TrajectorySample& s);
TrajectorySample denormalize(const TrajectorySample& s);

/// Rotation about the origin by `radians` (counter-clockwise).
TrajectorySample rotate(const TrajectorySample& s, double radians);

/// 360 / step_deg copies rotated by k * step_deg, k = 0, 1, ...
std::vector<TrajectorySample> rotate_augment(const TrajectorySample& s, double step_deg = 15.0);

/// Pattern-labeled constant-curvature walkers, n_per_persona per persona, normalized.
std::vector<TrajectorySample> synth_generate(std::span<const SyntheticPersona> personas, int n_per_persona,
                                             std::uint64_t seed, const SynthOptions& opts = {});

/// The four-persona population used by default for synthetic experiments.
std::vector<SyntheticPersona> default_personas();

/// Writes samples in the benchmark text format, one pedestrian id per sample
/// (frames 0..19), and optionally a "ped_id pattern_id" sidecar.
void write_scene(const std::filesystem::path& path, std::span<const TrajectorySample> samples);
void write_labels(const std::filesystem::path& path, std::span<const TrajectorySample> samples);

/// Sorts by (scene, ped, first frame).
void sort_samples(std::vector<TrajectorySample>& samples);

}  // namespace disdis
