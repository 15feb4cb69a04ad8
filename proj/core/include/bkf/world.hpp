#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <vector>

#include "bkf/kalman.hpp"
#include "bkf/nets.hpp"
#include "bkf/tensor.hpp"

namespace bkf::world {

// --- disk tracking ---------------------------------------------------------

/// Lengths in pixels, time in steps of `dt`. Disk positions are measured from
/// the image center; the spring pulls toward it.
struct DiskWorldConfig {
  std::size_t image_size = 32;
  std::size_t num_distractors = 0;
  /// When larger than num_distractors, each sequence draws its distractor
  /// count uniformly from [num_distractors, max_distractors].
  std::size_t max_distractors = 0;
  std::size_t T = 100;
  double spring_k = 0.05;
  double drag_c = 0.1;
  double dt = 1.0;
  double process_noise_std = 0.5;
  double target_radius = 2.0;
  double distractor_radius_min = 1.0;
  double distractor_radius_max = 4.0;
  std::uint64_t seed = 0;

  /// Defaults with radii scaled to the image: target size/16, distractors
  /// in [size/32, size/8].
  static DiskWorldConfig for_size(std::size_t image_size);

  std::vector<double> to_vector() const;
  static DiskWorldConfig from_vector(const std::vector<double>& v);
  friend bool operator==(const DiskWorldConfig&, const DiskWorldConfig&) = default;
};

struct DiskState {
  std::array<double, 2> position{};
  std::array<double, 2> velocity{};
};

/// State order (px, py, vx, vy).
struct DiskMatrices {
  Tensor A;    ///< 4×4
  Tensor B_w;  ///< 4×2, noise enters the velocity rows only
  Tensor Q;    ///< 2×2
};

/// Spectral radius of the per-axis block [[1, dt], [-k·dt, 1 - c·dt]].
double disk_spectral_radius(const DiskWorldConfig& config);
/// Assembles the matrices without checking stability.
DiskMatrices assemble_disk_matrices(const DiskWorldConfig& config);
/// Throws ConfigError reporting the spectral radius if it is not below 1.
DiskMatrices disk_dynamics_matrices(const DiskWorldConfig& config);
/// Stationary covariance of the noisy disk dynamics (4×4).
Tensor disk_stationary_covariance(const DiskMatrices& m);

DiskState step_disk(const DiskState& state, const DiskMatrices& m, std::mt19937_64& rng);

struct Disk {
  DiskState state;
  double radius = 1.0;
  std::array<double, 3> color{1.0, 0.0, 0.0};
};

struct Scene {
  Disk target;
  std::vector<Disk> distractors;  ///< drawn after the target, in order
};

/// H×W×3 frame: black background, target first, then distractors, each disk
/// blended by its 2×2 subpixel coverage.
Tensor render_frame(const Scene& scene, const DiskWorldConfig& config);
/// Number of target subpixel samples (4 per pixel) not covered by a distractor.
std::size_t visible_target_samples(const Scene& scene, const DiskWorldConfig& config);

/// Uniform RGB color at least 0.3 (Euclidean) away from pure red.
std::array<double, 3> sample_distractor_color(std::mt19937_64& rng);

/// Per-sequence scenes (frames 1..T) of the tracking world for `seed`.
std::vector<Scene> simulate_tracking_sequence(const DiskWorldConfig& config, std::uint64_t seed);

/// Filter matrices in label units: positions divided by image_size/2, so Q
/// is rescaled by the square of that factor; A and B_w are unchanged.
KalmanMatrices tracking_filter_matrices(const DiskWorldConfig& config);
nets::FilterSpec tracking_filter_spec(const DiskWorldConfig& config);

// --- ego motion ------------------------------------------------------------

/// Top-down camera over an unbounded dot texture. Lengths in world units,
/// angles in radians, time in steps of `dt`.
struct EgoWorldConfig {
  std::size_t image_size = 32;
  std::size_t T = 50;
  double dt = 1.0;
  double view_size = 8.0;       ///< world units spanned by the image side
  double speed_mean = 0.5;
  double speed_std = 0.2;       ///< stationary std of v
  double turn_std = 0.05;       ///< stationary std of ω
  double correlation = 0.98;    ///< AR(1) coefficient of v and ω per step
  double dot_density = 0.5;     ///< probability that a texture cell holds a dot
  double dot_radius = 0.35;     ///< in texture cells
  double cell_size = 1.0;
  double blackout_prob = 0.1;   ///< chance that a frame is blank
  std::uint64_t seed = 0;

  std::vector<double> to_vector() const;
  static EgoWorldConfig from_vector(const std::vector<double>& v);
  friend bool operator==(const EgoWorldConfig&, const EgoWorldConfig&) = default;
};

/// Unicycle step of (x, y, θ, v, ω): x += v·cosθ·dt, y += v·sinθ·dt, θ += ω·dt.
std::array<double, 5> ego_dynamics(const std::array<double, 5>& s, double dt);
/// Row-major 5×5 Jacobian of ego_dynamics.
std::array<double, 25> ego_jacobian(const std::array<double, 5>& s, double dt);

/// Texture color at world point (x, y) for texture seed `seed`.
std::array<double, 3> texture_color(const EgoWorldConfig& config, std::uint64_t seed, double x, double y);
/// H×W×3 view centered on the pose, heading pointing up the image.
Tensor render_ego_view(const EgoWorldConfig& config, std::uint64_t texture_seed, double x, double y, double heading);

/// Filter matrices for (x, y, θ, v, ω) with z = (v, ω) and labels (x, y, θ).
KalmanMatrices ego_filter_matrices(const EgoWorldConfig& config);
nets::FilterSpec ego_filter_spec(const EgoWorldConfig& config);

// --- datasets --------------------------------------------------------------

struct Sequence {
  Tensor images;       ///< T×H×W×C, float-rounded
  Tensor labels;       ///< T×p
  Tensor states;       ///< T×n ground-truth filter states
  Tensor obs_targets;  ///< T×d regression targets for the encoder's z
  Tensor init_state;   ///< n, equal to states[0]
  std::size_t distractors = 0;

  std::size_t length() const { return labels.dim(0); }
  friend bool operator==(const Sequence&, const Sequence&) = default;
};

struct SequenceDataset {
  nets::TaskKind task = nets::TaskKind::Tracking;
  std::vector<double> config;  ///< echo of the generating world config
  std::uint64_t seed = 0;
  std::vector<Sequence> sequences;

  friend bool operator==(const SequenceDataset&, const SequenceDataset&) = default;
};

/// Sequence i uses seed config.seed + i. Any thread count gives the same data.
SequenceDataset generate_tracking_dataset(const DiskWorldConfig& config, std::size_t count, std::size_t threads = 1);
SequenceDataset generate_ego_dataset(const EgoWorldConfig& config, std::size_t count, std::size_t threads = 1);

/// Fraction of frames whose target has no visible pixel sample.
double occlusion_rate(const DiskWorldConfig& config, std::size_t sequences);

std::vector<std::uint8_t> encode_dataset(const SequenceDataset& ds);
SequenceDataset decode_dataset(std::span<const std::uint8_t> bytes);
void save_dataset(const SequenceDataset& ds, const std::filesystem::path& path);
SequenceDataset load_dataset(const std::filesystem::path& path);

/// First `count` sequences and the remainder, config echo kept on both.
std::pair<SequenceDataset, SequenceDataset> split_dataset(const SequenceDataset& ds, std::size_t count);

}  // namespace bkf::world
