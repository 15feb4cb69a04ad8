#include "bkf/world.hpp"

#include <cmath>
#include <complex>
#include <cstdio>

#include "bkf/error.hpp"
#include "bkf/pack.hpp"
#include "bkf/parallel.hpp"

namespace bkf::world {
namespace {

// Lower Cholesky factor of a small PSD matrix; zero pivots give zero columns.
std::vector<double> psd_cholesky(const Tensor& m) {
  const std::size_t n = m.dim(0);
  std::vector<double> l(n * n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    double d = m.at(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= l[j * n + k] * l[j * n + k];
    if (d <= 1e-300) continue;
    l[j * n + j] = std::sqrt(d);
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = m.at(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l[i * n + k] * l[j * n + k];
      l[i * n + j] = s / l[j * n + j];
    }
  }
  return l;
}

Tensor matmul_plain(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p)
      for (std::size_t j = 0; j < n; ++j) out.at(i, j) += a.at(i, p) * b.at(p, j);
  return out;
}

Tensor transpose_plain(const Tensor& a) {
  Tensor out({a.dim(1), a.dim(0)});
  for (std::size_t i = 0; i < a.dim(0); ++i)
    for (std::size_t j = 0; j < a.dim(1); ++j) out.at(j, i) = a.at(i, j);
  return out;
}

std::array<double, 4> sample_disk_state(const std::vector<double>& chol, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  std::array<double, 4> e{};
  for (double& v : e) v = normal(rng);
  std::array<double, 4> x{};
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t k = 0; k <= i; ++k) x[i] += chol[i * 4 + k] * e[k];
  return x;
}

DiskState from_array(const std::array<double, 4>& x) { return {{x[0], x[1]}, {x[2], x[3]}}; }

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double unit(std::uint64_t& h) {
  h = splitmix(h);
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

void validate(const DiskWorldConfig& c) {
  if (c.image_size == 0 || c.T == 0) throw ConfigError("disk world: image_size and T must be positive");
  if (!(c.dt > 0.0)) throw ConfigError("disk world: dt must be positive");
  if (!(c.process_noise_std >= 0.0)) throw ConfigError("disk world: process_noise_std must be non-negative");
  if (!(c.target_radius > 0.0) || !(c.distractor_radius_min > 0.0) ||
      !(c.distractor_radius_max >= c.distractor_radius_min)) {
    throw ConfigError("disk world: radii must be positive with min <= max");
  }
}

void validate(const EgoWorldConfig& c) {
  if (c.image_size == 0 || c.T == 0) throw ConfigError("ego world: image_size and T must be positive");
  if (!(c.dt > 0.0) || !(c.view_size > 0.0) || !(c.cell_size > 0.0)) {
    throw ConfigError("ego world: dt, view_size and cell_size must be positive");
  }
  if (!(c.dot_density > 0.0 && c.dot_density < 1.0)) throw ConfigError("ego world: dot_density must lie in (0, 1)");
  if (!(c.dot_radius > 0.0 && c.dot_radius <= 0.5)) throw ConfigError("ego world: dot_radius must lie in (0, 0.5]");
  if (!(c.correlation >= 0.0 && c.correlation < 1.0)) throw ConfigError("ego world: correlation must lie in [0, 1)");
  if (!(c.speed_std >= 0.0) || !(c.turn_std >= 0.0)) throw ConfigError("ego world: noise levels must be non-negative");
  if (!(c.blackout_prob >= 0.0 && c.blackout_prob < 1.0)) throw ConfigError("ego world: blackout_prob must lie in [0, 1)");
}

std::string seq_key(std::size_t i, const char* field) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "seq/%06zu/%s", i, field);
  return buf;
}

void set_row(Tensor& m, std::size_t row, std::span<const double> values) {
  for (std::size_t j = 0; j < values.size(); ++j) m.at(row, j) = values[j];
}

Tensor row_of(const Tensor& m, std::size_t row) {
  Tensor out({m.dim(1)});
  for (std::size_t j = 0; j < m.dim(1); ++j) out[j] = m.at(row, j);
  return out;
}

}  // namespace

// --- disk tracking ---------------------------------------------------------

DiskWorldConfig DiskWorldConfig::for_size(std::size_t image_size) {
  DiskWorldConfig c;
  const double s = static_cast<double>(image_size);
  c.image_size = image_size;
  c.target_radius = s / 16.0;
  c.distractor_radius_min = s / 32.0;
  c.distractor_radius_max = s / 8.0;
  return c;
}

std::vector<double> DiskWorldConfig::to_vector() const {
  return {double(image_size), double(num_distractors), double(max_distractors), double(T), spring_k,
          drag_c, dt, process_noise_std, target_radius, distractor_radius_min, distractor_radius_max};
}

DiskWorldConfig DiskWorldConfig::from_vector(const std::vector<double>& v) {
  if (v.size() != 11) throw FormatError("disk world config echo has " + std::to_string(v.size()) + " fields");
  DiskWorldConfig c;
  c.image_size = static_cast<std::size_t>(v[0]);
  c.num_distractors = static_cast<std::size_t>(v[1]);
  c.max_distractors = static_cast<std::size_t>(v[2]);
  c.T = static_cast<std::size_t>(v[3]);
  c.spring_k = v[4];
  c.drag_c = v[5];
  c.dt = v[6];
  c.process_noise_std = v[7];
  c.target_radius = v[8];
  c.distractor_radius_min = v[9];
  c.distractor_radius_max = v[10];
  return c;
}

double disk_spectral_radius(const DiskWorldConfig& config) {
  const double a = 1.0, b = config.dt, c = -config.spring_k * config.dt, d = 1.0 - config.drag_c * config.dt;
  const double tr = a + d, det = a * d - b * c;
  const std::complex<double> root = std::sqrt(std::complex<double>(tr * tr / 4.0 - det, 0.0));
  return std::max(std::abs(tr / 2.0 + root), std::abs(tr / 2.0 - root));
}

DiskMatrices assemble_disk_matrices(const DiskWorldConfig& config) {
  DiskMatrices m{Tensor::zeros({4, 4}), Tensor::zeros({4, 2}), Tensor::zeros({2, 2})};
  for (std::size_t axis = 0; axis < 2; ++axis) {
    const std::size_t p = axis, v = axis + 2;
    m.A.at(p, p) = 1.0;
    m.A.at(p, v) = config.dt;
    m.A.at(v, p) = -config.spring_k * config.dt;
    m.A.at(v, v) = 1.0 - config.drag_c * config.dt;
    m.B_w.at(v, axis) = 1.0;
    m.Q.at(axis, axis) = config.process_noise_std * config.process_noise_std;
  }
  return m;
}

DiskMatrices disk_dynamics_matrices(const DiskWorldConfig& config) {
  const double rho = disk_spectral_radius(config);
  if (!(rho < 1.0)) {
    throw ConfigError("disk world: unstable dynamics, spectral radius " + std::to_string(rho) + " >= 1");
  }
  return assemble_disk_matrices(config);
}

Tensor disk_stationary_covariance(const DiskMatrices& m) {
  const Tensor noise = matmul_plain(matmul_plain(m.B_w, m.Q), transpose_plain(m.B_w));
  const Tensor At = transpose_plain(m.A);
  Tensor P = noise;
  for (int iter = 0; iter < 200000; ++iter) {
    Tensor next = matmul_plain(matmul_plain(m.A, P), At);
    double change = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < P.size(); ++i) {
      next[i] += noise[i];
      change = std::max(change, std::abs(next[i] - P[i]));
      scale = std::max(scale, std::abs(next[i]));
    }
    P = std::move(next);
    if (change <= 1e-15 * scale) break;
  }
  return P;
}

DiskState step_disk(const DiskState& s, const DiskMatrices& m, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  const std::vector<double> lq = psd_cholesky(m.Q);
  const double e0 = normal(rng), e1 = normal(rng);
  const double w[2] = {lq[0] * e0, lq[2] * e0 + lq[3] * e1};
  const double x[4] = {s.position[0], s.position[1], s.velocity[0], s.velocity[1]};
  double y[4];
  for (std::size_t i = 0; i < 4; ++i) {
    y[i] = m.B_w.at(i, 0) * w[0] + m.B_w.at(i, 1) * w[1];
    for (std::size_t k = 0; k < 4; ++k) y[i] += m.A.at(i, k) * x[k];
  }
  return {{y[0], y[1]}, {y[2], y[3]}};
}

namespace {

// Index of the topmost disk at every subpixel sample (-1 background, 0 target).
std::vector<int> coverage(const Scene& scene, std::size_t size) {
  const std::size_t n = 2 * size;
  std::vector<int> top(n * n, -1);
  const double center = static_cast<double>(size) / 2.0;
  auto draw = [&](const Disk& disk, int index) {
    const double cx = center + disk.state.position[0];
    const double cy = center + disk.state.position[1];
    const double r2 = disk.radius * disk.radius;
    // sample k sits at (k + 0.5) / 2 in pixel units
    const double lo_x = std::max(0.0, std::floor(2.0 * (cx - disk.radius) - 0.5));
    const double hi_x = std::min(double(n) - 1.0, std::ceil(2.0 * (cx + disk.radius) - 0.5));
    const double lo_y = std::max(0.0, std::floor(2.0 * (cy - disk.radius) - 0.5));
    const double hi_y = std::min(double(n) - 1.0, std::ceil(2.0 * (cy + disk.radius) - 0.5));
    if (lo_x > hi_x || lo_y > hi_y) return;
    for (auto sy = static_cast<std::size_t>(lo_y); sy <= static_cast<std::size_t>(hi_y); ++sy) {
      const double py = (double(sy) + 0.5) / 2.0 - cy;
      for (auto sx = static_cast<std::size_t>(lo_x); sx <= static_cast<std::size_t>(hi_x); ++sx) {
        const double px = (double(sx) + 0.5) / 2.0 - cx;
        if (px * px + py * py <= r2) top[sy * n + sx] = index;
      }
    }
  };
  draw(scene.target, 0);
  for (std::size_t i = 0; i < scene.distractors.size(); ++i) draw(scene.distractors[i], static_cast<int>(i) + 1);
  return top;
}

}  // namespace

Tensor render_frame(const Scene& scene, const DiskWorldConfig& config) {
  const std::size_t size = config.image_size;
  const std::vector<int> top = coverage(scene, size);
  Tensor img({size, size, 3});
  for (std::size_t i = 0; i < size; ++i) {
    for (std::size_t j = 0; j < size; ++j) {
      double rgb[3] = {0.0, 0.0, 0.0};
      for (std::size_t b = 0; b < 2; ++b) {
        for (std::size_t a = 0; a < 2; ++a) {
          const int k = top[(2 * i + b) * 2 * size + 2 * j + a];
          if (k < 0) continue;
          const auto& color = k == 0 ? scene.target.color : scene.distractors[std::size_t(k - 1)].color;
          for (std::size_t ch = 0; ch < 3; ++ch) rgb[ch] += color[ch];
        }
      }
      for (std::size_t ch = 0; ch < 3; ++ch) img[(i * size + j) * 3 + ch] = rgb[ch] / 4.0;
    }
  }
  return img;
}

std::size_t visible_target_samples(const Scene& scene, const DiskWorldConfig& config) {
  const std::vector<int> top = coverage(scene, config.image_size);
  std::size_t n = 0;
  for (int k : top) n += k == 0;
  return n;
}

std::array<double, 3> sample_distractor_color(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  while (true) {
    const std::array<double, 3> c{u(rng), u(rng), u(rng)};
    const double d2 = (c[0] - 1.0) * (c[0] - 1.0) + c[1] * c[1] + c[2] * c[2];
    if (d2 > 0.3 * 0.3) return c;
  }
}

std::vector<Scene> simulate_tracking_sequence(const DiskWorldConfig& config, std::uint64_t seed) {
  validate(config);
  const DiskMatrices m = disk_dynamics_matrices(config);
  const std::vector<double> chol = psd_cholesky(disk_stationary_covariance(m));
  std::mt19937_64 rng(seed);

  std::size_t count = config.num_distractors;
  if (config.max_distractors > config.num_distractors) {
    count = std::uniform_int_distribution<std::size_t>(config.num_distractors, config.max_distractors)(rng);
  }
  Scene scene;
  scene.target.state = from_array(sample_disk_state(chol, rng));
  scene.target.radius = config.target_radius;
  std::uniform_real_distribution<double> radius(config.distractor_radius_min, config.distractor_radius_max);
  for (std::size_t i = 0; i < count; ++i) {
    Disk d;
    d.state = from_array(sample_disk_state(chol, rng));
    d.radius = radius(rng);
    d.color = sample_distractor_color(rng);
    scene.distractors.push_back(d);
  }

  std::vector<Scene> frames;
  frames.reserve(config.T);
  for (std::size_t t = 0; t < config.T; ++t) {
    if (t > 0) {
      scene.target.state = step_disk(scene.target.state, m, rng);
      for (auto& d : scene.distractors) d.state = step_disk(d.state, m, rng);
    }
    frames.push_back(scene);
  }
  return frames;
}

KalmanMatrices tracking_filter_matrices(const DiskWorldConfig& config) {
  const DiskMatrices m = disk_dynamics_matrices(config);
  const double unit = static_cast<double>(config.image_size) / 2.0;
  KalmanMatrices k;
  k.A = m.A;
  k.B_w = m.B_w;
  k.Q = m.Q;
  for (double& v : k.Q.data()) v /= unit * unit;
  k.C_z = Tensor::matrix(2, 4, {1, 0, 0, 0, 0, 1, 0, 0});
  k.C_y = k.C_z;
  k.Sigma0 = Tensor::identity(4);
  return k;
}

nets::FilterSpec tracking_filter_spec(const DiskWorldConfig& config) {
  nets::FilterSpec spec;
  spec.task = nets::TaskKind::Tracking;
  spec.matrices = tracking_filter_matrices(config);
  spec.dt = config.dt;
  return spec;
}

// --- ego motion ------------------------------------------------------------

std::vector<double> EgoWorldConfig::to_vector() const {
  return {double(image_size), double(T), dt,         view_size, speed_mean, speed_std,    turn_std,
          correlation,        dot_density, dot_radius, cell_size, blackout_prob};
}

EgoWorldConfig EgoWorldConfig::from_vector(const std::vector<double>& v) {
  if (v.size() != 12) throw FormatError("ego world config echo has " + std::to_string(v.size()) + " fields");
  EgoWorldConfig c;
  c.image_size = static_cast<std::size_t>(v[0]);
  c.T = static_cast<std::size_t>(v[1]);
  c.dt = v[2];
  c.view_size = v[3];
  c.speed_mean = v[4];
  c.speed_std = v[5];
  c.turn_std = v[6];
  c.correlation = v[7];
  c.dot_density = v[8];
  c.dot_radius = v[9];
  c.cell_size = v[10];
  c.blackout_prob = v[11];
  return c;
}

std::array<double, 5> ego_dynamics(const std::array<double, 5>& s, double dt) {
  return {s[0] + s[3] * std::cos(s[2]) * dt, s[1] + s[3] * std::sin(s[2]) * dt, s[2] + s[4] * dt, s[3], s[4]};
}

std::array<double, 25> ego_jacobian(const std::array<double, 5>& s, double dt) {
  const double c = std::cos(s[2]), sn = std::sin(s[2]);
  return {1, 0, -s[3] * sn * dt, c * dt,  0,   //
          0, 1, s[3] * c * dt,   sn * dt, 0,   //
          0, 0, 1,               0,       dt,  //
          0, 0, 0,               1,       0,   //
          0, 0, 0,               0,       1};
}

std::array<double, 3> texture_color(const EgoWorldConfig& config, std::uint64_t seed, double x, double y) {
  const double cell = config.cell_size;
  const auto cx = static_cast<std::int64_t>(std::floor(x / cell));
  const auto cy = static_cast<std::int64_t>(std::floor(y / cell));
  const double r = config.dot_radius * cell;
  std::array<double, 3> out{0.0, 0.0, 0.0};
  for (std::int64_t dy = -1; dy <= 1; ++dy) {
    for (std::int64_t dx = -1; dx <= 1; ++dx) {
      const std::int64_t ix = cx + dx, iy = cy + dy;
      std::uint64_t h = splitmix(seed ^ splitmix(static_cast<std::uint64_t>(ix) * 0x632be59bd9b4e019ULL ^
                                                 splitmix(static_cast<std::uint64_t>(iy))));
      if (unit(h) >= config.dot_density) continue;
      const double ox = (double(ix) + config.dot_radius + (1.0 - 2.0 * config.dot_radius) * unit(h)) * cell;
      const double oy = (double(iy) + config.dot_radius + (1.0 - 2.0 * config.dot_radius) * unit(h)) * cell;
      std::array<double, 3> color;
      for (double& c : color) c = 0.2 + 0.8 * unit(h);
      const double d2 = ((x - ox) * (x - ox) + (y - oy) * (y - oy)) / (r * r);
      if (d2 >= 1.0) continue;
      const double bump = (1.0 - d2) * (1.0 - d2);
      for (std::size_t ch = 0; ch < 3; ++ch) out[ch] = std::max(out[ch], bump * color[ch]);
    }
  }
  return out;
}

Tensor render_ego_view(const EgoWorldConfig& config, std::uint64_t texture_seed, double x, double y, double heading) {
  const std::size_t size = config.image_size;
  const double ppu = static_cast<double>(size) / config.view_size;
  const double half = static_cast<double>(size) / 2.0;
  const double c = std::cos(heading), s = std::sin(heading);
  Tensor img({size, size, 3});
  for (std::size_t i = 0; i < size; ++i) {
    for (std::size_t j = 0; j < size; ++j) {
      double rgb[3] = {0.0, 0.0, 0.0};
      for (std::size_t b = 0; b < 2; ++b) {
        for (std::size_t a = 0; a < 2; ++a) {
          const double forward = (half - (double(i) + 0.25 + 0.5 * double(b))) / ppu;
          const double right = ((double(j) + 0.25 + 0.5 * double(a)) - half) / ppu;
          const auto col = texture_color(config, texture_seed, x + forward * c + right * s, y + forward * s - right * c);
          for (std::size_t ch = 0; ch < 3; ++ch) rgb[ch] += col[ch];
        }
      }
      for (std::size_t ch = 0; ch < 3; ++ch) img[(i * size + j) * 3 + ch] = rgb[ch] / 4.0;
    }
  }
  return img;
}

KalmanMatrices ego_filter_matrices(const EgoWorldConfig& config) {
  KalmanMatrices k;
  k.A = Tensor::identity(5);
  k.B_w = Tensor::zeros({5, 2});
  k.B_w.at(3, 0) = 1.0;
  k.B_w.at(4, 1) = 1.0;
  const double innovation = 1.0 - config.correlation * config.correlation;
  k.Q = Tensor::matrix(2, 2, {config.speed_std * config.speed_std * innovation, 0.0, 0.0,
                              config.turn_std * config.turn_std * innovation});
  k.C_z = Tensor::matrix(2, 5, {0, 0, 0, 1, 0, 0, 0, 0, 0, 1});
  k.C_y = Tensor::matrix(3, 5, {1, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 1, 0, 0});
  k.Sigma0 = Tensor::identity(5);
  return k;
}

nets::FilterSpec ego_filter_spec(const EgoWorldConfig& config) {
  nets::FilterSpec spec;
  spec.task = nets::TaskKind::Ego;
  spec.matrices = ego_filter_matrices(config);
  spec.dt = config.dt;
  spec.learn_process_noise = true;
  return spec;
}

// --- datasets --------------------------------------------------------------

namespace {

Sequence make_tracking_sequence(const DiskWorldConfig& config, std::uint64_t seed) {
  const std::vector<Scene> scenes = simulate_tracking_sequence(config, seed);
  const std::size_t T = scenes.size(), size = config.image_size;
  const double unit = static_cast<double>(size) / 2.0;
  Sequence seq;
  seq.images = Tensor({T, size, size, 3});
  seq.labels = Tensor({T, 2});
  seq.states = Tensor({T, 4});
  seq.distractors = scenes.front().distractors.size();
  const std::size_t frame = size * size * 3;
  for (std::size_t t = 0; t < T; ++t) {
    const Tensor img = render_frame(scenes[t], config);
    for (std::size_t k = 0; k < frame; ++k) seq.images[t * frame + k] = static_cast<float>(img[k]);
    const DiskState& s = scenes[t].target.state;
    const double state[4] = {s.position[0] / unit, s.position[1] / unit, s.velocity[0] / unit, s.velocity[1] / unit};
    set_row(seq.states, t, state);
    set_row(seq.labels, t, std::span(state, 2));
  }
  seq.obs_targets = seq.labels;
  seq.init_state = row_of(seq.states, 0);
  return seq;
}

Sequence make_ego_sequence(const EgoWorldConfig& config, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  const std::uint64_t texture_seed = splitmix(seed ^ 0x7465787475726500ULL);
  const double rho = config.correlation;
  const double innovation = std::sqrt(1.0 - rho * rho);

  std::array<double, 5> s{0.0, 0.0, 0.0, config.speed_mean + config.speed_std * normal(rng),
                          config.turn_std * normal(rng)};
  std::vector<std::array<double, 5>> truth{s};
  for (std::size_t t = 0; t < config.T; ++t) {
    s = ego_dynamics(s, config.dt);
    s[3] = config.speed_mean + rho * (s[3] - config.speed_mean) + config.speed_std * innovation * normal(rng);
    s[4] = rho * s[4] + config.turn_std * innovation * normal(rng);
    truth.push_back(s);
  }
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<bool> blank(truth.size());
  for (std::size_t t = 0; t < truth.size(); ++t) blank[t] = u(rng) < config.blackout_prob;

  const std::size_t T = config.T, size = config.image_size;
  std::vector<Tensor> frames;
  frames.reserve(truth.size());
  for (std::size_t t = 0; t < truth.size(); ++t) {
    frames.push_back(blank[t] ? Tensor::zeros({size, size, 3})
                              : render_ego_view(config, texture_seed, truth[t][0], truth[t][1], truth[t][2]));
  }

  Sequence seq;
  seq.images = Tensor({T, size, size, 6});
  seq.labels = Tensor({T, 3});
  seq.states = Tensor({T, 5});
  seq.obs_targets = Tensor({T, 2});
  for (std::size_t t = 1; t <= T; ++t) {
    const std::size_t row = t - 1;
    for (std::size_t px = 0; px < size * size; ++px) {
      for (std::size_t ch = 0; ch < 3; ++ch) {
        seq.images[(row * size * size + px) * 6 + ch] = static_cast<float>(frames[t][px * 3 + ch]);
        seq.images[(row * size * size + px) * 6 + 3 + ch] = static_cast<float>(frames[t - 1][px * 3 + ch]);
      }
    }
    // Velocities that moved the pose from t-1 to t, which is what the frame pair shows.
    const double state[5] = {truth[t][0], truth[t][1], truth[t][2], truth[t - 1][3], truth[t - 1][4]};
    set_row(seq.states, row, state);
    set_row(seq.labels, row, std::span(state, 3));
    set_row(seq.obs_targets, row, std::span(state + 3, 2));
  }
  seq.init_state = row_of(seq.states, 0);
  return seq;
}

}  // namespace

SequenceDataset generate_tracking_dataset(const DiskWorldConfig& config, std::size_t count, std::size_t threads) {
  validate(config);
  if (count == 0) throw ConfigError("dataset count must be at least 1");
  SequenceDataset ds;
  ds.task = nets::TaskKind::Tracking;
  ds.config = config.to_vector();
  ds.seed = config.seed;
  ds.sequences.resize(count);
  parallel_for(count, threads, [&](std::size_t i) { ds.sequences[i] = make_tracking_sequence(config, config.seed + i); });
  return ds;
}

SequenceDataset generate_ego_dataset(const EgoWorldConfig& config, std::size_t count, std::size_t threads) {
  validate(config);
  if (count == 0) throw ConfigError("dataset count must be at least 1");
  SequenceDataset ds;
  ds.task = nets::TaskKind::Ego;
  ds.config = config.to_vector();
  ds.seed = config.seed;
  ds.sequences.resize(count);
  parallel_for(count, threads, [&](std::size_t i) { ds.sequences[i] = make_ego_sequence(config, config.seed + i); });
  return ds;
}

double occlusion_rate(const DiskWorldConfig& config, std::size_t sequences) {
  std::size_t hidden = 0, total = 0;
  for (std::size_t i = 0; i < sequences; ++i) {
    for (const Scene& scene : simulate_tracking_sequence(config, config.seed + i)) {
      hidden += visible_target_samples(scene, config) == 0;
      ++total;
    }
  }
  return total ? double(hidden) / double(total) : 0.0;
}

std::vector<std::uint8_t> encode_dataset(const SequenceDataset& ds) {
  tensorpack::TensorPack p;
  p.add("meta/task", Tensor::vector({ds.task == nets::TaskKind::Tracking ? 0.0 : 1.0}));
  p.add("meta/seed", Tensor::vector({double(ds.seed >> 32), double(ds.seed & 0xffffffffULL)}));
  p.add("meta/config", Tensor({ds.config.size()}, ds.config));
  p.add("meta/count", Tensor::vector({double(ds.sequences.size())}));
  for (std::size_t i = 0; i < ds.sequences.size(); ++i) {
    const Sequence& s = ds.sequences[i];
    p.add(seq_key(i, "images"), s.images, tensorpack::DType::F32);
    p.add(seq_key(i, "labels"), s.labels);
    p.add(seq_key(i, "states"), s.states);
    p.add(seq_key(i, "obs_targets"), s.obs_targets);
    p.add(seq_key(i, "init_state"), s.init_state);
    p.add(seq_key(i, "distractors"), Tensor::vector({double(s.distractors)}));
  }
  return tensorpack::encode(p);
}

SequenceDataset decode_dataset(std::span<const std::uint8_t> bytes) {
  const tensorpack::TensorPack p = tensorpack::decode(bytes);
  SequenceDataset ds;
  const double task = p.get("meta/task").item();
  if (task != 0.0 && task != 1.0) throw FormatError("dataset: unknown task code");
  ds.task = task == 0.0 ? nets::TaskKind::Tracking : nets::TaskKind::Ego;
  const Tensor& seed = p.get("meta/seed");
  if (seed.size() != 2) throw FormatError("dataset: malformed seed");
  ds.seed = (static_cast<std::uint64_t>(seed[0]) << 32) | static_cast<std::uint64_t>(seed[1]);
  const Tensor& config = p.get("meta/config");
  ds.config.assign(config.data().begin(), config.data().end());
  const auto count = static_cast<std::size_t>(p.get("meta/count").item());
  for (std::size_t i = 0; i < count; ++i) {
    Sequence s;
    s.images = p.get(seq_key(i, "images"));
    s.labels = p.get(seq_key(i, "labels"));
    s.states = p.get(seq_key(i, "states"));
    s.obs_targets = p.get(seq_key(i, "obs_targets"));
    s.init_state = p.get(seq_key(i, "init_state"));
    s.distractors = static_cast<std::size_t>(p.get(seq_key(i, "distractors")).item());
    if (s.images.rank() != 4 || s.labels.rank() != 2 || s.images.dim(0) != s.labels.dim(0) ||
        s.states.rank() != 2 || s.states.dim(0) != s.labels.dim(0) || s.obs_targets.rank() != 2 ||
        s.obs_targets.dim(0) != s.labels.dim(0) || s.init_state.rank() != 1 ||
        s.init_state.dim(0) != s.states.dim(1)) {
      throw FormatError("dataset: inconsistent shapes in sequence " + std::to_string(i));
    }
    if (!ds.sequences.empty() && (s.images.shape() != ds.sequences.front().images.shape() ||
                                  s.labels.shape() != ds.sequences.front().labels.shape())) {
      throw FormatError("dataset: sequence " + std::to_string(i) + " differs in shape from sequence 0");
    }
    ds.sequences.push_back(std::move(s));
  }
  return ds;
}

void save_dataset(const SequenceDataset& ds, const std::filesystem::path& path) {
  tensorpack::write_file(path, encode_dataset(ds));
}

SequenceDataset load_dataset(const std::filesystem::path& path) { return decode_dataset(tensorpack::read_file(path)); }

std::pair<SequenceDataset, SequenceDataset> split_dataset(const SequenceDataset& ds, std::size_t count) {
  if (count > ds.sequences.size()) throw ConfigError("split larger than dataset");
  SequenceDataset head{ds.task, ds.config, ds.seed, {}};
  SequenceDataset tail = head;
  head.sequences.assign(ds.sequences.begin(), ds.sequences.begin() + static_cast<std::ptrdiff_t>(count));
  tail.sequences.assign(ds.sequences.begin() + static_cast<std::ptrdiff_t>(count), ds.sequences.end());
  return {std::move(head), std::move(tail)};
}

}  // namespace bkf::world
