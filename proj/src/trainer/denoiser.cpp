#include "b3d/trainer/denoiser.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <fmt/format.h>

#include "b3d/core/error.hpp"
#include "b3d/diffusion/process.hpp"

namespace b3d {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

double sigmoid(double a) { return 1.0 / (1.0 + std::exp(-a)); }

struct Activations {
  MatrixXd temb, z, a1, h1, a2, h2, out;
  MatrixXd gates;  // taps x B
  std::vector<MatrixXd> shifted;  // x_t moved by each tap offset
  Eigen::RowVectorXd scale, mscale;
};

// Source element for every (tap, element) of a 2x2 grid of RGB views: the
// neighbour at offset (dx, dy) in {-1,0,1}^2, clamped to the same view.
std::vector<std::vector<Eigen::Index>> tap_sources(int v) {
  const int g = 2 * v;
  std::vector<std::vector<Eigen::Index>> out(kSkipTaps, std::vector<Eigen::Index>(static_cast<std::size_t>(3 * g * g)));
  for (int k = 0; k < kSkipTaps; ++k) {
    const int dx = k % 3 - 1, dy = k / 3 - 1;
    for (int y = 0; y < g; ++y)
      for (int x = 0; x < g; ++x) {
        const int x0 = (x / v) * v, y0 = (y / v) * v;
        const int sx = std::clamp(x + dx, x0, x0 + v - 1), sy = std::clamp(y + dy, y0, y0 + v - 1);
        for (int c = 0; c < 3; ++c)
          out[static_cast<std::size_t>(k)][static_cast<std::size_t>(3 * (y * g + x) + c)] = 3 * (sy * g + sx) + c;
      }
  }
  return out;
}

MatrixXd gather(const MatrixXd& x, const std::vector<Eigen::Index>& src) {
  MatrixXd out(x.rows(), x.cols());
  for (Eigen::Index b = 0; b < x.cols(); ++b)
    for (Eigen::Index i = 0; i < x.rows(); ++i) out(i, b) = x(src[static_cast<std::size_t>(i)], b);
  return out;
}

void check_inputs(const DenoiserParams& p, const MatrixXd& x, std::span<const int> t, std::span<const int> cond) {
  const auto& c = p.config;
  if (x.rows() != c.input_dim())
    throw ShapeError(fmt::format("denoiser input has {} rows, expected {} (2x2 grid of {}px views)", x.rows(),
                                 c.input_dim(), c.view_size));
  if (static_cast<std::size_t>(x.cols()) != t.size() || t.size() != cond.size())
    throw ShapeError(fmt::format("batch mismatch: {} columns, {} timesteps, {} conditions", x.cols(), t.size(),
                                 cond.size()));
  for (int k : cond)
    if (k < 0 || k >= c.n_conditions) throw RangeError(fmt::format("condition {} outside [0, {})", k, c.n_conditions));
  if (!p.head_scale.empty())
    for (int s : t)
      if (s < 0 || static_cast<std::size_t>(s) >= p.head_scale.size())
        throw RangeError(fmt::format("timestep {} outside [0, {}]", s, p.head_scale.size() - 1));
}

Activations forward_pass(const DenoiserParams& p, const MatrixXd& x, std::span<const int> t, std::span<const int> cond) {
  const auto& c = p.config;
  const Eigen::Index B = x.cols(), D = c.input_dim(), E = c.time_dim, K = c.cond_dim;
  Activations a;
  a.temb.resize(E, B);
  a.z.resize(D + E + K, B);
  a.scale.resize(B);
  a.mscale.resize(B);
  for (Eigen::Index b = 0; b < B; ++b) {
    const auto tb = static_cast<std::size_t>(t[static_cast<std::size_t>(b)]);
    a.scale[b] = p.head_scale.empty() ? 1.0 : p.head_scale[tb];
    a.mscale[b] = p.mean_scale.empty() ? 1.0 : p.mean_scale[tb];
    a.temb.col(b) = time_embedding(t[static_cast<std::size_t>(b)], static_cast<int>(E));
    a.z.col(b).head(D) = x.col(b);
    a.z.col(b).segment(D, E) = a.temb.col(b);
    a.z.col(b).tail(K) = p[DenoiserParams::cond].col(cond[static_cast<std::size_t>(b)]);
  }
  a.a1.noalias() = p[DenoiserParams::w1] * a.z;
  a.a1.colwise() += p[DenoiserParams::b1].col(0);
  a.h1 = a.a1.unaryExpr([](double v) { return v * sigmoid(v); });
  a.a2.noalias() = p[DenoiserParams::w2] * a.h1;
  a.a2.colwise() += p[DenoiserParams::b2].col(0);
  a.h2 = a.a2.unaryExpr([](double v) { return v * sigmoid(v); });
  a.gates = p[DenoiserParams::skip].transpose() * a.temb;
  a.out.noalias() = p[DenoiserParams::w3] * a.h2;
  a.out.colwise() += p[DenoiserParams::b3].col(0);
  a.out *= a.scale.asDiagonal();
  const auto sources = tap_sources(c.view_size);
  for (int k = 0; k < kSkipTaps; ++k) {
    a.shifted.push_back(k == kCentreTap ? x : gather(x, sources[static_cast<std::size_t>(k)]));
    a.out += a.shifted.back() * a.gates.row(k).asDiagonal();
  }
  for (Eigen::Index b = 0; b < B; ++b)
    a.out.col(b) -= a.mscale[b] * p[DenoiserParams::mean].col(cond[static_cast<std::size_t>(b)]);
  return a;
}

double silu_grad(double v) {
  const double s = sigmoid(v);
  return s * (1.0 + v * (1.0 - s));
}

MatrixXd noisy_inputs(const TrainingBatch& batch, const NoiseSchedule& schedule) {
  MatrixXd x(batch.x0.rows(), batch.x0.cols());
  for (Eigen::Index b = 0; b < x.cols(); ++b)
    x.col(b) = forward_noise(batch.x0.col(b), batch.t[static_cast<std::size_t>(b)], batch.eps.col(b), schedule);
  return x;
}

void check_batch(const TrainingBatch& batch) {
  if (batch.size() == 0) throw ParameterError("denoiser_backward: empty batch");
  const auto B = static_cast<Eigen::Index>(batch.size());
  if (batch.x0.cols() != B || batch.eps.cols() != B || batch.cond.size() != batch.size() ||
      batch.source.size() != batch.size() || batch.eps.rows() != batch.x0.rows())
    throw ShapeError("denoiser_backward: inconsistent batch fields");
}

}  // namespace

std::array<std::pair<Eigen::Index, Eigen::Index>, DenoiserParams::kSlots> DenoiserParams::shapes(const DenoiserConfig& c) {
  const Eigen::Index D = c.input_dim(), H = c.hidden, E = c.time_dim, K = c.cond_dim;
  return {{{H, D + E + K}, {H, 1}, {H, H}, {H, 1}, {D, H}, {D, 1}, {E, kSkipTaps}, {K, c.n_conditions}, {D, c.n_conditions}}};
}

std::size_t DenoiserParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& m : tensors) n += static_cast<std::size_t>(m.size());
  return n;
}

void DenoiserParams::attach_schedule(const NoiseSchedule& schedule) {
  const auto n = static_cast<std::size_t>(schedule.n_steps()) + 1;
  head_scale.resize(n);
  mean_scale.resize(n);
  for (std::size_t t = 0; t < n; ++t) {
    const double ab = schedule.alpha_bar(static_cast<int>(t));
    head_scale[t] = std::sqrt(ab);
    mean_scale[t] = std::sqrt(ab * (1.0 - ab));
  }
}

DenoiserParams DenoiserParams::zeros_like() const {
  DenoiserParams z;
  z.config = config;
  z.head_scale = head_scale;
  z.mean_scale = mean_scale;
  for (std::size_t i = 0; i < kSlots; ++i) z.tensors[i] = MatrixXd::Zero(tensors[i].rows(), tensors[i].cols());
  return z;
}

bool DenoiserParams::all_finite() const {
  for (const auto& m : tensors)
    if (!m.allFinite()) return false;
  return true;
}

DenoiserParams init_params(const DenoiserConfig& c, Rng& rng) {
  if (c.view_size < 1 || c.hidden < 1 || c.time_dim < 2 || c.time_dim % 2 != 0 || c.cond_dim < 1 || c.n_conditions < 1)
    throw ParameterError("denoiser config: sizes must be positive and time_dim even");
  const Eigen::Index D = c.input_dim(), H = c.hidden, E = c.time_dim, K = c.cond_dim;
  std::normal_distribution<double> normal(0.0, 1.0);
  auto gaussian = [&](Eigen::Index r, Eigen::Index cols, double stddev) {
    MatrixXd m(r, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
      for (Eigen::Index i = 0; i < r; ++i) m(i, j) = stddev * normal(rng);
    return m;
  };
  DenoiserParams p;
  p.config = c;
  const double s = c.init_scale;
  // Pixel and (time, condition) columns get separate fan-in scales so the
  // 48 conditioning inputs are not drowned out by thousands of pixels.
  p[DenoiserParams::w1].resize(H, D + E + K);
  p[DenoiserParams::w1].leftCols(D) = gaussian(H, D, s / std::sqrt(static_cast<double>(D)));
  p[DenoiserParams::w1].rightCols(E + K) = gaussian(H, E + K, s / std::sqrt(static_cast<double>(E + K)));
  p[DenoiserParams::b1] = MatrixXd::Zero(H, 1);
  p[DenoiserParams::w2] = gaussian(H, H, s / std::sqrt(static_cast<double>(H)));
  p[DenoiserParams::b2] = MatrixXd::Zero(H, 1);
  p[DenoiserParams::cond] = gaussian(K, c.n_conditions, s);
  if (c.zero_head) {
    p[DenoiserParams::w3] = MatrixXd::Zero(D, H);
    p[DenoiserParams::b3] = MatrixXd::Zero(D, 1);
    p[DenoiserParams::skip] = MatrixXd::Zero(E, kSkipTaps);
    p[DenoiserParams::mean] = MatrixXd::Zero(D, c.n_conditions);
  } else {
    p[DenoiserParams::w3] = gaussian(D, H, s / std::sqrt(static_cast<double>(H)));
    p[DenoiserParams::b3] = gaussian(D, 1, 0.1 * s);
    p[DenoiserParams::skip] = gaussian(E, kSkipTaps, s / std::sqrt(static_cast<double>(E * kSkipTaps)));
    p[DenoiserParams::mean] = gaussian(D, c.n_conditions, 0.1 * s);
  }
  return p;
}

DenoiserParams init_params(const DenoiserConfig& config, const NoiseSchedule& schedule, Rng& rng) {
  DenoiserParams p = init_params(config, rng);
  p.attach_schedule(schedule);
  return p;
}

Eigen::VectorXd time_embedding(int t, int dim) {
  const int half = dim / 2;
  Eigen::VectorXd e(dim);
  for (int k = 0; k < half; ++k) {
    const double freq = std::exp(-std::log(10000.0) * k / half);
    e[k] = std::sin(t * freq);
    e[half + k] = std::cos(t * freq);
  }
  return e;
}

Eigen::MatrixXd denoiser_forward(const DenoiserParams& params, const Eigen::MatrixXd& x_t, std::span<const int> t,
                                 std::span<const int> cond) {
  check_inputs(params, x_t, t, cond);
  return forward_pass(params, x_t, t, cond).out;
}

Eigen::VectorXd denoiser_forward(const DenoiserParams& params, const Eigen::VectorXd& x_t, int t, int cond) {
  MatrixXd x = x_t;
  const int ts[1] = {t}, cs[1] = {cond};
  return denoiser_forward(params, x, ts, cs).col(0);
}

double denoiser_loss(const DenoiserParams& params, const TrainingBatch& batch, const NoiseSchedule& schedule) {
  check_batch(batch);
  const MatrixXd x = noisy_inputs(batch, schedule);
  check_inputs(params, x, batch.t, batch.cond);
  const MatrixXd out = forward_pass(params, x, batch.t, batch.cond).out;
  return (out - batch.eps).squaredNorm() / static_cast<double>(out.size());
}

BackwardResult denoiser_backward(const DenoiserParams& params, const TrainingBatch& batch,
                                 const NoiseSchedule& schedule, const TimestepPolicy& policy) {
  check_batch(batch);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (!policy.allows(batch.source[i], batch.t[i]))
      throw PolicyError(fmt::format("batch item {}: t={} not allowed for {}", i, batch.t[i], to_string(batch.source[i])));
  }
  const MatrixXd x = noisy_inputs(batch, schedule);
  check_inputs(params, x, batch.t, batch.cond);
  const Activations a = forward_pass(params, x, batch.t, batch.cond);

  const auto& c = params.config;
  const Eigen::Index D = c.input_dim(), K = c.cond_dim;
  const MatrixXd diff = a.out - batch.eps;
  const double n = static_cast<double>(diff.size());

  BackwardResult res;
  res.loss = diff.squaredNorm() / n;
  res.item_loss.resize(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b)
    res.item_loss[b] = diff.col(static_cast<Eigen::Index>(b)).squaredNorm() / static_cast<double>(D);

  DenoiserParams g;
  g.config = c;
  const MatrixXd d_out = (2.0 / n) * diff;
  const MatrixXd d_head = d_out * a.scale.asDiagonal();
  g[DenoiserParams::w3].noalias() = d_head * a.h2.transpose();
  g[DenoiserParams::b3] = d_head.rowwise().sum();
  // d gate_kb = sum_i d_out(i,b) * shifted_k(i,b); gate_kb = skip_k . temb_b
  MatrixXd d_gates(kSkipTaps, x.cols());
  for (int k = 0; k < kSkipTaps; ++k) d_gates.row(k) = d_out.cwiseProduct(a.shifted[static_cast<std::size_t>(k)]).colwise().sum();
  g[DenoiserParams::skip] = a.temb * d_gates.transpose();

  MatrixXd d_a2 = params[DenoiserParams::w3].transpose() * d_head;
  d_a2.array() *= a.a2.unaryExpr(&silu_grad).array();
  g[DenoiserParams::w2].noalias() = d_a2 * a.h1.transpose();
  g[DenoiserParams::b2] = d_a2.rowwise().sum();

  MatrixXd d_a1 = params[DenoiserParams::w2].transpose() * d_a2;
  d_a1.array() *= a.a1.unaryExpr(&silu_grad).array();
  g[DenoiserParams::w1].noalias() = d_a1 * a.z.transpose();
  g[DenoiserParams::b1] = d_a1.rowwise().sum();

  // Only the condition-embedding rows of dz are needed.
  const MatrixXd d_cond = params[DenoiserParams::w1].rightCols(K).transpose() * d_a1;
  g[DenoiserParams::cond] = MatrixXd::Zero(K, c.n_conditions);
  g[DenoiserParams::mean] = MatrixXd::Zero(D, c.n_conditions);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto col = static_cast<Eigen::Index>(b);
    g[DenoiserParams::cond].col(batch.cond[b]) += d_cond.col(col);
    g[DenoiserParams::mean].col(batch.cond[b]) -= a.mscale[col] * d_out.col(col);
  }
  res.grad = std::move(g);
  return res;
}

}  // namespace b3d
