#include "moco/reg_learned.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "moco/metrics.hpp"
#include "moco/rng.hpp"
#include "moco/series_io.hpp"

namespace moco {

namespace {

constexpr int kLnccKernel = 19;
constexpr double kBendingWeight = 10.0;

AffineParams geo_transform(double dx, double dy, double theta, int rows, int cols) {
  AffineParams p;
  p.a11 = std::cos(theta);
  p.a12 = -std::sin(theta);
  p.a21 = std::sin(theta);
  p.a22 = std::cos(theta);
  p.tx = 2.0 * dx / (cols - 1);
  p.ty = 2.0 * dy / (rows - 1);
  return p;
}

struct SampleGrads {
  double loss = 0.0;
  std::vector<Param> grads;
};

// Affine stages: one forward/backward for a single augmented sample.
SampleGrads affine_sample_pass(int stage, const NetWeights& w, const TrainSample& s,
                               bool rpca_input) {
  const Image& net_fixed = (stage == 1 && rpca_input) ? s.rpca_fixed : s.fixed;
  const Image& net_moving = (stage == 1 && rpca_input) ? s.rpca_moving : s.moving;
  const int side = w.spec.input_side;

  SampleGrads out;
  if (!net_fixed.isFinite().all() || !net_moving.isFinite().all()) {
    out.loss = std::numeric_limits<double>::quiet_NaN();
    return out;
  }
  NetCache cache;
  const AffineParams p = net_forward(w, model_input(net_fixed, side),
                                     model_input(net_moving, side), &cache);

  if (!p.finite()) {
    out.loss = std::numeric_limits<double>::quiet_NaN();
    return out;
  }
  Eigen::Matrix<double, 6, 1> head_grad = Eigen::Matrix<double, 6, 1>::Zero();
  if (stage == 1) {
    const Image moved_mri = resample_affine(s.moving, p);
    const Image moved_rpca = resample_affine(s.rpca_moving, p);
    out.loss = stage1_combine(ncc(s.rpca_fixed, moved_rpca),
                              nmi_soft(s.rpca_fixed, moved_mri),
                              nmi_soft(s.fixed, moved_rpca));
    const Image g_mri = -0.25 * nmi_soft_grad_b(s.rpca_fixed, moved_mri);
    const Image g_rpca = -0.5 * ncc_grad_b(s.rpca_fixed, moved_rpca) -
                         0.25 * nmi_soft_grad_b(s.fixed, moved_rpca);
    head_grad = resample_affine_vjp(s.moving, p, g_mri) +
                resample_affine_vjp(s.rpca_moving, p, g_rpca);
  } else {
    const Image moved = resample_affine(s.moving, p);
    out.loss = -ncc(s.fixed, moved);
    const Image g = -ncc_grad_b(s.fixed, moved);
    head_grad = resample_affine_vjp(s.moving, p, g);
  }
  out.grads = backprop(w, cache, head_grad);
  return out;
}

SampleGrads field_sample_pass(const NetWeights& w, const TrainSample& s) {
  const int side = w.spec.input_side;
  if (s.fixed.rows() != side || s.fixed.cols() != side)
    throw std::invalid_argument("train_stage: stage-3 samples must match the net side");
  if (!s.fixed.isFinite().all() || !s.moving.isFinite().all()) {
    SampleGrads out;
    out.loss = std::numeric_limits<double>::quiet_NaN();
    return out;
  }
  NetCache cache;
  const DenseField field = net_forward_field(w, model_input(s.fixed, side),
                                             model_input(s.moving, side), &cache);
  const Image moved = resample_dense(s.moving, field);

  SampleGrads out;
  const int rows = static_cast<int>(s.fixed.rows());
  const int kernel = std::min(kLnccKernel, rows % 2 == 0 ? rows - 1 : rows);
  out.loss = -lncc(s.fixed, moved, kernel) + kBendingWeight * bending_energy(field);

  DenseField head_grad = resample_dense_vjp(s.moving, field, -lncc_grad_b(s.fixed, moved, kernel));
  const DenseField gb = bending_energy_grad(field);
  head_grad.u_x += kBendingWeight * gb.u_x;
  head_grad.u_y += kBendingWeight * gb.u_y;
  out.grads = backprop_field(w, cache, head_grad);
  return out;
}

}  // namespace

Image model_input(const Image& image, int side) {
  Image x = hist_equalize(image.cwiseMax(0.0).cwiseMin(1.0));
  if (x.rows() != side || x.cols() != side) x = resize_bilinear(x, side, side);
  return x;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("train: learning rate must be positive");
  if (batch_size < 1) throw std::invalid_argument("train: batch size must be >= 1");
  if (steps < 1) throw std::invalid_argument("train: steps must be >= 1");
  if (!(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0))
    throw std::invalid_argument("train: moment constants must lie in (0, 1)");
}

AugmentConfig AugmentConfig::for_stage(int stage) {
  AugmentConfig cfg;
  switch (stage) {
    case 1:
      cfg.geo = {20.0, 0.8, 1.0};
      break;
    case 2:
      cfg.geo = {10.0, 0.4, 0.5};
      break;
    case 3:
      cfg.geo = {0.0, 0.0, 0.0};
      break;
    default:
      throw std::invalid_argument("augment: stage must be 1, 2 or 3");
  }
  return cfg;
}

AugmentConfig AugmentConfig::none() {
  AugmentConfig cfg;
  cfg.noise_p = cfg.intensity_scale_p = cfg.intensity_shift_p = 0.0;
  cfg.geo = {0.0, 0.0, 0.0};
  return cfg;
}

TrainSample augment(const TrainSample& sample, const AugmentConfig& cfg,
                    std::mt19937_64& rng, AugmentRecord* record) {
  TrainSample out = sample;
  AugmentRecord rec;
  std::uniform_real_distribution<double> coin(0.0, 1.0);

  if (cfg.geo.probability > 0.0 && coin(rng) < cfg.geo.probability) {
    std::uniform_real_distribution<double> dt(-cfg.geo.translation_px,
                                              cfg.geo.translation_px);
    std::uniform_real_distribution<double> dr(-cfg.geo.rotation_rad,
                                              cfg.geo.rotation_rad);
    rec.geo_applied = true;
    rec.dx_px = dt(rng);
    rec.dy_px = dt(rng);
    rec.rotation = dr(rng);
    const AffineParams p =
        geo_transform(rec.dx_px, rec.dy_px, rec.rotation,
                      static_cast<int>(out.moving.rows()),
                      static_cast<int>(out.moving.cols()));
    out.moving = resample_affine(out.moving, p);
    if (out.rpca_moving.size() > 0)
      out.rpca_moving = resample_affine(out.rpca_moving, p);
  }
  if (cfg.intensity_scale_p > 0.0 && coin(rng) < cfg.intensity_scale_p) {
    std::uniform_real_distribution<double> ds(-cfg.intensity_scale, cfg.intensity_scale);
    rec.scale_applied = true;
    rec.scale = ds(rng);
    out.moving *= 1.0 + rec.scale;
  }
  if (cfg.intensity_shift_p > 0.0 && coin(rng) < cfg.intensity_shift_p) {
    std::uniform_real_distribution<double> ds(-cfg.intensity_shift, cfg.intensity_shift);
    rec.shift_applied = true;
    rec.shift = ds(rng);
    out.moving += rec.shift;
  }
  if (cfg.noise_p > 0.0 && coin(rng) < cfg.noise_p) {
    std::normal_distribution<double> gauss(0.0, cfg.noise_sd);
    rec.noise_applied = true;
    for (int i = 0; i < out.moving.size(); ++i) out.moving(i) += gauss(rng);
  }
  if (record) *record = rec;
  return out;
}

double stage1_combine(double ncc_rpca, double nmi_cross_a, double nmi_cross_b) {
  return 0.5 * (-ncc_rpca) + 0.25 * (-nmi_cross_a) + 0.25 * (-nmi_cross_b);
}

double stage1_loss(const Image& fixed_mri, const Image& moved_mri,
                   const Image& fixed_rpca, const Image& moved_rpca, bool soft) {
  if (fixed_rpca.size() == 0 || moved_rpca.size() == 0)
    throw std::invalid_argument("stage1_loss: missing low-rank frames");
  if (soft)
    return stage1_combine(ncc(fixed_rpca, moved_rpca), nmi_soft(fixed_rpca, moved_mri),
                          nmi_soft(fixed_mri, moved_rpca));
  return stage1_combine(ncc(fixed_rpca, moved_rpca), nmi(fixed_rpca, moved_mri),
                        nmi(fixed_mri, moved_rpca));
}

TrainResult train_stage(int stage, const std::vector<TrainSample>& dataset,
                        const ConvNetSpec& spec, const TrainConfig& train_cfg,
                        const AugmentConfig& augment_cfg) {
  if (stage < 1 || stage > 3) throw std::invalid_argument("train_stage: stage must be 1..3");
  train_cfg.validate();
  spec.validate();
  if (dataset.empty()) throw std::invalid_argument("train_stage: empty dataset");
  if ((stage == 3) != (spec.kind == NetKind::NONRIGID))
    throw std::invalid_argument("train_stage: network kind does not match stage");
  if (stage == 1)
    for (const TrainSample& s : dataset)
      if (s.rpca_fixed.size() == 0 || s.rpca_moving.size() == 0)
        throw std::invalid_argument("train_stage: stage-1 sample missing low-rank frames");

  TrainResult result;
  result.weights = init_weights(spec, train_cfg.seed);

  std::vector<Eigen::MatrixXd> m, v;
  for (const Param& p : result.weights.params) {
    m.push_back(Eigen::MatrixXd::Zero(p.value.rows(), p.value.cols()));
    v.push_back(Eigen::MatrixXd::Zero(p.value.rows(), p.value.cols()));
  }

  auto sample_rng = seeded_stream(train_cfg.seed, "train-sample");
  auto aug_rng = seeded_stream(train_cfg.seed, "train-augment");

  for (int step = 0; step < train_cfg.steps; ++step) {
    std::vector<Eigen::MatrixXd> batch_grads;
    for (const Param& p : result.weights.params)
      batch_grads.push_back(Eigen::MatrixXd::Zero(p.value.rows(), p.value.cols()));
    double batch_loss = 0.0;

    for (int b = 0; b < train_cfg.batch_size; ++b) {
      const size_t idx = sample_rng() % dataset.size();
      AugmentRecord rec;
      const TrainSample s = augment(dataset[idx], augment_cfg, aug_rng, &rec);
      result.augment_log.push_back(rec);

      const SampleGrads sg =
          stage == 3 ? field_sample_pass(result.weights, s)
                     : affine_sample_pass(stage, result.weights, s,
                                          train_cfg.rpca_as_input);
      if (!std::isfinite(sg.loss))
        throw std::runtime_error("train_stage: non-finite loss at step " +
                                 std::to_string(step));
      batch_loss += sg.loss;
      for (size_t i = 0; i < batch_grads.size(); ++i)
        batch_grads[i] += sg.grads[i].value;
    }
    batch_loss /= train_cfg.batch_size;
    if (!std::isfinite(batch_loss))
      throw std::runtime_error("train_stage: non-finite loss at step " +
                               std::to_string(step));
    result.loss_log.push_back(batch_loss);

    const double t = step + 1.0;
    const double bc1 = 1.0 - std::pow(train_cfg.beta1, t);
    const double bc2 = 1.0 - std::pow(train_cfg.beta2, t);
    for (size_t i = 0; i < batch_grads.size(); ++i) {
      const Eigen::MatrixXd g = batch_grads[i] / train_cfg.batch_size;
      m[i] = train_cfg.beta1 * m[i] + (1.0 - train_cfg.beta1) * g;
      v[i] = train_cfg.beta2 * v[i] + (1.0 - train_cfg.beta2) * g.cwiseProduct(g);
      const Eigen::MatrixXd mhat = m[i] / bc1;
      const Eigen::MatrixXd vhat = v[i] / bc2;
      result.weights.params[i].value -=
          train_cfg.learning_rate *
          (mhat.array() / (vhat.array().sqrt() + 1e-8)).matrix();
    }
  }
  return result;
}

}  // namespace moco
