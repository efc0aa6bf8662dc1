#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>

#include "moco/net.hpp"
#include "moco/rng.hpp"

using namespace moco;

namespace {

Image procedural_image(int side, double phase) {
  Image img(side, side);
  for (int r = 0; r < side; ++r)
    for (int c = 0; c < side; ++c)
      img(r, c) = 0.5 + 0.4 * std::sin(0.37 * r + phase) * std::cos(0.23 * c) +
                  0.1 * std::sin(0.11 * (r + 2 * c) + phase);
  return img;
}

ConvNetSpec tiny_affine() { return {NetKind::AFFINE_GLOBAL, 2, 4, 16}; }
ConvNetSpec tiny_nonrigid() { return {NetKind::NONRIGID, 2, 4, 16}; }

// Heads are zero at init, which blocks gradient flow into the trunk; give a
// named parameter small random values so the whole net participates.
void randomize_param(NetWeights& w, const std::string& name, std::uint64_t seed) {
  auto rng = seeded_stream(seed, "test-head");
  std::normal_distribution<double> gauss(0.0, 0.1);
  for (Param& p : w.params)
    if (p.name == name)
      for (int i = 0; i < p.value.size(); ++i) p.value(i) = gauss(rng);
}

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1e-6, std::abs(a), std::abs(b)});
}

}  // namespace

TEST_CASE("spec validation rejects bad configurations") {
  ConvNetSpec s = tiny_affine();
  s.n_blocks = 0;
  CHECK_THROWS(s.validate());
  s = tiny_nonrigid();
  s.input_side = 18;  // not divisible by 2^n_blocks
  CHECK_THROWS(s.validate());
  s = tiny_affine();
  s.initial_channels = 0;
  CHECK_THROWS(s.validate());
}

TEST_CASE("forward rejects inputs that do not match the spec side") {
  const NetWeights w = init_weights(tiny_affine(), 0);
  CHECK_THROWS(net_forward(w, Image::Zero(16, 16), Image::Zero(16, 17)));
  CHECK_THROWS(net_forward(w, Image::Zero(8, 8), Image::Zero(8, 8)));
  const NetWeights nw = init_weights(tiny_nonrigid(), 0);
  CHECK_THROWS(net_forward_field(nw, Image::Zero(32, 32), Image::Zero(32, 32)));
  CHECK_THROWS(net_forward(nw, Image::Zero(16, 16), Image::Zero(16, 16)));
  CHECK_THROWS(net_forward_field(w, Image::Zero(16, 16), Image::Zero(16, 16)));
}

TEST_CASE("an untrained affine net outputs the identity transform exactly") {
  const NetWeights w = init_weights(tiny_affine(), 7);
  const AffineParams p =
      net_forward(w, procedural_image(16, 0.0), procedural_image(16, 1.0));
  CHECK(p.a11 == 1.0);
  CHECK(p.a12 == 0.0);
  CHECK(p.a21 == 0.0);
  CHECK(p.a22 == 1.0);
  CHECK(p.tx == 0.0);
  CHECK(p.ty == 0.0);
}

TEST_CASE("an untrained field net outputs an exactly zero field") {
  const NetWeights w = init_weights(tiny_nonrigid(), 7);
  const DenseField f =
      net_forward_field(w, procedural_image(16, 0.0), procedural_image(16, 1.0));
  CHECK(f.u_x.abs().maxCoeff() == 0.0);
  CHECK(f.u_y.abs().maxCoeff() == 0.0);
}

TEST_CASE("initialization is deterministic per seed and distinct across seeds") {
  const NetWeights a = init_weights(tiny_affine(), 3);
  const NetWeights b = init_weights(tiny_affine(), 3);
  const NetWeights c = init_weights(tiny_affine(), 4);
  REQUIRE(a.params.size() == b.params.size());
  double diff_ab = 0.0, diff_ac = 0.0;
  for (size_t i = 0; i < a.params.size(); ++i) {
    diff_ab += (a.params[i].value - b.params[i].value).cwiseAbs().sum();
    diff_ac += (a.params[i].value - c.params[i].value).cwiseAbs().sum();
  }
  CHECK(diff_ab == 0.0);
  CHECK(diff_ac > 0.0);
}

TEST_CASE("affine backprop matches central finite differences") {
  NetWeights w = init_weights(tiny_affine(), 11);
  randomize_param(w, "head.fc.w", 11);
  const Image fixed = procedural_image(16, 0.0);
  const Image moving = procedural_image(16, 1.3);

  Eigen::Matrix<double, 6, 1> g;
  g << 0.7, -1.1, 0.4, 0.9, -0.6, 1.2;
  auto loss = [&](const NetWeights& ww) {
    return g.dot(net_forward(ww, fixed, moving).as_vector());
  };

  NetCache cache;
  net_forward(w, fixed, moving, &cache);
  const std::vector<Param> grads = backprop(w, cache, g);

  auto rng = seeded_stream(5, "fd-pick");
  const double eps = 1e-6;
  for (int trial = 0; trial < 50; ++trial) {
    const int pi = static_cast<int>(rng() % w.params.size());
    const int ei = static_cast<int>(rng() % w.params[pi].value.size());
    NetWeights wp = w, wm = w;
    wp.params[pi].value(ei) += eps;
    wm.params[pi].value(ei) -= eps;
    const double fd = (loss(wp) - loss(wm)) / (2.0 * eps);
    const double an = grads[pi].value(ei);
    if (std::abs(fd) < 1e-9 && std::abs(an) < 1e-9) continue;
    CHECK(rel_err(fd, an) <= 1e-3);
  }
}

TEST_CASE("field backprop matches central finite differences") {
  NetWeights w = init_weights(tiny_nonrigid(), 13);
  randomize_param(w, "head.w", 13);
  const Image fixed = procedural_image(16, 0.2);
  const Image moving = procedural_image(16, 1.7);

  DenseField g = DenseField::zero(16, 16);
  auto grng = seeded_stream(9, "fd-upstream");
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  for (int r = 0; r < 16; ++r)
    for (int c = 0; c < 16; ++c) {
      g.u_x(r, c) = uni(grng);
      g.u_y(r, c) = uni(grng);
    }
  auto loss = [&](const NetWeights& ww) {
    const DenseField f = net_forward_field(ww, fixed, moving);
    return (g.u_x * f.u_x).sum() + (g.u_y * f.u_y).sum();
  };

  NetCache cache;
  net_forward_field(w, fixed, moving, &cache);
  const std::vector<Param> grads = backprop_field(w, cache, g);

  auto rng = seeded_stream(6, "fd-pick");
  const double eps = 1e-6;
  for (int trial = 0; trial < 50; ++trial) {
    const int pi = static_cast<int>(rng() % w.params.size());
    const int ei = static_cast<int>(rng() % w.params[pi].value.size());
    NetWeights wp = w, wm = w;
    wp.params[pi].value(ei) += eps;
    wm.params[pi].value(ei) -= eps;
    const double fd = (loss(wp) - loss(wm)) / (2.0 * eps);
    const double an = grads[pi].value(ei);
    if (std::abs(fd) < 1e-9 && std::abs(an) < 1e-9) continue;
    CHECK(rel_err(fd, an) <= 1e-3);
  }
}

TEST_CASE("a zero upstream gradient yields exactly zero parameter gradients") {
  NetWeights w = init_weights(tiny_affine(), 2);
  randomize_param(w, "head.fc.w", 2);
  NetCache cache;
  net_forward(w, procedural_image(16, 0.0), procedural_image(16, 1.0), &cache);
  const std::vector<Param> grads =
      backprop(w, cache, Eigen::Matrix<double, 6, 1>::Zero());
  for (const Param& p : grads) CHECK(p.value.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("backprop is linear in the upstream gradient") {
  NetWeights w = init_weights(tiny_affine(), 21);
  randomize_param(w, "head.fc.w", 21);
  NetCache cache;
  net_forward(w, procedural_image(16, 0.4), procedural_image(16, 2.0), &cache);

  Eigen::Matrix<double, 6, 1> g1, g2;
  g1 << 1.0, 0.5, -0.25, 2.0, 0.0, -1.0;
  g2 << -0.5, 1.5, 1.0, 0.0, 0.75, 0.25;
  const double a = 0.6, b = -1.7;
  const std::vector<Param> ga = backprop(w, cache, g1);
  const std::vector<Param> gb = backprop(w, cache, g2);
  const std::vector<Param> gc = backprop(w, cache, a * g1 + b * g2);
  for (size_t i = 0; i < gc.size(); ++i) {
    const Eigen::MatrixXd combined = a * ga[i].value + b * gb[i].value;
    CHECK((gc[i].value - combined).cwiseAbs().maxCoeff() <= 1e-10);
  }
}

TEST_CASE("forward output snapshot is stable") {
  NetWeights w = init_weights(tiny_affine(), 0);
  randomize_param(w, "head.fc.w", 0);
  const AffineParams p =
      net_forward(w, procedural_image(16, 0.0), procedural_image(16, 1.0));
  // Values pinned from the first validated run of this configuration.
  CHECK(p.a11 == doctest::Approx(1.0211631524273126).epsilon(1e-9));
  CHECK(p.a12 == doctest::Approx(0.1163204567482622).epsilon(1e-9));
  CHECK(p.a21 == doctest::Approx(-0.13170870450728608).epsilon(1e-9));
  CHECK(p.a22 == doctest::Approx(0.97639303965851265).epsilon(1e-9));
  CHECK(p.tx == doctest::Approx(-0.10225737038148179).epsilon(1e-9));
  CHECK(p.ty == doctest::Approx(-0.13660795412316773).epsilon(1e-9));
}

TEST_CASE("weights survive a save/load round trip") {
  NetWeights w = init_weights(tiny_nonrigid(), 42);
  randomize_param(w, "head.w", 42);
  const std::filesystem::path base =
      std::filesystem::temp_directory_path() / "moco_net_rt";
  save_weights(w, base, "unit-test");
  const NetWeights r1 = load_weights(base);
  REQUIRE(r1.params.size() == w.params.size());
  CHECK(r1.spec.kind == w.spec.kind);
  CHECK(r1.spec.n_blocks == w.spec.n_blocks);
  CHECK(r1.spec.initial_channels == w.spec.initial_channels);
  CHECK(r1.spec.input_side == w.spec.input_side);

  // Storage is float32, so one round trip quantizes; a second one is exact.
  double quant = 0.0;
  for (size_t i = 0; i < w.params.size(); ++i) {
    CHECK(r1.params[i].name == w.params[i].name);
    quant = std::max(quant,
                     (r1.params[i].value - w.params[i].value).cwiseAbs().maxCoeff());
  }
  CHECK(quant <= 1e-6);

  save_weights(r1, base, "unit-test");
  const NetWeights r2 = load_weights(base);
  for (size_t i = 0; i < r1.params.size(); ++i)
    CHECK((r2.params[i].value - r1.params[i].value).cwiseAbs().maxCoeff() == 0.0);

  const Image f = procedural_image(16, 0.0), m = procedural_image(16, 1.0);
  const DenseField orig = net_forward_field(w, f, m);
  const DenseField loaded = net_forward_field(r1, f, m);
  CHECK((orig.u_x - loaded.u_x).abs().maxCoeff() <= 1e-5);
  CHECK((orig.u_y - loaded.u_y).abs().maxCoeff() <= 1e-5);

  std::filesystem::remove(base.string() + ".json");
  std::filesystem::remove(base.string() + ".bin");
  CHECK_THROWS(load_weights(base));
}
