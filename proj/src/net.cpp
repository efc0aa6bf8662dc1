#include "moco/net.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <stdexcept>

#include <json.hpp>

#include "moco/rng.hpp"

namespace moco {

namespace {

using Json = nlohmann::json;

int out_side(int in, int k, int stride) {
  const int pad = k / 2;
  return (in + 2 * pad - k) / stride + 1;
}

// im2col patch matrix: (in_c * k * k) x (out_rows * out_cols), zero padding.
Eigen::MatrixXd im2col(const Tensor& x, int k, int stride) {
  const int pad = k / 2;
  const int orows = out_side(x.rows, k, stride);
  const int ocols = out_side(x.cols, k, stride);
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(x.channels * k * k, orows * ocols);
  for (int oy = 0; oy < orows; ++oy) {
    for (int ox = 0; ox < ocols; ++ox) {
      const int col = oy * ocols + ox;
      for (int dy = 0; dy < k; ++dy) {
        const int iy = oy * stride + dy - pad;
        if (iy < 0 || iy >= x.rows) continue;
        for (int dx = 0; dx < k; ++dx) {
          const int ix = ox * stride + dx - pad;
          if (ix < 0 || ix >= x.cols) continue;
          const int pix = iy * x.cols + ix;
          for (int ci = 0; ci < x.channels; ++ci)
            p(ci * k * k + dy * k + dx, col) = x.data(ci, pix);
        }
      }
    }
  }
  return p;
}

void col2im_add(Tensor& dx, const Eigen::MatrixXd& dp, int k, int stride) {
  const int pad = k / 2;
  const int orows = out_side(dx.rows, k, stride);
  const int ocols = out_side(dx.cols, k, stride);
  for (int oy = 0; oy < orows; ++oy) {
    for (int ox = 0; ox < ocols; ++ox) {
      const int col = oy * ocols + ox;
      for (int dy = 0; dy < k; ++dy) {
        const int iy = oy * stride + dy - pad;
        if (iy < 0 || iy >= dx.rows) continue;
        for (int dx_ = 0; dx_ < k; ++dx_) {
          const int ix = ox * stride + dx_ - pad;
          if (ix < 0 || ix >= dx.cols) continue;
          const int pix = iy * dx.cols + ix;
          for (int ci = 0; ci < dx.channels; ++ci)
            dx.data(ci, pix) += dp(ci * k * k + dy * k + dx_, col);
        }
      }
    }
  }
}

Tensor conv(const Tensor& x, const Eigen::MatrixXd& w, const Eigen::MatrixXd& b,
            int k, int stride) {
  Tensor y;
  y.channels = static_cast<int>(w.rows());
  y.rows = out_side(x.rows, k, stride);
  y.cols = out_side(x.cols, k, stride);
  y.data = w * im2col(x, k, stride);
  y.data.colwise() += b.col(0);
  return y;
}

// Returns dx; accumulates dw/db into the gradient store.
Tensor conv_backward(const Tensor& x, const Eigen::MatrixXd& w, int k, int stride,
                     const Tensor& dy, Eigen::MatrixXd& dw, Eigen::MatrixXd& db) {
  const Eigen::MatrixXd p = im2col(x, k, stride);
  dw += dy.data * p.transpose();
  db.col(0) += dy.data.rowwise().sum();
  Tensor dx = Tensor::zero(x.channels, x.rows, x.cols);
  const Eigen::MatrixXd dp = w.transpose() * dy.data;
  col2im_add(dx, dp, k, stride);
  return dx;
}

Tensor relu(const Tensor& x) {
  Tensor y = x;
  y.data = y.data.cwiseMax(0.0);
  return y;
}

Tensor relu_backward(const Tensor& pre, const Tensor& dy) {
  Tensor dx = dy;
  dx.data = (pre.data.array() > 0.0).cast<double>() * dy.data.array();
  return dx;
}

Tensor upsample2(const Tensor& x, int target_rows, int target_cols) {
  Tensor y = Tensor::zero(x.channels, target_rows, target_cols);
  for (int r = 0; r < target_rows; ++r)
    for (int c = 0; c < target_cols; ++c)
      y.data.col(r * target_cols + c) =
          x.data.col(std::min(r / 2, x.rows - 1) * x.cols + std::min(c / 2, x.cols - 1));
  return y;
}

Tensor upsample2_backward(const Tensor& x, const Tensor& dy) {
  Tensor dx = Tensor::zero(x.channels, x.rows, x.cols);
  for (int r = 0; r < dy.rows; ++r)
    for (int c = 0; c < dy.cols; ++c)
      dx.data.col(std::min(r / 2, x.rows - 1) * x.cols + std::min(c / 2, x.cols - 1)) +=
          dy.data.col(r * dy.cols + c);
  return dx;
}

struct ParamIndex {
  const NetWeights* w;
  int lookup(const std::string& name) const {
    for (size_t i = 0; i < w->params.size(); ++i)
      if (w->params[i].name == name) return static_cast<int>(i);
    throw std::logic_error("missing parameter " + name);
  }
  const Eigen::MatrixXd& operator()(const std::string& name) const {
    return w->params[lookup(name)].value;
  }
};

Tensor stack_pair(const ConvNetSpec& spec, const Image& fixed, const Image& moving) {
  if (fixed.rows() != spec.input_side || fixed.cols() != spec.input_side ||
      moving.rows() != spec.input_side || moving.cols() != spec.input_side)
    throw std::invalid_argument("net_forward: input side mismatch with spec");
  Tensor x = Tensor::zero(2, spec.input_side, spec.input_side);
  for (int r = 0; r < spec.input_side; ++r)
    for (int c = 0; c < spec.input_side; ++c) {
      x.data(0, r * spec.input_side + c) = fixed(r, c);
      x.data(1, r * spec.input_side + c) = moving(r, c);
    }
  return x;
}

// Residual downsampling block. Cache appends [input, pre1, sum].
Tensor block_forward(const ParamIndex& P, const std::string& prefix, const Tensor& in,
                     std::vector<Tensor>* cache) {
  const Tensor pre1 = conv(in, P(prefix + ".conv1.w"), P(prefix + ".conv1.b"), 3, 2);
  const Tensor mid = conv(relu(pre1), P(prefix + ".conv2.w"), P(prefix + ".conv2.b"), 3, 1);
  const Tensor proj = conv(in, P(prefix + ".proj.w"), P(prefix + ".proj.b"), 1, 2);
  Tensor sum = mid;
  sum.data += proj.data;
  if (cache) {
    cache->push_back(in);
    cache->push_back(pre1);
    cache->push_back(sum);
  }
  return relu(sum);
}

// dout is the gradient at the block's (post-relu) output; returns the gradient
// at the block input. `at` indexes the cache triple for this block.
Tensor block_backward(const ParamIndex& P, const std::string& prefix,
                      const std::vector<Tensor>& cache, int at, const Tensor& dout,
                      std::vector<Param>& grads) {
  const Tensor& in = cache[at];
  const Tensor& pre1 = cache[at + 1];
  const Tensor& sum = cache[at + 2];
  const Tensor dsum = relu_backward(sum, dout);

  auto g = [&](const std::string& name) -> Eigen::MatrixXd& {
    for (Param& p : grads)
      if (p.name == name) return p.value;
    throw std::logic_error("missing gradient slot " + name);
  };

  const Tensor relu1 = relu(pre1);
  const Tensor da_r = conv_backward(relu1, P(prefix + ".conv2.w"), 3, 1, dsum,
                                    g(prefix + ".conv2.w"), g(prefix + ".conv2.b"));
  const Tensor dpre1 = relu_backward(pre1, da_r);
  Tensor din = conv_backward(in, P(prefix + ".conv1.w"), 3, 2, dpre1,
                             g(prefix + ".conv1.w"), g(prefix + ".conv1.b"));
  const Tensor din2 = conv_backward(in, P(prefix + ".proj.w"), 1, 2, dsum,
                                    g(prefix + ".proj.w"), g(prefix + ".proj.b"));
  din.data += din2.data;
  return din;
}

std::vector<Param> zero_grads(const NetWeights& w) {
  std::vector<Param> g;
  g.reserve(w.params.size());
  for (const Param& p : w.params)
    g.push_back({p.name, Eigen::MatrixXd::Zero(p.value.rows(), p.value.cols())});
  return g;
}

}  // namespace

void ConvNetSpec::validate() const {
  if (n_blocks < 1) throw std::invalid_argument("net spec: n_blocks must be >= 1");
  if (initial_channels < 1) throw std::invalid_argument("net spec: channels must be >= 1");
  if (input_side < 8) throw std::invalid_argument("net spec: input side too small");
  if (kind == NetKind::NONRIGID && input_side % (1 << n_blocks) != 0)
    throw std::invalid_argument("net spec: side must divide by 2^n_blocks");
}

ConvNetSpec affine_global_spec(int channels) {
  return {NetKind::AFFINE_GLOBAL, 7, channels, 128};
}
ConvNetSpec affine_local_spec(int channels) {
  return {NetKind::AFFINE_LOCAL, 5, channels, 128};
}
ConvNetSpec nonrigid_spec(int channels) {
  return {NetKind::NONRIGID, 4, channels, 96};
}

Tensor Tensor::zero(int channels, int rows, int cols) {
  Tensor t;
  t.channels = channels;
  t.rows = rows;
  t.cols = cols;
  t.data = Eigen::MatrixXd::Zero(channels, rows * cols);
  return t;
}

NetWeights init_weights(const ConvNetSpec& spec, std::uint64_t seed) {
  spec.validate();
  NetWeights w;
  w.spec = spec;
  auto rng = seeded_stream(seed, "net-init");
  std::normal_distribution<double> gauss(0.0, 1.0);

  auto he = [&](int out_c, int in_c, int k) {
    Eigen::MatrixXd m(out_c, in_c * k * k);
    const double sd = std::sqrt(2.0 / (in_c * k * k));
    for (int i = 0; i < m.size(); ++i) m(i) = sd * gauss(rng);
    return m;
  };
  auto add_conv = [&](const std::string& name, int out_c, int in_c, int k,
                      bool zero = false) {
    w.params.push_back({name + ".w", zero ? Eigen::MatrixXd::Zero(out_c, in_c * k * k)
                                          : he(out_c, in_c, k)});
    w.params.push_back({name + ".b", Eigen::MatrixXd::Zero(out_c, 1)});
  };

  const int c0 = spec.initial_channels;
  if (spec.kind == NetKind::NONRIGID) {
    add_conv("stem", c0, 2, 3);
    for (int b = 0; b < spec.n_blocks; ++b) {
      const int in_c = c0 << b, out_c = c0 << (b + 1);
      add_conv("down" + std::to_string(b) + ".conv1", out_c, in_c, 3);
      add_conv("down" + std::to_string(b) + ".conv2", out_c, out_c, 3);
      add_conv("down" + std::to_string(b) + ".proj", out_c, in_c, 1);
    }
    for (int u = 0; u < spec.n_blocks; ++u) {
      const int cur = c0 << (spec.n_blocks - u);
      add_conv("up" + std::to_string(u) + ".convA", cur / 2, cur, 3);
      add_conv("up" + std::to_string(u) + ".convB", cur / 2, cur, 3);
    }
    add_conv("head", 2, c0, 1, /*zero=*/true);
  } else {
    for (int b = 0; b < spec.n_blocks; ++b) {
      const int in_c = b == 0 ? 2 : c0 << (b - 1), out_c = c0 << b;
      add_conv("block" + std::to_string(b) + ".conv1", out_c, in_c, 3);
      add_conv("block" + std::to_string(b) + ".conv2", out_c, out_c, 3);
      add_conv("block" + std::to_string(b) + ".proj", out_c, in_c, 1);
    }
    const int c_last = c0 << (spec.n_blocks - 1);
    w.params.push_back({"head.fc.w", Eigen::MatrixXd::Zero(6, c_last)});
    Eigen::MatrixXd bias = Eigen::MatrixXd::Zero(6, 1);
    bias(0, 0) = 1.0;  // a11
    bias(3, 0) = 1.0;  // a22
    w.params.push_back({"head.fc.b", bias});
  }
  return w;
}

AffineParams net_forward(const NetWeights& weights, const Image& fixed,
                         const Image& moving, NetCache* cache) {
  const ConvNetSpec& spec = weights.spec;
  if (spec.kind == NetKind::NONRIGID)
    throw std::invalid_argument("net_forward: affine kinds only");
  const ParamIndex P{&weights};

  Tensor h = stack_pair(spec, fixed, moving);
  std::vector<Tensor>* acts = cache ? &cache->acts : nullptr;
  if (acts) acts->clear();
  for (int b = 0; b < spec.n_blocks; ++b)
    h = block_forward(P, "block" + std::to_string(b), h, acts);

  const Eigen::VectorXd pooled = h.data.rowwise().mean();
  const Eigen::VectorXd out = P("head.fc.w") * pooled + P("head.fc.b").col(0);
  if (acts) acts->push_back(h);  // pooled source for the head backward
  return AffineParams::from_vector(out);
}

std::vector<Param> backprop(const NetWeights& weights, const NetCache& cache,
                            const Eigen::Matrix<double, 6, 1>& head_grad) {
  const ConvNetSpec& spec = weights.spec;
  if (spec.kind == NetKind::NONRIGID)
    throw std::invalid_argument("backprop: affine kinds only");
  const ParamIndex P{&weights};
  std::vector<Param> grads = zero_grads(weights);

  auto g = [&](const std::string& name) -> Eigen::MatrixXd& {
    for (Param& p : grads)
      if (p.name == name) return p.value;
    throw std::logic_error("missing gradient slot " + name);
  };

  const Tensor& h_last = cache.acts.back();
  const Eigen::VectorXd pooled = h_last.data.rowwise().mean();
  g("head.fc.w") += head_grad * pooled.transpose();
  g("head.fc.b").col(0) += head_grad;

  Tensor dh = h_last;
  const Eigen::VectorXd dpooled = P("head.fc.w").transpose() * head_grad;
  const double inv_n = 1.0 / (h_last.rows * h_last.cols);
  for (int c = 0; c < dh.channels; ++c) dh.data.row(c).setConstant(dpooled(c) * inv_n);

  for (int b = spec.n_blocks - 1; b >= 0; --b)
    dh = block_backward(P, "block" + std::to_string(b), cache.acts, 3 * b, dh, grads);
  return grads;
}

DenseField net_forward_field(const NetWeights& weights, const Image& fixed,
                             const Image& moving, NetCache* cache) {
  const ConvNetSpec& spec = weights.spec;
  if (spec.kind != NetKind::NONRIGID)
    throw std::invalid_argument("net_forward_field: NONRIGID only");
  const ParamIndex P{&weights};
  std::vector<Tensor>* acts = cache ? &cache->acts : nullptr;
  if (acts) acts->clear();

  const Tensor x = stack_pair(spec, fixed, moving);
  const Tensor pre_stem = conv(x, P("stem.w"), P("stem.b"), 3, 1);
  if (acts) {
    acts->push_back(x);
    acts->push_back(pre_stem);
  }
  std::vector<Tensor> enc;  // post-relu encoder outputs e0..en
  enc.push_back(relu(pre_stem));
  Tensor h = enc.back();
  for (int b = 0; b < spec.n_blocks; ++b) {
    h = block_forward(P, "down" + std::to_string(b), h, acts);
    enc.push_back(h);
  }

  for (int u = 0; u < spec.n_blocks; ++u) {
    const Tensor& skip = enc[spec.n_blocks - 1 - u];
    const Tensor up = upsample2(h, skip.rows, skip.cols);
    const Tensor preA = conv(up, P("up" + std::to_string(u) + ".convA.w"),
                             P("up" + std::to_string(u) + ".convA.b"), 3, 1);
    Tensor cat = Tensor::zero(preA.channels + skip.channels, skip.rows, skip.cols);
    cat.data.topRows(preA.channels) = relu(preA).data;
    cat.data.bottomRows(skip.channels) = skip.data;
    const Tensor preB = conv(cat, P("up" + std::to_string(u) + ".convB.w"),
                             P("up" + std::to_string(u) + ".convB.b"), 3, 1);
    if (acts) {
      acts->push_back(h);
      acts->push_back(preA);
      acts->push_back(preB);
    }
    h = relu(preB);
  }

  const Tensor field = conv(h, P("head.w"), P("head.b"), 1, 1);
  DenseField out = DenseField::zero(spec.input_side, spec.input_side);
  for (int r = 0; r < spec.input_side; ++r)
    for (int c = 0; c < spec.input_side; ++c) {
      out.u_x(r, c) = field.data(0, r * spec.input_side + c);
      out.u_y(r, c) = field.data(1, r * spec.input_side + c);
    }
  return out;
}

std::vector<Param> backprop_field(const NetWeights& weights, const NetCache& cache,
                                  const DenseField& head_grad) {
  const ConvNetSpec& spec = weights.spec;
  if (spec.kind != NetKind::NONRIGID)
    throw std::invalid_argument("backprop_field: NONRIGID only");
  const ParamIndex P{&weights};
  std::vector<Param> grads = zero_grads(weights);
  auto g = [&](const std::string& name) -> Eigen::MatrixXd& {
    for (Param& p : grads)
      if (p.name == name) return p.value;
    throw std::logic_error("missing gradient slot " + name);
  };

  const int n = spec.n_blocks;
  // Cache layout: [x, pre_stem] + n down triples + n up triples.
  const Tensor& x = cache.acts[0];
  const Tensor& pre_stem = cache.acts[1];
  auto down_at = [&](int b) { return 2 + 3 * b; };
  auto up_at = [&](int u) { return 2 + 3 * n + 3 * u; };

  // Rebuild post-relu encoder outputs for skip connections.
  std::vector<Tensor> enc;
  enc.push_back(relu(pre_stem));
  for (int b = 0; b < n; ++b) enc.push_back(relu(cache.acts[down_at(b) + 2]));

  Tensor dfield = Tensor::zero(2, spec.input_side, spec.input_side);
  for (int r = 0; r < spec.input_side; ++r)
    for (int c = 0; c < spec.input_side; ++c) {
      dfield.data(0, r * spec.input_side + c) = head_grad.u_x(r, c);
      dfield.data(1, r * spec.input_side + c) = head_grad.u_y(r, c);
    }

  const Tensor o_last = relu(cache.acts[up_at(n - 1) + 2]);
  Tensor dh = conv_backward(o_last, P("head.w"), 1, 1, dfield, g("head.w"), g("head.b"));

  std::vector<Tensor> d_enc(n + 1);  // gradients at encoder outputs
  for (int u = n - 1; u >= 0; --u) {
    const std::string prefix = "up" + std::to_string(u);
    const Tensor& cur_in = cache.acts[up_at(u)];
    const Tensor& preA = cache.acts[up_at(u) + 1];
    const Tensor& preB = cache.acts[up_at(u) + 2];
    const Tensor& skip = enc[n - 1 - u];

    // dh currently holds the gradient at this stage's post-relu output.
    const Tensor dpreB = relu_backward(preB, dh);
    Tensor cat = Tensor::zero(preA.channels + skip.channels, skip.rows, skip.cols);
    cat.data.topRows(preA.channels) = relu(preA).data;
    cat.data.bottomRows(skip.channels) = skip.data;
    const Tensor dcat = conv_backward(cat, P(prefix + ".convB.w"), 3, 1, dpreB,
                                      g(prefix + ".convB.w"), g(prefix + ".convB.b"));
    Tensor daR = Tensor::zero(preA.channels, skip.rows, skip.cols);
    daR.data = dcat.data.topRows(preA.channels);
    Tensor dskip = Tensor::zero(skip.channels, skip.rows, skip.cols);
    dskip.data = dcat.data.bottomRows(skip.channels);
    if (d_enc[n - 1 - u].channels == 0)
      d_enc[n - 1 - u] = dskip;
    else
      d_enc[n - 1 - u].data += dskip.data;

    const Tensor dpreA = relu_backward(preA, daR);
    const Tensor up = upsample2(cur_in, skip.rows, skip.cols);
    const Tensor dup = conv_backward(up, P(prefix + ".convA.w"), 3, 1, dpreA,
                                     g(prefix + ".convA.w"), g(prefix + ".convA.b"));
    dh = upsample2_backward(cur_in, dup);
  }
  // dh is now the gradient at the bottleneck encoder output.
  if (d_enc[n].channels == 0)
    d_enc[n] = dh;
  else
    d_enc[n].data += dh.data;

  for (int b = n - 1; b >= 0; --b) {
    const Tensor din = block_backward(P, "down" + std::to_string(b), cache.acts,
                                      down_at(b), d_enc[b + 1], grads);
    if (d_enc[b].channels == 0)
      d_enc[b] = din;
    else
      d_enc[b].data += din.data;
  }
  const Tensor dpre_stem = relu_backward(pre_stem, d_enc[0]);
  conv_backward(x, P("stem.w"), 3, 1, dpre_stem, g("stem.w"), g("stem.b"));
  return grads;
}

void save_weights(const NetWeights& weights, const std::filesystem::path& path,
                  const std::string& tag) {
  std::filesystem::path stem = path;
  if (stem.extension() == ".json" || stem.extension() == ".bin")
    stem.replace_extension();
  Json meta;
  meta["schema_version"] = 1;
  meta["kind"] = static_cast<int>(weights.spec.kind);
  meta["n_blocks"] = weights.spec.n_blocks;
  meta["initial_channels"] = weights.spec.initial_channels;
  meta["input_side"] = weights.spec.input_side;
  meta["tag"] = tag;
  Json tensors = Json::array();
  std::ofstream bin(stem.string() + ".bin", std::ios::binary);
  if (!bin) throw std::runtime_error("cannot write " + stem.string() + ".bin");
  for (const Param& p : weights.params) {
    tensors.push_back({{"name", p.name},
                       {"rows", p.value.rows()},
                       {"cols", p.value.cols()}});
    for (int r = 0; r < p.value.rows(); ++r)
      for (int c = 0; c < p.value.cols(); ++c) {
        const float v = static_cast<float>(p.value(r, c));
        bin.write(reinterpret_cast<const char*>(&v), sizeof(v));
      }
  }
  meta["tensors"] = tensors;
  std::ofstream js(stem.string() + ".json");
  if (!js) throw std::runtime_error("cannot write " + stem.string() + ".json");
  js << meta.dump(2) << "\n";
}

NetWeights load_weights(const std::filesystem::path& path) {
  std::filesystem::path stem = path;
  if (stem.extension() == ".json" || stem.extension() == ".bin")
    stem.replace_extension();
  std::ifstream js(stem.string() + ".json");
  if (!js) throw std::runtime_error("cannot read " + stem.string() + ".json");
  Json meta = Json::parse(js);
  if (meta.at("schema_version").get<int>() != 1)
    throw std::runtime_error("unsupported weight schema version");
  NetWeights w;
  w.spec.kind = static_cast<NetKind>(meta.at("kind").get<int>());
  w.spec.n_blocks = meta.at("n_blocks").get<int>();
  w.spec.initial_channels = meta.at("initial_channels").get<int>();
  w.spec.input_side = meta.at("input_side").get<int>();
  w.spec.validate();

  std::ifstream bin(stem.string() + ".bin", std::ios::binary);
  if (!bin) throw std::runtime_error("cannot read " + stem.string() + ".bin");
  for (const Json& t : meta.at("tensors")) {
    Param p;
    p.name = t.at("name").get<std::string>();
    const int rows = t.at("rows").get<int>(), cols = t.at("cols").get<int>();
    p.value.resize(rows, cols);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) {
        float v = 0.0f;
        bin.read(reinterpret_cast<char*>(&v), sizeof(v));
        if (!bin) throw std::runtime_error("weight payload truncated");
        p.value(r, c) = v;
      }
    w.params.push_back(std::move(p));
  }
  return w;
}

}  // namespace moco
