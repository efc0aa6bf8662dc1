#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "moco/types.hpp"
#include "moco/warp.hpp"

namespace moco {

enum class NetKind { AFFINE_GLOBAL, AFFINE_LOCAL, NONRIGID };

// Residual regressor topology: stride-2 residual blocks with channel counts
// doubling per block, ending in a pooled fully-connected affine head; the
// NONRIGID variant is an encoder-decoder (n_blocks down, n_blocks up) with a
// 1x1 field head. Heads are zero-initialized so untrained nets are identity.
struct ConvNetSpec {
  NetKind kind = NetKind::AFFINE_GLOBAL;
  int n_blocks = 7;
  int initial_channels = 16;
  int input_side = 128;

  void validate() const;
};

ConvNetSpec affine_global_spec(int channels = 16);  // 7 blocks, side 128
ConvNetSpec affine_local_spec(int channels = 16);   // 5 blocks, side 128
ConvNetSpec nonrigid_spec(int channels = 16);       // 4 down + 4 up, side 96

// Feature map: channels x (rows*cols), pixels row-major.
struct Tensor {
  int channels = 0, rows = 0, cols = 0;
  Eigen::MatrixXd data;

  static Tensor zero(int channels, int rows, int cols);
};

struct Param {
  std::string name;
  Eigen::MatrixXd value;
};

struct NetWeights {
  ConvNetSpec spec;
  std::vector<Param> params;
};

NetWeights init_weights(const ConvNetSpec& spec, std::uint64_t seed);

// Intermediate activations recorded by a forward pass, consumed by backprop.
struct NetCache {
  std::vector<Tensor> acts;
};

// Affine kinds only: 6 parameters from the stacked (fixed, moving) pair.
AffineParams net_forward(const NetWeights& weights, const Image& fixed,
                         const Image& moving, NetCache* cache = nullptr);

// NONRIGID only: dense displacement field in pixels.
DenseField net_forward_field(const NetWeights& weights, const Image& fixed,
                             const Image& moving, NetCache* cache = nullptr);

// Reverse-mode gradients of a scalar loss with respect to every parameter,
// given the loss gradient at the head output.
std::vector<Param> backprop(const NetWeights& weights, const NetCache& cache,
                            const Eigen::Matrix<double, 6, 1>& head_grad);
std::vector<Param> backprop_field(const NetWeights& weights, const NetCache& cache,
                                  const DenseField& head_grad);

// Little-endian float32 tensor blob + JSON manifest (shapes, spec, seed tag).
void save_weights(const NetWeights& weights, const std::filesystem::path& path,
                  const std::string& tag = "");
NetWeights load_weights(const std::filesystem::path& path);

}  // namespace moco
