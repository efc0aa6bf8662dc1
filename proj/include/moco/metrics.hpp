#ifndef MOCO_METRICS_HPP
#define MOCO_METRICS_HPP

#include "moco/warp.hpp"

namespace moco {

// Loss weighting used by the registration stages.
struct LossWeights {
  double stage1_ncc_rpca = 0.5;
  double stage1_nmi_cross_a = 0.25;
  double stage1_nmi_cross_b = 0.25;
  double stage3_lncc = 1.0;
  double stage3_bending = 10.0;
  int lncc_kernel = 19;
};

// Pearson correlation of flattened intensities, in [-1, 1].
// Throws when either image has zero variance.
double ncc(const Image& a, const Image& b);
Image ncc_grad_b(const Image& a, const Image& b);

// Mean over pixels of the squared windowed correlation
// cov^2 / (var_a * var_b + eps); windows clipped at borders.
double lncc(const Image& a, const Image& b, int kernel);
Image lncc_grad_b(const Image& a, const Image& b, int kernel);

// Studholme normalized mutual information (H(A)+H(B))/H(A,B) over a hard
// 32x32 joint histogram; inputs in [0,1]; value >= 1; nmi(a,a) == 2.
double nmi(const Image& a, const Image& b, int bins = 32);

// Differentiable variant with Parzen soft binning (Gaussian kernel,
// sigma = 1 bin width). Used where gradients must flow through the sampler.
double nmi_soft(const Image& a, const Image& b, int bins = 32);
Image nmi_soft_grad_b(const Image& a, const Image& b, int bins = 32);

// Mean of (u_xx^2 + 2 u_xy^2 + u_yy^2) over pixels and the two field
// components. Central differences on the interior; border second derivatives
// vanish by linear extrapolation, so affine fields are an exact null space.
double bending_energy(const DenseField& field);
DenseField bending_energy_grad(const DenseField& field);

enum class MetricId { NCC, LNCC, NMI, BENDING };

// Gradient of the metric w.r.t. its second argument (image metrics) on a
// common image-shaped carrier. BENDING is handled by bending_energy_grad.
Image loss_gradients(MetricId metric, const Image& a, const Image& b,
                     int kernel_or_bins = 0);

}  // namespace moco

#endif
