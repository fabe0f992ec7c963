#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "drda/radial.hpp"
#include "drda/tensor.hpp"

namespace drda {

struct DomainDataset {
  Tensor features;          // n x m
  std::vector<int> labels;  // empty when unlabeled
  std::size_t num_classes = 0;
  DomainTag domain_tag = DomainTag::kSource;
  std::uint64_t seed = 0;
  std::size_t image_rows = 0;  // nonzero for image data loaded from IDX
  std::size_t image_cols = 0;

  std::size_t size() const { return features.rank() == 2 ? features.rows() : 0; }
  std::size_t dim() const { return features.rank() == 2 ? features.cols() : 0; }
  bool labeled() const { return !labels.empty(); }
};

// Controlled source->target shift: rotation in the (x0, x1) plane about the
// source centroid, then translation; optional target class priors and extra
// isotropic noise.
struct ShiftSpec {
  double rotation_angle = 0.0;
  std::vector<double> translation;   // empty = zero
  std::vector<double> class_priors;  // empty = uniform
  double noise_scale = 0.0;
};

// Applies rotation-about-pivot then translation to each row.
Tensor apply_shift(const Tensor& points, const Tensor& pivot, const ShiftSpec& shift);

// k Gaussian clusters at separated random centers; the target resamples the
// same clusters after the shift. Deterministic per seed.
std::pair<DomainDataset, DomainDataset> gen_gaussian_blobs(std::size_t k, std::size_t n,
                                                           std::size_t dim, double spread,
                                                           const ShiftSpec& shift,
                                                           std::uint64_t seed);

// Interleaved half-circles, two classes.
std::pair<DomainDataset, DomainDataset> gen_two_moons_pair(std::size_t n, double noise_scale,
                                                           const ShiftSpec& shift,
                                                           std::uint64_t seed);

// IDX (big-endian magic 0x00000803 images / 0x00000801 labels); pixels are
// scaled to [0,1] and images flattened.
DomainDataset load_idx(const std::string& images_path, const std::string& labels_path);

// Inverse of load_idx for byte-quantized features in [0,1]; requires image
// dimensions and labels.
void write_idx(const DomainDataset& dataset, const std::string& images_path,
               const std::string& labels_path);

// CSV with header label,x_0..x_{m-1} (label -1 when unlabeled).
void write_dataset_csv(std::ostream& out, const DomainDataset& dataset);

}  // namespace drda
