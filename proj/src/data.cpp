#include "drda/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <random>

#include "drda/error.hpp"

namespace drda {

namespace {

std::vector<double> resolve_priors(const std::vector<double>& priors, std::size_t k) {
  if (priors.empty()) return std::vector<double>(k, 1.0 / static_cast<double>(k));
  if (priors.size() != k) throw contract_error("class_priors: expected " + std::to_string(k));
  double sum = 0.0;
  for (double p : priors) {
    if (p < 0.0) throw contract_error("class_priors: negative entry");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw contract_error("class_priors: must sum to 1");
  return priors;
}

// Largest-remainder allocation of n samples over the priors.
std::vector<std::size_t> allocate_counts(std::size_t n, const std::vector<double>& priors) {
  const std::size_t k = priors.size();
  std::vector<std::size_t> counts(k);
  std::vector<std::pair<double, std::size_t>> frac(k);
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < k; ++c) {
    const double exact = priors[c] * static_cast<double>(n);
    counts[c] = static_cast<std::size_t>(exact);
    assigned += counts[c];
    frac[c] = {exact - static_cast<double>(counts[c]), c};
  }
  std::sort(frac.begin(), frac.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (std::size_t i = 0; assigned < n; ++i, ++assigned) counts[frac[i % k].second]++;
  return counts;
}

Tensor prior_weighted_mean(const Tensor& centers, const std::vector<double>& priors) {
  Tensor mean({centers.cols()});
  for (std::size_t c = 0; c < centers.rows(); ++c) {
    for (std::size_t j = 0; j < centers.cols(); ++j) {
      mean[j] += priors[c] * centers.at(c, j);
    }
  }
  return mean;
}

std::uint32_t read_be32(std::istream& in, std::size_t offset, const char* what) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (in.gcount() != 4) {
    throw parse_error(std::string("idx: truncated ") + what, offset);
  }
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
         (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

void write_be32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<char*>(b), 4);
}

}  // namespace

Tensor apply_shift(const Tensor& points, const Tensor& pivot, const ShiftSpec& shift) {
  if (points.rank() != 2) throw contract_error("apply_shift: points must be a matrix");
  const std::size_t m = points.cols();
  if (pivot.numel() != m) throw contract_error("apply_shift: pivot dimension mismatch");
  if (!shift.translation.empty() && shift.translation.size() != m) {
    throw contract_error("apply_shift: translation dimension mismatch");
  }
  const double c = std::cos(shift.rotation_angle);
  const double s = std::sin(shift.rotation_angle);
  Tensor out = points;
  for (std::size_t i = 0; i < points.rows(); ++i) {
    if (m >= 2 && shift.rotation_angle != 0.0) {
      const double x = points.at(i, 0) - pivot[0];
      const double y = points.at(i, 1) - pivot[1];
      out.at(i, 0) = c * x - s * y + pivot[0];
      out.at(i, 1) = s * x + c * y + pivot[1];
    }
    if (!shift.translation.empty()) {
      for (std::size_t j = 0; j < m; ++j) out.at(i, j) += shift.translation[j];
    }
  }
  return out;
}

std::pair<DomainDataset, DomainDataset> gen_gaussian_blobs(std::size_t k, std::size_t n,
                                                           std::size_t dim, double spread,
                                                           const ShiftSpec& shift,
                                                           std::uint64_t seed) {
  if (k < 2) throw contract_error("gen_gaussian_blobs: k must be >= 2");
  if (n < k) throw contract_error("gen_gaussian_blobs: n must be >= k");
  if (dim < 2) throw contract_error("gen_gaussian_blobs: dim must be >= 2");
  if (spread <= 0.0) throw contract_error("gen_gaussian_blobs: spread must be > 0");
  const std::vector<double> source_priors(k, 1.0 / static_cast<double>(k));
  const std::vector<double> target_priors = resolve_priors(shift.class_priors, k);

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> box(-3.0, 3.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  // Separated random centers; rejection keeps clusters distinguishable.
  const double min_sep = 4.0 * spread;
  Tensor centers({k, dim});
  for (std::size_t c = 0; c < k; ++c) {
    for (int attempt = 0; attempt < 256; ++attempt) {
      for (std::size_t j = 0; j < dim; ++j) centers.at(c, j) = box(rng);
      bool ok = true;
      for (std::size_t o = 0; o < c && ok; ++o) {
        double sq = 0.0;
        for (std::size_t j = 0; j < dim; ++j) {
          const double diff = centers.at(c, j) - centers.at(o, j);
          sq += diff * diff;
        }
        ok = sq >= min_sep * min_sep;
      }
      if (ok) break;
    }
  }

  const Tensor pivot = prior_weighted_mean(centers, source_priors);
  const Tensor target_centers = apply_shift(centers, pivot, shift);

  auto sample = [&](const Tensor& cs, const std::vector<double>& priors, double extra_noise,
                    DomainTag tag) {
    const std::vector<std::size_t> counts = allocate_counts(n, priors);
    DomainDataset ds;
    ds.features = Tensor({n, dim});
    ds.labels.reserve(n);
    ds.num_classes = k;
    ds.domain_tag = tag;
    ds.seed = seed;
    std::size_t row = 0;
    for (std::size_t c = 0; c < k; ++c) {
      for (std::size_t i = 0; i < counts[c]; ++i, ++row) {
        for (std::size_t j = 0; j < dim; ++j) {
          double v = cs.at(c, j) + spread * gauss(rng);
          if (extra_noise > 0.0) v += extra_noise * gauss(rng);
          ds.features.at(row, j) = v;
        }
        ds.labels.push_back(static_cast<int>(c));
      }
    }
    return ds;
  };

  DomainDataset source = sample(centers, source_priors, 0.0, DomainTag::kSource);
  DomainDataset target =
      sample(target_centers, target_priors, shift.noise_scale, DomainTag::kTarget);
  return {std::move(source), std::move(target)};
}

std::pair<DomainDataset, DomainDataset> gen_two_moons_pair(std::size_t n, double noise_scale,
                                                           const ShiftSpec& shift,
                                                           std::uint64_t seed) {
  if (n < 2) throw contract_error("gen_two_moons_pair: n must be >= 2");
  if (noise_scale < 0.0) throw contract_error("gen_two_moons_pair: negative noise");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  auto make = [&](DomainTag tag) {
    const std::size_t n0 = (n + 1) / 2;
    const std::size_t n1 = n / 2;
    DomainDataset ds;
    ds.features = Tensor({n, 2});
    ds.labels.reserve(n);
    ds.num_classes = 2;
    ds.domain_tag = tag;
    ds.seed = seed;
    const double pi = std::acos(-1.0);
    std::size_t row = 0;
    for (std::size_t i = 0; i < n0; ++i, ++row) {
      const double t = n0 > 1 ? pi * static_cast<double>(i) / static_cast<double>(n0 - 1) : 0.0;
      ds.features.at(row, 0) = std::cos(t);
      ds.features.at(row, 1) = std::sin(t);
      ds.labels.push_back(0);
    }
    for (std::size_t i = 0; i < n1; ++i, ++row) {
      const double t = n1 > 1 ? pi * static_cast<double>(i) / static_cast<double>(n1 - 1) : 0.0;
      ds.features.at(row, 0) = 1.0 - std::cos(t);
      ds.features.at(row, 1) = 0.5 - std::sin(t);
      ds.labels.push_back(1);
    }
    if (noise_scale > 0.0) {
      for (std::size_t i = 0; i < ds.features.numel(); ++i) {
        ds.features[i] += noise_scale * gauss(rng);
      }
    }
    return ds;
  };

  DomainDataset source = make(DomainTag::kSource);
  DomainDataset target = make(DomainTag::kTarget);
  const Tensor pivot = global_anchor(source.features);
  target.features = apply_shift(target.features, pivot, shift);
  return {std::move(source), std::move(target)};
}

DomainDataset load_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw parse_error("idx: cannot open " + images_path, 0);
  const std::uint32_t magic = read_be32(img, 0, "image magic");
  if (magic != 0x00000803u) {
    throw parse_error("idx: bad image magic in " + images_path, 0);
  }
  const std::uint32_t count = read_be32(img, 4, "image count");
  const std::uint32_t rows = read_be32(img, 8, "image rows");
  const std::uint32_t cols = read_be32(img, 12, "image cols");
  if (count == 0 || rows == 0 || cols == 0) {
    throw parse_error("idx: empty image file " + images_path, 4);
  }
  const std::size_t pixels = std::size_t(count) * rows * cols;
  std::vector<unsigned char> raw(pixels);
  img.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(pixels));
  if (static_cast<std::size_t>(img.gcount()) != pixels) {
    throw parse_error("idx: truncated image data in " + images_path,
                      16 + static_cast<std::size_t>(img.gcount()));
  }

  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) throw parse_error("idx: cannot open " + labels_path, 0);
  const std::uint32_t lmagic = read_be32(lab, 0, "label magic");
  if (lmagic != 0x00000801u) {
    throw parse_error("idx: bad label magic in " + labels_path, 0);
  }
  const std::uint32_t lcount = read_be32(lab, 4, "label count");
  if (lcount != count) {
    throw parse_error("idx: image/label count mismatch (" + std::to_string(count) + " vs " +
                          std::to_string(lcount) + ")",
                      4);
  }
  std::vector<unsigned char> lraw(lcount);
  lab.read(reinterpret_cast<char*>(lraw.data()), static_cast<std::streamsize>(lcount));
  if (static_cast<std::size_t>(lab.gcount()) != lcount) {
    throw parse_error("idx: truncated label data in " + labels_path,
                      8 + static_cast<std::size_t>(lab.gcount()));
  }

  DomainDataset ds;
  ds.features = Tensor({count, std::size_t(rows) * cols});
  for (std::size_t i = 0; i < pixels; ++i) ds.features[i] = raw[i] / 255.0;
  ds.labels.reserve(lcount);
  int max_label = 0;
  for (unsigned char l : lraw) {
    ds.labels.push_back(l);
    max_label = std::max(max_label, static_cast<int>(l));
  }
  ds.num_classes = static_cast<std::size_t>(max_label) + 1;
  ds.image_rows = rows;
  ds.image_cols = cols;
  return ds;
}

void write_idx(const DomainDataset& dataset, const std::string& images_path,
               const std::string& labels_path) {
  if (!dataset.labeled()) throw contract_error("write_idx: dataset must be labeled");
  if (dataset.image_rows == 0 || dataset.image_cols == 0 ||
      dataset.image_rows * dataset.image_cols != dataset.dim()) {
    throw contract_error("write_idx: dataset has no image dimensions");
  }
  std::ofstream img(images_path, std::ios::binary);
  if (!img) throw contract_error("write_idx: cannot open " + images_path);
  write_be32(img, 0x00000803u);
  write_be32(img, static_cast<std::uint32_t>(dataset.size()));
  write_be32(img, static_cast<std::uint32_t>(dataset.image_rows));
  write_be32(img, static_cast<std::uint32_t>(dataset.image_cols));
  for (std::size_t i = 0; i < dataset.features.numel(); ++i) {
    const double v = dataset.features[i];
    const int b = static_cast<int>(std::lround(std::min(1.0, std::max(0.0, v)) * 255.0));
    const char byte = static_cast<char>(b);
    img.write(&byte, 1);
  }
  std::ofstream lab(labels_path, std::ios::binary);
  if (!lab) throw contract_error("write_idx: cannot open " + labels_path);
  write_be32(lab, 0x00000801u);
  write_be32(lab, static_cast<std::uint32_t>(dataset.size()));
  for (int l : dataset.labels) {
    const char byte = static_cast<char>(l);
    lab.write(&byte, 1);
  }
}

void write_dataset_csv(std::ostream& out, const DomainDataset& dataset) {
  out << "label";
  for (std::size_t j = 0; j < dataset.dim(); ++j) out << ",x_" << j;
  out << "\n";
  char buf[32];
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    out << (dataset.labeled() ? dataset.labels[i] : -1);
    for (std::size_t j = 0; j < dataset.dim(); ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", dataset.features.at(i, j));
      out << "," << buf;
    }
    out << "\n";
  }
}

}  // namespace drda
