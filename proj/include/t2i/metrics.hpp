#pragma once

// SSIM, Frechet distance / FID, Inception Score and the feature extractors
// that stand in for a large pretrained network.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "t2i/tensor.hpp"

namespace t2i {

inline constexpr std::size_t kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimK1 = 0.01;
inline constexpr double kSsimK2 = 0.03;
inline constexpr double kCovarianceShrinkage = 1e-6;

// Mean local SSIM over valid 11x11 Gaussian windows (sigma 1.5) and over
// channels. Images are [H,W,C] or [1,H,W,C] with values spanning
// `dynamic_range` (2 for [-1,1]); both sides must be at least 11.
double ssim(const Tensor& a, const Tensor& b, double dynamic_range = 2.0);
double mean_ssim(const std::vector<Tensor>& a, const std::vector<Tensor>& b, double dynamic_range = 2.0);

// Square matrices are row-major n*n spans.
// R with R R = S via symmetric eigendecomposition, negative eigenvalues
// clamped to 0. NumericError when S is asymmetric beyond 1e-8 (relative).
std::vector<double> matrix_sqrt_psd(std::span<const double> s, std::size_t n);

// |mu1 - mu2|^2 + Tr(S1 + S2 - 2 (S1 S2)^(1/2)), clamped at 0. NumericError
// when a covariance is not PSD beyond round-off.
double frechet_distance(std::span<const double> mu1, std::span<const double> sigma1, std::span<const double> mu2,
                        std::span<const double> sigma2);

struct GaussianFit {
  std::vector<double> mean;
  std::vector<double> cov;  // (n-1)-normalized plus shrinkage * I
};
GaussianFit fit_gaussian(const std::vector<std::vector<double>>& features, double shrinkage = kCovarianceShrinkage);

// exp(mean_x KL(p(y|x) || p(y))), averaged over `splits` equal parts.
// ContractError when a row is negative or does not sum to 1 within 1e-6.
double inception_score(const std::vector<std::vector<double>>& probabilities, std::size_t splits = 1);

enum class ExtractorKind { pixel_downsample, seeded_random_projection, trained_tiny_classifier };

// Deterministic image -> feature vector. Every image is first average-pooled
// to pool x pool x 3 in [-1,1]. For IS, probabilities() is the softmax of
// the features (pixel, projection) or of the classifier logits.
class FeatureExtractor {
 public:
  static FeatureExtractor pixel_downsample(std::size_t pool = 8);
  static FeatureExtractor seeded_random_projection(std::size_t output_dim = 16, std::uint64_t seed = 0,
                                                   std::size_t pool = 8);
  // Softmax regression on pooled pixels, trained by full-batch gradient
  // descent from zero weights on labels in [0, classes).
  static FeatureExtractor trained_tiny_classifier(const std::vector<Tensor>& images,
                                                  const std::vector<std::size_t>& labels, std::size_t classes,
                                                  std::size_t pool = 8, std::size_t iterations = 300);
  // Labels each image by the quantile bin of its mean intensity within the set.
  static std::vector<std::size_t> intensity_quantile_labels(const std::vector<Tensor>& images, std::size_t classes);

  ExtractorKind kind() const { return kind_; }
  std::size_t output_dim() const { return output_dim_; }
  std::string descriptor() const;

  std::vector<double> features(const Tensor& image) const;
  std::vector<double> probabilities(const Tensor& image) const;

 private:
  std::vector<double> pooled(const Tensor& image) const;

  ExtractorKind kind_ = ExtractorKind::pixel_downsample;
  std::size_t pool_ = 8;
  std::size_t output_dim_ = 0;
  std::uint64_t seed_ = 0;
  std::vector<double> weights_;  // [output_dim, pool*pool*3] row-major
  std::vector<double> bias_;
};

double fid(const std::vector<Tensor>& real, const std::vector<Tensor>& generated, const FeatureExtractor& extractor);
double inception_score(const std::vector<Tensor>& generated, const FeatureExtractor& extractor,
                       std::size_t splits = 1);

struct MetricsRow {
  std::string model;
  std::optional<double> fid;
  std::optional<double> is;
  std::optional<double> ssim;
  std::size_t n_samples = 0;
};

struct MetricsReport {
  std::string extractor;
  std::vector<MetricsRow> rows;
  std::vector<std::string> notes;  // printed under the table

  // Aligned table with header "Model FID IS SSIM"; missing values print "-".
  std::string table() const;
  // key=value lines: extractor, then <model>.fid / .is / .ssim / .n_samples.
  std::string key_values() const;
};

}  // namespace t2i
