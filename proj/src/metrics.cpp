#include "t2i/metrics.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <sstream>

#include "t2i/errors.hpp"

namespace t2i {

namespace {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Shape image_shape(const Tensor& t, const char* op) {
  Shape s = t.shape();
  if (s.size() == 4 && s[0] == 1) s.erase(s.begin());
  if (s.size() != 3) throw DimensionError(std::string(op) + ": expected [H,W,C] image, got " + shape_str(t.shape()));
  return s;
}

std::vector<double> gaussian_window() {
  std::vector<double> w(kSsimWindow);
  const double c = (static_cast<double>(kSsimWindow) - 1) / 2;
  for (std::size_t i = 0; i < kSsimWindow; ++i) {
    const double d = static_cast<double>(i) - c;
    w[i] = std::exp(-d * d / (2 * kSsimSigma * kSsimSigma));
  }
  const double s = std::accumulate(w.begin(), w.end(), 0.0);
  for (auto& v : w) v /= s;
  return w;
}

// Valid separable filtering of one h x w plane.
std::vector<double> filter_valid(const std::vector<double>& x, std::size_t h, std::size_t w,
                                 const std::vector<double>& k) {
  const std::size_t n = k.size(), ow = w - n + 1, oh = h - n + 1;
  std::vector<double> tmp(h * ow), out(oh * ow);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x0 = 0; x0 < ow; ++x0) {
      double s = 0;
      for (std::size_t i = 0; i < n; ++i) s += k[i] * x[y * w + x0 + i];
      tmp[y * ow + x0] = s;
    }
  for (std::size_t y0 = 0; y0 < oh; ++y0)
    for (std::size_t x0 = 0; x0 < ow; ++x0) {
      double s = 0;
      for (std::size_t i = 0; i < n; ++i) s += k[i] * tmp[(y0 + i) * ow + x0];
      out[y0 * ow + x0] = s;
    }
  return out;
}

Mat to_mat(std::span<const double> s, std::size_t n, const char* what) {
  if (s.size() != n * n) {
    throw DimensionError(std::string(what) + ": expected " + std::to_string(n * n) + " entries, got " +
                         std::to_string(s.size()));
  }
  return Eigen::Map<const Mat>(s.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
}

void require_symmetric(const Mat& m, const char* what) {
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  const double asym = (m - m.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-8 * scale) {
    throw NumericError(std::string(what) + ": matrix is not symmetric (max |S - S^T| = " + std::to_string(asym) + ")");
  }
}

// Eigendecomposition of the symmetrized matrix; rejects eigenvalues below
// -1e-10 * max(1, |lambda|_max).
Eigen::SelfAdjointEigenSolver<Mat> psd_eigen(const Mat& m, const char* what) {
  Eigen::SelfAdjointEigenSolver<Mat> es(Mat((m + m.transpose()) / 2));
  if (es.info() != Eigen::Success) throw NumericError(std::string(what) + ": eigendecomposition failed");
  const auto& ev = es.eigenvalues();
  const double scale = std::max(1.0, ev.cwiseAbs().maxCoeff());
  if (ev.size() > 0 && ev.minCoeff() < -1e-10 * scale) {
    throw NumericError(std::string(what) + ": matrix is not positive semidefinite (eigenvalue " +
                       std::to_string(ev.minCoeff()) + ")");
  }
  return es;
}

Mat sqrt_from(const Eigen::SelfAdjointEigenSolver<Mat>& es) {
  const Eigen::VectorXd r = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * r.asDiagonal() * es.eigenvectors().transpose();
}

std::vector<double> softmax_of(const std::vector<double>& z) {
  const double mx = *std::max_element(z.begin(), z.end());
  std::vector<double> p(z.size());
  double s = 0;
  for (std::size_t i = 0; i < z.size(); ++i) s += p[i] = std::exp(z[i] - mx);
  for (auto& v : p) v /= s;
  return p;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

}  // namespace

double ssim(const Tensor& a, const Tensor& b, double dynamic_range) {
  const Shape sa = image_shape(a, "ssim"), sb = image_shape(b, "ssim");
  if (sa != sb) throw DimensionError("ssim: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) + " differ");
  const std::size_t h = sa[0], w = sa[1], c = sa[2];
  if (h < kSsimWindow || w < kSsimWindow) {
    throw DimensionError("ssim: images must be at least " + std::to_string(kSsimWindow) + " pixels on each side");
  }
  const double c1 = std::pow(kSsimK1 * dynamic_range, 2), c2 = std::pow(kSsimK2 * dynamic_range, 2);
  const auto win = gaussian_window();
  auto ad = a.data(), bd = b.data();
  double total = 0;
  std::size_t count = 0;
  std::vector<double> pa(h * w), pb(h * w), paa(h * w), pbb(h * w), pab(h * w);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < h * w; ++i) {
      pa[i] = ad[i * c + ch];
      pb[i] = bd[i * c + ch];
      paa[i] = pa[i] * pa[i];
      pbb[i] = pb[i] * pb[i];
      pab[i] = pa[i] * pb[i];
    }
    const auto ma = filter_valid(pa, h, w, win), mb = filter_valid(pb, h, w, win);
    const auto saa = filter_valid(paa, h, w, win), sbb = filter_valid(pbb, h, w, win);
    const auto sab = filter_valid(pab, h, w, win);
    for (std::size_t i = 0; i < ma.size(); ++i) {
      const double va = saa[i] - ma[i] * ma[i];
      const double vb = sbb[i] - mb[i] * mb[i];
      const double cov = sab[i] - ma[i] * mb[i];
      const double num = (2 * ma[i] * mb[i] + c1) * (2 * cov + c2);
      const double den = (ma[i] * ma[i] + mb[i] * mb[i] + c1) * (va + vb + c2);
      total += num / den;
    }
    count += ma.size();
  }
  return total / static_cast<double>(count);
}

double mean_ssim(const std::vector<Tensor>& a, const std::vector<Tensor>& b, double dynamic_range) {
  if (a.size() != b.size() || a.empty()) {
    throw DataError("mean_ssim: need equally sized nonempty sets, got " + std::to_string(a.size()) + " and " +
                    std::to_string(b.size()));
  }
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += ssim(a[i], b[i], dynamic_range);
  return s / static_cast<double>(a.size());
}

std::vector<double> matrix_sqrt_psd(std::span<const double> s, std::size_t n) {
  Mat m = to_mat(s, n, "matrix_sqrt_psd");
  require_symmetric(m, "matrix_sqrt_psd");
  Eigen::SelfAdjointEigenSolver<Mat> es(Mat((m + m.transpose()) / 2));
  if (es.info() != Eigen::Success) throw NumericError("matrix_sqrt_psd: eigendecomposition failed");
  Mat r = sqrt_from(es);
  return {r.data(), r.data() + r.size()};
}

double frechet_distance(std::span<const double> mu1, std::span<const double> sigma1, std::span<const double> mu2,
                        std::span<const double> sigma2) {
  const std::size_t n = mu1.size();
  if (mu2.size() != n) throw DimensionError("frechet_distance: mean dimensions differ");
  Mat s1 = to_mat(sigma1, n, "frechet_distance"), s2 = to_mat(sigma2, n, "frechet_distance");
  require_symmetric(s1, "frechet_distance");
  require_symmetric(s2, "frechet_distance");
  const auto e1 = psd_eigen(s1, "frechet_distance (sigma1)");
  psd_eigen(s2, "frechet_distance (sigma2)");
  // Tr (S1 S2)^(1/2) = Tr (S1^(1/2) S2 S1^(1/2))^(1/2), the latter symmetric PSD.
  const Mat r1 = sqrt_from(e1);
  const Mat inner = r1 * s2 * r1;
  Eigen::SelfAdjointEigenSolver<Mat> ei(Mat((inner + inner.transpose()) / 2), Eigen::EigenvaluesOnly);
  const double tr_sqrt = ei.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  double d2 = 0;
  for (std::size_t i = 0; i < n; ++i) d2 += (mu1[i] - mu2[i]) * (mu1[i] - mu2[i]);
  const double fd = d2 + s1.trace() + s2.trace() - 2 * tr_sqrt;
  return std::max(fd, 0.0);
}

GaussianFit fit_gaussian(const std::vector<std::vector<double>>& features, double shrinkage) {
  if (features.size() < 2) {
    throw DataError("fit_gaussian: need at least 2 samples, got " + std::to_string(features.size()));
  }
  const std::size_t n = features.size(), d = features[0].size();
  GaussianFit g;
  g.mean.assign(d, 0.0);
  for (const auto& f : features) {
    if (f.size() != d) throw DimensionError("fit_gaussian: feature dimensions differ");
    for (std::size_t j = 0; j < d; ++j) g.mean[j] += f[j];
  }
  for (auto& m : g.mean) m /= static_cast<double>(n);
  g.cov.assign(d * d, 0.0);
  for (const auto& f : features)
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) g.cov[i * d + j] += (f[i] - g.mean[i]) * (f[j] - g.mean[j]);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) g.cov[i * d + j] /= static_cast<double>(n - 1);
    g.cov[i * d + i] += shrinkage;
  }
  return g;
}

double inception_score(const std::vector<std::vector<double>>& p, std::size_t splits) {
  if (p.empty()) throw DataError("inception_score: empty set");
  if (splits == 0 || splits > p.size()) {
    throw ConfigError("inception_score: splits must be in [1, " + std::to_string(p.size()) + "]");
  }
  const std::size_t k = p[0].size();
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i].size() != k) throw DimensionError("inception_score: class counts differ");
    double s = 0;
    for (double v : p[i]) {
      if (!(v >= 0)) throw ContractError("inception_score: row " + std::to_string(i) + " has a negative entry");
      s += v;
    }
    if (std::abs(s - 1.0) > 1e-6) {
      throw ContractError("inception_score: row " + std::to_string(i) + " sums to " + std::to_string(s));
    }
  }
  double total = 0;
  for (std::size_t sp = 0; sp < splits; ++sp) {
    const std::size_t lo = sp * p.size() / splits, hi = (sp + 1) * p.size() / splits;
    std::vector<double> marginal(k, 0.0);
    for (std::size_t i = lo; i < hi; ++i)
      for (std::size_t j = 0; j < k; ++j) marginal[j] += p[i][j];
    for (auto& m : marginal) m /= static_cast<double>(hi - lo);
    double kl = 0;
    for (std::size_t i = lo; i < hi; ++i)
      for (std::size_t j = 0; j < k; ++j)
        if (p[i][j] > 0) kl += p[i][j] * (std::log(p[i][j]) - std::log(marginal[j]));
    total += std::exp(kl / static_cast<double>(hi - lo));
  }
  return total / static_cast<double>(splits);
}

// ---- extractors ---------------------------------------------------------------

std::vector<double> FeatureExtractor::pooled(const Tensor& image) const {
  const Shape s = image_shape(image, "feature extractor");
  const std::size_t h = s[0], w = s[1], c = s[2];
  if (c != 1 && c != 3) throw DimensionError("feature extractor: expected 1 or 3 channels, got " + std::to_string(c));
  if (h < pool_ || w < pool_) throw DimensionError("feature extractor: image smaller than the pooling grid");
  std::vector<double> out(pool_ * pool_ * 3, 0.0), count(pool_ * pool_, 0.0);
  auto d = image.data();
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t cell = (y * pool_ / h) * pool_ + x * pool_ / w;
      count[cell] += 1;
      for (std::size_t ch = 0; ch < 3; ++ch) out[cell * 3 + ch] += d[(y * w + x) * c + (c == 1 ? 0 : ch)];
    }
  for (std::size_t i = 0; i < out.size(); ++i) out[i] /= count[i / 3];
  return out;
}

FeatureExtractor FeatureExtractor::pixel_downsample(std::size_t pool) {
  FeatureExtractor e;
  e.kind_ = ExtractorKind::pixel_downsample;
  e.pool_ = pool;
  e.output_dim_ = pool * pool * 3;
  return e;
}

FeatureExtractor FeatureExtractor::seeded_random_projection(std::size_t output_dim, std::uint64_t seed,
                                                            std::size_t pool) {
  FeatureExtractor e;
  e.kind_ = ExtractorKind::seeded_random_projection;
  e.pool_ = pool;
  e.output_dim_ = output_dim;
  e.seed_ = seed;
  const std::size_t in = pool * pool * 3;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0 / std::sqrt(static_cast<double>(in)));
  e.weights_.resize(output_dim * in);
  for (auto& v : e.weights_) v = nd(rng);
  e.bias_.assign(output_dim, 0.0);
  return e;
}

FeatureExtractor FeatureExtractor::trained_tiny_classifier(const std::vector<Tensor>& images,
                                                           const std::vector<std::size_t>& labels,
                                                           std::size_t classes, std::size_t pool,
                                                           std::size_t iterations) {
  if (images.empty() || images.size() != labels.size()) {
    throw DataError("tiny classifier: need one label per image and at least one image");
  }
  if (classes < 2) throw ConfigError("tiny classifier: need at least 2 classes");
  FeatureExtractor e;
  e.kind_ = ExtractorKind::trained_tiny_classifier;
  e.pool_ = pool;
  e.output_dim_ = classes;
  const std::size_t in = pool * pool * 3, n = images.size();
  std::vector<std::vector<double>> x;
  for (const auto& im : images) x.push_back(e.pooled(im));
  for (auto l : labels)
    if (l >= classes) throw DataError("tiny classifier: label " + std::to_string(l) + " out of range");
  e.weights_.assign(classes * in, 0.0);
  e.bias_.assign(classes, 0.0);
  const double lr = 0.5, l2 = 1e-4;
  std::vector<double> gw(e.weights_.size()), gb(classes);
  for (std::size_t it = 0; it < iterations; ++it) {
    std::fill(gw.begin(), gw.end(), 0.0);
    std::fill(gb.begin(), gb.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> z(classes);
      for (std::size_t k = 0; k < classes; ++k) {
        double s = e.bias_[k];
        for (std::size_t j = 0; j < in; ++j) s += e.weights_[k * in + j] * x[i][j];
        z[k] = s;
      }
      auto p = softmax_of(z);
      p[labels[i]] -= 1.0;
      for (std::size_t k = 0; k < classes; ++k) {
        gb[k] += p[k];
        for (std::size_t j = 0; j < in; ++j) gw[k * in + j] += p[k] * x[i][j];
      }
    }
    for (std::size_t k = 0; k < classes; ++k) e.bias_[k] -= lr * gb[k] / static_cast<double>(n);
    for (std::size_t j = 0; j < gw.size(); ++j) {
      e.weights_[j] -= lr * (gw[j] / static_cast<double>(n) + l2 * e.weights_[j]);
    }
  }
  return e;
}

std::vector<std::size_t> FeatureExtractor::intensity_quantile_labels(const std::vector<Tensor>& images,
                                                                     std::size_t classes) {
  const std::size_t n = images.size();
  std::vector<double> mean(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto d = images[i].data();
    mean[i] = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return mean[a] < mean[b]; });
  std::vector<std::size_t> labels(n);
  for (std::size_t r = 0; r < n; ++r) labels[order[r]] = r * classes / n;
  return labels;
}

std::string FeatureExtractor::descriptor() const {
  std::ostringstream os;
  switch (kind_) {
    case ExtractorKind::pixel_downsample:
      os << "pixel_downsample(pool=" << pool_ << ",dim=" << output_dim_ << ")";
      break;
    case ExtractorKind::seeded_random_projection:
      os << "seeded_random_projection(pool=" << pool_ << ",dim=" << output_dim_ << ",seed=" << seed_ << ")";
      break;
    case ExtractorKind::trained_tiny_classifier:
      os << "trained_tiny_classifier(pool=" << pool_ << ",classes=" << output_dim_ << ")";
      break;
  }
  return os.str();
}

std::vector<double> FeatureExtractor::features(const Tensor& image) const {
  auto x = pooled(image);
  if (kind_ == ExtractorKind::pixel_downsample) return x;
  const std::size_t in = x.size();
  std::vector<double> out(output_dim_);
  for (std::size_t k = 0; k < output_dim_; ++k) {
    double s = bias_[k];
    for (std::size_t j = 0; j < in; ++j) s += weights_[k * in + j] * x[j];
    out[k] = s;
  }
  return out;
}

std::vector<double> FeatureExtractor::probabilities(const Tensor& image) const { return softmax_of(features(image)); }

double fid(const std::vector<Tensor>& real, const std::vector<Tensor>& generated, const FeatureExtractor& extractor) {
  if (real.empty() || generated.empty()) throw DataError("fid: both image sets must be nonempty");
  std::vector<std::vector<double>> fr, fg;
  for (const auto& im : real) fr.push_back(extractor.features(im));
  for (const auto& im : generated) fg.push_back(extractor.features(im));
  const auto a = fit_gaussian(fr), b = fit_gaussian(fg);
  return frechet_distance(a.mean, a.cov, b.mean, b.cov);
}

double inception_score(const std::vector<Tensor>& generated, const FeatureExtractor& extractor, std::size_t splits) {
  std::vector<std::vector<double>> p;
  for (const auto& im : generated) p.push_back(extractor.probabilities(im));
  return inception_score(p, splits);
}

// ---- report ----------------------------------------------------------------------

std::string MetricsReport::table() const {
  std::size_t name_w = 5;
  for (const auto& r : rows) name_w = std::max(name_w, r.model.size());
  auto cell = [](const std::optional<double>& v) { return v ? fmt(*v) : std::string("-"); };
  std::size_t num_w = 4;
  for (const auto& r : rows)
    for (const auto& v : {r.fid, r.is, r.ssim}) num_w = std::max(num_w, cell(v).size());
  auto pad_right = [](std::string s, std::size_t w) { return s + std::string(w > s.size() ? w - s.size() : 0, ' '); };
  auto pad_left = [](std::string s, std::size_t w) { return std::string(w > s.size() ? w - s.size() : 0, ' ') + s; };
  std::ostringstream os;
  os << pad_right("Model", name_w) << "  " << pad_left("FID", num_w) << "  " << pad_left("IS", num_w) << "  "
     << pad_left("SSIM", num_w) << "\n";
  for (const auto& r : rows) {
    os << pad_right(r.model, name_w) << "  " << pad_left(cell(r.fid), num_w) << "  " << pad_left(cell(r.is), num_w)
       << "  " << pad_left(cell(r.ssim), num_w) << "\n";
  }
  os << "\n# extractor: " << extractor << "\n";
  for (const auto& n : notes) os << "# " << n << "\n";
  return os.str();
}

std::string MetricsReport::key_values() const {
  std::ostringstream os;
  os.precision(17);
  os << "extractor=" << extractor << "\n";
  for (const auto& r : rows) {
    if (r.fid) os << r.model << ".fid=" << *r.fid << "\n";
    if (r.is) os << r.model << ".is=" << *r.is << "\n";
    if (r.ssim) os << r.model << ".ssim=" << *r.ssim << "\n";
    os << r.model << ".n_samples=" << r.n_samples << "\n";
  }
  return os.str();
}

}  // namespace t2i
