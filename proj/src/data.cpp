#include "t2i/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>
#include <random>
#include <sstream>

#include "t2i/errors.hpp"

namespace t2i {

std::size_t Dataset::target_channels() const {
  if (task == Task::segmentation) return num_classes;
  if (samples.empty() || !samples.front().target.defined()) return 0;
  return samples.front().target.shape().back();
}

void Dataset::validate() const {
  if (task == Task::segmentation && num_classes < 2) throw DataError("segmentation dataset needs at least 2 classes");
  const Shape in_shape{image_size, image_size, 3};
  for (const auto& s : samples) {
    if (!s.input.defined() || s.input.shape() != in_shape) {
      throw DataError("sample '" + s.id + "': input must be " + shape_str(in_shape) + ", got " +
                      (s.input.defined() ? shape_str(s.input.shape()) : std::string("nothing")));
    }
    if (task == Task::segmentation) {
      if (s.labels.size() != image_size * image_size) {
        throw DataError("sample '" + s.id + "': " + std::to_string(s.labels.size()) + " labels for " +
                        std::to_string(image_size * image_size) + " pixels");
      }
      for (std::size_t i = 0; i < s.labels.size(); ++i) {
        if (s.labels[i] < 0 || static_cast<std::size_t>(s.labels[i]) >= num_classes) {
          throw DataError("sample '" + s.id + "': class " + std::to_string(s.labels[i]) + " at (y=" +
                          std::to_string(i / image_size) + ", x=" + std::to_string(i % image_size) +
                          ") is not below " + std::to_string(num_classes));
        }
      }
    } else {
      const auto& t = s.target;
      if (!t.defined() || t.ndim() != 3 || t.dim(0) != image_size || t.dim(1) != image_size ||
          t.dim(2) != target_channels()) {
        throw DataError("sample '" + s.id + "': regression target must be [" + std::to_string(image_size) + "," +
                        std::to_string(image_size) + "," + std::to_string(target_channels()) + "]");
      }
    }
  }
}

// ---- PPM -----------------------------------------------------------------

std::vector<std::uint8_t> encode_ppm(const Image8& image) {
  if (image.rgb.size() != image.width * image.height * 3 || image.width == 0 || image.height == 0) {
    throw DimensionError("encode_ppm: " + std::to_string(image.rgb.size()) + " bytes for a " +
                         std::to_string(image.width) + "x" + std::to_string(image.height) + " image");
  }
  const std::string header = "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), image.rgb.begin(), image.rgb.end());
  return out;
}

namespace {

class PpmParser {
 public:
  PpmParser(const std::vector<std::uint8_t>& b, const std::string& src) : b_(b), src_(src) {}

  [[noreturn]] void fail(const std::string& what) const {
    throw DataError(src_ + ": " + what + " at byte offset " + std::to_string(pos_));
  }

  void skip_space_and_comments() {
    while (pos_ < b_.size()) {
      if (b_[pos_] == '#') {
        while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
      } else if (std::isspace(b_[pos_])) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::size_t number(const char* what) {
    skip_space_and_comments();
    if (pos_ >= b_.size()) fail(std::string("truncated header, expected ") + what);
    if (!std::isdigit(b_[pos_])) fail(std::string("malformed header, expected ") + what);
    std::size_t v = 0;
    while (pos_ < b_.size() && std::isdigit(b_[pos_])) {
      v = v * 10 + (b_[pos_] - '0');
      if (v > (1u << 24)) fail(std::string(what) + " too large");
      ++pos_;
    }
    return v;
  }

  Image8 parse() {
    if (b_.size() < 2 || b_[0] != 'P' || b_[1] != '6') fail("not a binary PPM (missing P6 magic)");
    pos_ = 2;
    Image8 img;
    img.width = number("width");
    img.height = number("height");
    const std::size_t maxval = number("maxval");
    if (img.width == 0 || img.height == 0) fail("zero image dimension");
    if (maxval != 255) fail("unsupported maxval " + std::to_string(maxval) + " (only 255)");
    if (pos_ >= b_.size() || !std::isspace(b_[pos_])) fail("malformed header, expected whitespace after maxval");
    ++pos_;
    const std::size_t need = img.width * img.height * 3;
    if (b_.size() - pos_ < need) {
      fail("truncated payload: need " + std::to_string(need) + " bytes, have " + std::to_string(b_.size() - pos_));
    }
    img.rgb.assign(b_.begin() + static_cast<std::ptrdiff_t>(pos_),
                   b_.begin() + static_cast<std::ptrdiff_t>(pos_ + need));
    return img;
  }

 private:
  const std::vector<std::uint8_t>& b_;
  const std::string& src_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

Image8 decode_ppm(const std::vector<std::uint8_t>& bytes, const std::string& source) {
  return PpmParser(bytes, source).parse();
}

Image8 read_ppm(const std::string& path) { return decode_ppm(read_file(path), path); }

void write_ppm(const Image8& image, const std::string& path) {
  const auto bytes = encode_ppm(image);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path);
}

std::uint8_t to_byte(double v) {
  if (!(v == v)) return 0;
  const double p = std::round((v + 1.0) * 127.5);
  return static_cast<std::uint8_t>(std::clamp(p, 0.0, 255.0));
}

double from_byte(std::uint8_t p) { return static_cast<double>(p) / 127.5 - 1.0; }

Image8 to_image8(const Tensor& image) {
  Shape s = image.shape();
  if (s.size() == 4 && s[0] == 1) s.erase(s.begin());
  if (s.size() != 3 || (s[2] != 1 && s[2] != 3)) {
    throw DimensionError("to_image8: expected [H,W,1|3], got " + shape_str(image.shape()));
  }
  Image8 img{s[1], s[0], {}};
  img.rgb.resize(s[0] * s[1] * 3);
  auto d = image.data();
  for (std::size_t i = 0; i < s[0] * s[1]; ++i) {
    for (std::size_t c = 0; c < 3; ++c) img.rgb[i * 3 + c] = to_byte(d[i * s[2] + (s[2] == 1 ? 0 : c)]);
  }
  return img;
}

Tensor from_image8(const Image8& image) {
  std::vector<double> v(image.rgb.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = from_byte(image.rgb[i]);
  return Tensor({image.height, image.width, 3}, std::move(v));
}

Tensor load_image(const std::string& path) { return from_image8(read_ppm(path)); }

void save_image(const Tensor& image, const std::string& path) { write_ppm(to_image8(image), path); }

// ---- rendering --------------------------------------------------------------

Rgb palette_color(std::size_t cls) {
  static constexpr Rgb kPalette[16] = {
      {0, 0, 0},       {230, 25, 75},  {60, 180, 75},   {255, 225, 25}, {0, 130, 200},  {245, 130, 48},
      {145, 30, 180},  {70, 240, 240}, {240, 50, 230},  {210, 245, 60}, {250, 190, 212}, {0, 128, 128},
      {220, 190, 255}, {170, 110, 40}, {255, 250, 200}, {128, 0, 0},
  };
  return kPalette[cls % 16];
}

Image8 render_labels(const std::vector<std::int32_t>& labels, std::size_t width, std::size_t height) {
  if (labels.size() != width * height) {
    throw DimensionError("render_labels: " + std::to_string(labels.size()) + " labels for " + std::to_string(width) +
                         "x" + std::to_string(height));
  }
  Image8 img{width, height, std::vector<std::uint8_t>(width * height * 3)};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto c = palette_color(static_cast<std::size_t>(std::max(labels[i], 0)));
    std::copy(c.begin(), c.end(), img.rgb.begin() + static_cast<std::ptrdiff_t>(i * 3));
  }
  return img;
}

std::vector<std::int32_t> argmax_labels(const Tensor& logits) {
  if (logits.ndim() < 2) throw DimensionError("argmax_labels: rank too small " + shape_str(logits.shape()));
  const std::size_t k = logits.shape().back();
  const std::size_t n = logits.size() / k;
  auto d = logits.data();
  std::vector<std::int32_t> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = d.data() + i * k;
    out[i] = static_cast<std::int32_t>(std::max_element(row, row + k) - row);
  }
  return out;
}

// ---- synthetic segmentation --------------------------------------------------

namespace {

bool inside(const ShapeSpec& s, double px, double py) {
  switch (s.kind) {
    case ShapeSpec::Kind::rectangle:
      return px >= s.x0 && px < s.x1 && py >= s.y0 && py < s.y1;
    case ShapeSpec::Kind::ellipse: {
      const double cx = (s.x0 + s.x1) / 2, cy = (s.y0 + s.y1) / 2;
      const double rx = (s.x1 - s.x0) / 2, ry = (s.y1 - s.y0) / 2;
      const double dx = (px - cx) / rx, dy = (py - cy) / ry;
      return dx * dx + dy * dy <= 1.0;
    }
    case ShapeSpec::Kind::triangle: {
      // apex at top centre, base along the bottom edge
      const double ax = (s.x0 + s.x1) / 2, ay = s.y0;
      const double bx = s.x0, by = s.y1, cx = s.x1, cy = s.y1;
      auto cross = [](double ux, double uy, double vx, double vy, double wx, double wy) {
        return (vx - ux) * (wy - uy) - (vy - uy) * (wx - ux);
      };
      const double d1 = cross(ax, ay, bx, by, px, py);
      const double d2 = cross(bx, by, cx, cy, px, py);
      const double d3 = cross(cx, cy, ax, ay, px, py);
      const bool neg = d1 < 0 || d2 < 0 || d3 < 0, pos = d1 > 0 || d2 > 0 || d3 > 0;
      return !(neg && pos);
    }
  }
  return false;
}

std::vector<std::uint8_t> shape_mask(const ShapeSpec& s, std::size_t size) {
  std::vector<std::uint8_t> m(size * size);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) m[y * size + x] = inside(s, x + 0.5, y + 0.5) ? 1 : 0;
  return m;
}

// Square erosion of radius r; pixels beyond the image count as outside.
std::vector<std::uint8_t> erode(const std::vector<std::uint8_t>& m, std::size_t size, std::size_t r) {
  auto pass = [&](const std::vector<std::uint8_t>& src, bool horizontal) {
    std::vector<std::uint8_t> dst(src.size());
    const auto n = static_cast<std::ptrdiff_t>(size), rr = static_cast<std::ptrdiff_t>(r);
    for (std::ptrdiff_t y = 0; y < n; ++y)
      for (std::ptrdiff_t x = 0; x < n; ++x) {
        std::uint8_t v = 1;
        for (std::ptrdiff_t d = -rr; d <= rr && v; ++d) {
          const std::ptrdiff_t xx = horizontal ? x + d : x, yy = horizontal ? y : y + d;
          v = (xx >= 0 && yy >= 0 && xx < n && yy < n) ? src[static_cast<std::size_t>(yy * n + xx)] : 0;
        }
        dst[static_cast<std::size_t>(y * n + x)] = v;
      }
    return dst;
  };
  return pass(pass(m, true), false);
}

Rgb random_color(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> c(0, 255);
  return {static_cast<std::uint8_t>(c(rng)), static_cast<std::uint8_t>(c(rng)), static_cast<std::uint8_t>(c(rng))};
}

double color_distance(const Rgb& a, const Rgb& b) {
  double s = 0;
  for (int i = 0; i < 3; ++i) s += std::pow(double(a[i]) - double(b[i]), 2);
  return std::sqrt(s);
}

// Base color plus a sinusoidal stripe texture, values in [0,255].
struct Texture {
  Rgb base;
  double freq, angle, phase, amp;
  double at(std::size_t c, double x, double y) const {
    const double t = std::sin(freq * (x * std::cos(angle) + y * std::sin(angle)) + phase);
    return std::clamp(double(base[c]) + amp * t, 0.0, 255.0);
  }
};

Texture random_texture(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  return {random_color(rng), 0.2 + 0.6 * u(rng), std::numbers::pi * u(rng), 2 * std::numbers::pi * u(rng),
          10.0 + 25.0 * u(rng)};
}

// Quantizes to the 8-bit grid so the tensor survives a PPM round trip.
double quantized(double v255) { return from_byte(static_cast<std::uint8_t>(std::clamp(std::round(v255), 0.0, 255.0))); }

}  // namespace

std::vector<std::int32_t> render_segmentation(const std::vector<ShapeSpec>& shapes, std::size_t size,
                                              std::size_t num_classes, std::size_t border) {
  if (num_classes < 2) throw ConfigError("segmentation needs at least 2 classes");
  std::vector<std::int32_t> labels(size * size, 0);
  for (const auto& s : shapes) {
    const auto mask = shape_mask(s, size);
    const auto core = num_classes >= 3 ? erode(mask, size, border) : mask;
    const auto kind = static_cast<std::int32_t>(s.kind);
    const std::int32_t interior = num_classes <= 3 ? 1 : 1 + kind % static_cast<std::int32_t>(num_classes - 2);
    const auto edge = static_cast<std::int32_t>(num_classes >= 3 ? num_classes - 1 : 1);
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (mask[i]) labels[i] = core[i] ? interior : edge;
    }
  }
  return labels;
}

Dataset synth_segmentation_dataset(std::size_t n, std::size_t size, std::size_t num_classes, std::uint64_t seed,
                                   std::size_t border) {
  if (num_classes < 2) throw ConfigError("synthetic segmentation needs K >= 2, got " + std::to_string(num_classes));
  if (size < 8) throw ConfigError("synthetic images must be at least 8 pixels wide");
  Dataset d;
  d.task = Task::segmentation;
  d.num_classes = num_classes;
  d.image_size = size;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t k = 0; k < n; ++k) {
    const Texture bg = random_texture(rng);
    std::vector<ShapeSpec> shapes;
    std::vector<Texture> fills;
    const std::size_t count = 1 + rng() % 3;
    for (std::size_t j = 0; j < count; ++j) {
      ShapeSpec s;
      s.kind = static_cast<ShapeSpec::Kind>(rng() % 3);
      const double sz = static_cast<double>(size);
      const double w = std::round(sz * (0.25 + 0.3 * u(rng))), h = std::round(sz * (0.25 + 0.3 * u(rng)));
      s.x0 = std::floor(u(rng) * (sz - w));
      s.y0 = std::floor(u(rng) * (sz - h));
      s.x1 = s.x0 + w;
      s.y1 = s.y0 + h;
      do {
        s.color = random_color(rng);
      } while (color_distance(s.color, bg.base) < 120);
      shapes.push_back(s);
      fills.push_back({s.color, 0.5 + u(rng), std::numbers::pi * u(rng), 0.0, 8.0});
    }
    std::vector<double> img(size * size * 3);
    std::normal_distribution<double> noise(0.0, 4.0);
    for (std::size_t y = 0; y < size; ++y)
      for (std::size_t x = 0; x < size; ++x) {
        const Texture* tex = &bg;
        for (std::size_t j = 0; j < shapes.size(); ++j)
          if (inside(shapes[j], x + 0.5, y + 0.5)) tex = &fills[j];
        for (std::size_t c = 0; c < 3; ++c) {
          img[(y * size + x) * 3 + c] = quantized(tex->at(c, double(x), double(y)) + noise(rng));
        }
      }
    PairedSample s;
    s.id = "shapes_" + std::to_string(k);
    s.input = Tensor({size, size, 3}, std::move(img));
    s.labels = render_segmentation(shapes, size, num_classes, border);
    d.samples.push_back(std::move(s));
  }
  return d;
}

// ---- synthetic depth ------------------------------------------------------------

double depth_at(const DepthRect& r, double x, double y) {
  return std::clamp(r.depth + r.slope_x * (x - r.x0) + r.slope_y * (y - r.y0), 0.0, 1.0);
}

Tensor render_depth(const std::vector<DepthRect>& rects, std::size_t size, Tensor* input) {
  std::vector<double> depth(size * size, 1.0);
  std::vector<double> rgb(size * size * 3);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const double cx = x + 0.5, cy = y + 0.5;
      double best = 1.0;
      const DepthRect* hit = nullptr;
      for (const auto& r : rects) {
        if (cx < r.x0 || cx >= r.x1 || cy < r.y0 || cy >= r.y1) continue;
        const double d = depth_at(r, cx, cy);
        if (hit == nullptr || d < best) {
          best = d;
          hit = &r;
        }
      }
      const std::size_t i = y * size + x;
      depth[i] = hit ? best : 1.0;
      for (std::size_t c = 0; c < 3; ++c) {
        // nearer surfaces are brighter; the empty far plane is a dim gradient
        const double base = hit ? double(hit->color[c]) : 40.0 + 40.0 * cy / double(size);
        rgb[i * 3 + c] = quantized(base * (1.0 - 0.6 * depth[i]) + 20.0);
      }
    }
  if (input) *input = Tensor({size, size, 3}, std::move(rgb));
  for (auto& d : depth) d = 2.0 * d - 1.0;
  return Tensor({size, size, 1}, std::move(depth));
}

Dataset synth_depth_dataset(std::size_t n, std::size_t size, std::uint64_t seed) {
  if (size < 8) throw ConfigError("synthetic images must be at least 8 pixels wide");
  Dataset d;
  d.task = Task::regression;
  d.image_size = size;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double sz = static_cast<double>(size);
  for (std::size_t k = 0; k < n; ++k) {
    std::vector<DepthRect> rects;
    const std::size_t count = 1 + rng() % 4;
    for (std::size_t j = 0; j < count; ++j) {
      DepthRect r;
      const double w = std::round(sz * (0.2 + 0.4 * u(rng))), h = std::round(sz * (0.2 + 0.4 * u(rng)));
      r.x0 = std::floor(u(rng) * (sz - w));
      r.y0 = std::floor(u(rng) * (sz - h));
      r.x1 = r.x0 + w;
      r.y1 = r.y0 + h;
      r.depth = 0.1 + 0.7 * u(rng);
      r.slope_x = (u(rng) - 0.5) * 0.2 / sz;
      r.slope_y = (u(rng) - 0.5) * 0.2 / sz;
      r.color = random_color(rng);
      for (auto& c : r.color) c = static_cast<std::uint8_t>(100 + c * 155 / 255);
      rects.push_back(r);
    }
    PairedSample s;
    s.id = "depth_" + std::to_string(k);
    s.target = render_depth(rects, size, &s.input);
    d.samples.push_back(std::move(s));
  }
  return d;
}

// ---- manifests ----------------------------------------------------------------

Dataset load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path);
  const auto dir = std::filesystem::path(path).parent_path();
  Dataset d;
  std::size_t channels = 1;
  bool have_task = false;
  std::string line;
  std::size_t line_no = 0;
  auto where = [&] { return path + ":" + std::to_string(line_no) + ": "; };
  auto number = [&](const std::string& v) {
    std::size_t pos = 0;
    unsigned long long x = 0;
    try {
      x = std::stoull(v, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != v.size() || v.empty()) throw DataError(where() + "expected a number, got '" + v + "'");
    return static_cast<std::size_t>(x);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw DataError(where() + "expected key=value or input<TAB>target");
      const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
      if (key == "task") {
        try {
          d.task = parse_task(value);
        } catch (const ConfigError& e) {
          throw DataError(where() + e.what());
        }
        have_task = true;
      } else if (key == "classes") {
        d.num_classes = number(value);
      } else if (key == "size") {
        d.image_size = number(value);
      } else if (key == "channels") {
        channels = number(value);
        if (channels != 1 && channels != 3) throw DataError(where() + "channels must be 1 or 3");
      } else {
        throw DataError(where() + "unknown header key '" + key + "'");
      }
      continue;
    }
    if (!have_task || d.image_size == 0) throw DataError(where() + "task= and size= must precede the sample list");
    auto resolve = [&](const std::string& p) {
      std::filesystem::path fp(p);
      return (fp.is_absolute() ? fp : dir / fp).string();
    };
    const std::string in_path = resolve(line.substr(0, tab)), tgt_path = resolve(line.substr(tab + 1));
    const Image8 img = read_ppm(in_path), tgt = read_ppm(tgt_path);
    for (auto [im, p] : {std::pair{&img, &in_path}, std::pair{&tgt, &tgt_path}}) {
      if (im->width != d.image_size || im->height != d.image_size) {
        throw DataError(*p + ": image is " + std::to_string(im->width) + "x" + std::to_string(im->height) +
                        ", manifest size is " + std::to_string(d.image_size));
      }
    }
    PairedSample s;
    s.id = std::filesystem::path(in_path).stem().string();
    s.input = from_image8(img);
    if (d.task == Task::segmentation) {
      s.labels.resize(d.image_size * d.image_size);
      for (std::size_t i = 0; i < s.labels.size(); ++i) {
        s.labels[i] = tgt.rgb[i * 3];
        if (static_cast<std::size_t>(s.labels[i]) >= d.num_classes) {
          throw DataError(tgt_path + ": class " + std::to_string(s.labels[i]) + " at (y=" +
                          std::to_string(i / d.image_size) + ", x=" + std::to_string(i % d.image_size) +
                          ") is not below classes=" + std::to_string(d.num_classes));
        }
      }
    } else {
      Tensor rgb = from_image8(tgt);
      if (channels == 3) {
        s.target = rgb;
      } else {
        std::vector<double> v(d.image_size * d.image_size);
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = rgb.at(i * 3);
        s.target = Tensor({d.image_size, d.image_size, 1}, std::move(v));
      }
    }
    d.samples.push_back(std::move(s));
  }
  if (!have_task) throw DataError(path + ": missing task= header");
  if (d.samples.empty()) throw DataError(path + ": no samples listed");
  d.validate();
  return d;
}

// ---- montage -----------------------------------------------------------------

Image8 montage(const std::vector<std::vector<Image8>>& rows) {
  if (rows.empty()) throw DimensionError("montage: no rows");
  const std::size_t sep = kMontageSeparator;
  std::size_t width = 0, height = 0;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.empty()) throw DimensionError("montage: row " + std::to_string(r) + " is empty");
    for (const auto& t : row) {
      if (t.width != row[0].width || t.height != row[0].height) {
        throw DimensionError("montage: row " + std::to_string(r) + " mixes tile sizes " +
                             std::to_string(row[0].width) + "x" + std::to_string(row[0].height) + " and " +
                             std::to_string(t.width) + "x" + std::to_string(t.height));
      }
    }
    width = std::max(width, row.size() * row[0].width + (row.size() - 1) * sep);
    height += row[0].height + (r ? sep : 0);
  }
  Image8 out{width, height, std::vector<std::uint8_t>(width * height * 3, 255)};
  std::size_t y0 = 0;
  for (const auto& row : rows) {
    std::size_t x0 = 0;
    for (const auto& t : row) {
      for (std::size_t y = 0; y < t.height; ++y) {
        std::copy_n(t.rgb.begin() + static_cast<std::ptrdiff_t>(y * t.width * 3), t.width * 3,
                    out.rgb.begin() + static_cast<std::ptrdiff_t>(((y0 + y) * width + x0) * 3));
      }
      x0 += t.width + sep;
    }
    y0 += row[0].height + sep;
  }
  return out;
}

}  // namespace t2i
