#include "t2i/generator.hpp"

#include <algorithm>
#include <random>
#include <sstream>

#include "t2i/errors.hpp"
#include "t2i/ops.hpp"
#include "text.hpp"

namespace t2i {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::A: return "A";
    case Variant::B: return "B";
    case Variant::C: return "C";
    case Variant::unet: return "unet";
    case Variant::autoencoder: return "autoencoder";
  }
  return "?";
}

std::string to_string(Task t) { return t == Task::segmentation ? "segmentation" : "regression"; }

Variant parse_variant(std::string_view s) {
  if (s == "A") return Variant::A;
  if (s == "B") return Variant::B;
  if (s == "C") return Variant::C;
  if (s == "unet") return Variant::unet;
  if (s == "autoencoder") return Variant::autoencoder;
  throw ConfigError("unknown variant '" + std::string(s) + "' (expected A, B, C, unet or autoencoder)");
}

Task parse_task(std::string_view s) {
  if (s == "segmentation") return Task::segmentation;
  if (s == "regression" || s == "depth") return Task::regression;
  throw ConfigError("unknown task '" + std::string(s) + "' (expected segmentation or regression)");
}

namespace {

using text::parse_bool;
using text::parse_number;
using text::split;

std::size_t count_doublings(std::size_t from, std::size_t to) {
  std::size_t n = 0;
  while (from < to) {
    from *= 2;
    ++n;
  }
  return from == to ? n : std::size_t(-1);
}

}  // namespace

std::vector<StageSpec> ModelConfig::resolved_schedule() const {
  if (!schedule.empty()) return schedule;
  if (patch_size == 0 || image_size % patch_size != 0) return {};
  const std::size_t n = count_doublings(image_size / patch_size, image_size);
  if (n == std::size_t(-1)) return {};
  auto def = default_decoder_schedule();
  if (n <= def.size()) return {def.end() - static_cast<std::ptrdiff_t>(n), def.end()};
  std::vector<StageSpec> out(n - def.size(), StageSpec{512, 512});
  out.insert(out.end(), def.begin(), def.end());
  return out;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("invalid model config: " + m); };
  if (image_size == 0 || in_channels == 0 || out_channels == 0) fail("image_size, in_channels, out_channels must be > 0");
  if (task == Task::segmentation && out_channels < 2) fail("segmentation needs out_channels >= 2 (one per class)");
  if (is_baseline()) {
    if (baseline_channels.empty()) fail("baseline_channels must not be empty");
    for (auto c : baseline_channels)
      if (c == 0) fail("baseline_channels entries must be > 0");
    const std::size_t factor = std::size_t(1) << baseline_channels.size();
    if (image_size % factor != 0) {
      fail("image_size " + std::to_string(image_size) + " must be divisible by 2^" +
           std::to_string(baseline_channels.size()) + " for the baseline encoder");
    }
    return;
  }
  if (patch_size == 0 || image_size % patch_size != 0) {
    fail("image_size " + std::to_string(image_size) + " must be divisible by patch_size " +
         std::to_string(patch_size));
  }
  if (embed_dim == 0 || num_heads == 0 || embed_dim % num_heads != 0) {
    fail("embed_dim " + std::to_string(embed_dim) + " must be a positive multiple of num_heads " +
         std::to_string(num_heads));
  }
  if (ffn_width == 0) fail("ffn_width must be > 0");
  const std::size_t n = count_doublings(image_size / patch_size, image_size);
  if (n == std::size_t(-1)) fail("patch_size " + std::to_string(patch_size) + " must be a power of two");
  if (!schedule.empty() && schedule.size() != n) {
    fail("decoder schedule has " + std::to_string(schedule.size()) + " stages but " + std::to_string(n) +
         " doublings are needed to go from the " + std::to_string(image_size / patch_size) + "x" +
         std::to_string(image_size / patch_size) + " patch grid to " + std::to_string(image_size));
  }
  for (const auto& s : schedule)
    if (s.transpose_channels == 0 || s.residual_channels == 0) fail("decoder schedule channels must be > 0");
  if (variant != Variant::C) {
    for (const auto& s : schedule)
      if (s.transpose_channels != s.residual_channels) fail("variant " + to_string(variant) + " has no residual blocks; stage channels must be equal pairs");
  }
  if (variant == Variant::B && skip_conv && skip_channels == 0) fail("skip_channels must be > 0 when skip_conv is on");
}

std::string to_text(const ModelConfig& c) {
  std::ostringstream os;
  os << "variant=" << to_string(c.variant) << "\n"
     << "image_size=" << c.image_size << "\n"
     << "in_channels=" << c.in_channels << "\n"
     << "patch_size=" << c.patch_size << "\n"
     << "embed_dim=" << c.embed_dim << "\n"
     << "num_heads=" << c.num_heads << "\n"
     << "ffn_width=" << c.ffn_width << "\n"
     << "num_layers=" << c.num_layers << "\n"
     << "schedule=";
  if (c.schedule.empty()) os << "auto";
  for (std::size_t i = 0; i < c.schedule.size(); ++i) {
    os << (i ? "," : "") << c.schedule[i].transpose_channels << ":" << c.schedule[i].residual_channels;
  }
  os << "\n"
     << "out_channels=" << c.out_channels << "\n"
     << "task=" << to_string(c.task) << "\n"
     << "seed=" << c.seed << "\n"
     << "skip_conv=" << (c.skip_conv ? "true" : "false") << "\n"
     << "skip_channels=" << c.skip_channels << "\n"
     << "baseline_channels=";
  for (std::size_t i = 0; i < c.baseline_channels.size(); ++i) os << (i ? "," : "") << c.baseline_channels[i];
  os << "\n";
  return os.str();
}

bool set_model_config_key(ModelConfig& c, std::string_view key, std::string_view v) {
  auto num = [&](std::size_t& field) { field = parse_number<std::size_t>(key, v); };
  if (key == "variant") c.variant = parse_variant(v);
  else if (key == "image_size") num(c.image_size);
  else if (key == "in_channels") num(c.in_channels);
  else if (key == "patch_size") num(c.patch_size);
  else if (key == "embed_dim") num(c.embed_dim);
  else if (key == "num_heads") num(c.num_heads);
  else if (key == "ffn_width") num(c.ffn_width);
  else if (key == "num_layers") num(c.num_layers);
  else if (key == "out_channels") num(c.out_channels);
  else if (key == "task") c.task = parse_task(v);
  else if (key == "seed") c.seed = parse_number<std::uint64_t>(key, v);
  else if (key == "skip_conv") c.skip_conv = parse_bool(key, v);
  else if (key == "skip_channels") num(c.skip_channels);
  else if (key == "schedule") {
    c.schedule.clear();
    if (v.empty() || v == "auto") return true;
    for (auto item : split(v, ',')) {
      auto parts = split(item, ':');
      if (parts.size() == 1) {
        auto ch = parse_number<std::size_t>(key, parts[0]);
        c.schedule.push_back({ch, ch});
      } else if (parts.size() == 2) {
        c.schedule.push_back({parse_number<std::size_t>(key, parts[0]), parse_number<std::size_t>(key, parts[1])});
      } else {
        throw ConfigError("config key 'schedule': expected CT:RL pairs, got '" + std::string(item) + "'");
      }
    }
  } else if (key == "baseline_channels") {
    c.baseline_channels.clear();
    for (auto item : split(v, ',')) c.baseline_channels.push_back(parse_number<std::size_t>(key, item));
  } else {
    return false;
  }
  return true;
}

ModelConfig model_config_from_text(std::string_view text) {
  ModelConfig c;
  std::size_t line_no = 0;
  for (auto line : split(text, '\n')) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty() || line.front() == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("model config line " + std::to_string(line_no) + ": expected key=value");
    }
    if (!set_model_config_key(c, line.substr(0, eq), line.substr(eq + 1))) {
      throw ConfigError("model config line " + std::to_string(line_no) + ": unknown key '" +
                        std::string(line.substr(0, eq)) + "'");
    }
  }
  return c;
}

Generator::Generator(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  std::mt19937_64 rng(config_.seed);
  ParamBuilder root(store_, rng);
  const auto act = config_.final_activation();

  if (config_.is_baseline()) {
    const auto& ch = config_.baseline_channels;
    std::size_t in = config_.in_channels;
    for (std::size_t i = 0; i < ch.size(); ++i) {
      auto b = root.scoped("down" + std::to_string(i));
      const std::size_t k = kTransposeKernel;
      DownParams d;
      d.w = b.glorot("w", {k, k, in, ch[i]}, k * k * in, k * k * ch[i]);
      d.bn = b.batch_norm("bn", ch[i]);
      down_.push_back(std::move(d));
      in = ch[i];
    }
    const bool unet = config_.variant == Variant::unet;
    const std::size_t n = ch.size();
    for (std::size_t i = 0; i < n; ++i) {
      // up_i lands on the resolution of down_{n-2-i}; the last one on the input size.
      const std::size_t out = i + 1 < n ? ch[n - 2 - i] : std::max<std::size_t>(ch[0] / 2, 1);
      stages_.push_back(make_upsample_stage(root.scoped("up" + std::to_string(i)), in, {out, out}, false));
      in = (unet && i + 1 < n) ? out * 2 : out;
    }
    head_ = make_output_head(root.scoped("head"), in, config_.out_channels, act);
    return;
  }

  PatchConfig pc{config_.image_size, config_.patch_size, config_.in_channels, config_.embed_dim};
  patch_ = make_patch_encoder(root.scoped("patch_encoder"), pc);
  for (std::size_t i = 0; i < config_.num_layers; ++i) {
    transformer_.push_back(make_transformer_layer(root.scoped("transformer" + std::to_string(i)),
                                                  config_.embed_dim, config_.num_heads, config_.ffn_width));
  }
  const bool b_variant = config_.variant == Variant::B;
  const std::size_t extra = b_variant ? (config_.skip_conv ? config_.skip_channels : config_.embed_dim) : 0;
  const auto schedule = config_.resolved_schedule();
  std::size_t in = config_.embed_dim;
  for (std::size_t i = 0; i <= schedule.size(); ++i) {
    if (b_variant && config_.skip_conv) {
      skips_.push_back(make_skip_conv(root.scoped("skip" + std::to_string(i)), config_.embed_dim, extra));
    }
    if (i == schedule.size()) break;
    stages_.push_back(make_upsample_stage(root.scoped("stage" + std::to_string(i)), in + extra, schedule[i],
                                          config_.variant == Variant::C));
    in = config_.variant == Variant::C ? schedule[i].residual_channels : schedule[i].transpose_channels;
  }
  head_ = make_output_head(root.scoped("head"), in + extra, config_.out_channels, act);
}

Tensor Generator::forward(const Tensor& images, Mode mode) const {
  const auto s = config_.image_size;
  if (images.ndim() != 4 || images.dim(1) != s || images.dim(2) != s || images.dim(3) != config_.in_channels) {
    throw DimensionError("generator expects [N," + std::to_string(s) + "," + std::to_string(s) + "," +
                         std::to_string(config_.in_channels) + "] input, got " + shape_str(images.shape()));
  }
  return config_.is_baseline() ? forward_baseline(images, mode) : forward_transformer(images, mode);
}

Tensor Generator::forward_transformer(const Tensor& images, Mode mode) const {
  Tensor tokens = encode_patches(extract_patches(images, config_.patch_size), patch_);
  const bool b_variant = config_.variant == Variant::B;
  Tensor encoded = b_variant ? tokens_to_grid(tokens) : Tensor();
  Tensor x = tokens;
  for (const auto& layer : transformer_) x = transformer_layer(x, layer);
  Tensor h = tokens_to_grid(x);
  auto skip_at = [&](std::size_t i) { return skips_.empty() ? nullptr : &skips_[i]; };
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    if (b_variant) h = upsample_concat(encoded, h, skip_at(i));
    h = upsample_stage(h, stages_[i], mode);
  }
  if (b_variant) h = upsample_concat(encoded, h, skip_at(stages_.size()));
  return output_head(h, head_);
}

Tensor Generator::forward_baseline(const Tensor& images, Mode mode) const {
  std::vector<Tensor> features;
  Tensor h = images;
  for (const auto& d : down_) {
    h = leaky_relu(apply_batch_norm(conv2d(h, d.w, std::nullopt, 2, Padding::same), d.bn, mode));
    features.push_back(h);
  }
  const bool unet = config_.variant == Variant::unet;
  const std::size_t n = down_.size();
  for (std::size_t i = 0; i < n; ++i) {
    h = upsample_stage(h, stages_[i], mode);
    if (unet && i + 1 < n) h = concat({h, features[n - 2 - i]}, -1);
  }
  return output_head(h, head_);
}

std::vector<LayerInfo> Generator::layers() const {
  std::vector<LayerInfo> out;
  const std::size_t s = config_.image_size;
  if (config_.is_baseline()) {
    const auto& ch = config_.baseline_channels;
    std::size_t side = s;
    for (auto c : ch) {
      side /= 2;
      out.push_back({"D" + std::to_string(c), {side, side, c}});
    }
    for (std::size_t i = 0; i < stages_.size(); ++i) {
      side *= 2;
      const std::size_t c = stages_[i].transpose_kernel.dim(2);
      out.push_back({"U" + std::to_string(c), {side, side, c}});
      if (config_.variant == Variant::unet && i + 1 < stages_.size()) out.push_back({"CAT", {side, side, 2 * c}});
    }
    out.push_back({"C", {s, s, config_.out_channels}});
    return out;
  }
  const std::size_t p = config_.patch_size, np = (s / p) * (s / p), e = config_.embed_dim;
  out.push_back({"P" + std::to_string(p), {np, p * p * config_.in_channels}});
  out.push_back({"PE", {np, e}});
  for (std::size_t i = 0; i < transformer_.size(); ++i) out.push_back({"TL", {np, e}});
  std::size_t side = s / p, ch = e;
  const bool b_variant = config_.variant == Variant::B;
  const std::size_t extra = b_variant ? (config_.skip_conv ? config_.skip_channels : e) : 0;
  for (const auto& st : stages_) {
    if (b_variant) out.push_back({"UC", {side, side, ch + extra}});
    side *= 2;
    ch = st.transpose_kernel.dim(2);
    out.push_back({"CT" + std::to_string(ch), {side, side, ch}});
    if (st.residual) {
      ch = st.residual->conv1.dim(3);
      out.push_back({"RL" + std::to_string(ch), {side, side, ch}});
    }
  }
  if (b_variant) out.push_back({"UC", {side, side, ch + extra}});
  out.push_back({"C", {s, s, config_.out_channels}});
  return out;
}

std::string Generator::architecture() const {
  std::string out;
  for (const auto& l : layers()) out += (out.empty() ? "" : " - ") + l.label;
  return out;
}

Generator build_generator(const ModelConfig& config) { return Generator(config); }

}  // namespace t2i
