#pragma once

// Generator variants built from the encoder and decoder blocks, plus the
// convolutional U-Net and autoencoder baselines.
//
//   A            patches -> PE -> TL x n -> CT stages -> C
//   B            A, with the embedded patch grid bilinearly resized and
//                concatenated onto the input of every decoder conv
//   C            A, with a residual block after every CT stage
//   autoencoder  strided convs down to a bottleneck, CT stages back up -> C
//   unet         autoencoder plus skip concatenations at matched sizes

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "t2i/decoder.hpp"
#include "t2i/encoder.hpp"
#include "t2i/params.hpp"
#include "t2i/tensor.hpp"

namespace t2i {

enum class Variant { A, B, C, unet, autoencoder };
enum class Task { segmentation, regression };

std::string to_string(Variant v);
std::string to_string(Task t);
Variant parse_variant(std::string_view s);  // throws ConfigError
Task parse_task(std::string_view s);

struct ModelConfig {
  Variant variant = Variant::C;
  std::size_t image_size = 64;
  std::size_t in_channels = 3;
  std::size_t patch_size = 16;
  std::size_t embed_dim = 64;
  std::size_t num_heads = 2;
  std::size_t ffn_width = 32;
  std::size_t num_layers = 4;
  // Empty: derived from image_size / patch_size (see resolved_schedule).
  std::vector<StageSpec> schedule;
  std::size_t out_channels = 3;
  Task task = Task::segmentation;
  std::uint64_t seed = 0;
  // Generator B: 1x1 conv on the resized patch grid before concatenation.
  bool skip_conv = false;
  std::size_t skip_channels = 16;
  // Baselines: encoder widths, one stride-2 conv each.
  std::vector<std::size_t> baseline_channels{64, 128, 256, 512};

  bool is_baseline() const { return variant == Variant::unet || variant == Variant::autoencoder; }
  FinalActivation final_activation() const {
    return task == Task::regression ? FinalActivation::tanh : FinalActivation::none;
  }
  // The configured schedule, or the default one fitted to the number of
  // doublings from the patch grid to the image: the last n default stages
  // when n <= 4, extra 512-wide stages prepended otherwise.
  std::vector<StageSpec> resolved_schedule() const;
  void validate() const;  // throws ConfigError naming the violated constraint
};

// key=value lines, one per field, in a fixed order.
std::string to_text(const ModelConfig& config);
ModelConfig model_config_from_text(std::string_view text);
// Applies one key; returns false for keys that are not model fields.
bool set_model_config_key(ModelConfig& config, std::string_view key, std::string_view value);

struct LayerInfo {
  std::string label;  // "P16", "PE", "TL", "CT512", "RL512", "UC", "D64", "U256", "CAT", "C"
  Shape output;       // per sample, no batch axis
};

class Generator {
 public:
  explicit Generator(ModelConfig config);
  Generator(Generator&&) = default;
  Generator& operator=(Generator&&) = default;
  Generator(const Generator&) = delete;
  Generator& operator=(const Generator&) = delete;

  const ModelConfig& config() const { return config_; }
  const ParameterStore& parameters() const { return store_; }

  // images: [N, S, S, in_channels] -> [N, S, S, out_channels].
  // Train mode updates batch-norm running statistics.
  Tensor forward(const Tensor& images, Mode mode) const;

  std::vector<LayerInfo> layers() const;
  // Labels joined with " - ".
  std::string architecture() const;

 private:
  struct DownParams {
    Tensor w;  // [4,4,in,out]
    BatchNormParams bn;
  };

  Tensor forward_transformer(const Tensor& images, Mode mode) const;
  Tensor forward_baseline(const Tensor& images, Mode mode) const;

  ModelConfig config_;
  ParameterStore store_;
  PatchEncoderParams patch_;
  std::vector<TransformerLayerParams> transformer_;
  std::vector<UpsampleStageParams> stages_;
  std::vector<SkipConvParams> skips_;
  std::vector<DownParams> down_;
  OutputHeadParams head_;
};

Generator build_generator(const ModelConfig& config);

}  // namespace t2i
