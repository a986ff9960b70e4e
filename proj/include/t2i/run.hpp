#pragma once

// Run configuration and the train / eval / infer / compare commands.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <string_view>

#include "t2i/data.hpp"
#include "t2i/generator.hpp"
#include "t2i/metrics.hpp"
#include "t2i/training.hpp"

namespace t2i {

// "shapes:n=8,classes=3,border=2", "depth:n=8", "manifest:<path>". A
// missing seed= follows the run seed.
struct DatasetSpec {
  enum class Source { shapes, depth, manifest } source = Source::shapes;
  std::size_t n = 8;
  std::size_t classes = 3;
  std::size_t border = 2;
  std::optional<std::uint64_t> seed;
  std::string path;
};
DatasetSpec parse_dataset_spec(std::string_view text);
std::string to_string(const DatasetSpec& spec);

Dataset make_dataset(const DatasetSpec& spec, std::size_t image_size, std::uint64_t run_seed);

struct RunConfig {
  ModelConfig model;  // model.seed is the run seed
  DatasetSpec data;
  std::optional<DatasetSpec> eval_data;  // eval defaults to the training data
  std::size_t epochs = 50;
  std::size_t batch_size = 2;
  std::size_t max_steps = 0;
  AdamConfig adam;
  std::string out_dir = "runs/t2i";
  std::string extractor = "pixel";  // pixel | projection | classifier
  std::size_t montage_every = 10;   // epochs; 0 keeps only the final montage
  std::size_t montage_rows = 4;
  std::size_t log_every = 10;       // steps between progress lines
  std::string checkpoint;           // eval input; empty means <out_dir>/model.ckpt
  bool self_eval = false;           // eval scores the targets against themselves
  std::set<std::string> explicit_keys;

  std::uint64_t seed() const { return model.seed; }
  std::string checkpoint_path() const;
};

// Returns false for an unknown key; bad values throw ConfigError.
bool set_run_config_key(RunConfig& c, std::string_view key, std::string_view value);
std::optional<std::string> get_run_config_key(const RunConfig& c, std::string_view key);
// key=value lines, '#' comments; later lines win.
void apply_run_config_text(RunConfig& c, std::string_view text);
void apply_run_config_file(RunConfig& c, const std::string& path);
RunConfig load_run_config(const std::string& path);
// Full echo, readable by load_run_config.
std::string to_text(const RunConfig& c);

// Model config for a dataset: task and out_channels follow the data. An
// explicitly set task or out_channels that disagrees is a ConfigError.
ModelConfig model_for_dataset(const RunConfig& c, const Dataset& data);

struct CommandResult {
  std::string summary;  // human-readable, printed by the CLI
};

// Writes run_config.txt, train_log.txt, model.ckpt and
// montage_epoch_XXXX.ppm / montage_final.ppm under out_dir.
CommandResult cmd_train(const RunConfig& c);
// Writes metrics.txt and metrics.kv under out_dir.
CommandResult cmd_eval(const RunConfig& c);
CommandResult cmd_infer(const std::string& checkpoint, const std::string& image_in, const std::string& image_out);
// Trains autoencoder, unet and C into out_dir/<variant>/ and writes
// metrics.txt, metrics.kv and compare_montage.ppm.
CommandResult cmd_compare(const RunConfig& c);

// Eval-mode outputs rendered as images: segmentation argmax maps in the
// palette, regression maps through the [-1,1] -> byte mapping.
std::vector<Image8> render_outputs(const Generator& g, const Dataset& data, std::size_t limit = 0);
std::vector<Image8> render_targets(const Dataset& data, std::size_t limit = 0);

FeatureExtractor make_extractor(const std::string& name, const std::vector<Tensor>& reference, std::uint64_t seed);

// Metrics of rendered outputs against rendered targets.
MetricsRow evaluate_images(const std::string& model, const std::vector<Image8>& outputs,
                           const std::vector<Image8>& targets, const FeatureExtractor& extractor);

}  // namespace t2i
