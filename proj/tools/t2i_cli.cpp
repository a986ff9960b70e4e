// t2i command line: train / eval / infer / compare over the C API.

#include <CLI11.hpp>

#include <cstdio>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "t2i/t2i.h"

namespace {

struct RunFlags {
  std::string config_file;
  std::vector<std::string> sets;
  // config key, value given on the command line
  std::vector<std::pair<std::string, std::optional<std::string>>> values;
  bool self_eval = false;
};

void add_run_flags(CLI::App* cmd, RunFlags& f) {
  cmd->add_option("-c,--config", f.config_file, "key=value config file")->check(CLI::ExistingFile);
  cmd->add_option("--set", f.sets, "override any config key (key=value), repeatable");
  static const std::pair<const char*, const char*> kFlags[] = {
      {"--variant", "variant"},         {"--task", "task"},
      {"--data", "data"},               {"--synthetic", "data"},
      {"--eval-data", "eval_data"},     {"--epochs", "epochs"},
      {"--batch-size", "batch_size"},   {"--max-steps", "max_steps"},
      {"--seed", "seed"},               {"--out", "out_dir"},
      {"--image-size", "image_size"},   {"--patch-size", "patch_size"},
      {"--lr", "lr"},                   {"--extractor", "extractor"},
      {"--montage-every", "montage_every"}, {"--checkpoint", "checkpoint"},
  };
  f.values.reserve(std::size(kFlags));
  for (const auto& [flag, key] : kFlags) {
    f.values.emplace_back(key, std::nullopt);
    cmd->add_option(flag, f.values.back().second, std::string("sets ") + key);
  }
}

int report(t2i_status s) {
  if (s != T2I_OK) std::fprintf(stderr, "error (%s): %s\n", t2i_last_error_kind(), t2i_last_error());
  return static_cast<int>(s);
}

// Config file first, then --set pairs, then named flags: flags win.
int build_config(const RunFlags& f, t2i_run_config* cfg) {
  if (!f.config_file.empty()) {
    if (auto s = t2i_run_config_load(cfg, f.config_file.c_str()); s != T2I_OK) return report(s);
  }
  for (const auto& kv : f.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      std::fprintf(stderr, "error (config): --set expects key=value, got '%s'\n", kv.c_str());
      return T2I_ERR_CONFIG;
    }
    const std::string key = kv.substr(0, eq), value = kv.substr(eq + 1);
    if (auto s = t2i_run_config_set(cfg, key.c_str(), value.c_str()); s != T2I_OK) return report(s);
  }
  for (const auto& [key, value] : f.values) {
    if (!value) continue;
    if (auto s = t2i_run_config_set(cfg, key.c_str(), value->c_str()); s != T2I_OK) return report(s);
  }
  if (f.self_eval) {
    if (auto s = t2i_run_config_set(cfg, "self_eval", "true"); s != T2I_OK) return report(s);
  }
  return 0;
}

int run(const RunFlags& f, t2i_status (*command)(const t2i_run_config*)) {
  t2i_run_config* cfg = nullptr;
  if (auto s = t2i_run_config_new(&cfg); s != T2I_OK) return report(s);
  int rc = build_config(f, cfg);
  if (rc == 0) {
    rc = report(command(cfg));
    if (rc == 0) std::fputs(t2i_last_summary(), stdout);
  }
  t2i_run_config_free(cfg);
  return rc;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tensor-to-image training and evaluation"};
  app.require_subcommand(1);
  app.fallthrough();
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "only warnings and errors on stderr");
  app.set_version_flag("--version", std::string(t2i_version()));

  RunFlags train_flags, eval_flags, compare_flags;
  auto* train = app.add_subcommand("train", "train one model and write checkpoint, log and montages");
  add_run_flags(train, train_flags);
  auto* eval = app.add_subcommand("eval", "score a checkpoint: SSIM, FID and IS");
  add_run_flags(eval, eval_flags);
  eval->add_flag("--self-eval", eval_flags.self_eval, "score the targets against themselves");
  auto* compare = app.add_subcommand("compare", "train Autoencoder, U-Net and variant C under one budget");
  add_run_flags(compare, compare_flags);

  std::string ckpt, image_in, image_out;
  auto* infer = app.add_subcommand("infer", "run one image through a checkpoint");
  infer->add_option("checkpoint", ckpt, "checkpoint file")->required();
  infer->add_option("input", image_in, "input PPM")->required();
  infer->add_option("output", image_out, "output PPM")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : T2I_ERR_CONFIG;
  }
  t2i_set_log_level(quiet ? 2 : 1);

  if (*train) return run(train_flags, t2i_train);
  if (*eval) return run(eval_flags, t2i_eval);
  if (*compare) return run(compare_flags, t2i_compare);
  if (*infer) {
    const int rc = report(t2i_infer(ckpt.c_str(), image_in.c_str(), image_out.c_str()));
    if (rc == 0) std::fputs(t2i_last_summary(), stdout);
    return rc;
  }
  return T2I_ERR_CONFIG;
}
