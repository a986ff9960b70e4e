#include "t2i/run.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "t2i/checkpoint.hpp"
#include "t2i/errors.hpp"
#include "t2i/log.hpp"
#include "text.hpp"

namespace t2i {

namespace fs = std::filesystem;
using text::parse_bool;
using text::parse_number;
using text::split;
using text::trim;

// ---- dataset spec -------------------------------------------------------------

DatasetSpec parse_dataset_spec(std::string_view s) {
  DatasetSpec d;
  const auto colon = s.find(':');
  const std::string_view kind = s.substr(0, colon);
  const std::string_view rest = colon == std::string_view::npos ? std::string_view{} : s.substr(colon + 1);
  if (kind == "manifest") {
    if (rest.empty()) throw ConfigError("data: manifest needs a path (manifest:<path>)");
    d.source = DatasetSpec::Source::manifest;
    d.path = std::string(rest);
    return d;
  }
  if (kind == "shapes") {
    d.source = DatasetSpec::Source::shapes;
  } else if (kind == "depth") {
    d.source = DatasetSpec::Source::depth;
  } else {
    throw ConfigError("data: unknown source '" + std::string(kind) + "' (expected shapes, depth or manifest)");
  }
  if (rest.empty()) return d;
  for (auto item : split(rest, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string_view::npos) throw ConfigError("data: expected key=value, got '" + std::string(item) + "'");
    const auto key = item.substr(0, eq), value = item.substr(eq + 1);
    if (key == "n") {
      d.n = parse_number<std::size_t>("data.n", value);
    } else if (key == "seed") {
      d.seed = parse_number<std::uint64_t>("data.seed", value);
    } else if (key == "classes" && d.source == DatasetSpec::Source::shapes) {
      d.classes = parse_number<std::size_t>("data.classes", value);
    } else if (key == "border" && d.source == DatasetSpec::Source::shapes) {
      d.border = parse_number<std::size_t>("data.border", value);
    } else {
      throw ConfigError("data: unknown option '" + std::string(key) + "' for " + std::string(kind));
    }
  }
  if (d.n == 0) throw ConfigError("data: n must be > 0");
  return d;
}

std::string to_string(const DatasetSpec& d) {
  std::ostringstream os;
  switch (d.source) {
    case DatasetSpec::Source::manifest:
      return "manifest:" + d.path;
    case DatasetSpec::Source::shapes:
      os << "shapes:n=" << d.n << ",classes=" << d.classes << ",border=" << d.border;
      break;
    case DatasetSpec::Source::depth:
      os << "depth:n=" << d.n;
      break;
  }
  if (d.seed) os << ",seed=" << *d.seed;
  return os.str();
}

Dataset make_dataset(const DatasetSpec& spec, std::size_t image_size, std::uint64_t run_seed) {
  const std::uint64_t seed = spec.seed.value_or(run_seed);
  switch (spec.source) {
    case DatasetSpec::Source::shapes:
      return synth_segmentation_dataset(spec.n, image_size, spec.classes, seed, spec.border);
    case DatasetSpec::Source::depth:
      return synth_depth_dataset(spec.n, image_size, seed);
    case DatasetSpec::Source::manifest: {
      Dataset d = load_manifest(spec.path);
      if (d.image_size != image_size) {
        throw ConfigError("manifest image size " + std::to_string(d.image_size) + " differs from image_size " +
                          std::to_string(image_size));
      }
      return d;
    }
  }
  throw ConfigError("unknown dataset source");
}

// ---- run config ---------------------------------------------------------------

std::string RunConfig::checkpoint_path() const {
  return checkpoint.empty() ? (fs::path(out_dir) / "model.ckpt").string() : checkpoint;
}

bool set_run_config_key(RunConfig& c, std::string_view key, std::string_view v) {
  auto num = [&](std::size_t& field) { field = parse_number<std::size_t>(key, v); };
  auto real = [&](double& field) { field = parse_number<double>(key, v); };
  if (key == "epochs") num(c.epochs);
  else if (key == "batch_size") num(c.batch_size);
  else if (key == "max_steps") num(c.max_steps);
  else if (key == "lr") real(c.adam.lr);
  else if (key == "beta1") real(c.adam.beta1);
  else if (key == "beta2") real(c.adam.beta2);
  else if (key == "eps") real(c.adam.eps);
  else if (key == "data") c.data = parse_dataset_spec(v);
  else if (key == "eval_data") c.eval_data = v.empty() ? std::nullopt : std::optional(parse_dataset_spec(v));
  else if (key == "out_dir") c.out_dir = std::string(v);
  else if (key == "extractor") {
    if (v != "pixel" && v != "projection" && v != "classifier") {
      throw ConfigError("extractor must be pixel, projection or classifier, got '" + std::string(v) + "'");
    }
    c.extractor = std::string(v);
  } else if (key == "montage_every") num(c.montage_every);
  else if (key == "montage_rows") num(c.montage_rows);
  else if (key == "log_every") num(c.log_every);
  else if (key == "checkpoint") c.checkpoint = std::string(v);
  else if (key == "self_eval") c.self_eval = parse_bool(key, v);
  else if (!set_model_config_key(c.model, key, v)) return false;
  c.explicit_keys.insert(std::string(key));
  return true;
}

std::optional<std::string> get_run_config_key(const RunConfig& c, std::string_view key) {
  const std::string all = to_text(c);
  for (auto line : split(all, '\n')) {
    const auto eq = line.find('=');
    if (eq != std::string_view::npos && line.substr(0, eq) == key) return std::string(line.substr(eq + 1));
  }
  return std::nullopt;
}

void apply_run_config_text(RunConfig& c, std::string_view text) {
  std::size_t line_no = 0;
  for (auto raw : split(text, '\n')) {
    ++line_no;
    const auto line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value, got '" +
                        std::string(line) + "'");
    }
    const auto key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    try {
      if (!set_run_config_key(c, key, value)) throw ConfigError("unknown key '" + std::string(key) + "'");
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
}

void apply_run_config_file(RunConfig& c, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    apply_run_config_text(c, ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

RunConfig load_run_config(const std::string& path) {
  RunConfig c;
  apply_run_config_file(c, path);
  return c;
}

std::string to_text(const RunConfig& c) {
  std::ostringstream os;
  os.precision(17);
  os << "# model\n" << to_text(c.model);
  os << "# data and budget\n"
     << "data=" << to_string(c.data) << "\n"
     << "eval_data=" << (c.eval_data ? to_string(*c.eval_data) : std::string()) << "\n"
     << "epochs=" << c.epochs << "\n"
     << "batch_size=" << c.batch_size << "\n"
     << "max_steps=" << c.max_steps << "\n"
     << "lr=" << c.adam.lr << "\n"
     << "beta1=" << c.adam.beta1 << "\n"
     << "beta2=" << c.adam.beta2 << "\n"
     << "eps=" << c.adam.eps << "\n"
     << "# outputs\n"
     << "out_dir=" << c.out_dir << "\n"
     << "extractor=" << c.extractor << "\n"
     << "montage_every=" << c.montage_every << "\n"
     << "montage_rows=" << c.montage_rows << "\n"
     << "log_every=" << c.log_every << "\n"
     << "checkpoint=" << c.checkpoint << "\n"
     << "self_eval=" << (c.self_eval ? "true" : "false") << "\n";
  return os.str();
}

ModelConfig model_for_dataset(const RunConfig& c, const Dataset& data) {
  ModelConfig m = c.model;
  if (c.explicit_keys.count("task") && m.task != data.task) {
    throw ConfigError("task=" + to_string(m.task) + " does not match the " + to_string(data.task) + " dataset");
  }
  if (c.explicit_keys.count("out_channels") && m.out_channels != data.target_channels()) {
    throw ConfigError("out_channels=" + std::to_string(m.out_channels) + " does not match the dataset's " +
                      std::to_string(data.target_channels()) + " target channels");
  }
  m.task = data.task;
  m.out_channels = data.target_channels();
  m.validate();
  return m;
}

// ---- rendering ----------------------------------------------------------------

namespace {

constexpr std::size_t kEvalBatch = 8;

std::size_t capped(std::size_t n, std::size_t limit) { return limit == 0 ? n : std::min(n, limit); }

Image8 render_target(const Dataset& data, const PairedSample& s) {
  if (data.task == Task::segmentation) return render_labels(s.labels, data.image_size, data.image_size);
  return to_image8(s.target);
}

Image8 render_output(const Tensor& y, Task task) {
  if (task == Task::segmentation) return render_labels(argmax_labels(y), y.dim(1), y.dim(0));
  return to_image8(y);
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << content;
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<std::vector<Image8>> sample_rows(const Dataset& data, std::size_t rows) {
  std::vector<std::vector<Image8>> out;
  for (std::size_t i = 0; i < capped(data.samples.size(), rows); ++i) {
    out.push_back({to_image8(data.samples[i].input), render_target(data, data.samples[i])});
  }
  return out;
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

struct TrainedModel {
  Generator generator;
  TrainResult result;
  double seconds = 0;
};

TrainedModel train_into(const RunConfig& c, const ModelConfig& mc, const Dataset& data, const std::string& dir,
                        const std::string& label) {
  ensure_dir(dir);
  RunConfig echo = c;
  echo.model = mc;
  echo.out_dir = dir;
  write_text(fs::path(dir) / "run_config.txt", to_text(echo));
  const auto log_path = fs::path(dir) / "train_log.txt";
  fs::remove(log_path);

  TrainedModel tm{Generator(mc), {}, 0};
  const Generator& g = tm.generator;
  const auto base_rows = sample_rows(data, c.montage_rows);
  auto write_montage = [&](const std::string& name) {
    auto rows = base_rows;
    const auto outs = render_outputs(g, data, c.montage_rows);
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i].push_back(outs[i]);
    write_ppm(montage(rows), (fs::path(dir) / name).string());
  };

  TrainOptions opt;
  opt.epochs = c.epochs;
  opt.batch_size = c.batch_size;
  opt.max_steps = c.max_steps;
  opt.seed = c.seed();
  opt.adam = c.adam;
  opt.log_path = log_path.string();
  opt.checkpoint_path = (fs::path(dir) / "model.ckpt").string();
  opt.on_step = [&](const TrainRecord& r) {
    if (c.log_every != 0 && r.step % c.log_every == 0) {
      log_info(label + " step " + std::to_string(r.step) + " loss " + fmt(r.loss, 6));
    }
    return true;
  };
  opt.on_epoch = [&](std::size_t epoch) {
    if (c.montage_every != 0 && epoch % c.montage_every == 0) {
      char name[64];
      std::snprintf(name, sizeof name, "montage_epoch_%04zu.ppm", epoch);
      write_montage(name);
    }
  };
  const auto t0 = std::chrono::steady_clock::now();
  tm.result = train(tm.generator, data, opt);
  tm.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_montage("montage_final.ppm");
  return tm;
}

std::string budget_line(const std::string& model, const RunConfig& c, const TrainResult& r) {
  return "budget " + model + ": epochs=" + std::to_string(c.epochs) + " batch_size=" + std::to_string(c.batch_size) +
         " max_steps=" + std::to_string(c.max_steps) + " steps=" + std::to_string(r.log.size()) +
         " seed=" + std::to_string(c.seed()) + " lr=" + fmt(c.adam.lr, 6);
}

std::vector<Tensor> as_tensors(const std::vector<Image8>& images) {
  std::vector<Tensor> out;
  out.reserve(images.size());
  for (const auto& im : images) out.push_back(from_image8(im));
  return out;
}

void write_report(const std::string& dir, const MetricsReport& report) {
  write_text(fs::path(dir) / "metrics.txt", report.table());
  write_text(fs::path(dir) / "metrics.kv", report.key_values());
}

const char* kAggregationNote = "SSIM is the mean over output/target pairs; FID and IS are set-level";

}  // namespace

std::vector<Image8> render_outputs(const Generator& g, const Dataset& data, std::size_t limit) {
  const std::size_t n = capped(data.samples.size(), limit);
  std::vector<Image8> out;
  out.reserve(n);
  for (std::size_t b = 0; b < n; b += kEvalBatch) {
    std::vector<std::size_t> idx;
    for (std::size_t i = b; i < std::min(n, b + kEvalBatch); ++i) idx.push_back(i);
    const Tensor y = g.forward(batch_inputs(data, idx), Mode::eval);
    const std::size_t h = y.dim(1), w = y.dim(2), ch = y.dim(3), per = h * w * ch;
    for (std::size_t k = 0; k < idx.size(); ++k) {
      auto d = y.data().subspan(k * per, per);
      out.push_back(render_output(Tensor({h, w, ch}, {d.begin(), d.end()}), g.config().task));
    }
  }
  return out;
}

std::vector<Image8> render_targets(const Dataset& data, std::size_t limit) {
  std::vector<Image8> out;
  for (std::size_t i = 0; i < capped(data.samples.size(), limit); ++i) out.push_back(render_target(data, data.samples[i]));
  return out;
}

FeatureExtractor make_extractor(const std::string& name, const std::vector<Tensor>& reference, std::uint64_t seed) {
  if (name == "pixel") return FeatureExtractor::pixel_downsample();
  if (name == "projection") return FeatureExtractor::seeded_random_projection(16, seed);
  if (name == "classifier") {
    const std::size_t classes = std::clamp<std::size_t>(reference.size() / 2, 2, 4);
    return FeatureExtractor::trained_tiny_classifier(
        reference, FeatureExtractor::intensity_quantile_labels(reference, classes), classes);
  }
  throw ConfigError("unknown extractor '" + name + "'");
}

MetricsRow evaluate_images(const std::string& model, const std::vector<Image8>& outputs,
                           const std::vector<Image8>& targets, const FeatureExtractor& extractor) {
  if (outputs.size() != targets.size() || outputs.empty()) {
    throw DataError("evaluation needs equally sized nonempty output and target sets");
  }
  const auto out_t = as_tensors(outputs), tgt_t = as_tensors(targets);
  MetricsRow row;
  row.model = model;
  row.n_samples = outputs.size();
  row.ssim = mean_ssim(out_t, tgt_t);
  if (outputs.size() >= 2) row.fid = fid(tgt_t, out_t, extractor);
  row.is = inception_score(out_t, extractor);
  return row;
}

// ---- commands -----------------------------------------------------------------

CommandResult cmd_train(const RunConfig& c) {
  const Dataset data = make_dataset(c.data, c.model.image_size, c.seed());
  const ModelConfig mc = model_for_dataset(c, data);
  const std::string label = to_string(mc.variant);
  const auto tm = train_into(c, mc, data, c.out_dir, label);
  std::ostringstream os;
  os << "trained variant " << label << " on " << to_string(c.data) << ": " << tm.result.log.size() << " steps, "
     << tm.result.epochs_completed << " epochs";
  if (!tm.result.log.empty()) os << ", final loss " << fmt(tm.result.log.back().loss, 6);
  os << ", " << fmt(tm.seconds, 1) << " s\n"
     << "outputs in " << c.out_dir << "\n";
  return {os.str()};
}

CommandResult cmd_eval(const RunConfig& c) {
  auto loaded = load_checkpoint(c.checkpoint_path());
  const Generator& g = loaded.generator;
  const auto& spec = c.eval_data ? *c.eval_data : c.data;
  // without an explicit seed the data follows the seed the model was trained with
  const std::uint64_t seed = c.explicit_keys.count("seed") ? c.seed() : g.config().seed;
  const Dataset data = make_dataset(spec, g.config().image_size, seed);
  if (data.task != g.config().task || data.target_channels() != g.config().out_channels) {
    throw ConfigError("checkpoint (" + to_string(g.config().task) + ", " + std::to_string(g.config().out_channels) +
                      " channels) does not fit the " + to_string(data.task) + " dataset with " +
                      std::to_string(data.target_channels()) + " channels");
  }
  const auto targets = render_targets(data);
  const auto outputs = c.self_eval ? targets : render_outputs(g, data);
  const auto ex = make_extractor(c.extractor, as_tensors(targets), seed);
  MetricsReport report;
  report.extractor = ex.descriptor();
  report.rows.push_back(evaluate_images(c.self_eval ? "targets" : to_string(g.config().variant), outputs, targets, ex));
  report.notes.push_back(kAggregationNote);
  report.notes.push_back("checkpoint: " + c.checkpoint_path());
  report.notes.push_back("data: " + to_string(spec) + " (" + std::to_string(data.samples.size()) + " samples)");
  if (c.self_eval) report.notes.push_back("self-eval: targets scored against themselves");
  ensure_dir(c.out_dir);
  write_report(c.out_dir, report);
  return {report.table()};
}

CommandResult cmd_infer(const std::string& checkpoint, const std::string& image_in, const std::string& image_out) {
  auto loaded = load_checkpoint(checkpoint);
  const Generator& g = loaded.generator;
  const Tensor img = load_image(image_in);
  const std::size_t s = g.config().image_size;
  if (img.dim(0) != s || img.dim(1) != s) {
    throw DataError(image_in + " is " + std::to_string(img.dim(1)) + "x" + std::to_string(img.dim(0)) +
                    ", the model expects " + std::to_string(s) + "x" + std::to_string(s));
  }
  const Tensor x({1, s, s, 3}, {img.data().begin(), img.data().end()});
  const Tensor y = g.forward(x, Mode::eval);
  const Tensor y0({s, s, y.dim(3)}, {y.data().begin(), y.data().end()});
  write_ppm(render_output(y0, g.config().task), image_out);
  return {"wrote " + image_out + "\n"};
}

CommandResult cmd_compare(const RunConfig& c) {
  const Dataset data = make_dataset(c.data, c.model.image_size, c.seed());
  const auto& eval_spec = c.eval_data ? *c.eval_data : c.data;
  const Dataset eval = c.eval_data ? make_dataset(eval_spec, c.model.image_size, c.seed()) : data;
  struct Entry {
    Variant variant;
    const char* name;
  };
  const Entry entries[] = {{Variant::autoencoder, "Autoencoder"}, {Variant::unet, "U-Net"}, {Variant::C, "Ours"}};

  const auto targets = render_targets(eval);
  const auto ex = make_extractor(c.extractor, as_tensors(targets), c.seed());
  MetricsReport report;
  report.extractor = ex.descriptor();
  std::vector<std::vector<Image8>> columns;
  std::vector<std::string> budgets;
  for (const auto& e : entries) {
    RunConfig rc = c;
    rc.model.variant = e.variant;
    const ModelConfig mc = model_for_dataset(rc, data);
    const auto dir = (fs::path(c.out_dir) / to_string(e.variant)).string();
    const auto tm = train_into(rc, mc, data, dir, e.name);
    const auto outputs = render_outputs(tm.generator, eval);
    report.rows.push_back(evaluate_images(e.name, outputs, targets, ex));
    columns.push_back(std::vector<Image8>(outputs.begin(), outputs.begin() + capped(outputs.size(), c.montage_rows)));
    budgets.push_back(budget_line(e.name, c, tm.result));
  }
  report.notes.push_back(kAggregationNote);
  report.notes.push_back("data: " + to_string(c.data) + ", eval: " + to_string(eval_spec));
  for (const auto& b : budgets) report.notes.push_back(b);

  auto rows = sample_rows(eval, c.montage_rows);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (const auto& col : columns) rows[i].push_back(col[i]);
  ensure_dir(c.out_dir);
  write_ppm(montage(rows), (fs::path(c.out_dir) / "compare_montage.ppm").string());
  write_text(fs::path(c.out_dir) / "run_config.txt", to_text(c));
  write_report(c.out_dir, report);
  return {report.table() + "montage columns: Input | Target | Autoencoder | U-Net | Ours\n"};
}

}  // namespace t2i
