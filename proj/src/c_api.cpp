#include "t2i/t2i.h"

#include <cstring>
#include <exception>
#include <new>
#include <string>

#include "t2i/checkpoint.hpp"
#include "t2i/errors.hpp"
#include "t2i/log.hpp"
#include "t2i/run.hpp"

struct t2i_run_config {
  t2i::RunConfig config;
};

struct t2i_model {
  t2i::Generator generator;
};

namespace {

thread_local std::string last_error;
thread_local std::string last_kind;
thread_local std::string last_summary;

t2i_status status_for(t2i::ErrorKind kind) {
  using t2i::ErrorKind;
  switch (kind) {
    case ErrorKind::config:
    case ErrorKind::dimension:
    case ErrorKind::contract:
      return T2I_ERR_CONFIG;
    case ErrorKind::data:
    case ErrorKind::io:
    case ErrorKind::format:
    case ErrorKind::version:
    case ErrorKind::name_mismatch:
      return T2I_ERR_DATA;
    case ErrorKind::numeric:
      return T2I_ERR_NUMERIC;
  }
  return T2I_ERR_INTERNAL;
}

const char* kind_name(t2i::ErrorKind kind) {
  using t2i::ErrorKind;
  switch (kind) {
    case ErrorKind::config: return "config";
    case ErrorKind::dimension: return "dimension";
    case ErrorKind::data: return "data";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::format: return "format";
    case ErrorKind::version: return "version";
    case ErrorKind::name_mismatch: return "name_mismatch";
    case ErrorKind::contract: return "contract";
    case ErrorKind::io: return "io";
  }
  return "internal";
}

t2i_status fail(t2i_status s, const char* kind, const std::string& what) {
  last_error = what;
  last_kind = kind;
  return s;
}

template <class F>
t2i_status guarded(F&& f) {
  try {
    f();
    last_error.clear();
    last_kind.clear();
    return T2I_OK;
  } catch (const t2i::Error& e) {
    return fail(status_for(e.kind()), kind_name(e.kind()), e.what());
  } catch (const std::bad_alloc&) {
    return fail(T2I_ERR_INTERNAL, "internal", "out of memory");
  } catch (const std::exception& e) {
    return fail(T2I_ERR_INTERNAL, "internal", e.what());
  } catch (...) {
    return fail(T2I_ERR_INTERNAL, "internal", "unknown error");
  }
}

void require(const void* p, const char* what) {
  if (p == nullptr) throw t2i::ContractError(std::string(what) + " must not be null");
}

t2i_status copy_out(const std::string& s, char* buf, size_t capacity, size_t* length) {
  if (length) *length = s.size();
  if (buf == nullptr || capacity == 0) return T2I_OK;
  if (s.size() + 1 > capacity) {
    return fail(T2I_ERR_CONFIG, "contract",
                "buffer too small: need " + std::to_string(s.size() + 1) + " bytes, have " + std::to_string(capacity));
  }
  std::memcpy(buf, s.c_str(), s.size() + 1);
  return T2I_OK;
}

}  // namespace

extern "C" {

const char* t2i_version(void) { return "0.1.0"; }
const char* t2i_last_error(void) { return last_error.c_str(); }
const char* t2i_last_error_kind(void) { return last_kind.c_str(); }
const char* t2i_last_summary(void) { return last_summary.c_str(); }

void t2i_set_log_level(int level) {
  if (level < 0) level = 0;
  if (level > 4) level = 4;
  t2i::set_log_level(static_cast<t2i::LogLevel>(level));
}

t2i_status t2i_run_config_new(t2i_run_config** out) {
  return guarded([&] {
    require(out, "out");
    *out = new t2i_run_config{};
  });
}

void t2i_run_config_free(t2i_run_config* config) { delete config; }

t2i_status t2i_run_config_load(t2i_run_config* config, const char* path) {
  return guarded([&] {
    require(config, "config");
    require(path, "path");
    t2i::RunConfig merged = config->config;
    t2i::apply_run_config_file(merged, path);
    config->config = std::move(merged);
  });
}

t2i_status t2i_run_config_set(t2i_run_config* config, const char* key, const char* value) {
  return guarded([&] {
    require(config, "config");
    require(key, "key");
    require(value, "value");
    if (!t2i::set_run_config_key(config->config, key, value)) {
      throw t2i::ConfigError("unknown config key '" + std::string(key) + "'");
    }
  });
}

t2i_status t2i_run_config_get(const t2i_run_config* config, const char* key, char* buf, size_t capacity,
                              size_t* length) {
  std::string value;
  const auto s = guarded([&] {
    require(config, "config");
    require(key, "key");
    auto v = t2i::get_run_config_key(config->config, key);
    if (!v) throw t2i::ConfigError("unknown config key '" + std::string(key) + "'");
    value = *v;
  });
  return s == T2I_OK ? copy_out(value, buf, capacity, length) : s;
}

t2i_status t2i_run_config_text(const t2i_run_config* config, char* buf, size_t capacity, size_t* length) {
  std::string text;
  const auto s = guarded([&] {
    require(config, "config");
    text = t2i::to_text(config->config);
  });
  return s == T2I_OK ? copy_out(text, buf, capacity, length) : s;
}

t2i_status t2i_train(const t2i_run_config* config) {
  return guarded([&] {
    require(config, "config");
    last_summary = t2i::cmd_train(config->config).summary;
  });
}

t2i_status t2i_eval(const t2i_run_config* config) {
  return guarded([&] {
    require(config, "config");
    last_summary = t2i::cmd_eval(config->config).summary;
  });
}

t2i_status t2i_compare(const t2i_run_config* config) {
  return guarded([&] {
    require(config, "config");
    last_summary = t2i::cmd_compare(config->config).summary;
  });
}

t2i_status t2i_infer(const char* checkpoint, const char* image_in, const char* image_out) {
  return guarded([&] {
    require(checkpoint, "checkpoint");
    require(image_in, "image_in");
    require(image_out, "image_out");
    last_summary = t2i::cmd_infer(checkpoint, image_in, image_out).summary;
  });
}

t2i_status t2i_model_new(const t2i_run_config* config, t2i_model** out) {
  return guarded([&] {
    require(config, "config");
    require(out, "out");
    *out = new t2i_model{t2i::Generator(config->config.model)};
  });
}

t2i_status t2i_model_load(const char* path, t2i_model** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    auto loaded = t2i::load_checkpoint(path);
    *out = new t2i_model{std::move(loaded.generator)};
  });
}

t2i_status t2i_model_save(const t2i_model* model, const char* path) {
  return guarded([&] {
    require(model, "model");
    require(path, "path");
    t2i::save_checkpoint(model->generator, path);
  });
}

void t2i_model_free(t2i_model* model) { delete model; }

t2i_status t2i_model_info_get(const t2i_model* model, t2i_model_info* out) {
  return guarded([&] {
    require(model, "model");
    require(out, "out");
    const auto& c = model->generator.config();
    out->image_size = c.image_size;
    out->in_channels = c.in_channels;
    out->out_channels = c.out_channels;
    out->parameter_count = model->generator.parameters().trainable_scalar_count();
    out->segmentation = c.task == t2i::Task::segmentation ? 1 : 0;
  });
}

t2i_status t2i_model_architecture(const t2i_model* model, char* buf, size_t capacity, size_t* length) {
  std::string arch;
  const auto s = guarded([&] {
    require(model, "model");
    arch = model->generator.architecture();
  });
  return s == T2I_OK ? copy_out(arch, buf, capacity, length) : s;
}

t2i_status t2i_model_forward(const t2i_model* model, const double* input, size_t batch, double* output,
                             size_t output_length) {
  return guarded([&] {
    require(model, "model");
    require(input, "input");
    require(output, "output");
    const auto& c = model->generator.config();
    if (batch == 0) throw t2i::ContractError("batch must be > 0");
    const size_t s = c.image_size, in = batch * s * s * c.in_channels, out = batch * s * s * c.out_channels;
    if (output_length != out) {
      throw t2i::DimensionError("output buffer holds " + std::to_string(output_length) + " values, forward produces " +
                                std::to_string(out));
    }
    t2i::Tensor x({batch, s, s, c.in_channels}, std::vector<double>(input, input + in));
    const t2i::Tensor y = model->generator.forward(x, t2i::Mode::eval);
    std::memcpy(output, y.data().data(), out * sizeof(double));
  });
}

}  // extern "C"
