// Exercises the shared library through its C header only.

#include <doctest.h>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "t2i/t2i.h"

namespace fs = std::filesystem;

namespace {

t2i_run_config* small_config(const std::string& out_dir) {
  t2i_run_config* c = nullptr;
  REQUIRE(t2i_run_config_new(&c) == T2I_OK);
  const char* kv[][2] = {{"image_size", "32"}, {"patch_size", "8"},     {"embed_dim", "16"},
                         {"ffn_width", "16"},  {"num_layers", "1"},     {"schedule", "32:32,16:16,8:8"},
                         {"data", "shapes:n=2"}, {"epochs", "1"},       {"batch_size", "2"},
                         {"log_every", "0"},   {"montage_every", "0"}};
  for (auto& p : kv) REQUIRE(t2i_run_config_set(c, p[0], p[1]) == T2I_OK);
  REQUIRE(t2i_run_config_set(c, "out_dir", out_dir.c_str()) == T2I_OK);
  return c;
}

}  // namespace

TEST_CASE("version and log level") {
  CHECK(std::strlen(t2i_version()) > 0);
  t2i_set_log_level(4);
}

TEST_CASE("run config handle") {
  t2i_run_config* c = nullptr;
  REQUIRE(t2i_run_config_new(&c) == T2I_OK);
  CHECK(t2i_run_config_set(c, "epochs", "12") == T2I_OK);
  char buf[64];
  size_t len = 0;
  CHECK(t2i_run_config_get(c, "epochs", buf, sizeof buf, &len) == T2I_OK);
  CHECK(std::string(buf) == "12");
  CHECK(len == 2);

  CHECK(t2i_run_config_set(c, "warp", "9") == T2I_ERR_CONFIG);
  CHECK(std::string(t2i_last_error()).find("warp") != std::string::npos);
  CHECK(std::string(t2i_last_error_kind()) == "config");
  CHECK(t2i_run_config_set(c, "epochs", "many") == T2I_ERR_CONFIG);
  CHECK(t2i_run_config_get(c, "nope", buf, sizeof buf, &len) == T2I_ERR_CONFIG);

  CHECK(t2i_run_config_text(c, nullptr, 0, &len) == T2I_OK);
  std::vector<char> text(len + 1);
  CHECK(t2i_run_config_text(c, text.data(), text.size(), &len) == T2I_OK);
  CHECK(std::string(text.data()).find("epochs=12\n") != std::string::npos);
  CHECK(t2i_run_config_text(c, buf, 4, &len) == T2I_ERR_CONFIG);

  CHECK(t2i_run_config_load(c, "/nonexistent/cfg.txt") == T2I_ERR_CONFIG);
  CHECK(t2i_run_config_set(nullptr, "epochs", "1") == T2I_ERR_CONFIG);
  CHECK(std::string(t2i_last_error_kind()) == "contract");
  t2i_run_config_free(c);
  t2i_run_config_free(nullptr);
}

TEST_CASE("config file on top of existing values") {
  const auto dir = fs::temp_directory_path() / "t2i_test_capi_cfg";
  fs::create_directories(dir);
  const auto path = (dir / "run.txt").string();
  std::FILE* f = std::fopen(path.c_str(), "w");
  std::fputs("# file\nepochs=5\nvariant=A\n", f);
  std::fclose(f);
  t2i_run_config* c = nullptr;
  REQUIRE(t2i_run_config_new(&c) == T2I_OK);
  t2i_run_config_set(c, "batch_size", "3");
  CHECK(t2i_run_config_load(c, path.c_str()) == T2I_OK);
  char buf[32];
  t2i_run_config_get(c, "batch_size", buf, sizeof buf, nullptr);
  CHECK(std::string(buf) == "3");
  t2i_run_config_get(c, "epochs", buf, sizeof buf, nullptr);
  CHECK(std::string(buf) == "5");
  t2i_run_config_free(c);
  fs::remove_all(dir);
}

TEST_CASE("model handle") {
  const auto dir = fs::temp_directory_path() / "t2i_test_capi_model";
  fs::create_directories(dir);
  t2i_run_config* c = small_config(dir.string());
  t2i_model* m = nullptr;
  REQUIRE(t2i_model_new(c, &m) == T2I_OK);
  t2i_model_info info{};
  REQUIRE(t2i_model_info_get(m, &info) == T2I_OK);
  CHECK(info.image_size == 32);
  CHECK(info.out_channels == 3);
  CHECK(info.segmentation == 1);
  CHECK(info.parameter_count > 0);

  size_t len = 0;
  REQUIRE(t2i_model_architecture(m, nullptr, 0, &len) == T2I_OK);
  std::vector<char> arch(len + 1);
  REQUIRE(t2i_model_architecture(m, arch.data(), arch.size(), &len) == T2I_OK);
  CHECK(std::string(arch.data()).rfind("P8 - PE - TL", 0) == 0);

  const size_t n_in = 2 * 32 * 32 * 3, n_out = 2 * 32 * 32 * 3;
  std::vector<double> x(n_in), y1(n_out), y2(n_out);
  for (size_t i = 0; i < n_in; ++i) x[i] = static_cast<double>(i % 17) / 8.0 - 1.0;
  REQUIRE(t2i_model_forward(m, x.data(), 2, y1.data(), y1.size()) == T2I_OK);
  CHECK(t2i_model_forward(m, x.data(), 2, y2.data(), y2.size() - 1) == T2I_ERR_CONFIG);
  CHECK(std::string(t2i_last_error_kind()) == "dimension");

  const auto ckpt = (dir / "m.ckpt").string();
  REQUIRE(t2i_model_save(m, ckpt.c_str()) == T2I_OK);
  t2i_model* back = nullptr;
  REQUIRE(t2i_model_load(ckpt.c_str(), &back) == T2I_OK);
  REQUIRE(t2i_model_forward(back, x.data(), 2, y2.data(), y2.size()) == T2I_OK);
  CHECK(std::memcmp(y1.data(), y2.data(), n_out * sizeof(double)) == 0);

  t2i_model* missing = nullptr;
  CHECK(t2i_model_load((dir / "none.ckpt").string().c_str(), &missing) == T2I_ERR_DATA);
  CHECK(std::string(t2i_last_error_kind()) == "io");
  CHECK(missing == nullptr);
  std::FILE* f = std::fopen((dir / "junk.ckpt").string().c_str(), "wb");
  std::fputs("not a checkpoint at all", f);
  std::fclose(f);
  CHECK(t2i_model_load((dir / "junk.ckpt").string().c_str(), &missing) == T2I_ERR_DATA);
  CHECK(std::string(t2i_last_error_kind()) == "format");

  t2i_model_free(back);
  t2i_model_free(m);
  t2i_run_config_free(c);
  fs::remove_all(dir);
}

TEST_CASE("commands through the C API") {
  const auto dir = fs::temp_directory_path() / "t2i_test_capi_cmd";
  fs::remove_all(dir);
  t2i_run_config* c = small_config(dir.string());
  REQUIRE(t2i_train(c) == T2I_OK);
  CHECK(std::string(t2i_last_summary()).find("trained variant C") != std::string::npos);
  CHECK(fs::exists(dir / "model.ckpt"));
  REQUIRE(t2i_eval(c) == T2I_OK);
  CHECK(std::string(t2i_last_summary()).rfind("Model", 0) == 0);
  CHECK(fs::exists(dir / "metrics.txt"));
  CHECK(t2i_infer((dir / "model.ckpt").string().c_str(), (dir / "absent.ppm").string().c_str(),
                  (dir / "o.ppm").string().c_str()) == T2I_ERR_DATA);
  t2i_run_config_set(c, "data", "depth:n=2");
  CHECK(t2i_eval(c) == T2I_ERR_CONFIG);
  t2i_run_config_free(c);
  fs::remove_all(dir);
}
