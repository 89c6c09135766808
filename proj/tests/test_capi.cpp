#include <cmath>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "depthforge/depthforge.h"
#include "doctest.h"
#include "test_support.hpp"

using depthforge::testing::TempDir;

TEST_CASE("status strings and last error") {
  CHECK(std::string(df_status_name(DF_OK)) == "ok");
  CHECK(std::string(df_status_name(DF_E_DIVERGED)) == "diverged");
  CHECK(df_inject_fault("bogus") == DF_E_INVALID_ARGUMENT);
  CHECK(std::string(df_last_error()).find("bogus") != std::string::npos);
  CHECK(df_inject_fault("none") == DF_OK);
  CHECK(std::string(df_last_error()).empty());
  CHECK(df_set_threads(-1) == DF_E_INVALID_ARGUMENT);
  CHECK(df_set_threads(2) == DF_OK);
  CHECK(df_threads() == 2);
  CHECK(df_set_threads(1) == DF_OK);
}

TEST_CASE("null arguments are rejected, not dereferenced") {
  df_config* cfg = nullptr;
  CHECK(df_config_load(nullptr, &cfg) == DF_E_INVALID_ARGUMENT);
  CHECK(df_config_parse("lr = 1", nullptr) == DF_E_INVALID_ARGUMENT);
  CHECK(df_eval_pairs(nullptr, nullptr, 0, nullptr) == DF_E_INVALID_ARGUMENT);
  CHECK(df_dataset_size(nullptr) == 0);
  df_config_free(nullptr);
  df_model_free(nullptr);
  df_dataset_free(nullptr);
}

TEST_CASE("config errors map to DF_E_CONFIG") {
  df_config* cfg = nullptr;
  CHECK(df_config_parse("lr = 0.1\n", &cfg) == DF_E_CONFIG);
  CHECK(cfg == nullptr);
  CHECK(std::string(df_last_error()).find("missing config key") != std::string::npos);
  CHECK(df_config_load("/nonexistent/x.cfg", &cfg) != DF_OK);
}

TEST_CASE("metrics through the C API") {
  const double pred[] = {3.0}, gt[] = {1.0};
  df_metrics m{};
  REQUIRE(df_eval_pairs(pred, gt, 1, &m) == DF_OK);
  CHECK(m.rmse == doctest::Approx(2.0));
  CHECK(m.srd == doctest::Approx(4.0));
  char row[128];
  REQUIRE(df_metrics_csv_row(&m, row, sizeof row) == DF_OK);
  CHECK(std::string(row).rfind("2.000000,", 0) == 0);
  char tiny[4];
  CHECK(df_metrics_csv_row(&m, tiny, sizeof tiny) == DF_E_INVALID_ARGUMENT);
  const double zero[] = {0.0};
  CHECK(df_eval_pairs(zero, gt, 1, &m) == DF_E_INVALID_ARGUMENT);
  CHECK(std::string(df_protocol_names()) == "eigen80,garg50,ablation");
  CHECK(std::string(df_metrics_csv_header()) == "rmse,rmse_log,ard,srd,acc1,acc2,acc3");
}

TEST_CASE("generate, load, train, predict through handles") {
  TempDir tmp("capi");
  df_gen_params g{6, 64, 32, 0.5, 3};
  REQUIRE(df_generate((tmp / "data").c_str(), &g) == DF_OK);
  g.gt_density = 0.0;
  CHECK(df_generate((tmp / "bad").c_str(), &g) == DF_E_INVALID_ARGUMENT);

  df_dataset* ds = nullptr;
  REQUIRE(df_dataset_load((tmp / "data").c_str(), &ds) == DF_OK);
  CHECK(df_dataset_size(ds) == 6);
  df_dataset* missing = nullptr;
  CHECK(df_dataset_load((tmp / "nothing").c_str(), &missing) == DF_E_IO);

  const char* text =
      "net.base_width = 64\nnet.blocks_per_stage = 1,1\nnet.width_multiplier = 1/8\nnet.use_long_skips = true\n"
      "net.dropout_p = 0\nnet.init_rho = 5e-4\nlr = 0.01\nmomentum = 0.9\nweight_decay = 4e-5\nbatch_size = 3\n"
      "max_epochs = 2\nbeta = 1\ngamma = 0.5\nregularizer_weight = 1\nsigma = 1\neta = 1/255\nseed = 0\n"
      "unsup_excludes_gt = false\nnormalize_terms = true\nearly_stop_patience = 3\naugment = true\n"
      "grad_clip_norm = 10\nsupervised_norm = berhu\n";
  df_config* cfg = nullptr;
  REQUIRE(df_config_parse(text, &cfg) == DF_OK);
  CHECK(std::string(df_config_text(cfg)).find("batch_size = 3") != std::string::npos);

  struct Seen {
    int rows = 0;
    int64_t last_t = 0;
  } seen;
  df_train_result res{};
  const df_status s = df_train(
      ds, ds, cfg, (tmp / "run").c_str(), nullptr,
      [](const df_epoch_log* r, void* u) {
        auto* v = static_cast<Seen*>(u);
        ++v->rows;
        v->last_t = r->t;
      },
      &seen, &res);
  REQUIRE_MESSAGE(s == DF_OK, df_last_error());
  CHECK(res.epochs == 2);
  CHECK(seen.rows == 2);
  CHECK(seen.last_t == 4);
  CHECK(std::isfinite(res.best_val));

  df_model* model = nullptr;
  REQUIRE(df_model_load((tmp / "run/last.ckpt").c_str(), &model) == DF_OK);
  CHECK(df_model_iteration(model) == 5);
  std::vector<double> img(32 * 64, 0.5), rho(32 * 64, -1.0);
  REQUIRE(df_model_predict(model, img.data(), 32, 64, rho.data()) == DF_OK);
  for (double v : rho) CHECK(v > 0.0);
  CHECK(df_model_predict(model, img.data(), 2, 2, rho.data()) == DF_E_SHAPE);
  df_model_free(model);

  REQUIRE(df_predict_dir((tmp / "run/best.ckpt").c_str(), (tmp / "data").c_str(), (tmp / "pred").c_str()) == DF_OK);
  df_metrics m{};
  REQUIRE(df_eval_dirs((tmp / "pred").c_str(), (tmp / "data").c_str(), "ablation", nullptr, &m) == DF_OK);
  CHECK(m.count > 0);
  const double crop[] = {0.5, 1.0, 0.0, 1.0};
  df_metrics mc{};
  REQUIRE(df_eval_dirs((tmp / "pred").c_str(), (tmp / "data").c_str(), "eigen80", crop, &mc) == DF_OK);
  CHECK(df_eval_dirs((tmp / "pred").c_str(), (tmp / "data").c_str(), "nope", nullptr, &m) == DF_E_INVALID_ARGUMENT);

  df_config_free(cfg);
  df_dataset_free(ds);
}

TEST_CASE("divergence reports the failing iteration") {
  TempDir tmp("capi_div");
  df_gen_params g{3, 64, 32, 1.0, 1};
  REQUIRE(df_generate((tmp / "data").c_str(), &g) == DF_OK);
  df_dataset* ds = nullptr;
  REQUIRE(df_dataset_load((tmp / "data").c_str(), &ds) == DF_OK);
  const char* text =
      "net.base_width = 64\nnet.blocks_per_stage = 1,1\nnet.width_multiplier = 1/8\nnet.use_long_skips = true\n"
      "net.dropout_p = 0\nnet.init_rho = 5e-4\nlr = 1e12\nmomentum = 0.9\nweight_decay = 4e-5\nbatch_size = 3\n"
      "max_epochs = 5\nbeta = 1\ngamma = 0.5\nregularizer_weight = 1\nsigma = 1\neta = 1/255\nseed = 0\n"
      "unsup_excludes_gt = false\nnormalize_terms = true\nearly_stop_patience = 3\naugment = false\n"
      "grad_clip_norm = 0\nsupervised_norm = berhu\n";
  df_config* cfg = nullptr;
  REQUIRE(df_config_parse(text, &cfg) == DF_OK);
  df_train_result res{};
  CHECK(df_train(ds, ds, cfg, nullptr, nullptr, nullptr, nullptr, &res) == DF_E_DIVERGED);
  CHECK(res.diverged_at >= 1);
  CHECK(std::string(df_last_error()).find("diverged") != std::string::npos);
  df_config_free(cfg);
  df_dataset_free(ds);
}

TEST_CASE("verify through the C API") {
  int passed = 0;
  const char* table = nullptr;
  int checks = 0;
  REQUIRE(df_verify("quick", [](const char*, int, const char*, double, void* u) { ++*static_cast<int*>(u); }, &checks,
                    &passed, &table) == DF_OK);
  CHECK(passed == 1);
  CHECK(checks >= 9);
  CHECK(std::string(table).empty());
  CHECK(df_verify("slow", nullptr, nullptr, &passed, &table) == DF_E_INVALID_ARGUMENT);
  REQUIRE(df_inject_fault("berhu_branch") == DF_OK);
  REQUIRE(df_verify("quick", nullptr, nullptr, &passed, nullptr) == DF_OK);
  CHECK(passed == 0);
  REQUIRE(df_inject_fault("none") == DF_OK);
}
