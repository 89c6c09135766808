#include <cstdio>
#include <cstdlib>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "depthforge/depthforge.h"

namespace {

enum Exit { kOk = 0, kVerifyFailed = 1, kUsage = 2, kDiverged = 3 };

int report(df_status s) {
  if (s == DF_OK) return kOk;
  std::fprintf(stderr, "error (%s): %s\n", df_status_name(s), df_last_error());
  return s == DF_E_DIVERGED ? kDiverged : kUsage;
}

bool parse_size(const std::string& text, size_t& w, size_t& h) {
  unsigned long a = 0, b = 0;
  char x = 0, tail = 0;
  if (std::sscanf(text.c_str(), "%lu%c%lu%c", &a, &x, &b, &tail) != 3 || (x != 'x' && x != 'X')) return false;
  w = a;
  h = b;
  return a > 0 && b > 0;
}

void print_epoch(const df_epoch_log* r, void*) {
  std::printf("epoch %zu t=%lld lambda=%.4g L_S=%.6g L_U=%.6g L_R=%.6g total=%.6g val=%.6g\n", r->epoch,
              static_cast<long long>(r->t), r->lambda_t, r->supervised, r->unsupervised, r->regularizer, r->total,
              r->val_total);
  std::fflush(stdout);
}

void print_check(const char* name, int passed, const char* detail, double seconds, void*) {
  std::printf("%s %s (%.2fs) %s\n", passed ? "PASS" : "FAIL", name, seconds, detail);
  std::fflush(stdout);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"depthforge: semi-supervised monocular depth on synthetic stereo"};
  app.require_subcommand(1);

  int threads = -1;
  bool deterministic = false;
  app.add_option("--threads", threads, "Worker cap (default: $DEPTHFORGE_THREADS, else all cores)");
  app.add_flag("--deterministic", deterministic, "Force reproducible reductions");

  df_gen_params gen{0, 64, 32, 1.0, 0};
  std::string gen_out, gen_size = "64x32";
  auto* cmd_gen = app.add_subcommand("gen", "Generate synthetic stereo samples");
  cmd_gen->add_option("--out", gen_out, "Output directory")->required();
  cmd_gen->add_option("--scenes", gen.scenes, "Number of samples")->required();
  cmd_gen->add_option("--size", gen_size, "Image size WxH");
  cmd_gen->add_option("--gt-density", gen.gt_density, "Fraction of pixels with ground truth, in (0, 1]");
  cmd_gen->add_option("--seed", gen.seed, "Seed");

  std::string data_dir, val_dir, config_path, train_out, resume;
  auto* cmd_train = app.add_subcommand("train", "Train a network");
  cmd_train->add_option("--data", data_dir, "Training samples")->required();
  cmd_train->add_option("--val", val_dir, "Validation samples")->required();
  cmd_train->add_option("--config", config_path, "Run config (key = value lines)")->required();
  cmd_train->add_option("--out", train_out, "Output directory")->required();
  cmd_train->add_option("--resume", resume, "Checkpoint to continue from");

  std::string checkpoint, images_dir, predict_out;
  auto* cmd_predict = app.add_subcommand("predict", "Predict depth for a directory of images");
  cmd_predict->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  cmd_predict->add_option("--images", images_dir, "Sample folders or *.png images")->required();
  cmd_predict->add_option("--out", predict_out, "Output directory")->required();

  std::string pred_dir, gt_dir, protocol = "eigen80";
  auto* cmd_eval = app.add_subcommand("eval", "Evaluate predictions against ground truth");
  cmd_eval->add_option("--pred", pred_dir, "Predictions (*.pfm inverse depth or *.png depth)")->required();
  cmd_eval->add_option("--gt", gt_dir, "Sample folders or 16-bit depth PNGs")->required();
  cmd_eval->add_option("--protocol", protocol, std::string("One of ") + df_protocol_names());
  std::vector<double> crop;
  cmd_eval->add_option("--crop", crop, "Override the crop: top,bottom,left,right as image fractions")
      ->expected(4)
      ->delimiter(',');

  std::string level = "quick", fault = "none";
  auto* cmd_verify = app.add_subcommand("verify", "Run the oracle suites");
  cmd_verify->add_option("--level", level, "quick or full")->check(CLI::IsMember({"quick", "full"}));
  cmd_verify->add_option("--inject-fault", fault, "Negative control: warp_sign, berhu_branch or weight_decay");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  if (threads < 0) {
    const char* env = std::getenv("DEPTHFORGE_THREADS");
    threads = 0;
    if (env && *env) {
      char* end = nullptr;
      const long v = std::strtol(env, &end, 10);
      if (*end != '\0' || v < 0) {
        std::fprintf(stderr, "error: DEPTHFORGE_THREADS must be a non-negative integer\n");
        return kUsage;
      }
      threads = static_cast<int>(v);
    }
  }
  if (int rc = report(df_set_threads(threads))) return rc;
  if (int rc = report(df_set_deterministic(deterministic))) return rc;

  if (*cmd_gen) {
    if (!parse_size(gen_size, gen.width, gen.height)) {
      std::fprintf(stderr, "error: --size must look like 64x32\n");
      return kUsage;
    }
    if (int rc = report(df_generate(gen_out.c_str(), &gen))) return rc;
    std::printf("wrote %zu samples to %s\n", gen.scenes, gen_out.c_str());
    return kOk;
  }

  if (*cmd_train) {
    df_train_result res{};
    const df_status s = df_train_dirs(data_dir.c_str(), val_dir.c_str(), config_path.c_str(), train_out.c_str(),
                                      resume.empty() ? nullptr : resume.c_str(), print_epoch, nullptr, &res);
    if (s == DF_E_DIVERGED) {
      std::fprintf(stderr, "diverged at t=%lld: lambda_t=%.17g L_S=%.17g L_U=%.17g L_R=%.17g total=%.17g\n",
                   static_cast<long long>(res.diverged_at), res.last.lambda_t, res.last.supervised,
                   res.last.unsupervised, res.last.regularizer, res.last.total);
    }
    if (int rc = report(s)) return rc;
    std::printf("%s after %zu epochs, best val %.6g\n", res.early_stopped ? "early stop" : "max epochs", res.epochs,
                res.best_val);
    return kOk;
  }

  if (*cmd_predict) return report(df_predict_dir(checkpoint.c_str(), images_dir.c_str(), predict_out.c_str()));

  if (*cmd_eval) {
    df_metrics m{};
    if (int rc = report(df_eval_dirs(pred_dir.c_str(), gt_dir.c_str(), protocol.c_str(), crop.empty() ? nullptr : crop.data(), &m))) return rc;
    char row[128];
    if (int rc = report(df_metrics_csv_row(&m, row, sizeof row))) return rc;
    std::printf("%s\n%s\n", df_metrics_csv_header(), row);
    return kOk;
  }

  if (*cmd_verify) {
    if (int rc = report(df_inject_fault(fault.c_str()))) return rc;
    int passed = 0;
    const char* table = nullptr;
    if (int rc = report(df_verify(level.c_str(), print_check, nullptr, &passed, &table))) return rc;
    if (table && *table) std::printf("\n%s", table);
    std::printf("verify %s: %s\n", level.c_str(), passed ? "all checks passed" : "FAILED");
    return passed ? kOk : kVerifyFailed;
  }
  return kUsage;
}
