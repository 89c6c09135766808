#include "depthforge/depthforge.h"

#include <cstring>
#include <memory>
#include <string>
#include <thread>

#include "app/commands.hpp"
#include "data/io.hpp"
#include "train/objective.hpp"
#include "util/error.hpp"
#include "util/faults.hpp"
#include "util/parallel.hpp"
#include "verify/verify.hpp"

using namespace depthforge;

struct df_config {
  RunConfig cfg;
  std::string text;
};

struct df_dataset {
  std::vector<StereoSample> samples;
};

struct df_model {
  Network net;
  std::int64_t iteration;
};

namespace {

thread_local std::string g_error;
thread_local std::string g_table;

df_status fail(df_status s, const char* what) {
  g_error = what;
  return s;
}

template <class F>
df_status guarded(F&& fn) {
  try {
    fn();
    g_error.clear();
    return DF_OK;
  } catch (const DivergenceError& e) {
    return fail(DF_E_DIVERGED, e.what());
  } catch (const ShapeError& e) {
    return fail(DF_E_SHAPE, e.what());
  } catch (const NumericError& e) {
    return fail(DF_E_NUMERIC, e.what());
  } catch (const InvalidArgument& e) {
    return fail(DF_E_INVALID_ARGUMENT, e.what());
  } catch (const IoError& e) {
    return fail(DF_E_IO, e.what());
  } catch (const ConfigError& e) {
    return fail(DF_E_CONFIG, e.what());
  } catch (const std::bad_alloc&) {
    return fail(DF_E_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(DF_E_INTERNAL, e.what());
  } catch (...) {
    return fail(DF_E_INTERNAL, "unknown error");
  }
}

void need(const void* p, const char* what) {
  if (!p) throw InvalidArgument(std::string(what) + " must not be NULL");
}

df_loss_breakdown to_c(const LossBreakdown& b) {
  return {b.lambda_t, b.supervised, b.unsupervised, b.regularizer, b.total};
}

df_metrics to_c(const Metrics& m) { return {m.rmse, m.rmse_log, m.ard, m.srd, m.acc1, m.acc2, m.acc3, m.count}; }

std::function<void(const EpochLog&)> epoch_bridge(df_epoch_fn fn, void* user) {
  if (!fn) return {};
  return [fn, user](const EpochLog& r) {
    const df_epoch_log row{r.epoch, r.t, r.lambda_t, r.L_S, r.L_U, r.L_R, r.total, r.val_total, r.lr};
    fn(&row, user);
  };
}

void fill_result(const TrainResult& r, df_train_result* out) {
  if (!out) return;
  *out = df_train_result{};
  out->epochs = r.log.size();
  out->early_stopped = r.stop_reason == "early_stop";
  out->best_val = r.log.empty() ? 0.0 : r.log.front().val_total;
  for (const EpochLog& row : r.log) out->best_val = std::min(out->best_val, row.val_total);
}

// Records divergence details before handing the error to guarded().
template <class F>
void train_call(F&& fn, df_train_result* out) {
  try {
    fn();
  } catch (const DivergenceError& e) {
    if (out) {
      *out = df_train_result{};
      out->diverged_at = e.iteration();
      out->last = to_c(e.breakdown());
    }
    throw;
  }
}

}  // namespace

extern "C" {

const char* df_last_error(void) { return g_error.c_str(); }

const char* df_status_name(df_status s) {
  switch (s) {
    case DF_OK: return "ok";
    case DF_E_INVALID_ARGUMENT: return "invalid argument";
    case DF_E_SHAPE: return "shape error";
    case DF_E_NUMERIC: return "numeric error";
    case DF_E_IO: return "i/o error";
    case DF_E_CONFIG: return "config error";
    case DF_E_DIVERGED: return "diverged";
    case DF_E_INTERNAL: return "internal error";
  }
  return "unknown status";
}

const char* df_version(void) { return "0.1.0"; }

df_status df_set_threads(int n) {
  return guarded([&] {
    if (n < 0) throw InvalidArgument("thread count must be >= 0");
    set_thread_count(n == 0 ? static_cast<int>(std::max(1u, std::thread::hardware_concurrency())) : n);
  });
}

int df_threads(void) { return thread_count(); }

df_status df_set_deterministic(int on) {
  return guarded([&] { set_deterministic(on != 0); });
}

df_status df_inject_fault(const char* name) {
  return guarded([&] {
    need(name, "fault name");
    const auto f = parse_fault(name);
    if (!f) throw InvalidArgument(std::string("unknown fault '") + name + "' (known: warp_sign, berhu_branch, weight_decay)");
    inject_fault(*f);
  });
}

df_status df_generate(const char* out_dir, const df_gen_params* p) {
  return guarded([&] {
    need(out_dir, "out_dir");
    need(p, "params");
    run_gen({out_dir, p->scenes, p->width, p->height, p->gt_density, p->seed});
  });
}

df_status df_config_load(const char* path, df_config** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = nullptr;
    auto c = std::make_unique<df_config>();
    c->cfg = load_run_config(path);
    c->text = format_run_config(c->cfg);
    *out = c.release();
  });
}

df_status df_config_parse(const char* text, df_config** out) {
  return guarded([&] {
    need(text, "text");
    need(out, "out");
    *out = nullptr;
    auto c = std::make_unique<df_config>();
    c->cfg = parse_run_config(text);
    c->text = format_run_config(c->cfg);
    *out = c.release();
  });
}

const char* df_config_text(const df_config* cfg) { return cfg ? cfg->text.c_str() : ""; }

void df_config_free(df_config* cfg) { delete cfg; }

df_status df_dataset_load(const char* dir, df_dataset** out) {
  return guarded([&] {
    need(dir, "dir");
    need(out, "out");
    *out = nullptr;
    auto d = std::make_unique<df_dataset>();
    d->samples = read_dataset(dir);
    *out = d.release();
  });
}

size_t df_dataset_size(const df_dataset* ds) { return ds ? ds->samples.size() : 0; }

void df_dataset_free(df_dataset* ds) { delete ds; }

df_status df_train(const df_dataset* data, const df_dataset* val, const df_config* cfg, const char* out_dir,
                   const char* resume, df_epoch_fn on_epoch, void* user, df_train_result* result) {
  return guarded([&] {
    need(data, "data");
    need(val, "val");
    need(cfg, "cfg");
    TrainOptions opt;
    opt.out_dir = out_dir ? out_dir : "";
    opt.resume = resume ? resume : "";
    opt.on_epoch = epoch_bridge(on_epoch, user);
    train_call([&] { fill_result(train(data->samples, val->samples, cfg->cfg.net, cfg->cfg.train, opt), result); },
               result);
  });
}

df_status df_train_dirs(const char* data_dir, const char* val_dir, const char* config_path, const char* out_dir,
                        const char* resume, df_epoch_fn on_epoch, void* user, df_train_result* result) {
  return guarded([&] {
    need(data_dir, "data_dir");
    need(val_dir, "val_dir");
    need(config_path, "config_path");
    need(out_dir, "out_dir");
    TrainParams p{data_dir, val_dir, config_path, out_dir, resume ? resume : ""};
    train_call([&] { fill_result(run_train(p, epoch_bridge(on_epoch, user)), result); }, result);
  });
}

df_status df_model_load(const char* checkpoint, df_model** out) {
  return guarded([&] {
    need(checkpoint, "checkpoint");
    need(out, "out");
    *out = nullptr;
    const Checkpoint ck = load_checkpoint(checkpoint);
    *out = new df_model{network_from_checkpoint(ck), ck.iteration};
  });
}

int64_t df_model_iteration(const df_model* model) { return model ? model->iteration : 0; }

df_status df_model_predict(const df_model* model, const double* image, size_t height, size_t width, double* rho_out) {
  return guarded([&] {
    need(model, "model");
    need(image, "image");
    need(rho_out, "rho_out");
    Tensor img({1, 1, height, width});
    std::memcpy(img.data(), image, height * width * sizeof(double));
    const Tensor rho = predict_full_resolution(model->net, img, height, width);
    std::memcpy(rho_out, rho.data(), height * width * sizeof(double));
  });
}

void df_model_free(df_model* model) { delete model; }

df_status df_predict_dir(const char* checkpoint, const char* images_dir, const char* out_dir) {
  return guarded([&] {
    need(checkpoint, "checkpoint");
    need(images_dir, "images_dir");
    need(out_dir, "out_dir");
    run_predict(checkpoint, images_dir, out_dir);
  });
}

const char* df_protocol_names(void) {
  static const std::string names = [] {
    std::string s;
    for (const auto& n : Protocol::known_names()) s += (s.empty() ? "" : ",") + n;
    return s;
  }();
  return names.c_str();
}

df_status df_eval_dirs(const char* pred_dir, const char* gt_dir, const char* protocol, const double* crop,
                       df_metrics* out) {
  return guarded([&] {
    need(pred_dir, "pred_dir");
    need(gt_dir, "gt_dir");
    need(protocol, "protocol");
    need(out, "out");
    Protocol p = Protocol::by_name(protocol);
    if (crop && p.crop) p.crop = CropRect{crop[0], crop[1], crop[2], crop[3]};
    *out = to_c(run_eval(pred_dir, gt_dir, p));
  });
}

df_status df_eval_pairs(const double* pred, const double* gt, size_t n, df_metrics* out) {
  return guarded([&] {
    need(pred, "pred");
    need(gt, "gt");
    need(out, "out");
    DepthPairs p;
    p.pred.assign(pred, pred + n);
    p.gt.assign(gt, gt + n);
    *out = to_c(compute_metrics(p));
  });
}

const char* df_metrics_csv_header(void) {
  static const std::string h = metrics_csv_header();
  return h.c_str();
}

df_status df_metrics_csv_row(const df_metrics* m, char* buf, size_t cap) {
  return guarded([&] {
    need(m, "metrics");
    need(buf, "buf");
    Metrics x;
    x.rmse = m->rmse;
    x.rmse_log = m->rmse_log;
    x.ard = m->ard;
    x.srd = m->srd;
    x.acc1 = m->acc1;
    x.acc2 = m->acc2;
    x.acc3 = m->acc3;
    x.count = m->count;
    const std::string row = metrics_csv_row(x);
    if (row.size() + 1 > cap) throw InvalidArgument("buffer too small for the metrics row");
    std::memcpy(buf, row.c_str(), row.size() + 1);
  });
}

df_status df_verify(const char* level, df_check_fn on_check, void* user, int* all_passed, const char** grad_table) {
  return guarded([&] {
    need(level, "level");
    const std::string lv = level;
    if (lv != "quick" && lv != "full") throw InvalidArgument("verify level must be 'quick' or 'full', got '" + lv + "'");
    const VerifyReport rep = run_verify(lv == "full" ? VerifyLevel::kFull : VerifyLevel::kQuick,
                                        [&](const CheckResult& c) {
                                          if (on_check) on_check(c.name.c_str(), c.passed, c.detail.c_str(), c.seconds, user);
                                        });
    g_table = rep.grad_table.empty() ? std::string() : format_grad_table(rep.grad_table);
    if (all_passed) *all_passed = rep.passed();
    if (grad_table) *grad_table = g_table.c_str();
  });
}

}  // extern "C"
