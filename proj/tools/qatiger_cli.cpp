// Command-line surface: dataset generation, training, evaluation, ablation
// sweeps, checkpoint inspection and the gradient-check suite.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "qatiger/csv.hpp"
#include "qatiger/grad_check.hpp"
#include "qatiger/run_config.hpp"
#include "qatiger/serialize.hpp"

namespace qatiger::cli {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct CommonArgs {
  std::string config_path;
  std::string data_override;
  std::string out_override;
  std::string ckpt;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int epochs = -1;
};

RunConfig load_config(const CommonArgs& args) {
  RunConfig cfg = load_run_config(args.config_path);
  if (args.seed_set) cfg.task.seed = args.seed;
  if (!args.data_override.empty()) cfg.data_path = args.data_override;
  if (args.epochs >= 0) cfg.epochs = args.epochs;
  return cfg;
}

// --- gen-data ---------------------------------------------------------------

template <typename Scalar>
int run_gen_data(const RunConfig& cfg, const std::string& out) {
  validate(cfg.task);
  const auto start = Clock::now();
  TaskData<Scalar> data = generate_task<Scalar>(cfg.task);
  save_task_data(out, data);
  std::printf("wrote %s: train %zu, val %zu, test %zu samples (%.1f s)\n", out.c_str(),
              data.train.samples.size(), data.val.samples.size(), data.test.samples.size(),
              seconds_since(start));
  return 0;
}

// --- train ------------------------------------------------------------------

template <typename Scalar>
int run_train(const RunConfig& cfg, const std::string& ckpt_dir_override) {
  const std::string ckpt_dir = ckpt_dir_override.empty() ? cfg.ckpt_dir : ckpt_dir_override;
  TaskData<Scalar> data = load_task_data<Scalar>(cfg.data_path);
  fs::create_directories(ckpt_dir);

  ModelConfig mc = data.train.cfg.model_config();
  ModelParams<Scalar> params = init_model<Scalar>(mc, derive_seed(cfg.task.seed, "model"));
  TrainOptions<Scalar> opts = cfg.template train_options<Scalar>();
  const PipelineMode mode = cfg.mode();

  const auto start = Clock::now();
  TrainLog log = train(params, data.train, data.val, mode, opts,
                       [&](const EpochLog& el, const ModelParams<Scalar>& p) {
                         char name[32];
                         std::snprintf(name, sizeof(name), "epoch_%04d.qtgf", el.epoch);
                         save_model((fs::path(ckpt_dir) / name).string(), p);
                         std::printf("epoch %d: lr %.2e train loss %.4f val acc %.2f%%\n",
                                     el.epoch, el.lr, el.train_loss, 100.0 * el.val_accuracy);
                         std::fflush(stdout);
                       });
  save_model((fs::path(ckpt_dir) / "final.qtgf").string(), params);
  write_train_log_csv(cfg.log_path, log, cfg.lr);
  std::printf("trained %d epochs in %.1f s; final checkpoint %s\n", cfg.epochs,
              seconds_since(start), (fs::path(ckpt_dir) / "final.qtgf").string().c_str());
  if (!log.epochs.empty()) {
    std::printf("init loss %.4f -> final loss %.4f\n", log.init_train_loss,
                log.epochs.back().train_loss);
  }
  return 0;
}

// --- eval -------------------------------------------------------------------

template <typename Scalar>
int run_eval(const RunConfig& cfg, const std::string& ckpt) {
  ModelParams<Scalar> params = load_model<Scalar>(ckpt);
  TaskData<Scalar> data = load_task_data<Scalar>(cfg.data_path);
  EvalResult r = evaluate(params, data.test, cfg.mode());
  std::printf("%-16s %9s %6s\n", "family", "accuracy", "n");
  for (int f = 0; f < kFamilyCount; ++f) {
    if (r.family_total[static_cast<std::size_t>(f)] == 0) continue;
    std::printf("%-16s %8.2f%% %6lld\n", to_string(static_cast<QuestionFamily>(f)),
                100.0 * r.family_accuracy[static_cast<std::size_t>(f)],
                static_cast<long long>(r.family_total[static_cast<std::size_t>(f)]));
  }
  std::printf("%-16s %8.2f%% %6zu\n", "overall", 100.0 * r.accuracy, data.test.samples.size());
  return 0;
}

// --- ablate -----------------------------------------------------------------

std::vector<std::string> split_list(const std::string& csv) {
  std::vector<std::string> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename Scalar>
int run_ablate(const RunConfig& cfg, const std::string& strategies, const std::string& experts,
               const std::string& seeds_csv, bool modules, const std::string& out_path,
               int jobs) {
  std::vector<AblationArm> arms;
  if (modules || (strategies.empty() && experts.empty())) {
    for (auto& a : module_toggle_arms()) arms.push_back(a);
  }
  if (!strategies.empty()) {
    std::vector<PoolingStrategy> list;
    for (const std::string& s : split_list(strategies)) list.push_back(parse_pooling_strategy(s));
    for (auto& a : strategy_arms(list, cfg.top_k)) arms.push_back(a);
  }
  if (!experts.empty()) {
    std::vector<Index> counts;
    for (const std::string& s : split_list(experts)) counts.push_back(std::stol(s));
    for (auto& a : expert_sweep_arms(counts)) arms.push_back(a);
  }
  std::vector<std::uint64_t> seeds;
  for (const std::string& s : split_list(seeds_csv)) seeds.push_back(std::stoull(s));

  TrainOptions<Scalar> opts = cfg.template train_options<Scalar>();
  const auto start = Clock::now();
  std::vector<AblationRow> rows = run_ablation(cfg.task, opts, arms, seeds, jobs);
  std::vector<AblationSummary> summaries = summarize(rows);
  write_ablation_csv(out_path, rows, summaries);

  std::printf("%-28s %5s %9s %8s | %s\n", "arm", "runs", "mean acc", "std", "per-family means");
  for (const auto& s : summaries) {
    std::printf("%-28s %5d %8.2f%% %7.2f%% |", s.arm.c_str(), s.runs, 100.0 * s.mean_accuracy,
                100.0 * s.std_accuracy);
    for (double f : s.mean_family_accuracy) {
      if (f >= 0) {
        std::printf(" %5.1f", 100.0 * f);
      } else {
        std::printf("     -");
      }
    }
    std::printf("\n");
  }
  std::printf("wrote %s (%.1f s, %d jobs)\n", out_path.c_str(), seconds_since(start), jobs);
  return 0;
}

// --- inspect ----------------------------------------------------------------

template <typename Scalar>
int run_inspect(const RunConfig& cfg, const std::string& ckpt, Index sample_index,
                const std::string& out_path) {
  ModelParams<Scalar> params = load_model<Scalar>(ckpt);
  TaskData<Scalar> data = load_task_data<Scalar>(cfg.data_path);
  if (sample_index < 0 || sample_index >= static_cast<Index>(data.test.samples.size())) {
    throw ContractError("sample index " + std::to_string(sample_index) +
                        " out of range for test split of " +
                        std::to_string(data.test.samples.size()));
  }
  const auto& sample = data.test.samples[static_cast<std::size_t>(sample_index)];
  PipelineMode mode = cfg.mode();
  if (mode.strategy != PoolingStrategy::kGaussianExperts) {
    throw ContractError("inspect exports Gaussian curves; set strategy = gaussian_experts");
  }
  Graph<Scalar> g;
  auto result = forward(g, params, sample.features, mode);
  export_gaussian_curves(result.mixture.state(), out_path);
  std::printf("sample %lld: family %s, label %lld, predicted %lld\n",
              static_cast<long long>(sample_index), to_string(sample.family),
              static_cast<long long>(sample.label),
              static_cast<long long>(result.answer.predicted));
  std::printf("wrote %s\n", out_path.c_str());
  return 0;
}

// --- grad-check -------------------------------------------------------------

int run_grad_check(std::uint64_t seed, const std::string& dims) {
  ModelConfig cfg;
  Index t = 0, n_words = 0;
  if (dims == "tiny") {
    cfg.d = 8;
    cfg.dv = 5;
    cfg.da = 4;
    cfg.dq = 6;
    cfg.m_prime = 2;
    cfg.classes = 3;
    cfg.experts = 2;
    cfg.heads = 2;
    t = 4;
    n_words = 3;
  } else if (dims == "small") {
    cfg.d = 12;
    cfg.dv = 7;
    cfg.da = 5;
    cfg.dq = 8;
    cfg.m_prime = 3;
    cfg.classes = 4;
    cfg.experts = 3;
    cfg.heads = 3;
    t = 6;
    n_words = 4;
  } else {
    throw ContractError("unknown dims preset: " + dims + " (expected tiny or small)");
  }
  cfg.dropout = 0.0;

  const auto start = Clock::now();
  Rng rng(derive_seed(seed, "features"));
  SampleFeatures<double> feats{rng.uniform_tensor<double>({t, cfg.dv}, -1, 1),
                               rng.uniform_tensor<double>({t, cfg.da}, -1, 1),
                               rng.uniform_tensor<double>({t, cfg.m_prime, cfg.dv}, -1, 1),
                               rng.uniform_tensor<double>({cfg.dq}, -1, 1),
                               rng.uniform_tensor<double>({n_words, cfg.dq}, -1, 1)};
  ModelParams<double> params = init_model<double>(cfg, derive_seed(seed, "model"));
  const Index label = static_cast<Index>(seed % static_cast<std::uint64_t>(cfg.classes));

  std::vector<Tensord*> tracked = param_pointers(params);
  std::vector<std::string> names;
  visit_params(params, [&](const std::string& name, Tensord&) { names.push_back(name); });

  auto eval = [&](std::vector<Tensord>* grads) {
    Graph<double> g;
    auto vars = bind(g, params, true);
    auto result = forward(g, vars, cfg, feats, PipelineMode{});
    auto loss = qa_loss(result.answer, label);
    if (grads) {
      g.backward(loss);
      *grads = collect_gradients(g, vars);
    }
    return g.value(loss)(0);
  };
  std::vector<Tensord> analytic;
  eval(&analytic);
  auto report = check_gradients<double>([&] { return eval(nullptr); }, tracked, analytic, 1e-5);

  std::size_t total = 0;
  for (const Tensord* p : tracked) total += static_cast<std::size_t>(p->size());
  std::printf("checked %zu parameters in %zu tensors (%.1f s)\n", total, tracked.size(),
              seconds_since(start));
  std::printf("max relative error %.3e at %s[%lld] (analytic %.6e vs numeric %.6e)\n",
              report.max_rel_error, names[report.worst_param].c_str(),
              static_cast<long long>(report.worst_element), report.analytic_at_worst,
              report.numeric_at_worst);
  if (report.max_rel_error <= 1e-4) {
    std::printf("PASS (threshold 1e-4)\n");
    return 0;
  }
  std::printf("FAIL (threshold 1e-4)\n");
  return 1;
}

template <typename Fn>
int dispatch_dtype(const std::string& dtype, Fn&& fn) {
  if (dtype == "single") return fn(float{});
  return fn(double{});
}

}  // namespace qatiger::cli

int main(int argc, char** argv) {
  using namespace qatiger;
  using namespace qatiger::cli;

  CLI::App app{"QA-TIGER reference pipeline"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string strategies, experts, seeds_csv = "1,2,3", dims = "tiny";
  std::string out_path;
  Index sample_index = 0;
  int jobs = 2;
  bool modules = false;

  auto add_common = [&](CLI::App* cmd, bool need_config) {
    auto* opt = cmd->add_option("--config", args.config_path, "run configuration file");
    if (need_config) opt->required();
    cmd->add_option("--seed", args.seed, "override the task/training seed")
        ->each([&](const std::string&) { args.seed_set = true; });
  };

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset container");
  add_common(gen, true);
  gen->add_option("--out", out_path, "output container path (default: config data_path)");

  auto* tr = app.add_subcommand("train", "train a model on a generated dataset");
  add_common(tr, true);
  tr->add_option("--data", args.data_override, "dataset container (default: config data_path)");
  tr->add_option("--ckpt", args.ckpt, "checkpoint directory (default: config ckpt_dir)");
  tr->add_option("--epochs", args.epochs, "override epoch count");

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  add_common(ev, true);
  ev->add_option("--ckpt", args.ckpt, "checkpoint file")->required();
  ev->add_option("--data", args.data_override, "dataset container");

  auto* ab = app.add_subcommand("ablate", "run module/strategy/expert sweeps");
  add_common(ab, true);
  ab->add_option("--strategies", strategies, "comma list of pooling strategies");
  ab->add_option("--experts", experts, "comma list of expert counts");
  ab->add_option("--seeds", seeds_csv, "comma list of run seeds");
  ab->add_flag("--modules", modules, "include the module on/off table");
  ab->add_option("--out", out_path, "results CSV (default: config results_path)");
  ab->add_option("--jobs", jobs, "parallel training jobs");
  ab->add_option("--epochs", args.epochs, "override epoch count");

  auto* in = app.add_subcommand("inspect", "export Gaussian curves for one sample");
  add_common(in, true);
  in->add_option("--ckpt", args.ckpt, "checkpoint file")->required();
  in->add_option("--data", args.data_override, "dataset container");
  in->add_option("--sample", sample_index, "test-split sample index");
  in->add_option("--out", out_path, "curves CSV (default: config curves_path)");

  auto* gc = app.add_subcommand("grad-check", "finite-difference check of the full pipeline");
  gc->add_option("--seed", args.seed, "probe seed")
      ->each([&](const std::string&) { args.seed_set = true; });
  gc->add_option("--dims", dims, "dimension preset: tiny or small");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (gc->parsed()) {
      return run_grad_check(args.seed_set ? args.seed : 1, dims);
    }
    RunConfig cfg = load_config(args);
    if (gen->parsed()) {
      const std::string out = out_path.empty() ? cfg.data_path : out_path;
      return dispatch_dtype(cfg.dtype, [&](auto tag) { return run_gen_data<decltype(tag)>(cfg, out); });
    }
    if (tr->parsed()) {
      return dispatch_dtype(cfg.dtype, [&](auto tag) { return run_train<decltype(tag)>(cfg, args.ckpt); });
    }
    if (ev->parsed()) {
      return dispatch_dtype(cfg.dtype, [&](auto tag) { return run_eval<decltype(tag)>(cfg, args.ckpt); });
    }
    if (ab->parsed()) {
      const std::string out = out_path.empty() ? cfg.results_path : out_path;
      return dispatch_dtype(cfg.dtype, [&](auto tag) {
        return run_ablate<decltype(tag)>(cfg, strategies, experts, seeds_csv, modules, out, jobs);
      });
    }
    if (in->parsed()) {
      const std::string out = out_path.empty() ? cfg.curves_path : out_path;
      return dispatch_dtype(cfg.dtype, [&](auto tag) {
        return run_inspect<decltype(tag)>(cfg, args.ckpt, sample_index, out);
      });
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}
