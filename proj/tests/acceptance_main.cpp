// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Heavier criteria print their evidence so a red line can be read
// without rerunning.

#include <chrono>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "naive_pipeline.hpp"
#include "qatiger/csv.hpp"
#include "qatiger/grad_check.hpp"
#include "qatiger/run_config.hpp"
#include "qatiger/serialize.hpp"

namespace qatiger::acceptance {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

struct CheckResult {
  bool pass = false;
  std::string detail;
};

double elapsed(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list args;
  va_start(args, f);
  std::vsnprintf(buf, sizeof(buf), f, args);
  va_end(args);
  return buf;
}

// 1. End-to-end gradients vs central finite differences at tiny dims.
CheckResult gradient_suite() {
  const auto start = Clock::now();
  ModelConfig cfg;
  cfg.d = 8;
  cfg.dv = 5;
  cfg.da = 4;
  cfg.dq = 6;
  cfg.m_prime = 2;
  cfg.classes = 3;
  cfg.experts = 2;
  cfg.heads = 2;
  cfg.dropout = 0.0;
  const Index t = 4, n_words = 3;

  Rng rng(derive_seed(2024, "features"));
  SampleFeatures<double> feats{rng.uniform_tensor<double>({t, cfg.dv}, -1, 1),
                               rng.uniform_tensor<double>({t, cfg.da}, -1, 1),
                               rng.uniform_tensor<double>({t, cfg.m_prime, cfg.dv}, -1, 1),
                               rng.uniform_tensor<double>({cfg.dq}, -1, 1),
                               rng.uniform_tensor<double>({n_words, cfg.dq}, -1, 1)};
  ModelParams<double> params = init_model<double>(cfg, derive_seed(2024, "model"));

  std::vector<Tensord*> tracked = param_pointers(params);
  auto eval = [&](std::vector<Tensord>* grads) {
    Graph<double> g;
    auto vars = bind(g, params, true);
    auto result = forward(g, vars, cfg, feats, PipelineMode{});
    auto loss = qa_loss(result.answer, 1);
    if (grads) {
      g.backward(loss);
      *grads = collect_gradients(g, vars);
    }
    return g.value(loss)(0);
  };
  std::vector<Tensord> analytic;
  eval(&analytic);
  auto report = check_gradients<double>([&] { return eval(nullptr); }, tracked, analytic, 1e-5);
  const double secs = elapsed(start);
  const bool ok = report.max_rel_error <= 1e-4 && secs < 30.0;
  return {ok, fmt("max rel err %.2e (<=1e-4), %.1f s (<30)", report.max_rel_error, secs)};
}

// 2. Generation invariants on 1000 random inputs.
CheckResult algorithm_invariants() {
  Rng rng(7);
  int violations = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const Index e = 1 + static_cast<Index>(rng.below(8));
    const Index t = 1 + static_cast<Index>(rng.below(16));
    const Index d = 6;
    GaussianGeneratorParams<double> gen =
        init_gaussian_generator<double>(d, e, derive_seed(7, "gen", trial));
    Rng w_rng(derive_seed(7, "router", trial));
    Tensord router = w_rng.uniform_tensor<double>({d, e}, -1.0, 1.0);

    Graph<double> g;
    auto pooled = g.constant(rng.uniform_tensor<double>({1, d}, -6.0, 6.0));
    auto curves = generate_gaussians(bind(g, gen, false), pooled, t);
    auto routing = route(pooled, g.constant(router));

    const Tensord& mu = g.value(curves.mu);
    const Tensord& sigma = g.value(curves.sigma);
    const Tensord& c = g.value(curves.curves);
    double routing_sum = 0.0;
    for (Index i = 0; i < e; ++i) {
      if (!(mu(0, i) > gen.fixed.centers(i) - gen.fixed.margin &&
            mu(0, i) < gen.fixed.centers(i) + gen.fixed.margin)) {
        ++violations;
      }
      if (i > 0 && !(mu(0, i) > mu(0, i - 1))) ++violations;
      if (!(sigma(0, i) >= kSigmaFloor && sigma(0, i) < 1.0)) ++violations;
      if (c.mat().row(i).maxCoeff() != 1.0) ++violations;
      if (!(g.value(routing)(0, i) > 0.0)) ++violations;
      routing_sum += g.value(routing)(0, i);
    }
    if (std::abs(routing_sum - 1.0) > 1e-12) ++violations;
  }
  return {violations == 0, fmt("%d violations across 1000 draws", violations)};
}

// 3. Full pipeline vs the naive loop reimplementation, 100 parameter draws.
CheckResult oracle_equivalence() {
  ModelConfig cfg;
  cfg.d = 3;
  cfg.dv = 3;
  cfg.da = 2;
  cfg.dq = 2;
  cfg.m_prime = 2;
  cfg.classes = 3;
  cfg.experts = 2;
  cfg.heads = 1;
  cfg.dropout = 0.0;
  Rng rng(42);
  double worst = 0.0;
  for (int draw = 0; draw < 100; ++draw) {
    auto params = init_model<double>(cfg, derive_seed(42, "draw", draw));
    SampleFeatures<double> feats{rng.uniform_tensor<double>({4, cfg.dv}, -1, 1),
                                 rng.uniform_tensor<double>({4, cfg.da}, -1, 1),
                                 rng.uniform_tensor<double>({4, cfg.m_prime, cfg.dv}, -1, 1),
                                 rng.uniform_tensor<double>({cfg.dq}, -1, 1),
                                 rng.uniform_tensor<double>({2, cfg.dq}, -1, 1)};
    Graph<double> g;
    auto result = forward(g, params, feats, PipelineMode{});
    auto oracle = naive::pipeline_loops(params, feats);

    auto track = [&](double d) { worst = std::max(worst, d); };
    track(max_abs_diff(g.value(result.vq), oracle.vq));
    track(max_abs_diff(g.value(result.aq), oracle.aq));
    track(max_abs_diff(g.value(result.pv), oracle.pv));
    track(max_abs_diff(g.value(result.pa), oracle.pa));
    track(max_abs_diff(g.value(result.pooled_pv), oracle.pooled_pv));
    track(max_abs_diff(g.value(result.pooled_pa), oracle.pooled_pa));
    track(max_abs_diff(g.value(result.pooled_a), oracle.pooled_a));
    track(max_abs_diff(g.value(result.f_va), oracle.f_va));
    track(max_abs_diff(result.answer.probabilities, oracle.probs));
    auto state = result.mixture.state();
    track(max_abs_diff(state.visual.mu, oracle.mu_v));
    track(max_abs_diff(state.visual.curves, oracle.curves_v));
    track(max_abs_diff(state.audio.curves, oracle.curves_a));
    track(max_abs_diff(state.visual.routing, oracle.routing_v));
    const double loss = g.value(qa_loss(result.answer, 2))(0);
    track(std::abs(loss - naive::loss_loops(oracle, 2)));
  }
  return {worst < 1e-10, fmt("max |pipeline − naive| = %.2e over 100 draws (<1e-10)", worst)};
}

// 4. Seven-expert anchors match the closed form exactly.
CheckResult closed_form_centers() {
  auto fc = init_fixed_centers<double>(7);
  bool ok = fc.margin == 1.0 / 14.0;
  for (Index i = 0; i < 7; ++i) {
    ok = ok && fc.centers(i) == static_cast<double>(2 * i + 1) / 14.0;
  }
  std::string values;
  for (Index i = 0; i < 7; ++i) values += fmt("%s%.6f", i ? " " : "", fc.centers(i));
  return {ok, "centers " + values};
}

// 5. Uniform pooling bit-invariant under permutation; the expert pathway is
// temporally sensitive for every random model.
CheckResult permutation_discrimination() {
  Rng rng(11);
  const Index t = 12, d = 8, e = 3;
  int uniform_ok = 0, experts_ok = 0;
  for (int model = 0; model < 100; ++model) {
    TemporalIntegrationParams<double> p;
    const std::uint64_t seed = derive_seed(11, "model", model);
    p.pool_v = init_attention_params<double>(d, 2, derive_seed(seed, "pv"));
    p.pool_a = init_attention_params<double>(d, 2, derive_seed(seed, "pa"));
    p.generator = init_gaussian_generator<double>(d, e, derive_seed(seed, "gen"));
    Rng w_rng(derive_seed(seed, "router"));
    p.router_w = w_rng.uniform_tensor<double>({d, e}, -0.5, 0.5);
    p.bank_v = init_expert_bank<double>(d, e, derive_seed(seed, "bv"));
    p.bank_a = init_expert_bank<double>(d, e, derive_seed(seed, "ba"));

    Tensord vq = rng.uniform_tensor<double>({t, d}, -1, 1);
    Tensord aq = rng.uniform_tensor<double>({t, d}, -1, 1);
    Tensord pv = rng.uniform_tensor<double>({t, d}, -1, 1);
    Tensord pa = rng.uniform_tensor<double>({t, d}, -1, 1);
    Tensord qs = rng.uniform_tensor<double>({1, d}, -1, 1);

    std::vector<std::vector<Index>> perms;
    std::vector<Index> reversal(static_cast<std::size_t>(t));
    for (Index i = 0; i < t; ++i) reversal[static_cast<std::size_t>(i)] = t - 1 - i;
    perms.push_back(reversal);
    for (int k = 0; k < 4; ++k) {
      std::vector<Index> perm(static_cast<std::size_t>(t));
      for (Index i = 0; i < t; ++i) perm[static_cast<std::size_t>(i)] = i;
      rng.shuffle(perm);
      perms.push_back(perm);
    }
    auto permute = [&](const Tensord& x, const std::vector<Index>& perm) {
      Tensord out({t, d});
      for (Index i = 0; i < t; ++i) out.mat().row(i) = x.mat().row(perm[static_cast<std::size_t>(i)]);
      return out;
    };

    bool uniform_invariant = true;
    bool experts_sensitive = false;
    Tensord experts_base;
    {
      Graph<double> g;
      auto r = temporal_integration(bind(g, p, false), g.constant(vq), g.constant(aq),
                                    g.constant(pv), g.constant(pa), g.constant(qs));
      experts_base = g.value(r.v_pv);
    }
    for (const auto& perm : perms) {
      Graph<double> g;
      Tensord base = g.value(uniform_pool(g.constant(pv)));
      Tensord permuted = g.value(uniform_pool(g.constant(permute(pv, perm))));
      if (max_abs_diff(base, permuted) != 0.0) uniform_invariant = false;

      Graph<double> g2;
      auto r = temporal_integration(bind(g2, p, false), g2.constant(permute(vq, perm)),
                                    g2.constant(permute(aq, perm)), g2.constant(permute(pv, perm)),
                                    g2.constant(permute(pa, perm)), g2.constant(qs));
      const double diff =
          std::sqrt((g2.value(r.v_pv).array() - experts_base.array()).square().sum());
      if (diff > 1e-6) experts_sensitive = true;
    }
    if (uniform_invariant) ++uniform_ok;
    if (experts_sensitive) ++experts_ok;
  }
  return {uniform_ok == 100 && experts_ok == 100,
          fmt("uniform exact-invariant %d/100, experts discriminating %d/100", uniform_ok,
              experts_ok)};
}

// Shared schedule for the training-based criteria: single precision as the
// training runs allow, lr 1e-3 at this scale, batch 32.
template <typename Scalar>
TrainOptions<Scalar> desk_schedule(int epochs) {
  TrainOptions<Scalar> opts;
  opts.epochs = epochs;
  opts.batch_size = 32;
  opts.adam.lr = static_cast<Scalar>(1e-3);
  opts.record_init_loss = true;
  return opts;
}

const AblationSummary& find_arm(const std::vector<AblationSummary>& summaries,
                                const std::string& name) {
  for (const auto& s : summaries) {
    if (s.arm == name) return s;
  }
  throw ContractError("arm missing from summary: " + name);
}

// 6. Module-toggle ordering on the default task within the time budget.
CheckResult desk_ablation() {
  const auto start = Clock::now();
  TaskConfig task;  // desk-scale defaults
  auto rows = run_ablation(task, desk_schedule<float>(6), module_toggle_arms(), {1, 2, 3}, 2);
  const double secs = elapsed(start);
  auto summaries = summarize(rows);
  write_ablation_csv("acceptance_module_ablation.csv", rows, summaries);

  const auto& both_on = find_arm(summaries, "both_on");
  const auto& both_off = find_arm(summaries, "both_off");
  const auto& uniform = find_arm(summaries, "fusion_only");  // fusion on, uniform pooling

  const int torder = static_cast<int>(QuestionFamily::kTemporalOrder);
  const bool ordering = both_on.mean_accuracy > both_off.mean_accuracy;
  const bool margin = both_on.mean_family_accuracy[torder] >=
                      uniform.mean_family_accuracy[torder] + 0.05;
  int loss_drops = 0;
  for (const auto& r : rows) {
    if (r.arm == "both_on" && !r.epoch_train_loss.empty() &&
        r.epoch_train_loss.front() < r.init_train_loss) {
      ++loss_drops;
    }
  }
  const bool in_budget = secs < 900.0;
  return {ordering && margin && in_budget && loss_drops == 3,
          fmt("both_on %.1f%% > both_off %.1f%%; t-order %.1f%% vs uniform %.1f%% (+5 needed); "
              "epoch1<init %d/3; %.0f s (<900)",
              100 * both_on.mean_accuracy, 100 * both_off.mean_accuracy,
              100 * both_on.mean_family_accuracy[torder],
              100 * uniform.mean_family_accuracy[torder], loss_drops, secs)};
}

// 7. More experts do not hurt: E=7 vs E=1 on the default task.
CheckResult expert_sweep() {
  TaskConfig task;
  auto rows = run_ablation(task, desk_schedule<float>(14), expert_sweep_arms({1, 7}), {1, 2, 3}, 2);
  auto summaries = summarize(rows);
  write_ablation_csv("acceptance_expert_sweep.csv", rows, summaries);
  const auto& e7 = find_arm(summaries, "experts_7");
  const auto& e1 = find_arm(summaries, "experts_1");
  return {e7.mean_accuracy >= e1.mean_accuracy,
          fmt("E=7 %.1f%% vs E=1 %.1f%% over 3 seeds", 100 * e7.mean_accuracy,
              100 * e1.mean_accuracy)};
}

// 8. Container bit round-trips, zero-epoch CLI checkpoint, curve CSV self-consistency.
CheckResult io_round_trips() {
  Rng rng(100);
  // (a) 50 random tensor sets, write → read → write, byte-identical.
  const fs::path dir = fs::temp_directory_path() / "qatiger_acceptance_io";
  fs::create_directories(dir);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<NamedTensor> tensors;
    const int count = 1 + static_cast<int>(rng.below(5));
    for (int i = 0; i < count; ++i) {
      std::vector<Index> dims;
      const int rank = 1 + static_cast<int>(rng.below(3));
      for (int r = 0; r < rank; ++r) dims.push_back(1 + static_cast<Index>(rng.below(7)));
      if (rng.uniform() < 0.5) {
        tensors.push_back(
            to_record("t" + std::to_string(i), rng.uniform_tensor<double>(dims, -50, 50)));
      } else {
        tensors.push_back(
            to_record("t" + std::to_string(i), rng.uniform_tensor<float>(dims, -50, 50)));
      }
    }
    const std::string p1 = (dir / "a.qtgf").string(), p2 = (dir / "b.qtgf").string();
    write_container(p1, tensors);
    write_container(p2, read_container(p1));
    std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
    std::vector<char> b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::vector<char> b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    if (b1 != b2) return {false, fmt("container round-trip diverged at trial %d", trial)};
  }

  // (b) `train --epochs 0` leaves the checkpoint at the initialization.
  RunConfig cfg;
  cfg.task.t = 12;
  cfg.task.dv = 6;
  cfg.task.da = 4;
  cfg.task.dq = 6;
  cfg.task.m_prime = 2;
  cfg.task.n_words = 4;
  cfg.task.d = 8;
  cfg.task.heads = 2;
  cfg.task.experts = 2;
  cfg.task.signature_count = 4;
  cfg.task.train_size = 16;
  cfg.task.val_size = 4;
  cfg.task.test_size = 4;
  cfg.dtype = "double";
  cfg.data_path = (dir / "data.qtgf").string();
  cfg.ckpt_dir = (dir / "ckpt").string();
  cfg.log_path = (dir / "log.csv").string();
  const std::string cfg_path = (dir / "run.cfg").string();
  save_run_config(cfg_path, cfg);
  auto shell = [&](const std::string& args) {
    const std::string cmd = std::string(QATIGER_CLI_PATH) + " " + args + " > " +
                            (dir / "out.txt").string() + " 2>&1";
    return WEXITSTATUS(std::system(cmd.c_str()));
  };
  if (shell("gen-data --config " + cfg_path) != 0) return {false, "gen-data failed"};
  if (shell("train --config " + cfg_path + " --epochs 0") != 0) return {false, "train failed"};
  auto loaded = load_model<double>((fs::path(cfg.ckpt_dir) / "final.qtgf").string());
  auto expected =
      init_model<double>(cfg.task.model_config(), derive_seed(cfg.task.seed, "model"));
  auto a = param_pointers(loaded), b = param_pointers(expected);
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (max_abs_diff(*a[i], *b[i]) != 0.0) {
      return {false, "zero-epoch checkpoint differs from initialization"};
    }
  }

  // (c) Curve CSV integrated rows recompute from expert rows within 1e-9.
  GaussianMixtureState<double> state;
  auto random_pathway = [&]() {
    typename GaussianMixtureState<double>::Pathway p;
    const Index e = 3, t = 6;
    p.mu = rng.uniform_tensor<double>({e}, 0.0, 1.0);
    p.sigma = rng.uniform_tensor<double>({e}, 0.05, 0.9);
    p.curves = rng.uniform_tensor<double>({e, t}, 0.0, 1.0);
    Tensord logits = rng.uniform_tensor<double>({e}, -1.0, 1.0);
    p.routing = Tensord({e});
    double z = 0;
    for (Index i = 0; i < e; ++i) z += std::exp(logits(i));
    for (Index i = 0; i < e; ++i) p.routing(i) = std::exp(logits(i)) / z;
    return p;
  };
  state.visual = random_pathway();
  state.audio = random_pathway();
  const std::string curves_path = (dir / "curves.csv").string();
  export_gaussian_curves(state, curves_path);
  std::ifstream f(curves_path);
  std::string line;
  std::getline(f, line);  // header
  std::map<std::pair<std::string, int>, double> acc, integrated;
  while (std::getline(f, line)) {
    std::stringstream ss(line);
    std::string modality, expert, routing, t_str, weight;
    std::getline(ss, modality, ',');
    std::getline(ss, expert, ',');
    std::getline(ss, routing, ',');
    std::getline(ss, t_str, ',');
    std::getline(ss, weight, ',');
    const int t = std::stoi(t_str);
    if (expert == "integrated") {
      integrated[{modality, t}] = std::stod(weight);
    } else {
      acc[{modality, t}] += std::stod(routing) * std::stod(weight);
    }
  }
  double worst = 0.0;
  for (const auto& [key, value] : integrated) {
    worst = std::max(worst, std::abs(value - acc[key]));
  }
  if (worst > 1e-9) return {false, fmt("integrated rows off by %.2e", worst)};

  return {true, fmt("50 container round-trips bit-exact; zero-epoch checkpoint = init; "
                    "integrated rows within %.1e",
                    worst)};
}

}  // namespace qatiger::acceptance

int main(int argc, char** argv) {
  using namespace qatiger::acceptance;
  int only = 0;
  if (argc > 1) only = std::atoi(argv[1]);

  std::vector<std::pair<const char*, std::function<CheckResult()>>> criteria = {
      {"gradient suite (tiny dims, h=1e-5)", gradient_suite},
      {"generation invariants (1000 draws)", algorithm_invariants},
      {"oracle equivalence (100 draws)", oracle_equivalence},
      {"closed-form centers (E=7)", closed_form_centers},
      {"permutation discrimination (100 models)", permutation_discrimination},
      {"desk-scale module ablation", desk_ablation},
      {"expert-count sweep (E=1 vs E=7)", expert_sweep},
      {"container and CLI round-trips", io_round_trips},
  };

  bool all_pass = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (only != 0 && static_cast<int>(i + 1) != only) continue;
    const auto start = Clock::now();
    CheckResult r;
    try {
      r = criteria[i].second();
    } catch (const std::exception& e) {
      r = {false, std::string("exception: ") + e.what()};
    }
    std::printf("[%zu/8] %-42s %s (%s, %.1f s)\n", i + 1, criteria[i].first,
                r.pass ? "PASS" : "FAIL", r.detail.c_str(), elapsed(start));
    std::fflush(stdout);
    all_pass = all_pass && r.pass;
  }
  return all_pass ? 0 : 1;
}
