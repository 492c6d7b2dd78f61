// Training loop, evaluation, and the ablation runner.
//
// A training run is sequential and bit-deterministic given (seed, config).
// run_ablation launches independent seeded runs; each job owns its model and
// optimizer and shares only the immutable datasets, so results do not depend
// on the job count.
#pragma once

#include <array>
#include <atomic>
#include <cmath>
#include <functional>
#include <string>
#include <thread>
#include <vector>

#include "qatiger/adam.hpp"
#include "qatiger/synthetic.hpp"

namespace qatiger {

struct TrainingDiverged : std::runtime_error {
  using std::runtime_error::runtime_error;
};

template <typename Scalar>
struct TrainOptions {
  int epochs = 15;
  Index batch_size = 32;
  AdamConfig<Scalar> adam;
  bool record_init_loss = true;
  std::uint64_t seed = 1;  // drives shuffling and dropout masks
};

struct EpochLog {
  int epoch = 0;  // 1-based; epoch 0 is the pre-training state
  double lr = 0.0;
  double train_loss = 0.0;
  double val_accuracy = 0.0;
};

struct TrainLog {
  double init_train_loss = 0.0;
  double init_val_accuracy = -1.0;
  std::vector<EpochLog> epochs;
};

struct EvalResult {
  double accuracy = 0.0;
  double mean_loss = 0.0;
  std::array<double, kFamilyCount> family_accuracy{};  // -1 where family absent
  std::array<Index, kFamilyCount> family_total{};
};

template <typename Scalar>
double sample_loss(Graph<Scalar>& g, const ModelParams<Scalar>& params,
                   const SyntheticSample<Scalar>& s, const PipelineMode& mode) {
  auto result = forward(g, params, s.features, mode);
  return static_cast<double>(g.value(qa_loss(result.answer, s.label))(0));
}

template <typename Scalar>
EvalResult evaluate(const ModelParams<Scalar>& params, const Dataset<Scalar>& ds,
                    const PipelineMode& mode) {
  if (ds.samples.empty()) throw ContractError("evaluate: empty dataset");
  EvalResult r;
  std::array<Index, kFamilyCount> correct{};
  double loss_sum = 0.0;
  Index hits = 0;
  for (const auto& s : ds.samples) {
    Graph<Scalar> g;
    auto result = forward(g, params, s.features, mode);
    loss_sum += static_cast<double>(g.value(qa_loss(result.answer, s.label))(0));
    const std::size_t f = static_cast<std::size_t>(s.family);
    ++r.family_total[f];
    if (result.answer.predicted == s.label) {
      ++hits;
      ++correct[f];
    }
  }
  r.accuracy = static_cast<double>(hits) / static_cast<double>(ds.samples.size());
  r.mean_loss = loss_sum / static_cast<double>(ds.samples.size());
  for (std::size_t f = 0; f < kFamilyCount; ++f) {
    r.family_accuracy[f] = r.family_total[f] > 0
                               ? static_cast<double>(correct[f]) /
                                     static_cast<double>(r.family_total[f])
                               : -1.0;
  }
  return r;
}

template <typename Scalar>
double mean_dataset_loss(const ModelParams<Scalar>& params, const Dataset<Scalar>& ds,
                         const PipelineMode& mode) {
  double sum = 0.0;
  for (const auto& s : ds.samples) {
    Graph<Scalar> g;
    sum += sample_loss(g, params, s, mode);
  }
  return sum / static_cast<double>(ds.samples.size());
}

// Mini-batch Adam training; gradients are averaged over the batch and the
// learning rate follows the stepped decay schedule. Throws TrainingDiverged
// on any non-finite loss.
template <typename Scalar>
TrainLog train(
    ModelParams<Scalar>& params, const Dataset<Scalar>& train_set, const Dataset<Scalar>& val_set,
    const PipelineMode& mode, const TrainOptions<Scalar>& opts,
    const std::type_identity_t<
        std::function<void(const EpochLog&, const ModelParams<Scalar>&)>>& per_epoch = {}) {
  if (train_set.samples.empty()) throw ContractError("train: empty dataset");
  if (opts.batch_size < 1) throw ContractError("train: batch size must be positive");

  TrainLog log;
  std::vector<Tensor<Scalar>*> param_ptrs = param_pointers(params);
  AdamState<Scalar> adam(opts.adam, param_ptrs);
  Rng dropout_rng(derive_seed(opts.seed, "dropout"));

  if (opts.record_init_loss) {
    log.init_train_loss = mean_dataset_loss(params, train_set, mode);
    if (!val_set.samples.empty()) {
      log.init_val_accuracy = evaluate(params, val_set, mode).accuracy;
    }
  }

  std::vector<Tensor<Scalar>> grads;
  for (const Tensor<Scalar>* p : param_ptrs) grads.push_back(Tensor<Scalar>::zeros(p->dims()));
  std::vector<const Tensor<Scalar>*> grad_ptrs;
  for (const auto& gt : grads) grad_ptrs.push_back(&gt);

  const Index n = static_cast<Index>(train_set.samples.size());
  std::vector<Index> order(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;

  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    adam.set_epoch(epoch);
    Rng shuffle_rng(derive_seed(opts.seed, "shuffle", static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);

    double epoch_loss = 0.0;
    for (Index start = 0; start < n; start += opts.batch_size) {
      const Index bsz = std::min<Index>(opts.batch_size, n - start);
      const Scalar inv = Scalar(1) / static_cast<Scalar>(bsz);
      for (auto& gt : grads) gt.array() = Scalar(0);

      for (Index b = 0; b < bsz; ++b) {
        const auto& s = train_set.samples[static_cast<std::size_t>(order[static_cast<std::size_t>(start + b)])];
        Graph<Scalar> g;
        g.set_training(true, &dropout_rng);
        ModelVars<Scalar> vars = bind(g, params, true);
        ForwardResult<Scalar> result;
        Var<Scalar> loss;
        try {
          result = forward(g, vars, params.cfg, s.features, mode);
          loss = qa_loss(result.answer, s.label);
        } catch (const NumericError& e) {
          throw TrainingDiverged("non-finite values at epoch " + std::to_string(epoch + 1) +
                                 ", batch " + std::to_string(start / opts.batch_size) + ": " +
                                 e.what());
        }
        const double loss_value = static_cast<double>(g.value(loss)(0));
        if (!std::isfinite(loss_value)) {
          throw TrainingDiverged("non-finite loss at epoch " + std::to_string(epoch + 1));
        }
        epoch_loss += loss_value;
        g.backward(loss);
        std::size_t pi = 0;
        visit_vars(vars, [&](const std::string&, Var<Scalar> v) {
          if (g.has_grad(v)) grads[pi].array() += g.grad(v).array() * inv;
          ++pi;
        });
      }
      adam.step(param_ptrs, grad_ptrs);
    }

    EpochLog el;
    el.epoch = epoch + 1;
    el.lr = static_cast<double>(adam.effective_lr());
    el.train_loss = epoch_loss / static_cast<double>(n);
    el.val_accuracy = val_set.samples.empty() ? -1.0 : evaluate(params, val_set, mode).accuracy;
    log.epochs.push_back(el);
    if (per_epoch) per_epoch(el, params);
  }
  return log;
}

// ---------------------------------------------------------------------------
// Ablation runner.
// ---------------------------------------------------------------------------

struct AblationArm {
  std::string name;
  PipelineMode mode;
  Index experts_override = -1;  // replaces TaskConfig.experts when positive
};

struct AblationRow {
  std::string arm;
  std::uint64_t seed = 0;
  Index experts = 0;
  double test_accuracy = 0.0;
  std::array<double, kFamilyCount> family_accuracy{};
  double init_train_loss = 0.0;
  std::vector<double> epoch_train_loss;
  double final_val_accuracy = 0.0;
};

struct AblationSummary {
  std::string arm;
  int runs = 0;
  double mean_accuracy = 0.0;
  double std_accuracy = 0.0;
  std::array<double, kFamilyCount> mean_family_accuracy{};
};

// Table-style module toggles: question-aware fusion and the experts module
// each on/off, uniform pooling standing in when the experts are off.
inline std::vector<AblationArm> module_toggle_arms() {
  auto arm = [](const std::string& name, bool fusion_on, bool experts_on) {
    AblationArm a;
    a.name = name;
    a.mode.fusion_on = fusion_on;
    a.mode.strategy = experts_on ? PoolingStrategy::kGaussianExperts : PoolingStrategy::kUniform;
    return a;
  };
  return {arm("both_off", false, false), arm("fusion_only", true, false),
          arm("experts_only", false, true), arm("both_on", true, true)};
}

// Sampling-strategy comparison; question-aware fusion stays on in every arm.
inline std::vector<AblationArm> strategy_arms(const std::vector<PoolingStrategy>& strategies,
                                              Index top_k = 10) {
  std::vector<AblationArm> arms;
  for (PoolingStrategy s : strategies) {
    AblationArm a;
    a.name = to_string(s);
    a.mode.strategy = s;
    a.mode.fusion_on = true;
    a.mode.top_k = top_k;
    arms.push_back(a);
  }
  return arms;
}

inline std::vector<AblationArm> expert_sweep_arms(const std::vector<Index>& counts) {
  std::vector<AblationArm> arms;
  for (Index e : counts) {
    AblationArm a;
    a.name = "experts_" + std::to_string(e);
    a.mode.strategy = PoolingStrategy::kGaussianExperts;
    a.experts_override = e;
    arms.push_back(a);
  }
  return arms;
}

// One model per (arm, seed) on a shared dataset: the task seed fixes the data,
// the run seed drives the init, shuffling and dropout. Jobs run in parallel
// threads but each training loop stays sequential and deterministic.
template <typename Scalar>
std::vector<AblationRow> run_ablation(const TaskConfig& task, const TrainOptions<Scalar>& base_opts,
                                      const std::vector<AblationArm>& arms,
                                      const std::vector<std::uint64_t>& seeds, int jobs = 1) {
  if (seeds.empty()) throw ContractError("run_ablation: need at least one seed");
  validate(task);
  const TaskData<Scalar> data = generate_task<Scalar>(task);

  struct Job {
    const AblationArm* arm;
    std::uint64_t seed;
  };
  std::vector<Job> job_list;
  for (const auto& arm : arms) {
    for (std::uint64_t seed : seeds) job_list.push_back({&arm, seed});
  }
  std::vector<AblationRow> rows(job_list.size());

  auto run_one = [&](std::size_t ji) {
    const Job& job = job_list[ji];
    ModelConfig mc = task.model_config();
    if (job.arm->experts_override > 0) mc.experts = job.arm->experts_override;
    ModelParams<Scalar> params = init_model<Scalar>(mc, derive_seed(job.seed, "model"));
    TrainOptions<Scalar> opts = base_opts;
    opts.seed = job.seed;
    TrainLog log = train(params, data.train, data.val, job.arm->mode, opts);
    EvalResult test = evaluate(params, data.test, job.arm->mode);

    AblationRow row;
    row.arm = job.arm->name;
    row.seed = job.seed;
    row.experts = mc.experts;
    row.test_accuracy = test.accuracy;
    row.family_accuracy = test.family_accuracy;
    row.init_train_loss = log.init_train_loss;
    for (const auto& el : log.epochs) row.epoch_train_loss.push_back(el.train_loss);
    row.final_val_accuracy = log.epochs.empty() ? -1.0 : log.epochs.back().val_accuracy;
    rows[ji] = row;
  };

  const int workers = std::max(1, std::min<int>(jobs, static_cast<int>(job_list.size())));
  if (workers == 1) {
    for (std::size_t ji = 0; ji < job_list.size(); ++ji) run_one(ji);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t ji = next.fetch_add(1); ji < job_list.size(); ji = next.fetch_add(1)) {
          run_one(ji);
        }
      });
    }
    for (auto& th : pool) th.join();
  }
  return rows;
}

inline std::vector<AblationSummary> summarize(const std::vector<AblationRow>& rows) {
  std::vector<AblationSummary> out;
  for (const auto& row : rows) {
    AblationSummary* s = nullptr;
    for (auto& existing : out) {
      if (existing.arm == row.arm) s = &existing;
    }
    if (s == nullptr) {
      out.push_back({});
      s = &out.back();
      s->arm = row.arm;
    }
    ++s->runs;
    s->mean_accuracy += row.test_accuracy;
    for (std::size_t f = 0; f < kFamilyCount; ++f) {
      s->mean_family_accuracy[f] += row.family_accuracy[f];
    }
  }
  for (auto& s : out) {
    s.mean_accuracy /= s.runs;
    for (auto& f : s.mean_family_accuracy) f /= s.runs;
  }
  for (auto& s : out) {
    double var = 0.0;
    int n = 0;
    for (const auto& row : rows) {
      if (row.arm == s.arm) {
        var += (row.test_accuracy - s.mean_accuracy) * (row.test_accuracy - s.mean_accuracy);
        ++n;
      }
    }
    s.std_accuracy = n > 1 ? std::sqrt(var / (n - 1)) : 0.0;
  }
  return out;
}

}  // namespace qatiger
