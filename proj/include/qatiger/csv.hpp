// CSV exports: Gaussian curve dumps, training logs, ablation tables.
// Doubles print as %.17g so identical state re-exports identical bytes.
#pragma once

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "qatiger/experts.hpp"
#include "qatiger/train.hpp"

namespace qatiger {

struct CsvError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string csv_num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::ofstream open_csv(const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw CsvError("cannot open for writing: " + path);
  return f;
}

}  // namespace detail

// One row per (modality, expert, t) with the expert's routing weight, then an
// `integrated` pseudo-expert per modality carrying Σ_i r_i·g[i,t].
template <typename Scalar>
void export_gaussian_curves(const GaussianMixtureState<Scalar>& state, const std::string& path) {
  std::ofstream f = detail::open_csv(path);
  f << "modality,expert,routing,t,weight\n";
  auto pathway = [&](const char* modality,
                     const typename GaussianMixtureState<Scalar>::Pathway& p) {
    const Index e = p.curves.dim(0);
    const Index t_count = p.curves.dim(1);
    for (Index i = 0; i < e; ++i) {
      for (Index t = 0; t < t_count; ++t) {
        f << modality << ',' << i << ',' << detail::csv_num(static_cast<double>(p.routing(i)))
          << ',' << t << ',' << detail::csv_num(static_cast<double>(p.curves(i, t))) << '\n';
      }
    }
    for (Index t = 0; t < t_count; ++t) {
      double integrated = 0.0;
      for (Index i = 0; i < e; ++i) {
        integrated += static_cast<double>(p.routing(i)) * static_cast<double>(p.curves(i, t));
      }
      f << modality << ",integrated,1," << t << ',' << detail::csv_num(integrated) << '\n';
    }
  };
  pathway("visual", state.visual);
  pathway("audio", state.audio);
  if (!f) throw CsvError("write failed: " + path);
}

inline void write_train_log_csv(const std::string& path, const TrainLog& log, double initial_lr) {
  std::ofstream f = detail::open_csv(path);
  f << "epoch,lr,train_loss,val_accuracy\n";
  f << "0," << detail::csv_num(initial_lr) << ',' << detail::csv_num(log.init_train_loss) << ','
    << detail::csv_num(log.init_val_accuracy) << '\n';
  for (const EpochLog& e : log.epochs) {
    f << e.epoch << ',' << detail::csv_num(e.lr) << ',' << detail::csv_num(e.train_loss) << ','
      << detail::csv_num(e.val_accuracy) << '\n';
  }
  if (!f) throw CsvError("write failed: " + path);
}

inline void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows,
                               const std::vector<AblationSummary>& summaries) {
  std::ofstream f = detail::open_csv(path);
  f << "kind,arm,seed,experts,accuracy,acc_existence,acc_counting,acc_temporal_order,"
       "acc_comparative,init_train_loss,final_val_accuracy\n";
  for (const AblationRow& r : rows) {
    f << "run," << r.arm << ',' << r.seed << ',' << r.experts << ','
      << detail::csv_num(r.test_accuracy);
    for (double fa : r.family_accuracy) f << ',' << detail::csv_num(fa);
    f << ',' << detail::csv_num(r.init_train_loss) << ','
      << detail::csv_num(r.final_val_accuracy) << '\n';
  }
  for (const AblationSummary& s : summaries) {
    f << "mean," << s.arm << ",," << ',' << detail::csv_num(s.mean_accuracy);
    for (double fa : s.mean_family_accuracy) f << ',' << detail::csv_num(fa);
    f << ",,\n";
    f << "std," << s.arm << ",," << ',' << detail::csv_num(s.std_accuracy) << ",,,,,,\n";
  }
  if (!f) throw CsvError("write failed: " + path);
}

}  // namespace qatiger
