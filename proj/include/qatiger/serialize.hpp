// Checkpoints and dataset files on top of the QTGF container.
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "qatiger/container.hpp"
#include "qatiger/model.hpp"
#include "qatiger/synthetic.hpp"

namespace qatiger {

inline constexpr const char* kModelMetaName = "meta.config";
inline constexpr const char* kTaskMetaName = "task.config";

template <typename Scalar>
void save_model(const std::string& path, const ModelParams<Scalar>& params) {
  std::vector<NamedTensor> records;
  Tensord meta({9});
  meta(0) = static_cast<double>(params.cfg.d);
  meta(1) = static_cast<double>(params.cfg.dv);
  meta(2) = static_cast<double>(params.cfg.da);
  meta(3) = static_cast<double>(params.cfg.dq);
  meta(4) = static_cast<double>(params.cfg.m_prime);
  meta(5) = static_cast<double>(params.cfg.classes);
  meta(6) = static_cast<double>(params.cfg.experts);
  meta(7) = static_cast<double>(params.cfg.heads);
  meta(8) = params.cfg.dropout;
  records.push_back(to_record(kModelMetaName, meta));
  visit_params(params, [&](const std::string& name, const Tensor<Scalar>& t) {
    records.push_back(to_record(name, t));
  });
  write_container(path, records);
}

template <typename Scalar>
ModelParams<Scalar> load_model(const std::string& path) {
  const std::vector<NamedTensor> records = read_container(path);
  const Tensord meta = from_record<double>(find_record(records, kModelMetaName));
  if (meta.size() != 9) {
    throw ContainerError(ContainerErrorKind::kIo, "malformed model meta record");
  }
  ModelConfig cfg;
  cfg.d = static_cast<Index>(meta(0));
  cfg.dv = static_cast<Index>(meta(1));
  cfg.da = static_cast<Index>(meta(2));
  cfg.dq = static_cast<Index>(meta(3));
  cfg.m_prime = static_cast<Index>(meta(4));
  cfg.classes = static_cast<Index>(meta(5));
  cfg.experts = static_cast<Index>(meta(6));
  cfg.heads = static_cast<Index>(meta(7));
  cfg.dropout = meta(8);

  ModelParams<Scalar> params = init_model<Scalar>(cfg, 0);
  std::size_t expected = 1;  // the meta record
  visit_params(params, [&](const std::string& name, Tensor<Scalar>& t) {
    Tensor<Scalar> loaded = from_record<Scalar>(find_record(records, name));
    if (!loaded.same_shape(t)) {
      throw ContainerError(ContainerErrorKind::kIo, "checkpoint shape mismatch for " + name);
    }
    t = std::move(loaded);
    ++expected;
  });
  if (expected != records.size()) {
    throw ContainerError(ContainerErrorKind::kIo, "checkpoint holds unexpected extra tensors");
  }
  return params;
}

namespace detail {

inline std::uint32_t families_mask(const std::vector<QuestionFamily>& fams) {
  std::uint32_t mask = 0;
  for (QuestionFamily f : fams) mask |= 1u << static_cast<int>(f);
  return mask;
}

inline std::vector<QuestionFamily> families_from_mask(std::uint32_t mask) {
  std::vector<QuestionFamily> fams;
  for (int f = 0; f < kFamilyCount; ++f) {
    if (mask & (1u << f)) fams.push_back(static_cast<QuestionFamily>(f));
  }
  return fams;
}

}  // namespace detail

inline Tensord task_meta_tensor(const TaskConfig& cfg) {
  Tensord meta({21});
  meta(0) = static_cast<double>(cfg.t);
  meta(1) = static_cast<double>(cfg.dv);
  meta(2) = static_cast<double>(cfg.da);
  meta(3) = static_cast<double>(cfg.dq);
  meta(4) = static_cast<double>(cfg.m_prime);
  meta(5) = static_cast<double>(cfg.n_words);
  meta(6) = static_cast<double>(cfg.classes);
  meta(7) = static_cast<double>(cfg.experts);
  meta(8) = static_cast<double>(cfg.heads);
  meta(9) = static_cast<double>(cfg.d);
  meta(10) = static_cast<double>(cfg.event_min);
  meta(11) = static_cast<double>(cfg.event_max);
  meta(12) = cfg.noise;
  meta(13) = cfg.dropout;
  meta(14) = static_cast<double>(cfg.signature_count);
  meta(15) = static_cast<double>(cfg.train_size);
  meta(16) = static_cast<double>(cfg.val_size);
  meta(17) = static_cast<double>(cfg.test_size);
  meta(18) = static_cast<double>(cfg.seed & 0xffffffffULL);
  meta(19) = static_cast<double>(cfg.seed >> 32);
  meta(20) = static_cast<double>(detail::families_mask(cfg.families));
  return meta;
}

inline TaskConfig task_from_meta(const Tensord& meta) {
  if (meta.size() != 21) {
    throw ContainerError(ContainerErrorKind::kIo, "malformed task meta record");
  }
  TaskConfig cfg;
  cfg.t = static_cast<Index>(meta(0));
  cfg.dv = static_cast<Index>(meta(1));
  cfg.da = static_cast<Index>(meta(2));
  cfg.dq = static_cast<Index>(meta(3));
  cfg.m_prime = static_cast<Index>(meta(4));
  cfg.n_words = static_cast<Index>(meta(5));
  cfg.classes = static_cast<Index>(meta(6));
  cfg.experts = static_cast<Index>(meta(7));
  cfg.heads = static_cast<Index>(meta(8));
  cfg.d = static_cast<Index>(meta(9));
  cfg.event_min = static_cast<int>(meta(10));
  cfg.event_max = static_cast<int>(meta(11));
  cfg.noise = meta(12);
  cfg.dropout = meta(13);
  cfg.signature_count = static_cast<Index>(meta(14));
  cfg.train_size = static_cast<Index>(meta(15));
  cfg.val_size = static_cast<Index>(meta(16));
  cfg.test_size = static_cast<Index>(meta(17));
  cfg.seed = static_cast<std::uint64_t>(meta(18)) |
             (static_cast<std::uint64_t>(meta(19)) << 32);
  cfg.families = detail::families_from_mask(static_cast<std::uint32_t>(meta(20)));
  return cfg;
}

template <typename Scalar>
void append_split_records(std::vector<NamedTensor>& records, const std::string& prefix,
                          const Dataset<Scalar>& ds) {
  const TaskConfig& cfg = ds.cfg;
  const Index n = static_cast<Index>(ds.samples.size());
  Tensor<Scalar> visual({n, cfg.t, cfg.dv});
  Tensor<Scalar> audio({n, cfg.t, cfg.da});
  Tensor<Scalar> patches({n, cfg.t, cfg.m_prime * cfg.dv});
  Tensor<Scalar> sentence({n, cfg.dq});
  Tensor<Scalar> words({n, cfg.n_words, cfg.dq});
  Tensord labels({n, Index(4)});  // label, family, sig_a, sig_b
  std::vector<double> event_rows;
  for (Index i = 0; i < n; ++i) {
    const auto& s = ds.samples[static_cast<std::size_t>(i)];
    visual.mat(i) = s.features.visual.mat();
    audio.mat(i) = s.features.audio.mat();
    Eigen::Map<const MatrixRM<Scalar>> pflat(s.features.patches.data(), cfg.t,
                                             cfg.m_prime * cfg.dv);
    patches.mat(i) = pflat;
    for (Index c = 0; c < cfg.dq; ++c) sentence(i, c) = s.features.sentence(c);
    words.mat(i) = s.features.words.mat();
    labels(i, 0) = static_cast<double>(s.label);
    labels(i, 1) = static_cast<double>(static_cast<int>(s.family));
    labels(i, 2) = static_cast<double>(s.sig_a);
    labels(i, 3) = static_cast<double>(s.sig_b);
    for (const PlantedEvent& e : s.events) {
      const double row[8] = {static_cast<double>(i),       static_cast<double>(e.signature),
                             static_cast<double>(e.begin), static_cast<double>(e.end),
                             e.amp_v,                      e.amp_a,
                             e.amp_p,                      static_cast<double>(e.patch_slot)};
      event_rows.insert(event_rows.end(), row, row + 8);
    }
  }
  records.push_back(to_record(prefix + ".visual", visual));
  records.push_back(to_record(prefix + ".audio", audio));
  records.push_back(to_record(prefix + ".patches", patches));
  records.push_back(to_record(prefix + ".sentence", sentence));
  records.push_back(to_record(prefix + ".words", words));
  records.push_back(to_record(prefix + ".labels", labels));
  const Index ne = static_cast<Index>(event_rows.size() / 8);
  Tensord events =
      ne > 0 ? Tensord({ne, Index(8)}, std::move(event_rows)) : Tensord::zeros({Index(1), Index(8)});
  if (ne == 0) events(0, 0) = -1.0;  // sentinel: no events
  records.push_back(to_record(prefix + ".events", events));
}

template <typename Scalar>
Dataset<Scalar> split_from_records(const std::vector<NamedTensor>& records,
                                   const std::string& prefix, const TaskConfig& cfg) {
  Dataset<Scalar> ds;
  ds.cfg = cfg;
  Tensor<Scalar> visual = from_record<Scalar>(find_record(records, prefix + ".visual"));
  Tensor<Scalar> audio = from_record<Scalar>(find_record(records, prefix + ".audio"));
  Tensor<Scalar> patches = from_record<Scalar>(find_record(records, prefix + ".patches"));
  Tensor<Scalar> sentence = from_record<Scalar>(find_record(records, prefix + ".sentence"));
  Tensor<Scalar> words = from_record<Scalar>(find_record(records, prefix + ".words"));
  Tensord labels = from_record<double>(find_record(records, prefix + ".labels"));
  Tensord events = from_record<double>(find_record(records, prefix + ".events"));

  const Index n = visual.dim(0);
  ds.samples.resize(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    auto& s = ds.samples[static_cast<std::size_t>(i)];
    s.features.visual = Tensor<Scalar>({cfg.t, cfg.dv});
    s.features.visual.mat() = visual.mat(i);
    s.features.audio = Tensor<Scalar>({cfg.t, cfg.da});
    s.features.audio.mat() = audio.mat(i);
    s.features.patches = Tensor<Scalar>({cfg.t, cfg.m_prime, cfg.dv});
    Eigen::Map<MatrixRM<Scalar>> pflat(s.features.patches.data(), cfg.t, cfg.m_prime * cfg.dv);
    pflat = patches.mat(i);
    s.features.sentence = Tensor<Scalar>({cfg.dq});
    for (Index c = 0; c < cfg.dq; ++c) s.features.sentence(c) = sentence(i, c);
    s.features.words = Tensor<Scalar>({cfg.n_words, cfg.dq});
    s.features.words.mat() = words.mat(i);
    s.label = static_cast<Index>(labels(i, 0));
    s.family = static_cast<QuestionFamily>(static_cast<int>(labels(i, 1)));
    s.sig_a = static_cast<Index>(labels(i, 2));
    s.sig_b = static_cast<Index>(labels(i, 3));
  }
  if (!(events.dim(0) == 1 && events(0, 0) < 0)) {
    for (Index r = 0; r < events.dim(0); ++r) {
      PlantedEvent e;
      const Index sample_index = static_cast<Index>(events(r, 0));
      e.signature = static_cast<Index>(events(r, 1));
      e.begin = static_cast<Index>(events(r, 2));
      e.end = static_cast<Index>(events(r, 3));
      e.amp_v = events(r, 4);
      e.amp_a = events(r, 5);
      e.amp_p = events(r, 6);
      e.patch_slot = static_cast<Index>(events(r, 7));
      ds.samples[static_cast<std::size_t>(sample_index)].events.push_back(e);
    }
  }
  return ds;
}

template <typename Scalar>
void save_task_data(const std::string& path, const TaskData<Scalar>& data) {
  std::vector<NamedTensor> records;
  records.push_back(to_record(kTaskMetaName, task_meta_tensor(data.train.cfg)));
  append_split_records(records, "train", data.train);
  append_split_records(records, "val", data.val);
  append_split_records(records, "test", data.test);
  write_container(path, records);
}

template <typename Scalar>
TaskData<Scalar> load_task_data(const std::string& path) {
  const std::vector<NamedTensor> records = read_container(path);
  const TaskConfig cfg = task_from_meta(from_record<double>(find_record(records, kTaskMetaName)));
  return {split_from_records<Scalar>(records, "train", cfg),
          split_from_records<Scalar>(records, "val", cfg),
          split_from_records<Scalar>(records, "test", cfg)};
}

}  // namespace qatiger
