// Synthetic temporal-grounding benchmark: multimodal sequences built from a
// noise background plus signature vectors planted over contiguous segments,
// paired with deterministically encoded questions from four families.
//
// Labels share one answer space the way AVQA vocabularies do: binary families
// use classes {0 = no, 1 = yes}, counting uses class c for count c.
#pragma once

#include <array>
#include <string>
#include <vector>

#include "qatiger/model.hpp"
#include "qatiger/random.hpp"

namespace qatiger {

enum class QuestionFamily : int {
  kExistence = 0,
  kCounting = 1,
  kTemporalOrder = 2,
  kComparative = 3,
};

inline constexpr int kFamilyCount = 4;

inline const char* to_string(QuestionFamily f) {
  switch (f) {
    case QuestionFamily::kExistence: return "existence";
    case QuestionFamily::kCounting: return "counting";
    case QuestionFamily::kTemporalOrder: return "temporal_order";
    case QuestionFamily::kComparative: return "comparative";
  }
  return "?";
}

inline QuestionFamily parse_family(const std::string& s) {
  if (s == "existence") return QuestionFamily::kExistence;
  if (s == "counting") return QuestionFamily::kCounting;
  if (s == "temporal_order") return QuestionFamily::kTemporalOrder;
  if (s == "comparative") return QuestionFamily::kComparative;
  throw ContractError("unknown question family: " + s);
}

struct TaskConfig {
  Index t = 60;         // 1-second segments per clip
  Index dv = 48;        // raw visual width
  Index da = 24;        // raw audio width
  Index dq = 32;        // raw question width
  Index m_prime = 4;    // merged patch tokens per segment
  Index n_words = 8;    // question tokens including padding
  Index classes = 5;
  Index experts = 7;
  Index heads = 8;
  Index d = 64;         // shared embedding width
  int event_min = 0;
  int event_max = 4;
  double noise = 0.25;
  double dropout = 0.1;
  Index signature_count = 6;
  Index train_size = 2000;
  Index val_size = 250;
  Index test_size = 500;
  std::uint64_t seed = 1;
  std::vector<QuestionFamily> families = {QuestionFamily::kExistence, QuestionFamily::kCounting,
                                          QuestionFamily::kTemporalOrder,
                                          QuestionFamily::kComparative};

  ModelConfig model_config() const {
    ModelConfig m;
    m.d = d;
    m.dv = dv;
    m.da = da;
    m.dq = dq;
    m.m_prime = m_prime;
    m.classes = classes;
    m.experts = experts;
    m.heads = heads;
    m.dropout = dropout;
    return m;
  }
};

inline void validate(const TaskConfig& cfg) {
  if (cfg.classes < 2) throw ContractError("task needs at least 2 answer classes");
  if (cfg.t < 4 || cfg.dv < 1 || cfg.da < 1 || cfg.dq < 1 || cfg.m_prime < 1) {
    throw ContractError("task dims must be positive (and T at least 4)");
  }
  if (cfg.n_words < 3) throw ContractError("need at least 3 question tokens");
  if (cfg.signature_count < 3) throw ContractError("need at least 3 signatures");
  if (cfg.families.empty()) throw ContractError("at least one question family required");
  if (cfg.event_min < 0 || cfg.event_max < 1 || cfg.event_min > cfg.event_max) {
    throw ContractError("bad event count range");
  }
  for (QuestionFamily f : cfg.families) {
    if (f == QuestionFamily::kCounting && cfg.classes < cfg.event_max + 1) {
      throw ContractError("counting labels need classes >= event_max + 1");
    }
  }
}

struct PlantedEvent {
  Index signature = 0;
  Index begin = 0;  // segments [begin, end)
  Index end = 0;
  double amp_v = 1.0;
  double amp_a = 1.0;
  double amp_p = 1.0;
  Index patch_slot = 0;

  Index duration() const { return end - begin; }
};

template <typename Scalar>
struct SyntheticSample {
  SampleFeatures<Scalar> features;
  Index label = 0;
  QuestionFamily family = QuestionFamily::kExistence;
  Index sig_a = 0;   // queried signature
  Index sig_b = -1;  // second operand for two-signature families
  std::vector<PlantedEvent> events;
};

// Signature and token vectors shared by every sample of a task; derived from
// the task seed only.
template <typename Scalar>
struct TaskVocabulary {
  std::vector<Tensor<Scalar>> sig_visual, sig_audio, sig_patch, sig_question;
  std::array<Tensor<Scalar>, kFamilyCount> family_tokens;
  Tensor<Scalar> role_first, role_second, pad_token;
};

namespace detail {

template <typename Scalar>
Tensor<Scalar> unit_vector(Rng& rng, Index n) {
  Tensor<Scalar> v = rng.normal_tensor<Scalar>({n});
  const double norm = std::sqrt(static_cast<double>(v.array().square().sum()));
  v.array() /= static_cast<Scalar>(norm > 0 ? norm : 1.0);
  return v;
}

}  // namespace detail

template <typename Scalar>
TaskVocabulary<Scalar> make_vocabulary(const TaskConfig& cfg) {
  Rng rng(derive_seed(cfg.seed, "vocabulary"));
  TaskVocabulary<Scalar> v;
  for (Index k = 0; k < cfg.signature_count; ++k) {
    v.sig_visual.push_back(detail::unit_vector<Scalar>(rng, cfg.dv));
    v.sig_audio.push_back(detail::unit_vector<Scalar>(rng, cfg.da));
    v.sig_patch.push_back(detail::unit_vector<Scalar>(rng, cfg.dv));
    v.sig_question.push_back(detail::unit_vector<Scalar>(rng, cfg.dq));
  }
  for (int f = 0; f < kFamilyCount; ++f) {
    v.family_tokens[static_cast<std::size_t>(f)] = detail::unit_vector<Scalar>(rng, cfg.dq);
  }
  v.role_first = detail::unit_vector<Scalar>(rng, cfg.dq);
  v.role_second = detail::unit_vector<Scalar>(rng, cfg.dq);
  v.pad_token = detail::unit_vector<Scalar>(rng, cfg.dq);
  return v;
}

namespace detail {

// Jittered span of `len` segments inside block `bi` of `n` equal blocks; the
// last in-block segment stays free so adjacent events never touch.
inline std::pair<Index, Index> place_in_block(Rng& rng, Index t, Index n, Index bi, Index len) {
  const Index block = t / n;
  const Index lo = bi * block;
  const Index slack = block - len - 1;
  const Index begin = lo + (slack > 0 ? static_cast<Index>(rng.range(0, static_cast<int>(slack)))
                                      : Index(0));
  return {begin, begin + len};
}

// Place n events in n disjoint equal blocks of [0, T); block order carries the
// temporal structure, jitter and duration are per-event noise.
inline std::vector<std::pair<Index, Index>> place_events(Rng& rng, Index t, Index n) {
  std::vector<std::pair<Index, Index>> spans;
  const Index block = t / n;
  for (Index i = 0; i < n; ++i) {
    const Index max_len = std::max<Index>(1, block - 2);
    const Index min_len = std::max<Index>(1, (2 * block) / 5);
    const Index len = min_len >= max_len
                          ? max_len
                          : static_cast<Index>(rng.range(static_cast<int>(min_len),
                                                         static_cast<int>(max_len)));
    spans.push_back(place_in_block(rng, t, n, i, len));
  }
  return spans;
}

template <typename Scalar>
void plant(SyntheticSample<Scalar>& sample, const TaskVocabulary<Scalar>& vocab,
           const TaskConfig& cfg, Rng& rng, Index signature, Index begin, Index end) {
  PlantedEvent ev;
  ev.signature = signature;
  ev.begin = begin;
  ev.end = end;
  ev.amp_v = rng.uniform(1.2, 1.8);
  ev.amp_a = rng.uniform(1.2, 1.8);
  ev.amp_p = rng.uniform(1.2, 1.8);
  ev.patch_slot = static_cast<Index>(rng.below(static_cast<std::uint64_t>(cfg.m_prime)));
  const std::size_t k = static_cast<std::size_t>(signature);
  for (Index t = begin; t < end; ++t) {
    for (Index c = 0; c < cfg.dv; ++c) {
      sample.features.visual(t, c) += static_cast<Scalar>(ev.amp_v) * vocab.sig_visual[k](c);
      sample.features.patches(t, ev.patch_slot, c) +=
          static_cast<Scalar>(ev.amp_p) * vocab.sig_patch[k](c);
    }
    for (Index c = 0; c < cfg.da; ++c) {
      sample.features.audio(t, c) += static_cast<Scalar>(ev.amp_a) * vocab.sig_audio[k](c);
    }
  }
  sample.events.push_back(ev);
}

template <typename Scalar>
void encode_question(SyntheticSample<Scalar>& sample, const TaskVocabulary<Scalar>& vocab,
                     const TaskConfig& cfg) {
  const auto fam = vocab.family_tokens[static_cast<std::size_t>(sample.family)];
  Tensor<Scalar> qs({cfg.dq});
  qs.array() = fam.array() + Scalar(0.9) * vocab.sig_question[static_cast<std::size_t>(sample.sig_a)].array();
  if (sample.sig_b >= 0) {
    qs.array() += Scalar(0.45) * vocab.sig_question[static_cast<std::size_t>(sample.sig_b)].array();
  }
  const double norm = std::sqrt(static_cast<double>(qs.array().square().sum()));
  qs.array() /= static_cast<Scalar>(norm);
  sample.features.sentence = qs;

  Tensor<Scalar> qw({cfg.n_words, cfg.dq});
  auto set_row = [&](Index r, const Tensor<Scalar>& v) {
    for (Index c = 0; c < cfg.dq; ++c) qw(r, c) = v(c);
  };
  set_row(0, fam);
  Tensor<Scalar> first({cfg.dq});
  first.array() = vocab.sig_question[static_cast<std::size_t>(sample.sig_a)].array() +
                  vocab.role_first.array();
  set_row(1, first);
  if (sample.sig_b >= 0) {
    Tensor<Scalar> second({cfg.dq});
    second.array() = vocab.sig_question[static_cast<std::size_t>(sample.sig_b)].array() +
                     vocab.role_second.array();
    set_row(2, second);
  } else {
    set_row(2, vocab.pad_token);
  }
  for (Index r = 3; r < cfg.n_words; ++r) set_row(r, vocab.pad_token);
  sample.features.words = qw;
}

}  // namespace detail

// One sample realizing (family, label); deterministic given the sample seed.
template <typename Scalar>
SyntheticSample<Scalar> make_sample(const TaskConfig& cfg, const TaskVocabulary<Scalar>& vocab,
                                    QuestionFamily family, Index label, std::uint64_t sample_seed) {
  Rng rng(sample_seed);
  SyntheticSample<Scalar> s;
  s.family = family;
  s.label = label;
  s.features.visual = rng.normal_tensor<Scalar>({cfg.t, cfg.dv}, cfg.noise);
  s.features.audio = rng.normal_tensor<Scalar>({cfg.t, cfg.da}, cfg.noise);
  s.features.patches = rng.normal_tensor<Scalar>({cfg.t, cfg.m_prime, cfg.dv}, cfg.noise);

  auto other_sig = [&](Index avoid1, Index avoid2 = -1) {
    Index k = 0;
    do {
      k = static_cast<Index>(rng.below(static_cast<std::uint64_t>(cfg.signature_count)));
    } while (k == avoid1 || k == avoid2);
    return k;
  };
  s.sig_a = static_cast<Index>(rng.below(static_cast<std::uint64_t>(cfg.signature_count)));

  switch (family) {
    case QuestionFamily::kExistence: {
      const Index n_query = s.label == 1 ? static_cast<Index>(rng.range(1, 2)) : 0;
      const Index n_distract = static_cast<Index>(rng.range(1, 2));
      auto spans = detail::place_events(rng, cfg.t, n_query + n_distract);
      std::vector<Index> order(spans.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<Index>(i);
      rng.shuffle(order);
      for (Index i = 0; i < n_query + n_distract; ++i) {
        const auto& span = spans[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];
        const Index sig = i < n_query ? s.sig_a : other_sig(s.sig_a);
        detail::plant(s, vocab, cfg, rng, sig, span.first, span.second);
      }
      break;
    }
    case QuestionFamily::kCounting: {
      // class c ↔ c occupied blocks of a fixed grid. Event length is drawn
      // from the same range regardless of the count, so total signal mass
      // stays ambiguous between neighboring counts and the label can only be
      // read off as the number of distinct occupied regions.
      const Index count = s.label;
      const Index grid = static_cast<Index>(cfg.event_max) + 1;
      const Index block = cfg.t / grid;
      std::vector<Index> blocks(static_cast<std::size_t>(grid));
      for (Index i = 0; i < grid; ++i) blocks[static_cast<std::size_t>(i)] = i;
      rng.shuffle(blocks);
      auto block_len = [&]() {
        const Index lo = std::max<Index>(1, block / 3);
        const Index hi = std::max<Index>(lo, (3 * block) / 4);
        return lo >= hi ? hi : static_cast<Index>(rng.range(static_cast<int>(lo),
                                                            static_cast<int>(hi)));
      };
      for (Index i = 0; i < count; ++i) {
        auto span = detail::place_in_block(rng, cfg.t, grid, blocks[static_cast<std::size_t>(i)],
                                           block_len());
        detail::plant(s, vocab, cfg, rng, s.sig_a, span.first, span.second);
      }
      const bool want_distractor = count < grid && (count == 0 || rng.uniform() < 0.5);
      if (want_distractor) {
        auto span = detail::place_in_block(rng, cfg.t, grid,
                                           blocks[static_cast<std::size_t>(count)], block_len());
        detail::plant(s, vocab, cfg, rng, other_sig(s.sig_a), span.first, span.second);
      }
      break;
    }
    case QuestionFamily::kTemporalOrder: {
      s.sig_b = other_sig(s.sig_a);
      auto spans = detail::place_events(rng, cfg.t, 2);
      // label 1 ↔ sig_a occurs entirely before sig_b.
      const auto& first = spans[0];
      const auto& second = spans[1];
      if (s.label == 1) {
        detail::plant(s, vocab, cfg, rng, s.sig_a, first.first, first.second);
        detail::plant(s, vocab, cfg, rng, s.sig_b, second.first, second.second);
      } else {
        detail::plant(s, vocab, cfg, rng, s.sig_b, first.first, first.second);
        detail::plant(s, vocab, cfg, rng, s.sig_a, second.first, second.second);
      }
      break;
    }
    case QuestionFamily::kComparative: {
      // label 1 ↔ sig_a plays strictly longer than sig_b; durations differ by
      // at least `gap` segments so the comparison never degenerates.
      s.sig_b = other_sig(s.sig_a);
      const Index block = cfg.t / 2;
      const Index gap = std::max<Index>(1, cfg.t / 15);
      const Index long_max = std::max<Index>(gap + 1, block - 2);
      const Index long_min = std::min(long_max, block / 2 + gap);
      const Index long_len = long_min >= long_max
                                 ? long_max
                                 : static_cast<Index>(rng.range(static_cast<int>(long_min),
                                                                static_cast<int>(long_max)));
      const Index short_max = std::max<Index>(1, long_len - gap);
      const Index short_min = std::min(short_max, std::max<Index>(1, block / 4));
      const Index short_len = short_min >= short_max
                                  ? short_max
                                  : static_cast<Index>(rng.range(static_cast<int>(short_min),
                                                                 static_cast<int>(short_max)));
      const bool a_first = rng.uniform() < 0.5;
      const Index len_a = s.label == 1 ? long_len : short_len;
      const Index len_b = s.label == 1 ? short_len : long_len;
      auto span_a = detail::place_in_block(rng, cfg.t, 2, a_first ? 0 : 1, len_a);
      auto span_b = detail::place_in_block(rng, cfg.t, 2, a_first ? 1 : 0, len_b);
      detail::plant(s, vocab, cfg, rng, s.sig_a, span_a.first, span_a.second);
      detail::plant(s, vocab, cfg, rng, s.sig_b, span_b.first, span_b.second);
      break;
    }
  }

  detail::encode_question(s, vocab, cfg);
  return s;
}

// Label recomputed from the planted-event record; the generator must agree.
template <typename Scalar>
Index recompute_label(const SyntheticSample<Scalar>& s) {
  switch (s.family) {
    case QuestionFamily::kExistence: {
      for (const auto& e : s.events) {
        if (e.signature == s.sig_a) return 1;
      }
      return 0;
    }
    case QuestionFamily::kCounting: {
      Index count = 0;
      for (const auto& e : s.events) {
        if (e.signature == s.sig_a) ++count;
      }
      return count;
    }
    case QuestionFamily::kTemporalOrder: {
      const PlantedEvent* a = nullptr;
      const PlantedEvent* b = nullptr;
      for (const auto& e : s.events) {
        if (e.signature == s.sig_a) a = &e;
        if (e.signature == s.sig_b) b = &e;
      }
      if (a == nullptr || b == nullptr) throw ContractError("temporal sample missing events");
      return a->end <= b->begin ? 1 : 0;
    }
    case QuestionFamily::kComparative: {
      const PlantedEvent* a = nullptr;
      const PlantedEvent* b = nullptr;
      for (const auto& e : s.events) {
        if (e.signature == s.sig_a) a = &e;
        if (e.signature == s.sig_b) b = &e;
      }
      if (a == nullptr || b == nullptr) throw ContractError("comparative sample missing events");
      return a->duration() > b->duration() ? 1 : 0;
    }
  }
  throw ContractError("unknown family");
}

template <typename Scalar>
struct Dataset {
  TaskConfig cfg;
  std::vector<SyntheticSample<Scalar>> samples;
};

inline Index label_space(const TaskConfig& cfg, QuestionFamily f) {
  return f == QuestionFamily::kCounting ? static_cast<Index>(cfg.event_max + 1) : Index(2);
}

// Deterministic per (cfg.seed, split); families cycle and labels are balanced
// round-robin within each family.
template <typename Scalar>
Dataset<Scalar> generate_split(const TaskConfig& cfg, const TaskVocabulary<Scalar>& vocab,
                               const std::string& split, Index count) {
  validate(cfg);
  Dataset<Scalar> ds;
  ds.cfg = cfg;
  ds.samples.reserve(static_cast<std::size_t>(count));
  std::vector<Index> family_counter(cfg.families.size(), 0);
  for (Index i = 0; i < count; ++i) {
    const std::size_t fi = static_cast<std::size_t>(i) % cfg.families.size();
    const QuestionFamily family = cfg.families[fi];
    const Index label = family_counter[fi] % label_space(cfg, family);
    ++family_counter[fi];
    ds.samples.push_back(make_sample<Scalar>(
        cfg, vocab, family, label,
        derive_seed(cfg.seed, split, static_cast<std::uint64_t>(i))));
  }
  return ds;
}

template <typename Scalar>
struct TaskData {
  Dataset<Scalar> train, val, test;
};

template <typename Scalar>
TaskData<Scalar> generate_task(const TaskConfig& cfg) {
  const TaskVocabulary<Scalar> vocab = make_vocabulary<Scalar>(cfg);
  return {generate_split(cfg, vocab, "train", cfg.train_size),
          generate_split(cfg, vocab, "val", cfg.val_size),
          generate_split(cfg, vocab, "test", cfg.test_size)};
}

}  // namespace qatiger
