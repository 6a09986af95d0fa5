#pragma once

// Fine-tuning harness and evaluation: linear classification head, two-phase
// training schedule, classification metrics, dataset-reduction planning with
// the F1 stop rule, and pre-training checkpoint selection.

#include <iostream>

#include "sslct/dataio.hpp"
#include "sslct/encoder.hpp"
#include "sslct/gradcheck.hpp"

namespace sslct {

// ---------------------------------------------------------------------------
// metrics
// ---------------------------------------------------------------------------

struct MetricSet {
  double accuracy = 0.0;
  double auc = 0.0;
  double f1 = 0.0;
};

// scores is row-major [N,K]. Binary tasks (K = 2) use the positive-class
// column for AUC/F1; multi-class tasks use unweighted one-vs-rest macro
// averages.
MetricSet compute_metrics(const std::vector<double>& scores, int N, int K,
                          const std::vector<int>& labels);

// Mann-Whitney rank statistic with midrank tie correction.
double binary_auc(const std::vector<double>& pos_scores, const std::vector<int>& labels);

// ---------------------------------------------------------------------------
// reduction planning
// ---------------------------------------------------------------------------

// size_i = floor(N * fraction_i); fractions must be strictly decreasing.
std::vector<std::int64_t> reduction_plan(std::int64_t N, const std::vector<double>& fractions);

// Per-class proportional subsample totaling floor(N * fraction)
// (largest-remainder apportionment); classes never empty below one sample
// (with a warning). Deterministic per seed.
std::vector<ManifestRecord> stratified_subsample(const std::vector<ManifestRecord>& split,
                                                 double fraction, std::uint64_t seed);

// In-memory index variant used by the training loops: returns selected
// indices into `labels`.
std::vector<int> stratified_subsample_indices(const std::vector<int>& labels, double fraction,
                                              std::uint64_t seed);

// ---------------------------------------------------------------------------
// labeled data and the classifier
// ---------------------------------------------------------------------------

// Flat in-memory dataset of normalized single-channel images.
struct LabeledData {
  int h = 0, w = 0;
  std::vector<std::vector<float>> images;
  std::vector<int> labels;

  int size() const { return (int)images.size(); }
  void validate() const {
    check_cfg(images.size() == labels.size(), "dataset: image/label count mismatch");
    for (const auto& img : images)
      check_cfg((int)img.size() == h * w, "dataset: image extent mismatch");
  }
};

template <typename T>
Ptr<T> batch_images(const LabeledData& data, const std::vector<int>& idx) {
  auto x = make_node<T>({(int)idx.size(), 1, data.h, data.w});
  for (size_t b = 0; b < idx.size(); ++b)
    std::copy(data.images[idx[b]].begin(), data.images[idx[b]].end(),
              x->value.begin() + (std::int64_t)b * data.h * data.w);
  return x;
}

// Deep copy: same architecture and a fresh graph, values and running
// statistics copied over.
template <typename T>
Encoder<T> clone_encoder(const Encoder<T>& src) {
  Encoder<T> dst(src.cfg, 0);
  check_cfg(dst.params.params.size() == src.params.params.size(), "clone: parameter mismatch");
  for (size_t i = 0; i < src.params.params.size(); ++i)
    dst.params.params[i].second->value = src.params.params[i].second->value;
  std::vector<std::pair<std::string, std::vector<T>*>> sb, db;
  const_cast<Encoder<T>&>(src).collect_buffers(sb);
  dst.collect_buffers(db);
  for (size_t i = 0; i < sb.size(); ++i) *db[i].second = *sb[i].second;
  return dst;
}

// CRC-32 over the raw parameter bytes, in registration order; used to prove
// the encoder frozen during the head-only phase.
std::uint32_t bytes_crc32(const void* data, std::size_t n, std::uint32_t seed = 0);

template <typename T>
std::uint32_t param_checksum(const ParamSet<T>& params) {
  std::uint32_t crc = 0;
  for (const auto& [name, p] : params.params) {
    crc = bytes_crc32(name.data(), name.size(), crc);
    crc = bytes_crc32(p->value.data(), p->value.size() * sizeof(T), crc);
  }
  return crc;
}

// Encoder + exactly one linear layer on the pooled coarsest feature.
template <typename T>
struct Classifier {
  Encoder<T> encoder;
  LinearLayer<T> head;
  ParamSet<T> head_params;
  ParamSet<T> all_params;

  Classifier() = default;
  Classifier(Encoder<T> enc, int num_classes, std::uint64_t seed) : encoder(std::move(enc)) {
    check_cfg(num_classes >= 2, "classifier: need at least 2 classes");
    auto rng = make_rng(seed, "head_init");
    head = LinearLayer<T>(encoder.cfg.widths[3], num_classes, rng);
    head.register_params(head_params, "head");
    all_params.extend(encoder.params, "encoder.");
    all_params.extend(head_params);
  }

  std::int64_t parameter_count() const { return all_params.count(); }

  Ptr<T> forward(const Ptr<T>& images, bool training) {
    auto pyr = encoder.encode(images, training);
    return head.forward(global_avgpool(pyr[3]));
  }
};

template <typename T>
Classifier<T> attach_head(const Encoder<T>& pretrained, int num_classes, std::uint64_t seed) {
  return Classifier<T>(clone_encoder(pretrained), num_classes, seed);
}

// ---------------------------------------------------------------------------
// fine-tuning
// ---------------------------------------------------------------------------

struct FinetuneConfig {
  double lr = 1e-4;
  int batch_size = 64;
  int head_only_epochs = 10;
  int total_epochs = 100;
  int early_stop_patience = 20;
  int repeats = 5;
  std::uint64_t seed = 0;

  void validate() const {
    check_cfg(lr > 0.0, "finetune: learning rate must be > 0");
    check_cfg(batch_size >= 1, "finetune: batch size must be >= 1");
    check_cfg(head_only_epochs >= 0 && head_only_epochs <= total_epochs,
              "finetune: head-only epochs must be within total epochs");
    check_cfg(repeats >= 1, "finetune: repeats must be >= 1");
    check_cfg(early_stop_patience >= 1, "finetune: patience must be >= 1");
  }
};

struct RunMetrics {
  double acc_mean = 0, acc_std = 0;
  double auc_mean = 0, auc_std = 0;
  double f1_mean = 0, f1_std = 0;
  int seed_count = 0;
};

inline std::pair<double, double> mean_std(const std::vector<double>& xs) {
  double m = 0;
  for (double x : xs) m += x / xs.size();
  double v = 0;
  for (double x : xs) v += (x - m) * (x - m) / xs.size();
  return {m, std::sqrt(v)};
}

template <typename T>
MetricSet evaluate(Classifier<T>& model, const LabeledData& data, int num_classes,
                   int batch_size) {
  std::vector<double> scores((size_t)data.size() * num_classes);
  for (int start = 0; start < data.size(); start += batch_size) {
    std::vector<int> idx;
    for (int i = start; i < std::min(start + batch_size, data.size()); ++i) idx.push_back(i);
    auto logits = model.forward(batch_images<T>(data, idx), false);
    for (size_t b = 0; b < idx.size(); ++b)
      for (int k = 0; k < num_classes; ++k)
        scores[(size_t)idx[b] * num_classes + k] = (double)logits->value[b * num_classes + k];
  }
  return compute_metrics(scores, data.size(), num_classes, data.labels);
}

template <typename T>
struct FinetuneRun {
  MetricSet test;
  double best_val_f1 = 0.0;
  int best_epoch = 0;
  Classifier<T> model;  // restored to the selected epoch
};

// One fine-tuning run: head-only epochs with the encoder frozen and in eval
// mode, then full fine-tuning; selection by validation F1 (ties -> earliest
// epoch); early stop after `patience` epochs without improvement.
template <typename T>
FinetuneRun<T> finetune_once(const Encoder<T>& pretrained, const LabeledData& train,
                             const LabeledData& val, const LabeledData& test, int num_classes,
                             const FinetuneConfig& cfg, std::uint64_t run_seed) {
  cfg.validate();
  train.validate();
  val.validate();
  test.validate();
  check_cfg(train.size() >= 1 && val.size() >= 1, "finetune: empty train or val split");
  {
    std::vector<int> per_class(num_classes, 0);
    for (int l : train.labels) {
      check_cfg(l >= 0 && l < num_classes, "finetune: label out of range");
      ++per_class[l];
    }
    for (int k = 0; k < num_classes; ++k)
      check_cfg(per_class[k] >= 1,
                "finetune: class " + std::to_string(k) + " has no training samples");
  }

  FinetuneRun<T> out;
  out.model = attach_head(pretrained, num_classes, derive_seed(run_seed, "head"));
  Classifier<T>& model = out.model;

  OptimizerConfig opt;
  opt.kind = OptimizerKind::Adam;
  opt.lr = cfg.lr;
  OptimizerState<T> state;
  std::int64_t step_index = 0;

  std::vector<T> best_snapshot;
  auto snapshot = [&]() {
    best_snapshot.clear();
    for (const auto& [n, p] : model.all_params.params)
      best_snapshot.insert(best_snapshot.end(), p->value.begin(), p->value.end());
  };
  auto restore = [&]() {
    size_t off = 0;
    for (auto& [n, p] : model.all_params.params) {
      std::copy(best_snapshot.begin() + off, best_snapshot.begin() + off + p->value.size(),
                p->value.begin());
      off += p->value.size();
    }
  };

  double best_f1 = -1.0;
  int stagnant = 0;
  std::vector<int> order(train.size());
  for (int i = 0; i < train.size(); ++i) order[i] = i;

  for (int epoch = 1; epoch <= cfg.total_epochs; ++epoch) {
    const bool head_only = epoch <= cfg.head_only_epochs;
    // Freezing is enforced structurally: encoder parameters stop requiring
    // gradients, so backward never reaches them and the optimizer update is
    // restricted to the head.
    for (auto& [n, p] : model.encoder.params.params) p->requires_grad = !head_only;
    ParamSet<T>& stepped = head_only ? model.head_params : model.all_params;

    auto erng = make_rng(run_seed, "epoch_shuffle", (std::uint64_t)epoch);
    std::shuffle(order.begin(), order.end(), erng);
    for (int start = 0; start < train.size(); start += cfg.batch_size) {
      std::vector<int> idx(order.begin() + start,
                           order.begin() + std::min<std::int64_t>(start + cfg.batch_size,
                                                                  train.size()));
      stepped.zero_grad();
      // Head-only phase keeps the encoder in eval mode so running statistics
      // stay untouched as well.
      auto logits = model.forward(batch_images<T>(train, idx), !head_only);
      std::vector<int> lbl;
      for (int i : idx) lbl.push_back(train.labels[i]);
      auto loss = softmax_cross_entropy(logits, lbl);
      backward(loss);
      optimizer_step(stepped, state, opt, ++step_index);
    }

    const MetricSet vm = evaluate(model, val, num_classes, cfg.batch_size);
    if (vm.f1 > best_f1) {
      best_f1 = vm.f1;
      out.best_epoch = epoch;
      snapshot();
      stagnant = 0;
    } else {
      ++stagnant;
      if (stagnant >= cfg.early_stop_patience) break;
    }
  }
  for (auto& [n, p] : model.encoder.params.params) p->requires_grad = true;
  restore();
  out.best_val_f1 = best_f1;
  out.test = evaluate(model, test, num_classes, cfg.batch_size);
  return out;
}

// Repeated fine-tuning over `cfg.repeats` derived seeds, aggregated.
template <typename T>
RunMetrics finetune(const Encoder<T>& pretrained, const LabeledData& train,
                    const LabeledData& val, const LabeledData& test, int num_classes,
                    const FinetuneConfig& cfg) {
  std::vector<double> accs, aucs, f1s;
  for (int r = 0; r < cfg.repeats; ++r) {
    auto run = finetune_once(pretrained, train, val, test, num_classes, cfg,
                             derive_seed(cfg.seed, "finetune_repeat", (std::uint64_t)r));
    accs.push_back(run.test.accuracy);
    aucs.push_back(run.test.auc);
    f1s.push_back(run.test.f1);
  }
  RunMetrics m;
  m.seed_count = cfg.repeats;
  std::tie(m.acc_mean, m.acc_std) = mean_std(accs);
  std::tie(m.auc_mean, m.auc_std) = mean_std(aucs);
  std::tie(m.f1_mean, m.f1_std) = mean_std(f1s);
  return m;
}

// ---------------------------------------------------------------------------
// reduction sweep and checkpoint selection
// ---------------------------------------------------------------------------

struct SweepRow {
  std::string method;
  double fraction = 1.0;
  std::int64_t size = 0;
  RunMetrics metrics;
};

struct SweepConfig {
  std::vector<double> fractions{1.0, 0.75, 0.5, 0.25, 0.10, 0.05};
  double stop_f1 = 0.7;
  FinetuneConfig finetune;
};

// For each fraction, fine-tune every method on the stratified subset;
// continue to the next fraction only while at least one method's mean F1
// stays at or above the stop threshold.
template <typename T>
std::vector<SweepRow> run_sweep(const std::vector<std::pair<std::string, const Encoder<T>*>>& methods,
                                const LabeledData& train, const LabeledData& val,
                                const LabeledData& test, int num_classes,
                                const SweepConfig& cfg) {
  check_cfg(!methods.empty(), "sweep: need at least one method");
  for (size_t i = 1; i < cfg.fractions.size(); ++i)
    check_cfg(cfg.fractions[i] < cfg.fractions[i - 1], "sweep: fractions must strictly decrease");
  std::vector<SweepRow> rows;
  for (size_t fi = 0; fi < cfg.fractions.size(); ++fi) {
    const double f = cfg.fractions[fi];
    auto idx = stratified_subsample_indices(train.labels, f,
                                            derive_seed(cfg.finetune.seed, "sweep_subset", fi));
    LabeledData sub;
    sub.h = train.h;
    sub.w = train.w;
    for (int i : idx) {
      sub.images.push_back(train.images[i]);
      sub.labels.push_back(train.labels[i]);
    }
    bool any_above = false;
    for (const auto& [name, enc] : methods) {
      SweepRow row;
      row.method = name;
      row.fraction = f;
      row.size = (std::int64_t)idx.size();
      row.metrics = finetune(*enc, sub, val, test, num_classes, cfg.finetune);
      any_above = any_above || row.metrics.f1_mean >= cfg.stop_f1;
      rows.push_back(std::move(row));
    }
    if (!any_above) break;  // every method below threshold: stop reducing
  }
  return rows;
}

void write_sweep_csv(const std::string& path, const std::vector<SweepRow>& rows);

// Fine-tunes the probe task once per checkpoint and picks the highest mean
// F1; ties resolve to the earliest epoch.
template <typename T>
std::pair<int, double> select_best_pretrain_epoch(
    const std::vector<std::pair<int, const Encoder<T>*>>& series, const LabeledData& train,
    const LabeledData& val, const LabeledData& test, int num_classes,
    const FinetuneConfig& cfg) {
  check_cfg(!series.empty(), "epoch selection: empty checkpoint series");
  int best_epoch = -1;
  double best_f1 = -1.0;
  for (const auto& [epoch, enc] : series) {
    const RunMetrics m = finetune(*enc, train, val, test, num_classes, cfg);
    if (m.f1_mean > best_f1) {
      best_f1 = m.f1_mean;
      best_epoch = epoch;
    }
  }
  return {best_epoch, best_f1};
}

}  // namespace sslct
