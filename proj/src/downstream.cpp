#include "sslct/downstream.hpp"

#include <zlib.h>

#include <algorithm>
#include <fstream>
#include <numeric>

namespace sslct {

std::uint32_t bytes_crc32(const void* data, std::size_t n, std::uint32_t seed) {
  return (std::uint32_t)crc32((uLong)seed, (const Bytef*)data, (uInt)n);
}

double binary_auc(const std::vector<double>& pos_scores, const std::vector<int>& labels) {
  check_cfg(pos_scores.size() == labels.size(), "auc: score/label count mismatch");
  const int n = (int)labels.size();
  check_cfg(n >= 1, "auc: empty input");
  std::int64_t n_pos = 0;
  for (int l : labels) {
    check_cfg(l == 0 || l == 1, "auc: binary labels must be 0/1");
    n_pos += l;
  }
  const std::int64_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0)
    throw ValidationError("auc: undefined for single-class labels");
  for (double s : pos_scores)
    if (!std::isfinite(s)) throw NumericError("auc: non-finite score");

  // Midranks over the sorted scores, then the Mann-Whitney statistic.
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return pos_scores[a] < pos_scores[b]; });
  std::vector<double> rank(n);
  int i = 0;
  while (i < n) {
    int j = i;
    while (j < n && pos_scores[order[j]] == pos_scores[order[i]]) ++j;
    const double mid = (double)(i + 1 + j) / 2.0;  // average of ranks i+1..j
    for (int t = i; t < j; ++t) rank[order[t]] = mid;
    i = j;
  }
  double rank_sum = 0;
  for (int t = 0; t < n; ++t)
    if (labels[t] == 1) rank_sum += rank[t];
  return (rank_sum - (double)n_pos * (n_pos + 1) / 2.0) / ((double)n_pos * (double)n_neg);
}

namespace {

double class_f1(const std::vector<int>& pred, const std::vector<int>& labels, int cls) {
  std::int64_t tp = 0, fp = 0, fn = 0;
  for (size_t i = 0; i < labels.size(); ++i) {
    const bool p = pred[i] == cls, t = labels[i] == cls;
    tp += p && t;
    fp += p && !t;
    fn += !p && t;
  }
  if (2 * tp + fp + fn == 0) return 0.0;
  return 2.0 * (double)tp / (double)(2 * tp + fp + fn);
}

}  // namespace

MetricSet compute_metrics(const std::vector<double>& scores, int N, int K,
                          const std::vector<int>& labels) {
  check_cfg(N >= 1 && K >= 2, "metrics: need N >= 1 and K >= 2");
  check_cfg((int)scores.size() == N * K && (int)labels.size() == N,
            "metrics: score/label geometry mismatch");
  for (double s : scores)
    if (!std::isfinite(s)) throw NumericError("metrics: non-finite score");
  for (int l : labels) check_cfg(l >= 0 && l < K, "metrics: label out of range");

  std::vector<int> pred(N);
  for (int i = 0; i < N; ++i) {
    int best = 0;
    for (int k = 1; k < K; ++k)
      if (scores[(size_t)i * K + k] > scores[(size_t)i * K + best]) best = k;
    pred[i] = best;
  }

  MetricSet m;
  std::int64_t correct = 0;
  for (int i = 0; i < N; ++i) correct += pred[i] == labels[i];
  m.accuracy = (double)correct / N;

  if (K == 2) {
    std::vector<double> pos(N);
    for (int i = 0; i < N; ++i) pos[i] = scores[(size_t)i * K + 1];
    m.auc = binary_auc(pos, labels);
    m.f1 = class_f1(pred, labels, 1);
  } else {
    // Unweighted one-vs-rest macro averages. AUC terms are only defined for
    // classes with both positives and negatives present.
    double auc_sum = 0;
    int auc_terms = 0;
    for (int k = 0; k < K; ++k) {
      std::int64_t n_pos = 0;
      for (int l : labels) n_pos += l == k;
      if (n_pos == 0 || n_pos == N) continue;
      std::vector<double> col(N);
      std::vector<int> ovr(N);
      for (int i = 0; i < N; ++i) {
        col[i] = scores[(size_t)i * K + k];
        ovr[i] = labels[i] == k ? 1 : 0;
      }
      auc_sum += binary_auc(col, ovr);
      ++auc_terms;
    }
    if (auc_terms == 0) throw ValidationError("auc: undefined for single-class labels");
    m.auc = auc_sum / auc_terms;

    double f1_sum = 0;
    for (int k = 0; k < K; ++k) f1_sum += class_f1(pred, labels, k);
    m.f1 = f1_sum / K;
  }
  return m;
}

std::vector<std::int64_t> reduction_plan(std::int64_t N, const std::vector<double>& fractions) {
  check_cfg(N >= 1, "reduction plan: N must be >= 1");
  for (size_t i = 0; i < fractions.size(); ++i) {
    check_cfg(fractions[i] > 0.0 && fractions[i] <= 1.0,
              "reduction plan: fractions must be in (0,1]");
    if (i) check_cfg(fractions[i] < fractions[i - 1],
                     "reduction plan: fractions must strictly decrease");
  }
  std::vector<std::int64_t> sizes;
  for (double f : fractions) sizes.push_back((std::int64_t)std::floor((double)N * f));
  return sizes;
}

std::vector<int> stratified_subsample_indices(const std::vector<int>& labels, double fraction,
                                              std::uint64_t seed) {
  check_cfg(fraction > 0.0 && fraction <= 1.0, "subsample: fraction must be in (0,1]");
  const int N = (int)labels.size();
  check_cfg(N >= 1, "subsample: empty split");
  std::vector<std::vector<int>> by_class;
  for (int i = 0; i < N; ++i) {
    check_cfg(labels[i] >= 0, "subsample: negative label");
    if (labels[i] >= (int)by_class.size()) by_class.resize(labels[i] + 1);
    by_class[labels[i]].push_back(i);
  }
  for (size_t k = 0; k < by_class.size(); ++k)
    check_cfg(!by_class[k].empty(),
              "subsample: class " + std::to_string(k) + " has no samples");

  const std::int64_t target = (std::int64_t)std::floor((double)N * fraction);
  const int K = (int)by_class.size();
  // Largest-remainder apportionment of the target across classes.
  std::vector<std::int64_t> take(K);
  std::vector<std::pair<double, int>> rem;
  std::int64_t assigned = 0;
  for (int k = 0; k < K; ++k) {
    const double quota = (double)by_class[k].size() * fraction;
    take[k] = (std::int64_t)std::floor(quota);
    assigned += take[k];
    rem.push_back({quota - (double)take[k], k});
  }
  std::sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (int i = 0; assigned < target && i < K; ++i) {
    ++take[rem[i].second];
    ++assigned;
  }
  for (int k = 0; k < K; ++k) {
    if (take[k] == 0) {
      std::cerr << "[sslct] warning: fraction " << fraction << " empties class " << k
                << ", keeping one sample\n";
      take[k] = 1;
    }
    take[k] = std::min<std::int64_t>(take[k], (std::int64_t)by_class[k].size());
  }

  std::vector<int> out;
  for (int k = 0; k < K; ++k) {
    auto pool = by_class[k];
    if (take[k] < (std::int64_t)pool.size()) {
      auto rng = make_rng(seed, "stratified_class", (std::uint64_t)k);
      std::shuffle(pool.begin(), pool.end(), rng);
      pool.resize(take[k]);
      std::sort(pool.begin(), pool.end());
    }
    out.insert(out.end(), pool.begin(), pool.end());
  }
  std::sort(out.begin(), out.end());  // original split order
  return out;
}

std::vector<ManifestRecord> stratified_subsample(const std::vector<ManifestRecord>& split,
                                                 double fraction, std::uint64_t seed) {
  std::vector<int> labels;
  for (const auto& r : split) labels.push_back(r.label);
  std::vector<ManifestRecord> out;
  for (int i : stratified_subsample_indices(labels, fraction, seed)) out.push_back(split[i]);
  return out;
}

void write_sweep_csv(const std::string& path, const std::vector<SweepRow>& rows) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write sweep results: " + path);
  f << "method,fraction,size,seed_count,acc_mean,acc_std,auc_mean,auc_std,f1_mean,f1_std\n";
  f.precision(6);
  f << std::fixed;
  for (const auto& r : rows)
    f << r.method << "," << r.fraction << "," << r.size << "," << r.metrics.seed_count << ","
      << r.metrics.acc_mean << "," << r.metrics.acc_std << "," << r.metrics.auc_mean << ","
      << r.metrics.auc_std << "," << r.metrics.f1_mean << "," << r.metrics.f1_std << "\n";
}

}  // namespace sslct
