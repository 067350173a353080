#pragma once

// Confusion matrix and the derived segmentation metrics: per-class IoU, mIoU,
// macro precision/recall/F1, pixel accuracy.
//
// Averaging is macro (unweighted over classes). A class absent from both
// truth and prediction is excluded from the macro averages; a class that does
// occur contributes 0 for any metric whose denominator is zero. F1 is the
// mean of per-class harmonic means, not the harmonic mean of macro P/R.

#include <cstdint>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "hyperseg/hypercube.hpp"

namespace hyperseg {

class ConfusionMatrix {
 public:
  ConfusionMatrix() = default;
  explicit ConfusionMatrix(std::vector<std::string> class_names)
      : class_names_(std::move(class_names)),
        counts_(class_names_.size() * class_names_.size(), 0) {
    if (class_names_.empty()) throw std::invalid_argument("ConfusionMatrix: no classes");
  }

  int num_classes() const { return static_cast<int>(class_names_.size()); }
  const std::vector<std::string>& class_names() const { return class_names_; }

  std::uint64_t at(int truth, int pred) const {
    return counts_[static_cast<std::size_t>(truth) * class_names_.size() +
                   static_cast<std::size_t>(pred)];
  }
  std::uint64_t& at(int truth, int pred) {
    return counts_[static_cast<std::size_t>(truth) * class_names_.size() +
                   static_cast<std::size_t>(pred)];
  }

  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (auto c : counts_) t += c;
    return t;
  }

  std::uint64_t row_total(int truth) const {
    std::uint64_t t = 0;
    for (int p = 0; p < num_classes(); ++p) t += at(truth, p);
    return t;
  }
  std::uint64_t col_total(int pred) const {
    std::uint64_t t = 0;
    for (int c = 0; c < num_classes(); ++c) t += at(c, pred);
    return t;
  }

  void accumulate(const LabelMask& predicted, const LabelMask& truth) {
    if (predicted.height != truth.height || predicted.width != truth.width)
      throw std::invalid_argument("accumulate: mask dimensions differ");
    const int C = num_classes();
    for (std::size_t i = 0; i < truth.labels.size(); ++i) {
      const int t = truth.labels[i];
      const int p = predicted.labels[i];
      if (t >= C || p >= C)
        throw std::out_of_range("accumulate: class index " + std::to_string(std::max(t, p)) +
                                " >= class count " + std::to_string(C));
      ++at(t, p);
    }
  }

  ConfusionMatrix& operator+=(const ConfusionMatrix& other) {
    if (other.class_names_ != class_names_)
      throw std::invalid_argument("ConfusionMatrix: class sets differ");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
    return *this;
  }

  void write_csv(std::ostream& os) const {
    os << "truth\\pred";
    for (const auto& n : class_names_) os << "," << n;
    os << "\n";
    for (int t = 0; t < num_classes(); ++t) {
      os << class_names_[static_cast<std::size_t>(t)];
      for (int p = 0; p < num_classes(); ++p) os << "," << at(t, p);
      os << "\n";
    }
  }

 private:
  std::vector<std::string> class_names_;
  std::vector<std::uint64_t> counts_;
};

struct MetricReport {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double accuracy = 0.0;
  double miou = 0.0;
  std::vector<double> per_class_iou;   // 0 for excluded classes
  std::vector<bool> included;          // class participates in macro averages
};

// include_background=false drops class 0 from the macro averages and restricts
// accuracy to pixels whose ground truth is not background.
inline MetricReport compute(const ConfusionMatrix& cm, bool include_background = true) {
  if (cm.total() == 0) throw std::invalid_argument("compute: empty confusion matrix");
  const int C = cm.num_classes();
  MetricReport r;
  r.per_class_iou.assign(static_cast<std::size_t>(C), 0.0);
  r.included.assign(static_cast<std::size_t>(C), false);

  double sum_iou = 0, sum_p = 0, sum_r = 0, sum_f1 = 0;
  int n_included = 0;
  for (int c = 0; c < C; ++c) {
    if (!include_background && c == 0) continue;
    const std::uint64_t tp = cm.at(c, c);
    const std::uint64_t fn = cm.row_total(c) - tp;
    const std::uint64_t fp = cm.col_total(c) - tp;
    if (tp + fp + fn == 0) continue;  // absent from truth and prediction
    r.included[static_cast<std::size_t>(c)] = true;
    ++n_included;
    const double iou = static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
    const double prec = (tp + fp) ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    const double rec = (tp + fn) ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    const double f1 = (prec + rec > 0) ? 2.0 * prec * rec / (prec + rec) : 0.0;
    r.per_class_iou[static_cast<std::size_t>(c)] = iou;
    sum_iou += iou;
    sum_p += prec;
    sum_r += rec;
    sum_f1 += f1;
  }
  if (n_included == 0) throw std::invalid_argument("compute: no classes to evaluate");
  r.miou = sum_iou / n_included;
  r.precision = sum_p / n_included;
  r.recall = sum_r / n_included;
  r.f1 = sum_f1 / n_included;

  std::uint64_t correct = 0, counted = 0;
  for (int c = 0; c < C; ++c) {
    if (!include_background && c == 0) continue;
    correct += cm.at(c, c);
    counted += cm.row_total(c);
  }
  r.accuracy = counted ? static_cast<double>(correct) / static_cast<double>(counted) : 0.0;
  return r;
}

// fraction of pixels whose truth lies in `classes` that were predicted correctly
inline double subset_accuracy(const ConfusionMatrix& cm, const std::vector<int>& classes) {
  std::uint64_t correct = 0, total = 0;
  for (int c : classes) {
    if (c < 0 || c >= cm.num_classes())
      throw std::out_of_range("subset_accuracy: class " + std::to_string(c) + " out of range");
    correct += cm.at(c, c);
    total += cm.row_total(c);
  }
  return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

// CSV row layout mirrors the experiment tables:
// experiment,bands,backbone,decoder,precision,recall,f1,accuracy,miou
inline void write_metrics_csv_header(std::ostream& os) {
  os << "experiment,bands,backbone,decoder,precision,recall,f1,accuracy,miou\n";
}

inline void write_metrics_csv_row(std::ostream& os, const std::string& experiment, int bands,
                                  const std::string& backbone, const std::string& decoder,
                                  const MetricReport& r) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%.6f,%.6f,%.6f,%.6f,%.6f", r.precision, r.recall, r.f1,
                r.accuracy, r.miou);
  os << experiment << "," << bands << "," << backbone << "," << decoder << "," << buf << "\n";
}

}  // namespace hyperseg
