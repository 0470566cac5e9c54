#include "milseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "milseg/data.hpp"

namespace milseg {

namespace {

void check_inputs(const std::vector<double>& scores,
                  const std::vector<int>& labels) {
  if (scores.size() != labels.size())
    throw InputError("evaluate: scores and labels differ in length");
  if (scores.empty()) throw InputError("evaluate: empty input");
  for (int l : labels)
    if (l != kLabelGood && l != kLabelBad)
      throw InputError("evaluate: labels must be +1 or -1");
}

}  // namespace

std::vector<RocPoint> roc_curve(const std::vector<double>& scores,
                                const std::vector<int>& labels) {
  check_inputs(scores, labels);
  long long pos = 0, neg = 0;
  for (int l : labels) (l == kLabelGood ? pos : neg)++;
  if (pos == 0 || neg == 0)
    throw InputError("roc_curve: both classes must be present");

  std::vector<size_t> order(scores.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return scores[a] > scores[b]; });

  std::vector<RocPoint> roc;
  roc.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
  long long tp = 0, fp = 0;
  size_t i = 0;
  while (i < order.size()) {
    const double s = scores[order[i]];
    // ties grouped: one ROC step per distinct score
    while (i < order.size() && scores[order[i]] == s) {
      (labels[order[i]] == kLabelGood ? tp : fp)++;
      ++i;
    }
    roc.push_back({s, static_cast<double>(fp) / neg,
                   static_cast<double>(tp) / pos});
  }
  return roc;
}

double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  const auto roc = roc_curve(scores, labels);
  double area = 0.0;
  for (size_t i = 1; i < roc.size(); ++i)
    area += (roc[i].fpr - roc[i - 1].fpr) * (roc[i].tpr + roc[i - 1].tpr) / 2.0;
  return area;
}

EvalReport evaluate(const std::vector<double>& scores,
                    const std::vector<int>& labels, double decision_threshold) {
  check_inputs(scores, labels);
  EvalReport r;
  for (size_t i = 0; i < scores.size(); ++i) {
    const bool pred_pos = scores[i] >= decision_threshold;
    const bool is_pos = labels[i] == kLabelGood;
    if (pred_pos && is_pos) r.tp++;
    else if (pred_pos && !is_pos) r.fp++;
    else if (!pred_pos && !is_pos) r.tn++;
    else r.fn++;
  }
  const double total = static_cast<double>(scores.size());
  r.accuracy = static_cast<double>(r.tp + r.tn) / total;
  r.precision = r.tp + r.fp > 0
                    ? static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fp)
                    : 0.0;
  r.recall = r.tp + r.fn > 0
                 ? static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fn)
                 : 0.0;
  r.f1 = r.precision + r.recall > 0.0
             ? 2.0 * r.precision * r.recall / (r.precision + r.recall)
             : 0.0;
  const bool both = (r.tp + r.fn) > 0 && (r.fp + r.tn) > 0;
  if (both) {
    r.roc_points = roc_curve(scores, labels);
    r.auc = auc(scores, labels);
  }
  return r;
}

EvalReport aggregate_folds(const std::vector<EvalReport>& reports) {
  if (reports.empty()) throw InputError("aggregate_folds: no reports");
  EvalReport s;
  double auc_sum = 0.0;
  int auc_n = 0;
  for (const auto& r : reports) {
    s.tp += r.tp;
    s.fp += r.fp;
    s.tn += r.tn;
    s.fn += r.fn;
    s.accuracy += r.accuracy;
    s.precision += r.precision;
    s.recall += r.recall;
    s.f1 += r.f1;
    if (r.auc) {
      auc_sum += *r.auc;
      ++auc_n;
    }
  }
  const double k = static_cast<double>(reports.size());
  s.accuracy /= k;
  s.precision /= k;
  s.recall /= k;
  s.f1 /= k;
  if (auc_n > 0) s.auc = auc_sum / auc_n;
  return s;
}

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(6);
  os << std::fixed << v;
  return os.str();
}

}  // namespace

void write_metrics_csv(const std::string& path,
                       const std::vector<EvalReport>& folds,
                       const EvalReport& summary) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write " + path);
  f << "fold,accuracy,precision,recall,f1,auc\n";
  auto row = [&](const std::string& name, const EvalReport& r) {
    f << name << "," << fmt(r.accuracy) << "," << fmt(r.precision) << ","
      << fmt(r.recall) << "," << fmt(r.f1) << ","
      << (r.auc ? fmt(*r.auc) : std::string("nan")) << "\n";
  };
  for (size_t i = 0; i < folds.size(); ++i) row(std::to_string(i), folds[i]);
  row("mean", summary);
  if (!f) throw IoError("failed writing " + path);
}

void write_roc_csv(const std::string& path, const std::vector<RocPoint>& roc) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write " + path);
  f << "threshold,fpr,tpr\n";
  for (const auto& p : roc) {
    if (std::isinf(p.threshold))
      f << "inf";
    else
      f << fmt(p.threshold);
    f << "," << fmt(p.fpr) << "," << fmt(p.tpr) << "\n";
  }
  if (!f) throw IoError("failed writing " + path);
}

std::vector<RocPoint> read_roc_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path);
  std::string line;
  if (!std::getline(f, line) || line != "threshold,fpr,tpr")
    throw IoError("unexpected ROC CSV header in " + path);
  std::vector<RocPoint> roc;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string tok;
    RocPoint p;
    std::getline(row, tok, ',');
    p.threshold = tok == "inf" ? std::numeric_limits<double>::infinity()
                               : std::stod(tok);
    std::getline(row, tok, ',');
    p.fpr = std::stod(tok);
    std::getline(row, tok, ',');
    p.tpr = std::stod(tok);
    roc.push_back(p);
  }
  return roc;
}

}  // namespace milseg
