#pragma once

// Classification evaluation: confusion metrics, ROC curve, AUC, and
// aggregation across cross-validation folds.

#include <optional>
#include <string>
#include <vector>

#include "milseg/errors.hpp"

namespace milseg {

struct RocPoint {
  double threshold = 0.0;
  double fpr = 0.0;
  double tpr = 0.0;
};

struct EvalReport {
  long long tp = 0, fp = 0, tn = 0, fn = 0;
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::vector<RocPoint> roc_points;       // from (0,0) to (1,1)
  std::optional<double> auc;              // absent when one class is missing
};

// scores are P(good) per item; labels are {+1, -1}; an item is predicted
// positive when score >= decision_threshold. ROC and AUC are filled in
// when both classes are present, otherwise auc stays empty.
EvalReport evaluate(const std::vector<double>& scores,
                    const std::vector<int>& labels,
                    double decision_threshold = 0.5);

// Trapezoidal AUC over the grouped-threshold ROC; equals the
// Mann-Whitney statistic P(s_pos > s_neg) + 0.5 P(tie).
// Throws InputError when either class is absent.
double auc(const std::vector<double>& scores, const std::vector<int>& labels);

std::vector<RocPoint> roc_curve(const std::vector<double>& scores,
                                const std::vector<int>& labels);

// Macro aggregation: unweighted mean of each scalar metric. The summary
// carries no ROC points of its own.
EvalReport aggregate_folds(const std::vector<EvalReport>& reports);

// CSV emitters (UTF-8, LF, '.' decimal).
// metrics.csv: fold,accuracy,precision,recall,f1,auc
// roc_fold<k>.csv: threshold,fpr,tpr
void write_metrics_csv(const std::string& path,
                       const std::vector<EvalReport>& folds,
                       const EvalReport& summary);
void write_roc_csv(const std::string& path, const std::vector<RocPoint>& roc);
std::vector<RocPoint> read_roc_csv(const std::string& path);

}  // namespace milseg
