#pragma once

#include "sarc/dataset.hpp"

#include <string>
#include <vector>

namespace sarc {

/// SARCASM is the positive class.
struct Confusion {
  long tp = 0;
  long fp = 0;
  long fn = 0;
  long tn = 0;
  long total() const { return tp + fp + fn + tn; }
};

Confusion confusion(const std::vector<Label>& predictions, const std::vector<Label>& gold);

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  long support = 0;
};

struct MetricReport {
  ClassMetrics sarcasm;      // positive class
  ClassMetrics not_sarcasm;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
};

// Zero-denominator convention: the metric is 0, never NaN.
MetricReport metrics(const Confusion& c);

enum class ReportStyle { Table2, Plain };

std::string report(const MetricReport& r, ReportStyle style, const std::string& name = "model");
// Multi-row variant of the Table2 layout for side-by-side model comparisons.
std::string report_rows(const std::vector<std::pair<std::string, MetricReport>>& rows);

}  // namespace sarc
