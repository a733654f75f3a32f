#include "sarc/eval.hpp"

#include <iomanip>
#include <sstream>

namespace sarc {

namespace {

double safe_div(double num, double denom) { return denom == 0.0 ? 0.0 : num / denom; }

double f1_of(double p, double r) { return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r); }

void format_row(std::ostream& os, const std::string& name, const MetricReport& r) {
  os << std::left << std::setw(24) << name << std::right << std::fixed << std::setprecision(4)
     << std::setw(10) << r.sarcasm.precision << std::setw(10) << r.sarcasm.recall
     << std::setw(10) << r.sarcasm.f1 << "\n";
}

void format_header(std::ostream& os) {
  os << std::left << std::setw(24) << "model" << std::right << std::setw(10) << "Precision"
     << std::setw(10) << "Recall" << std::setw(10) << "F1" << "\n";
}

}  // namespace

Confusion confusion(const std::vector<Label>& predictions, const std::vector<Label>& gold) {
  if (predictions.size() != gold.size()) {
    throw DataError("confusion: " + std::to_string(predictions.size()) + " predictions vs " +
                    std::to_string(gold.size()) + " gold labels");
  }
  if (predictions.empty()) throw DataError("confusion: empty input");
  Confusion c;
  for (size_t i = 0; i < predictions.size(); ++i) {
    const bool pred_pos = predictions[i] == Label::Sarcasm;
    const bool gold_pos = gold[i] == Label::Sarcasm;
    if (pred_pos && gold_pos) ++c.tp;
    else if (pred_pos && !gold_pos) ++c.fp;
    else if (!pred_pos && gold_pos) ++c.fn;
    else ++c.tn;
  }
  return c;
}

MetricReport metrics(const Confusion& c) {
  if (c.total() <= 0) throw DataError("metrics: empty confusion");
  MetricReport r;
  r.sarcasm.precision = safe_div(c.tp, c.tp + c.fp);
  r.sarcasm.recall = safe_div(c.tp, c.tp + c.fn);
  r.sarcasm.f1 = f1_of(r.sarcasm.precision, r.sarcasm.recall);
  r.sarcasm.support = c.tp + c.fn;

  r.not_sarcasm.precision = safe_div(c.tn, c.tn + c.fn);
  r.not_sarcasm.recall = safe_div(c.tn, c.tn + c.fp);
  r.not_sarcasm.f1 = f1_of(r.not_sarcasm.precision, r.not_sarcasm.recall);
  r.not_sarcasm.support = c.tn + c.fp;

  r.macro_precision = 0.5 * (r.sarcasm.precision + r.not_sarcasm.precision);
  r.macro_recall = 0.5 * (r.sarcasm.recall + r.not_sarcasm.recall);
  r.macro_f1 = 0.5 * (r.sarcasm.f1 + r.not_sarcasm.f1);
  return r;
}

std::string report(const MetricReport& r, ReportStyle style, const std::string& name) {
  std::ostringstream os;
  if (style == ReportStyle::Table2) {
    format_header(os);
    format_row(os, name, r);
    return os.str();
  }
  os << std::fixed << std::setprecision(4);
  os << "class        precision  recall    f1        support\n";
  os << std::left << std::setw(13) << "SARCASM" << std::setw(11) << r.sarcasm.precision
     << std::setw(10) << r.sarcasm.recall << std::setw(10) << r.sarcasm.f1
     << r.sarcasm.support << "\n";
  os << std::left << std::setw(13) << "NOT_SARCASM" << std::setw(11) << r.not_sarcasm.precision
     << std::setw(10) << r.not_sarcasm.recall << std::setw(10) << r.not_sarcasm.f1
     << r.not_sarcasm.support << "\n";
  os << std::left << std::setw(13) << "macro" << std::setw(11) << r.macro_precision
     << std::setw(10) << r.macro_recall << std::setw(10) << r.macro_f1
     << (r.sarcasm.support + r.not_sarcasm.support) << "\n";
  return os.str();
}

std::string report_rows(const std::vector<std::pair<std::string, MetricReport>>& rows) {
  std::ostringstream os;
  format_header(os);
  for (const auto& [name, r] : rows) format_row(os, name, r);
  return os.str();
}

}  // namespace sarc
