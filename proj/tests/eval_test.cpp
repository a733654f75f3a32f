#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "sarc/eval.hpp"

#include <algorithm>
#include <cmath>
#include <random>

using namespace sarc;

namespace {

std::vector<Label> random_labels(size_t n, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> coin(0, 1);
  std::vector<Label> out(n);
  for (auto& l : out) l = coin(rng) ? Label::Sarcasm : Label::NotSarcasm;
  return out;
}

// Direct formula oracle, written independently of metrics().
void oracle_prf(long tp, long fp, long fn, double& p, double& r, double& f1) {
  p = (tp + fp) == 0 ? 0.0 : double(tp) / double(tp + fp);
  r = (tp + fn) == 0 ? 0.0 : double(tp) / double(tp + fn);
  f1 = (p + r) == 0 ? 0.0 : 2 * p * r / (p + r);
}

}  // namespace

TEST_CASE("confusion basics") {
  std::vector<Label> gold{Label::Sarcasm, Label::NotSarcasm, Label::Sarcasm};
  Confusion all_right = confusion(gold, gold);
  CHECK(all_right.fp == 0);
  CHECK(all_right.fn == 0);
  CHECK(all_right.tp == 2);
  CHECK(all_right.tn == 1);

  std::vector<Label> all_pos(5, Label::Sarcasm);
  std::vector<Label> all_neg(5, Label::NotSarcasm);
  Confusion wrong = confusion(all_pos, all_neg);
  CHECK(wrong.tp == 0);
  CHECK(wrong.tn == 0);
  CHECK(wrong.fp == 5);

  CHECK_THROWS_AS(confusion(all_pos, gold), DataError);
  CHECK_THROWS_AS(confusion({}, {}), DataError);
}

TEST_CASE("confusion matches counting oracle on random pairs") {
  std::mt19937_64 rng(5);
  auto pred = random_labels(1000, rng);
  auto gold = random_labels(1000, rng);
  Confusion c = confusion(pred, gold);
  long tp = 0, fp = 0, fn = 0, tn = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    if (gold[i] == Label::Sarcasm) {
      (pred[i] == Label::Sarcasm ? tp : fn)++;
    } else {
      (pred[i] == Label::Sarcasm ? fp : tn)++;
    }
  }
  CHECK(c.tp == tp);
  CHECK(c.fp == fp);
  CHECK(c.fn == fn);
  CHECK(c.tn == tn);
  CHECK(c.total() == 1000);
}

TEST_CASE("metrics hand arithmetic") {
  Confusion perfect{10, 0, 0, 10};
  MetricReport r = metrics(perfect);
  CHECK(r.sarcasm.precision == 1.0);
  CHECK(r.sarcasm.recall == 1.0);
  CHECK(r.sarcasm.f1 == 1.0);
  CHECK(r.not_sarcasm.f1 == 1.0);
  CHECK(r.macro_f1 == 1.0);

  Confusion c{3, 1, 1, 0};
  MetricReport m = metrics(c);
  CHECK(m.sarcasm.precision == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(m.sarcasm.recall == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(m.sarcasm.f1 == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("zero denominators yield zero") {
  Confusion c{0, 0, 0, 10};  // nothing predicted or labeled positive
  MetricReport r = metrics(c);
  CHECK(r.sarcasm.precision == 0.0);
  CHECK(r.sarcasm.recall == 0.0);
  CHECK(r.sarcasm.f1 == 0.0);
  CHECK(r.not_sarcasm.f1 == 1.0);
}

TEST_CASE("metrics match formula oracle on random confusions") {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<long> count(0, 500);
  for (int trial = 0; trial < 1000; ++trial) {
    Confusion c{count(rng), count(rng), count(rng), count(rng)};
    if (c.total() == 0) c.tn = 1;
    MetricReport r = metrics(c);
    double p, rec, f1;
    oracle_prf(c.tp, c.fp, c.fn, p, rec, f1);
    CHECK(std::abs(r.sarcasm.precision - p) <= 1e-12);
    CHECK(std::abs(r.sarcasm.recall - rec) <= 1e-12);
    CHECK(std::abs(r.sarcasm.f1 - f1) <= 1e-12);
    double pn, rn, f1n;
    oracle_prf(c.tn, c.fn, c.fp, pn, rn, f1n);
    CHECK(std::abs(r.not_sarcasm.f1 - f1n) <= 1e-12);
    CHECK(std::abs(r.macro_f1 - 0.5 * (f1 + f1n)) <= 1e-12);
  }
}

TEST_CASE("f1 lies between precision and recall") {
  std::mt19937_64 rng(13);
  std::uniform_int_distribution<long> count(1, 200);
  for (int trial = 0; trial < 200; ++trial) {
    Confusion c{count(rng), count(rng), count(rng), count(rng)};
    MetricReport r = metrics(c);
    if (r.sarcasm.precision > 0 && r.sarcasm.recall > 0) {
      CHECK(r.sarcasm.f1 <= std::max(r.sarcasm.precision, r.sarcasm.recall) + 1e-12);
      CHECK(r.sarcasm.f1 >= std::min(r.sarcasm.precision, r.sarcasm.recall) - 1e-12);
    }
  }
}

TEST_CASE("swapping the positive class swaps per-class rows, macro unchanged") {
  Confusion c{30, 10, 5, 55};
  MetricReport r = metrics(c);
  Confusion swapped{c.tn, c.fn, c.fp, c.tp};
  MetricReport s = metrics(swapped);
  CHECK(s.sarcasm.precision == doctest::Approx(r.not_sarcasm.precision).epsilon(1e-15));
  CHECK(s.sarcasm.recall == doctest::Approx(r.not_sarcasm.recall).epsilon(1e-15));
  CHECK(s.not_sarcasm.f1 == doctest::Approx(r.sarcasm.f1).epsilon(1e-15));
  CHECK(s.macro_f1 == doctest::Approx(r.macro_f1).epsilon(1e-15));
}

TEST_CASE("metrics invariant under joint permutation") {
  std::mt19937_64 rng(17);
  auto pred = random_labels(200, rng);
  auto gold = random_labels(200, rng);
  MetricReport a = metrics(confusion(pred, gold));

  std::vector<size_t> order(200);
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<Label> pred2(200), gold2(200);
  for (size_t i = 0; i < order.size(); ++i) {
    pred2[i] = pred[order[i]];
    gold2[i] = gold[order[i]];
  }
  MetricReport b = metrics(confusion(pred2, gold2));
  CHECK(a.macro_f1 == b.macro_f1);
  CHECK(a.sarcasm.precision == b.sarcasm.precision);
}

TEST_CASE("report rendering") {
  MetricReport r;
  r.sarcasm = {0.8295, 0.8816, 0.8548, 500};
  r.not_sarcasm = {0.87, 0.81, 0.84, 500};
  r.macro_precision = 0.85;
  r.macro_recall = 0.846;
  r.macro_f1 = 0.847;

  std::string a = report(r, ReportStyle::Table2, "T+BiLSTM+NeXtVLAD");
  std::string b = report(r, ReportStyle::Table2, "T+BiLSTM+NeXtVLAD");
  CHECK(a == b);
  CHECK(a.find("0.8295") != std::string::npos);
  CHECK(a.find("0.8816") != std::string::npos);
  CHECK(a.find("0.8548") != std::string::npos);

  std::string plain = report(r, ReportStyle::Plain);
  CHECK(plain.find("500") != std::string::npos);  // support counts present
  CHECK(plain.find("macro") != std::string::npos);

  std::string rows = report_rows({{"T+BiLSTM+NeXtVLAD", r}, {"T+BiLSTM+MaxPool", r}});
  CHECK(rows.find("T+BiLSTM+MaxPool") != std::string::npos);
}
