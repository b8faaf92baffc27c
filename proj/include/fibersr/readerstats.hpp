#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/special_functions/beta.hpp>

#include "fibersr/error.hpp"
#include "fibersr/io.hpp"
#include "fibersr/phantom.hpp"

namespace fibersr {

enum class Modality { HR, SR };
enum class Confidence { high, low };

inline std::string to_string(Modality m) { return m == Modality::HR ? "HR" : "SR"; }
inline std::string to_string(Confidence c) { return c == Confidence::high ? "high" : "low"; }

inline Modality parse_modality(const std::string& s) {
  if (s == "HR") return Modality::HR;
  if (s == "SR") return Modality::SR;
  throw Error("unknown modality '" + s + "' (expected HR or SR)");
}

inline Confidence parse_confidence(const std::string& s) {
  if (s == "high") return Confidence::high;
  if (s == "low") return Confidence::low;
  throw Error("unknown confidence '" + s + "' (expected high or low)");
}

struct ReadRecord {
  std::string image_id;
  std::string reader_id;
  Modality modality = Modality::HR;
  Diagnosis call = Diagnosis::non_neoplastic;
  Confidence confidence = Confidence::high;
  Diagnosis truth = Diagnosis::non_neoplastic;
};

inline constexpr const char* kReadsHeader = "image_id,reader_id,modality,call,confidence,truth";

/// Strict CSV reader: exact header, six fields per row, known enum values,
/// unique (image_id, reader_id, modality). Blank lines are skipped.
inline std::vector<ReadRecord> parse_reads_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || trim(line) != kReadsHeader)
    throw Error(std::string("reads: header must be '") + kReadsHeader + "'");
  std::vector<ReadRecord> out;
  std::set<std::tuple<std::string, std::string, Modality>> seen;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto f = split(trim(line), ',');
    const std::string where = "reads line " + std::to_string(lineno) + ": ";
    if (f.size() != 6) throw Error(where + "expected 6 fields, got " + std::to_string(f.size()));
    try {
      ReadRecord r{std::string(trim(f[0])),
                   std::string(trim(f[1])),
                   parse_modality(std::string(trim(f[2]))),
                   parse_diagnosis(std::string(trim(f[3]))),
                   parse_confidence(std::string(trim(f[4]))),
                   parse_diagnosis(std::string(trim(f[5])))};
      if (r.image_id.empty() || r.reader_id.empty()) throw Error("empty image_id or reader_id");
      if (!seen.insert({r.image_id, r.reader_id, r.modality}).second)
        throw Error("duplicate (image_id, reader_id, modality) = (" + r.image_id + ", " + r.reader_id + ", " +
                    to_string(r.modality) + ")");
      out.push_back(std::move(r));
    } catch (const Error& e) {
      throw Error(where + e.what());
    }
  }
  return out;
}

inline std::string reads_csv(const std::vector<ReadRecord>& records) {
  std::ostringstream out;
  out << kReadsHeader << '\n';
  for (const auto& r : records)
    out << r.image_id << ',' << r.reader_id << ',' << to_string(r.modality) << ',' << to_string(r.call) << ','
        << to_string(r.confidence) << ',' << to_string(r.truth) << '\n';
  return out.str();
}

struct ReadFilter {
  std::optional<Modality> modality;
  std::optional<Confidence> confidence;
  std::optional<std::string> reader;

  bool accepts(const ReadRecord& r) const {
    return (!modality || r.modality == *modality) && (!confidence || r.confidence == *confidence) &&
           (!reader || r.reader_id == *reader);
  }
};

/// Neoplastic is the positive class. Ratios with a zero denominator are
/// absent (NOT_DEFINED), never 0.
struct DiagnosticSummary {
  std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
  std::optional<double> sensitivity;
  std::optional<double> specificity;
  double accuracy = 0.0;
  double prevalence = 0.0;  // fraction of records whose truth is positive

  std::int64_t total() const { return tp + fp + fn + tn; }
};

inline DiagnosticSummary summarize(const std::vector<ReadRecord>& records, const ReadFilter& filter = {}) {
  DiagnosticSummary s;
  for (const auto& r : records) {
    if (!filter.accepts(r)) continue;
    const bool call_pos = r.call == Diagnosis::neoplastic;
    const bool truth_pos = r.truth == Diagnosis::neoplastic;
    if (call_pos && truth_pos) ++s.tp;
    else if (call_pos) ++s.fp;
    else if (truth_pos) ++s.fn;
    else ++s.tn;
  }
  require(s.total() > 0, "summarize: no records match the filter");
  if (s.tp + s.fn > 0) s.sensitivity = static_cast<double>(s.tp) / static_cast<double>(s.tp + s.fn);
  if (s.tn + s.fp > 0) s.specificity = static_cast<double>(s.tn) / static_cast<double>(s.tn + s.fp);
  s.accuracy = static_cast<double>(s.tp + s.tn) / static_cast<double>(s.total());
  s.prevalence = static_cast<double>(s.tp + s.fn) / static_cast<double>(s.total());
  return s;
}

struct TTestResult {
  double t = 0.0;
  double df = 0.0;
  double p = 1.0;
  bool degenerate_variance = false;  // zero variance with unequal means
};

inline double sample_mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

/// Unbiased (n - 1) sample variance.
inline double sample_variance(const std::vector<double>& v) {
  const double m = sample_mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

/// Two-sided p of Student's t with df degrees of freedom:
/// P(|T| >= |t|) = I_{df/(df+t^2)}(df/2, 1/2).
inline double t_two_sided_p(double t, double df) {
  if (std::isinf(t)) return 0.0;
  return boost::math::ibeta(df / 2.0, 0.5, df / (df + t * t));
}

/// Pooled-variance two-sample t-test by default; Welch-Satterthwaite when
/// welch is set.
inline TTestResult unpaired_t_test(const std::vector<double>& a, const std::vector<double>& b, bool welch = false) {
  require(a.size() >= 2 && b.size() >= 2, "t-test: each group needs at least 2 values");
  for (double x : a) require(std::isfinite(x), "t-test: non-finite value");
  for (double x : b) require(std::isfinite(x), "t-test: non-finite value");
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  const double ma = sample_mean(a), mb = sample_mean(b);
  const double va = sample_variance(a), vb = sample_variance(b);
  TTestResult r;
  double se2;
  if (welch) {
    const double qa = va / na, qb = vb / nb;
    se2 = qa + qb;
    r.df = se2 > 0.0 ? se2 * se2 / (qa * qa / (na - 1.0) + qb * qb / (nb - 1.0)) : na + nb - 2.0;
  } else {
    r.df = na + nb - 2.0;
    const double pooled = ((na - 1.0) * va + (nb - 1.0) * vb) / r.df;
    se2 = pooled * (1.0 / na + 1.0 / nb);
  }
  if (se2 <= 0.0) {
    if (ma == mb) return {0.0, r.df, 1.0, false};
    r.t = ma > mb ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
    r.p = 0.0;
    r.degenerate_variance = true;
    return r;
  }
  r.t = (ma - mb) / std::sqrt(se2);
  r.p = t_two_sided_p(r.t, r.df);
  return r;
}

/// Power at zero true difference of two one-sided z-tests for equivalence of
/// two proportions (both p, n per arm, limit delta, no continuity
/// correction): 2 Phi(delta / se - z_{1-alpha}) - 1, floored at 0.
inline double tost_power(double n, double alpha, double limit, double p) {
  const boost::math::normal_distribution<double> z;
  const double se = std::sqrt(2.0 * p * (1.0 - p) / n);
  const double a = limit / se - boost::math::quantile(z, 1.0 - alpha);
  return std::max(0.0, 2.0 * boost::math::cdf(z, a) - 1.0);
}

/// Smallest n per arm reaching the requested power. Starts from
/// n = (z_{1-alpha} + z_{1-beta/2})^2 * 2p(1-p) / limit^2 and then steps
/// against the power function until n is minimal.
inline std::int64_t equivalence_sample_size(double power, double alpha, double limit, double p) {
  auto open01 = [](double v) { return v > 0.0 && v < 1.0; };
  require(open01(power) && open01(alpha) && open01(limit) && open01(p),
          "samplesize: power, alpha, limit and p must lie in (0,1)");
  require(alpha < 0.5, "samplesize: alpha must be < 0.5");
  const boost::math::normal_distribution<double> z;
  const double beta = 1.0 - power;
  const double za = boost::math::quantile(z, 1.0 - alpha);
  const double zb = boost::math::quantile(z, 1.0 - beta / 2.0);
  const double raw = (za + zb) * (za + zb) * 2.0 * p * (1.0 - p) / (limit * limit);
  constexpr double kMaxN = 1e9;
  if (!(raw <= kMaxN)) throw Error("samplesize: equivalence limit too small (n exceeds 1e9)");
  auto n = std::max<std::int64_t>(2, static_cast<std::int64_t>(std::ceil(raw)));
  while (n > 2 && tost_power(static_cast<double>(n - 1), alpha, limit, p) >= power) --n;
  while (tost_power(static_cast<double>(n), alpha, limit, p) < power) {
    ++n;
    if (static_cast<double>(n) > kMaxN) throw Error("samplesize: equivalence limit too small (n exceeds 1e9)");
  }
  return n;
}

// --- study report -----------------------------------------------------------

enum class Stratum { all, high, low };

inline std::string to_string(Stratum s) {
  switch (s) {
    case Stratum::all: return "all";
    case Stratum::high: return "high";
    case Stratum::low: return "low";
  }
  return "all";
}

inline std::optional<Confidence> stratum_confidence(Stratum s) {
  if (s == Stratum::high) return Confidence::high;
  if (s == Stratum::low) return Confidence::low;
  return std::nullopt;
}

struct ReaderRow {
  std::string reader_id;
  Modality modality = Modality::HR;
  Stratum stratum = Stratum::all;
  std::optional<DiagnosticSummary> summary;  // absent when the stratum is empty
};

struct ConfidenceRow {
  std::string reader_id;  // "all" for the pooled row
  Modality modality = Modality::HR;
  std::int64_t reads = 0;
  std::int64_t high = 0;
  double high_fraction = 0.0;
};

enum class Metric { accuracy, sensitivity, specificity };

inline std::string to_string(Metric m) {
  switch (m) {
    case Metric::accuracy: return "accuracy";
    case Metric::sensitivity: return "sensitivity";
    case Metric::specificity: return "specificity";
  }
  return "accuracy";
}

inline std::optional<double> metric_value(const DiagnosticSummary& s, Metric m) {
  switch (m) {
    case Metric::accuracy: return s.accuracy;
    case Metric::sensitivity: return s.sensitivity;
    case Metric::specificity: return s.specificity;
  }
  return std::nullopt;
}

/// HR vs SR comparison across readers (the reader is the unit of analysis).
struct TestRow {
  Stratum stratum = Stratum::all;
  Metric metric = Metric::accuracy;
  std::vector<double> hr_values;  // one per reader with a defined value
  std::vector<double> sr_values;
  std::optional<TTestResult> test;  // absent when a group has < 2 values
};

struct StudyReport {
  std::vector<std::string> readers;  // sorted
  std::vector<ReaderRow> per_reader;
  std::vector<ConfidenceRow> confidence;
  std::vector<TestRow> tests;
};

inline StudyReport study_report(const std::vector<ReadRecord>& records, bool welch = false) {
  StudyReport rep;
  std::set<std::string> readers;
  std::set<Modality> modalities;
  for (const auto& r : records) {
    readers.insert(r.reader_id);
    modalities.insert(r.modality);
  }
  require(readers.size() >= 2, "study_report: need records from at least 2 readers");
  require(modalities.size() == 2, "study_report: need records for both HR and SR");
  rep.readers.assign(readers.begin(), readers.end());

  const Stratum strata[] = {Stratum::all, Stratum::high, Stratum::low};
  const Modality mods[] = {Modality::HR, Modality::SR};
  auto matches = [&](const ReadFilter& f) {
    return std::any_of(records.begin(), records.end(), [&](const ReadRecord& r) { return f.accepts(r); });
  };

  for (const auto& reader : rep.readers)
    for (Modality m : mods)
      for (Stratum s : strata) {
        const ReadFilter f{m, stratum_confidence(s), reader};
        ReaderRow row{reader, m, s, std::nullopt};
        if (matches(f)) row.summary = summarize(records, f);
        rep.per_reader.push_back(std::move(row));
      }

  auto confidence_row = [&](const std::string& id, Modality m, const std::optional<std::string>& reader) {
    ConfidenceRow c{id, m, 0, 0, 0.0};
    for (const auto& r : records) {
      if (r.modality != m || (reader && r.reader_id != *reader)) continue;
      ++c.reads;
      if (r.confidence == Confidence::high) ++c.high;
    }
    if (c.reads > 0) c.high_fraction = static_cast<double>(c.high) / static_cast<double>(c.reads);
    return c;
  };
  for (Modality m : mods) {
    for (const auto& reader : rep.readers) rep.confidence.push_back(confidence_row(reader, m, reader));
    rep.confidence.push_back(confidence_row("all", m, std::nullopt));
  }

  const Metric metrics[] = {Metric::accuracy, Metric::sensitivity, Metric::specificity};
  for (Stratum s : strata)
    for (Metric metric : metrics) {
      TestRow t{s, metric, {}, {}, std::nullopt};
      for (const auto& row : rep.per_reader) {
        if (row.stratum != s || !row.summary) continue;
        const auto v = metric_value(*row.summary, metric);
        if (!v) continue;
        (row.modality == Modality::HR ? t.hr_values : t.sr_values).push_back(*v);
      }
      if (t.hr_values.size() >= 2 && t.sr_values.size() >= 2) t.test = unpaired_t_test(t.hr_values, t.sr_values, welch);
      rep.tests.push_back(std::move(t));
    }
  return rep;
}

inline std::string per_reader_csv(const StudyReport& rep) {
  std::ostringstream out;
  out << "reader_id,modality,stratum,reads,tp,fp,fn,tn,sensitivity,specificity,accuracy\n";
  for (const auto& r : rep.per_reader) {
    out << r.reader_id << ',' << to_string(r.modality) << ',' << to_string(r.stratum) << ',';
    if (!r.summary) {
      out << "0,0,0,0,0,NA,NA,NA\n";
      continue;
    }
    const auto& s = *r.summary;
    out << s.total() << ',' << s.tp << ',' << s.fp << ',' << s.fn << ',' << s.tn << ',' << format_optional(s.sensitivity)
        << ',' << format_optional(s.specificity) << ',' << format_number(s.accuracy) << '\n';
  }
  return out.str();
}

inline std::string confidence_csv(const StudyReport& rep) {
  std::ostringstream out;
  out << "reader_id,modality,reads,high_confidence,high_fraction\n";
  for (const auto& c : rep.confidence)
    out << c.reader_id << ',' << to_string(c.modality) << ',' << c.reads << ',' << c.high << ','
        << format_number(c.high_fraction) << '\n';
  return out.str();
}

inline std::string tests_csv(const StudyReport& rep) {
  std::ostringstream out;
  out << "stratum,metric,n_hr,hr_mean,hr_sd,n_sr,sr_mean,sr_sd,t,df,p,degenerate_variance\n";
  auto stats = [&](const std::vector<double>& v) {
    std::ostringstream s;
    s << v.size() << ',' << (v.empty() ? "NA" : format_number(sample_mean(v))) << ','
      << (v.size() < 2 ? "NA" : format_number(std::sqrt(sample_variance(v))));
    return s.str();
  };
  for (const auto& t : rep.tests) {
    out << to_string(t.stratum) << ',' << to_string(t.metric) << ',' << stats(t.hr_values) << ',' << stats(t.sr_values)
        << ',';
    if (t.test)
      out << format_number(t.test->t) << ',' << format_number(t.test->df) << ',' << format_number(t.test->p) << ','
          << (t.test->degenerate_variance ? 1 : 0) << '\n';
    else
      out << "NA,NA,NA,NA\n";
  }
  return out.str();
}

}  // namespace fibersr
