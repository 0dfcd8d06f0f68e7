#include "cmow/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <sstream>

#include "cmow/errors.hpp"
#include "cmow/log.hpp"

namespace cmow {

namespace {

void require_lengths(std::size_t a, std::size_t b) {
  if (a != b) {
    throw StructuralError("metric inputs differ in length: " + std::to_string(a) + " vs " +
                          std::to_string(b));
  }
  if (a == 0) throw StructuralError("metric inputs are empty");
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    fields.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return fields;
}

std::optional<double> parse_double(const std::string& s) {
  double v = 0.0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end) return std::nullopt;
  return v;
}

}  // namespace

std::string_view to_string(Metric m) {
  switch (m) {
    case Metric::accuracy: return "accuracy";
    case Metric::f1: return "f1";
    case Metric::matthews: return "matthews";
    case Metric::pearson: return "pearson";
    case Metric::spearman: return "spearman";
  }
  return "unknown";
}

Metric parse_metric(std::string_view name) {
  for (Metric m : {Metric::accuracy, Metric::f1, Metric::matthews, Metric::pearson, Metric::spearman}) {
    if (to_string(m) == name) return m;
  }
  if (name == "mcc") return Metric::matthews;
  throw ConfigError("unknown metric '" + std::string(name) + "'");
}

std::size_t BinnedRegression::bin_count() const {
  const double bins = (hi - lo) / width;
  const double rounded = std::round(bins);
  if (!(width > 0.0) || !(hi > lo) || std::abs(bins - rounded) > 1e-9 || rounded < 1.0) {
    throw ConfigError("binned regression needs (hi - lo) / width to be a positive integer");
  }
  return static_cast<std::size_t>(rounded);
}

void TaskSpec::validate() const {
  if (binned) {
    (void)binned->bin_count();
  } else if (classes < 2) {
    throw ConfigError("task " + name + " needs at least two classes");
  }
  if (!label_names.empty() && label_names.size() != classes) {
    throw ConfigError("task " + name + " lists " + std::to_string(label_names.size()) +
                      " label names for " + std::to_string(classes) + " classes");
  }
  if (metrics.empty()) throw ConfigError("task " + name + " lists no metrics");
}

std::size_t bin_score(double score, const BinnedRegression& bins) {
  const std::size_t count = bins.bin_count();
  if (!(score >= bins.lo && score <= bins.hi)) {
    throw DataError("score " + std::to_string(score) + " outside [" + std::to_string(bins.lo) + ", " +
                    std::to_string(bins.hi) + "]");
  }
  const auto bin = static_cast<std::size_t>(std::floor((score - bins.lo) / bins.width));
  return std::min(bin, count - 1);
}

double debin(std::size_t bin, const BinnedRegression& bins) {
  if (bin >= bins.bin_count()) throw StructuralError("bin " + std::to_string(bin) + " out of range");
  return bins.lo + (static_cast<double>(bin) + 0.5) * bins.width;
}

std::vector<ExampleRow> read_task_tsv(const std::filesystem::path& path, const TaskSpec& spec,
                                      bool strict) {
  spec.validate();
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open task file " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + ": missing header row");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_tabs(line);
  auto column = [&](const std::string& name) -> std::size_t {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw ConfigError(path.string() + ": header lacks column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t col_a = column(spec.column_a);
  const std::size_t col_label = column(spec.column_label);
  const bool paired = spec.arity == TaskArity::pair;
  const std::size_t col_b = paired ? column(spec.column_b) : 0;

  std::vector<ExampleRow> rows;
  std::size_t line_no = 1;
  std::size_t row_index = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::size_t this_row = row_index++;
    auto reject = [&](const std::string& why) {
      const std::string msg = path.string() + ":" + std::to_string(line_no) + ": " + why;
      if (strict) throw DataError(msg);
      logger().warn("skipping {}", msg);
    };
    const auto fields = split_tabs(line);
    const std::size_t needed = std::max({col_a, col_label, col_b}) + 1;
    if (fields.size() < needed) {
      reject("expected at least " + std::to_string(needed) + " columns, found " + std::to_string(fields.size()));
      continue;
    }
    ExampleRow row;
    row.id = this_row;
    row.a = fields[col_a];
    if (paired) row.b = fields[col_b];
    const std::string& label = fields[col_label];
    if (label.empty()) {
      reject("missing label");
      continue;
    }
    if (spec.binned) {
      const auto score = parse_double(label);
      if (!score || *score < spec.binned->lo || *score > spec.binned->hi) {
        reject("score '" + label + "' is not a number in range");
        continue;
      }
      row.score = *score;
      row.label = bin_score(*score, *spec.binned);
    } else if (!spec.label_names.empty()) {
      auto it = std::find(spec.label_names.begin(), spec.label_names.end(), label);
      if (it == spec.label_names.end()) {
        reject("unknown label '" + label + "'");
        continue;
      }
      row.label = static_cast<std::size_t>(it - spec.label_names.begin());
    } else {
      std::size_t value = 0;
      auto [ptr, ec] = std::from_chars(label.data(), label.data() + label.size(), value);
      if (ec != std::errc() || ptr != label.data() + label.size() || value >= spec.classes) {
        reject("label '" + label + "' is not a class id below " + std::to_string(spec.classes));
        continue;
      }
      row.label = value;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

CorpusReader::CorpusReader(const std::filesystem::path& path) : in_(path) {
  if (!in_) throw ConfigError("cannot open corpus " + path.string());
}

bool CorpusReader::next(std::string& line) {
  if (!std::getline(in_, line)) return false;
  ++line_number_;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return true;
}

std::vector<std::string> read_corpus(const std::filesystem::path& path) {
  CorpusReader reader(path);
  std::vector<std::string> lines;
  std::string line;
  while (reader.next(line)) lines.push_back(line);
  return lines;
}

double metric_accuracy(std::span<const std::size_t> preds, std::span<const std::size_t> golds) {
  require_lengths(preds.size(), golds.size());
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hits += preds[i] == golds[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

double metric_f1(std::span<const std::size_t> preds, std::span<const std::size_t> golds) {
  require_lengths(preds.size(), golds.size());
  double tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const bool p = preds[i] == 1;
    const bool g = golds[i] == 1;
    tp += p && g;
    fp += p && !g;
    fn += !p && g;
  }
  const double denom = 2 * tp + fp + fn;
  return denom > 0 ? 2 * tp / denom : 0.0;
}

double metric_matthews(std::span<const std::size_t> preds, std::span<const std::size_t> golds) {
  require_lengths(preds.size(), golds.size());
  const std::size_t k =
      std::max(*std::max_element(preds.begin(), preds.end()), *std::max_element(golds.begin(), golds.end())) + 1;
  std::vector<double> pred_count(k, 0.0), gold_count(k, 0.0);
  double correct = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    pred_count[preds[i]] += 1;
    gold_count[golds[i]] += 1;
    correct += preds[i] == golds[i];
  }
  const double s = static_cast<double>(preds.size());
  double pg = 0, pp = 0, gg = 0;
  for (std::size_t c = 0; c < k; ++c) {
    pg += pred_count[c] * gold_count[c];
    pp += pred_count[c] * pred_count[c];
    gg += gold_count[c] * gold_count[c];
  }
  const double denom = std::sqrt((s * s - pp) * (s * s - gg));
  if (denom == 0.0) return 0.0;
  return (correct * s - pg) / denom;
}

double metric_pearson(std::span<const double> preds, std::span<const double> golds) {
  require_lengths(preds.size(), golds.size());
  if (preds.size() < 2) throw StructuralError("correlation needs at least two points");
  const double n = static_cast<double>(preds.size());
  const double mp = std::accumulate(preds.begin(), preds.end(), 0.0) / n;
  const double mg = std::accumulate(golds.begin(), golds.end(), 0.0) / n;
  double cov = 0, vp = 0, vg = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double a = preds[i] - mp;
    const double b = golds[i] - mg;
    cov += a * b;
    vp += a * a;
    vg += b * b;
  }
  if (vp == 0.0 || vg == 0.0) throw DataError("correlation undefined for a constant vector");
  return cov / std::sqrt(vp * vg);
}

std::vector<double> average_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double rank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

double metric_spearman(std::span<const double> preds, std::span<const double> golds) {
  require_lengths(preds.size(), golds.size());
  const auto rp = average_ranks(preds);
  const auto rg = average_ranks(golds);
  return metric_pearson(rp, rg);
}

MetricReport evaluate_task(const TaskSpec& spec, std::span<const std::size_t> preds,
                           std::span<const ExampleRow> rows) {
  require_lengths(preds.size(), rows.size());
  std::vector<std::size_t> golds;
  golds.reserve(rows.size());
  for (const auto& r : rows) golds.push_back(r.label);

  std::vector<double> pred_scores, gold_scores;
  auto real_values = [&] {
    if (!pred_scores.empty()) return;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (spec.binned) {
        pred_scores.push_back(debin(preds[i], *spec.binned));
        gold_scores.push_back(rows[i].score.value_or(debin(rows[i].label, *spec.binned)));
      } else {
        pred_scores.push_back(static_cast<double>(preds[i]));
        gold_scores.push_back(static_cast<double>(rows[i].label));
      }
    }
  };

  // A model stuck on one class has no correlation with anything; score it 0
  // rather than failing the run.
  auto constant = [](const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); });
  };

  MetricReport report;
  for (Metric m : spec.metrics) {
    double value = 0.0;
    switch (m) {
      case Metric::accuracy: value = metric_accuracy(preds, golds); break;
      case Metric::f1: value = metric_f1(preds, golds); break;
      case Metric::matthews: value = metric_matthews(preds, golds); break;
      case Metric::pearson:
        real_values();
        value = constant(pred_scores) ? 0.0 : metric_pearson(pred_scores, gold_scores);
        break;
      case Metric::spearman:
        real_values();
        value = constant(pred_scores) ? 0.0 : metric_spearman(pred_scores, gold_scores);
        break;
    }
    report.values.emplace_back(m, value);
    report.selection += value;
  }
  report.selection /= static_cast<double>(report.values.size());
  return report;
}

}  // namespace cmow
