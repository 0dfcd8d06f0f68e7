#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace cmow {

enum class TaskArity { single, pair };

enum class Metric { accuracy, f1, matthews, pearson, spearman };

std::string_view to_string(Metric m);
Metric parse_metric(std::string_view name);

struct BinnedRegression {
  double lo = 0.0;
  double hi = 5.0;
  double width = 0.2;

  std::size_t bin_count() const;
};

struct TaskSpec {
  std::string name = "task";
  TaskArity arity = TaskArity::single;
  std::size_t classes = 2;                 // class count, or bin count when binned
  std::optional<BinnedRegression> binned;  // set for binned regression
  std::vector<std::string> label_names;    // optional: maps label strings to ids
  std::vector<Metric> metrics{Metric::accuracy};
  // Columns of the TSV header.
  std::string column_a = "sentence";
  std::string column_b = "sentence2";
  std::string column_label = "label";

  // The selection score is the mean of all listed metrics (MRPC/QQP average
  // accuracy and F1, STS-B averages Pearson and Spearman).
  void validate() const;
  std::size_t class_count() const { return binned ? binned->bin_count() : classes; }
};

struct ExampleRow {
  std::size_t id = 0;  // 0-based data row index (header excluded)
  std::string a;
  std::optional<std::string> b;
  std::size_t label = 0;              // class id (bin id for binned tasks)
  std::optional<double> score;        // raw score for binned tasks
};

// class = floor((score - lo) / width); score == hi falls in the last bin.
// Throws DataError when score lies outside [lo, hi].
std::size_t bin_score(double score, const BinnedRegression& bins);
double debin(std::size_t bin, const BinnedRegression& bins);

// Reads a header-row TSV, mapping columns through the spec. Malformed rows
// throw DataError naming the line in strict mode and are skipped with a
// warning otherwise.
std::vector<ExampleRow> read_task_tsv(const std::filesystem::path& path, const TaskSpec& spec,
                                      bool strict = true);

// Single-pass reader over a one-sequence-per-line corpus.
class CorpusReader {
 public:
  explicit CorpusReader(const std::filesystem::path& path);
  bool next(std::string& line);
  std::size_t line_number() const { return line_number_; }

 private:
  std::ifstream in_;
  std::size_t line_number_ = 0;
};

std::vector<std::string> read_corpus(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Metrics. Class metrics take predicted and gold class ids; correlation
// metrics take real values. All throw StructuralError on length mismatch or
// empty input.

double metric_accuracy(std::span<const std::size_t> preds, std::span<const std::size_t> golds);
// F1 of class 1.
double metric_f1(std::span<const std::size_t> preds, std::span<const std::size_t> golds);
// Matthews correlation (multiclass generalization, equal to the 2x2 formula
// for binary labels); 0 when a marginal vanishes.
double metric_matthews(std::span<const std::size_t> preds, std::span<const std::size_t> golds);
// Throws DataError for constant inputs.
double metric_pearson(std::span<const double> preds, std::span<const double> golds);
// Pearson of average ranks.
double metric_spearman(std::span<const double> preds, std::span<const double> golds);

std::vector<double> average_ranks(std::span<const double> values);

struct MetricReport {
  std::vector<std::pair<Metric, double>> values;
  double selection = 0.0;  // mean of values
};

// Evaluates the task's metrics. For binned tasks predicted bins are debinned
// to midpoints and correlated with the raw gold scores.
MetricReport evaluate_task(const TaskSpec& spec, std::span<const std::size_t> preds,
                           std::span<const ExampleRow> rows);

}  // namespace cmow
