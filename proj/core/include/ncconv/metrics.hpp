#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include "ncconv/train.hpp"

namespace ncconv {

// Frozen column layout; the leading `schema` column carries kMetricsSchema on every row.
inline constexpr const char* kMetricsSchema = "ncconv-metrics-v1";
inline constexpr const char* kMetricsHeader =
    "schema,epoch,step,train_loss,train_acc,val_loss,val_top1,val_top5,val_top1_err,"
    "val_top5_err,mean_grad_norm,lr,wall_ms";

// `include_wall_time = false` writes wall_ms as 0 so identical runs give identical bytes.
std::string format_metrics_row(const MetricsRecord& r, bool include_wall_time);

// Append-only CSV; the header is written when the file is new or empty.
class MetricsCsv {
 public:
  MetricsCsv(const std::filesystem::path& file, bool include_wall_time);
  void append(const MetricsRecord& r);

 private:
  std::ofstream out_;
  bool include_wall_time_;
};

// Shortest round-trip decimal form of a double ("%.17g").
std::string format_double(double v);

}  // namespace ncconv
