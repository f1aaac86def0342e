#include "ncconv/metrics.hpp"

#include <cstdio>
#include <sstream>

namespace ncconv {

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string format_metrics_row(const MetricsRecord& r, bool include_wall_time) {
  std::ostringstream os;
  os << kMetricsSchema << ',' << r.epoch << ',' << r.step << ',' << format_double(r.train_loss)
     << ',' << format_double(r.train_acc) << ',' << format_double(r.val_loss) << ','
     << format_double(r.val_top1) << ',' << format_double(r.val_top5) << ','
     << format_double(1.0 - r.val_top1) << ',' << format_double(1.0 - r.val_top5) << ','
     << format_double(r.mean_grad_norm) << ',' << format_double(r.lr) << ','
     << format_double(include_wall_time ? r.wall_ms : 0.0);
  return os.str();
}

MetricsCsv::MetricsCsv(const std::filesystem::path& file, bool include_wall_time)
    : include_wall_time_(include_wall_time) {
  const bool fresh = !std::filesystem::exists(file) || std::filesystem::file_size(file) == 0;
  out_.open(file, std::ios::app);
  if (!out_) throw FormatError("cannot open metrics file " + file.string());
  if (fresh) out_ << kMetricsHeader << '\n' << std::flush;
}

void MetricsCsv::append(const MetricsRecord& r) {
  out_ << format_metrics_row(r, include_wall_time_) << '\n' << std::flush;
}

}  // namespace ncconv
