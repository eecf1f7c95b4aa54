#include "relmap/metrics.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "relmap/errors.hpp"

namespace relmap {

using nlohmann::json;

RunRecord::RunRecord(std::string path) : path_(std::move(path)) {
  if (!path_.empty()) {
    std::ofstream f(path_, std::ios::trunc);
    if (!f) throw IoError("cannot open record file " + path_);
  }
}

RunRecord RunRecord::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open record file " + path);
  RunRecord rec;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    rec.events_.push_back(json::parse(line));
  }
  return rec;
}

std::size_t RunRecord::append(json event) {
  const std::size_t seq = events_.size();
  event["seq"] = seq;
  if (!path_.empty()) {
    std::ofstream f(path_, std::ios::app);
    if (!f) throw IoError("cannot append to record file " + path_);
    f << event.dump() << '\n';
  }
  events_.push_back(std::move(event));
  return seq;
}

std::vector<json> RunRecord::find(const std::string& event_type) const {
  std::vector<json> out;
  for (const json& e : events_) {
    if (e.value("event", "") == event_type) out.push_back(e);
  }
  return out;
}

double average_accuracy(const RunRecord& record, std::size_t after_task) {
  // per-task accuracies measured after `after_task` finished
  std::vector<double> acc(after_task + 1,
                          std::numeric_limits<double>::quiet_NaN());
  for (const json& e : record.find("eval")) {
    const std::size_t measured_after = e.at("after_task").get<std::size_t>();
    if (measured_after != after_task) continue;
    const std::size_t task = e.at("task").get<std::size_t>();
    if (task <= after_task) acc[task] = e.at("accuracy").get<double>();
  }
  double sum = 0.0;
  for (std::size_t t = 0; t <= after_task; ++t) {
    if (std::isnan(acc[t])) {
      std::ostringstream os;
      os << "average_accuracy: no evaluation of task " << t << " after task "
         << after_task;
      throw InputError(os.str());
    }
    sum += acc[t];
  }
  return sum / static_cast<double>(after_task + 1);
}

std::pair<double, double> mean_sd(const std::vector<double>& values) {
  if (values.empty()) throw InputError("mean_sd: empty sample");
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  if (values.size() == 1) return {mean, 0.0};
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / static_cast<double>(values.size() - 1))};
}

namespace {

struct Series {
  std::string label;
  std::vector<std::pair<double, double>> points;  // (task, value)
};

std::string svg_chart(const std::string& title, const std::string& y_label,
                      const std::vector<Series>& series,
                      const std::string& config_hash) {
  constexpr double kW = 640, kH = 420, kL = 60, kR = 20, kT = 40, kB = 50;
  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  bool first = true;
  for (const Series& s : series) {
    for (const auto& [x, y] : s.points) {
      if (first) {
        xmin = xmax = x;
        ymin = ymax = y;
        first = false;
      }
      xmin = std::min(xmin, x);
      xmax = std::max(xmax, x);
      ymin = std::min(ymin, y);
      ymax = std::max(ymax, y);
    }
  }
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) ymax = ymin + 1;
  auto sx = [&](double x) {
    return kL + (x - xmin) / (xmax - xmin) * (kW - kL - kR);
  };
  auto sy = [&](double y) {
    return kH - kB - (y - ymin) / (ymax - ymin) * (kH - kT - kB);
  };
  static const char* kColors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                  "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
  std::ostringstream os;
  os.precision(6);
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
     << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW
     << "\" height=\"" << kH << "\" data-config-hash=\"" << config_hash
     << "\">\n";
  os << "<rect width=\"" << kW << "\" height=\"" << kH
     << "\" fill=\"white\"/>\n";
  os << "<text x=\"" << kW / 2 << "\" y=\"24\" text-anchor=\"middle\" "
     << "font-family=\"sans-serif\" font-size=\"16\">" << title << "</text>\n";
  os << "<line x1=\"" << kL << "\" y1=\"" << kH - kB << "\" x2=\"" << kW - kR
     << "\" y2=\"" << kH - kB << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << kL << "\" y1=\"" << kT << "\" x2=\"" << kL
     << "\" y2=\"" << kH - kB << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double y = ymin + (ymax - ymin) * i / 4.0;
    os << "<text x=\"" << kL - 8 << "\" y=\"" << sy(y) + 4
       << "\" text-anchor=\"end\" font-family=\"sans-serif\" "
          "font-size=\"11\">"
       << y << "</text>\n";
    const double x = xmin + (xmax - xmin) * i / 4.0;
    os << "<text x=\"" << sx(x) << "\" y=\"" << kH - kB + 18
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
          "font-size=\"11\">"
       << x << "</text>\n";
  }
  os << "<text x=\"16\" y=\"" << kH / 2
     << "\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 "
        "16 "
     << kH / 2 << ")\" text-anchor=\"middle\">" << y_label << "</text>\n";
  os << "<text x=\"" << (kL + kW - kR) / 2 << "\" y=\"" << kH - 12
     << "\" font-family=\"sans-serif\" font-size=\"12\" "
        "text-anchor=\"middle\">task</text>\n";
  std::size_t ci = 0;
  for (const Series& s : series) {
    const char* color = kColors[ci++ % 8];
    os << "<polyline fill=\"none\" stroke=\"" << color
       << "\" stroke-width=\"1.5\" points=\"";
    for (const auto& [x, y] : s.points) {
      os << sx(x) << ',' << sy(y) << ' ';
    }
    os << "\"/>\n";
    os << "<text x=\"" << kW - kR - 4 << "\" y=\"" << kT + 16.0 * ci
       << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\" "
          "fill=\""
       << color << "\">" << s.label << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace

std::vector<std::string> emit_report(const std::vector<RunRecord>& records,
                                     const std::string& out_dir) {
  if (records.empty()) throw InputError("emit_report: no records");
  struct Row {
    std::string run_id, experiment, mode, config_hash;
    std::uint64_t seed = 0;
    std::size_t task = 0;
    double accuracy = 0.0, sparsity = 0.0;
  };
  std::vector<Row> rows;
  for (const RunRecord& rec : records) {
    const auto starts = rec.find("run_start");
    if (starts.empty()) throw InputError("emit_report: record lacks run_start");
    const json& start = starts.front();
    for (const json& e : rec.find("task_done")) {
      Row r;
      r.run_id = start.at("run_id").get<std::string>();
      r.experiment = start.at("experiment").get<std::string>();
      r.mode = start.at("mode").get<std::string>();
      r.config_hash = start.at("config_hash").get<std::string>();
      r.seed = start.at("seed").get<std::uint64_t>();
      r.task = e.at("task").get<std::size_t>();
      r.accuracy = e.at("accuracy").get<double>();
      r.sparsity = e.at("sparsity").get<double>();
      rows.push_back(std::move(r));
    }
  }
  if (rows.empty()) {
    throw InputError("emit_report: records contain no completed tasks");
  }
  std::filesystem::create_directories(out_dir);

  const std::string csv_path = out_dir + "/summary.csv";
  {
    std::ostringstream os;
    os.precision(17);
    os << "run_id,experiment,mode,config_hash,seed,task,accuracy,sparsity\n";
    for (const Row& r : rows) {
      os << r.run_id << ',' << r.experiment << ',' << r.mode << ','
         << r.config_hash << ',' << r.seed << ',' << r.task << ',' << r.accuracy
         << ',' << r.sparsity << '\n';
    }
    std::ofstream f(csv_path, std::ios::trunc);
    if (!f) throw IoError("cannot write " + csv_path);
    f << os.str();
  }

  std::vector<Series> acc_series, spars_series;
  for (const RunRecord& rec : records) {
    const json start = rec.find("run_start").front();
    Series sa, ss;
    sa.label = ss.label = start.at("run_id").get<std::string>();
    for (const json& e : rec.find("task_done")) {
      const double t = e.at("task").get<double>();
      sa.points.emplace_back(t, e.at("accuracy").get<double>());
      ss.points.emplace_back(t, e.at("sparsity").get<double>());
    }
    acc_series.push_back(std::move(sa));
    spars_series.push_back(std::move(ss));
  }
  const std::string hash = records.front()
                               .find("run_start")
                               .front()
                               .at("config_hash")
                               .get<std::string>();
  const std::string acc_path = out_dir + "/accuracy_vs_task.svg";
  const std::string spars_path = out_dir + "/sparsity_vs_task.svg";
  {
    std::ofstream f(acc_path, std::ios::trunc);
    if (!f) throw IoError("cannot write " + acc_path);
    f << svg_chart("Per-task test accuracy", "accuracy", acc_series, hash);
  }
  {
    std::ofstream f(spars_path, std::ios::trunc);
    if (!f) throw IoError("cannot write " + spars_path);
    f << svg_chart("Model sparsity", "sparsity", spars_series, hash);
  }
  return {csv_path, acc_path, spars_path};
}

}  // namespace relmap
