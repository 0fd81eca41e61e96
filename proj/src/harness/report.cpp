#include "vqa/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <limits>
#include <sstream>

namespace vqa::harness {

using nlohmann::json;

namespace {

json tally_json(const Tally& t) { return {{"correct", t.correct}, {"total", t.total}, {"accuracy", t.accuracy()}}; }

Tally tally_from(const json& j, const std::string& where) {
  if (!j.is_object() || !j.contains("correct") || !j.contains("total"))
    throw DataError("metrics field '" + where + "' needs correct/total");
  return {j.at("correct").get<long>(), j.at("total").get<long>()};
}

// NaN does not survive JSON; store it as null.
json number_or_null(double v) { return std::isnan(v) ? json(nullptr) : json(v); }
double number_from(const json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream ss(line);
  while (std::getline(ss, cur, sep)) out.push_back(cur);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

}  // namespace

json to_json(const MetricsReport& m) {
  json fam = json::object();
  for (auto f : question::kFamilies) fam[std::string(question::family_name(f))] = tally_json(m.families[static_cast<std::size_t>(f)]);
  json curve = json::array();
  for (const auto& p : m.curve)
    curve.push_back({{"iteration", p.iteration},
                     {"epoch", p.epoch},
                     {"train_loss", number_or_null(p.train_loss)},
                     {"val_loss", number_or_null(p.val_loss)},
                     {"val_accuracy", number_or_null(p.val_accuracy)}});
  return {{"overall", tally_json(m.overall)}, {"families", fam}, {"answer_type", tally_json(m.answer_type)},
          {"curve", curve}};
}

MetricsReport metrics_from_json(const json& j) {
  MetricsReport m;
  try {
    m.overall = tally_from(j.at("overall"), "overall");
    m.answer_type = tally_from(j.at("answer_type"), "answer_type");
    for (auto f : question::kFamilies) {
      const std::string name(question::family_name(f));
      m.families[static_cast<std::size_t>(f)] = tally_from(j.at("families").at(name), "families." + name);
    }
    if (j.contains("curve"))
      for (const auto& p : j.at("curve"))
        m.curve.push_back({p.at("iteration").get<long>(), p.at("epoch").get<int>(), number_from(p.at("train_loss")),
                           number_from(p.at("val_loss")), number_from(p.at("val_accuracy"))});
  } catch (const json::exception& e) {
    throw DataError(std::string("corrupt metrics: ") + e.what());
  }
  return m;
}

json sweep_to_json(const std::vector<SweepPoint>& points) {
  json arr = json::array();
  for (const auto& p : points) arr.push_back({{"fraction", p.fraction}, {"train_scenes", p.train_scenes}, {"metrics", to_json(p.report)}});
  return {{"points", arr}};
}

std::vector<SweepPoint> sweep_from_json(const json& j) {
  std::vector<SweepPoint> out;
  try {
    for (const auto& p : j.at("points"))
      out.push_back({p.at("fraction").get<double>(), p.at("train_scenes").get<int>(), metrics_from_json(p.at("metrics"))});
  } catch (const json::exception& e) {
    throw DataError(std::string("corrupt sweep file: ") + e.what());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Tables
// ---------------------------------------------------------------------------

namespace {

const char* kTableHeader =
    "label,overall,count,exist,compare_number,query_attribute,compare_attribute,answer_type,"
    "overall_correct,overall_total,count_correct,count_total,exist_correct,exist_total,compare_number_correct,"
    "compare_number_total,query_attribute_correct,query_attribute_total,compare_attribute_correct,"
    "compare_attribute_total,answer_type_correct,answer_type_total";

}  // namespace

std::string table_csv(const std::vector<TableRow>& rows) {
  std::ostringstream out;
  out << kTableHeader << "\n";
  for (const auto& r : rows) {
    if (r.label.find_first_of(",\n\"") != std::string::npos) throw DataError("table label may not contain , \" or newline");
    const auto& m = r.metrics;
    out << r.label << "," << num(m.overall.accuracy());
    for (const auto& f : m.families) out << "," << num(f.accuracy());
    out << "," << num(m.answer_type.accuracy());
    out << "," << m.overall.correct << "," << m.overall.total;
    for (const auto& f : m.families) out << "," << f.correct << "," << f.total;
    out << "," << m.answer_type.correct << "," << m.answer_type.total << "\n";
  }
  return out.str();
}

std::vector<TableRow> parse_table_csv(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line) || line != kTableHeader) throw DataError("table CSV has an unexpected header");
  std::vector<TableRow> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 22) throw DataError("table CSV line " + std::to_string(lineno) + " has " + std::to_string(f.size()) + " fields");
    TableRow r;
    r.label = f[0];
    try {
      auto tally = [&](std::size_t i) { return Tally{std::stol(f[i]), std::stol(f[i + 1])}; };
      r.metrics.overall = tally(8);
      for (std::size_t k = 0; k < 5; ++k) r.metrics.families[k] = tally(10 + 2 * k);
      r.metrics.answer_type = tally(20);
      // Accuracy columns must agree with the tallies bit-for-bit.
      auto check = [&](std::size_t i, const Tally& t) {
        if (std::strtod(f[i].c_str(), nullptr) != t.accuracy())
          throw DataError("table CSV line " + std::to_string(lineno) + ": accuracy column " + std::to_string(i) +
                          " disagrees with its tally");
      };
      check(1, r.metrics.overall);
      for (std::size_t k = 0; k < 5; ++k) check(2 + k, r.metrics.families[k]);
      check(7, r.metrics.answer_type);
    } catch (const std::logic_error& e) {
      throw DataError("table CSV line " + std::to_string(lineno) + ": " + e.what());
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

std::string table_text(const std::vector<TableRow>& rows) {
  std::ostringstream out;
  std::size_t w = 5;
  for (const auto& r : rows) w = std::max(w, r.label.size());
  out << std::left << std::setw(static_cast<int>(w)) << "model"
      << "  overall   count   exist  comp num  query attr  comp attr\n";
  out << std::string(w + 55, '-') << "\n";
  for (const auto& r : rows) {
    const auto& m = r.metrics;
    out << std::left << std::setw(static_cast<int>(w)) << r.label << std::right << std::fixed << std::setprecision(1)
        << std::setw(9) << 100.0 * m.overall.accuracy();
    const int widths[] = {8, 8, 10, 12, 11};
    for (std::size_t k = 0; k < 5; ++k) out << std::setw(widths[k]) << 100.0 * m.families[k].accuracy();
    out << "\n";
  }
  return out.str();
}

std::string curve_csv(const std::vector<CurvePoint>& curve) {
  std::ostringstream out;
  out << "iteration,epoch,train_loss,val_loss,val_accuracy\n";
  for (const auto& p : curve)
    out << p.iteration << "," << p.epoch << "," << num(p.train_loss) << "," << num(p.val_loss) << ","
        << num(p.val_accuracy) << "\n";
  return out.str();
}

// ---------------------------------------------------------------------------
// SVG
// ---------------------------------------------------------------------------

std::string svg_line_plot(const std::string& title, const std::string& x_label, const std::string& y_label,
                          const std::vector<Series>& series) {
  const double W = 640, H = 400, L = 70, R = 150, T = 40, B = 50;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series)
    for (auto [x, y] : s.points) {
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
    }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

  std::ostringstream o;
  o << std::setprecision(6);
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
    << " " << H << "\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">"
    << title << "</text>\n";
  o << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
    << "\" stroke=\"black\"/>\n";
  o << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = x0 + (x1 - x0) * i / 4.0, yv = y0 + (y1 - y0) * i / 4.0;
    o << "<text x=\"" << px(xv) << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
      << "font-size=\"11\">" << xv << "</text>\n";
    o << "<text x=\"" << L - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\" font-family=\"sans-serif\" "
      << "font-size=\"11\">" << yv << "</text>\n";
  }
  o << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12
    << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << x_label << "</text>\n";
  o << "<text x=\"16\" y=\"" << (T + H - B) / 2 << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
    << "font-size=\"12\" transform=\"rotate(-90 16 " << (T + H - B) / 2 << ")\">" << y_label << "</text>\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    const char* c = colors[i % 6];
    o << "<polyline fill=\"none\" stroke=\"" << c << "\" stroke-width=\"2\" data-series=\"" << s.name
      << "\" points=\"";
    for (std::size_t k = 0; k < s.points.size(); ++k)
      o << (k ? " " : "") << px(s.points[k].first) << "," << py(s.points[k].second);
    o << "\"/>\n";
    o << "<text x=\"" << W - R + 10 << "\" y=\"" << T + 16 * (i + 1) << "\" fill=\"" << c
      << "\" font-family=\"sans-serif\" font-size=\"12\">" << s.name << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

// ---------------------------------------------------------------------------
// report()
// ---------------------------------------------------------------------------

namespace {

json read_json(const std::filesystem::path& p) {
  const std::string text = read_text(p);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw DataError("'" + p.string() + "' is not valid JSON: " + e.what());
  }
}

std::string run_label(const json& j) {
  std::ostringstream s;
  s << j.value("encoder", std::string("model")) << "-" << j.value("budget", 0) << "mem";
  const double f = j.value("fraction", 1.0);
  if (f != 1.0) s << "-f" << f;
  return s.str();
}

}  // namespace

std::vector<std::filesystem::path> report(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> written;
  auto emit = [&](const std::string& name, const std::string& text) {
    write_text(dir / name, text);
    written.push_back(dir / name);
  };
  if (std::filesystem::exists(dir / "sweep.json")) {
    const auto points = sweep_from_json(read_json(dir / "sweep.json"));
    if (points.empty()) throw DataError("sweep.json lists no fractions");
    std::vector<TableRow> rows;
    Series overall{"overall", {}};
    std::array<Series, question::kFamilyCount> fam;
    for (auto f : question::kFamilies) fam[static_cast<std::size_t>(f)].name = std::string(question::family_name(f));
    std::ostringstream csv;
    csv << "fraction,train_scenes,overall";
    for (auto f : question::kFamilies) csv << "," << question::family_name(f);
    csv << "\n";
    for (const auto& p : points) {
      std::ostringstream label;
      label << "fraction=" << p.fraction;
      rows.push_back({label.str(), p.report});
      overall.points.emplace_back(p.fraction, p.report.overall.accuracy());
      csv << num(p.fraction) << "," << p.train_scenes << "," << num(p.report.overall.accuracy());
      for (std::size_t k = 0; k < fam.size(); ++k) {
        fam[k].points.emplace_back(p.fraction, p.report.families[k].accuracy());
        csv << "," << num(p.report.families[k].accuracy());
      }
      csv << "\n";
    }
    std::vector<Series> series{overall};
    series.insert(series.end(), fam.begin(), fam.end());
    emit("table.csv", table_csv(rows));
    emit("table.txt", table_text(rows));
    emit("fewshot.csv", csv.str());
    emit("fewshot.svg", svg_line_plot("Accuracy vs training fraction", "fraction of training scenes", "accuracy", series));
    return written;
  }
  if (!std::filesystem::exists(dir / "metrics.json"))
    throw DataError("'" + dir.string() + "' holds neither metrics.json nor sweep.json");
  const json j = read_json(dir / "metrics.json");
  const MetricsReport m = metrics_from_json(j);
  emit("table.csv", table_csv({{run_label(j), m}}));
  emit("table.txt", table_text({{run_label(j), m}}));
  emit("curve.csv", curve_csv(m.curve));
  Series train{"train loss", {}}, val{"val loss", {}}, acc{"val accuracy", {}};
  for (const auto& p : m.curve) {
    if (!std::isnan(p.train_loss)) train.points.emplace_back(static_cast<double>(p.iteration), p.train_loss);
    if (!std::isnan(p.val_loss)) val.points.emplace_back(static_cast<double>(p.iteration), p.val_loss);
    if (!std::isnan(p.val_accuracy)) acc.points.emplace_back(static_cast<double>(p.iteration), p.val_accuracy);
  }
  emit("loss.svg", svg_line_plot("Training and validation loss", "iteration", "loss", {train, val}));
  emit("accuracy.svg", svg_line_plot("Validation accuracy", "iteration", "accuracy", {acc}));
  return written;
}

}  // namespace vqa::harness
