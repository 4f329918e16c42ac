#include "treewave/trace.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <ostream>
#include <random>
#include <sstream>

#include "treewave/error.hpp"

namespace treewave {

const char* to_string(TraceKind k) {
  switch (k) {
    case TraceKind::dirichlet: return "dirichlet";
    case TraceKind::neumann_outward: return "neumann-outward";
    case TraceKind::residual: return "residual";
    case TraceKind::derived: return "derived";
  }
  return "derived";
}

void TraceRecord::check() const {
  if (!(dt > 0.0)) throw ValidationError("trace time step must be positive");
  if (!imag.empty() && imag.size() != values.size())
    throw ValidationError("trace real/imaginary sample counts differ");
}

namespace {

void require_same_grid(const TraceRecord& a, const TraceRecord& b) {
  if (a.count() != b.count() || std::abs(a.dt - b.dt) > 1e-12 * a.dt || std::abs(a.t0 - b.t0) > 1e-12)
    throw ValidationError("traces are not on the same time grid");
}

}  // namespace

TraceRecord subtract(const TraceRecord& a, const TraceRecord& b) {
  require_same_grid(a, b);
  TraceRecord out = a;
  out.kind = TraceKind::derived;
  for (std::size_t k = 0; k < a.count(); ++k) out.values[k] -= b.values[k];
  if (a.is_complex() || b.is_complex()) {
    out.imag.assign(a.count(), 0.0);
    for (std::size_t k = 0; k < a.count(); ++k)
      out.imag[k] = (a.is_complex() ? a.imag[k] : 0.0) - (b.is_complex() ? b.imag[k] : 0.0);
  }
  return out;
}

TraceRecord scaled(const TraceRecord& a, double s) {
  TraceRecord out = a;
  for (auto& v : out.values) v *= s;
  for (auto& v : out.imag) v *= s;
  return out;
}

TraceRecord truncated(const TraceRecord& a, std::size_t count) {
  TraceRecord out = a;
  count = std::min(count, a.count());
  out.values.resize(count);
  if (!out.imag.empty()) out.imag.resize(count);
  return out;
}

TraceRecord resampled(const TraceRecord& a, double dt, std::size_t count) {
  a.check();
  if (a.count() < 4) throw ValidationError("resampling needs at least 4 samples");
  const double t_end = a.end_time();
  TraceRecord out = a;
  out.t0 = 0.0;
  out.dt = dt;
  out.values.assign(count, 0.0);
  if (a.is_complex()) out.imag.assign(count, 0.0);
  const auto n = static_cast<std::ptrdiff_t>(a.count());
  for (std::size_t k = 0; k < count; ++k) {
    const double t = dt * static_cast<double>(k);
    if (t > t_end + 1e-9 * a.dt || t < a.t0 - 1e-9 * a.dt)
      throw ValidationError("resampling beyond the trace time range");
    const double s = (t - a.t0) / a.dt;
    const double r = std::round(s);
    if (std::abs(s - r) < 1e-9) {
      auto i = std::clamp<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(r), 0, n - 1);
      out.values[k] = a.values[i];
      if (a.is_complex()) out.imag[k] = a.imag[i];
      continue;
    }
    auto i0 = std::clamp<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(std::floor(s)) - 1, 0, n - 4);
    double w[4];
    for (int j = 0; j < 4; ++j) {
      w[j] = 1.0;
      for (int m = 0; m < 4; ++m)
        if (m != j) w[j] *= (s - static_cast<double>(i0 + m)) / static_cast<double>(j - m);
    }
    for (int j = 0; j < 4; ++j) {
      out.values[k] += w[j] * a.values[i0 + j];
      if (a.is_complex()) out.imag[k] += w[j] * a.imag[i0 + j];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

double norm_l2_time(const TraceRecord& tr) {
  tr.check();
  const std::size_t n = tr.count();
  if (n < 2) return 0.0;
  double s = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    double w = (k == 0 || k + 1 == n) ? 0.5 : 1.0;
    s += w * tr.magnitude_squared(k);
  }
  return std::sqrt(s * tr.dt);
}

namespace {

std::vector<double> derivative(const std::vector<double>& f, double dt) {
  const std::size_t n = f.size();
  std::vector<double> d(n, 0.0);
  if (n < 2) return d;
  if (n == 2) {
    d[0] = d[1] = (f[1] - f[0]) / dt;
    return d;
  }
  d[0] = (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * dt);
  d[n - 1] = (3.0 * f[n - 1] - 4.0 * f[n - 2] + f[n - 3]) / (2.0 * dt);
  for (std::size_t k = 1; k + 1 < n; ++k) d[k] = (f[k + 1] - f[k - 1]) / (2.0 * dt);
  return d;
}

}  // namespace

double norm_h1_time(const TraceRecord& tr) {
  tr.check();
  if (tr.count() < 2) throw ValidationError("H1 norm needs at least 2 samples");
  TraceRecord d = tr;
  d.values = derivative(tr.values, tr.dt);
  if (tr.is_complex()) d.imag = derivative(tr.imag, tr.dt);
  const double a = norm_l2_time(tr), b = norm_l2_time(d);
  return std::sqrt(a * a + b * b);
}

double rms(const TraceRecord& tr) {
  if (tr.count() == 0) return 0.0;
  double s = 0.0;
  for (std::size_t k = 0; k < tr.count(); ++k) s += tr.magnitude_squared(k);
  return std::sqrt(s / static_cast<double>(tr.count()));
}

template <class T>
static double l2_space_impl(const NetworkField<T>& f, const NetworkGrid& grid) {
  if (!f.aligned_with(grid)) throw ValidationError("field is not aligned with grid");
  double s = 0.0;
  for (std::size_t e = 0; e < grid.edge_count(); ++e) {
    auto v = f.edge(e);
    double acc = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      double w = (i == 0 || i + 1 == v.size()) ? 0.5 : 1.0;
      acc += w * std::norm(v[i]);
    }
    s += acc * grid.edge(e).dx;
  }
  return std::sqrt(s);
}

double norm_l2_space(const RealField& f, const NetworkGrid& grid) { return l2_space_impl(f, grid); }
double norm_l2_space(const ComplexField& f, const NetworkGrid& grid) { return l2_space_impl(f, grid); }

double norm_h1_0_space(const RealField& f, const NetworkGrid& grid) {
  RealField d(grid);
  for (std::size_t e = 0; e < grid.edge_count(); ++e) {
    auto v = f.edge(e);
    auto out = d.edge(e);
    std::vector<double> tmp(v.begin(), v.end());
    auto dv = derivative(tmp, grid.edge(e).dx);
    std::copy(dv.begin(), dv.end(), out.begin());
  }
  return norm_l2_space(d, grid);
}

TraceRecord add_noise(const TraceRecord& tr, const NoiseSpec& spec) {
  if (spec.level < 0.0) throw ValidationError("noise level must be non-negative");
  TraceRecord out = tr;
  if (spec.level == 0.0) return out;
  const double sigma = spec.level * rms(tr);
  std::mt19937_64 gen(spec.seed);
  std::normal_distribution<double> dist(0.0, sigma);
  for (auto& v : out.values) v += dist(gen);
  for (auto& v : out.imag) v += dist(gen);
  return out;
}

// ---------------------------------------------------------------------------

double reznitzkaya_required_tau(double t_max) { return std::sqrt(4.0 * t_max * std::log(1.0 / kReznitzkayaTail)); }

TraceRecord reznitzkaya(const TraceRecord& wave, double dt, std::size_t count) {
  wave.check();
  if (wave.is_complex()) throw ValidationError("transform expects a real trace");
  if (std::abs(wave.t0) > 1e-14) throw ValidationError("wave trace must start at tau = 0");
  if (!(dt > 0.0) || count == 0) throw ValidationError("empty heat time grid");
  const double tau_max = wave.end_time();
  const double t_max = dt * static_cast<double>(count);
  if (std::exp(-tau_max * tau_max / (4.0 * t_max)) > kReznitzkayaTail) {
    throw ValidationError("wave trace too short for the transform: tau_max = " + format_double(tau_max) +
                          ", need at least " + format_double(reznitzkaya_required_tau(t_max)));
  }
  TraceRecord out;
  out.node = wave.node;
  out.edge = wave.edge;
  out.kind = TraceKind::derived;
  out.t0 = dt;
  out.dt = dt;
  out.values.resize(count);
  const std::size_t n = wave.count();
  for (std::size_t k = 0; k < count; ++k) {
    const double t = dt * static_cast<double>(k + 1);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double tau = wave.time(j);
      const double w = (j == 0 || j + 1 == n) ? 0.5 : 1.0;
      s += w * tau * std::exp(-tau * tau / (4.0 * t)) * wave.values[j];
    }
    out.values[k] = s * wave.dt / (2.0 * std::sqrt(std::numbers::pi * t * t * t));
  }
  return out;
}

// ---------------------------------------------------------------------------

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_trace_csv(std::ostream& out, const std::vector<std::pair<std::string, const TraceRecord*>>& series) {
  if (series.empty()) throw ValidationError("no series to write");
  const TraceRecord& first = *series.front().second;
  for (const auto& [name, tr] : series) require_same_grid(first, *tr);
  out << "t";
  for (const auto& [name, tr] : series) {
    if (tr->is_complex()) out << ',' << name << ".re," << name << ".im";
    else out << ',' << name;
  }
  out << '\n';
  for (std::size_t k = 0; k < first.count(); ++k) {
    out << format_double(first.time(k));
    for (const auto& [name, tr] : series) {
      out << ',' << format_double(tr->values[k]);
      if (tr->is_complex()) out << ',' << format_double(tr->imag[k]);
    }
    out << '\n';
  }
}

void write_trace_csv(const std::string& path, const std::vector<std::pair<std::string, const TraceRecord*>>& series) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write '" + path + "'");
  write_trace_csv(out, series);
}

CsvTable parse_csv_table(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  CsvTable table;
  if (!std::getline(in, line)) throw ValidationError("empty CSV");
  {
    std::stringstream hs(line);
    std::string cell;
    std::getline(hs, cell, ',');
    if (cell != "t") throw ValidationError("CSV must start with a 't' column");
    while (std::getline(hs, cell, ',')) table.columns.push_back(cell);
  }
  table.data.resize(table.columns.size());
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::stringstream rs(line);
    std::string cell;
    std::vector<double> vals;
    while (std::getline(rs, cell, ',')) {
      try {
        std::size_t used = 0;
        vals.push_back(std::stod(cell, &used));
        if (used != cell.size()) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw ValidationError("CSV row " + std::to_string(row) + ": bad number '" + cell + "'");
      }
    }
    if (vals.size() != table.columns.size() + 1)
      throw ValidationError("CSV row " + std::to_string(row) + ": wrong column count");
    table.time.push_back(vals[0]);
    for (std::size_t c = 0; c < table.columns.size(); ++c) table.data[c].push_back(vals[c + 1]);
  }
  return table;
}

CsvTable read_csv_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_csv_table(ss.str());
}

TraceRecord trace_from_table(const CsvTable& table, const std::string& name) {
  auto it = std::find(table.columns.begin(), table.columns.end(), name);
  if (it == table.columns.end()) throw ValidationError("CSV has no column '" + name + "'");
  if (table.time.size() < 2) throw ValidationError("CSV needs at least two rows");
  TraceRecord tr;
  tr.node = name;
  tr.t0 = table.time.front();
  tr.dt = (table.time.back() - table.time.front()) / static_cast<double>(table.time.size() - 1);
  for (std::size_t k = 0; k < table.time.size(); ++k)
    if (std::abs(table.time[k] - tr.time(k)) > 1e-9 * std::max(1.0, std::abs(table.time[k])))
      throw ValidationError("CSV time column is not uniform");
  tr.values = table.data[static_cast<std::size_t>(it - table.columns.begin())];
  return tr;
}

}  // namespace treewave
