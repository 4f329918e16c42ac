#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "treewave/grid.hpp"

namespace treewave {

enum class TraceKind { dirichlet, neumann_outward, residual, derived };

const char* to_string(TraceKind k);

/// Time series on the uniform grid t_k = t0 + k * dt. Real traces leave
/// `imag` empty; complex traces keep it the same length as `values`.
struct TraceRecord {
  std::string node;
  std::string edge;
  TraceKind kind = TraceKind::derived;
  double t0 = 0.0;
  double dt = 1.0;
  std::vector<double> values;
  std::vector<double> imag;

  std::size_t count() const noexcept { return values.size(); }
  bool is_complex() const noexcept { return !imag.empty(); }
  double time(std::size_t k) const { return t0 + dt * static_cast<double>(k); }
  double end_time() const { return values.empty() ? t0 : time(values.size() - 1); }
  double magnitude_squared(std::size_t k) const {
    return values[k] * values[k] + (imag.empty() ? 0.0 : imag[k] * imag[k]);
  }
  /// Throws ValidationError unless dt > 0 and imag is empty or matches.
  void check() const;
};

/// Pointwise a - b on a shared grid (checked).
TraceRecord subtract(const TraceRecord& a, const TraceRecord& b);
TraceRecord scaled(const TraceRecord& a, double s);
/// First `count` samples.
TraceRecord truncated(const TraceRecord& a, std::size_t count);
/// Cubic (4-point Lagrange) resampling onto t_k = k * dt, k < count. Sample
/// times that coincide with input samples are reproduced exactly.
TraceRecord resampled(const TraceRecord& a, double dt, std::size_t count);

// ---------------------------------------------------------------------------
// Norms

/// Trapezoid rule on (t0, t_end).
double norm_l2_time(const TraceRecord& tr);
/// sqrt(||f||^2 + ||f'||^2), f' by centered differences, second-order
/// one-sided at the ends.
double norm_h1_time(const TraceRecord& tr);
double rms(const TraceRecord& tr);

/// Edge-wise trapezoid, summed over edges.
double norm_l2_space(const RealField& f, const NetworkGrid& grid);
double norm_l2_space(const ComplexField& f, const NetworkGrid& grid);
/// ||f'||_{L2(Lambda)} with second-order differences (the H^1_0 norm).
double norm_h1_0_space(const RealField& f, const NetworkGrid& grid);

// ---------------------------------------------------------------------------
// Noise

struct NoiseSpec {
  double level = 0.0;        // std as a fraction of the trace RMS
  std::uint64_t seed = 0;
};

/// Additive zero-mean Gaussian noise with std = level * rms(tr).
TraceRecord add_noise(const TraceRecord& tr, const NoiseSpec& spec);

// ---------------------------------------------------------------------------
// Wave-to-heat transform

/// Tail bound required of the truncated transform integral.
inline constexpr double kReznitzkayaTail = 1e-12;

/// u_H(t) = (4 pi t^3)^{-1/2} * int_0^taumax tau exp(-tau^2 / 4t) w(tau) dtau,
/// trapezoid on the trace grid, for t = t_k = (k + 1) * dt, k < count.
/// Throws ValidationError when exp(-taumax^2 / 4 t_max) exceeds the tail
/// bound; the message names the required taumax.
TraceRecord reznitzkaya(const TraceRecord& wave, double dt, std::size_t count);
double reznitzkaya_required_tau(double t_max);

// ---------------------------------------------------------------------------
// CSV

/// Header `t,<name>...`, one row per time sample, %.17g formatting. All
/// series must share a grid; complex series emit `<name>.re,<name>.im`.
void write_trace_csv(std::ostream& out, const std::vector<std::pair<std::string, const TraceRecord*>>& series);
void write_trace_csv(const std::string& path, const std::vector<std::pair<std::string, const TraceRecord*>>& series);

struct CsvTable {
  std::vector<std::string> columns;        // excluding the leading `t`
  std::vector<double> time;
  std::vector<std::vector<double>> data;   // data[c][k]
};

CsvTable read_csv_table(const std::string& path);
CsvTable parse_csv_table(const std::string& text);
/// Column `name` as a real trace; time grid must be uniform.
TraceRecord trace_from_table(const CsvTable& table, const std::string& name);

std::string format_double(double v);

}  // namespace treewave
