#pragma once

#include <algorithm>
#include <chrono>
#include <sstream>
#include <string>
#include <vector>

#include "rt/kernels.hpp"
#include "rt/scan.hpp"

// Latency / parallel-depth benchmark of the three sequence-mixing kernels in
// isolation: a sequential linear recurrence, the parallel prefix scan over
// the same operators, and single-head-style causal attention. Dimension 16,
// batch 1, matching the paper-scale comparison. Wall-clock numbers are
// reported but never asserted; the asserted quantities are structural
// (scan level count, sequential step count, quadratic attention flops).

namespace rt {

struct BenchRow {
  std::string kernel;  // sequential_rnn | parallel_scan | attention
  std::size_t t = 0;
  double median_ms = 0.0;  // 0 when not timed
  double iqr_ms = 0.0;
  bool timed = false;
  std::size_t levels = 0;  // parallel level count (scan rows)
  std::size_t steps = 0;   // sequential step count (rnn rows)
  double flops = 0.0;      // analytic estimate, always filled
};

struct BenchReport {
  std::size_t trials = 0;
  std::size_t dim = 0;
  std::vector<BenchRow> rows;
};

namespace detail {

constexpr std::size_t kBenchDim = 16;
// Rows whose analytic flop estimate exceeds this are recorded (flops, depth,
// steps) but not wall-clock timed, keeping the benchmark a few minutes on one
// core. Every structural assertion still runs at every grid point.
constexpr double kTimedFlopCap = 5e8;

inline double flops_sequential(std::size_t t, std::size_t d) {
  return static_cast<double>(t) * 2.0 * static_cast<double>(d * d);
}

inline double flops_scan(std::size_t t, std::size_t d) {
  if (t < kSequentialCutoff) return flops_sequential(t, d);
  return static_cast<double>(scan_depth(t)) * static_cast<double>(t) * 2.0 *
         static_cast<double>(d * d * d);
}

inline double flops_attention(std::size_t t, std::size_t d) {
  const double td = static_cast<double>(t), dd = static_cast<double>(d);
  return 4.0 * td * td * dd + 8.0 * td * dd * dd;
}

/// Median and interquartile range of a sample, in place.
inline std::pair<double, double> median_iqr(std::vector<double>& xs) {
  std::sort(xs.begin(), xs.end());
  const std::size_t n = xs.size();
  const double med = n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
  return {med, xs[(3 * n) / 4] - xs[n / 4]};
}

template <typename Fn>
inline std::pair<double, double> time_ms(Fn&& fn, std::size_t trials) {
  for (int warm = 0; warm < 3; ++warm) fn();
  std::vector<double> samples;
  samples.reserve(trials);
  for (std::size_t i = 0; i < trials; ++i) {
    const auto start = std::chrono::steady_clock::now();
    fn();
    const auto stop = std::chrono::steady_clock::now();
    samples.push_back(
        std::chrono::duration<double, std::milli>(stop - start).count());
  }
  return median_iqr(samples);
}

}  // namespace detail

/// Default grid: powers of two from 128 to 32,768.
inline std::vector<std::size_t> default_bench_grid(std::size_t tmin = 128,
                                                   std::size_t tmax = 32768) {
  if (tmin < 1 || tmax < tmin) throw InputError("bench grid: bad bounds");
  std::vector<std::size_t> grid;
  for (std::size_t t = tmin; t <= tmax; t <<= 1) grid.push_back(t);
  return grid;
}

inline BenchReport bench_latency(const std::vector<std::size_t>& t_grid,
                                 std::size_t trials) {
  if (trials < 20) throw InputError("bench_latency: trials must be >= 20");
  constexpr std::size_t d = detail::kBenchDim;
  BenchReport report;
  report.trials = trials;
  report.dim = d;
  Rng rng(12345);
  // One contractive operator per symbol; the operator stream cycles over two
  // symbols like the task alphabets do.
  std::vector<Matrix> sym(2, Matrix(d, d));
  for (Matrix& m : sym) {
    for (double& v : m.data()) v = gaussian(rng);
    m *= 0.95 / spectral_norm(m);
  }
  Vector alpha = Vector::basis(d, 0);

  for (std::size_t t : t_grid) {
    OperatorSequence seq;
    seq.ops.reserve(t);
    for (std::size_t i = 0; i < t; ++i) seq.ops.push_back(sym[i & 1]);

    {  // sequential recurrence
      BenchRow row{"sequential_rnn", t};
      row.steps = t;
      row.flops = detail::flops_sequential(t, d);
      std::size_t steps_run = 0;
      auto run = [&] {
        Vector h = alpha;
        steps_run = 0;
        for (std::size_t i = 0; i < t; ++i) {
          h = matvec(seq.ops[i], h);
          ++steps_run;
        }
      };
      run();
      if (steps_run != t) throw NumericError("bench: sequential step count");
      if (row.flops <= detail::kTimedFlopCap) {
        auto [med, iqr] = detail::time_ms(run, trials);
        row.median_ms = med;
        row.iqr_ms = iqr;
        row.timed = true;
      }
      report.rows.push_back(row);
    }

    {  // parallel scan; the level count is asserted at every grid point
      BenchRow row{"parallel_scan", t};
      row.flops = detail::flops_scan(t, d);
      ScanStats stats;
      scan_forward(seq, alpha, &stats);
      if (stats.levels != scan_depth(t)) {
        std::ostringstream msg;
        msg << "bench: scan levels " << stats.levels << " != ceil(log2 "
            << t << ") = " << scan_depth(t);
        throw NumericError(msg.str());
      }
      row.levels = stats.levels;
      if (row.flops <= detail::kTimedFlopCap) {
        auto [med, iqr] =
            detail::time_ms([&] { scan_forward(seq, alpha); }, trials);
        row.median_ms = med;
        row.iqr_ms = iqr;
        row.timed = true;
      }
      report.rows.push_back(row);
    }

    {  // causal attention over a T x d stream
      BenchRow row{"attention", t};
      row.flops = detail::flops_attention(t, d);
      if (row.flops <= detail::kTimedFlopCap) {
        Matrix x(t, d), wq(d, d), wk(d, d), wv(d, d);
        Rng local(99 + t);
        for (double& v : x.data()) v = gaussian(local, 0.0, 0.1);
        for (double& v : wq.data()) v = gaussian(local, 0.0, 0.1);
        for (double& v : wk.data()) v = gaussian(local, 0.0, 0.1);
        for (double& v : wv.data()) v = gaussian(local, 0.0, 0.1);
        const double scale = 1.0 / std::sqrt(static_cast<double>(d));
        auto run = [&] {
          Matrix q = matmul(x, wq), k = matmul(x, wk), v = matmul(x, wv);
          Matrix scores = matmul(q, transpose(k));
          scores *= scale;
          Matrix att = softmax_rows(scores, /*causal=*/true);
          Matrix out = matmul(att, v);
          (void)out;
        };
        auto [med, iqr] = detail::time_ms(run, trials);
        row.median_ms = med;
        row.iqr_ms = iqr;
        row.timed = true;
      }
      report.rows.push_back(row);
    }
  }
  return report;
}

/// Flat table: kernel, T, timed, median_ms, iqr_ms, levels, steps, flops.
inline std::string bench_table(const BenchReport& report) {
  std::ostringstream os;
  os << "kernel\tT\ttimed\tmedian_ms\tiqr_ms\tlevels\tsteps\tflops\n";
  for (const BenchRow& r : report.rows)
    os << r.kernel << "\t" << r.t << "\t" << (r.timed ? 1 : 0) << "\t"
       << r.median_ms << "\t" << r.iqr_ms << "\t" << r.levels << "\t"
       << r.steps << "\t" << r.flops << "\n";
  return os.str();
}

}  // namespace rt
