#pragma once

#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "dsq/types.hpp"

namespace dsq {

struct TraceRecord {
  long t = 0;
  double loss = 0;        // f(x_bar_t)
  double grad_norm2 = 0;  // ||grad f(x_bar_t)||^2
  double consensus2 = 0;  // sum_i ||x_i - x_bar||^2 = ||X_t(I - A_n)||_F^2
  double delta_mass = 0;  // sum_i ||delta_i||^2
  std::uint64_t bits_cum = 0;
};

enum class RunStatus { Ok, Diverged };

inline const char* status_name(RunStatus s) {
  return s == RunStatus::Ok ? "ok" : "diverged";
}

struct Trace {
  std::vector<TraceRecord> records;
  RunStatus status = RunStatus::Ok;
  long diverged_at = -1;           // iteration index when status == Diverged
  long steps = 0;                  // completed steps
  std::uint64_t bits_per_round = 0;
};

inline std::string trace_csv(const Trace& trace) {
  std::string out = "t,loss,grad_norm2,consensus2,delta_mass,bits_cum\n";
  char buf[256];
  for (const auto& r : trace.records) {
    std::snprintf(buf, sizeof(buf), "%ld,%.17g,%.17g,%.17g,%.17g,%llu\n", r.t,
                  r.loss, r.grad_norm2, r.consensus2, r.delta_mass,
                  static_cast<unsigned long long>(r.bits_cum));
    out += buf;
  }
  return out;
}

// Per-step recordings consumed by the matrix oracle's closed-form check and
// the theory monitors.  Index t holds the pre-step state X_t together with
// the gradients G_t and compression errors Delta_t generated by step t;
// `models` additionally holds the final state, so models.size() == steps + 1.
struct RunArtifacts {
  std::vector<MatrixX<double>> models;     // X_t, d x n
  std::vector<MatrixX<double>> gradients;  // G_t, d x n
  std::vector<MatrixX<double>> errors;     // Delta_t, d x n
  std::vector<double> grad_fro2;           // ||G_t||_F^2
  std::vector<double> err_weff_fro2;       // ||Delta_t (W_eff - I)||_F^2
  std::vector<double> consensus2;          // ||X_t (I - A_n)||_F^2
  std::vector<double> mean_grad_norm2;     // ||grad f(x_bar_t)||^2
  std::vector<double> zeta2_at_mean;       // (1/n) sum_i ||grad f_i(x_bar_t) - grad f(x_bar_t)||^2
  double max_compress_ratio2 = 0;          // pathwise max ||C[v]-v||^2/||v||^2

  MatrixX<double> W, W_eff;
  double lambda2_W = 0, lambdaN_W = 0;
  double lambda2_eff = 0, lambdaN_eff = 0;
  double gamma = 0, eta = 0;
  long n = 0, d = 0, steps = 0;

  bool deterministic_compressor = true;
  bool full_batch = true;
  bool noise_free = true;
  bool constant_gamma = true;
};

}  // namespace dsq
