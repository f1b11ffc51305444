// Compares the OpenMP kernels against the serial reference implementations:
// throughput side by side plus a max-abs-difference column (expected 0; the
// parallel kernels partition outer loops without changing any arithmetic).

#include <chrono>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "modcomp/kernels.hpp"
#include "modcomp/rng.hpp"

namespace {

using Clock = std::chrono::steady_clock;
using modcomp::Rng;

std::vector<float> random_vec(std::size_t n, Rng& rng) {
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.next_normal());
  return v;
}

template <class F>
double time_ms(F&& fn, int reps) {
  fn();  // warm up
  const auto start = Clock::now();
  for (int r = 0; r < reps; ++r) fn();
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count() / reps;
}

float max_abs_diff(const std::vector<float>& a, const std::vector<float>& b) {
  float m = 0.0f;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

void print_row(const std::string& kernel, const std::string& size, double serial_ms,
               double parallel_ms, float diff) {
  std::printf("%-12s %-16s %10.3f %10.3f %8.2fx %12g\n", kernel.c_str(), size.c_str(), serial_ms,
              parallel_ms, serial_ms / parallel_ms, static_cast<double>(diff));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bench_kernels: serial reference vs OpenMP kernels"};
  int reps = 5;
  int scale = 1;
  app.add_option("--reps", reps, "timed repetitions per kernel");
  app.add_option("--scale", scale, "problem size multiplier");
  CLI11_PARSE(app, argc, argv);

  Rng rng(42);
  std::printf("%-12s %-16s %10s %10s %9s %12s\n", "kernel", "size", "serial_ms", "omp_ms",
              "speedup", "max_diff");

  {
    const int m = 256 * scale, k = 256, n = 256;
    auto a = random_vec(static_cast<std::size_t>(m) * k, rng);
    auto b = random_vec(static_cast<std::size_t>(k) * n, rng);
    std::vector<float> c1(static_cast<std::size_t>(m) * n), c2(c1.size());
    const double ts = time_ms([&] { modcomp::kern::serial::matmul(a.data(), b.data(), c1.data(), m, k, n); }, reps);
    const double tp = time_ms([&] { modcomp::kern::matmul(a.data(), b.data(), c2.data(), m, k, n); }, reps);
    print_row("matmul", std::to_string(m) + "x" + std::to_string(k) + "x" + std::to_string(n), ts,
              tp, max_abs_diff(c1, c2));
  }
  {
    const int rows = 4096 * scale, cols = 256;
    auto x = random_vec(static_cast<std::size_t>(rows) * cols, rng);
    std::vector<float> y1(x.size()), y2(x.size());
    const double ts = time_ms([&] { modcomp::kern::serial::softmax_rows(x.data(), y1.data(), rows, cols); }, reps);
    const double tp = time_ms([&] { modcomp::kern::softmax_rows(x.data(), y2.data(), rows, cols); }, reps);
    print_row("softmax", std::to_string(rows) + "x" + std::to_string(cols), ts, tp,
              max_abs_diff(y1, y2));
  }
  {
    const int rows = 4096 * scale, cols = 256;
    auto x = random_vec(static_cast<std::size_t>(rows) * cols, rng);
    auto g = random_vec(cols, rng);
    auto b = random_vec(cols, rng);
    std::vector<float> y1(x.size()), y2(x.size()), mu(rows), rs(rows);
    const double ts = time_ms(
        [&] {
          modcomp::kern::serial::layernorm_rows(x.data(), g.data(), b.data(), y1.data(), mu.data(),
                                                rs.data(), rows, cols, 1e-5f);
        },
        reps);
    const double tp = time_ms(
        [&] {
          modcomp::kern::layernorm_rows(x.data(), g.data(), b.data(), y2.data(), mu.data(),
                                        rs.data(), rows, cols, 1e-5f);
        },
        reps);
    print_row("layernorm", std::to_string(rows) + "x" + std::to_string(cols), ts, tp,
              max_abs_diff(y1, y2));
  }
  {
    const std::size_t n = static_cast<std::size_t>(1 << 20) * scale;
    auto x = random_vec(n, rng);
    std::vector<float> y1(n), y2(n);
    const double ts = time_ms([&] { modcomp::kern::serial::gelu(x.data(), y1.data(), static_cast<std::int64_t>(n)); }, reps);
    const double tp = time_ms([&] { modcomp::kern::gelu(x.data(), y2.data(), static_cast<std::int64_t>(n)); }, reps);
    print_row("gelu", std::to_string(n), ts, tp, max_abs_diff(y1, y2));
  }
  {
    const int T = 256 * scale, d = 64, heads = 4;
    auto q = random_vec(static_cast<std::size_t>(T) * d, rng);
    auto k = random_vec(static_cast<std::size_t>(T) * d, rng);
    auto v = random_vec(static_cast<std::size_t>(T) * d, rng);
    std::vector<float> w1(static_cast<std::size_t>(heads) * T * T), w2(w1.size());
    std::vector<float> o1(static_cast<std::size_t>(T) * d), o2(o1.size());
    const double ts = time_ms(
        [&] { modcomp::kern::serial::attention(q.data(), k.data(), v.data(), w1.data(), o1.data(), T, d, heads); },
        reps);
    const double tp = time_ms(
        [&] { modcomp::kern::attention(q.data(), k.data(), v.data(), w2.data(), o2.data(), T, d, heads); },
        reps);
    print_row("attention", "T=" + std::to_string(T) + ",d=" + std::to_string(d), ts, tp,
              max_abs_diff(o1, o2));
  }
  return 0;
}
