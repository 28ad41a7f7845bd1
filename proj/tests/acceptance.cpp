// Copyright 2026 The GraphPL Authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance report: one PASS/FAIL line per criterion.
//
// Exits 0 once every criterion has been evaluated and reported, whatever the
// verdicts; --strict makes any FAIL a nonzero exit.

#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cstring>
#include <filesystem>
#include <iostream>
#include <vector>

#include "support/suites.hpp"

namespace gt = graphpl::testing;
using graphpl::ExperimentConfig;
using graphpl::ExperimentResult;
using graphpl::FusionMethod;

namespace {

int g_failures = 0;

void report(bool pass, const std::string& name, const std::string& detail) {
  if (!pass) ++g_failures;
  std::cout << (pass ? "[PASS] " : "[FAIL] ") << name << ": " << detail << std::endl;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string join(const std::vector<double>& v, int precision = 3) {
  std::string s;
  for (double x : v) s += (s.empty() ? "" : " ") + fmt::format("{:.{}f}", x, precision);
  return s;
}

ExperimentConfig default_experiment(std::uint64_t seed, FusionMethod method) {
  ExperimentConfig cfg;
  cfg.seed = seed;
  cfg.model.method = method;
  cfg.finalize();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  const bool strict = argc > 1 && std::strcmp(argv[1], "--strict") == 0;
  const auto scratch = std::filesystem::temp_directory_path() / ("graphpl_acceptance_" + std::to_string(::getpid()));
  std::filesystem::create_directories(scratch);

  {
    auto s = gt::gradient_suite();
    double worst = 0.0;
    for (const auto& c : s.checks) worst = std::max(worst, c.value);
    const bool pass = s.passed() && s.seconds < 60.0;
    report(pass, "Gradient suite",
           fmt::format("{} ops/losses x {} instances, max rel err {:.2e} (< 1e-4), {:.1f} s (< 60 s){}", s.checks.size(),
                       gt::kGradInstances, worst, s.seconds, s.passed() ? "" : "; failing: " + s.failures()));
  }
  {
    auto s = gt::algebraic_suite();
    const bool pass = s.passed() && s.seconds < 10.0;
    report(pass, "Algebraic suite",
           fmt::format("{} identities, {:.2f} s (< 10 s){}", s.checks.size(), s.seconds,
                       s.passed() ? "" : "; failing: " + s.failures()));
  }
  {
    auto s = gt::determinism_suite(scratch, 3);
    const bool pass = s.passed() && s.seconds < 120.0;
    report(pass, "Federation determinism",
           fmt::format("two runs with workers=1 and one with workers=3 agree on checksum and metrics CSV, {:.1f} s (< 120 s){}",
                       s.seconds, s.passed() ? "" : "; failing: " + s.failures()));
  }

  // Five seeds of the default experiment per method feed both end-to-end criteria.
  const std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::vector<ExperimentResult> graph, poe;
  for (auto seed : seeds) {
    graph.push_back(graphpl::run_experiment(default_experiment(seed, FusionMethod::kGraph), false));
    poe.push_back(graphpl::run_experiment(default_experiment(seed, FusionMethod::kPoe), false));
  }

  {
    std::vector<double> gq, rq, rq0;
    double slowest = 0.0;
    for (const auto& r : graph) {
      gq.push_back(r.gq);
      rq.push_back(r.rq.mean);
      rq0.push_back(r.rq_untrained.mean);
      slowest = std::max(slowest, r.seconds);
    }
    const double mgq = median(gq), mrq = median(rq), mrq0 = median(rq0);
    const bool pass = mgq >= 0.60 && mrq > mrq0 && slowest < 300.0;
    report(pass, "End-to-end learning",
           fmt::format("median GQ {:.3f} (>= 0.60) [{}]; median RQ trained {:.4f} vs untrained {:.4f} (strictly above) "
                       "[trained {} | untrained {}]; slowest seed {:.1f} s (< 300 s)",
                       mgq, join(gq), mrq, mrq0, join(rq, 4), join(rq0, 4), slowest));
  }
  {
    bool pass = true;
    std::string detail;
    double total = 0.0;
    for (const auto& r : graph) total += r.seconds;
    for (const auto& r : poe) total += r.seconds;
    for (double s : {0.6, 0.8, 1.0}) {
      std::vector<double> g, p;
      for (const auto& r : graph) g.push_back(r.sweep.min_at(s));
      for (const auto& r : poe) p.push_back(r.sweep.min_at(s));
      const double mg = median(g), mp = median(p);
      pass = pass && mg >= mp;
      detail += fmt::format("s={:.1f} min-GQ GraphPL {:.3f} vs POE {:.3f}; ", s, mg, mp);
    }
    std::vector<double> cg, cp;
    for (const auto& r : graph) cg.push_back(r.collapse.score);
    for (const auto& r : poe) cp.push_back(r.collapse.score);
    const double mcg = median(cg), mcp = median(cp);
    pass = pass && mcg <= mcp && total < 900.0;
    detail += fmt::format("collapse score GraphPL {:.2f} vs POE {:.2f} [GraphPL {} | POE {}]; total {:.1f} s (< 900 s)", mcg,
                          mcp, join(cg, 2), join(cp, 2), total);
    report(pass, "Noise-robustness ordering", detail);
  }
  {
    auto s = gt::checkpoint_suite(scratch);
    report(s.passed(), "Checkpoint round-trip",
           fmt::format("{:.0f} tensors bit-exact after save/load, GQ {:.4f} identical{}", s.checks[0].value, s.checks[1].value,
                       s.passed() ? "" : "; failing: " + s.failures()));
  }

  std::filesystem::remove_all(scratch);
  std::cout << (g_failures == 0 ? "all criteria passed" : fmt::format("{} criteria failed", g_failures)) << std::endl;
  return strict && g_failures > 0 ? 1 : 0;
}
