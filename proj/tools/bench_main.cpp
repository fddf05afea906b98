#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>

#include "osc/bench.hpp"
#include "osc/fastconv.hpp"
#include "osc/hankel.hpp"
#include "osc/learner.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitVerifyFailed = 4;

int cmd_run(const std::string& config_path, const std::string& out_dir, int parallel) {
  osc::ExperimentConfig cfg = osc::config_from_json_file(config_path);
  if (!out_dir.empty()) cfg.out_dir = out_dir;
  const osc::RegretReport report = osc::run_experiment(cfg, parallel, /*write_files=*/true);
  std::cout << "config_hash " << report.hash << "\n";
  for (const osc::SeedComparator& c : report.comparators) {
    std::cout << "comparator seed=" << c.seed << " note=" << c.note
              << " total_cost=" << osc::format_double(c.total_cost) << "\n";
  }
  for (const osc::RunRecord& r : report.runs) {
    std::cout << r.controller << " seed=" << r.seed
              << " total_cost=" << osc::format_double(r.trace.total_cost())
              << " final_quarter_mean=" << osc::format_double(r.final_quarter_mean)
              << " regret_T=" << osc::format_double(r.regret_T) << "\n";
  }
  for (const std::string& f : report.files) std::cout << "wrote " << f << "\n";
  return 0;
}

int cmd_schedule(long long T, double gamma, int d, double kappa, double kappa_b, double w,
                 double g) {
  const osc::Schedule s = osc::theoretical_schedule(T, gamma, kappa, kappa_b, w, g, d);
  std::cout << osc::schedule_to_json(s) << "\n";
  return 0;
}

int cmd_filters(int m, double gamma, int h, const std::string& out, long long verify_T) {
  const osc::FilterBank bank = osc::eigendecompose_top(osc::build_hankel(m, gamma), h);
  for (int i = 0; i < bank.h; ++i)
    std::cout << "sigma_" << (i + 1) << " = " << osc::format_double(bank.sigmas(i)) << "\n";
  if (!out.empty()) {
    std::ofstream f(out, std::ios::binary);
    if (!f) {
      std::cerr << "cannot write " << out << "\n";
      return kExitConfig;
    }
    f << osc::filter_bank_to_json(bank) << "\n";
    std::cout << "wrote " << out << "\n";
  }
  if (verify_T > 0) {
    const osc::TailBoundReport rep = osc::verify_tail_bound(bank, verify_T);
    for (const osc::TailBoundEntry& e : rep.entries) {
      std::cout << "j=" << e.j << " sigma=" << osc::format_double(e.sigma)
                << " bound=" << osc::format_double(e.bound)
                << " ratio=" << osc::format_double(e.ratio)
                << (e.pass ? " PASS" : " FAIL")
                << (e.pass_strong ? " (strong exponent holds)" : "") << "\n";
    }
    if (!rep.all_pass) return kExitVerifyFailed;
  }
  return 0;
}

int cmd_convbench(int T, int m, int h, const std::string& mode) {
  const osc::FilterBank bank = osc::eigendecompose_top(osc::build_hankel(m, 0.1), h);
  const osc::ConvMode cm = mode == "direct" ? osc::ConvMode::Direct : osc::ConvMode::Fast;
  osc::StreamConvolver conv(bank, /*d=*/2, cm);
  osc::DetRng rng(123);
  std::vector<std::int64_t> ns(T);
  osc::Vec acc = osc::Vec::Zero(2);
  for (int t = 0; t < T; ++t) {
    const osc::Vec w = rng.normal_vec(2);
    const auto t0 = std::chrono::steady_clock::now();
    conv.push(w);
    for (int j = 0; j < h; ++j) acc += conv.query(j);
    const auto t1 = std::chrono::steady_clock::now();
    ns[t] = std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count();
  }
  std::vector<std::int64_t> sorted = ns;
  std::sort(sorted.begin(), sorted.end());
  auto pct = [&sorted](double p) {
    return sorted[static_cast<std::size_t>(p * (sorted.size() - 1))];
  };
  double mean = 0.0;
  for (auto v : ns) mean += static_cast<double>(v);
  mean /= ns.size();
  std::cout << "{\"mode\":\"" << (cm == osc::ConvMode::Fast ? "fast" : "direct")
            << "\",\"T\":" << T << ",\"m\":" << m << ",\"h\":" << h
            << ",\"p50_ns\":" << pct(0.50) << ",\"p90_ns\":" << pct(0.90)
            << ",\"p99_ns\":" << pct(0.99) << ",\"mean_ns\":" << osc::format_double(mean)
            << ",\"ops_per_step\":" << osc::format_double(
                   static_cast<double>(conv.ops()) / T)
            << ",\"checksum\":" << osc::format_double(acc.sum()) << "}\n";
  return 0;
}

int cmd_gamma_demo(double T, double k) {
  const osc::GammaDemoReport rep = osc::gamma_advantage_demo(T, k);
  std::cout << "{\"T\":" << osc::format_double(rep.T) << ",\"k\":" << osc::format_double(rep.k_exp)
            << ",\"gamma_poly\":" << osc::format_double(rep.gamma_poly)
            << ",\"gamma_pow\":" << osc::format_double(rep.gamma_pow)
            << ",\"cost_poly\":" << osc::format_double(rep.cost_poly)
            << ",\"cost_pow\":" << osc::format_double(rep.cost_pow)
            << ",\"sandwich_ok\":" << (rep.sandwich_ok ? "true" : "false")
            << ",\"gap\":" << osc::format_double(rep.gap)
            << ",\"gap_bound\":" << osc::format_double(rep.gap_bound)
            << ",\"slack\":" << osc::format_double(rep.slack) << "}\n";
  std::cout << "T,cost_poly,cost_pow\n";
  for (const auto& row : rep.curve)
    std::cout << osc::format_double(row[0]) << "," << osc::format_double(row[1]) << ","
              << osc::format_double(row[2]) << "\n";
  return rep.sandwich_ok ? 0 : kExitVerifyFailed;
}

int cmd_verify() {
  const std::vector<osc::VerifyResult> results = osc::run_verification_suite();
  bool all = true;
  for (const osc::VerifyResult& r : results) {
    std::cout << (r.pass ? "PASS " : "FAIL ") << r.name << "  " << r.detail << "\n";
    all = all && r.pass;
  }
  std::cout << (all ? "verify: all checks passed" : "verify: FAILURES present") << "\n";
  return all ? 0 : kExitVerifyFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Online spectral control benchmark harness"};
  app.set_help_flag("--help", "Print help");  // frees -h / --h for filter counts
  app.require_subcommand(1);

  std::string config_path, out_dir;
  int parallel = 1;
  auto* run = app.add_subcommand("run", "Run a config-driven experiment");
  run->add_option("--config", config_path, "Experiment config JSON")->required();
  run->add_option("--out", out_dir, "Output directory override");
  run->add_option("--parallel", parallel, "Worker threads for episodes");

  long long sched_T = 0;
  double sched_gamma = 0.1, sched_kappa = 1.0, sched_kappa_b = 1.0, sched_w = 1.0,
         sched_g = 1.0;
  int sched_d = 1;
  auto* sched = app.add_subcommand("schedule", "Print the parameter schedule");
  sched->add_option("--T", sched_T, "Horizon")->required();
  sched->add_option("--gamma", sched_gamma, "Stability margin")->required();
  sched->add_option("--d", sched_d, "State dimension")->required();
  sched->add_option("--kappa", sched_kappa, "kappa");
  sched->add_option("--kappaB", sched_kappa_b, "kappa_B");
  sched->add_option("--W", sched_w, "Disturbance bound");
  sched->add_option("--G", sched_g, "Cost gradient scale");

  int f_m = 0, f_h = 0;
  double f_gamma = 0.1;
  long long f_verify = 0;
  std::string f_out;
  auto* filters = app.add_subcommand("filters", "Build spectral filters");
  filters->add_option("--m", f_m, "Memory / matrix dimension")->required();
  filters->add_option("--gamma", f_gamma, "Stability margin")->required();
  filters->add_option("--h", f_h, "Number of filters")->required();
  filters->add_option("--out", f_out, "Write the bank as JSON");
  filters->add_option("--verify", f_verify, "Run the tail-bound check at this horizon");

  int c_T = 4096, c_m = 256, c_h = 8;
  std::string c_mode = "fast";
  auto* convbench = app.add_subcommand("convbench", "Benchmark the streaming convolver");
  convbench->add_option("--T", c_T, "Stream length");
  convbench->add_option("--m", c_m, "Kernel memory");
  convbench->add_option("--h", c_h, "Filter count");
  convbench->add_option("--mode", c_mode, "direct|fast")
      ->check(CLI::IsMember({"direct", "fast"}));

  double g_T = 1e6, g_k = 1.0 / 24.0;
  auto* gdemo = app.add_subcommand("gamma-demo", "Closed-form stability margin comparison");
  gdemo->add_option("--T", g_T, "Horizon")->required();
  gdemo->add_option("--k", g_k, "Exponent in gamma = 1/T^k")->required();

  auto* verify = app.add_subcommand("verify", "Run the lemma-backed invariant suite");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(config_path, out_dir, parallel);
    if (sched->parsed())
      return cmd_schedule(sched_T, sched_gamma, sched_d, sched_kappa, sched_kappa_b, sched_w,
                          sched_g);
    if (filters->parsed()) return cmd_filters(f_m, f_gamma, f_h, f_out, f_verify);
    if (convbench->parsed()) return cmd_convbench(c_T, c_m, c_h, c_mode);
    if (gdemo->parsed()) return cmd_gamma_demo(g_T, g_k);
    if (verify->parsed()) return cmd_verify();
  } catch (const osc::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid argument: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumerical;
  }
  return 0;
}
