#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "osc/common.hpp"
#include "osc/controllers.hpp"
#include "osc/lds.hpp"

namespace osc {

// ---------------------------------------------------------------------------
// Declarative experiment configuration. JSON round-trips exactly; unknown
// keys are rejected; config_hash is derived from the canonical serialization.
// ---------------------------------------------------------------------------

struct X0Spec {
  enum class Kind { Zeros, Gaussian, Values };
  Kind kind = Kind::Zeros;
  double scale = 1.0;
  Vec values;
};

struct SystemSpec {
  enum class Kind { Generate, Inline };
  Kind kind = Kind::Generate;
  // generate
  int d = 1, n = 1;
  double rho_max = 0.9;
  std::uint64_t seed = 0;
  double kappa = 1.0, kappa_b = 1.0;
  // inline
  Mat a, b;
  double w = 1.0;
  double gamma = 0.1;
  bool check_zero_policy = true;
};

struct CostSpec {
  enum class Kind { Quadratic, HingeState };
  Kind kind = Kind::Quadratic;
  Mat q, r;  // empty => identity
};

struct SignalSpec {
  DisturbanceSignal::Kind kind = DisturbanceSignal::Kind::Gaussian;
  double w_clip = 1.0;
  double scale = 1.0;
  Vec constant_value;
  int stu_hidden = 8;
};

struct ControllerSpec {
  enum class Type { Osc, Gpc, FixedK, Zero };
  Type type = Type::Zero;
  std::optional<int> m, h;
  std::optional<double> eta;
  std::optional<double> radius;
  std::string stabilizer = "none";  // "none" | "auto"
  std::string conv = "auto";        // "auto" | "direct" | "fast"
  Mat k;                            // fixed_k
  std::string name;                 // defaults to the type tag
};

struct OracleSpec {
  enum class Kind { Auto, Grid, BestOfRun };
  Kind kind = Kind::Auto;
  double lo = -2.0, hi = 2.0;
  int points = 0;  // 0 => per-dimension default
};

struct ExperimentConfig {
  int T = 100;
  std::vector<std::uint64_t> seeds{0};
  X0Spec x0;
  SystemSpec system;
  SignalSpec signal;
  CostSpec cost;
  std::vector<ControllerSpec> controllers;
  OracleSpec oracle;
  std::string out_dir = "out";
  bool record_timing = false;
};

ExperimentConfig config_from_json_text(const std::string& text);
ExperimentConfig config_from_json_file(const std::string& path);
std::string config_to_canonical_json(const ExperimentConfig& cfg);
std::string config_hash(const ExperimentConfig& cfg);

LdsSystem build_system(const SystemSpec& spec, double w_floor);
CostFunction build_cost(const CostSpec& spec, const LdsSystem& sys);
DisturbanceSignal build_signal(const SignalSpec& spec, std::uint64_t run_seed);
Vec build_x0(const X0Spec& spec, int d, std::uint64_t run_seed);

// ---------------------------------------------------------------------------
// Best linear policy in hindsight: exhaustive per-axis grid over the entries
// of K (d*n <= 4) with the class-S stability filter (real nonnegative
// closed-loop spectrum, radius <= 1-gamma), refined until converged.
// ---------------------------------------------------------------------------

struct HindsightResult {
  Mat k;
  double total_cost = 0.0;
  bool exact = false;
  std::string note;
};

HindsightResult best_linear_in_hindsight(const LdsSystem& sys, const DisturbanceSignal& sig,
                                         const CostFunction& cost, int T,
                                         const OracleSpec& grid, const Vec& x0);

// ---------------------------------------------------------------------------
// Experiment harness.
// ---------------------------------------------------------------------------

struct SeedComparator {
  std::uint64_t seed = 0;
  Mat k;
  double total_cost = 0.0;
  bool exact = false;
  std::string note;
  std::vector<double> costs;  // per-step comparator costs
};

struct RunRecord {
  std::string controller;
  std::uint64_t seed = 0;
  EpisodeTrace trace;
  std::vector<double> regret;  // prefix-sum difference vs the seed's comparator
  double regret_T = 0.0;
  double final_quarter_mean = 0.0;
};

struct RegretReport {
  std::string hash;
  std::vector<SeedComparator> comparators;
  std::vector<RunRecord> runs;
  std::vector<std::string> files;

  const RunRecord& run(const std::string& controller, std::uint64_t seed) const;
};

RegretReport run_experiment(const ExperimentConfig& cfg, int parallel = 1,
                            bool write_files = true);

// ---------------------------------------------------------------------------
// Appendix demo: exact minimum cost -(1-(1-gamma)^T)/gamma of the scalar
// construction, compared across gamma = 1/ln^2(T) and gamma = 1/T^k.
// ---------------------------------------------------------------------------

double gamma_demo_cost(double gamma, double T);

struct GammaDemoReport {
  double T = 0.0, k_exp = 0.0;
  double gamma_poly = 0.0, gamma_pow = 0.0;
  double cost_poly = 0.0, cost_pow = 0.0;
  bool sandwich_ok = false;  // -1/g <= cost <= -(1-e^{-gT})/g for both gammas
  double gap = 0.0;          // cost_poly - cost_pow
  double gap_bound = 0.0;    // T^k/2 - ln^2 T
  double slack = 0.0;        // gap - gap_bound
  std::vector<std::array<double, 3>> curve;  // {T', cost_poly(T'), cost_pow(T')}
};

GammaDemoReport gamma_advantage_demo(double T, double k_exponent);

// ---------------------------------------------------------------------------
// Regret sweeps over horizons (fixed seed, exact oracle).
// ---------------------------------------------------------------------------

struct SweepPoint {
  int T = 0;
  double regret = 0.0;
  double regret_over_t = 0.0;
  double regret_over_sqrt_t = 0.0;
};

struct SweepReport {
  std::map<std::string, std::vector<SweepPoint>> by_controller;
  bool regret_over_t_decreasing(const std::string& controller) const;
  double sqrt_ratio(const std::string& controller) const;  // max/min of regret/sqrt(T)
};

SweepReport sublinearity_sweep(const ExperimentConfig& base, const std::vector<int>& horizons);

// ---------------------------------------------------------------------------
// Lemma-backed invariant suite (the `verify` subcommand).
// ---------------------------------------------------------------------------

struct VerifyResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

std::vector<VerifyResult> run_verification_suite();

}  // namespace osc
