#include "osc/bench.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include "osc/learner.hpp"

namespace osc {

using nlohmann::json;

// ---------------------------------------------------------------------------
// JSON helpers
// ---------------------------------------------------------------------------

namespace {

void expect_keys(const json& j, const char* where,
                 std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(std::string(where) + " must be an object");
  for (const auto& item : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || item.key() == a;
    if (!ok) throw ConfigError("unknown key '" + item.key() + "' in " + where);
  }
}

json mat_to_json(const Mat& m) {
  json rows = json::array();
  for (int r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (int c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Mat mat_from_json(const json& j, const char* where) {
  if (!j.is_array() || j.empty() || !j.at(0).is_array())
    throw ConfigError(std::string(where) + " must be an array of rows");
  const int rows = static_cast<int>(j.size());
  const int cols = static_cast<int>(j.at(0).size());
  Mat m(rows, cols);
  for (int r = 0; r < rows; ++r) {
    if (static_cast<int>(j.at(r).size()) != cols)
      throw ConfigError(std::string(where) + " has ragged rows");
    for (int c = 0; c < cols; ++c) m(r, c) = j.at(r).at(c).get<double>();
  }
  return m;
}

Vec vec_from_json(const json& j, const char* where) {
  if (!j.is_array()) throw ConfigError(std::string(where) + " must be an array");
  Vec v(static_cast<int>(j.size()));
  for (int i = 0; i < v.size(); ++i) v(i) = j.at(i).get<double>();
  return v;
}

json vec_to_json(const Vec& v) {
  json a = json::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

X0Spec parse_x0(const json& j) {
  expect_keys(j, "x0", {"kind", "scale", "values"});
  X0Spec spec;
  const std::string kind = j.value("kind", "zeros");
  if (kind == "zeros") {
    spec.kind = X0Spec::Kind::Zeros;
  } else if (kind == "gaussian") {
    spec.kind = X0Spec::Kind::Gaussian;
    spec.scale = j.value("scale", 1.0);
  } else if (kind == "values") {
    spec.kind = X0Spec::Kind::Values;
    spec.values = vec_from_json(j.at("values"), "x0.values");
  } else {
    throw ConfigError("x0.kind must be zeros|gaussian|values");
  }
  return spec;
}

SystemSpec parse_system(const json& j) {
  SystemSpec spec;
  const std::string kind = j.value("kind", "generate");
  if (kind == "generate") {
    expect_keys(j, "system", {"kind", "d", "n", "rho_max", "seed", "kappa", "kappa_b"});
    spec.kind = SystemSpec::Kind::Generate;
    spec.d = j.at("d").get<int>();
    spec.n = j.at("n").get<int>();
    spec.rho_max = j.at("rho_max").get<double>();
    spec.seed = j.value("seed", 0ULL);
    spec.kappa = j.value("kappa", 1.0);
    spec.kappa_b = j.value("kappa_b", 1.0);
  } else if (kind == "inline") {
    expect_keys(j, "system",
                {"kind", "a", "b", "kappa", "kappa_b", "w", "gamma", "check_zero_policy"});
    spec.kind = SystemSpec::Kind::Inline;
    spec.a = mat_from_json(j.at("a"), "system.a");
    spec.b = mat_from_json(j.at("b"), "system.b");
    spec.kappa = j.value("kappa", 1.0);
    spec.kappa_b = j.value("kappa_b", 1.0);
    spec.w = j.value("w", 1.0);
    spec.gamma = j.at("gamma").get<double>();
    spec.check_zero_policy = j.value("check_zero_policy", true);
    spec.d = static_cast<int>(spec.a.rows());
    spec.n = static_cast<int>(spec.b.cols());
  } else {
    throw ConfigError("system.kind must be generate|inline");
  }
  return spec;
}

CostSpec parse_cost(const json& j) {
  expect_keys(j, "cost", {"kind", "q", "r"});
  CostSpec spec;
  const std::string kind = j.value("kind", "quadratic");
  if (kind == "quadratic") {
    spec.kind = CostSpec::Kind::Quadratic;
    if (j.contains("q") && !j.at("q").is_string())
      spec.q = mat_from_json(j.at("q"), "cost.q");
    if (j.contains("r") && !j.at("r").is_string())
      spec.r = mat_from_json(j.at("r"), "cost.r");
  } else if (kind == "hinge_state") {
    spec.kind = CostSpec::Kind::HingeState;
  } else {
    throw ConfigError("cost.kind must be quadratic|hinge_state");
  }
  return spec;
}

SignalSpec parse_signal(const json& j) {
  expect_keys(j, "signal", {"kind", "w_clip", "scale", "value", "stu_hidden"});
  SignalSpec spec;
  const std::string kind = j.value("kind", "gaussian");
  if (kind == "gaussian") spec.kind = DisturbanceSignal::Kind::Gaussian;
  else if (kind == "sinusoidal") spec.kind = DisturbanceSignal::Kind::Sinusoidal;
  else if (kind == "constant") spec.kind = DisturbanceSignal::Kind::Constant;
  else if (kind == "relu_residual") spec.kind = DisturbanceSignal::Kind::ReluResidual;
  else if (kind == "stu") spec.kind = DisturbanceSignal::Kind::StuLike;
  else throw ConfigError("signal.kind must be gaussian|sinusoidal|constant|relu_residual|stu");
  spec.w_clip = j.value("w_clip", 1.0);
  spec.scale = j.value("scale", 1.0);
  spec.stu_hidden = j.value("stu_hidden", 8);
  if (j.contains("value")) spec.constant_value = vec_from_json(j.at("value"), "signal.value");
  return spec;
}

ControllerSpec parse_controller(const json& j) {
  expect_keys(j, "controllers[]",
              {"type", "m", "h", "eta", "radius", "stabilizer", "conv", "k", "name"});
  ControllerSpec spec;
  const std::string type = j.at("type").get<std::string>();
  if (type == "osc") spec.type = ControllerSpec::Type::Osc;
  else if (type == "gpc") spec.type = ControllerSpec::Type::Gpc;
  else if (type == "fixed_k") spec.type = ControllerSpec::Type::FixedK;
  else if (type == "zero") spec.type = ControllerSpec::Type::Zero;
  else throw ConfigError("controller type must be osc|gpc|fixed_k|zero");
  if (j.contains("m")) spec.m = j.at("m").get<int>();
  if (j.contains("h")) spec.h = j.at("h").get<int>();
  if (j.contains("eta")) spec.eta = j.at("eta").get<double>();
  if (j.contains("radius")) spec.radius = j.at("radius").get<double>();
  spec.stabilizer = j.value("stabilizer", "none");
  if (spec.stabilizer != "none" && spec.stabilizer != "auto")
    throw ConfigError("controller stabilizer must be none|auto");
  spec.conv = j.value("conv", "auto");
  if (spec.conv != "auto" && spec.conv != "direct" && spec.conv != "fast")
    throw ConfigError("controller conv must be auto|direct|fast");
  if (j.contains("k")) spec.k = mat_from_json(j.at("k"), "controller.k");
  spec.name = j.value("name", type);
  return spec;
}

OracleSpec parse_oracle(const json& j) {
  expect_keys(j, "oracle", {"kind", "lo", "hi", "points"});
  OracleSpec spec;
  const std::string kind = j.value("kind", "auto");
  if (kind == "auto") spec.kind = OracleSpec::Kind::Auto;
  else if (kind == "grid") spec.kind = OracleSpec::Kind::Grid;
  else if (kind == "best_of_run") spec.kind = OracleSpec::Kind::BestOfRun;
  else throw ConfigError("oracle.kind must be auto|grid|best_of_run");
  spec.lo = j.value("lo", -2.0);
  spec.hi = j.value("hi", 2.0);
  spec.points = j.value("points", 0);
  return spec;
}

}  // namespace

ExperimentConfig config_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  expect_keys(j, "config",
              {"t", "seeds", "x0", "system", "signal", "cost", "controllers", "oracle",
               "out_dir", "record_timing"});
  ExperimentConfig cfg;
  cfg.T = j.at("t").get<int>();
  if (cfg.T < 1) throw ConfigError("t must be >= 1");
  if (j.contains("seeds")) {
    cfg.seeds.clear();
    for (const auto& s : j.at("seeds")) cfg.seeds.push_back(s.get<std::uint64_t>());
    if (cfg.seeds.empty()) throw ConfigError("seeds must be non-empty");
  }
  if (j.contains("x0")) cfg.x0 = parse_x0(j.at("x0"));
  cfg.system = parse_system(j.at("system"));
  if (j.contains("signal")) cfg.signal = parse_signal(j.at("signal"));
  if (j.contains("cost")) cfg.cost = parse_cost(j.at("cost"));
  if (!j.contains("controllers") || j.at("controllers").empty())
    throw ConfigError("controllers must be a non-empty list");
  for (const auto& c : j.at("controllers")) cfg.controllers.push_back(parse_controller(c));
  if (j.contains("oracle")) cfg.oracle = parse_oracle(j.at("oracle"));
  cfg.out_dir = j.value("out_dir", "out");
  cfg.record_timing = j.value("record_timing", false);

  // Names must be unique so emitted file paths are unambiguous.
  for (std::size_t i = 0; i < cfg.controllers.size(); ++i)
    for (std::size_t k = i + 1; k < cfg.controllers.size(); ++k)
      if (cfg.controllers[i].name == cfg.controllers[k].name)
        throw ConfigError("duplicate controller name '" + cfg.controllers[i].name + "'");
  return cfg;
}

ExperimentConfig config_from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_json_text(ss.str());
}

std::string config_to_canonical_json(const ExperimentConfig& cfg) {
  json j;
  j["t"] = cfg.T;
  j["seeds"] = cfg.seeds;
  {
    json x0;
    switch (cfg.x0.kind) {
      case X0Spec::Kind::Zeros: x0["kind"] = "zeros"; break;
      case X0Spec::Kind::Gaussian:
        x0["kind"] = "gaussian";
        x0["scale"] = cfg.x0.scale;
        break;
      case X0Spec::Kind::Values:
        x0["kind"] = "values";
        x0["values"] = vec_to_json(cfg.x0.values);
        break;
    }
    j["x0"] = std::move(x0);
  }
  {
    json s;
    if (cfg.system.kind == SystemSpec::Kind::Generate) {
      s["kind"] = "generate";
      s["d"] = cfg.system.d;
      s["n"] = cfg.system.n;
      s["rho_max"] = cfg.system.rho_max;
      s["seed"] = cfg.system.seed;
      s["kappa"] = cfg.system.kappa;
      s["kappa_b"] = cfg.system.kappa_b;
    } else {
      s["kind"] = "inline";
      s["a"] = mat_to_json(cfg.system.a);
      s["b"] = mat_to_json(cfg.system.b);
      s["kappa"] = cfg.system.kappa;
      s["kappa_b"] = cfg.system.kappa_b;
      s["w"] = cfg.system.w;
      s["gamma"] = cfg.system.gamma;
      s["check_zero_policy"] = cfg.system.check_zero_policy;
    }
    j["system"] = std::move(s);
  }
  {
    json s;
    switch (cfg.signal.kind) {
      case DisturbanceSignal::Kind::Gaussian: s["kind"] = "gaussian"; break;
      case DisturbanceSignal::Kind::Sinusoidal: s["kind"] = "sinusoidal"; break;
      case DisturbanceSignal::Kind::Constant:
        s["kind"] = "constant";
        s["value"] = vec_to_json(cfg.signal.constant_value);
        break;
      case DisturbanceSignal::Kind::ReluResidual: s["kind"] = "relu_residual"; break;
      case DisturbanceSignal::Kind::StuLike:
        s["kind"] = "stu";
        s["stu_hidden"] = cfg.signal.stu_hidden;
        break;
    }
    s["w_clip"] = cfg.signal.w_clip;
    s["scale"] = cfg.signal.scale;
    j["signal"] = std::move(s);
  }
  {
    json c;
    if (cfg.cost.kind == CostSpec::Kind::Quadratic) {
      c["kind"] = "quadratic";
      if (cfg.cost.q.size()) c["q"] = mat_to_json(cfg.cost.q);
      if (cfg.cost.r.size()) c["r"] = mat_to_json(cfg.cost.r);
    } else {
      c["kind"] = "hinge_state";
    }
    j["cost"] = std::move(c);
  }
  {
    json list = json::array();
    for (const ControllerSpec& cs : cfg.controllers) {
      json c;
      switch (cs.type) {
        case ControllerSpec::Type::Osc: c["type"] = "osc"; break;
        case ControllerSpec::Type::Gpc: c["type"] = "gpc"; break;
        case ControllerSpec::Type::FixedK: c["type"] = "fixed_k"; break;
        case ControllerSpec::Type::Zero: c["type"] = "zero"; break;
      }
      if (cs.m) c["m"] = *cs.m;
      if (cs.h) c["h"] = *cs.h;
      if (cs.eta) c["eta"] = *cs.eta;
      if (cs.radius) c["radius"] = *cs.radius;
      if (cs.stabilizer != "none") c["stabilizer"] = cs.stabilizer;
      if (cs.conv != "auto") c["conv"] = cs.conv;
      if (cs.k.size()) c["k"] = mat_to_json(cs.k);
      c["name"] = cs.name;
      list.push_back(std::move(c));
    }
    j["controllers"] = std::move(list);
  }
  {
    json o;
    switch (cfg.oracle.kind) {
      case OracleSpec::Kind::Auto: o["kind"] = "auto"; break;
      case OracleSpec::Kind::Grid: o["kind"] = "grid"; break;
      case OracleSpec::Kind::BestOfRun: o["kind"] = "best_of_run"; break;
    }
    o["lo"] = cfg.oracle.lo;
    o["hi"] = cfg.oracle.hi;
    o["points"] = cfg.oracle.points;
    j["oracle"] = std::move(o);
  }
  j["out_dir"] = cfg.out_dir;
  j["record_timing"] = cfg.record_timing;
  return j.dump();
}

std::string config_hash(const ExperimentConfig& cfg) {
  // The output location is bookkeeping, not part of the experiment identity.
  json j = json::parse(config_to_canonical_json(cfg));
  j.erase("out_dir");
  return fnv1a64_hex(j.dump());
}

// ---------------------------------------------------------------------------
// Assembly
// ---------------------------------------------------------------------------

LdsSystem build_system(const SystemSpec& spec, double w_floor) {
  const double w = std::max(1.0, w_floor);
  if (spec.kind == SystemSpec::Kind::Generate) {
    return generate_system(spec.d, spec.n, spec.rho_max, spec.seed, spec.kappa_b, w,
                           spec.kappa);
  }
  return make_system(spec.a, spec.b, spec.kappa, spec.kappa_b, std::max(spec.w, w),
                     spec.gamma, spec.check_zero_policy);
}

CostFunction build_cost(const CostSpec& spec, const LdsSystem& sys) {
  if (spec.kind == CostSpec::Kind::HingeState) return CostFunction::hinge_state();
  Mat q = spec.q.size() ? spec.q : Mat::Identity(sys.d, sys.d);
  Mat r = spec.r.size() ? spec.r : Mat::Identity(sys.n, sys.n);
  if (q.rows() != sys.d || r.rows() != sys.n)
    throw ConfigError("cost matrices do not match system dimensions");
  return CostFunction::quadratic(std::move(q), std::move(r));
}

DisturbanceSignal build_signal(const SignalSpec& spec, std::uint64_t run_seed) {
  DisturbanceSignal sig;
  sig.kind = spec.kind;
  sig.seed = run_seed;
  sig.w_clip = spec.w_clip;
  sig.scale = spec.scale;
  sig.constant_value = spec.constant_value;
  sig.stu_hidden = spec.stu_hidden;
  return sig;
}

Vec build_x0(const X0Spec& spec, int d, std::uint64_t run_seed) {
  switch (spec.kind) {
    case X0Spec::Kind::Zeros: return Vec::Zero(d);
    case X0Spec::Kind::Gaussian: {
      DetRng rng(mix_seed(run_seed, 0xbeef));
      return spec.scale * rng.normal_vec(d);
    }
    case X0Spec::Kind::Values:
      if (spec.values.size() != d) throw ConfigError("x0.values dimension != d");
      return spec.values;
  }
  return Vec::Zero(d);
}

// ---------------------------------------------------------------------------
// Hindsight oracle
// ---------------------------------------------------------------------------

namespace {

bool class_s_stable(const LdsSystem& sys, const Mat& k) {
  const Mat a_cl = sys.A + sys.B * k;
  Eigen::EigenSolver<Mat> es(a_cl, /*computeEigenvectors=*/false);
  for (int i = 0; i < a_cl.rows(); ++i) {
    const auto ev = es.eigenvalues()(i);
    if (std::abs(ev.imag()) > 1e-9) return false;
    if (ev.real() < -1e-9 || ev.real() > 1.0 - sys.gamma + 1e-9) return false;
  }
  return true;
}

double replay_cost(const LdsSystem& sys, const Mat& k, const DisturbanceSignal& sig,
                   const CostFunction& cost, int T, const Vec& x0) {
  LinearPolicy policy(k);
  SimulateOptions opt;
  opt.x0 = x0;
  opt.record_memoryless = false;
  return simulate(sys, policy, sig, cost, T, opt).total_cost();
}

int default_points(int axes) {
  switch (axes) {
    case 1: return 201;
    case 2: return 41;
    case 3: return 15;
    default: return 9;
  }
}

}  // namespace

HindsightResult best_linear_in_hindsight(const LdsSystem& sys, const DisturbanceSignal& sig,
                                         const CostFunction& cost, int T,
                                         const OracleSpec& grid, const Vec& x0) {
  const int axes = sys.d * sys.n;
  if (axes > 4)
    throw std::invalid_argument("best_linear_in_hindsight: d*n > 4 is not searchable");
  const int points = grid.points > 0 ? grid.points : default_points(axes);

  Vec center = Vec::Zero(axes);
  Vec halfwidth = Vec::Constant(axes, (grid.hi - grid.lo) / 2.0);
  center.setConstant((grid.hi + grid.lo) / 2.0);

  Mat best_k;
  double best_cost = std::numeric_limits<double>::infinity();
  bool found = false;

  for (int round = 0; round <= 3; ++round) {
    const double prev_best = best_cost;
    std::vector<int> idx(axes, 0);
    while (true) {
      Mat k(sys.n, sys.d);
      for (int a = 0; a < axes; ++a) {
        const double lo = center(a) - halfwidth(a);
        const double hi = center(a) + halfwidth(a);
        const double v = points == 1 ? center(a)
                                     : lo + (hi - lo) * idx[a] / (points - 1);
        k(a / sys.d, a % sys.d) = v;
      }
      if (class_s_stable(sys, k)) {
        const double c = replay_cost(sys, k, sig, cost, T, x0);
        if (c < best_cost) {
          best_cost = c;
          best_k = k;
          found = true;
        }
      }
      int a = 0;
      for (; a < axes; ++a) {
        if (++idx[a] < points) break;
        idx[a] = 0;
      }
      if (a == axes) break;
    }
    if (!found) throw NumericalFailure("best_linear_in_hindsight: no class-S candidate");
    // Re-grid around the incumbent with halved width, i.e. halved spacing.
    for (int a = 0; a < axes; ++a) {
      center(a) = best_k(a / sys.d, a % sys.d);
      halfwidth(a) = std::max(halfwidth(a) / 2.0, 1e-12);
    }
    if (round > 0 && prev_best - best_cost < 1e-4 * std::max(1.0, std::abs(prev_best)))
      break;
  }

  HindsightResult res;
  res.k = best_k;
  res.total_cost = best_cost;
  res.exact = true;
  res.note = "grid";
  return res;
}

// ---------------------------------------------------------------------------
// Experiment harness
// ---------------------------------------------------------------------------

namespace {

ConvMode conv_mode_from(const std::string& s) {
  if (s == "direct") return ConvMode::Direct;
  if (s == "fast") return ConvMode::Fast;
  return ConvMode::Auto;
}

struct BankKey {
  int m;
  double gamma;
  int h;
  bool operator<(const BankKey& o) const {
    return std::tie(m, gamma, h) < std::tie(o.m, o.gamma, o.h);
  }
};

std::unique_ptr<Controller> build_controller(const ControllerSpec& cs, const LdsSystem& sys,
                                             const CostFunction* cost, int T,
                                             std::map<BankKey, std::shared_ptr<const FilterBank>>& banks) {
  switch (cs.type) {
    case ControllerSpec::Type::Zero:
      return std::make_unique<ZeroController>(sys.n);
    case ControllerSpec::Type::FixedK: {
      if (cs.k.rows() != sys.n || cs.k.cols() != sys.d)
        throw ConfigError("fixed_k controller: K must be n x d");
      return std::make_unique<LinearPolicy>(cs.k);
    }
    case ControllerSpec::Type::Osc: {
      int m, h;
      double eta;
      if (cs.m && cs.h && cs.eta) {
        m = *cs.m;
        h = std::min(*cs.h, m);
        eta = *cs.eta;
      } else {
        const Schedule sched = theoretical_schedule(T, sys.gamma, sys.kappa, sys.kappa_B,
                                                      sys.W, cost->lipschitz_scale(), sys.d);
        m = cs.m.value_or(sched.m);
        h = std::min(cs.h.value_or(sched.h), m);
        eta = cs.eta.value_or(sched.eta);
      }
      const BankKey key{m, sys.gamma, h};
      auto it = banks.find(key);
      if (it == banks.end()) {
        auto bank = std::make_shared<const FilterBank>(
            eigendecompose_top(build_hankel(m, sys.gamma), h));
        it = banks.emplace(key, std::move(bank)).first;
      }
      OscOptions opt;
      opt.eta = eta;
      opt.conv_mode = conv_mode_from(cs.conv);
      opt.radius = cs.radius;
      if (cs.stabilizer == "auto") {
        const Mat k0 = pole_placement_k0(sys, 1.0 - sys.gamma);
        if (k0.cwiseAbs().maxCoeff() > 0.0) opt.stabilizer = k0;
      }
      return std::make_unique<OscController>(sys, it->second, cost, opt);
    }
    case ControllerSpec::Type::Gpc: {
      const int mprime =
          cs.m.value_or(static_cast<int>(std::ceil(std::log(static_cast<double>(T)) / sys.gamma)));
      GpcOptions opt;
      opt.radius = cs.radius;
      if (cs.eta) {
        opt.eta = *cs.eta;
      } else {
        const double c1 = cost->lipschitz_scale() * sys.kappa_B * std::pow(sys.kappa, 8) *
                          sys.W * sys.W;
        const double c2 = std::sqrt(2.0) * std::pow(sys.kappa, 5) / (3.0 * c1);
        opt.eta = c2 * std::sqrt(std::pow(sys.gamma, 3) /
                                 (static_cast<double>(T) * mprime * mprime));
      }
      return std::make_unique<GpcController>(sys, mprime, cost, opt);
    }
  }
  throw ConfigError("unreachable controller type");
}

void write_file(const std::string& path, const std::string& content,
                std::vector<std::string>& files) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw NumericalFailure("cannot write " + path);
  out << content;
  files.push_back(path);
}

}  // namespace

const RunRecord& RegretReport::run(const std::string& controller, std::uint64_t seed) const {
  for (const RunRecord& r : runs)
    if (r.controller == controller && r.seed == seed) return r;
  throw std::invalid_argument("no run for controller '" + controller + "'");
}

RegretReport run_experiment(const ExperimentConfig& cfg, int parallel, bool write_files) {
  const LdsSystem sys = build_system(cfg.system, cfg.signal.w_clip);
  const CostFunction cost = build_cost(cfg.cost, sys);

  RegretReport report;
  report.hash = config_hash(cfg);

  std::map<BankKey, std::shared_ptr<const FilterBank>> banks;

  struct Job {
    const ControllerSpec* spec;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (const ControllerSpec& cs : cfg.controllers)
    for (std::uint64_t seed : cfg.seeds) jobs.push_back({&cs, seed});

  // Controllers are built up front (single-threaded: the bank cache is shared)
  // and then episodes run independently.
  std::vector<std::unique_ptr<Controller>> controllers;
  controllers.reserve(jobs.size());
  for (const Job& job : jobs)
    controllers.push_back(build_controller(*job.spec, sys, &cost, cfg.T, banks));

  std::vector<EpisodeTrace> traces(jobs.size());
  std::vector<std::string> errors(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= jobs.size()) return;
      try {
        SimulateOptions opt;
        opt.x0 = build_x0(cfg.x0, sys.d, jobs[i].seed);
        opt.record_timing = cfg.record_timing;
        const DisturbanceSignal sig = build_signal(cfg.signal, jobs[i].seed);
        traces[i] = simulate(sys, *controllers[i], sig, cost, cfg.T, opt);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  const int workers = std::max(1, std::min<int>(parallel, static_cast<int>(jobs.size())));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < workers; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    if (!errors[i].empty())
      throw NumericalFailure("episode failed (controller=" + jobs[i].spec->name +
                             ", seed=" + std::to_string(jobs[i].seed) + "): " + errors[i]);
  }

  // Comparator per seed: exact grid oracle when feasible, else best of run.
  const bool grid_feasible = sys.d * sys.n <= 4;
  const bool use_grid = cfg.oracle.kind == OracleSpec::Kind::Grid ||
                        (cfg.oracle.kind == OracleSpec::Kind::Auto && grid_feasible);
  if (cfg.oracle.kind == OracleSpec::Kind::Grid && !grid_feasible)
    throw std::invalid_argument("oracle.kind=grid but d*n > 4");

  for (std::uint64_t seed : cfg.seeds) {
    SeedComparator comp;
    comp.seed = seed;
    const DisturbanceSignal sig = build_signal(cfg.signal, seed);
    const Vec x0 = build_x0(cfg.x0, sys.d, seed);
    if (use_grid) {
      const HindsightResult hs =
          best_linear_in_hindsight(sys, sig, cost, cfg.T, cfg.oracle, x0);
      comp.k = hs.k;
      comp.exact = true;
      comp.note = hs.note;
      LinearPolicy policy(hs.k);
      SimulateOptions opt;
      opt.x0 = x0;
      opt.record_memoryless = false;
      const EpisodeTrace t = simulate(sys, policy, sig, cost, cfg.T, opt);
      comp.costs = t.cost;
      comp.total_cost = t.total_cost();
    } else {
      // Best fixed controller among those run for this seed.
      double best = std::numeric_limits<double>::infinity();
      std::size_t best_i = 0;
      for (std::size_t i = 0; i < jobs.size(); ++i) {
        if (jobs[i].seed != seed) continue;
        const double c = traces[i].total_cost();
        if (c < best) {
          best = c;
          best_i = i;
        }
      }
      comp.exact = false;
      comp.note = "best_of_run(" + jobs[best_i].spec->name + "); exhaustive oracle infeasible at d*n=" +
                  std::to_string(sys.d * sys.n);
      comp.costs = traces[best_i].cost;
      comp.total_cost = best;
    }
    report.comparators.push_back(std::move(comp));
  }

  for (std::size_t i = 0; i < jobs.size(); ++i) {
    const SeedComparator* comp = nullptr;
    for (const SeedComparator& c : report.comparators)
      if (c.seed == jobs[i].seed) comp = &c;
    RunRecord rec;
    rec.controller = jobs[i].spec->name;
    rec.seed = jobs[i].seed;
    rec.trace = std::move(traces[i]);
    rec.regret.resize(cfg.T);
    double alg = 0.0, ref = 0.0;
    for (int t = 0; t < cfg.T; ++t) {
      alg += rec.trace.cost[t];
      ref += comp->costs[t];
      rec.regret[t] = alg - ref;
    }
    rec.regret_T = rec.regret.empty() ? 0.0 : rec.regret.back();
    rec.final_quarter_mean = rec.trace.final_quarter_mean_cost();
    report.runs.push_back(std::move(rec));
  }

  if (write_files) {
    namespace fs = std::filesystem;
    fs::create_directories(cfg.out_dir);
    for (const RunRecord& rec : report.runs) {
      const std::string stem =
          cfg.out_dir + "/" + rec.controller + "_" + std::to_string(rec.seed);
      write_file(stem + "_trace.csv", trace_to_csv(rec.trace), report.files);
      write_file(stem + "_summary.json", trace_summary_json(rec.trace, report.hash),
                 report.files);
      std::ostringstream regret_csv;
      regret_csv << "t,cum_cost,cum_comparator,regret\n";
      const SeedComparator* comp = nullptr;
      for (const SeedComparator& c : report.comparators)
        if (c.seed == rec.seed) comp = &c;
      double alg = 0.0, ref = 0.0;
      for (int t = 0; t < cfg.T; ++t) {
        alg += rec.trace.cost[t];
        ref += comp->costs[t];
        regret_csv << t << "," << format_double(alg) << "," << format_double(ref) << ","
                   << format_double(rec.regret[t]) << "\n";
      }
      write_file(stem + "_regret.csv", regret_csv.str(), report.files);
    }
    json rj;
    rj["config_hash"] = report.hash;
    json comps = json::array();
    for (const SeedComparator& c : report.comparators) {
      json cj;
      cj["seed"] = c.seed;
      cj["exact"] = c.exact;
      cj["note"] = c.note;
      cj["total_cost"] = c.total_cost;
      if (c.k.size()) cj["k"] = mat_to_json(c.k);
      comps.push_back(std::move(cj));
    }
    rj["comparators"] = std::move(comps);
    json runs = json::array();
    for (const RunRecord& rec : report.runs) {
      json r;
      r["controller"] = rec.controller;
      r["seed"] = rec.seed;
      r["total_cost"] = rec.trace.total_cost();
      r["final_quarter_mean_cost"] = rec.final_quarter_mean;
      r["regret_T"] = rec.regret_T;
      runs.push_back(std::move(r));
    }
    rj["runs"] = std::move(runs);
    write_file(cfg.out_dir + "/report.json", rj.dump(2) + "\n", report.files);
  }
  return report;
}

// ---------------------------------------------------------------------------
// Gamma-advantage demo
// ---------------------------------------------------------------------------

double gamma_demo_cost(double gamma, double T) {
  if (!(gamma > 0.0) || gamma > 1.0)
    throw std::invalid_argument("gamma_demo_cost: gamma must lie in (0, 1]");
  // -(1 - (1-gamma)^T)/gamma, evaluated stably.
  return std::expm1(T * std::log1p(-gamma)) / gamma;
}

GammaDemoReport gamma_advantage_demo(double T, double k_exponent) {
  if (!(k_exponent > 0.0) || k_exponent >= 1.0 / 12.0)
    throw std::invalid_argument("gamma_advantage_demo: need 0 < k < 1/12");
  if (T < 100.0) throw std::invalid_argument("gamma_advantage_demo: need T >= 100");

  GammaDemoReport rep;
  rep.T = T;
  rep.k_exp = k_exponent;
  const double log_t = std::log(T);
  rep.gamma_poly = 1.0 / (log_t * log_t);
  rep.gamma_pow = std::min(1.0, std::pow(T, -k_exponent));
  rep.cost_poly = gamma_demo_cost(rep.gamma_poly, T);
  rep.cost_pow = gamma_demo_cost(rep.gamma_pow, T);

  auto sandwich = [T](double g, double c) {
    const double lower = -1.0 / g;
    const double upper = std::expm1(-g * T) / g;  // -(1 - e^{-gT})/g
    return lower - 1e-9 <= c && c <= upper + 1e-9;
  };
  rep.sandwich_ok = sandwich(rep.gamma_poly, rep.cost_poly) &&
                    sandwich(rep.gamma_pow, rep.cost_pow);

  rep.gap = rep.cost_poly - rep.cost_pow;
  rep.gap_bound = 0.5 * std::pow(T, k_exponent) - log_t * log_t;
  rep.slack = rep.gap - rep.gap_bound;

  const int pts = 16;
  for (int i = 0; i < pts; ++i) {
    const double tt = std::exp(std::log(100.0) +
                               (std::log(T) - std::log(100.0)) * i / (pts - 1));
    const double lt = std::log(tt);
    rep.curve.push_back({tt, gamma_demo_cost(1.0 / (lt * lt), tt),
                         gamma_demo_cost(std::min(1.0, std::pow(tt, -k_exponent)), tt)});
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Sublinearity sweep
// ---------------------------------------------------------------------------

bool SweepReport::regret_over_t_decreasing(const std::string& controller) const {
  const auto it = by_controller.find(controller);
  if (it == by_controller.end() || it->second.size() < 2) return false;
  for (std::size_t i = 1; i < it->second.size(); ++i)
    if (it->second[i].regret_over_t >= it->second[i - 1].regret_over_t) return false;
  return true;
}

double SweepReport::sqrt_ratio(const std::string& controller) const {
  const auto it = by_controller.find(controller);
  if (it == by_controller.end() || it->second.empty())
    return std::numeric_limits<double>::infinity();
  double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  for (const SweepPoint& p : it->second) {
    lo = std::min(lo, p.regret_over_sqrt_t);
    hi = std::max(hi, p.regret_over_sqrt_t);
  }
  if (lo <= 0.0) return std::numeric_limits<double>::infinity();
  return hi / lo;
}

SweepReport sublinearity_sweep(const ExperimentConfig& base, const std::vector<int>& horizons) {
  SweepReport report;
  for (int T : horizons) {
    ExperimentConfig cfg = base;
    cfg.T = T;
    // An explicit step size in the base config is the rate at horizon base.T;
    // rescale by sqrt(base.T / T) so each horizon runs its own OGD schedule.
    for (ControllerSpec& cs : cfg.controllers) {
      if (cs.eta)
        cs.eta = *cs.eta * std::sqrt(static_cast<double>(base.T) / static_cast<double>(T));
    }
    const RegretReport rr = run_experiment(cfg, 1, /*write_files=*/false);
    for (const SeedComparator& c : rr.comparators)
      if (!c.exact)
        throw std::invalid_argument("sublinearity_sweep: hindsight oracle is not exact here");
    for (const RunRecord& rec : rr.runs) {
      SweepPoint p;
      p.T = T;
      p.regret = rec.regret_T;
      p.regret_over_t = rec.regret_T / T;
      p.regret_over_sqrt_t = rec.regret_T / std::sqrt(static_cast<double>(T));
      report.by_controller[rec.controller].push_back(p);
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Verification suite
// ---------------------------------------------------------------------------

namespace {

std::string fmt(double v) { return format_double(v); }

}  // namespace

std::vector<VerifyResult> run_verification_suite() {
  std::vector<VerifyResult> out;
  auto add = [&out](const std::string& name, bool pass, const std::string& detail) {
    out.push_back({name, pass, detail});
  };

  struct Combo {
    int m;
    double gamma;
    long long T;
  };
  const Combo combos[] = {{64, 0.1, 1000}, {256, 0.05, 10000}, {500, 0.01, 1000000}};
  const int h_check = 24;

  for (const Combo& c : combos) {
    const std::string tag =
        "m=" + std::to_string(c.m) + ",gamma=" + fmt(c.gamma) + ",T=" + std::to_string(c.T);
    const HankelMatrix hm = build_hankel(c.m, c.gamma);

    const double asym = (hm.entries - hm.entries.transpose()).cwiseAbs().maxCoeff();
    add("hankel_symmetry[" + tag + "]", asym == 0.0, "max|H-H'|=" + fmt(asym));

    Eigen::SelfAdjointEigenSolver<Mat> full(hm.entries, Eigen::EigenvaluesOnly);
    const double min_eig = full.eigenvalues().minCoeff();
    add("hankel_psd[" + tag + "]", min_eig >= -1e-10 * hm.trace(),
        "min_eig=" + fmt(min_eig));

    const double tr = hm.trace();
    const double tr_bound = 0.5 * std::log(2.0 / c.gamma);
    add("hankel_trace[" + tag + "]", tr <= tr_bound + 1e-12,
        "trace=" + fmt(tr) + " bound=" + fmt(tr_bound));

    const FilterBank bank = eigendecompose_top(hm, h_check);

    double ortho = 0.0;
    for (int i = 0; i < bank.h; ++i)
      for (int j = 0; j < bank.h; ++j) {
        const double ip = bank.phis.col(i).dot(bank.phis.col(j));
        ortho = std::max(ortho, std::abs(ip - (i == j ? 1.0 : 0.0)));
      }
    add("filters_orthonormal[" + tag + "]", ortho <= 1e-10, "max_dev=" + fmt(ortho));

    double resid = 0.0;
    for (int i = 0; i < bank.h; ++i)
      resid = std::max(resid,
                       (hm.entries * bank.phis.col(i) - bank.sigmas(i) * bank.phis.col(i)).norm());
    const double resid_bound = 1e-8 * std::max(bank.sigmas(0), 1e-300);
    add("filters_eigen_residual[" + tag + "]", resid <= resid_bound,
        "max_resid=" + fmt(resid) + " bound=" + fmt(resid_bound));

    const TailBoundReport tail = verify_tail_bound(bank, c.T);
    double worst_ratio = 0.0;
    for (const TailBoundEntry& e : tail.entries) worst_ratio = std::max(worst_ratio, e.ratio);
    add("sigma_tail_bound[" + tag + "]", tail.all_pass,
        "max sigma/bound=" + fmt(worst_ratio));

    const InnerProductReport ip = verify_inner_product_bound(bank, alpha_grid(c.gamma, 1001));
    add("mu_inner_product[" + tag + "]", ip.all_pass,
        "max_ratio=" + fmt(ip.max_ratio) + " worst_slack=" + fmt(ip.worst_slack));
  }

  {
    double worst = 0.0;
    for (int m = 1; m <= 6; ++m) {
      for (double gamma : {0.1, 0.25, 0.5}) {
        const Mat viaq = hankel_by_quadrature(m, gamma);
        const Mat direct = build_hankel(m, gamma).entries;
        worst = std::max(worst, (viaq - direct).cwiseAbs().maxCoeff());
      }
    }
    add("mu_integral_identity[m<=6]", worst <= 1e-10, "max_entry_err=" + fmt(worst));
  }

  {
    bool pass = true;
    double worst = 0.0;
    for (double gamma : {0.1, 0.25, 0.5}) {
      for (double alpha : alpha_grid(gamma, 101)) {
        const double nsq = mu_vector(alpha, 64).values.squaredNorm();
        worst = std::max(worst, nsq * gamma);
        pass = pass && nsq <= 1.0 / gamma + 1e-12;
      }
    }
    add("mu_norm_bound", pass, "max gamma*|mu|^2=" + fmt(worst));
  }

  {
    bool pass = true;
    DetRng rng(7);
    for (int i = 0; i < 20; ++i) {
      const double gamma = rng.uniform(0.01, 1.0);
      const double T = std::floor(rng.uniform(100.0, 1e6));
      const double cost = gamma_demo_cost(gamma, T);
      const double lower = -1.0 / gamma;
      const double upper = std::expm1(-gamma * T) / gamma;
      pass = pass && lower - 1e-9 <= cost && cost <= upper + 1e-9;
    }
    const GammaDemoReport demo = gamma_advantage_demo(1e6, 1.0 / 24.0);
    pass = pass && demo.sandwich_ok && demo.gap >= demo.gap_bound && demo.slack > 0.0;
    add("gamma_sandwich", pass, "slack@(1e6,1/24)=" + fmt(demo.slack));
  }

  return out;
}

}  // namespace osc
