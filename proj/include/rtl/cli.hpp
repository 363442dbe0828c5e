#pragma once

// Batch commands. Each command reads a cfg/1 document, materializes every
// default, runs one module pipeline and writes versioned outputs plus a
// manifest. Exit codes: 0 success, 2 verification failure (outputs still
// written), 1 usage or config error, 3 module error.

#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "rtl/critical.hpp"
#include "rtl/environment.hpp"
#include "rtl/genfun.hpp"
#include "rtl/io.hpp"
#include "rtl/isotopy.hpp"
#include "rtl/parallel.hpp"
#include "rtl/rice.hpp"
#include "rtl/twist.hpp"

namespace rtl::cli {

using io::json;
namespace fs = std::filesystem;

inline const std::vector<std::string>& commands() {
  static const std::vector<std::string> c{"env-sample", "twist-build", "twist-verify", "fixed-points",
                                          "density",    "decompose",   "moser",        "flow"};
  return c;
}

// Config templates -----------------------------------------------------------------

namespace detail {

inline json environment_template() {
  return {{"kind", "torus"},
          {"frequency", json::array({1.0, std::sqrt(2.0)})},
          {"phase", nullptr},
          {"lattice_bound", 1000000},
          {"intensity", 1.0},
          {"window", json::array({-10.0, 10.0})},
          {"margin", 1.0}};
}

inline json genfun_template() {
  return {{"kind", "cosine"}, {"eps", 0.1},        {"scale", 1.0},        {"radius", 0.4},
          {"amplitude", 0.2}, {"exponent", 1.0},   {"saturating", false}, {"tol", 1e-10}};
}

inline json hamiltonian_template() {
  return {{"kind", "bump"}, {"amplitude", 0.3}, {"radius", 0.8}, {"beta", 0.1}, {"shape", "smooth"}};
}

}  // namespace detail

/// The full cfg/1 document for a command with every default filled in.
inline json config_template(const std::string& command) {
  json t = {{"schema", "cfg/1"},
            {"command", command},
            {"seed", 0},
            {"workers", 0},
            {"environment", detail::environment_template()},
            {"output", {{"dir", "out"}, {"plots", false}}}};
  if (command == "env-sample") {
    t["sample"] = {{"count", 4}, {"lo", -10.0}, {"hi", 10.0}};
  } else if (command == "twist-build") {
    t["genfun"] = detail::genfun_template();
    t["grid"] = {{"q_lo", -5.0}, {"q_hi", 5.0}, {"nq", 11}, {"np", 11}};
  } else if (command == "twist-verify") {
    t["map"] = {{"kind", "genfun"}, {"sign", "positive"}, {"defect", 0.1}, {"t", 1.0}, {"dt", 1e-2}};
    t["genfun"] = detail::genfun_template();
    t["hamiltonian"] = detail::hamiltonian_template();
    t["verify"] = {{"samples", 1000}, {"q_lo", -10.0},      {"q_hi", 10.0},     {"fd_step", 1e-5},
                   {"area", 1e-4},    {"boundary", 1e-8}, {"stationarity", 1e-8}};
  } else if (command == "fixed-points") {
    t["genfun"] = detail::genfun_template();
    t["chain"] = {{"n", 0}};
    t["search"] = {{"ell", 20.0},
                   {"grid", 0.05},
                   {"dedupe_radius", 1e-4},
                   {"census", json::array({5.0, 10.0, 20.0})},
                   {"residual", 1e-8}};
  } else if (command == "density") {
    t["process"] = {{"modes", 40}, {"frequency", nullptr}, {"amplitude", nullptr}};
    t["rice"] = {{"ell", 2000.0}, {"eps", 1e-2}, {"n_mc", 200000}, {"scan_step", 5e-4}};
  } else if (command == "decompose") {
    t["hamiltonian"] = detail::hamiltonian_template();
    t["decompose"] = {{"n", 0},          {"target", 0.5},    {"n_start", 1},   {"n_max", 256},
                      {"mesh", 10},      {"dt", 1e-2},       {"q_lo", -5.0},   {"q_hi", 5.0},
                      {"grid_q", 40},    {"grid_p", 21},     {"check_q", 40},  {"check_p", 25},
                      {"tolerance", 1e-6}, {"verify_samples", 200}};
  } else if (command == "moser") {
    t["eta"] = {{"mode", json::array({1, 0})}, {"amplitude", 0.2}, {"phase", 0.0},
                {"profile", json::array({1.0, 0.0, -1.0})}};
    t["residuals"] = {{"nq", 256}, {"np", 64}, {"fd", 5e-3}, {"laplacian", 1e-5}, {"boundary", 1e-6}};
    t["corrected"] = {{"check", true}, {"alpha", 0.5}, {"beta", 0.1}, {"mesh", 4},
                      {"samples", 25}, {"tolerance", 1e-4}};
  } else if (command == "flow") {
    t["hamiltonian"] = detail::hamiltonian_template();
    t["flow"] = {{"t0", 0.0},
                 {"t1", 1.0},
                 {"dt", 1e-2},
                 {"samples", 11},
                 {"points", json::array({json::array({0.0, 0.5}), json::array({1.0, -0.3})})},
                 {"tolerance", 1e-10}};
  } else {
    fail(ErrorCode::config, "/command: unknown command '" + command + "'");
  }
  return t;
}

/// Validates a user document against the command template.
inline json materialize_config(const json& user, const std::string& command) {
  require(user.is_object(), ErrorCode::config, "/: expected an object");
  std::string cmd = command;
  if (user.contains("command") && user["command"].is_string()) {
    const std::string c = user["command"].get<std::string>();
    require(cmd.empty() || c == cmd, ErrorCode::config, "/command: config is for '" + c + "', not '" + cmd + "'");
    cmd = c;
  }
  require(!cmd.empty(), ErrorCode::config, "/command: missing");
  json cfg = io::materialize(user, config_template(cmd));
  require(cfg["schema"] == "cfg/1", ErrorCode::config, "/schema: expected cfg/1");
  return cfg;
}

// Builders --------------------------------------------------------------------------

namespace detail {

template <class T>
T get(const json& j, const std::string& path) {
  try {
    return j.get<T>();
  } catch (const json::exception&) {
    fail(ErrorCode::config, path + ": wrong value type");
  }
}

inline std::vector<double> numbers(const json& j, const std::string& path) {
  return get<std::vector<double>>(j, path);
}

inline MonotoneSign sign_of(const json& j, const std::string& path) {
  const auto s = get<std::string>(j, path);
  if (s == "positive") return MonotoneSign::positive;
  if (s == "negative") return MonotoneSign::negative;
  fail(ErrorCode::config, path + ": expected positive or negative");
}

inline BumpShape shape_of(const json& j, const std::string& path) {
  const auto s = get<std::string>(j, path);
  if (s == "smooth") return BumpShape::smooth;
  if (s == "quartic") return BumpShape::quartic;
  if (s == "tent") return BumpShape::tent;
  fail(ErrorCode::config, path + ": expected smooth, quartic or tent");
}

inline EnvSpec env_spec(const json& e) {
  EnvSpec spec;
  const auto kind = get<std::string>(e["kind"], "/environment/kind");
  if (kind == "torus") {
    spec.kind = EnvKind::quasi_periodic;
  } else if (kind == "poisson") {
    spec.kind = EnvKind::poisson;
  } else {
    fail(ErrorCode::config, "/environment/kind: expected torus or poisson");
  }
  spec.frequency = numbers(e["frequency"], "/environment/frequency");
  if (!e["phase"].is_null()) {
    spec.phase = numbers(e["phase"], "/environment/phase");
    require(spec.phase->size() == spec.frequency.size(), ErrorCode::config,
            "/environment/phase: length must match frequency");
  }
  spec.lattice_bound = get<long>(e["lattice_bound"], "/environment/lattice_bound");
  spec.intensity = get<double>(e["intensity"], "/environment/intensity");
  const auto w = numbers(e["window"], "/environment/window");
  require(w.size() == 2, ErrorCode::config, "/environment/window: expected [lo, hi]");
  spec.window_lo = w[0];
  spec.window_hi = w[1];
  spec.margin = get<double>(e["margin"], "/environment/margin");
  return spec;
}

inline std::size_t torus_dim(const json& cfg) { return cfg["environment"]["frequency"].size(); }

inline Seed seed_of(const json& g, std::size_t dim) {
  const auto kind = get<std::string>(g["kind"], "/genfun/kind");
  const double scale = get<double>(g["scale"], "/genfun/scale");
  StationaryObservable c;
  if (kind == "cosine") {
    c = cosine_coefficient(std::max<std::size_t>(dim, 1), get<double>(g["eps"], "/genfun/eps"), scale);
  } else if (kind == "constant") {
    c = constant_observable(scale);
  } else if (kind == "bumps") {
    c = constant_observable(scale);
    c.bumps = BumpSum{BumpShape::smooth, get<double>(g["radius"], "/genfun/radius"),
                      get<double>(g["amplitude"], "/genfun/amplitude"), {}};
  } else {
    fail(ErrorCode::config, "/genfun/kind: expected cosine, constant or bumps");
  }
  AProfile prof;
  if (get<bool>(g["saturating"], "/genfun/saturating")) prof.kind = AProfile::Kind::saturating;
  prof.exponent = get<double>(g["exponent"], "/genfun/exponent");
  return Seed{{{std::move(c), prof}}};
}

inline GenFunPtr genfun_of(const json& cfg) {
  return make_seed_genfun(seed_of(cfg["genfun"], torus_dim(cfg)), get<double>(cfg["genfun"]["tol"], "/genfun/tol"));
}

/// N = 0: the plain generating function; otherwise alternate (shear)^-1 and
/// the configured factor, starting with the shear.
inline CompositeGenFun chain_of(const json& cfg) {
  const int n = get<int>(cfg["chain"]["n"], "/chain/n");
  require(n >= 0 && n <= 8, ErrorCode::config, "/chain/n: expected 0..8");
  const GenFunPtr g = genfun_of(cfg);
  if (n == 0) return CompositeGenFun::monotone(g);
  const GenFunPtr shear = make_seed_genfun(Seed{{{constant_observable(1.0), AProfile{}}}});
  std::vector<ChainFactor> f;
  for (int j = 0; j <= n; ++j)
    f.push_back(j % 2 == 0 ? ChainFactor{shear, MonotoneSign::negative} : ChainFactor{g, MonotoneSign::positive});
  return compose_genfuns(std::move(f));
}

inline StationaryHamiltonian hamiltonian_of(const json& cfg) {
  const json& h = cfg["hamiltonian"];
  const auto kind = get<std::string>(h["kind"], "/hamiltonian/kind");
  if (kind == "kinetic") return kinetic_hamiltonian();
  if (kind == "bump")
    return bump_hamiltonian(get<double>(h["amplitude"], "/hamiltonian/amplitude"),
                            get<double>(h["radius"], "/hamiltonian/radius"), shape_of(h["shape"], "/hamiltonian/shape"));
  if (kind == "cosine") return cosine_hamiltonian(get<double>(h["beta"], "/hamiltonian/beta"), torus_dim(cfg));
  fail(ErrorCode::config, "/hamiltonian/kind: expected kinetic, bump or cosine");
}

inline json point_json(StripPoint x) { return json::array({x.q, x.p}); }
inline json complex_json(std::complex<double> z) { return json::array({z.real(), z.imag()}); }

}  // namespace detail

// Run context ------------------------------------------------------------------------

struct RunOptions {
  std::string command;
  fs::path config;
  std::optional<fs::path> out_dir;
  std::optional<int> workers;
  std::optional<std::uint64_t> seed;
};

/// Collects outputs, digests, seeds and phase timings for the manifest.
class Run {
 public:
  Run(json cfg, fs::path dir, int workers) : cfg_(std::move(cfg)), dir_(std::move(dir)), workers_(workers) {}

  const json& cfg() const { return cfg_; }
  int workers() const { return workers_; }
  std::uint64_t seed() const { return cfg_["seed"].get<std::uint64_t>(); }

  /// Derived seed for a named purpose, recorded in the manifest.
  std::uint64_t seed_for(const std::string& label) {
    const std::uint64_t s = substream_seed(seed(), label);
    seeds_[label] = s;
    return s;
  }

  template <class F>
  auto phase(const std::string& name, F&& body) {
    const auto t0 = std::chrono::steady_clock::now();
    struct Stamp {
      Run* run;
      std::string name;
      std::chrono::steady_clock::time_point t0;
      ~Stamp() {
        run->timings_[name] += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      }
    } stamp{this, name, t0};
    return body();
  }

  void write(const std::string& name, const std::string& bytes) {
    digests_[name] = phase("write", [&] { return io::write_file(dir_ / name, bytes); });
  }
  void write_json(const std::string& name, const json& j) { write(name, io::to_text(j)); }
  void write_table(const std::string& name, const io::Table& t) { write(name, io::to_text(t)); }

  const std::map<std::string, std::string>& digests() const { return digests_; }

  json manifest(int exit_code) const {
    json m = {{"schema", "manifest/1"},
              {"library_version", io::library_version},
              {"config", cfg_},
              {"workers", workers_},
              {"exit_code", exit_code},
              {"seeds", json::object()},
              {"timings_s", json::object()},
              {"digests", json::object()}};
    m["seeds"]["master"] = seed();
    for (const auto& [k, v] : seeds_) m["seeds"][k] = v;
    for (const auto& [k, v] : timings_) m["timings_s"][k] = v;
    for (const auto& [k, v] : digests_) m["digests"][k] = v;
    return m;
  }

  void finish(int exit_code) {
    io::write_file(dir_ / "manifest.json", io::to_text(manifest(exit_code)));
  }

 private:
  json cfg_;
  fs::path dir_;
  int workers_ = 1;
  std::map<std::string, std::uint64_t> seeds_;
  std::map<std::string, double> timings_;
  std::map<std::string, std::string> digests_;
};

// Commands -----------------------------------------------------------------------------

namespace commands_impl {

inline Environment environment(Run& run) {
  return sample_env(detail::env_spec(run.cfg()["environment"]), run.seed_for("environment"));
}

inline json env_json(const Environment& env, double lo, double hi) {
  if (const auto* qp = std::get_if<QuasiPeriodicEnv>(&env))
    return {{"kind", "torus"}, {"frequency", qp->frequency}, {"phase", qp->phase}};
  const auto& pe = std::get<PoissonEnv>(env);
  std::vector<double> pts;
  for (double x : points_in(pe, lo, hi)) pts.push_back(x + pe.offset);
  return {{"kind", "poisson"}, {"intensity", pe.intensity}, {"window", {lo, hi}}, {"points", pts}};
}

inline int env_sample(Run& run) {
  const json& s = run.cfg()["sample"];
  const int count = detail::get<int>(s["count"], "/sample/count");
  const double lo = detail::get<double>(s["lo"], "/sample/lo"), hi = detail::get<double>(s["hi"], "/sample/hi");
  require(count >= 1 && lo < hi, ErrorCode::config, "/sample: need count >= 1 and lo < hi");
  const EnvSpec spec = detail::env_spec(run.cfg()["environment"]);
  const std::uint64_t base = run.seed_for("env-sample");
  json out = {{"schema", "env/1"}, {"samples", json::array()}};
  run.phase("compute", [&] {
    for (int i = 0; i < count; ++i) {
      const std::uint64_t si = substream_seed(base, "draw", static_cast<std::uint64_t>(i));
      json e = env_json(sample_env(spec, si), lo, hi);
      e["index"] = i;
      out["samples"].push_back(std::move(e));
    }
  });
  run.write_json("env.json", out);
  return 0;
}

inline int twist_build(Run& run) {
  const Environment env = environment(run);
  const GenFunPtr g = detail::genfun_of(run.cfg());
  const TwistMap f = twist_from_genfun(g);
  const json& gr = run.cfg()["grid"];
  const double lo = detail::get<double>(gr["q_lo"], "/grid/q_lo"), hi = detail::get<double>(gr["q_hi"], "/grid/q_hi");
  const int nq = detail::get<int>(gr["nq"], "/grid/nq"), np = detail::get<int>(gr["np"], "/grid/np");
  require(nq >= 1 && np >= 2 && lo <= hi, ErrorCode::config, "/grid: need nq >= 1, np >= 2, q_lo <= q_hi");
  json out = {{"schema", "genfun/1"}, {"name", g->describe()}, {"frames", json::array()}};
  run.phase("compute", [&] {
    for (int i = 0; i < nq; ++i) {
      const double q = nq == 1 ? lo : lo + (hi - lo) * i / (nq - 1);
      const Frame fr = g->frame(env, q);
      json frame = {{"q", q}, {"qminus", fr.qminus}, {"qplus", fr.qplus}};
      std::vector<double> v, L, Lv, Lw, P, Q, Pimg;
      for (int k = 0; k < np; ++k) {
        const double vk = fr.qminus + (fr.qplus - fr.qminus) * k / (np - 1);
        const LValue l = g->eval(fr, vk);
        v.push_back(vk);
        L.push_back(l.L);
        Lv.push_back(l.Lv);
        Lw.push_back(l.Lw);
        const double p = -1.0 + 2.0 * k / (np - 1);
        const StripPoint y = f(env, {q, p});
        P.push_back(p);
        Q.push_back(y.q);
        Pimg.push_back(y.p);
      }
      frame["v"] = v;
      frame["L"] = L;
      frame["L_v"] = Lv;
      frame["L_omega"] = Lw;
      frame["map"] = {{"p", P}, {"Q", Q}, {"P", Pimg}};
      out["frames"].push_back(std::move(frame));
    }
  });
  run.write_json("genfun.json", out);
  return 0;
}

inline TwistMap area_defect_map(double defect) {
  return formula_map("area-defect", [defect](const Environment&, StripPoint x) {
    return StripPoint{x.q + x.p, x.p + defect * (1.0 - x.p * x.p)};
  });
}

inline int twist_verify(Run& run) {
  const json& cfg = run.cfg();
  const Environment env = environment(run);
  const json& m = cfg["map"];
  const auto kind = detail::get<std::string>(m["kind"], "/map/kind");
  TwistMap f;
  if (kind == "genfun") {
    f = twist_from_genfun(detail::genfun_of(cfg), detail::sign_of(m["sign"], "/map/sign"));
  } else if (kind == "shear") {
    f = shear_map();
  } else if (kind == "area-defect") {
    f = area_defect_map(detail::get<double>(m["defect"], "/map/defect"));
  } else if (kind == "hamiltonian") {
    MidpointOptions mo;
    mo.dt = detail::get<double>(m["dt"], "/map/dt");
    f = hamiltonian_path(detail::hamiltonian_of(cfg), 1, mo).at(detail::get<double>(m["t"], "/map/t"));
  } else {
    fail(ErrorCode::config, "/map/kind: expected genfun, shear, area-defect or hamiltonian");
  }
  const json& v = cfg["verify"];
  VerifyOptions vo;
  vo.n_samples = detail::get<int>(v["samples"], "/verify/samples");
  vo.q_lo = detail::get<double>(v["q_lo"], "/verify/q_lo");
  vo.q_hi = detail::get<double>(v["q_hi"], "/verify/q_hi");
  vo.fd_step = detail::get<double>(v["fd_step"], "/verify/fd_step");
  vo.seed = run.seed_for("verify");
  vo.tol.area = detail::get<double>(v["area"], "/verify/area");
  vo.tol.boundary = detail::get<double>(v["boundary"], "/verify/boundary");
  vo.tol.stationarity = detail::get<double>(v["stationarity"], "/verify/stationarity");
  const TwistReport r = run.phase("compute", [&] { return verify_twist(f, env, vo); });
  const json out = {{"schema", "report/1"},
                    {"kind", "twist-verify"},
                    {"map", f.name()},
                    {"sign", to_string(f.sign())},
                    {"samples", r.samples},
                    {"det_residual", r.det_residual},
                    {"boundary_residual", r.boundary_residual},
                    {"twist_margin_top", r.twist_margin_top},
                    {"twist_margin_bottom", r.twist_margin_bottom},
                    {"monotone_margin", r.monotone_margin},
                    {"stationarity_residual", r.stationarity_residual},
                    {"second_moment", r.second_moment},
                    {"pass", r.pass()},
                    {"failing", r.failing_clauses()}};
  run.write_json("report.json", out);
  return r.pass() ? 0 : 2;
}

inline int fixed_points(Run& run) {
  const json& cfg = run.cfg();
  const Environment env = environment(run);
  const CompositeGenFun chain = detail::chain_of(cfg);
  const json& s = cfg["search"];
  SearchWindow w;
  w.ell = detail::get<double>(s["ell"], "/search/ell");
  w.grid = detail::get<double>(s["grid"], "/search/grid");
  w.dedupe_radius = detail::get<double>(s["dedupe_radius"], "/search/dedupe_radius");
  const auto ells = detail::numbers(s["census"], "/search/census");
  require(!ells.empty() && ells.back() <= w.ell, ErrorCode::config, "/search/census: windows must lie within ell");
  const double tol = detail::get<double>(s["residual"], "/search/residual");

  const CriticalSet set = run.phase("search", [&] { return find_critical_points(chain, env, w, run.workers()); });
  std::vector<CriticalClassification> cls(set.points.size());
  run.phase("classify", [&] {
    parallel_for(set.points.size(), run.workers(),
                 [&](std::size_t i) { cls[i] = classify_critical(chain, env, set.points[i]); });
  });
  const Census cs = census_of(set, ells, w.dedupe_radius);

  io::Table t;
  t.schema = "fp/1";
  t.header = {"q", "p", "N", "class", "type", "det_hessian", "df_trace", "residual"};
  bool ok = !set.continuum || !set.points.empty();
  for (std::size_t i = 0; i < set.points.size(); ++i) {
    const CriticalPoint& cp = set.points[i];
    t.add({io::format_number(cp.fixed_point.q), io::format_number(cp.fixed_point.p), std::to_string(chain.N()),
           to_string(cp.hessian_class), to_string(cls[i].direct.type), io::format_number(cls[i].det_hessian),
           io::format_number(cls[i].direct.trace), io::format_number(cp.fp_residual)});
    ok = ok && cp.fp_residual < tol;
  }
  run.write_table("fp.csv", t);

  json census = {{"schema", "census/1"},   {"ells", cs.ells},         {"counts", cs.counts},
                 {"densities", cs.densities}, {"max_q", cs.max_q},    {"min_q", cs.min_q},
                 {"constant", cs.constant}, {"continuum", cs.continuum},
                 {"degenerate", set.degenerate.size()},
                 {"unbounded_both_sides", cs.unbounded_both_sides}};
  run.write_json("census.json", census);

  if (cfg["output"]["plots"].get<bool>()) {
    std::vector<std::vector<double>> phase, psi, dens;
    for (const auto& cp : set.points) phase.push_back({cp.fixed_point.q, cp.fixed_point.p});
    if (chain.N() == 0) {
      for (double q = -w.ell; q < w.ell; q += w.grid) psi.push_back({q, action(chain, env, q, {}).I});
    }
    for (std::size_t i = 0; i < cs.ells.size(); ++i)
      dens.push_back({cs.ells[i], static_cast<double>(cs.counts[i]), cs.densities[i]});
    if (!phase.empty()) run.write_table("phase-portrait.csv", io::plot_table(phase, io::PlotKind::phase_portrait));
    if (!psi.empty()) run.write_table("psi-graph.csv", io::plot_table(psi, io::PlotKind::psi_graph));
    run.write_table("density-vs-ell.csv", io::plot_table(dens, io::PlotKind::density_vs_ell));
  }
  return ok ? 0 : 2;
}

inline int density(Run& run) {
  const json& cfg = run.cfg();
  const json& pr = cfg["process"];
  TrigProcess p;
  if (!pr["frequency"].is_null()) {
    const auto f = detail::numbers(pr["frequency"], "/process/frequency");
    std::vector<double> a = pr["amplitude"].is_null()
                                ? std::vector<double>(f.size(), 1.0 / std::sqrt(static_cast<double>(f.size())))
                                : detail::numbers(pr["amplitude"], "/process/amplitude");
    p = trig_process(f, a);
  } else {
    p = random_trig_process(detail::get<int>(pr["modes"], "/process/modes"), run.seed_for("process"));
  }
  const Environment env = process_env(p, run.seed_for("process-env"));
  const json& r = cfg["rice"];
  const double ell = detail::get<double>(r["ell"], "/rice/ell");
  const double eps = detail::get<double>(r["eps"], "/rice/eps");
  const int n_mc = detail::get<int>(r["n_mc"], "/rice/n_mc");
  const double step = detail::get<double>(r["scan_step"], "/rice/scan_step");
  const std::uint64_t mc = run.seed_for("rice-mc");
  const DensityReport d = run.phase("compute", [&] { return density_report(p, env, ell, eps, n_mc, mc, step, run.workers()); });
  const bool bound = d.empirical >= d.x_eps - 1e-6;
  const json out = {{"schema", "rice/1"},     {"modes", p.frequency.size()}, {"frequency", p.frequency},
                    {"ell", d.ell},           {"count", d.count},            {"degenerate", d.degenerate},
                    {"empirical", d.empirical}, {"eps", d.eps},              {"x_eps", d.x_eps},
                    {"rice", d.rice},         {"mc_sd", d.mc_sd},            {"bandwidth", d.bandwidth},
                    {"n_mc", d.n_mc},         {"singular", d.singular},
                    {"relative_gap", d.empirical > 0 ? std::abs(d.empirical - d.rice) / d.empirical : 0.0},
                    {"mollified_bound_holds", bound}};
  run.write_json("rice.json", out);
  return bound ? 0 : 2;
}

inline int decompose(Run& run) {
  const json& cfg = run.cfg();
  const Environment env = environment(run);
  const json& c = cfg["decompose"];
  MidpointOptions mo;
  mo.dt = detail::get<double>(c["dt"], "/decompose/dt");
  const IsotopyPath path = hamiltonian_path(detail::hamiltonian_of(cfg), detail::get<int>(c["mesh"], "/decompose/mesh"), mo);
  DecompositionOptions dop;
  dop.q_lo = detail::get<double>(c["q_lo"], "/decompose/q_lo");
  dop.q_hi = detail::get<double>(c["q_hi"], "/decompose/q_hi");
  dop.grid_q = detail::get<int>(c["grid_q"], "/decompose/grid_q");
  dop.grid_p = detail::get<int>(c["grid_p"], "/decompose/grid_p");
  const int n = detail::get<int>(c["n"], "/decompose/n");
  const Decomposition d = run.phase("decompose", [&] {
    if (n > 0) return decompose_isotopy(path, env, n, dop);
    return decompose_to_target(path, env, detail::get<double>(c["target"], "/decompose/target"),
                               detail::get<int>(c["n_start"], "/decompose/n_start"),
                               detail::get<int>(c["n_max"], "/decompose/n_max"), dop);
  });
  const int cq = detail::get<int>(c["check_q"], "/decompose/check_q");
  const int cp = detail::get<int>(c["check_p"], "/decompose/check_p");
  require(cq >= 1 && cp >= 2, ErrorCode::config, "/decompose: need check_q >= 1 and check_p >= 2");
  const double err = run.phase("recompose", [&] {
    const TwistMap whole = compose(d.factors);
    const TwistMap f = path.at(1.0);
    double e = 0.0;
    for (int i = 0; i < cq; ++i)
      for (int k = 0; k < cp; ++k) {
        const StripPoint x{dop.q_lo + (dop.q_hi - dop.q_lo) * i / cq, -1.0 + 2.0 * k / (cp - 1)};
        const StripPoint a = whole(env, x), b = f(env, x);
        e = std::max({e, std::abs(a.q - b.q), std::abs(a.p - b.p)});
      }
    return e;
  });
  VerifyOptions vo;
  vo.n_samples = detail::get<int>(c["verify_samples"], "/decompose/verify_samples");
  vo.q_lo = dop.q_lo;
  vo.q_hi = dop.q_hi;
  vo.seed = run.seed_for("factor-verify");
  json factors = json::array();
  bool factors_ok = true;
  run.phase("verify", [&] {
    for (std::size_t i = 0; i < d.factors.size(); ++i) {
      const TwistReport r = verify_twist(d.factors[i], env, vo);
      const bool alternates = d.signs[i] == (i % 2 == 0 ? MonotoneSign::negative : MonotoneSign::positive);
      factors_ok = factors_ok && r.pass() && alternates;
      factors.push_back({{"index", i},
                         {"name", d.factors[i].name()},
                         {"sign", to_string(d.signs[i])},
                         {"det_residual", r.det_residual},
                         {"monotone_margin", r.monotone_margin},
                         {"pass", r.pass()},
                         {"failing", r.failing_clauses()}});
    }
  });
  const double tol = detail::get<double>(c["tolerance"], "/decompose/tolerance");
  const json out = {{"schema", "decomp/1"},
                    {"n", d.n},
                    {"delta", d.delta},
                    {"deltas", d.deltas},
                    {"monotone_margins", d.monotone_margins},
                    {"factors", factors},
                    {"recomposition_error", err},
                    {"recomposition_ok", err < tol}};
  run.write_json("decomp.json", out);
  return err < tol && factors_ok ? 0 : 2;
}

inline int moser(Run& run) {
  const json& cfg = run.cfg();
  const Environment env = environment(run);
  require(std::holds_alternative<QuasiPeriodicEnv>(env), ErrorCode::config,
          "/environment/kind: the corrector needs a torus environment");
  const json& e = cfg["eta"];
  const auto mode = detail::get<std::vector<int>>(e["mode"], "/eta/mode");
  require(mode.size() == detail::torus_dim(cfg), ErrorCode::config, "/eta/mode: length must match frequency");
  StationaryObservable eta;
  eta.add_cosine(mode, detail::get<double>(e["amplitude"], "/eta/amplitude"), detail::get<double>(e["phase"], "/eta/phase"),
                 Poly{detail::numbers(e["profile"], "/eta/profile")});
  const MoserSolution sol = run.phase("solve", [&] { return solve_moser(eta, env, run.workers()); });
  const json& r = cfg["residuals"];
  const MoserResiduals res = run.phase("residuals", [&] {
    return moser_residuals(sol, eta, detail::get<int>(r["nq"], "/residuals/nq"), detail::get<int>(r["np"], "/residuals/np"),
                           detail::get<double>(r["fd"], "/residuals/fd"));
  });
  bool ok = res.laplacian_u < detail::get<double>(r["laplacian"], "/residuals/laplacian") &&
            res.boundary_up < detail::get<double>(r["boundary"], "/residuals/boundary");

  json atoms = json::array();
  for (const auto& a : sol.atoms)
    atoms.push_back({{"mode", a.mode},
                     {"z", a.z},
                     {"coef", detail::complex_json(a.coef)},
                     {"weight", detail::complex_json(a.weight)},
                     {"gamma1", detail::complex_json(a.gamma1)},
                     {"gamma2", detail::complex_json(a.gamma2)}});
  json out = {{"schema", "moser/1"},
              {"k", sol.k.c},
              {"h0", sol.h0.c},
              {"atoms", atoms},
              {"residuals",
               {{"laplacian_u", res.laplacian_u},
                {"laplacian_w", res.laplacian_w},
                {"laplacian_h", res.laplacian_h},
                {"boundary_up", res.boundary_up},
                {"h0_right", res.h0_right}}}};

  const json& c = cfg["corrected"];
  if (detail::get<bool>(c["check"], "/corrected/check")) {
    const DensityPath dp = sheared_flow_path(cosine_hamiltonian(detail::get<double>(c["beta"], "/corrected/beta"), mode.size()),
                                             detail::get<double>(c["alpha"], "/corrected/alpha"), mode.size());
    const int mesh = detail::get<int>(c["mesh"], "/corrected/mesh");
    const int samples = detail::get<int>(c["samples"], "/corrected/samples");
    MoserOptions mopt;
    mopt.workers = 1;
    const IsotopyPath path = moser_correct(dp, mesh, mopt);
    Rng rng(run.seed_for("corrected-samples"), "corrected");
    double raw = 0.0, fixed = 0.0;
    run.phase("corrected", [&] {
      for (int j = 1; j <= mesh; ++j) {
        const double t = static_cast<double>(j) / mesh;
        const TwistMap f = dp.map(t), lam = path.at(t);
        for (int i = 0; i < samples; ++i) {
          const StripPoint x{rng.uniform(-2, 2), rng.uniform(-0.98, 0.98)};
          raw = std::max(raw, std::abs(fd_jacobian(f, env, x).det() - 1.0));
          fixed = std::max(fixed, std::abs(fd_jacobian(lam, env, x).det() - 1.0));
        }
      }
    });
    const double tol = detail::get<double>(c["tolerance"], "/corrected/tolerance");
    out["corrected"] = {{"raw_det_residual", raw}, {"det_residual", fixed}, {"pass", fixed < tol}};
    ok = ok && fixed < tol;
  }
  out["pass"] = ok;
  run.write_json("moser.json", out);
  return ok ? 0 : 2;
}

inline int flow(Run& run) {
  const json& cfg = run.cfg();
  const Environment env = environment(run);
  const StationaryHamiltonian h = detail::hamiltonian_of(cfg);
  const json& f = cfg["flow"];
  MidpointOptions mo;
  mo.dt = detail::get<double>(f["dt"], "/flow/dt");
  const double t0 = detail::get<double>(f["t0"], "/flow/t0"), t1 = detail::get<double>(f["t1"], "/flow/t1");
  const int samples = detail::get<int>(f["samples"], "/flow/samples");
  require(samples >= 2, ErrorCode::config, "/flow/samples: need at least 2");
  const auto pts = detail::get<std::vector<std::vector<double>>>(f["points"], "/flow/points");
  const double tol = detail::get<double>(f["tolerance"], "/flow/tolerance");
  json traj = json::array();
  bool ok = true;
  run.phase("compute", [&] {
    for (const auto& pt : pts) {
      require(pt.size() == 2, ErrorCode::config, "/flow/points: expected [q, p] pairs");
      const StripPoint x = strip_point(pt[0], pt[1]);
      std::vector<double> ts, qs, ps;
      for (int k = 0; k < samples; ++k) {
        const double t = t0 + (t1 - t0) * k / (samples - 1);
        const StripPoint y = hamiltonian_flow(h, env, x, t0, t, mo);
        ts.push_back(t);
        qs.push_back(y.q);
        ps.push_back(y.p);
      }
      const StripPoint end{qs.back(), ps.back()};
      const StripPoint back = hamiltonian_flow(h, env, end, t1, t0, mo);
      const double rev = std::max(std::abs(back.q - x.q), std::abs(back.p - x.p));
      double det = 0.0;
      if (h.twice_differentiable()) det = std::abs(hamiltonian_flow_jacobian(h, env, x, t0, t1, mo).second.det() - 1.0);
      ok = ok && rev < tol && det < tol;
      traj.push_back({{"start", detail::point_json(x)},
                      {"t", ts},
                      {"q", qs},
                      {"p", ps},
                      {"reversibility", rev},
                      {"det_residual", det}});
    }
  });
  run.write_json("flow.json", {{"schema", "report/1"}, {"kind", "flow"}, {"trajectories", traj}, {"pass", ok}});
  return ok ? 0 : 2;
}

}  // namespace commands_impl

// Entry point ------------------------------------------------------------------------------

/// Runs one command. Errors go to `err` and, when the output directory is
/// known, to error.json.
inline int run(const RunOptions& opt, std::ostream& err) {
  fs::path dir = opt.out_dir.value_or("out");
  const auto report = [&](const std::string& code, const std::string& msg, int exit_code) {
    err << "error: " << msg << "\n";
    try {
      io::write_file(dir / "error.json", io::to_text(json{{"schema", "error/1"}, {"code", code}, {"message", msg}}));
    } catch (...) {
    }
    return exit_code;
  };
  json cfg;
  try {
    const auto& cmds = commands();
    require(std::find(cmds.begin(), cmds.end(), opt.command) != cmds.end(), ErrorCode::config,
            "unknown command '" + opt.command + "'");
    require(fs::exists(opt.config), ErrorCode::config, "missing config " + opt.config.string());
    cfg = materialize_config(io::load_json(opt.config), opt.command);
    if (opt.seed) cfg["seed"] = *opt.seed;
    if (!opt.out_dir) dir = cfg["output"]["dir"].get<std::string>();
    require(cfg["seed"].is_number_unsigned() || cfg["seed"].get<long long>() >= 0, ErrorCode::config,
            "/seed: expected a non-negative integer");
  } catch (const Error& e) {
    return report(std::string(to_string(e.code())), e.what(), 1);
  }
  const int workers = worker_count(opt.workers.value_or(cfg["workers"].get<int>()));
  Run run(cfg, dir, workers);
  static const std::map<std::string, std::function<int(Run&)>> table{
      {"env-sample", commands_impl::env_sample}, {"twist-build", commands_impl::twist_build},
      {"twist-verify", commands_impl::twist_verify}, {"fixed-points", commands_impl::fixed_points},
      {"density", commands_impl::density},       {"decompose", commands_impl::decompose},
      {"moser", commands_impl::moser},           {"flow", commands_impl::flow}};
  int code = 0;
  try {
    code = table.at(opt.command)(run);
  } catch (const Error& e) {
    code = report(std::string(to_string(e.code())), e.what(), e.code() == ErrorCode::config ? 1 : 3);
  } catch (const std::exception& e) {
    code = report("internal", e.what(), 3);
  }
  run.finish(code);
  return code;
}

}  // namespace rtl::cli
