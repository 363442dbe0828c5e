#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "rtl/cli.hpp"

using namespace rtl;
using rtl::io::json;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("rtl_cli_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

int run_cfg(const std::string& command, const json& cfg, const fs::path& dir, std::optional<int> workers = {}) {
  io::write_file(dir / "cfg.json", io::to_text(cfg));
  cli::RunOptions opt;
  opt.command = command;
  opt.config = dir / "cfg.json";
  opt.out_dir = dir / "out";
  opt.workers = workers;
  std::ostringstream err;
  return cli::run(opt, err);
}

json cosine_search(double ell) {
  return {{"seed", 7},
          {"environment", {{"phase", {0.0, 0.0}}}},
          {"genfun", {{"kind", "cosine"}, {"eps", 0.1}}},
          {"search", {{"ell", ell}, {"census", {1.0, ell}}}}};
}

}  // namespace

TEST(Cli, NumbersKeepSeventeenDigits) {
  EXPECT_EQ(io::format_number(0.1), "0.10000000000000001");
  EXPECT_EQ(io::format_number(-2.0), "-2");
  const json j = {{"x", 0.1}, {"y", {1.0 / 3.0, 2.0}}, {"s", "a"}};
  const json back = json::parse(io::to_text(j));
  EXPECT_EQ(back["x"].get<double>(), 0.1);
  EXPECT_EQ(back["y"][0].get<double>(), 1.0 / 3.0);
  EXPECT_EQ(io::to_text(back), io::to_text(j));
}

TEST(Cli, DigestIsSha256) {
  EXPECT_EQ(io::sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Cli, TableRoundTrips) {
  const io::Table t = io::plot_table({{0.5, -1.0}, {1.0 / 7.0, 0.25}}, io::PlotKind::phase_portrait);
  const io::Table back = io::parse_table(io::to_text(t));
  EXPECT_EQ(back.schema, "plot-phase/1");
  EXPECT_EQ(back.header, (std::vector<std::string>{"q", "p"}));
  ASSERT_EQ(back.rows.size(), 2u);
  EXPECT_EQ(back.number(1, "q"), 1.0 / 7.0);
  EXPECT_EQ(io::plot_table({{5, 20, 2}}, io::PlotKind::density_vs_ell).header.size(), 3u);
  EXPECT_EQ(io::plot_table({{0, 1}}, io::PlotKind::psi_graph).header[1], "psi");
  EXPECT_THROW(io::plot_table({}, io::PlotKind::psi_graph), Error);
}

TEST(Cli, DefaultsAreMaterialized) {
  const json cfg = cli::materialize_config({{"command", "fixed-points"}, {"search", {{"ell", 5.0}}}}, "");
  EXPECT_EQ(cfg["search"]["ell"], 5.0);
  EXPECT_EQ(cfg["search"]["grid"], 0.05);
  EXPECT_EQ(cfg["chain"]["n"], 0);
  EXPECT_EQ(cfg["schema"], "cfg/1");
  EXPECT_TRUE(cfg["environment"]["phase"].is_null());
}

TEST(Cli, SchemaViolationsNameTheKey) {
  const auto message = [](const json& user, const std::string& cmd) -> std::string {
    try {
      cli::materialize_config(user, cmd);
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::config);
      return e.what();
    }
    return "";
  };
  EXPECT_NE(message({{"search", {{"elll", 3.0}}}}, "fixed-points").find("/search/elll: unknown key"), std::string::npos);
  EXPECT_NE(message({{"seed", "x"}}, "density").find("/seed"), std::string::npos);
  EXPECT_NE(message({{"seed", 1.5}}, "density").find("/seed: expected an integer"), std::string::npos);
  EXPECT_NE(message({{"command", "moser"}}, "flow").find("/command"), std::string::npos);
  EXPECT_NE(message({{"schema", "cfg/2"}}, "flow").find("/schema"), std::string::npos);
  EXPECT_NE(message(json::object(), "plot").find("unknown command"), std::string::npos);
}

TEST(Cli, UsageErrorsExitOne) {
  const fs::path d = scratch("usage");
  cli::RunOptions opt;
  opt.command = "fixed-points";
  opt.config = d / "missing.json";
  opt.out_dir = d / "out";
  std::ostringstream err;
  EXPECT_EQ(cli::run(opt, err), 1);
  EXPECT_EQ(io::load_json(d / "out" / "error.json")["code"], "config");
  EXPECT_EQ(run_cfg("fixed-points", {{"search", {{"bogus", 1}}}}, d), 1);
  EXPECT_EQ(run_cfg("moser", {{"environment", {{"kind", "poisson"}}}}, d), 1);
}

TEST(Cli, ModuleErrorsExitThree) {
  const fs::path d = scratch("module");
  const json cfg = {{"hamiltonian", {{"kind", "kinetic"}}}, {"decompose", {{"n", 1}, {"mesh", 1}}}};
  EXPECT_EQ(run_cfg("decompose", cfg, d), 3);
  const json e = io::load_json(d / "out" / "error.json");
  EXPECT_EQ(e["code"], "decomposition_step");
  EXPECT_NE(e["message"].get<std::string>().find("n >= 2"), std::string::npos);
  EXPECT_EQ(io::load_json(d / "out" / "manifest.json")["exit_code"], 3);
}

TEST(Cli, NonAreaPreservingMapFailsVerification) {
  const fs::path d = scratch("defect");
  const json cfg = {{"map", {{"kind", "area-defect"}, {"defect", 0.1}}}, {"verify", {{"samples", 200}}}};
  EXPECT_EQ(run_cfg("twist-verify", cfg, d), 2);
  const json r = io::load_json(d / "out" / "report.json");
  EXPECT_EQ(r["schema"], "report/1");
  EXPECT_FALSE(r["pass"].get<bool>());
  EXPECT_EQ(r["failing"], json::array({"area"}));
  EXPECT_NEAR(r["det_residual"].get<double>(), 0.2, 0.01);
  EXPECT_EQ(run_cfg("twist-verify", {{"map", {{"kind", "genfun"}}}, {"verify", {{"samples", 200}}}}, d), 0);
}

TEST(Cli, FixedPointsTableAndCensus) {
  const fs::path d = scratch("fp");
  json cfg = cosine_search(2.0);
  cfg["output"] = {{"plots", true}};
  EXPECT_EQ(run_cfg("fixed-points", cfg, d), 0);
  const io::Table fp = io::load_table(d / "out" / "fp.csv");
  EXPECT_EQ(fp.schema, "fp/1");
  EXPECT_EQ(fp.header, (std::vector<std::string>{"q", "p", "N", "class", "type", "det_hessian", "df_trace", "residual"}));
  ASSERT_EQ(fp.rows.size(), 8u);
  for (std::size_t i = 0; i < fp.rows.size(); ++i) {
    EXPECT_NEAR(fp.number(i, "q"), -2.0 + 0.5 * i, 1e-8);
    EXPECT_LT(std::abs(fp.number(i, "p")), 1e-8);
    EXPECT_LT(fp.number(i, "residual"), 1e-8);
  }
  const json cs = io::load_json(d / "out" / "census.json");
  EXPECT_EQ(cs["schema"], "census/1");
  EXPECT_EQ(cs["counts"], json::array({4, 8}));
  EXPECT_EQ(io::load_table(d / "out" / "phase-portrait.csv").rows.size(), 8u);
  EXPECT_EQ(io::load_table(d / "out" / "psi-graph.csv").rows.size(), 80u);
  EXPECT_EQ(io::load_table(d / "out" / "density-vs-ell.csv").number(1, "density"), 2.0);
  const json m = io::load_json(d / "out" / "manifest.json");
  EXPECT_EQ(m["schema"], "manifest/1");
  EXPECT_EQ(m["config"]["search"]["grid"], 0.05);
  EXPECT_EQ(m["digests"]["fp.csv"], io::sha256_hex(io::read_file(d / "out" / "fp.csv")));
  EXPECT_TRUE(m["timings_s"].contains("search"));
}

TEST(Cli, DigestsDoNotDependOnWorkers) {
  const json cfg = {{"seed", 3},
                    {"genfun", {{"kind", "cosine"}, {"eps", 0.05}, {"scale", 0.5}}},
                    {"chain", {{"n", 1}}},
                    {"search", {{"ell", 2.0}, {"census", {1.0, 2.0}}}}};
  std::vector<json> digests;
  for (int w : {1, 3, 1}) {
    const fs::path d = scratch("workers" + std::to_string(digests.size()));
    EXPECT_EQ(run_cfg("fixed-points", cfg, d, w), 0);
    digests.push_back(io::load_json(d / "out" / "manifest.json")["digests"]);
  }
  EXPECT_EQ(digests[0], digests[1]);
  EXPECT_EQ(digests[0], digests[2]);
}

TEST(Cli, EnvironmentSamplesRoundTrip) {
  const fs::path d = scratch("env");
  const json cfg = {{"seed", 11},
                    {"environment", {{"kind", "poisson"}, {"window", {-5.0, 5.0}}}},
                    {"sample", {{"count", 2}, {"lo", -5.0}, {"hi", 5.0}}}};
  EXPECT_EQ(run_cfg("env-sample", cfg, d), 0);
  const json e = io::load_json(d / "out" / "env.json");
  EXPECT_EQ(e["schema"], "env/1");
  ASSERT_EQ(e["samples"].size(), 2u);
  EXPECT_NE(e["samples"][0]["points"], e["samples"][1]["points"]);
  for (double x : e["samples"][0]["points"].get<std::vector<double>>()) {
    EXPECT_GE(x, -5.0);
    EXPECT_LT(x, 5.0);
  }
  const json m = io::load_json(d / "out" / "manifest.json");
  EXPECT_EQ(m["seeds"]["master"], 11);
  EXPECT_TRUE(m["seeds"].contains("env-sample"));
}

TEST(Cli, TwistBuildTabulatesTheGeneratingFunction) {
  const fs::path d = scratch("build");
  const json cfg = {{"genfun", {{"kind", "constant"}}}, {"grid", {{"q_lo", 0.0}, {"q_hi", 1.0}, {"nq", 2}, {"np", 5}}}};
  EXPECT_EQ(run_cfg("twist-build", cfg, d), 0);
  const json g = io::load_json(d / "out" / "genfun.json");
  EXPECT_EQ(g["schema"], "genfun/1");
  ASSERT_EQ(g["frames"].size(), 2u);
  // H = a generates the shear: L = v^2 / 2 on [-1, 1] and Q = q + p.
  const json& f = g["frames"][1];
  for (std::size_t k = 0; k < 5; ++k) {
    const double v = f["v"][k].get<double>();
    EXPECT_NEAR(f["L_v"][k].get<double>(), v, 1e-9);
    EXPECT_NEAR(f["map"]["Q"][k].get<double>(), 1.0 + f["map"]["p"][k].get<double>(), 1e-9);
  }
}

TEST(Cli, FlowAndShearDecomposition) {
  const fs::path d = scratch("flow");
  const json flow = {{"environment", {{"kind", "poisson"}, {"window", {-3.0, 3.0}}, {"margin", 3.0}}},
                     {"flow", {{"points", {{0.0, 0.5}, {1.0, 1.0}}}, {"samples", 3}}}};
  EXPECT_EQ(run_cfg("flow", flow, d), 0);
  const json f = io::load_json(d / "out" / "flow.json");
  EXPECT_EQ(f["trajectories"][1]["p"], json::array({1.0, 1.0, 1.0}));
  const json dec = {{"hamiltonian", {{"kind", "kinetic"}}}, {"decompose", {{"n", 2}, {"mesh", 2}, {"tolerance", 1e-12}}}};
  EXPECT_EQ(run_cfg("decompose", dec, d), 0);
  const json r = io::load_json(d / "out" / "decomp.json");
  EXPECT_EQ(r["schema"], "decomp/1");
  EXPECT_EQ(r["factors"].size(), 4u);
  EXPECT_EQ(r["factors"][0]["sign"], "negative");
  EXPECT_LT(r["recomposition_error"].get<double>(), 1e-12);
}
