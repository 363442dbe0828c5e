#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "rtl/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Random twist map laboratory"};
  app.require_subcommand(1);
  rtl::cli::RunOptions opt;
  std::string config, out;
  int workers = 0;
  std::uint64_t seed = 0;
  for (const auto& name : rtl::cli::commands()) {
    CLI::App* sub = app.add_subcommand(name, "run the " + name + " pipeline");
    sub->add_option("-c,--config", config, "cfg/1 JSON file")->required();
    sub->add_option("-o,--out", out, "output directory (overrides output.dir)");
    sub->add_option("-w,--workers", workers, "worker threads (overrides config and RTL_THREADS)")->check(CLI::PositiveNumber);
    sub->add_option("-s,--seed", seed, "master seed (overrides config)");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }
  CLI::App* sub = app.get_subcommands().front();
  opt.command = sub->get_name();
  opt.config = config;
  if (!out.empty()) opt.out_dir = out;
  if (sub->count("--workers")) opt.workers = workers;
  if (sub->count("--seed")) opt.seed = seed;
  return rtl::cli::run(opt, std::cerr);
}
