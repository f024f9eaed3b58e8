// hmlab: polygon | flow | diag | export, driven by a key-value config.
#include <CLI11.hpp>

#include "hmlab/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Harmonic maps from the plane to hyperbolic 3-space asymptotic to twisted ideal polygons"};
  app.require_subcommand(1, 1);
  std::string config, out, checkpoint;
  bool resume = false, force = false, history = false;
  int threads = 0;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config, "run configuration file")->required();
    sub->add_option("--out", out, "output directory (overrides output.dir)");
    sub->add_option("--threads", threads, "worker threads (default: HMLAB_THREADS or 1)");
  };
  auto* polygon = app.add_subcommand("polygon", "validate the polygon and write polygon.json");
  auto* flow = app.add_subcommand("flow", "run the planar and the 3D heat flow");
  auto* diag = app.add_subcommand("diag", "evaluate diagnostics and write report.json");
  auto* exp = app.add_subcommand("export", "write field CSV and PLY meshes");
  for (auto* s : {polygon, flow, diag, exp}) common(s);
  flow->add_flag("--resume", resume, "continue the run in the output directory");
  flow->add_flag("--force", force, "overwrite an existing run");
  flow->add_flag("--history", history, "keep every 3D checkpoint as flow.ckpt.<step>");
  for (auto* s : {diag, exp}) s->add_option("--checkpoint", checkpoint, "checkpoint to evaluate (default flow.ckpt)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : hmlab::exit_invalid;
  }

  hmlab::RunConfig cfg;
  try {
    cfg = hmlab::load_config(config);
  } catch (const hmlab::InvalidInput& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return hmlab::exit_invalid;
  }
  hmlab::CommandOptions opt;
  opt.out = out.empty() ? cfg.out : out;
  opt.resume = resume;
  opt.force = force;
  opt.history = history;
  opt.checkpoint = checkpoint;
  if (threads <= 0)
    if (const char* env = std::getenv("HMLAB_THREADS")) threads = std::atoi(env);
  opt.threads = std::max(1, threads);
  if (opt.out.empty()) {
    std::cerr << "invalid input: no output directory (set output.dir or --out)\n";
    return hmlab::exit_invalid;
  }
  if (resume && force) {
    std::cerr << "invalid input: --resume and --force are exclusive\n";
    return hmlab::exit_invalid;
  }
  if (polygon->parsed()) return hmlab::cmd_polygon(cfg, opt);
  if (flow->parsed()) return hmlab::cmd_flow(cfg, opt);
  if (diag->parsed()) return hmlab::cmd_diag(cfg, opt);
  return hmlab::cmd_export(cfg, opt);
}
