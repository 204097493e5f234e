// vproto command-line driver: synth, learn, eval, verify, phase2.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "vproto/commands.hpp"

namespace fs = std::filesystem;
using namespace vproto;

namespace {

int finish(const CommandResult& res, const std::optional<fs::path>& report_path) {
  std::cout << res.report.dump(2) << '\n';
  if (report_path) {
    try {
      write_json_file(*report_path, res.report);
    } catch (const Error& e) {
      std::cerr << e.what() << '\n';
      return kExitError;
    }
  }
  if (res.exit_code == kExitError) std::cerr << res.report["error"]["message"].get<std::string>() << '\n';
  return res.exit_code;
}

std::optional<fs::path> report_in(const fs::path& dir, const std::string& name, const std::string& explicit_path) {
  if (!explicit_path.empty()) return fs::path(explicit_path);
  if (fs::is_directory(dir)) return dir / name;
  return std::nullopt;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Vision prototype learning on synthetic cone benchmarks"};
  app.set_version_flag("--version", std::string("vproto ") + kVersion);
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a cone pair and dense scenes from a JSON config");
  std::string synth_config;
  std::string synth_out;
  synth->add_option("config", synth_config, "Config JSON path")->required();
  synth->add_option("--out", synth_out, "Output directory (overrides output_dir in the config)");

  // learn
  auto* learn = app.add_subcommand("learn", "Learn vision prototypes by projected gradient descent");
  LearnArgs la;
  std::string learn_dir, learn_out, learn_report, learn_init = "warm", learn_mode = "instance";
  bool no_line_search = false;
  learn->add_option("dir", learn_dir, "Dataset directory written by synth")->required();
  learn->add_option("--tau-t", la.cfg.tau_t, "Teacher temperature")->capture_default_str();
  learn->add_option("--tau-i", la.cfg.tau_i, "Student temperature")->capture_default_str();
  learn->add_option("--alpha", la.cfg.alpha, "Step size (initial trial step with line search)")->capture_default_str();
  learn->add_option("--tw", la.cfg.t_w, "Iteration budget")->capture_default_str();
  learn->add_option("--eta", la.cfg.eta, "Prototype norm bound")->capture_default_str();
  learn->add_option("--grad-tol", la.cfg.grad_tol, "Stop when the projected gradient norm falls below this")
      ->capture_default_str();
  learn->add_option("--init", learn_init, "warm | random")->check(CLI::IsMember({"warm", "random"}))->capture_default_str();
  learn->add_option("--mode", learn_mode, "instance | class")->check(CLI::IsMember({"instance", "class"}))
      ->capture_default_str();
  learn->add_option("--seed", la.cfg.seed, "Seed for random init")->capture_default_str();
  learn->add_flag("--no-line-search", no_line_search, "Use the fixed step alpha");
  learn->add_option("--out", learn_out, "Prototype EMT path (default <dir>/w.emt)");
  learn->add_option("--report", learn_report, "Report path (default <dir>/learn_report.json)");

  // eval
  auto* eval = app.add_subcommand("eval", "Pseudo-mask mIoU of text vs learned prototypes");
  EvalArgs ea;
  std::string eval_dir, eval_protos, eval_masks, eval_report;
  eval->add_option("dir", eval_dir, "Dataset directory")->required();
  eval->add_option("--protos", eval_protos, "Prototype EMT path (default <dir>/w.emt)");
  eval->add_option("--phi", ea.phi, "Activation threshold")->capture_default_str();
  eval->add_option("--masks-out", eval_masks, "Pseudo-mask JSON path (default <dir>/masks.json)");
  eval->add_option("--report", eval_report, "Report path (default <dir>/eval_report.json)");

  // verify
  auto* verify = app.add_subcommand("verify", "Run a property suite with committed seeds");
  std::string suite = "all";
  std::string verify_report;
  verify->add_option("--suite", suite, "grads | prop1 | thm1 | thm2 | thm3 | all")
      ->check(CLI::IsMember(verify_suite_names()))
      ->capture_default_str();
  verify->add_option("--report", verify_report, "Also write the report here");

  // phase2
  auto* phase2 = app.add_subcommand("phase2", "Train the dense decoder with and without the RSC term");
  Phase2Args pa;
  std::string p2_dir, p2_protos, p2_masks, p2_report;
  phase2->add_option("dir", p2_dir, "Dataset directory")->required();
  phase2->add_option("--protos", p2_protos, "Prototype EMT path (default <dir>/w.emt)");
  phase2->add_option("--masks", p2_masks, "Pseudo-mask JSON path (default <dir>/masks.json)");
  phase2->add_option("--lambda-ce", pa.cfg.lambda_ce, "CE weight")->capture_default_str();
  phase2->add_option("--lambda-rsc", pa.cfg.lambda_rsc, "RSC weight; 0 trains the baseline only")->capture_default_str();
  phase2->add_option("--tau-rsc", pa.cfg.tau_rsc, "RSC temperature")->capture_default_str();
  phase2->add_option("--iterations", pa.cfg.iterations, "Iteration budget")->capture_default_str();
  phase2->add_option("--lr", pa.cfg.lr, "Initial trial step")->capture_default_str();
  phase2->add_option("--batch", pa.cfg.batch, "Region pairs per RSC batch")->capture_default_str();
  phase2->add_option("--seed", pa.cfg.seed, "Decoder init and pair sampling seed")->capture_default_str();
  phase2->add_option("--report", p2_report, "Report path (default <dir>/phase2_report.json)");

  CLI11_PARSE(app, argc, argv);

  if (*synth) {
    std::optional<fs::path> out;
    if (!synth_out.empty()) out = synth_out;
    const auto res = cmd_synth(synth_config, out);
    std::optional<fs::path> rp;
    if (res.exit_code == kExitOk) rp = fs::path(res.report["config"]["output_dir"].get<std::string>()) / "synth_report.json";
    return finish(res, rp);
  }
  if (*learn) {
    la.dir = learn_dir;
    la.cfg.init = learn_init == "random" ? InitMode::RandomInSpan : InitMode::WarmFromZProjected;
    la.cfg.mode = learn_mode == "class" ? KlMode::Class : KlMode::Instance;
    la.cfg.line_search = !no_line_search;
    if (!learn_out.empty()) la.out = learn_out;
    return finish(cmd_learn(la), report_in(la.dir, "learn_report.json", learn_report));
  }
  if (*eval) {
    ea.dir = eval_dir;
    if (!eval_protos.empty()) ea.protos = eval_protos;
    if (!eval_masks.empty()) ea.masks_out = eval_masks;
    return finish(cmd_eval(ea), report_in(ea.dir, "eval_report.json", eval_report));
  }
  if (*verify) {
    std::optional<fs::path> rp;
    if (!verify_report.empty()) rp = verify_report;
    return finish(cmd_verify(suite), rp);
  }
  if (*phase2) {
    pa.dir = p2_dir;
    if (!p2_protos.empty()) pa.protos = p2_protos;
    if (!p2_masks.empty()) pa.masks = p2_masks;
    return finish(cmd_phase2(pa), report_in(pa.dir, "phase2_report.json", p2_report));
  }
  return kExitError;
}
