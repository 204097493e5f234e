#ifndef VPROTO_COMMANDS_HPP
#define VPROTO_COMMANDS_HPP

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "vproto/io.hpp"
#include "vproto/verify.hpp"

namespace vproto {

namespace fs = std::filesystem;

/// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitCheckFailed = 2;

struct CommandResult {
  int exit_code = kExitOk;
  json report;
};

/// Exclusive marker file that keeps two commands from writing one directory.
class DirLock {
 public:
  explicit DirLock(const fs::path& dir) : path_(dir / ".vproto.lock") {
    file_ = std::fopen(path_.string().c_str(), "wx");
    if (file_ == nullptr) throw Error(ErrorCode::Io, "output directory is locked or unwritable: " + path_.string());
  }
  ~DirLock() {
    std::fclose(file_);
    std::error_code ec;
    fs::remove(path_, ec);
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  fs::path path_;
  std::FILE* file_ = nullptr;
};

/// VPROTO_SEED, when set, replaces the configured seed.
inline std::optional<std::uint64_t> seed_override() {
  const char* s = std::getenv("VPROTO_SEED");
  if (s == nullptr || *s == '\0') return std::nullopt;
  try {
    std::size_t used = 0;
    const auto v = std::stoull(s, &used);
    if (used != std::string(s).size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw Error(ErrorCode::ConfigParse, std::string("VPROTO_SEED is not an unsigned integer: ") + s);
  }
}

class Stopwatch {
 public:
  double ms() const {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

namespace detail {

inline json report_skeleton(const std::string& command) {
  return {{"format", kReportFormat}, {"command", command}, {"versions", versions_json()}, {"status", "ok"}};
}

inline CommandResult error_result(json report, const Error& e) {
  report["status"] = "error";
  report["error"] = {{"code", std::string(to_string(e.code()))}, {"message", e.what()}};
  return {kExitError, std::move(report)};
}

inline void require_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(ErrorCode::Io, "directory does not exist: " + dir.string());
}

}  // namespace detail

// ---- synth -----------------------------------------------------------------

inline CommandResult cmd_synth(const fs::path& config_path, const std::optional<fs::path>& out_override) {
  json report = detail::report_skeleton("synth");
  Stopwatch total;
  try {
    SynthFile sf = synth_config_from_json(read_json_file(config_path));
    if (const auto s = seed_override()) sf.config.seed = *s;
    const fs::path out = out_override ? *out_override : fs::path(sf.output_dir.empty() ? "." : sf.output_dir);
    detail::require_dir(out);
    report["config"] = to_json(sf.config);
    report["config"]["output_dir"] = out.string();
    DirLock lock(out);
    Stopwatch gen;
    const ConePair cone = make_cone_pair(sf.config);
    const auto scenes = make_scenes(sf.config, cone);
    const double gen_ms = gen.ms();
    const json manifest = save_dataset(out, sf.config, cone, scenes);
    report["result"] = {{"manifest", manifest},
                        {"span_dim", cone.vision_basis.rows()},
                        {"vision_samples", cone.vision.rows()},
                        {"scenes", scenes.size()}};
    report["timing_ms"] = {{"generate", gen_ms}, {"total", total.ms()}};
    return {kExitOk, report};
  } catch (const Error& e) {
    return detail::error_result(report, e);
  }
}

// ---- learn -----------------------------------------------------------------

struct LearnArgs {
  fs::path dir;
  LearnConfig cfg;
  std::optional<fs::path> out;  // defaults to <dir>/w.emt
};

inline CommandResult cmd_learn(LearnArgs args) {
  json report = detail::report_skeleton("learn");
  Stopwatch total;
  try {
    if (const auto s = seed_override()) args.cfg.seed = *s;
    report["config"] = to_json(args.cfg);
    report["config"]["data_dir"] = args.dir.string();
    args.cfg.validate();
    const Dataset ds = load_dataset(args.dir);
    const fs::path out = args.out ? *args.out : args.dir / "w.emt";
    report["config"]["out"] = out.string();
    DirLock lock(out.parent_path().empty() ? fs::path(".") : out.parent_path());
    Stopwatch run;
    const Trajectory tr = learn_vision_prototypes(ds.scenes, ds.cone.text_protos, args.cfg);
    const double run_ms = run.ms();
    write_emt(out, tr.final_w.m);
    const auto teacher = make_teacher(ds.scenes, ds.cone.text_protos, args.cfg.tau_t);
    const auto final_kl = kl_from_teacher(ds.scenes, teacher, tr.final_w, args.cfg.tau_i, args.cfg.mode, false);
    report["result"] = {{"trajectory", trajectory_json(tr)},
                        {"final_kl", final_kl.value},
                        {"final_cross_entropy", final_kl.cross_entropy},
                        {"teacher_entropy", final_kl.teacher_entropy},
                        {"max_column_norm", tr.final_w.max_column_norm()},
                        {"prototypes", out.string()}};
    report["timing_ms"] = {{"optimize", run_ms}, {"total", total.ms()}};
    return {kExitOk, report};
  } catch (const Error& e) {
    return detail::error_result(report, e);
  }
}

// ---- eval ------------------------------------------------------------------

struct EvalArgs {
  fs::path dir;
  std::optional<fs::path> protos;     // defaults to <dir>/w.emt
  double phi = 0.4;
  std::optional<fs::path> masks_out;  // defaults to <dir>/masks.json
};

inline json scene_pixels_gap(const Dataset& ds, const PrototypeSet& z, const PrototypeSet& w) {
  std::vector<double> flat;
  std::vector<int> labels;
  for (const auto& s : ds.scenes)
    for (std::size_t p = 0; p < s.pixels(); ++p) {
      flat.insert(flat.end(), s.features.row(p).begin(), s.features.row(p).end());
      labels.push_back(s.gt_mask.ids[p]);
    }
  const Matrix feats(labels.size(), z.dim(), std::move(flat));
  const double gz = prototype_sample_gap(z, feats, labels);
  const double gw = prototype_sample_gap(w, feats, labels);
  return {{"text_protos", gz}, {"vision_protos", gw}, {"reduction", gz - gw}};
}

inline CommandResult cmd_eval(const EvalArgs& args) {
  json report = detail::report_skeleton("eval");
  Stopwatch total;
  try {
    const fs::path protos_path = args.protos ? *args.protos : args.dir / "w.emt";
    const fs::path masks_out = args.masks_out ? *args.masks_out : args.dir / "masks.json";
    report["config"] = {{"data_dir", args.dir.string()},
                        {"protos", protos_path.string()},
                        {"phi", args.phi},
                        {"masks_out", masks_out.string()}};
    require(args.phi > 0.0 && args.phi < 1.0, ErrorCode::InvalidThreshold, "phi must lie in (0, 1)");
    const Dataset ds = load_dataset(args.dir);
    const PrototypeSet w(read_emt(protos_path));
    const PrototypeSet& z = ds.cone.text_protos;
    require(w.m.same_shape(z.m), ErrorCode::ShapeMismatch,
            "prototypes are " + std::to_string(w.dim()) + "x" + std::to_string(w.count()) + ", dataset expects " +
                std::to_string(z.dim()) + "x" + std::to_string(z.count()));
    Stopwatch run;
    const auto mz = pseudo_mask_miou(ds.scenes, z, args.phi);
    std::vector<PseudoMask> masks;
    MiouAccumulator acc(w.count());
    for (const auto& s : ds.scenes) {
      masks.push_back(pseudo_mask(s, w, args.phi));
      acc.add(masks.back().mask, s.gt_mask);
    }
    const auto mw = acc.result();
    const double run_ms = run.ms();
    {
      DirLock lock(masks_out.parent_path().empty() ? fs::path(".") : masks_out.parent_path());
      write_json_file(masks_out, masks_json(masks));
    }
    report["result"] = {{"miou_text_protos", mz.miou},
                        {"miou_vision_protos", mw.miou},
                        {"miou_delta", mw.miou - mz.miou},
                        {"text_protos", to_json(mz)},
                        {"vision_protos", to_json(mw)},
                        {"gap", to_json(gap_report(z, w, ds.cone.vision_basis))},
                        {"prototype_sample_gap", scene_pixels_gap(ds, z, w)},
                        {"masks", masks_out.string()}};
    report["timing_ms"] = {{"evaluate", run_ms}, {"total", total.ms()}};
    return {kExitOk, report};
  } catch (const Error& e) {
    return detail::error_result(report, e);
  }
}

// ---- verify ----------------------------------------------------------------

inline json to_json(const Check& c) {
  return {{"suite", c.suite},   {"name", c.name},         {"passed", c.passed},
          {"measured", c.measured}, {"bound", c.bound}, {"trials", c.trials},
          {"violations", c.violations}};
}

inline CommandResult cmd_verify(const std::string& suite) {
  json report = detail::report_skeleton("verify");
  Stopwatch total;
  try {
    std::uint64_t seed = kVerifySeed;
    if (const auto s = seed_override()) seed = *s;
    report["config"] = {{"suite", suite}, {"seed", seed}};
    const auto checks = run_verify_suite(suite, seed);
    json arr = json::array();
    bool ok = true;
    for (const auto& c : checks) {
      arr.push_back(to_json(c));
      ok = ok && c.passed;
    }
    report["result"] = {{"checks", arr}, {"all_passed", ok}};
    report["timing_ms"] = {{"total", total.ms()}};
    if (!ok) report["status"] = "failed";
    return {ok ? kExitOk : kExitCheckFailed, report};
  } catch (const Error& e) {
    return detail::error_result(report, e);
  }
}

// ---- phase2 ----------------------------------------------------------------

struct Phase2Args {
  fs::path dir;
  std::optional<fs::path> protos;  // defaults to <dir>/w.emt
  std::optional<fs::path> masks;   // defaults to <dir>/masks.json
  Phase2Config cfg;
};

inline CommandResult cmd_phase2(Phase2Args args) {
  json report = detail::report_skeleton("phase2");
  Stopwatch total;
  try {
    if (const auto s = seed_override()) args.cfg.seed = *s;
    const fs::path protos_path = args.protos ? *args.protos : args.dir / "w.emt";
    const fs::path masks_path = args.masks ? *args.masks : args.dir / "masks.json";
    report["config"] = to_json(args.cfg);
    report["config"]["data_dir"] = args.dir.string();
    report["config"]["protos"] = protos_path.string();
    report["config"]["masks"] = masks_path.string();
    args.cfg.validate();
    const Dataset ds = load_dataset(args.dir);
    const PrototypeSet w(read_emt(protos_path));
    const auto masks = load_masks(masks_path);
    require(masks.size() == ds.scenes.size(), ErrorCode::ShapeMismatch, "one mask per scene expected");
    DirLock lock(args.dir);

    json timing;
    auto run = [&](double lambda_rsc, const std::string& stem) {
      Phase2Config c = args.cfg;
      c.lambda_rsc = lambda_rsc;
      Stopwatch sw;
      const auto res = train_decoder(ds.scenes, masks, w, c);
      timing[stem] = sw.ms();
      const auto comp = decoder_compactness(res.decoder, ds.scenes);
      const auto m = decoder_miou(res.decoder, ds.scenes);
      save_decoder(args.dir, stem, res.decoder, {{"config", to_json(c)}});
      json pairs = json::array();
      for (const auto& p : res.log.pairs) pairs.push_back({{"scene", p.scene}, {"class", p.cls}});
      return json{{"lambda_rsc", lambda_rsc},
                  {"decoder", stem + ".json"},
                  {"phase2_miou", m.miou},
                  {"miou", to_json(m)},
                  {"compactness", to_json(comp)},
                  {"iterations", res.log.iterations_run},
                  {"stopped_by", to_string(res.log.stopped_by)},
                  {"final_total", res.log.total.back()},
                  {"final_ce", res.log.ce.back()},
                  {"final_rsc", res.log.rsc.back()},
                  {"region_pairs", pairs},
                  {"loss_curve", res.log.total}};
    };

    const json baseline = run(0.0, "decoder_rsc0");
    json result{{"baseline", baseline}};
    if (args.cfg.lambda_rsc > 0.0) {
      const json with_rsc = run(args.cfg.lambda_rsc, "decoder_rsc");
      const double r0 = baseline["compactness"]["ratio"].get<double>();
      const double r1 = with_rsc["compactness"]["ratio"].get<double>();
      result["rsc"] = with_rsc;
      result["compactness"] = {{"baseline_only", false},
                               {"ratio_lambda0", r0},
                               {"ratio_lambda", r1},
                               {"ratio_reduction", r0 - r1},
                               {"rsc_lower", r1 < r0}};
      result["phase2_miou"] = with_rsc["phase2_miou"];
    } else {
      result["rsc"] = nullptr;
      result["compactness"] = {{"baseline_only", true}, {"ratio_lambda0", baseline["compactness"]["ratio"]}};
      result["phase2_miou"] = baseline["phase2_miou"];
    }
    report["result"] = result;
    timing["total"] = total.ms();
    report["timing_ms"] = timing;
    return {kExitOk, report};
  } catch (const Error& e) {
    return detail::error_result(report, e);
  }
}

}  // namespace vproto

#endif  // VPROTO_COMMANDS_HPP
