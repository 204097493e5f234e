#ifndef VPROTO_IO_HPP
#define VPROTO_IO_HPP

#include <cmath>
#include <cstddef>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "vproto/emt.hpp"
#include "vproto/error.hpp"
#include "vproto/gap_analysis.hpp"
#include "vproto/localization.hpp"
#include "vproto/phase2.hpp"
#include "vproto/proto_learn.hpp"
#include "vproto/synthgen.hpp"
#include "vproto/types.hpp"

namespace vproto {

using json = nlohmann::json;

inline constexpr const char* kVersion = "0.1.0";
inline constexpr const char* kDatasetFormat = "vproto-dataset/1";
inline constexpr const char* kMasksFormat = "vproto-masks/1";
inline constexpr const char* kDecoderFormat = "vproto-decoder/1";
inline constexpr const char* kReportFormat = "vproto-report/1";

inline json versions_json() {
  return {{"vproto", kVersion}, {"emt", "EMT1"}, {"dataset", kDatasetFormat}, {"masks", kMasksFormat},
          {"decoder", kDecoderFormat}, {"report", kReportFormat}};
}

// ---- config parsing ------------------------------------------------------

namespace detail {

inline void reject_unknown_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw Error(ErrorCode::ConfigParse, where + " must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (!allowed.contains(key)) throw Error(ErrorCode::ConfigParse, where + ": unknown key '" + key + "'");
}

template <typename T>
void read_field(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigParse, std::string("field '") + key + "': " + e.what());
  }
}

}  // namespace detail

struct SynthFile {
  SynthConfig config;
  std::string output_dir;
};

inline json to_json(const SynthConfig& c) {
  return {{"seed", c.seed},
          {"n_classes", c.n_classes},
          {"dim", c.dim},
          {"epsilon", c.epsilon},
          {"intra_class_std", c.intra_class_std},
          {"samples_per_class", c.samples_per_class},
          {"grid_s", c.grid_s},
          {"grid_h", c.grid_h},
          {"background_fraction", c.background_fraction},
          {"n_scenes", c.n_scenes},
          {"shared_orthogonal", c.shared_orthogonal}};
}

/// Parses a synth config. Unknown keys and invalid values raise ConfigParse
/// naming the offending field; missing keys keep their bench-v1 defaults.
inline SynthFile synth_config_from_json(const json& j) {
  detail::reject_unknown_keys(j,
                              {"seed", "n_classes", "dim", "epsilon", "intra_class_std", "samples_per_class", "grid_s",
                               "grid_h", "background_fraction", "n_scenes", "shared_orthogonal", "output_dir"},
                              "synth config");
  SynthFile f;
  auto& c = f.config;
  detail::read_field(j, "seed", c.seed);
  detail::read_field(j, "n_classes", c.n_classes);
  detail::read_field(j, "dim", c.dim);
  detail::read_field(j, "epsilon", c.epsilon);
  detail::read_field(j, "intra_class_std", c.intra_class_std);
  detail::read_field(j, "samples_per_class", c.samples_per_class);
  detail::read_field(j, "grid_s", c.grid_s);
  detail::read_field(j, "grid_h", c.grid_h);
  detail::read_field(j, "background_fraction", c.background_fraction);
  detail::read_field(j, "n_scenes", c.n_scenes);
  detail::read_field(j, "shared_orthogonal", c.shared_orthogonal);
  detail::read_field(j, "output_dir", f.output_dir);
  try {
    c.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::ConfigParse, e.detail());
  }
  return f;
}

inline json read_json_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorCode::Io, "cannot open " + path.string());
  try {
    return json::parse(f);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::ConfigParse, path.string() + ": " + e.what());
  }
}

inline void write_json_file(const std::filesystem::path& path, const json& j) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw Error(ErrorCode::Io, "cannot open " + path.string() + " for writing");
  f << j.dump(2) << '\n';
  if (!f) throw Error(ErrorCode::Io, "write failed for " + path.string());
}

inline json to_json(const LearnConfig& c) {
  return {{"alpha", c.alpha},       {"t_w", c.t_w},
          {"tau_t", c.tau_t},       {"tau_i", c.tau_i},
          {"eta", c.eta},           {"init", to_string(c.init)},
          {"grad_tol", c.grad_tol}, {"line_search", c.line_search},
          {"mode", c.mode == KlMode::Instance ? "instance" : "class"},
          {"seed", c.seed}};
}

inline json to_json(const Phase2Config& c) {
  return {{"lr", c.lr},         {"iterations", c.iterations}, {"lambda_ce", c.lambda_ce},
          {"lambda_rsc", c.lambda_rsc}, {"batch", c.batch}, {"seed", c.seed},
          {"tau_rsc", c.tau_rsc}, {"init_noise", c.init_noise}};
}

// ---- report fragments ----------------------------------------------------

inline json to_json(const GapReport& r) {
  json j{{"delta_gap", r.delta_gap},
         {"orth_component_sq", r.orth_component_sq},
         {"alignment_residual", r.alignment_residual},
         {"per_class_epsilon", r.per_class_epsilon}};
  j["mean_pair_distance"] = r.mean_pair_distance ? json(*r.mean_pair_distance) : json(nullptr);
  return j;
}

inline json to_json(const MiouResult& r) {
  json per = json::array();
  for (const auto& v : r.per_class) per.push_back(v ? json(*v) : json(nullptr));
  return {{"miou", r.miou}, {"per_class", per}};
}

inline json to_json(const CompactnessReport& r) {
  return {{"intra_class_mean_cos_dist", r.intra_class_mean_cos_dist},
          {"inter_class_mean_cos_dist", r.inter_class_mean_cos_dist},
          {"ratio", r.ratio}};
}

inline json to_json(const ConvexityReport& r) {
  return {{"lhs", r.lhs},     {"inner", r.inner},       {"rhs", r.rhs},
          {"mu", r.mu},       {"holds", r.holds},       {"degenerate", r.degenerate},
          {"mu_hat", r.mu_hat ? json(*r.mu_hat) : json(nullptr)}};
}

inline json trajectory_json(const Trajectory& t) {
  bool monotone = true;
  for (std::size_t i = 1; i < t.losses.size(); ++i) monotone = monotone && t.losses[i] <= t.losses[i - 1];
  return {{"initial_loss", t.initial_loss()},
          {"final_loss", t.final_loss()},
          {"iterations", t.iterations_run},
          {"stopped_by", to_string(t.stopped_by)},
          {"non_increasing", monotone},
          {"losses", t.losses},
          {"grad_norms", t.grad_norms},
          {"alphas", t.alphas}};
}

inline json to_json(const LabelGrid& g) { return {{"s", g.s}, {"h", g.h}, {"ids", g.ids}}; }

inline LabelGrid label_grid_from_json(const json& j) {
  try {
    LabelGrid g(j.at("s").get<std::size_t>(), j.at("h").get<std::size_t>(), j.at("ids").get<std::vector<int>>());
    return g;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Format, std::string("label grid: ") + e.what());
  }
}

// ---- dataset on disk -----------------------------------------------------

struct Dataset {
  SynthConfig config;
  ConePair cone;
  std::vector<DenseScene> scenes;
};

inline std::string scene_file_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "scene_%03zu.emt", i);
  return buf;
}

/// Writes the cone pair and scenes; returns the manifest that was written.
inline json save_dataset(const std::filesystem::path& dir, const SynthConfig& cfg, const ConePair& cone,
                         const std::vector<DenseScene>& scenes) {
  if (!std::filesystem::is_directory(dir)) throw Error(ErrorCode::Io, "output directory does not exist: " + dir.string());
  write_emt(dir / "text_protos.emt", cone.text_protos.m);
  write_emt(dir / "vision_centers.emt", cone.vision_centers.m);
  write_emt(dir / "orth_dirs.emt", cone.orth_dirs.m);
  write_emt(dir / "vision_basis.emt", cone.vision_basis);
  write_emt(dir / "complement_basis.emt", cone.complement_basis);
  write_emt(dir / "vision_samples.emt", cone.vision);
  json scenes_json = json::array();
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const auto name = scene_file_name(i);
    write_emt(dir / name, scenes[i].features);
    scenes_json.push_back({{"features", name},
                           {"s", scenes[i].s},
                           {"h", scenes[i].h},
                           {"class_set", scenes[i].class_set},
                           {"gt_mask", scenes[i].gt_mask.ids}});
  }
  json manifest{{"format", kDatasetFormat},
                {"config", to_json(cfg)},
                {"epsilon", cone.epsilon},
                {"vision_labels", cone.labels},
                {"files",
                 {{"text_protos", "text_protos.emt"},
                  {"vision_centers", "vision_centers.emt"},
                  {"orth_dirs", "orth_dirs.emt"},
                  {"vision_basis", "vision_basis.emt"},
                  {"complement_basis", "complement_basis.emt"},
                  {"vision_samples", "vision_samples.emt"}}},
                {"scenes", scenes_json}};
  write_json_file(dir / "manifest.json", manifest);
  return manifest;
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  if (!std::filesystem::exists(manifest_path)) throw Error(ErrorCode::Io, "missing " + manifest_path.string());
  const json m = read_json_file(manifest_path);
  try {
    if (m.at("format") != kDatasetFormat) throw Error(ErrorCode::Format, "unsupported dataset format");
    Dataset ds;
    ds.config = synth_config_from_json(m.at("config")).config;
    ds.cone.epsilon = m.at("epsilon").get<double>();
    ds.cone.labels = m.at("vision_labels").get<std::vector<int>>();
    const auto& files = m.at("files");
    ds.cone.text_protos = PrototypeSet(read_emt(dir / files.at("text_protos").get<std::string>()));
    ds.cone.vision_centers = PrototypeSet(read_emt(dir / files.at("vision_centers").get<std::string>()));
    ds.cone.orth_dirs = PrototypeSet(read_emt(dir / files.at("orth_dirs").get<std::string>()));
    ds.cone.vision_basis = read_emt(dir / files.at("vision_basis").get<std::string>());
    ds.cone.complement_basis = read_emt(dir / files.at("complement_basis").get<std::string>());
    ds.cone.vision = read_emt(dir / files.at("vision_samples").get<std::string>());
    for (const auto& sj : m.at("scenes")) {
      DenseScene s;
      s.s = sj.at("s").get<std::size_t>();
      s.h = sj.at("h").get<std::size_t>();
      s.features = read_emt(dir / sj.at("features").get<std::string>());
      s.gt_mask = LabelGrid(s.s, s.h, sj.at("gt_mask").get<std::vector<int>>());
      s.class_set = sj.at("class_set").get<std::vector<int>>();
      require(s.features.rows() == s.pixels(), ErrorCode::Format, "scene feature rows do not match grid");
      require(s.features.cols() == ds.cone.text_protos.dim(), ErrorCode::Format, "scene feature dim");
      ds.scenes.push_back(std::move(s));
    }
    return ds;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Format, manifest_path.string() + ": " + e.what());
  }
}

inline json masks_json(const std::vector<PseudoMask>& masks) {
  json arr = json::array();
  double phi = masks.empty() ? 0.0 : masks.front().phi_used;
  for (const auto& m : masks) arr.push_back(to_json(m.mask));
  return {{"format", kMasksFormat}, {"phi", phi}, {"masks", arr}};
}

inline std::vector<LabelGrid> load_masks(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error(ErrorCode::Io, "missing masks file " + path.string());
  const json j = read_json_file(path);
  std::vector<LabelGrid> out;
  try {
    if (j.at("format") != kMasksFormat) throw Error(ErrorCode::Format, path.string() + ": unsupported masks format");
    for (const auto& g : j.at("masks")) out.push_back(label_grid_from_json(g));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Format, path.string() + ": " + e.what());
  }
  return out;
}

/// Three EMT matrices plus a JSON metadata file, all prefixed by `stem`.
inline void save_decoder(const std::filesystem::path& dir, const std::string& stem, const Decoder& dec,
                         const json& meta) {
  write_emt(dir / (stem + "_weight.emt"), dec.weight);
  write_emt(dir / (stem + "_bias.emt"), dec.bias);
  write_emt(dir / (stem + "_classifier.emt"), dec.classifier);
  json j = meta;
  j["format"] = kDecoderFormat;
  j["files"] = {{"weight", stem + "_weight.emt"}, {"bias", stem + "_bias.emt"}, {"classifier", stem + "_classifier.emt"}};
  write_json_file(dir / (stem + ".json"), j);
}

inline Decoder load_decoder(const std::filesystem::path& dir, const std::string& stem) {
  const json j = read_json_file(dir / (stem + ".json"));
  Decoder dec;
  try {
    const auto& files = j.at("files");
    dec.weight = read_emt(dir / files.at("weight").get<std::string>());
    dec.bias = read_emt(dir / files.at("bias").get<std::string>());
    dec.classifier = read_emt(dir / files.at("classifier").get<std::string>());
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Format, stem + ".json: " + e.what());
  }
  dec.validate();
  return dec;
}

}  // namespace vproto

#endif  // VPROTO_IO_HPP
