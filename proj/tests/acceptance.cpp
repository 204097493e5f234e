// Acceptance suite: one PASS/FAIL line per criterion on the committed bench-v1
// benchmark. Exit status is nonzero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "acceptance_margins.hpp"
#include "test_support.hpp"
#include "vproto/vproto.hpp"

using namespace vproto;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

int failures = 0;

void criterion(int id, const std::string& name, double limit_s, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const bool in_time = limit_s <= 0.0 || secs < limit_s;
  const bool ok = o.passed && in_time;
  if (!ok) ++failures;
  std::printf("%s  [%2d] %s: %s (%.2f s", ok ? "PASS" : "FAIL", id, name.c_str(), o.detail.c_str(), secs);
  if (limit_s > 0.0) std::printf(", limit %.0f s%s", limit_s, in_time ? "" : ", EXCEEDED");
  std::printf(")\n");
  std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Outcome suite_outcome(const std::vector<Check>& checks) {
  bool ok = true;
  std::string d;
  for (const auto& c : checks) {
    ok = ok && c.passed;
    if (!d.empty()) d += "; ";
    d += fmt("%s max %.3g (bound %.0e, %zu trials, %zu violations)", c.name.c_str(), c.measured, c.bound, c.trials,
             c.violations);
  }
  return {ok, d};
}

Outcome margin_outcome(double measured, double committed, const char* what) {
  const bool positive = measured > 0.0;
  const bool near = std::abs(measured - committed) <= acceptance::kMarginTolerance;
  return {positive && near, fmt("%s margin %.4f (> 0: %s; committed %.4f +- %.2f: %s)", what, measured,
                                positive ? "yes" : "no", committed, acceptance::kMarginTolerance, near ? "yes" : "no")};
}

}  // namespace

int main() {
  std::printf("bench-v1 acceptance\n");

  criterion(1, "gradient oracle, 4 losses x 100 points", 30.0, [] { return suite_outcome(verify_grads()); });
  criterion(2, "tau_T = sqrt(eps) tau_I softmax identity", 5.0, [] { return suite_outcome(verify_prop1()); });
  criterion(3, "span-constrained gap lower bound", 10.0, [] { return suite_outcome(verify_thm1(1000)); });
  criterion(4, "prototype sandwich bound", 10.0, [] { return suite_outcome(verify_thm2(10000)); });

  const SynthConfig cfg = bench_v1();
  const ConePair cone = make_cone_pair(cfg);
  const auto scenes = make_scenes(cfg, cone);
  const LearnConfig lc;
  Trajectory tr;

  criterion(5, "vision prototype learning convergence", 60.0, [&] {
    tr = learn_vision_prototypes(scenes, cone.text_protos, lc);
    std::size_t increases = 0;
    for (std::size_t i = 1; i < tr.losses.size(); ++i) increases += tr.losses[i] > tr.losses[i - 1];
    const double ratio = tr.final_loss() / tr.initial_loss();
    return Outcome{increases == 0 && ratio < 0.1 && tr.iterations_run <= 3000,
                   fmt("KL %.4g -> %.4g, ratio %.4f < 0.1, %zu iterations, %zu increases", tr.initial_loss(),
                       tr.final_loss(), ratio, tr.iterations_run, increases)};
  });

  criterion(6, "learned prototypes beat text prototypes (pseudo-mask mIoU, phi 0.4)", 60.0, [&] {
    const double mz = pseudo_mask_miou(scenes, cone.text_protos, 0.4).miou;
    const double mw = pseudo_mask_miou(scenes, tr.final_w, 0.4).miou;
    auto o = margin_outcome(mw - mz, acceptance::kMiouMargin, "mIoU");
    o.detail = fmt("Z %.4f, W %.4f, ", mz, mw) + o.detail;
    return o;
  });

  criterion(7, "gap reduction to class sample means", 0.0, [&] {
    std::vector<double> flat;
    std::vector<int> labels;
    for (const auto& s : scenes)
      for (std::size_t p = 0; p < s.pixels(); ++p) {
        flat.insert(flat.end(), s.features.row(p).begin(), s.features.row(p).end());
        labels.push_back(s.gt_mask.ids[p]);
      }
    const Matrix feats(labels.size(), cfg.dim, std::move(flat));
    const double gz = prototype_sample_gap(cone.text_protos, feats, labels);
    const double gw = prototype_sample_gap(tr.final_w, feats, labels);
    auto o = margin_outcome(gz - gw, acceptance::kGapMargin, "gap");
    o.detail = fmt("Z %.4f, W %.4f, ", gz, gw) + o.detail;
    return o;
  });

  criterion(8, "RSC tightens decoder embeddings", 120.0, [&] {
    std::vector<LabelGrid> masks;
    for (const auto& s : scenes) masks.push_back(pseudo_mask(s, tr.final_w, 0.4).mask);
    Phase2Config base;
    base.lambda_rsc = 0.0;
    Phase2Config rsc;
    rsc.lambda_rsc = 1.0;
    const auto r0 = decoder_compactness(train_decoder(scenes, masks, tr.final_w, base).decoder, scenes);
    const auto r1 = decoder_compactness(train_decoder(scenes, masks, tr.final_w, rsc).decoder, scenes);
    auto o = margin_outcome(r0.ratio - r1.ratio, acceptance::kCompactnessMargin, "ratio");
    o.detail = fmt("ratio lambda=0 %.4f, lambda=1 %.4f, ", r0.ratio, r1.ratio) + o.detail;
    return o;
  });

  criterion(9, "mIoU equals brute-force pixel counting", 0.0, [] {
    Rng rng(909);
    std::size_t mismatches = 0;
    for (int t = 0; t < 1000; ++t) {
      const int k = 1 + static_cast<int>(rng.below(8));
      const std::size_t s = 1 + rng.below(12), h = 1 + rng.below(12);
      const auto pred = testkit::random_grid(rng, s, h, k);
      const auto gt = testkit::random_grid(rng, s, h, k);
      mismatches += miou(pred, gt, static_cast<std::size_t>(k)).miou != testkit::miou_oracle({pred}, {gt}, k);
    }
    return Outcome{mismatches == 0, fmt("%zu mismatches in 1000 random pairs", mismatches)};
  });

  criterion(10, "EMT write-read-write byte identity", 0.0, [] {
    const fs::path dir = fs::temp_directory_path() / "vproto_acceptance_emt";
    fs::remove_all(dir);
    fs::create_directories(dir);
    Rng rng(1010);
    std::size_t mismatches = 0;
    auto slurp = [](const fs::path& p) {
      std::ifstream f(p, std::ios::binary);
      return std::string(std::istreambuf_iterator<char>(f), {});
    };
    for (int i = 0; i < 100; ++i) {
      Matrix m = i == 0 ? Matrix(0, 0) : i == 1 ? Matrix(1, 1, rng.gaussian()) : gaussian_matrix(rng, rng.below(9), rng.below(9));
      write_emt(dir / "a.emt", m);
      write_emt(dir / "b.emt", read_emt(dir / "a.emt"));
      mismatches += slurp(dir / "a.emt") != slurp(dir / "b.emt");
    }
    fs::remove_all(dir);
    return Outcome{mismatches == 0, fmt("%zu mismatches in 100 matrices (incl. 0x0, 1x1)", mismatches)};
  });

  std::printf("%s: %d failing criteria\n", failures == 0 ? "ALL PASS" : "FAILURES", failures);
  return failures == 0 ? 0 : 1;
}
