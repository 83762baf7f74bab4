// Runs every acceptance criterion and prints one PASS/FAIL line each.
// Optional arguments select criteria by id (C1 ... C8).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <vector>

#include "criteria.hpp"
#include "scnn/idx.hpp"
#include "scnn/lifecycle.hpp"
#include "scnn/manipulators.hpp"
#include "scnn/report_io.hpp"
#include "scnn/synthesizer.hpp"

using namespace scnn;

namespace {

const std::filesystem::path kMnist = std::filesystem::path(SCNN_ACCEPTANCE_DATA_DIR) / "mnist";

struct Data {
  LabeledDataset primary;
  LabeledDataset test;
};

const Data& data() {
  static const Data d = [] {
    Data out;
    const LabeledDataset train =
        load_idx(kMnist / "train-images-idx3-ubyte.gz", kMnist / "train-labels-idx1-ubyte.gz");
    out.primary = subset(train, 1000, 0, true);
    out.test = load_idx(kMnist / "t10k-images-idx3-ubyte.gz", kMnist / "t10k-labels-idx1-ubyte.gz");
    return out;
  }();
  return d;
}

std::string format(const char* fmt, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, fmt, args...);
  return buf;
}

// Frozen-weight bookkeeping shared by every criterion that synthesizes.
struct FreezeLedger {
  std::size_t checks = 0;
  std::size_t violations = 0;

  void record(std::uint64_t before, std::uint64_t after) {
    ++checks;
    violations += before != after;
  }
  void record(const RunReport& report) {
    for (const auto& c : report.cycles) record(c.checksum_before_synthesis, c.checksum_after_synthesis);
  }
} freeze_ledger;

BatchSynthesis checked_batch(const LabeledDataset& input, const EmbeddedNet& net, const SynthesisConfig& cfg,
                             const BatchOptions& options) {
  const auto before = net.checksum();
  BatchSynthesis out = synthesize_batch(input, net, cfg, options);
  freeze_ledger.record(before, net.checksum());
  return out;
}

// Desk net trained on limited-MNIST-1000, shared by C3 and C6.
struct TrainedNet {
  EmbeddedNet net;
  double train_accuracy = 0;
  double test_accuracy = 0;
};

const TrainedNet& trained() {
  static const TrainedNet t = [] {
    TrainedNet out{EmbeddedNet(NetConfig::desk(), net_seed(0))};
    TrainOptions options;
    options.epochs = 20;
    options.seed = phase_seed(0, 1, 1);
    train(out.net, data().primary, options);
    out.train_accuracy = evaluate(out.net, data().primary).accuracy;
    out.test_accuracy = evaluate(out.net, data().test).accuracy;
    out.net.freeze();
    return out;
  }();
  return t;
}

CriterionResult sampler_identity() {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<Real> pixel(0, 1);
  const SamplingGrid affine = affine_grid(AffineParams::identity(), 28, 28);
  const ManipulatorParams zero_field = DisplacementField::zero(28, 28, GridKernelConfig{});
  double worst_affine = 0, worst_field = 0;
  for (int n = 0; n < 100; ++n) {
    Tensor img({1, 28, 28});
    for (Real& v : img.data()) v = pixel(rng);
    const Tensor a = grid_sample(img, affine);
    const Tensor b = apply_manipulator(img, zero_field);
    for (std::size_t i = 0; i < img.size(); ++i) {
      worst_affine = std::max(worst_affine, static_cast<double>(std::abs(a[i] - img[i])));
      worst_field = std::max(worst_field, static_cast<double>(std::abs(b[i] - img[i])));
    }
  }
  const bool ok = worst_affine < 1e-5 && worst_field < 1e-5;
  return {"C2 sampler identity", ok,
          format("100 images: identity affine max |diff| %.2e, zero displacement %.2e (< 1e-5)", worst_affine,
                 worst_field)};
}

struct SynthesisStats {
  double reduced = 0;
  double flip_or_margin = 0;
  double flipped = 0;
};

SynthesisStats stats_of(const BatchSynthesis& b, double margin) {
  SynthesisStats s;
  double n = 0;
  for (const auto& r : b.records) {
    ++n;
    if (r.aborted) continue;
    s.reduced += r.loss_reduced;
    s.flipped += r.flipped;
    s.flip_or_margin += r.flipped || r.margin <= margin;
  }
  if (n > 0) {
    s.reduced /= n;
    s.flip_or_margin /= n;
    s.flipped /= n;
  }
  return s;
}

CriterionResult boundary_targeting() {
  const TrainedNet& t = trained();
  SynthesisConfig cfg;  // stop_on_flip, at most 40 steps
  const BatchSynthesis batch = checked_batch(data().primary, t.net, cfg, {1, 7, 1, 1});
  const SynthesisStats s = stats_of(batch, cfg.margin);
  for (ManipulatorKind kind : {ManipulatorKind::affine, ManipulatorKind::grid, ManipulatorKind::erase}) {
    BatchSynthesis part;
    for (const auto& r : batch.records)
      if (r.kind == kind) part.records.push_back(r);
    const SynthesisStats k = stats_of(part, cfg.margin);
    std::printf("    %-7s n=%zu reduced %.3f flip-or-margin %.3f flipped %.3f\n", to_string(kind).c_str(),
                part.records.size(), k.reduced, k.flip_or_margin, k.flipped);
  }
  SynthesisConfig half = cfg;
  half.alpha = 0.5;
  const SynthesisStats h = stats_of(checked_batch(data().primary, t.net, half, {1, 7, 1, 1}), half.margin);
  std::printf("    info: alpha 0.5 gives reduced %.3f flip-or-margin %.3f\n", h.reduced, h.flip_or_margin);

  const bool ok = t.train_accuracy >= 0.95 && s.reduced >= 0.90 && s.flip_or_margin >= 0.50;
  return {"C3 boundary targeting", ok,
          format("train acc %.4f (>= 0.95), test acc %.4f, alpha %.2f: loss reduced %.3f (>= 0.90), "
                 "flip or margin <= %.2f %.3f (>= 0.50), flipped %.3f",
                 t.train_accuracy, t.test_accuracy, static_cast<double>(cfg.alpha), s.reduced,
                 static_cast<double>(cfg.margin), s.flip_or_margin, s.flipped)};
}

struct EndToEnd {
  std::vector<double> offline, online, baseline;
  bool failed = false;
};

const EndToEnd& end_to_end() {
  static const EndToEnd e = [] {
    EndToEnd out;
    for (std::uint64_t seed : {0, 1, 2}) {
      CyclePlan plan;
      plan.net = NetConfig::desk();
      plan.strategy = Strategy::offline;
      plan.cycles = 5;
      plan.seed = seed;
      const auto start = std::chrono::steady_clock::now();
      const RunReport report = run(plan, data().primary, data().test);
      freeze_ledger.record(report);
      const double base = run_baseline(plan, data().primary, data().test).accuracy;
      const double minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() / 60;
      out.failed = out.failed || report.failure.has_value();
      out.offline.push_back(report.final_accuracy);
      out.online.push_back(report.online_final_accuracy);
      out.baseline.push_back(base);
      std::printf("    seed %llu: cycles %zu, pool %zu, offline %.4f, online %.4f, baseline %.4f (%.1f min)\n",
                  static_cast<unsigned long long>(seed), report.cycles.size(), report.pool_size, report.final_accuracy,
                  report.online_final_accuracy, base, minutes);
      for (const auto& c : report.cycles)
        std::printf("      cycle %d: phase1 test %.4f, flip rate %.3f, after phase 3 %.4f\n", c.cycle,
                    c.phase1_test_accuracy, c.flip_rate, c.test_accuracy);
      std::fflush(stdout);
    }
    return out;
  }();
  return e;
}

double mean(const std::vector<double>& v) {
  return v.empty() ? 0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

CriterionResult end_to_end_improvement() {
  const EndToEnd& e = end_to_end();
  const double scnn = mean(e.offline) * 100, base = mean(e.baseline) * 100;
  const bool ok = !e.failed && scnn >= base + 1.0;
  return {"C4 end-to-end improvement", ok,
          format("3 seeds, 5 offline cycles: mean test accuracy %.2f%% vs baseline %.2f%% (gain %+.2f pt, need >= +1.0)",
                 scnn, base, scnn - base)};
}

CriterionResult online_offline_ordering() {
  const EndToEnd& e = end_to_end();
  const double off = mean(e.offline) * 100, on = mean(e.online) * 100;
  const bool ok = !e.failed && off >= on - 0.3;
  return {"C5 online <= offline", ok,
          format("seed-mean offline %.2f%% vs online %.2f%% (need offline >= online - 0.3 pt)", off, on)};
}

std::string strip_wall_ms(const std::string& csv) {
  std::istringstream in(csv);
  std::string line, out;
  while (std::getline(in, line)) out += line.substr(0, line.rfind(',')) + "\n";
  return out;
}

CriterionResult determinism() {
  CyclePlan plan;
  plan.net = NetConfig::desk();
  plan.strategy = Strategy::offline;
  plan.cycles = 2;
  plan.primary_epochs = 4;
  plan.synthetic_epochs = 2;
  plan.offline_epochs = 4;
  plan.seed = 5;
  plan.workers = 1;
  const RunReport a = run(plan, data().primary, data().test);
  const RunReport b = run(plan, data().primary, data().test);
  freeze_ledger.record(a);
  freeze_ledger.record(b);
  const std::string csv_a = strip_wall_ms(metrics_csv(a.metrics)), csv_b = strip_wall_ms(metrics_csv(b.metrics));
  const bool csv_same = !a.failure && !b.failure && csv_a == csv_b;

  const TrainedNet& t = trained();
  const SynthesisConfig cfg;
  const BatchSynthesis one = checked_batch(data().primary, t.net, cfg, {1, 3, 1, 1});
  const BatchSynthesis four = checked_batch(data().primary, t.net, cfg, {1, 3, 4, 1});
  bool synth_same = one.dataset.size() == four.dataset.size() && one.records.size() == four.records.size();
  for (std::size_t i = 0; synth_same && i < one.dataset.size(); ++i) {
    synth_same = one.dataset.image(i).storage() == four.dataset.image(i).storage() &&
                 one.dataset.label(i) == four.dataset.label(i);
  }
  for (std::size_t i = 0; synth_same && i < one.records.size(); ++i)
    synth_same = one.records[i].steps == four.records[i].steps && one.records[i].final_loss == four.records[i].final_loss;

  return {"C6 determinism", csv_same && synth_same,
          format("metrics CSV (%zu rows, wall_ms excluded) %s; 1 vs 4 workers over %zu samples %s", a.metrics.size(),
                 csv_same ? "identical" : "DIFFER", one.dataset.size(), synth_same ? "identical" : "DIFFER")};
}

CriterionResult frozen_contract() {
  const bool ok = freeze_ledger.checks > 0 && freeze_ledger.violations == 0;
  return {"C7 frozen-weight contract", ok,
          format("%zu phase-2 invocations checked, %zu checksum changes", freeze_ledger.checks,
                 freeze_ledger.violations)};
}

// Independent statement of the branch rules: rank by probability then class id;
// the second weighted class is the top class when it is wrong, else the runner-up.
CriterionResult target_construction() {
  std::size_t cases = 0, mismatches = 0;
  std::set<std::pair<bool, bool>> branches;  // (prediction correct, tie present)
  const Real alpha = Real(0.7);
  for (std::size_t k = 2; k <= 5; ++k) {
    const auto combos = static_cast<std::size_t>(std::pow(k, k));
    for (std::size_t code = 0; code < combos; ++code) {
      std::vector<Real> p(k);
      std::size_t c = code;
      for (std::size_t i = 0; i < k; ++i, c /= k) p[i] = static_cast<Real>(1 + c % k);
      const Real total = std::accumulate(p.begin(), p.end(), Real(0));
      for (Real& v : p) v /= total;
      std::vector<int> order(k);
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return p[a] > p[b]; });
      const bool tie = p[static_cast<std::size_t>(order[0])] == p[static_cast<std::size_t>(order[1])];
      for (int y = 0; y < static_cast<int>(k); ++y) {
        std::vector<Real> expected(k, 0);
        expected[static_cast<std::size_t>(y)] = 1;
        expected[static_cast<std::size_t>(order[0] == y ? order[1] : order[0])] = alpha;
        const TargetSpec t = compute_targets(p, y, alpha);
        const bool match = t.predicted == order[0] && t.runner_up == order[1] && t.target.storage() == expected;
        mismatches += !match;
        ++cases;
        branches.insert({order[0] == y, tie});
      }
    }
  }
  const bool ok = mismatches == 0 && branches.size() == 4;
  return {"C8 target construction", ok,
          format("%zu cases over K=2..5, %zu of 4 branch combinations covered, %zu mismatches", cases,
                 branches.size(), mismatches)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<CriterionResult()>>> criteria{
      {"C1", check_gradient_suite},    {"C2", sampler_identity},        {"C3", boundary_targeting},
      {"C4", end_to_end_improvement},  {"C5", online_offline_ordering}, {"C6", determinism},
      {"C7", frozen_contract},         {"C8", target_construction},
  };
  std::set<std::string> selected(argv + 1, argv + argc);
  std::vector<CriterionResult> results;
  for (const auto& [id, check] : criteria) {
    if (!selected.empty() && !selected.count(id)) continue;
    std::printf("[%s]\n", id.c_str());
    std::fflush(stdout);
    const auto start = std::chrono::steady_clock::now();
    CriterionResult r;
    try {
      r = check();
    } catch (const std::exception& e) {
      r = {id, false, std::string("threw: ") + e.what()};
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("%s %s: %s [%.1f s]\n", r.passed ? "PASS" : "FAIL", r.id.c_str(), r.detail.c_str(), seconds);
    std::fflush(stdout);
    results.push_back(r);
  }
  std::printf("\nsummary\n");
  bool all = true;
  for (const auto& r : results) {
    std::printf("%s %s\n", r.passed ? "PASS" : "FAIL", r.id.c_str());
    all = all && r.passed;
  }
  return all ? 0 : 1;
}
