#include <cmath>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "acceptance/acceptance.hpp"
#include "sslbd/harness.hpp"
#include "sslbd/hashing.hpp"

namespace sslbd::acceptance {

namespace {

std::string fmt(double v, int precision = 1) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(precision) << v;
  return s.str();
}

// Desk preset on the narrow backbone. Step milestones are rescaled to the
// shortened schedule so the decay points keep their relative position.
MethodConfig desk_method(MethodKind kind, int epochs) {
  auto m = MethodConfig::desk(kind);
  const int preset_epochs = m.epochs;
  m.backbone = BackboneConfig::desk();
  m.epochs = epochs;
  m.batch_size = 128;
  m.queue_size = 1024;
  if (kind == MethodKind::kMocoV2) m.ema_momentum = 0.99;
  for (auto& milestone : m.schedule.milestones) {
    milestone = static_cast<int>(std::lround(static_cast<double>(milestone) * epochs / preset_epochs));
  }
  return m;
}

// Seed set `index` shifts every stage seed together.
StageSeeds seeds_for(int index) {
  StageSeeds s;
  const uint64_t shift = 100 * static_cast<uint64_t>(index);
  s.poison += shift;
  s.patched_val += shift;
  s.train += shift;
  s.probe += shift;
  s.distill += shift;
  return s;
}

ExperimentConfig desk_experiment(const DeskOptions& o, MethodKind kind, int seed_index) {
  ExperimentConfig c;
  c.name = "desk-" + to_string(kind) + "-s" + std::to_string(seed_index);
  c.dataset.preset = "synthetic";
  c.dataset.synthetic.style = "shapes";
  c.dataset.synthetic.train_per_class = 200;
  c.dataset.synthetic.val_per_class = 50;
  c.dataset.synthetic.seed = 0;
  c.trigger.trigger_id = 10;
  c.trigger.seed = 0;
  c.trigger.patch_size = 7;
  c.poison.mode = "targeted";
  c.poison.target_classes = {"0"};
  c.poison.rate = 0.01;
  c.method = desk_method(kind, o.epochs);
  c.seeds = seeds_for(seed_index);
  c.output_root = o.work_dir;
  c.threads = o.threads;
  return c;
}

DistillConfig desk_distill(double fraction, int epochs) {
  DistillConfig d;
  d.clean_fraction = fraction;
  d.batch_size = 128;
  d.epochs = epochs;
  return d;
}

void describe(const std::string& label, const RunRecord& r) {
  const auto c = cells_of(r.clean_model), b = cells_of(r.backdoored_model);
  std::clog << "[desk] " << std::left << std::setw(34) << label << std::right << " clean model: acc " << fmt(c.clean_acc)
            << " / " << fmt(c.patched_acc) << " FP " << c.clean_fp << " / " << c.patched_fp
            << " | backdoored: acc " << fmt(b.clean_acc) << " / " << fmt(b.patched_acc) << " FP " << b.clean_fp
            << " / " << b.patched_fp << " | poisoned " << r.poisoned_count << std::endl;
}

double patched_fp(const EvalReport& r) { return static_cast<double>(r.target_fp_patched()); }

}  // namespace

std::vector<Outcome> run_desk_suite(const DeskOptions& o) {
  std::vector<Outcome> out;
  nlohmann::json summary;

  // Targeted 1% runs: MoCo v2 and BYOL on two seed sets, RotNet on one.
  std::vector<std::pair<std::string, RunRecord>> targeted;
  std::string error;
  try {
    for (auto kind : {MethodKind::kMocoV2, MethodKind::kByol}) {
      for (int s = 0; s < 2; ++s) {
        const auto r = run_attack_pipeline(desk_experiment(o, kind, s));
        targeted.emplace_back(to_string(kind) + " seed " + std::to_string(s), r);
        describe(targeted.back().first, r);
      }
    }
  } catch (const std::exception& e) {
    error = e.what();
  }

  out.push_back(guarded(7, [&] {
    if (!error.empty()) throw std::runtime_error(error);
    bool ok = true;
    std::string detail;
    for (const auto& [label, r] : targeted) {
      const double clean = patched_fp(r.clean_model), bd = patched_fp(r.backdoored_model);
      const bool pass = bd > 0.0 && bd >= 3.0 * clean;
      ok = ok && pass;
      detail += (detail.empty() ? "" : "; ") + label + " patched FP " + fmt(bd, 0) + " vs clean model " + fmt(clean, 0) +
                (clean > 0 ? " (" + fmt(bd / clean, 2) + "x)" : "");
      summary["targeted"].push_back({{"run", label}, {"bd_fp", bd}, {"clean_fp", clean}});
    }
    return Outcome{7, ok, detail + "; need >= 3x"};
  }));

  RunRecord rotnet;
  out.push_back(guarded(9, [&] {
    rotnet = run_attack_pipeline(desk_experiment(o, MethodKind::kRotNet, 0));
    describe("rotnet seed 0", rotnet);
    const double clean = patched_fp(rotnet.clean_model), bd = patched_fp(rotnet.backdoored_model);
    summary["rotnet"] = {{"bd_fp", bd}, {"clean_fp", clean}};
    return Outcome{9, bd < 2.0 * clean,
                   "RotNet patched FP " + fmt(bd, 0) + " vs clean model " + fmt(clean, 0) + "; need < 2x"};
  }));

  out.push_back(guarded(8, [&] {
    if (!error.empty()) throw std::runtime_error(error);
    auto all = targeted;
    if (rotnet.config_hash.size()) all.emplace_back("rotnet seed 0", rotnet);
    bool ok = true;
    double worst = 0.0;
    for (const auto& [label, r] : all) {
      const double gap = std::abs(r.backdoored_model.clean_acc - r.clean_model.clean_acc);
      worst = std::max(worst, gap);
      ok = ok && gap <= 3.0;
    }
    return Outcome{8, ok, "largest clean-accuracy gap " + fmt(worst, 2) + " points over " +
                              std::to_string(all.size()) + " runs; need <= 3"};
  }));

  const auto moco = desk_experiment(o, MethodKind::kMocoV2, 0);
  out.push_back(guarded(10, [&] {
    const auto views = run_view_mode_analysis(moco);
    for (const auto& row : views.rows) describe(row.label, row.run);
    const double both = patched_fp(views.rows.at(0).run.backdoored_model);
    const double one = patched_fp(views.rows.at(1).run.backdoored_model);
    summary["views"] = views.json;
    return Outcome{10, one < 0.25 * both,
                   "one-view FP " + fmt(one, 0) + " vs both-view FP " + fmt(both, 0) + "; need < 25%"};
  }));

  out.push_back(guarded(11, [&] {
    const auto ablation = run_rate_ablation(moco, {0.01, 0.005, 0.002, 0.0005});
    std::string detail;
    int inversions = 0;
    bool within_band = true;
    for (std::size_t i = 0; i < ablation.points.size(); ++i) {
      const auto& p = ablation.points[i];
      describe("rate " + fmt(100 * p.rate, 2) + "%", p.run);
      detail += (i ? ", " : "") + fmt(100 * p.rate, 2) + "%: " + fmt(p.target_fp, 0);
      if (i > 0 && p.target_fp > ablation.points[i - 1].target_fp) {
        ++inversions;
        within_band = within_band && p.target_fp <= 1.2 * ablation.points[i - 1].target_fp;
      }
    }
    const double last = ablation.points.back().target_fp;
    const bool near_clean = last <= 2.0 * ablation.clean_baseline_fp;
    summary["ablation"] = ablation.json;
    return Outcome{11, inversions <= 1 && within_band && near_clean,
                   "FP " + detail + " (" + std::to_string(inversions) + " inversions); clean baseline " +
                       fmt(ablation.clean_baseline_fp, 0) + ", lowest rate needs <= 2x"};
  }));

  out.push_back(guarded(12, [&] {
    auto c = moco;
    c.name = "desk-untargeted";
    c.poison.mode = "untargeted";
    c.poison.target_classes.clear();
    c.poison.rate = 0.05;
    const auto r = run_attack_pipeline(c);
    describe("untargeted 5%", r);
    const double drop = r.clean_model.patched_acc - r.backdoored_model.patched_acc;
    const double gap = std::abs(r.clean_model.clean_acc - r.backdoored_model.clean_acc);
    summary["untargeted"] = {{"patched_drop", drop}, {"clean_gap", gap}};
    return Outcome{12, drop >= 2.0 && gap <= 2.0,
                   "patched accuracy drop " + fmt(drop, 2) + " (need >= 2), clean gap " + fmt(gap, 2) +
                       " (need <= 2)"};
  }));

  out.push_back(guarded(13, [&] {
    std::vector<double> accs;
    double teacher_fp = 0, student_fp = 0, teacher_acc = 0;
    for (double fraction : {0.25, 0.10, 0.05}) {
      auto c = moco;
      c.distill = desk_distill(fraction, o.epochs);
      const auto r = run_attack_pipeline(c);
      const auto& s = r.student.value();
      std::clog << "[desk] distill " << fmt(100 * fraction, 0) << "% clean: student acc " << fmt(s.clean_acc)
                << " / " << fmt(s.patched_acc) << " FP " << s.target_fp_clean() << " / " << s.target_fp_patched()
                << std::endl;
      accs.push_back(s.clean_acc);
      if (fraction == 0.25) {
        teacher_fp = patched_fp(r.backdoored_model);
        student_fp = patched_fp(s);
        teacher_acc = r.backdoored_model.clean_acc;
      }
    }
    const double reduction = teacher_fp > 0 ? 1.0 - student_fp / teacher_fp : 0.0;
    const double drop = teacher_acc - accs[0];
    const bool ordered = accs[0] >= accs[1] - 1.0 && accs[1] >= accs[2] - 1.0;
    summary["distill"] = {{"teacher_fp", teacher_fp}, {"student_fp", student_fp}, {"accs", accs}};
    return Outcome{13, reduction >= 0.8 && drop <= 8.0 && ordered,
                   "FP " + fmt(teacher_fp, 0) + " -> " + fmt(student_fp, 0) + " (" + fmt(100 * reduction, 0) +
                       "% reduction, need >= 80%), clean acc drop " + fmt(drop, 2) + " (need <= 8), acc 25/10/5% " +
                       fmt(accs[0]) + "/" + fmt(accs[1]) + "/" + fmt(accs[2]) + (ordered ? " ordered" : " not ordered")};
  }));

  std::filesystem::create_directories(o.work_dir);
  write_text_file(o.work_dir / "acceptance_summary.json", summary.dump(2) + "\n");
  return out;
}

}  // namespace sslbd::acceptance
