#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>
#include <torch/torch.h>

#include "sslbd/checkpoint.hpp"
#include "sslbd/compress.hpp"
#include "sslbd/dataset.hpp"
#include "sslbd/errors.hpp"
#include "sslbd/harness.hpp"
#include "sslbd/hashing.hpp"
#include "sslbd/manifest.hpp"
#include "sslbd/poison.hpp"
#include "sslbd/probe.hpp"
#include "sslbd/report.hpp"
#include "sslbd/synthetic.hpp"
#include "sslbd/trainer.hpp"
#include "sslbd/trigger.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace sslbd;

namespace {

// A manifest argument is either a manifest file or a dataset root with
// <split>/<class>/ folders. Relative paths resolve against the folder holding
// the manifest (or the dataset root) unless a data root is given.
fs::path data_root_for(const fs::path& manifest, const std::string& override_root) {
  if (!override_root.empty()) return override_root;
  if (fs::is_directory(manifest)) return fs::absolute(manifest);
  return fs::absolute(manifest).parent_path();
}

DatasetManifest manifest_arg(const fs::path& path, Split split) {
  if (fs::is_directory(path)) return build_manifest(path, split);
  return load_manifest(path);
}

json read_json_file(const fs::path& p) {
  if (!fs::exists(p)) throw IoError("missing file " + p.string());
  try {
    return json::parse(read_text_file(p));
  } catch (const json::parse_error& e) {
    throw ConfigError(p.string() + " is not valid JSON: " + e.what());
  }
}

void print_json(const json& j, const std::string& out) {
  if (!out.empty()) write_text_file(out, j.dump(2) + "\n");
}

ExperimentConfig load_config_with_env(const fs::path& path, const std::string& out_override) {
  const json raw = read_json_file(path);
  auto c = experiment_config_from_json(raw);
  if (!out_override.empty()) {
    c.output_root = out_override;
  } else if (!raw.contains("output_root")) {
    if (const char* env = std::getenv("SSLBD_OUTPUT_ROOT")) c.output_root = env;
  }
  return c;
}

std::optional<int> target_index(const DatasetManifest& m, const std::string& name) {
  if (name.empty()) return std::nullopt;
  return m.class_index(name);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Backdoor attacks on self-supervised encoders: poisoning, training, evaluation, defense."};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kToolVersion));

  // trigger
  TriggerSpec trig;
  std::string trig_out;
  auto* c_trigger = app.add_subcommand("trigger", "Generate a trigger patch and write base + resized PNGs");
  c_trigger->add_option("--trigger-id", trig.trigger_id, "Trigger id")->capture_default_str();
  c_trigger->add_option("--seed", trig.seed, "Generator seed")->capture_default_str();
  c_trigger->add_option("--patch-size", trig.patch_size, "Side length in pixels")->capture_default_str();
  c_trigger->add_option("--out", trig_out, "Output folder")->required();

  // poison
  std::string p_mode = "targeted", p_in, p_out;
  std::vector<std::string> p_targets;
  double p_rate = 0.01, p_within = 0.0;
  uint64_t p_seed = 42, p_val_seed = 2;
  TriggerSpec p_trig;
  auto* c_poison = app.add_subcommand("poison", "Poison a train split and build the patched validation split");
  c_poison->add_option("--mode", p_mode, "targeted | untargeted | superclass")->capture_default_str();
  c_poison->add_option("--target-class", p_targets, "Target class name or index (repeat for superclass)");
  c_poison->add_option("--rate", p_rate, "Injection rate over the whole train split")->capture_default_str();
  c_poison->add_option("--within-class-fraction", p_within, "Superclass mode: fraction of each target class");
  c_poison->add_option("--trigger-id", p_trig.trigger_id)->capture_default_str();
  c_poison->add_option("--trigger-seed", p_trig.seed)->capture_default_str();
  c_poison->add_option("--patch-size", p_trig.patch_size)->capture_default_str();
  c_poison->add_option("--seed", p_seed, "Poison selection/placement seed")->capture_default_str();
  c_poison->add_option("--val-seed", p_val_seed, "Patched validation placement seed")->capture_default_str();
  c_poison->add_option("--in", p_in, "Dataset root with train/ and val/ class folders")->required();
  c_poison->add_option("--out", p_out, "Output root")->required();

  // train
  std::string t_method, t_manifest, t_config, t_view = "standard", t_out, t_root;
  int t_epochs = 0, t_threads = 1, t_keep = 1;
  uint64_t t_seed = 0;
  bool t_seed_set = false;
  auto* c_train = app.add_subcommand("train", "Pretrain an encoder on an unlabeled manifest");
  c_train->add_option("--method", t_method, "moco_v2 | byol | msf | rotnet | jigsaw")->required();
  c_train->add_option("--manifest", t_manifest, "Train manifest")->required();
  c_train->add_option("--config", t_config, "Method config JSON (missing fields take desk defaults)");
  c_train->add_option("--view-mode", t_view, "standard | one_view_poisoned | random_poison_both_views")
      ->capture_default_str();
  c_train->add_option("--epochs", t_epochs, "Override epoch count");
  auto* t_seed_opt = c_train->add_option("--seed", t_seed, "Override training seed");
  c_train->add_option("--data-root", t_root, "Root for relative manifest paths");
  c_train->add_option("--threads", t_threads)->capture_default_str();
  c_train->add_option("--keep-epoch-checkpoints", t_keep)->capture_default_str();
  c_train->add_option("--out", t_out, "Output folder")->required();

  // probe
  std::string pr_ckpt, pr_manifest, pr_config, pr_out, pr_root;
  double pr_fraction = -1.0;
  auto* c_probe = app.add_subcommand("probe", "Train a linear probe on frozen features of a clean labeled subset");
  c_probe->add_option("--checkpoint", pr_ckpt)->required();
  c_probe->add_option("--manifest", pr_manifest, "Train manifest; poisoned entries are never selected")->required();
  c_probe->add_option("--config", pr_config, "Probe config JSON");
  c_probe->add_option("--label-fraction", pr_fraction, "Override labeled fraction");
  c_probe->add_option("--data-root", pr_root);
  c_probe->add_option("--out", pr_out, "Probe file")->required();

  // eval
  std::string e_ckpt, e_train, e_val, e_patched, e_probe_cfg, e_probe_file, e_target, e_out, e_train_root, e_val_root,
      e_patched_root;
  auto* c_eval = app.add_subcommand("eval", "Probe + evaluate a checkpoint on clean and patched validation sets");
  c_eval->add_option("--checkpoint", e_ckpt)->required();
  c_eval->add_option("--train-manifest", e_train, "Manifest the labeled subset is drawn from");
  c_eval->add_option("--probe", e_probe_file, "Use a trained probe instead of fitting one");
  c_eval->add_option("--val-manifest", e_val)->required();
  c_eval->add_option("--patched-manifest", e_patched)->required();
  c_eval->add_option("--probe-config", e_probe_cfg);
  c_eval->add_option("--target-class", e_target);
  c_eval->add_option("--train-root", e_train_root);
  c_eval->add_option("--val-root", e_val_root);
  c_eval->add_option("--patched-root", e_patched_root);
  c_eval->add_option("--out", e_out, "EvalReport JSON");

  // distill
  std::string d_teacher, d_manifest, d_config, d_out, d_root;
  double d_fraction = -1.0;
  int d_epochs = 0, d_threads = 1;
  auto* c_distill = app.add_subcommand("distill", "Distill a teacher into a fresh student on clean data");
  c_distill->add_option("--teacher", d_teacher)->required();
  c_distill->add_option("--clean-manifest", d_manifest)->required();
  c_distill->add_option("--clean-fraction", d_fraction, "Override clean fraction");
  c_distill->add_option("--config", d_config, "Distill config JSON");
  c_distill->add_option("--epochs", d_epochs, "Override epoch count");
  c_distill->add_option("--data-root", d_root);
  c_distill->add_option("--threads", d_threads)->capture_default_str();
  c_distill->add_option("--out", d_out)->required();

  // attack / analyze-views / ablate-rate
  std::string a_config, a_out, a_json;
  bool a_force = false;
  std::vector<double> a_rates{0.01, 0.005, 0.002, 0.0005};
  auto* c_attack = app.add_subcommand("attack", "Full pipeline: poison, train clean + backdoored, probe, evaluate");
  auto* c_views = app.add_subcommand("analyze-views", "Standard vs one-view vs one-view + random poison");
  auto* c_ablate = app.add_subcommand("ablate-rate", "One pipeline run per injection rate");
  for (auto* c : {c_attack, c_views, c_ablate}) {
    c->add_option("--config", a_config, "Experiment config JSON")->required();
    c->add_option("--out", a_out, "Override output root");
    c->add_option("--json", a_json, "Write the result JSON here");
  }
  c_attack->add_flag("--force", a_force, "Recompute even when a run record exists");
  c_ablate->add_option("--rates", a_rates, "Rates, descending")->capture_default_str();

  // export-embeddings
  std::string x_ckpt, x_val, x_patched, x_out, x_val_root, x_patched_root;
  ExportSpec x_spec;
  std::vector<std::string> x_classes;
  auto* c_export = app.add_subcommand("export-embeddings", "Export a clean + patched embedding sample as CSV + JSON");
  c_export->add_option("--checkpoint", x_ckpt)->required();
  c_export->add_option("--val-manifest", x_val)->required();
  c_export->add_option("--patched-manifest", x_patched)->required();
  c_export->add_option("--classes", x_classes, "Class names (default: all)");
  c_export->add_option("--per-class", x_spec.per_class)->capture_default_str();
  c_export->add_option("--patched-count", x_spec.patched_count)->capture_default_str();
  c_export->add_option("--seed", x_spec.seed)->capture_default_str();
  c_export->add_option("--val-root", x_val_root);
  c_export->add_option("--patched-root", x_patched_root);
  c_export->add_option("--out", x_out, "CSV path; sidecar goes next to it")->required();

  // report
  std::vector<std::string> r_runs;
  std::string r_json;
  auto* c_report = app.add_subcommand("report", "Aggregate run records into a four-quadrant table with averages");
  c_report->add_option("runs", r_runs, "run_record.json files")->required();
  c_report->add_option("--json", r_json);

  // synth / import-cifar10
  SyntheticSpec s_spec;
  std::string s_out;
  auto* c_synth = app.add_subcommand("synth", "Write a procedurally generated 10-class image dataset");
  c_synth->add_option("--style", s_spec.style, "shapes | scenes")->capture_default_str();
  c_synth->add_option("--image-size", s_spec.image_size)->capture_default_str();
  c_synth->add_option("--train-per-class", s_spec.train_per_class)->capture_default_str();
  c_synth->add_option("--val-per-class", s_spec.val_per_class)->capture_default_str();
  c_synth->add_option("--seed", s_spec.seed)->capture_default_str();
  c_synth->add_option("--out", s_out)->required();
  std::string ci_in, ci_out;
  int ci_limit = 0;
  auto* c_cifar = app.add_subcommand("import-cifar10", "Convert CIFAR-10 binary batches to class folders");
  c_cifar->add_option("--bin-dir", ci_in)->required();
  c_cifar->add_option("--limit-per-class", ci_limit)->capture_default_str();
  c_cifar->add_option("--out", ci_out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ExitCode::kConfig);
  }
  t_seed_set = t_seed_opt->count() > 0;

  try {
    torch::set_num_threads(1);
    if (*c_trigger) {
      const auto [base, resized] = save_trigger_files(trig_out, trig);
      std::cout << base.string() << "\n" << resized.string() << "\n";
    } else if (*c_poison) {
      const auto train = build_manifest(p_in, Split::kTrain);
      DatasetManifest poisoned;
      int64_t expected = 0;
      const auto mode = parse_poison_mode(p_mode);
      std::vector<int> targets;
      for (const auto& t : p_targets) targets.push_back(train.class_index(t));
      if (mode == PoisonMode::kTargeted) {
        if (targets.size() != 1) throw ConfigError("targeted mode needs exactly one --target-class");
        const auto recipe = targeted_recipe_for_rate(train, targets[0], p_rate, p_trig, p_seed);
        expected = expected_poison_count(train, recipe);
        poisoned = poison_targeted(train, recipe);
      } else if (mode == PoisonMode::kSuperclass) {
        PoisonRecipe recipe;
        recipe.mode = mode;
        recipe.target_classes = targets;
        recipe.within_class_fraction = p_within;
        recipe.trigger = p_trig;
        recipe.rng_seed = p_seed;
        expected = expected_poison_count(train, recipe);
        poisoned = poison_superclass(train, recipe);
      } else {
        expected = round_half_even(p_rate * static_cast<double>(train.entries.size()));
        poisoned = poison_untargeted(train, p_rate, p_trig, p_seed);
      }
      const auto r = materialize(poisoned, p_in, p_out);
      save_trigger_files(fs::path(p_out) / "trigger", p_trig);
      json summary{{"train_manifest", r.manifest_path.string()},
                   {"train_manifest_sha256", r.manifest_hash},
                   {"poisoned", r.poisoned_written},
                   {"expected", expected}};
      if (fs::exists(fs::path(p_in) / "val")) {
        const auto val = build_manifest(p_in, Split::kVal);
        const auto pv = materialize(build_patched_valset(val, p_trig, p_val_seed), p_in, fs::path(p_out) / "patched");
        summary["patched_val_manifest"] = pv.manifest_path.string();
        summary["patched_val_manifest_sha256"] = pv.manifest_hash;
      }
      std::cout << summary.dump(2) << "\n";
    } else if (*c_train) {
      const auto kind = parse_method(t_method);
      MethodConfig cfg = MethodConfig::desk(kind);
      if (!t_config.empty()) {
        json j = read_json_file(t_config);
        j["method"] = to_string(kind);
        cfg = method_config_from_json(j);
      }
      if (t_epochs > 0) cfg.epochs = t_epochs;
      if (t_seed_set) cfg.seed = t_seed;
      cfg.validate();
      const auto mode = parse_view_mode(t_view);
      const auto manifest = manifest_arg(t_manifest, Split::kTrain);
      const auto data = UnlabeledImageSet::load(manifest, data_root_for(t_manifest, t_root), mode != ViewMode::kStandard);
      TrainOptions opts;
      opts.view_mode = mode;
      opts.threads = t_threads;
      opts.keep_epoch_checkpoints = t_keep;
      opts.on_epoch = [&](int epoch, double loss) {
        std::clog << "epoch " << epoch + 1 << "/" << cfg.epochs << " loss " << loss << std::endl;
      };
      const auto result = train(cfg, data, t_out, opts);
      std::cout << result.checkpoint.string() << "\n";
    } else if (*c_probe) {
      ProbeConfig pc = pr_config.empty() ? ProbeConfig{} : probe_config_from_json(read_json_file(pr_config));
      if (pr_fraction > 0) pc.label_fraction = pr_fraction;
      const auto manifest = manifest_arg(pr_manifest, Split::kTrain);
      const auto subset = select_labeled_subset(manifest, pc.label_fraction, pc.seed);
      const auto labeled = LabeledImageSet::load(subset, data_root_for(pr_manifest, pr_root));
      auto encoder = load_encoder(pr_ckpt);
      const auto emb = extract_embeddings(encoder, labeled.images, labeled.ids);
      const auto lin = train_linear_probe(emb.rows, labeled.labels, static_cast<int>(manifest.classes.size()), pc);
      save_probe(pr_out, lin);
      std::cout << "labeled " << labeled.size() << " train accuracy " << lin.train_accuracy << "\n";
    } else if (*c_eval) {
      const ProbeConfig pc = e_probe_cfg.empty() ? ProbeConfig{} : probe_config_from_json(read_json_file(e_probe_cfg));
      const auto val_m = manifest_arg(e_val, Split::kVal);
      const auto patched_m = manifest_arg(e_patched, Split::kVal);
      const auto val = LabeledImageSet::load(val_m, data_root_for(e_val, e_val_root));
      const auto patched = LabeledImageSet::load(patched_m, data_root_for(e_patched, e_patched_root));
      const auto target = target_index(val_m, e_target);
      EvalReport report;
      if (!e_probe_file.empty()) {
        if (val.ids != patched.ids) throw DataError("clean and patched validation sets cover different images");
        auto encoder = load_encoder(e_ckpt);
        const auto lin = load_probe(e_probe_file);
        report = make_eval_report(val_m.classes, val.labels,
                                  predict(lin, extract_embeddings(encoder, val.images, val.ids).rows),
                                  predict(lin, extract_embeddings(encoder, patched.images, patched.ids).rows), target);
        report.metadata = {{"checkpoint", e_ckpt}, {"checkpoint_sha256", encoder.file_hash}, {"probe", e_probe_file}};
      } else {
        if (e_train.empty()) throw ConfigError("eval needs --train-manifest or --probe");
        const auto train_m = manifest_arg(e_train, Split::kTrain);
        const auto subset = select_labeled_subset(train_m, pc.label_fraction, pc.seed);
        const auto labeled = LabeledImageSet::load(subset, data_root_for(e_train, e_train_root));
        report = evaluate_encoder(e_ckpt, labeled, val, patched, val_m.classes, target, pc, {});
      }
      std::cout << render_eval_table(report);
      print_json(to_json(report), e_out);
    } else if (*c_distill) {
      DistillConfig dc = d_config.empty() ? DistillConfig{} : distill_config_from_json(read_json_file(d_config));
      if (d_fraction > 0) dc.clean_fraction = d_fraction;
      if (d_epochs > 0) dc.epochs = d_epochs;
      dc.validate();
      const auto manifest = manifest_arg(d_manifest, Split::kTrain);
      const auto subset = select_distill_subset(manifest, dc.clean_fraction, dc.seed);
      const auto data = UnlabeledImageSet::load(subset, data_root_for(d_manifest, d_root));
      const auto result = distill(d_teacher, data, dc, d_out, d_threads);
      std::cout << result.checkpoint.string() << "\n";
    } else if (*c_attack) {
      const auto cfg = load_config_with_env(a_config, a_out);
      const auto rec = run_attack_pipeline(cfg, a_force);
      const auto row = make_report_row(cfg.dataset.preset, cfg.trigger.trigger_id, to_string(cfg.method.method),
                                       rec.clean_model, rec.backdoored_model);
      std::cout << render_report({row}).text;
      std::cout << "run: " << (cfg.output_root / rec.config_hash).string() << "\n";
      print_json(to_json(rec), a_json);
    } else if (*c_views) {
      const auto analysis = run_view_mode_analysis(load_config_with_env(a_config, a_out));
      std::cout << analysis.text;
      print_json(analysis.json, a_json);
    } else if (*c_ablate) {
      const auto ablation = run_rate_ablation(load_config_with_env(a_config, a_out), a_rates);
      std::cout << ablation.text;
      print_json(ablation.json, a_json);
    } else if (*c_export) {
      const auto val_m = manifest_arg(x_val, Split::kVal);
      const auto patched_m = manifest_arg(x_patched, Split::kVal);
      const auto val = LabeledImageSet::load(val_m, data_root_for(x_val, x_val_root));
      const auto patched = LabeledImageSet::load(patched_m, data_root_for(x_patched, x_patched_root));
      if (x_classes.empty()) x_classes = val_m.classes;
      for (const auto& c : x_classes) x_spec.classes.push_back(val_m.class_index(c));
      auto encoder = load_encoder(x_ckpt);
      const auto clean_emb = extract_embeddings(encoder, val.images, val.ids);
      const auto patched_emb = extract_embeddings(encoder, patched.images, patched.ids);
      const auto bundle = select_export_rows(clean_emb, patched_emb, val.labels, x_spec);
      json sidecar{{"checkpoint", x_ckpt},
                   {"checkpoint_sha256", encoder.file_hash},
                   {"val_manifest_sha256", val_m.content_hash()},
                   {"patched_manifest_sha256", patched_m.content_hash()},
                   {"classes", x_classes},
                   {"per_class", x_spec.per_class},
                   {"patched_count", x_spec.patched_count},
                   {"seed", x_spec.seed}};
      write_export_bundle(x_out, bundle, clean_emb.dim(), sidecar);
      std::cout << bundle.row_ids.size() << " rows -> " << x_out << "\n";
    } else if (*c_report) {
      std::vector<ReportRow> rows;
      for (const auto& path : r_runs) {
        const auto rec = run_record_from_json(read_json_file(path));
        const auto cfg = experiment_config_from_json(rec.config);
        auto row = make_report_row(cfg.dataset.preset, cfg.trigger.trigger_id, to_string(cfg.method.method),
                                   rec.clean_model, rec.backdoored_model);
        rows.push_back(row);
      }
      const auto rendered = render_report(rows);
      std::cout << rendered.text;
      print_json(rendered.json, r_json);
    } else if (*c_synth) {
      write_synthetic_dataset(s_spec, s_out);
      std::cout << s_out << "\n";
    } else if (*c_cifar) {
      import_cifar10(ci_in, ci_out, ci_limit);
      std::cout << ci_out << "\n";
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.code());
  } catch (const c10::Error& e) {
    std::cerr << "error: " << e.what_without_backtrace() << "\n";
    return static_cast<int>(ExitCode::kData);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::kData);
  }
  return 0;
}
