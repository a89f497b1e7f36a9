#include "sslbd/harness.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <chrono>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "sslbd/dataset.hpp"
#include "sslbd/errors.hpp"
#include "sslbd/hashing.hpp"
#include "sslbd/poison.hpp"
#include "sslbd/trainer.hpp"

namespace sslbd {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------- config

namespace {

json trigger_json(const TriggerSpec& t) {
  return {{"trigger_id", t.trigger_id}, {"seed", t.seed}, {"patch_size", t.patch_size}};
}

json synthetic_json(const SyntheticSpec& s) {
  return {{"style", s.style},
          {"image_size", s.image_size},
          {"train_per_class", s.train_per_class},
          {"val_per_class", s.val_per_class},
          {"seed", s.seed}};
}

json results_relevant(const ExperimentConfig& c) {
  json j = to_json(c);
  j.erase("output_root");
  j.erase("threads");
  j.erase("keep_epoch_checkpoints");
  j.erase("name");
  return j;
}

}  // namespace

json to_json(const ExperimentConfig& c) {
  json j{{"name", c.name},
         {"dataset",
          {{"preset", c.dataset.preset}, {"root", c.dataset.root.string()}, {"synthetic", synthetic_json(c.dataset.synthetic)}}},
         {"trigger", trigger_json(c.trigger)},
         {"poison",
          {{"mode", c.poison.mode},
           {"target_classes", c.poison.target_classes},
           {"rate", c.poison.rate},
           {"within_class_fraction", c.poison.within_class_fraction},
           {"extra_untargeted_rate", c.poison.extra_untargeted_rate}}},
         {"method", to_json(c.method)},
         {"probe", to_json(c.probe)},
         {"view_mode", to_string(c.view_mode)},
         {"seeds",
          {{"poison", c.seeds.poison},
           {"patched_val", c.seeds.patched_val},
           {"train", c.seeds.train},
           {"probe", c.seeds.probe},
           {"distill", c.seeds.distill}}},
         {"output_root", c.output_root.string()},
         {"threads", c.threads},
         {"keep_epoch_checkpoints", c.keep_epoch_checkpoints}};
  j["distill"] = c.distill ? to_json(*c.distill) : json(nullptr);
  return j;
}

ExperimentConfig experiment_config_from_json(const json& j) {
  ExperimentConfig c;
  try {
    c.name = j.value("name", c.name);
    if (j.contains("dataset")) {
      const auto& d = j.at("dataset");
      c.dataset.preset = d.value("preset", c.dataset.preset);
      c.dataset.root = d.value("root", std::string());
      if (d.contains("synthetic")) {
        const auto& s = d.at("synthetic");
        c.dataset.synthetic.style = s.value("style", c.dataset.synthetic.style);
        c.dataset.synthetic.image_size = s.value("image_size", c.dataset.synthetic.image_size);
        c.dataset.synthetic.train_per_class = s.value("train_per_class", c.dataset.synthetic.train_per_class);
        c.dataset.synthetic.val_per_class = s.value("val_per_class", c.dataset.synthetic.val_per_class);
        c.dataset.synthetic.seed = s.value("seed", c.dataset.synthetic.seed);
      }
    }
    if (j.contains("trigger")) {
      const auto& t = j.at("trigger");
      c.trigger.trigger_id = t.value("trigger_id", c.trigger.trigger_id);
      c.trigger.seed = t.value("seed", c.trigger.seed);
      c.trigger.patch_size = t.value("patch_size", c.trigger.patch_size);
    }
    if (j.contains("poison")) {
      const auto& p = j.at("poison");
      c.poison.mode = p.value("mode", c.poison.mode);
      c.poison.target_classes = p.value("target_classes", c.poison.target_classes);
      c.poison.rate = p.value("rate", c.poison.rate);
      c.poison.within_class_fraction = p.value("within_class_fraction", c.poison.within_class_fraction);
      c.poison.extra_untargeted_rate = p.value("extra_untargeted_rate", c.poison.extra_untargeted_rate);
    }
    if (j.contains("method")) c.method = method_config_from_json(j.at("method"));
    if (j.contains("probe")) c.probe = probe_config_from_json(j.at("probe"));
    if (j.contains("distill") && !j.at("distill").is_null()) c.distill = distill_config_from_json(j.at("distill"));
    c.view_mode = parse_view_mode(j.value("view_mode", to_string(c.view_mode)));
    if (j.contains("seeds")) {
      const auto& s = j.at("seeds");
      c.seeds.poison = s.value("poison", c.seeds.poison);
      c.seeds.patched_val = s.value("patched_val", c.seeds.patched_val);
      c.seeds.train = s.value("train", c.seeds.train);
      c.seeds.probe = s.value("probe", c.seeds.probe);
      c.seeds.distill = s.value("distill", c.seeds.distill);
    }
    c.output_root = j.value("output_root", c.output_root.string());
    c.threads = j.value("threads", c.threads);
    c.keep_epoch_checkpoints = j.value("keep_epoch_checkpoints", c.keep_epoch_checkpoints);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("experiment config: ") + e.what());
  }
  const auto& m = c.poison.mode;
  if (m != "targeted" && m != "untargeted" && m != "superclass" && m != "none") {
    throw ConfigError("poison mode must be targeted, untargeted, superclass or none");
  }
  if (!(c.poison.rate >= 0.0 && c.poison.rate <= 1.0) ||
      !(c.poison.extra_untargeted_rate >= 0.0 && c.poison.extra_untargeted_rate <= 1.0)) {
    throw ConfigError("poison rates must lie in [0, 1]");
  }
  if ((m == "targeted" && c.poison.target_classes.size() != 1) ||
      (m == "superclass" && c.poison.target_classes.empty())) {
    throw ConfigError("targeted poison needs one target class, superclass at least one");
  }
  if (c.threads < 1) throw ConfigError("threads must be positive");
  return c;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("missing config " + path.string());
  try {
    return experiment_config_from_json(json::parse(read_text_file(path)));
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
}

std::string config_hash(const ExperimentConfig& c) { return sha256_hex(results_relevant(c).dump()).substr(0, 16); }

// ---------------------------------------------------------------- records

const StageRecord& RunRecord::stage(const std::string& name) const {
  for (const auto& s : stages) {
    if (s.name == name) return s;
  }
  throw ConfigError("run has no stage '" + name + "'");
}

json to_json(const RunRecord& r) {
  json stages = json::array();
  for (const auto& s : r.stages) {
    stages.push_back({{"name", s.name},
                      {"dir", s.dir.string()},
                      {"input_hash", s.input_hash},
                      {"seconds", s.seconds},
                      {"reused", s.reused},
                      {"artifacts", s.artifacts}});
  }
  json j{{"config_hash", r.config_hash},
         {"config", r.config},
         {"stages", stages},
         {"tool_version", r.tool_version},
         {"clean_model", to_json(r.clean_model)},
         {"backdoored_model", to_json(r.backdoored_model)},
         {"poisoned_count", r.poisoned_count},
         {"expected_poisoned_count", r.expected_poisoned_count}};
  j["student"] = r.student ? to_json(*r.student) : json(nullptr);
  return j;
}

RunRecord run_record_from_json(const json& j) {
  RunRecord r;
  try {
    r.config_hash = j.at("config_hash").get<std::string>();
    r.config = j.at("config");
    r.tool_version = j.at("tool_version").get<std::string>();
    for (const auto& s : j.at("stages")) {
      StageRecord st;
      st.name = s.at("name").get<std::string>();
      st.dir = s.at("dir").get<std::string>();
      st.input_hash = s.at("input_hash").get<std::string>();
      st.seconds = s.at("seconds").get<double>();
      st.reused = s.at("reused").get<bool>();
      st.artifacts = s.at("artifacts").get<std::map<std::string, std::string>>();
      r.stages.push_back(st);
    }
    r.clean_model = eval_report_from_json(j.at("clean_model"));
    r.backdoored_model = eval_report_from_json(j.at("backdoored_model"));
    if (!j.at("student").is_null()) r.student = eval_report_from_json(j.at("student"));
    r.poisoned_count = j.at("poisoned_count").get<int64_t>();
    r.expected_poisoned_count = j.at("expected_poisoned_count").get<int64_t>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("run record: ") + e.what());
  }
  return r;
}

// ---------------------------------------------------------------- plumbing

namespace {

class FileLock {
 public:
  explicit FileLock(const fs::path& path) {
    fs::create_directories(path.parent_path());
    fd_ = ::open(path.c_str(), O_CREAT | O_RDWR, 0644);
    if (fd_ < 0) throw IoError("cannot open lock " + path.string());
    if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
      ::close(fd_);
      throw ConfigError("run directory is locked by another process: " + path.parent_path().string());
    }
  }
  ~FileLock() {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
  FileLock(const FileLock&) = delete;
  FileLock& operator=(const FileLock&) = delete;

 private:
  int fd_ = -1;
};

using Artifacts = std::map<std::string, std::string>;

// Stage outputs live in a content-addressed store keyed by the stage inputs,
// <out>/stages/<name>-<input hash>; <out>/<config hash>/<name> links there,
// so runs that share a stage's inputs share its artifacts.
class StageRunner {
 public:
  StageRunner(fs::path out_root, fs::path run_dir) : out_(std::move(out_root)), run_dir_(std::move(run_dir)) {}

  template <typename Body>
  StageRecord run(const std::string& name, const json& inputs, Body&& body) {
    StageRecord rec;
    rec.name = name;
    rec.input_hash = sha256_hex(inputs.dump()).substr(0, 16);
    rec.dir = run_dir_ / name;
    const fs::path store = out_ / "stages" / (name + "-" + rec.input_hash);
    {
      FileLock lock(out_ / "stages" / (name + "-" + rec.input_hash + ".lock"));
      if (fs::exists(store / "stage.json")) {
        rec.reused = true;
        rec.artifacts = json::parse(read_text_file(store / "stage.json")).at("artifacts").get<Artifacts>();
      } else {
        const fs::path partial = store.string() + ".partial";
        fs::create_directories(partial);
        write_text_file(partial / "inputs.json", inputs.dump(2) + "\n");
        std::clog << "[" << name << "] running in " << partial.string() << std::endl;
        const auto t0 = std::chrono::steady_clock::now();
        try {
          rec.artifacts = body(partial);
        } catch (const Error& e) {
          throw Error(e.code(), "stage '" + name + "' failed (partial artifacts in " + partial.string() +
                                    "; rerun to resume): " + e.what());
        }
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        write_text_file(partial / "stage.json",
                        json{{"name", name}, {"input_hash", rec.input_hash}, {"seconds", rec.seconds},
                             {"artifacts", rec.artifacts}}
                                .dump(2) +
                            "\n");
        fs::rename(partial, store);
        std::clog << "[" << name << "] done in " << std::fixed << std::setprecision(1) << rec.seconds << " s"
                  << std::endl;
      }
    }
    std::error_code ec;
    fs::remove(rec.dir, ec);
    fs::create_directory_symlink(fs::relative(store, run_dir_), rec.dir);
    return rec;
  }

 private:
  fs::path out_;
  fs::path run_dir_;
};

int resolve_class(const DatasetManifest& m, const std::string& name) {
  if (!name.empty() && std::all_of(name.begin(), name.end(), ::isdigit)) {
    const int idx = std::stoi(name);
    if (idx < 0 || idx >= static_cast<int>(m.classes.size())) throw ConfigError("class index out of range: " + name);
    return idx;
  }
  return m.class_index(name);
}

std::vector<int> resolve_classes(const DatasetManifest& m, const std::vector<std::string>& names) {
  std::vector<int> out;
  for (const auto& n : names) out.push_back(resolve_class(m, n));
  return out;
}

DatasetManifest apply_poison_config(const ExperimentConfig& c, const DatasetManifest& train, int64_t& expected) {
  DatasetManifest out = train;
  expected = 0;
  const auto targets = resolve_classes(train, c.poison.target_classes);
  if (c.poison.mode == "targeted" && c.poison.rate > 0.0) {
    const auto recipe = targeted_recipe_for_rate(train, targets.at(0), c.poison.rate, c.trigger, c.seeds.poison);
    expected += expected_poison_count(train, recipe);
    out = poison_targeted(out, recipe);
  } else if (c.poison.mode == "superclass" && c.poison.within_class_fraction > 0.0) {
    PoisonRecipe recipe;
    recipe.mode = PoisonMode::kSuperclass;
    recipe.target_classes = targets;
    recipe.within_class_fraction = c.poison.within_class_fraction;
    recipe.trigger = c.trigger;
    recipe.rng_seed = c.seeds.poison;
    expected += expected_poison_count(train, recipe);
    out = poison_superclass(out, recipe);
  } else if (c.poison.mode == "untargeted" && c.poison.rate > 0.0) {
    expected += round_half_even(c.poison.rate * static_cast<double>(train.entries.size()));
    out = poison_untargeted(out, c.poison.rate, c.trigger, c.seeds.poison);
  }
  if (c.poison.extra_untargeted_rate > 0.0) {
    expected += round_half_even(c.poison.extra_untargeted_rate * static_cast<double>(train.entries.size()));
    out = poison_untargeted(out, c.poison.extra_untargeted_rate, c.trigger, derive_seed(c.seeds.poison, "extra"));
  }
  return out;
}

std::optional<int> target_of(const ExperimentConfig& c, const DatasetManifest& m) {
  if (c.poison.mode == "targeted" || c.poison.mode == "superclass") {
    if (!c.poison.target_classes.empty()) return resolve_class(m, c.poison.target_classes.front());
  }
  return std::nullopt;
}

void check_provenance(const fs::path& checkpoint, const std::string& expected_fingerprint) {
  const auto meta = read_checkpoint_meta(checkpoint);
  if (meta.data_fingerprint != expected_fingerprint) {
    throw ProvenanceError("checkpoint " + checkpoint.string() + " was not trained on the expected data");
  }
}

std::vector<std::string> ids_of(const DatasetManifest& m) {
  std::vector<std::string> ids;
  for (const auto& e : m.entries) ids.push_back(e.image_id);
  return ids;
}

}  // namespace

fs::path resolve_dataset_root(const ExperimentConfig& config) {
  if (!config.dataset.root.empty()) {
    if (!fs::exists(config.dataset.root / "train")) {
      throw DataError("dataset root has no train/ folder: " + config.dataset.root.string());
    }
    return config.dataset.root;
  }
  if (config.dataset.preset != "synthetic") throw ConfigError("dataset root is required for preset " + config.dataset.preset);
  const auto spec_hash = sha256_hex(synthetic_json(config.dataset.synthetic).dump()).substr(0, 16);
  const fs::path root = config.output_root / "datasets" / ("synthetic-" + spec_hash);
  FileLock lock(config.output_root / "datasets" / ("synthetic-" + spec_hash + ".lock"));
  if (!fs::exists(root / "train")) {
    const fs::path partial = root.string() + ".partial";
    fs::remove_all(partial);
    write_synthetic_dataset(config.dataset.synthetic, partial);
    fs::rename(partial, root);
  }
  return root;
}

EvalReport evaluate_encoder(const fs::path& checkpoint, const LabeledImageSet& labeled, const LabeledImageSet& val,
                            const LabeledImageSet& patched_val, const std::vector<std::string>& classes,
                            std::optional<int> target_class, const ProbeConfig& probe, const fs::path& probe_out) {
  if (val.ids != patched_val.ids) throw DataError("clean and patched validation sets cover different images");
  auto encoder = load_encoder(checkpoint);
  const auto train_emb = extract_embeddings(encoder, labeled.images, labeled.ids);
  const auto lin = train_linear_probe(train_emb.rows, labeled.labels, static_cast<int>(classes.size()), probe);
  if (!probe_out.empty()) save_probe(probe_out, lin);
  const auto clean_emb = extract_embeddings(encoder, val.images, val.ids);
  const auto patched_emb = extract_embeddings(encoder, patched_val.images, patched_val.ids);
  auto report = make_eval_report(classes, val.labels, predict(lin, clean_emb.rows), predict(lin, patched_emb.rows),
                                 target_class);
  report.metadata = {{"checkpoint", checkpoint.string()},
                     {"checkpoint_sha256", encoder.file_hash},
                     {"tap", to_string(encoder.meta.tap)},
                     {"probe", to_json(probe)},
                     {"probe_train_accuracy", lin.train_accuracy},
                     {"labeled_count", labeled.size()}};
  return report;
}

// ---------------------------------------------------------------- pipeline

RunRecord run_attack_pipeline(const ExperimentConfig& config, bool force) {
  const std::string hash = config_hash(config);
  const fs::path out = config.output_root;
  const fs::path run_dir = out / hash;
  fs::create_directories(run_dir);
  FileLock lock(run_dir / ".lock");
  const fs::path record_path = run_dir / "run_record.json";
  if (fs::exists(record_path) && !force) return run_record_from_json(json::parse(read_text_file(record_path)));

  write_text_file(run_dir / "config.json", to_json(config).dump(2) + "\n");
  const fs::path root = resolve_dataset_root(config);
  const auto train_src = build_manifest(root, Split::kTrain, config.dataset.preset);
  const auto val_src = build_manifest(root, Split::kVal, config.dataset.preset);
  const auto target = target_of(config, train_src);
  StageRunner stages(out, run_dir);
  RunRecord record;
  record.config_hash = hash;
  record.config = to_json(config);

  // Poison the training split and build the patched validation split.
  const json poison_inputs{{"train_manifest", train_src.content_hash()},
                           {"val_manifest", val_src.content_hash()},
                           {"root", fs::absolute(root).string()},
                           {"trigger", trigger_json(config.trigger)},
                           {"poison", to_json(config)["poison"]},
                           {"seed_poison", config.seeds.poison},
                           {"seed_patched_val", config.seeds.patched_val}};
  auto poison = stages.run("poison", poison_inputs, [&](const fs::path& dir) {
    int64_t expected = 0;
    const auto poisoned = apply_poison_config(config, train_src, expected);
    if (static_cast<int64_t>(poisoned.poisoned_count()) != expected) {
      throw DataError("poisoned count " + std::to_string(poisoned.poisoned_count()) + " != closed form " +
                      std::to_string(expected));
    }
    const auto train_out = materialize(poisoned, root, dir / "train_data");
    const auto patched = build_patched_valset(val_src, config.trigger, config.seeds.patched_val);
    const auto val_out = materialize(patched, root, dir / "patched_val");
    save_trigger_files(dir / "trigger", config.trigger);
    write_text_file(dir / "accounting.json",
                    json{{"poisoned", poisoned.poisoned_count()}, {"expected", expected}}.dump(2) + "\n");
    return Artifacts{{"train_manifest", train_out.manifest_hash}, {"patched_val_manifest", val_out.manifest_hash}};
  });
  record.stages.push_back(poison);
  const auto accounting = json::parse(read_text_file(poison.dir / "accounting.json"));
  record.poisoned_count = accounting.at("poisoned").get<int64_t>();
  record.expected_poisoned_count = accounting.at("expected").get<int64_t>();
  const auto train_poisoned = load_manifest(poison.dir / "train_data" / "manifest_train.json");
  const auto patched_manifest = load_manifest(poison.dir / "patched_val" / "manifest_val.json");

  // Train the clean baseline and the encoder on poisoned data, same seeds.
  MethodConfig method = config.method;
  method.seed = config.seeds.train;
  const ViewMode view = record.poisoned_count == 0 ? ViewMode::kStandard : config.view_mode;
  const auto clean_set = UnlabeledImageSet::load(train_src, root);
  const auto poisoned_set =
      UnlabeledImageSet::load(train_poisoned, poison.dir / "train_data", view != ViewMode::kStandard);
  TrainOptions topts;
  topts.threads = config.threads;
  topts.keep_epoch_checkpoints = config.keep_epoch_checkpoints;
  auto train_stage = [&](const std::string& name, const UnlabeledImageSet& data, ViewMode mode) {
    const json inputs{{"method", to_json(method)}, {"data", data.fingerprint()}, {"view_mode", to_string(mode)}};
    return stages.run(name, inputs, [&](const fs::path& dir) {
      TrainOptions o = topts;
      o.view_mode = mode;
      o.on_epoch = [&](int epoch, double loss) {
        std::clog << std::setprecision(4) << "[" << name << "] epoch " << epoch + 1 << "/" << method.epochs << " loss " << loss << std::endl;
      };
      const auto result = train(method, data, dir, o);
      return Artifacts{{"final.ckpt", sha256_file(result.checkpoint)}};
    });
  };
  const auto train_clean = train_stage("train_clean", clean_set, ViewMode::kStandard);
  record.stages.push_back(train_clean);
  const auto train_bd = train_stage("train_backdoored", poisoned_set, view);
  record.stages.push_back(train_bd);
  const fs::path ckpt_clean = train_clean.dir / "final.ckpt";
  const fs::path ckpt_bd = train_bd.dir / "final.ckpt";
  check_provenance(ckpt_clean, clean_set.fingerprint());
  check_provenance(ckpt_bd, poisoned_set.fingerprint());

  // Linear probes on a clean labeled subset; clean and patched validation.
  const auto labeled_manifest = select_labeled_subset(train_poisoned, config.probe.label_fraction, config.seeds.probe);
  const auto labeled = LabeledImageSet::load(labeled_manifest, poison.dir / "train_data");
  const auto val = LabeledImageSet::load(val_src, root);
  const auto patched = LabeledImageSet::load(patched_manifest, poison.dir / "patched_val");
  ProbeConfig probe = config.probe;
  probe.seed = config.seeds.probe;
  const json eval_inputs{{"clean_ckpt", sha256_file(ckpt_clean)},
                         {"backdoored_ckpt", sha256_file(ckpt_bd)},
                         {"probe", to_json(probe)},
                         {"labeled", sha256_hex(json(ids_of(labeled_manifest)).dump())},
                         {"val", val_src.content_hash()},
                         {"patched_val", patched_manifest.content_hash()},
                         {"target", target ? *target : -1}};
  auto eval = stages.run("eval", eval_inputs, [&](const fs::path& dir) {
    const auto rc = evaluate_encoder(ckpt_clean, labeled, val, patched, train_src.classes, target, probe,
                                     dir / "probe_clean_model.pt");
    const auto rb = evaluate_encoder(ckpt_bd, labeled, val, patched, train_src.classes, target, probe,
                                     dir / "probe_backdoored_model.pt");
    write_text_file(dir / "eval_clean_model.json", to_json(rc).dump(2) + "\n");
    write_text_file(dir / "eval_backdoored_model.json", to_json(rb).dump(2) + "\n");
    return Artifacts{{"eval_clean_model.json", sha256_file(dir / "eval_clean_model.json")},
                     {"eval_backdoored_model.json", sha256_file(dir / "eval_backdoored_model.json")}};
  });
  record.stages.push_back(eval);
  record.clean_model = eval_report_from_json(json::parse(read_text_file(eval.dir / "eval_clean_model.json")));
  record.backdoored_model =
      eval_report_from_json(json::parse(read_text_file(eval.dir / "eval_backdoored_model.json")));

  // Optional defense: distill the backdoored encoder on clean data.
  if (config.distill) {
    DistillConfig dc = *config.distill;
    dc.seed = config.seeds.distill;
    const auto subset = select_distill_subset(train_src, dc.clean_fraction, dc.seed);
    const auto clean_subset = UnlabeledImageSet::load(subset, root);
    const json inputs{{"teacher", sha256_file(ckpt_bd)},
                      {"distill", to_json(dc)},
                      {"data", clean_subset.fingerprint()},
                      {"probe", eval_inputs}};
    auto distill_stage = stages.run("distill", inputs, [&](const fs::path& dir) {
      const auto result = distill(ckpt_bd, clean_subset, dc, dir, config.threads);
      const auto rs = evaluate_encoder(result.checkpoint, labeled, val, patched, train_src.classes, target, probe,
                                       dir / "probe_student.pt");
      write_text_file(dir / "eval_student.json", to_json(rs).dump(2) + "\n");
      return Artifacts{{"student.ckpt", sha256_file(result.checkpoint)},
                       {"eval_student.json", sha256_file(dir / "eval_student.json")}};
    });
    record.stages.push_back(distill_stage);
    record.student = eval_report_from_json(json::parse(read_text_file(distill_stage.dir / "eval_student.json")));
  }

  write_text_file(record_path, to_json(record).dump(2) + "\n");
  return record;
}

// ---------------------------------------------------------------- analyses

ViewAnalysis run_view_mode_analysis(const ExperimentConfig& config) {
  ViewAnalysis out;
  struct Variant {
    const char* label;
    ViewMode mode;
    double extra;
  };
  const std::vector<Variant> variants{
      {"target poison (both views)", ViewMode::kStandard, 0.0},
      {"target poison (one view)", ViewMode::kOneViewPoisoned, 0.0},
      {"target poison (one view) + random poison (both views)", ViewMode::kRandomPoisonBothViews, config.poison.rate},
  };
  for (const auto& v : variants) {
    ExperimentConfig c = config;
    c.view_mode = v.mode;
    c.poison.extra_untargeted_rate = v.extra;
    out.rows.push_back({v.label, v.mode, v.extra, run_attack_pipeline(c)});
  }
  std::ostringstream text;
  text << std::fixed << std::setprecision(1);
  text << std::left << std::setw(56) << "poison" << std::right << std::setw(10) << "clean Acc" << std::setw(10)
       << "patch FP" << std::setw(12) << "clean-mdl FP\n";
  json rows = json::array();
  for (const auto& r : out.rows) {
    const auto& b = r.run.backdoored_model;
    text << std::left << std::setw(56) << r.label << std::right << std::setw(10) << b.clean_acc << std::setw(10)
         << b.target_fp_patched() << std::setw(12) << r.run.clean_model.target_fp_patched() << "\n";
    rows.push_back({{"label", r.label},
                    {"view_mode", to_string(r.view_mode)},
                    {"extra_untargeted_rate", r.extra_untargeted_rate},
                    {"config_hash", r.run.config_hash},
                    {"clean_acc", b.clean_acc},
                    {"patched_acc", b.patched_acc},
                    {"target_fp_patched", b.target_fp_patched()},
                    {"clean_model_target_fp_patched", r.run.clean_model.target_fp_patched()}});
  }
  out.text = text.str();
  out.json = {{"rows", rows}};
  return out;
}

RateAblation run_rate_ablation(const ExperimentConfig& config, const std::vector<double>& rates) {
  if (rates.empty()) throw ConfigError("no rates given");
  for (std::size_t i = 1; i < rates.size(); ++i) {
    if (rates[i] > rates[i - 1]) throw ConfigError("rates must be sorted in descending order");
  }
  RateAblation out;
  for (double r : rates) {
    ExperimentConfig c = config;
    c.poison.rate = r;
    auto run = run_attack_pipeline(c);
    AblationPoint p;
    p.rate = r;
    p.target_fp = static_cast<double>(run.backdoored_model.target_fp_patched());
    p.clean_acc = run.backdoored_model.clean_acc;
    p.patched_acc = run.backdoored_model.patched_acc;
    out.clean_baseline_fp = static_cast<double>(run.clean_model.target_fp_patched());
    p.run = std::move(run);
    out.points.push_back(std::move(p));
  }
  std::ostringstream text;
  text << std::fixed << std::setprecision(2);
  text << "rate(%)  target FP  clean Acc   (clean baseline FP " << out.clean_baseline_fp << ")\n";
  json series = json::array();
  for (const auto& p : out.points) {
    text << std::setw(7) << 100.0 * p.rate << std::setw(11) << p.target_fp << std::setw(11) << p.clean_acc << "\n";
    series.push_back({{"rate", p.rate},
                      {"target_fp", p.target_fp},
                      {"clean_acc", p.clean_acc},
                      {"patched_acc", p.patched_acc},
                      {"config_hash", p.run.config_hash}});
  }
  out.text = text.str();
  out.json = {{"series", series}, {"clean_baseline_fp", out.clean_baseline_fp}};
  return out;
}

}  // namespace sslbd
