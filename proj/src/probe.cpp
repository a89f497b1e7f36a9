#include "sslbd/probe.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>

#include "sslbd/dataset.hpp"
#include "sslbd/errors.hpp"
#include "sslbd/hashing.hpp"
#include "sslbd/poison.hpp"
#include "sslbd/rng.hpp"
#include "sslbd/ssl_methods.hpp"

namespace sslbd {

namespace F = torch::nn::functional;

AugmentationPolicy eval_policy(const CheckpointMeta& meta) {
  if (meta.config.contains("augmentation")) return augmentation_from_json(meta.config.at("augmentation"));
  return AugmentationPolicy::moco_v2(32);
}

EmbeddingMatrix extract_embeddings(LoadedEncoder& encoder, const std::vector<Image>& images,
                                   const std::vector<std::string>& ids, int batch_size) {
  if (images.size() != ids.size()) throw ConfigError("image and id counts differ");
  const auto policy = eval_policy(encoder.meta);
  torch::NoGradGuard guard;
  encoder.backbone->eval();
  EmbeddingMatrix m;
  m.row_ids = ids;
  m.source_checkpoint_hash = encoder.file_hash;
  std::vector<torch::Tensor> chunks;
  for (std::size_t i = 0; i < images.size(); i += batch_size) {
    std::vector<torch::Tensor> batch;
    for (std::size_t j = i; j < std::min(images.size(), i + batch_size); ++j) {
      batch.push_back(preprocess_eval(images[j], policy));
    }
    chunks.push_back(encoder.backbone->features(torch::stack(batch), encoder.meta.tap));
  }
  const int64_t d = encoder.backbone->tap_dim(encoder.meta.tap);
  m.rows = chunks.empty() ? torch::zeros({0, d}) : torch::cat(chunks, 0).contiguous();
  if (!torch::isfinite(m.rows).all().item<bool>()) throw DivergenceError("non-finite embedding values");
  return m;
}

void ProbeConfig::validate() const {
  if (!(label_fraction > 0.0 && label_fraction <= 1.0)) throw ConfigError("label_fraction must lie in (0, 1]");
  if (epochs < 0 || batch_size <= 0 || !(lr > 0.0)) throw ConfigError("invalid probe optimizer settings");
}

nlohmann::json to_json(const ProbeConfig& c) {
  return {{"label_fraction", c.label_fraction}, {"lr", c.lr},           {"weight_decay", c.weight_decay},
          {"momentum", c.momentum},             {"epochs", c.epochs},   {"milestones", c.milestones},
          {"gamma", c.gamma},                   {"batch_size", c.batch_size}, {"standardize", c.standardize},
          {"seed", c.seed}};
}

ProbeConfig probe_config_from_json(const nlohmann::json& j) {
  ProbeConfig c;
  try {
    c.label_fraction = j.value("label_fraction", c.label_fraction);
    c.lr = j.value("lr", c.lr);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.momentum = j.value("momentum", c.momentum);
    c.epochs = j.value("epochs", c.epochs);
    c.milestones = j.value("milestones", c.milestones);
    c.gamma = j.value("gamma", c.gamma);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.standardize = j.value("standardize", c.standardize);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("probe config: ") + e.what());
  }
  c.validate();
  return c;
}

DatasetManifest select_labeled_subset(const DatasetManifest& train, double fraction, uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("label fraction must lie in (0, 1]");
  const int c_count = static_cast<int>(train.classes.size());
  std::vector<std::vector<std::size_t>> clean(c_count);
  std::vector<std::size_t> total(c_count, 0);
  for (std::size_t i = 0; i < train.entries.size(); ++i) {
    const auto& e = train.entries[i];
    ++total.at(e.label);
    if (!e.is_poisoned) clean[e.label].push_back(i);
  }
  std::vector<std::string> keep;
  for (int c = 0; c < c_count; ++c) {
    if (total[c] == 0) continue;
    if (clean[c].empty()) throw DataError("class '" + train.classes[c] + "' has no clean images to label");
    const auto want = std::max<int64_t>(1, round_half_even(fraction * static_cast<double>(total[c])));
    const auto take = std::min<std::size_t>(clean[c].size(), static_cast<std::size_t>(want));
    Rng rng = make_rng(derive_seed(derive_seed(seed, "labeled"), static_cast<uint64_t>(c)));
    auto& pool = clean[c];
    for (std::size_t i = 0; i < take; ++i) std::swap(pool[i], pool[i + uniform_index(rng, pool.size() - i)]);
    for (std::size_t i = 0; i < take; ++i) keep.push_back(train.entries[pool[i]].image_id);
  }
  auto out = subset_manifest(train, keep);
  for (const auto& e : out.entries) {
    if (e.is_poisoned) throw DataError("labeled subset contains poisoned image " + e.image_id);
  }
  return out;
}

torch::Tensor LinearProbe::scores(const torch::Tensor& x) const {
  if (x.dim() != 2 || x.size(1) != dim()) throw ConfigError("embedding width does not match the probe");
  auto in = x.to(torch::kFloat);
  if (feature_mean.defined() && feature_mean.numel() > 0) in = (in - feature_mean) / feature_scale;
  return in.matmul(weight.t()) + bias;
}

LinearProbe train_linear_probe(const torch::Tensor& embeddings, const std::vector<int>& labels, int num_classes,
                               const ProbeConfig& config) {
  config.validate();
  const int64_t n = embeddings.size(0);
  if (n != static_cast<int64_t>(labels.size()) || n == 0) throw ConfigError("embedding and label counts differ");
  if (std::all_of(labels.begin(), labels.end(), [&](int l) { return l == labels[0]; })) {
    throw ConfigError("probe labels contain a single class");
  }
  torch::NoGradGuard outer;
  LinearProbe probe;
  auto x = embeddings.to(torch::kFloat).detach();
  if (config.standardize) {
    probe.feature_mean = x.mean(0);
    probe.feature_scale = x.std(0, false).clamp_min(1e-6);
    x = (x - probe.feature_mean) / probe.feature_scale;
  }
  const auto y = torch::tensor(std::vector<int64_t>(labels.begin(), labels.end()), torch::kLong);

  torch::manual_seed(static_cast<uint64_t>(derive_seed(config.seed, "probe-init") & 0x7fffffffffffffffULL));
  torch::nn::Linear linear(x.size(1), num_classes);
  torch::optim::SGD opt(linear->parameters(),
                        torch::optim::SGDOptions(config.lr).momentum(config.momentum).weight_decay(config.weight_decay));
  Rng rng = make_rng(derive_seed(config.seed, "probe-order"));
  std::vector<int64_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  double lr = config.lr;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    if (std::find(config.milestones.begin(), config.milestones.end(), epoch) != config.milestones.end()) {
      lr *= config.gamma;
      for (auto& g : opt.param_groups()) g.options().set_lr(lr);
    }
    for (int64_t i = n; i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
    double total = 0.0;
    for (int64_t s = 0; s < n; s += config.batch_size) {
      const int64_t e = std::min<int64_t>(n, s + config.batch_size);
      auto idx = torch::tensor(std::vector<int64_t>(order.begin() + s, order.begin() + e), torch::kLong);
      torch::AutoGradMode grad(true);
      auto loss = F::cross_entropy(linear->forward(x.index_select(0, idx)), y.index_select(0, idx));
      opt.zero_grad();
      loss.backward();
      opt.step();
      total += loss.item<double>() * static_cast<double>(e - s);
    }
    probe.epoch_losses.push_back(total / static_cast<double>(n));
  }
  probe.weight = linear->weight.detach().clone();
  probe.bias = linear->bias.detach().clone();
  const auto pred = predict(probe, embeddings);
  probe.train_accuracy = accuracy_percent(labels, pred);
  return probe;
}

std::vector<int> predict(const LinearProbe& probe, const torch::Tensor& embeddings) {
  const auto s = probe.scores(embeddings).contiguous();
  const auto acc = s.accessor<float, 2>();
  std::vector<int> out(s.size(0));
  for (int64_t i = 0; i < s.size(0); ++i) {
    int best = 0;
    for (int64_t c = 1; c < s.size(1); ++c) {
      if (acc[i][c] > acc[i][best]) best = static_cast<int>(c);
    }
    out[i] = best;
  }
  return out;
}

void save_probe(const std::filesystem::path& path, const LinearProbe& probe) {
  torch::serialize::OutputArchive a;
  a.write("weight", probe.weight);
  a.write("bias", probe.bias);
  a.write("feature_mean", probe.feature_mean.defined() ? probe.feature_mean : torch::zeros({0}));
  a.write("feature_scale", probe.feature_scale.defined() ? probe.feature_scale : torch::zeros({0}));
  a.write("train_accuracy", torch::tensor(probe.train_accuracy, torch::kDouble));
  std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
  a.save_to(path.string());
}

LinearProbe load_probe(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("missing probe " + path.string());
  torch::serialize::InputArchive a;
  a.load_from(path.string());
  LinearProbe p;
  torch::Tensor acc;
  a.read("weight", p.weight);
  a.read("bias", p.bias);
  a.read("feature_mean", p.feature_mean);
  a.read("feature_scale", p.feature_scale);
  a.read("train_accuracy", acc);
  p.train_accuracy = acc.item<double>();
  return p;
}

std::vector<int64_t> false_positives(const std::vector<int>& truth, const std::vector<int>& pred, int num_classes) {
  if (truth.size() != pred.size()) throw ConfigError("prediction and label counts differ");
  std::vector<int64_t> fp(num_classes, 0);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (pred[i] != truth[i]) ++fp.at(pred[i]);
  }
  return fp;
}

double accuracy_percent(const std::vector<int>& truth, const std::vector<int>& pred) {
  if (truth.size() != pred.size()) throw ConfigError("prediction and label counts differ");
  if (truth.empty()) return 0.0;
  std::size_t ok = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) ok += truth[i] == pred[i];
  return 100.0 * static_cast<double>(ok) / static_cast<double>(truth.size());
}

std::vector<int> EvalReport::top_fp_classes(std::size_t k) const {
  std::vector<int> idx(fp_patched.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return fp_patched[a] > fp_patched[b]; });
  idx.resize(std::min(k, idx.size()));
  return idx;
}

EvalReport make_eval_report(const std::vector<std::string>& classes, const std::vector<int>& truth,
                            const std::vector<int>& pred_clean, const std::vector<int>& pred_patched,
                            std::optional<int> target_class) {
  const int c = static_cast<int>(classes.size());
  if (target_class && (*target_class < 0 || *target_class >= c)) throw ConfigError("target class out of range");
  EvalReport r;
  r.classes = classes;
  r.n = static_cast<int64_t>(truth.size());
  r.clean_acc = accuracy_percent(truth, pred_clean);
  r.patched_acc = accuracy_percent(truth, pred_patched);
  r.fp_clean = false_positives(truth, pred_clean, c);
  r.fp_patched = false_positives(truth, pred_patched, c);
  r.target_class = target_class;
  return r;
}

nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json j{{"schema_version", EvalReport::kSchemaVersion},
                   {"classes", r.classes},
                   {"n", r.n},
                   {"clean_acc", r.clean_acc},
                   {"patched_acc", r.patched_acc},
                   {"fp_clean", r.fp_clean},
                   {"fp_patched", r.fp_patched},
                   {"top_fp_classes_patched", r.top_fp_classes()},
                   {"metadata", r.metadata}};
  j["target_class"] = r.target_class ? nlohmann::json(*r.target_class) : nlohmann::json(nullptr);
  if (r.target_class) {
    j["target_fp_clean"] = r.target_fp_clean();
    j["target_fp_patched"] = r.target_fp_patched();
  }
  return j;
}

EvalReport eval_report_from_json(const nlohmann::json& j) {
  EvalReport r;
  try {
    if (j.at("schema_version").get<int>() != EvalReport::kSchemaVersion) throw FormatError("eval report version");
    r.classes = j.at("classes").get<std::vector<std::string>>();
    r.n = j.at("n").get<int64_t>();
    r.clean_acc = j.at("clean_acc").get<double>();
    r.patched_acc = j.at("patched_acc").get<double>();
    r.fp_clean = j.at("fp_clean").get<std::vector<int64_t>>();
    r.fp_patched = j.at("fp_patched").get<std::vector<int64_t>>();
    if (!j.at("target_class").is_null()) r.target_class = j.at("target_class").get<int>();
    r.metadata = j.value("metadata", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("eval report: ") + e.what());
  }
  return r;
}

std::string render_eval_table(const EvalReport& r) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(1);
  out << "            Clean data        Patched data\n";
  out << "            Acc     FP        Acc     FP\n";
  out << "            " << std::setw(5) << r.clean_acc << "  " << std::setw(6) << r.target_fp_clean() << "    "
      << std::setw(5) << r.patched_acc << "  " << std::setw(6) << r.target_fp_patched() << "\n";
  if (r.target_class) out << "target class: " << r.classes.at(*r.target_class) << "\n";
  out << "top patched FP classes:";
  for (int c : r.top_fp_classes(10)) out << ' ' << r.classes[c] << '(' << r.fp_patched[c] << ')';
  out << "\n";
  return out.str();
}

ExportBundle select_export_rows(const EmbeddingMatrix& clean, const EmbeddingMatrix& patched,
                                const std::vector<int>& labels, const ExportSpec& spec) {
  if (clean.size() != static_cast<int64_t>(labels.size())) throw ConfigError("label count does not match rows");
  ExportBundle b;
  const int64_t d = std::max(clean.dim(), patched.dim());
  std::vector<torch::Tensor> rows;
  Rng rng = make_rng(derive_seed(spec.seed, "export"));
  auto take = [&](std::vector<int64_t> pool, std::size_t count, const char* what) {
    if (count > pool.size()) throw ConfigError(std::string("export asks for more ") + what + " rows than exist");
    for (std::size_t i = 0; i < count; ++i) std::swap(pool[i], pool[i + uniform_index(rng, pool.size() - i)]);
    pool.resize(count);
    std::sort(pool.begin(), pool.end());
    return pool;
  };
  std::vector<int64_t> patched_pool;
  for (int c : spec.classes) {
    std::vector<int64_t> pool;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == c) pool.push_back(static_cast<int64_t>(i));
    }
    patched_pool.insert(patched_pool.end(), pool.begin(), pool.end());
    for (int64_t i : take(pool, spec.per_class, "clean")) {
      b.row_ids.push_back(clean.row_ids[i]);
      b.labels.push_back(c);
      b.is_patched.push_back(false);
      rows.push_back(clean.rows[i]);
    }
  }
  std::sort(patched_pool.begin(), patched_pool.end());
  if (spec.patched_count > 0) {
    if (patched.size() != clean.size()) throw ConfigError("clean and patched matrices differ in size");
    for (int64_t i : take(patched_pool, spec.patched_count, "patched")) {
      b.row_ids.push_back(patched.row_ids[i]);
      b.labels.push_back(labels[i]);
      b.is_patched.push_back(true);
      rows.push_back(patched.rows[i]);
    }
  }
  b.rows = rows.empty() ? torch::zeros({0, d}) : torch::stack(rows);
  return b;
}

void write_export_bundle(const std::filesystem::path& csv_path, const ExportBundle& bundle, int64_t dim,
                         const nlohmann::json& sidecar) {
  std::ostringstream csv;
  csv << "image_id,label,is_patched";
  for (int64_t k = 0; k < dim; ++k) csv << ",e" << k;
  csv << "\n";
  csv << std::setprecision(9);
  const auto rows = bundle.rows.contiguous();
  for (std::size_t i = 0; i < bundle.row_ids.size(); ++i) {
    csv << bundle.row_ids[i] << ',' << bundle.labels[i] << ',' << (bundle.is_patched[i] ? 1 : 0);
    const auto r = rows[static_cast<int64_t>(i)];
    const float* p = r.data_ptr<float>();
    for (int64_t k = 0; k < dim; ++k) csv << ',' << p[k];
    csv << "\n";
  }
  write_text_file(csv_path, csv.str());
  auto meta = sidecar;
  meta["rows"] = bundle.row_ids.size();
  meta["dim"] = dim;
  meta["csv"] = csv_path.filename().string();
  auto json_path = csv_path;
  json_path.replace_extension(".json");
  write_text_file(json_path, meta.dump(2) + "\n");
}

}  // namespace sslbd
