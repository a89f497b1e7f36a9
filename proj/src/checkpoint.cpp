#include "sslbd/checkpoint.hpp"

#include "sslbd/errors.hpp"
#include "sslbd/hashing.hpp"
#include "sslbd/ssl_methods.hpp"

namespace sslbd {

nlohmann::json to_json(const CheckpointMeta& m) {
  return {{"version", m.version},       {"kind", m.kind},   {"config", m.config},
          {"data_fingerprint", m.data_fingerprint}, {"epoch", m.epoch}, {"tap", to_string(m.tap)}};
}

CheckpointMeta checkpoint_meta_from_json(const nlohmann::json& j) {
  CheckpointMeta m;
  try {
    m.version = j.at("version").get<int>();
    m.kind = j.at("kind").get<std::string>();
    m.config = j.at("config");
    m.data_fingerprint = j.at("data_fingerprint").get<std::string>();
    m.epoch = j.at("epoch").get<int>();
    const auto tap = j.at("tap").get<std::string>();
    m.tap = tap == "layer3" ? TapLayer::kLayer3 : tap == "layer4" ? TapLayer::kLayer4 : TapLayer::kPooled;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint metadata: ") + e.what());
  }
  if (m.version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(m.version));
  }
  return m;
}

void save_checkpoint(const std::filesystem::path& path, const CheckpointMeta& meta, torch::nn::Module& backbone,
                     torch::nn::Module& full_model, const SslMethod* method_state, torch::optim::Optimizer* optimizer) {
  torch::serialize::OutputArchive archive;
  archive.write("meta", c10::IValue(to_json(meta).dump()));
  torch::serialize::OutputArchive bb;
  backbone.save(bb);
  archive.write("backbone", bb);
  torch::serialize::OutputArchive model;
  full_model.save(model);
  archive.write("model", model);
  if (method_state != nullptr) {
    torch::serialize::OutputArchive state;
    method_state->save_state(state);
    archive.write("state", state);
  }
  if (optimizer != nullptr) {
    torch::serialize::OutputArchive opt;
    optimizer->save(opt);
    archive.write("optimizer", opt);
  }
  std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
  const auto tmp = path.string() + ".tmp";
  archive.save_to(tmp);
  std::filesystem::rename(tmp, path);
}

namespace {

torch::serialize::InputArchive open(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("missing checkpoint " + path.string());
  torch::serialize::InputArchive archive;
  try {
    archive.load_from(path.string());
  } catch (const c10::Error& e) {
    throw FormatError("unreadable checkpoint " + path.string());
  }
  return archive;
}

CheckpointMeta meta_of(torch::serialize::InputArchive& archive) {
  c10::IValue v;
  if (!archive.try_read("meta", v) || !v.isString()) throw FormatError("checkpoint has no metadata");
  return checkpoint_meta_from_json(nlohmann::json::parse(v.toStringRef()));
}

}  // namespace

CheckpointMeta read_checkpoint_meta(const std::filesystem::path& path) {
  auto archive = open(path);
  return meta_of(archive);
}

void load_training_state(const std::filesystem::path& path, torch::nn::Module& full_model, SslMethod* method_state,
                         torch::optim::Optimizer* optimizer) {
  auto archive = open(path);
  torch::serialize::InputArchive model;
  archive.read("model", model);
  full_model.load(model);
  if (method_state != nullptr) {
    torch::serialize::InputArchive state;
    if (archive.try_read("state", state)) method_state->load_state(state);
  }
  if (optimizer != nullptr) {
    torch::serialize::InputArchive opt;
    if (archive.try_read("optimizer", opt)) optimizer->load(opt);
  }
}

LoadedEncoder load_encoder(const std::filesystem::path& path) {
  auto archive = open(path);
  LoadedEncoder enc;
  enc.meta = meta_of(archive);
  const auto cfg = enc.meta.config.contains("backbone") ? backbone_from_json(enc.meta.config.at("backbone"))
                                                        : BackboneConfig::resnet18();
  enc.backbone = ResNet(cfg);
  torch::serialize::InputArchive bb;
  archive.read("backbone", bb);
  enc.backbone->load(bb);
  enc.backbone->eval();
  for (auto& p : enc.backbone->parameters()) p.set_requires_grad(false);
  enc.file_hash = sha256_file(path);
  return enc;
}

}  // namespace sslbd
