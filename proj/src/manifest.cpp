#include "gaborscope/manifest.hpp"

#include <cstdio>
#include <fstream>

#include "json.hpp"

namespace gaborscope {

void Fnv1a::update(const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = h_;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  h_ = h;
}

std::string Fnv1a::hex() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h_));
  return buf;
}

std::string fnv1a_hex(const std::string& bytes) {
  Fnv1a h;
  h.update(bytes);
  return h.hex();
}

std::string canonical_json_hash(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("config hash: ") + e.what());
  }
  return fnv1a_hex(j.dump());
}

std::string dataset_fingerprint(const EpochStore& store) {
  Fnv1a h;
  auto put_i64 = [&h](std::int64_t v) { h.update(&v, sizeof v); };
  for (const RecordingEpochs& rec : store.recordings) {
    h.update(rec.id);
    h.update("\0", 1);
    h.update(rec.subject);
    h.update("\0", 1);
    put_i64(rec.night);
    put_i64(static_cast<std::int64_t>(rec.epochs.size()));
    for (const LabeledEpoch& e : rec.epochs) {
      put_i64(static_cast<std::int64_t>(e.label));
      put_i64(e.index);
      h.update(e.eeg.data(), e.eeg.size() * sizeof(float));
      h.update(e.eog.data(), e.eog.size() * sizeof(float));
    }
  }
  return h.hex();
}

std::string manifest_to_json(const RunManifest& m) {
  nlohmann::json j;
  j["command"] = m.command;
  j["config_hash"] = m.config_hash;
  j["seed"] = m.seed;
  j["dataset_fingerprint"] = m.dataset_fingerprint;
  j["checkpoints"] = m.checkpoints;
  j["outputs"] = m.outputs;
  return j.dump(2) + "\n";
}

RunManifest manifest_from_json(const std::string& text) {
  RunManifest m;
  try {
    const nlohmann::json j = nlohmann::json::parse(text);
    m.command = j.at("command").get<std::string>();
    m.config_hash = j.at("config_hash").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.dataset_fingerprint = j.at("dataset_fingerprint").get<std::string>();
    m.checkpoints = j.at("checkpoints").get<std::vector<std::string>>();
    m.outputs = j.at("outputs").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("manifest: ") + e.what());
  }
  return m;
}

void save_manifest(const RunManifest& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << manifest_to_json(m);
}

}  // namespace gaborscope
