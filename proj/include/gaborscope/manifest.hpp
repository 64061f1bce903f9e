#ifndef GABORSCOPE_MANIFEST_HPP
#define GABORSCOPE_MANIFEST_HPP

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "gaborscope/dataset.hpp"

namespace gaborscope {

// Streaming 64-bit FNV-1a.
class Fnv1a {
 public:
  void update(const void* data, std::size_t n);
  void update(const std::string& s) { update(s.data(), s.size()); }
  std::uint64_t digest() const { return h_; }
  std::string hex() const;  // 16 lowercase hex digits

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ull;
};

std::string fnv1a_hex(const std::string& bytes);

// Hash of the canonical serialization (sorted keys, no whitespace), so two
// spellings of the same config share a hash.
std::string canonical_json_hash(const std::string& json_text);

// Content identity of an epoch store: recording metadata, labels, and raw
// samples, in store order.
std::string dataset_fingerprint(const EpochStore& store);

// What a command run consisted of: enough to reproduce it and to know which
// files it emitted. Deliberately free of timestamps so reruns are
// byte-identical.
struct RunManifest {
  std::string command;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string dataset_fingerprint;
  std::vector<std::string> checkpoints;  // checkpoint files read or written
  std::vector<std::string> outputs;      // every file the command emitted
};

std::string manifest_to_json(const RunManifest& m);
RunManifest manifest_from_json(const std::string& text);
void save_manifest(const RunManifest& m, const std::string& path);

}  // namespace gaborscope

#endif
