#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>

namespace sst {

// 64-bit FNV-1a.
class Fnv1a {
 public:
  void update(const void* data, std::size_t len);
  void update(std::string_view s) { update(s.data(), s.size()); }
  template <typename T>
  void update_pod(const T& v) {
    update(&v, sizeof(T));
  }
  std::uint64_t value() const { return h_; }
  std::string hex() const;

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

std::string hex64(std::uint64_t v);
std::string hash_file(const std::filesystem::path& path);
std::string hash_string(std::string_view s);

// Independent per-stage seed: stage insertion never perturbs other stages.
std::uint64_t derive_seed(std::uint64_t global_seed, std::string_view stage);

// splitmix64 finalizer.
std::uint64_t mix64(std::uint64_t x);

}  // namespace sst
