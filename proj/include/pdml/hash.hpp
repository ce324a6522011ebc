#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace pdml {

// Incremental SHA-256; digest() returns lowercase hex.
class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  Sha256& update(std::string_view bytes);
  // Length-prefixed, so consecutive fields cannot run into each other.
  Sha256& field(std::string_view bytes);
  Sha256& file(const std::filesystem::path& path);
  std::string digest();

 private:
  void* ctx_;
};

std::string sha256_hex(std::string_view bytes);

}  // namespace pdml
