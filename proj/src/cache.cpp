#include "pdml/cache.hpp"

#include <atomic>
#include <fstream>
#include <sstream>
#include <thread>

#include "pdml/error.hpp"

namespace pdml {

namespace {

constexpr const char* kMarker = ".complete";

std::string unique_suffix() {
  static std::atomic<unsigned long> counter{0};
  std::ostringstream os;
  os << ".tmp-" << std::this_thread::get_id() << '-' << counter++;
  return os.str();
}

}  // namespace

ArtifactCache::ArtifactCache(std::filesystem::path root) : root_(std::move(root)) {}

std::filesystem::path ArtifactCache::location(std::string_view stage, std::string_view key) const {
  return root_ / std::string(stage) / std::string(key);
}

bool ArtifactCache::contains(std::string_view stage, std::string_view key) const {
  return std::filesystem::exists(location(stage, key) / kMarker);
}

std::filesystem::path ArtifactCache::ensure(std::string_view stage, std::string_view key,
                                            const std::function<void(const std::filesystem::path&)>& fill,
                                            bool* hit) const {
  const auto dest = location(stage, key);
  if (contains(stage, key)) {
    if (hit) *hit = true;
    return dest;
  }
  if (hit) *hit = false;

  std::error_code ec;
  auto tmp = dest;
  tmp += unique_suffix();
  std::filesystem::remove_all(tmp, ec);
  std::filesystem::create_directories(tmp, ec);
  if (ec) throw IoError("cannot create cache directory " + tmp.string() + ": " + ec.message());
  try {
    fill(tmp);
    std::ofstream(tmp / kMarker) << key << '\n';
  } catch (...) {
    std::filesystem::remove_all(tmp, ec);
    throw;
  }
  // A leftover without marker is garbage from an interrupted fill.
  if (std::filesystem::exists(dest) && !contains(stage, key)) std::filesystem::remove_all(dest, ec);
  std::filesystem::rename(tmp, dest, ec);
  if (ec) {
    std::filesystem::remove_all(tmp);
    if (!contains(stage, key)) throw IoError("cannot publish cache entry " + dest.string() + ": " + ec.message());
  }
  return dest;
}

}  // namespace pdml
