#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <string_view>

namespace pdml {

// Content-addressed artifact store: <root>/<stage>/<key>/. An entry counts
// only once its completion marker exists, so a crash mid-fill leaves a miss,
// never a half-written hit. Fills run in a private temporary directory that
// is renamed into place.
class ArtifactCache {
 public:
  explicit ArtifactCache(std::filesystem::path root);

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path location(std::string_view stage, std::string_view key) const;
  bool contains(std::string_view stage, std::string_view key) const;

  // Returns the entry's directory, calling fill(dir) first on a miss.
  // *hit reports which case occurred.
  std::filesystem::path ensure(std::string_view stage, std::string_view key,
                               const std::function<void(const std::filesystem::path&)>& fill,
                               bool* hit = nullptr) const;

 private:
  std::filesystem::path root_;
};

}  // namespace pdml
