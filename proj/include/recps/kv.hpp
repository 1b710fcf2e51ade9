#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace recps {

/// Ordered flat `key=value` document. Lines starting with '#' are comments.
class KeyValues {
 public:
  static KeyValues parse(std::string_view text);

  void set(std::string key, std::string value);
  std::optional<std::string> get(std::string_view key) const;
  std::string require(std::string_view key) const;
  bool contains(std::string_view key) const { return get(key).has_value(); }
  const std::vector<std::pair<std::string, std::string>>& entries() const noexcept {
    return entries_;
  }
  std::string to_string() const;

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

/// Shortest round-trip decimal form.
std::string format_double(double v);

}  // namespace recps
