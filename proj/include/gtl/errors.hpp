#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace gtl {

// Process exit codes used by the command-line tool.
enum class exit_status : int {
  success = 0,
  failure = 1,
  config = 2,
  data = 3,
  numeric = 4,
  degenerate_scouting = 5,
};

class error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual exit_status status() const noexcept { return exit_status::failure; }
};

// Bad caller input that is not tied to a configuration document.
class argument_error : public error {
 public:
  using error::error;
};

// Array shapes that do not line up.
class shape_error : public error {
 public:
  using error::error;
};

// One or more invalid fields in a configuration document. Each issue carries
// the dotted path of the field inside the document.
class config_error : public error {
 public:
  struct issue {
    std::string path;
    std::string message;
  };

  explicit config_error(std::vector<issue> issues)
      : error(render(issues)), issues_(std::move(issues)) {}
  config_error(std::string path, std::string message)
      : config_error(std::vector<issue>{{std::move(path), std::move(message)}}) {}

  const std::vector<issue>& issues() const noexcept { return issues_; }
  exit_status status() const noexcept override { return exit_status::config; }

 private:
  static std::string render(const std::vector<issue>& issues) {
    std::string out = "invalid configuration";
    for (const auto& i : issues) out += "\n  " + i.path + ": " + i.message;
    return out;
  }
  std::vector<issue> issues_;
};

class data_error : public error {
 public:
  using error::error;
  exit_status status() const noexcept override { return exit_status::data; }
};

// Malformed binary input; offset is the byte position where parsing failed.
class format_error : public data_error {
 public:
  format_error(const std::string& what, std::size_t offset)
      : data_error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

// Two inputs that individually parse but disagree with each other.
class consistency_error : public data_error {
 public:
  using data_error::data_error;
};

class numeric_error : public error {
 public:
  using error::error;
  exit_status status() const noexcept override { return exit_status::numeric; }
};

// No scout moved any parameter, so no guidance can be derived.
class degenerate_scouting_error : public error {
 public:
  using error::error;
  exit_status status() const noexcept override { return exit_status::degenerate_scouting; }
};

}  // namespace gtl
