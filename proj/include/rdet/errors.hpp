#pragma once

#include <stdexcept>
#include <string>

namespace rdet {

// Raised when a pipeline stage is invoked before its upstream stage has run,
// or when the upstream artifact was produced under a different config.
class MissingArtifactError : public std::runtime_error {
 public:
  MissingArtifactError(std::string stage, const std::string& detail)
      : std::runtime_error(detail), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace rdet
