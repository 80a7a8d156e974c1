#pragma once

#include <stdexcept>
#include <string>

namespace dada {

// Process exit codes reported by the CLI for each error family.
enum class ExitCode : int {
  kOk = 0,
  kConfig = 2,
  kData = 3,
  kTraining = 4,
  kEvaluation = 5,
};

class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what, ExitCode code)
      : std::runtime_error(what), kind_(std::move(kind)), code_(code) {}

  const std::string& kind() const noexcept { return kind_; }
  ExitCode exit_code() const noexcept { return code_; }

 private:
  std::string kind_;
  ExitCode code_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what)
      : Error("ConfigError", what, ExitCode::kConfig) {}
};

class DataError : public Error {
 public:
  DataError(std::string kind, const std::string& what)
      : Error(std::move(kind), what, ExitCode::kData) {}
};

class TrainingError : public Error {
 public:
  TrainingError(std::string kind, const std::string& what)
      : Error(std::move(kind), what, ExitCode::kTraining) {}
};

class EvaluationError : public Error {
 public:
  EvaluationError(std::string kind, const std::string& what)
      : Error(std::move(kind), what, ExitCode::kEvaluation) {}
};

}  // namespace dada
