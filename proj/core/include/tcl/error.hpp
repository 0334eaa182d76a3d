#pragma once

#include <stdexcept>
#include <string>

namespace tcl {

/// Failure raised by any stage of the pipeline. The stage tag ("datagen",
/// "network", "trainer", "ica", "evaluation", "io", "experiment") is kept
/// separately so callers can report which step failed.
class Error : public std::runtime_error {
 public:
  Error(std::string stage, const std::string& message)
      : std::runtime_error(stage + ": " + message), stage_(std::move(stage)) {}

  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

}  // namespace tcl
