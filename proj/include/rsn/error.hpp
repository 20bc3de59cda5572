#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace rsn {

// Runtime failure with a stable machine-readable code ("MalformedHeader",
// "RankDeficient", ...). The CLI maps code+message to its error line.
class Error : public std::runtime_error {
public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(code + ": " + message), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

private:
  std::string code_;
};

[[noreturn]] inline void fail(std::string code, const std::string& message) {
  throw Error(std::move(code), message);
}

} // namespace rsn
