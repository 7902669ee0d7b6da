#pragma once

#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>

namespace mmpivot {

// Failure categories map onto process exit codes: invalid input -> 2,
// runtime failure -> 1.
class Error : public std::runtime_error {
 public:
  enum class Kind { kInvalidInput, kRuntime };

  Error(Kind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

template <typename... Parts>
std::string concat(Parts&&... parts) {
  std::ostringstream os;
  (os << ... << std::forward<Parts>(parts));
  return os.str();
}

template <typename... Parts>
[[noreturn]] void fail_invalid(Parts&&... parts) {
  throw Error(Error::Kind::kInvalidInput, concat(std::forward<Parts>(parts)...));
}

template <typename... Parts>
[[noreturn]] void fail_runtime(Parts&&... parts) {
  throw Error(Error::Kind::kRuntime, concat(std::forward<Parts>(parts)...));
}

}  // namespace mmpivot
