#pragma once

#include <cstddef>

namespace testing {

/// Counts global operator new calls made on the current thread while alive.
class AllocScope {
 public:
  AllocScope();
  ~AllocScope();
  std::size_t count() const;

 private:
  std::size_t start_;
};

}  // namespace testing
