#pragma once

#include <cstdint>
#include <vector>

namespace cvnet {

// Records the branch decisions of piecewise ops (ReLU signs, max-pool argmax
// positions) during a forward pass. Gradient checks compare traces of the
// perturbed evaluations against the base one to skip coordinates whose finite
// differences straddle a kink.
struct KinkTrace {
  std::vector<std::uint64_t> decisions;

  bool operator==(const KinkTrace&) const = default;
};

// Active trace for the current thread, or nullptr.
KinkTrace* active_kink_trace();

class KinkTraceScope {
 public:
  explicit KinkTraceScope(KinkTrace& trace);
  ~KinkTraceScope();
  KinkTraceScope(const KinkTraceScope&) = delete;
  KinkTraceScope& operator=(const KinkTraceScope&) = delete;

 private:
  KinkTrace* previous_;
};

}  // namespace cvnet
