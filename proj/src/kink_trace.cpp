#include "cvnet/kink_trace.hpp"

namespace cvnet {

namespace {
thread_local KinkTrace* g_trace = nullptr;
}

KinkTrace* active_kink_trace() { return g_trace; }

KinkTraceScope::KinkTraceScope(KinkTrace& trace) : previous_(g_trace) { g_trace = &trace; }

KinkTraceScope::~KinkTraceScope() { g_trace = previous_; }

}  // namespace cvnet
