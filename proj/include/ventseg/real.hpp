#pragma once

namespace ventseg {

// Scalar type of the numerical core. The default build uses float; the
// gradient-check build compiles the same sources with VENTSEG_REAL_DOUBLE.
#ifdef VENTSEG_REAL_DOUBLE
using Real = double;
#else
using Real = float;
#endif

}  // namespace ventseg
