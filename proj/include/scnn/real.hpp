#pragma once

// Precision selection. Defining SCNN_DOUBLE switches Real to double and moves
// every declaration into scnn::f64 instead of scnn::f32.

#if defined(SCNN_DOUBLE)
#define SCNN_PRECISION_NS f64
#else
#define SCNN_PRECISION_NS f32
#endif

#define SCNN_NAMESPACE_BEGIN \
  namespace scnn {           \
  inline namespace SCNN_PRECISION_NS {
#define SCNN_NAMESPACE_END \
  }                        \
  }

SCNN_NAMESPACE_BEGIN

#if defined(SCNN_DOUBLE)
using Real = double;
#else
using Real = float;
#endif

SCNN_NAMESPACE_END
