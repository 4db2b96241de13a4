//! Scalar abstraction: model arithmetic runs in `f32` by default, test
//! oracles and gradient checks in `f64`.

use ndarray::NdFloat;
use num_traits::FromPrimitive;

/// Floating-point scalar usable in all kernels.
pub trait Real: NdFloat + FromPrimitive + std::iter::Sum<Self> {
    fn from_f64_exact(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 convertible to scalar")
    }

    fn to_f64_lossy(self) -> f64;
}

impl Real for f32 {
    fn to_f64_lossy(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn to_f64_lossy(self) -> f64 {
        self
    }
}
