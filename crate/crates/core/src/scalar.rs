//! Storage scalar abstraction.
//!
//! Datasets may arrive as f32 (raw binary format) or f64 (CSV). All
//! geometry and estimator arithmetic is carried out in f64 regardless of
//! how the data is stored, so the algorithms are generic over a [`Scalar`]
//! storage type and convert on read.

use num_traits::Float;

/// Storage scalar for dataset matrices: f32 or f64.
pub trait Scalar:
    Float + std::fmt::Debug + std::fmt::Display + Send + Sync + 'static
{
    /// Widen to f64 for accumulation. Exact for both f32 and f64.
    fn widen(self) -> f64;
    /// Narrow from f64 (rounds to nearest for f32).
    fn from_f64(v: f64) -> Self;
    /// Shortest decimal representation that round-trips through `parse`.
    fn format(self) -> String;
}

impl Scalar for f32 {
    #[inline]
    fn widen(self) -> f64 {
        self as f64
    }
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    // std's Display already produces the shortest round-trip form
    fn format(self) -> String {
        format!("{self}")
    }
}

impl Scalar for f64 {
    #[inline]
    fn widen(self) -> f64 {
        self
    }
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    fn format(self) -> String {
        format!("{self}")
    }
}
