//! Scalar abstraction: all numeric code is generic over [`Real`], which is
//! implemented for `f32` and `f64`.
//!
//! The crate-root type aliases pin `f64`; the tolerances quoted throughout
//! the documentation (gradient checks at relative error 1e-4, unit-norm
//! checks at 1e-9) assume 64-bit arithmetic.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::str::FromStr;

use num_traits::{Float, FromPrimitive};

/// Floating-point scalar usable by every algorithm in this crate.
pub trait Real:
    Float + FromPrimitive + Sum + Display + Debug + FromStr + Send + Sync + 'static
{
    /// Tag written into checkpoints so a file saved as one scalar type is
    /// never silently reinterpreted as another.
    const NAME: &'static str;

    /// Lossy conversion from `f64`, for constants and RNG output.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 constant must convert")
    }

    /// Parse from the decimal form produced by `Display`.
    ///
    /// Rust's float `Display` emits the shortest decimal string that parses
    /// back to the identical bit pattern, so `Display` → `parse` round-trips
    /// exactly. Checkpoints and dataset files rely on this.
    fn parse(s: &str) -> Option<Self> {
        Self::from_str(s).ok()
    }

    /// Smallest value strictly greater than `self`.
    fn next_up(self) -> Self;
}

impl Real for f32 {
    const NAME: &'static str = "f32";

    fn next_up(self) -> Self {
        f32::next_up(self)
    }
}

impl Real for f64 {
    const NAME: &'static str = "f64";

    fn next_up(self) -> Self {
        f64::next_up(self)
    }
}
