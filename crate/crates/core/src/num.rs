//! Scalar abstraction shared by every numeric module.
//!
//! All geometry, reflection, DSP and planning code is written against [`Real`]
//! so the same pipeline runs in `f64` (the default used by the CLI) or `f32`.

use std::fmt::{Debug, Display};

use num_traits::{Float, FloatConst, FromPrimitive, NumAssignOps, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Floating-point scalar used throughout the crate: `f32` or `f64`.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssignOps
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Self-intersection guard for ray/facet tests, in meters.
    const GEOM_EPS: f64;

    /// Converts an `f64` literal into this scalar type.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }

    #[inline]
    fn geom_eps() -> Self {
        Self::lit(Self::GEOM_EPS)
    }

    #[inline]
    fn c0() -> Self {
        Self::lit(SPEED_OF_LIGHT)
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    #[inline]
    fn usize(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }
}

impl Real for f64 {
    const GEOM_EPS: f64 = 1e-9;
}

// Single precision cannot resolve 1e-9 m on cabin-sized coordinates.
impl Real for f32 {
    const GEOM_EPS: f64 = 1e-5;
}

/// Linear power ratio to decibels.
#[inline]
pub fn to_db<T: Real>(linear: T) -> T {
    T::lit(10.0) * linear.log10()
}

/// Decibels to linear power ratio.
#[inline]
pub fn from_db<T: Real>(db: T) -> T {
    T::lit(10.0).powf(db / T::lit(10.0))
}

/// Free-space path loss in dB for a path of delay `tau` seconds at frequency `f` Hz,
/// `20 log10(4 pi f tau)`.
#[inline]
pub fn fspl_db<T: Real>(f: T, tau: T) -> T {
    T::lit(20.0) * (T::lit(4.0) * T::PI() * f * tau).log10()
}

/// Wraps an angle in degrees into `[0, 360)`.
#[inline]
pub fn wrap_deg<T: Real>(deg: T) -> T {
    let full = T::lit(360.0);
    let w = deg % full;
    let w = if w < T::zero() { w + full } else { w };
    if w >= full {
        T::zero()
    } else {
        w
    }
}

/// Smallest absolute circular difference between two azimuths, degrees in `[0, 180]`.
#[inline]
pub fn circular_diff_deg<T: Real>(a: T, b: T) -> T {
    let d = wrap_deg(a - b);
    if d > T::lit(180.0) {
        T::lit(360.0) - d
    } else {
        d
    }
}
