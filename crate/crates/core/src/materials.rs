//! Fresnel and finite-thickness slab reflection for dielectric surfaces.
//!
//! Time convention is `e^{+j omega t}`: a lossy permittivity is `eta' - j eta''`
//! and the square root `sqrt(eta - sin^2 theta0)` is taken on the branch with
//! non-positive imaginary part, so the wave inside the slab decays.

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::num::{to_db, Real};
use crate::scene::Material;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarization {
    /// Electric field perpendicular to the plane of incidence.
    Te,
    /// Electric field parallel to the plane of incidence.
    Tm,
}

/// Inputs to a single reflection evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReflectionQuery<T: Real> {
    /// Complex relative permittivity, `Im <= 0` for passive media.
    pub eta: Complex<T>,
    /// Slab thickness, meters.
    pub thickness: T,
    /// Incidence angle from the surface normal, radians in `[0, pi/2)`.
    pub theta0: T,
    /// Free-space wavelength, meters.
    pub wavelength: T,
    pub polarization: Polarization,
}

impl<T: Real> ReflectionQuery<T> {
    pub fn for_material(
        material: &Material<T>,
        theta0: T,
        wavelength: T,
        polarization: Polarization,
    ) -> Self {
        Self {
            eta: material.permittivity(),
            thickness: material.thickness,
            theta0,
            wavelength,
            polarization,
        }
    }

    pub fn with_polarization(self, polarization: Polarization) -> Self {
        Self {
            polarization,
            ..self
        }
    }

    pub fn is_valid(&self) -> bool {
        self.theta0 >= T::zero()
            && self.theta0 < T::FRAC_PI_2()
            && self.wavelength > T::zero()
            && self.thickness > T::zero()
    }
}

/// `sqrt(eta - sin^2 theta0)` on the decaying branch.
fn transmitted_root<T: Real>(eta: Complex<T>, theta0: T) -> Complex<T> {
    let s = theta0.sin();
    let mut root = (eta - Complex::new(s * s, T::zero())).sqrt();
    if root.im > T::zero() {
        root = root.conj();
    }
    if root.re < T::zero() {
        root = -root;
    }
    root
}

/// Single-interface Fresnel reflection coefficient `R'`.
pub fn fresnel_coefficient<T: Real>(q: &ReflectionQuery<T>) -> Complex<T> {
    let c = Complex::new(q.theta0.cos(), T::zero());
    let root = transmitted_root(q.eta, q.theta0);
    match q.polarization {
        Polarization::Te => (c - root) / (c + root),
        Polarization::Tm => (q.eta * c - root) / (q.eta * c + root),
    }
}

/// Reflection coefficient of a slab of finite thickness,
/// `R = R'(1 - e^{-j2q}) / (1 - R'^2 e^{-j2q})` with phase thickness
/// `q = (2 pi d / lambda) sqrt(eta - sin^2 theta0)`.
pub fn slab_reflection<T: Real>(q: &ReflectionQuery<T>) -> Complex<T> {
    let r1 = fresnel_coefficient(q);
    let root = transmitted_root(q.eta, q.theta0);
    let phase = root * (T::lit(2.0) * T::PI() * q.thickness / q.wavelength);
    // e^{-j 2 q}
    let j2q = Complex::new(T::zero(), T::lit(2.0)) * phase;
    let e = (-j2q).exp();
    let one = Complex::new(T::one(), T::zero());
    r1 * (one - e) / (one - r1 * r1 * e)
}

/// `-20 log10 |R|` for the slab. Returns `+inf` when `|R| = 0`.
pub fn reflection_loss_db<T: Real>(q: &ReflectionQuery<T>) -> T {
    -T::lit(20.0) * slab_reflection(q).norm().log10()
}

/// Power reflection coefficient `|R|^2`; averaged over TE and TM when
/// `polarization` is `None` (unpolarized illumination).
pub fn power_reflectance<T: Real>(q: &ReflectionQuery<T>, polarization: Option<Polarization>) -> T {
    match polarization {
        Some(p) => slab_reflection(&q.with_polarization(p)).norm_sqr(),
        None => {
            let te = slab_reflection(&q.with_polarization(Polarization::Te)).norm_sqr();
            let tm = slab_reflection(&q.with_polarization(Polarization::Tm)).norm_sqr();
            (te + tm) * T::lit(0.5)
        }
    }
}

/// Reflection loss in dB of a power reflectance (see [`power_reflectance`]).
pub fn power_reflection_loss_db<T: Real>(
    q: &ReflectionQuery<T>,
    polarization: Option<Polarization>,
) -> T {
    -to_db(power_reflectance(q, polarization))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn query(eta: Complex<f64>, d: f64, theta0: f64, pol: Polarization) -> ReflectionQuery<f64> {
        ReflectionQuery {
            eta,
            thickness: d,
            theta0,
            wavelength: 1e-3,
            polarization: pol,
        }
    }

    #[test]
    fn vacuum_has_no_reflection() {
        for th in [0.0, 0.3, 1.2] {
            for pol in [Polarization::Te, Polarization::Tm] {
                let r = fresnel_coefficient(&query(Complex::new(1.0, 0.0), 1e-3, th, pol));
                assert!(r.norm() < 1e-15);
            }
        }
    }

    #[test]
    fn conductor_limit() {
        let r = fresnel_coefficient(&query(Complex::new(1e9, 0.0), 1e-3, 0.0, Polarization::Te));
        assert!((r.norm() - 1.0).abs() < 1e-4);
    }

    #[test]
    fn normal_incidence_hand_value() {
        let eta = Complex::new(4.0, 0.0);
        let te = fresnel_coefficient(&query(eta, 1e-3, 0.0, Polarization::Te));
        let tm = fresnel_coefficient(&query(eta, 1e-3, 0.0, Polarization::Tm));
        assert!((te - Complex::new(-1.0 / 3.0, 0.0)).norm() < 1e-15);
        assert!((te.norm() - tm.norm()).abs() < 1e-15);
    }

    #[test]
    fn vanishing_slab() {
        let q = query(Complex::new(5.0, -0.3), 1e-15, 0.4, Polarization::Te);
        assert!(slab_reflection(&q).norm() < 1e-9);
    }

    #[test]
    fn thick_lossy_slab_tends_to_interface() {
        let q = query(Complex::new(5.0, -2.0), 0.05, 0.4, Polarization::Tm);
        assert!((slab_reflection(&q) - fresnel_coefficient(&q)).norm() < 1e-9);
    }

    #[test]
    fn half_wave_slab_is_transparent() {
        // q = pi  <=>  d = lambda / (2 sqrt(eta - sin^2))
        let eta = 6.0;
        let th: f64 = 0.5;
        let d = 1e-3 / (2.0 * (eta - th.sin().powi(2)).sqrt());
        for pol in [Polarization::Te, Polarization::Tm] {
            let r = slab_reflection(&query(Complex::new(eta, 0.0), d, th, pol));
            assert!(r.norm() < 1e-9, "{pol:?} {}", r.norm());
        }
    }

    #[test]
    fn loss_values() {
        // |R| = 0.1 -> 20 dB, and the infinite-loss signal at |R| = 0
        let d_half = 1e-3 / (2.0 * 2.0);
        let q = query(Complex::new(4.0, 0.0), d_half, 0.0, Polarization::Te);
        assert!(reflection_loss_db(&q) > 150.0);
        let zero = query(Complex::new(1.0, 0.0), 1e-3, 0.0, Polarization::Te);
        assert!(reflection_loss_db(&zero).is_infinite());
    }

    #[test]
    fn generic_over_f32() {
        let q = ReflectionQuery::<f32> {
            eta: Complex::new(4.0, 0.0),
            thickness: 1e-3,
            theta0: 0.0,
            wavelength: 1e-3,
            polarization: Polarization::Te,
        };
        assert!((fresnel_coefficient(&q).re + 1.0 / 3.0).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn passive_slab_never_amplifies(
            eta_re in 1.0f64..30.0,
            eta_im in 0.0f64..10.0,
            d_wl in 0.1f64..100.0,
            theta_deg in 0.0f64..89.0,
            te in any::<bool>(),
        ) {
            let pol = if te { Polarization::Te } else { Polarization::Tm };
            let q = query(Complex::new(eta_re, -eta_im), d_wl * 1e-3, theta_deg.to_radians(), pol);
            prop_assert!(slab_reflection(&q).norm() <= 1.0 + 1e-12);
        }

        #[test]
        fn te_tm_agree_at_normal_incidence(eta_re in 1.0f64..30.0, eta_im in 0.0f64..10.0) {
            let eta = Complex::new(eta_re, -eta_im);
            let te = fresnel_coefficient(&query(eta, 1e-3, 0.0, Polarization::Te));
            let tm = fresnel_coefficient(&query(eta, 1e-3, 0.0, Polarization::Tm));
            prop_assert!((te.norm() - tm.norm()).abs() < 1e-12);
        }
    }

    #[test]
    fn extinction_is_monotone_beyond_skin_depth() {
        let eta = Complex::new(4.0, -1.5);
        let mut prev = f64::INFINITY;
        // skin depth here is ~0.13 mm; grid starts past it
        let mut d = 0.5e-3;
        while d < 20e-3 {
            let q = query(eta, d, 0.3, Polarization::Te);
            let gap = (slab_reflection(&q) - fresnel_coefficient(&q)).norm();
            assert!(gap < prev || gap == 0.0, "d = {d}: {gap} >= {prev}");
            prev = gap;
            d *= 1.5;
        }
    }
}
