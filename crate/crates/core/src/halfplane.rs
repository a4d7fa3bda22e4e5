//! Upper half-plane arithmetic.
//!
//! `gamma(xi, zeta) = |xi - zeta|^2 / (Im xi * Im zeta)` is a monotone function
//! of the hyperbolic distance; it is not a metric (no triangle inequality), and
//! [`c0_bound`] gives the replacement used for additive shifts.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest imaginary part accepted as "in the upper half-plane".
pub const IM_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Complex64", into = "Complex64")]
pub struct UpperHalfPoint(Complex64);

impl UpperHalfPoint {
    pub fn new(re: f64, im: f64) -> Result<Self> {
        Self::try_from(Complex64::new(re, im))
    }

    /// The point `i`.
    pub fn i() -> Self {
        Self(Complex64::new(0.0, 1.0))
    }

    pub fn re(self) -> f64 {
        self.0.re
    }

    pub fn im(self) -> f64 {
        self.0.im
    }

    pub fn value(self) -> Complex64 {
        self.0
    }

    pub fn norm(self) -> f64 {
        self.0.norm()
    }
}

impl TryFrom<Complex64> for UpperHalfPoint {
    type Error = Error;
    fn try_from(w: Complex64) -> Result<Self> {
        if w.im >= IM_FLOOR && w.re.is_finite() && w.im.is_finite() {
            Ok(Self(w))
        } else {
            Err(Error::NotInUpperHalfPlane { re: w.re, im: w.im })
        }
    }
}

impl From<UpperHalfPoint> for Complex64 {
    fn from(p: UpperHalfPoint) -> Self {
        p.0
    }
}

/// `|xi - zeta|^2 / (Im xi Im zeta)`.
pub fn gamma(xi: UpperHalfPoint, zeta: UpperHalfPoint) -> f64 {
    gamma_raw(xi.0, zeta.0)
}

/// [`gamma`] on raw complex values; callers guarantee positive imaginary parts.
#[inline]
pub fn gamma_raw(xi: Complex64, zeta: Complex64) -> f64 {
    let dr = xi.re - zeta.re;
    let di = xi.im - zeta.im;
    (dr * dr + di * di) / (xi.im * zeta.im)
}

/// `(1 + Im l / Im zeta) (1 + 2|l| / Im(zeta + l))^2`, valid whenever
/// `zeta + l` lies in the upper half-plane.
pub fn c0_bound(zeta: UpperHalfPoint, lambda: Complex64) -> Result<f64> {
    let shifted = zeta.0 + lambda;
    if !(shifted.im >= IM_FLOOR) {
        return Err(Error::NotInUpperHalfPlane {
            re: shifted.re,
            im: shifted.im,
        });
    }
    let a = 1.0 + lambda.im / zeta.0.im;
    let b = 1.0 + 2.0 * lambda.norm() / shifted.im;
    Ok(a * b * b)
}

/// One step of the tree recursion: `-1 / (z - degree + children_sum)`.
///
/// `z` may be real as long as `children_sum` has positive imaginary part.
pub fn mobius_step(z: Complex64, degree: f64, children_sum: Complex64) -> Result<UpperHalfPoint> {
    if z.im < 0.0 || children_sum.im < 0.0 {
        return Err(Error::NotInUpperHalfPlane {
            re: z.re,
            im: z.im.min(children_sum.im),
        });
    }
    let w = mobius_raw(z, degree, children_sum);
    if !w.re.is_finite() || !w.im.is_finite() {
        return Err(Error::DegenerateDenominator);
    }
    UpperHalfPoint::try_from(w)
}

#[inline]
pub(crate) fn mobius_raw(z: Complex64, degree: f64, children_sum: Complex64) -> Complex64 {
    -1.0 / (z - degree + children_sum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn p(re: f64, im: f64) -> UpperHalfPoint {
        UpperHalfPoint::new(re, im).unwrap()
    }

    #[test]
    fn rejects_lower_half_plane() {
        assert!(UpperHalfPoint::new(0.0, 0.0).is_err());
        assert!(UpperHalfPoint::new(1.0, -1.0).is_err());
        assert!(UpperHalfPoint::new(0.0, 1e-301).is_err());
        assert!(UpperHalfPoint::new(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn gamma_examples() {
        assert_eq!(gamma(p(0.0, 1.0), p(0.0, 1.0)), 0.0);
        assert_abs_diff_eq!(gamma(p(0.0, 2.0), p(0.0, 1.0)), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(gamma(p(1.0, 1.0), p(0.0, 1.0)), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn c0_examples() {
        let i = p(0.0, 1.0);
        assert_eq!(c0_bound(i, Complex64::new(0.0, 0.0)).unwrap(), 1.0);
        assert_abs_diff_eq!(
            c0_bound(i, Complex64::new(0.0, 1.0)).unwrap(),
            8.0,
            epsilon = 1e-14
        );
        assert_abs_diff_eq!(
            c0_bound(i, Complex64::new(0.0, -0.5)).unwrap(),
            4.5,
            epsilon = 1e-14
        );
        assert!(c0_bound(i, Complex64::new(0.0, -1.0)).is_err());
    }

    #[test]
    fn mobius_examples() {
        let z = Complex64::new(3.0, 1.0);
        let leaf = mobius_step(z, 3.0, Complex64::new(0.0, 0.0)).unwrap();
        assert_abs_diff_eq!(
            (leaf.value() - (-1.0 / (z - 3.0))).norm(),
            0.0,
            epsilon = 1e-15
        );

        // binary-tree orbit: one application of the map at z = 3 + i
        let start = Complex64::new(0.0, std::f64::consts::FRAC_1_SQRT_2);
        let next = mobius_step(z, 3.0, 2.0 * start).unwrap();
        let expected = -1.0 / Complex64::new(0.0, 1.0 + std::f64::consts::SQRT_2);
        assert_abs_diff_eq!((next.value() - expected).norm(), 0.0, epsilon = 1e-15);

        // real z is fine when the children carry the imaginary part
        assert!(mobius_step(Complex64::new(3.0, 0.0), 3.0, Complex64::new(0.0, 1.0)).is_ok());
        assert!(matches!(
            mobius_step(Complex64::new(3.0, 0.0), 3.0, Complex64::new(0.0, 0.0)),
            Err(Error::DegenerateDenominator) | Err(Error::NotInUpperHalfPlane { .. })
        ));
    }

    fn upper() -> impl Strategy<Value = Complex64> {
        (-20.0..20.0f64, -6.0..2.0f64).prop_map(|(re, e)| Complex64::new(re, 10f64.powf(e)))
    }

    proptest! {
        #[test]
        fn herglotz(z in upper(), s in upper(), d in 0.0..10.0f64) {
            prop_assert!(mobius_step(z, d, s).unwrap().im() > 0.0);
        }

        #[test]
        fn gamma_is_symmetric_and_invariant(
            a in upper(), b in upper(), scale in 0.01..100.0f64, shift in -50.0..50.0f64
        ) {
            let g = gamma_raw(a, b);
            prop_assert!((g - gamma_raw(b, a)).abs() <= 1e-12 * g.max(1.0));
            let moved = gamma_raw(a * scale + shift, b * scale + shift);
            prop_assert!((g - moved).abs() <= 1e-9 * g.max(1e-3));
        }
    }
}
