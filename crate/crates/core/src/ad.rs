//! Forward-mode automatic differentiation.
//!
//! [`Dual`] carries a value together with a fixed-width tangent vector, so a
//! single evaluation of a generic routine yields the value and all `N`
//! directional derivatives at once. Model and solver code is written against
//! the [`Scalar`] trait and runs unchanged on `f64` and on duals.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Sub, SubAssign};

use crate::error::{Error, Result};

/// Number of anomaly parameters, and therefore the tangent width used by the
/// Jacobian engines.
pub const PARAM_COUNT: usize = 5;

pub type Dual5 = Dual<PARAM_COUNT>;

/// Arithmetic needed by the simulator. Comparisons between scalars go through
/// [`Scalar::value`], never through the tangent.
pub trait Scalar:
    Copy
    + Debug
    + Send
    + Sync
    + PartialEq
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + 'static
{
    /// Embeds a constant (zero tangent).
    fn from_f64(x: f64) -> Self;
    fn value(&self) -> f64;

    fn sqrt(self) -> Self;
    fn atan(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn exp(self) -> Self;

    fn zero() -> Self {
        Self::from_f64(0.0)
    }

    fn one() -> Self {
        Self::from_f64(1.0)
    }

    /// Division that refuses a zero denominator instead of producing inf/NaN.
    fn checked_div(self, rhs: Self) -> Result<Self> {
        if rhs.value() == 0.0 {
            return Err(Error::Singular(format!(
                "division of {:?} by a zero-valued scalar",
                self.value()
            )));
        }
        Ok(self / rhs)
    }

    fn is_finite(&self) -> bool;

    /// Squared magnitude including tangent components; used by iterative
    /// solvers so that their stopping test also watches derivatives.
    fn magnitude_sq(&self) -> f64;
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(x: f64) -> Self {
        x
    }
    #[inline]
    fn value(&self) -> f64 {
        *self
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn atan(self) -> Self {
        f64::atan(self)
    }
    #[inline]
    fn sin(self) -> Self {
        f64::sin(self)
    }
    #[inline]
    fn cos(self) -> Self {
        f64::cos(self)
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn is_finite(&self) -> bool {
        f64::is_finite(*self)
    }
    #[inline]
    fn magnitude_sq(&self) -> f64 {
        self * self
    }
}

/// A dual number `value + Σ tangent[i]·ε_i` with `ε_i ε_j = 0`.
///
/// The width `N` is part of the type, so duals of different widths cannot be
/// combined.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual<const N: usize> {
    pub value: f64,
    pub tangent: [f64; N],
}

impl<const N: usize> Dual<N> {
    pub const fn new(value: f64, tangent: [f64; N]) -> Self {
        Self { value, tangent }
    }

    pub const fn constant(value: f64) -> Self {
        Self {
            value,
            tangent: [0.0; N],
        }
    }

    /// Builds a dual from a runtime tangent slice; the slice must have width `N`.
    pub fn from_slice(value: f64, tangent: &[f64]) -> Result<Self> {
        let tangent: [f64; N] = tangent.try_into().map_err(|_| {
            Error::Usage(format!(
                "tangent of width {} cannot build a dual of width {N}",
                tangent.len()
            ))
        })?;
        Ok(Self { value, tangent })
    }

    /// Variable `i` of an `N`-dimensional input: tangent is the unit vector e_i.
    pub fn variable(value: f64, i: usize) -> Self {
        let mut tangent = [0.0; N];
        tangent[i] = 1.0;
        Self { value, tangent }
    }

    /// Applies a scalar function given its value and derivative at `self.value`.
    #[inline]
    fn chain(self, f: f64, df: f64) -> Self {
        let mut tangent = self.tangent;
        for t in &mut tangent {
            *t *= df;
        }
        Self { value: f, tangent }
    }
}

/// Seeds each input as an independent variable.
pub fn seed<const N: usize>(values: [f64; N]) -> [Dual<N>; N] {
    std::array::from_fn(|i| Dual::variable(values[i], i))
}

impl<const N: usize> PartialOrd for Dual<N> {
    /// Orders by value only.
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        self.value.partial_cmp(&other.value)
    }
}

impl<const N: usize> Default for Dual<N> {
    fn default() -> Self {
        Self::constant(0.0)
    }
}

impl<const N: usize> Add for Dual<N> {
    type Output = Self;
    #[inline]
    fn add(mut self, rhs: Self) -> Self {
        self += rhs;
        self
    }
}

impl<const N: usize> Sub for Dual<N> {
    type Output = Self;
    #[inline]
    fn sub(mut self, rhs: Self) -> Self {
        self -= rhs;
        self
    }
}

impl<const N: usize> Mul for Dual<N> {
    type Output = Self;
    #[inline]
    fn mul(mut self, rhs: Self) -> Self {
        self *= rhs;
        self
    }
}

impl<const N: usize> Div for Dual<N> {
    type Output = Self;
    #[inline]
    fn div(mut self, rhs: Self) -> Self {
        self /= rhs;
        self
    }
}

impl<const N: usize> Neg for Dual<N> {
    type Output = Self;
    #[inline]
    fn neg(mut self) -> Self {
        self.value = -self.value;
        for t in &mut self.tangent {
            *t = -*t;
        }
        self
    }
}

impl<const N: usize> AddAssign for Dual<N> {
    #[inline]
    fn add_assign(&mut self, rhs: Self) {
        self.value += rhs.value;
        for (t, r) in self.tangent.iter_mut().zip(rhs.tangent) {
            *t += r;
        }
    }
}

impl<const N: usize> SubAssign for Dual<N> {
    #[inline]
    fn sub_assign(&mut self, rhs: Self) {
        self.value -= rhs.value;
        for (t, r) in self.tangent.iter_mut().zip(rhs.tangent) {
            *t -= r;
        }
    }
}

impl<const N: usize> MulAssign for Dual<N> {
    #[inline]
    fn mul_assign(&mut self, rhs: Self) {
        for (t, r) in self.tangent.iter_mut().zip(rhs.tangent) {
            *t = *t * rhs.value + self.value * r;
        }
        self.value *= rhs.value;
    }
}

impl<const N: usize> DivAssign for Dual<N> {
    #[inline]
    fn div_assign(&mut self, rhs: Self) {
        let q = self.value / rhs.value;
        for (t, r) in self.tangent.iter_mut().zip(rhs.tangent) {
            *t = (*t - q * r) / rhs.value;
        }
        self.value = q;
    }
}

impl<const N: usize> Add<f64> for Dual<N> {
    type Output = Self;
    #[inline]
    fn add(mut self, rhs: f64) -> Self {
        self.value += rhs;
        self
    }
}

impl<const N: usize> Sub<f64> for Dual<N> {
    type Output = Self;
    #[inline]
    fn sub(mut self, rhs: f64) -> Self {
        self.value -= rhs;
        self
    }
}

impl<const N: usize> Mul<f64> for Dual<N> {
    type Output = Self;
    #[inline]
    fn mul(mut self, rhs: f64) -> Self {
        self.value *= rhs;
        for t in &mut self.tangent {
            *t *= rhs;
        }
        self
    }
}

impl<const N: usize> Div<f64> for Dual<N> {
    type Output = Self;
    #[inline]
    fn div(mut self, rhs: f64) -> Self {
        self.value /= rhs;
        for t in &mut self.tangent {
            *t /= rhs;
        }
        self
    }
}

impl<const N: usize> Add<Dual<N>> for f64 {
    type Output = Dual<N>;
    #[inline]
    fn add(self, rhs: Dual<N>) -> Dual<N> {
        rhs + self
    }
}

impl<const N: usize> Sub<Dual<N>> for f64 {
    type Output = Dual<N>;
    #[inline]
    fn sub(self, rhs: Dual<N>) -> Dual<N> {
        -rhs + self
    }
}

impl<const N: usize> Mul<Dual<N>> for f64 {
    type Output = Dual<N>;
    #[inline]
    fn mul(self, rhs: Dual<N>) -> Dual<N> {
        rhs * self
    }
}

impl<const N: usize> Div<Dual<N>> for f64 {
    type Output = Dual<N>;
    #[inline]
    fn div(self, rhs: Dual<N>) -> Dual<N> {
        Dual::constant(self) / rhs
    }
}

impl<const N: usize> Sum for Dual<N> {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::constant(0.0), |acc, x| acc + x)
    }
}

impl<const N: usize> Scalar for Dual<N> {
    #[inline]
    fn from_f64(x: f64) -> Self {
        Self::constant(x)
    }
    #[inline]
    fn value(&self) -> f64 {
        self.value
    }
    #[inline]
    fn sqrt(self) -> Self {
        let s = self.value.sqrt();
        self.chain(s, 0.5 / s)
    }
    #[inline]
    fn atan(self) -> Self {
        let v = self.value;
        self.chain(v.atan(), 1.0 / (1.0 + v * v))
    }
    #[inline]
    fn sin(self) -> Self {
        let (s, c) = self.value.sin_cos();
        self.chain(s, c)
    }
    #[inline]
    fn cos(self) -> Self {
        let (s, c) = self.value.sin_cos();
        self.chain(c, -s)
    }
    #[inline]
    fn exp(self) -> Self {
        let e = self.value.exp();
        self.chain(e, e)
    }
    fn is_finite(&self) -> bool {
        self.value.is_finite() && self.tangent.iter().all(|t| t.is_finite())
    }
    fn magnitude_sq(&self) -> f64 {
        self.value * self.value + self.tangent.iter().map(|t| t * t).sum::<f64>()
    }
}

#[cfg(test)]
mod tests {
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    use proptest::prelude::*;

    use super::*;

    fn central_difference(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    /// A composite exercising every primitive.
    fn composite<S: Scalar>(x: S) -> S {
        let a = (x * x + 1.0).sqrt();
        let b = (x * 0.7).sin() * (x - 0.3).cos();
        let c = (x * 0.5).exp() / (a + 2.0);
        (a * b).atan() + c - x / (x * x + 3.0)
    }

    #[test]
    fn seeding_sets_unit_tangents() {
        let d = seed([0.3, 0.0, 0.0, 1.4, 0.7]);
        assert_eq!(d[0].value, 0.3);
        assert_eq!(d[0].tangent, [1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(d[3].value, 1.4);
        assert_eq!(d[3].tangent, [0.0, 0.0, 0.0, 1.0, 0.0]);

        let one = seed([1.0]);
        assert_eq!(one[0], Dual::new(1.0, [1.0]));
    }

    #[test]
    fn product_rule() {
        let [x] = seed([3.0]);
        let y = x * x;
        assert_eq!(y.value, 9.0);
        assert_eq!(y.tangent, [6.0]);
    }

    #[test]
    fn atan_derivative_at_one() {
        let x = Dual::<5>::variable(1.0, 0);
        let y = x.atan();
        assert!((y.value - FRAC_PI_4).abs() < 1e-15);
        assert_eq!(y.tangent, [0.5, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn computational_graph_example() {
        // f(x1, x2) = sin(x1 x2) + exp(x1) at (pi/2, -3)
        let [x1, x2] = seed([FRAC_PI_2, -3.0]);
        let f = (x1 * x2).sin() + x1.exp();
        let (a, b) = (FRAC_PI_2, -3.0_f64);
        assert!((f.value - ((a * b).sin() + a.exp())).abs() < 1e-15);
        assert!((f.value - (1.0 + FRAC_PI_2.exp())).abs() < 1e-12);
        let df1 = b * (a * b).cos() + a.exp();
        let df2 = a * (a * b).cos();
        assert!((f.tangent[0] - df1).abs() < 1e-12);
        assert!((f.tangent[1] - df2).abs() < 1e-12);
    }

    #[test]
    fn checked_division_rejects_zero() {
        let x = Dual::<2>::variable(1.0, 0);
        let zero = Dual::<2>::new(0.0, [1.0, 1.0]);
        assert!(matches!(x.checked_div(zero), Err(Error::Singular(_))));
        assert!(1.0_f64.checked_div(0.0).is_err());
        let q = x.checked_div(Dual::constant(4.0)).unwrap();
        assert_eq!(q.value, 0.25);
        assert_eq!(q.tangent, [0.25, 0.0]);
    }

    #[test]
    fn width_mismatch_is_a_construction_error() {
        assert!(Dual::<5>::from_slice(1.0, &[1.0, 2.0]).is_err());
        let d = Dual::<2>::from_slice(1.0, &[1.0, 2.0]).unwrap();
        assert_eq!(d.tangent, [1.0, 2.0]);
    }

    #[test]
    fn comparisons_read_value_only() {
        let a = Dual::<1>::new(1.0, [100.0]);
        let b = Dual::<1>::new(2.0, [-100.0]);
        assert!(a < b);
        assert!(Dual::<1>::new(1.0, [5.0]) <= Dual::<1>::new(1.0, [-5.0]));
    }

    proptest! {
        #[test]
        fn tangent_matches_finite_difference(x in -2.0f64..2.0) {
            let d = composite(Dual::<1>::variable(x, 0));
            let fd = central_difference(composite::<f64>, x, 1e-6);
            let scale = d.tangent[0].abs().max(1e-3);
            prop_assert!((d.tangent[0] - fd).abs() / scale < 1e-6);
        }

        #[test]
        fn chain_rule_through_composition(x in -1.5f64..1.5) {
            // f(g(x)) with g = composite, f = exp∘sin
            let inner = composite(Dual::<1>::variable(x, 0));
            let outer = inner.sin().exp();
            let g = composite(x);
            let expected = g.sin().exp() * g.cos() * inner.tangent[0];
            prop_assert!((outer.tangent[0] - expected).abs() <= 1e-12 * expected.abs().max(1.0));
            let fd = central_difference(|t| composite(t).sin().exp(), x, 1e-6);
            prop_assert!((outer.tangent[0] - fd).abs() / outer.tangent[0].abs().max(1e-3) < 1e-6);
        }

        #[test]
        fn tangent_is_linear(x in -1.0f64..1.0, y in -1.0f64..1.0, a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let [dx, dy] = seed([x, y]);
            let f = |u: Dual<2>, v: Dual<2>| (u * v).sin() + u.exp();
            let g = |u: Dual<2>, v: Dual<2>| (u - v * v).atan();
            let combined = f(dx, dy) * a + g(dx, dy) * b;
            for i in 0..2 {
                let expected = a * f(dx, dy).tangent[i] + b * g(dx, dy).tangent[i];
                prop_assert!((combined.tangent[i] - expected).abs() <= 1e-12 * (1.0 + expected.abs()));
            }
        }

        #[test]
        fn zero_tangent_embeds_real_arithmetic(x in -2.0f64..2.0) {
            let d = composite(Dual::<5>::constant(x));
            prop_assert_eq!(d.value.to_bits(), composite(x).to_bits());
            prop_assert_eq!(d.tangent, [0.0; 5]);
        }
    }
}
