//! Double-double floating point: an unevaluated sum `hi + lo` of two `f64`
//! with `|lo| ≤ ulp(hi)/2`, giving about 106 significant bits.
//!
//! Only what the tensor ops touch is carried at full precision: the four
//! arithmetic operators, `sqrt`, `exp`, `ln`, `abs`, rounding and
//! comparisons. Trigonometric and hyperbolic functions go through `f64`.

use std::cmp::Ordering;
use std::fmt;
use std::num::FpCategory;
use std::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Rem, RemAssign, Sub, SubAssign};

use num_traits::{Float, FromPrimitive, Num, NumCast, One, ToPrimitive, Zero};

#[derive(Clone, Copy, Default)]
pub struct Dd {
    hi: f64,
    lo: f64,
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

const LN2: Dd = Dd {
    hi: std::f64::consts::LN_2,
    lo: 2.319_046_813_846_299_6e-17,
};

impl Dd {
    #[inline]
    pub const fn new(v: f64) -> Dd {
        Dd { hi: v, lo: 0.0 }
    }

    #[inline]
    fn norm(hi: f64, lo: f64) -> Dd {
        if !hi.is_finite() {
            return Dd { hi, lo: 0.0 };
        }
        let (hi, lo) = quick_two_sum(hi, lo);
        Dd { hi, lo }
    }

    pub fn hi(self) -> f64 {
        self.hi
    }

    pub fn lo(self) -> f64 {
        self.lo
    }

    /// Nearest `f64`.
    #[inline]
    pub fn to_f64_lossy(self) -> f64 {
        self.hi + self.lo
    }

    #[inline]
    fn mul_f64(self, b: f64) -> Dd {
        let (p, e) = two_prod(self.hi, b);
        Dd::norm(p, e + self.lo * b)
    }

    #[inline]
    fn div_f64(self, b: f64) -> Dd {
        let q1 = self.hi / b;
        let (p, e) = two_prod(q1, b);
        let r = (self.hi - p - e + self.lo) / b;
        Dd::norm(q1, r)
    }

    /// Exact scaling by a power of two.
    fn ldexp(self, k: i32) -> Dd {
        let f = 2f64.powi(k);
        Dd {
            hi: self.hi * f,
            lo: self.lo * f,
        }
    }

    fn exp_impl(self) -> Dd {
        if self.hi.is_nan() {
            return self;
        }
        if self.hi > 709.7 {
            return Dd::new(f64::INFINITY);
        }
        if self.hi < -745.0 {
            return Dd::zero();
        }
        // x = k ln2 + r, then exp(r) = exp(r / 2^10)^(2^10).
        let k = (self.hi / LN2.hi).round();
        let r = (self - LN2.mul_f64(k)).ldexp(-10);
        // Horner form of the degree-12 Taylor polynomial; |r| < 3.4e-4 so
        // the remainder is below 1e-50.
        let mut sum = Dd::one();
        for i in (1..=12).rev() {
            sum = (sum * r).div_f64(i as f64) + Dd::one();
        }
        for _ in 0..10 {
            sum = sum * sum;
        }
        // Split the power of two so neither factor overflows near the edges.
        let k = k as i32;
        sum.ldexp(k / 2).ldexp(k - k / 2)
    }

    fn ln_impl(self) -> Dd {
        if self.hi.is_nan() || self.hi < 0.0 {
            return Dd::new(f64::NAN);
        }
        if self.hi == 0.0 {
            return Dd::new(f64::NEG_INFINITY);
        }
        if self.hi.is_infinite() {
            return self;
        }
        // Newton on exp(y) = x from the f64 estimate; quadratic convergence
        // takes 53 correct bits to over 100.
        let y = Dd::new(self.hi.ln());
        y + self * (-y).exp_impl() - Dd::one()
    }
}

impl From<f64> for Dd {
    #[inline]
    fn from(v: f64) -> Self {
        Dd { hi: v, lo: 0.0 }
    }
}

impl fmt::Debug for Dd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Dd({:e} + {:e})", self.hi, self.lo)
    }
}

impl fmt::Display for Dd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.to_f64_lossy(), f)
    }
}

impl PartialEq for Dd {
    fn eq(&self, o: &Self) -> bool {
        self.hi == o.hi && self.lo == o.lo
    }
}

impl PartialOrd for Dd {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        match self.hi.partial_cmp(&o.hi)? {
            Ordering::Equal => self.lo.partial_cmp(&o.lo),
            ord => Some(ord),
        }
    }
}

impl Neg for Dd {
    type Output = Dd;
    #[inline]
    fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Add for Dd {
    type Output = Dd;
    #[inline]
    fn add(self, b: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, b.hi);
        if !s.is_finite() {
            return Dd::new(s);
        }
        let (t, f) = two_sum(self.lo, b.lo);
        let (s, e) = quick_two_sum(s, e + t);
        Dd::norm(s, e + f)
    }
}

impl Sub for Dd {
    type Output = Dd;
    #[inline]
    fn sub(self, b: Dd) -> Dd {
        self + (-b)
    }
}

impl Mul for Dd {
    type Output = Dd;
    #[inline]
    fn mul(self, b: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, b.hi);
        if !p.is_finite() {
            return Dd::new(p);
        }
        Dd::norm(p, e + (self.hi * b.lo + self.lo * b.hi))
    }
}

impl Div for Dd {
    type Output = Dd;
    fn div(self, b: Dd) -> Dd {
        let q1 = self.hi / b.hi;
        if !q1.is_finite() || b.hi == 0.0 {
            return Dd::new(q1);
        }
        let r = self - b.mul_f64(q1);
        let q2 = r.hi / b.hi;
        let r = r - b.mul_f64(q2);
        let q3 = r.hi / b.hi;
        Dd::norm(q1, q2) + Dd::new(q3)
    }
}

impl Rem for Dd {
    type Output = Dd;
    fn rem(self, b: Dd) -> Dd {
        self - (self / b).trunc() * b
    }
}

macro_rules! assign_ops {
    ($($tr:ident $f:ident $op:tt),*) => {$(
        impl $tr for Dd {
            #[inline]
            fn $f(&mut self, b: Dd) {
                *self = *self $op b;
            }
        }
    )*};
}

assign_ops!(AddAssign add_assign +, SubAssign sub_assign -, MulAssign mul_assign *, DivAssign div_assign /, RemAssign rem_assign %);

impl Zero for Dd {
    fn zero() -> Self {
        Dd::new(0.0)
    }

    fn is_zero(&self) -> bool {
        self.hi == 0.0
    }
}

impl One for Dd {
    fn one() -> Self {
        Dd::new(1.0)
    }
}

impl Num for Dd {
    type FromStrRadixErr = <f64 as Num>::FromStrRadixErr;

    fn from_str_radix(s: &str, radix: u32) -> Result<Self, Self::FromStrRadixErr> {
        f64::from_str_radix(s, radix).map(Dd::new)
    }
}

impl ToPrimitive for Dd {
    fn to_i64(&self) -> Option<i64> {
        self.trunc().to_f64_lossy().to_i64()
    }

    fn to_u64(&self) -> Option<u64> {
        self.trunc().to_f64_lossy().to_u64()
    }

    fn to_f64(&self) -> Option<f64> {
        Some(self.to_f64_lossy())
    }
}

impl FromPrimitive for Dd {
    fn from_i64(n: i64) -> Option<Self> {
        let hi = n as f64;
        let lo = (n as i128 - hi as i128) as f64;
        Some(Dd::norm(hi, lo))
    }

    fn from_u64(n: u64) -> Option<Self> {
        let hi = n as f64;
        let lo = (n as i128 - hi as i128) as f64;
        Some(Dd::norm(hi, lo))
    }

    fn from_f64(n: f64) -> Option<Self> {
        Some(Dd::new(n))
    }
}

impl NumCast for Dd {
    fn from<T: ToPrimitive>(n: T) -> Option<Self> {
        n.to_f64().map(Dd::new)
    }
}

/// Lifts an `f64` function; accurate to `f64` only.
macro_rules! via_f64 {
    ($($f:ident),*) => {$(
        fn $f(self) -> Self {
            Dd::new(self.to_f64_lossy().$f())
        }
    )*};
}

impl Float for Dd {
    fn nan() -> Self {
        Dd::new(f64::NAN)
    }

    fn infinity() -> Self {
        Dd::new(f64::INFINITY)
    }

    fn neg_infinity() -> Self {
        Dd::new(f64::NEG_INFINITY)
    }

    fn neg_zero() -> Self {
        Dd::new(-0.0)
    }

    fn min_value() -> Self {
        Dd::new(f64::MIN)
    }

    fn min_positive_value() -> Self {
        Dd::new(f64::MIN_POSITIVE)
    }

    fn max_value() -> Self {
        Dd::new(f64::MAX)
    }

    fn epsilon() -> Self {
        Dd::new(2f64.powi(-104))
    }

    fn is_nan(self) -> bool {
        self.hi.is_nan()
    }

    fn is_infinite(self) -> bool {
        self.hi.is_infinite()
    }

    fn is_finite(self) -> bool {
        self.hi.is_finite()
    }

    fn is_normal(self) -> bool {
        self.hi.is_normal()
    }

    fn classify(self) -> FpCategory {
        self.hi.classify()
    }

    fn floor(self) -> Self {
        let hi = self.hi.floor();
        if hi == self.hi {
            Dd::norm(hi, self.lo.floor())
        } else {
            Dd::new(hi)
        }
    }

    fn ceil(self) -> Self {
        let hi = self.hi.ceil();
        if hi == self.hi {
            Dd::norm(hi, self.lo.ceil())
        } else {
            Dd::new(hi)
        }
    }

    fn round(self) -> Self {
        if self.hi >= 0.0 {
            (self + Dd::new(0.5)).floor()
        } else {
            (self - Dd::new(0.5)).ceil()
        }
    }

    fn trunc(self) -> Self {
        if self.hi >= 0.0 {
            self.floor()
        } else {
            self.ceil()
        }
    }

    fn fract(self) -> Self {
        self - self.trunc()
    }

    fn abs(self) -> Self {
        if self.hi < 0.0 || (self.hi == 0.0 && self.lo < 0.0) {
            -self
        } else {
            self
        }
    }

    fn signum(self) -> Self {
        Dd::new(self.hi.signum())
    }

    fn is_sign_positive(self) -> bool {
        self.hi.is_sign_positive()
    }

    fn is_sign_negative(self) -> bool {
        self.hi.is_sign_negative()
    }

    fn mul_add(self, a: Self, b: Self) -> Self {
        self * a + b
    }

    fn recip(self) -> Self {
        Dd::one() / self
    }

    fn powi(self, n: i32) -> Self {
        let mut base = if n < 0 { self.recip() } else { self };
        let mut e = n.unsigned_abs();
        let mut acc = Dd::one();
        while e > 0 {
            if e & 1 == 1 {
                acc *= base;
            }
            base = base * base;
            e >>= 1;
        }
        acc
    }

    fn powf(self, n: Self) -> Self {
        (n * self.ln()).exp()
    }

    fn sqrt(self) -> Self {
        if self.hi <= 0.0 || !self.hi.is_finite() {
            return Dd::new(self.hi.sqrt());
        }
        let q = self.hi.sqrt();
        let (p, e) = two_prod(q, q);
        let r = self - Dd::norm(p, e);
        Dd::norm(q, r.hi / (2.0 * q))
    }

    fn exp(self) -> Self {
        self.exp_impl()
    }

    fn exp2(self) -> Self {
        (self * LN2).exp_impl()
    }

    fn ln(self) -> Self {
        self.ln_impl()
    }

    fn log(self, base: Self) -> Self {
        self.ln_impl() / base.ln_impl()
    }

    fn log2(self) -> Self {
        self.ln_impl() / LN2
    }

    fn log10(self) -> Self {
        self.ln_impl() / Dd::new(10.0).ln_impl()
    }

    fn max(self, o: Self) -> Self {
        if self.is_nan() || o > self {
            o
        } else {
            self
        }
    }

    fn min(self, o: Self) -> Self {
        if self.is_nan() || o < self {
            o
        } else {
            self
        }
    }

    fn abs_sub(self, o: Self) -> Self {
        if self > o {
            self - o
        } else {
            Dd::zero()
        }
    }

    fn hypot(self, o: Self) -> Self {
        (self * self + o * o).sqrt()
    }

    fn atan2(self, o: Self) -> Self {
        Dd::new(self.to_f64_lossy().atan2(o.to_f64_lossy()))
    }

    fn sin_cos(self) -> (Self, Self) {
        let (s, c) = self.to_f64_lossy().sin_cos();
        (Dd::new(s), Dd::new(c))
    }

    fn exp_m1(self) -> Self {
        self.exp_impl() - Dd::one()
    }

    fn ln_1p(self) -> Self {
        (Dd::one() + self).ln_impl()
    }

    fn tanh(self) -> Self {
        let e = (self + self).exp_impl();
        (e - Dd::one()) / (e + Dd::one())
    }

    fn integer_decode(self) -> (u64, i16, i8) {
        self.hi.integer_decode()
    }

    via_f64!(cbrt, sin, cos, tan, asin, acos, atan, sinh, cosh, asinh, acosh, atanh);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dd(v: f64) -> Dd {
        Dd::new(v)
    }

    fn close(a: Dd, b: Dd, tol: f64) -> bool {
        ((a - b).abs() / b.abs().max(dd(1e-300))).to_f64_lossy() < tol
    }

    #[test]
    fn division_round_trips_beyond_f64() {
        for (a, b) in [(1.0, 3.0), (0.7, 1.3), (2.0, 7.0), (-5.5, 0.1)] {
            let r = (dd(a) / dd(b)) * dd(b) - dd(a);
            assert!(r.abs().to_f64_lossy() < 1e-30, "{a}/{b}: {r:?}");
        }
    }

    #[test]
    fn one_third_has_a_low_word() {
        let t = dd(1.0) / dd(3.0);
        assert!(t.lo() != 0.0);
        assert!((t * dd(3.0) - dd(1.0)).abs().to_f64_lossy() < 1e-31);
    }

    #[test]
    fn sqrt_squares_back() {
        for v in [2.0, 3.0, 1e-8, 12345.678] {
            let s = dd(v).sqrt();
            assert!(close(s * s, dd(v), 1e-30), "{v}");
        }
    }

    #[test]
    fn exp_and_ln_are_inverse() {
        for v in [0.1, 0.7, -1.3, 2.5, -30.0, 40.0, 1e-12] {
            let x = dd(v);
            assert!(close(x.exp() * (-x).exp(), dd(1.0), 1e-28), "{v}");
            assert!((x.exp().ln() - x).abs().to_f64_lossy() < 1e-28 * (1.0 + v.abs()), "{v}");
        }
    }

    #[test]
    fn exp_matches_f64_and_known_digits() {
        for v in [-3.0, -0.5, 0.0, 0.25, 1.0, 10.0] {
            assert!((dd(v).exp().to_f64_lossy() - f64::exp(v)).abs() <= 2e-16 * f64::exp(v));
        }
        // e = 2.718281828459045 + 1.445646891729250e-16
        let e = dd(1.0).exp();
        let err = (e.lo() - 1.445_646_891_729_250_2e-16).abs();
        assert!(err < 1e-28, "{err:e}");
    }

    #[test]
    fn ordering_uses_low_word() {
        let a = Dd::norm(1.0, 1e-20);
        assert!(a > dd(1.0));
        assert!(dd(1.0) < a);
        assert_eq!(a.max(dd(1.0)), a);
    }

    #[test]
    fn rounding() {
        assert_eq!(dd(2.5).floor(), dd(2.0));
        assert_eq!(dd(-2.5).floor(), dd(-3.0));
        assert_eq!(dd(-2.5).trunc(), dd(-2.0));
        assert_eq!(Dd::norm(3.0, -1e-20).floor(), dd(2.0));
        assert_eq!(dd(7.0) % dd(3.0), dd(1.0));
    }

    #[test]
    fn powi_and_from_integers() {
        assert!((dd(1.1).powi(10).to_f64_lossy() - 1.1f64.powi(10)).abs() < 1e-14);
        assert!(close(dd(2.0).powi(-3), dd(0.125), 1e-31));
        let big = Dd::from_u64(u64::MAX).unwrap();
        assert_eq!(big.hi(), 18446744073709551616.0);
        assert_eq!(big.lo(), -1.0);
    }
}
