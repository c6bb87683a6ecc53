//! Double-double arithmetic: an unevaluated sum `hi + lo` with `|lo| <= ulp(hi)/2`,
//! giving roughly 106 bits of significand.
//!
//! Only the operations needed for noiseless critical orbits and for pulling
//! points back through long compositions are provided, together with
//! `sin`/`cos` of `2πx` accurate to about `1e-31` for reduced arguments.

use std::ops::{Add, Div, Mul, Neg, Sub};

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

/// 2π to double-double precision.
pub const TWO_PI: Dd = Dd { hi: std::f64::consts::TAU, lo: 2.449_293_598_294_706_4e-16 };

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

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };
    pub const ONE: Dd = Dd { hi: 1.0, lo: 0.0 };

    #[inline]
    pub const fn from_f64(x: f64) -> Dd {
        Dd { hi: x, lo: 0.0 }
    }

    #[inline]
    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    #[inline]
    pub fn abs(self) -> Dd {
        if self.hi < 0.0 || (self.hi == 0.0 && self.lo < 0.0) {
            -self
        } else {
            self
        }
    }

    pub fn floor(self) -> Dd {
        let fh = self.hi.floor();
        if fh == self.hi {
            let (s, e) = quick_two_sum(fh, self.lo.floor());
            Dd { hi: s, lo: e }
        } else {
            Dd::from_f64(fh)
        }
    }

    /// Representative in `[0, 1)`.
    pub fn frac(self) -> Dd {
        let r = self - self.floor();
        // rounding can land exactly on 1 when the true value is 1 - tiny
        if r.hi > 1.0 || (r.hi == 1.0 && r.lo >= 0.0) {
            r - Dd::ONE
        } else if r.hi < 0.0 || (r.hi == 0.0 && r.lo < 0.0) {
            r + Dd::ONE
        } else {
            r
        }
    }

    #[inline]
    pub fn mul_f64(self, b: f64) -> Dd {
        let (p, e) = two_prod(self.hi, b);
        let (s, e) = quick_two_sum(p, e + self.lo * b);
        Dd { hi: s, lo: e }
    }

    #[inline]
    pub fn div_f64(self, b: f64) -> Dd {
        let q1 = self.hi / b;
        let (p, pe) = two_prod(q1, b);
        let r = ((self.hi - p) - pe + self.lo) / b;
        let (s, e) = quick_two_sum(q1, r);
        Dd { hi: s, lo: e }
    }

    /// Returns `(sin 2πx, cos 2πx)`.
    pub fn sin_cos_2pi(self) -> (Dd, Dd) {
        let r = self.frac();
        let q = (r.hi * 4.0).round();
        let t = r - Dd::from_f64(q * 0.25);
        let theta = TWO_PI * t;
        let (s, c) = sin_cos_taylor(theta);
        match (q as i64).rem_euclid(4) {
            0 => (s, c),
            1 => (c, -s),
            2 => (-s, -c),
            _ => (-c, s),
        }
    }
}

// |theta| <= π/4 + tiny; the series is truncated where the next term drops below 1e-33.
fn sin_cos_taylor(theta: Dd) -> (Dd, Dd) {
    let t2 = theta * theta;
    let mut s = Dd::ONE;
    let mut n = 29.0_f64;
    while n > 1.0 {
        s = Dd::ONE - (t2 * s).div_f64(n * (n - 1.0));
        n -= 2.0;
    }
    let sin = theta * s;
    let mut c = Dd::ONE;
    let mut n = 28.0_f64;
    while n > 0.0 {
        c = Dd::ONE - (t2 * c).div_f64(n * (n - 1.0));
        n -= 2.0;
    }
    (sin, c)
}

impl From<f64> for Dd {
    fn from(x: f64) -> Dd {
        Dd::from_f64(x)
    }
}

impl Add for Dd {
    type Output = Dd;
    #[inline]
    fn add(self, b: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, b.hi);
        let (t, f) = two_sum(self.lo, b.lo);
        let (s, e) = quick_two_sum(s, e + t);
        let (s, e) = quick_two_sum(s, e + f);
        Dd { hi: s, lo: e }
    }
}

impl Sub for Dd {
    type Output = Dd;
    #[inline]
    fn sub(self, b: Dd) -> Dd {
        self + (-b)
    }
}

impl Div for Dd {
    type Output = Dd;
    fn div(self, b: Dd) -> Dd {
        let q1 = self.hi / b.hi;
        let r = self - b.mul_f64(q1);
        let q2 = r.hi / b.hi;
        let r = r - b.mul_f64(q2);
        let q3 = r.hi / b.hi;
        let (s, e) = quick_two_sum(q1, q2);
        Dd { hi: s, lo: e } + Dd::from_f64(q3)
    }
}

impl Neg for Dd {
    type Output = Dd;
    #[inline]
    fn neg(self) -> Dd {
        Dd { hi: -self.hi, lo: -self.lo }
    }
}

impl Mul for Dd {
    type Output = Dd;
    #[inline]
    fn mul(self, b: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, b.hi);
        let e = e + (self.hi * b.lo + self.lo * b.hi);
        let (s, e) = quick_two_sum(p, e);
        Dd { hi: s, lo: e }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_pi_low_word_is_the_rounding_residual() {
        // 2π − fl(2π) from a 50-digit reference
        assert_eq!(TWO_PI.hi, std::f64::consts::TAU);
        assert_eq!(TWO_PI.lo, 2.449_293_598_294_706_4e-16);
    }

    #[test]
    fn sin_cos_agree_with_f64_on_sample_points() {
        for i in 0..2000 {
            let x = i as f64 / 1999.0 * 3.0 - 1.0;
            let (s, c) = Dd::from_f64(x).sin_cos_2pi();
            let (es, ec) = (std::f64::consts::TAU * x).sin_cos();
            assert!((s.to_f64() - es).abs() < 4e-15, "sin at {x}");
            assert!((c.to_f64() - ec).abs() < 4e-15, "cos at {x}");
        }
    }

    #[test]
    fn pythagorean_identity_to_double_double_precision() {
        for i in 0..500 {
            let x = Dd::from_f64(i as f64 * 0.013_7) + Dd::from_f64(1e-20 * i as f64);
            let (s, c) = x.sin_cos_2pi();
            let one = s * s + c * c;
            assert!((one - Dd::ONE).to_f64().abs() < 1e-30);
        }
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn high_precision_reference_values() {
        // (x, sin hi, sin lo, cos hi, cos lo) from a 50-digit reference at the binary value of x
        let refs = [
            (0.1, 0.587_785_252_292_473_1, 2.028_269_805_215_003_7e-17, 0.809_016_994_374_947_5, -4.766_175_266_906_226e-17),
            (0.3, 0.951_056_516_295_153_6, -4.853_158_876_183_457e-17, -0.309_016_994_374_947_34, -1.751_852_518_386_914e-17),
            (0.123_456_789, 0.700_217_342_727_619, -1.839_567_822_839_880_5e-17, 0.713_929_739_500_654_3, 4.157_588_980_899_511e-18),
            (0.7071, -0.963_891_187_513_328, -1.706_132_880_042_104e-17, -0.266_296_411_230_317_33, 1.463_358_722_697_351_6e-17),
            (123.456, 0.272_951_935_517_306_7, 2.565_443_391_752_45e-18, -0.962_027_671_586_091_1, -5.084_362_220_553_105e-18),
        ];
        for (x, sh, sl, ch, cl) in refs {
            let (s, c) = Dd::from_f64(x).sin_cos_2pi();
            assert!((s - Dd { hi: sh, lo: sl }).to_f64().abs() < 1e-30, "sin at {x}");
            assert!((c - Dd { hi: ch, lo: cl }).to_f64().abs() < 1e-30, "cos at {x}");
        }
        let (s, c) = Dd::from_f64(0.25).sin_cos_2pi();
        assert_eq!(s, Dd::ONE);
        assert_eq!(c.to_f64(), 0.0);
    }

    #[test]
    fn floor_and_frac_handle_low_word() {
        let x = Dd { hi: 3.0, lo: -1e-20 };
        assert_eq!(x.floor().to_f64(), 2.0);
        let f = x.frac();
        assert_eq!(f, Dd { hi: 1.0, lo: -1e-20 });
        let y = Dd::from_f64(-0.25);
        assert_eq!(y.frac().to_f64(), 0.75);
    }

    #[test]
    fn division_round_trips() {
        let a = Dd::from_f64(1.0).div_f64(3.0);
        let back = a.mul_f64(3.0);
        assert!((back - Dd::ONE).to_f64().abs() < 1e-31);
        let b = Dd::from_f64(2.0) / Dd::from_f64(7.0);
        assert!((b.mul_f64(7.0) - Dd::from_f64(2.0)).to_f64().abs() < 1e-31);
    }
}
