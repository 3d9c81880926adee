//! Minimal double-double arithmetic (~31 significant digits).
//!
//! Used by the refinement studies: a fourth-derivative stencil amplifies the
//! rounding of its inputs by ~1/h^4, so on fine grids the f64 storage error
//! of the sampled test function (eps * |f| * sum|w|) buries the h^4
//! truncation term the study is supposed to expose. Sampling the analytic
//! test functions and accumulating the stencil rows in double-double keeps
//! the truncation term visible; the production operators remain plain f64,
//! where the fields they act on are small enough that the same floor is far
//! below solver tolerances.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    let err = (a - (s - bb)) + (b - bb);
    (s, err)
}

#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let err = b - (s - a);
    (s, err)
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    let err = a.mul_add(b, -p);
    (p, err)
}

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };
    pub const ONE: Dd = Dd { hi: 1.0, lo: 0.0 };

    pub fn from(a: f64) -> Dd {
        Dd { hi: a, lo: 0.0 }
    }

    pub fn value(self) -> f64 {
        self.hi + self.lo
    }

    pub fn add(self, other: Dd) -> Dd {
        let (s1, s2) = two_sum(self.hi, other.hi);
        let s2 = s2 + self.lo + other.lo;
        let (hi, lo) = quick_two_sum(s1, s2);
        Dd { hi, lo }
    }

    pub fn add_f64(self, other: f64) -> Dd {
        let (s1, s2) = two_sum(self.hi, other);
        let s2 = s2 + self.lo;
        let (hi, lo) = quick_two_sum(s1, s2);
        Dd { hi, lo }
    }

    pub fn sub(self, other: Dd) -> Dd {
        self.add(other.neg())
    }

    pub fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }

    pub fn mul(self, other: Dd) -> Dd {
        let (p1, p2) = two_prod(self.hi, other.hi);
        let p2 = p2 + self.hi * other.lo + self.lo * other.hi;
        let (hi, lo) = quick_two_sum(p1, p2);
        Dd { hi, lo }
    }

    pub fn mul_f64(self, other: f64) -> Dd {
        let (p1, p2) = two_prod(self.hi, other);
        let p2 = p2 + self.lo * other;
        let (hi, lo) = quick_two_sum(p1, p2);
        Dd { hi, lo }
    }

    pub fn div(self, other: Dd) -> Dd {
        let q1 = self.hi / other.hi;
        let r = self.sub(other.mul_f64(q1));
        let q2 = r.hi / other.hi;
        let r = r.sub(other.mul_f64(q2));
        let q3 = r.hi / other.hi;
        let (hi, lo) = quick_two_sum(q1, q2);
        Dd { hi, lo }.add_f64(q3)
    }

    pub fn recip(self) -> Dd {
        Dd::ONE.div(self)
    }

    pub fn powi(self, n: i32) -> Dd {
        if n == 0 {
            return Dd::ONE;
        }
        let mut base = if n < 0 { self.recip() } else { self };
        let mut k = n.unsigned_abs();
        let mut acc = Dd::ONE;
        while k > 0 {
            if k & 1 == 1 {
                acc = acc.mul(base);
            }
            base = base.mul(base);
            k >>= 1;
        }
        acc
    }

    /// exp by range reduction against ln 2 and a Taylor tail.
    pub fn exp(self) -> Dd {
        let k = (self.hi / std::f64::consts::LN_2).round();
        let r = self.sub(ln2().mul_f64(k));
        // Taylor sum of exp(r), |r| <= ln2/2
        let mut term = Dd::ONE;
        let mut sum = Dd::ONE;
        let mut n = 1.0;
        loop {
            term = term.mul(r).div(Dd::from(n));
            sum = sum.add(term);
            if term.hi.abs() < 1e-35 * sum.hi.abs() || n > 40.0 {
                break;
            }
            n += 1.0;
        }
        let scale = 2.0_f64.powi(k as i32);
        Dd {
            hi: sum.hi * scale,
            lo: sum.lo * scale,
        }
    }

    /// Natural log by Newton iteration on exp.
    pub fn ln(self) -> Dd {
        assert!(self.hi > 0.0);
        let mut y = Dd::from(self.hi.ln());
        for _ in 0..3 {
            // y <- y + x * exp(-y) - 1
            let e = self.mul(y.neg().exp());
            y = y.add(e).add_f64(-1.0);
        }
        y
    }
}

/// ln 2 as a double-double constant.
pub fn ln2() -> Dd {
    Dd {
        hi: std::f64::consts::LN_2,
        lo: 2.319046813846299e-17,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basic_arithmetic_beats_f64() {
        // (1 + 1e-20) - 1 survives in dd
        let x = Dd::ONE.add_f64(1e-20);
        let d = x.add_f64(-1.0);
        assert!((d.value() - 1e-20).abs() < 1e-33);

        let a = Dd::from(std::f64::consts::PI);
        let b = a.mul(a);
        assert!((b.value() - std::f64::consts::PI * std::f64::consts::PI).abs() < 1e-15);
    }

    #[test]
    fn exp_and_ln_are_inverse() {
        for x in [0.3_f64, 1.0, 2.718281828, 17.5, 0.001] {
            let d = Dd::from(x);
            let roundtrip = d.ln().exp();
            let rel = (roundtrip.value() - x).abs() / x;
            assert!(rel < 1e-28, "x = {x}, rel = {rel}");
            // hi parts agree with f64 math
            assert!((d.ln().hi - x.ln()).abs() <= 4.0 * f64::EPSILON * x.ln().abs().max(1.0));
        }
    }

    #[test]
    fn ln_is_additive_to_dd_precision() {
        // ln(a) + ln(b) = ln(ab) tests the lo component, not just the hi part
        let a = Dd::from(1.01);
        let b = Dd::from(2.37);
        let lhs = a.ln().add(b.ln());
        let rhs = a.mul(b).ln();
        let diff = lhs.sub(rhs);
        assert!(diff.value().abs() < 1e-28, "diff {:?}", diff);
        // and ln(1 + r) agrees with its alternating series (same dd r on
        // both sides; note 1.01_f64 != 1 + 0.01_f64 at the 1e-18 level)
        let r = Dd::from(0.01);
        let mut series = Dd::ZERO;
        for k in 1..=16u32 {
            let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
            let term = r.powi(k as i32).div(Dd::from(k as f64)).mul_f64(sign);
            series = series.add(term);
        }
        assert!(Dd::ONE.add(r).ln().sub(series).value().abs() < 1e-30);
    }

    #[test]
    fn division_and_powers() {
        let x = Dd::from(3.0).recip();
        // 1/3 in dd: hi+lo closer than f64
        let back = x.mul_f64(3.0);
        assert!((back.value() - 1.0).abs() < 1e-30);
        let p = Dd::from(1.1).powi(4);
        assert!((p.value() - 1.1_f64.powi(4)).abs() < 1e-15);
        let q = Dd::from(2.0).powi(-2);
        assert!((q.value() - 0.25).abs() < 1e-30);
    }
}
