//! Arbitrary-precision integers, rationals, and the floor/binomial primitives
//! that the exactness of the factory rests on.

use num::{BigInt, BigRational, BigUint, Integer, One, Signed, Zero};
use once_cell::sync::Lazy;
use std::collections::HashMap;
use std::sync::{Arc, RwLock};
use thiserror::Error;

/// Exact arbitrary-precision integer.
pub type Int = BigInt;

/// Exact rational number, always stored in lowest terms with a positive
/// denominator. Every probability, envelope value, and count threshold in the
/// crate flows through this type; there is no floating point on any path that
/// feeds a count table or a sampler.
pub type Rat = BigRational;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum NumericsError {
    #[error("scale factor {0} outside [0,1]")]
    ScaleOutOfRange(String),
    #[error("negative count")]
    NegativeCount,
}

/// Shorthand rational constructor from machine integers.
pub fn rat(num: i64, den: i64) -> Rat {
    Rat::new(BigInt::from(num), BigInt::from(den))
}

pub fn rat_int(v: i64) -> Rat {
    Rat::from_integer(BigInt::from(v))
}

/// Parse "a/b", a plain integer, or a decimal like "0.1539" into an exact
/// rational (decimals are read exactly, never via floating point).
pub fn parse_rat(s: &str) -> Option<Rat> {
    let s = s.trim();
    if let Some((n, d)) = s.split_once('/') {
        let n: BigInt = n.trim().parse().ok()?;
        let d: BigInt = d.trim().parse().ok()?;
        if d.is_zero() {
            return None;
        }
        return Some(Rat::new(n, d));
    }
    if let Some((whole, frac)) = s.split_once('.') {
        let neg = whole.trim_start().starts_with('-');
        let w: BigInt = if whole.is_empty() || whole == "-" {
            BigInt::zero()
        } else {
            whole.parse().ok()?
        };
        if frac.is_empty() {
            return Some(Rat::from_integer(w));
        }
        let digits: BigInt = frac.parse().ok()?;
        if digits.is_negative() {
            return None;
        }
        let den = BigInt::from(10u32).pow(frac.len() as u32);
        let frac_part = Rat::new(digits, den);
        let whole_part = Rat::from_integer(w);
        return Some(if neg {
            whole_part - frac_part
        } else {
            whole_part + frac_part
        });
    }
    let n: BigInt = s.parse().ok()?;
    Some(Rat::from_integer(n))
}

/// Certified enclosure `[lo, hi]` of a (possibly irrational) value.
/// Directed rounding throughout: every operation keeps the true value inside.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundPair {
    lo: Rat,
    hi: Rat,
}

impl BoundPair {
    pub fn new(lo: Rat, hi: Rat) -> Self {
        assert!(lo <= hi, "BoundPair lo > hi");
        BoundPair { lo, hi }
    }

    pub fn exact(v: Rat) -> Self {
        BoundPair {
            lo: v.clone(),
            hi: v,
        }
    }

    pub fn lo(&self) -> &Rat {
        &self.lo
    }

    pub fn hi(&self) -> &Rat {
        &self.hi
    }

    pub fn width(&self) -> Rat {
        &self.hi - &self.lo
    }

    pub fn is_exact(&self) -> bool {
        self.lo == self.hi
    }

    pub fn contains(&self, v: &Rat) -> bool {
        &self.lo <= v && v <= &self.hi
    }

    pub fn add(&self, other: &BoundPair) -> BoundPair {
        BoundPair {
            lo: &self.lo + &other.lo,
            hi: &self.hi + &other.hi,
        }
    }

    pub fn shift(&self, offset: &Rat) -> BoundPair {
        BoundPair {
            lo: &self.lo + offset,
            hi: &self.hi + offset,
        }
    }

    /// Multiply by a non-negative exact rational.
    pub fn scale_nonneg(&self, factor: &Rat) -> BoundPair {
        assert!(!factor.is_negative());
        BoundPair {
            lo: &self.lo * factor,
            hi: &self.hi * factor,
        }
    }

    /// Enclosure of `1 - self`.
    pub fn complement(&self) -> BoundPair {
        BoundPair {
            lo: Rat::one() - &self.hi,
            hi: Rat::one() - &self.lo,
        }
    }
}

static BINOM_ROWS: Lazy<RwLock<HashMap<u64, Arc<Vec<Int>>>>> =
    Lazy::new(|| RwLock::new(HashMap::new()));

/// Full row `C(n, 0..=n)`, memoized. Rows are built by the multiplicative
/// recurrence so intermediate values never exceed the final entries.
pub fn binomial_row(n: u64) -> Arc<Vec<Int>> {
    if let Some(row) = BINOM_ROWS.read().unwrap().get(&n) {
        return Arc::clone(row);
    }
    let mut row = Vec::with_capacity(n as usize + 1);
    let mut c = Int::one();
    row.push(c.clone());
    for k in 0..n {
        // C(n,k+1) = C(n,k) * (n-k) / (k+1), always divides exactly
        c = c * Int::from(n - k) / Int::from(k + 1);
        row.push(c.clone());
    }
    let row = Arc::new(row);
    BINOM_ROWS
        .write()
        .unwrap()
        .entry(n)
        .or_insert_with(|| Arc::clone(&row));
    row
}

/// Binomial coefficient `C(n, k)`; zero outside `0 <= k <= n`.
pub fn binomial(n: u64, k: i64) -> Int {
    if k < 0 || k as u64 > n {
        return Int::zero();
    }
    binomial_row(n)[k as usize].clone()
}

/// Exact `floor(count * q)` for `count >= 0` and `q` in `[0, 1]`.
pub fn floor_scaled(count: &Int, q: &Rat) -> Result<Int, NumericsError> {
    if count.is_negative() {
        return Err(NumericsError::NegativeCount);
    }
    if q.is_negative() || q > &Rat::one() {
        return Err(NumericsError::ScaleOutOfRange(q.to_string()));
    }
    Ok((count * q.numer()).div_floor(q.denom()))
}

/// Binomial (Vandermonde) convolution: `out[k] = sum_j row[j] * C(delta_m, k-j)`.
/// Maps per-k counts at bit length `n` to descendant counts at `n + delta_m`.
pub fn vandermonde_convolve(row: &[Int], delta_m: u64) -> Vec<Int> {
    let binom = binomial_row(delta_m);
    let out_len = row.len() + delta_m as usize;
    let mut out = vec![Int::zero(); out_len];
    for (j, v) in row.iter().enumerate() {
        if v.is_zero() {
            continue;
        }
        for (d, b) in binom.iter().enumerate() {
            out[j + d] += v * b;
        }
    }
    out
}

/// `floor(x * 2^bits)` as an integer.
pub fn dyadic_floor(x: &Rat, bits: u32) -> Int {
    let scaled = x.numer() << bits;
    scaled.div_floor(x.denom())
}

/// `ceil(x * 2^bits)` as an integer.
pub fn dyadic_ceil(x: &Rat, bits: u32) -> Int {
    let scaled = x.numer() << bits;
    scaled.div_ceil(x.denom())
}

/// Rational from a scaled integer: `v / 2^bits`.
pub fn from_dyadic(v: Int, bits: u32) -> Rat {
    Rat::new(v, Int::one() << bits)
}

/// Floor of the n-th root of a non-negative integer (Newton iteration).
pub fn nth_root_floor(x: &BigUint, n: u32) -> BigUint {
    assert!(n >= 1);
    if x.is_zero() || x.is_one() || n == 1 {
        return x.clone();
    }
    let bits = x.bits();
    // initial guess: 2^(ceil(bits/n)) >= true root
    let mut r = BigUint::one() << bits.div_ceil(n as u64);
    let nn = BigUint::from(n);
    let nm1 = BigUint::from(n - 1);
    loop {
        // r' = ((n-1)*r + x / r^(n-1)) / n
        let next = (&nm1 * &r + x / r.pow(n - 1)) / &nn;
        if next >= r {
            break;
        }
        r = next;
    }
    // Newton can land one high when the start is tight
    while r.pow(n) > *x {
        r -= BigUint::one();
    }
    r
}

/// Certified bounds on `x^(1/n)` for rational `x >= 0`, width at most
/// `2^-bits`. Detects perfect n-th powers and returns them exactly.
pub fn nth_root_bounds(x: &Rat, n: u32, bits: u32) -> BoundPair {
    assert!(!x.is_negative());
    let num = x.numer().magnitude();
    let den = x.denom().magnitude();
    // exact case: both parts perfect n-th powers
    let rn = nth_root_floor(num, n);
    let rd = nth_root_floor(den, n);
    if rn.pow(n) == *num && rd.pow(n) == *den {
        let v = Rat::new(Int::from(rn), Int::from(rd));
        return BoundPair::exact(v);
    }
    // lo = floor((x * 2^(bits*n))^(1/n)) / 2^bits
    let scaled = (x.numer() << (bits as u64 * n as u64)).div_floor(x.denom());
    let m = nth_root_floor(scaled.magnitude(), n);
    let lo = Rat::new(Int::from(m.clone()), Int::one() << bits);
    let hi = Rat::new(Int::from(m + BigUint::one()), Int::one() << bits);
    BoundPair::new(lo, hi)
}

/// Certified bounds on `x^(a/b)` for rational `x` in `[0, 1]`, target width
/// `precision`.
pub fn rational_pow_bounds(x: &Rat, a: u64, b: u32, precision: &Rat) -> BoundPair {
    assert!(!x.is_negative() && x <= &Rat::one());
    assert!(b >= 1);
    let xa = pow_rat(x, a);
    if b == 1 {
        return BoundPair::exact(xa);
    }
    // x^a in [0,1]; the b-th root map is 1-Lipschitz-or-better away from 0,
    // but near 0 the root bound width is what we control directly.
    let bits = precision_bits(precision) + 2;
    nth_root_bounds(&xa, b, bits)
}

/// Exact integer power of a rational.
pub fn pow_rat(x: &Rat, e: u64) -> Rat {
    let mut acc = Rat::one();
    let mut base = x.clone();
    let mut e = e;
    while e > 0 {
        if e & 1 == 1 {
            acc *= &base;
        }
        e >>= 1;
        if e > 0 {
            base = &base * &base;
        }
    }
    acc
}

/// Number of fractional bits needed so that `2^-bits <= precision`.
pub fn precision_bits(precision: &Rat) -> u32 {
    assert!(precision.is_positive());
    let inv = precision.recip();
    // ceil(log2(1/precision))
    let q = inv.numer().magnitude().bits() as i64 - inv.denom().magnitude().bits() as i64;
    let mut bits = q.max(0) as u32;
    while from_dyadic(Int::one(), bits + 1) > *precision {
        bits += 1;
    }
    bits + 1
}

/// Certified bounds on the Gaussian-kernel integral `∫_0^z exp(-t^2) dt`
/// for rational `z >= 0`, via the alternating Maclaurin series evaluated in
/// fixed-point with directed rounding. Width at most `2^-bits` plus a couple
/// of ulps.
pub fn gauss_integral_bounds(z: &Rat, bits: u32) -> BoundPair {
    assert!(!z.is_negative());
    if z.is_zero() {
        return BoundPair::exact(Rat::zero());
    }
    // The series terms peak near z^(2n)/n! ~ e^(z^2); reserve guard bits for
    // the cancellation plus accumulation slack.
    let z_ceil: u64 = (z.numer().div_ceil(z.denom())).try_into().unwrap();
    let guard = (z_ceil * z_ceil * 3 / 2 + 48) as u32;
    let s = bits + guard;

    let z2_num = z.numer() * z.numer();
    let z2_den = z.denom() * z.denom();

    // term interval, scaled by 2^s
    let mut t_lo = dyadic_floor(z, s);
    let mut t_hi = dyadic_ceil(z, s);
    let mut sum_lo = t_lo.clone();
    let mut sum_hi = t_hi.clone();
    let mut n: u64 = 0;
    let mut ulps: u64 = 2;
    loop {
        n += 1;
        // term_n = term_{n-1} * z^2 * (2n-1) / (n * (2n+1))
        let mul_num = &z2_num * Int::from(2 * n - 1);
        let mul_den = &z2_den * Int::from(n) * Int::from(2 * n + 1);
        let nt_lo = (&t_lo * &mul_num).div_floor(&mul_den);
        let nt_hi = (&t_hi * &mul_num).div_ceil(&mul_den);
        t_lo = nt_lo;
        t_hi = nt_hi;
        if t_lo.is_negative() {
            t_lo = Int::zero();
        }
        if n % 2 == 1 {
            sum_lo -= &t_hi;
            sum_hi -= &t_lo;
        } else {
            sum_lo += &t_lo;
            sum_hi += &t_hi;
        }
        ulps += 2;
        // once terms decrease and drop below one ulp the tail is bracketed by
        // the alternating partial sums we already hold
        if t_hi <= Int::one() && Int::from(n * n) >= (&z2_num).div_ceil(&z2_den) * Int::from(4) {
            break;
        }
    }
    let slack = Int::from(ulps + 2);
    BoundPair::new(
        from_dyadic(sum_lo - &slack, s),
        from_dyadic(sum_hi + &slack, s),
    )
}

/// Rational upper and lower bounds on `sqrt(2/e)`, width below `2^-bits`.
pub fn sqrt_two_over_e_bounds(bits: u32) -> BoundPair {
    // e by partial sums of 1/n!: lower = S_N, upper = S_N + 2/(N+1)!
    let terms = (bits as usize / 2).max(24);
    let mut fact = Int::one();
    let mut e_lo = Rat::zero();
    for n in 0..=terms {
        if n > 0 {
            fact *= Int::from(n as u64);
        }
        e_lo += Rat::new(Int::one(), fact.clone());
    }
    let e_hi = &e_lo + Rat::new(Int::from(2), &fact * Int::from((terms + 1) as u64));
    let ratio_lo = rat_int(2) / &e_hi;
    let ratio_hi = rat_int(2) / &e_lo;
    let lo = nth_root_bounds(&ratio_lo, 2, bits + 2);
    let hi = nth_root_bounds(&ratio_hi, 2, bits + 2);
    BoundPair::new(lo.lo().clone(), hi.hi().clone())
}
