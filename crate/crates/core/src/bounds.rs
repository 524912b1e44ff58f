//! Closed-form bound evaluators in exact big-integer or log2 form.
//!
//! Values that fit in [`EXACT_BITS_CAP`] bits are computed exactly; larger
//! ones carry only their base-2 logarithm, whose integer part is itself an
//! arbitrary-precision integer.

use std::fmt;
use std::str::FromStr;

use num_bigint::{BigInt, BigUint};
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::Serialize;

use crate::error::{Error, Result};

/// Largest exact integer, in bits, that evaluators will materialize.
pub const EXACT_BITS_CAP: u64 = 1 << 24;

/// A base-2 logarithm split as `whole + frac` with `0 <= frac < 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Log2 {
    pub whole: BigInt,
    pub frac: f64,
}

impl Log2 {
    pub fn zero() -> Self {
        Self::integer(BigInt::zero())
    }

    pub fn integer(whole: impl Into<BigInt>) -> Self {
        Self { whole: whole.into(), frac: 0.0 }
    }

    fn normalized(whole: BigInt, frac: f64) -> Self {
        let shift = frac.floor();
        let mut frac = frac - shift;
        let mut whole = whole + BigInt::from(shift as i64);
        if frac >= 1.0 {
            frac -= 1.0;
            whole += 1;
        }
        Self { whole, frac }
    }

    /// `log2(x)` for a positive integer; exact for powers of two.
    pub fn of_uint(x: &BigUint) -> Result<Self> {
        if x.is_zero() {
            return Err(Error::Precondition("log2 of zero".into()));
        }
        let bits = x.bits();
        if x.trailing_zeros() == Some(bits - 1) {
            return Ok(Self::integer(bits - 1));
        }
        let shift = bits.saturating_sub(64);
        let top = (x >> shift).to_u64().expect("at most 64 bits remain") as f64;
        Ok(Self::normalized(BigInt::from(shift), top.log2()))
    }

    /// `log2(q)` for a positive rational.
    pub fn of_ratio(q: &BigRational) -> Result<Self> {
        if !q.is_positive() {
            return Err(Error::Precondition(format!("log2 of non-positive value {q}")));
        }
        let num = Self::of_uint(q.numer().magnitude())?;
        let den = Self::of_uint(q.denom().magnitude())?;
        Ok(num - den)
    }

    /// The number `q` itself written as a `whole + frac` pair.
    pub fn from_value(q: &BigRational) -> Self {
        let whole = q.floor().to_integer();
        let rest = q - BigRational::from_integer(whole.clone());
        Self::normalized(whole, rest.to_f64().unwrap_or(0.0))
    }

    pub fn scale(&self, k: &BigRational) -> Self {
        let whole = BigRational::from_integer(self.whole.clone()) * k;
        let base = Self::from_value(&whole);
        let extra = self.frac * k.to_f64().expect("scale factors are moderate");
        Self::normalized(base.whole, base.frac + extra)
    }

    pub fn is_integer(&self) -> bool {
        self.frac == 0.0
    }

    /// Smallest integer not below the logarithm.
    pub fn ceil(&self) -> BigInt {
        if self.frac == 0.0 {
            self.whole.clone()
        } else {
            &self.whole + 1
        }
    }

    pub fn to_f64(&self) -> f64 {
        self.whole.to_f64().unwrap_or(f64::INFINITY) + self.frac
    }

    pub fn is_negative(&self) -> bool {
        self.whole.is_negative()
    }
}

impl std::ops::Add for Log2 {
    type Output = Log2;
    fn add(self, rhs: Log2) -> Log2 {
        Log2::normalized(self.whole + rhs.whole, self.frac + rhs.frac)
    }
}

impl std::ops::Sub for Log2 {
    type Output = Log2;
    fn sub(self, rhs: Log2) -> Log2 {
        Log2::normalized(self.whole - rhs.whole, self.frac - rhs.frac)
    }
}

impl fmt::Display for Log2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.frac == 0.0 {
            write!(f, "{}", self.whole)
        } else if self.whole.bits() < 50 {
            write!(f, "{}", self.to_f64())
        } else {
            let frac = format!("{:.12}", self.frac);
            write!(f, "{}{}", self.whole, frac.trim_start_matches('0'))
        }
    }
}

impl Serialize for Log2 {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Formula {
    Lipschitz,
    WrlHiddenDim,
    CompressionHiddenDim,
    VcLowerBound,
    D0Threshold,
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Formula::Lipschitz => "lipschitz",
            Formula::WrlHiddenDim => "wrl-hidden-dim",
            Formula::CompressionHiddenDim => "compression-hidden-dim",
            Formula::VcLowerBound => "vc-lower-bound",
            Formula::D0Threshold => "d0-threshold",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundValue {
    pub formula: Formula,
    /// The value itself, when it is an integer of at most [`EXACT_BITS_CAP`] bits.
    #[serde(serialize_with = "ser_opt_uint")]
    pub exact: Option<BigUint>,
    pub log2: Log2,
}

fn ser_opt_uint<S: serde::Serializer>(v: &Option<BigUint>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(x) if x.bits() <= 4096 => s.serialize_some(&x.to_string()),
        Some(_) => s.serialize_some("<too long to print>"),
        None => s.serialize_none(),
    }
}

impl BoundValue {
    fn from_uint(formula: Formula, x: BigUint) -> Result<Self> {
        let log2 = Log2::of_uint(&x)?;
        Ok(Self { formula, exact: Some(x), log2 })
    }

    /// Whether `exact` and `log2` agree to `tol`.
    pub fn is_consistent(&self, tol: f64) -> bool {
        match &self.exact {
            None => true,
            Some(x) => match Log2::of_uint(x) {
                Ok(l) => {
                    let d = l - self.log2.clone();
                    d.to_f64().abs() <= tol
                }
                Err(_) => false,
            },
        }
    }
}

impl fmt::Display for BoundValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.exact {
            Some(x) if x.bits() <= 256 => write!(f, "{x} (log2 {})", self.log2),
            _ => write!(f, "2^{}", self.log2),
        }
    }
}

/// Parses `"3"`, `"0.125"`, `"1/24"` or `"1e-3"` into an exact rational.
pub fn parse_rational(s: &str) -> Result<BigRational> {
    let s = s.trim();
    let bad = || Error::Precondition(format!("cannot parse {s:?} as a rational number"));
    if s.contains('/') {
        return BigRational::from_str(s).map_err(|_| bad());
    }
    let (mantissa, exp) = match s.find(['e', 'E']) {
        Some(i) => (&s[..i], s[i + 1..].parse::<i32>().map_err(|_| bad())?),
        None => (s, 0),
    };
    let (int, frac) = mantissa.split_once('.').unwrap_or((mantissa, ""));
    let digits = format!("{int}{frac}");
    let num = BigInt::from_str(&digits).map_err(|_| bad())?;
    let scale = exp - frac.len() as i32;
    let ten = BigInt::from(10u8);
    Ok(if scale >= 0 {
        BigRational::from_integer(num * ten.pow(scale as u32))
    } else {
        BigRational::new(num, ten.pow((-scale) as u32))
    })
}

fn rat(x: u64) -> BigRational {
    BigRational::from_integer(x.into())
}

fn positive(name: &str, q: &BigRational) -> Result<()> {
    if q.is_positive() {
        Ok(())
    } else {
        Err(Error::Precondition(format!("{name} must be positive, got {q}")))
    }
}

fn at_least_one(name: &str, v: u64) -> Result<()> {
    if v == 0 {
        Err(Error::Precondition(format!("{name} must be at least 1")))
    } else {
        Ok(())
    }
}

fn pow(q: &BigRational, e: u64) -> BigRational {
    num_traits::pow(q.clone(), e as usize)
}

fn integer_value(q: &BigRational) -> Option<BigUint> {
    (q.is_integer() && !q.is_negative()).then(|| q.to_integer().magnitude().clone())
}

/// `2^L B^L`.
pub fn lipschitz_constant(b: &BigRational, l: u64) -> Result<BoundValue> {
    positive("B", b)?;
    at_least_one("L", l)?;
    let two_b = b * rat(2);
    let log2 = Log2::of_ratio(&two_b)?.scale(&rat(l));
    let exact = if log2.whole.bits() <= 40 && log2.to_f64() <= EXACT_BITS_CAP as f64 {
        integer_value(&pow(&two_b, l))
    } else {
        None
    };
    Ok(BoundValue { formula: Formula::Lipschitz, exact, log2 })
}

/// `8 M L ceil(2^(2 ceil(16 / eps^2)) / eps)` with `M = lcm(d0, dL)`.
pub fn wrl_hidden_dim(eps: &BigRational, l: u64, d0: u64, dl: u64) -> Result<BoundValue> {
    let mut v = hidden_dim(eps, l, d0, dl)?;
    v.formula = Formula::WrlHiddenDim;
    Ok(v)
}

fn hidden_dim(eps: &BigRational, l: u64, d0: u64, dl: u64) -> Result<BoundValue> {
    positive("epsilon", eps)?;
    at_least_one("L", l)?;
    at_least_one("d0", d0)?;
    at_least_one("dL", dl)?;
    let m = d0.lcm(&dl);
    let prefactor = BigUint::from(8u8) * BigUint::from(m) * BigUint::from(l);
    let k = (rat(16) / (eps * eps)).ceil().to_integer();
    let exponent: BigInt = k * 2;
    let inv = eps.recip();
    match exponent.to_u64().filter(|&e| e <= EXACT_BITS_CAP) {
        Some(e) => {
            let big = BigRational::from_integer(BigInt::one() << e) * inv;
            let inner = big.ceil().to_integer().magnitude().clone();
            BoundValue::from_uint(Formula::WrlHiddenDim, prefactor * inner)
        }
        None => {
            // The ceiling adds less than 1 to a number above 2^exponent, which
            // moves the logarithm by less than 2^-exponent.
            let log2 = Log2::of_uint(&prefactor)? + Log2::integer(exponent) + Log2::of_ratio(&inv)?;
            Ok(BoundValue { formula: Formula::WrlHiddenDim, exact: None, log2 })
        }
    }
}

/// Hidden width that guarantees output error `eps`: the weak-regularity width
/// at kernel tolerance `eps / ((L+2) dL (2B)^L)`.
pub fn compression_hidden_dim(eps: &BigRational, b: &BigRational, l: u64, d0: u64, dl: u64) -> Result<BoundValue> {
    positive("epsilon", eps)?;
    at_least_one("L", l)?;
    at_least_one("dL", dl)?;
    if *b < rat(l + 2) {
        return Err(Error::Precondition(format!("B = {b} is below L + 2 = {}", l + 2)));
    }
    let scale = rat((l + 2) * dl) * pow(&(b * rat(2)), l);
    let mut v = hidden_dim(&(eps / scale), l, d0, dl)?;
    v.formula = Formula::CompressionHiddenDim;
    Ok(v)
}

/// `c^(-1/2) (6 eps)^(-d0/2)`, the parameter count below which some
/// 1-Lipschitz target cannot be approximated to `eps`.
pub fn vc_lower_bound(eps: &BigRational, d0: u64, c: &BigRational) -> Result<BoundValue> {
    positive("c", c)?;
    at_least_one("d0", d0)?;
    if !eps.is_positive() || *eps >= BigRational::new(1.into(), 3.into()) {
        return Err(Error::Precondition(format!("epsilon = {eps} is outside (0, 1/3)")));
    }
    let six_eps = eps * rat(6);
    let half = BigRational::new(1.into(), 2.into());
    let log2 = Log2::of_ratio(&six_eps)?.scale(&-(rat(d0) * &half)) - Log2::of_ratio(c)?.scale(&half);
    let exact = if log2.to_f64() <= EXACT_BITS_CAP as f64 / 2.0 {
        let square = pow(&six_eps.recip(), d0) / c;
        integer_value(&square).and_then(|s| {
            let r = s.sqrt();
            (&r * &r == s).then_some(r)
        })
    } else {
        None
    };
    Ok(BoundValue { formula: Formula::VcLowerBound, exact, log2 })
}

fn threshold_log_arg(b: &BigRational, l: u64, dl: u64) -> BigRational {
    let l3 = rat(l).pow(3);
    l3 * rat(l + 2).pow(2) * rat(dl).pow(4) * pow(&(b * rat(2)), 2 * l)
}

fn threshold_main(b: &BigRational, l: u64, dl: u64) -> BigRational {
    rat(1 << 14) * rat(l + 2).pow(2) * rat(dl).pow(2) * pow(&(b * rat(2)), 2 * l)
}

/// `17 log2(c^(1/2) L^3 (L+2)^2 dL^4 (2B)^(2L)) + 17 2^14 (L+2)^2 dL^2 (2B)^(2L) + 306`,
/// rounded up to an integer.
pub fn d0_threshold(b: &BigRational, l: u64, dl: u64, c: &BigRational) -> Result<BoundValue> {
    positive("c", c)?;
    at_least_one("L", l)?;
    at_least_one("dL", dl)?;
    if *b < rat(l + 2) {
        return Err(Error::Precondition(format!("B = {b} is below L + 2 = {}", l + 2)));
    }
    let half = BigRational::new(1.into(), 2.into());
    let log_term = (Log2::of_ratio(c)?.scale(&half) + Log2::of_ratio(&threshold_log_arg(b, l, dl))?).scale(&rat(17));
    let main = Log2::from_value(&(threshold_main(b, l, dl) * rat(17)));
    let total: BigInt = (log_term + main).ceil() + 306;
    let value = total
        .to_biguint()
        .ok_or_else(|| Error::Numerical("threshold evaluated to a negative number".into()))?;
    BoundValue::from_uint(Formula::D0Threshold, value)
}

/// The fixed target accuracy of the non-universality argument.
pub fn epsilon0() -> BigRational {
    BigRational::new(1.into(), 8.into())
}

#[derive(Clone, Debug, Serialize)]
pub struct NonUniversality {
    /// log2 of the parameter-count upper bound for compressed dense networks.
    pub log2_compressed_params: Log2,
    /// log2 of the parameter count required for accuracy `epsilon0`.
    pub log2_required_params: Log2,
    /// `log2_required_params - log2_compressed_params`.
    pub margin: f64,
    pub gap_holds: bool,
}

/// Compares the compressed parameter bound
/// `d0^2 dL^4 L^3 (L+2)^2 (2B)^(2L) 2^(2^14 (L+2)^2 dL^2 (2B)^(2L) + 18)`
/// with the lower bound of [`vc_lower_bound`] at `epsilon0`.
pub fn non_universality_check(b: &BigRational, l: u64, dl: u64, d0: u64, c: &BigRational) -> Result<NonUniversality> {
    positive("c", c)?;
    at_least_one("L", l)?;
    at_least_one("dL", dl)?;
    at_least_one("d0", d0)?;
    if *b < rat(l + 2) {
        return Err(Error::Precondition(format!("B = {b} is below L + 2 = {}", l + 2)));
    }
    let compressed = Log2::of_uint(&BigUint::from(d0))?.scale(&rat(2))
        + Log2::of_ratio(&threshold_log_arg(b, l, dl))?
        + Log2::from_value(&(threshold_main(b, l, dl) + rat(18)));
    let required = vc_lower_bound(&epsilon0(), d0, c)?.log2;
    let diff = required.clone() - compressed.clone();
    let margin = diff.to_f64();
    Ok(NonUniversality {
        log2_compressed_params: compressed,
        log2_required_params: required,
        margin,
        gap_holds: !diff.is_negative(),
    })
}

/// `f(x) = sum_m y_m phi(N (x - x_m))` with `phi(z) = max(0, 1 - 2 |z|)` and
/// grid points `x_m` at the cell centres `(k + 1/2) / N` of `[0, 1]^d0`.
#[derive(Clone, Debug)]
pub struct SpikeTarget {
    d0: usize,
    n: usize,
    labels: Vec<f64>,
}

impl SpikeTarget {
    /// Labels are indexed by `m = sum_i k_i N^i`.
    pub fn new(d0: usize, n: usize, labels: Vec<f64>) -> Result<Self> {
        if d0 == 0 || n == 0 {
            return Err(Error::Precondition("spike target needs d0 >= 1 and N >= 1".into()));
        }
        let count = u32::try_from(d0)
            .ok()
            .and_then(|e| n.checked_pow(e))
            .ok_or_else(|| Error::Capacity(format!("N^d0 = {n}^{d0} grid points")))?;
        if labels.len() != count {
            return Err(Error::Dimension(format!("{} labels for {count} grid points", labels.len())));
        }
        Ok(Self { d0, n, labels })
    }

    pub fn input_dim(&self) -> usize {
        self.d0
    }

    pub fn grid_size(&self) -> usize {
        self.n
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn grid_point(&self, m: usize) -> Vec<f64> {
        let mut rest = m;
        (0..self.d0)
            .map(|_| {
                let k = rest % self.n;
                rest /= self.n;
                (k as f64 + 0.5) / self.n as f64
            })
            .collect()
    }

    /// Only the nearest grid point can contribute, since the bumps have
    /// radius half the grid spacing.
    pub fn eval(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.d0, "input dimension");
        let n = self.n as f64;
        let mut m = 0;
        let mut stride = 1;
        let mut dist_sq = 0.0;
        for &xi in x {
            let k = ((xi * n).floor().max(0.0) as usize).min(self.n - 1);
            let centre = (k as f64 + 0.5) / n;
            dist_sq += (n * (xi - centre)).powi(2);
            m += k * stride;
            stride *= self.n;
        }
        let r = dist_sq.sqrt();
        if r < 0.5 {
            self.labels[m] * (1.0 - 2.0 * r)
        } else {
            0.0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn q(s: &str) -> BigRational {
        parse_rational(s).unwrap()
    }

    #[test]
    fn parses_rationals() {
        assert_eq!(q("1/24"), BigRational::new(1.into(), 24.into()));
        assert_eq!(q("0.125"), BigRational::new(1.into(), 8.into()));
        assert_eq!(q("4"), rat(4));
        assert_eq!(q("2.5e1"), rat(25));
        assert!(parse_rational("x").is_err());
    }

    #[test]
    fn lipschitz_values() {
        assert_eq!(lipschitz_constant(&q("4"), 2).unwrap().exact, Some(BigUint::from(64u8)));
        assert_eq!(lipschitz_constant(&q("1"), 1).unwrap().exact, Some(BigUint::from(2u8)));
        let v = lipschitz_constant(&q("8"), 10).unwrap();
        assert_eq!(v.log2, Log2::integer(40));
    }

    #[test]
    fn wrl_values() {
        assert_eq!(wrl_hidden_dim(&q("4"), 2, 1, 1).unwrap().exact, Some(BigUint::from(16u8)));
        let v = wrl_hidden_dim(&q("1"), 2, 1, 1).unwrap();
        assert_eq!(v.exact, Some(BigUint::from(16u8) << 32));
        assert_eq!(v.log2, Log2::integer(36));
        let six = wrl_hidden_dim(&q("4"), 2, 2, 3).unwrap().exact.unwrap();
        assert_eq!(six, BigUint::from(96u8));
    }

    #[test]
    fn compression_value() {
        let v = compression_hidden_dim(&q("1"), &q("4"), 2, 1, 1).unwrap();
        assert_eq!(v.log2, Log2::integer(2_097_164));
        assert!(v.is_consistent(1e-9));
    }

    #[test]
    fn huge_exponents_stay_in_log_space() {
        let v = compression_hidden_dim(&q("1/10"), &q("6"), 4, 2, 3).unwrap();
        assert!(v.exact.is_none());
        assert!(v.log2.whole.bits() > 30);
    }

    #[test]
    fn vc_spot_values() {
        assert_eq!(vc_lower_bound(&q("1/24"), 2, &q("1")).unwrap().exact, Some(BigUint::from(4u8)));
        let v = vc_lower_bound(&q("1/8"), 306, &q("1")).unwrap();
        assert!((v.log2.to_f64() - 153.0 * (4.0f64 / 3.0).log2()).abs() < 1e-9);
        assert!(vc_lower_bound(&q("1/3"), 2, &q("1")).is_err());
    }

    #[test]
    fn threshold_spot_value() {
        let v = d0_threshold(&q("4"), 2, 1, &q("1")).unwrap();
        assert_eq!(v.exact, Some(BigUint::from(18_253_611_637u64)));
        let bigger = d0_threshold(&q("4"), 2, 1, &q("16")).unwrap();
        assert!(bigger.exact > v.exact);
    }

    #[test]
    fn non_universality_at_threshold_and_below() {
        let (b, c) = (q("4"), q("1"));
        let t = d0_threshold(&b, 2, 1, &c).unwrap().exact.unwrap().to_u64().unwrap();
        assert!(non_universality_check(&b, 2, 1, t, &c).unwrap().gap_holds);
        assert!(!non_universality_check(&b, 2, 1, 1, &c).unwrap().gap_holds);
    }

    #[test]
    fn spike_interpolates_grid_labels() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (d0, n) = (2, 4);
        let labels: Vec<f64> = (0..16).map(|_| rng.random_range(-0.125..0.125)).collect();
        let f = SpikeTarget::new(d0, n, labels.clone()).unwrap();
        for (m, y) in labels.iter().enumerate() {
            assert_eq!(f.eval(&f.grid_point(m)), *y);
        }
        assert!(SpikeTarget::new(2, 4, vec![0.0; 15]).is_err());
    }
}
