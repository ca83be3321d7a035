//! Integer count tables: per-checkpoint A/B counts from envelope floors, the
//! derived new-count and pool arrays the sampler draws from, and envelope
//! domination checks.

use crate::functions::{Func, FuncError, Shape};
use crate::numerics::{
    binomial_row, dyadic_ceil, dyadic_floor, floor_scaled, from_dyadic, precision_bits, rat,
    vandermonde_convolve, BoundPair, Int, Rat,
};
use num::{One, Signed, Zero};
use thiserror::Error;

// error-message rendering only; all checks stay exact
fn approx(r: &Rat) -> f64 {
    num::ToPrimitive::to_f64(r).unwrap_or(f64::NAN)
}

#[derive(Debug, Error)]
pub enum TableError {
    #[error("nesting violated on the {side} side at tier {tier}, k = {k}")]
    NestingViolation { tier: usize, k: usize, side: char },
    #[error("envelope at checkpoint {checkpoint} not verified")]
    EnvelopeUnverified { checkpoint: u64 },
    #[error("envelope check failed at p = {point}: margin ~{:.3e}", approx(.margin))]
    VerificationFailed { point: Rat, margin: Rat },
    #[error("cannot decide floor at checkpoint {checkpoint}, k = {k} within precision cap")]
    FloorUndecidable { checkpoint: u64, k: usize },
    #[error("{0}")]
    InvalidMode(String),
    #[error("bad checkpoint schedule: {0}")]
    BadSchedule(String),
    #[error(transparent)]
    Func(#[from] FuncError),
}

/// Lower envelope `a <= f` and upper envelope `g >= f` at one checkpoint.
/// The B counts are built from the complement `1 - g`, which approximates
/// `1 - f` from below.
#[derive(Debug, Clone)]
pub struct EnvelopePair {
    pub lower: Func,
    pub upper: Func,
    pub checkpoint: u64,
    verified: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerifyMode {
    /// Check only at the target's knots and the endpoints. A proof when the
    /// target is piecewise linear and the upper envelope is concave (its
    /// Bernstein expansion is then concave, so knot domination extends to
    /// every segment).
    Knots,
    /// Check at `count` interior grid points plus interior knots of both
    /// functions. Heuristic: a pass certifies only the checked points.
    Grid(usize),
}

#[derive(Debug, Clone)]
pub struct VerificationReport {
    pub mode: VerifyMode,
    /// True only for knots mode on piecewise-linear targets with concave
    /// upper envelopes; grid reports are heuristic.
    pub proof: bool,
    /// Certified lower bound on min over checked x of Bernstein_n(g)(x) - f(x).
    pub min_upper_margin: Rat,
    /// Certified lower bound on min over checked x of f(x) - a(x).
    pub min_lower_margin: Rat,
    pub points_checked: usize,
}

impl EnvelopePair {
    pub fn new(lower: Func, upper: Func, checkpoint: u64) -> Self {
        EnvelopePair {
            lower,
            upper,
            checkpoint,
            verified: false,
        }
    }

    pub fn is_verified(&self) -> bool {
        self.verified
    }

    /// Run `verify_envelope` and record the result on success.
    pub fn verify(&mut self, target: &Func, mode: VerifyMode) -> Result<VerificationReport, TableError> {
        let report = verify_envelope(target, self, mode)?;
        self.verified = true;
        Ok(report)
    }

    /// Mark verified without checking. For loading audited plans and for
    /// record-only runs of plans whose envelope condition is known not to
    /// hold everywhere (the count table is still well formed; the factory
    /// then realizes whatever output law the counts encode).
    pub fn assume_verified(&mut self) {
        self.verified = true;
    }
}

/// Bernstein weight numerators `C(n,k) pn^k (pd-pn)^(n-k)` and the common
/// denominator `pd^n`, for `p = pn/pd` in lowest terms.
pub fn bernstein_weights(n: u64, p: &Rat) -> (Vec<Int>, Int) {
    assert!(!p.is_negative() && p <= &Rat::one());
    let pn = p.numer().clone();
    let qd = p.denom() - &pn; // pd - pn
    let binom = binomial_row(n);
    let len = n as usize + 1;
    // pn^k and (pd-pn)^(n-k) by running products
    let mut pk = vec![Int::one(); len];
    for k in 1..len {
        pk[k] = &pk[k - 1] * &pn;
    }
    let mut qk = vec![Int::one(); len];
    for k in 1..len {
        qk[k] = &qk[k - 1] * &qd;
    }
    let weights = (0..len)
        .map(|k| &binom[k] * &pk[k] * &qk[len - 1 - k])
        .collect();
    (weights, p.denom().pow(n as u32))
}

/// Pre-evaluated `g(k/n)` node values, so the expansion can be evaluated at
/// many `p` without re-evaluating `g` (the node pass dominates for
/// integral-backed functions).
pub enum BernsteinNodes {
    /// Exact rational values.
    Exact { n: u64, values: Vec<Rat> },
    /// Directed-rounded dyadic enclosures `(floor, ceil)` at `bits`.
    Dyadic {
        n: u64,
        values: Vec<(Int, Int)>,
        bits: u32,
    },
}

impl BernsteinNodes {
    pub fn build(g: &Func, n: u64, precision: &Rat) -> Result<Self, TableError> {
        if g.is_rational_valued() {
            let values = (0..=n)
                .map(|k| {
                    g.eval_exact(&Rat::new(Int::from(k), Int::from(n)))
                        .expect("rational-valued")
                })
                .collect();
            return Ok(BernsteinNodes::Exact { n, values });
        }
        // snap each enclosure to a common dyadic grid; weights sum to the
        // common denominator, so per-node width carries straight through
        let bits = precision_bits(precision) + 8;
        let snap = from_dyadic(Int::one(), bits);
        let mut values = Vec::with_capacity(n as usize + 1);
        for k in 0..=n {
            let b = g.eval(&Rat::new(Int::from(k), Int::from(n)), &snap)?;
            values.push((dyadic_floor(b.lo(), bits), dyadic_ceil(b.hi(), bits)));
        }
        Ok(BernsteinNodes::Dyadic { n, values, bits })
    }

    pub fn eval(&self, p: &Rat) -> BoundPair {
        match self {
            BernsteinNodes::Exact { n, values } => {
                let (weights, den) = bernstein_weights(*n, p);
                let mut acc = Rat::zero();
                for (k, w) in weights.iter().enumerate() {
                    if w.is_zero() {
                        continue;
                    }
                    acc += Rat::from_integer(w.clone()) * &values[k];
                }
                BoundPair::exact(acc / Rat::from_integer(den))
            }
            BernsteinNodes::Dyadic { n, values, bits } => {
                let (weights, den) = bernstein_weights(*n, p);
                let mut sum_lo = Int::zero();
                let mut sum_hi = Int::zero();
                for (k, w) in weights.iter().enumerate() {
                    if w.is_zero() {
                        continue;
                    }
                    sum_lo += w * &values[k].0;
                    sum_hi += w * &values[k].1;
                }
                let scale = Rat::from_integer(&den << *bits).recip();
                BoundPair::new(
                    Rat::from_integer(sum_lo) * &scale,
                    Rat::from_integer(sum_hi) * &scale,
                )
            }
        }
    }
}

/// Certified bounds on the order-`n` Bernstein expansion
/// `sum_k C(n,k) g(k/n) p^k (1-p)^(n-k)`; exact when `g` is rational-valued.
pub fn bernstein_eval(g: &Func, n: u64, p: &Rat, precision: &Rat) -> Result<BoundPair, TableError> {
    Ok(BernsteinNodes::build(g, n, precision)?.eval(p))
}

/// Checkpoint schedule plus the A/B counts and every derived array the
/// sampler and oracle need. Immutable once built; all invariants checked at
/// construction.
#[derive(Debug, Clone, PartialEq)]
pub struct CountTable {
    pub checkpoints: Vec<u64>,
    /// a[i][k]: strings of length m_i with k ones that output One.
    pub a: Vec<Vec<Int>>,
    /// b[i][k]: strings that output Zero.
    pub b: Vec<Vec<Int>>,
    /// new_a[i][k] = a[i][k] - sum_j a[i-1][j] C(dm, k-j): terminations not
    /// inherited from tier i-1.
    pub new_a: Vec<Vec<Int>>,
    pub new_b: Vec<Vec<Int>>,
    /// pool_total[i][k]: descendants of tier i-1 survivors with k ones;
    /// pool_total[0][k] = C(m_1, k).
    pub pool_total: Vec<Vec<Int>>,
}

impl CountTable {
    pub fn tiers(&self) -> usize {
        self.checkpoints.len()
    }

    /// Continue-counts C(m_i,k) - a[i][k] - b[i][k].
    pub fn c_counts(&self, tier: usize) -> Vec<Int> {
        let m = self.checkpoints[tier];
        let binom = binomial_row(m);
        (0..=m as usize)
            .map(|k| &binom[k] - &self.a[tier][k] - &self.b[tier][k])
            .collect()
    }
}

// floor(count * v) where v is only available through certified enclosures:
// tighten until both ends agree on the floor.
fn decided_floor(
    count: &Int,
    f: &Func,
    x: &Rat,
    complement: bool,
    checkpoint: u64,
    k: usize,
) -> Result<Int, TableError> {
    if count.is_zero() {
        return Ok(Int::zero());
    }
    // start just below 1/count and tighten by 2^16 per round
    let mut prec = Rat::new(Int::one(), count << 20u32);
    for _ in 0..12 {
        let b = f.eval(x, &prec)?;
        let b = if complement { b.complement() } else { b };
        // clamp into [0,1]: envelope values can poke out by their enclosure
        // width at the boundary
        let clamp = |v: &Rat| -> Rat {
            if v.is_negative() {
                Rat::zero()
            } else if v > &Rat::one() {
                Rat::one()
            } else {
                v.clone()
            }
        };
        let lo = floor_scaled(count, &clamp(b.lo())).expect("clamped");
        let hi = floor_scaled(count, &clamp(b.hi())).expect("clamped");
        if lo == hi {
            return Ok(lo);
        }
        prec /= Rat::from_integer(Int::one() << 16u32);
    }
    Err(TableError::FloorUndecidable { checkpoint, k })
}

/// Build the count table for `target` from verified envelopes sorted by
/// checkpoint. `A_i(k) = floor(C(m_i,k) a_i(k/m_i))`,
/// `B_i(k) = floor(C(m_i,k)(1 - g_i(k/m_i)))`; fails if the nesting
/// condition (new counts non-negative) is violated anywhere.
pub fn build_count_table(
    _target: &Func,
    envelopes: &[EnvelopePair],
) -> Result<CountTable, TableError> {
    if envelopes.is_empty() {
        return Err(TableError::BadSchedule("no envelopes".into()));
    }
    for w in envelopes.windows(2) {
        if w[0].checkpoint >= w[1].checkpoint {
            return Err(TableError::BadSchedule(
                "checkpoints must strictly increase".into(),
            ));
        }
    }
    for pair in envelopes {
        if !pair.verified {
            return Err(TableError::EnvelopeUnverified {
                checkpoint: pair.checkpoint,
            });
        }
    }

    let checkpoints: Vec<u64> = envelopes.iter().map(|e| e.checkpoint).collect();
    let mut a: Vec<Vec<Int>> = Vec::with_capacity(envelopes.len());
    let mut b: Vec<Vec<Int>> = Vec::with_capacity(envelopes.len());
    for pair in envelopes {
        let m = pair.checkpoint;
        let binom = binomial_row(m);
        let mut arow = Vec::with_capacity(m as usize + 1);
        let mut brow = Vec::with_capacity(m as usize + 1);
        for k in 0..=m as usize {
            let x = Rat::new(Int::from(k as u64), Int::from(m));
            arow.push(decided_floor(&binom[k], &pair.lower, &x, false, m, k)?);
            brow.push(decided_floor(&binom[k], &pair.upper, &x, true, m, k)?);
        }
        a.push(arow);
        b.push(brow);
    }
    assemble_table(checkpoints, a, b)
}

/// Derive new-counts and pools from raw A/B rows and check every invariant.
/// Also the reload path: stored rows pass through here again.
pub fn assemble_table(
    checkpoints: Vec<u64>,
    a: Vec<Vec<Int>>,
    b: Vec<Vec<Int>>,
) -> Result<CountTable, TableError> {
    let tiers = checkpoints.len();
    assert_eq!(a.len(), tiers);
    assert_eq!(b.len(), tiers);
    let mut new_a = Vec::with_capacity(tiers);
    let mut new_b = Vec::with_capacity(tiers);
    let mut pool_total = Vec::with_capacity(tiers);
    for i in 0..tiers {
        let m = checkpoints[i];
        let binom = binomial_row(m);
        assert_eq!(a[i].len(), m as usize + 1);
        assert_eq!(b[i].len(), m as usize + 1);
        let (na, nb, pool) = if i == 0 {
            (a[0].clone(), b[0].clone(), binom.to_vec())
        } else {
            let dm = m - checkpoints[i - 1];
            let inherited_a = vandermonde_convolve(&a[i - 1], dm);
            let inherited_b = vandermonde_convolve(&b[i - 1], dm);
            let prev_binom = binomial_row(checkpoints[i - 1]);
            let prev_c: Vec<Int> = (0..=checkpoints[i - 1] as usize)
                .map(|k| &prev_binom[k] - &a[i - 1][k] - &b[i - 1][k])
                .collect();
            let pool = vandermonde_convolve(&prev_c, dm);
            let na: Vec<Int> = (0..=m as usize).map(|k| &a[i][k] - &inherited_a[k]).collect();
            let nb: Vec<Int> = (0..=m as usize).map(|k| &b[i][k] - &inherited_b[k]).collect();
            (na, nb, pool)
        };
        for k in 0..=m as usize {
            if &a[i][k] + &b[i][k] > binom[k] || a[i][k].is_negative() || b[i][k].is_negative() {
                return Err(TableError::NestingViolation { tier: i, k, side: 'c' });
            }
            if na[k].is_negative() {
                return Err(TableError::NestingViolation { tier: i, k, side: 'a' });
            }
            if nb[k].is_negative() {
                return Err(TableError::NestingViolation { tier: i, k, side: 'b' });
            }
            // Vandermonde consistency: pool - newA - newB = C - A - B.
            // An identity given the rows above, so a violation means
            // corrupted input rows.
            let lhs = &pool[k] - &na[k] - &nb[k];
            let rhs = &binom[k] - &a[i][k] - &b[i][k];
            if lhs != rhs {
                return Err(TableError::NestingViolation { tier: i, k, side: 'p' });
            }
        }
        new_a.push(na);
        new_b.push(nb);
        pool_total.push(pool);
    }
    Ok(CountTable {
        checkpoints,
        a,
        b,
        new_a,
        new_b,
        pool_total,
    })
}

const VERIFY_PRECISION_DEN: i64 = 1_000_000_000;

/// Check the envelope conditions for one pair against the target:
/// `Bernstein_n(g)(x) >= f(x)` (upper side; equivalent to
/// `1 - Bernstein_n(1-g)(x) >= f(x)`) and `a(x) <= f(x)` (lower side).
/// Margins are certified lower bounds; failure reports the witnessing point.
pub fn verify_envelope(
    target: &Func,
    pair: &EnvelopePair,
    mode: VerifyMode,
) -> Result<VerificationReport, TableError> {
    let n = pair.checkpoint;
    let prec = rat(1, VERIFY_PRECISION_DEN);
    let mut points: Vec<Rat> = Vec::new();
    let proof = match mode {
        VerifyMode::Knots => {
            let target_pl = matches!(
                target,
                Func::Constant(_) | Func::Linear { .. } | Func::Elbow { .. } | Func::PiecewiseLinear { .. }
            );
            if !target_pl {
                return Err(TableError::InvalidMode(
                    "knots mode requires a piecewise-linear target".into(),
                ));
            }
            let upper_concave = matches!(pair.upper.shape(), Shape::Concave | Shape::Linear);
            if !upper_concave {
                return Err(TableError::InvalidMode(
                    "knots mode requires a concave upper envelope".into(),
                ));
            }
            points.push(Rat::zero());
            points.extend(target.knots());
            points.push(Rat::one());
            true
        }
        VerifyMode::Grid(count) => {
            // interior grid: at p = 0 or 1 the binomial law is degenerate and
            // the boundary behavior is exact by construction
            let den = Int::from(count as u64 + 1);
            for j in 1..=count as u64 {
                points.push(Rat::new(Int::from(j), den.clone()));
            }
            for x in target.knots().into_iter().chain(pair.upper.knots()).chain(pair.lower.knots()) {
                if x.is_positive() && x < Rat::one() {
                    points.push(x);
                }
            }
            false
        }
    };
    points.sort();
    points.dedup();

    // when the lower envelope is the target itself the margin is exactly
    // zero; interval evaluation would report a spurious hair-width negative
    let lower_is_target = pair.lower == *target;
    let upper_nodes = BernsteinNodes::build(&pair.upper, n, &prec)?;

    let mut min_upper: Option<Rat> = None;
    let mut min_lower: Option<Rat> = None;
    for x in &points {
        let fx = target.eval(x, &prec)?;
        let bern = upper_nodes.eval(x);
        let upper_margin = bern.lo() - fx.hi();
        if upper_margin.is_negative() {
            return Err(TableError::VerificationFailed {
                point: x.clone(),
                margin: upper_margin,
            });
        }
        let lower_margin = if lower_is_target {
            Rat::zero()
        } else {
            let ax = pair.lower.eval(x, &prec)?;
            fx.lo() - ax.hi()
        };
        if lower_margin.is_negative() {
            return Err(TableError::VerificationFailed {
                point: x.clone(),
                margin: lower_margin,
            });
        }
        min_upper = Some(match min_upper {
            Some(m) => m.min(upper_margin),
            None => upper_margin,
        });
        min_lower = Some(match min_lower {
            Some(m) => m.min(lower_margin),
            None => lower_margin,
        });
    }
    Ok(VerificationReport {
        mode,
        proof,
        min_upper_margin: min_upper.unwrap_or_else(Rat::zero),
        min_lower_margin: min_lower.unwrap_or_else(Rat::zero),
        points_checked: points.len(),
    })
}
