//! Exact outcome probabilities for a count table: closed-form sums over the
//! A/B rows, an independent path-enumeration cross-check that replays the
//! sampler's hazards, and the truncated expected-bits formula.

use crate::numerics::{Int, Rat};
use crate::tables::CountTable;
use num::{One, Signed, Zero};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("path enumeration needs {0} transitions, above the cap {1}")]
    TooLarge(u64, u64),
    #[error("p = {0} outside (0,1)")]
    POutOfRange(String),
}

/// Cumulative outcome probabilities through one checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeTriple {
    pub p_one: Rat,
    pub p_zero: Rat,
    pub p_continue: Rat,
}

impl OutcomeTriple {
    fn new(p_one: Rat, p_zero: Rat) -> Self {
        let p_continue = Rat::one() - &p_one - &p_zero;
        OutcomeTriple {
            p_one,
            p_zero,
            p_continue,
        }
    }
}

fn check_p(p: &Rat) -> Result<(), OracleError> {
    if !p.is_positive() || p >= &Rat::one() {
        return Err(OracleError::POutOfRange(p.to_string()));
    }
    Ok(())
}

// sum_k row[k] * p^k * (1-p)^(m-k), exactly, by integer accumulation over the
// common denominator pd^m
fn row_mass(row: &[Int], m: u64, p: &Rat) -> Rat {
    let pn = p.numer();
    let qn = p.denom() - pn;
    let len = m as usize + 1;
    assert_eq!(row.len(), len);
    let mut pk = vec![Int::one(); len];
    for k in 1..len {
        pk[k] = &pk[k - 1] * pn;
    }
    let mut qk = vec![Int::one(); len];
    for k in 1..len {
        qk[k] = &qk[k - 1] * &qn;
    }
    let num: Int = (0..len).map(|k| &row[k] * &pk[k] * &qk[len - 1 - k]).sum();
    Rat::new(num, p.denom().pow(m as u32))
}

/// Exact cumulative outcome probabilities at each checkpoint:
/// `pOne_i = sum_k A_i(k) p^k (1-p)^(m_i-k)`, `pZero` from B, continue the
/// complement.
pub fn exact_outcome_probs(table: &CountTable, p: &Rat) -> Result<Vec<OutcomeTriple>, OracleError> {
    check_p(p)?;
    Ok((0..table.tiers())
        .map(|i| {
            let m = table.checkpoints[i];
            OutcomeTriple::new(row_mass(&table.a[i], m, p), row_mass(&table.b[i], m, p))
        })
        .collect())
}

/// Transition count of the path DP, for the size cap.
pub fn enumeration_cost(table: &CountTable) -> u64 {
    let mut cost = table.checkpoints[0] + 1;
    for i in 1..table.tiers() {
        let dm = table.checkpoints[i] - table.checkpoints[i - 1];
        cost += (table.checkpoints[i - 1] + 1) * (dm + 1);
    }
    cost
}

pub const DEFAULT_ENUMERATION_CAP: u64 = 10_000_000;

/// Independent verification of the sampler's hazard semantics: forward
/// dynamic programming over ones-count paths, terminating each class with
/// probability `newA/pool` (One) and `newB/pool` (Zero) exactly as
/// `run_factory` does. Must equal `exact_outcome_probs` as rationals on any
/// consistent table.
pub fn path_enumeration_probs(
    table: &CountTable,
    p: &Rat,
    cap: u64,
) -> Result<Vec<OutcomeTriple>, OracleError> {
    check_p(p)?;
    let cost = enumeration_cost(table);
    if cost > cap {
        return Err(OracleError::TooLarge(cost, cap));
    }
    // rho[k] = reach probability at the current tier divided by
    // p^k (1-p)^(m_i - k); equals pool_i(k) when the table is consistent,
    // but is recomputed from the hazards so corruption shows up
    let mut rho: Vec<Rat> = table.pool_total[0]
        .iter()
        .map(|v| Rat::from_integer(v.clone()))
        .collect();
    let mut cum_one = Rat::zero();
    let mut cum_zero = Rat::zero();
    let mut out = Vec::with_capacity(table.tiers());
    for i in 0..table.tiers() {
        let m = table.checkpoints[i];
        let len = m as usize + 1;
        let mut one_w = vec![Rat::zero(); len];
        let mut zero_w = vec![Rat::zero(); len];
        let mut surv = vec![Rat::zero(); len];
        for k in 0..len {
            if rho[k].is_zero() {
                continue;
            }
            let pool = &table.pool_total[i][k];
            if pool.is_zero() {
                continue;
            }
            let pool = Rat::from_integer(pool.clone());
            let h_one = Rat::from_integer(table.new_a[i][k].clone()) / &pool;
            let h_zero = Rat::from_integer(table.new_b[i][k].clone()) / &pool;
            one_w[k] = &rho[k] * &h_one;
            zero_w[k] = &rho[k] * &h_zero;
            surv[k] = &rho[k] * (Rat::one() - &h_one - &h_zero);
        }
        cum_one += rat_mass(&one_w, p);
        cum_zero += rat_mass(&zero_w, p);
        out.push(OutcomeTriple::new(cum_one.clone(), cum_zero.clone()));
        if i + 1 < table.tiers() {
            let dm = table.checkpoints[i + 1] - m;
            rho = convolve_rat(&surv, dm);
        }
    }
    Ok(out)
}

// sum_k row[k] * p^k * (1-p)^(len-1-k) with rational row entries
fn rat_mass(row: &[Rat], p: &Rat) -> Rat {
    let q = Rat::one() - p;
    let mut pw = Rat::one();
    let mut terms = Vec::with_capacity(row.len());
    for r in row.iter() {
        terms.push(r * &pw);
        pw *= p;
    }
    let mut acc = Rat::zero();
    let mut qw = Rat::one();
    for k in (0..terms.len()).rev() {
        acc += &terms[k] * &qw;
        qw *= &q;
    }
    acc
}

fn convolve_rat(row: &[Rat], dm: u64) -> Vec<Rat> {
    let binom = crate::numerics::binomial_row(dm);
    let mut out = vec![Rat::zero(); row.len() + dm as usize];
    for (j, v) in row.iter().enumerate() {
        if v.is_zero() {
            continue;
        }
        for (d, b) in binom.iter().enumerate() {
            out[j + d] += v * Rat::from_integer(b.clone());
        }
    }
    out
}

/// Truncated lower bound on the expected input bits:
/// `m_1 + sum_i (m_i - m_{i-1}) * pContinue_{i-1}`. The mass still alive at
/// the last checkpoint contributes nothing here; report it alongside.
pub fn expected_bits(table: &CountTable, p: &Rat) -> Result<Rat, OracleError> {
    let triples = exact_outcome_probs(table, p)?;
    let mut e = Rat::from_integer(Int::from(table.checkpoints[0]));
    for i in 1..table.tiers() {
        let dm = table.checkpoints[i] - table.checkpoints[i - 1];
        e += Rat::from_integer(Int::from(dm)) * &triples[i - 1].p_continue;
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functions::Func;
    use crate::numerics::{parse_rat, rat, rat_int};
    use crate::tables::{build_count_table, EnvelopePair};

    fn verified(lower: Func, upper: Func, m: u64) -> EnvelopePair {
        let mut p = EnvelopePair::new(lower, upper, m);
        p.assume_verified();
        p
    }

    fn half_table(checkpoints: &[u64]) -> CountTable {
        let half = Func::Constant(rat(1, 2));
        let envs: Vec<EnvelopePair> = checkpoints
            .iter()
            .map(|&m| verified(half.clone(), half.clone(), m))
            .collect();
        build_count_table(&half, &envs).unwrap()
    }

    fn elbow_table() -> CountTable {
        let f = Func::elbow(rat_int(2), rat(1, 5)).unwrap();
        let elbows = [("0.1539", "0.985", 20u64), ("0.2912", "0.965", 21)];
        let envs: Vec<EnvelopePair> = elbows
            .iter()
            .map(|(x, y, m)| {
                let g =
                    Func::elbow_through(&parse_rat(x).unwrap(), &parse_rat(y).unwrap()).unwrap();
                verified(f.clone(), g, *m)
            })
            .collect();
        build_count_table(&f, &envs).unwrap()
    }

    #[test]
    fn half_table_triples() {
        let t = half_table(&[2, 4]);
        let triples = exact_outcome_probs(&t, &rat(1, 2)).unwrap();
        assert_eq!(triples[0].p_one, rat(1, 4));
        assert_eq!(triples[0].p_zero, rat(1, 4));
        assert_eq!(triples[0].p_continue, rat(1, 2));
        assert_eq!(triples[1].p_one, rat(7, 16));
        assert_eq!(triples[1].p_zero, rat(7, 16));
        assert_eq!(triples[1].p_continue, rat(1, 8));
    }

    #[test]
    fn triples_sum_to_one_and_monotone() {
        let t = elbow_table();
        for j in 1..20i64 {
            let p = rat(j, 20);
            let triples = exact_outcome_probs(&t, &p).unwrap();
            let mut prev: Option<OutcomeTriple> = None;
            for tr in &triples {
                assert_eq!(&tr.p_one + &tr.p_zero + &tr.p_continue, Rat::one());
                if let Some(pr) = prev {
                    assert!(tr.p_one >= pr.p_one);
                    assert!(tr.p_zero >= pr.p_zero);
                    assert!(tr.p_continue <= pr.p_continue);
                }
                prev = Some(tr.clone());
            }
        }
    }

    #[test]
    fn p_one_never_exceeds_target() {
        // floors only lose mass
        let f = Func::elbow(rat_int(2), rat(1, 5)).unwrap();
        let t = elbow_table();
        for j in [1i64, 3, 7, 11, 13, 17, 19, 23, 27, 31] {
            let p = rat(j, 32);
            let triples = exact_outcome_probs(&t, &p).unwrap();
            let fp = f.eval_exact(&p).unwrap();
            for tr in &triples {
                assert!(tr.p_one <= fp, "p={p}");
            }
        }
    }

    #[test]
    fn path_enumeration_matches_exact() {
        for t in [half_table(&[2, 4]), half_table(&[2, 4, 6]), elbow_table()] {
            for p in [rat(1, 3), rat(1, 100), rat(7, 8)] {
                let a = exact_outcome_probs(&t, &p).unwrap();
                let b = path_enumeration_probs(&t, &p, DEFAULT_ENUMERATION_CAP).unwrap();
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn mutation_breaks_equality() {
        // corrupt a raw count while leaving the derived arrays stale: the
        // closed-form route reads the raw rows, the DP route reads the
        // hazards, so they must now disagree
        let mut t = half_table(&[2, 4]);
        t.a[1][2] -= Int::one();
        let p = rat(1, 3);
        let a = exact_outcome_probs(&t, &p).unwrap();
        let b = path_enumeration_probs(&t, &p, DEFAULT_ENUMERATION_CAP).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn enumeration_cap_enforced() {
        let t = half_table(&[2, 4, 6]);
        assert!(matches!(
            path_enumeration_probs(&t, &rat(1, 3), 3),
            Err(OracleError::TooLarge(_, 3))
        ));
    }

    #[test]
    fn expected_bits_formula() {
        // single tier: always pay m_1
        let t = half_table(&[4]);
        assert_eq!(expected_bits(&t, &rat(1, 7)).unwrap(), rat_int(4));

        // two tiers: m_1 + dm * pContinue_1
        let t = half_table(&[2, 4]);
        let triples = exact_outcome_probs(&t, &rat(1, 2)).unwrap();
        let e = expected_bits(&t, &rat(1, 2)).unwrap();
        assert_eq!(e, rat_int(2) + rat_int(2) * &triples[0].p_continue);
        assert_eq!(e, rat_int(3));

        // elbow cascade at tiny p: all-zeros strings end at tier 1
        let t = elbow_table();
        let e = expected_bits(&t, &rat(1, 10_000)).unwrap();
        assert!(e < rat_int(21));
        assert!(e >= rat_int(20));
    }

    #[test]
    fn rejects_degenerate_p() {
        let t = half_table(&[2]);
        assert!(exact_outcome_probs(&t, &Rat::zero()).is_err());
        assert!(exact_outcome_probs(&t, &Rat::one()).is_err());
    }
}
