//! Samplers: exact Bernoulli bit sources, the von Neumann extractor, the
//! dyadic uniform-threshold sampler, and the factory runner that turns input
//! bits plus a count table into exact Bernoulli(f(p)) outputs.

use crate::numerics::{Int, Rat};
use crate::tables::CountTable;
use num::bigint::{BigUint, RandBigInt};
use num::{One, Signed, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::io::Read;

/// Terminal state of one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    One,
    Zero,
    /// The source could not supply a full checkpoint (stream end or bit cap).
    BitsExhausted,
    /// Ran off the end of the planned cascade. Truncating to a forced answer
    /// would bias the output, so the run fails loudly instead.
    GluttonyLimit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FactoryOutcome {
    pub result: Outcome,
    pub bits_used: u64,
    /// Tier index (0-based) at which the run terminated, for One/Zero.
    pub tier_terminated: Option<usize>,
}

/// A stream of input coin flips with exact bit accounting.
pub trait BitSource {
    /// Next bit, or None when the stream is exhausted.
    fn next_bit(&mut self) -> Option<bool>;
    fn bits_consumed(&self) -> u64;
}

/// Seeded Bernoulli(p) source: every bit is an exact comparison of a
/// uniform integer in [0, den) against the numerator — no floating point.
pub struct SimulatedSource {
    num: Int,
    den: Int,
    // fast path when the denominator fits a machine word
    small: Option<(u64, u64)>,
    rng: ChaCha8Rng,
    consumed: u64,
}

impl SimulatedSource {
    pub fn new(p: &Rat, seed: u64) -> Self {
        Self::with_rng(p, ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn with_rng(p: &Rat, rng: ChaCha8Rng) -> Self {
        assert!(!p.is_negative() && p <= &Rat::one());
        let small = match (p.numer().to_u64(), p.denom().to_u64()) {
            (Some(n), Some(d)) => Some((n, d)),
            _ => None,
        };
        SimulatedSource {
            num: p.numer().clone(),
            den: p.denom().clone(),
            small,
            rng,
            consumed: 0,
        }
    }
}

impl BitSource for SimulatedSource {
    fn next_bit(&mut self) -> Option<bool> {
        self.consumed += 1;
        if let Some((n, d)) = self.small {
            return Some(self.rng.gen_range(0..d) < n);
        }
        let u = self.rng.gen_biguint_below(self.den.magnitude());
        Some(Int::from(u) < self.num)
    }

    fn bits_consumed(&self) -> u64 {
        self.consumed
    }
}

/// Bits read most-significant-bit-first from a byte stream.
pub struct StreamSource<R: Read> {
    reader: R,
    current: u8,
    remaining: u8,
    consumed: u64,
}

impl<R: Read> StreamSource<R> {
    pub fn new(reader: R) -> Self {
        StreamSource {
            reader,
            current: 0,
            remaining: 0,
            consumed: 0,
        }
    }
}

impl<R: Read> BitSource for StreamSource<R> {
    fn next_bit(&mut self) -> Option<bool> {
        if self.remaining == 0 {
            let mut buf = [0u8; 1];
            if self.reader.read(&mut buf).ok()? != 1 {
                return None;
            }
            self.current = buf[0];
            self.remaining = 8;
        }
        self.remaining -= 1;
        self.consumed += 1;
        Some((self.current >> self.remaining) & 1 == 1)
    }

    fn bits_consumed(&self) -> u64 {
        self.consumed
    }
}

/// Fixed bit list, mostly for tests and worked examples.
pub struct VecSource {
    bits: Vec<bool>,
    pos: usize,
}

impl VecSource {
    pub fn new(bits: Vec<bool>) -> Self {
        VecSource { bits, pos: 0 }
    }

    pub fn from_str01(s: &str) -> Self {
        VecSource::new(s.chars().filter(|c| *c == '0' || *c == '1').map(|c| c == '1').collect())
    }
}

impl BitSource for VecSource {
    fn next_bit(&mut self) -> Option<bool> {
        let b = *self.bits.get(self.pos)?;
        self.pos += 1;
        Some(b)
    }

    fn bits_consumed(&self) -> u64 {
        self.pos as u64
    }
}

/// Auxiliary randomness for the per-checkpoint trinomial draw: uniform
/// integers in [0, n) with no modulo bias (rejection sampling), separate
/// from the input coin stream.
pub struct AuxRandom {
    rng: ChaCha8Rng,
}

impl AuxRandom {
    pub fn new(seed: u64) -> Self {
        AuxRandom {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn with_rng(rng: ChaCha8Rng) -> Self {
        AuxRandom { rng }
    }

    /// Uniform in [0, n), exactly.
    pub fn uniform_below(&mut self, n: &Int) -> Int {
        assert!(n.is_positive());
        if let Some(small) = n.to_u64() {
            return Int::from(self.rng.gen_range(0..small));
        }
        Int::from(self.rng.gen_biguint_below(n.magnitude()))
    }
}

/// Fair-coin extraction: draw bit pairs until they differ; 10 means One,
/// 01 means Zero. Expected input cost 1/(p(1-p)) bits.
pub fn von_neumann(src: &mut dyn BitSource, limit: u64) -> FactoryOutcome {
    assert!(limit >= 2);
    let start = src.bits_consumed();
    loop {
        if src.bits_consumed() - start + 2 > limit {
            return FactoryOutcome {
                result: Outcome::BitsExhausted,
                bits_used: src.bits_consumed() - start,
                tier_terminated: None,
            };
        }
        let (a, b) = match (src.next_bit(), src.next_bit()) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return FactoryOutcome {
                    result: Outcome::BitsExhausted,
                    bits_used: src.bits_consumed() - start,
                    tier_terminated: None,
                }
            }
        };
        if a != b {
            return FactoryOutcome {
                result: if a { Outcome::One } else { Outcome::Zero },
                bits_used: src.bits_consumed() - start,
                tier_terminated: None,
            };
        }
    }
}

/// Compare a uniform variable built bit-by-bit against a fixed threshold:
/// emit One as soon as U is certainly below `p_out`, Zero as soon as it is
/// certainly above. Expects fair input bits.
pub fn uniform_threshold(src: &mut dyn BitSource, p_out: &Rat, limit: u64) -> FactoryOutcome {
    assert!(
        p_out.is_positive() && p_out < &Rat::one(),
        "threshold must be inside (0,1)"
    );
    let start = src.bits_consumed();
    // U_n = u / 2^n; One when U_n + 2^-n < p, Zero when U_n > p
    let mut u = BigUint::zero();
    let mut n = 0u64;
    while src.bits_consumed() - start < limit {
        let bit = match src.next_bit() {
            Some(b) => b,
            None => break,
        };
        u <<= 1;
        if bit {
            u += BigUint::one();
        }
        n += 1;
        // compare u/2^n and (u+1)/2^n against p_num/p_den
        let lhs = Int::from(u.clone()) * p_out.denom();
        let rhs = p_out.numer() << n;
        if lhs > rhs {
            return FactoryOutcome {
                result: Outcome::Zero,
                bits_used: src.bits_consumed() - start,
                tier_terminated: None,
            };
        }
        if lhs + p_out.denom() < rhs {
            return FactoryOutcome {
                result: Outcome::One,
                bits_used: src.bits_consumed() - start,
                tier_terminated: None,
            };
        }
    }
    FactoryOutcome {
        result: Outcome::BitsExhausted,
        bits_used: src.bits_consumed() - start,
        tier_terminated: None,
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RunLimits {
    /// Refuse to start a tier that would push past this many input bits.
    pub max_bits: Option<u64>,
}

impl Default for RunLimits {
    fn default() -> Self {
        RunLimits { max_bits: None }
    }
}

/// One factory run. At tier i, draws the additional input bits up to m_i,
/// counts ones, and resolves the trinomial (One, Zero, continue) with
/// weights (newA, newB, pool - newA - newB) by one exact uniform draw.
/// Past the last tier the run ends in GluttonyLimit: stopping early with a
/// forced answer would bias the output.
pub fn run_factory(
    table: &CountTable,
    src: &mut dyn BitSource,
    aux: &mut AuxRandom,
    limits: RunLimits,
) -> FactoryOutcome {
    let start = src.bits_consumed();
    let mut k: usize = 0;
    let mut drawn: u64 = 0;
    for tier in 0..table.tiers() {
        let m = table.checkpoints[tier];
        if let Some(cap) = limits.max_bits {
            if m > cap {
                return FactoryOutcome {
                    result: Outcome::BitsExhausted,
                    bits_used: src.bits_consumed() - start,
                    tier_terminated: None,
                };
            }
        }
        while drawn < m {
            match src.next_bit() {
                Some(true) => k += 1,
                Some(false) => {}
                None => {
                    return FactoryOutcome {
                        result: Outcome::BitsExhausted,
                        bits_used: src.bits_consumed() - start,
                        tier_terminated: None,
                    }
                }
            }
            drawn += 1;
        }
        let pool = &table.pool_total[tier][k];
        // every reachable class has pool >= 1: the run got here along a
        // surviving prefix, so its class is counted
        assert!(pool.is_positive(), "unreachable class: tier {tier}, k {k}");
        let new_a = &table.new_a[tier][k];
        let new_b = &table.new_b[tier][k];
        let u = aux.uniform_below(pool);
        if &u < new_a {
            return FactoryOutcome {
                result: Outcome::One,
                bits_used: drawn,
                tier_terminated: Some(tier),
            };
        }
        if u < new_a + new_b {
            return FactoryOutcome {
                result: Outcome::Zero,
                bits_used: drawn,
                tier_terminated: Some(tier),
            };
        }
    }
    FactoryOutcome {
        result: Outcome::GluttonyLimit,
        bits_used: drawn,
        tier_terminated: None,
    }
}

/// Aggregate statistics over seeded trials. Bit statistics cover terminated
/// (One/Zero) runs; non-terminating runs are counted separately.
#[derive(Debug, Clone)]
pub struct SampleSummary {
    pub trials: u64,
    pub ones: u64,
    pub zeros: u64,
    pub gluttony: u64,
    pub exhausted: u64,
    pub min_bits: Option<u64>,
    pub max_bits: Option<u64>,
    pub mean_bits: f64,
    pub sd_bits: f64,
    /// Terminations per tier index.
    pub tier_histogram: Vec<u64>,
}

impl SampleSummary {
    pub fn freq_one(&self) -> f64 {
        let terminated = self.ones + self.zeros;
        if terminated == 0 {
            return f64::NAN;
        }
        self.ones as f64 / terminated as f64
    }
}

/// Run `trials` independent factory executions at input probability `p`.
/// Reproducible: trial t uses ChaCha streams (2t, 2t+1) of the given seed,
/// so results are independent of thread scheduling.
pub fn sample_many(table: &CountTable, p: &Rat, trials: u64, seed: u64) -> SampleSummary {
    let outcomes: Vec<FactoryOutcome> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut src_rng = ChaCha8Rng::seed_from_u64(seed);
            src_rng.set_stream(2 * t);
            let mut aux_rng = ChaCha8Rng::seed_from_u64(seed);
            aux_rng.set_stream(2 * t + 1);
            let mut src = SimulatedSource::with_rng(p, src_rng);
            let mut aux = AuxRandom::with_rng(aux_rng);
            run_factory(table, &mut src, &mut aux, RunLimits::default())
        })
        .collect();

    let mut s = SampleSummary {
        trials,
        ones: 0,
        zeros: 0,
        gluttony: 0,
        exhausted: 0,
        min_bits: None,
        max_bits: None,
        mean_bits: f64::NAN,
        sd_bits: f64::NAN,
        tier_histogram: vec![0; table.tiers()],
    };
    let mut sum = 0.0f64;
    let mut sum_sq = 0.0f64;
    for o in &outcomes {
        match o.result {
            Outcome::One => s.ones += 1,
            Outcome::Zero => s.zeros += 1,
            Outcome::GluttonyLimit => s.gluttony += 1,
            Outcome::BitsExhausted => s.exhausted += 1,
        }
        if let Some(t) = o.tier_terminated {
            s.tier_histogram[t] += 1;
            let b = o.bits_used as f64;
            sum += b;
            sum_sq += b * b;
            s.min_bits = Some(s.min_bits.map_or(o.bits_used, |m| m.min(o.bits_used)));
            s.max_bits = Some(s.max_bits.map_or(o.bits_used, |m| m.max(o.bits_used)));
        }
    }
    let n = (s.ones + s.zeros) as f64;
    if n > 0.0 {
        s.mean_bits = sum / n;
        let var = (sum_sq / n - s.mean_bits * s.mean_bits).max(0.0);
        s.sd_bits = var.sqrt();
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functions::Func;
    use crate::numerics::{rat, rat_int};
    use crate::tables::{build_count_table, EnvelopePair};

    fn half_table() -> CountTable {
        let half = Func::Constant(rat(1, 2));
        let envs: Vec<EnvelopePair> = [2u64, 4]
            .iter()
            .map(|&m| {
                let mut e = EnvelopePair::new(half.clone(), half.clone(), m);
                e.assume_verified();
                e
            })
            .collect();
        build_count_table(&half, &envs).unwrap()
    }

    #[test]
    fn von_neumann_worked_examples() {
        let mut src = VecSource::from_str01("0010");
        let o = von_neumann(&mut src, 100);
        assert_eq!(o.result, Outcome::One);
        assert_eq!(o.bits_used, 4);

        let mut src = VecSource::from_str01("01");
        let o = von_neumann(&mut src, 100);
        assert_eq!(o.result, Outcome::Zero);
        assert_eq!(o.bits_used, 2);

        let mut src = VecSource::from_str01("0000");
        let o = von_neumann(&mut src, 4);
        assert_eq!(o.result, Outcome::BitsExhausted);
    }

    #[test]
    fn von_neumann_mean_bits_fair_coin() {
        // expected bits 1/(p(1-p)) = 4 at p = 1/2
        let mut total = 0u64;
        let runs = 20_000u64;
        for t in 0..runs {
            let mut src = SimulatedSource::new(&rat(1, 2), 977 + t);
            let o = von_neumann(&mut src, 10_000);
            assert!(matches!(o.result, Outcome::One | Outcome::Zero));
            total += o.bits_used;
        }
        let mean = total as f64 / runs as f64;
        assert!((3.7..4.3).contains(&mean), "mean={mean}");
    }

    #[test]
    fn uniform_threshold_worked_examples() {
        // p = 3/4, bit 0: U_1 = 0 and 0 + 1/2 < 3/4 decides immediately
        let mut src = VecSource::from_str01("0");
        let o = uniform_threshold(&mut src, &rat(3, 4), 100);
        assert_eq!(o.result, Outcome::One);
        assert_eq!(o.bits_used, 1);

        // p = 7/8, bits 10: undecided after 1, then 1/2 + 1/4 < 7/8
        let mut src = VecSource::from_str01("10");
        let o = uniform_threshold(&mut src, &rat(7, 8), 100);
        assert_eq!(o.result, Outcome::One);
        assert_eq!(o.bits_used, 2);

        // p = 3/4, bits 11: U_2 = 3/4, undecided when the stream ends
        let mut src = VecSource::from_str01("11");
        let o = uniform_threshold(&mut src, &rat(3, 4), 100);
        assert_eq!(o.result, Outcome::BitsExhausted);
        assert_eq!(o.bits_used, 2);

        // p = 1/2, bits 11: U_2 = 3/4 > 1/2
        let mut src = VecSource::from_str01("11");
        let o = uniform_threshold(&mut src, &rat(1, 2), 100);
        assert_eq!(o.result, Outcome::Zero);
        assert_eq!(o.bits_used, 2);
    }

    #[test]
    fn uniform_threshold_frequency() {
        let p_out = rat(3, 8);
        let mut ones = 0u64;
        let runs = 20_000u64;
        for t in 0..runs {
            let mut src = SimulatedSource::new(&rat(1, 2), 31_000 + t);
            match uniform_threshold(&mut src, &p_out, 10_000).result {
                Outcome::One => ones += 1,
                Outcome::Zero => {}
                other => panic!("unexpected {other:?}"),
            }
        }
        let freq = ones as f64 / runs as f64;
        // 4 sigma around 0.375
        assert!((freq - 0.375).abs() < 4.0 * (0.375f64 * 0.625 / runs as f64).sqrt());
    }

    #[test]
    fn run_factory_linear_stream() {
        // k=1 at tier 1: newA = 1, newB = 1, pool = 2 — terminates either way
        let t = half_table();
        let mut src = VecSource::from_str01("10");
        let mut aux = AuxRandom::new(7);
        let o = run_factory(&t, &mut src, &mut aux, RunLimits::default());
        assert!(matches!(o.result, Outcome::One | Outcome::Zero));
        assert_eq!(o.bits_used, 2);
        assert_eq!(o.tier_terminated, Some(0));
    }

    #[test]
    fn run_factory_elbow_all_zeros() {
        let f = Func::elbow(rat_int(2), rat(1, 5)).unwrap();
        let mut pair = EnvelopePair::new(f.clone(), f.clone(), 20);
        pair.assume_verified();
        let t = build_count_table(&f, &[pair]).unwrap();
        let mut src = VecSource::new(vec![false; 20]);
        let mut aux = AuxRandom::new(0);
        let o = run_factory(&t, &mut src, &mut aux, RunLimits::default());
        assert_eq!(o.result, Outcome::Zero);
        assert_eq!(o.bits_used, 20);
        assert_eq!(o.tier_terminated, Some(0));
    }

    #[test]
    fn run_factory_gluttony_and_caps() {
        let t = half_table();
        // the continuing classes at (2,4) are all-zeros / all-ones
        let mut src = VecSource::new(vec![true; 4]);
        let mut aux = AuxRandom::new(1);
        let o = run_factory(&t, &mut src, &mut aux, RunLimits::default());
        assert_eq!(o.result, Outcome::GluttonyLimit);
        assert_eq!(o.bits_used, 4);

        let mut src = VecSource::new(vec![true; 4]);
        let mut aux = AuxRandom::new(1);
        let o = run_factory(&t, &mut src, &mut aux, RunLimits { max_bits: Some(3) });
        assert_eq!(o.result, Outcome::BitsExhausted);

        let mut src = VecSource::new(vec![true; 1]);
        let mut aux = AuxRandom::new(1);
        let o = run_factory(&t, &mut src, &mut aux, RunLimits::default());
        assert_eq!(o.result, Outcome::BitsExhausted);
    }

    #[test]
    fn sample_many_reproducible_and_conserving() {
        let t = half_table();
        let s1 = sample_many(&t, &rat(1, 3), 5_000, 42);
        let s2 = sample_many(&t, &rat(1, 3), 5_000, 42);
        assert_eq!(s1.ones, s2.ones);
        assert_eq!(s1.zeros, s2.zeros);
        assert_eq!(s1.min_bits, s2.min_bits);
        assert_eq!(
            s1.ones + s1.zeros + s1.gluttony + s1.exhausted,
            s1.trials
        );
        // bits accounting: every terminated run pays exactly a checkpoint
        assert_eq!(s1.min_bits, Some(2));
        assert_eq!(s1.max_bits, Some(4));

        let s3 = sample_many(&t, &rat(1, 3), 5_000, 43);
        assert!(s3.ones != s1.ones || s3.zeros != s1.zeros);
    }

    #[test]
    fn sample_many_matches_oracle_frequency() {
        let t = half_table();
        let p = rat(1, 3);
        let triples = crate::oracle::exact_outcome_probs(&t, &p).unwrap();
        let last = triples.last().unwrap();
        // freq among terminated runs vs pOne/(pOne+pZero)
        let expect = {
            let num = &last.p_one;
            let den = &last.p_one + &last.p_zero;
            let v = num / den;
            v.numer().to_f64().unwrap() / v.denom().to_f64().unwrap()
        };
        let s = sample_many(&t, &p, 50_000, 7);
        let sigma = (expect * (1.0 - expect) / (s.ones + s.zeros) as f64).sqrt();
        assert!(
            (s.freq_one() - expect).abs() < 4.0 * sigma,
            "freq={} expect={expect}",
            s.freq_one()
        );
    }

    #[test]
    fn stream_source_msb_first() {
        let bytes: &[u8] = &[0b1010_0000, 0b0000_0001];
        let mut src = StreamSource::new(bytes);
        let bits: Vec<bool> = (0..16).map(|_| src.next_bit().unwrap()).collect();
        assert!(bits[0] && !bits[1] && bits[2] && !bits[3]);
        assert!(bits[15]);
        assert!(!bits[14]);
        assert_eq!(src.next_bit(), None);
        assert_eq!(src.bits_consumed(), 16);
    }

    #[test]
    fn aux_uniform_below_big() {
        let mut aux = AuxRandom::new(5);
        let n = Int::from(u128::MAX) * Int::from(u128::MAX);
        for _ in 0..100 {
            let u = aux.uniform_below(&n);
            assert!(!u.is_negative() && u < n);
        }
        // small path exercises rejection-free machine range
        let mut counts = [0u64; 3];
        for _ in 0..30_000 {
            let u = aux.uniform_below(&Int::from(3)).to_u64().unwrap();
            counts[u as usize] += 1;
        }
        for c in counts {
            assert!((c as f64 - 10_000.0).abs() < 500.0, "{counts:?}");
        }
    }
}
