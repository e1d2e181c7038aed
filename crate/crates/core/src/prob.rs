//! Probability primitives shared by every verifier and oracle.
//!
//! Distributions are dense vectors over a small vocabulary. Joint
//! probabilities of token sub-blocks are carried in log space with an
//! absorbing zero, because products over a whole draft block underflow
//! quickly for peaked conditionals.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Tolerance for "sums to one".
pub const SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProbError {
    #[error("all-zero mass, nothing to normalize")]
    AllZeroMass,
    #[error("invalid probability entry {value} at index {index}")]
    InvalidEntry { index: usize, value: f64 },
    #[error("mass sums to {sum}, expected 1")]
    NotNormalized { sum: f64 },
    #[error("empty distribution")]
    Empty,
}

/// Index of a token in `[0, V)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TokenId(pub u32);

impl TokenId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl From<usize> for TokenId {
    fn from(i: usize) -> Self {
        TokenId(i as u32)
    }
}

impl std::fmt::Display for TokenId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Probability vector over the vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    mass: Vec<f64>,
}

impl Distribution {
    /// Validates nonnegativity and unit sum (within [`SUM_TOLERANCE`]).
    pub fn new(mass: Vec<f64>) -> Result<Self, ProbError> {
        if mass.is_empty() {
            return Err(ProbError::Empty);
        }
        for (index, &value) in mass.iter().enumerate() {
            if !value.is_finite() || value < 0.0 {
                return Err(ProbError::InvalidEntry { index, value });
            }
        }
        let sum: f64 = mass.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(ProbError::NotNormalized { sum });
        }
        Ok(Self { mass })
    }

    pub fn uniform(vocab_size: usize) -> Self {
        Self {
            mass: vec![1.0 / vocab_size as f64; vocab_size],
        }
    }

    pub fn point(vocab_size: usize, token: TokenId) -> Self {
        let mut mass = vec![0.0; vocab_size];
        mass[token.index()] = 1.0;
        Self { mass }
    }

    #[inline]
    pub fn prob(&self, token: TokenId) -> f64 {
        self.mass[token.index()]
    }

    #[inline]
    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn vocab_size(&self) -> usize {
        self.mass.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.mass
    }

    /// First index of the largest entry.
    pub fn argmax(&self) -> TokenId {
        let mut best = 0;
        for (i, &m) in self.mass.iter().enumerate() {
            if m > self.mass[best] {
                best = i;
            }
        }
        TokenId::from(best)
    }
}

/// Rescales a nonnegative vector to unit sum.
pub fn normalize(raw: &[f64]) -> Result<Distribution, ProbError> {
    if raw.is_empty() {
        return Err(ProbError::Empty);
    }
    for (index, &value) in raw.iter().enumerate() {
        if !value.is_finite() || value < 0.0 {
            return Err(ProbError::InvalidEntry { index, value });
        }
    }
    let sum: f64 = raw.iter().sum();
    if sum <= 0.0 {
        return Err(ProbError::AllZeroMass);
    }
    Ok(Distribution {
        mass: raw.iter().map(|&v| v / sum).collect(),
    })
}

/// `norm(max{q - p, 0})`, the token-level rejection residual.
pub fn residual_sd(p: &Distribution, q: &Distribution) -> Result<Distribution, ProbError> {
    let raw: Vec<f64> = p
        .mass
        .iter()
        .zip(&q.mass)
        .map(|(&pi, &qi)| (qi - pi).max(0.0))
        .collect();
    normalize(&raw)
}

/// Total variation distance, `(1/2) Σ |a - b|`.
pub fn tv_distance(a: &Distribution, b: &Distribution) -> f64 {
    0.5 * a
        .mass
        .iter()
        .zip(&b.mass)
        .map(|(x, y)| (x - y).abs())
        .sum::<f64>()
}

/// Inverse-CDF lookup for a given uniform draw `eta ∈ [0, 1)`.
///
/// Never returns a zero-mass token; rounding dust past the last
/// cumulative boundary maps to the last positive entry.
pub fn sample_at(d: &Distribution, eta: f64) -> TokenId {
    let mut cum = 0.0;
    let mut last_positive = 0;
    for (i, &m) in d.mass.iter().enumerate() {
        if m > 0.0 {
            cum += m;
            last_positive = i;
            if eta < cum {
                return TokenId::from(i);
            }
        }
    }
    TokenId::from(last_positive)
}

pub fn sample(d: &Distribution, rng: &mut RandomSource) -> TokenId {
    sample_at(d, rng.uniform())
}

/// Natural-log probability with `-inf` as the absorbing zero marker.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct LogProb(f64);

impl LogProb {
    pub const ZERO: LogProb = LogProb(f64::NEG_INFINITY);
    pub const ONE: LogProb = LogProb(0.0);

    pub fn from_prob(p: f64) -> Self {
        if p > 0.0 {
            LogProb(p.ln())
        } else {
            Self::ZERO
        }
    }

    #[inline]
    pub fn is_zero(self) -> bool {
        self.0 == f64::NEG_INFINITY
    }

    #[inline]
    pub fn ln(self) -> f64 {
        self.0
    }

    #[inline]
    pub fn prob(self) -> f64 {
        if self.is_zero() {
            0.0
        } else {
            self.0.exp()
        }
    }

    /// Product of probabilities; zero is absorbing.
    #[inline]
    pub fn times(self, other: LogProb) -> LogProb {
        if self.is_zero() || other.is_zero() {
            Self::ZERO
        } else {
            LogProb(self.0 + other.0)
        }
    }
}

/// Joint draft/target probabilities of a token sub-block, relative to
/// the prefix the current decoding iteration started from.
#[derive(Debug, Clone, PartialEq)]
pub struct PrefixJoint {
    pub log_p: LogProb,
    pub log_q: LogProb,
    pub tokens: Vec<TokenId>,
}

impl Default for PrefixJoint {
    fn default() -> Self {
        Self::empty()
    }
}

impl PrefixJoint {
    pub fn empty() -> Self {
        Self {
            log_p: LogProb::ONE,
            log_q: LogProb::ONE,
            tokens: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn p(&self) -> f64 {
        self.log_p.prob()
    }

    pub fn q(&self) -> f64 {
        self.log_q.prob()
    }

    /// `p/q` computed as `exp(log_p - log_q)`; `q = 0` gives `+inf`.
    pub fn ratio(&self) -> f64 {
        ratio_of(self.log_p, self.log_q)
    }

    /// `min{p/q, 1}`.
    pub fn capped_ratio(&self) -> f64 {
        self.ratio().min(1.0)
    }

    pub fn extended(&self, next: TokenId, p_cond: &Distribution, q_cond: &Distribution) -> Self {
        extend_joint(self, next, p_cond, q_cond)
    }
}

/// `p/q` from log values with the measure-zero conventions used throughout:
/// `q = 0` is `+inf` so that `min{ratio, 1} = 1`.
#[inline]
pub fn ratio_of(log_p: LogProb, log_q: LogProb) -> f64 {
    if log_q.is_zero() {
        f64::INFINITY
    } else if log_p.is_zero() {
        0.0
    } else {
        (log_p.ln() - log_q.ln()).exp().max(0.0)
    }
}

pub fn extend_joint(
    j: &PrefixJoint,
    next: TokenId,
    p_cond: &Distribution,
    q_cond: &Distribution,
) -> PrefixJoint {
    let mut tokens = Vec::with_capacity(j.tokens.len() + 1);
    tokens.extend_from_slice(&j.tokens);
    tokens.push(next);
    PrefixJoint {
        log_p: j.log_p.times(LogProb::from_prob(p_cond.prob(next))),
        log_q: j.log_q.times(LogProb::from_prob(q_cond.prob(next))),
        tokens,
    }
}

/// `1 - (1 - x)^k` for `x ∈ [0, 1]`, accurate for small `x`.
#[inline]
pub fn one_minus_pow_complement(x: f64, k: u32) -> f64 {
    let x = x.clamp(0.0, 1.0);
    if x >= 1.0 {
        return 1.0;
    }
    -(f64::from(k) * (-x).ln_1p()).exp_m1()
}

/// Seeded uniform stream. ChaCha8 keeps draws identical across platforms.
#[derive(Debug, Clone)]
pub struct RandomSource {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RandomSource {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Child stream for a `(master, path...)` cell: SplitMix64 folded over
    /// the path components.
    pub fn derive(master: u64, path: &[u64]) -> Self {
        let mut h = splitmix64(master);
        for &c in path {
            h = splitmix64(h ^ splitmix64(c.wrapping_add(0x632b_e59b_d9b4_e019)));
        }
        Self::new(h)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn d(v: &[f64]) -> Distribution {
        Distribution::new(v.to_vec()).unwrap()
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize(&[0.25, 0.75]).unwrap().mass(), &[0.25, 0.75]);
        assert_eq!(normalize(&[2.0, 2.0]).unwrap().mass(), &[0.5, 0.5]);
        assert_eq!(normalize(&[0.0, 0.0]), Err(ProbError::AllZeroMass));
        assert!(matches!(
            normalize(&[0.5, -0.1]),
            Err(ProbError::InvalidEntry { index: 1, .. })
        ));
    }

    #[test]
    fn new_rejects_bad_sums() {
        assert!(matches!(
            Distribution::new(vec![0.5, 0.6]),
            Err(ProbError::NotNormalized { .. })
        ));
        assert!(Distribution::new(vec![0.5, 0.5 + 5e-10]).is_ok());
    }

    #[test]
    fn residual_sd_examples() {
        assert_eq!(residual_sd(&d(&[1.0, 0.0]), &d(&[0.0, 1.0])).unwrap().mass(), &[0.0, 1.0]);
        assert_eq!(residual_sd(&d(&[0.5, 0.5]), &d(&[0.9, 0.1])).unwrap().mass(), &[1.0, 0.0]);
        assert_eq!(
            residual_sd(&d(&[0.5, 0.5]), &d(&[0.5, 0.5])),
            Err(ProbError::AllZeroMass)
        );
    }

    #[test]
    fn extend_joint_examples() {
        let p = d(&[0.5, 0.5]);
        let q = d(&[0.8, 0.2]);
        let a = TokenId(0);
        let j1 = extend_joint(&PrefixJoint::empty(), a, &p, &q);
        assert!((j1.p() - 0.5).abs() < 1e-15 && (j1.q() - 0.8).abs() < 1e-15);
        let j2 = extend_joint(&j1, a, &p, &q);
        assert!((j2.p() - 0.25).abs() < 1e-15 && (j2.q() - 0.64).abs() < 1e-15);
        let j3 = extend_joint(&j2, a, &p, &d(&[0.0, 1.0]));
        assert!(j3.log_q.is_zero());
        assert_eq!(j3.ratio(), f64::INFINITY);
        assert_eq!(j3.capped_ratio(), 1.0);
        // zero stays zero
        let j4 = extend_joint(&j3, TokenId(1), &p, &q);
        assert!(j4.log_q.is_zero());
        assert_eq!(j4.tokens.len(), 4);
    }

    #[test]
    fn sample_examples() {
        let point = d(&[1.0, 0.0]);
        for eta in [0.0, 0.3, 0.999_999] {
            assert_eq!(sample_at(&point, eta), TokenId(0));
        }
        let half = d(&[0.5, 0.5]);
        assert_eq!(sample_at(&half, 0.25), TokenId(0));
        assert_eq!(sample_at(&half, 0.75), TokenId(1));
        // dust past the final boundary never lands on a zero entry
        assert_eq!(sample_at(&d(&[0.3, 0.7, 0.0]), 1.0), TokenId(1));
    }

    #[test]
    fn sample_frequency_matches_mass() {
        let dist = d(&[0.2, 0.8]);
        let mut rng = RandomSource::new(7);
        let n = 100_000;
        let ones = (0..n).filter(|_| sample(&dist, &mut rng) == TokenId(1)).count();
        let freq = ones as f64 / n as f64;
        // binomial sd = sqrt(0.16 / 1e5) ≈ 0.00126, so ±0.005 is about 4 sd
        assert!((freq - 0.8).abs() < 0.005, "freq {freq}");
    }

    #[test]
    fn tv_examples() {
        assert_eq!(tv_distance(&d(&[0.3, 0.7]), &d(&[0.3, 0.7])), 0.0);
        assert_eq!(tv_distance(&d(&[1.0, 0.0]), &d(&[0.0, 1.0])), 1.0);
        assert_eq!(tv_distance(&d(&[0.5, 0.5]), &d(&[1.0, 0.0])), 0.5);
    }

    #[test]
    fn seeded_streams_reproduce() {
        let mut a = RandomSource::new(42);
        let mut b = RandomSource::new(42);
        for _ in 0..100 {
            assert_eq!(a.uniform().to_bits(), b.uniform().to_bits());
        }
        let mut c = RandomSource::derive(1, &[2, 3]);
        let mut e = RandomSource::derive(1, &[2, 3]);
        assert_eq!(c.seed(), e.seed());
        assert_eq!(c.uniform().to_bits(), e.uniform().to_bits());
        assert_ne!(RandomSource::derive(1, &[2, 3]).seed(), RandomSource::derive(1, &[3, 2]).seed());
    }

    #[test]
    fn complement_power() {
        assert!((one_minus_pow_complement(0.25, 2) - 0.4375).abs() < 1e-15);
        assert_eq!(one_minus_pow_complement(1.0, 3), 1.0);
        assert_eq!(one_minus_pow_complement(0.0, 3), 0.0);
        assert!((one_minus_pow_complement(1e-300, 2) - 2e-300).abs() < 1e-310);
    }

    fn weights(len: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..10.0, len).prop_filter("nonzero", |v| v.iter().sum::<f64>() > 1e-6)
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(v in weights(5)) {
            let once = normalize(&v).unwrap();
            let twice = normalize(once.mass()).unwrap();
            for (a, b) in once.mass().iter().zip(twice.mass()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn residual_vanishes_where_draft_dominates(a in weights(4), b in weights(4)) {
            let p = normalize(&a).unwrap();
            let q = normalize(&b).unwrap();
            if let Ok(r) = residual_sd(&p, &q) {
                for i in 0..4 {
                    if p.mass()[i] >= q.mass()[i] {
                        prop_assert_eq!(r.mass()[i], 0.0);
                    }
                }
            }
        }

        #[test]
        fn joint_matches_direct_product(
            rows in prop::collection::vec((weights(3), weights(3), 0usize..3), 1..12)
        ) {
            let mut j = PrefixJoint::empty();
            let (mut dp, mut dq) = (1.0f64, 1.0f64);
            for (pw, qw, t) in &rows {
                let p = normalize(pw).unwrap();
                let q = normalize(qw).unwrap();
                let t = TokenId::from(*t);
                j = extend_joint(&j, t, &p, &q);
                dp *= p.prob(t);
                dq *= q.prob(t);
            }
            for (lhs, rhs) in [(j.p(), dp), (j.q(), dq)] {
                if rhs == 0.0 {
                    prop_assert_eq!(lhs, 0.0);
                } else {
                    prop_assert!(((lhs - rhs) / rhs).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn tv_is_a_metric(a in weights(4), b in weights(4), c in weights(4)) {
            let (a, b, c) = (normalize(&a).unwrap(), normalize(&b).unwrap(), normalize(&c).unwrap());
            prop_assert!((tv_distance(&a, &b) - tv_distance(&b, &a)).abs() < 1e-15);
            prop_assert!(tv_distance(&a, &c) <= tv_distance(&a, &b) + tv_distance(&b, &c) + 1e-12);
            prop_assert!(tv_distance(&a, &b) <= 1.0 + 1e-12);
        }
    }
}
