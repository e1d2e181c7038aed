use super::modify::{distribution_modification, ModificationKind, ModifiedTarget};
use super::{base_counters, row_joints, DraftSet, TargetScores, VerifyOutcome, DENOM_EPS};
use crate::prob::{normalize, sample, Distribution, PrefixJoint, ProbError, RandomSource, TokenId};

/// Running target/draft likelihood ratio along one draft row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GbvChainState {
    pub nu: f64,
    pub position: usize,
}

impl Default for GbvChainState {
    fn default() -> Self {
        Self { nu: 1.0, position: 0 }
    }
}

impl GbvChainState {
    pub fn start() -> Self {
        Self::default()
    }

    /// `ν_{i+1} = ν_i · q(x) / p(x)`, without clamping.
    pub fn advance(self, x: TokenId, p_cond: &Distribution, q_cond: &Distribution) -> Self {
        let px = p_cond.prob(x);
        let nu = if px > 0.0 {
            self.nu * q_cond.prob(x) / px
        } else {
            f64::INFINITY
        };
        Self {
            nu,
            position: self.position + 1,
        }
    }
}

/// Acceptance probability of the sub-block ending at `chain.position`.
///
/// Proper sub-blocks use the mass ratio `Σ max{νq - p, 0} / Σ max{p - νq, 0}`
/// of the next-token conditionals; the full block uses `min{ν_L, 1}`.
pub fn gbv_accept_prob(
    joint: &PrefixJoint,
    p_next: &Distribution,
    q_next: &Distribution,
    chain: GbvChainState,
    at_end: bool,
) -> f64 {
    if joint.log_q.is_zero() {
        return 0.0;
    }
    let nu = chain.nu;
    if at_end {
        return nu.min(1.0);
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (&p, &q) in p_next.mass().iter().zip(q_next.mass()) {
        let d = nu * q - p;
        if d > 0.0 {
            num += d;
        } else {
            den -= d;
        }
    }
    if den < DENOM_EPS {
        return 1.0;
    }
    (num / den).clamp(0.0, 1.0)
}

/// `norm(max{ν q - p, 0})`; an infinite ν degenerates to `q`.
pub fn gbv_residual(nu: f64, p: &Distribution, q: &Distribution) -> Result<Distribution, ProbError> {
    if nu.is_infinite() {
        return Ok(q.clone());
    }
    let raw: Vec<f64> = p
        .mass()
        .iter()
        .zip(q.mass())
        .map(|(&pi, &qi)| (nu * qi - pi).max(0.0))
        .collect();
    normalize(&raw)
}

/// Block verification of row 0: every sub-block gets its own uniform draw,
/// the longest accepted one wins.
pub fn verify_gbv(drafts: &DraftSet, scores: &TargetScores, rng: &mut RandomSource) -> (VerifyOutcome, ModifiedTarget) {
    let l = drafts.l();
    let row = drafts.row(0);
    let joints = row_joints(drafts, scores, 0);
    let mut counters = base_counters(&drafts.single_row(0));

    let mut chain = GbvChainState::start();
    let mut nus = vec![1.0];
    let mut tau = 0;
    for i in 1..=l {
        chain = chain.advance(row[i - 1], drafts.cond(0, i - 1), scores.cond(0, i - 1));
        nus.push(chain.nu);
        let at_end = i == l;
        let alpha = if at_end {
            gbv_accept_prob(&joints[i], drafts.cond(0, i - 1), scores.cond(0, i - 1), chain, true)
        } else {
            counters.vocab_scans += 1;
            gbv_accept_prob(&joints[i], drafts.cond(0, i), scores.cond(0, i), chain, false)
        };
        counters.eta_draws += 1;
        if rng.uniform() < alpha {
            tau = i;
        }
    }

    let kind = ModificationKind::Gbv;
    let (y, plan) = if tau == l {
        let y = sample(scores.cond(0, l), rng);
        let mut tokens = row.to_vec();
        tokens.push(y);
        (y, ModifiedTarget::inactive(kind, l, tokens))
    } else {
        let (p, q) = (drafts.cond(0, tau), scores.cond(0, tau));
        counters.vocab_scans += 1;
        let residual = gbv_residual(nus[tau], p, q).unwrap_or_else(|_| {
            counters.warnings += 1;
            q.clone()
        });
        let y = sample(&residual, rng);
        (y, distribution_modification(kind, l, &joints[tau], y, p, q))
    };

    (
        VerifyOutcome {
            tau,
            f: 0,
            t: row[..tau].to_vec(),
            y,
            counters,
        },
        plan,
    )
}
