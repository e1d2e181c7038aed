//! Draft verification algorithms.
//!
//! All verifiers consume a [`DraftSet`] (K i.i.d. rows of L drafted tokens
//! with the draft conditionals seen while drafting) and [`TargetScores`]
//! (the L+1 target conditionals along every row) and return a
//! [`VerifyOutcome`]. The block verifiers also return a [`ModifiedTarget`]
//! describing how the target must be adjusted for the next iteration.

mod gbv;
mod kseq;
mod modify;
mod sd;
mod spectr_gbv;

pub use gbv::{gbv_accept_prob, gbv_residual, verify_gbv, GbvChainState};
pub use kseq::{kseq_residual, kseq_rho, kseq_rho_with_tolerance, verify_kseq, KseqScale};
pub use modify::{
    distribution_modification, prune_expired, ModificationKind, ModifiedModel, ModifiedTarget,
    TargetView,
};
pub use sd::verify_sd;
pub use spectr_gbv::{
    h_ik, h_ik_parts, h_lk, h_lk_unclamped, residual_spectr_gbv, verify_spectr_gbv,
    verify_spectr_gbv_traced, StepDecision, TraceStep,
};

use std::collections::HashSet;

use thiserror::Error;

use crate::model::SequenceModel;
use crate::prob::{extend_joint, sample, Distribution, PrefixJoint, RandomSource, TokenId};

/// Denominators below this are treated as zero.
pub(crate) const DENOM_EPS: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VerifyError {
    #[error("no root of the K-SEQ fixed point in [1, {k}]: g(1) = {g_lo}, g(K) = {g_hi}")]
    NoRoot { k: usize, g_lo: f64, g_hi: f64 },
}

/// K drafted rows of length L plus the draft conditionals used for each token.
#[derive(Debug, Clone)]
pub struct DraftSet {
    tokens: Vec<Vec<TokenId>>,
    draft_cond: Vec<Vec<Distribution>>,
}

impl DraftSet {
    /// Samples `k` independent rows of `l` tokens after `prefix`.
    pub fn draw(
        draft: &dyn SequenceModel,
        prefix: &[TokenId],
        k: usize,
        l: usize,
        rng: &mut RandomSource,
    ) -> Self {
        assert!(k >= 1 && l >= 1, "need K >= 1 and L >= 1");
        let mut tokens = Vec::with_capacity(k);
        let mut draft_cond = Vec::with_capacity(k);
        let mut ctx = prefix.to_vec();
        for _ in 0..k {
            ctx.truncate(prefix.len());
            let mut row = Vec::with_capacity(l);
            let mut conds = Vec::with_capacity(l);
            for _ in 0..l {
                let cond = draft.conditional(&ctx);
                let tok = sample(&cond, rng);
                ctx.push(tok);
                row.push(tok);
                conds.push(cond);
            }
            tokens.push(row);
            draft_cond.push(conds);
        }
        Self { tokens, draft_cond }
    }

    /// Builds a draft set from explicit rows (all of equal length).
    pub fn from_rows(draft: &dyn SequenceModel, prefix: &[TokenId], rows: Vec<Vec<TokenId>>) -> Self {
        assert!(!rows.is_empty(), "need at least one row");
        let l = rows[0].len();
        assert!(l >= 1 && rows.iter().all(|r| r.len() == l), "rows must share a length >= 1");
        let draft_cond = rows
            .iter()
            .map(|row| {
                let mut ctx = prefix.to_vec();
                row.iter()
                    .map(|&tok| {
                        let c = draft.conditional(&ctx);
                        ctx.push(tok);
                        c
                    })
                    .collect()
            })
            .collect();
        Self {
            tokens: rows,
            draft_cond,
        }
    }

    pub fn k(&self) -> usize {
        self.tokens.len()
    }

    pub fn l(&self) -> usize {
        self.tokens[0].len()
    }

    pub fn row(&self, k: usize) -> &[TokenId] {
        &self.tokens[k]
    }

    pub fn rows(&self) -> &[Vec<TokenId>] {
        &self.tokens
    }

    /// `p(· | x_k^i)` for `i ∈ [0, L)`.
    pub fn cond(&self, k: usize, i: usize) -> &Distribution {
        &self.draft_cond[k][i]
    }

    /// Keeps only row `k` (single-draft view).
    pub fn single_row(&self, k: usize) -> Self {
        Self {
            tokens: vec![self.tokens[k].clone()],
            draft_cond: vec![self.draft_cond[k].clone()],
        }
    }
}

/// Target conditionals `q(· | x_k^i)` for every row and `i ∈ [0, L]`.
#[derive(Debug, Clone)]
pub struct TargetScores {
    cond: Vec<Vec<Distribution>>,
}

impl TargetScores {
    /// One batched "serial call": scores every prefix of every row.
    pub fn score(target: &dyn SequenceModel, prefix: &[TokenId], drafts: &DraftSet) -> Self {
        let cond = drafts
            .rows()
            .iter()
            .map(|row| {
                let mut ctx = prefix.to_vec();
                let mut out = Vec::with_capacity(row.len() + 1);
                out.push(target.conditional(&ctx));
                for &tok in row {
                    ctx.push(tok);
                    out.push(target.conditional(&ctx));
                }
                out
            })
            .collect();
        Self { cond }
    }

    pub fn cond(&self, k: usize, i: usize) -> &Distribution {
        &self.cond[k][i]
    }

    pub fn single_row(&self, k: usize) -> Self {
        Self {
            cond: vec![self.cond[k].clone()],
        }
    }
}

/// `joints[i]` = joint of the first `i` tokens of row `k`, for `i ∈ [0, L]`.
pub(crate) fn row_joints(drafts: &DraftSet, scores: &TargetScores, k: usize) -> Vec<PrefixJoint> {
    let mut out = Vec::with_capacity(drafts.l() + 1);
    out.push(PrefixJoint::empty());
    for (i, &tok) in drafts.row(k).iter().enumerate() {
        let next = extend_joint(&out[i], tok, drafts.cond(k, i), scores.cond(k, i));
        out.push(next);
    }
    out
}

/// Rejected sub-blocks, keyed by token content.
#[derive(Debug, Clone, Default)]
pub struct RejectedSet {
    blocks: HashSet<Vec<TokenId>>,
}

impl RejectedSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn contains(&self, block: &[TokenId]) -> bool {
        self.blocks.contains(block)
    }

    pub fn insert(&mut self, block: &[TokenId]) {
        self.blocks.insert(block.to_vec());
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counters {
    pub target_calls: u64,
    pub draft_calls: u64,
    /// Passes over the vocabulary made while evaluating acceptance
    /// probabilities and residuals (sampling passes are not counted).
    pub vocab_scans: u64,
    pub eta_draws: u64,
    /// Fallbacks taken on branches that have probability zero in exact arithmetic.
    pub warnings: u64,
    pub bisection_iters: u64,
}

impl std::ops::AddAssign for Counters {
    fn add_assign(&mut self, o: Self) {
        self.target_calls += o.target_calls;
        self.draft_calls += o.draft_calls;
        self.vocab_scans += o.vocab_scans;
        self.eta_draws += o.eta_draws;
        self.warnings += o.warnings;
        self.bisection_iters += o.bisection_iters;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOutcome {
    /// Accepted length in `[0, L]`.
    pub tau: usize,
    /// Row the accepted block came from (0 when `tau == 0`).
    pub f: usize,
    /// Accepted block, the first `tau` tokens of row `f`.
    pub t: Vec<TokenId>,
    /// Residual or bonus token.
    pub y: TokenId,
    pub counters: Counters,
}

impl VerifyOutcome {
    /// `t` followed by `y`.
    pub fn emitted(&self) -> Vec<TokenId> {
        let mut out = self.t.clone();
        out.push(self.y);
        out
    }
}

pub(crate) fn base_counters(drafts: &DraftSet) -> Counters {
    Counters {
        target_calls: 1,
        draft_calls: (drafts.k() * drafts.l()) as u64,
        ..Counters::default()
    }
}
