use std::cell::{Cell, RefCell};
use std::collections::HashMap;

use super::gbv::gbv_residual;
use super::spectr_gbv::residual_spectr_gbv;
use crate::model::{SequenceModel, Tempered};
use crate::prob::{Distribution, PrefixJoint, ProbError, TokenId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModificationKind {
    /// `norm(max{ν q - p, 0})` with ν the running target/draft ratio.
    Gbv,
    /// `∝ q(joint) (1 - min{p(joint)/q(joint), 1})^K`.
    SpectrGbv { k: usize },
}

/// Target adjustment carried from one decoding iteration into the next.
///
/// The overrides are produced lazily: `joint` covers the emitted tokens
/// (`t` followed by `y`) relative to the prefix the producing iteration
/// started from, and each override extends it along the queried context.
#[derive(Debug, Clone, PartialEq)]
pub struct ModifiedTarget {
    pub kind: ModificationKind,
    pub l: usize,
    pub tau: usize,
    /// `t` followed by `y`.
    pub tokens: Vec<TokenId>,
    pub joint: PrefixJoint,
    /// Number of overridden positions in the next iteration, `L - τ - 1`.
    pub horizon: usize,
}

impl ModifiedTarget {
    /// A record with nothing to override (full block accepted).
    pub fn inactive(kind: ModificationKind, l: usize, tokens: Vec<TokenId>) -> Self {
        Self {
            kind,
            l,
            tau: l,
            tokens,
            joint: PrefixJoint::empty(),
            horizon: 0,
        }
    }

    /// Override distribution at a context whose joint (relative to the
    /// producing iteration's prefix) is `joint`.
    pub fn override_at(
        &self,
        joint: &PrefixJoint,
        p_next: &Distribution,
        q_next: &Distribution,
    ) -> Result<Distribution, ProbError> {
        match self.kind {
            ModificationKind::SpectrGbv { k } => residual_spectr_gbv(joint, p_next, q_next, k),
            ModificationKind::Gbv => {
                let r = joint.ratio();
                let nu = if r == 0.0 { f64::INFINITY } else { 1.0 / r };
                gbv_residual(nu, p_next, q_next)
            }
        }
    }
}

/// Target modification after a verification that ended with
/// `τ < L`: `t_joint` is the joint of the accepted block, `y` the residual
/// token and `p_cond`/`q_cond` the conditionals it was drawn under.
pub fn distribution_modification(
    kind: ModificationKind,
    l: usize,
    t_joint: &PrefixJoint,
    y: TokenId,
    p_cond: &Distribution,
    q_cond: &Distribution,
) -> ModifiedTarget {
    let tau = t_joint.len();
    assert!(tau < l, "modification needs τ < L");
    let joint = t_joint.extended(y, p_cond, q_cond);
    ModifiedTarget {
        kind,
        l,
        tau,
        tokens: joint.tokens.clone(),
        joint,
        horizon: l - tau - 1,
    }
}

/// A target whose conditionals are overridden inside one modification window.
#[derive(Debug)]
pub struct ModifiedModel {
    base: TargetView,
    draft: Tempered,
    /// Prefix the producing iteration started from.
    anchor: Vec<TokenId>,
    plan: ModifiedTarget,
    cache: RefCell<HashMap<Vec<TokenId>, Distribution>>,
    warnings: Cell<u64>,
}

impl ModifiedModel {
    pub fn plan(&self) -> &ModifiedTarget {
        &self.plan
    }

    pub fn anchor(&self) -> &[TokenId] {
        &self.anchor
    }

    /// First context length that is overridden.
    fn start(&self) -> usize {
        self.anchor.len() + self.plan.tokens.len()
    }

    /// Last context length that is overridden (inclusive).
    fn last(&self) -> usize {
        self.anchor.len() + self.plan.l - 1
    }

    fn applies(&self, ctx: &[TokenId]) -> bool {
        let n0 = self.anchor.len();
        let n1 = self.start();
        self.plan.horizon > 0
            && ctx.len() >= n1
            && ctx.len() <= self.last()
            && ctx[..n0] == self.anchor[..]
            && ctx[n0..n1] == self.plan.tokens[..]
    }

    fn compute(&self, ctx: &[TokenId]) -> Distribution {
        let mut joint = self.plan.joint.clone();
        for j in self.start()..ctx.len() {
            let prefix = &ctx[..j];
            joint = joint.extended(ctx[j], &self.draft.conditional(prefix), &self.base.conditional(prefix));
        }
        let p_next = self.draft.conditional(ctx);
        let q_next = self.base.conditional(ctx);
        self.plan.override_at(&joint, &p_next, &q_next).unwrap_or_else(|_| {
            self.warnings.set(self.warnings.get() + 1);
            q_next
        })
    }
}

impl SequenceModel for ModifiedModel {
    fn vocab_size(&self) -> usize {
        self.base.vocab_size()
    }

    fn conditional(&self, ctx: &[TokenId]) -> Distribution {
        if !self.applies(ctx) {
            return self.base.conditional(ctx);
        }
        if let Some(d) = self.cache.borrow().get(ctx) {
            return d.clone();
        }
        let d = self.compute(ctx);
        self.cache.borrow_mut().insert(ctx.to_vec(), d.clone());
        d
    }
}

/// The target as seen by the decoder: the raw tempered table, or a stack
/// of modification layers on top of it.
#[derive(Debug)]
pub enum TargetView {
    Raw(Tempered),
    Modified(Box<ModifiedModel>),
}

impl TargetView {
    /// Pushes a modification layer. Records with an empty horizon are dropped.
    pub fn install(self, draft: Tempered, anchor: &[TokenId], plan: ModifiedTarget) -> Self {
        if plan.horizon == 0 {
            return self;
        }
        TargetView::Modified(Box::new(ModifiedModel {
            base: self,
            draft,
            anchor: anchor.to_vec(),
            plan,
            cache: RefCell::new(HashMap::new()),
            warnings: Cell::new(0),
        }))
    }

    pub fn depth(&self) -> usize {
        match self {
            TargetView::Raw(_) => 0,
            TargetView::Modified(m) => 1 + m.base.depth(),
        }
    }

    /// Fallbacks taken so far across all layers.
    pub fn warnings(&self) -> u64 {
        match self {
            TargetView::Raw(_) => 0,
            TargetView::Modified(m) => m.warnings.get() + m.base.warnings(),
        }
    }
}

impl SequenceModel for TargetView {
    fn vocab_size(&self) -> usize {
        match self {
            TargetView::Raw(t) => t.vocab_size(),
            TargetView::Modified(m) => m.vocab_size(),
        }
    }

    fn conditional(&self, ctx: &[TokenId]) -> Distribution {
        match self {
            TargetView::Raw(t) => t.conditional(ctx),
            TargetView::Modified(m) => m.conditional(ctx),
        }
    }
}

/// Drops every layer whose window ends before context length `min_len`.
/// Returns the surviving view and the warnings held by dropped layers.
pub fn prune_expired(view: TargetView, min_len: usize) -> (TargetView, u64) {
    match view {
        TargetView::Raw(_) => (view, 0),
        TargetView::Modified(mut m) => {
            if m.last() < min_len {
                let (base, w) = prune_expired(m.base, min_len);
                (base, w + m.warnings.get())
            } else {
                let base = std::mem::replace(&mut m.base, TargetView::Raw(m.draft.clone()));
                let (base, w) = prune_expired(base, min_len);
                m.base = base;
                (TargetView::Modified(m), w)
            }
        }
    }
}
