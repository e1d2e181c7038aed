use super::modify::{distribution_modification, ModificationKind, ModifiedTarget};
use super::{base_counters, row_joints, DraftSet, RejectedSet, TargetScores, VerifyOutcome, DENOM_EPS};
use crate::prob::{normalize, one_minus_pow_complement, sample, Distribution, PrefixJoint, ProbError, RandomSource, TokenId};

/// `(1 - min{p(x^i, x)/q(x^i, x), 1})^K` weighted by `q(x | x^i)` for every
/// next token `x`, given `r = p(x^i)/q(x^i)`.
fn tail_weights<'a>(r: f64, p_next: &'a Distribution, q_next: &'a Distribution, k: usize) -> impl Iterator<Item = f64> + 'a {
    let k = k as i32;
    p_next.mass().iter().zip(q_next.mass()).map(move |(&px, &qx)| {
        if qx <= 0.0 {
            return 0.0;
        }
        let m = if r.is_infinite() { 1.0 } else { (r * px / qx).min(1.0) };
        qx * (1.0 - m).powi(k)
    })
}

/// Numerator and denominator of the proper sub-block acceptance ratio.
pub fn h_ik_parts(joint: &PrefixJoint, p_next: &Distribution, q_next: &Distribution, k: usize) -> (f64, f64) {
    let (pj, qj) = (joint.p(), joint.q());
    if qj == 0.0 {
        return (0.0, one_minus_pow_complement(pj, k as u32));
    }
    let r = joint.ratio();
    let s: f64 = qj * tail_weights(r, p_next, q_next, k).sum::<f64>();
    let num = s - qj * (1.0 - r.min(1.0)).powi(k as i32);
    let den = one_minus_pow_complement(pj, k as u32) - qj + s;
    (num, den)
}

/// Acceptance probability of a proper sub-block `x^i` (`i < L`).
pub fn h_ik(joint: &PrefixJoint, p_next: &Distribution, q_next: &Distribution, k: usize) -> f64 {
    let (num, den) = h_ik_parts(joint, p_next, q_next, k);
    if den.abs() < DENOM_EPS {
        return 1.0;
    }
    (num / den).clamp(0.0, 1.0)
}

/// `q(x^L)[1 - (1 - min{p/q, 1})^K] / [1 - (1 - p(x^L))^K]` before clamping.
pub fn h_lk_unclamped(joint: &PrefixJoint, k: usize) -> f64 {
    let den = one_minus_pow_complement(joint.p(), k as u32);
    if den < DENOM_EPS {
        return 0.0;
    }
    let qj = joint.q();
    if qj == 0.0 {
        return 0.0;
    }
    qj * one_minus_pow_complement(joint.capped_ratio(), k as u32) / den
}

/// Acceptance probability of the full block `x^L`.
pub fn h_lk(joint: &PrefixJoint, k: usize) -> f64 {
    h_lk_unclamped(joint, k).clamp(0.0, 1.0)
}

/// Residual after the accepted block `x^τ`:
/// `∝ q(x^τ, x)(1 - min{p(x^τ, x)/q(x^τ, x), 1})^K`.
pub fn residual_spectr_gbv(
    joint: &PrefixJoint,
    p_next: &Distribution,
    q_next: &Distribution,
    k: usize,
) -> Result<Distribution, ProbError> {
    if joint.log_q.is_zero() {
        return Err(ProbError::AllZeroMass);
    }
    let raw: Vec<f64> = tail_weights(joint.ratio(), p_next, q_next, k).collect();
    normalize(&raw)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepDecision {
    Accepted,
    Rejected,
    /// Sub-block already in the rejected set; no draw was made.
    SkippedInH,
}

/// One visited sub-block during verification.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub row: usize,
    pub len: usize,
    pub block: Vec<TokenId>,
    pub full_block: bool,
    pub h: Option<f64>,
    pub eta: Option<f64>,
    pub decision: StepDecision,
}

/// Multi-draft block verification.
///
/// Rows are visited in index order. Within a row, the proper sub-blocks
/// longer than the current `τ` are tested with [`h_ik`], then the full block
/// with [`h_lk`]; a full-block acceptance ends the scan. Rejected sub-blocks
/// go into a content-keyed set and are never drawn for again.
pub fn verify_spectr_gbv(drafts: &DraftSet, scores: &TargetScores, rng: &mut RandomSource) -> (VerifyOutcome, ModifiedTarget) {
    run(drafts, scores, rng, None)
}

/// As [`verify_spectr_gbv`], also returning every visited step.
pub fn verify_spectr_gbv_traced(
    drafts: &DraftSet,
    scores: &TargetScores,
    rng: &mut RandomSource,
) -> (VerifyOutcome, ModifiedTarget, Vec<TraceStep>) {
    let mut trace = Vec::new();
    let (out, plan) = run(drafts, scores, rng, Some(&mut trace));
    (out, plan, trace)
}

fn run(
    drafts: &DraftSet,
    scores: &TargetScores,
    rng: &mut RandomSource,
    mut trace: Option<&mut Vec<TraceStep>>,
) -> (VerifyOutcome, ModifiedTarget) {
    let (k_total, l) = (drafts.k(), drafts.l());
    let mut counters = base_counters(drafts);
    let mut rejected = RejectedSet::new();
    let (mut tau, mut f) = (0usize, 0usize);

    let mut log = |row: usize, block: &[TokenId], h: Option<f64>, eta: Option<f64>, decision: StepDecision| {
        if let Some(t) = trace.as_deref_mut() {
            t.push(TraceStep {
                row,
                len: block.len(),
                block: block.to_vec(),
                full_block: block.len() == l,
                h,
                eta,
                decision,
            });
        }
    };

    'rows: for k in 0..k_total {
        let row = drafts.row(k);
        let joints = row_joints(drafts, scores, k);
        let mut i = tau + 1;
        while i < l {
            let block = &row[..i];
            if rejected.contains(block) {
                log(k, block, None, None, StepDecision::SkippedInH);
            } else {
                counters.vocab_scans += 1;
                let h = h_ik(&joints[i], drafts.cond(k, i), scores.cond(k, i), k_total);
                counters.eta_draws += 1;
                let eta = rng.uniform();
                if eta < h {
                    tau = i;
                    f = k;
                    log(k, block, Some(h), Some(eta), StepDecision::Accepted);
                } else {
                    rejected.insert(block);
                    log(k, block, Some(h), Some(eta), StepDecision::Rejected);
                }
            }
            i += 1;
        }

        if rejected.contains(row) {
            log(k, row, None, None, StepDecision::SkippedInH);
            continue;
        }
        let h = h_lk(&joints[l], k_total);
        counters.eta_draws += 1;
        let eta = rng.uniform();
        if eta < h {
            tau = l;
            f = k;
            log(k, row, Some(h), Some(eta), StepDecision::Accepted);
            break 'rows;
        }
        rejected.insert(row);
        log(k, row, Some(h), Some(eta), StepDecision::Rejected);
    }

    let kind = ModificationKind::SpectrGbv { k: k_total };
    let row = drafts.row(f);
    let (y, plan) = if tau == l {
        let y = sample(scores.cond(f, l), rng);
        let mut tokens = row.to_vec();
        tokens.push(y);
        (y, ModifiedTarget::inactive(kind, l, tokens))
    } else {
        let joints = row_joints(drafts, scores, f);
        let (p, q) = (drafts.cond(f, tau), scores.cond(f, tau));
        counters.vocab_scans += 1;
        let residual = residual_spectr_gbv(&joints[tau], p, q, k_total).unwrap_or_else(|_| {
            counters.warnings += 1;
            q.clone()
        });
        let y = sample(&residual, rng);
        (y, distribution_modification(kind, l, &joints[tau], y, p, q))
    };

    (
        VerifyOutcome {
            tau,
            f,
            t: row[..tau].to_vec(),
            y,
            counters,
        },
        plan,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{random_model, ModelPair};
    use crate::verify::testutil::*;
    use crate::verify::{gbv_accept_prob, gbv_residual, GbvChainState};

    fn d(v: &[f64]) -> Distribution {
        Distribution::new(v.to_vec()).unwrap()
    }

    #[test]
    fn canonical_full_block_value() {
        let (dr, s) = canonical_scored(&["aa"]);
        let j = row_joints(&dr, &s, 0);
        let expected = 0.40234375 / 0.4375;
        assert!((h_lk(&j[2], 2) - expected).abs() < 1e-12);
        assert!((h_lk(&j[2], 2) - 0.919_643).abs() < 1e-6);
    }

    #[test]
    fn canonical_proper_sub_blocks() {
        let (dr, s) = canonical_scored(&["ab", "ba"]);
        let ja = row_joints(&dr, &s, 0);
        let jb = row_joints(&dr, &s, 1);
        // a: S = 0.64·0.609375², numerator S - 0.8·0.375², denominator 0.75 - 0.8 + S
        let sa = 0.64 * 0.609375f64.powi(2);
        let expected = (sa - 0.8 * 0.375f64.powi(2)) / (0.75 - 0.8 + sa);
        assert!((h_ik(&ja[1], dr.cond(0, 1), s.cond(0, 1), 2) - expected).abs() < 1e-12);
        // b has q < p at every extension, so nothing is left over
        assert_eq!(h_ik(&jb[1], dr.cond(1, 1), s.cond(1, 1), 2), 0.0);
        // and its residual has no mass
        assert!(residual_spectr_gbv(&jb[1], dr.cond(1, 1), s.cond(1, 1), 2).is_err());
    }

    #[test]
    fn matched_models_with_several_drafts() {
        let q = d(&[0.3, 0.7]);
        let j = PrefixJoint::empty().extended(TokenId(0), &q, &q);
        assert_eq!(h_ik(&j, &q, &q, 3), 0.0);
        let expected = 0.3 / (1.0 - 0.7f64.powi(3));
        assert!((h_lk(&j, 3) - expected).abs() < 1e-12);
        assert_eq!(h_lk(&j, 1), 1.0);
    }

    #[test]
    fn zero_target_mass() {
        let p = d(&[0.5, 0.5]);
        let q = d(&[1.0, 0.0]);
        let j = PrefixJoint::empty().extended(TokenId(1), &p, &q);
        assert_eq!(h_ik(&j, &p, &q, 2), 0.0);
        assert_eq!(h_lk(&j, 2), 0.0);
    }

    #[test]
    fn single_draft_reduces_pointwise() {
        let mut rng = RandomSource::new(44);
        let mk = |rng: &mut RandomSource, v: usize| {
            let raw: Vec<f64> = (0..v).map(|_| rng.uniform().powi(2) + 1e-3).collect();
            normalize(&raw).unwrap()
        };
        for _ in 0..1000 {
            let v = 2 + (rng.uniform() * 4.0) as usize;
            let depth = 1 + (rng.uniform() * 3.0) as usize;
            let mut joint = PrefixJoint::empty();
            let mut chain = GbvChainState::start();
            for _ in 0..depth {
                let (pc, qc) = (mk(&mut rng, v), mk(&mut rng, v));
                let x = TokenId((rng.uniform() * v as f64) as u32);
                joint = joint.extended(x, &pc, &qc);
                chain = chain.advance(x, &pc, &qc);
            }
            let (pn, qn) = (mk(&mut rng, v), mk(&mut rng, v));
            let a = gbv_accept_prob(&joint, &pn, &qn, chain, false);
            let h = h_ik(&joint, &pn, &qn, 1);
            assert!((a - h).abs() < 1e-12, "{a} {h}");
            let full = gbv_accept_prob(&joint, &pn, &qn, chain, true);
            assert!((full - h_lk(&joint, 1)).abs() < 1e-12);
            match (residual_spectr_gbv(&joint, &pn, &qn, 1), gbv_residual(chain.nu, &pn, &qn)) {
                (Ok(r1), Ok(r2)) => {
                    for (u, w) in r1.mass().iter().zip(r2.mass()) {
                        assert!((u - w).abs() < 1e-12);
                    }
                }
                (Err(_), Err(_)) => {}
                other => panic!("{other:?}"),
            }
        }
    }

    #[test]
    fn rejected_blocks_are_skipped() {
        // identical rows: every sub-block of row 1 was already decided on row 0
        let (dr, s) = canonical_scored(&["bb", "bb"]);
        let mut rng = RandomSource::new(1);
        for _ in 0..200 {
            let (out, _, trace) = verify_spectr_gbv_traced(&dr, &s, &mut rng);
            if out.tau == 2 {
                continue;
            }
            let second: Vec<_> = trace.iter().filter(|t| t.row == 1).collect();
            assert!(second.iter().all(|t| t.decision == StepDecision::SkippedInH), "{trace:?}");
            assert_eq!(out.counters.eta_draws as usize, trace.iter().filter(|t| t.eta.is_some()).count());
        }
    }

    #[test]
    fn trace_invariants() {
        let pair = ModelPair::new(random_model(3, 1, 9, 0.7).unwrap(), random_model(3, 1, 10, 0.7).unwrap(), 1.0).unwrap();
        let mut rng = RandomSource::new(77);
        for _ in 0..500 {
            let dr = DraftSet::draw(&pair.draft_view(), &[TokenId(0)], 3, 3, &mut rng);
            let sc = TargetScores::score(&pair.target_view(), &[TokenId(0)], &dr);
            let (out, plan, trace) = verify_spectr_gbv_traced(&dr, &sc, &mut rng);
            assert_eq!(out.t, dr.row(out.f)[..out.tau].to_vec());
            assert_eq!(plan.tokens, out.emitted());
            let mut tau = 0;
            let mut seen_rejected: Vec<Vec<TokenId>> = Vec::new();
            for step in &trace {
                match step.decision {
                    StepDecision::Accepted => {
                        assert!(step.len > tau);
                        assert!(!seen_rejected.contains(&step.block));
                        tau = step.len;
                    }
                    StepDecision::Rejected => seen_rejected.push(step.block.clone()),
                    StepDecision::SkippedInH => assert!(seen_rejected.contains(&step.block)),
                }
                if let Some(h) = step.h {
                    assert!((0.0..=1.0).contains(&h));
                }
            }
            assert_eq!(tau, out.tau);
        }
    }

    #[test]
    fn one_scan_per_proper_step_for_any_k() {
        let pair = ModelPair::new(random_model(4, 1, 3, 0.5).unwrap(), random_model(4, 1, 4, 0.5).unwrap(), 1.0).unwrap();
        let mut rng = RandomSource::new(5);
        for k in [1, 2, 8] {
            for _ in 0..200 {
                let dr = DraftSet::draw(&pair.draft_view(), &[], k, 4, &mut rng);
                let sc = TargetScores::score(&pair.target_view(), &[], &dr);
                let (out, _, trace) = verify_spectr_gbv_traced(&dr, &sc, &mut rng);
                let proper = trace.iter().filter(|t| !t.full_block && t.h.is_some()).count();
                let residual = usize::from(out.tau < 4);
                assert_eq!(out.counters.vocab_scans as usize, proper + residual);
            }
        }
    }
}
