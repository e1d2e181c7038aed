use super::{base_counters, DraftSet, TargetScores, VerifyError, VerifyOutcome};
use crate::prob::{normalize, one_minus_pow_complement, sample, Distribution, ProbError, RandomSource};

/// Solution of `1 - (1 - β(ρ))^K = ρ β(ρ)` with `β(ρ) = Σ min{p, q/ρ}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KseqScale {
    pub rho: f64,
    pub beta: f64,
    /// Bisection steps taken; each is one vocabulary pass.
    pub iterations: u32,
}

fn beta(p: &Distribution, q: &Distribution, rho: f64) -> f64 {
    p.mass()
        .iter()
        .zip(q.mass())
        .map(|(&pi, &qi)| pi.min(qi / rho))
        .sum()
}

fn fixed_point_gap(p: &Distribution, q: &Distribution, k: usize, rho: f64) -> (f64, f64) {
    let b = beta(p, q, rho);
    (one_minus_pow_complement(b, k as u32) - rho * b, b)
}

pub fn kseq_rho(p: &Distribution, q: &Distribution, k: usize) -> Result<KseqScale, VerifyError> {
    kseq_rho_with_tolerance(p, q, k, 1e-12)
}

/// Bisection for ρ on `[1, K]`, stopping once the bracket is narrower than
/// `tol` or `|g(ρ)| < tol`.
pub fn kseq_rho_with_tolerance(
    p: &Distribution,
    q: &Distribution,
    k: usize,
    tol: f64,
) -> Result<KseqScale, VerifyError> {
    assert!(k >= 1, "K must be >= 1");
    let (g_lo, beta_lo) = fixed_point_gap(p, q, k, 1.0);
    if k == 1 || g_lo.abs() < tol {
        return Ok(KseqScale {
            rho: 1.0,
            beta: beta_lo,
            iterations: 0,
        });
    }
    let (g_hi, beta_hi) = fixed_point_gap(p, q, k, k as f64);
    if g_hi.abs() < tol {
        return Ok(KseqScale {
            rho: k as f64,
            beta: beta_hi,
            iterations: 0,
        });
    }
    if g_lo < 0.0 || g_hi > 0.0 {
        return Err(VerifyError::NoRoot { k, g_lo, g_hi });
    }

    let (mut lo, mut hi) = (1.0f64, k as f64);
    let mut iterations = 0;
    let mut rho = 0.5 * (lo + hi);
    let mut b = beta(p, q, rho);
    while hi - lo >= tol && iterations < 200 {
        rho = 0.5 * (lo + hi);
        let (g, bm) = fixed_point_gap(p, q, k, rho);
        b = bm;
        iterations += 1;
        if g.abs() < tol {
            break;
        }
        if g > 0.0 {
            lo = rho;
        } else {
            hi = rho;
        }
    }
    Ok(KseqScale {
        rho,
        beta: b,
        iterations,
    })
}

/// `(q - ρ min{p, q/ρ}) / (1 - ρ β(ρ))`.
pub fn kseq_residual(p: &Distribution, q: &Distribution, scale: &KseqScale) -> Result<Distribution, ProbError> {
    if 1.0 - scale.rho * scale.beta < 1e-12 {
        return Err(ProbError::AllZeroMass);
    }
    let raw: Vec<f64> = p
        .mass()
        .iter()
        .zip(q.mass())
        .map(|(&pi, &qi)| (qi - scale.rho * pi.min(qi / scale.rho)).max(0.0))
        .collect();
    normalize(&raw)
}

/// Position-by-position multi-draft verification (K-SEQ).
///
/// At each position the surviving rows share a prefix, so they share the
/// conditionals. Candidates are tried in row order with acceptance
/// `min{1, q/(ρ p)}`, ρ solved for the number of surviving rows; rows that
/// disagree with the accepted token are dropped.
pub fn verify_kseq(drafts: &DraftSet, scores: &TargetScores, rng: &mut RandomSource) -> Result<VerifyOutcome, VerifyError> {
    let l = drafts.l();
    let mut counters = base_counters(drafts);
    let mut surviving: Vec<usize> = (0..drafts.k()).collect();

    for i in 0..l {
        let lead = surviving[0];
        let p = drafts.cond(lead, i);
        let q = scores.cond(lead, i);
        let scale = kseq_rho(p, q, surviving.len())?;
        counters.bisection_iters += u64::from(scale.iterations);
        counters.vocab_scans += u64::from(scale.iterations) + 1;

        let mut accepted = None;
        for &r in &surviving {
            let x = drafts.row(r)[i];
            let px = p.prob(x);
            let a = if px > 0.0 { (q.prob(x) / (scale.rho * px)).min(1.0) } else { 1.0 };
            counters.eta_draws += 1;
            if rng.uniform() < a {
                accepted = Some(x);
                break;
            }
        }

        match accepted {
            Some(x) => surviving.retain(|&r| drafts.row(r)[i] == x),
            None => {
                counters.vocab_scans += 1;
                let residual = kseq_residual(p, q, &scale).unwrap_or_else(|_| {
                    counters.warnings += 1;
                    q.clone()
                });
                let f = if i == 0 { 0 } else { lead };
                return Ok(VerifyOutcome {
                    tau: i,
                    f,
                    t: drafts.row(f)[..i].to_vec(),
                    y: sample(&residual, rng),
                    counters,
                });
            }
        }
    }

    let f = surviving[0];
    Ok(VerifyOutcome {
        tau: l,
        f,
        t: drafts.row(f).to_vec(),
        y: sample(scores.cond(f, l), rng),
        counters,
    })
}
