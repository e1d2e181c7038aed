use super::{base_counters, DraftSet, TargetScores, VerifyOutcome};
use crate::prob::{residual_sd, sample, RandomSource};

/// Token-by-token speculative sampling on row 0.
///
/// Each drafted token survives with probability `min{1, q/p}`; the first
/// rejection at position `i` ends the block and `y` is drawn from
/// `norm(max{q - p, 0})` at that position. A fully accepted block gets a
/// bonus token from `q(· | x^L)`.
pub fn verify_sd(drafts: &DraftSet, scores: &TargetScores, rng: &mut RandomSource) -> VerifyOutcome {
    let row = drafts.row(0);
    let l = drafts.l();
    let mut counters = base_counters(&drafts.single_row(0));

    for (i, &x) in row.iter().enumerate() {
        let p = drafts.cond(0, i);
        let q = scores.cond(0, i);
        let accept = if p.prob(x) > 0.0 {
            (q.prob(x) / p.prob(x)).min(1.0)
        } else {
            1.0
        };
        counters.eta_draws += 1;
        if rng.uniform() >= accept {
            counters.vocab_scans += 1;
            let residual = residual_sd(p, q).unwrap_or_else(|_| {
                counters.warnings += 1;
                q.clone()
            });
            return VerifyOutcome {
                tau: i,
                f: 0,
                t: row[..i].to_vec(),
                y: sample(&residual, rng),
                counters,
            };
        }
    }

    VerifyOutcome {
        tau: l,
        f: 0,
        t: row.to_vec(),
        y: sample(scores.cond(0, l), rng),
        counters,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{MarkovModel, ModelPair};
    use crate::prob::{Distribution, TokenId};
    use crate::verify::testutil::*;

    #[test]
    fn matched_models_accept_everything() {
        let p = Distribution::new(vec![0.3, 0.7]).unwrap();
        let pair = ModelPair::new(MarkovModel::order_zero(p.clone()), MarkovModel::order_zero(p), 1.0).unwrap();
        let mut rng = RandomSource::new(1);
        for _ in 0..200 {
            let d = crate::verify::DraftSet::draw(&pair.draft_view(), &[], 1, 3, &mut rng);
            let s = TargetScores::score(&pair.target_view(), &[], &d);
            assert_eq!(verify_sd(&d, &s, &mut rng).tau, 3);
        }
    }

    #[test]
    fn disjoint_supports_reject_immediately() {
        let pair = ModelPair::new(
            MarkovModel::order_zero(Distribution::point(2, TokenId(0))),
            MarkovModel::order_zero(Distribution::point(2, TokenId(1))),
            1.0,
        )
        .unwrap();
        let d = crate::verify::DraftSet::from_rows(&pair.draft_view(), &[], vec![vec![TokenId(0)]]);
        let s = TargetScores::score(&pair.target_view(), &[], &d);
        let mut rng = RandomSource::new(2);
        for _ in 0..50 {
            let out = verify_sd(&d, &s, &mut rng);
            assert_eq!((out.tau, out.y), (0, TokenId(1)));
            assert_eq!(out.counters.warnings, 0);
        }
    }

    #[test]
    fn first_token_acceptance_is_overlap_mass() {
        // Σ min{p, q} = 0.5 + 0.2 = 0.7
        let pair = ModelPair::canonical();
        let mut rng = RandomSource::new(99);
        let n = 100_000;
        let mut hits = 0;
        for _ in 0..n {
            let d = crate::verify::DraftSet::draw(&pair.draft_view(), &[], 1, 1, &mut rng);
            let s = TargetScores::score(&pair.target_view(), &[], &d);
            hits += verify_sd(&d, &s, &mut rng).tau;
        }
        let rate = hits as f64 / n as f64;
        assert!((rate - 0.7).abs() < 0.01, "{rate}");
    }

    #[test]
    fn outcome_shape() {
        let (d, s) = canonical_scored(&["aab"]);
        let mut rng = RandomSource::new(5);
        for _ in 0..100 {
            let out = verify_sd(&d, &s, &mut rng);
            assert_eq!(out.t, d.row(0)[..out.tau].to_vec());
            assert_eq!(out.counters.target_calls, 1);
            assert_eq!(out.counters.draft_calls, 3);
        }
    }
}
