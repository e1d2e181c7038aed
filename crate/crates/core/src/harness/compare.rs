use super::experiment::{cell_rng, prompt_for};
use super::{decode, Algo, DecodeSettings, HarnessError};
use crate::model::ModelPair;

/// Paired comparison of several algorithms on common prompts and streams.
#[derive(Debug, Clone)]
pub struct CompareSpec {
    pub pair: ModelPair,
    pub algos: Vec<Algo>,
    pub k: usize,
    pub l: usize,
    pub max_tokens: usize,
    pub prompt_len: usize,
    pub seed: u64,
    pub trials: usize,
    pub stop_at_eos: bool,
}

impl CompareSpec {
    pub fn new(pair: ModelPair, k: usize, l: usize) -> Self {
        Self {
            pair,
            algos: vec![Algo::Sd, Algo::Spectr, Algo::Gbv, Algo::SpectrGbv],
            k,
            l,
            max_tokens: 64,
            prompt_len: 4,
            seed: 0,
            trials: 30,
            stop_at_eos: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlgoSummary {
    pub algo: Algo,
    pub mean_tau: f64,
    pub mean_tau_ci: (f64, f64),
    pub block_efficiency: f64,
    pub block_efficiency_ci: (f64, f64),
}

/// `a - b` in per-trial mean τ.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedDiff {
    pub a: Algo,
    pub b: Algo,
    pub mean: f64,
    pub ci: (f64, f64),
}

impl PairedDiff {
    /// The 95% interval excludes zero on the positive side.
    pub fn separated(&self) -> bool {
        self.ci.0 > 0.0
    }
}

#[derive(Debug, Clone)]
pub struct CompareReport {
    pub trials: usize,
    pub summaries: Vec<AlgoSummary>,
    pub diffs: Vec<PairedDiff>,
    /// Expected orderings contradicted with 95% confidence.
    pub violations: Vec<String>,
}

impl CompareReport {
    pub fn summary(&self, algo: Algo) -> Option<&AlgoSummary> {
        self.summaries.iter().find(|s| s.algo == algo)
    }

    pub fn diff(&self, a: Algo, b: Algo) -> Option<&PairedDiff> {
        self.diffs.iter().find(|d| d.a == a && d.b == b)
    }
}

/// Sample mean and normal 95% interval.
pub(crate) fn mean_ci(xs: &[f64]) -> (f64, (f64, f64)) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, (mean, mean));
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let half = 1.96 * (var / n).sqrt();
    (mean, (mean - half, mean + half))
}

const EXPECTED_ORDER: [(Algo, Algo); 4] = [
    (Algo::SpectrGbv, Algo::Spectr),
    (Algo::SpectrGbv, Algo::Gbv),
    (Algo::Spectr, Algo::Sd),
    (Algo::Gbv, Algo::Sd),
];

/// Runs every algorithm on the same prompt and stream for each trial and
/// reports per-algorithm means and paired differences in mean τ.
pub fn compare_algorithms(spec: &CompareSpec) -> Result<CompareReport, HarnessError> {
    let v = spec.pair.vocab_size();
    let mut taus = vec![Vec::with_capacity(spec.trials); spec.algos.len()];
    let mut bes = vec![Vec::with_capacity(spec.trials); spec.algos.len()];
    for t in 0..spec.trials {
        let seed = spec.seed.wrapping_add(t as u64);
        let prompt = prompt_for(v, spec.prompt_len, seed, 0);
        for (ai, &algo) in spec.algos.iter().enumerate() {
            let settings = DecodeSettings {
                stop_at_eos: spec.stop_at_eos,
                ..DecodeSettings::new(algo, spec.k, spec.l, spec.max_tokens)
            };
            let (_, m) = decode(&settings, &spec.pair, &prompt, &mut cell_rng(seed, 0))?;
            taus[ai].push(m.mean_tau());
            bes[ai].push(m.block_efficiency());
        }
    }

    let summaries = spec
        .algos
        .iter()
        .enumerate()
        .map(|(ai, &algo)| {
            let (mean_tau, mean_tau_ci) = mean_ci(&taus[ai]);
            let (block_efficiency, block_efficiency_ci) = mean_ci(&bes[ai]);
            AlgoSummary {
                algo,
                mean_tau,
                mean_tau_ci,
                block_efficiency,
                block_efficiency_ci,
            }
        })
        .collect();

    let mut diffs = Vec::new();
    for (ai, &a) in spec.algos.iter().enumerate() {
        for (bi, &b) in spec.algos.iter().enumerate() {
            if ai == bi {
                continue;
            }
            let d: Vec<f64> = taus[ai].iter().zip(&taus[bi]).map(|(x, y)| x - y).collect();
            let (mean, ci) = mean_ci(&d);
            diffs.push(PairedDiff { a, b, mean, ci });
        }
    }

    let violations = EXPECTED_ORDER
        .iter()
        .filter_map(|&(hi, lo)| {
            let d = diffs.iter().find(|d| d.a == hi && d.b == lo)?;
            (d.ci.1 < 0.0).then(|| format!("mean_tau({hi}) < mean_tau({lo}): diff {:.4} CI [{:.4}, {:.4}]", d.mean, d.ci.0, d.ci.1))
        })
        .collect();

    Ok(CompareReport {
        trials: spec.trials,
        summaries,
        diffs,
        violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::random_model;

    #[test]
    fn interval_basics() {
        let (m, (lo, hi)) = mean_ci(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((hi - lo - 2.0 * 1.96 / 3f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn matched_models_tie_for_single_draft() {
        let m = random_model(4, 1, 3, 1.0).unwrap();
        let pair = ModelPair::new(m.clone(), m, 1.0).unwrap();
        let mut spec = CompareSpec::new(pair, 1, 3);
        spec.trials = 5;
        let rep = compare_algorithms(&spec).unwrap();
        for s in &rep.summaries {
            assert_eq!(s.mean_tau, 3.0);
        }
        assert!(rep.violations.is_empty());
    }
}
