//! End-to-end decoding, experiment grids and reports.
//!
//! [`decode`] runs one prompt to completion with a chosen verifier. The
//! experiment layer ([`run_experiment`]) fans a list of [`RunConfig`]s out
//! over seeds and prompts and writes one CSV/JSON row per cell.

mod checks;
mod compare;
mod config;
mod experiment;

pub use checks::{oracle_check, CheckOutcome, OracleCheckReport};
pub use compare::{compare_algorithms, AlgoSummary, CompareReport, CompareSpec, PairedDiff};
pub use config::{parse_config_file, ConfigError, ExperimentSpec, ModelSource, RunConfig};
pub use experiment::{
    cell_rng, format_csv, format_json, prompt_for, run_cells, run_experiment, write_report, ReportFormat, ReportRow, CSV_HEADER,
};

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use thiserror::Error;

use crate::model::{ModelError, ModelPair, SequenceModel};
use crate::oracle::OracleError;
use crate::prob::{sample, RandomSource, TokenId};
use crate::verify::{
    prune_expired, verify_gbv, verify_kseq, verify_sd, verify_spectr_gbv, Counters, DraftSet, TargetScores,
    TargetView, VerifyError,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Verify(#[from] VerifyError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algo {
    Ar,
    Sd,
    Spectr,
    Gbv,
    SpectrGbv,
}

impl Algo {
    pub const ALL: [Algo; 5] = [Algo::Ar, Algo::Sd, Algo::Spectr, Algo::Gbv, Algo::SpectrGbv];

    pub fn name(self) -> &'static str {
        match self {
            Algo::Ar => "ar",
            Algo::Sd => "sd",
            Algo::Spectr => "spectr",
            Algo::Gbv => "gbv",
            Algo::SpectrGbv => "spectr-gbv",
        }
    }

    /// Whether the algorithm uses a single draft row.
    pub fn single_draft(self) -> bool {
        matches!(self, Algo::Ar | Algo::Sd | Algo::Gbv)
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algo {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Algo::ALL
            .into_iter()
            .find(|a| a.name() == s.trim())
            .ok_or_else(|| ConfigError::Value {
                key: "algo".into(),
                value: s.into(),
                reason: "expected one of ar, sd, spectr, gbv, spectr-gbv".into(),
            })
    }
}

/// Knobs of a single decode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeSettings {
    pub algo: Algo,
    pub k: usize,
    pub l: usize,
    pub max_tokens: usize,
    pub stop_at_eos: bool,
    pub timing: bool,
}

impl DecodeSettings {
    pub fn new(algo: Algo, k: usize, l: usize, max_tokens: usize) -> Self {
        Self {
            algo,
            k: if algo.single_draft() { 1 } else { k },
            l,
            max_tokens,
            stop_at_eos: true,
            timing: false,
        }
    }
}

/// Counters accumulated over one or more decodes.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunMetrics {
    /// Tokens produced by verification, including any overshoot of the
    /// final block past `max_tokens` or EOS.
    pub decoded_tokens: u64,
    pub target_calls: u64,
    pub draft_calls: u64,
    pub iterations: u64,
    pub tau_sum: u64,
    /// Σ over iterations of `τ / L`.
    pub accept_rate_sum: f64,
    pub vocab_scans: u64,
    pub eta_draws: u64,
    pub warnings: u64,
    pub wall_ms: u64,
}

impl RunMetrics {
    pub fn mean_tau(&self) -> f64 {
        if self.iterations == 0 {
            0.0
        } else {
            self.tau_sum as f64 / self.iterations as f64
        }
    }

    /// Accepted draft tokens over drafted tokens, averaged over iterations.
    pub fn accept_rate(&self) -> f64 {
        if self.iterations == 0 {
            0.0
        } else {
            self.accept_rate_sum / self.iterations as f64
        }
    }

    pub fn block_efficiency(&self) -> f64 {
        block_efficiency(self)
    }

    fn absorb(&mut self, c: &Counters) {
        self.target_calls += c.target_calls;
        self.draft_calls += c.draft_calls;
        self.vocab_scans += c.vocab_scans;
        self.eta_draws += c.eta_draws;
        self.warnings += c.warnings;
    }
}

impl std::ops::AddAssign for RunMetrics {
    fn add_assign(&mut self, o: Self) {
        self.decoded_tokens += o.decoded_tokens;
        self.target_calls += o.target_calls;
        self.draft_calls += o.draft_calls;
        self.iterations += o.iterations;
        self.tau_sum += o.tau_sum;
        self.accept_rate_sum += o.accept_rate_sum;
        self.vocab_scans += o.vocab_scans;
        self.eta_draws += o.eta_draws;
        self.warnings += o.warnings;
        self.wall_ms += o.wall_ms;
    }
}

/// Decoded tokens per serial target call.
pub fn block_efficiency(m: &RunMetrics) -> f64 {
    if m.target_calls == 0 {
        0.0
    } else {
        m.decoded_tokens as f64 / m.target_calls as f64
    }
}

/// End-of-sequence token: the last vocabulary entry.
pub fn eos_token(vocab_size: usize) -> TokenId {
    TokenId((vocab_size - 1) as u32)
}

/// Decodes after `prompt` until EOS or `max_tokens` new tokens.
///
/// Each speculative iteration drafts K rows of L tokens, scores them with
/// one target call, verifies, and appends `t` followed by `y`. The block
/// verifiers also install their target modification for the following
/// iterations. Returns the generated tokens (prompt excluded).
pub fn decode(
    settings: &DecodeSettings,
    pair: &ModelPair,
    prompt: &[TokenId],
    rng: &mut RandomSource,
) -> Result<(Vec<TokenId>, RunMetrics), HarnessError> {
    let started = settings.timing.then(Instant::now);
    let eos = eos_token(pair.vocab_size());
    let draft = pair.draft_view();
    let mut view = TargetView::Raw(pair.target_view());
    let mut m = RunMetrics::default();
    let mut ctx = prompt.to_vec();
    let start = ctx.len();
    let mut dropped_warnings = 0;
    let k = if settings.algo.single_draft() { 1 } else { settings.k };
    let l = settings.l;

    while ctx.len() - start < settings.max_tokens {
        if settings.algo == Algo::Ar {
            let x = sample(&view.conditional(&ctx), rng);
            m.target_calls += 1;
            m.decoded_tokens += 1;
            ctx.push(x);
            if settings.stop_at_eos && x == eos {
                break;
            }
            continue;
        }

        let drafts = DraftSet::draw(&draft, &ctx, k, l, rng);
        let scores = TargetScores::score(&view, &ctx, &drafts);
        let (out, plan) = match settings.algo {
            Algo::Sd => (verify_sd(&drafts, &scores, rng), None),
            Algo::Spectr => (verify_kseq(&drafts, &scores, rng)?, None),
            Algo::Gbv => {
                let (o, p) = verify_gbv(&drafts, &scores, rng);
                (o, Some(p))
            }
            Algo::SpectrGbv => {
                let (o, p) = verify_spectr_gbv(&drafts, &scores, rng);
                (o, Some(p))
            }
            Algo::Ar => unreachable!(),
        };
        m.absorb(&out.counters);
        m.iterations += 1;
        m.tau_sum += out.tau as u64;
        m.accept_rate_sum += out.tau as f64 / l as f64;

        let emitted = out.emitted();
        m.decoded_tokens += emitted.len() as u64;
        let anchor_len = ctx.len();
        ctx.extend_from_slice(&emitted);
        if let Some(plan) = plan {
            view = view.install(draft.clone(), &ctx[..anchor_len], plan);
        }
        let (pruned, w) = prune_expired(view, ctx.len());
        view = pruned;
        dropped_warnings += w;

        if settings.stop_at_eos {
            if let Some(pos) = emitted.iter().position(|&x| x == eos) {
                ctx.truncate(anchor_len + pos + 1);
                break;
            }
        }
    }

    m.warnings += view.warnings() + dropped_warnings;
    ctx.truncate(start + settings.max_tokens);
    if let Some(t0) = started {
        m.wall_ms = t0.elapsed().as_millis() as u64;
    }
    Ok((ctx.split_off(start), m))
}
