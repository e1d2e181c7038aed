use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde_json::json;

use super::config::{ConfigError, RunConfig};
use super::{decode, Algo, HarnessError, RunMetrics};
use crate::model::ModelPair;
use crate::prob::{RandomSource, TokenId};

pub const CSV_HEADER: &str = "algo,K,L,T,seed,prompt_id,decoded_tokens,target_calls,draft_calls,mean_tau,accept_rate,block_efficiency,vocab_scans,wall_ms,warnings";

const PROMPT_STREAM: u64 = 0x7072_6f6d;
const DECODE_STREAM: u64 = 0x6465_636f;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(ConfigError::Value {
                key: "format".into(),
                value: other.into(),
                reason: "expected csv or json".into(),
            }),
        }
    }
}

/// One `(config, seed, prompt)` cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub algo: Algo,
    pub k: usize,
    pub l: usize,
    pub temperature: f64,
    pub seed: u64,
    pub prompt_id: usize,
    pub metrics: RunMetrics,
}

/// Prompt tokens are uniform over the non-EOS vocabulary.
pub fn prompt_for(vocab_size: usize, len: usize, seed: u64, prompt_id: usize) -> Vec<TokenId> {
    let mut rng = RandomSource::derive(seed, &[PROMPT_STREAM, prompt_id as u64]);
    let span = (vocab_size - 1) as f64;
    (0..len)
        .map(|_| TokenId(((rng.uniform() * span) as u32).min(vocab_size as u32 - 2)))
        .collect()
}

/// Decoding stream of a cell. It depends on the trial seed and prompt only,
/// so every configuration sees the same prompts and the same stream.
pub fn cell_rng(seed: u64, prompt_id: usize) -> RandomSource {
    RandomSource::derive(seed, &[DECODE_STREAM, prompt_id as u64])
}

fn run_cell(cfg: &RunConfig, pair: &ModelPair, seed: u64, prompt_id: usize) -> Result<ReportRow, HarnessError> {
    let prompt = prompt_for(pair.vocab_size(), cfg.prompt_len, seed, prompt_id);
    let mut rng = cell_rng(seed, prompt_id);
    let (_, metrics) = decode(&cfg.settings(), pair, &prompt, &mut rng)?;
    Ok(ReportRow {
        algo: cfg.algo,
        k: cfg.k,
        l: cfg.l,
        temperature: cfg.temperature,
        seed,
        prompt_id,
        metrics,
    })
}

/// Runs every cell of every config. Trial `t` uses seed `config.seed + t`.
/// Rows come back in `(config, trial, prompt)` order regardless of how
/// the cells were scheduled.
pub fn run_cells(configs: &[RunConfig]) -> Result<Vec<ReportRow>, HarnessError> {
    let pairs = configs
        .iter()
        .map(|c| c.models.load(c.temperature))
        .collect::<Result<Vec<_>, _>>()?;
    let mut cells = Vec::new();
    for (ci, cfg) in configs.iter().enumerate() {
        if pairs[ci].vocab_size() < 2 {
            return Err(ConfigError::Invalid("vocabulary needs at least 2 tokens".into()).into());
        }
        for t in 0..cfg.trials {
            for p in 0..cfg.prompts {
                cells.push((ci, cfg.seed.wrapping_add(t as u64), p));
            }
        }
    }

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<ReportRow, HarnessError>>>> = Mutex::new((0..cells.len()).map(|_| None).collect());
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(cells.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(ci, seed, p)) = cells.get(i) else { break };
                let row = run_cell(&configs[ci], &pairs[ci], seed, p);
                results.lock().unwrap()[i] = Some(row);
            });
        }
    });
    results
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every cell ran"))
        .collect()
}

pub fn format_csv(rows: &[ReportRow]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in rows {
        let m = &r.metrics;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{:.6},{:.6},{:.6},{},{},{}",
            r.algo,
            r.k,
            r.l,
            r.temperature,
            r.seed,
            r.prompt_id,
            m.decoded_tokens,
            m.target_calls,
            m.draft_calls,
            m.mean_tau(),
            m.accept_rate(),
            m.block_efficiency(),
            m.vocab_scans,
            m.wall_ms,
            m.warnings
        );
    }
    s
}

pub fn format_json(rows: &[ReportRow]) -> String {
    let items: Vec<_> = rows
        .iter()
        .map(|r| {
            let m = &r.metrics;
            json!({
                "algo": r.algo.name(),
                "K": r.k,
                "L": r.l,
                "T": r.temperature,
                "seed": r.seed,
                "prompt_id": r.prompt_id,
                "decoded_tokens": m.decoded_tokens,
                "target_calls": m.target_calls,
                "draft_calls": m.draft_calls,
                "mean_tau": m.mean_tau(),
                "accept_rate": m.accept_rate(),
                "block_efficiency": m.block_efficiency(),
                "vocab_scans": m.vocab_scans,
                "wall_ms": m.wall_ms,
                "warnings": m.warnings,
            })
        })
        .collect();
    let mut s = serde_json::to_string_pretty(&items).expect("plain values serialize");
    s.push('\n');
    s
}

pub fn write_report(rows: &[ReportRow], out: &Path, format: ReportFormat) -> Result<(), HarnessError> {
    let text = match format {
        ReportFormat::Csv => format_csv(rows),
        ReportFormat::Json => format_json(rows),
    };
    std::fs::write(out, text).map_err(|source| HarnessError::Io {
        path: out.to_path_buf(),
        source,
    })
}

pub fn run_experiment(configs: &[RunConfig], out: &Path, format: ReportFormat) -> Result<Vec<ReportRow>, HarnessError> {
    let rows = run_cells(configs)?;
    write_report(&rows, out, format)?;
    Ok(rows)
}
