//! Exact answers at tiny scale.
//!
//! Everything here enumerates: all sub-blocks for the acceptance-length
//! bound, and all K-tuples of drafts for the event trees. An event tree
//! integrates the verifier's uniform draws out by branching on
//! accept/reject with the closed-form acceptance probabilities, so the
//! result is an exact law over emitted tokens rather than a sample.
//!
//! The walk is written independently of [`crate::verify`]: joints are plain
//! linear-space products, the target modification is a separate layer
//! stack, and only [`TokenId`] and the model traits are shared.

use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use crate::model::{ModelPair, SequenceModel};
use crate::prob::TokenId;

/// Enumeration guard shared by all oracles.
pub const ENUMERATION_LIMIT: f64 = 1e6;

/// Branches lighter than this are dropped and their mass reported.
pub const PRUNE_BELOW: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("{what} = {size} exceeds the enumeration limit {limit}")]
    TooLarge { what: &'static str, size: f64, limit: f64 },
    #[error("iterations must be 1 or 2, got {0}")]
    Iterations(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleAlgorithm {
    SpectrGbv,
    /// Single-draft block verification (K is forced to 1).
    Gbv,
}

fn guard(what: &'static str, size: f64) -> Result<(), OracleError> {
    if size > ENUMERATION_LIMIT {
        return Err(OracleError::TooLarge {
            what,
            size,
            limit: ENUMERATION_LIMIT,
        });
    }
    Ok(())
}

fn all_blocks(v: usize, len: usize) -> Vec<Vec<TokenId>> {
    let mut out = vec![Vec::new()];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|b| {
                (0..v).map(move |x| {
                    let mut n = b.clone();
                    n.push(TokenId(x as u32));
                    n
                })
            })
            .collect();
    }
    out
}

fn joint_of(m: &dyn SequenceModel, prefix: &[TokenId], block: &[TokenId]) -> f64 {
    let mut ctx = prefix.to_vec();
    let mut pr = 1.0;
    for &x in block {
        pr *= m.conditional(&ctx).mass()[x.index()];
        ctx.push(x);
    }
    pr
}

fn min_ratio(p: f64, q: f64) -> f64 {
    if q == 0.0 {
        1.0
    } else {
        (p / q).min(1.0)
    }
}

fn accept_target(p: f64, q: f64, k: usize) -> f64 {
    q * (1.0 - (1.0 - min_ratio(p, q)).powi(k as i32))
}

/// `Σ_{τ=1..L} Σ_{x^τ} q(x^τ)[1 - (1 - min{p(x^τ)/q(x^τ), 1})^K]`.
pub fn bound_k(pair: &ModelPair, prefix: &[TokenId], l: usize, k: usize) -> Result<f64, OracleError> {
    let v = pair.vocab_size();
    guard("V^L", (v as f64).powi(l as i32))?;
    let (p, q) = (pair.draft_view(), pair.target_view());
    let mut total = 0.0;
    for len in 1..=l {
        for s in all_blocks(v, len) {
            total += accept_target(joint_of(&p, prefix, &s), joint_of(&q, prefix, &s), k);
        }
    }
    Ok(total)
}

/// Per-level terms of [`bound_k`], index `τ - 1`.
pub fn bound_levels(pair: &ModelPair, prefix: &[TokenId], l: usize, k: usize) -> Result<Vec<f64>, OracleError> {
    let v = pair.vocab_size();
    guard("V^L", (v as f64).powi(l as i32))?;
    let (p, q) = (pair.draft_view(), pair.target_view());
    Ok((1..=l)
        .map(|len| {
            all_blocks(v, len)
                .iter()
                .map(|s| accept_target(joint_of(&p, prefix, s), joint_of(&q, prefix, s), k))
                .sum()
        })
        .collect())
}

#[derive(Debug, Clone)]
struct Layer {
    anchor: Vec<TokenId>,
    tokens: Vec<TokenId>,
    p: f64,
    q: f64,
    l: usize,
    k: usize,
    algorithm: OracleAlgorithm,
}

impl Layer {
    fn applies(&self, ctx: &[TokenId]) -> bool {
        let n0 = self.anchor.len();
        let n1 = n0 + self.tokens.len();
        ctx.len() >= n1 && ctx.len() < n0 + self.l && ctx[..n0] == self.anchor[..] && ctx[n0..n1] == self.tokens[..]
    }
}

/// Target chain with the modification layers of earlier iterations.
#[derive(Clone)]
struct OracleTarget<'a> {
    raw: &'a dyn SequenceModel,
    draft: &'a dyn SequenceModel,
    layers: Vec<Layer>,
}

impl OracleTarget<'_> {
    fn cond(&self, ctx: &[TokenId]) -> Vec<f64> {
        self.cond_upto(ctx, self.layers.len())
    }

    fn cond_upto(&self, ctx: &[TokenId], n: usize) -> Vec<f64> {
        if n == 0 {
            return self.raw.conditional(ctx).into_inner();
        }
        let layer = &self.layers[n - 1];
        if !layer.applies(ctx) {
            return self.cond_upto(ctx, n - 1);
        }
        let (mut jp, mut jq) = (layer.p, layer.q);
        for j in layer.anchor.len() + layer.tokens.len()..ctx.len() {
            jp *= self.draft.conditional(&ctx[..j]).mass()[ctx[j].index()];
            jq *= self.cond_upto(&ctx[..j], n - 1)[ctx[j].index()];
        }
        let pn = self.draft.conditional(ctx).into_inner();
        let qn = self.cond_upto(ctx, n - 1);
        let w = leftover(jp, jq, &pn, &qn, layer.k, layer.algorithm);
        let s: f64 = w.iter().sum();
        if s <= 0.0 {
            return qn;
        }
        w.iter().map(|x| x / s).collect()
    }
}

/// Unnormalized leftover target mass after the block with joints `(jp, jq)`.
fn leftover(jp: f64, jq: f64, pn: &[f64], qn: &[f64], k: usize, algorithm: OracleAlgorithm) -> Vec<f64> {
    pn.iter()
        .zip(qn)
        .map(|(&px, &qx)| {
            let (a, b) = (jp * px, jq * qx);
            match algorithm {
                OracleAlgorithm::Gbv => (b - a).max(0.0),
                OracleAlgorithm::SpectrGbv => {
                    if b == 0.0 {
                        0.0
                    } else {
                        b * (1.0 - (a / b).min(1.0)).powi(k as i32)
                    }
                }
            }
        })
        .collect()
}

/// Everything about one drafted row that the tree walk needs.
struct RowInfo {
    tokens: Vec<TokenId>,
    weight: f64,
    /// `(p(x^i), q(x^i))` for `i ∈ [0, L]`.
    joints: Vec<(f64, f64)>,
    p_cond: Vec<Vec<f64>>,
    q_cond: Vec<Vec<f64>>,
}

struct IterationLaw {
    emitted: BTreeMap<Vec<TokenId>, f64>,
    expected_tau: f64,
    accept_mass: BTreeMap<Vec<TokenId>, f64>,
    max_leaf_sum_err: f64,
    pruned_mass: f64,
    fallback_mass: f64,
}

struct Walker<'r> {
    rows: &'r [RowInfo],
    accept: HashMap<Vec<TokenId>, f64>,
    k: usize,
    l: usize,
    algorithm: OracleAlgorithm,
}

struct Leaf {
    prob: f64,
    tau: usize,
    f: usize,
}

impl Walker<'_> {
    fn spectr(
        &self,
        tuple: &[usize],
        at: (usize, usize),
        state: (usize, usize),
        h_set: &mut Vec<Vec<TokenId>>,
        pr: f64,
        sink: &mut (Vec<Leaf>, f64),
    ) {
        let (k, i) = at;
        let (tau, f) = state;
        if pr < PRUNE_BELOW {
            sink.1 += pr;
            return;
        }
        if k == self.k {
            sink.0.push(Leaf { prob: pr, tau, f });
            return;
        }
        let row = &self.rows[tuple[k]].tokens;
        let next_row = |tau: usize| (k + 1, tau + 1);
        if i < self.l {
            let s = &row[..i];
            if h_set.iter().any(|b| b == s) {
                return self.spectr(tuple, (k, i + 1), state, h_set, pr, sink);
            }
            let h = self.accept[s];
            if h > 0.0 {
                self.spectr(tuple, (k, i + 1), (i, k), h_set, pr * h, sink);
            }
            if h < 1.0 {
                h_set.push(s.to_vec());
                self.spectr(tuple, (k, i + 1), state, h_set, pr * (1.0 - h), sink);
                h_set.pop();
            }
        } else {
            if h_set.iter().any(|b| b == row) {
                return self.spectr(tuple, next_row(tau), state, h_set, pr, sink);
            }
            let h = self.accept[row.as_slice()];
            if h > 0.0 {
                if pr * h < PRUNE_BELOW {
                    sink.1 += pr * h;
                } else {
                    sink.0.push(Leaf {
                        prob: pr * h,
                        tau: self.l,
                        f: k,
                    });
                }
            }
            if h < 1.0 {
                h_set.push(row.clone());
                self.spectr(tuple, next_row(tau), state, h_set, pr * (1.0 - h), sink);
                h_set.pop();
            }
        }
    }

    fn gbv(&self, row: usize, i: usize, tau: usize, pr: f64, sink: &mut (Vec<Leaf>, f64)) {
        if pr < PRUNE_BELOW {
            sink.1 += pr;
            return;
        }
        if i > self.l {
            sink.0.push(Leaf { prob: pr, tau, f: 0 });
            return;
        }
        let a = self.accept[&self.rows[row].tokens[..i]];
        if a > 0.0 {
            self.gbv(row, i + 1, i, pr * a, sink);
        }
        if a < 1.0 {
            self.gbv(row, i + 1, tau, pr * (1.0 - a), sink);
        }
    }
}

/// Acceptance probability of each sub-block, from its joints and the next conditionals.
fn sub_block_accept(info: &RowInfo, i: usize, l: usize, k: usize, algorithm: OracleAlgorithm) -> f64 {
    let (ps, qs) = info.joints[i];
    match algorithm {
        OracleAlgorithm::SpectrGbv => {
            if i == l {
                let den = 1.0 - (1.0 - ps).powi(k as i32);
                if den < 1e-15 {
                    return 0.0;
                }
                (accept_target(ps, qs, k) / den).clamp(0.0, 1.0)
            } else {
                let w = leftover(ps, qs, &info.p_cond[i], &info.q_cond[i], k, algorithm);
                let s: f64 = w.iter().sum();
                let num = s - qs * (1.0 - min_ratio(ps, qs)).powi(k as i32);
                let den = 1.0 - (1.0 - ps).powi(k as i32) - qs + s;
                if den.abs() < 1e-15 {
                    return 1.0;
                }
                (num / den).clamp(0.0, 1.0)
            }
        }
        OracleAlgorithm::Gbv => {
            if qs == 0.0 {
                return 0.0;
            }
            let nu = qs / ps;
            if i == l {
                return nu.min(1.0);
            }
            let (mut num, mut den) = (0.0, 0.0);
            for (&px, &qx) in info.p_cond[i].iter().zip(&info.q_cond[i]) {
                num += (nu * qx - px).max(0.0);
                den += (px - nu * qx).max(0.0);
            }
            if den < 1e-15 {
                return 1.0;
            }
            (num / den).clamp(0.0, 1.0)
        }
    }
}

fn one_iteration(
    target: &OracleTarget<'_>,
    prefix: &[TokenId],
    l: usize,
    k: usize,
    algorithm: OracleAlgorithm,
) -> Result<IterationLaw, OracleError> {
    let v = target.raw.vocab_size();
    guard("V^(K·L)", (v as f64).powi((k * l) as i32))?;
    let rows: Vec<RowInfo> = all_blocks(v, l)
        .into_iter()
        .map(|tokens| {
            let mut ctx = prefix.to_vec();
            let mut joints = vec![(1.0, 1.0)];
            let (mut p_cond, mut q_cond) = (Vec::new(), Vec::new());
            for &x in &tokens {
                let pc = target.draft.conditional(&ctx).into_inner();
                let qc = target.cond(&ctx);
                let (jp, jq) = *joints.last().unwrap();
                joints.push((jp * pc[x.index()], jq * qc[x.index()]));
                p_cond.push(pc);
                q_cond.push(qc);
                ctx.push(x);
            }
            q_cond.push(target.cond(&ctx));
            RowInfo {
                weight: joints[l].0,
                tokens,
                joints,
                p_cond,
                q_cond,
            }
        })
        .collect();

    let mut accept = HashMap::new();
    for info in &rows {
        for i in 1..=l {
            accept
                .entry(info.tokens[..i].to_vec())
                .or_insert_with(|| sub_block_accept(info, i, l, k, algorithm));
        }
    }
    let walker = Walker {
        rows: &rows,
        accept,
        k,
        l,
        algorithm,
    };

    let mut law = IterationLaw {
        emitted: BTreeMap::new(),
        expected_tau: 0.0,
        accept_mass: BTreeMap::new(),
        max_leaf_sum_err: 0.0,
        pruned_mass: 0.0,
        fallback_mass: 0.0,
    };
    let mut residual_cache: HashMap<(usize, usize), (Vec<f64>, bool)> = HashMap::new();
    let mut tuple = vec![0usize; k];
    let n = rows.len();
    loop {
        let w: f64 = tuple.iter().map(|&r| rows[r].weight).product();
        if w > 0.0 {
            let mut sink = (Vec::new(), 0.0);
            match walker.algorithm {
                OracleAlgorithm::SpectrGbv => walker.spectr(&tuple, (0, 1), (0, 0), &mut Vec::new(), 1.0, &mut sink),
                OracleAlgorithm::Gbv => walker.gbv(tuple[0], 1, 0, 1.0, &mut sink),
            }
            let leaf_sum: f64 = sink.0.iter().map(|lf| lf.prob).sum::<f64>() + sink.1;
            law.max_leaf_sum_err = law.max_leaf_sum_err.max((leaf_sum - 1.0).abs());
            law.pruned_mass += w * sink.1;
            for leaf in sink.0 {
                let row_idx = tuple[leaf.f];
                let info = &rows[row_idx];
                let mass = w * leaf.prob;
                law.expected_tau += mass * leaf.tau as f64;
                for i in 1..=leaf.tau {
                    *law.accept_mass.entry(info.tokens[..i].to_vec()).or_insert(0.0) += mass;
                }
                let (dist, fell_back) = residual_cache
                    .entry((row_idx, leaf.tau))
                    .or_insert_with(|| extra_token_law(info, leaf.tau, l, k, algorithm))
                    .clone();
                if fell_back {
                    law.fallback_mass += mass;
                }
                for (y, &r) in dist.iter().enumerate() {
                    if r > 0.0 {
                        let mut e = info.tokens[..leaf.tau].to_vec();
                        e.push(TokenId(y as u32));
                        *law.emitted.entry(e).or_insert(0.0) += mass * r;
                    }
                }
            }
        }
        let mut pos = 0;
        while pos < k {
            tuple[pos] += 1;
            if tuple[pos] < n {
                break;
            }
            tuple[pos] = 0;
            pos += 1;
        }
        if pos == k {
            break;
        }
    }
    Ok(law)
}

/// Law of the extra token after a leaf with accepted length `tau`, and
/// whether the zero-mass fallback was needed.
fn extra_token_law(info: &RowInfo, tau: usize, l: usize, k: usize, algorithm: OracleAlgorithm) -> (Vec<f64>, bool) {
    let qn = &info.q_cond[tau];
    if tau == l {
        return (qn.clone(), false);
    }
    let (ps, qs) = info.joints[tau];
    let w = leftover(ps, qs, &info.p_cond[tau], qn, k, algorithm);
    let s: f64 = w.iter().sum();
    if s <= 0.0 {
        return (qn.clone(), true);
    }
    (w.iter().map(|x| x / s).collect(), false)
}

fn layer_for(
    target: &OracleTarget<'_>,
    anchor: &[TokenId],
    emitted: &[TokenId],
    l: usize,
    k: usize,
    algorithm: OracleAlgorithm,
) -> Option<Layer> {
    if emitted.len() >= l {
        return None;
    }
    let mut ctx = anchor.to_vec();
    let (mut p, mut q) = (1.0, 1.0);
    for &x in emitted {
        p *= target.draft.conditional(&ctx).mass()[x.index()];
        q *= target.cond(&ctx)[x.index()];
        ctx.push(x);
    }
    Some(Layer {
        anchor: anchor.to_vec(),
        tokens: emitted.to_vec(),
        p,
        q,
        l,
        k,
        algorithm,
    })
}

/// Extends `ctx` to `len` tokens with the exact chain of `target`.
fn complete(target: &OracleTarget<'_>, ctx: &mut Vec<TokenId>, len: usize, mass: f64, start: usize, out: &mut BTreeMap<Vec<TokenId>, f64>) {
    if ctx.len() == len {
        *out.entry(ctx[start..].to_vec()).or_insert(0.0) += mass;
        return;
    }
    let c = target.cond(ctx);
    for (x, &r) in c.iter().enumerate() {
        if r > 0.0 {
            ctx.push(TokenId(x as u32));
            complete(target, ctx, len, mass * r, start, out);
            ctx.pop();
        }
    }
}

/// Exact event-tree report for one or two decoding iterations.
#[derive(Debug, Clone)]
pub struct ExactReport {
    pub algorithm: OracleAlgorithm,
    pub vocab_size: usize,
    pub l: usize,
    pub k: usize,
    pub iterations: usize,
    /// Law of the first `iterations·(L+1)` output tokens after the prefix.
    pub output: BTreeMap<Vec<TokenId>, f64>,
    /// E[τ] of the first iteration.
    pub expected_tau: f64,
    pub bound: f64,
    /// `P(τ ≥ |s|, t^{|s|} = s)` for the first iteration.
    pub accept_mass: BTreeMap<Vec<TokenId>, f64>,
    /// Max over all output prefixes of `|P(O^i = x^i) - q(x^i)|`.
    pub max_marginal_dev: f64,
    /// Max over all sub-blocks of `|accept_mass(s) - q(s)[1 - (1 - min{p/q, 1})^K]|`.
    pub max_accept_mass_dev: f64,
    /// Max over draft tuples of `|Σ leaves - 1|` (pruned branches included).
    pub max_leaf_sum_err: f64,
    pub pruned_mass: f64,
    /// Probability of leaves that needed the zero-mass fallback.
    pub fallback_mass: f64,
}

impl ExactReport {
    /// `P(O^i = x^i)` for an output prefix.
    pub fn marginal(&self, prefix: &[TokenId]) -> f64 {
        self.output
            .iter()
            .filter(|(s, _)| s.starts_with(prefix))
            .map(|(_, m)| m)
            .sum()
    }

    /// Largest absolute difference from another report over outputs,
    /// E[τ] and acceptance masses.
    pub fn max_difference(&self, other: &ExactReport) -> f64 {
        fn map_diff(a: &BTreeMap<Vec<TokenId>, f64>, b: &BTreeMap<Vec<TokenId>, f64>) -> f64 {
            a.keys()
                .chain(b.keys())
                .map(|s| (a.get(s).unwrap_or(&0.0) - b.get(s).unwrap_or(&0.0)).abs())
                .fold(0.0, f64::max)
        }
        map_diff(&self.output, &other.output)
            .max(map_diff(&self.accept_mass, &other.accept_mass))
            .max((self.expected_tau - other.expected_tau).abs())
    }
}

pub fn exact_output_distribution(
    pair: &ModelPair,
    prefix: &[TokenId],
    l: usize,
    k: usize,
    iterations: usize,
    algorithm: OracleAlgorithm,
) -> Result<ExactReport, OracleError> {
    let k = if algorithm == OracleAlgorithm::Gbv { 1 } else { k };
    let v = pair.vocab_size();
    match iterations {
        1 => {}
        2 => guard("V^(2KL+2)", (v as f64).powi((2 * k * l + 2) as i32))?,
        n => return Err(OracleError::Iterations(n)),
    }
    let (draft, raw) = (pair.draft_view(), pair.target_view());
    let base = OracleTarget {
        raw: &raw,
        draft: &draft,
        layers: Vec::new(),
    };
    let first = one_iteration(&base, prefix, l, k, algorithm)?;
    let out_len = prefix.len() + iterations * (l + 1);

    let mut output = BTreeMap::new();
    let mut pruned_mass = first.pruned_mass;
    let mut fallback_mass = first.fallback_mass;
    let mut max_leaf_sum_err = first.max_leaf_sum_err;
    for (e1, &m1) in &first.emitted {
        let mut t1 = base.clone();
        t1.layers.extend(layer_for(&base, prefix, e1, l, k, algorithm));
        let mut ctx: Vec<TokenId> = prefix.iter().chain(e1).copied().collect();
        if iterations == 1 {
            complete(&t1, &mut ctx, out_len, m1, prefix.len(), &mut output);
            continue;
        }
        let second = one_iteration(&t1, &ctx, l, k, algorithm)?;
        pruned_mass += m1 * second.pruned_mass;
        fallback_mass += m1 * second.fallback_mass;
        max_leaf_sum_err = max_leaf_sum_err.max(second.max_leaf_sum_err);
        for (e2, &m2) in &second.emitted {
            let mut t2 = t1.clone();
            t2.layers.extend(layer_for(&t1, &ctx, e2, l, k, algorithm));
            let mut ctx2: Vec<TokenId> = ctx.iter().chain(e2).copied().collect();
            complete(&t2, &mut ctx2, out_len, m1 * m2, prefix.len(), &mut output);
        }
    }

    let mut max_marginal_dev: f64 = 0.0;
    let mut marginals: BTreeMap<Vec<TokenId>, f64> = BTreeMap::new();
    for (s, &m) in &output {
        for i in 1..=s.len() {
            *marginals.entry(s[..i].to_vec()).or_insert(0.0) += m;
        }
    }
    for len in 1..=out_len - prefix.len() {
        for s in all_blocks(v, len) {
            let got = marginals.get(&s).copied().unwrap_or(0.0);
            max_marginal_dev = max_marginal_dev.max((got - joint_of(&raw, prefix, &s)).abs());
        }
    }

    let mut max_accept_mass_dev: f64 = 0.0;
    for len in 1..=l {
        for s in all_blocks(v, len) {
            let expected = accept_target(joint_of(&draft, prefix, &s), joint_of(&raw, prefix, &s), k);
            let got = first.accept_mass.get(&s).copied().unwrap_or(0.0);
            max_accept_mass_dev = max_accept_mass_dev.max((got - expected).abs());
        }
    }

    Ok(ExactReport {
        algorithm,
        vocab_size: v,
        l,
        k,
        iterations,
        output,
        expected_tau: first.expected_tau,
        bound: bound_k(pair, prefix, l, k)?,
        accept_mass: first.accept_mass,
        max_marginal_dev,
        max_accept_mass_dev,
        max_leaf_sum_err,
        pruned_mass,
        fallback_mass,
    })
}

/// Exact E[τ] of one multi-draft block verification, by enumeration.
pub fn exact_expected_tau(pair: &ModelPair, prefix: &[TokenId], l: usize, k: usize) -> Result<f64, OracleError> {
    let (draft, raw) = (pair.draft_view(), pair.target_view());
    let base = OracleTarget {
        raw: &raw,
        draft: &draft,
        layers: Vec::new(),
    };
    Ok(one_iteration(&base, prefix, l, k, OracleAlgorithm::SpectrGbv)?.expected_tau)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub l: usize,
    /// `(K, Bound(K))` in the order given.
    pub values: Vec<(usize, f64)>,
    pub strictly_increasing: bool,
    pub within_l: bool,
    /// `L - Bound(K)` is strictly decreasing along the list.
    pub gap_decreasing: bool,
}

impl BoundReport {
    pub fn holds(&self) -> bool {
        self.strictly_increasing && self.within_l && self.gap_decreasing
    }
}

pub fn bound_properties(pair: &ModelPair, prefix: &[TokenId], l: usize, ks: &[usize]) -> Result<BoundReport, OracleError> {
    let values = ks
        .iter()
        .map(|&k| bound_k(pair, prefix, l, k).map(|b| (k, b)))
        .collect::<Result<Vec<_>, _>>()?;
    let strictly_increasing = values.windows(2).all(|w| w[1].1 > w[0].1);
    let within_l = values.iter().all(|&(_, b)| b <= l as f64 + 1e-12);
    let gap_decreasing = values.windows(2).all(|w| l as f64 - w[1].1 < l as f64 - w[0].1);
    Ok(BoundReport {
        l,
        values,
        strictly_increasing,
        within_l,
        gap_decreasing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{random_model, MarkovModel};
    use crate::prob::Distribution;

    fn tok(s: &str) -> Vec<TokenId> {
        s.bytes().map(|b| TokenId(u32::from(b - b'a'))).collect()
    }

    #[test]
    fn canonical_bound() {
        let pair = ModelPair::canonical();
        let levels = bound_levels(&pair, &[], 2, 2).unwrap();
        assert!((levels[0] - 0.8875).abs() < 1e-12);
        assert!((levels[1] - 0.76234375).abs() < 1e-12);
        assert!((bound_k(&pair, &[], 2, 2).unwrap() - 1.64984375).abs() < 1e-12);
        assert!((bound_k(&pair, &[], 2, 1).unwrap() - 1.31).abs() < 1e-12);
    }

    #[test]
    fn matched_models_reach_l() {
        let m = random_model(3, 1, 2, 1.0).unwrap();
        let pair = ModelPair::new(m.clone(), m, 1.0).unwrap();
        for k in [1, 2, 3] {
            assert!((bound_k(&pair, &[], 2, k).unwrap() - 2.0).abs() < 1e-12);
        }
        let rep = exact_output_distribution(&pair, &[], 2, 1, 1, OracleAlgorithm::SpectrGbv).unwrap();
        assert!((rep.expected_tau - 2.0).abs() < 1e-12);
        assert!(rep.max_marginal_dev < 1e-12);
    }

    #[test]
    fn matched_models_with_two_drafts_stop_short() {
        // order 0, q = p = (0.5, 0.5), L = 1, K = 2: the full-block test
        // h = 0.5 / 0.75 fires on the first row, else on a distinct second row
        let q = Distribution::new(vec![0.5, 0.5]).unwrap();
        let pair = ModelPair::new(MarkovModel::order_zero(q.clone()), MarkovModel::order_zero(q), 1.0).unwrap();
        let e = exact_expected_tau(&pair, &[], 1, 2).unwrap();
        assert!((e - 7.0 / 9.0).abs() < 1e-12, "{e}");
    }

    #[test]
    fn single_draft_trees_coincide() {
        for seed in 0..4 {
            let pair = ModelPair::new(random_model(3, 1, seed, 1.0).unwrap(), random_model(3, 1, seed + 50, 1.0).unwrap(), 1.0)
                .unwrap();
            let a = exact_output_distribution(&pair, &[], 3, 1, 1, OracleAlgorithm::SpectrGbv).unwrap();
            let b = exact_output_distribution(&pair, &[], 3, 1, 1, OracleAlgorithm::Gbv).unwrap();
            assert!(a.max_difference(&b) < 1e-12);
            assert!((a.expected_tau - a.bound).abs() < 1e-12);
            assert!(a.max_marginal_dev < 1e-12, "{}", a.max_marginal_dev);
            assert!(a.max_accept_mass_dev < 1e-12);
        }
    }

    #[test]
    fn single_draft_two_iterations_preserve_target() {
        let pair = ModelPair::new(random_model(2, 1, 8, 1.0).unwrap(), random_model(2, 1, 9, 1.0).unwrap(), 1.0).unwrap();
        let rep = exact_output_distribution(&pair, &[TokenId(1)], 2, 1, 2, OracleAlgorithm::SpectrGbv).unwrap();
        assert_eq!(rep.output.keys().next().unwrap().len(), 6);
        assert!(rep.max_marginal_dev < 1e-12, "{}", rep.max_marginal_dev);
        assert!(rep.max_leaf_sum_err < 1e-12);
    }

    #[test]
    fn canonical_two_draft_tree() {
        // The literal block scan with two drafts; values from an independent
        // enumeration of the same scan.
        let pair = ModelPair::canonical();
        let rep = exact_output_distribution(&pair, &[], 2, 2, 1, OracleAlgorithm::SpectrGbv).unwrap();
        assert!((rep.expected_tau - 1.411_308_029_766_861).abs() < 1e-12);
        let expected = [
            ("a", 0.609_537_749_154_616_1),
            ("aa", 0.355_047_831_632_653_13),
            ("ab", 0.128_530_612_244_897_98),
            ("b", 0.159_095_918_367_346_96),
            ("ba", 0.128_530_612_244_897_98),
            ("bb", 0.030_565_306_122_448_982),
        ];
        for (s, m) in expected {
            assert!((rep.accept_mass[&tok(s)] - m).abs() < 1e-12, "{s}");
        }
        assert!(rep.max_leaf_sum_err < 1e-12);
        assert_eq!(rep.pruned_mass, 0.0);
    }

    #[test]
    fn bound_monotone_in_k() {
        let pair = ModelPair::canonical();
        let rep = bound_properties(&pair, &[], 2, &[1, 2, 4, 8, 16, 32, 64]).unwrap();
        assert!(rep.holds());
        assert!(2.0 - rep.values.last().unwrap().1 < 0.01);
        let q = Distribution::new(vec![0.5, 0.5]).unwrap();
        let same = ModelPair::new(MarkovModel::order_zero(q.clone()), MarkovModel::order_zero(q), 1.0).unwrap();
        assert!(!bound_properties(&same, &[], 2, &[1, 2]).unwrap().strictly_increasing);
    }

    #[test]
    fn guards() {
        let pair = ModelPair::new(random_model(10, 0, 1, 1.0).unwrap(), random_model(10, 0, 2, 1.0).unwrap(), 1.0).unwrap();
        assert!(matches!(bound_k(&pair, &[], 7, 2), Err(OracleError::TooLarge { .. })));
        assert!(matches!(exact_expected_tau(&pair, &[], 3, 3), Err(OracleError::TooLarge { .. })));
    }
}
