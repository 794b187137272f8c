//! Neighbour generation by word substitution.
//!
//! For every replaceable position the substitution oracle proposes
//! replacement tokens. A proposal's suitability is its probability
//! renormalized over everything except the original token,
//! `p_swap = p(w) / (1 - p(original))`. Neighbours with `m` replacements at
//! distinct positions are ranked by the joint suitability of their swaps
//! (the sum of the `p_swap` values by default) and the `n` best are kept.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use serde::{Deserialize, Serialize};

use crate::corpus::TextSample;
use crate::scoring::{check_position, derive_seed, ScoringError, SubstitutionOracle, TokenDistribution, Tokenized};

#[derive(Debug, Clone, thiserror::Error)]
pub enum NeighbourError {
    #[error(transparent)]
    Oracle(#[from] ScoringError),
    #[error("degenerate distribution at position {position}: original token has probability {original_prob}")]
    DegenerateDistribution { position: usize, original_prob: f64 },
    #[error("fewer than m replaceable positions: need {m}, found {found}")]
    TooFewPositions { m: usize, found: usize },
    #[error("no neighbours")]
    NoNeighbours,
    #[error("invalid neighbour config: {0}")]
    InvalidConfig(String),
}

/// How the per-swap suitabilities of a multi-word neighbour are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointRule {
    #[default]
    Sum,
    Product,
}

impl JointRule {
    fn identity(self) -> f64 {
        match self {
            Self::Sum => 0.0,
            Self::Product => 1.0,
        }
    }

    fn combine(self, acc: f64, p: f64) -> f64 {
        match self {
            Self::Sum => acc + p,
            Self::Product => acc * p,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NeighbourConfig {
    pub n: usize,
    pub m: usize,
    pub dropout_p: f64,
    /// Candidates requested from the oracle per position.
    pub top_k: usize,
    /// Candidates kept per position before combining, when `m >= 2`.
    pub per_position_shortlist: usize,
    pub seed: u64,
    pub joint: JointRule,
}

impl Default for NeighbourConfig {
    fn default() -> Self {
        Self {
            n: 100,
            m: 1,
            dropout_p: 0.7,
            top_k: 200,
            per_position_shortlist: 20,
            seed: 0,
            joint: JointRule::Sum,
        }
    }
}

impl NeighbourConfig {
    pub fn validate(&self) -> Result<(), NeighbourError> {
        let bad = |m: &str| Err(NeighbourError::InvalidConfig(m.to_string()));
        if self.n == 0 {
            return bad("n must be positive");
        }
        if self.m == 0 {
            return bad("m must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad("dropout_p must lie in [0, 1)");
        }
        if self.top_k == 0 || self.per_position_shortlist == 0 {
            return bad("top_k and per_position_shortlist must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwapCandidate {
    /// 1-based.
    pub position: usize,
    pub original_token: String,
    pub replacement_token: String,
    pub p_swap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbour {
    pub text: String,
    /// Ascending, pairwise distinct.
    pub swapped_positions: Vec<usize>,
    pub swaps: Vec<SwapCandidate>,
    pub joint_suitability: f64,
}

/// Suitability of every candidate in `dist`, in the distribution's order.
pub fn swaps_from_distribution(dist: &TokenDistribution) -> Result<Vec<SwapCandidate>, NeighbourError> {
    if dist.original_prob >= 1.0 - 1e-12 {
        return Err(NeighbourError::DegenerateDistribution {
            position: dist.position,
            original_prob: dist.original_prob,
        });
    }
    let rest = 1.0 - dist.original_prob;
    Ok(dist
        .candidates
        .iter()
        .filter(|(tok, _)| *tok != dist.original_token)
        .map(|(tok, p)| SwapCandidate {
            position: dist.position,
            original_token: dist.original_token.clone(),
            replacement_token: tok.clone(),
            p_swap: p / rest,
        })
        .collect())
}

fn sort_swaps(swaps: &mut [SwapCandidate]) {
    swaps.sort_by(|a, b| {
        b.p_swap
            .total_cmp(&a.p_swap)
            .then_with(|| a.replacement_token.cmp(&b.replacement_token))
    });
}

/// Tokenization of a sample plus everything needed to splice replacements.
struct Prepared<'a, S: ?Sized> {
    oracle: &'a S,
    sample: &'a TextSample,
    tokenized: Tokenized,
}

impl<'a, S: SubstitutionOracle + ?Sized> Prepared<'a, S> {
    fn new(oracle: &'a S, sample: &'a TextSample) -> Result<Self, NeighbourError> {
        let tokenized = oracle.tokenize(&sample.text)?;
        Ok(Self {
            oracle,
            sample,
            tokenized,
        })
    }

    fn replaceable_positions(&self) -> Vec<usize> {
        (1..=self.tokenized.len())
            .filter(|&p| check_position(self.oracle, &self.tokenized, p).is_ok())
            .collect()
    }

    fn splice(&self, swaps: &[&SwapCandidate]) -> String {
        let reps: Vec<(usize, &str)> = swaps
            .iter()
            .map(|s| (s.position, self.oracle.surface(&s.replacement_token)))
            .collect();
        self.tokenized.splice(&self.sample.text, &reps)
    }

    fn swaps_at(&self, position: usize, config: &NeighbourConfig) -> Result<Vec<SwapCandidate>, NeighbourError> {
        check_position(self.oracle, &self.tokenized, position)?;
        let dist = self.oracle.distribution(
            &self.sample.text,
            &self.tokenized,
            position,
            config.dropout_p,
            config.top_k,
            derive_seed(config.seed, &self.sample.id, position),
        )?;
        let mut swaps = swaps_from_distribution(&dist)?;
        swaps.retain(|s| {
            let surface = self.oracle.surface(&s.replacement_token);
            !self.oracle.is_special(&s.replacement_token)
                && !surface.is_empty()
                && !surface.chars().any(char::is_whitespace)
                && self.splice(&[s]) != self.sample.text
        });
        sort_swaps(&mut swaps);
        Ok(swaps)
    }
}

/// Scored swaps for one position, sorted by `p_swap` descending (ties by
/// replacement token). Candidates that would reproduce the original text are
/// dropped.
pub fn candidate_swaps<S: SubstitutionOracle + ?Sized>(
    oracle: &S,
    sample: &TextSample,
    position: usize,
    config: &NeighbourConfig,
) -> Result<Vec<SwapCandidate>, NeighbourError> {
    Prepared::new(oracle, sample)?.swaps_at(position, config)
}

/// A ranked combination: indices into per-position swap lists.
#[derive(Debug, Clone)]
struct Ranked {
    joint: f64,
    positions: Vec<usize>,
    tokens: Vec<String>,
    picks: Vec<(usize, usize)>,
}

/// Ranking order: higher joint first, then positions ascending, then tokens
/// ascending. `Less` means ranked earlier.
fn rank_cmp(a: &Ranked, b: &Ranked) -> Ordering {
    b.joint
        .total_cmp(&a.joint)
        .then_with(|| a.positions.cmp(&b.positions))
        .then_with(|| a.tokens.cmp(&b.tokens))
}

impl PartialEq for Ranked {
    fn eq(&self, other: &Self) -> bool {
        rank_cmp(self, other) == Ordering::Equal
    }
}
impl Eq for Ranked {}
impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Ranked {
    /// Max-heap top is the worst-ranked entry.
    fn cmp(&self, other: &Self) -> Ordering {
        rank_cmp(self, other)
    }
}

/// Keeps the best `cap` entries seen so far.
struct TopN {
    cap: usize,
    heap: BinaryHeap<Ranked>,
}

impl TopN {
    fn new(cap: usize) -> Self {
        Self {
            cap,
            heap: BinaryHeap::with_capacity(cap + 1),
        }
    }

    /// Lowest joint score still worth exploring; `None` while not full.
    fn floor(&self) -> Option<f64> {
        (self.heap.len() >= self.cap).then(|| self.heap.peek().map(|r| r.joint)).flatten()
    }

    fn push(&mut self, r: Ranked) {
        if self.heap.len() < self.cap {
            self.heap.push(r);
        } else if let Some(worst) = self.heap.peek() {
            if rank_cmp(&r, worst) == Ordering::Less {
                self.heap.pop();
                self.heap.push(r);
            }
        }
    }

    fn into_sorted(self) -> Vec<Ranked> {
        self.heap.into_sorted_vec()
    }
}

/// Depth-first enumeration of one candidate per chosen position, pruned by an
/// upper bound on the joint score (candidate lists are sorted descending).
fn search_combination(
    lists: &[(usize, &[SwapCandidate])],
    chosen: &[usize],
    rule: JointRule,
    depth: usize,
    acc: f64,
    picks: &mut Vec<(usize, usize)>,
    top: &mut TopN,
) {
    if depth == chosen.len() {
        let positions = picks.iter().map(|&(li, _)| lists[li].0).collect();
        let tokens = picks
            .iter()
            .map(|&(li, ci)| lists[li].1[ci].replacement_token.clone())
            .collect();
        top.push(Ranked {
            joint: acc,
            positions,
            tokens,
            picks: picks.clone(),
        });
        return;
    }
    let li = chosen[depth];
    for (ci, swap) in lists[li].1.iter().enumerate() {
        let next = rule.combine(acc, swap.p_swap);
        if let Some(floor) = top.floor() {
            let bound = chosen[depth + 1..]
                .iter()
                .fold(next, |b, &lj| rule.combine(b, lists[lj].1[0].p_swap));
            if bound < floor {
                // later candidates at this depth are no better
                break;
            }
        }
        picks.push((li, ci));
        search_combination(lists, chosen, rule, depth + 1, next, picks, top);
        picks.pop();
    }
}

fn for_each_combination(k: usize, len: usize, f: &mut impl FnMut(&[usize])) {
    fn go(start: usize, k: usize, len: usize, cur: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
        if cur.len() == k {
            f(cur);
            return;
        }
        for i in start..=len - (k - cur.len()) {
            cur.push(i);
            go(i + 1, k, len, cur, f);
            cur.pop();
        }
    }
    if k <= len {
        go(0, k, len, &mut Vec::with_capacity(k), f);
    }
}

fn collect_swap_lists<S: SubstitutionOracle + ?Sized>(
    prepared: &Prepared<'_, S>,
    config: &NeighbourConfig,
) -> Result<Vec<(usize, Vec<SwapCandidate>)>, NeighbourError> {
    config.validate()?;
    let positions = prepared.replaceable_positions();
    if positions.len() < config.m {
        return Err(NeighbourError::TooFewPositions {
            m: config.m,
            found: positions.len(),
        });
    }
    positions
        .into_iter()
        .map(|p| Ok((p, prepared.swaps_at(p, config)?)))
        .collect()
}

fn materialize<S: SubstitutionOracle + ?Sized>(
    prepared: &Prepared<'_, S>,
    lists: &[(usize, &[SwapCandidate])],
    ranked: Vec<Ranked>,
    n: usize,
) -> Vec<Neighbour> {
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(n);
    for r in ranked {
        let swaps: Vec<&SwapCandidate> = r.picks.iter().map(|&(li, ci)| &lists[li].1[ci]).collect();
        let text = prepared.splice(&swaps);
        if text == prepared.sample.text || !seen.insert(text.clone()) {
            continue;
        }
        out.push(Neighbour {
            text,
            swapped_positions: r.positions,
            swaps: swaps.into_iter().cloned().collect(),
            joint_suitability: r.joint,
        });
        if out.len() == n {
            break;
        }
    }
    out
}

fn rank_all(
    lists: &[(usize, &[SwapCandidate])],
    m: usize,
    rule: JointRule,
    cap: usize,
) -> (Vec<Ranked>, usize) {
    let mut top = TopN::new(cap);
    let mut total = 0usize;
    for_each_combination(m, lists.len(), &mut |chosen| {
        let size: usize = chosen.iter().map(|&li| lists[li].1.len()).product();
        total = total.saturating_add(size);
        if size > 0 {
            search_combination(lists, chosen, rule, 0, rule.identity(), &mut Vec::with_capacity(m), &mut top);
        }
    });
    (top.into_sorted(), total)
}

fn generate_from_lists<S: SubstitutionOracle + ?Sized>(
    prepared: &Prepared<'_, S>,
    lists: &[(usize, &[SwapCandidate])],
    config: &NeighbourConfig,
) -> Result<Vec<Neighbour>, NeighbourError> {
    // Duplicate texts are rare; widen the candidate pool until n distinct
    // neighbours are found or the pool is exhausted.
    let mut cap = config.n;
    loop {
        let (ranked, total) = rank_all(lists, config.m, config.joint, cap);
        let exhausted = ranked.len() >= total;
        let neighbours = materialize(prepared, lists, ranked, config.n);
        if neighbours.len() == config.n || exhausted {
            if neighbours.is_empty() {
                return Err(NeighbourError::NoNeighbours);
            }
            return Ok(neighbours);
        }
        cap = cap.saturating_mul(2);
    }
}

/// The `n` most suitable neighbours with `m` replacements each, best first.
///
/// For `m >= 2` only the best `per_position_shortlist` candidates of each
/// position take part in combinations.
pub fn generate_neighbours<S: SubstitutionOracle + ?Sized>(
    oracle: &S,
    sample: &TextSample,
    config: &NeighbourConfig,
) -> Result<Vec<Neighbour>, NeighbourError> {
    let prepared = Prepared::new(oracle, sample)?;
    let owned = collect_swap_lists(&prepared, config)?;
    let shortlist = if config.m >= 2 {
        config.per_position_shortlist
    } else {
        usize::MAX
    };
    let lists: Vec<(usize, &[SwapCandidate])> = owned
        .iter()
        .map(|(p, swaps)| (*p, &swaps[..swaps.len().min(shortlist)]))
        .collect();
    generate_from_lists(&prepared, &lists, config)
}

/// Enumerates every combination without shortlisting or pruning. Exponential;
/// kept as a reference for testing [`generate_neighbours`].
pub fn exhaustive_neighbours<S: SubstitutionOracle + ?Sized>(
    oracle: &S,
    sample: &TextSample,
    config: &NeighbourConfig,
) -> Result<Vec<Neighbour>, NeighbourError> {
    let prepared = Prepared::new(oracle, sample)?;
    let owned = collect_swap_lists(&prepared, config)?;
    let lists: Vec<(usize, &[SwapCandidate])> = owned.iter().map(|(p, s)| (*p, &s[..])).collect();
    let mut all = Vec::new();
    for_each_combination(config.m, lists.len(), &mut |chosen| {
        let mut picks: Vec<Vec<(usize, usize)>> = vec![Vec::new()];
        for &li in chosen {
            picks = picks
                .into_iter()
                .flat_map(|p| {
                    (0..lists[li].1.len()).map(move |ci| {
                        let mut q = p.clone();
                        q.push((li, ci));
                        q
                    })
                })
                .collect();
        }
        for p in picks {
            let joint = p
                .iter()
                .fold(config.joint.identity(), |acc, &(li, ci)| config.joint.combine(acc, lists[li].1[ci].p_swap));
            all.push(Ranked {
                joint,
                positions: p.iter().map(|&(li, _)| lists[li].0).collect(),
                tokens: p
                    .iter()
                    .map(|&(li, ci)| lists[li].1[ci].replacement_token.clone())
                    .collect(),
                picks: p,
            });
        }
    });
    all.sort_by(rank_cmp);
    let out = materialize(&prepared, &lists, all, config.n);
    if out.is_empty() {
        return Err(NeighbourError::NoNeighbours);
    }
    Ok(out)
}
