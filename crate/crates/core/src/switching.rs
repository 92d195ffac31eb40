//! The switching maps, their inverses and the coupled configuration.

use rand::Rng;
use thiserror::Error;

use crate::combinatorics::{HalfEdge, Motif, Pair};
use crate::matching::{contains, Matching};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SwitchError {
    #[error("stage {stage}: matching lacks motif pair {lo}-{hi}")]
    MissingPair { stage: usize, lo: u32, hi: u32 },
    #[error("stage {stage}: index {b} outside 1..={range}")]
    IndexOutOfRange { stage: usize, b: u32, range: u32 },
    #[error("expected {expected} indices, got {got}")]
    WrongLength { expected: usize, got: usize },
}

/// One index per stage; stage `l` (1-based) ranges over `1..=N-2(e-l)-1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SwitchIndices(pub Vec<u32>);

/// Size of the stage-`stage` choice set.
pub fn stage_range(total: u32, edges: usize, stage: usize) -> u32 {
    total - 2 * (edges - stage) as u32 - 1
}

/// Half-edges not eligible at `stage`, ascending.
fn excluded(alpha: &Motif, stage: usize) -> Vec<u32> {
    let pairs = alpha.pairs();
    let mut ex = vec![pairs[stage - 1].lo.0];
    for p in &pairs[stage..] {
        ex.push(p.lo.0);
        ex.push(p.hi.0);
    }
    ex.sort_unstable();
    ex
}

/// The `b`-th smallest eligible half-edge.
fn select(ex: &[u32], b: u32) -> HalfEdge {
    let mut t = b;
    for &x in ex {
        if x <= t {
            t += 1;
        }
    }
    HalfEdge(t)
}

/// Rank of an eligible half-edge within the choice set.
fn rank(ex: &[u32], h: HalfEdge) -> u32 {
    h.0 - ex.iter().filter(|&&x| x < h.0).count() as u32
}

fn require_pairs(g: &Matching, alpha: &Motif, from: usize) -> Result<(), SwitchError> {
    for (i, p) in alpha.pairs().iter().enumerate().skip(from - 1) {
        if !g.has_pair(*p) {
            return Err(SwitchError::MissingPair { stage: i + 1, lo: p.lo.0, hi: p.hi.0 });
        }
    }
    Ok(())
}

/// Stage `stage` of the switching. Needs motif pairs `stage..=e` present in `g`.
pub fn switch_step(g: &Matching, alpha: &Motif, stage: usize, b: u32) -> Result<Matching, SwitchError> {
    let e = alpha.pairs().len();
    let range = stage_range(g.total(), e, stage);
    if b == 0 || b > range {
        return Err(SwitchError::IndexOutOfRange { stage, b, range });
    }
    require_pairs(g, alpha, stage)?;
    Ok(step_unchecked(g.clone(), alpha, stage, b))
}

fn step_unchecked(mut g: Matching, alpha: &Motif, stage: usize, b: u32) -> Matching {
    let Pair { lo, hi } = alpha.pairs()[stage - 1];
    let t1 = select(&excluded(alpha, stage), b);
    if t1 != hi {
        let t2 = g.partner(t1);
        g.rewire((lo, t1), (hi, t2));
    }
    g
}

/// The composed switching over all stages.
pub fn switch(g: &Matching, alpha: &Motif, b: &SwitchIndices) -> Result<Matching, SwitchError> {
    let e = alpha.pairs().len();
    if b.0.len() != e {
        return Err(SwitchError::WrongLength { expected: e, got: b.0.len() });
    }
    require_pairs(g, alpha, 1)?;
    for (i, &bi) in b.0.iter().enumerate() {
        let range = stage_range(g.total(), e, i + 1);
        if bi == 0 || bi > range {
            return Err(SwitchError::IndexOutOfRange { stage: i + 1, b: bi, range });
        }
    }
    let mut cur = g.clone();
    for (i, &bi) in b.0.iter().enumerate() {
        cur = step_unchecked(cur, alpha, i + 1, bi);
    }
    Ok(cur)
}

/// Inverse of the composed switching; total on all matchings.
pub fn unswitch(out: &Matching, alpha: &Motif) -> (Matching, SwitchIndices) {
    let e = alpha.pairs().len();
    let mut g = out.clone();
    let mut b = vec![0u32; e];
    for stage in (1..=e).rev() {
        let Pair { lo, hi } = alpha.pairs()[stage - 1];
        let ex = excluded(alpha, stage);
        let t1 = g.partner(lo);
        if t1 == hi {
            b[stage - 1] = rank(&ex, hi);
        } else {
            let t2 = g.partner(hi);
            g.rewire((lo, hi), (t1, t2));
            b[stage - 1] = rank(&ex, t1);
        }
    }
    (g, SwitchIndices(b))
}

/// Indices that leave a configuration containing the motif unchanged.
pub fn identity_indices(alpha: &Motif) -> SwitchIndices {
    let e = alpha.pairs().len();
    SwitchIndices((1..=e).map(|l| rank(&excluded(alpha, l), alpha.pairs()[l - 1].hi)).collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CouplingSample {
    pub base: Matching,
    pub coupled: Matching,
    pub alpha: Motif,
    pub indices: Option<SwitchIndices>,
}

impl CouplingSample {
    /// Pairs present in the coupled configuration but not in the base.
    pub fn changed_pairs(&self) -> Vec<Pair> {
        self.coupled.pairs().into_iter().filter(|p| !self.base.has_pair(*p)).collect()
    }
}

/// Draws the switching indices only when the motif is present; otherwise returns the base.
pub fn couple<R: Rng + ?Sized>(g: &Matching, alpha: &Motif, rng: &mut R) -> CouplingSample {
    if !contains(g, alpha) {
        return CouplingSample { base: g.clone(), coupled: g.clone(), alpha: alpha.clone(), indices: None };
    }
    let e = alpha.pairs().len();
    let b = SwitchIndices((1..=e).map(|l| rng.gen_range(1..=stage_range(g.total(), e, l))).collect());
    let coupled = switch(g, alpha, &b).expect("motif present and indices in range");
    CouplingSample { base: g.clone(), coupled, alpha: alpha.clone(), indices: Some(b) }
}

pub fn coupled_indicators(sample: &CouplingSample, betas: &[Motif]) -> Vec<bool> {
    betas.iter().map(|beta| contains(&sample.coupled, beta)).collect()
}

/// Every index vector of the grid for a motif with `edges` pairs, lexicographic.
pub fn index_grid(total: u32, edges: usize) -> Vec<SwitchIndices> {
    let mut out = vec![Vec::new()];
    for l in 1..=edges {
        let r = stage_range(total, edges, l);
        out = out
            .into_iter()
            .flat_map(|prefix| {
                (1..=r).map(move |b| {
                    let mut v = prefix.clone();
                    v.push(b);
                    v
                })
            })
            .collect();
    }
    out.into_iter().map(SwitchIndices).collect()
}
