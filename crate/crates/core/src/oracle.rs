//! Exhaustive small-N oracle: every perfect matching, every switching cell, exact rationals.

use std::collections::{BTreeMap, HashMap};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::combinatorics::{
    class_counts, double_falling, enumerate_motifs, relation, success_probability_exact, DegreeSequence, Motif,
    MotifClass,
};
use crate::matching::{census, contains, Matching, MotifStatistics};
use crate::switching::{index_grid, switch};

pub const MATCHING_CAP: u32 = 16;
pub const GRID_CAP: u128 = 10_000_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OracleError {
    #[error("N = {total} exceeds the oracle cap {cap}")]
    TooLarge { total: u32, cap: u32 },
    #[error("coupling grid of {cells} cells exceeds {cap}")]
    GridTooLarge { cells: u128, cap: u128 },
    #[error("N = {0} is odd")]
    OddTotal(u32),
    #[error("motif does not belong to this degree sequence")]
    ForeignMotif,
}

pub fn rational_string(q: &BigRational) -> String {
    format!("{}/{}", q.numer(), q.denom())
}

fn ratio(num: impl Into<BigInt>, den: impl Into<BigInt>) -> BigRational {
    BigRational::new(num.into(), den.into())
}

fn to_f64(q: &BigRational) -> f64 {
    q.to_f64().unwrap_or(f64::NAN)
}

fn check_total(total: u32, cap: u32) -> Result<(), OracleError> {
    if total % 2 == 1 {
        return Err(OracleError::OddTotal(total));
    }
    if total > cap {
        return Err(OracleError::TooLarge { total, cap });
    }
    Ok(())
}

fn extend(partner: &mut Vec<u32>, out: &mut Vec<Matching>) {
    let Some(low) = partner.iter().position(|&p| p == 0) else {
        out.push(Matching::from_partner_unchecked(partner.clone()));
        return;
    };
    for j in low + 1..partner.len() {
        if partner[j] == 0 {
            partner[low] = j as u32 + 1;
            partner[j] = low as u32 + 1;
            extend(partner, out);
            partner[low] = 0;
            partner[j] = 0;
        }
    }
}

/// All `(N-1)!!` matchings, lowest free half-edge paired first.
pub fn enumerate_matchings(total: u32) -> Result<Vec<Matching>, OracleError> {
    check_total(total, MATCHING_CAP)?;
    if total == 0 {
        return Ok(Vec::new());
    }
    let n = total as usize;
    let branches: Vec<Vec<Matching>> = (1..n)
        .into_par_iter()
        .map(|j| {
            let mut partner = vec![0u32; n];
            partner[0] = j as u32 + 1;
            partner[j] = 1;
            let mut out = Vec::new();
            extend(&mut partner, &mut out);
            out
        })
        .collect();
    Ok(branches.concat())
}

#[derive(Debug, Clone, Serialize)]
pub struct LawEntry {
    pub z_edge: u64,
    pub z_twostar: u64,
    pub s_loops: u64,
    pub m_doubles: u64,
    pub simple: bool,
    pub probability: String,
}

#[derive(Debug, Clone)]
pub struct ExactLaw {
    pub total: u32,
    /// Statistics with exact probabilities, ordered by statistics.
    pub support: Vec<(MotifStatistics, BigRational)>,
    pub mean: [BigRational; 4],
    /// Covariance of the scaled isolated-tree counts.
    pub w_covariance: [[BigRational; 2]; 2],
    pub p_simple: BigRational,
    pub conditional_given_simple: Vec<(MotifStatistics, BigRational)>,
}

#[derive(Serialize)]
struct ExactLawJson {
    total: u32,
    matchings: String,
    support: Vec<LawEntry>,
    mean_z_edge: String,
    mean_z_twostar: String,
    mean_s_loops: String,
    mean_m_doubles: String,
    cov_w11: String,
    cov_w12: String,
    cov_w22: String,
    p_simple: String,
    conditional_given_simple: Vec<LawEntry>,
}

fn entries(items: &[(MotifStatistics, BigRational)]) -> Vec<LawEntry> {
    items
        .iter()
        .map(|(s, p)| LawEntry {
            z_edge: s.z_edge,
            z_twostar: s.z_twostar,
            s_loops: s.s_loops,
            m_doubles: s.m_doubles,
            simple: s.simple,
            probability: rational_string(p),
        })
        .collect()
}

impl ExactLaw {
    pub fn to_json(&self) -> serde_json::Value {
        let j = ExactLawJson {
            total: self.total,
            matchings: double_falling(self.total as i64 - 1, self.total / 2).to_string(),
            support: entries(&self.support),
            mean_z_edge: rational_string(&self.mean[0]),
            mean_z_twostar: rational_string(&self.mean[1]),
            mean_s_loops: rational_string(&self.mean[2]),
            mean_m_doubles: rational_string(&self.mean[3]),
            cov_w11: rational_string(&self.w_covariance[0][0]),
            cov_w12: rational_string(&self.w_covariance[0][1]),
            cov_w22: rational_string(&self.w_covariance[1][1]),
            p_simple: rational_string(&self.p_simple),
            conditional_given_simple: entries(&self.conditional_given_simple),
        };
        serde_json::to_value(j).expect("plain data serializes")
    }

    pub fn w_covariance_f64(&self) -> [[f64; 2]; 2] {
        let c = &self.w_covariance;
        [[to_f64(&c[0][0]), to_f64(&c[0][1])], [to_f64(&c[1][0]), to_f64(&c[1][1])]]
    }
}

fn key(s: &MotifStatistics) -> (u64, u64, u64, u64) {
    (s.z_edge, s.z_twostar, s.s_loops, s.m_doubles)
}

/// Joint law of the four statistics under the uniform configuration.
pub fn exact_law(ds: &DegreeSequence) -> Result<ExactLaw, OracleError> {
    let all = enumerate_matchings(ds.total())?;
    let total_count = BigInt::from(all.len());
    let mut tally: BTreeMap<(u64, u64, u64, u64), (MotifStatistics, u64)> = BTreeMap::new();
    for g in &all {
        let s = census(g, ds);
        tally.entry(key(&s)).or_insert((s, 0)).1 += 1;
    }
    let support: Vec<(MotifStatistics, BigRational)> =
        tally.values().map(|(s, c)| (*s, ratio(*c, total_count.clone()))).collect();
    let expect = |f: &dyn Fn(&MotifStatistics) -> BigInt| {
        support.iter().fold(BigRational::zero(), |acc, (s, p)| acc + p * BigRational::from_integer(f(s)))
    };
    let mean = [
        expect(&|s| s.z_edge.into()),
        expect(&|s| s.z_twostar.into()),
        expect(&|s| s.s_loops.into()),
        expect(&|s| s.m_doubles.into()),
    ];
    let n = BigRational::from_integer(ds.n().into());
    let second = |a: &dyn Fn(&MotifStatistics) -> u64, b: &dyn Fn(&MotifStatistics) -> u64| {
        expect(&|s| BigInt::from(a(s)) * BigInt::from(b(s)))
    };
    let ze = |s: &MotifStatistics| s.z_edge;
    let zt = |s: &MotifStatistics| s.z_twostar;
    let c11 = (second(&ze, &ze) - &mean[0] * &mean[0]) / &n;
    let c12 = (second(&ze, &zt) - &mean[0] * &mean[1]) / &n;
    let c22 = (second(&zt, &zt) - &mean[1] * &mean[1]) / &n;
    let p_simple = support.iter().filter(|(s, _)| s.simple).fold(BigRational::zero(), |acc, (_, p)| acc + p);
    let conditional_given_simple = if p_simple.is_zero() {
        Vec::new()
    } else {
        support.iter().filter(|(s, _)| s.simple).map(|(s, p)| (*s, p / &p_simple)).collect()
    };
    Ok(ExactLaw {
        total: ds.total(),
        support,
        mean,
        w_covariance: [[c11.clone(), c12.clone()], [c12, c22]],
        p_simple,
        conditional_given_simple,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SimpleGraphReport {
    pub simple_graphs: usize,
    pub expected_probability: String,
    pub all_equal: bool,
    /// Conditional law of the isolated-tree counts given simplicity equals their law
    /// under the uniform simple graph.
    pub conditional_matches_uniform_graph: bool,
}

fn graph_key(g: &Matching, ds: &DegreeSequence) -> Vec<(usize, usize)> {
    let mut edges: Vec<(usize, usize)> = g
        .pairs()
        .iter()
        .map(|p| {
            let (a, b) = (ds.vertex_of(p.lo).0, ds.vertex_of(p.hi).0);
            (a.min(b), a.max(b))
        })
        .collect();
    edges.sort_unstable();
    edges
}

/// Groups matchings by induced simple graph; each must carry `prod d_i! / (N-1)!!`.
pub fn uniform_simple_check(ds: &DegreeSequence) -> Result<SimpleGraphReport, OracleError> {
    check_total(ds.total(), 12)?;
    let all = enumerate_matchings(ds.total())?;
    let mut graphs: HashMap<Vec<(usize, usize)>, (u64, MotifStatistics)> = HashMap::new();
    for g in &all {
        let s = census(g, ds);
        if s.simple {
            graphs.entry(graph_key(g, ds)).or_insert((0, s)).0 += 1;
        }
    }
    let fact = |d: u32| (1..=d as u64).map(BigInt::from).fold(BigInt::one(), |a, b| a * b);
    let weight = ds.degrees().iter().fold(BigInt::one(), |a, &d| a * fact(d));
    let expected = ratio(weight, BigInt::from(all.len().max(1)));
    let all_equal = graphs.values().all(|(c, _)| ratio(*c, BigInt::from(all.len())) == expected);

    let mut by_graph: BTreeMap<(u64, u64), BigRational> = BTreeMap::new();
    let k = BigRational::from_integer(graphs.len().max(1).into());
    for (_, s) in graphs.values() {
        *by_graph.entry((s.z_edge, s.z_twostar)).or_insert_with(BigRational::zero) += BigRational::one() / &k;
    }
    let law = exact_law(ds)?;
    let mut conditional: BTreeMap<(u64, u64), BigRational> = BTreeMap::new();
    for (s, p) in &law.conditional_given_simple {
        *conditional.entry((s.z_edge, s.z_twostar)).or_insert_with(BigRational::zero) += p;
    }
    Ok(SimpleGraphReport {
        simple_graphs: graphs.len(),
        expected_probability: rational_string(&expected),
        all_equal,
        conditional_matches_uniform_graph: by_graph == conditional,
    })
}

/// Enumerated configurations with their motif incidence, reused by the coupling checks.
pub struct Oracle {
    pub ds: DegreeSequence,
    pub matchings: Vec<Matching>,
    index: HashMap<Matching, usize>,
    pub motifs: Vec<Motif>,
    // incidence[g * motifs.len() + m]
    incidence: Vec<bool>,
}

/// Switching cells of one motif: `(base, coupled)` for every base containing the motif and
/// every index vector. Each cell has probability `1 / denominator`; every base without the
/// motif keeps itself with probability `grid_size / denominator`.
pub struct CouplingGrid {
    pub alpha: usize,
    pub cells: Vec<(usize, usize)>,
    pub grid_size: u64,
    pub denominator: BigInt,
}

impl Oracle {
    pub fn new(ds: &DegreeSequence) -> Result<Self, OracleError> {
        let matchings = enumerate_matchings(ds.total())?;
        let index = matchings.iter().cloned().enumerate().map(|(i, g)| (g, i)).collect();
        let motifs: Vec<Motif> = MotifClass::ALL.iter().flat_map(|&c| enumerate_motifs(ds, c)).collect();
        let incidence =
            matchings.par_iter().flat_map_iter(|g| motifs.iter().map(move |m| contains(g, m))).collect();
        Ok(Oracle { ds: ds.clone(), matchings, index, motifs, incidence })
    }

    pub fn has(&self, g: usize, motif: usize) -> bool {
        self.incidence[g * self.motifs.len() + motif]
    }

    pub fn motif_index(&self, m: &Motif) -> Result<usize, OracleError> {
        self.motifs.iter().position(|x| x == m).ok_or(OracleError::ForeignMotif)
    }

    pub fn ids_of(&self, pred: impl Fn(MotifClass) -> bool) -> Vec<usize> {
        (0..self.motifs.len()).filter(|&i| pred(self.motifs[i].class())).collect()
    }

    pub fn configurations(&self) -> BigInt {
        BigInt::from(self.matchings.len())
    }

    pub fn grid(&self, alpha: usize) -> Result<CouplingGrid, OracleError> {
        let m = &self.motifs[alpha];
        let e = m.pairs().len();
        let grid = index_grid(self.ds.total(), e);
        let cells_total = self.matchings.len() as u128 * grid.len() as u128;
        if cells_total > GRID_CAP {
            return Err(OracleError::GridTooLarge { cells: cells_total, cap: GRID_CAP });
        }
        let cells: Vec<(usize, usize)> = (0..self.matchings.len())
            .filter(|&g| self.has(g, alpha))
            .flat_map(|g| {
                grid.iter().map(move |b| {
                    let out = switch(&self.matchings[g], m, b).expect("motif present");
                    (g, self.index[&out])
                })
            })
            .collect();
        Ok(CouplingGrid {
            alpha,
            cells,
            grid_size: grid.len() as u64,
            denominator: self.configurations() * BigInt::from(grid.len()),
        })
    }

    /// `P(coupled = g', motif present)` for every `g'`, and the conditional law given presence.
    pub fn coupling_law(&self, grid: &CouplingGrid) -> (Vec<BigRational>, Vec<BigRational>) {
        let mut counts = vec![0u64; self.matchings.len()];
        for &(_, out) in &grid.cells {
            counts[out] += 1;
        }
        let joint: Vec<BigRational> = counts.iter().map(|&c| ratio(c, grid.denominator.clone())).collect();
        let present = ratio(grid.cells.len() as u64, grid.denominator.clone());
        let conditional = if present.is_zero() { joint.clone() } else { joint.iter().map(|p| p / &present).collect() };
        (joint, conditional)
    }

    /// `E[I_a f(base, coupled)]` over the switching cells.
    pub fn expect_on_cells(&self, grid: &CouplingGrid, f: impl Fn(usize, usize) -> i64 + Sync + Send) -> BigRational {
        let s: i64 = grid.cells.par_iter().map(|&(g, out)| f(g, out)).sum();
        ratio(s, grid.denominator.clone())
    }

    /// `E[f(g)]` under the uniform configuration.
    pub fn expect_on_matchings(&self, f: impl Fn(usize) -> i64 + Sync + Send) -> BigRational {
        let s: i64 = (0..self.matchings.len()).into_par_iter().map(f).sum();
        ratio(s, self.configurations())
    }

    pub fn pair_moments(&self, grid: &CouplingGrid, beta: usize) -> PairMoments {
        let a = grid.alpha;
        let destroyed = self.expect_on_cells(grid, |g, out| (self.has(g, beta) && !self.has(out, beta)) as i64);
        let coupled = self.expect_on_cells(grid, |_, out| self.has(out, beta) as i64);
        let abs_diff = self.expect_on_cells(grid, |g, out| (self.has(g, beta) != self.has(out, beta)) as i64);
        let both = self.expect_on_matchings(|g| (self.has(g, a) && self.has(g, beta)) as i64);
        let pa = self.expect_on_matchings(|g| self.has(g, a) as i64);
        let pb = self.expect_on_matchings(|g| self.has(g, beta) as i64);
        PairMoments { destroyed, alpha_and_coupled: coupled, covariance: both - pa * pb, alpha_abs_diff: abs_diff }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairMoments {
    /// `E[I_a I_b (1 - J_ba)]`
    pub destroyed: BigRational,
    /// `E[I_a J_ba]`
    pub alpha_and_coupled: BigRational,
    /// `Cov(I_a, I_b)`
    pub covariance: BigRational,
    /// `E[I_a |I_b - J_ba|]`
    pub alpha_abs_diff: BigRational,
}

pub fn exact_pair_moments(ds: &DegreeSequence, alpha: &Motif, beta: &Motif) -> Result<PairMoments, OracleError> {
    let oracle = Oracle::new(ds)?;
    let a = oracle.motif_index(alpha)?;
    let b = oracle.motif_index(beta)?;
    Ok(oracle.pair_moments(&oracle.grid(a)?, b))
}

/// Joint law of `(G, G_a)` as `(base, coupled, probability)` triples with positive mass.
pub fn exact_coupling_law(
    ds: &DegreeSequence,
    alpha: &Motif,
) -> Result<Vec<(Matching, Matching, BigRational)>, OracleError> {
    let oracle = Oracle::new(ds)?;
    let a = oracle.motif_index(alpha)?;
    let grid = oracle.grid(a)?;
    let mut mass: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    for &(g, out) in &grid.cells {
        *mass.entry((g, out)).or_default() += 1;
    }
    for g in (0..oracle.matchings.len()).filter(|&g| !oracle.has(g, a)) {
        mass.insert((g, g), grid.grid_size);
    }
    Ok(mass
        .into_iter()
        .map(|((g, out), c)| {
            (oracle.matchings[g].clone(), oracle.matchings[out].clone(), ratio(c, grid.denominator.clone()))
        })
        .collect())
}

/// Exact left-hand sides of the five moment bounds.
#[derive(Debug, Clone)]
pub struct MomentSums {
    /// `sum_{j,k} sqrt(Var(sum_{a in G_1j} I_a sum_{b in G_1k} (I_b - J_ba)))`; `None` above N = 8.
    pub tree_variance: Option<f64>,
    /// Same with the variance of the conditional expectation given the two tree counts.
    pub tree_variance_conditional: Option<f64>,
    pub tree_triple: BigRational,
    pub tree_to_cycle: BigRational,
    pub cycle_to_tree: BigRational,
    pub cycle_pairs: BigRational,
}

pub const LINEAR_SUM_CAP: u32 = 10;
pub const VARIANCE_CAP: u32 = 8;

pub fn lhs_moment_sums(ds: &DegreeSequence) -> Result<MomentSums, OracleError> {
    check_total(ds.total(), LINEAR_SUM_CAP)?;
    let oracle = Oracle::new(ds)?;
    let trees = oracle.ids_of(MotifClass::is_tree);
    let cycles = oracle.ids_of(|c| !c.is_tree());
    let diff = |ids: &[usize], g: usize, out: usize| ids.iter().filter(|&&b| oracle.has(g, b) != oracle.has(out, b)).count() as i64;

    let mut tree_triple = BigRational::zero();
    let mut tree_to_cycle = BigRational::zero();
    let mut cycle_to_tree = BigRational::zero();
    let mut cycle_pairs = BigRational::zero();
    let mut grids = HashMap::new();
    for &a in &trees {
        let grid = oracle.grid(a)?;
        tree_triple += oracle.expect_on_cells(&grid, |g, out| diff(&trees, g, out).pow(2));
        tree_to_cycle += oracle.expect_on_cells(&grid, |g, out| diff(&cycles, g, out));
        grids.insert(a, grid);
    }
    for &a in &cycles {
        let grid = oracle.grid(a)?;
        cycle_to_tree += oracle.expect_on_cells(&grid, |g, out| diff(&trees, g, out));
        cycle_pairs += oracle.expect_on_cells(&grid, |g, out| {
            cycles.iter().filter(|&&b| b != a && oracle.has(g, b) != oracle.has(out, b)).count() as i64
        });
        let p = success_probability_exact(ds, oracle.motifs[a].class()).expect("motif exists so N is large enough");
        cycle_pairs += &p * &p;
    }

    let (tree_variance, tree_variance_conditional) = if ds.total() <= VARIANCE_CAP {
        let (u, c) = tree_variances(&oracle, &trees, &grids);
        (Some(u), Some(c))
    } else {
        (None, None)
    };
    Ok(MomentSums { tree_variance, tree_variance_conditional, tree_triple, tree_to_cycle, cycle_to_tree, cycle_pairs })
}

/// Unconditional and conditional variance terms of the first moment bound.
///
/// Given the configuration the switching indices of distinct motifs are independent, so
/// `E[X^2 | g] = (sum_a m_a)^2 - sum_a m_a^2 + sum_a s_a` with `m_a`, `s_a` the conditional
/// first and second moments of `I_a Y_a`.
fn tree_variances(oracle: &Oracle, trees: &[usize], grids: &HashMap<usize, CouplingGrid>) -> (f64, f64) {
    let by_class = |c: MotifClass| trees.iter().copied().filter(|&t| oracle.motifs[t].class() == c).collect::<Vec<_>>();
    let groups = [by_class(MotifClass::Edge), by_class(MotifClass::TwoStar)];
    let gcount = oracle.matchings.len();
    let stats: Vec<(u64, u64)> = oracle
        .matchings
        .iter()
        .map(|g| {
            let s = census(g, &oracle.ds);
            (s.z_edge, s.z_twostar)
        })
        .collect();
    let mut unconditional = 0.0;
    let mut conditional = 0.0;
    for alphas in &groups {
        for betas in &groups {
            // per configuration: sum_a m_a, sum_a m_a^2, sum_a s_a (as rationals over grid size)
            let mut first = vec![BigRational::zero(); gcount];
            let mut square_of_means = vec![BigRational::zero(); gcount];
            let mut second = vec![BigRational::zero(); gcount];
            for &a in alphas {
                let grid = &grids[&a];
                let mut sums: HashMap<usize, (i64, i64)> = HashMap::new();
                for &(g, out) in &grid.cells {
                    let y: i64 = betas.iter().map(|&b| oracle.has(g, b) as i64 - oracle.has(out, b) as i64).sum();
                    let e = sums.entry(g).or_default();
                    e.0 += y;
                    e.1 += y * y;
                }
                let size = BigInt::from(grid.grid_size);
                for (g, (s1, s2)) in sums {
                    let m = ratio(s1, size.clone());
                    square_of_means[g] += &m * &m;
                    first[g] += m;
                    second[g] += ratio(s2, size.clone());
                }
            }
            let n = BigRational::from_integer(gcount.into());
            let mean = first.iter().fold(BigRational::zero(), |a, x| a + x) / &n;
            let mut sq = BigRational::zero();
            for g in 0..gcount {
                sq += &first[g] * &first[g] - &square_of_means[g] + &second[g];
            }
            let var = sq / &n - &mean * &mean;
            unconditional += to_f64(&var).max(0.0).sqrt();

            let mut cells: BTreeMap<(u64, u64), (BigRational, u64)> = BTreeMap::new();
            for g in 0..gcount {
                let e = cells.entry(stats[g]).or_insert((BigRational::zero(), 0));
                e.0 += &first[g];
                e.1 += 1;
            }
            let mut second_cond = BigRational::zero();
            for (s, c) in cells.values() {
                let cm = s / BigRational::from_integer((*c).into());
                second_cond += &cm * &cm * ratio(*c, gcount);
            }
            let cvar = second_cond - &mean * &mean;
            conditional += to_f64(&cvar).max(0.0).sqrt();
        }
    }
    (unconditional, conditional)
}

/// Per-outcome creation and destruction counts used by the limited-change lemmas.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OutcomeExtremes {
    /// max over cells of `sum_{b in G_1, b != a, b meets a} J_ba`
    pub created_near: usize,
    /// max over cells of `sum_{b in G_1, b shares no vertex with a} I_b (1 - J_ba)`
    pub destroyed_far: usize,
    /// cells where a motif sharing no half-edge with `a`, absent in the base, appears after switching
    pub spurious_creations: usize,
}

/// Scans every switching cell of motif `alpha` (and every base without it).
pub fn outcome_extremes(oracle: &Oracle, grid: &CouplingGrid) -> OutcomeExtremes {
    let a = grid.alpha;
    let ds = &oracle.ds;
    let alpha = &oracle.motifs[a];
    let trees = oracle.ids_of(MotifClass::is_tree);
    let rel: Vec<_> = (0..oracle.motifs.len()).map(|b| relation(ds, alpha, &oracle.motifs[b])).collect();
    let near: Vec<usize> = trees.iter().copied().filter(|&b| b != a && rel[b].shares_vertex).collect();
    let far: Vec<usize> = trees.iter().copied().filter(|&b| !rel[b].shares_vertex).collect();
    let apart: Vec<usize> = (0..oracle.motifs.len()).filter(|&b| !rel[b].shares_half_edge).collect();
    let mut ext = OutcomeExtremes::default();
    let mut visit = |g: usize, out: usize| {
        ext.created_near = ext.created_near.max(near.iter().filter(|&&b| oracle.has(out, b)).count());
        ext.destroyed_far =
            ext.destroyed_far.max(far.iter().filter(|&&b| oracle.has(g, b) && !oracle.has(out, b)).count());
        ext.spurious_creations += apart.iter().filter(|&&b| !oracle.has(g, b) && oracle.has(out, b)).count();
    };
    for &(g, out) in &grid.cells {
        visit(g, out);
    }
    for g in (0..oracle.matchings.len()).filter(|&g| !oracle.has(g, a)) {
        visit(g, g);
    }
    ext
}

/// `(1 / ((N-1))_{e_a + e_b}) (1 - prod_l (1 - 2 e_b / (N - 2(e_a - l) - 1)))` for disjoint motifs.
pub fn disjoint_destruction_formula(total: u32, e_alpha: u32, e_beta: u32) -> BigRational {
    let n = total as i64;
    let lead = crate::combinatorics::recip(double_falling(n - 1, e_alpha + e_beta));
    let mut keep = BigRational::one();
    for l in 1..=e_alpha as i64 {
        let range = n - 2 * (e_alpha as i64 - l) - 1;
        keep *= BigRational::one() - ratio(2 * e_beta as i64, range);
    }
    lead * (BigRational::one() - keep)
}

/// `(1 / ((N-1))_3) (1 - (N-5) / ((N-1))_2)` for double edges sharing one pair.
pub fn common_edge_formula(total: u32) -> BigRational {
    let n = total as i64;
    crate::combinatorics::recip(double_falling(n - 1, 3))
        * (BigRational::one() - ratio(n - 5, double_falling(n - 1, 2)))
}

/// Exact covariance of the scaled counts compared against a float matrix.
pub fn max_abs_deviation(exact: &[[BigRational; 2]; 2], approx: &[[f64; 2]; 2]) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            let q = &exact[i][j] - BigRational::from_float(approx[i][j]).unwrap_or_else(BigRational::zero);
            worst = worst.max(to_f64(&q.abs()));
        }
    }
    worst
}


/// `E Z = |Gamma| p` for every class, exactly.
pub fn means_match_counts(ds: &DegreeSequence, law: &ExactLaw) -> bool {
    let counts = class_counts(ds);
    MotifClass::ALL.iter().enumerate().all(|(k, &c)| {
        let expected = match success_probability_exact(ds, c) {
            Ok(p) => p * BigRational::from_integer(BigInt::from(counts.get(c))),
            Err(_) => BigRational::zero(),
        };
        law.mean[k] == expected
    })
}
