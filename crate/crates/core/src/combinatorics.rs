//! Degree sequences, half-edge layout, factorial helpers and the four motif classes.

use std::fmt;
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DegreeError {
    #[error("degree sequence is empty")]
    Empty,
    #[error("sum of degrees {0} is odd")]
    OddTotal(u64),
    #[error("cannot parse degree token {0:?}")]
    Parse(String),
    #[error("((N-1))_{e} = {value} is not positive for N = {total}")]
    DegenerateN { total: u32, e: u32, value: i128 },
}

/// A half-edge label, 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct HalfEdge(pub u32);

/// A vertex index, 0-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Vertex(pub usize);

impl fmt::Display for HalfEdge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// `m (m-1) ... (m-r+1)`, zero whenever `r > m`.
pub fn falling(m: i64, r: u32) -> i128 {
    if r as i64 > m {
        return 0;
    }
    (0..r as i64).fold(1i128, |acc, k| acc * (m - k) as i128)
}

/// `m (m-2) ... (m-2(r-1))`, zero once a factor would drop below one.
pub fn double_falling(m: i64, r: u32) -> i128 {
    if r == 0 {
        return 1;
    }
    if m - 2 * (r as i64 - 1) < 1 {
        return 0;
    }
    (0..r as i64).fold(1i128, |acc, k| acc * (m - 2 * k) as i128)
}

/// `(m)_r` as a float, for arguments where the integer product could overflow.
pub fn falling_f64(m: f64, r: u32) -> f64 {
    if r as f64 > m {
        return 0.0;
    }
    (0..r).fold(1.0, |acc, k| acc * (m - k as f64))
}

pub fn double_falling_f64(m: f64, r: u32) -> f64 {
    if r == 0 {
        return 1.0;
    }
    if m - 2.0 * (r as f64 - 1.0) < 1.0 {
        return 0.0;
    }
    (0..r).fold(1.0, |acc, k| acc * (m - 2.0 * k as f64))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DegreeSequence {
    degrees: Vec<u32>,
    total: u32,
    // vertex_of[h - 1] for half-edge h
    vertex_of: Vec<u32>,
    first: Vec<u32>,
    class_sizes: Vec<u32>,
}

impl DegreeSequence {
    pub fn build(degrees: &[u32]) -> Result<Self, DegreeError> {
        if degrees.is_empty() {
            return Err(DegreeError::Empty);
        }
        let sum: u64 = degrees.iter().map(|&d| d as u64).sum();
        if sum % 2 == 1 {
            return Err(DegreeError::OddTotal(sum));
        }
        let mut vertex_of = Vec::with_capacity(sum as usize);
        let mut first = Vec::with_capacity(degrees.len());
        let max = degrees.iter().copied().max().unwrap_or(0) as usize;
        let mut class_sizes = vec![0u32; max + 1];
        for (v, &d) in degrees.iter().enumerate() {
            first.push(vertex_of.len() as u32 + 1);
            vertex_of.extend(std::iter::repeat(v as u32).take(d as usize));
            class_sizes[d as usize] += 1;
        }
        Ok(Self { degrees: degrees.to_vec(), total: sum as u32, vertex_of, first, class_sizes })
    }

    pub fn degrees(&self) -> &[u32] {
        &self.degrees
    }

    /// Number of vertices.
    pub fn n(&self) -> usize {
        self.degrees.len()
    }

    /// Number of half-edges.
    pub fn total(&self) -> u32 {
        self.total
    }

    pub fn degree(&self, v: Vertex) -> u32 {
        self.degrees[v.0]
    }

    pub fn vertex_of(&self, h: HalfEdge) -> Vertex {
        Vertex(self.vertex_of[h.0 as usize - 1] as usize)
    }

    pub fn degree_of(&self, h: HalfEdge) -> u32 {
        self.degrees[self.vertex_of[h.0 as usize - 1] as usize]
    }

    /// Half-edges of a vertex, ascending.
    pub fn half_edges(&self, v: Vertex) -> impl Iterator<Item = HalfEdge> {
        let lo = self.first[v.0];
        (lo..lo + self.degrees[v.0]).map(HalfEdge)
    }

    /// `n_k`, the number of vertices of degree `k`.
    pub fn count_of_degree(&self, k: u32) -> u32 {
        self.class_sizes.get(k as usize).copied().unwrap_or(0)
    }

    /// Pairs `(k, n_k)` for every degree that occurs.
    pub fn degree_classes(&self) -> Vec<(u32, u32)> {
        self.class_sizes
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(k, &c)| (k as u32, c))
            .collect()
    }

    /// `Σ_i (d_i)_r`.
    pub fn falling_moment(&self, r: u32) -> i128 {
        self.degrees.iter().map(|&d| falling(d as i64, r)).sum()
    }

    /// `Σ_{i<j} (d_i)_2 (d_j)_2`.
    pub fn pair_moment(&self) -> i128 {
        let s = self.falling_moment(2);
        let sq: i128 = self.degrees.iter().map(|&d| falling(d as i64, 2).pow(2)).sum();
        (s * s - sq) / 2
    }

    pub fn to_text(&self) -> String {
        let items: Vec<String> = self.degrees.iter().map(u32::to_string).collect();
        items.join(" ")
    }
}

impl FromStr for DegreeSequence {
    type Err = DegreeError;

    /// Whitespace-separated degrees; lines starting with `#` are skipped.
    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut degrees = Vec::new();
        for line in text.lines() {
            if line.trim_start().starts_with('#') {
                continue;
            }
            for tok in line.split_whitespace() {
                degrees.push(tok.parse::<u32>().map_err(|_| DegreeError::Parse(tok.to_string()))?);
            }
        }
        Self::build(&degrees)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MotifClass {
    Edge,
    TwoStar,
    SelfLoop,
    DoubleEdge,
}

impl MotifClass {
    pub const ALL: [MotifClass; 4] =
        [MotifClass::Edge, MotifClass::TwoStar, MotifClass::SelfLoop, MotifClass::DoubleEdge];

    pub fn edges(self) -> u32 {
        match self {
            MotifClass::Edge | MotifClass::SelfLoop => 1,
            MotifClass::TwoStar | MotifClass::DoubleEdge => 2,
        }
    }

    pub fn vertices(self) -> u32 {
        match self {
            MotifClass::SelfLoop => 1,
            MotifClass::Edge | MotifClass::DoubleEdge => 2,
            MotifClass::TwoStar => 3,
        }
    }

    /// Isolated trees (normal part) versus loops and multi-edges (Poisson part).
    pub fn is_tree(self) -> bool {
        matches!(self, MotifClass::Edge | MotifClass::TwoStar)
    }

    pub fn name(self) -> &'static str {
        match self {
            MotifClass::Edge => "edge",
            MotifClass::TwoStar => "twostar",
            MotifClass::SelfLoop => "selfloop",
            MotifClass::DoubleEdge => "doubleedge",
        }
    }
}

/// An unordered pair of half-edges, stored with `lo < hi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Pair {
    pub lo: HalfEdge,
    pub hi: HalfEdge,
}

impl Pair {
    pub fn new(a: HalfEdge, b: HalfEdge) -> Self {
        assert!(a != b, "a pair needs two distinct half-edges");
        if a < b {
            Pair { lo: a, hi: b }
        } else {
            Pair { lo: b, hi: a }
        }
    }

    pub fn contains(&self, h: HalfEdge) -> bool {
        self.lo == h || self.hi == h
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Motif {
    class: MotifClass,
    pairs: Vec<Pair>,
}

impl Motif {
    /// Canonicalizes the pair order; panics on overlapping pairs.
    pub fn new(class: MotifClass, mut pairs: Vec<Pair>) -> Self {
        assert_eq!(pairs.len() as u32, class.edges());
        pairs.sort();
        if pairs.len() == 2 {
            let [a, b] = [pairs[0], pairs[1]];
            assert!(!b.contains(a.lo) && !b.contains(a.hi), "motif pairs must be disjoint");
        }
        Motif { class, pairs }
    }

    pub fn class(&self) -> MotifClass {
        self.class
    }

    pub fn pairs(&self) -> &[Pair] {
        &self.pairs
    }

    pub fn half_edges(&self) -> impl Iterator<Item = HalfEdge> + '_ {
        self.pairs.iter().flat_map(|p| [p.lo, p.hi])
    }

    pub fn vertex_set(&self, ds: &DegreeSequence) -> Vec<Vertex> {
        let mut vs: Vec<Vertex> = self.half_edges().map(|h| ds.vertex_of(h)).collect();
        vs.sort();
        vs.dedup();
        vs
    }

    /// Checks the class-specific degree pattern; used by tests and debug assertions.
    pub fn is_valid(&self, ds: &DegreeSequence) -> bool {
        let mut hs: Vec<HalfEdge> = self.half_edges().collect();
        if hs.iter().any(|h| h.0 == 0 || h.0 > ds.total()) {
            return false;
        }
        let sorted = self.pairs.windows(2).all(|w| w[0].lo < w[1].lo);
        hs.sort();
        hs.dedup();
        if !sorted || hs.len() != self.pairs.len() * 2 {
            return false;
        }
        let v = |h: HalfEdge| ds.vertex_of(h);
        let d = |h: HalfEdge| ds.degree_of(h);
        match self.class {
            MotifClass::Edge => {
                let p = self.pairs[0];
                d(p.lo) == 1 && d(p.hi) == 1 && v(p.lo) != v(p.hi)
            }
            MotifClass::SelfLoop => v(self.pairs[0].lo) == v(self.pairs[0].hi),
            MotifClass::TwoStar => {
                let mut centre = None;
                let mut leaves = Vec::new();
                for p in &self.pairs {
                    let (c, l) = match (d(p.lo), d(p.hi)) {
                        (2, 1) => (p.lo, p.hi),
                        (1, 2) => (p.hi, p.lo),
                        _ => return false,
                    };
                    match centre {
                        None => centre = Some(v(c)),
                        Some(cv) if cv != v(c) => return false,
                        _ => {}
                    }
                    leaves.push(v(l));
                }
                leaves[0] != leaves[1]
            }
            MotifClass::DoubleEdge => {
                let [a, b] = [self.pairs[0], self.pairs[1]];
                let (a1, a2) = (v(a.lo), v(a.hi));
                let (b1, b2) = (v(b.lo), v(b.hi));
                a1 != a2 && ((a1 == b1 && a2 == b2) || (a1 == b2 && a2 == b1))
            }
        }
    }

    pub fn label(&self) -> String {
        let parts: Vec<String> = self.pairs.iter().map(|p| format!("{}-{}", p.lo, p.hi)).collect();
        format!("{}[{}]", self.class.name(), parts.join(","))
    }
}

/// Every motif of the class in canonical form.
pub fn enumerate_motifs(ds: &DegreeSequence, class: MotifClass) -> Vec<Motif> {
    let leaves: Vec<HalfEdge> = (0..ds.n())
        .filter(|&v| ds.degree(Vertex(v)) == 1)
        .map(|v| ds.half_edges(Vertex(v)).next().unwrap())
        .collect();
    let mut out = Vec::new();
    match class {
        MotifClass::Edge => {
            for (i, &a) in leaves.iter().enumerate() {
                for &b in &leaves[i + 1..] {
                    out.push(Motif::new(class, vec![Pair::new(a, b)]));
                }
            }
        }
        MotifClass::TwoStar => {
            for w in (0..ds.n()).filter(|&v| ds.degree(Vertex(v)) == 2) {
                let hs: Vec<HalfEdge> = ds.half_edges(Vertex(w)).collect();
                for &a in &leaves {
                    for &b in &leaves {
                        if a != b {
                            out.push(Motif::new(class, vec![Pair::new(a, hs[0]), Pair::new(b, hs[1])]));
                        }
                    }
                }
            }
        }
        MotifClass::SelfLoop => {
            for v in 0..ds.n() {
                let hs: Vec<HalfEdge> = ds.half_edges(Vertex(v)).collect();
                for (i, &a) in hs.iter().enumerate() {
                    for &b in &hs[i + 1..] {
                        out.push(Motif::new(class, vec![Pair::new(a, b)]));
                    }
                }
            }
        }
        MotifClass::DoubleEdge => {
            for i in 0..ds.n() {
                let hi: Vec<HalfEdge> = ds.half_edges(Vertex(i)).collect();
                for j in i + 1..ds.n() {
                    let hj: Vec<HalfEdge> = ds.half_edges(Vertex(j)).collect();
                    for (x, &a1) in hi.iter().enumerate() {
                        for &a2 in &hi[x + 1..] {
                            for (y, &b1) in hj.iter().enumerate() {
                                for &b2 in &hj[y + 1..] {
                                    out.push(Motif::new(class, vec![Pair::new(a1, b1), Pair::new(a2, b2)]));
                                    out.push(Motif::new(class, vec![Pair::new(a1, b2), Pair::new(a2, b1)]));
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ClassCounts {
    pub edge: u128,
    pub twostar: u128,
    pub selfloop: u128,
    pub doubleedge: u128,
}

impl ClassCounts {
    pub fn get(&self, class: MotifClass) -> u128 {
        match class {
            MotifClass::Edge => self.edge,
            MotifClass::TwoStar => self.twostar,
            MotifClass::SelfLoop => self.selfloop,
            MotifClass::DoubleEdge => self.doubleedge,
        }
    }
}

/// Closed-form class sizes.
pub fn class_counts(ds: &DegreeSequence) -> ClassCounts {
    let n1 = ds.count_of_degree(1) as i64;
    let n2 = ds.count_of_degree(2) as i128;
    ClassCounts {
        edge: (falling(n1, 2) / 2) as u128,
        twostar: (falling(n1, 2) * n2) as u128,
        selfloop: (ds.falling_moment(2) / 2) as u128,
        doubleedge: (ds.pair_moment() / 2) as u128,
    }
}

fn checked_odd_product(ds: &DegreeSequence, class: MotifClass) -> Result<i128, DegreeError> {
    let e = class.edges();
    let value = double_falling(ds.total() as i64 - 1, e);
    if value <= 0 {
        return Err(DegreeError::DegenerateN { total: ds.total(), e, value });
    }
    Ok(value)
}

/// `1 / ((N-1))_{e(H)}`.
pub fn success_probability(ds: &DegreeSequence, class: MotifClass) -> Result<f64, DegreeError> {
    checked_odd_product(ds, class).map(|v| 1.0 / v as f64)
}

pub fn success_probability_exact(ds: &DegreeSequence, class: MotifClass) -> Result<BigRational, DegreeError> {
    checked_odd_product(ds, class).map(|v| BigRational::new(BigInt::one(), BigInt::from(v)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Relation {
    pub shares_vertex: bool,
    pub shares_half_edge: bool,
    pub shares_common_edge: bool,
    pub equal: bool,
}

pub fn relation(ds: &DegreeSequence, a: &Motif, b: &Motif) -> Relation {
    let va = a.vertex_set(ds);
    let vb = b.vertex_set(ds);
    let shares_vertex = va.iter().any(|v| vb.contains(v));
    let shares_half_edge = a.half_edges().any(|h| b.half_edges().any(|k| k == h));
    let shares_common_edge = a.pairs().iter().any(|p| b.pairs().contains(p));
    Relation { shares_vertex, shares_half_edge, shares_common_edge, equal: a == b }
}

/// `1 / m` as an exact rational; zero when `m` is zero.
pub(crate) fn recip(m: i128) -> BigRational {
    if m == 0 {
        BigRational::zero()
    } else {
        BigRational::new(BigInt::one(), BigInt::from(m))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ds(d: &[u32]) -> DegreeSequence {
        DegreeSequence::build(d).unwrap()
    }

    #[test]
    fn factorials() {
        assert_eq!(falling(5, 2), 20);
        assert_eq!(falling(2, 3), 0);
        assert_eq!(falling(0, 1), 0);
        assert_eq!(falling(-3, 2), 0);
        assert_eq!(double_falling(7, 3), 105);
        assert_eq!(double_falling(5, 1), 5);
        assert_eq!(double_falling(23, 2), 483);
        assert_eq!(double_falling(3, 3), 0);
    }

    #[test]
    fn recurrences() {
        for m in 0..=60i64 {
            for r in 1..=5u32 {
                assert_eq!(falling(m, r + 1), falling(m, r) * (m - r as i64).max(0) as i128);
                let next = double_falling(m, r) * (m - 2 * r as i64) as i128;
                assert_eq!(double_falling(m, r + 1), next.max(0));
            }
        }
    }

    #[test]
    fn layout() {
        let d = ds(&[1, 1, 2]);
        assert_eq!(d.total(), 4);
        assert_eq!(d.count_of_degree(1), 2);
        assert_eq!(d.count_of_degree(2), 1);
        let vs: Vec<usize> = (1..=4).map(|h| d.vertex_of(HalfEdge(h)).0).collect();
        assert_eq!(vs, vec![0, 1, 2, 2]);
        assert_eq!(DegreeSequence::build(&[1, 1, 1]), Err(DegreeError::OddTotal(3)));
        let d = ds(&[3, 3]);
        assert_eq!((d.total(), d.count_of_degree(3)), (6, 2));
    }

    #[test]
    fn parse_text() {
        let d: DegreeSequence = "# header\n1 1\n2\n".parse().unwrap();
        assert_eq!(d.degrees(), &[1, 1, 2]);
        assert!("1 x".parse::<DegreeSequence>().is_err());
    }

    #[test]
    fn small_enumerations() {
        let d = ds(&[1, 1, 2]);
        let edges = enumerate_motifs(&d, MotifClass::Edge);
        assert_eq!(edges, vec![Motif::new(MotifClass::Edge, vec![Pair::new(HalfEdge(1), HalfEdge(2))])]);
        let stars = enumerate_motifs(&d, MotifClass::TwoStar);
        let p = |a, b| Pair::new(HalfEdge(a), HalfEdge(b));
        assert_eq!(stars.len(), 2);
        assert!(stars.contains(&Motif::new(MotifClass::TwoStar, vec![p(1, 3), p(4, 2)])));
        assert!(stars.contains(&Motif::new(MotifClass::TwoStar, vec![p(1, 4), p(3, 2)])));
        assert!(enumerate_motifs(&d, MotifClass::DoubleEdge).is_empty());
    }

    #[test]
    fn closed_form_counts() {
        let c = class_counts(&ds(&[1, 1, 2]));
        assert_eq!((c.edge, c.twostar, c.selfloop, c.doubleedge), (1, 2, 1, 0));
        let c = class_counts(&ds(&[1, 1, 1, 1]));
        assert_eq!((c.edge, c.twostar, c.selfloop, c.doubleedge), (6, 0, 0, 0));
        let c = class_counts(&ds(&[3, 3]));
        assert_eq!((c.edge, c.twostar, c.selfloop, c.doubleedge), (0, 0, 6, 18));
    }

    #[test]
    fn probabilities() {
        let d = ds(&[1, 1, 2]);
        assert_eq!(success_probability(&d, MotifClass::Edge).unwrap(), 1.0 / 3.0);
        assert_eq!(success_probability(&d, MotifClass::TwoStar).unwrap(), 1.0 / 3.0);
        let d24 = ds(&[3; 8]);
        assert_eq!(
            success_probability_exact(&d24, MotifClass::DoubleEdge).unwrap(),
            BigRational::new(1.into(), 483.into())
        );
        assert!(matches!(
            success_probability(&ds(&[2]), MotifClass::DoubleEdge),
            Err(DegreeError::DegenerateN { .. })
        ));
    }

    #[test]
    fn relations() {
        let p = |a, b| Pair::new(HalfEdge(a), HalfEdge(b));
        // two 2-stars sharing the centre (half-edges 5,6), distinct leaves
        let d = ds(&[1, 1, 1, 1, 2]);
        let a = Motif::new(MotifClass::TwoStar, vec![p(1, 5), p(2, 6)]);
        let b = Motif::new(MotifClass::TwoStar, vec![p(3, 5), p(4, 6)]);
        let r = relation(&d, &a, &b);
        assert!(r.shares_vertex && r.shares_half_edge && !r.shares_common_edge);

        let d = ds(&[1, 1, 1, 1]);
        let r = relation(&d, &Motif::new(MotifClass::Edge, vec![p(1, 2)]), &Motif::new(MotifClass::Edge, vec![p(3, 4)]));
        assert!(!r.shares_vertex && !r.shares_half_edge && !r.shares_common_edge && !r.equal);

        let d = ds(&[3, 3]);
        let a = Motif::new(MotifClass::DoubleEdge, vec![p(1, 4), p(2, 5)]);
        let b = Motif::new(MotifClass::DoubleEdge, vec![p(1, 4), p(3, 6)]);
        assert!(relation(&d, &a, &b).shares_common_edge);
    }

    #[test]
    fn neighbourhood_sizes() {
        // each isolated edge meets at most 2 n_1 others; each 2-star meets exactly one self-loop
        for degs in [vec![1, 1, 1, 1, 2], vec![1, 1, 2, 2, 3, 1], vec![1, 1, 1, 2, 2, 3, 4]] {
            let d = ds(&degs);
            let n1 = d.count_of_degree(1) as usize;
            let edges = enumerate_motifs(&d, MotifClass::Edge);
            for a in &edges {
                let k = edges.iter().filter(|b| *b != a && relation(&d, a, b).shares_vertex).count();
                assert!(k <= 2 * n1);
            }
            let loops = enumerate_motifs(&d, MotifClass::SelfLoop);
            for a in enumerate_motifs(&d, MotifClass::TwoStar) {
                assert_eq!(loops.iter().filter(|b| relation(&d, &a, b).shares_vertex).count(), 1);
            }
        }
    }

    fn degree_strategy() -> impl Strategy<Value = Vec<u32>> {
        prop::collection::vec(prop_oneof![4 => Just(1u32), 3 => Just(2u32), 2 => 0u32..6], 1..18)
            .prop_filter("even total", |v| v.iter().sum::<u32>() % 2 == 0)
    }

    proptest! {
        #[test]
        fn counts_match_enumeration(degs in degree_strategy()) {
            let d = ds(&degs);
            let c = class_counts(&d);
            for class in MotifClass::ALL {
                let motifs = enumerate_motifs(&d, class);
                prop_assert_eq!(motifs.len() as u128, c.get(class));
                for m in &motifs {
                    prop_assert!(m.is_valid(&d));
                }
            }
        }

        #[test]
        fn relation_flags_nest(degs in degree_strategy(), i in 0usize..50, j in 0usize..50) {
            let d = ds(&degs);
            let all: Vec<Motif> = MotifClass::ALL.iter().flat_map(|&c| enumerate_motifs(&d, c)).collect();
            prop_assume!(!all.is_empty());
            let (a, b) = (&all[i % all.len()], &all[j % all.len()]);
            let r = relation(&d, a, b);
            prop_assert!(!r.shares_common_edge || r.shares_half_edge);
            prop_assert!(!r.shares_half_edge || r.shares_vertex);
            prop_assert_eq!(r, relation(&d, b, a));
        }
    }
}
