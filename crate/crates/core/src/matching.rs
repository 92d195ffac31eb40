//! Perfect matchings of half-edges, the uniform sampler and the motif census.

use std::fmt::Write as _;

use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::combinatorics::{class_counts, success_probability, DegreeSequence, HalfEdge, Motif, MotifClass, Pair};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MatchingError {
    #[error("the model has no half-edges")]
    EmptyModel,
    #[error("no simple configuration after {attempts} attempts")]
    AttemptsExhausted { attempts: u64 },
    #[error("not a fixed-point-free involution: {0}")]
    NotInvolution(String),
    #[error("matching text: {0}")]
    Parse(String),
}

/// A fixed-point-free involution on `1..=N`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Matching {
    // partner[h - 1]
    partner: Vec<u32>,
}

impl Matching {
    pub fn from_pairs(total: u32, pairs: &[(u32, u32)]) -> Result<Self, MatchingError> {
        let mut partner = vec![0u32; total as usize];
        for &(a, b) in pairs {
            for h in [a, b] {
                if h == 0 || h > total || partner[h as usize - 1] != 0 {
                    return Err(MatchingError::NotInvolution(format!("half-edge {h} reused or out of range")));
                }
            }
            if a == b {
                return Err(MatchingError::NotInvolution(format!("{a} paired with itself")));
            }
            partner[a as usize - 1] = b;
            partner[b as usize - 1] = a;
        }
        if partner.iter().any(|&p| p == 0) {
            return Err(MatchingError::NotInvolution("some half-edge left unpaired".into()));
        }
        Ok(Matching { partner })
    }

    /// Caller guarantees the involution property.
    pub(crate) fn from_partner_unchecked(partner: Vec<u32>) -> Self {
        let m = Matching { partner };
        debug_assert!(m.is_involution());
        m
    }

    pub fn total(&self) -> u32 {
        self.partner.len() as u32
    }

    pub fn partner(&self, h: HalfEdge) -> HalfEdge {
        HalfEdge(self.partner[h.0 as usize - 1])
    }

    pub fn has_pair(&self, p: Pair) -> bool {
        self.partner(p.lo) == p.hi
    }

    pub fn is_involution(&self) -> bool {
        self.partner.iter().enumerate().all(|(i, &p)| {
            let h = i as u32 + 1;
            p != 0 && p != h && (p as usize) <= self.partner.len() && self.partner[p as usize - 1] == h
        })
    }

    /// Pairs `(s, t)` with `s < t`, ascending by `s`.
    pub fn pairs(&self) -> Vec<Pair> {
        self.partner
            .iter()
            .enumerate()
            .filter(|(i, &p)| (*i as u32 + 1) < p)
            .map(|(i, &p)| Pair::new(HalfEdge(i as u32 + 1), HalfEdge(p)))
            .collect()
    }

    /// Swaps in two pairs after removing the pairs they replace.
    pub(crate) fn rewire(&mut self, a: (HalfEdge, HalfEdge), b: (HalfEdge, HalfEdge)) {
        for (x, y) in [a, b] {
            self.partner[x.0 as usize - 1] = y.0;
            self.partner[y.0 as usize - 1] = x.0;
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{}\n", self.total());
        for p in self.pairs() {
            let _ = writeln!(s, "{} {}", p.lo, p.hi);
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, MatchingError> {
        let mut nums = text.split_whitespace().map(|t| t.parse::<u32>().map_err(|_| MatchingError::Parse(t.into())));
        let total = nums.next().ok_or_else(|| MatchingError::Parse("empty".into()))??;
        let rest: Vec<u32> = nums.collect::<Result<_, _>>()?;
        if rest.len() != total as usize {
            return Err(MatchingError::Parse(format!("expected {} pairs", total / 2)));
        }
        let pairs: Vec<(u32, u32)> = rest.chunks(2).map(|c| (c[0], c[1])).collect();
        Self::from_pairs(total, &pairs)
    }
}

/// Pairs the lowest unmatched half-edge with a uniform partner among the rest.
pub fn sample_uniform<R: Rng + ?Sized>(ds: &DegreeSequence, rng: &mut R) -> Result<Matching, MatchingError> {
    let n = ds.total() as usize;
    if n == 0 {
        return Err(MatchingError::EmptyModel);
    }
    // unordered pool of unmatched half-edges with positions for O(1) removal
    let mut pool: Vec<u32> = (1..=n as u32).collect();
    let mut pos: Vec<usize> = (0..n).collect();
    let mut partner = vec![0u32; n];
    let take = |pool: &mut Vec<u32>, pos: &mut Vec<usize>, h: u32| {
        let i = pos[h as usize - 1];
        let last = pool.pop().unwrap();
        if last != h {
            pool[i] = last;
            pos[last as usize - 1] = i;
        }
    };
    let mut low = 1u32;
    while !pool.is_empty() {
        while partner[low as usize - 1] != 0 {
            low += 1;
        }
        take(&mut pool, &mut pos, low);
        let b = pool[rng.gen_range(0..pool.len())];
        take(&mut pool, &mut pos, b);
        partner[low as usize - 1] = b;
        partner[b as usize - 1] = low;
    }
    Ok(Matching::from_partner_unchecked(partner))
}

pub fn contains(g: &Matching, motif: &Motif) -> bool {
    motif.pairs().iter().all(|&p| g.has_pair(p))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize)]
pub struct MotifStatistics {
    pub z_edge: u64,
    pub z_twostar: u64,
    pub s_loops: u64,
    pub m_doubles: u64,
    pub simple: bool,
}

impl MotifStatistics {
    pub fn get(&self, class: MotifClass) -> u64 {
        match class {
            MotifClass::Edge => self.z_edge,
            MotifClass::TwoStar => self.z_twostar,
            MotifClass::SelfLoop => self.s_loops,
            MotifClass::DoubleEdge => self.m_doubles,
        }
    }
}

/// One pass over the matching via vertex multiplicities.
pub fn census(g: &Matching, ds: &DegreeSequence) -> MotifStatistics {
    let mut stats = MotifStatistics::default();
    let mut links: Vec<(u32, u32)> = Vec::with_capacity(g.total() as usize / 2);
    for p in g.pairs() {
        let (u, w) = (ds.vertex_of(p.lo).0 as u32, ds.vertex_of(p.hi).0 as u32);
        if u == w {
            stats.s_loops += 1;
        } else {
            links.push((u.min(w), u.max(w)));
            if ds.degree_of(p.lo) == 1 && ds.degree_of(p.hi) == 1 {
                stats.z_edge += 1;
            }
        }
    }
    links.sort_unstable();
    let mut i = 0;
    while i < links.len() {
        let mut j = i;
        while j < links.len() && links[j] == links[i] {
            j += 1;
        }
        let x = (j - i) as u64;
        stats.m_doubles += x * (x - 1) / 2;
        i = j;
    }
    for v in 0..ds.n() {
        let v = crate::combinatorics::Vertex(v);
        if ds.degree(v) == 2 {
            let leafy = ds.half_edges(v).all(|h| ds.degree_of(g.partner(h)) == 1);
            stats.z_twostar += leafy as u64;
        }
    }
    stats.simple = stats.s_loops + stats.m_doubles == 0;
    stats
}

/// Centred and `1/sqrt(n)`-scaled isolated-tree counts, against unconditional means.
pub fn normalize(stats: &MotifStatistics, ds: &DegreeSequence) -> (f64, f64) {
    let counts = class_counts(ds);
    let root = (ds.n() as f64).sqrt();
    let centred = |class: MotifClass, z: u64| {
        let mean = match success_probability(ds, class) {
            Ok(p) => counts.get(class) as f64 * p,
            Err(_) => 0.0,
        };
        (z as f64 - mean) / root
    };
    (centred(MotifClass::Edge, stats.z_edge), centred(MotifClass::TwoStar, stats.z_twostar))
}

pub const DEFAULT_MAX_ATTEMPTS: u64 = 1_000_000;

/// Rejection sampler for configurations that induce a simple graph.
pub fn sample_simple<R: Rng + ?Sized>(
    ds: &DegreeSequence,
    rng: &mut R,
    max_attempts: u64,
) -> Result<(Matching, MotifStatistics), MatchingError> {
    for _ in 0..max_attempts {
        let g = sample_uniform(ds, rng)?;
        let stats = census(&g, ds);
        if stats.simple {
            return Ok((g, stats));
        }
    }
    Err(MatchingError::AttemptsExhausted { attempts: max_attempts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::combinatorics::enumerate_motifs;
    use crate::oracle::enumerate_matchings;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashMap;

    fn ds(d: &[u32]) -> DegreeSequence {
        DegreeSequence::build(d).unwrap()
    }

    fn m(total: u32, pairs: &[(u32, u32)]) -> Matching {
        Matching::from_pairs(total, pairs).unwrap()
    }

    #[test]
    fn uniform_on_three() {
        let d = ds(&[1, 1, 2]);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let reps = 300_000;
        let mut freq: HashMap<Matching, u64> = HashMap::new();
        for _ in 0..reps {
            *freq.entry(sample_uniform(&d, &mut rng).unwrap()).or_default() += 1;
        }
        assert_eq!(freq.len(), 3);
        let se = (1.0 / 3.0 * 2.0 / 3.0 / reps as f64).sqrt();
        for &c in freq.values() {
            assert!((c as f64 / reps as f64 - 1.0 / 3.0).abs() < 4.0 * se);
        }
        let two = ds(&[2]);
        assert_eq!(sample_uniform(&two, &mut rng).unwrap(), m(2, &[(1, 2)]));
        assert_eq!(sample_uniform(&ds(&[0]), &mut rng), Err(MatchingError::EmptyModel));
    }

    #[test]
    fn indicator_and_census() {
        let d = ds(&[1, 1, 2]);
        let g = m(4, &[(1, 2), (3, 4)]);
        let p = |a, b| Pair::new(HalfEdge(a), HalfEdge(b));
        assert!(contains(&g, &Motif::new(MotifClass::Edge, vec![p(1, 2)])));
        assert!(!contains(&g, &Motif::new(MotifClass::TwoStar, vec![p(1, 3), p(4, 2)])));
        let s = census(&g, &d);
        assert_eq!((s.z_edge, s.z_twostar, s.s_loops, s.m_doubles, s.simple), (1, 0, 1, 0, false));
        let s = census(&m(4, &[(1, 3), (2, 4)]), &d);
        assert_eq!((s.z_edge, s.z_twostar, s.s_loops, s.m_doubles, s.simple), (0, 1, 0, 0, true));
        let s = census(&m(6, &[(1, 4), (2, 5), (3, 6)]), &ds(&[3, 3]));
        assert_eq!(s.m_doubles, 3);
    }

    #[test]
    fn normalization() {
        let d4 = ds(&[1, 1, 1, 1]);
        let st = MotifStatistics { z_edge: 2, ..Default::default() };
        assert!(normalize(&st, &d4).0.abs() < 1e-15);
        let d = ds(&[1, 1, 2]);
        let st = MotifStatistics { z_twostar: 1, ..Default::default() };
        assert!((normalize(&st, &d).1 - 0.19245008972987526).abs() < 1e-12);
        let w = normalize(&MotifStatistics::default(), &d).0;
        assert!((w + (1.0 / 3.0) / 3f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn rejection() {
        let d = ds(&[1, 1, 2]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut hits: HashMap<Matching, u64> = HashMap::new();
        for _ in 0..20_000 {
            *hits.entry(sample_simple(&d, &mut rng, 1000).unwrap().0).or_default() += 1;
        }
        assert_eq!(hits.len(), 2);
        for &c in hits.values() {
            assert!((c as f64 / 20_000.0 - 0.5).abs() < 4.0 * (0.25f64 / 20_000.0).sqrt());
        }
        assert_eq!(
            sample_simple(&ds(&[3, 3]), &mut rng, 500).unwrap_err(),
            MatchingError::AttemptsExhausted { attempts: 500 }
        );
        assert!(sample_simple(&ds(&[1, 1, 1, 1]), &mut rng, 1).is_ok());
    }

    #[test]
    fn census_equals_indicator_sums_exhaustively() {
        for degs in [vec![1, 1, 2], vec![1, 1, 1, 1, 2], vec![2, 2, 1, 1, 2], vec![3, 3, 2, 2], vec![1, 1, 1, 1, 2, 2, 2]] {
            let d = ds(&degs);
            let motifs: Vec<Vec<Motif>> = MotifClass::ALL.iter().map(|&c| enumerate_motifs(&d, c)).collect();
            for g in enumerate_matchings(d.total()).unwrap() {
                let s = census(&g, &d);
                for (k, class) in MotifClass::ALL.iter().enumerate() {
                    let direct = motifs[k].iter().filter(|a| contains(&g, a)).count() as u64;
                    assert_eq!(s.get(*class), direct, "{degs:?} {class:?}");
                }
            }
        }
    }

    #[test]
    fn text_round_trip() {
        let g = m(6, &[(1, 4), (2, 5), (3, 6)]);
        assert_eq!(g.to_text(), "6\n1 4\n2 5\n3 6\n");
        assert_eq!(Matching::from_text(&g.to_text()).unwrap(), g);
        assert!(Matching::from_text("4\n1 2\n2 3\n").is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn sampled_matchings_are_involutions(seed in any::<u64>(), degs in prop::collection::vec(0u32..5, 1..60)) {
            let mut degs = degs;
            if degs.iter().sum::<u32>() % 2 == 1 { degs.push(1); }
            let d = ds(&degs);
            prop_assume!(d.total() > 0);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = sample_uniform(&d, &mut rng).unwrap();
            prop_assert!(g.is_involution());
            let s = census(&g, &d);
            for (k, class) in MotifClass::ALL.iter().enumerate() {
                if d.total() <= 200 && k < 3 {
                    let direct = enumerate_motifs(&d, *class).iter().filter(|a| contains(&g, a)).count() as u64;
                    prop_assert_eq!(s.get(*class), direct);
                }
            }
        }
    }
}
