use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use log::info;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::snapshot::{DynamicGraph, SlotEdge};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Train,
    Val,
    Test,
}

impl Role {
    pub fn code(self) -> i64 {
        match self {
            Role::Train => 0,
            Role::Val => 1,
            Role::Test => 2,
        }
    }

    pub fn from_code(c: i64) -> Option<Role> {
        match c {
            0 => Some(Role::Train),
            1 => Some(Role::Val),
            2 => Some(Role::Test),
            _ => None,
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Train => "train",
            Role::Val => "val",
            Role::Test => "test",
        })
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Role> {
        match s {
            "train" => Ok(Role::Train),
            "val" => Ok(Role::Val),
            "test" => Ok(Role::Test),
            other => Err(Error::param(format!("unknown split `{other}`"))),
        }
    }
}

/// A labeled `(i, j, t)` pair; `label` is 1 for an observed edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LabeledPair {
    pub i: usize,
    pub j: usize,
    pub t: usize,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPairSet {
    pub role: Role,
    pub entries: Vec<LabeledPair>,
}

impl LabeledPairSet {
    pub fn new(role: Role) -> Self {
        LabeledPairSet {
            role,
            entries: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn labels(&self) -> Vec<f64> {
        self.entries.iter().map(|e| f64::from(e.label)).collect()
    }

    pub fn positives(&self) -> impl Iterator<Item = &LabeledPair> {
        self.entries.iter().filter(|e| e.label == 1)
    }

    /// Entries of `self` followed by entries of `other`.
    pub fn concat(&self, other: &LabeledPairSet) -> LabeledPairSet {
        let mut entries = self.entries.clone();
        entries.extend_from_slice(&other.entries);
        LabeledPairSet {
            role: self.role,
            entries,
        }
    }

    /// Checks uniqueness of `(i, j, t)` and label consistency against `g`.
    pub fn validate(&self, g: &DynamicGraph) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.entries.len());
        for e in &self.entries {
            if e.i >= g.num_nodes() || e.j >= g.num_nodes() || e.t >= g.num_slots() {
                return Err(Error::shape(format!("pair {e:?} outside the graph")));
            }
            let (a, b) = g.canonical(e.i, e.j);
            if !seen.insert((a, b, e.t)) {
                return Err(Error::Contract(format!(
                    "duplicate pair {e:?} in {} set",
                    self.role
                )));
            }
            if (e.label == 1) != g.has_edge(e.t, e.i, e.j) {
                return Err(Error::Contract(format!(
                    "label of {e:?} disagrees with the graph"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.7,
            val: 0.2,
            test: 0.1,
        }
    }
}

impl SplitFractions {
    fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|&f| !(f > 0.0) || !f.is_finite()) {
            return Err(Error::param("split fractions must be positive"));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::param("split fractions must sum to 1"));
        }
        Ok(())
    }

    /// `(train, val, test)` counts for `n` edges: val and test are rounded
    /// to nearest and train takes the remainder.
    pub fn counts(&self, n: usize) -> (usize, usize, usize) {
        let val = (self.val * n as f64).round() as usize;
        let test = (self.test * n as f64).round() as usize;
        let val = val.min(n);
        let test = test.min(n - val);
        (n - val - test, val, test)
    }
}

/// Positive pairs per role plus the message-passing graph that keeps only
/// training edges.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeSplit {
    pub train: LabeledPairSet,
    pub val: LabeledPairSet,
    pub test: LabeledPairSet,
    pub masked: DynamicGraph,
}

/// Partitions each slot's edges at random into train/val/test positives.
/// Slots with fewer than three edges go entirely to train.
pub fn split_edges(g: &DynamicGraph, fractions: SplitFractions, seed: u64) -> Result<EdgeSplit> {
    fractions.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = LabeledPairSet::new(Role::Train);
    let mut val = LabeledPairSet::new(Role::Val);
    let mut test = LabeledPairSet::new(Role::Test);
    let mut kept: Vec<Vec<SlotEdge>> = Vec::with_capacity(g.num_slots());
    for t in 0..g.num_slots() {
        let mut edges = g.slot_edges(t).to_vec();
        let pair = |e: &SlotEdge| LabeledPair {
            i: e.i,
            j: e.j,
            t,
            label: 1,
        };
        if edges.len() < 3 {
            if !edges.is_empty() {
                info!("slot {t} has {} edges; all assigned to train", edges.len());
            }
            train.entries.extend(edges.iter().map(pair));
            kept.push(edges);
            continue;
        }
        edges.shuffle(&mut rng);
        let (n_train, n_val, _) = fractions.counts(edges.len());
        let (tr, rest) = edges.split_at(n_train);
        let (va, te) = rest.split_at(n_val);
        train.entries.extend(tr.iter().map(pair));
        val.entries.extend(va.iter().map(pair));
        test.entries.extend(te.iter().map(pair));
        kept.push(tr.to_vec());
    }
    let masked = g.with_edges(kept)?;
    Ok(EdgeSplit {
        train,
        val,
        test,
        masked,
    })
}

const REJECTION_TRIES: usize = 32;

/// Draws `ratio` corrupted-tail negatives `(i, j', t)` for every positive
/// `(i, j, t)`. Negatives avoid self pairs, edges observed in `g` at slot
/// `t`, and pairs already drawn in this call.
pub fn negative_sample(
    g: &DynamicGraph,
    positives: &LabeledPairSet,
    ratio: usize,
    seed: u64,
) -> Result<LabeledPairSet> {
    if ratio == 0 {
        return Err(Error::param("negative ratio must be at least 1"));
    }
    let n = g.num_nodes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sampled: HashSet<(usize, usize, usize)> = HashSet::new();
    let mut out = LabeledPairSet::new(positives.role);
    let free = |t: usize, a: usize, b: usize, sampled: &HashSet<(usize, usize, usize)>| {
        if a == b || g.has_edge(t, a, b) {
            return false;
        }
        let (x, y) = g.canonical(a, b);
        !sampled.contains(&(x, y, t))
    };
    for p in positives.positives() {
        for _ in 0..ratio {
            let t = p.t;
            let anchor = p.i;
            let mut pick = None;
            for _ in 0..REJECTION_TRIES {
                let cand = rng.gen_range(0..n);
                if free(t, anchor, cand, &sampled) {
                    pick = Some((anchor, cand));
                    break;
                }
            }
            if pick.is_none() {
                let options: Vec<usize> =
                    (0..n).filter(|&c| free(t, anchor, c, &sampled)).collect();
                if let Some(&c) = options.choose(&mut rng) {
                    pick = Some((anchor, c));
                }
            }
            if pick.is_none() {
                let mut options = Vec::new();
                for a in 0..n {
                    let start = if g.undirected() { a + 1 } else { 0 };
                    for b in start..n {
                        if free(t, a, b, &sampled) {
                            options.push((a, b));
                        }
                    }
                }
                pick = options.choose(&mut rng).copied();
            }
            let (a, b) = pick
                .ok_or_else(|| Error::Sampling(format!("slot {t} has no remaining non-edges")))?;
            let (a, b) = g.canonical(a, b);
            sampled.insert((a, b, t));
            out.entries.push(LabeledPair {
                i: a,
                j: b,
                t,
                label: 0,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::load::IdMap;

    fn graph(n: usize, slots: Vec<Vec<(usize, usize)>>) -> DynamicGraph {
        let edges = slots
            .into_iter()
            .map(|s| {
                s.into_iter()
                    .map(|(i, j)| SlotEdge { i, j, weight: 1.0 })
                    .collect()
            })
            .collect();
        let ids = IdMap::from_external((0..n as i64).collect()).unwrap();
        DynamicGraph::from_slot_edges(n, true, edges, ids).unwrap()
    }

    fn ten_edges() -> DynamicGraph {
        graph(
            6,
            vec![(0..5)
                .flat_map(|i| [(i, i + 1), (i, (i + 2) % 6)])
                .collect()],
        )
    }

    #[test]
    fn ten_edges_split_seven_two_one() {
        let g = ten_edges();
        assert_eq!(g.num_edges(), 10);
        let s = split_edges(&g, SplitFractions::default(), 1).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (7, 2, 1));
        assert_eq!(s.masked.num_edges(), 7);
    }

    #[test]
    fn masked_graph_excludes_held_out() {
        let g = ten_edges();
        let s = split_edges(&g, SplitFractions::default(), 4).unwrap();
        for p in s.val.entries.iter().chain(&s.test.entries) {
            assert!(!s.masked.has_edge(p.t, p.i, p.j));
            assert_eq!(s.masked.adjacency().get(p.i, p.j, p.t), 0.0);
        }
        for p in &s.train.entries {
            assert!(s.masked.has_edge(p.t, p.i, p.j));
        }
    }

    #[test]
    fn split_is_seed_deterministic() {
        let g = ten_edges();
        let a = split_edges(&g, SplitFractions::default(), 9).unwrap();
        let b = split_edges(&g, SplitFractions::default(), 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn small_slots_go_to_train() {
        let g = graph(4, vec![vec![(0, 1), (1, 2)], vec![]]);
        let s = split_edges(&g, SplitFractions::default(), 0).unwrap();
        assert_eq!(s.train.len(), 2);
        assert!(s.val.is_empty() && s.test.is_empty());
    }

    #[test]
    fn bad_fractions_rejected() {
        let g = ten_edges();
        let f = SplitFractions {
            train: 0.7,
            val: 0.2,
            test: 0.2,
        };
        assert!(split_edges(&g, f, 0).is_err());
        let f = SplitFractions {
            train: 1.0,
            val: 0.0,
            test: 0.0,
        };
        assert!(split_edges(&g, f, 0).is_err());
    }

    #[test]
    fn counts_stay_within_one() {
        let f = SplitFractions::default();
        for n in 3..500 {
            let (a, b, c) = f.counts(n);
            assert_eq!(a + b + c, n);
            let nf = n as f64;
            assert!((a as f64 - 0.7 * nf).abs() <= 1.0, "n={n}");
            assert!((b as f64 - 0.2 * nf).abs() <= 1.0);
            assert!((c as f64 - 0.1 * nf).abs() <= 1.0);
        }
    }

    #[test]
    fn negative_drawn_from_complement() {
        let g = graph(3, vec![vec![(0, 1)]]);
        let pos = LabeledPairSet {
            role: Role::Train,
            entries: vec![LabeledPair {
                i: 0,
                j: 1,
                t: 0,
                label: 1,
            }],
        };
        for seed in 0..20 {
            let neg = negative_sample(&g, &pos, 1, seed).unwrap();
            assert_eq!(
                neg.entries,
                vec![LabeledPair {
                    i: 0,
                    j: 2,
                    t: 0,
                    label: 0
                }]
            );
        }
    }

    #[test]
    fn ratio_sets_count_and_negatives_avoid_positives() {
        let big = graph(20, vec![(0..19).map(|i| (i, i + 1)).collect()]);
        let s = split_edges(&big, SplitFractions::default(), 2).unwrap();
        let neg = negative_sample(&big, &s.train, 1, 5).unwrap();
        assert_eq!(neg.len(), s.train.len());
        s.train.concat(&neg).validate(&big).unwrap();
        let neg2 = negative_sample(&big, &s.train, 2, 5).unwrap();
        assert_eq!(neg2.len(), 2 * s.train.len());
        s.train.concat(&neg2).validate(&big).unwrap();
    }

    #[test]
    fn exhausted_anchor_falls_back() {
        // node 0 is adjacent to everyone; its negatives must come from elsewhere
        let g = graph(4, vec![vec![(0, 1), (0, 2), (0, 3)]]);
        let pos = LabeledPairSet {
            role: Role::Train,
            entries: vec![LabeledPair {
                i: 0,
                j: 1,
                t: 0,
                label: 1,
            }],
        };
        let neg = negative_sample(&g, &pos, 1, 3).unwrap();
        let e = neg.entries[0];
        assert!(!g.has_edge(0, e.i, e.j) && e.i != e.j);
    }

    #[test]
    fn complete_slice_is_an_error() {
        let g = graph(3, vec![vec![(0, 1), (0, 2), (1, 2)]]);
        let pos = LabeledPairSet {
            role: Role::Train,
            entries: vec![LabeledPair {
                i: 0,
                j: 1,
                t: 0,
                label: 1,
            }],
        };
        assert!(matches!(
            negative_sample(&g, &pos, 1, 0),
            Err(Error::Sampling(_))
        ));
    }

    #[test]
    fn zero_ratio_rejected() {
        let g = ten_edges();
        assert!(negative_sample(&g, &LabeledPairSet::new(Role::Val), 0, 0).is_err());
    }
}
