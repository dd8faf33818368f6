use std::collections::BTreeMap;

use log::warn;

use super::load::{EdgeList, IdMap};
use crate::error::{Error, Result};
use crate::tensor::{Csr, SliceSparse3};

/// An edge stored in one slot. For undirected graphs `i < j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotEdge {
    pub i: usize,
    pub j: usize,
    pub weight: f64,
}

/// Snapshot sequence over a fixed node set.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicGraph {
    num_nodes: usize,
    undirected: bool,
    edges: Vec<Vec<SlotEdge>>,
    adjacency: SliceSparse3,
    id_map: IdMap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BinOptions {
    pub slots: usize,
    pub undirected: bool,
    pub binarize: bool,
}

impl Default for BinOptions {
    fn default() -> Self {
        BinOptions {
            slots: 1,
            undirected: true,
            binarize: true,
        }
    }
}

impl DynamicGraph {
    /// Builds a graph from per-slot edge lists, which are canonicalized
    /// (`i < j` when undirected), sorted and checked for duplicates.
    pub fn from_slot_edges(
        num_nodes: usize,
        undirected: bool,
        edges: Vec<Vec<SlotEdge>>,
        id_map: IdMap,
    ) -> Result<Self> {
        if edges.is_empty() {
            return Err(Error::param("a dynamic graph needs at least one slot"));
        }
        let mut canon = Vec::with_capacity(edges.len());
        for (t, slot) in edges.into_iter().enumerate() {
            let mut slot: Vec<SlotEdge> = slot
                .into_iter()
                .map(|e| {
                    if undirected && e.i > e.j {
                        SlotEdge {
                            i: e.j,
                            j: e.i,
                            ..e
                        }
                    } else {
                        e
                    }
                })
                .collect();
            for e in &slot {
                if e.i >= num_nodes || e.j >= num_nodes {
                    return Err(Error::shape(format!(
                        "edge ({}, {}) at slot {t} exceeds {num_nodes} nodes",
                        e.i, e.j
                    )));
                }
                if e.i == e.j {
                    return Err(Error::param(format!(
                        "self-loop on node {} at slot {t}",
                        e.i
                    )));
                }
            }
            slot.sort_by_key(|e| (e.i, e.j));
            if slot
                .windows(2)
                .any(|w| (w[0].i, w[0].j) == (w[1].i, w[1].j))
            {
                return Err(Error::param(format!("duplicate edge at slot {t}")));
            }
            canon.push(slot);
        }
        let adjacency = build_adjacency(num_nodes, undirected, &canon)?;
        Ok(DynamicGraph {
            num_nodes,
            undirected,
            edges: canon,
            adjacency,
            id_map,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_slots(&self) -> usize {
        self.edges.len()
    }

    pub fn undirected(&self) -> bool {
        self.undirected
    }

    pub fn id_map(&self) -> &IdMap {
        &self.id_map
    }

    pub fn slot_edges(&self, t: usize) -> &[SlotEdge] {
        &self.edges[t]
    }

    pub fn num_edges(&self) -> usize {
        self.edges.iter().map(Vec::len).sum()
    }

    pub fn adjacency(&self) -> &SliceSparse3 {
        &self.adjacency
    }

    /// Orients a pair the way edges are stored.
    pub fn canonical(&self, i: usize, j: usize) -> (usize, usize) {
        if self.undirected && i > j {
            (j, i)
        } else {
            (i, j)
        }
    }

    pub fn has_edge(&self, t: usize, i: usize, j: usize) -> bool {
        let (a, b) = self.canonical(i, j);
        self.edges[t]
            .binary_search_by(|e| (e.i, e.j).cmp(&(a, b)))
            .is_ok()
    }

    /// Same nodes and slots, restricted to the given edges.
    pub fn with_edges(&self, edges: Vec<Vec<SlotEdge>>) -> Result<Self> {
        if edges.len() != self.num_slots() {
            return Err(Error::shape("slot count changed"));
        }
        DynamicGraph::from_slot_edges(self.num_nodes, self.undirected, edges, self.id_map.clone())
    }
}

fn build_adjacency(n: usize, undirected: bool, edges: &[Vec<SlotEdge>]) -> Result<SliceSparse3> {
    let slices = edges
        .iter()
        .map(|slot| {
            let mut trip = Vec::with_capacity(slot.len() * 2);
            for e in slot {
                trip.push((e.i, e.j, e.weight));
                if undirected {
                    trip.push((e.j, e.i, e.weight));
                }
            }
            Csr::from_triplets(n, n, &trip)
        })
        .collect::<Result<Vec<_>>>()?;
    SliceSparse3::new(n, n, slices)
}

/// Slot of a timestamp: `floor(T (ts - min) / (max - min + 1))`.
pub fn slot_of(ts: i64, min: i64, max: i64, slots: usize) -> usize {
    let span = (max as i128) - (min as i128) + 1;
    let s = (slots as i128) * ((ts as i128) - (min as i128)) / span;
    s as usize
}

/// Bins timestamped events into `opts.slots` snapshots. Self-loops are
/// dropped; repeated edges in a slot collapse to weight 1 when binarizing
/// and otherwise accumulate their weights (default weight 1).
pub fn bin_snapshots(list: &EdgeList, opts: BinOptions) -> Result<DynamicGraph> {
    if opts.slots == 0 {
        return Err(Error::param("slot count T must be at least 1"));
    }
    if list.events.is_empty() {
        return Err(Error::EmptyInput("no events to bin".into()));
    }
    let min = list.events.iter().map(|e| e.timestamp).min().unwrap();
    let max = list.events.iter().map(|e| e.timestamp).max().unwrap();
    if min == max && opts.slots > 1 {
        warn!("all timestamps equal {min}; every event lands in slot 0");
    }
    let mut slots: Vec<BTreeMap<(usize, usize), f64>> = vec![BTreeMap::new(); opts.slots];
    for e in &list.events {
        if e.src == e.dst {
            continue;
        }
        let t = slot_of(e.timestamp, min, max, opts.slots);
        let key = if opts.undirected && e.src > e.dst {
            (e.dst, e.src)
        } else {
            (e.src, e.dst)
        };
        let entry = slots[t].entry(key).or_insert(0.0);
        if opts.binarize {
            *entry = 1.0;
        } else {
            *entry += e.weight.unwrap_or(1.0);
        }
    }
    let edges = slots
        .into_iter()
        .map(|m| {
            m.into_iter()
                .filter(|&(_, w)| w != 0.0)
                .map(|((i, j), weight)| SlotEdge { i, j, weight })
                .collect()
        })
        .collect();
    DynamicGraph::from_slot_edges(
        list.num_nodes(),
        opts.undirected,
        edges,
        list.id_map.clone(),
    )
}
