//! Seeded planted-partition dynamic graphs.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{DynamicGraph, EdgeEvent, EdgeList, IdMap, SlotEdge};

/// Independent per-slot stochastic block model with equal-size
/// communities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantedPartition {
    pub nodes: usize,
    pub slots: usize,
    pub communities: usize,
    pub p_in: f64,
    pub p_out: f64,
}

impl Default for PlantedPartition {
    fn default() -> Self {
        PlantedPartition {
            nodes: 60,
            slots: 8,
            communities: 2,
            p_in: 0.20,
            p_out: 0.02,
        }
    }
}

impl PlantedPartition {
    pub fn validate(&self) -> Result<()> {
        if self.nodes < 2
            || self.slots == 0
            || self.communities == 0
            || self.communities > self.nodes
        {
            return Err(Error::param(
                "planted partition needs nodes >= 2, slots >= 1, 1 <= communities <= nodes",
            ));
        }
        for p in [self.p_in, self.p_out] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::param(format!("edge probability {p} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Community of node `i`; nodes are assigned in contiguous blocks.
    pub fn community(&self, i: usize) -> usize {
        i * self.communities / self.nodes
    }

    pub fn generate(&self, seed: u64) -> Result<DynamicGraph> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut slots = Vec::with_capacity(self.slots);
        for _ in 0..self.slots {
            let mut edges = Vec::new();
            for i in 0..self.nodes {
                for j in i + 1..self.nodes {
                    let p = if self.community(i) == self.community(j) {
                        self.p_in
                    } else {
                        self.p_out
                    };
                    if rng.gen::<f64>() < p {
                        edges.push(SlotEdge { i, j, weight: 1.0 });
                    }
                }
            }
            slots.push(edges);
        }
        let ids = IdMap::from_external((0..self.nodes as i64).collect())?;
        DynamicGraph::from_slot_edges(self.nodes, true, slots, ids)
    }
}

/// Events with `timestamp = slot`, so binning into the same number of
/// slots recovers the graph whenever the last slot is non-empty.
pub fn to_edge_list(g: &DynamicGraph) -> EdgeList {
    let mut events = Vec::with_capacity(g.num_edges());
    for t in 0..g.num_slots() {
        for e in g.slot_edges(t) {
            events.push(EdgeEvent {
                src: e.i,
                dst: e.j,
                timestamp: t as i64,
                weight: None,
            });
        }
    }
    EdgeList {
        events,
        id_map: g.id_map().clone(),
    }
}

/// Writes `src dst timestamp` lines using external ids.
pub fn write_edge_list(list: &EdgeList, mut w: impl Write) -> std::io::Result<()> {
    for e in &list.events {
        let s = list.id_map.external(e.src).unwrap_or(e.src as i64);
        let d = list.id_map.external(e.dst).unwrap_or(e.dst as i64);
        writeln!(w, "{s} {d} {}", e.timestamp)?;
    }
    Ok(())
}
