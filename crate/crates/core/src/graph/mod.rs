//! Temporal edge lists, snapshot binning, edge splits and negative sampling.

mod load;
mod snapshot;
mod split;

pub use load::{load_edge_list, parse_edge_list, EdgeEvent, EdgeList, IdMap};
pub use snapshot::{bin_snapshots, slot_of, BinOptions, DynamicGraph, SlotEdge};
pub use split::{
    negative_sample, split_edges, EdgeSplit, LabeledPair, LabeledPairSet, Role, SplitFractions,
};
