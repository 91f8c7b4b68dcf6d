//! Filter / rank / select, one pod at a time.

use std::collections::BTreeMap;
use std::fmt;

use crate::cluster::{Cluster, Node, NodeId, PodRef, Shortfall};

use super::{PodRequest, Predicate, Scoring};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeVerdict {
    pub node: NodeId,
    pub verdict: Result<(), Predicate>,
}

/// Evaluates the predicates of `pod` against one node. The pod's own gang
/// reservations count as free capacity.
pub fn check_node(pod: &PodRequest, node: &Node) -> Result<(), Predicate> {
    if !node.is_schedulable() {
        return Err(Predicate::NodeUnschedulable);
    }
    if pod.demand.gpus > 0 && node.gpu_class() != &pod.demand.gpu_class {
        return Err(Predicate::GpuClassMismatch);
    }
    pod.demand.fits_within(&node.free_for(&pod.gang_id)).map_err(|s| match s {
        Shortfall::Gpu => Predicate::InsufficientGpu,
        Shortfall::Cpu => Predicate::InsufficientCpu,
        Shortfall::Mem => Predicate::InsufficientMem,
    })
}

/// One verdict per node, in node order.
pub fn filter_nodes(pod: &PodRequest, cluster: &Cluster) -> Vec<NodeVerdict> {
    cluster
        .node_ids()
        .map(|id| NodeVerdict { node: id, verdict: check_node(pod, cluster.node(id)) })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScoredNode {
    pub node: NodeId,
    pub score: u32,
}

/// Orders candidates best first. Pack scores allocated GPUs, Spread scores
/// free GPUs; higher wins and ties go to the lower node id.
pub fn rank_nodes(candidates: &[NodeId], cluster: &Cluster, scoring: Scoring) -> Vec<ScoredNode> {
    let mut scored: Vec<ScoredNode> = candidates
        .iter()
        .map(|&node| {
            let n = cluster.node(node);
            let score = match scoring {
                Scoring::Pack => n.allocated_gpus(),
                Scoring::Spread => n.free().gpus,
            };
            ScoredNode { node, score }
        })
        .collect();
    scored.sort_by(|a, b| b.score.cmp(&a.score).then(a.node.cmp(&b.node)));
    scored
}

/// No node passed the predicates; carries the per-predicate node counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Unschedulable {
    pub tally: BTreeMap<Predicate, usize>,
}

impl fmt::Display for Unschedulable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "No nodes are available that match all of the predicates: ")?;
        let parts: Vec<String> = self.tally.iter().map(|(p, n)| format!("{} ({n})", p.label())).collect();
        f.write_str(&parts.join(", "))
    }
}

impl std::error::Error for Unschedulable {}

/// Filters, ranks and binds `pod` to the best node.
pub fn schedule_pod(pod: &PodRequest, cluster: &mut Cluster, scoring: Scoring) -> Result<NodeId, Unschedulable> {
    let verdicts = filter_nodes(pod, cluster);
    let candidates: Vec<NodeId> = verdicts.iter().filter(|v| v.verdict.is_ok()).map(|v| v.node).collect();
    let Some(best) = rank_nodes(&candidates, cluster, scoring).first().map(|s| s.node) else {
        let mut tally = BTreeMap::new();
        for v in &verdicts {
            if let Err(p) = v.verdict {
                *tally.entry(p).or_insert(0) += 1;
            }
        }
        return Err(Unschedulable { tally });
    };
    cluster
        .allocate(best, PodRef::new(pod.gang_id.clone(), pod.learner_index), &pod.demand)
        .expect("filtered node must accept the pod");
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::{uniform_topology, GpuClass, NodeStatus, ResourceVector};

    fn pod(gang: &str, gpus: u32, class: GpuClass) -> PodRequest {
        PodRequest { gang_id: gang.into(), learner_index: 0, demand: ResourceVector::gpus(gpus, class) }
    }

    fn cluster(n: usize, gpus: u32) -> Cluster {
        Cluster::new(&uniform_topology(n, GpuClass::K80, gpus, 1_000_000, 1_000_000)).unwrap()
    }

    fn preload(c: &mut Cluster, node: usize, gpus: u32) {
        if gpus > 0 {
            c.allocate(NodeId(node), PodRef::new(format!("pre{node}"), 0), &ResourceVector::gpus(gpus, GpuClass::K80))
                .unwrap();
        }
    }

    #[test]
    fn class_mismatch_filters_everything() {
        let c = Cluster::new(&uniform_topology(3, GpuClass::P100, 4, 1_000_000, 1_000_000)).unwrap();
        let v = filter_nodes(&pod("j", 1, GpuClass::K80), &c);
        assert!(v.iter().all(|v| v.verdict == Err(Predicate::GpuClassMismatch)));
    }

    #[test]
    fn cordoned_node_excluded() {
        let mut c = cluster(2, 4);
        c.cordon(NodeId(1)).unwrap();
        assert_eq!(c.node(NodeId(1)).status, NodeStatus::Cordoned);
        let v = filter_nodes(&pod("j", 1, GpuClass::K80), &c);
        assert_eq!(v[0].verdict, Ok(()));
        assert_eq!(v[1].verdict, Err(Predicate::NodeUnschedulable));
    }

    #[test]
    fn filter_matches_brute_force_free_check() {
        // Free GPUs {1, 2, 3} on 4-GPU nodes.
        let mut c = cluster(3, 4);
        for (i, used) in [3, 2, 1].into_iter().enumerate() {
            preload(&mut c, i, used);
        }
        let p = pod("j", 2, GpuClass::K80);
        let got: Vec<NodeId> =
            filter_nodes(&p, &c).into_iter().filter(|v| v.verdict.is_ok()).map(|v| v.node).collect();
        let oracle: Vec<NodeId> = c.node_ids().filter(|&id| c.node(id).free().gpus >= 2).collect();
        assert_eq!(got, oracle);
        assert_eq!(got, [NodeId(1), NodeId(2)]);
    }

    #[test]
    fn pack_and_spread_orders() {
        let mut c = cluster(3, 4);
        for (i, used) in [3, 0, 1].into_iter().enumerate() {
            preload(&mut c, i, used);
        }
        let ids: Vec<NodeId> = c.node_ids().collect();
        let pack: Vec<NodeId> = rank_nodes(&ids, &c, Scoring::Pack).iter().map(|s| s.node).collect();
        let spread: Vec<NodeId> = rank_nodes(&ids, &c, Scoring::Spread).iter().map(|s| s.node).collect();
        assert_eq!(pack, [NodeId(0), NodeId(2), NodeId(1)]);
        assert_eq!(spread, [NodeId(1), NodeId(2), NodeId(0)]);
    }

    #[test]
    fn equal_nodes_rank_by_id() {
        let c = cluster(4, 4);
        let mut ids: Vec<NodeId> = c.node_ids().collect();
        ids.reverse();
        for scoring in [Scoring::Pack, Scoring::Spread] {
            let order: Vec<usize> = rank_nodes(&ids, &c, scoring).iter().map(|s| s.node.0).collect();
            assert_eq!(order, [0, 1, 2, 3]);
        }
    }

    #[test]
    fn fragmentation_example() {
        for (scoring, expect_big_fits) in [(Scoring::Spread, false), (Scoring::Pack, true)] {
            let mut c = cluster(4, 4);
            let mut used = Vec::new();
            for j in 0..4 {
                used.push(schedule_pod(&pod(&format!("small{j}"), 1, GpuClass::K80), &mut c, scoring).unwrap());
            }
            let big = schedule_pod(&pod("big", 4, GpuClass::K80), &mut c, scoring);
            assert_eq!(big.is_ok(), expect_big_fits, "{scoring:?}");
            if scoring == Scoring::Spread {
                used.sort();
                used.dedup();
                assert_eq!(used.len(), 4);
                assert!(c.nodes().iter().all(|n| n.free().gpus == 3));
                let err = big.unwrap_err();
                assert_eq!(err.tally.get(&Predicate::InsufficientGpu), Some(&4));
                assert!(err.to_string().contains("nvidia-gpu"));
            } else {
                assert!(used.iter().all(|&n| n == NodeId(0)));
            }
        }
    }

    #[test]
    fn exactly_fitting_node_chosen() {
        let mut c = cluster(1, 2);
        assert_eq!(schedule_pod(&pod("j", 2, GpuClass::K80), &mut c, Scoring::Spread), Ok(NodeId(0)));
    }
}
