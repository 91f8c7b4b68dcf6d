//! All-or-nothing gang placement by biased sampling.
//!
//! Nodes that pass the predicates get a sampling bias of `1 + allocated GPUs`
//! (the Pack ranking turned into a preference). Each sample assigns the
//! pods one after another, drawing a node with probability proportional to
//! its bias among nodes that still fit the pod; capacity and bias are
//! updated inside the sample. Sample 0 is always a deterministic greedy
//! best-fit pass. The winner minimises (newly opened nodes, free GPUs left
//! on the touched nodes).

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use serde::Serialize;

use crate::cluster::{Cluster, NodeId, PodRef};
use crate::workload::Gang;

use super::filter::check_node;
use super::{PodRequest, Predicate};

/// How a committed assignment holds its capacity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Binding {
    /// Pods exist: bind them now.
    Allocate,
    /// Pods are not materialized yet: hold the capacity as reservations.
    Reserve,
}

/// Lexicographic packing objective; lower is better.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Objective {
    /// Touched nodes that held nothing before.
    pub opened_nodes: u32,
    /// Free GPUs remaining on the touched nodes after placement.
    pub free_gpu_fragments: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Assignment {
    pub gang_id: String,
    /// `(learner_index, node)` for every placed pod.
    pub placements: Vec<(u32, NodeId)>,
    pub feasible: bool,
    pub objective: Objective,
    /// Which sample won; 0 is the greedy pass.
    pub sample: u32,
}

impl Assignment {
    pub fn node_of(&self, learner: u32) -> Option<NodeId> {
        self.placements.iter().find(|(l, _)| *l == learner).map(|(_, n)| *n)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NoFeasibleAssignment {
    pub gang_id: String,
    /// Per-predicate count of nodes excluded for a single pod.
    pub tally: BTreeMap<Predicate, usize>,
    /// Pods that could not be fit even on the eligible nodes.
    pub missing_pods: u32,
}

impl fmt::Display for NoFeasibleAssignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "gang {}: no feasible assignment ({} pods short", self.gang_id, self.missing_pods)?;
        for (p, n) in &self.tally {
            write!(f, ", {} on {n} nodes", p.label())?;
        }
        write!(f, ")")
    }
}

impl std::error::Error for NoFeasibleAssignment {}

struct Eligible {
    node: NodeId,
    /// How many more pods fit.
    slots: u32,
    free_gpus: u32,
    allocated_gpus: u32,
    empty: bool,
}

fn eligible_nodes(pod: &PodRequest, cluster: &Cluster) -> (Vec<Eligible>, BTreeMap<Predicate, usize>) {
    let mut nodes = Vec::new();
    let mut tally = BTreeMap::new();
    for id in cluster.node_ids() {
        let n = cluster.node(id);
        match check_node(pod, n) {
            Ok(()) => {
                let free = n.free_for(&pod.gang_id);
                nodes.push(Eligible {
                    node: id,
                    slots: pod.demand.copies_within(&free),
                    free_gpus: free.gpus,
                    allocated_gpus: n.allocated_gpus(),
                    empty: n.committed_gpus() == 0,
                });
            }
            Err(p) => *tally.entry(p).or_insert(0) += 1,
        }
    }
    (nodes, tally)
}

fn evaluate(choice: &[usize], eligible: &[Eligible], gpus_per_pod: u32) -> Objective {
    let mut placed: BTreeMap<usize, u32> = BTreeMap::new();
    for &i in choice {
        *placed.entry(i).or_insert(0) += gpus_per_pod;
    }
    let mut obj = Objective { opened_nodes: 0, free_gpu_fragments: 0 };
    for (&i, &gpus) in &placed {
        if eligible[i].empty {
            obj.opened_nodes += 1;
        }
        obj.free_gpu_fragments += eligible[i].free_gpus - gpus;
    }
    obj
}

fn greedy_best_fit(eligible: &[Eligible], pods: usize, gpus_per_pod: u32) -> Vec<usize> {
    let mut slots: Vec<u32> = eligible.iter().map(|e| e.slots).collect();
    let mut free: Vec<u32> = eligible.iter().map(|e| e.free_gpus).collect();
    let mut choice = Vec::with_capacity(pods);
    for _ in 0..pods {
        let best = (0..eligible.len())
            .filter(|&i| slots[i] > 0)
            .min_by_key(|&i| (free[i] - gpus_per_pod, i))
            .expect("capacity pre-checked");
        slots[best] -= 1;
        free[best] -= gpus_per_pod;
        choice.push(best);
    }
    choice
}

fn biased_sample<R: Rng>(eligible: &[Eligible], pods: usize, gpus_per_pod: u32, rng: &mut R) -> Vec<usize> {
    let mut slots: Vec<u32> = eligible.iter().map(|e| e.slots).collect();
    let mut bias: Vec<u64> = eligible.iter().map(|e| 1 + e.allocated_gpus as u64).collect();
    let mut choice = Vec::with_capacity(pods);
    for _ in 0..pods {
        let total: u64 = (0..eligible.len()).filter(|&i| slots[i] > 0).map(|i| bias[i]).sum();
        let mut x = rng.random_range(0..total);
        let mut pick = usize::MAX;
        for i in 0..eligible.len() {
            if slots[i] == 0 {
                continue;
            }
            if x < bias[i] {
                pick = i;
                break;
            }
            x -= bias[i];
        }
        debug_assert!(pick != usize::MAX);
        slots[pick] -= 1;
        bias[pick] += gpus_per_pod as u64;
        choice.push(pick);
    }
    choice
}

/// Finds an assignment for `learners` of `gang` without touching the cluster.
pub fn plan_gang<R: Rng>(
    gang: &Gang,
    learners: &[u32],
    cluster: &Cluster,
    samples: u32,
    rng: &mut R,
) -> Result<Assignment, NoFeasibleAssignment> {
    let probe = PodRequest { gang_id: gang.gang_id.clone(), learner_index: 0, demand: gang.per_pod_demand.clone() };
    let (eligible, tally) = eligible_nodes(&probe, cluster);
    let capacity: u64 = eligible.iter().map(|e| e.slots as u64).sum();
    let pods = learners.len();
    if (capacity as usize) < pods {
        return Err(NoFeasibleAssignment {
            gang_id: gang.gang_id.clone(),
            tally,
            missing_pods: (pods as u64 - capacity) as u32,
        });
    }
    let gpus = gang.per_pod_demand.gpus;
    let mut best = greedy_best_fit(&eligible, pods, gpus);
    let mut best_obj = evaluate(&best, &eligible, gpus);
    let mut best_sample = 0;
    for s in 1..samples.max(1) {
        let cand = biased_sample(&eligible, pods, gpus, rng);
        let obj = evaluate(&cand, &eligible, gpus);
        if obj < best_obj {
            best = cand;
            best_obj = obj;
            best_sample = s;
        }
    }
    Ok(Assignment {
        gang_id: gang.gang_id.clone(),
        placements: learners.iter().zip(best).map(|(&l, i)| (l, eligible[i].node)).collect(),
        feasible: true,
        objective: best_obj,
        sample: best_sample,
    })
}

/// Plans and commits a gang placement atomically: either every pod in
/// `learners` gets its capacity or the cluster is left untouched.
pub fn schedule_gang<R: Rng>(
    gang: &Gang,
    learners: &[u32],
    cluster: &mut Cluster,
    samples: u32,
    binding: Binding,
    rng: &mut R,
) -> Result<Assignment, NoFeasibleAssignment> {
    let assignment = plan_gang(gang, learners, cluster, samples, rng)?;
    for &(learner, node) in &assignment.placements {
        let res = match binding {
            Binding::Allocate => cluster.allocate(node, PodRef::new(gang.gang_id.clone(), learner), &gang.per_pod_demand),
            Binding::Reserve => cluster.reserve(node, &gang.gang_id, &gang.per_pod_demand),
        };
        res.expect("planned assignment fits the current cluster state");
    }
    Ok(assignment)
}
