//! Physical cluster model: nodes, capacities, allocations, reservations and
//! health transitions.
//!
//! All mutation goes through [`Cluster`], which upholds
//! `allocated + reserved <= capacity` on every node at all times.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// GPU model label. Placement treats it as a hard constraint.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", from = "String")]
pub enum GpuClass {
    K80,
    P100,
    V100,
    Other(Arc<str>),
}

impl GpuClass {
    pub fn as_str(&self) -> &str {
        match self {
            GpuClass::K80 => "K80",
            GpuClass::P100 => "P100",
            GpuClass::V100 => "V100",
            GpuClass::Other(name) => name,
        }
    }
}

impl From<String> for GpuClass {
    fn from(s: String) -> Self {
        s.as_str().parse().unwrap_or_else(|e: std::convert::Infallible| match e {})
    }
}

impl From<GpuClass> for String {
    fn from(c: GpuClass) -> Self {
        c.as_str().to_string()
    }
}

impl FromStr for GpuClass {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "K80" => GpuClass::K80,
            "P100" => GpuClass::P100,
            "V100" => GpuClass::V100,
            other => GpuClass::Other(Arc::from(other)),
        })
    }
}

impl fmt::Display for GpuClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which dimension of a demand could not be satisfied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Shortfall {
    Gpu,
    Cpu,
    Mem,
}

/// Multi-dimensional capacity or demand. `cpu` is in millicores, `mem` in MB.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ResourceVector {
    pub gpus: u32,
    pub gpu_class: GpuClass,
    pub cpu: u64,
    pub mem: u64,
}

impl ResourceVector {
    pub fn new(gpus: u32, gpu_class: GpuClass, cpu: u64, mem: u64) -> Self {
        ResourceVector { gpus, gpu_class, cpu, mem }
    }

    pub fn zero(gpu_class: GpuClass) -> Self {
        ResourceVector::new(0, gpu_class, 0, 0)
    }

    /// A GPU-only vector, handy in tests and toy scenarios.
    pub fn gpus(gpus: u32, gpu_class: GpuClass) -> Self {
        ResourceVector::new(gpus, gpu_class, 0, 0)
    }

    pub fn is_zero(&self) -> bool {
        self.gpus == 0 && self.cpu == 0 && self.mem == 0
    }

    /// `self + other`, keeping `self`'s GPU class.
    pub fn plus(&self, other: &ResourceVector) -> ResourceVector {
        ResourceVector {
            gpus: self.gpus + other.gpus,
            gpu_class: self.gpu_class.clone(),
            cpu: self.cpu + other.cpu,
            mem: self.mem + other.mem,
        }
    }

    /// `self - other`, or `None` if any component would underflow.
    pub fn checked_sub(&self, other: &ResourceVector) -> Option<ResourceVector> {
        Some(ResourceVector {
            gpus: self.gpus.checked_sub(other.gpus)?,
            gpu_class: self.gpu_class.clone(),
            cpu: self.cpu.checked_sub(other.cpu)?,
            mem: self.mem.checked_sub(other.mem)?,
        })
    }

    /// Componentwise minimum.
    pub fn min(&self, other: &ResourceVector) -> ResourceVector {
        ResourceVector {
            gpus: self.gpus.min(other.gpus),
            gpu_class: self.gpu_class.clone(),
            cpu: self.cpu.min(other.cpu),
            mem: self.mem.min(other.mem),
        }
    }

    pub fn scaled(&self, k: u32) -> ResourceVector {
        ResourceVector {
            gpus: self.gpus * k,
            gpu_class: self.gpu_class.clone(),
            cpu: self.cpu * k as u64,
            mem: self.mem * k as u64,
        }
    }

    /// Checks `self <= available` componentwise, reporting the first short dimension.
    pub fn fits_within(&self, available: &ResourceVector) -> Result<(), Shortfall> {
        if self.gpus > available.gpus {
            Err(Shortfall::Gpu)
        } else if self.cpu > available.cpu {
            Err(Shortfall::Cpu)
        } else if self.mem > available.mem {
            Err(Shortfall::Mem)
        } else {
            Ok(())
        }
    }

    /// How many copies of `self` fit into `available` (GPU class not checked).
    pub fn copies_within(&self, available: &ResourceVector) -> u32 {
        fn per(avail: u64, need: u64) -> u64 {
            if need == 0 {
                u64::MAX
            } else {
                avail / need
            }
        }
        let n = per(available.gpus as u64, self.gpus as u64)
            .min(per(available.cpu, self.cpu))
            .min(per(available.mem, self.mem));
        n.min(u32::MAX as u64) as u32
    }
}

/// Node health as seen by the scheduler.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeStatus {
    Ready,
    NotReady,
    Cordoned,
}

/// Index of a node inside a [`Cluster`]. Indices follow natural order of node ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub usize);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// One learner pod of a gang.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PodRef {
    pub gang: String,
    pub learner: u32,
}

impl PodRef {
    pub fn new(gang: impl Into<String>, learner: u32) -> Self {
        PodRef { gang: gang.into(), learner }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Node {
    pub id: String,
    pub capacity: ResourceVector,
    pub allocated: ResourceVector,
    pub status: NodeStatus,
    pub reservations: Vec<(String, ResourceVector)>,
    pub pods: Vec<(PodRef, ResourceVector)>,
}

impl Node {
    pub fn new(id: impl Into<String>, capacity: ResourceVector) -> Self {
        let allocated = ResourceVector::zero(capacity.gpu_class.clone());
        Node {
            id: id.into(),
            capacity,
            allocated,
            status: NodeStatus::Ready,
            reservations: Vec::new(),
            pods: Vec::new(),
        }
    }

    pub fn gpu_class(&self) -> &GpuClass {
        &self.capacity.gpu_class
    }

    pub fn reserved_total(&self) -> ResourceVector {
        self.reservations
            .iter()
            .fold(ResourceVector::zero(self.gpu_class().clone()), |acc, (_, r)| acc.plus(r))
    }

    pub fn reserved_by(&self, gang: &str) -> ResourceVector {
        self.reservations
            .iter()
            .filter(|(g, _)| g == gang)
            .fold(ResourceVector::zero(self.gpu_class().clone()), |acc, (_, r)| acc.plus(r))
    }

    /// Capacity not allocated and not reserved by anyone.
    pub fn free(&self) -> ResourceVector {
        self.capacity
            .checked_sub(&self.allocated.plus(&self.reserved_total()))
            .expect("node invariant: allocated + reserved <= capacity")
    }

    /// Capacity usable by `gang`: free capacity plus the gang's own reservations.
    pub fn free_for(&self, gang: &str) -> ResourceVector {
        self.free().plus(&self.reserved_by(gang))
    }

    pub fn allocated_gpus(&self) -> u32 {
        self.allocated.gpus
    }

    pub fn committed_gpus(&self) -> u32 {
        self.allocated.gpus + self.reservations.iter().map(|(_, r)| r.gpus).sum::<u32>()
    }

    pub fn is_schedulable(&self) -> bool {
        self.status == NodeStatus::Ready
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClusterError {
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("duplicate node id {0}")]
    DuplicateNode(String),
    #[error("insufficient capacity on node {node}: {shortfall:?} short")]
    InsufficientCapacity { node: String, shortfall: Shortfall },
    #[error("node {0} is not schedulable")]
    NodeUnschedulable(String),
    #[error("gpu class mismatch on node {node}: node has {node_class}, demand needs {demand_class}")]
    GpuClassMismatch { node: String, node_class: GpuClass, demand_class: GpuClass },
    #[error("release on node {0} exceeds its allocation")]
    UnderflowRelease(String),
}

/// A pod removed from a failed node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Eviction {
    pub node: NodeId,
    pub pod: PodRef,
    pub demand: ResourceVector,
}

/// What a node failure took down with it.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FailReport {
    pub evicted: Vec<Eviction>,
    /// Gangs whose reservations on the node were dropped.
    pub dropped_reservations: Vec<String>,
}

/// One entry of a cluster topology file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: String,
    pub gpu_class: GpuClass,
    pub gpus: u32,
    pub cpu_millicores: u64,
    pub mem_mb: u64,
}

impl NodeSpec {
    pub fn capacity(&self) -> ResourceVector {
        ResourceVector::new(self.gpus, self.gpu_class.clone(), self.cpu_millicores, self.mem_mb)
    }
}

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("cannot read topology file {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("cannot parse topology file {path}: {source}")]
    Parse { path: String, source: serde_json::Error },
}

/// Reads a topology file: a JSON list of [`NodeSpec`].
pub fn load_topology(path: &Path) -> Result<Vec<NodeSpec>, TopologyError> {
    let text = std::fs::read_to_string(path).map_err(|source| TopologyError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| TopologyError::Parse {
        path: path.display().to_string(),
        source,
    })
}

/// `count` identical nodes named `n0..n{count-1}`.
pub fn uniform_topology(count: usize, gpu_class: GpuClass, gpus: u32, cpu_millicores: u64, mem_mb: u64) -> Vec<NodeSpec> {
    (0..count)
        .map(|i| NodeSpec {
            id: format!("n{i}"),
            gpu_class: gpu_class.clone(),
            gpus,
            cpu_millicores,
            mem_mb,
        })
        .collect()
}

/// Orders ids so that embedded numbers compare numerically ("n2" < "n10").
pub fn natural_cmp(a: &str, b: &str) -> Ordering {
    fn chunks(s: &str) -> Vec<(bool, &str)> {
        let mut out = Vec::new();
        let mut start = 0;
        let bytes = s.as_bytes();
        for i in 1..=bytes.len() {
            if i == bytes.len() || bytes[i].is_ascii_digit() != bytes[start].is_ascii_digit() {
                out.push((bytes[start].is_ascii_digit(), &s[start..i]));
                start = i;
            }
        }
        out
    }
    let (ca, cb) = (chunks(a), chunks(b));
    for ((da, sa), (db, sb)) in ca.iter().zip(cb.iter()) {
        let ord = if *da && *db {
            let ta = sa.trim_start_matches('0');
            let tb = sb.trim_start_matches('0');
            ta.len().cmp(&tb.len()).then_with(|| ta.cmp(tb))
        } else {
            sa.cmp(sb)
        };
        if ord != Ordering::Equal {
            return ord;
        }
    }
    ca.len().cmp(&cb.len()).then_with(|| a.cmp(b))
}

/// The whole cluster. Single writer: the simulation loop owns it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cluster {
    nodes: Vec<Node>,
    by_id: BTreeMap<String, NodeId>,
}

impl Cluster {
    pub fn new(specs: &[NodeSpec]) -> Result<Self, ClusterError> {
        let mut sorted: Vec<&NodeSpec> = specs.iter().collect();
        sorted.sort_by(|a, b| natural_cmp(&a.id, &b.id));
        let mut by_id = BTreeMap::new();
        let mut nodes = Vec::with_capacity(sorted.len());
        for spec in sorted {
            if by_id.insert(spec.id.clone(), NodeId(nodes.len())).is_some() {
                return Err(ClusterError::DuplicateNode(spec.id.clone()));
            }
            nodes.push(Node::new(spec.id.clone(), spec.capacity()));
        }
        Ok(Cluster { nodes, by_id })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.nodes.len()).map(NodeId)
    }

    pub fn lookup(&self, id: &str) -> Result<NodeId, ClusterError> {
        self.by_id.get(id).copied().ok_or_else(|| ClusterError::UnknownNode(id.to_string()))
    }

    fn node_mut(&mut self, id: NodeId) -> Result<&mut Node, ClusterError> {
        self.nodes.get_mut(id.0).ok_or_else(|| ClusterError::UnknownNode(id.to_string()))
    }

    pub fn has_gpu_class(&self, class: &GpuClass) -> bool {
        self.nodes.iter().any(|n| n.gpu_class() == class)
    }

    pub fn total_gpus(&self) -> u32 {
        self.nodes.iter().map(|n| n.capacity.gpus).sum()
    }

    pub fn allocated_gpus(&self) -> u32 {
        self.nodes.iter().map(|n| n.allocated.gpus).sum()
    }

    pub fn reserved_gpus(&self) -> u32 {
        self.nodes.iter().map(|n| n.reserved_total().gpus).sum()
    }

    fn admit(node: &Node, gang: &str, demand: &ResourceVector) -> Result<(), ClusterError> {
        if !node.is_schedulable() {
            return Err(ClusterError::NodeUnschedulable(node.id.clone()));
        }
        if demand.gpus > 0 && node.gpu_class() != &demand.gpu_class {
            return Err(ClusterError::GpuClassMismatch {
                node: node.id.clone(),
                node_class: node.gpu_class().clone(),
                demand_class: demand.gpu_class.clone(),
            });
        }
        demand
            .fits_within(&node.free_for(gang))
            .map_err(|shortfall| ClusterError::InsufficientCapacity { node: node.id.clone(), shortfall })
    }

    /// Binds `pod` to `node`. Any reservation the pod's gang holds on the node
    /// is consumed first, so the demand is never counted twice.
    pub fn allocate(&mut self, node: NodeId, pod: PodRef, demand: &ResourceVector) -> Result<(), ClusterError> {
        let n = self.node_mut(node)?;
        Self::admit(n, &pod.gang, demand)?;
        let mut remaining = demand.clone();
        for (gang, held) in n.reservations.iter_mut() {
            if *gang != pod.gang {
                continue;
            }
            let take = held.min(&remaining);
            *held = held.checked_sub(&take).expect("min never exceeds held");
            remaining = remaining.checked_sub(&take).expect("min never exceeds remaining");
        }
        n.reservations.retain(|(_, r)| !r.is_zero());
        n.allocated = n.allocated.plus(demand);
        n.pods.push((pod, demand.clone()));
        Ok(())
    }

    /// Returns `demand` held by `pod` on `node` to the free pool.
    pub fn release(&mut self, node: NodeId, pod: &PodRef, demand: &ResourceVector) -> Result<(), ClusterError> {
        let n = self.node_mut(node)?;
        let after = n
            .allocated
            .checked_sub(demand)
            .ok_or_else(|| ClusterError::UnderflowRelease(n.id.clone()))?;
        n.allocated = after;
        if let Some(pos) = n.pods.iter().position(|(p, d)| p == pod && d == demand) {
            n.pods.remove(pos);
        }
        Ok(())
    }

    /// Holds capacity on `node` for a gang member that has not materialized yet.
    pub fn reserve(&mut self, node: NodeId, gang: &str, demand: &ResourceVector) -> Result<(), ClusterError> {
        let n = self.node_mut(node)?;
        if !n.is_schedulable() {
            return Err(ClusterError::NodeUnschedulable(n.id.clone()));
        }
        if demand.gpus > 0 && n.gpu_class() != &demand.gpu_class {
            return Err(ClusterError::GpuClassMismatch {
                node: n.id.clone(),
                node_class: n.gpu_class().clone(),
                demand_class: demand.gpu_class.clone(),
            });
        }
        demand
            .fits_within(&n.free())
            .map_err(|shortfall| ClusterError::InsufficientCapacity { node: n.id.clone(), shortfall })?;
        match n.reservations.iter_mut().find(|(g, _)| g == gang) {
            Some((_, held)) => *held = held.plus(demand),
            None => n.reservations.push((gang.to_string(), demand.clone())),
        }
        Ok(())
    }

    /// Drops every reservation `gang` holds. Returns the number of GPUs freed.
    pub fn cancel_reservations(&mut self, gang: &str) -> u32 {
        let mut freed = 0;
        for n in &mut self.nodes {
            n.reservations.retain(|(g, r)| {
                if g == gang {
                    freed += r.gpus;
                    false
                } else {
                    true
                }
            });
        }
        freed
    }

    pub fn has_reservations(&self, gang: &str) -> bool {
        self.nodes.iter().any(|n| n.reservations.iter().any(|(g, _)| g == gang))
    }

    /// Pods of `gang` currently bound, with their nodes.
    pub fn pods_of(&self, gang: &str) -> Vec<(NodeId, PodRef, ResourceVector)> {
        let mut out = Vec::new();
        for (i, n) in self.nodes.iter().enumerate() {
            for (p, d) in &n.pods {
                if p.gang == gang {
                    out.push((NodeId(i), p.clone(), d.clone()));
                }
            }
        }
        out
    }

    /// Marks the node NotReady and evicts everything on it.
    pub fn fail(&mut self, node: NodeId) -> Result<FailReport, ClusterError> {
        let n = self.node_mut(node)?;
        n.status = NodeStatus::NotReady;
        let pods = std::mem::take(&mut n.pods);
        let mut report = FailReport::default();
        for (pod, demand) in pods {
            n.allocated = n
                .allocated
                .checked_sub(&demand)
                .ok_or_else(|| ClusterError::UnderflowRelease(n.id.clone()))?;
            report.evicted.push(Eviction { node, pod, demand });
        }
        for (gang, _) in std::mem::take(&mut n.reservations) {
            if !report.dropped_reservations.contains(&gang) {
                report.dropped_reservations.push(gang);
            }
        }
        Ok(report)
    }

    pub fn recover(&mut self, node: NodeId) -> Result<(), ClusterError> {
        self.node_mut(node)?.status = NodeStatus::Ready;
        Ok(())
    }

    /// No new placements; running pods stay until they finish or fail.
    pub fn cordon(&mut self, node: NodeId) -> Result<(), ClusterError> {
        let n = self.node_mut(node)?;
        if n.status == NodeStatus::Ready {
            n.status = NodeStatus::Cordoned;
        }
        Ok(())
    }

    /// Verifies per-node accounting. Used by the engine to detect bugs.
    pub fn check_invariants(&self) -> Result<(), String> {
        for n in &self.nodes {
            let committed = n.allocated.plus(&n.reserved_total());
            if committed.fits_within(&n.capacity).is_err() {
                return Err(format!("node {} over-committed: {:?} > {:?}", n.id, committed, n.capacity));
            }
            let pod_sum = n
                .pods
                .iter()
                .fold(ResourceVector::zero(n.gpu_class().clone()), |acc, (_, d)| acc.plus(d));
            if pod_sum != n.allocated {
                return Err(format!("node {} allocation {:?} != pod sum {:?}", n.id, n.allocated, pod_sum));
            }
            if n.status == NodeStatus::NotReady && !n.pods.is_empty() {
                return Err(format!("node {} is NotReady but still runs pods", n.id));
            }
        }
        Ok(())
    }
}
