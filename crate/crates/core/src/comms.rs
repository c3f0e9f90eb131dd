//! Message accounting over a Barabási–Albert network of digital twins.
//!
//! Messages are never delivered anywhere; each one is routed along a
//! deterministic shortest path and counted at its origin, at every relay and
//! at its destination.

use std::collections::VecDeque;
use std::io::Write;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::learners::Algorithm;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CentralPlacement {
    /// Highest-degree node, lowest id on ties.
    #[default]
    Hub,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CommsConfig {
    pub m0: usize,
    pub m: usize,
    /// Steps between parameter broadcasts (MADDPG) or model syncs (DT-MADDPG).
    pub sync_interval: usize,
    pub central: CentralPlacement,
}

impl Default for CommsConfig {
    fn default() -> Self {
        Self {
            m0: 3,
            m: 2,
            sync_interval: 24,
            central: CentralPlacement::Hub,
        }
    }
}

impl CommsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.m > self.m0 {
            return Err(Error::InvalidConfig("comms: need 1 <= m <= m0".into()));
        }
        if self.sync_interval == 0 {
            return Err(Error::InvalidConfig("comms: sync_interval must be >= 1".into()));
        }
        Ok(())
    }
}

/// Undirected simple graph with sorted adjacency lists.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    m0: usize,
    m: usize,
    adjacency: Vec<Vec<usize>>,
}

impl Topology {
    pub fn n(&self) -> usize {
        self.adjacency.len()
    }

    pub fn m0(&self) -> usize {
        self.m0
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adjacency[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adjacency[v].len()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adjacency[a].binary_search(&b).is_ok()
    }

    pub fn is_connected(&self) -> bool {
        self.n() == 0 || bfs_distances(self, 0).iter().all(|d| *d != u32::MAX)
    }
}

/// Preferential attachment from an initial `m0`-clique: each new node links
/// to `m` distinct existing nodes chosen with probability proportional to
/// degree.
pub fn ba_generate<R: Rng + ?Sized>(n: usize, m0: usize, m: usize, rng: &mut R) -> Result<Topology> {
    if !(1 <= m && m <= m0 && m0 <= n) {
        return Err(Error::InvalidTopology(format!(
            "need 1 <= m <= m0 <= n, got n={n}, m0={m0}, m={m}"
        )));
    }
    let mut adjacency = vec![Vec::new(); n];
    // Every edge endpoint appears once, so uniform picks are degree-weighted.
    let mut endpoints: Vec<usize> = Vec::new();
    for a in 0..m0 {
        for b in a + 1..m0 {
            adjacency[a].push(b);
            adjacency[b].push(a);
            endpoints.extend([a, b]);
        }
    }
    for v in m0..n {
        let mut targets: Vec<usize> = Vec::with_capacity(m);
        while targets.len() < m {
            let t = if endpoints.is_empty() {
                rng.random_range(0..v)
            } else {
                *endpoints.choose(rng).expect("non-empty")
            };
            if !targets.contains(&t) {
                targets.push(t);
            }
        }
        for t in targets {
            adjacency[v].push(t);
            adjacency[t].push(v);
            endpoints.extend([v, t]);
        }
    }
    for list in &mut adjacency {
        list.sort_unstable();
    }
    Ok(Topology { m0, m, adjacency })
}

fn bfs_distances(topo: &Topology, from: usize) -> Vec<u32> {
    let mut dist = vec![u32::MAX; topo.n()];
    dist[from] = 0;
    let mut queue = VecDeque::from([from]);
    while let Some(v) = queue.pop_front() {
        for &w in topo.neighbors(v) {
            if dist[w] == u32::MAX {
                dist[w] = dist[v] + 1;
                queue.push_back(w);
            }
        }
    }
    dist
}

/// Hop-count shortest path; among equals, the lexicographically smallest
/// node sequence.
pub fn route(topo: &Topology, src: usize, dst: usize) -> Result<Vec<usize>> {
    Router::new(topo).route(src, dst)
}

/// Routing with per-destination distance tables computed on demand.
#[derive(Debug, Clone)]
pub struct Router<'a> {
    topo: &'a Topology,
    dist_to: Vec<Option<Vec<u32>>>,
}

impl<'a> Router<'a> {
    pub fn new(topo: &'a Topology) -> Self {
        Self {
            topo,
            dist_to: vec![None; topo.n()],
        }
    }

    pub fn route(&mut self, src: usize, dst: usize) -> Result<Vec<usize>> {
        let n = self.topo.n();
        if src >= n || dst >= n {
            return Err(Error::InvalidTopology(format!("node out of range: {src} -> {dst} in {n} nodes")));
        }
        let topo = self.topo;
        let dist = self.dist_to[dst].get_or_insert_with(|| bfs_distances(topo, dst));
        if dist[src] == u32::MAX {
            return Err(Error::InvalidTopology(format!("no path from {src} to {dst}")));
        }
        let mut path = vec![src];
        let mut v = src;
        while v != dst {
            v = *topo
                .neighbors(v)
                .iter()
                .find(|&&w| dist[w] + 1 == dist[v])
                .expect("a neighbour one hop closer exists");
            path.push(v);
        }
        Ok(path)
    }
}

/// Topology plus the mapping of agents and the central trainer onto nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub topology: Topology,
    pub central: usize,
    /// Node of each agent, in agent order.
    pub agent_nodes: Vec<usize>,
}

impl Network {
    /// Builds `n_agents + 1` nodes. `m0` and `m` are clamped so tiny fleets
    /// still produce a valid graph.
    pub fn generate<R: Rng + ?Sized>(n_agents: usize, cfg: &CommsConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let n = n_agents + 1;
        let m0 = cfg.m0.min(n);
        let m = cfg.m.min(m0);
        let topology = ba_generate(n, m0, m, rng)?;
        let central = match cfg.central {
            CentralPlacement::Hub => (0..n)
                .max_by(|&a, &b| topology.degree(a).cmp(&topology.degree(b)).then(b.cmp(&a)))
                .expect("at least one node"),
            CentralPlacement::Random => rng.random_range(0..n),
        };
        let agent_nodes = (0..n).filter(|&v| v != central).collect();
        Ok(Self {
            topology,
            central,
            agent_nodes,
        })
    }

    /// Directed agent-to-agent neighbour pairs.
    pub fn agent_links(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for &a in &self.agent_nodes {
            for &b in self.topology.neighbors(a) {
                if b != self.central {
                    out.push((a, b));
                }
            }
        }
        out
    }
}

/// Per-node traffic counters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageLog {
    pub originated: Vec<u64>,
    pub relayed: Vec<u64>,
    pub terminated: Vec<u64>,
    /// Messages sent at each recorded step.
    pub per_step: Vec<u64>,
}

impl MessageLog {
    pub fn new(n_nodes: usize) -> Self {
        Self {
            originated: vec![0; n_nodes],
            relayed: vec![0; n_nodes],
            terminated: vec![0; n_nodes],
            per_step: Vec::new(),
        }
    }

    pub fn total_messages(&self) -> u64 {
        self.originated.iter().sum()
    }

    pub fn steps(&self) -> usize {
        self.per_step.len()
    }

    pub fn mean_per_step(&self) -> f64 {
        if self.per_step.is_empty() {
            0.0
        } else {
            self.total_messages() as f64 / self.per_step.len() as f64
        }
    }

    /// Counts one message along `path`.
    pub fn record_path(&mut self, path: &[usize]) {
        let (first, last) = (path[0], path[path.len() - 1]);
        self.originated[first] += 1;
        self.terminated[last] += 1;
        if path.len() > 2 {
            for &v in &path[1..path.len() - 1] {
                self.relayed[v] += 1;
            }
        }
    }

    pub fn node_traffic(&self) -> Vec<u64> {
        (0..self.originated.len())
            .map(|v| self.originated[v] + self.relayed[v] + self.terminated[v])
            .collect()
    }

    /// Adds another log's counters (same node count) and appends its steps.
    pub fn merge(&mut self, other: &MessageLog) {
        for (a, b) in self.originated.iter_mut().zip(&other.originated) {
            *a += b;
        }
        for (a, b) in self.relayed.iter_mut().zip(&other.relayed) {
            *a += b;
        }
        for (a, b) in self.terminated.iter_mut().zip(&other.terminated) {
            *a += b;
        }
        self.per_step.extend(&other.per_step);
    }
}

/// Emits and routes the messages of one environment step.
#[derive(Debug, Clone)]
pub struct TrafficModel<'a> {
    network: &'a Network,
    algorithm: Algorithm,
    sync_interval: usize,
    router: Router<'a>,
    links: Vec<(usize, usize)>,
}

impl<'a> TrafficModel<'a> {
    pub fn new(network: &'a Network, algorithm: Algorithm, sync_interval: usize) -> Self {
        Self {
            network,
            algorithm,
            sync_interval: sync_interval.max(1),
            router: Router::new(&network.topology),
            links: network.agent_links(),
        }
    }

    /// `step` is the global step counter, starting at 0.
    pub fn record_step(&mut self, log: &mut MessageLog, step: usize) -> Result<()> {
        let before = log.total_messages();
        let sync = (step + 1).is_multiple_of(self.sync_interval);
        let center = self.network.central;
        match self.algorithm {
            Algorithm::Il => {}
            Algorithm::Maddpg => {
                for &a in &self.network.agent_nodes {
                    let p = self.router.route(a, center)?;
                    log.record_path(&p);
                }
                if sync {
                    for &a in &self.network.agent_nodes {
                        let p = self.router.route(center, a)?;
                        log.record_path(&p);
                    }
                }
            }
            Algorithm::DtMaddpg => {
                for &(a, b) in &self.links {
                    log.record_path(&[a, b]);
                }
                if sync {
                    for &a in &self.network.agent_nodes {
                        let p = self.router.route(a, center)?;
                        log.record_path(&p);
                    }
                }
            }
        }
        log.per_step.push(log.total_messages() - before);
        Ok(())
    }
}

/// Share of total traffic per node in percent; all zeros without traffic.
pub fn load_distribution(log: &MessageLog) -> Vec<f64> {
    let traffic = log.node_traffic();
    let total: u64 = traffic.iter().sum();
    if total == 0 {
        return vec![0.0; traffic.len()];
    }
    traffic.iter().map(|&t| 100.0 * t as f64 / total as f64).collect()
}

/// Gini coefficient, `Σ_i Σ_j |x_i − x_j| / (2 n² mean)`; 0 for empty or
/// all-zero input.
pub fn gini(xs: &[f64]) -> f64 {
    let n = xs.len();
    let sum: f64 = xs.iter().sum();
    if n == 0 || sum == 0.0 {
        return 0.0;
    }
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    // Sorted form of the mean absolute difference.
    let weighted: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, x)| (2.0 * (i as f64 + 1.0) - n as f64 - 1.0) * x)
        .sum();
    weighted / (n as f64 * sum)
}

/// Ordinary least squares `y = a + b·x`; returns `(intercept, slope, r²)`.
/// A constant `y` that the line reproduces exactly counts as `r² = 1`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let e = y - (intercept + slope * x);
            e * e
        })
        .sum();
    let r2 = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else if ss_res <= 1e-18 {
        1.0
    } else {
        0.0
    };
    (intercept, slope, r2)
}

/// Message volume of one traffic model on one generated network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub algorithm: Algorithm,
    pub n_agents: usize,
    pub messages_per_step: f64,
    pub messages_per_agent_per_step: f64,
}

/// Accounting-only run of `steps` steps for the scaling study.
pub fn scaling_point<R: Rng + ?Sized>(
    algorithm: Algorithm,
    n_agents: usize,
    cfg: &CommsConfig,
    steps: usize,
    rng: &mut R,
) -> Result<ScalingPoint> {
    let net = Network::generate(n_agents, cfg, rng)?;
    let mut log = MessageLog::new(net.topology.n());
    let mut traffic = TrafficModel::new(&net, algorithm, cfg.sync_interval);
    for s in 0..steps {
        traffic.record_step(&mut log, s)?;
    }
    let per_step = log.mean_per_step();
    Ok(ScalingPoint {
        algorithm,
        n_agents,
        messages_per_step: per_step,
        messages_per_agent_per_step: if n_agents > 0 { per_step / n_agents as f64 } else { 0.0 },
    })
}

pub fn write_network_load<W: Write>(w: W, net: &Network, log: &MessageLog) -> Result<()> {
    #[derive(Serialize)]
    struct Row {
        node_id: usize,
        degree: usize,
        originated: u64,
        relayed: u64,
        terminated: u64,
        percent: f64,
    }
    let pct = load_distribution(log);
    let mut out = csv::Writer::from_writer(w);
    for v in 0..net.topology.n() {
        out.serialize(Row {
            node_id: v,
            degree: net.topology.degree(v),
            originated: log.originated[v],
            relayed: log.relayed[v],
            terminated: log.terminated[v],
            percent: pct[v],
        })?;
    }
    out.flush().map_err(|e| Error::io("network_load.csv", e))?;
    Ok(())
}

pub fn write_scaling<W: Write>(w: W, points: &[ScalingPoint]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for p in points {
        out.serialize(p)?;
    }
    out.flush().map_err(|e| Error::io("messages_vs_n.csv", e))?;
    Ok(())
}
