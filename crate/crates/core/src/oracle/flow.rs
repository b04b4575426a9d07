//! Dinic max-flow on real capacities, and the single-user deadline
//! feasibility check built on it.

use std::collections::VecDeque;

use super::Job;

#[derive(Debug, Clone)]
struct Edge {
    to: usize,
    cap: f64,
    flow: f64,
}

/// Directed flow network with `f64` capacities.
#[derive(Debug, Clone, Default)]
pub struct FlowNetwork {
    edges: Vec<Edge>,
    adj: Vec<Vec<usize>>,
    level: Vec<i64>,
    next: Vec<usize>,
}

const EPS: f64 = 1e-12;

impl FlowNetwork {
    pub fn new(nodes: usize) -> Self {
        FlowNetwork {
            edges: Vec::new(),
            adj: vec![Vec::new(); nodes],
            level: vec![0; nodes],
            next: vec![0; nodes],
        }
    }

    /// Adds `u -> v` with capacity `cap`; returns the edge id.
    pub fn add_edge(&mut self, u: usize, v: usize, cap: f64) -> usize {
        let id = self.edges.len();
        self.edges.push(Edge {
            to: v,
            cap,
            flow: 0.0,
        });
        self.adj[u].push(id);
        self.edges.push(Edge {
            to: u,
            cap: 0.0,
            flow: 0.0,
        });
        self.adj[v].push(id + 1);
        id
    }

    pub fn flow(&self, edge: usize) -> f64 {
        self.edges[edge].flow
    }

    fn residual(&self, e: usize) -> f64 {
        self.edges[e].cap - self.edges[e].flow
    }

    fn bfs(&mut self, s: usize, t: usize) -> bool {
        self.level.iter_mut().for_each(|l| *l = -1);
        self.level[s] = 0;
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            for &e in &self.adj[u] {
                let v = self.edges[e].to;
                if self.level[v] < 0 && self.residual(e) > EPS {
                    self.level[v] = self.level[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        self.level[t] >= 0
    }

    fn dfs(&mut self, u: usize, t: usize, pushed: f64) -> f64 {
        if u == t {
            return pushed;
        }
        while self.next[u] < self.adj[u].len() {
            let e = self.adj[u][self.next[u]];
            let v = self.edges[e].to;
            if self.level[v] == self.level[u] + 1 && self.residual(e) > EPS {
                let got = self.dfs(v, t, pushed.min(self.residual(e)));
                if got > 0.0 {
                    self.edges[e].flow += got;
                    self.edges[e ^ 1].flow -= got;
                    return got;
                }
            }
            self.next[u] += 1;
        }
        0.0
    }

    pub fn max_flow(&mut self, s: usize, t: usize) -> f64 {
        let mut total = 0.0;
        while self.bfs(s, t) {
            self.next.iter_mut().for_each(|n| *n = 0);
            loop {
                let f = self.dfs(s, t, f64::INFINITY);
                if f <= 0.0 {
                    break;
                }
                total += f;
            }
        }
        total
    }
}

/// Source -> slot (capacity `rho * tau` bits) -> job (if the slot lies in
/// its window) -> sink (capacity = job size). Returns bits per job per slot
/// when every job can be carried.
pub fn single_user_schedule(jobs: &[Job], rho: &[f64], tau: f64) -> Option<Vec<Vec<f64>>> {
    let k = rho.len();
    let source = 0;
    let sink = 1 + k + jobs.len();
    let mut net = FlowNetwork::new(sink + 1);
    for (slot, r) in rho.iter().enumerate() {
        net.add_edge(source, 1 + slot, r * tau);
    }
    let mut links = Vec::new();
    let mut demand = 0.0;
    for (j, job) in jobs.iter().enumerate() {
        let node = 1 + k + j;
        for slot in job.release..job.deadline.min(k) {
            links.push((j, slot, net.add_edge(1 + slot, node, f64::INFINITY)));
        }
        net.add_edge(node, sink, job.bits);
        demand += job.bits;
    }
    let carried = net.max_flow(source, sink);
    if carried < demand * (1.0 - 1e-9) - 1e-6 {
        return None;
    }
    let mut bits = vec![vec![0.0; k]; jobs.len()];
    for (j, slot, e) in links {
        bits[j][slot] = net.flow(e).max(0.0);
    }
    Some(bits)
}
