//! Dinic maximum flow on real capacities.

use std::collections::VecDeque;

#[derive(Clone, Debug)]
struct Arc {
    to: usize,
    cap: f64,
}

/// Residual network. Arcs are stored in pairs, `e ^ 1` is the reverse of `e`.
#[derive(Clone, Debug)]
pub(crate) struct FlowNetwork {
    arcs: Vec<Arc>,
    adj: Vec<Vec<usize>>,
    level: Vec<i32>,
    cursor: Vec<usize>,
}

impl FlowNetwork {
    pub fn new(nodes: usize) -> Self {
        FlowNetwork {
            arcs: Vec::new(),
            adj: vec![Vec::new(); nodes],
            level: vec![-1; nodes],
            cursor: vec![0; nodes],
        }
    }

    /// Adds `u -> v` with capacity `forward` and `v -> u` with capacity `backward`.
    pub fn add_arc_pair(&mut self, u: usize, v: usize, forward: f64, backward: f64) {
        let e = self.arcs.len();
        self.arcs.push(Arc { to: v, cap: forward });
        self.arcs.push(Arc { to: u, cap: backward });
        self.adj[u].push(e);
        self.adj[v].push(e + 1);
    }

    fn bfs(&mut self, s: usize, t: usize, eps: f64) -> bool {
        self.level.iter_mut().for_each(|l| *l = -1);
        self.level[s] = 0;
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            for &e in &self.adj[u] {
                let a = &self.arcs[e];
                if a.cap > eps && self.level[a.to] < 0 {
                    self.level[a.to] = self.level[u] + 1;
                    queue.push_back(a.to);
                }
            }
        }
        self.level[t] >= 0
    }

    fn dfs(&mut self, u: usize, t: usize, limit: f64, eps: f64) -> f64 {
        if u == t {
            return limit;
        }
        while self.cursor[u] < self.adj[u].len() {
            let e = self.adj[u][self.cursor[u]];
            let (to, cap) = (self.arcs[e].to, self.arcs[e].cap);
            if cap > eps && self.level[to] == self.level[u] + 1 {
                let pushed = self.dfs(to, t, limit.min(cap), eps);
                if pushed > 0.0 {
                    self.arcs[e].cap -= pushed;
                    self.arcs[e ^ 1].cap += pushed;
                    return pushed;
                }
            }
            self.cursor[u] += 1;
        }
        0.0
    }

    /// Saturates the network; residual arcs below `eps` count as absent.
    pub fn max_flow(&mut self, s: usize, t: usize, eps: f64) -> f64 {
        let mut total = 0.0;
        while self.bfs(s, t, eps) {
            self.cursor.iter_mut().for_each(|c| *c = 0);
            loop {
                let pushed = self.dfs(s, t, f64::INFINITY, eps);
                if pushed <= eps {
                    break;
                }
                total += pushed;
            }
        }
        total
    }

    /// Nodes reachable from `s` along residual arcs above `eps`.
    pub fn reachable_from(&self, s: usize, eps: f64) -> Vec<bool> {
        let mut seen = vec![false; self.adj.len()];
        seen[s] = true;
        let mut stack = vec![s];
        while let Some(u) = stack.pop() {
            for &e in &self.adj[u] {
                let a = &self.arcs[e];
                if a.cap > eps && !seen[a.to] {
                    seen[a.to] = true;
                    stack.push(a.to);
                }
            }
        }
        seen
    }

    /// Nodes with a residual path to `t` above `eps`.
    pub fn reaching(&self, t: usize, eps: f64) -> Vec<bool> {
        let mut seen = vec![false; self.adj.len()];
        seen[t] = true;
        let mut stack = vec![t];
        while let Some(u) = stack.pop() {
            for &e in &self.adj[u] {
                // arc e ^ 1 runs from adj target back into u
                let back = &self.arcs[e ^ 1];
                let from = self.arcs[e].to;
                if back.cap > eps && !seen[from] {
                    seen[from] = true;
                    stack.push(from);
                }
            }
        }
        seen
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn textbook_network() {
        // CLRS figure 26.1, max flow 23.
        let mut g = FlowNetwork::new(6);
        for &(u, v, c) in &[
            (0, 1, 16.0),
            (0, 2, 13.0),
            (2, 1, 4.0),
            (1, 3, 12.0),
            (3, 2, 9.0),
            (2, 4, 14.0),
            (4, 3, 7.0),
            (3, 5, 20.0),
            (4, 5, 4.0),
        ] {
            g.add_arc_pair(u, v, c, 0.0);
        }
        assert!((g.max_flow(0, 5, 1e-12) - 23.0).abs() < 1e-12);
        let side = g.reachable_from(0, 1e-12);
        assert!(side[0] && !side[5]);
    }

    #[test]
    fn undirected_pair_flows_both_ways() {
        let mut g = FlowNetwork::new(3);
        g.add_arc_pair(0, 1, 2.5, 0.0);
        g.add_arc_pair(1, 2, 1.0, 1.0);
        assert!((g.max_flow(0, 2, 1e-12) - 1.0).abs() < 1e-15);
        let mut h = FlowNetwork::new(3);
        h.add_arc_pair(2, 1, 2.5, 0.0);
        h.add_arc_pair(1, 0, 1.0, 1.0);
        assert!((h.max_flow(2, 0, 1e-12) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn disconnected_sink_has_zero_flow() {
        let mut g = FlowNetwork::new(4);
        g.add_arc_pair(0, 1, 3.0, 0.0);
        g.add_arc_pair(2, 3, 3.0, 0.0);
        assert_eq!(g.max_flow(0, 3, 1e-12), 0.0);
        assert_eq!(g.reaching(3, 1e-12), vec![false, false, true, true]);
    }
}
