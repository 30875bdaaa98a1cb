//! Primal network simplex for uncapacitated min-cost flow.
//!
//! Spanning-tree bookkeeping follows the classic thread/successor layout
//! with an artificial root, block pivot search and strongly feasible trees.

use crate::error::{Error, Result};

const NONE: usize = usize::MAX;
const TREE: i8 = 0;
const LOWER: i8 = 1;
const UP: i8 = 1;
const DOWN: i8 = -1;

/// A min-cost flow instance with real supplies and nonnegative arc costs.
#[derive(Debug, Clone, Default)]
pub struct NetworkSimplex {
    supply: Vec<f64>,
    source: Vec<usize>,
    target: Vec<usize>,
    cost: Vec<f64>,
}

/// Optimal flow on the real arcs plus node potentials.
///
/// Potentials satisfy `cost + π[source] − π[target] ≥ −tol` on every arc
/// and equality on arcs carrying flow.
#[derive(Debug, Clone)]
pub struct FlowSolution {
    pub flow: Vec<f64>,
    pub potential: Vec<f64>,
    pub cost: f64,
    pub pivots: usize,
}

impl NetworkSimplex {
    /// Supplies must sum to zero up to rounding; positive entries are sources.
    pub fn new(supply: Vec<f64>) -> Self {
        NetworkSimplex {
            supply,
            ..Default::default()
        }
    }

    pub fn node_count(&self) -> usize {
        self.supply.len()
    }

    pub fn arc_count(&self) -> usize {
        self.source.len()
    }

    pub fn add_arc(&mut self, source: usize, target: usize, cost: f64) -> usize {
        debug_assert!(source < self.supply.len() && target < self.supply.len());
        debug_assert!(cost >= 0.0 && cost.is_finite());
        self.source.push(source);
        self.target.push(target);
        self.cost.push(cost);
        self.source.len() - 1
    }

    pub fn solve(&self) -> Result<FlowSolution> {
        Tree::build(self).run()
    }
}

struct Tree {
    n: usize,
    m: usize,
    source: Vec<usize>,
    target: Vec<usize>,
    cost: Vec<f64>,
    flow: Vec<f64>,
    state: Vec<i8>,
    pi: Vec<f64>,
    parent: Vec<usize>,
    pred: Vec<usize>,
    thread: Vec<usize>,
    rev_thread: Vec<usize>,
    succ_num: Vec<usize>,
    last_succ: Vec<usize>,
    pred_dir: Vec<i8>,
    dirty_revs: Vec<usize>,
    block_size: usize,
    next_arc: usize,
    tol: f64,
    in_arc: usize,
    join: usize,
    u_in: usize,
    v_in: usize,
    u_out: usize,
    delta: f64,
}

impl Tree {
    fn build(p: &NetworkSimplex) -> Tree {
        let n = p.supply.len();
        let m = p.source.len();
        let root = n;
        let all = m + n;
        let max_cost = p.cost.iter().cloned().fold(0.0, f64::max);
        let art_cost = (max_cost + 1.0) * (n as f64 + 1.0);
        let mut t = Tree {
            n,
            m,
            source: p.source.clone(),
            target: p.target.clone(),
            cost: p.cost.clone(),
            flow: vec![0.0; all],
            state: vec![LOWER; all],
            pi: vec![0.0; n + 1],
            parent: vec![NONE; n + 1],
            pred: vec![NONE; n + 1],
            thread: vec![0; n + 1],
            rev_thread: vec![0; n + 1],
            succ_num: vec![0; n + 1],
            last_succ: vec![0; n + 1],
            pred_dir: vec![UP; n + 1],
            dirty_revs: Vec::new(),
            block_size: ((m as f64).sqrt() as usize).max(10),
            next_arc: 0,
            tol: 64.0 * f64::EPSILON * art_cost,
            in_arc: 0,
            join: 0,
            u_in: 0,
            v_in: 0,
            u_out: 0,
            delta: 0.0,
        };
        t.source.resize(all, 0);
        t.target.resize(all, 0);
        t.cost.resize(all, 0.0);
        t.parent[root] = NONE;
        t.pred[root] = NONE;
        t.thread[root] = 0;
        t.rev_thread[0] = root;
        t.succ_num[root] = n + 1;
        t.last_succ[root] = if n == 0 { root } else { root - 1 };
        for u in 0..n {
            let e = m + u;
            t.parent[u] = root;
            t.pred[u] = e;
            t.thread[u] = u + 1;
            t.rev_thread[u + 1] = u;
            t.succ_num[u] = 1;
            t.last_succ[u] = u;
            t.state[e] = TREE;
            if p.supply[u] >= 0.0 {
                t.pred_dir[u] = UP;
                t.source[e] = u;
                t.target[e] = root;
                t.flow[e] = p.supply[u];
                t.cost[e] = 0.0;
            } else {
                t.pred_dir[u] = DOWN;
                t.pi[u] = art_cost;
                t.source[e] = root;
                t.target[e] = u;
                t.flow[e] = -p.supply[u];
                t.cost[e] = art_cost;
            }
        }
        t
    }

    #[inline]
    fn reduced(&self, e: usize) -> f64 {
        self.cost[e] + self.pi[self.source[e]] - self.pi[self.target[e]]
    }

    fn find_entering_arc(&mut self) -> bool {
        let mut min = -self.tol;
        let mut found = false;
        let mut cnt = self.block_size;
        let m = self.m;
        let mut e = self.next_arc;
        for _ in 0..m {
            let c = f64::from(self.state[e]) * self.reduced(e);
            if c < min {
                min = c;
                self.in_arc = e;
                found = true;
            }
            e += 1;
            if e == m {
                e = 0;
            }
            cnt -= 1;
            if cnt == 0 {
                if found {
                    self.next_arc = e;
                    return true;
                }
                cnt = self.block_size;
            }
        }
        if found {
            self.next_arc = e;
        }
        found
    }

    fn find_join_node(&mut self) {
        let mut u = self.source[self.in_arc];
        let mut v = self.target[self.in_arc];
        while u != v {
            if self.succ_num[u] < self.succ_num[v] {
                u = self.parent[u];
            } else {
                v = self.parent[v];
            }
        }
        self.join = u;
    }

    /// Selects the leaving arc on the cycle; all arcs are uncapacitated so
    /// only arcs whose flow decreases can block.
    fn find_leaving_arc(&mut self) -> bool {
        let (first, second) = (self.source[self.in_arc], self.target[self.in_arc]);
        let mut delta = f64::INFINITY;
        let mut result = 0;
        let mut u = first;
        while u != self.join {
            if self.pred_dir[u] == UP {
                let d = self.flow[self.pred[u]];
                if d < delta {
                    delta = d;
                    self.u_out = u;
                    result = 1;
                }
            }
            u = self.parent[u];
        }
        let mut u = second;
        while u != self.join {
            if self.pred_dir[u] == DOWN {
                let d = self.flow[self.pred[u]];
                if d <= delta {
                    delta = d;
                    self.u_out = u;
                    result = 2;
                }
            }
            u = self.parent[u];
        }
        if result == 1 {
            self.u_in = first;
            self.v_in = second;
        } else {
            self.u_in = second;
            self.v_in = first;
        }
        self.delta = delta;
        result != 0
    }

    fn change_flow(&mut self) {
        let val = self.delta;
        if val > 0.0 {
            self.flow[self.in_arc] += val;
            let mut u = self.source[self.in_arc];
            while u != self.join {
                let e = self.pred[u];
                self.flow[e] -= f64::from(self.pred_dir[u]) * val;
                u = self.parent[u];
            }
            let mut u = self.target[self.in_arc];
            while u != self.join {
                let e = self.pred[u];
                self.flow[e] += f64::from(self.pred_dir[u]) * val;
                u = self.parent[u];
            }
        }
        let out = self.pred[self.u_out];
        self.flow[out] = 0.0;
        self.state[self.in_arc] = TREE;
        self.state[out] = LOWER;
    }

    fn update_tree_structure(&mut self) {
        let u_in = self.u_in;
        let v_in = self.v_in;
        let u_out = self.u_out;
        let join = self.join;
        let old_rev_thread = self.rev_thread[u_out];
        let old_succ_num = self.succ_num[u_out];
        let old_last_succ = self.last_succ[u_out];
        let v_out = self.parent[u_out];

        if u_in == u_out {
            self.parent[u_in] = v_in;
            self.pred[u_in] = self.in_arc;
            self.pred_dir[u_in] = if u_in == self.source[self.in_arc] {
                UP
            } else {
                DOWN
            };
            if self.thread[v_in] != u_out {
                let mut after = self.thread[old_last_succ];
                self.thread[old_rev_thread] = after;
                self.rev_thread[after] = old_rev_thread;
                after = self.thread[v_in];
                self.thread[v_in] = u_out;
                self.rev_thread[u_out] = v_in;
                self.thread[old_last_succ] = after;
                self.rev_thread[after] = old_last_succ;
            }
        } else {
            let thread_continue = if old_rev_thread == v_in {
                self.thread[old_last_succ]
            } else {
                self.thread[v_in]
            };
            let mut stem = u_in;
            let mut par_stem = v_in;
            let mut last = self.last_succ[u_in];
            let mut after = self.thread[last];
            self.thread[v_in] = u_in;
            self.dirty_revs.clear();
            self.dirty_revs.push(v_in);
            while stem != u_out {
                let next_stem = self.parent[stem];
                self.thread[last] = next_stem;
                self.dirty_revs.push(last);
                let before = self.rev_thread[stem];
                self.thread[before] = after;
                self.rev_thread[after] = before;
                self.parent[stem] = par_stem;
                par_stem = stem;
                stem = next_stem;
                last = if self.last_succ[stem] == self.last_succ[par_stem] {
                    self.rev_thread[par_stem]
                } else {
                    self.last_succ[stem]
                };
                after = self.thread[last];
            }
            self.parent[u_out] = par_stem;
            self.thread[last] = thread_continue;
            self.rev_thread[thread_continue] = last;
            self.last_succ[u_out] = last;
            if old_rev_thread != v_in {
                self.thread[old_rev_thread] = after;
                self.rev_thread[after] = old_rev_thread;
            }
            for i in 0..self.dirty_revs.len() {
                let u = self.dirty_revs[i];
                let t = self.thread[u];
                self.rev_thread[t] = u;
            }
            let mut tmp_sc = 0usize;
            let tmp_ls = self.last_succ[u_out];
            let mut u = u_out;
            while u != u_in {
                let p = self.parent[u];
                self.pred[u] = self.pred[p];
                self.pred_dir[u] = -self.pred_dir[p];
                tmp_sc = tmp_sc + self.succ_num[u] - self.succ_num[p];
                self.succ_num[u] = tmp_sc;
                self.last_succ[p] = tmp_ls;
                u = p;
            }
            self.pred[u_in] = self.in_arc;
            self.pred_dir[u_in] = if u_in == self.source[self.in_arc] {
                UP
            } else {
                DOWN
            };
            self.succ_num[u_in] = old_succ_num;
        }

        let up_limit_out = if self.last_succ[join] == v_in {
            join
        } else {
            NONE
        };
        let last_succ_out = self.last_succ[u_out];
        let mut u = v_in;
        while u != NONE && self.last_succ[u] == v_in {
            self.last_succ[u] = last_succ_out;
            u = self.parent[u];
        }
        if join != old_rev_thread && v_in != old_rev_thread {
            let mut u = v_out;
            while u != up_limit_out && u != NONE && self.last_succ[u] == old_last_succ {
                self.last_succ[u] = old_rev_thread;
                u = self.parent[u];
            }
        } else if last_succ_out != old_last_succ {
            let mut u = v_out;
            while u != up_limit_out && u != NONE && self.last_succ[u] == old_last_succ {
                self.last_succ[u] = last_succ_out;
                u = self.parent[u];
            }
        }
        let mut u = v_in;
        while u != join {
            self.succ_num[u] += old_succ_num;
            u = self.parent[u];
        }
        let mut u = v_out;
        while u != join {
            self.succ_num[u] -= old_succ_num;
            u = self.parent[u];
        }
    }

    fn update_potential(&mut self) {
        let sigma = self.pi[self.v_in]
            - self.pi[self.u_in]
            - f64::from(self.pred_dir[self.u_in]) * self.cost[self.in_arc];
        let end = self.thread[self.last_succ[self.u_in]];
        let mut u = self.u_in;
        while u != end {
            self.pi[u] += sigma;
            u = self.thread[u];
        }
    }

    fn run(mut self) -> Result<FlowSolution> {
        let mut pivots = 0usize;
        let limit = 50 * (self.n + 10) * (self.m + 10);
        while self.find_entering_arc() {
            self.find_join_node();
            if !self.find_leaving_arc() {
                return Err(Error::Solver("unbounded min-cost flow".into()));
            }
            self.change_flow();
            self.update_tree_structure();
            self.update_potential();
            pivots += 1;
            if pivots > limit {
                return Err(Error::Solver("network simplex pivot limit reached".into()));
            }
        }
        let supply_scale: f64 = self.flow[self.m..]
            .iter()
            .map(|f| f.abs())
            .sum::<f64>()
            .max(1.0);
        for u in 0..self.n {
            let e = self.m + u;
            if self.flow[e] > 1e-9 * supply_scale {
                return Err(Error::Solver(format!(
                    "infeasible flow problem: node {u} keeps artificial flow {}",
                    self.flow[e]
                )));
            }
        }
        let cost = (0..self.m).map(|e| self.flow[e] * self.cost[e]).sum();
        self.flow.truncate(self.m);
        self.pi.truncate(self.n);
        Ok(FlowSolution {
            flow: self.flow,
            potential: self.pi,
            cost,
            pivots,
        })
    }
}
