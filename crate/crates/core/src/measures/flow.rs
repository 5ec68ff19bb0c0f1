//! Dinic max-flow with real-valued capacities, used for the Strassen-type
//! feasibility check on weighted measures.

const EPS: f64 = 1e-12;

#[derive(Debug, Clone)]
struct Edge {
    to: usize,
    cap: f64,
    rev: usize,
}

#[derive(Debug)]
pub struct FlowNetwork {
    graph: Vec<Vec<Edge>>,
}

impl FlowNetwork {
    pub fn new(nodes: usize) -> FlowNetwork {
        FlowNetwork { graph: vec![Vec::new(); nodes] }
    }

    pub fn add_edge(&mut self, from: usize, to: usize, cap: f64) {
        let rev_from = self.graph[to].len();
        let rev_to = self.graph[from].len();
        self.graph[from].push(Edge { to, cap, rev: rev_from });
        self.graph[to].push(Edge { to: from, cap: 0.0, rev: rev_to });
    }

    pub fn max_flow(&mut self, source: usize, sink: usize) -> f64 {
        let mut flow = 0.0;
        loop {
            let level = self.bfs_levels(source);
            if level[sink].is_none() {
                return flow;
            }
            let mut iter = vec![0usize; self.graph.len()];
            loop {
                let pushed = self.dfs(source, sink, f64::INFINITY, &level, &mut iter);
                if pushed <= EPS {
                    break;
                }
                flow += pushed;
            }
        }
    }

    fn bfs_levels(&self, source: usize) -> Vec<Option<usize>> {
        let mut level = vec![None; self.graph.len()];
        level[source] = Some(0);
        let mut queue = std::collections::VecDeque::from([source]);
        while let Some(v) = queue.pop_front() {
            for e in &self.graph[v] {
                if e.cap > EPS && level[e.to].is_none() {
                    level[e.to] = Some(level[v].unwrap() + 1);
                    queue.push_back(e.to);
                }
            }
        }
        level
    }

    fn dfs(
        &mut self,
        v: usize,
        sink: usize,
        limit: f64,
        level: &[Option<usize>],
        iter: &mut [usize],
    ) -> f64 {
        if v == sink {
            return limit;
        }
        while iter[v] < self.graph[v].len() {
            let (to, cap) = {
                let e = &self.graph[v][iter[v]];
                (e.to, e.cap)
            };
            if cap > EPS && level[to] == level[v].map(|l| l + 1) {
                let pushed = self.dfs(to, sink, limit.min(cap), level, iter);
                if pushed > EPS {
                    let rev = self.graph[v][iter[v]].rev;
                    self.graph[v][iter[v]].cap -= pushed;
                    self.graph[to][rev].cap += pushed;
                    return pushed;
                }
            }
            iter[v] += 1;
        }
        0.0
    }
}
