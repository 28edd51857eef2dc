//! The learning topology: a row-stochastic weight matrix with zero diagonal
//! together with its digraph view, plus the purely structural graph
//! algorithms (strong connectivity, period, cyclic partition, rebel-parity
//! labeling, cycle enumeration, closed groups) and file I/O.
//!
//! Node ids are 0-based everywhere, including the JSON file format.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::mat::Mat;

/// Tolerance on `|row sum - 1|` accepted by validation. Exact stochasticity
/// does not survive a round-trip through decimal text.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// Default node-count cap for exhaustive cycle enumeration.
pub const DEFAULT_MAX_CYCLE_NODES: usize = 8;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ValidationError {
    #[error("weight matrix must be square")]
    NotSquare,
    #[error("need at least 2 agents, got {0}")]
    TooSmall(usize),
    #[error("entry ({row},{col}) = {value} must be finite and nonnegative")]
    NegativeEntry { row: usize, col: usize, value: f64 },
    #[error("diagonal entry of row {0} must be exactly zero")]
    NonzeroDiagonal(usize),
    #[error("row {row} sums to {sum}, expected 1 within {ROW_SUM_TOL:e}")]
    RowSumViolation { row: usize, sum: f64 },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GraphError {
    #[error("digraph is not strongly connected")]
    NotStronglyConnected,
    #[error("digraph is aperiodic; no nontrivial cyclic partition exists")]
    Aperiodic,
    #[error("{n} nodes exceed the enumeration limit of {max}")]
    TooLarge { n: usize, max: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GenerateError {
    #[error("out-degree {out_degree} invalid for {n} nodes (need 1 <= d <= n-1)")]
    InvalidDegree { n: usize, out_degree: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TypesError {
    #[error("rebel index {index} out of range for {n} agents")]
    IndexOutOfRange { index: usize, n: usize },
}

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("malformed topology file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("edge ({j},{k}) out of range for n = {n}")]
    EdgeOutOfRange { j: usize, k: usize, n: usize },
    #[error("duplicate edge ({j},{k})")]
    DuplicateEdge { j: usize, k: usize },
    #[error(transparent)]
    Invalid(#[from] ValidationError),
}

/// Row-stochastic weight matrix with zero diagonal. `weight(j, k)` is the
/// weight agent `j` places on agent `k`; the digraph has an edge `j -> k`
/// iff that weight is positive.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    weights: Mat,
}

impl Topology {
    /// Checks all invariants and wraps the matrix. Nothing is normalized or
    /// repaired; the first violated invariant is reported.
    pub fn validate(raw: &[Vec<f64>]) -> Result<Topology, ValidationError> {
        let m = Mat::from_rows(raw).ok_or(ValidationError::NotSquare)?;
        Topology::from_mat(m)
    }

    pub fn from_mat(m: Mat) -> Result<Topology, ValidationError> {
        let n = m.n();
        if n < 2 {
            return Err(ValidationError::TooSmall(n));
        }
        for j in 0..n {
            for (k, &w) in m.row(j).iter().enumerate() {
                if !w.is_finite() || w < 0.0 {
                    return Err(ValidationError::NegativeEntry {
                        row: j,
                        col: k,
                        value: w,
                    });
                }
            }
        }
        for j in 0..n {
            if m[(j, j)] != 0.0 {
                return Err(ValidationError::NonzeroDiagonal(j));
            }
        }
        for j in 0..n {
            let sum: f64 = m.row(j).iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(ValidationError::RowSumViolation { row: j, sum });
            }
        }
        Ok(Topology { weights: m })
    }

    /// Uniform weights `1/deg` over the given out-neighbor lists. Handy for
    /// building small instances from a support.
    pub fn uniform_from_support(support: &[Vec<usize>]) -> Result<Topology, ValidationError> {
        let n = support.len();
        let mut rows = vec![vec![0.0; n]; n];
        for (j, outs) in support.iter().enumerate() {
            for &k in outs {
                if k >= n {
                    return Err(ValidationError::NotSquare);
                }
                rows[j][k] = 1.0 / outs.len() as f64;
            }
        }
        Topology::validate(&rows)
    }

    pub fn n(&self) -> usize {
        self.weights.n()
    }

    pub fn weight(&self, j: usize, k: usize) -> f64 {
        self.weights[(j, k)]
    }

    pub fn weights(&self) -> &Mat {
        &self.weights
    }

    /// Out-neighbor lists in ascending node order.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        (0..self.n())
            .map(|j| {
                self.weights
                    .row(j)
                    .iter()
                    .enumerate()
                    .filter(|&(_, &w)| w > 0.0)
                    .map(|(k, _)| k)
                    .collect()
            })
            .collect()
    }

    /// Edges `(j, k, weight)` in row-major order.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for j in 0..self.n() {
            for (k, &w) in self.weights.row(j).iter().enumerate() {
                if w > 0.0 {
                    out.push((j, k, w));
                }
            }
        }
        out
    }

    /// Restriction to a node subset, keeping the subset's relative order.
    /// Only meaningful when no weight leaves the subset (a closed group);
    /// the restricted rows then still sum to 1.
    pub fn restrict(&self, nodes: &[usize]) -> Result<Topology, ValidationError> {
        let rows: Vec<Vec<f64>> = nodes
            .iter()
            .map(|&j| nodes.iter().map(|&k| self.weights[(j, k)]).collect())
            .collect();
        Topology::validate(&rows)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AgentType {
    Conformist,
    Rebel,
}

/// Per-agent conformist/rebel flags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentTypes {
    flags: Vec<AgentType>,
}

impl AgentTypes {
    pub fn new(flags: Vec<AgentType>) -> AgentTypes {
        AgentTypes { flags }
    }

    pub fn all_rebels(n: usize) -> AgentTypes {
        AgentTypes {
            flags: vec![AgentType::Rebel; n],
        }
    }

    pub fn all_conformists(n: usize) -> AgentTypes {
        AgentTypes {
            flags: vec![AgentType::Conformist; n],
        }
    }

    pub fn from_rebel_indices(n: usize, rebels: &[usize]) -> Result<AgentTypes, TypesError> {
        let mut flags = vec![AgentType::Conformist; n];
        for &index in rebels {
            if index >= n {
                return Err(TypesError::IndexOutOfRange { index, n });
            }
            flags[index] = AgentType::Rebel;
        }
        Ok(AgentTypes { flags })
    }

    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    pub fn is_rebel(&self, j: usize) -> bool {
        self.flags[j] == AgentType::Rebel
    }

    /// 1 for a conformist, 0 for a rebel (the diagonal of the type matrix).
    pub fn u(&self, j: usize) -> f64 {
        match self.flags[j] {
            AgentType::Conformist => 1.0,
            AgentType::Rebel => 0.0,
        }
    }

    pub fn rebel_count(&self) -> usize {
        self.flags.iter().filter(|&&f| f == AgentType::Rebel).count()
    }

    pub fn all_rebel(&self) -> bool {
        self.rebel_count() == self.len()
    }

    pub fn any_rebel(&self) -> bool {
        self.rebel_count() > 0
    }

    pub fn rebel_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&j| self.is_rebel(j)).collect()
    }

    pub fn restrict(&self, nodes: &[usize]) -> AgentTypes {
        AgentTypes {
            flags: nodes.iter().map(|&j| self.flags[j]).collect(),
        }
    }
}

/// Directed simple cycles, each in canonical rotation (smallest node first).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleList {
    pub cycles: Vec<Vec<usize>>,
}

impl CycleList {
    pub fn gcd_of_lengths(&self) -> usize {
        self.cycles.iter().fold(0, |g, c| gcd(g, c.len()))
    }

    pub fn has_odd_rebel_cycle(&self, types: &AgentTypes) -> bool {
        self.cycles
            .iter()
            .any(|c| c.iter().filter(|&&v| types.is_rebel(v)).count() % 2 == 1)
    }
}

/// Structural analysis of a topology under given agent types. Fields that
/// are only defined on strongly connected digraphs are `None` otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureReport {
    pub strongly_connected: bool,
    pub period: Option<usize>,
    pub cyclic_classes: Option<Vec<Vec<usize>>>,
    pub rebel_bipartite: Option<bool>,
    pub witness_cycle: Option<Vec<usize>>,
    pub closed_groups: Vec<Vec<usize>>,
}

pub fn structure_report(t: &Topology, types: &AgentTypes) -> StructureReport {
    assert_eq!(types.len(), t.n(), "agent types must match topology size");
    if !is_strongly_connected(t) {
        return StructureReport {
            strongly_connected: false,
            period: None,
            cyclic_classes: None,
            rebel_bipartite: None,
            witness_cycle: None,
            closed_groups: closed_groups(t),
        };
    }
    let h = period(t).expect("strongly connected");
    let classes = if h >= 2 {
        cyclic_partition(t).expect("period >= 2")
    } else {
        vec![(0..t.n()).collect()]
    };
    let (bipartite, witness) = rebel_bipartite(t, types).expect("strongly connected");
    StructureReport {
        strongly_connected: true,
        period: Some(h),
        cyclic_classes: Some(classes),
        rebel_bipartite: Some(bipartite),
        witness_cycle: witness,
        closed_groups: closed_groups(t),
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Iterative Tarjan. Components come out sorted internally; their order is
/// reverse topological with respect to the condensation.
fn tarjan_scc(adj: &[Vec<usize>]) -> Vec<Vec<usize>> {
    const UNSEEN: usize = usize::MAX;
    let n = adj.len();
    let mut index = vec![UNSEEN; n];
    let mut low = vec![0usize; n];
    let mut on_stack = vec![false; n];
    let mut stack: Vec<usize> = Vec::new();
    let mut comps: Vec<Vec<usize>> = Vec::new();
    let mut next_index = 0usize;
    let mut frames: Vec<(usize, usize)> = Vec::new();

    for root in 0..n {
        if index[root] != UNSEEN {
            continue;
        }
        index[root] = next_index;
        low[root] = next_index;
        next_index += 1;
        stack.push(root);
        on_stack[root] = true;
        frames.push((root, 0));

        while let Some(frame) = frames.last_mut() {
            let v = frame.0;
            if frame.1 < adj[v].len() {
                let w = adj[v][frame.1];
                frame.1 += 1;
                if index[w] == UNSEEN {
                    index[w] = next_index;
                    low[w] = next_index;
                    next_index += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    frames.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
            } else {
                frames.pop();
                if let Some(parent) = frames.last() {
                    let p = parent.0;
                    low[p] = low[p].min(low[v]);
                }
                if low[v] == index[v] {
                    let mut comp = Vec::new();
                    loop {
                        let w = stack.pop().expect("tarjan stack underflow");
                        on_stack[w] = false;
                        comp.push(w);
                        if w == v {
                            break;
                        }
                    }
                    comp.sort_unstable();
                    comps.push(comp);
                }
            }
        }
    }
    comps
}

/// BFS distances from `root`; `usize::MAX` marks unreachable nodes.
fn bfs_distances(adj: &[Vec<usize>], root: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; adj.len()];
    let mut queue = VecDeque::new();
    dist[root] = 0;
    queue.push_back(root);
    while let Some(v) = queue.pop_front() {
        for &w in &adj[v] {
            if dist[w] == usize::MAX {
                dist[w] = dist[v] + 1;
                queue.push_back(w);
            }
        }
    }
    dist
}

/// True iff every node reaches every other node, i.e. the weight matrix is
/// irreducible.
pub fn is_strongly_connected(t: &Topology) -> bool {
    tarjan_scc(&t.adjacency()).len() == 1
}

/// The gcd of all directed cycle lengths, computed from BFS residues:
/// `gcd over edges (u -> v) of dist(u) + 1 - dist(v)`. Period 1 means
/// aperiodic (the matrix is primitive).
pub fn period(t: &Topology) -> Result<usize, GraphError> {
    let adj = t.adjacency();
    if tarjan_scc(&adj).len() != 1 {
        return Err(GraphError::NotStronglyConnected);
    }
    let dist = bfs_distances(&adj, 0);
    let mut g: usize = 0;
    for (u, outs) in adj.iter().enumerate() {
        for &v in outs {
            let diff = (dist[u] as i64 + 1 - dist[v] as i64).unsigned_abs() as usize;
            g = gcd(g, diff);
        }
    }
    // A strongly connected digraph on >= 2 nodes has a cycle, so some edge
    // leaves a nonzero residue.
    debug_assert!(g >= 1);
    Ok(g)
}

/// BFS-distance residue classes mod the period. Every edge goes from class
/// `l` to class `l+1 (mod h)`; class 0 contains node 0.
pub fn cyclic_partition(t: &Topology) -> Result<Vec<Vec<usize>>, GraphError> {
    let h = period(t)?;
    if h < 2 {
        return Err(GraphError::Aperiodic);
    }
    let dist = bfs_distances(&t.adjacency(), 0);
    let mut classes = vec![Vec::new(); h];
    for (v, &d) in dist.iter().enumerate() {
        classes[d % h].push(v);
    }
    Ok(classes)
}

/// Checks whether no directed cycle carries an odd number of rebels.
///
/// A binary label per node is propagated along a DFS tree: across an edge
/// `j -> k` the label stays when `j` is a conformist and flips when `j` is
/// a rebel. The digraph is rebel-bipartite iff every edge is consistent
/// with the labels. On failure a witness cycle with an odd rebel count is
/// extracted and returned in canonical rotation.
pub fn rebel_bipartite(
    t: &Topology,
    types: &AgentTypes,
) -> Result<(bool, Option<Vec<usize>>), GraphError> {
    assert_eq!(types.len(), t.n(), "agent types must match topology size");
    let adj = t.adjacency();
    if tarjan_scc(&adj).len() != 1 {
        return Err(GraphError::NotStronglyConnected);
    }
    let n = t.n();
    let mut label = vec![2u8; n];
    label[0] = 0;
    let mut dfs = vec![0usize];
    while let Some(v) = dfs.pop() {
        let flip = types.is_rebel(v) as u8;
        for &w in &adj[v] {
            if label[w] == 2 {
                label[w] = label[v] ^ flip;
                dfs.push(w);
            }
        }
    }
    let consistent = adj.iter().enumerate().all(|(j, outs)| {
        let flip = types.is_rebel(j) as u8;
        outs.iter().all(|&k| label[k] == label[j] ^ flip)
    });
    if consistent {
        Ok((true, None))
    } else {
        let witness = odd_rebel_witness(&adj, types);
        Ok((false, Some(witness)))
    }
}

/// Finds a simple directed cycle with an odd rebel count. Only called when
/// one is known to exist (label propagation found an inconsistent edge).
///
/// Walks the parity-lifted graph (node, label) from (0, 0) to (0, 1) by
/// BFS, then peels the resulting odd closed walk into simple cycles; at
/// least one of them carries the odd parity.
fn odd_rebel_witness(adj: &[Vec<usize>], types: &AgentTypes) -> Vec<usize> {
    let n = adj.len();
    let state = |v: usize, p: u8| 2 * v + p as usize;
    let mut parent = vec![usize::MAX; 2 * n];
    let mut seen = vec![false; 2 * n];
    let start = state(0, 0);
    let goal = state(0, 1);
    seen[start] = true;
    let mut queue = VecDeque::from([start]);
    while let Some(s) = queue.pop_front() {
        if s == goal {
            break;
        }
        let (v, p) = (s / 2, (s % 2) as u8);
        let q = p ^ types.is_rebel(v) as u8;
        for &w in &adj[v] {
            let next = state(w, q);
            if !seen[next] {
                seen[next] = true;
                parent[next] = s;
                queue.push_back(next);
            }
        }
    }
    assert!(seen[goal], "no odd closed walk despite inconsistent labels");

    // Reconstruct the closed walk 0 -> ... -> 0 as a node sequence.
    let mut walk = Vec::new();
    let mut s = goal;
    while s != usize::MAX {
        walk.push(s / 2);
        s = parent[s];
    }
    walk.reverse();

    // Peel simple cycles off the walk; parities of the pieces add up to the
    // walk's odd parity, so an odd piece must appear.
    let mut pos = vec![usize::MAX; n];
    let mut stack: Vec<usize> = Vec::new();
    for &v in &walk {
        if pos[v] != usize::MAX {
            let at = pos[v];
            let cycle = &stack[at..];
            let rebels = cycle.iter().filter(|&&u| types.is_rebel(u)).count();
            if rebels % 2 == 1 {
                return canonical_rotation(cycle);
            }
            for &u in &stack[at + 1..] {
                pos[u] = usize::MAX;
            }
            stack.truncate(at + 1);
        } else {
            pos[v] = stack.len();
            stack.push(v);
        }
    }
    unreachable!("odd walk must contain an odd simple cycle");
}

fn canonical_rotation(cycle: &[usize]) -> Vec<usize> {
    let min_at = cycle
        .iter()
        .enumerate()
        .min_by_key(|&(_, &v)| v)
        .map(|(i, _)| i)
        .unwrap();
    let mut out = cycle.to_vec();
    out.rotate_left(min_at);
    out
}

/// Exhaustive enumeration of directed simple cycles, each rooted at its
/// smallest node. Brute force; refuses graphs larger than `max_n`.
pub fn enumerate_cycles(t: &Topology, max_n: usize) -> Result<CycleList, GraphError> {
    let n = t.n();
    if n > max_n {
        return Err(GraphError::TooLarge { n, max: max_n });
    }
    let adj = t.adjacency();
    let mut cycles = Vec::new();
    let mut path = Vec::new();
    let mut visited = vec![false; n];
    for start in 0..n {
        visited[start] = true;
        path.push(start);
        cycle_dfs(start, start, &adj, &mut visited, &mut path, &mut cycles);
        path.pop();
        visited[start] = false;
    }
    cycles.sort();
    Ok(CycleList { cycles })
}

fn cycle_dfs(
    start: usize,
    v: usize,
    adj: &[Vec<usize>],
    visited: &mut Vec<bool>,
    path: &mut Vec<usize>,
    cycles: &mut Vec<Vec<usize>>,
) {
    for &w in &adj[v] {
        if w == start {
            cycles.push(path.clone());
        } else if w > start && !visited[w] {
            visited[w] = true;
            path.push(w);
            cycle_dfs(start, w, adj, visited, path, cycles);
            path.pop();
            visited[w] = false;
        }
    }
}

/// Strongly connected components with no outgoing edge. Each evolves
/// independently of the rest of the network and can be analyzed as a small
/// strongly connected society of its own.
pub fn closed_groups(t: &Topology) -> Vec<Vec<usize>> {
    let adj = t.adjacency();
    let sccs = tarjan_scc(&adj);
    let mut comp_of = vec![0usize; t.n()];
    for (cid, comp) in sccs.iter().enumerate() {
        for &v in comp {
            comp_of[v] = cid;
        }
    }
    let mut groups: Vec<Vec<usize>> = sccs
        .iter()
        .enumerate()
        .filter(|(cid, comp)| {
            comp.iter()
                .all(|&v| adj[v].iter().all(|&w| comp_of[w] == *cid))
        })
        .map(|(_, comp)| comp.clone())
        .collect();
    groups.sort();
    groups
}

/// Random topology: every node gets `out_degree` distinct out-neighbors
/// (never itself) with random weights normalized to row sum 1. With
/// `require_sc` a random Hamiltonian cycle is embedded first, which forces
/// strong connectivity. Deterministic for a fixed seed.
pub fn generate_random(
    n: usize,
    out_degree: usize,
    seed: u64,
    require_sc: bool,
) -> Result<Topology, GenerateError> {
    if n < 2 || out_degree == 0 || out_degree > n - 1 {
        return Err(GenerateError::InvalidDegree { n, out_degree });
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut targets: Vec<Vec<usize>> = vec![Vec::new(); n];
    if require_sc {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        for i in 0..n {
            targets[perm[i]].push(perm[(i + 1) % n]);
        }
    }
    let mut m = Mat::zeros(n);
    for j in 0..n {
        let mut candidates: Vec<usize> = (0..n)
            .filter(|&k| k != j && !targets[j].contains(&k))
            .collect();
        while targets[j].len() < out_degree {
            let at = rng.gen_range(0..candidates.len());
            targets[j].push(candidates.swap_remove(at));
        }
        targets[j].sort_unstable();
        let raw: Vec<f64> = targets[j].iter().map(|_| rng.gen_range(0.05..1.0)).collect();
        let sum: f64 = raw.iter().sum();
        for (&k, w) in targets[j].iter().zip(&raw) {
            m[(j, k)] = w / sum;
        }
    }
    Ok(Topology::from_mat(m).expect("generated rows are stochastic"))
}

#[derive(Serialize, Deserialize)]
struct TopologyFile {
    n: usize,
    edges: Vec<(usize, usize, f64)>,
}

/// Writes weights in scientific notation with 17 significant digits, enough
/// to round-trip any f64 through decimal text.
struct SciFormatter;

impl serde_json::ser::Formatter for SciFormatter {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        write!(writer, "{:.16e}", value)
    }
}

pub fn write_topology<W: Write>(t: &Topology, writer: W) -> io::Result<()> {
    let file = TopologyFile {
        n: t.n(),
        edges: t.edges(),
    };
    let mut ser = serde_json::Serializer::with_formatter(writer, SciFormatter);
    file.serialize(&mut ser)
        .map_err(|e| io::Error::new(io::ErrorKind::Other, e))
}

pub fn save_topology<P: AsRef<Path>>(t: &Topology, path: P) -> io::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_topology(t, &mut out)?;
    out.write_all(b"\n")?;
    out.flush()
}

pub fn read_topology<R: Read>(reader: R) -> Result<Topology, LoadError> {
    let file: TopologyFile = serde_json::from_reader(reader)?;
    let n = file.n;
    if n < 2 {
        return Err(ValidationError::TooSmall(n).into());
    }
    let mut m = Mat::zeros(n);
    for &(j, k, w) in &file.edges {
        if j >= n || k >= n {
            return Err(LoadError::EdgeOutOfRange { j, k, n });
        }
        if m[(j, k)] != 0.0 {
            return Err(LoadError::DuplicateEdge { j, k });
        }
        m[(j, k)] = w;
    }
    Ok(Topology::from_mat(m)?)
}

pub fn load_topology<P: AsRef<Path>>(path: P) -> Result<Topology, LoadError> {
    read_topology(BufReader::new(File::open(path)?))
}
