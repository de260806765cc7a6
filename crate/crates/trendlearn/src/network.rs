//! Graph topology and combination-matrix construction with the spectral
//! quantities (Perron vector, second-eigenvalue mixing bound) used by the
//! learning protocols and by the verification battery.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const PERRON_TOL: f64 = 1e-12;
pub const PERRON_MAX_ITERS: usize = 1_000_000;
const STOCHASTIC_TOL: f64 = 1e-12;

/// Directed neighborhood structure over `num_agents` agents.
///
/// An edge `(l, k)` means agent `l` is a neighbor of agent `k` (k listens to
/// l). Every agent is implicitly in its own neighborhood.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    num_agents: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl Topology {
    pub fn new(num_agents: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        assert!(num_agents >= 1, "need at least one agent");
        let mut set = BTreeSet::new();
        for (l, k) in edges {
            if l >= num_agents || k >= num_agents {
                return Err(Error::InvalidConfig(vec![format!(
                    "edge ({l},{k}) out of range for {num_agents} agents"
                )]));
            }
            set.insert((l, k));
        }
        // self loops are implied
        for k in 0..num_agents {
            set.insert((k, k));
        }
        Ok(Self { num_agents, edges: set })
    }

    /// Fully connected topology on `num_agents` agents.
    pub fn complete(num_agents: usize) -> Self {
        let edges = (0..num_agents)
            .flat_map(|l| (0..num_agents).map(move |k| (l, k)))
            .collect();
        Self { num_agents, edges }
    }

    pub fn num_agents(&self) -> usize {
        self.num_agents
    }

    pub fn contains_edge(&self, l: usize, k: usize) -> bool {
        self.edges.contains(&(l, k))
    }

    /// Neighbors of agent `k` (agents it listens to), including itself.
    pub fn neighbors_of(&self, k: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.num_agents).filter(move |&l| self.edges.contains(&(l, k)))
    }

    /// Degree of agent `k` including the self loop.
    pub fn degree(&self, k: usize) -> usize {
        self.neighbors_of(k).count()
    }

    pub fn is_symmetric(&self) -> bool {
        self.edges.iter().all(|&(l, k)| self.edges.contains(&(k, l)))
    }

    pub fn is_strongly_connected(&self) -> bool {
        let reaches_all = |start: usize, forward: bool| {
            let mut seen = vec![false; self.num_agents];
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(u) = stack.pop() {
                for &(l, k) in &self.edges {
                    let (from, to) = if forward { (l, k) } else { (k, l) };
                    if from == u && !seen[to] {
                        seen[to] = true;
                        stack.push(to);
                    }
                }
            }
            seen.into_iter().all(|s| s)
        };
        reaches_all(0, true) && reaches_all(0, false)
    }
}

/// Left-stochastic combination matrix with its cached Perron vector and
/// second-eigenvalue mixing bound.
#[derive(Debug, Clone)]
pub struct CombinationMatrix {
    entries: DMatrix<f64>,
    perron: DVector<f64>,
    mixing_lambda: f64,
}

impl CombinationMatrix {
    /// Validates `entries` against `topology` and caches the spectral data.
    pub fn from_entries(topology: &Topology, entries: DMatrix<f64>) -> Result<Self> {
        let k = topology.num_agents();
        assert_eq!(entries.nrows(), k);
        assert_eq!(entries.ncols(), k);
        for col in 0..k {
            let sum: f64 = entries.column(col).iter().sum();
            if (sum - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::NotStochastic { col, sum });
            }
            for row in 0..k {
                let positive = entries[(row, col)] > 0.0;
                if entries[(row, col)] < 0.0 || positive != topology.contains_edge(row, col) {
                    return Err(Error::SupportMismatch(row, col));
                }
            }
        }
        if !check_primitive(&entries) {
            return Err(Error::NotPrimitive);
        }
        let perron = perron_vector(&entries)?;
        let mixing_lambda = mixing_bound(&entries);
        Ok(Self { entries, perron, mixing_lambda })
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn num_agents(&self) -> usize {
        self.entries.ncols()
    }

    pub fn weight(&self, l: usize, k: usize) -> f64 {
        self.entries[(l, k)]
    }

    /// Column `k`: the weights agent `k` assigns to incoming beliefs.
    pub fn column(&self, k: usize) -> Vec<f64> {
        self.entries.column(k).iter().cloned().collect()
    }

    pub fn perron(&self) -> &DVector<f64> {
        &self.perron
    }

    pub fn mixing_lambda(&self) -> f64 {
        self.mixing_lambda
    }
}

/// Metropolis weights on a symmetric, strongly connected topology:
/// `a_{lk} = 1/max(d_l, d_k)` for neighbors `l != k` (degrees include the
/// self loop), with the diagonal absorbing the remainder. The result is
/// doubly stochastic.
pub fn build_metropolis(topology: &Topology) -> Result<CombinationMatrix> {
    for from in 0..topology.num_agents() {
        for to in 0..topology.num_agents() {
            if topology.contains_edge(from, to) && !topology.contains_edge(to, from) {
                return Err(Error::NotSymmetric(from, to));
            }
        }
    }
    if !topology.is_strongly_connected() {
        return Err(Error::NotConnected);
    }
    let n = topology.num_agents();
    let degrees: Vec<usize> = (0..n).map(|k| topology.degree(k)).collect();
    let mut a = DMatrix::zeros(n, n);
    for k in 0..n {
        let mut off_sum = 0.0;
        for l in topology.neighbors_of(k) {
            if l != k {
                let w = 1.0 / degrees[l].max(degrees[k]) as f64;
                a[(l, k)] = w;
                off_sum += w;
            }
        }
        a[(k, k)] = 1.0 - off_sum;
    }
    CombinationMatrix::from_entries(topology, a)
}

/// Power iteration `v <- A v` with l1 renormalization until successive
/// iterates differ by less than `PERRON_TOL` in max norm.
pub fn perron_vector(a: &DMatrix<f64>) -> Result<DVector<f64>> {
    if !check_primitive(a) {
        return Err(Error::NotPrimitive);
    }
    let n = a.ncols();
    let mut v = DVector::from_element(n, 1.0 / n as f64);
    for _ in 0..PERRON_MAX_ITERS {
        let mut next = a * &v;
        let norm: f64 = next.iter().map(|x| x.abs()).sum();
        next /= norm;
        let diff = (&next - &v).amax();
        v = next;
        if diff < PERRON_TOL {
            if v.iter().any(|&x| x <= 0.0) {
                return Err(Error::NotPrimitive);
            }
            return Ok(v);
        }
    }
    Err(Error::PerronDiverged(PERRON_MAX_ITERS))
}

/// True iff some power `A^m` with `m <= (K-1)*K` is entrywise positive.
/// Works on the exact zero/nonzero pattern, no floating-point thresholds.
pub fn check_primitive(a: &DMatrix<f64>) -> bool {
    let n = a.ncols();
    if n == 1 {
        return a[(0, 0)] > 0.0;
    }
    let support: Vec<Vec<bool>> =
        (0..n).map(|r| (0..n).map(|c| a[(r, c)] > 0.0).collect()).collect();
    let bool_mul = |x: &Vec<Vec<bool>>, y: &Vec<Vec<bool>>| -> Vec<Vec<bool>> {
        (0..n)
            .map(|r| (0..n).map(|c| (0..n).any(|m| x[r][m] && y[m][c])).collect())
            .collect()
    };
    // If A is primitive then A^m is positive for every m past the Wielandt
    // exponent, so checking one power >= (K-1)*K via squaring is exact.
    let bound = (n - 1) * n;
    let mut power = support.clone();
    let mut exponent = 1usize;
    while exponent < bound {
        power = bool_mul(&power, &power);
        exponent *= 2;
    }
    power.iter().all(|row| row.iter().all(|&x| x))
}

/// Second-largest eigenvalue modulus of `a`, by dense eigensolve.
pub fn mixing_bound(a: &DMatrix<f64>) -> f64 {
    let mut moduli: Vec<f64> = a.complex_eigenvalues().iter().map(|z| z.norm()).collect();
    moduli.sort_by(|x, y| y.partial_cmp(x).unwrap());
    moduli.get(1).copied().unwrap_or(0.0).min(1.0).max(0.0)
}
