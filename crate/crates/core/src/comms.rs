//! Cyber-layer communication digraph between PGM agents.
//!
//! Row `k` of the weight matrix holds the weights agent `k` applies to data
//! received *from* each neighbour, so the in-degree matrix is the diagonal of
//! row sums and `L = Z_in - A`.

use thiserror::Error;

use crate::linalg::Matrix;

/// Tolerance for the per-node in/out weight comparison in [`CommGraph::is_balanced`].
pub const BALANCE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("weight matrix is not square: row {row} has {len} entries, expected {expected}")]
    NonSquare { row: usize, len: usize, expected: usize },
    #[error("weight a[{row}][{col}] = {value} is negative or not finite")]
    NegativeWeight { row: usize, col: usize, value: f64 },
    #[error("agent {agent} has a self-loop weight {value}")]
    SelfLoop { agent: usize, value: f64 },
    #[error("graph is disconnected: agent {agent} is unreachable from agent 0")]
    Disconnected { agent: usize },
    #[error("graph has no agents")]
    Empty,
    #[error("agent index {index} out of range for {n_agents} agents")]
    IndexOutOfRange { index: usize, n_agents: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommGraph {
    adjacency: Matrix,
    in_degree: Vec<f64>,
    laplacian: Matrix,
    neighbors: Vec<Vec<usize>>,
}

impl CommGraph {
    /// Validates `weights` and derives the in-degree matrix, Laplacian and
    /// neighbour sets.
    pub fn build(weights: &[Vec<f64>]) -> Result<Self, GraphError> {
        let n = weights.len();
        if n == 0 {
            return Err(GraphError::Empty);
        }
        for (row, r) in weights.iter().enumerate() {
            if r.len() != n {
                return Err(GraphError::NonSquare {
                    row,
                    len: r.len(),
                    expected: n,
                });
            }
        }
        for (row, r) in weights.iter().enumerate() {
            for (col, &value) in r.iter().enumerate() {
                if !(value >= 0.0) || !value.is_finite() {
                    return Err(GraphError::NegativeWeight { row, col, value });
                }
                if row == col && value != 0.0 {
                    return Err(GraphError::SelfLoop { agent: row, value });
                }
            }
        }
        // Weak connectivity: flood-fill over edges ignoring direction.
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(k) = stack.pop() {
            for j in 0..n {
                if !seen[j] && (weights[k][j] > 0.0 || weights[j][k] > 0.0) {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        if let Some(agent) = seen.iter().position(|s| !s) {
            return Err(GraphError::Disconnected { agent });
        }

        let adjacency = Matrix::from_rows(weights).expect("rows checked square");
        let in_degree: Vec<f64> = weights.iter().map(|r| r.iter().sum()).collect();
        let mut laplacian = Matrix::zeros(n, n);
        for k in 0..n {
            for j in 0..n {
                laplacian[(k, j)] = if k == j { in_degree[k] } else { -weights[k][j] };
            }
        }
        let neighbors = weights
            .iter()
            .map(|r| (0..n).filter(|&j| r[j] > 0.0).collect())
            .collect();
        Ok(Self {
            adjacency,
            in_degree,
            laplacian,
            neighbors,
        })
    }

    /// Two agents exchanging data with unit weight in both directions.
    pub fn dual_zone() -> Self {
        Self::build(&[vec![0.0, 1.0], vec![1.0, 0.0]]).expect("static graph is valid")
    }

    pub fn n_agents(&self) -> usize {
        self.in_degree.len()
    }

    pub fn weight(&self, k: usize, j: usize) -> f64 {
        self.adjacency[(k, j)]
    }

    pub fn adjacency(&self) -> &Matrix {
        &self.adjacency
    }

    /// Diagonal of the inbound input matrix `Z_in`.
    pub fn in_degree(&self) -> &[f64] {
        &self.in_degree
    }

    pub fn laplacian(&self) -> &Matrix {
        &self.laplacian
    }

    pub fn neighbors(&self, k: usize) -> Result<&[usize], GraphError> {
        self.neighbors
            .get(k)
            .map(Vec::as_slice)
            .ok_or(GraphError::IndexOutOfRange {
                index: k,
                n_agents: self.n_agents(),
            })
    }

    /// Digraph balance: every node's inbound weight equals its outbound weight.
    ///
    /// The literal condition `A = Z_in` cannot hold for a zero-diagonal
    /// adjacency matrix, so the standard per-node reading is used.
    pub fn is_balanced(&self) -> bool {
        let n = self.n_agents();
        (0..n).all(|k| {
            let out: f64 = (0..n).map(|j| self.adjacency[(j, k)]).sum();
            (self.in_degree[k] - out).abs() <= BALANCE_TOLERANCE
        })
    }

    /// `L x`, the negated consensus drive for a scalar per-agent state.
    pub fn laplacian_apply(&self, x: &[f64]) -> Vec<f64> {
        self.laplacian.mul_vec(x)
    }
}
