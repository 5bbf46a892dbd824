//! Undirected communication graphs.

use std::collections::{BTreeSet, VecDeque};

use crate::error::{Error, Result};

/// Symmetric neighbor lists without self-loops; sensor ids are `0..len()`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    neighbors: Vec<Vec<usize>>,
}

impl Topology {
    /// Builds a graph from undirected edges. Duplicate edges are ignored.
    pub fn from_edges(sensors: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut sets = vec![BTreeSet::new(); sensors];
        for &(a, b) in edges {
            if a >= sensors || b >= sensors {
                return Err(Error::config(
                    "topology.edges",
                    format!("edge ({a}, {b}) references a sensor outside 0..{sensors}"),
                ));
            }
            if a == b {
                return Err(Error::config("topology.edges", format!("self-loop at sensor {a}")));
            }
            sets[a].insert(b);
            sets[b].insert(a);
        }
        Ok(Topology {
            neighbors: sets.into_iter().map(|s| s.into_iter().collect()).collect(),
        })
    }

    /// Four-neighbor grid with `rows × cols` nodes numbered row by row.
    pub fn grid(rows: usize, cols: usize) -> Self {
        let mut edges = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                let id = r * cols + c;
                if c + 1 < cols {
                    edges.push((id, id + 1));
                }
                if r + 1 < rows {
                    edges.push((id, id + cols));
                }
            }
        }
        Topology::from_edges(rows * cols, &edges).expect("grid edges are valid")
    }

    pub fn path(n: usize) -> Self {
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        Topology::from_edges(n, &edges).expect("path edges are valid")
    }

    pub fn cycle(n: usize) -> Self {
        let mut edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        if n > 2 {
            edges.push((n - 1, 0));
        }
        Topology::from_edges(n, &edges).expect("cycle edges are valid")
    }

    pub fn complete(n: usize) -> Self {
        let mut edges = Vec::new();
        for a in 0..n {
            for b in a + 1..n {
                edges.push((a, b));
            }
        }
        Topology::from_edges(n, &edges).expect("complete-graph edges are valid")
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    /// Neighbors of `s` in increasing id order, excluding `s`.
    pub fn neighbors(&self, s: usize) -> &[usize] {
        &self.neighbors[s]
    }

    pub fn degree(&self, s: usize) -> usize {
        self.neighbors[s].len()
    }

    /// Breadth-first hop counts from `s`; `None` for unreachable nodes.
    pub fn hop_distances(&self, s: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.len()];
        let mut queue = VecDeque::new();
        dist[s] = Some(0);
        queue.push_back(s);
        while let Some(u) = queue.pop_front() {
            let du = dist[u].unwrap();
            for &v in &self.neighbors[u] {
                if dist[v].is_none() {
                    dist[v] = Some(du + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    pub fn is_connected(&self) -> bool {
        self.is_empty() || self.hop_distances(0).iter().all(Option::is_some)
    }

    /// Longest shortest-path length.
    pub fn diameter(&self) -> Result<usize> {
        let mut best = 0;
        for s in 0..self.len() {
            for d in self.hop_distances(s) {
                best = best.max(d.ok_or(Error::Disconnected)?);
            }
        }
        Ok(best)
    }

    /// Errors unless the graph is connected.
    pub fn require_connected(&self) -> Result<()> {
        if self.is_connected() {
            Ok(())
        } else {
            Err(Error::Disconnected)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_structure() {
        let g = Topology::grid(4, 4);
        assert_eq!(g.len(), 16);
        assert_eq!(g.neighbors(0), &[1, 4]);
        assert_eq!(g.neighbors(5), &[1, 4, 6, 9]);
        assert!(g.is_connected());
        assert_eq!(g.diameter().unwrap(), 6);
    }

    #[test]
    fn small_graphs() {
        assert_eq!(Topology::path(3).diameter().unwrap(), 2);
        assert_eq!(Topology::cycle(4).diameter().unwrap(), 2);
        assert_eq!(Topology::complete(5).diameter().unwrap(), 1);
        assert_eq!(Topology::path(1).diameter().unwrap(), 0);
    }

    #[test]
    fn disconnected_and_invalid_graphs() {
        let g = Topology::from_edges(4, &[(0, 1), (2, 3)]).unwrap();
        assert!(!g.is_connected());
        assert!(matches!(g.diameter(), Err(Error::Disconnected)));
        assert!(Topology::from_edges(2, &[(0, 0)]).is_err());
        assert!(Topology::from_edges(2, &[(0, 2)]).is_err());
    }

    #[test]
    fn edges_are_symmetric_and_deduplicated() {
        let g = Topology::from_edges(3, &[(0, 1), (1, 0), (1, 2)]).unwrap();
        assert_eq!(g.neighbors(1), &[0, 2]);
        assert_eq!(g.neighbors(0), &[1]);
    }
}
