//! Graph-geodesic distance tables over mesh edges.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::meshkit::TriMesh;

const CACHE_MAGIC: &[u8; 4] = b"GEOD";

#[derive(Debug, Error)]
pub enum GeodesicError {
    #[error("bad geodesic cache: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Dense symmetric matrix of shortest-path distances in mm.
/// Unreachable pairs hold `f64::INFINITY`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeodesicTable {
    n: usize,
    d: Vec<f64>,
}

#[derive(Copy, Clone, PartialEq)]
struct State {
    dist: f64,
    node: usize,
}
impl Eq for State {}
impl Ord for State {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}
impl PartialOrd for State {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl GeodesicTable {
    pub fn from_dense(n: usize, d: Vec<f64>) -> Self {
        assert_eq!(d.len(), n * n);
        Self { n, d }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.d[i * self.n..(i + 1) * self.n]
    }

    /// Row-major `n × n` buffer.
    pub fn as_slice(&self) -> &[f64] {
        &self.d
    }

    /// Rounds every entry to `f32` precision, the resolution of the cache
    /// file, so freshly computed and cached tables are interchangeable.
    pub fn quantized(mut self) -> Self {
        for v in &mut self.d {
            *v = *v as f32 as f64;
        }
        self
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<(), GeodesicError> {
        w.write_all(CACHE_MAGIC)?;
        w.write_all(&(self.n as u64).to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.d.len() * 4);
        for &v in &self.d {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self, GeodesicError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CACHE_MAGIC {
            return Err(GeodesicError::Format("wrong magic".into()));
        }
        let mut nb = [0u8; 8];
        r.read_exact(&mut nb)?;
        let n = u64::from_le_bytes(nb) as usize;
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        if buf.len() != n * n * 4 {
            return Err(GeodesicError::Format(format!(
                "expected {} bytes of distances, found {}",
                n * n * 4,
                buf.len()
            )));
        }
        let d = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        Ok(Self { n, d })
    }
}

/// Dijkstra from every vertex over an explicit undirected edge list.
pub fn graph_geodesics(points: &[[f64; 3]], edges: &[[usize; 2]]) -> GeodesicTable {
    let n = points.len();
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for &[a, b] in edges {
        let w = ((points[a][0] - points[b][0]).powi(2)
            + (points[a][1] - points[b][1]).powi(2)
            + (points[a][2] - points[b][2]).powi(2))
        .sqrt();
        adj[a].push((b, w));
        adj[b].push((a, w));
    }
    let mut d = vec![f64::INFINITY; n * n];
    let mut heap = BinaryHeap::new();
    for s in 0..n {
        let row = &mut d[s * n..(s + 1) * n];
        row[s] = 0.0;
        heap.clear();
        heap.push(State { dist: 0.0, node: s });
        while let Some(State { dist, node }) = heap.pop() {
            if dist > row[node] {
                continue;
            }
            for &(next, w) in &adj[node] {
                let nd = dist + w;
                if nd < row[next] {
                    row[next] = nd;
                    heap.push(State {
                        dist: nd,
                        node: next,
                    });
                }
            }
        }
    }
    // Path sums can differ in the last bit between directions.
    for i in 0..n {
        for j in (i + 1)..n {
            let v = d[i * n + j].min(d[j * n + i]);
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    GeodesicTable { n, d }
}

/// All-pairs shortest paths over the mesh edge graph with Euclidean weights.
pub fn geodesic_all_pairs(mesh: &TriMesh) -> GeodesicTable {
    let points: Vec<[f64; 3]> = mesh.vertices.iter().map(|v| [v.x, v.y, v.z]).collect();
    graph_geodesics(&points, &mesh.edges())
}

/// `k` ordered index pairs `(i, j)` with `i ≠ j`, uniform with replacement.
pub fn sample_pairs(n: usize, k: usize, seed: u64) -> Vec<(usize, usize)> {
    assert!(n >= 2, "need at least two vertices to sample pairs");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..k)
        .map(|_| {
            let i = rng.random_range(0..n);
            let mut j = rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            (i, j)
        })
        .collect()
}
