//! Per-mode k-nearest-neighbor similarity graphs and their Laplacians.

use std::io::{BufRead, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{GlossError, Result};
use crate::scalar::Real;
use crate::tensor::DenseTensor;

/// Default neighbor count for graph construction.
pub const DEFAULT_NEIGHBORS: usize = 10;

/// How the Gaussian kernel bandwidth `sigma` in `exp(-d^2 / (2 sigma))` is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "rule", content = "value")]
pub enum BandwidthRule {
    /// Median over rows of the squared distance to the k-th nearest neighbor.
    #[default]
    MedianKthNeighbor,
    Fixed(f64),
}

/// Similarity graph over the rows of one mode unfolding.
#[derive(Clone, Debug)]
pub struct ModeGraph<T> {
    pub mode: usize,
    pub adjacency: DMatrix<T>,
    pub laplacian: DMatrix<T>,
    pub bandwidth: T,
}

impl<T: Real> ModeGraph<T> {
    /// Builds a graph from an explicit symmetric adjacency matrix.
    pub fn from_adjacency(mode: usize, adjacency: DMatrix<T>, bandwidth: T) -> Result<Self> {
        if !adjacency.is_square() {
            return Err(GlossError::DimensionMismatch("adjacency must be square".into()));
        }
        let laplacian = laplacian_of(&adjacency);
        Ok(Self {
            mode,
            adjacency,
            laplacian,
            bandwidth,
        })
    }

    pub fn size(&self) -> usize {
        self.adjacency.nrows()
    }

    pub fn edge_count(&self) -> usize {
        let n = self.size();
        (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .filter(|&(i, j)| self.adjacency[(i, j)] > T::zero())
            .count()
    }

    /// Writes the adjacency as sparse `row col weight` triplets (upper triangle)
    /// preceded by a one-line JSON header starting with `#`.
    pub fn write_triplets<W: Write>(&self, mut w: W) -> Result<()> {
        let header = serde_json::json!({
            "mode": self.mode,
            "size": self.size(),
            "bandwidth": self.bandwidth.as_f64(),
            "edges": self.edge_count(),
        });
        writeln!(w, "# {header}")?;
        let n = self.size();
        for i in 0..n {
            for j in i + 1..n {
                let v = self.adjacency[(i, j)];
                if v > T::zero() {
                    writeln!(w, "{i} {j} {:e}", v.as_f64())?;
                }
            }
        }
        Ok(())
    }

    pub fn read_triplets<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header_line = lines
            .next()
            .ok_or_else(|| GlossError::Format("empty graph file".into()))??;
        let header: serde_json::Value = serde_json::from_str(
            header_line
                .strip_prefix('#')
                .ok_or_else(|| GlossError::Format("graph file lacks a JSON header".into()))?
                .trim(),
        )?;
        let field = |k: &str| {
            header
                .get(k)
                .ok_or_else(|| GlossError::Format(format!("graph header missing `{k}`")))
        };
        let mode = field("mode")?.as_u64().unwrap_or(0) as usize;
        let size = field("size")?
            .as_u64()
            .ok_or_else(|| GlossError::Format("graph size must be an integer".into()))?
            as usize;
        let bandwidth = T::lit(field("bandwidth")?.as_f64().unwrap_or(1.0));
        let mut adjacency = DMatrix::<T>::zeros(size, size);
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.is_empty() {
                continue;
            }
            let bad = || GlossError::Parse {
                line: lineno as u64 + 2,
                message: format!("expected `row col weight`, got `{line}`"),
            };
            if parts.len() != 3 {
                return Err(bad());
            }
            let i: usize = parts[0].parse().map_err(|_| bad())?;
            let j: usize = parts[1].parse().map_err(|_| bad())?;
            let v: f64 = parts[2].parse().map_err(|_| bad())?;
            if i >= size || j >= size {
                return Err(bad());
            }
            adjacency[(i, j)] = T::lit(v);
            adjacency[(j, i)] = T::lit(v);
        }
        Self::from_adjacency(mode, adjacency, bandwidth)
    }
}

fn laplacian_of<T: Real>(adjacency: &DMatrix<T>) -> DMatrix<T> {
    let mut lap = -adjacency.clone();
    for i in 0..adjacency.nrows() {
        let degree = adjacency.row(i).iter().fold(T::zero(), |acc, &w| acc + w);
        lap[(i, i)] = degree - adjacency[(i, i)];
    }
    lap
}

/// Squared Euclidean distances between all rows of `m`.
fn pairwise_sq_distances<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    let n = m.nrows();
    let mut d = DMatrix::<T>::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let v = m
                .row(i)
                .iter()
                .zip(m.row(j).iter())
                .fold(T::zero(), |acc, (&a, &b)| acc + (a - b) * (a - b));
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    d
}

/// Indices of the k nearest rows to `s`, ties broken by lower index.
fn nearest<T: Real>(dist: &DMatrix<T>, s: usize, k: usize) -> Vec<usize> {
    let mut others: Vec<usize> = (0..dist.nrows()).filter(|&j| j != s).collect();
    others.sort_by(|&a, &b| {
        dist[(s, a)]
            .partial_cmp(&dist[(s, b)])
            .expect("finite distances")
            .then(a.cmp(&b))
    });
    others.truncate(k);
    others
}

fn median<T: Real>(mut v: Vec<T>) -> T {
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) * T::lit(0.5)
    }
}

/// Connects each row of the mode-`n` unfolding to its `k` nearest rows with
/// Gaussian weights `exp(-||r_s - r_s'||^2 / (2 sigma))`, symmetrized by the
/// "either is a neighbor of the other" rule.
pub fn build_mode_graph<T: Real>(
    t: &DenseTensor<T>,
    n: usize,
    k: usize,
    bandwidth: BandwidthRule,
) -> Result<ModeGraph<T>> {
    let rows = t.unfold(n)?;
    let size = rows.nrows();
    if size < 2 {
        return Err(GlossError::InvalidParameter(format!(
            "mode {n} has extent {size}; a similarity graph needs at least two rows"
        )));
    }
    if k == 0 || k >= size {
        return Err(GlossError::InvalidParameter(format!(
            "neighbor count {k} out of range for mode {n} with {size} rows (need 1 <= k < {size})"
        )));
    }
    if !t.is_finite() {
        return Err(GlossError::NonFinite("graph input contains NaN or infinity".into()));
    }
    let dist = pairwise_sq_distances(&rows);
    let neighbors: Vec<Vec<usize>> = (0..size).map(|s| nearest(&dist, s, k)).collect();

    let sigma = match bandwidth {
        BandwidthRule::Fixed(v) => {
            if !(v > 0.0) {
                return Err(GlossError::InvalidParameter("fixed bandwidth must be positive".into()));
            }
            T::lit(v)
        }
        BandwidthRule::MedianKthNeighbor => {
            let kth: Vec<T> = (0..size).map(|s| dist[(s, neighbors[s][k - 1])]).collect();
            let med = median(kth.clone());
            if med > T::zero() {
                med
            } else {
                // Fall back to the mean of the positive k-th distances, then to 1.
                let positive: Vec<T> = kth.into_iter().filter(|&v| v > T::zero()).collect();
                if positive.is_empty() {
                    T::one()
                } else {
                    positive.iter().fold(T::zero(), |a, &b| a + b) / T::lit(positive.len() as f64)
                }
            }
        }
    };

    let mut adjacency = DMatrix::<T>::zeros(size, size);
    let two_sigma = sigma + sigma;
    for (s, nbrs) in neighbors.iter().enumerate() {
        for &o in nbrs {
            let w = (-dist[(s, o)] / two_sigma).exp();
            adjacency[(s, o)] = w;
            adjacency[(o, s)] = w;
        }
    }
    ModeGraph::from_adjacency(n, adjacency, sigma)
}

/// Builds one graph per mode, clamping `k` to `I_n - 1` on short modes.
pub fn build_all_mode_graphs<T: Real>(
    t: &DenseTensor<T>,
    k: usize,
    bandwidth: BandwidthRule,
) -> Result<Vec<ModeGraph<T>>> {
    (0..t.order())
        .map(|n| {
            let extent = t.shape()[n];
            build_mode_graph(t, n, k.min(extent.saturating_sub(1)).max(1), bandwidth)
        })
        .collect()
}

/// `tr(X^T Phi X)` for the mode-`n` unfolding `X` of `l`.
pub fn mode_laplacian_trace<T: Real>(l: &DenseTensor<T>, graph: &ModeGraph<T>) -> Result<T> {
    let n = graph.mode;
    if n >= l.order() || l.shape()[n] != graph.size() {
        return Err(GlossError::DimensionMismatch(format!(
            "graph for mode {n} has {} nodes, tensor shape is {:?}",
            graph.size(),
            l.shape()
        )));
    }
    let gram = l.mode_gram(n)?;
    Ok(graph.laplacian.dot(&gram))
}

/// `theta * sum_n tr(L_(n)^T Phi^n L_(n))` over the supplied graphs.
pub fn laplacian_energy<T: Real>(l: &DenseTensor<T>, graphs: &[ModeGraph<T>], theta: T) -> Result<T> {
    let mut total = T::zero();
    for g in graphs {
        total += mode_laplacian_trace(l, g)?;
    }
    Ok(theta * total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rows_tensor(rows: &[Vec<f64>]) -> DenseTensor<f64> {
        let r = rows.len();
        let c = rows[0].len();
        DenseTensor::from_fn(&[r, c], |i| rows[i[0]][i[1]]).unwrap()
    }

    #[test]
    fn identical_rows_have_unit_weight() {
        let t = rows_tensor(&[vec![1.0, 2.0], vec![1.0, 2.0], vec![5.0, 5.0]]);
        let g = build_mode_graph(&t, 0, 1, BandwidthRule::Fixed(1.0)).unwrap();
        assert_eq!(g.adjacency[(0, 1)], 1.0);
        assert_eq!(g.adjacency[(0, 0)], 0.0);
    }

    #[test]
    fn weight_at_two_sigma_distance() {
        // squared distance 2, sigma 1 -> exp(-1)
        let t = rows_tensor(&[vec![0.0, 0.0], vec![1.0, 1.0]]);
        let g = build_mode_graph(&t, 0, 1, BandwidthRule::Fixed(1.0)).unwrap();
        assert_relative_eq!(g.adjacency[(0, 1)], (-1.0f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(g.adjacency[(0, 1)], 0.36787944117144233, epsilon = 1e-12);
    }

    #[test]
    fn line_positions_pair_up() {
        let pos = [0.0, 1.0, 10.0, 11.0];
        let t = rows_tensor(&pos.iter().map(|&p| vec![p]).collect::<Vec<_>>());
        let g = build_mode_graph(&t, 0, 1, BandwidthRule::MedianKthNeighbor).unwrap();
        // Oracle: each point's nearest neighbor from exhaustive pairwise distances.
        let mut expected = vec![vec![false; 4]; 4];
        for s in 0..4 {
            let mut best = None;
            for o in 0..4 {
                if o == s {
                    continue;
                }
                let d = (pos[s] - pos[o]).abs();
                if best.map_or(true, |(bd, _)| d < bd) {
                    best = Some((d, o));
                }
            }
            let o = best.unwrap().1;
            expected[s][o] = true;
            expected[o][s] = true;
        }
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(g.adjacency[(i, j)] > 0.0, expected[i][j], "edge ({i},{j})");
            }
        }
        assert_eq!(g.edge_count(), 2);
    }

    #[test]
    fn k_out_of_range() {
        let t = rows_tensor(&[vec![0.0], vec![1.0], vec![2.0]]);
        assert!(build_mode_graph(&t, 0, 0, BandwidthRule::default()).is_err());
        assert!(build_mode_graph(&t, 0, 3, BandwidthRule::default()).is_err());
        let single = DenseTensor::<f64>::zeros(&[1, 4]).unwrap();
        assert!(build_mode_graph(&single, 0, 1, BandwidthRule::default()).is_err());
    }

    #[test]
    fn ties_broken_by_lower_index() {
        // Row 1 is equidistant from rows 0 and 2; k = 1 picks row 0.
        let t = rows_tensor(&[vec![0.0], vec![1.0], vec![2.0]]);
        let g = build_mode_graph(&t, 0, 1, BandwidthRule::Fixed(1.0)).unwrap();
        assert!(g.adjacency[(1, 0)] > 0.0);
        // Row 2's nearest is row 1, so 1-2 still appears through the "or" rule.
        assert!(g.adjacency[(1, 2)] > 0.0);
        assert_eq!(g.adjacency[(0, 2)], 0.0);
    }

    fn random_tensor(seed: u64, shape: &[usize]) -> DenseTensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DenseTensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0)).unwrap()
    }

    #[test]
    fn graph_invariants_on_random_data() {
        let t = random_tensor(1, &[6, 5, 4, 3]);
        for g in build_all_mode_graphs(&t, 3, BandwidthRule::default()).unwrap() {
            let n = g.size();
            let k = 3.min(n - 1);
            for i in 0..n {
                assert_eq!(g.adjacency[(i, i)], 0.0);
                let nnz = (0..n).filter(|&j| g.adjacency[(i, j)] > 0.0).count();
                assert!(nnz >= k);
                assert_relative_eq!(g.laplacian.row(i).sum(), 0.0, epsilon = 1e-12);
                for j in 0..n {
                    assert_eq!(g.adjacency[(i, j)], g.adjacency[(j, i)]);
                    assert!((0.0..=1.0).contains(&g.adjacency[(i, j)]));
                }
            }
            let min_eig = g.laplacian.clone().symmetric_eigenvalues().min();
            assert!(min_eig >= -1e-10);
        }
    }

    #[test]
    fn laplacian_energy_zero_cases() {
        let t = random_tensor(2, &[4, 3, 3, 2]);
        let graphs = build_all_mode_graphs(&t, 2, BandwidthRule::default()).unwrap();
        let zero = t.zeros_like();
        assert_eq!(laplacian_energy(&zero, &graphs, 1.5).unwrap(), 0.0);
        let constant = DenseTensor::filled(t.shape(), 3.7).unwrap();
        assert!(laplacian_energy(&constant, &graphs, 1.5).unwrap().abs() < 1e-10);
    }

    #[test]
    fn laplacian_energy_pairwise_identity() {
        let t = random_tensor(3, &[5, 4, 3, 3]);
        let graphs = build_all_mode_graphs(&t, 2, BandwidthRule::default()).unwrap();
        let l = random_tensor(4, &[5, 4, 3, 3]);
        let theta = 0.7;
        let mut oracle = 0.0;
        for g in &graphs {
            let x = l.unfold(g.mode).unwrap();
            for i in 0..x.nrows() {
                for j in 0..x.nrows() {
                    oracle += 0.5 * g.adjacency[(i, j)] * (x.row(i) - x.row(j)).norm_squared();
                }
            }
        }
        let energy = laplacian_energy(&l, &graphs, theta).unwrap();
        assert_relative_eq!(energy, theta * oracle, max_relative = 1e-10);
        assert!(energy >= 0.0);
    }

    #[test]
    fn laplacian_energy_shape_mismatch() {
        let t = random_tensor(5, &[4, 3, 3, 2]);
        let graphs = build_all_mode_graphs(&t, 2, BandwidthRule::default()).unwrap();
        let other = random_tensor(6, &[5, 3, 3, 2]);
        assert!(laplacian_energy(&other, &graphs, 1.0).is_err());
    }

    #[test]
    fn constant_mode_is_annihilated() {
        // Constant along mode 1: rows of the mode-1 unfolding are identical.
        let base = random_tensor(7, &[4, 1, 3]);
        let t = DenseTensor::from_fn(&[4, 5, 3], |i| base.get(&[i[0], 0, i[2]])).unwrap();
        let g = build_mode_graph(&t, 1, 2, BandwidthRule::default()).unwrap();
        let x = t.unfold(1).unwrap();
        assert!((&g.laplacian * x).norm() < 1e-12);
    }

    #[test]
    fn triplet_round_trip() {
        let t = random_tensor(8, &[6, 4]);
        let g = build_mode_graph(&t, 0, 2, BandwidthRule::default()).unwrap();
        let mut buf = Vec::new();
        g.write_triplets(&mut buf).unwrap();
        let back = ModeGraph::<f64>::read_triplets(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back.mode, 0);
        assert_relative_eq!(back.adjacency, g.adjacency, max_relative = 1e-14);
        assert!(ModeGraph::<f64>::read_triplets(std::io::Cursor::new(b"0 1 0.5\n".to_vec())).is_err());
    }
}
