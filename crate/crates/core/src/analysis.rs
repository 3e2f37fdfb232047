//! Representation analyses over hidden states: distance matrices, classical
//! MDS, scree knees, community separation and per-position accuracy.

use alloc::vec;
use alloc::vec::Vec;

use crate::chunking::cosine_distance;
use crate::environment::{PositionLabel, Token};
use crate::naive::{
    hidden_snapshot, train_online, NaiveModel, NaiveRunSpec, OnlineEvalState, RunMetrics, SnapshotRow, TokenStream,
    POSITION_TAIL,
};
use crate::{Error, Result};

/// Jacobi sweeps stop once every off-diagonal entry is below this.
pub const JACOBI_TOLERANCE: f64 = 1e-12;
const MAX_SWEEPS: usize = 100;

/// Mean layer-1 hidden state for each of the seven tokens, in token order.
pub fn token_mean_hiddens(rows: &[SnapshotRow]) -> Result<Vec<Vec<f64>>> {
    let dim = rows.first().map_or(0, |r| r.hidden.len());
    let mut sums = vec![vec![0.0; dim]; Token::COUNT];
    let mut counts = [0usize; Token::COUNT];
    for r in rows {
        if r.hidden.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: r.hidden.len(),
            });
        }
        let i = r.token.index();
        counts[i] += 1;
        for (s, h) in sums[i].iter_mut().zip(&r.hidden) {
            *s += h;
        }
    }
    for t in Token::ALL {
        if counts[t.index()] == 0 {
            return Err(Error::MissingToken(t.symbol()));
        }
    }
    for (s, c) in sums.iter_mut().zip(counts) {
        s.iter_mut().for_each(|v| *v /= c as f64);
    }
    Ok(sums)
}

/// Symmetric matrix of pairwise distances with a zero diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    /// Builds from a full row-major matrix, checking symmetry (1e-12),
    /// nonnegativity and a zero diagonal.
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                found: data.len(),
            });
        }
        for i in 0..n {
            if data[i * n + i] != 0.0 {
                return Err(Error::InvalidConfig("distance diagonal must be zero".into()));
            }
            for j in 0..n {
                let (a, b) = (data[i * n + j], data[j * n + i]);
                if !(a >= 0.0) || (a - b).abs() > 1e-12 {
                    return Err(Error::InvalidConfig(
                        "distances must be symmetric and nonnegative".into(),
                    ));
                }
            }
        }
        Ok(DistanceMatrix { n, data })
    }

    fn from_fn<F: Fn(usize, usize) -> f64>(n: usize, f: F) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let d = f(i, j);
                data[i * n + j] = d;
                data[j * n + i] = d;
            }
        }
        DistanceMatrix { n, data }
    }

    /// Pairwise cosine distances.
    pub fn cosine<P: AsRef<[f64]>>(points: &[P]) -> Self {
        Self::from_fn(points.len(), |i, j| {
            cosine_distance(points[i].as_ref(), points[j].as_ref()).value
        })
    }

    /// Pairwise Euclidean distances.
    pub fn euclidean<P: AsRef<[f64]>>(points: &[P]) -> Self {
        Self::from_fn(points.len(), |i, j| {
            let sq: f64 = points[i]
                .as_ref()
                .iter()
                .zip(points[j].as_ref())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            libm::sqrt(sq)
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }
}

/// Eigenvalues (descending) and matching unit eigenvectors of a symmetric
/// `n × n` row-major matrix, by cyclic Jacobi rotations.
pub fn symmetric_eigen(matrix: &[f64], n: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    assert_eq!(matrix.len(), n * n, "matrix must be n × n");
    let mut a = matrix.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    for _ in 0..MAX_SWEEPS {
        let mut off: f64 = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off = off.max(a[p * n + q].abs());
            }
        }
        if off < JACOBI_TOLERANCE {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() < f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + libm::sqrt(theta * theta + 1.0));
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / libm::sqrt(t * t + 1.0);
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| a[i * n + i]).collect();
    let vectors = order.iter().map(|&i| (0..n).map(|k| v[k * n + i]).collect()).collect();
    (values, vectors)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Embedding {
    /// One row per input point.
    pub coords: Vec<Vec<f64>>,
    /// Full spectrum of the centred Gram matrix, descending.
    pub eigenvalues: Vec<f64>,
    /// Fewer positive eigenvalues than requested dimensions were available.
    pub truncated: bool,
}

impl Embedding {
    pub fn dims(&self) -> usize {
        self.coords.first().map_or(0, |c| c.len())
    }
}

/// Classical (Torgerson) scaling of `d` into at most `k` dimensions.
pub fn classical_mds(d: &DistanceMatrix, k: usize) -> Embedding {
    let n = d.len();
    let mut b = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let x = d.get(i, j);
            b[i * n + j] = x * x;
        }
    }
    let row_mean: Vec<f64> = (0..n)
        .map(|i| b[i * n..(i + 1) * n].iter().sum::<f64>() / n as f64)
        .collect();
    let grand = row_mean.iter().sum::<f64>() / n.max(1) as f64;
    for i in 0..n {
        for j in 0..n {
            b[i * n + j] = -0.5 * (b[i * n + j] - row_mean[i] - row_mean[j] + grand);
        }
    }
    // Symmetrise away rounding before diagonalising.
    for i in 0..n {
        for j in i + 1..n {
            let m = 0.5 * (b[i * n + j] + b[j * n + i]);
            b[i * n + j] = m;
            b[j * n + i] = m;
        }
    }
    let (eigenvalues, vectors) = symmetric_eigen(&b, n);
    let positive = eigenvalues.iter().take_while(|l| **l > JACOBI_TOLERANCE).count();
    let kept = k.min(positive);
    let coords = (0..n)
        .map(|i| (0..kept).map(|c| libm::sqrt(eigenvalues[c]) * vectors[c][i]).collect())
        .collect();
    Embedding {
        coords,
        eigenvalues,
        truncated: kept < k,
    }
}

/// 1-based `k` maximising `(λ_k − λ_{k+1}) / (λ_1 + ε)`; negative
/// eigenvalues count as zero and ties go to the smaller `k`.
pub fn knee(eigenvalues: &[f64]) -> usize {
    if eigenvalues.len() < 2 {
        return 1;
    }
    let l: Vec<f64> = eigenvalues.iter().map(|x| x.max(0.0)).collect();
    let scale = l[0] + 1e-12;
    let mut best = 1;
    let mut best_gap = f64::NEG_INFINITY;
    for k in 0..l.len() - 1 {
        let gap = (l[k] - l[k + 1]) / scale;
        if gap > best_gap {
            best_gap = gap;
            best = k + 1;
        }
    }
    best
}

/// Mean silhouette of a labelled point set under the given distances.
/// Singleton clusters score 0 for their member.
pub fn silhouette(d: &DistanceMatrix, labels: &[usize]) -> f64 {
    let n = labels.len();
    assert_eq!(n, d.len(), "one label per point");
    let clusters: Vec<usize> = {
        let mut c = labels.to_vec();
        c.sort_unstable();
        c.dedup();
        c
    };
    if n == 0 || clusters.len() < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for i in 0..n {
        let mean_to = |c: usize| {
            let (s, k) = (0..n)
                .filter(|&j| j != i && labels[j] == c)
                .fold((0.0, 0usize), |(s, k), j| (s + d.get(i, j), k + 1));
            (k > 0).then(|| s / k as f64)
        };
        let Some(a) = mean_to(labels[i]) else { continue };
        let b = clusters
            .iter()
            .filter(|&&c| c != labels[i])
            .filter_map(|&c| mean_to(c))
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    total / n as f64
}

/// Whether two planar point sets can be strictly separated by a line.
///
/// A strict separator exists iff the maximum-margin one does, and its normal
/// is either parallel to the difference of two points or perpendicular to
/// it, so checking those directions is exact.
pub fn linearly_separable(a: &[[f64; 2]], b: &[[f64; 2]]) -> bool {
    if a.is_empty() || b.is_empty() {
        return true;
    }
    let all: Vec<[f64; 2]> = a.iter().chain(b).copied().collect();
    let separates = |n: [f64; 2]| {
        let proj = |p: &[f64; 2]| n[0] * p[0] + n[1] * p[1];
        let (amax, amin) = a
            .iter()
            .map(proj)
            .fold((f64::NEG_INFINITY, f64::INFINITY), |(hi, lo), x| (hi.max(x), lo.min(x)));
        let (bmax, bmin) = b
            .iter()
            .map(proj)
            .fold((f64::NEG_INFINITY, f64::INFINITY), |(hi, lo), x| (hi.max(x), lo.min(x)));
        amax < bmin || bmax < amin
    };
    for i in 0..all.len() {
        for j in i + 1..all.len() {
            let d = [all[j][0] - all[i][0], all[j][1] - all[i][1]];
            if d[0] == 0.0 && d[1] == 0.0 {
                continue;
            }
            if separates(d) || separates([-d[1], d[0]]) {
                return true;
            }
        }
    }
    false
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SeparationReport {
    pub silhouette: f64,
    pub separable: bool,
}

/// Separation of the first community {A,B,C} from {D,E,F}. `distances`
/// covers at least the six community tokens in token order; `coords` are
/// their embedding coordinates (only the first two dimensions are used).
pub fn community_separation(distances: &DistanceMatrix, coords: &[Vec<f64>]) -> SeparationReport {
    let six: Vec<f64> = (0..6)
        .flat_map(|i| (0..6).map(move |j| (i, j)))
        .map(|(i, j)| distances.get(i, j))
        .collect();
    let d6 = DistanceMatrix { n: 6, data: six };
    let labels = [0, 0, 0, 1, 1, 1];
    let planar = |i: usize| {
        let c = &coords[i];
        [c.first().copied().unwrap_or(0.0), c.get(1).copied().unwrap_or(0.0)]
    };
    let first: Vec<[f64; 2]> = (0..3).map(planar).collect();
    let second: Vec<[f64; 2]> = (3..6).map(planar).collect();
    SeparationReport {
        silhouette: silhouette(&d6, &labels),
        separable: linearly_separable(&first, &second),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PositionAccuracy {
    pub position: PositionLabel,
    pub accuracy: f64,
    pub n: usize,
}

/// Accuracy grouped by the position of the predicted token; positions with
/// no samples are omitted.
pub fn per_position_accuracy(
    predictions: &[Token],
    targets: &[Token],
    positions: &[PositionLabel],
) -> Vec<PositionAccuracy> {
    assert_eq!(predictions.len(), targets.len());
    assert_eq!(predictions.len(), positions.len());
    let mut hits = [0usize; 4];
    let mut counts = [0usize; 4];
    for ((p, t), pos) in predictions.iter().zip(targets).zip(positions) {
        let i = pos.value() as usize;
        counts[i] += 1;
        if p == t {
            hits[i] += 1;
        }
    }
    (0..4u8)
        .filter(|&i| counts[i as usize] > 0)
        .map(|i| PositionAccuracy {
            position: PositionLabel::new(i).expect("0..4"),
            accuracy: hits[i as usize] as f64 / counts[i as usize] as f64,
            n: counts[i as usize],
        })
        .collect()
}

/// Brief training, then a layer-1 snapshot on the continuing stream.
#[derive(Clone, Debug)]
pub struct RepresentationReport {
    pub metrics: RunMetrics,
    pub token_means: Vec<Vec<f64>>,
    pub distances: DistanceMatrix,
    pub embedding: Embedding,
    pub knee: usize,
    pub separation: SeparationReport,
    /// Over the last [`POSITION_TAIL`] training predictions.
    pub positions: Vec<PositionAccuracy>,
}

/// Trains the plain model of `spec`, records `snapshot_steps` layer-1 states
/// and embeds the per-token means (cosine distances) in `dims` dimensions.
pub fn representation_study(spec: &NaiveRunSpec, snapshot_steps: usize, dims: usize) -> Result<RepresentationReport> {
    let mut model = NaiveModel::new(spec.neurons, spec.layers, spec.activation, &spec.train);
    let mut stream = TokenStream::from_config(&spec.env);
    let mut eval = OnlineEvalState::new(spec.win);
    let metrics = train_online(&mut model, &mut stream, spec.steps, &mut eval);
    let rows = hidden_snapshot(&mut model, &mut stream, snapshot_steps);
    let token_means = token_mean_hiddens(&rows)?;
    let distances = DistanceMatrix::cosine(&token_means);
    let embedding = classical_mds(&distances, dims);
    let separation = community_separation(&distances, &embedding.coords);
    let positions = metrics.per_position(POSITION_TAIL);
    Ok(RepresentationReport {
        knee: knee(&embedding.eigenvalues),
        metrics,
        token_means,
        distances,
        embedding,
        separation,
        positions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn residual(m: &[f64], n: usize, values: &[f64], vectors: &[Vec<f64>]) -> f64 {
        let mut worst: f64 = 0.0;
        for (l, v) in values.iter().zip(vectors) {
            for i in 0..n {
                let bv: f64 = (0..n).map(|k| m[i * n + k] * v[k]).sum();
                worst = worst.max((bv - l * v[i]).abs());
            }
        }
        worst
    }

    #[test]
    fn jacobi_diagonalises() {
        let m = [4.0, 1.0, 2.0, 1.0, 3.0, 0.5, 2.0, 0.5, 1.0];
        let (vals, vecs) = symmetric_eigen(&m, 3);
        assert!(vals.windows(2).all(|w| w[0] >= w[1]));
        assert!(residual(&m, 3, &vals, &vecs) < 1e-9);
        assert!((vals.iter().sum::<f64>() - 8.0).abs() < 1e-12);
    }

    #[test]
    fn mds_recovers_planar_points() {
        let pts = [[0.0, 0.0], [3.0, 0.0], [0.0, 4.0], [1.0, 1.0], [-2.0, 0.5]];
        let d = DistanceMatrix::euclidean(&pts);
        let e = classical_mds(&d, 2);
        assert!(!e.truncated);
        let back = DistanceMatrix::euclidean(&e.coords);
        for i in 0..5 {
            for j in 0..5 {
                assert!((back.get(i, j) - d.get(i, j)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn equilateral_triangle() {
        let d = DistanceMatrix::new(3, vec![0.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0]).unwrap();
        let e = classical_mds(&d, 2);
        // Centred Gram matrix of unit-side triangle: eigenvalues 1/2, 1/2, 0.
        assert!((e.eigenvalues[0] - 0.5).abs() < 1e-12);
        assert!((e.eigenvalues[1] - 0.5).abs() < 1e-12);
        assert!(e.eigenvalues[2].abs() < 1e-12);
        let e3 = classical_mds(&d, 3);
        assert!(e3.truncated);
        assert_eq!(e3.dims(), 2);
    }

    #[test]
    fn knee_cases() {
        assert_eq!(knee(&[10.0, 9.0, 0.1, 0.05]), 2);
        assert_eq!(knee(&[10.0, 0.1, 0.09]), 1);
        assert_eq!(knee(&[1.0, 1.0, 1.0]), 1);
        assert_eq!(knee(&[5.0, 4.0, -1.0]), 2);
    }

    #[test]
    fn separation_cases() {
        let pts = [
            vec![1.0, 0.0],
            vec![1.0, 0.1],
            vec![0.9, 0.0],
            vec![-1.0, 0.0],
            vec![-1.0, -0.1],
            vec![-0.9, 0.0],
            vec![0.0, 1.0],
        ];
        let d = DistanceMatrix::cosine(&pts);
        let r = community_separation(&d, &pts);
        assert!(r.separable);
        assert!(r.silhouette > 0.95);

        let a = [[0.0, 0.0], [2.0, 0.0], [1.0, 2.0]];
        let b = [[1.0, 0.5], [5.0, 5.0], [-5.0, 5.0]];
        assert!(!linearly_separable(&a, &b));
        let a = [[0.0, 0.0], [2.0, 2.0]];
        let b = [[2.0, 0.0], [0.0, 2.0]];
        assert!(!linearly_separable(&a, &b));
    }

    #[test]
    fn distance_matrix_validation() {
        assert!(DistanceMatrix::new(2, vec![0.0, 1.0, 2.0, 0.0]).is_err());
        assert!(DistanceMatrix::new(2, vec![0.1, 1.0, 1.0, 0.0]).is_err());
        assert!(DistanceMatrix::new(2, vec![0.0, 1.0, 1.0, 0.0]).is_ok());
    }

    #[test]
    fn empty_positions() {
        assert!(per_position_accuracy(&[], &[], &[]).is_empty());
    }

    #[test]
    fn missing_token_is_named() {
        let rows = vec![SnapshotRow {
            token: Token::A,
            position: PositionLabel::ENTRY,
            hidden: vec![1.0],
        }];
        assert_eq!(token_mean_hiddens(&rows), Err(Error::MissingToken('B')));
    }
}
