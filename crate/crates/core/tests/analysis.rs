use chunkrnn_core::analysis::*;
use proptest::prelude::*;

fn pairwise(points: &[Vec<f64>]) -> Vec<f64> {
    let n = points.len();
    let mut d = Vec::with_capacity(n * n);
    for a in points {
        for b in points {
            d.push(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt());
        }
    }
    d
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn mds_reproduces_euclidean_distances(
        dim in 1usize..=3,
        raw in prop::collection::vec(-5.0f64..5.0, 6..=36),
    ) {
        let points: Vec<Vec<f64>> = raw.chunks_exact(dim).map(|c| c.to_vec()).collect();
        prop_assume!(points.len() >= 2);
        let d = DistanceMatrix::euclidean(&points);
        let e = classical_mds(&d, dim);
        let got = pairwise(&e.coords);
        let n = points.len();
        for i in 0..n {
            for j in 0..n {
                prop_assert!((got[i * n + j] - d.get(i, j)).abs() < 1e-9,
                    "({i},{j}) {} vs {}", got[i * n + j], d.get(i, j));
            }
        }
    }

    #[test]
    fn eigen_reconstructs_symmetric_matrices(raw in prop::collection::vec(-3.0f64..3.0, 1..=8)) {
        let n = raw.len();
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                m[i * n + j] = raw[i] * raw[j] + if i == j { raw[i] } else { 0.1 * (i + j) as f64 };
            }
        }
        let (values, vectors) = symmetric_eigen(&m, n);
        prop_assert!(values.windows(2).all(|w| w[0] >= w[1]));
        for i in 0..n {
            for j in 0..n {
                let r: f64 = (0..n).map(|k| values[k] * vectors[k][i] * vectors[k][j]).sum();
                prop_assert!((r - m[i * n + j]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn cosine_distances_are_bounded(
        raw in prop::collection::vec(-1.0f64..1.0, 9..=30),
    ) {
        let points: Vec<Vec<f64>> = raw.chunks_exact(3).map(|c| c.to_vec()).collect();
        let d = DistanceMatrix::cosine(&points);
        for i in 0..d.len() {
            prop_assert_eq!(d.get(i, i), 0.0);
            for j in 0..d.len() {
                prop_assert!(d.get(i, j) >= 0.0 && d.get(i, j) <= 2.0 + 1e-12);
                prop_assert_eq!(d.get(i, j), d.get(j, i));
            }
        }
    }
}

#[test]
fn knee_picks_the_largest_drop() {
    assert_eq!(knee(&[10.0, 9.0, 1.0, 0.5]), 2);
    assert_eq!(knee(&[10.0, 1.0, 0.9, 0.8]), 1);
    assert_eq!(knee(&[5.0, 4.0, 3.0, -1.0]), 3);
}

#[test]
fn two_clusters_separate() {
    let pts: Vec<Vec<f64>> = vec![
        vec![1.0, 0.1, 0.0],
        vec![1.0, -0.1, 0.05],
        vec![0.9, 0.0, -0.05],
        vec![-1.0, 0.1, 0.0],
        vec![-1.0, -0.1, 0.05],
        vec![-0.9, 0.0, -0.05],
        vec![0.0, 1.0, 0.0],
    ];
    let d = DistanceMatrix::euclidean(&pts);
    let e = classical_mds(&d, 2);
    let r = community_separation(&d, &e.coords);
    assert!(r.separable);
    assert!(r.silhouette > 0.8, "{}", r.silhouette);
}
