//! Offline density clustering over unit embeddings — the reference the
//! incremental bank must agree with.

use super::{DbscanParams, MemoryError};
use crate::encoder::SceneEmbedding;

/// Cosine distance between unit vectors (`1 − a·b`, clamped at zero).
pub(super) fn unit_dist(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (1.0 - dot).max(0.0)
}

/// Classic density clustering with deterministic labels.
///
/// A point with at least `min_pts` neighbors within `eps` (itself included)
/// is core; clusters are the density-connected core sets, numbered in order
/// of their lowest-index core point. A non-core point within `eps` of a core
/// becomes a border point of the nearest core's cluster (distance ties go to
/// the smaller cluster id); everything else is noise (`None`). With
/// `min_pts = 1` this degenerates to connected components of the `eps`-graph.
pub fn cluster_offline(
    points: &[SceneEmbedding],
    params: &DbscanParams,
) -> Result<Vec<Option<usize>>, MemoryError> {
    params.validate()?;
    let n = points.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let dim = points[0].dim();
    if let Some(p) = points.iter().find(|p| p.dim() != dim) {
        return Err(MemoryError::DimMismatch {
            want: dim,
            got: p.dim(),
        });
    }

    let mut nbrs: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for j in 0..n {
            if unit_dist(points[i].as_slice(), points[j].as_slice()) <= params.eps {
                nbrs[i].push(j);
            }
        }
    }
    let core: Vec<bool> = nbrs.iter().map(|ns| ns.len() >= params.min_pts).collect();

    // Flood-fill core components in index order -> canonical cluster numbers.
    let mut assign: Vec<Option<usize>> = vec![None; n];
    let mut next = 0usize;
    for i in 0..n {
        if !core[i] || assign[i].is_some() {
            continue;
        }
        let id = next;
        next += 1;
        assign[i] = Some(id);
        let mut stack = vec![i];
        while let Some(p) = stack.pop() {
            for &q in &nbrs[p] {
                if core[q] && assign[q].is_none() {
                    assign[q] = Some(id);
                    stack.push(q);
                }
            }
        }
    }

    for i in 0..n {
        if core[i] {
            continue;
        }
        let mut best: Option<(f64, usize)> = None;
        for &q in &nbrs[i] {
            if !core[q] {
                continue;
            }
            let d = unit_dist(points[i].as_slice(), points[q].as_slice());
            let c = assign[q].expect("core points are always clustered");
            if best.map_or(true, |(bd, bc)| d < bd || (d == bd && c < bc)) {
                best = Some((d, c));
            }
        }
        assign[i] = best.map(|(_, c)| c);
    }
    Ok(assign)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Unit-circle angles: two tight triples and a straggler.
    pub(crate) const SEVEN: [f64; 7] = [0.0, 0.1, 0.2, 2.0, 2.1, 2.2, 3.0];

    pub(crate) fn circle(angles: &[f64]) -> Vec<SceneEmbedding> {
        angles
            .iter()
            .map(|&a| SceneEmbedding::new(vec![a.cos(), a.sin()], None).unwrap())
            .collect()
    }

    /// Gaussian clumps around random directions on the 3-sphere.
    pub(crate) fn clumps(seed: u64, n_clumps: usize, per: usize, sigma: f64) -> Vec<SceneEmbedding> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gauss = |r: &mut ChaCha8Rng| {
            // Box-Muller keeps this helper free of distribution deps.
            let u: f64 = r.gen_range(f64::EPSILON..1.0);
            let v: f64 = r.gen_range(0.0..std::f64::consts::TAU);
            (-2.0 * u.ln()).sqrt() * v.cos()
        };
        let mut out = Vec::new();
        for _ in 0..n_clumps {
            let c: Vec<f64> = (0..3).map(|_| gauss(&mut rng)).collect();
            let c = SceneEmbedding::new(c, None).unwrap();
            for _ in 0..per {
                let raw: Vec<f64> = c
                    .as_slice()
                    .iter()
                    .map(|x| x + sigma * gauss(&mut rng))
                    .collect();
                out.push(SceneEmbedding::new(raw, None).unwrap());
            }
        }
        out
    }

    /// Dumbest possible reference: explicit transitive closure of core
    /// adjacency, then the same labeling rules.
    pub(crate) fn oracle(points: &[SceneEmbedding], eps: f64, min_pts: usize) -> Vec<Option<usize>> {
        let n = points.len();
        let d = |i: usize, j: usize| unit_dist(points[i].as_slice(), points[j].as_slice());
        let core: Vec<bool> = (0..n)
            .map(|i| (0..n).filter(|&j| d(i, j) <= eps).count() >= min_pts)
            .collect();
        let mut reach = vec![vec![false; n]; n];
        for i in 0..n {
            for j in 0..n {
                reach[i][j] = core[i] && core[j] && d(i, j) <= eps;
            }
        }
        loop {
            let mut grew = false;
            for i in 0..n {
                for j in 0..n {
                    if !reach[i][j] && (0..n).any(|k| reach[i][k] && reach[k][j]) {
                        reach[i][j] = true;
                        grew = true;
                    }
                }
            }
            if !grew {
                break;
            }
        }
        let mut assign = vec![None; n];
        let mut next = 0usize;
        for i in 0..n {
            if core[i] && assign[i].is_none() {
                for j in i..n {
                    if reach[i][j] {
                        assign[j] = Some(next);
                    }
                }
                next += 1;
            }
        }
        for i in 0..n {
            if core[i] {
                continue;
            }
            let mut best: Option<(f64, usize)> = None;
            for j in 0..n {
                if !core[j] || d(i, j) > eps {
                    continue;
                }
                let (dd, c) = (d(i, j), assign[j].unwrap());
                if best.map_or(true, |(bd, bc)| dd < bd || (dd == bd && c < bc)) {
                    best = Some((dd, c));
                }
            }
            assign[i] = best.map(|(_, c)| c);
        }
        assign
    }

    #[test]
    fn empty_set_has_no_clusters() {
        let got = cluster_offline(&[], &DbscanParams::default()).unwrap();
        assert!(got.is_empty());
    }

    #[test]
    fn circle_triples_cluster_with_one_straggler_noise() {
        // eps links the 0.1 rad spacing (cosine distance 0.0050) but not the
        // 0.2 rad span (0.0199), so only each triple's middle point is core.
        let pts = circle(&SEVEN);
        let params = DbscanParams {
            eps: 0.01,
            min_pts: 3,
        };
        let got = cluster_offline(&pts, &params).unwrap();
        let want = vec![Some(0), Some(0), Some(0), Some(1), Some(1), Some(1), None];
        assert_eq!(got, want);
        assert_eq!(got, oracle(&pts, params.eps, params.min_pts));
    }

    #[test]
    fn min_pts_one_turns_clusters_into_graph_components() {
        let pts = circle(&SEVEN);
        let params = DbscanParams {
            eps: 0.01,
            min_pts: 1,
        };
        let got = cluster_offline(&pts, &params).unwrap();
        let want = vec![Some(0), Some(0), Some(0), Some(1), Some(1), Some(1), Some(2)];
        assert_eq!(got, want);
        assert_eq!(got, oracle(&pts, params.eps, params.min_pts));
    }

    #[test]
    fn border_point_goes_to_the_nearest_core_with_id_tie_break() {
        // Two mirrored wedges in 3-D with exactly one core each (min_pts 4);
        // the probe on the mirror axis sees both cores at bit-identical
        // distance 0.2, so the smaller cluster id must win.
        let mk = |v: [f64; 3]| SceneEmbedding::new(v.to_vec(), None).unwrap();
        let mut pts = vec![
            mk([0.8, 0.6, 0.0]),
            mk([0.6, 0.8, 0.0]),
            mk([0.28, 0.96, 0.0]),
            mk([0.8, -0.6, 0.0]),
            mk([0.6, -0.8, 0.0]),
            mk([0.28, -0.96, 0.0]),
            mk([1.0, 0.0, 0.0]),
        ];
        let params = DbscanParams {
            eps: 0.25,
            min_pts: 4,
        };
        let got = cluster_offline(&pts, &params).unwrap();
        assert_eq!(
            got,
            vec![Some(0), Some(0), Some(0), Some(1), Some(1), Some(1), Some(0)]
        );
        assert_eq!(got, oracle(&pts, params.eps, params.min_pts));

        // Nudged off the axis toward the lower wedge, the probe must follow
        // the strictly nearer core instead.
        pts[6] = SceneEmbedding::new(vec![1.0, -0.02, 0.0], None).unwrap();
        let got = cluster_offline(&pts, &params).unwrap();
        assert_eq!(got[6], Some(1));
        assert_eq!(got, oracle(&pts, params.eps, params.min_pts));
    }

    #[test]
    fn offline_matches_the_oracle_on_random_clumps() {
        let eps_grid = [0.05, 0.1, 0.3, 0.6, 1.0];
        for seed in 0..30u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let pts = clumps(
                seed,
                rng.gen_range(1..=3),
                rng.gen_range(4..=16),
                rng.gen_range(0.05..0.25),
            );
            let params = DbscanParams {
                eps: eps_grid[rng.gen_range(0..eps_grid.len())],
                min_pts: rng.gen_range(1..=6),
            };
            let got = cluster_offline(&pts, &params).unwrap();
            let want = oracle(&pts, params.eps, params.min_pts);
            assert_eq!(got, want, "seed {seed} params {params:?}");
        }
    }

    #[test]
    fn bad_params_are_refused() {
        let pts = circle(&[0.0]);
        for (eps, min_pts) in [(0.0, 3), (-0.1, 3), (2.5, 3), (f64::NAN, 3), (0.3, 0)] {
            assert!(matches!(
                cluster_offline(&pts, &DbscanParams { eps, min_pts }),
                Err(MemoryError::BadParams(_))
            ));
        }
    }
}
