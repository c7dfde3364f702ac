//! Cone candidates from LiDAR points: Euclidean clustering and size filtering.

use std::collections::HashMap;

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub centroid: [f64; 2],
    /// Bounding-box size along x and y.
    pub extent: [f64; 2],
    pub count: usize,
    /// Indices of the member points, ascending.
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerceptionConfig {
    pub eps: f64,
    pub min_pts: usize,
    pub max_extent: f64,
    pub max_count: usize,
}

impl Default for PerceptionConfig {
    fn default() -> Self {
        Self {
            eps: 0.3,
            min_pts: 3,
            max_extent: 0.5,
            max_count: 200,
        }
    }
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let ra = self.find(a);
        let rb = self.find(b);
        if ra != rb {
            // smaller root wins so labels do not depend on merge order
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Single-linkage clustering: points closer than or equal to `eps` are
/// connected, and connected components with fewer than `min_pts` points are
/// dropped. Clusters are ordered by their first member index.
pub fn cluster_points(points: &[[f64; 2]], eps: f64, min_pts: usize) -> Vec<Cluster> {
    assert!(eps > 0.0 && min_pts >= 1, "eps must be positive and min_pts at least 1");
    let n = points.len();
    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    let cell = |p: &[f64; 2]| ((p[0] / eps).floor() as i64, (p[1] / eps).floor() as i64);
    for (i, p) in points.iter().enumerate() {
        grid.entry(cell(p)).or_default().push(i);
    }
    let eps2 = eps * eps;
    let mut sets = DisjointSet::new(n);
    for (i, p) in points.iter().enumerate() {
        let (cx, cy) = cell(p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                let Some(bucket) = grid.get(&(cx + dx, cy + dy)) else {
                    continue;
                };
                for &j in bucket {
                    if j <= i {
                        continue;
                    }
                    let q = points[j];
                    let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2);
                    if d2 <= eps2 {
                        sets.union(i, j);
                    }
                }
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot: HashMap<usize, usize> = HashMap::new();
    for i in 0..n {
        let root = sets.find(i);
        let k = *slot.entry(root).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[k].push(i);
    }
    groups
        .into_iter()
        .filter(|g| g.len() >= min_pts)
        .map(|members| summarize(points, members))
        .collect()
}

fn summarize(points: &[[f64; 2]], members: Vec<usize>) -> Cluster {
    let mut sum = [0.0, 0.0];
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for &i in &members {
        let p = points[i];
        for k in 0..2 {
            sum[k] += p[k];
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let n = members.len() as f64;
    Cluster {
        centroid: [sum[0] / n, sum[1] / n],
        extent: [hi[0] - lo[0], hi[1] - lo[1]],
        count: members.len(),
        members,
    }
}

/// Keeps clusters no larger than `max_extent` in both axes and with at most
/// `max_count` points. Both bounds are inclusive.
pub fn filter_by_size(clusters: Vec<Cluster>, max_extent: f64, max_count: usize) -> Vec<Cluster> {
    clusters
        .into_iter()
        .filter(|c| c.extent[0] <= max_extent && c.extent[1] <= max_extent && c.count <= max_count)
        .collect()
}

/// Cone centers found in one scan.
pub fn detect_cones(points: &[[f64; 2]], config: &PerceptionConfig) -> Vec<[f64; 2]> {
    let clusters = cluster_points(points, config.eps, config.min_pts);
    filter_by_size(clusters, config.max_extent, config.max_count)
        .into_iter()
        .map(|c| c.centroid)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cluster(extent: f64) -> Cluster {
        Cluster {
            centroid: [0.0, 0.0],
            extent: [extent, extent / 2.0],
            count: 10,
            members: (0..10).collect(),
        }
    }

    #[test]
    fn tight_group_is_one_cluster() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<[f64; 2]> = (0..10)
            .map(|_| [3.0 + rng.random_range(0.0..0.05), 1.0 + rng.random_range(0.0..0.05)])
            .collect();
        let c = cluster_points(&pts, 0.2, 3);
        assert_eq!(c.len(), 1);
        let mx = pts.iter().map(|p| p[0]).sum::<f64>() / 10.0;
        assert!((c[0].centroid[0] - mx).abs() < 1e-12);
    }

    #[test]
    fn separated_groups_split() {
        let pts = vec![[0.0, 0.0], [0.1, 0.0], [0.0, 0.1], [5.0, 0.0], [5.1, 0.0], [5.0, 0.1]];
        assert_eq!(cluster_points(&pts, 0.3, 3).len(), 2);
        assert!(cluster_points(&[], 0.3, 3).is_empty());
    }

    #[test]
    fn eps_bound_is_inclusive() {
        let pts = vec![[0.0, 0.0], [0.25, 0.0]];
        assert_eq!(cluster_points(&pts, 0.25, 1).len(), 1);
    }

    #[test]
    fn size_filter_rules() {
        assert_eq!(filter_by_size(vec![cluster(0.2)], 0.5, 100).len(), 1);
        assert!(filter_by_size(vec![cluster(3.0)], 0.5, 100).is_empty());
        assert_eq!(filter_by_size(vec![cluster(0.5)], 0.5, 100).len(), 1);
        assert!(filter_by_size(vec![cluster(0.2)], 0.5, 9).is_empty());
    }

    /// Brute-force connected components over the eps graph.
    fn oracle(points: &[[f64; 2]], eps: f64, min_pts: usize) -> Vec<Vec<usize>> {
        let n = points.len();
        let mut label: Vec<usize> = (0..n).collect();
        fn root(l: &mut Vec<usize>, i: usize) -> usize {
            if l[i] == i {
                i
            } else {
                let r = root(l, l[i]);
                l[i] = r;
                r
            }
        }
        for i in 0..n {
            for j in 0..n {
                let d = ((points[i][0] - points[j][0]).powi(2) + (points[i][1] - points[j][1]).powi(2))
                    .sqrt();
                if d <= eps {
                    let (a, b) = (root(&mut label, i), root(&mut label, j));
                    label[a] = b;
                }
            }
        }
        let mut comps: HashMap<usize, Vec<usize>> = HashMap::new();
        for i in 0..n {
            let r = root(&mut label, i);
            comps.entry(r).or_default().push(i);
        }
        let mut out: Vec<Vec<usize>> = comps.into_values().filter(|c| c.len() >= min_pts).collect();
        out.sort();
        out
    }

    proptest! {
        #[test]
        fn partition_matches_union_find(seed in 0u64..100_000, n in 0usize..120, eps in 0.05f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<[f64; 2]> = (0..n).map(|_| [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)]).collect();
            let mut got: Vec<Vec<usize>> = cluster_points(&pts, eps, 2).into_iter().map(|c| c.members).collect();
            got.sort();
            prop_assert_eq!(got, oracle(&pts, eps, 2));
        }

        #[test]
        fn permutation_invariant(seed in 0u64..100_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<[f64; 2]> = (0..80).map(|_| [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]).collect();
            let mut perm: Vec<usize> = (0..pts.len()).collect();
            perm.shuffle(&mut rng);
            let shuffled: Vec<[f64; 2]> = perm.iter().map(|&i| pts[i]).collect();
            let as_sets = |cs: Vec<Cluster>, map: &dyn Fn(usize) -> usize| {
                let mut v: Vec<Vec<usize>> = cs.into_iter().map(|c| {
                    let mut m: Vec<usize> = c.members.into_iter().map(map).collect();
                    m.sort();
                    m
                }).collect();
                v.sort();
                v
            };
            let a = as_sets(cluster_points(&pts, 0.3, 3), &|i| i);
            let b = as_sets(cluster_points(&shuffled, 0.3, 3), &|i| perm[i]);
            prop_assert_eq!(a, b);
        }
    }
}
