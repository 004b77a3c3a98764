//! Seeded Lloyd's k-means with k-means++ seeding and restarts.

use rand::Rng;

#[derive(Debug, Clone)]
pub struct Clustering {
    /// Cluster index per point, compacted so that every index in `0..k` is used.
    pub assignments: Vec<usize>,
    pub k: usize,
    pub inertia: f64,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn init_plus_plus<R: Rng + ?Sized>(points: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut centers = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d: Vec<f64> = points.iter().map(|p| dist2(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d.iter().sum();
        let next = if total <= 0.0 {
            rng.random_range(0..points.len())
        } else {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            d.iter()
                .position(|x| {
                    acc += x;
                    u < acc
                })
                .unwrap_or(points.len() - 1)
        };
        centers.push(points[next].clone());
        for (di, p) in d.iter_mut().zip(points) {
            *di = di.min(dist2(p, centers.last().unwrap()));
        }
    }
    centers
}

fn lloyd<R: Rng + ?Sized>(points: &[Vec<f64>], k: usize, max_iter: usize, rng: &mut R) -> Clustering {
    let dim = points[0].len();
    let mut centers = init_plus_plus(points, k, rng);
    let mut assignments = vec![0usize; points.len()];
    for iter in 0..max_iter {
        let mut changed = false;
        for (a, p) in assignments.iter_mut().zip(points) {
            let best = (0..k)
                .min_by(|&i, &j| dist2(p, &centers[i]).total_cmp(&dist2(p, &centers[j])))
                .unwrap();
            if *a != best || iter == 0 {
                changed |= *a != best;
                *a = best;
            }
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (a, p) in assignments.iter().zip(points) {
            counts[*a] += 1;
            sums[*a].iter_mut().zip(p).for_each(|(s, x)| *s += x);
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        if !changed && iter > 0 {
            break;
        }
    }
    let inertia = assignments
        .iter()
        .zip(points)
        .map(|(a, p)| dist2(p, &centers[*a]))
        .sum();
    compact(assignments, inertia)
}

fn compact(assignments: Vec<usize>, inertia: f64) -> Clustering {
    let mut map: Vec<Option<usize>> = Vec::new();
    let mut k = 0;
    let assignments = assignments
        .into_iter()
        .map(|a| {
            if a >= map.len() {
                map.resize(a + 1, None);
            }
            *map[a].get_or_insert_with(|| {
                k += 1;
                k - 1
            })
        })
        .collect();
    Clustering {
        assignments,
        k,
        inertia,
    }
}

/// Best of `restarts` runs by inertia.
pub fn kmeans<R: Rng + ?Sized>(
    points: &[Vec<f64>],
    k: usize,
    restarts: usize,
    max_iter: usize,
    rng: &mut R,
) -> Clustering {
    assert!(!points.is_empty() && k >= 1);
    let mut best: Option<Clustering> = None;
    for _ in 0..restarts.max(1) {
        let c = lloyd(points, k.min(points.len()), max_iter, rng);
        if best.as_ref().is_none_or(|b| c.inertia < b.inertia) {
            best = Some(c);
        }
    }
    best.unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn separates_two_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut pts = Vec::new();
        for i in 0..100 {
            let c = if i < 50 { 0.0 } else { 10.0 };
            pts.push(vec![c + rng.random::<f64>(), c + rng.random::<f64>()]);
        }
        let r = kmeans(&pts, 2, 10, 100, &mut rng);
        assert_eq!(r.k, 2);
        assert!(r.assignments[..50].iter().all(|a| *a == r.assignments[0]));
        assert!(r.assignments[50..].iter().all(|a| *a != r.assignments[0]));
    }

    #[test]
    fn identical_points_form_one_cluster() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts = vec![vec![1.0, 2.0]; 20];
        let r = kmeans(&pts, 2, 10, 100, &mut rng);
        assert_eq!(r.k, 1);
        assert_eq!(r.inertia, 0.0);
    }
}
