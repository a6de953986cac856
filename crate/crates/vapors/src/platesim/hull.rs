//! Convex hull area of 2D point sets (monotone chain + shoelace).

/// Area of the convex hull of `points`; 0 for fewer than 3 non-collinear
/// points.
pub fn convex_hull_area(points: &[(f64, f64)]) -> f64 {
    let hull = convex_hull(points);
    polygon_area(&hull)
}

/// Convex hull in counter-clockwise order (monotone chain). Collinear
/// boundary points are dropped.
pub fn convex_hull(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut pts: Vec<(f64, f64)> = points.to_vec();
    pts.sort_by(|a, b| a.partial_cmp(b).expect("non-finite coordinate"));
    pts.dedup();
    let n = pts.len();
    if n < 3 {
        return pts;
    }

    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(2 * n);
    for &p in pts.iter() {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower_len = hull.len() + 1;
    for &p in pts.iter().rev() {
        while hull.len() >= lower_len && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0
        {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

fn polygon_area(poly: &[(f64, f64)]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut twice_area = 0.0;
    for i in 0..poly.len() {
        let (x1, y1) = poly[i];
        let (x2, y2) = poly[(i + 1) % poly.len()];
        twice_area += x1 * y2 - x2 * y1;
    }
    (twice_area / 2.0).abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn unit_square() {
        let pts = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)];
        assert_eq!(convex_hull_area(&pts), 1.0);
    }

    #[test]
    fn interior_point_ignored() {
        let pts = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0), (0.5, 0.5)];
        assert_eq!(convex_hull_area(&pts), 1.0);
    }

    #[test]
    fn collinear_is_zero() {
        let pts = [(0.0, 0.0), (1.0, 1.0), (2.0, 2.0)];
        assert_eq!(convex_hull_area(&pts), 0.0);
    }

    #[test]
    fn fewer_than_three_is_zero() {
        assert_eq!(convex_hull_area(&[]), 0.0);
        assert_eq!(convex_hull_area(&[(3.0, 4.0)]), 0.0);
        assert_eq!(convex_hull_area(&[(3.0, 4.0), (5.0, 6.0)]), 0.0);
    }

    #[test]
    fn duplicate_points_collapse() {
        let pts = [(0.0, 0.0), (0.0, 0.0), (1.0, 0.0), (0.0, 1.0)];
        assert!((convex_hull_area(&pts) - 0.5).abs() < 1e-15);
    }

    /// O(n^3) oracle: an ordered pair (i, j) is a hull edge iff every other
    /// point lies on or to the left of it; hull vertices are edge endpoints,
    /// ordered by angle around the centroid.
    pub(crate) fn brute_force_hull_area(points: &[(f64, f64)]) -> f64 {
        let n = points.len();
        if n < 3 {
            return 0.0;
        }
        let mut verts: Vec<(f64, f64)> = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let all_left = (0..n)
                    .filter(|&k| k != i && k != j)
                    .all(|k| cross(points[i], points[j], points[k]) >= 0.0);
                if all_left {
                    if !verts.contains(&points[i]) {
                        verts.push(points[i]);
                    }
                    if !verts.contains(&points[j]) {
                        verts.push(points[j]);
                    }
                }
            }
        }
        if verts.len() < 3 {
            return 0.0;
        }
        let cx = verts.iter().map(|p| p.0).sum::<f64>() / verts.len() as f64;
        let cy = verts.iter().map(|p| p.1).sum::<f64>() / verts.len() as f64;
        verts.sort_by(|a, b| {
            let aa = (a.1 - cy).atan2(a.0 - cx);
            let ab = (b.1 - cy).atan2(b.0 - cx);
            aa.partial_cmp(&ab).unwrap()
        });
        polygon_area(&verts)
    }

    #[test]
    fn matches_brute_force_on_random_sets() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for _ in 0..50 {
            let n = rng.gen_range(3..12);
            let pts: Vec<(f64, f64)> = (0..n)
                .map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect();
            let fast = convex_hull_area(&pts);
            let slow = brute_force_hull_area(&pts);
            let denom = slow.abs().max(1e-12);
            assert!(
                ((fast - slow) / denom).abs() < 1e-9,
                "hull {fast} vs oracle {slow} on {pts:?}"
            );
        }
    }
}
