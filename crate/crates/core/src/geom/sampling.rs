use super::{dist, Point};
use crate::error::{Error, Result};

/// Greedy farthest-point sampling: starting from `start`, repeatedly take
/// the point farthest from everything selected so far. Ties go to the
/// lowest index.
pub fn farthest_point_sample(points: &[Point], k: usize, start: usize) -> Result<Vec<usize>> {
    let n = points.len();
    if k > n {
        return Err(Error::invalid("farthest_point_sample", format!("k = {k} exceeds {n} points")));
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    if start >= n {
        return Err(Error::invalid("farthest_point_sample", format!("start {start} out of range")));
    }
    let mut selected = Vec::with_capacity(k);
    let mut min_d2 = vec![f64::INFINITY; n];
    let mut cur = start;
    for _ in 0..k {
        selected.push(cur);
        let c = points[cur];
        let mut best = (f64::NEG_INFINITY, 0);
        for (i, p) in points.iter().enumerate() {
            let d2 = (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2);
            if d2 < min_d2[i] {
                min_d2[i] = d2;
            }
            if min_d2[i] > best.0 {
                best = (min_d2[i], i);
            }
        }
        cur = best.1;
    }
    Ok(selected)
}

/// For every center, indices of points strictly closer than `radius`,
/// nearest first (ties by index) and truncated to `cap`. A center with no
/// such point gets its single nearest point.
pub fn ball_query(points: &[Point], centers: &[Point], radius: f64, cap: usize) -> Result<Vec<Vec<usize>>> {
    if !(radius > 0.0) {
        return Err(Error::invalid("ball_query", format!("radius must be positive, got {radius}")));
    }
    if cap == 0 {
        return Err(Error::invalid("ball_query", "cap must be at least 1"));
    }
    if points.is_empty() {
        return Err(Error::invalid("ball_query", "no points"));
    }
    Ok(centers
        .iter()
        .map(|c| {
            let mut near: Vec<(f64, usize)> = points
                .iter()
                .enumerate()
                .map(|(i, p)| (dist(p, c), i))
                .filter(|(d, _)| *d < radius)
                .collect();
            if near.is_empty() {
                let nearest = points
                    .iter()
                    .enumerate()
                    .map(|(i, p)| (dist(p, c), i))
                    .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
                    .expect("non-empty");
                return vec![nearest.1];
            }
            near.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            near.into_iter().take(cap).map(|(_, i)| i).collect()
        })
        .collect())
}
