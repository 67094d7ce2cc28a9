//! Farthest-first traversal for the k-center problem.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nn::Real;

fn distance<T: Real>(a: &[T], b: &[T]) -> f64 {
    let mut acc = [T::zero(); 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        for l in 0..8 {
            let d = a[c * 8 + l] - b[c * 8 + l];
            acc[l] = acc[l] + d * d;
        }
    }
    let mut total = acc.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).sum::<f64>();
    for i in chunks * 8..a.len() {
        let d = (a[i] - b[i]).to_f64().unwrap_or(f64::NAN);
        total += d * d;
    }
    total.sqrt()
}

fn check_dims<T>(points: &[Vec<T>], centers: &[Vec<T>]) -> Result<()> {
    let dim = points.first().or(centers.first()).map_or(0, Vec::len);
    if points.iter().chain(centers).any(|p| p.len() != dim) {
        return Err(Error::structural("feature vectors of different dimensions"));
    }
    Ok(())
}

/// Like [`kcenter_greedy`], also returning each pick's min-distance to the
/// centers chosen before it.
pub fn kcenter_greedy_scored<T: Real>(points: &[Vec<T>], centers: &[Vec<T>], k: usize) -> Result<Vec<(usize, f64)>> {
    if k > points.len() {
        return Err(Error::PoolExhausted(format!(
            "k-center asked for {k} picks from {} points",
            points.len()
        )));
    }
    check_dims(points, centers)?;
    if k == 0 {
        return Ok(Vec::new());
    }
    let mut min_dist: Vec<f64> = points
        .par_iter()
        .map(|p| centers.iter().map(|c| distance(p, c)).fold(f64::INFINITY, f64::min))
        .collect();
    let mut picks = Vec::with_capacity(k);
    let mut taken = vec![false; points.len()];
    for _ in 0..k {
        let next = if picks.is_empty() && centers.is_empty() {
            (0, f64::INFINITY)
        } else {
            let mut best: Option<(usize, f64)> = None;
            for (i, &d) in min_dist.iter().enumerate() {
                if taken[i] {
                    continue;
                }
                if best.is_none_or(|(_, bd)| d > bd) {
                    best = Some((i, d));
                }
            }
            best.expect("k <= number of points")
        };
        taken[next.0] = true;
        picks.push(next);
        let center = &points[next.0];
        min_dist
            .par_iter_mut()
            .zip(points.par_iter())
            .for_each(|(m, p)| *m = m.min(distance(p, center)));
    }
    Ok(picks)
}

/// Picks `k` points by farthest-first traversal: each pick maximizes the
/// minimum Euclidean distance to the centers so far (smallest index on
/// ties), then joins the centers. With no initial centers the first pick is
/// point 0.
pub fn kcenter_greedy<T: Real>(points: &[Vec<T>], centers: &[Vec<T>], k: usize) -> Result<Vec<usize>> {
    Ok(kcenter_greedy_scored(points, centers, k)?.into_iter().map(|(i, _)| i).collect())
}

/// Covering radius: the largest distance from a point to its nearest center.
pub fn kcenter_radius<T: Real>(points: &[Vec<T>], centers: &[Vec<T>]) -> Result<f64> {
    if centers.is_empty() {
        return Err(Error::structural("covering radius needs at least one center"));
    }
    check_dims(points, centers)?;
    Ok(points
        .iter()
        .map(|p| centers.iter().map(|c| distance(p, c)).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max))
}

/// Optimal discrete k-center radius by enumerating every k-subset of the
/// points as centers. Exponential; meant for instances of a dozen points.
pub fn brute_force_kcenter_radius(points: &[Vec<f64>], k: usize) -> f64 {
    let n = points.len();
    if n == 0 || k >= n {
        return 0.0;
    }
    if k == 0 {
        return f64::INFINITY;
    }
    let euclid = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let mut best = f64::INFINITY;
    let mut subset: Vec<usize> = (0..k).collect();
    loop {
        let radius = points
            .iter()
            .map(|p| subset.iter().map(|&c| euclid(p, &points[c])).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max);
        best = best.min(radius);
        // next combination in lexicographic order
        let mut i = k;
        while i > 0 && subset[i - 1] == n - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return best;
        }
        subset[i - 1] += 1;
        for j in i..k {
            subset[j] = subset[j - 1] + 1;
        }
    }
}
