//! K-means over crash coordinates, producing the Spatial Cluster ID feature.
//!
//! Points are projected equirectangularly (longitude scaled by the cosine of
//! the mean latitude) and clustered with Lloyd iterations from k-means++ seeds.
//! Cluster IDs are 1-based.

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;

#[derive(Debug, Error, PartialEq)]
pub enum SpatialError {
    #[error("latitude {0} is outside [-90, 90]")]
    Latitude(f64),
    #[error("longitude {0} is outside [-180, 180]")]
    Longitude(f64),
    #[error("k = {k} but only {distinct} distinct points")]
    Degenerate { k: usize, distinct: usize },
    #[error("k must be at least 1")]
    ZeroK,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub latitude: f64,
    pub longitude: f64,
}

impl GeoPoint {
    pub fn new(latitude: f64, longitude: f64) -> Result<Self, SpatialError> {
        let p = Self {
            latitude,
            longitude,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), SpatialError> {
        if !(-90.0..=90.0).contains(&self.latitude) {
            return Err(SpatialError::Latitude(self.latitude));
        }
        if !(-180.0..=180.0).contains(&self.longitude) {
            return Err(SpatialError::Longitude(self.longitude));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    /// Centroids in the projected plane as `[x, y]` = `[lon * lon_scale, lat]`.
    pub centroids: Vec<[f64; 2]>,
    pub lon_scale: f64,
    pub inertia: f64,
    /// Inertia after each assignment step, first to last.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

impl ClusterModel {
    pub fn project(&self, p: GeoPoint) -> [f64; 2] {
        [p.longitude * self.lon_scale, p.latitude]
    }

    /// Centroid `id` (1-based) back in latitude/longitude.
    pub fn centroid(&self, id: usize) -> GeoPoint {
        let [x, y] = self.centroids[id - 1];
        GeoPoint {
            latitude: y,
            longitude: x / self.lon_scale,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansParams {
    pub k: usize,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for KMeansParams {
    fn default() -> Self {
        Self {
            k: 10,
            max_iter: 300,
            tol: 1e-9,
        }
    }
}

fn sq_dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

/// Index of the nearest centroid; ties go to the lowest index.
fn nearest(centroids: &[[f64; 2]], p: [f64; 2]) -> (usize, f64) {
    let mut best = (0, sq_dist(centroids[0], p));
    for (j, &c) in centroids.iter().enumerate().skip(1) {
        let d = sq_dist(c, p);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn assign_all(centroids: &[[f64; 2]], pts: &[[f64; 2]], out: &mut [usize]) -> f64 {
    let mut inertia = 0.0;
    for (slot, &p) in out.iter_mut().zip(pts) {
        let (j, d) = nearest(centroids, p);
        *slot = j;
        inertia += d;
    }
    inertia
}

fn distinct_count(points: &[GeoPoint]) -> usize {
    let mut keys: Vec<(u64, u64)> = points
        .iter()
        .map(|p| (p.latitude.to_bits(), p.longitude.to_bits()))
        .collect();
    keys.sort_unstable();
    keys.dedup();
    keys.len()
}

fn kmeans_plus_plus(pts: &[[f64; 2]], k: usize, rng: &mut seed::Rng) -> Vec<[f64; 2]> {
    let mut centroids = Vec::with_capacity(k);
    centroids.push(pts[rng.random_range(0..pts.len())]);
    let mut d2: Vec<f64> = pts.iter().map(|&p| sq_dist(p, centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = None;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if d > 0.0 && acc > target {
                    chosen = Some(i);
                    break;
                }
            }
            // Rounding can leave the target just past the last positive weight.
            chosen.unwrap_or_else(|| d2.iter().rposition(|&d| d > 0.0).expect("positive mass"))
        } else {
            rng.random_range(0..pts.len())
        };
        let c = pts[pick];
        centroids.push(c);
        for (d, &p) in d2.iter_mut().zip(pts) {
            *d = d.min(sq_dist(p, c));
        }
    }
    centroids
}

/// Fit `k` clusters; returns the model and 1-based assignments.
pub fn kmeans_fit(
    points: &[GeoPoint],
    k: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
) -> Result<(ClusterModel, Vec<usize>), SpatialError> {
    if k == 0 {
        return Err(SpatialError::ZeroK);
    }
    for p in points {
        p.validate()?;
    }
    let distinct = distinct_count(points);
    if distinct < k {
        return Err(SpatialError::Degenerate { k, distinct });
    }

    let mean_lat = points.iter().map(|p| p.latitude).sum::<f64>() / points.len() as f64;
    let lon_scale = mean_lat.to_radians().cos();
    let pts: Vec<[f64; 2]> = points
        .iter()
        .map(|p| [p.longitude * lon_scale, p.latitude])
        .collect();

    let mut rng = seed::derived_rng(seed, "kmeans", 0);
    let mut centroids = kmeans_plus_plus(&pts, k, &mut rng);
    let mut assignment = vec![0usize; pts.len()];
    let mut history = Vec::new();
    let mut iterations = 0;

    let mut inertia = assign_all(&centroids, &pts, &mut assignment);
    history.push(inertia);
    while iterations < max_iter {
        iterations += 1;

        let mut sizes = vec![0usize; k];
        for &a in &assignment {
            sizes[a] += 1;
        }
        if sizes.contains(&0) {
            let mut taken = vec![false; pts.len()];
            for c in (0..k).filter(|&c| sizes[c] == 0) {
                let far = (0..pts.len())
                    .filter(|&i| !taken[i])
                    .map(|i| (i, sq_dist(pts[i], centroids[assignment[i]])))
                    .fold(None::<(usize, f64)>, |best, (i, d)| match best {
                        Some((_, bd)) if bd >= d => best,
                        _ => Some((i, d)),
                    })
                    .expect("more points than clusters");
                taken[far.0] = true;
                centroids[c] = pts[far.0];
            }
            inertia = assign_all(&centroids, &pts, &mut assignment);
            history.push(inertia);
        }

        let mut sums = vec![[0.0f64; 2]; k];
        let mut counts = vec![0usize; k];
        for (&a, &p) in assignment.iter().zip(&pts) {
            sums[a][0] += p[0];
            sums[a][1] += p[1];
            counts[a] += 1;
        }
        let mut shift: f64 = 0.0;
        for c in 0..k {
            if counts[c] > 0 {
                let next = [sums[c][0] / counts[c] as f64, sums[c][1] / counts[c] as f64];
                shift = shift.max(sq_dist(next, centroids[c]).sqrt());
                centroids[c] = next;
            }
        }

        let next = assign_all(&centroids, &pts, &mut assignment);
        debug_assert!(
            next <= inertia * (1.0 + 1e-12) + 1e-300,
            "inertia increased: {inertia} -> {next}"
        );
        inertia = next;
        history.push(inertia);
        if shift < tol {
            break;
        }
    }

    let model = ClusterModel {
        k,
        centroids,
        lon_scale,
        inertia,
        inertia_history: history,
        iterations,
    };
    Ok((model, assignment.into_iter().map(|a| a + 1).collect()))
}

/// Nearest centroid (1-based), ties to the lowest ID.
pub fn kmeans_assign(model: &ClusterModel, point: GeoPoint) -> usize {
    nearest(&model.centroids, model.project(point)).0 + 1
}
