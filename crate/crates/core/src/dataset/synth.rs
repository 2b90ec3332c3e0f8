//! Deterministic synthetic crash data shaped like the real crash-record layout.
//!
//! Attributes are drawn from fixed marginals; the label is then assigned to
//! exactly `round(rate * n)` rows by a weighted race in which each row's weight
//! is the product of the odds multipliers of the planted effects it matches.

use std::str::FromStr;
use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng as _;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use super::{
    schema::*, Class, CrashRecord, Dataset, DatasetError, GeoPoint, Schema,
};
use crate::seed;

const DAYS_IN_MONTH: [u16; 12] = [31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31];
const HOUR_WEIGHTS: [f64; 24] = [
    2.0, 1.5, 1.2, 1.0, 1.0, 1.2, 2.0, 3.0, 4.0, 4.0, 4.0, 4.0, 4.0, 4.0, 4.0, 4.0, 4.5, 5.0, 5.0,
    4.5, 4.0, 3.5, 3.0, 2.5,
];
const CRASH_TYPE_WEIGHTS: [f64; 11] = [30.0, 8.0, 10.0, 12.0, 8.0, 2.0, 2.0, 2.0, 2.0, 4.0, 10.0];
const INJURY_WEIGHTS: [f64; 3] = [35.0, 45.0, 20.0];
const ROAD_WEIGHTS: [f64; 6] = [15.0, 15.0, 25.0, 20.0, 15.0, 10.0];

// Rough bounding box of Lebanon.
const LAT_RANGE: (f64, f64) = (33.10, 34.60);
const LON_RANGE: (f64, f64) = (35.15, 36.40);
const BLOB_SPREAD_DEG: f64 = 0.02;

/// Multiplies the fatality odds of rows whose `attribute` equals `category`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedEffect {
    pub attribute: String,
    pub category: String,
    pub odds_multiplier: f64,
}

impl FromStr for PlantedEffect {
    type Err = String;

    /// `attribute=category:multiplier`, e.g. `crash_type=vehicle_pedestrian:8`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (attribute, rest) = s
            .split_once('=')
            .ok_or_else(|| format!("expected attribute=category:multiplier, got {s:?}"))?;
        let (category, mult) = rest
            .rsplit_once(':')
            .ok_or_else(|| format!("expected attribute=category:multiplier, got {s:?}"))?;
        let odds_multiplier: f64 = mult
            .parse()
            .map_err(|_| format!("bad multiplier {mult:?}"))?;
        Ok(Self {
            attribute: attribute.trim().to_string(),
            category: category.trim().to_string(),
            odds_multiplier,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DependencyPlan {
    pub effects: Vec<PlantedEffect>,
}

impl DependencyPlan {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn with(mut self, attribute: &str, category: &str, odds_multiplier: f64) -> Self {
        self.effects.push(PlantedEffect {
            attribute: attribute.to_string(),
            category: category.to_string(),
            odds_multiplier,
        });
        self
    }

    /// Effects on seven of the nine inputs; Month and Day stay independent of
    /// the label. Cluster effects are only planted for clusters that exist.
    pub fn lrap_like(clusters: usize) -> Self {
        let mut plan = Self::none()
            .with(CRASH_TYPE, "vehicle_pedestrian", 8.0)
            .with(CRASH_TYPE, "truck_motorcycle", 5.0)
            .with(CRASH_TYPE, "motorcycle_barrier", 2.0)
            .with(INJURY_SEVERITY, "serious_injury", 6.0)
            .with(INJURY_SEVERITY, "minor_injury", 1.8)
            .with(HOUR, "3", 5.0)
            .with(DAY_OF_WEEK, "friday", 1.6)
            .with(DAY_OF_WEEK, "sunday", 1.6)
            .with(ROAD_TYPE, "motorway", 2.5);
        for hour in ["1", "2", "4", "5"] {
            plan = plan.with(HOUR, hour, 2.5);
        }
        for (cluster, mult) in [(3, 4.0), (7, 3.0), (9, 0.5)] {
            if cluster <= clusters {
                plan = plan.with(SPATIAL_CLUSTER, &cluster.to_string(), mult);
            }
        }
        plan
    }

    /// Resolve to `(attribute index, category index, multiplier)` triples.
    fn resolve(&self, schema: &Schema) -> Result<Vec<(usize, u16, f64)>, DatasetError> {
        self.effects
            .iter()
            .map(|e| {
                let a = schema.attribute_index(&e.attribute).ok_or_else(|| {
                    DatasetError::InvalidSchema(format!("unknown attribute {:?}", e.attribute))
                })?;
                let spec = &schema.inputs()[a];
                let c = spec.index_of(&e.category).ok_or_else(|| DatasetError::Domain {
                    attribute: spec.name().to_string(),
                    value: e.category.clone(),
                    line: None,
                })?;
                if !(e.odds_multiplier.is_finite() && e.odds_multiplier > 0.0) {
                    return Err(DatasetError::InvalidSchema(format!(
                        "odds multiplier {} must be positive",
                        e.odds_multiplier
                    )));
                }
                Ok((a, c, e.odds_multiplier))
            })
            .collect()
    }
}

/// Synthetic data generator configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Synthesizer {
    pub n: usize,
    pub fatality_rate: f64,
    pub plan: DependencyPlan,
    /// Number of spatial blobs, and the size of the Spatial Cluster ID domain.
    pub clusters: usize,
}

impl Synthesizer {
    pub fn new(n: usize, fatality_rate: f64, plan: DependencyPlan) -> Self {
        Self {
            n,
            fatality_rate,
            plan,
            clusters: 10,
        }
    }

    pub fn clusters(mut self, clusters: usize) -> Self {
        self.clusters = clusters;
        self
    }

    pub fn generate(&self, seed: u64) -> Result<Dataset, DatasetError> {
        let n = self.n;
        if n < 2 {
            return Err(DatasetError::DegenerateClass(format!("n = {n} is below 2")));
        }
        if !(self.fatality_rate > 0.0 && self.fatality_rate < 1.0) {
            return Err(DatasetError::DegenerateClass(format!(
                "fatality rate {} is outside (0, 1)",
                self.fatality_rate
            )));
        }
        let expected = self.fatality_rate * n as f64;
        let n_fatal = (expected + 0.5).floor() as usize;
        if expected < 1.0 || n_fatal >= n {
            return Err(DatasetError::DegenerateClass(format!(
                "rate {} over n = {n} leaves a class empty",
                self.fatality_rate
            )));
        }
        if self.clusters == 0 {
            return Err(DatasetError::InvalidSchema("at least one cluster is required".into()));
        }

        let schema = Arc::new(Schema::lrap_with_clusters(self.clusters));
        let effects = self.plan.resolve(&schema)?;
        let blobs = blob_centers(self.clusters, seed);
        let blob_weights: Vec<f64> = (0..self.clusters)
            .map(|b| 1.0 + ((b * 7) % 5) as f64)
            .collect();
        let dists = Marginals::new(&blob_weights);

        let mut rows = Vec::with_capacity(n);
        let mut keys = Vec::with_capacity(n);
        for i in 0..n {
            let mut rng = seed::derived_rng(seed, "synth-row", i as u64);
            let (values, blob) = dists.draw(&mut rng);
            let (clat, clon) = blobs[blob];
            let spread = Normal::new(0.0, BLOB_SPREAD_DEG).expect("positive spread");
            let lat = round5(clat + spread.sample(&mut rng));
            let lon = round5(clon + spread.sample(&mut rng));
            let odds: f64 = effects
                .iter()
                .filter(|(a, c, _)| values[*a] == *c)
                .map(|(_, _, m)| m)
                .product();
            // Exponential race: the n_fatal smallest Exp(odds) draws are fatal.
            let u: f64 = 1.0 - rng.random::<f64>();
            keys.push((-u.ln() / odds, i));
            rows.push(CrashRecord {
                values,
                label: Class::NotFatal,
                location: Some(GeoPoint { latitude: lat, longitude: lon }),
            });
        }
        keys.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, i) in &keys[..n_fatal] {
            rows[i].label = Class::Fatal;
        }
        Dataset::new(schema, rows)
    }
}

/// Synthetic dataset with the default ten spatial blobs.
pub fn generate_synthetic(
    n: usize,
    fatality_rate: f64,
    plan: &DependencyPlan,
    seed: u64,
) -> Result<Dataset, DatasetError> {
    Synthesizer::new(n, fatality_rate, plan.clone()).generate(seed)
}

fn round5(x: f64) -> f64 {
    (x * 1e5).round() / 1e5
}

fn blob_centers(k: usize, seed: u64) -> Vec<(f64, f64)> {
    let mut rng = seed::derived_rng(seed, "synth-blobs", 0);
    (0..k)
        .map(|_| {
            (
                rng.random_range(LAT_RANGE.0..LAT_RANGE.1),
                rng.random_range(LON_RANGE.0..LON_RANGE.1),
            )
        })
        .collect()
}

struct Marginals {
    hour: WeightedIndex<f64>,
    crash_type: WeightedIndex<f64>,
    injury: WeightedIndex<f64>,
    road: WeightedIndex<f64>,
    blob: WeightedIndex<f64>,
}

impl Marginals {
    fn new(blob_weights: &[f64]) -> Self {
        let w = |ws: &[f64]| WeightedIndex::new(ws.iter().copied()).expect("valid weights");
        Self {
            hour: w(&HOUR_WEIGHTS),
            crash_type: w(&CRASH_TYPE_WEIGHTS),
            injury: w(&INJURY_WEIGHTS),
            road: w(&ROAD_WEIGHTS),
            blob: w(blob_weights),
        }
    }

    /// Values in schema order, plus the blob index (cluster value).
    fn draw(&self, rng: &mut seed::Rng) -> (Vec<u16>, usize) {
        let month = rng.random_range(0..12u16);
        let day = rng.random_range(0..DAYS_IN_MONTH[month as usize]);
        let weekday = rng.random_range(0..7u16);
        let hour = self.hour.sample(rng) as u16;
        let am_pm = u16::from(hour >= 12);
        let crash_type = self.crash_type.sample(rng) as u16;
        let injury = self.injury.sample(rng) as u16;
        let road = self.road.sample(rng) as u16;
        let blob = self.blob.sample(rng);
        (
            vec![
                month, day, weekday, hour, am_pm, crash_type, injury, road, blob as u16,
            ],
            blob,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_size_fatal_count() {
        let ds = generate_synthetic(8482, 0.05, &DependencyPlan::none(), 7).unwrap();
        assert_eq!(ds.len(), 8482);
        let fatal = ds.class_counts()[1];
        assert!((423..=425).contains(&fatal), "{fatal}");
    }

    #[test]
    fn balanced_small_case() {
        let ds = generate_synthetic(20, 0.5, &DependencyPlan::none(), 1).unwrap();
        assert_eq!(ds.class_counts(), [10, 10]);
    }

    #[test]
    fn planted_effect_raises_conditional_rate() {
        let plan = DependencyPlan::none().with(CRASH_TYPE, "Vehicle–Pedestrian", 8.0);
        let ds = generate_synthetic(5000, 0.05, &plan, 3).unwrap();
        let vp = ds.schema().attribute(CRASH_TYPE).unwrap().index_of("vehicle_pedestrian").unwrap();
        let a = ds.schema().attribute_index(CRASH_TYPE).unwrap();
        let (mut hit, mut tot) = (0usize, 0usize);
        for r in ds.rows().iter().filter(|r| r.values[a] == vp) {
            tot += 1;
            hit += usize::from(r.label == Class::Fatal);
        }
        let global = ds.class_counts()[1] as f64 / ds.len() as f64;
        assert!(hit as f64 / tot as f64 > global);
    }

    #[test]
    fn determinism_and_consistency() {
        let plan = DependencyPlan::lrap_like(10);
        let a = generate_synthetic(500, 0.1, &plan, 9).unwrap();
        let b = generate_synthetic(500, 0.1, &plan, 9).unwrap();
        assert_eq!(a, b);
        let hour = a.schema().attribute_index(HOUR).unwrap();
        let ampm = a.schema().attribute_index(AM_PM).unwrap();
        let cluster = a.schema().attribute_index(SPATIAL_CLUSTER).unwrap();
        for r in a.rows() {
            assert_eq!(r.values[ampm], u16::from(r.values[hour] >= 12));
            assert!(r.values[cluster] < 10);
            assert!(r.location.is_some());
        }
    }

    #[test]
    fn degenerate_rates() {
        let p = DependencyPlan::none();
        assert!(matches!(
            generate_synthetic(10, 0.05, &p, 0),
            Err(DatasetError::DegenerateClass(_))
        ));
        assert!(generate_synthetic(1, 0.5, &p, 0).is_err());
        assert!(generate_synthetic(10, 0.99, &p, 0).is_err());
        let bad = DependencyPlan::none().with("Weather", "rain", 2.0);
        assert!(generate_synthetic(100, 0.1, &bad, 0).is_err());
    }

    #[test]
    fn effect_parsing() {
        let e: PlantedEffect = "crash_type=vehicle_pedestrian:8".parse().unwrap();
        assert_eq!(e.attribute, "crash_type");
        assert_eq!(e.category, "vehicle_pedestrian");
        assert_eq!(e.odds_multiplier, 8.0);
        assert!("crash_type".parse::<PlantedEffect>().is_err());
        assert!("a=b:x".parse::<PlantedEffect>().is_err());
    }
}
