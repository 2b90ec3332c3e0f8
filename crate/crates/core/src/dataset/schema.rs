use serde::{Deserialize, Serialize};

use super::DatasetError;

/// Lower-snake-case form used for column names and category labels.
///
/// Every run of non-alphanumeric characters collapses to a single `_`, so
/// `"Vehicle–Pedestrian"` becomes `vehicle_pedestrian` and `"AM/PM"` becomes
/// `am_pm`.
pub fn normalize_label(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut pending_sep = false;
    for ch in raw.trim().chars() {
        if ch.is_alphanumeric() {
            if pending_sep && !out.is_empty() {
                out.push('_');
            }
            pending_sep = false;
            out.extend(ch.to_lowercase());
        } else {
            pending_sep = true;
        }
    }
    out
}

/// A categorical attribute and its ordered domain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeSpec {
    name: String,
    domain: Vec<String>,
}

impl AttributeSpec {
    pub fn new<S: AsRef<str>>(name: &str, domain: &[S]) -> Result<Self, DatasetError> {
        let domain: Vec<String> = domain.iter().map(|s| normalize_label(s.as_ref())).collect();
        if domain.is_empty() {
            return Err(DatasetError::InvalidSchema(format!(
                "attribute {name:?} has an empty domain"
            )));
        }
        for (i, label) in domain.iter().enumerate() {
            if label.is_empty() || domain[..i].contains(label) {
                return Err(DatasetError::InvalidSchema(format!(
                    "attribute {name:?} has an empty or duplicate label {label:?}"
                )));
            }
        }
        Ok(Self {
            name: name.to_string(),
            domain,
        })
    }

    /// Integer range `lo..=hi` rendered as labels.
    pub fn numeric(name: &str, lo: u32, hi: u32) -> Result<Self, DatasetError> {
        let labels: Vec<String> = (lo..=hi).map(|v| v.to_string()).collect();
        Self::new(name, &labels)
    }

    /// Human-readable name, e.g. `Hour of Crash`.
    pub fn name(&self) -> &str {
        &self.name
    }

    /// CSV column name, e.g. `hour_of_crash`.
    pub fn column(&self) -> String {
        normalize_label(&self.name)
    }

    pub fn domain(&self) -> &[String] {
        &self.domain
    }

    pub fn len(&self) -> usize {
        self.domain.len()
    }

    pub fn is_empty(&self) -> bool {
        self.domain.is_empty()
    }

    /// Category index of a (raw or normalized) label.
    pub fn index_of(&self, label: &str) -> Option<u16> {
        let norm = normalize_label(label);
        self.domain
            .iter()
            .position(|d| *d == norm)
            .map(|i| i as u16)
    }

    pub fn label(&self, index: u16) -> &str {
        &self.domain[index as usize]
    }
}

pub const MONTH: &str = "Month";
pub const DAY: &str = "Day";
pub const DAY_OF_WEEK: &str = "Day of the Week";
pub const HOUR: &str = "Hour of Crash";
pub const AM_PM: &str = "AM/PM";
pub const CRASH_TYPE: &str = "Crash Type";
pub const INJURY_SEVERITY: &str = "Injury Severity Level";
pub const ROAD_TYPE: &str = "Road Type";
pub const SPATIAL_CLUSTER: &str = "Spatial Cluster ID";

pub const WEEKDAYS: [&str; 7] = [
    "Monday",
    "Tuesday",
    "Wednesday",
    "Thursday",
    "Friday",
    "Saturday",
    "Sunday",
];

pub const CRASH_TYPES: [&str; 11] = [
    "Vehicle–Vehicle",
    "Vehicle–Truck",
    "Vehicle–Pedestrian",
    "Vehicle–Motorcycle",
    "Vehicle–Barrier",
    "Truck–Truck",
    "Truck–Motorcycle",
    "Truck–Barrier",
    "Motorcycle–Motorcycle",
    "Motorcycle–Barrier",
    "Other",
];

pub const INJURY_LEVELS: [&str; 3] = ["No Apparent-Injury", "Minor Injury", "Serious Injury"];

pub const ROAD_TYPES: [&str; 6] = [
    "Motorway",
    "Trunk",
    "Primary",
    "Secondary",
    "Tertiary",
    "Unclassified",
];

/// Nine categorical inputs plus the binary fatality output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    inputs: Vec<AttributeSpec>,
    output: AttributeSpec,
}

impl Schema {
    pub fn new(inputs: Vec<AttributeSpec>) -> Result<Self, DatasetError> {
        if inputs.is_empty() {
            return Err(DatasetError::InvalidSchema("schema has no inputs".into()));
        }
        for (i, a) in inputs.iter().enumerate() {
            let col = a.column();
            let reserved = [LABEL_COLUMN, LAT_COLUMN, LON_COLUMN];
            if reserved.contains(&col.as_str()) || inputs[..i].iter().any(|b| b.column() == col) {
                return Err(DatasetError::InvalidSchema(format!(
                    "attribute name {:?} is duplicated or reserved",
                    a.name()
                )));
            }
        }
        Ok(Self {
            inputs,
            output: AttributeSpec::new("Fatality occurrence", &["Not Fatal", "Fatal"])?,
        })
    }

    /// The crash-record layout with the default ten spatial clusters.
    pub fn lrap() -> Self {
        Self::lrap_with_clusters(10)
    }

    /// The crash-record layout with `k` spatial clusters labelled `1..=k`.
    pub fn lrap_with_clusters(k: usize) -> Self {
        let k = k.max(1) as u32;
        let inputs = vec![
            AttributeSpec::numeric(MONTH, 1, 12),
            AttributeSpec::numeric(DAY, 1, 31),
            AttributeSpec::new(DAY_OF_WEEK, &WEEKDAYS),
            AttributeSpec::numeric(HOUR, 0, 23),
            AttributeSpec::new(AM_PM, &["am", "pm"]),
            AttributeSpec::new(CRASH_TYPE, &CRASH_TYPES),
            AttributeSpec::new(INJURY_SEVERITY, &INJURY_LEVELS),
            AttributeSpec::new(ROAD_TYPE, &ROAD_TYPES),
            AttributeSpec::numeric(SPATIAL_CLUSTER, 1, k),
        ]
        .into_iter()
        .collect::<Result<Vec<_>, _>>()
        .expect("built-in schema is valid");
        Self::new(inputs).expect("built-in schema is valid")
    }

    pub fn inputs(&self) -> &[AttributeSpec] {
        &self.inputs
    }

    pub fn output(&self) -> &AttributeSpec {
        &self.output
    }

    pub fn n_inputs(&self) -> usize {
        self.inputs.len()
    }

    /// Position of an attribute looked up by display name or column name.
    pub fn attribute_index(&self, name: &str) -> Option<usize> {
        let norm = normalize_label(name);
        self.inputs.iter().position(|a| a.column() == norm)
    }

    pub fn attribute(&self, name: &str) -> Option<&AttributeSpec> {
        self.attribute_index(name).map(|i| &self.inputs[i])
    }

    /// Sum of domain sizes: the width of the one-hot encoding.
    pub fn one_hot_width(&self) -> usize {
        self.inputs.iter().map(AttributeSpec::len).sum()
    }

    pub fn column_names(&self) -> Vec<String> {
        self.inputs.iter().map(AttributeSpec::column).collect()
    }
}

pub const LABEL_COLUMN: &str = "fatality";
pub const LAT_COLUMN: &str = "lat";
pub const LON_COLUMN: &str = "lon";

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization() {
        assert_eq!(normalize_label("Vehicle–Pedestrian"), "vehicle_pedestrian");
        assert_eq!(normalize_label("No Apparent-Injury"), "no_apparent_injury");
        assert_eq!(normalize_label(" AM/PM "), "am_pm");
        assert_eq!(normalize_label("Hour of Crash"), "hour_of_crash");
        assert_eq!(normalize_label("12"), "12");
    }

    #[test]
    fn lrap_widths() {
        let s = Schema::lrap();
        assert_eq!(s.n_inputs(), 9);
        let sizes: Vec<usize> = s.inputs().iter().map(AttributeSpec::len).collect();
        assert_eq!(sizes, vec![12, 31, 7, 24, 2, 11, 3, 6, 10]);
        assert_eq!(s.one_hot_width(), 106);
        assert_eq!(s.output().domain(), &["not_fatal", "fatal"]);
    }

    #[test]
    fn lookup_by_display_or_column_name() {
        let s = Schema::lrap();
        assert_eq!(s.attribute_index("Hour of Crash"), Some(3));
        assert_eq!(s.attribute_index("hour_of_crash"), Some(3));
        assert_eq!(s.attribute_index("Weather"), None);
        let ct = s.attribute(CRASH_TYPE).unwrap();
        assert_eq!(ct.index_of("Vehicle-Pedestrian"), Some(2));
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(AttributeSpec::new("x", &[] as &[&str]).is_err());
        assert!(AttributeSpec::new("x", &["a", "A"]).is_err());
        let a = AttributeSpec::new("x", &["a"]).unwrap();
        assert!(Schema::new(vec![a.clone(), a]).is_err());
        let f = AttributeSpec::new("Fatality", &["a"]).unwrap();
        assert!(Schema::new(vec![f]).is_err());
    }
}
