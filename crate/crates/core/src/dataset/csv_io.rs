use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use super::{
    normalize_label, Class, CrashRecord, Dataset, DatasetError, GeoPoint, Schema, LABEL_COLUMN,
    LAT_COLUMN, LON_COLUMN,
};

struct ColumnMap {
    inputs: Vec<usize>,
    label: usize,
    location: Option<(usize, usize)>,
    width: usize,
}

fn map_header(header: &csv::StringRecord, schema: &Schema) -> Result<ColumnMap, DatasetError> {
    let names: Vec<String> = header.iter().map(normalize_label).collect();
    let find = |col: &str| -> Result<Option<usize>, DatasetError> {
        let mut hits = names.iter().enumerate().filter(|(_, n)| *n == col);
        let first = hits.next().map(|(i, _)| i);
        if hits.next().is_some() {
            return Err(DatasetError::Header(format!("column {col:?} appears twice")));
        }
        Ok(first)
    };

    let mut inputs = Vec::with_capacity(schema.n_inputs());
    for spec in schema.inputs() {
        let col = spec.column();
        inputs.push(find(&col)?.ok_or_else(|| {
            DatasetError::Header(format!("missing column {col:?} ({})", spec.name()))
        })?);
    }
    let label = find(LABEL_COLUMN)?
        .ok_or_else(|| DatasetError::Header(format!("missing label column {LABEL_COLUMN:?}")))?;
    let location = match (find(LAT_COLUMN)?, find(LON_COLUMN)?) {
        (Some(lat), Some(lon)) => Some((lat, lon)),
        (None, None) => None,
        _ => {
            return Err(DatasetError::Header(
                "lat and lon columns must appear together".into(),
            ))
        }
    };
    let known = inputs.len() + 1 + if location.is_some() { 2 } else { 0 };
    if known != names.len() {
        let unknown: Vec<&str> = names
            .iter()
            .enumerate()
            .filter(|(i, _)| {
                !inputs.contains(i)
                    && *i != label
                    && location.is_none_or(|(a, b)| *i != a && *i != b)
            })
            .map(|(_, n)| n.as_str())
            .collect();
        return Err(DatasetError::Header(format!("unknown columns {unknown:?}")));
    }
    Ok(ColumnMap {
        inputs,
        label,
        location,
        width: names.len(),
    })
}

fn parse_location(lat: &str, lon: &str, line: u64) -> Result<Option<GeoPoint>, DatasetError> {
    let (lat, lon) = (lat.trim(), lon.trim());
    if lat.is_empty() && lon.is_empty() {
        return Ok(None);
    }
    let num = |s: &str, what: &str| {
        s.parse::<f64>().map_err(|_| DatasetError::Parse {
            line,
            message: format!("{what} {s:?} is not a number"),
        })
    };
    let point = GeoPoint::new(num(lat, "latitude")?, num(lon, "longitude")?).map_err(|e| {
        DatasetError::Parse {
            line,
            message: e.to_string(),
        }
    })?;
    Ok(Some(point))
}

/// Read a header-first CSV into a [`Dataset`]; row order is preserved.
pub fn parse_csv<R: Read>(reader: R, schema: Arc<Schema>) -> Result<Dataset, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let map = map_header(rdr.headers()?, &schema)?;

    let mut rows = Vec::new();
    let mut record = csv::StringRecord::new();
    while rdr.read_record(&mut record)? {
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != map.width {
            return Err(DatasetError::Parse {
                line,
                message: format!("expected {} columns, found {}", map.width, record.len()),
            });
        }
        let mut values = Vec::with_capacity(schema.n_inputs());
        for (spec, &col) in schema.inputs().iter().zip(&map.inputs) {
            let raw = &record[col];
            values.push(spec.index_of(raw).ok_or_else(|| DatasetError::Domain {
                attribute: spec.name().to_string(),
                value: raw.to_string(),
                line: Some(line),
            })?);
        }
        let label = Class::parse(&record[map.label]).ok_or_else(|| DatasetError::Domain {
            attribute: LABEL_COLUMN.to_string(),
            value: record[map.label].to_string(),
            line: Some(line),
        })?;
        let location = match map.location {
            Some((lat, lon)) => parse_location(&record[lat], &record[lon], line)?,
            None => None,
        };
        rows.push(CrashRecord {
            values,
            label,
            location,
        });
    }
    Ok(Dataset::from_trusted(schema, rows))
}

pub fn read_csv_file(path: &Path, schema: Arc<Schema>) -> Result<Dataset, DatasetError> {
    parse_csv(BufReader::new(File::open(path)?), schema)
}

/// Write in the same layout [`parse_csv`] reads. `lat`/`lon` columns are
/// emitted when any row carries a location.
pub fn write_csv<W: Write>(dataset: &Dataset, writer: W) -> Result<(), DatasetError> {
    let schema = dataset.schema();
    let with_location = dataset.rows().iter().any(|r| r.location.is_some());
    let mut wtr = csv::WriterBuilder::new().from_writer(writer);

    let mut header = schema.column_names();
    header.push(LABEL_COLUMN.to_string());
    if with_location {
        header.push(LAT_COLUMN.to_string());
        header.push(LON_COLUMN.to_string());
    }
    wtr.write_record(&header)?;

    let mut fields: Vec<String> = Vec::with_capacity(header.len());
    for row in dataset.rows() {
        fields.clear();
        fields.extend(
            row.values
                .iter()
                .zip(schema.inputs())
                .map(|(&v, spec)| spec.label(v).to_string()),
        );
        fields.push(row.label.label().to_string());
        if with_location {
            match row.location {
                Some(p) => {
                    fields.push(p.latitude.to_string());
                    fields.push(p.longitude.to_string());
                }
                None => {
                    fields.push(String::new());
                    fields.push(String::new());
                }
            }
        }
        wtr.write_record(&fields)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_csv_file(dataset: &Dataset, path: &Path) -> Result<(), DatasetError> {
    let mut out = BufWriter::new(File::create(path)?);
    write_csv(dataset, &mut out)?;
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "month,day,day_of_the_week,hour_of_crash,am_pm,crash_type,injury_severity_level,road_type,spatial_cluster_id,fatality";

    fn parse(text: &str) -> Result<Dataset, DatasetError> {
        parse_csv(text.as_bytes(), Arc::new(Schema::lrap()))
    }

    #[test]
    fn single_valid_row() {
        let text = format!("{HEADER}\n3,14,Friday,3,am,Vehicle–Pedestrian,Serious Injury,Motorway,4,Fatal\n");
        let ds = parse(&text).unwrap();
        assert_eq!(ds.len(), 1);
        let row = &ds.rows()[0];
        assert_eq!(row.label, Class::Fatal);
        assert_eq!(row.value_label(ds.schema(), 5), "vehicle_pedestrian");
        assert_eq!(row.location, None);
    }

    #[test]
    fn hour_out_of_range_names_attribute_and_line() {
        let text = format!("{HEADER}\n3,14,friday,3,am,other,minor_injury,primary,4,not_fatal\n3,14,friday,25,am,other,minor_injury,primary,4,not_fatal\n");
        match parse(&text).unwrap_err() {
            DatasetError::Domain {
                attribute,
                value,
                line,
            } => {
                assert_eq!(attribute, "Hour of Crash");
                assert_eq!(value, "25");
                assert_eq!(line, Some(3));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn wrong_column_count_reports_line() {
        let text = format!("{HEADER}\n3,14,friday,3,am,other,minor_injury,primary\n");
        match parse(&text).unwrap_err() {
            DatasetError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn header_accepts_display_names_and_location() {
        let text = "Month,Day,Day of the Week,Hour of Crash,AM/PM,Crash Type,Injury Severity Level,Road Type,Spatial Cluster ID,fatality,lat,lon\n1,1,monday,0,am,other,minor_injury,trunk,1,NOT_FATAL,33.9,35.5\n1,2,monday,0,am,other,minor_injury,trunk,1,fatal,,\n";
        let ds = parse(text).unwrap();
        assert_eq!(ds.rows()[0].location, Some(GeoPoint::new(33.9, 35.5).unwrap()));
        assert_eq!(ds.rows()[1].location, None);
    }

    #[test]
    fn header_errors() {
        assert!(matches!(
            parse("month,fatality\n").unwrap_err(),
            DatasetError::Header(_)
        ));
        let extra = format!("{HEADER},weather\n");
        assert!(matches!(parse(&extra).unwrap_err(), DatasetError::Header(_)));
        let lat_only = format!("{HEADER},lat\n");
        assert!(matches!(parse(&lat_only).unwrap_err(), DatasetError::Header(_)));
    }

    #[test]
    fn bad_label_and_location() {
        let text = format!("{HEADER}\n3,14,friday,3,am,other,minor_injury,primary,4,dead\n");
        assert!(matches!(parse(&text).unwrap_err(), DatasetError::Domain { .. }));
        let text = format!("{HEADER},lat,lon\n3,14,friday,3,am,other,minor_injury,primary,4,fatal,95,35\n");
        assert!(matches!(parse(&text).unwrap_err(), DatasetError::Parse { line: 2, .. }));
    }

    #[test]
    fn write_then_parse_is_identity() {
        let text = format!("{HEADER},lat,lon\n3,14,friday,3,am,other,minor_injury,primary,4,fatal,33.12345,35.5\n12,31,sunday,23,pm,truck_truck,serious_injury,motorway,10,not_fatal,,\n");
        let ds = parse(&text).unwrap();
        let mut buf = Vec::new();
        write_csv(&ds, &mut buf).unwrap();
        let back = parse_csv(buf.as_slice(), Arc::new(Schema::lrap())).unwrap();
        assert_eq!(back, ds);
        assert_eq!(String::from_utf8(buf).unwrap(), text);
    }
}
