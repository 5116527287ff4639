use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, Schema};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UnknownPolicy {
    #[default]
    Reject,
    DropRow,
}

/// How raw CSV cells become category indices.
///
/// Attributes without an entry in `value_maps` are read as pre-encoded
/// integer indices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestConfig {
    pub delimiter: u8,
    pub header: bool,
    pub value_maps: BTreeMap<String, BTreeMap<String, u32>>,
    pub unknown_policy: UnknownPolicy,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            delimiter: b',',
            header: true,
            value_maps: BTreeMap::new(),
            unknown_policy: UnknownPolicy::Reject,
        }
    }
}

impl IngestConfig {
    /// Value maps taken from the schema's attribute labels.
    pub fn from_schema(schema: &Schema) -> Self {
        let value_maps = schema
            .attributes()
            .iter()
            .filter_map(|a| {
                a.values.as_ref().map(|vals| {
                    let map = vals
                        .iter()
                        .enumerate()
                        .map(|(i, v)| (v.clone(), i as u32))
                        .collect();
                    (a.name.clone(), map)
                })
            })
            .collect();
        IngestConfig {
            value_maps,
            ..IngestConfig::default()
        }
    }

    fn check(&self, schema: &Schema) -> Result<()> {
        for (name, map) in &self.value_maps {
            let idx = schema.require_index(name)?;
            let card = schema.attributes()[idx].cardinality;
            if let Some((raw, &v)) = map.iter().find(|(_, &v)| v >= card) {
                return Err(Error::InvalidConfig(format!(
                    "value map for {name:?} sends {raw:?} to {v}, beyond cardinality {card}"
                )));
            }
        }
        Ok(())
    }
}

pub fn ingest_csv(path: &Path, schema: &Schema, cfg: &IngestConfig) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    ingest_reader(file, schema, cfg)
}

/// Reads records in file order, mapping each schema attribute's column
/// through its value map (or as an integer index).
pub fn ingest_reader<R: Read>(reader: R, schema: &Schema, cfg: &IngestConfig) -> Result<Dataset> {
    cfg.check(schema)?;
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(cfg.delimiter)
        .has_headers(cfg.header)
        .flexible(true)
        .from_reader(reader);

    let columns: Vec<usize> = if cfg.header {
        let headers = rdr.headers()?.clone();
        schema
            .attributes()
            .iter()
            .map(|a| {
                headers.iter().position(|h| h.trim() == a.name).ok_or_else(|| {
                    Error::SchemaMismatch(format!("missing column {:?}", a.name))
                })
            })
            .collect::<Result<_>>()?
    } else {
        (0..schema.len()).collect()
    };
    let maps: Vec<Option<&BTreeMap<String, u32>>> = schema
        .attributes()
        .iter()
        .map(|a| cfg.value_maps.get(&a.name))
        .collect();

    let mut data = Vec::new();
    let mut row_buf = Vec::with_capacity(schema.len());
    // rows are numbered from 1 counting data rows only
    'rows: for (row_idx, rec) in rdr.records().enumerate() {
        let rec = rec?;
        row_buf.clear();
        for (attr_idx, &col) in columns.iter().enumerate() {
            let attr = &schema.attributes()[attr_idx];
            let Some(raw) = rec.get(col) else {
                return Err(Error::SchemaMismatch(format!(
                    "row {} has {} fields, needs column {}",
                    row_idx + 1,
                    rec.len(),
                    col + 1
                )));
            };
            let raw = raw.trim();
            let value = match maps[attr_idx] {
                Some(map) => map.get(raw).copied(),
                None => raw.parse::<u32>().ok().filter(|&v| v < attr.cardinality),
            };
            match (value, cfg.unknown_policy) {
                (Some(v), _) => row_buf.push(v),
                (None, UnknownPolicy::DropRow) => continue 'rows,
                (None, UnknownPolicy::Reject) => {
                    return Err(Error::UnmappedValue {
                        row: row_idx + 1,
                        column: attr.name.clone(),
                        raw: raw.to_string(),
                    })
                }
            }
        }
        data.extend_from_slice(&row_buf);
    }
    Dataset::from_flat(schema.clone(), data)
}

/// Writes a dataset with a header row, using attribute labels when the schema
/// carries them and integer indices otherwise.
pub fn write_csv(d: &Dataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    let attrs = d.schema().attributes();
    w.write_record(attrs.iter().map(|a| a.name.as_str()))?;
    let mut fields: Vec<String> = Vec::with_capacity(attrs.len());
    for r in d.records() {
        fields.clear();
        for (a, &v) in attrs.iter().zip(r) {
            fields.push(match &a.values {
                Some(vals) => vals[v as usize].clone(),
                None => v.to_string(),
            });
        }
        w.write_record(&fields)?;
    }
    let mut inner = w
        .into_inner()
        .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
    inner.flush().map_err(|e| Error::io(path, e))
}
