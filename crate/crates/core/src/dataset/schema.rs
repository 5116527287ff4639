use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// One categorical attribute. `values`, when present, lists the raw labels of
/// categories `0..cardinality` in order and drives CSV encoding.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    pub cardinality: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<String>>,
}

impl Attribute {
    pub fn new(name: impl Into<String>, cardinality: u32) -> Self {
        Attribute {
            name: name.into(),
            cardinality,
            values: None,
        }
    }

    pub fn with_values(name: impl Into<String>, values: Vec<String>) -> Self {
        Attribute {
            name: name.into(),
            cardinality: values.len() as u32,
            values: Some(values),
        }
    }
}

/// Ordered list of categorical attributes defining the record space.
///
/// Cells are indexed row-major in declaration order: the last attribute varies
/// fastest.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Attribute>", into = "Vec<Attribute>")]
pub struct Schema {
    attributes: Vec<Attribute>,
    strides: Vec<usize>,
    total_cells: usize,
}

impl Schema {
    pub fn new(attributes: Vec<Attribute>) -> Result<Self> {
        if attributes.is_empty() {
            return Err(Error::InvalidSchema("schema has no attributes".into()));
        }
        for (i, a) in attributes.iter().enumerate() {
            if a.cardinality < 2 {
                return Err(Error::InvalidSchema(format!(
                    "attribute {:?} has cardinality {} (< 2)",
                    a.name, a.cardinality
                )));
            }
            if let Some(values) = &a.values {
                if values.len() != a.cardinality as usize {
                    return Err(Error::InvalidSchema(format!(
                        "attribute {:?} lists {} values but cardinality {}",
                        a.name,
                        values.len(),
                        a.cardinality
                    )));
                }
                let mut sorted: Vec<&String> = values.iter().collect();
                sorted.sort();
                if sorted.windows(2).any(|w| w[0] == w[1]) {
                    return Err(Error::InvalidSchema(format!(
                        "attribute {:?} has duplicate value labels",
                        a.name
                    )));
                }
            }
            if attributes[..i].iter().any(|b| b.name == a.name) {
                return Err(Error::InvalidSchema(format!(
                    "duplicate attribute name {:?}",
                    a.name
                )));
            }
        }
        let mut strides = vec![0usize; attributes.len()];
        let mut total: usize = 1;
        for (i, a) in attributes.iter().enumerate().rev() {
            strides[i] = total;
            total = total.checked_mul(a.cardinality as usize).ok_or_else(|| {
                Error::InvalidSchema("number of cells overflows usize".into())
            })?;
        }
        Ok(Schema {
            attributes,
            strides,
            total_cells: total,
        })
    }

    /// Schema with attributes named `x0, x1, ...`.
    pub fn from_cardinalities(cards: &[u32]) -> Result<Self> {
        Schema::new(
            cards
                .iter()
                .enumerate()
                .map(|(i, &c)| Attribute::new(format!("x{i}"), c))
                .collect(),
        )
    }

    pub fn attributes(&self) -> &[Attribute] {
        &self.attributes
    }

    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    pub fn total_cells(&self) -> usize {
        self.total_cells
    }

    pub fn cardinalities(&self) -> Vec<u32> {
        self.attributes.iter().map(|a| a.cardinality).collect()
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a.name == name)
    }

    pub fn require_index(&self, name: &str) -> Result<usize> {
        self.index_of(name)
            .ok_or_else(|| Error::SchemaMismatch(format!("unknown attribute {name:?}")))
    }

    /// Errors with `domain-too-large` when the dense cell space exceeds `cap`.
    pub fn check_cap(&self, cap: usize) -> Result<()> {
        if self.total_cells > cap {
            return Err(Error::DomainTooLarge {
                cells: self.total_cells,
                cap,
            });
        }
        Ok(())
    }

    pub fn cell_index(&self, record: &[u32]) -> usize {
        debug_assert_eq!(record.len(), self.attributes.len());
        record
            .iter()
            .zip(&self.strides)
            .map(|(&v, &s)| v as usize * s)
            .sum()
    }

    pub fn decode_cell(&self, mut cell: usize, out: &mut [u32]) {
        for (i, &s) in self.strides.iter().enumerate() {
            out[i] = (cell / s) as u32;
            cell %= s;
        }
    }

    pub fn cell_of(&self, cell: usize) -> Vec<u32> {
        let mut out = vec![0; self.attributes.len()];
        self.decode_cell(cell, &mut out);
        out
    }

    /// Hex digest of attribute names and cardinalities (labels excluded).
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for a in &self.attributes {
            h.update((a.name.len() as u64).to_le_bytes());
            h.update(a.name.as_bytes());
            h.update(a.cardinality.to_le_bytes());
        }
        hex::encode(&h.finalize()[..16])
    }

    /// Same names and cardinalities.
    pub fn compatible(&self, other: &Schema) -> bool {
        self.attributes.len() == other.attributes.len()
            && self
                .attributes
                .iter()
                .zip(&other.attributes)
                .all(|(a, b)| a.name == b.name && a.cardinality == b.cardinality)
    }

    pub fn require_compatible(&self, other: &Schema) -> Result<()> {
        if self.compatible(other) {
            Ok(())
        } else {
            Err(Error::SchemaMismatch(format!(
                "schemas differ ({} vs {})",
                self.fingerprint(),
                other.fingerprint()
            )))
        }
    }
}

impl TryFrom<Vec<Attribute>> for Schema {
    type Error = Error;

    fn try_from(value: Vec<Attribute>) -> Result<Self> {
        Schema::new(value)
    }
}

impl From<Schema> for Vec<Attribute> {
    fn from(s: Schema) -> Self {
        s.attributes
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_major_indexing() {
        let s = Schema::from_cardinalities(&[2, 3, 2]).unwrap();
        assert_eq!(s.total_cells(), 12);
        assert_eq!(s.strides(), &[6, 2, 1]);
        assert_eq!(s.cell_index(&[1, 2, 1]), 11);
        assert_eq!(s.cell_index(&[0, 1, 0]), 2);
        for i in 0..12 {
            assert_eq!(s.cell_index(&s.cell_of(i)), i);
        }
    }

    #[test]
    fn rejects_bad_schemas() {
        assert!(Schema::from_cardinalities(&[2, 1]).is_err());
        assert!(Schema::from_cardinalities(&[]).is_err());
        let dup = vec![Attribute::new("a", 2), Attribute::new("a", 3)];
        assert_eq!(Schema::new(dup).unwrap_err().code(), "invalid-schema");
        let labels = vec![Attribute {
            name: "a".into(),
            cardinality: 3,
            values: Some(vec!["x".into(), "y".into()]),
        }];
        assert!(Schema::new(labels).is_err());
    }

    #[test]
    fn fingerprint_ignores_labels_but_not_names() {
        let a = Schema::new(vec![Attribute::new("sex", 2)]).unwrap();
        let b = Schema::new(vec![Attribute::with_values("sex", vec!["F".into(), "M".into()])])
            .unwrap();
        let c = Schema::new(vec![Attribute::new("gender", 2)]).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn json_is_attribute_list() {
        let s: Schema = serde_json::from_str(
            r#"[{"name":"a","cardinality":2},{"name":"b","cardinality":3,"values":["p","q","r"]}]"#,
        )
        .unwrap();
        assert_eq!(s.total_cells(), 6);
        let back: Schema = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(back, s);
        assert!(serde_json::from_str::<Schema>(r#"[{"name":"a","cardinality":1}]"#).is_err());
    }

    #[test]
    fn cap_check() {
        let s = Schema::from_cardinalities(&[10, 10, 10]).unwrap();
        assert!(s.check_cap(1000).is_ok());
        assert_eq!(s.check_cap(999).unwrap_err().code(), "domain-too-large");
    }
}
