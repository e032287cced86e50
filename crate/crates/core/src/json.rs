//! Fixed-precision number formatting for JSON reports: every `f64` is written
//! with 17 significant digits, which round-trips exactly.

use serde::ser::{SerializeSeq, Serializer};
use serde_json::value::RawValue;

fn raw(x: f64) -> Box<RawValue> {
    RawValue::from_string(format!("{x:.16e}")).expect("formatted float is valid JSON")
}

pub fn vec<S: Serializer>(values: &[f64], s: S) -> Result<S::Ok, S::Error> {
    let mut seq = s.serialize_seq(Some(values.len()))?;
    for &v in values {
        seq.serialize_element(&raw(v))?;
    }
    seq.end()
}

struct Row<'a>(&'a [f64]);

impl serde::Serialize for Row<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        vec(self.0, s)
    }
}

pub fn opt_matrix<S: Serializer>(m: &Option<Vec<Vec<f64>>>, s: S) -> Result<S::Ok, S::Error> {
    match m {
        None => s.serialize_none(),
        Some(rows) => {
            let mut seq = s.serialize_seq(Some(rows.len()))?;
            for r in rows {
                seq.serialize_element(&Row(r))?;
            }
            seq.end()
        }
    }
}
