use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::{Column, ColumnKind, ColumnTable, Schema, TableView};
use crate::error::{Error, Result};

pub fn read_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<ColumnTable> {
    read_csv_from(File::open(path)?, schema)
}

/// Parse CSV text against a schema. Empty fields are missing cells.
pub fn read_csv_from<R: Read>(reader: R, schema: &Schema) -> Result<ColumnTable> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut positions = Vec::with_capacity(schema.columns.len());
    for spec in &schema.columns {
        let pos = headers.iter().position(|h| h.trim() == spec.name).ok_or_else(|| Error::Parse {
            row: 0,
            column: spec.name.clone(),
            message: "column declared in schema is absent from header".into(),
        })?;
        positions.push(pos);
    }
    if let Some(extra) = headers.iter().find(|h| schema.get(h.trim()).is_none()) {
        return Err(Error::Parse {
            row: 0,
            column: extra.to_string(),
            message: "header column is not declared in schema".into(),
        });
    }

    let mut values: Vec<Vec<f64>> = vec![Vec::new(); schema.columns.len()];
    let mut masks: Vec<Vec<bool>> = vec![Vec::new(); schema.columns.len()];
    for (i, rec) in rdr.records().enumerate() {
        // data rows are numbered from 1, the header is row 0
        let row = i + 1;
        let rec = rec.map_err(|e| Error::Parse { row, column: String::new(), message: e.to_string() })?;
        if rec.len() != headers.len() {
            return Err(Error::Parse {
                row,
                column: String::new(),
                message: format!("expected {} fields, found {}", headers.len(), rec.len()),
            });
        }
        for (j, spec) in schema.columns.iter().enumerate() {
            let field = rec[positions[j]].trim();
            if field.is_empty() {
                values[j].push(0.0);
                masks[j].push(false);
                continue;
            }
            let err = |message: String| Error::Parse { row, column: spec.name.clone(), message };
            let v = match &spec.kind {
                ColumnKind::Continuous => {
                    let v: f64 = field.parse().map_err(|_| err(format!("`{field}` is not a number")))?;
                    if !v.is_finite() {
                        return Err(err(format!("`{field}` is not finite")));
                    }
                    v
                }
                ColumnKind::Binary => match field.parse::<f64>() {
                    Ok(v) if v == 0.0 || v == 1.0 => v,
                    _ => return Err(err(format!("`{field}` is not 0 or 1"))),
                },
                ColumnKind::Categorical { levels, .. } => match levels.iter().position(|l| l == field) {
                    Some(k) => k as f64,
                    None => return Err(err(format!("unknown level `{field}`"))),
                },
            };
            values[j].push(v);
            masks[j].push(true);
        }
    }
    let columns = schema
        .columns
        .iter()
        .zip(values.into_iter().zip(masks))
        .map(|(spec, (v, m))| Ok((spec.name.clone(), Column::new(spec.kind.clone(), v, m)?)))
        .collect::<Result<Vec<_>>>()?;
    ColumnTable::new(columns)
}

pub fn write_csv(table: &ColumnTable, path: impl AsRef<Path>) -> Result<()> {
    let mut f = File::create(path)?;
    write_csv_to(table, &mut f)?;
    f.flush()?;
    Ok(())
}

/// Continuous values use 17 significant digits, so a read-back is bit-exact.
pub fn write_csv_to<W: Write>(table: &ColumnTable, writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().from_writer(writer);
    w.write_record(table.names())?;
    let cols: Vec<&Column> = table.names().iter().map(|n| table.column(n).expect("named")).collect();
    let mut rec = Vec::with_capacity(cols.len());
    for i in 0..table.n_rows() {
        rec.clear();
        for c in &cols {
            rec.push(match c.get(i) {
                None => String::new(),
                Some(v) => match c.kind() {
                    ColumnKind::Continuous => format_sig17(v),
                    ColumnKind::Binary => format!("{}", v as u8),
                    ColumnKind::Categorical { levels, .. } => levels[v as usize].clone(),
                },
            });
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn format_sig17(v: f64) -> String {
    format!("{v:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tabular::Schema;
    use proptest::prelude::*;

    fn schema() -> Schema {
        Schema::new(vec![
            ("X", ColumnKind::Binary),
            ("Z2", ColumnKind::Continuous),
            ("C", ColumnKind::categorical(["a", "b", "c"], "a")),
        ])
    }

    #[test]
    fn empty_cell_is_masked() {
        let text = "X,Z2,C\n1,0.5,a\n0,1.5,b\n1,,c\n0,2,a\n";
        let t = read_csv_from(text.as_bytes(), &schema()).unwrap();
        assert_eq!(t.require("Z2").unwrap().mask(), &[true, true, false, true]);
        assert_eq!(t.cell("C", 2).unwrap(), Some(2.0));
    }

    #[test]
    fn binary_two_is_rejected_with_location() {
        let text = "X,Z2,C\n1,0.5,a\n2,1.5,b\n";
        match read_csv_from(text.as_bytes(), &schema()).unwrap_err() {
            Error::Parse { row, column, .. } => {
                assert_eq!(row, 2);
                assert_eq!(column, "X");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn other_malformed_inputs() {
        let s = schema();
        assert!(read_csv_from("X,Z2,C\n1,abc,a\n".as_bytes(), &s).is_err());
        assert!(read_csv_from("X,Z2,C\n1,1.0,zzz\n".as_bytes(), &s).is_err());
        assert!(read_csv_from("X,Z2,C\n1,1.0\n".as_bytes(), &s).is_err());
        assert!(read_csv_from("X,Z2\n1,1.0\n".as_bytes(), &s).is_err());
        assert!(read_csv_from("X,Z2,C,W\n1,1.0,a,3\n".as_bytes(), &s).is_err());
    }

    #[test]
    fn header_order_may_differ_from_schema() {
        let t = read_csv_from("C,X,Z2\nb,1,3.5\n".as_bytes(), &schema()).unwrap();
        assert_eq!(t.names(), &["X", "Z2", "C"]);
        assert_eq!(t.cell("Z2", 0).unwrap(), Some(3.5));
    }

    fn cell() -> impl Strategy<Value = Option<f64>> {
        prop_oneof![1 => Just(None), 4 => any::<f64>().prop_filter("finite", |v| v.is_finite()).prop_map(Some)]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn round_trip_is_bit_exact(
            z in proptest::collection::vec(cell(), 100),
            x in proptest::collection::vec(proptest::option::of(0u8..2), 100),
            c in proptest::collection::vec(proptest::option::of(0u8..3), 100),
        ) {
            let xo: Vec<Option<f64>> = x.iter().map(|v| v.map(f64::from)).collect();
            let co: Vec<Option<f64>> = c.iter().map(|v| v.map(f64::from)).collect();
            let s = schema();
            let t = ColumnTable::new(vec![
                ("X".into(), Column::from_options(ColumnKind::Binary, &xo).unwrap()),
                ("Z2".into(), Column::from_options(ColumnKind::Continuous, &z).unwrap()),
                ("C".into(), Column::from_options(s.columns[2].kind.clone(), &co).unwrap()),
            ]).unwrap();
            let mut buf = Vec::new();
            write_csv_to(&t, &mut buf).unwrap();
            let back = read_csv_from(buf.as_slice(), &s).unwrap();
            for name in ["X", "Z2", "C"] {
                let (a, b) = (t.require(name).unwrap(), back.require(name).unwrap());
                prop_assert_eq!(a.mask(), b.mask());
                for i in 0..100 {
                    prop_assert_eq!(a.get(i).map(f64::to_bits), b.get(i).map(f64::to_bits));
                }
            }
        }
    }
}
