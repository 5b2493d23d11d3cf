use std::path::Path;

use crate::error::{Error, Result};
use crate::io::write_atomic;

use super::Sample;

/// Writes `x_0..x_{D-1}, class_label, domain_label, domain_role, split` with a
/// header row. Floats use the shortest representation that parses back to
/// the same bits.
pub fn write_dataset_csv(path: &Path, samples: &[Sample]) -> Result<()> {
    let dim = samples.first().map_or(0, |s| s.x.len());
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = (0..dim).map(|j| format!("x_{j}")).collect();
    header.extend(
        ["class_label", "domain_label", "domain_role", "split"]
            .iter()
            .map(|s| s.to_string()),
    );
    w.write_record(&header)?;
    for s in samples {
        if s.x.len() != dim {
            return Err(Error::Shape {
                op: "write_dataset_csv",
                lhs: vec![dim],
                rhs: vec![s.x.len()],
            });
        }
        let mut rec: Vec<String> = s.x.iter().map(|v| v.to_string()).collect();
        rec.push(s.class_label.to_string());
        rec.push(s.domain_label.to_string());
        rec.push(s.domain_role.to_string());
        rec.push(s.split.to_string());
        w.write_record(&rec)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Io(e.into_error()))?;
    write_atomic(path, &bytes)
}

pub fn read_dataset_csv(path: &Path) -> Result<Vec<Sample>> {
    let parse_err = |detail: String| Error::Parse {
        path: path.to_path_buf(),
        detail,
    };
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let cols: Vec<&str> = header.iter().collect();
    if cols.len() < 5 {
        return Err(parse_err(format!("expected at least 5 columns, got {}", cols.len())));
    }
    let dim = cols.len() - 4;
    for (j, name) in cols[..dim].iter().enumerate() {
        if *name != format!("x_{j}") {
            return Err(parse_err(format!("column {j} should be x_{j}, found '{name}'")));
        }
    }
    if cols[dim..] != ["class_label", "domain_label", "domain_role", "split"] {
        return Err(parse_err(format!("unexpected trailing columns {:?}", &cols[dim..])));
    }
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let field = |k: usize| rec.get(k).unwrap_or_default();
        let x = (0..dim)
            .map(|j| {
                field(j)
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| parse_err(format!("row {}: x_{j}: {e}", line + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(parse_err(format!("row {}: non-finite feature", line + 1)));
        }
        let int = |k: usize, name: &str| {
            field(k)
                .trim()
                .parse::<usize>()
                .map_err(|e| parse_err(format!("row {}: {name}: {e}", line + 1)))
        };
        out.push(Sample {
            x,
            class_label: int(dim, "class_label")?,
            domain_label: int(dim + 1, "domain_label")?,
            domain_role: field(dim + 2)
                .parse()
                .map_err(|e: Error| parse_err(format!("row {}: {e}", line + 1)))?,
            split: field(dim + 3)
                .parse()
                .map_err(|e: Error| parse_err(format!("row {}: {e}", line + 1)))?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_dataset, DatasetConfig};

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        let data = generate_dataset(&DatasetConfig::default()).unwrap();
        write_dataset_csv(&path, &data).unwrap();
        let back = read_dataset_csv(&path).unwrap();
        assert_eq!(back, data);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("x_0,x_1,x_2,x_3,x_4,x_5,x_6,x_7,class_label,domain_label,domain_role,split\n"));
    }

    #[test]
    fn bad_header_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "a,b,c,d,e\n1,2,3,4,5\n").unwrap();
        assert!(matches!(read_dataset_csv(&path), Err(Error::Parse { .. })));
    }
}
