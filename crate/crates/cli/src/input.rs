//! CSV ingestion with row-level validation.

use std::io::Read;

use mrd_core::{Dataset, Record, RegionSpec};

use crate::CliError;

fn parse_number(raw: &str, row: usize, column: &str) -> Result<f64, CliError> {
    let v: f64 = raw
        .trim()
        .parse()
        .map_err(|_| CliError::Input(format!("row {row}, column '{column}': '{raw}' is not numeric")))?;
    if !v.is_finite() {
        return Err(CliError::Input(format!("row {row}, column '{column}': value is not finite")));
    }
    Ok(v)
}

fn parse_flag(raw: &str, row: usize) -> Result<bool, CliError> {
    match raw.trim() {
        "1" | "1.0" | "true" | "TRUE" | "True" => Ok(true),
        "0" | "0.0" | "false" | "FALSE" | "False" => Ok(false),
        other => Err(CliError::Input(format!("row {row}, column 'd': '{other}' is not 0 or 1"))),
    }
}

/// Reads columns `y`, `r1`, `r2` and `d` when present. Without a `d`
/// column the treatment flag comes from `region`. Rows are numbered from 1,
/// not counting the header.
pub fn read_dataset(reader: impl Read, region: Option<&RegionSpec>) -> Result<Dataset, CliError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| CliError::Input(format!("cannot read header: {e}")))?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (Some(iy), Some(i1), Some(i2)) = (col("y"), col("r1"), col("r2")) else {
        let missing: Vec<&str> = ["y", "r1", "r2"].into_iter().filter(|c| col(c).is_none()).collect();
        return Err(CliError::Input(format!("missing required column(s): {}", missing.join(", "))));
    };
    let id = col("d");
    if id.is_none() && region.is_none() {
        return Err(CliError::Input(
            "input has no 'd' column; pass --region to derive treatment".into(),
        ));
    }
    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let n = i + 1;
        let row = row.map_err(|e| CliError::Input(format!("row {n}: {e}")))?;
        let field = |k: usize| row.get(k).unwrap_or("");
        let y = parse_number(field(iy), n, "y")?;
        let r = [parse_number(field(i1), n, "r1")?, parse_number(field(i2), n, "r2")?];
        let d = match (id, region) {
            (Some(k), _) => parse_flag(field(k), n)?,
            (None, Some(reg)) => reg.contains(r),
            (None, None) => unreachable!("checked above"),
        };
        records.push(Record { y, r, d });
    }
    if records.is_empty() {
        return Err(CliError::Input("input has no data rows".into()));
    }
    Dataset::new(records).map_err(|e| CliError::Input(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use mrd_core::RegionKind;

    #[test]
    fn reads_with_treatment_column() {
        let csv = "y,r1,r2,d\n1.0,0.5,0.5,1\n2.0,-0.5,-0.5,0\n";
        let d = read_dataset(csv.as_bytes(), None).unwrap();
        assert_eq!(d.len(), 2);
        assert!(d.records()[0].d && !d.records()[1].d);
    }

    #[test]
    fn derives_treatment_from_region() {
        let csv = "r1,r2,y\n1,1,0\n-1,1,0\n";
        let reg = RegionSpec::new(RegionKind::Intersection, [0.0, 0.0]);
        let d = read_dataset(csv.as_bytes(), Some(&reg)).unwrap();
        assert!(d.records()[0].d && !d.records()[1].d);
    }

    #[test]
    fn names_the_bad_row() {
        let mut csv = String::from("y,r1,r2,d\n");
        for i in 1..=20 {
            let y = if i == 17 { "abc".to_string() } else { "0.1".to_string() };
            csv.push_str(&format!("{y},0,0,1\n"));
        }
        let err = read_dataset(csv.as_bytes(), None).unwrap_err();
        assert!(err.to_string().contains("row 17"), "{err}");
    }

    #[test]
    fn missing_column_and_missing_treatment() {
        let err = read_dataset("y,r1\n1,2\n".as_bytes(), None).unwrap_err();
        assert!(err.to_string().contains("r2"));
        let err = read_dataset("y,r1,r2\n1,2,3\n".as_bytes(), None).unwrap_err();
        assert!(err.to_string().contains("--region"));
        let err = read_dataset("y,r1,r2,d\n1,2,3,2\n".as_bytes(), None).unwrap_err();
        assert!(err.to_string().contains("row 1"));
    }
}
