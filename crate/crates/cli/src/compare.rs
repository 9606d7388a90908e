//! Row-by-row z-scores between two artifacts with the same schema.

use crate::error::{CliError, CliResult};
use crate::output::num;

#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Artifact {
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
        let header: Vec<String> = lines
            .next()
            .ok_or_else(|| CliError::Schema("artifact has no header".into()))?
            .split(',')
            .map(str::to_string)
            .collect();
        let rows = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
        Ok(Self { header, rows })
    }

    fn column(&self, name: &str) -> CliResult<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Schema(format!("no `{name}` column")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub row: usize,
    pub a: f64,
    pub b: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareReport {
    pub rows: Vec<CompareRow>,
    pub threshold: f64,
}

impl CompareReport {
    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| !(r.z.abs() <= self.threshold)).count()
    }

    pub fn render(&self) -> String {
        let mut s = String::from("row,a,b,z,status\n");
        for r in &self.rows {
            let ok = r.z.abs() <= self.threshold;
            s.push_str(&format!("{},{},{},{},{}\n", r.row, num(r.a), num(r.b), num(r.z), if ok { "pass" } else { "FAIL" }));
        }
        s
    }
}

fn cell(row: &[String], i: usize, which: &str, r: usize) -> CliResult<f64> {
    let raw = row.get(i).map(String::as_str).unwrap_or("");
    if raw.is_empty() {
        return Ok(0.0);
    }
    raw.parse()
        .map_err(|_| CliError::Schema(format!("artifact {which}, row {r}: `{raw}` is not a number")))
}

/// `z = (a - b) / sqrt(se_a^2 + se_b^2)` on the `value` column, row by row.
pub fn compare(a: &Artifact, b: &Artifact, threshold: f64) -> CliResult<CompareReport> {
    if a.header != b.header {
        return Err(CliError::Schema(format!(
            "headers differ: [{}] vs [{}]",
            a.header.join(","),
            b.header.join(",")
        )));
    }
    if a.rows.len() != b.rows.len() {
        return Err(CliError::Schema(format!("{} rows vs {} rows", a.rows.len(), b.rows.len())));
    }
    let v = a.column("value")?;
    let se = a.column("std_err")?;
    let mut rows = Vec::with_capacity(a.rows.len());
    for (r, (ra, rb)) in a.rows.iter().zip(&b.rows).enumerate() {
        let (va, vb) = (cell(ra, v, "A", r)?, cell(rb, v, "B", r)?);
        let s = cell(ra, se, "A", r)?.hypot(cell(rb, se, "B", r)?);
        let d = va - vb;
        let z = if s > 0.0 {
            d / s
        } else if d == 0.0 {
            0.0
        } else {
            f64::INFINITY.copysign(d)
        };
        rows.push(CompareRow { row: r, a: va, b: vb, z });
    }
    Ok(CompareReport { rows, threshold })
}

#[cfg(test)]
mod tests {
    use super::*;

    const A: &str = "# x\nestimator,value,std_err\nBEL,1.0,0.1\nBEL,2.0,0.1\n";

    #[test]
    fn self_comparison_is_zero() {
        let a = Artifact::parse(A).unwrap();
        let r = compare(&a, &a, 3.0).unwrap();
        assert!(r.rows.iter().all(|x| x.z == 0.0));
        assert_eq!(r.failures(), 0);
    }

    #[test]
    fn detects_shift() {
        let a = Artifact::parse(A).unwrap();
        let b = Artifact::parse("estimator,value,std_err\nFD,1.0,0.1\nFD,3.0,0.1\n").unwrap();
        let r = compare(&a, &b, 3.0).unwrap();
        assert_eq!(r.failures(), 1);
    }

    #[test]
    fn schema_mismatch_is_rejected() {
        let a = Artifact::parse(A).unwrap();
        let b = Artifact::parse("value,std_err\n1,0\n2,0\n").unwrap();
        assert!(matches!(compare(&a, &b, 3.0), Err(CliError::Schema(_))));
        let c = Artifact::parse("estimator,value,std_err\nBEL,1.0,0.1\n").unwrap();
        assert!(matches!(compare(&a, &c, 3.0), Err(CliError::Schema(_))));
    }
}
