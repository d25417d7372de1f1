use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};

use super::Problem;
use crate::error::{Error, Result};

/// Bootstrap resampling of the rows of a table of joint historical observations.
#[derive(Debug, Clone)]
pub struct EmpiricalProblem {
    labels: Vec<String>,
    table: DMatrix<f64>,
    means: DVector<f64>,
}

pub fn empirical_problem(table: DMatrix<f64>) -> Result<EmpiricalProblem> {
    let labels = (1..=table.ncols()).map(|k| k.to_string()).collect();
    EmpiricalProblem::with_labels(labels, table)
}

impl EmpiricalProblem {
    pub fn with_labels(labels: Vec<String>, table: DMatrix<f64>) -> Result<Self> {
        if table.nrows() < 2 || table.ncols() == 0 {
            return Err(Error::EmptyTable(format!("{} rows x {} columns", table.nrows(), table.ncols())));
        }
        if labels.len() != table.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for {} columns",
                labels.len(),
                table.ncols()
            )));
        }
        if let Some(v) = table.iter().find(|v| !v.is_finite()) {
            return Err(Error::Parse(format!("non-finite value {v} in table")));
        }
        let means = table.row_mean().transpose();
        Ok(Self { labels, table, means })
    }

    /// Reads a header row of labels followed by one comma-separated observation per row.
    pub fn from_csv_reader(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let labels: Vec<String> = rdr
            .headers()
            .map_err(|e| Error::Parse(e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        let mut values = Vec::new();
        let mut rows = 0;
        for (line, record) in rdr.records().enumerate() {
            let record = record.map_err(|e| Error::Parse(e.to_string()))?;
            if record.len() != labels.len() {
                return Err(Error::Parse(format!(
                    "data row {} has {} fields, header has {}",
                    line + 1,
                    record.len(),
                    labels.len()
                )));
            }
            for field in record.iter() {
                let v: f64 = field
                    .parse()
                    .map_err(|_| Error::Parse(format!("data row {}: cannot parse {field:?}", line + 1)))?;
                values.push(v);
            }
            rows += 1;
        }
        let table = DMatrix::from_row_slice(rows, labels.len(), &values);
        Self::with_labels(labels, table)
    }

    pub fn from_csv_path(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        Self::from_csv_reader(std::io::BufReader::new(file))
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }

    pub fn table(&self) -> &DMatrix<f64> {
        &self.table
    }
}

impl Problem for EmpiricalProblem {
    fn num_alternatives(&self) -> usize {
        self.table.ncols()
    }

    fn sample_one(&self, k: usize, rng: &mut dyn RngCore) -> f64 {
        let row = rng.random_range(0..self.table.nrows());
        self.table[(row, k)]
    }

    fn sample_all(&self, rng: &mut dyn RngCore) -> DVector<f64> {
        let row = rng.random_range(0..self.table.nrows());
        self.table.row(row).transpose()
    }

    fn true_means(&self) -> &DVector<f64> {
        &self.means
    }

    fn label(&self, k: usize) -> String {
        self.labels[k].clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::stream;

    #[test]
    fn two_row_table() {
        let p = empirical_problem(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 2.0, 3.0])).unwrap();
        assert_eq!(p.true_means().as_slice(), &[1.0, 2.0]);
        let mut rng = stream(&[1]);
        for _ in 0..50 {
            let row = p.sample_all(&mut rng);
            assert!(row.as_slice() == [0.0, 1.0] || row.as_slice() == [2.0, 3.0]);
        }
    }

    #[test]
    fn rejects_single_row() {
        let err = empirical_problem(DMatrix::from_row_slice(1, 2, &[0.0, 1.0])).unwrap_err();
        assert!(matches!(err, Error::EmptyTable(_)));
    }

    #[test]
    fn parses_csv() {
        let text = "site a, site b\n1.5,2\n 3.5 , 4\n";
        let p = EmpiricalProblem::from_csv_reader(text.as_bytes()).unwrap();
        assert_eq!(p.label(0), "site a");
        assert_eq!(p.true_means().as_slice(), &[2.5, 3.0]);
    }

    #[test]
    fn csv_errors_name_the_row() {
        let err = EmpiricalProblem::from_csv_reader("a,b\n1,2\n3,x\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("row 2"), "{err}");
        let err = EmpiricalProblem::from_csv_reader("a,b\n1,2\n3\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse(_)));
    }
}
