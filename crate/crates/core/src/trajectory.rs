//! Finite multichannel trajectories and their CSV interchange format.
//!
//! The CSV layout is one row per time sample and one column per channel, with an optional
//! header row `ch1,ch2,...,chm`. Values are written with Rust's shortest round-trip `f64`
//! formatting, so a write followed by a read is lossless.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVectorView};

use crate::error::{Error, Result};

/// `N x m` real samples: row `t` is the sample at time `t` (0-based), column `k` is channel `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    data: DMatrix<f64>,
}

impl Trajectory {
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::InvalidInput(format!(
                "trajectory needs at least one sample and one channel, got {}x{}",
                data.nrows(),
                data.ncols()
            )));
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            let (row, col) = (pos % data.nrows(), pos / data.nrows());
            return Err(Error::InvalidInput(format!(
                "non-finite value at sample {row}, channel {col}"
            )));
        }
        Ok(Trajectory { data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != m) {
            return Err(Error::InvalidInput(format!(
                "row {bad} has {} columns, expected {m}",
                rows[bad].len()
            )));
        }
        Self::new(DMatrix::from_fn(rows.len(), m, |t, k| rows[t][k]))
    }

    pub fn n_samples(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_channels(&self) -> usize {
        self.data.ncols()
    }

    pub fn channel(&self, k: usize) -> DVectorView<'_, f64> {
        self.data.column(k)
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.data
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (i, record) in rdr.records().enumerate() {
            let record = record?;
            let parsed: std::result::Result<Vec<f64>, _> =
                record.iter().map(str::parse::<f64>).collect();
            match parsed {
                Ok(row) => rows.push(row),
                Err(_) if i == 0 && is_channel_header(&record) => continue,
                Err(e) => {
                    return Err(Error::InvalidInput(format!("line {}: {e}", i + 1)));
                }
            }
        }
        if rows.is_empty() {
            return Err(Error::InvalidInput("CSV contains no samples".into()));
        }
        Self::from_rows(&rows)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record((1..=self.n_channels()).map(|k| format!("ch{k}")))?;
        for t in 0..self.n_samples() {
            wtr.write_record(self.data.row(t).iter().map(|x| x.to_string()))?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))
    }
}

fn is_channel_header(record: &csv::StringRecord) -> bool {
    record
        .iter()
        .enumerate()
        .all(|(k, field)| field == format!("ch{}", k + 1))
}
