//! Right-censored two-group survival data and its CSV representation.
//!
//! CSV layout: a header row `time,delta,group,z1,...,zp` followed by one row
//! per subject. Extra covariate columns must be named `z1`, `z2`, ... in order.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which event process a curve or model describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Target {
    Failure,
    Censoring,
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::Failure => f.write_str("failure"),
            Target::Censoring => f.write_str("censoring"),
        }
    }
}

/// One subject: follow-up time `X = min(T, C, tau)`, failure indicator,
/// binary group and baseline covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub time: f64,
    pub event: bool,
    pub group: bool,
    pub covariates: Vec<f64>,
}

impl Observation {
    pub fn new(time: f64, event: bool, group: bool, covariates: Vec<f64>) -> Self {
        Self {
            time,
            event,
            group,
            covariates,
        }
    }

    /// Group indicator as a number (0 or 1).
    #[inline]
    pub fn a(&self) -> f64 {
        if self.group {
            1.0
        } else {
            0.0
        }
    }

    /// Feature vector `(A, Z1, ..., Zp)` used by covariate-adjusted models.
    pub fn features(&self) -> Vec<f64> {
        let mut w = Vec::with_capacity(self.covariates.len() + 1);
        w.push(self.a());
        w.extend_from_slice(&self.covariates);
        w
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    observations: Vec<Observation>,
    tau: f64,
    dim: usize,
}

impl Dataset {
    pub fn new(observations: Vec<Observation>, tau: f64) -> Result<Self> {
        if observations.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::Invalid(format!("tau must be positive and finite, got {tau}")));
        }
        let dim = observations[0].covariates.len();
        for (i, o) in observations.iter().enumerate() {
            if !(o.time.is_finite() && o.time >= 0.0) {
                return Err(Error::Invalid(format!(
                    "subject {i}: time must be finite and >= 0, got {}",
                    o.time
                )));
            }
            if o.time > tau {
                return Err(Error::Invalid(format!(
                    "subject {i}: time {} exceeds tau {tau}",
                    o.time
                )));
            }
            if o.covariates.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: o.covariates.len(),
                });
            }
            if o.covariates.iter().any(|z| !z.is_finite()) {
                return Err(Error::Invalid(format!("subject {i}: non-finite covariate")));
            }
        }
        Ok(Self {
            observations,
            tau,
            dim,
        })
    }

    /// Dataset whose maximum follow-up time is the largest observed time.
    pub fn with_observed_tau(observations: Vec<Observation>) -> Result<Self> {
        let tau = observations
            .iter()
            .map(|o| o.time)
            .fold(f64::NEG_INFINITY, f64::max);
        if observations.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Self::new(observations, if tau > 0.0 { tau } else { 1.0 })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    #[inline]
    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Covariate dimension `p` (excluding the group indicator).
    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    #[inline]
    pub fn get(&self, i: usize) -> &Observation {
        &self.observations[i]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Observation> {
        self.observations.iter()
    }

    /// Event indicator of subject `i` for the given target. Administrative
    /// censoring (`delta = 0` at `X = tau`) is censored for both targets.
    #[inline]
    pub fn is_target_event(&self, i: usize, target: Target) -> bool {
        let o = &self.observations[i];
        match target {
            Target::Failure => o.event,
            Target::Censoring => !o.event && o.time < self.tau,
        }
    }

    pub fn count_events(&self, target: Target) -> usize {
        (0..self.len())
            .filter(|&i| self.is_target_event(i, target))
            .count()
    }

    /// Sub-dataset with the given subject indices (same tau).
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let obs = indices
            .iter()
            .map(|&i| self.observations[i].clone())
            .collect();
        Self::new(obs, self.tau)
    }

    pub fn from_csv_reader<R: Read>(reader: R, tau: Option<f64>) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let column = |name: &str| -> Result<usize> {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::MissingColumn(name.to_string()))
        };
        let time_col = column("time")?;
        let delta_col = column("delta")?;
        let group_col = column("group")?;
        let mut z_cols = Vec::new();
        for j in 1.. {
            match headers.iter().position(|h| h == format!("z{j}")) {
                Some(c) => z_cols.push(c),
                None => break,
            }
        }

        let mut observations = Vec::new();
        for (r, record) in rdr.records().enumerate() {
            // header is line 1
            let row = r + 2;
            let record = record?;
            let field = |c: usize| record.get(c).unwrap_or("");
            let num = |c: usize, name: &str| -> Result<f64> {
                field(c).parse::<f64>().map_err(|_| Error::CsvRow {
                    row,
                    message: format!("`{name}` is not a number: {:?}", field(c)),
                })
            };
            let binary = |c: usize, name: &str| -> Result<bool> {
                match field(c) {
                    "0" => Ok(false),
                    "1" => Ok(true),
                    other => Err(Error::CsvRow {
                        row,
                        message: format!("`{name}` must be 0 or 1, got {other:?}"),
                    }),
                }
            };
            let time = num(time_col, "time")?;
            if !(time.is_finite() && time >= 0.0) {
                return Err(Error::CsvRow {
                    row,
                    message: format!("`time` must be finite and >= 0, got {time}"),
                });
            }
            let event = binary(delta_col, "delta")?;
            let group = binary(group_col, "group")?;
            let covariates = z_cols
                .iter()
                .enumerate()
                .map(|(j, &c)| num(c, &format!("z{}", j + 1)))
                .collect::<Result<Vec<_>>>()?;
            observations.push(Observation::new(time, event, group, covariates));
        }
        match tau {
            Some(tau) => Self::new(observations, tau),
            None => Self::with_observed_tau(observations),
        }
    }

    pub fn from_csv_path(path: impl AsRef<Path>, tau: Option<f64>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(std::io::BufReader::new(file), tau)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec!["time".to_string(), "delta".to_string(), "group".to_string()];
        header.extend((1..=self.dim).map(|j| format!("z{j}")));
        wtr.write_record(&header)?;
        for o in &self.observations {
            let mut rec = vec![
                format!("{}", o.time),
                (o.event as u8).to_string(),
                (o.group as u8).to_string(),
            ];
            rec.extend(o.covariates.iter().map(|z| format!("{z}")));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_roundtrip_preserves_values() {
        let data = Dataset::new(
            vec![
                Observation::new(0.25, true, false, vec![0.1, -2.0]),
                Observation::new(1.0, false, true, vec![3.5, 0.0]),
            ],
            1.0,
        )
        .unwrap();
        let mut buf = Vec::new();
        data.write_csv(&mut buf).unwrap();
        let back = Dataset::from_csv_reader(buf.as_slice(), Some(1.0)).unwrap();
        assert_eq!(back, data);
    }

    #[test]
    fn missing_delta_column_is_named() {
        let csv = "time,group,z1\n1.0,0,0.5\n";
        let err = Dataset::from_csv_reader(csv.as_bytes(), None).unwrap_err();
        assert!(matches!(err, Error::MissingColumn(ref c) if c == "delta"), "{err}");
    }

    #[test]
    fn bad_row_reports_line_number() {
        let csv = "time,delta,group\n1.0,1,0\n2.0,2,1\n";
        let err = Dataset::from_csv_reader(csv.as_bytes(), None).unwrap_err();
        assert!(matches!(err, Error::CsvRow { row: 3, .. }), "{err}");
    }

    #[test]
    fn administrative_censoring_is_not_a_censoring_event() {
        let data = Dataset::new(
            vec![
                Observation::new(0.5, false, false, vec![]),
                Observation::new(1.0, false, false, vec![]),
                Observation::new(0.7, true, true, vec![]),
            ],
            1.0,
        )
        .unwrap();
        assert!(data.is_target_event(0, Target::Censoring));
        assert!(!data.is_target_event(1, Target::Censoring));
        assert!(!data.is_target_event(1, Target::Failure));
        assert_eq!(data.count_events(Target::Failure), 1);
    }

    #[test]
    fn rejects_time_beyond_tau_and_ragged_covariates() {
        assert!(Dataset::new(vec![Observation::new(2.0, true, false, vec![])], 1.0).is_err());
        let ragged = vec![
            Observation::new(0.5, true, false, vec![1.0]),
            Observation::new(0.5, true, false, vec![]),
        ];
        assert!(matches!(
            Dataset::new(ragged, 1.0),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(Dataset::new(vec![], 1.0), Err(Error::EmptyDataset)));
    }
}
