//! Exogenous hourly profiles: base load and renewable availability.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProfileShape {
    /// `mean + amplitude * cos(2π (h - peak_hour) / 24)`.
    Sinusoid {
        mean: f64,
        amplitude: f64,
        peak_hour: f64,
    },
    /// Half-sine between sunrise and sunset, zero at night. Hour `h` is
    /// evaluated at its midpoint `h + 0.5`.
    Solar {
        peak: f64,
        sunrise: f64,
        sunset: f64,
    },
    /// 24 hourly values, typically loaded from a CSV trace.
    Trace { values: Vec<f64> },
}

/// An hourly profile plus Gaussian noise on each realised value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExogenousProfile {
    pub shape: ProfileShape,
    #[serde(default)]
    pub noise_std: f64,
}

impl ExogenousProfile {
    pub fn default_base_load() -> Self {
        Self {
            shape: ProfileShape::Sinusoid {
                mean: 12.0,
                amplitude: 4.0,
                peak_hour: 18.0,
            },
            noise_std: 0.8,
        }
    }

    pub fn default_renewable() -> Self {
        Self {
            shape: ProfileShape::Solar {
                peak: 20.0,
                sunrise: 6.0,
                sunset: 19.0,
            },
            noise_std: 1.5,
        }
    }

    pub fn validate(&self, what: &str) -> Result<()> {
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::InvalidConfig(format!("{what}: noise_std must be >= 0")));
        }
        match &self.shape {
            ProfileShape::Trace { values } if values.len() != 24 => Err(Error::InvalidConfig(
                format!("{what}: trace needs 24 hourly values, got {}", values.len()),
            )),
            ProfileShape::Solar {
                sunrise, sunset, ..
            } if sunset <= sunrise => Err(Error::InvalidConfig(format!(
                "{what}: sunset must follow sunrise"
            ))),
            _ => Ok(()),
        }
    }

    /// Noise-free value for hour `t mod 24`.
    pub fn expected(&self, t: usize) -> f64 {
        let h = (t % 24) as f64;
        let v = match &self.shape {
            ProfileShape::Sinusoid {
                mean,
                amplitude,
                peak_hour,
            } => mean + amplitude * (2.0 * PI * (h - peak_hour) / 24.0).cos(),
            ProfileShape::Solar {
                peak,
                sunrise,
                sunset,
            } => {
                let x = h + 0.5;
                if x <= *sunrise || x >= *sunset {
                    0.0
                } else {
                    peak * (PI * (x - sunrise) / (sunset - sunrise)).sin()
                }
            }
            ProfileShape::Trace { values } => values[t % 24],
        };
        v.max(0.0)
    }

    /// Realised value: expected plus noise, floored at zero. Draws from `rng`
    /// only when the noise is non-zero.
    pub fn sample<R: Rng + ?Sized>(&self, t: usize, rng: &mut R) -> f64 {
        let base = self.expected(t);
        if self.noise_std > 0.0 {
            let n = Normal::new(0.0, self.noise_std).expect("validated").sample(rng);
            (base + n).max(0.0)
        } else {
            base
        }
    }

    /// Replace the shape with a trace read from a CSV with columns `hour,kW`.
    pub fn from_csv(path: &Path, noise_std: f64) -> Result<Self> {
        Ok(Self {
            shape: ProfileShape::Trace {
                values: load_hourly_trace(path)?,
            },
            noise_std,
        })
    }
}

#[derive(Debug, Deserialize)]
struct TraceRow {
    hour: usize,
    #[serde(rename = "kW")]
    kw: f64,
}

/// Reads an hourly trace (`hour,kW` header). Hours must cover 0..24 exactly
/// once; rows may be in any order.
pub fn load_hourly_trace(path: &Path) -> Result<Vec<f64>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut values = vec![f64::NAN; 24];
    for row in rdr.deserialize() {
        let row: TraceRow = row?;
        if row.hour >= 24 || !values[row.hour].is_nan() {
            return Err(Error::InvalidConfig(format!(
                "{}: hour {} out of range or duplicated",
                path.display(),
                row.hour
            )));
        }
        if !(row.kw.is_finite() && row.kw >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "{}: hour {} has invalid power {}",
                path.display(),
                row.hour,
                row.kw
            )));
        }
        values[row.hour] = row.kw;
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidConfig(format!(
            "{}: trace must cover all 24 hours",
            path.display()
        )));
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn solar_is_zero_at_night_and_peaks_midday() {
        let p = ExogenousProfile::default_renewable();
        assert_eq!(p.expected(2), 0.0);
        assert_eq!(p.expected(22), 0.0);
        assert!(p.expected(12) > 0.9 * p.expected(13).max(p.expected(11)));
        assert!(p.expected(12) > p.expected(8));
    }

    #[test]
    fn trace_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("load.csv");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "hour,kW").unwrap();
        for h in (0..24).rev() {
            writeln!(f, "{h},{}", h as f64 * 1.5).unwrap();
        }
        drop(f);
        let p = ExogenousProfile::from_csv(&path, 0.0).unwrap();
        assert_eq!(p.expected(10), 15.0);
        assert_eq!(p.expected(34), 15.0);
    }

    #[test]
    fn incomplete_trace_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("short.csv");
        std::fs::write(&path, "hour,kW\n0,1.0\n1,2.0\n").unwrap();
        assert!(load_hourly_trace(&path).is_err());
    }
}
