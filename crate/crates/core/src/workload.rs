//! Synthetic job streams: sizes from a discrete mix, Poisson arrivals.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Exp, weighted::WeightedIndex};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::mapreduce::{JobSpec, GIB, MIB};

#[derive(Debug, Error, PartialEq)]
pub enum WorkloadError {
    #[error("arrival rate must be positive, got {0}")]
    BadRate(f64),
    #[error("size mix probabilities sum to {0}, expected 1")]
    BadMix(f64),
    #[error("size mix is empty")]
    EmptyMix,
    #[error("invalid size `{0}`")]
    BadSize(String),
}

/// A byte count that reads either as an integer or as `<n>GB` / `<n>MB`
/// (binary units).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct ByteSize(pub u64);

impl FromStr for ByteSize {
    type Err = WorkloadError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        let bad = || WorkloadError::BadSize(s.to_string());
        let (num, unit) = match t.find(|c: char| c.is_ascii_alphabetic()) {
            Some(i) => (&t[..i], t[i..].to_ascii_uppercase()),
            None => (t, String::new()),
        };
        let n: f64 = num.trim().parse().map_err(|_| bad())?;
        let mult = match unit.as_str() {
            "" | "B" => 1,
            "KB" => 1024,
            "MB" => MIB,
            "GB" => GIB,
            "TB" => 1024 * GIB,
            _ => return Err(bad()),
        };
        if n < 0.0 {
            return Err(bad());
        }
        Ok(ByteSize((n * mult as f64).round() as u64))
    }
}

impl fmt::Display for ByteSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0 >= GIB && self.0 % GIB == 0 {
            write!(f, "{}GB", self.0 / GIB)
        } else if self.0 >= MIB && self.0 % MIB == 0 {
            write!(f, "{}MB", self.0 / MIB)
        } else {
            write!(f, "{}", self.0)
        }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawSize {
    Bytes(u64),
    Text(String),
}

impl<'de> Deserialize<'de> for ByteSize {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match RawSize::deserialize(d)? {
            RawSize::Bytes(b) => Ok(ByteSize(b)),
            RawSize::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

impl Serialize for ByteSize {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

/// Deserializes a byte count given as an integer or with a unit suffix.
pub fn bytes<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
    ByteSize::deserialize(d).map(|b| b.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SizeClass {
    pub size: ByteSize,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSpec {
    #[serde(default = "pacman_mix")]
    pub size_mix: Vec<SizeClass>,
    /// Jobs per millisecond.
    pub arrival_rate_per_ms: f64,
    pub total_jobs: u32,
    #[serde(default)]
    pub start_ms: u64,
}

/// The Facebook-trace mix: mostly 1 GB jobs with a tail of large ones.
pub fn pacman_mix() -> Vec<SizeClass> {
    [(1, 0.85), (10, 0.08), (50, 0.05), (100, 0.02)]
        .into_iter()
        .map(|(gb, p)| SizeClass {
            size: ByteSize(gb * GIB),
            p,
        })
        .collect()
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        if !(self.arrival_rate_per_ms > 0.0) || !self.arrival_rate_per_ms.is_finite() {
            return Err(WorkloadError::BadRate(self.arrival_rate_per_ms));
        }
        if self.size_mix.is_empty() {
            return Err(WorkloadError::EmptyMix);
        }
        let sum: f64 = self.size_mix.iter().map(|c| c.p).sum();
        if (sum - 1.0).abs() > 1e-9 || self.size_mix.iter().any(|c| c.p < 0.0) {
            return Err(WorkloadError::BadMix(sum));
        }
        Ok(())
    }
}

/// Draws `total_jobs` jobs. The first arrives one exponential gap after
/// `start_ms`.
pub fn generate_workload<R: Rng>(spec: &WorkloadSpec, rng: &mut R) -> Result<Vec<JobSpec>, WorkloadError> {
    spec.validate()?;
    let sizes = WeightedIndex::new(spec.size_mix.iter().map(|c| c.p)).map_err(|_| WorkloadError::BadMix(0.0))?;
    let gaps = Exp::new(spec.arrival_rate_per_ms).map_err(|_| WorkloadError::BadRate(spec.arrival_rate_per_ms))?;
    let mut t = spec.start_ms as f64;
    let mut out = Vec::with_capacity(spec.total_jobs as usize);
    for _ in 0..spec.total_jobs {
        t += gaps.sample(rng);
        let size = spec.size_mix[sizes.sample(rng)].size;
        out.push(JobSpec {
            input_size: size.0,
            arrival_ms: t.round() as u64,
            maps: None,
            reduces: None,
            home_node: None,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{RngStreams, WORKLOAD};

    fn spec(n: u32) -> WorkloadSpec {
        WorkloadSpec {
            size_mix: pacman_mix(),
            arrival_rate_per_ms: 1.0 / 5000.0,
            total_jobs: n,
            start_ms: 0,
        }
    }

    fn counts(jobs: &[JobSpec]) -> [usize; 4] {
        let mut c = [0; 4];
        for j in jobs {
            let i = [1, 10, 50, 100].iter().position(|g| j.input_size == g * GIB).unwrap();
            c[i] += 1;
        }
        c
    }

    #[test]
    fn pacman_hundred_jobs_near_expectation() {
        let mut rng = RngStreams::new(7).stream(WORKLOAD);
        let jobs = generate_workload(&spec(100), &mut rng).unwrap();
        let c = counts(&jobs);
        for (got, p) in c.iter().zip([0.85, 0.08, 0.05, 0.02]) {
            assert!((*got as f64 - 100.0 * p).abs() <= 5.0, "{c:?}");
        }
    }

    #[test]
    fn law_of_large_numbers() {
        let mut rng = RngStreams::new(11).stream(WORKLOAD);
        let jobs = generate_workload(&spec(10_000), &mut rng).unwrap();
        let c = counts(&jobs);
        for (got, p) in c.iter().zip([0.85, 0.08, 0.05, 0.02]) {
            assert!((*got as f64 / 10_000.0 - p).abs() < 0.02, "{c:?}");
        }
        assert!(jobs.windows(2).all(|w| w[0].arrival_ms <= w[1].arrival_ms));
    }

    #[test]
    fn single_class_and_single_job() {
        let mut s = spec(5);
        s.size_mix = vec![SizeClass {
            size: ByteSize(GIB),
            p: 1.0,
        }];
        let mut rng = RngStreams::new(1).stream(WORKLOAD);
        let jobs = generate_workload(&s, &mut rng).unwrap();
        assert!(jobs.iter().all(|j| j.input_size == GIB));
        s.total_jobs = 1;
        let jobs = generate_workload(&s, &mut rng).unwrap();
        assert_eq!(jobs.len(), 1);
    }

    #[test]
    fn deterministic_under_seed() {
        let a = generate_workload(&spec(50), &mut RngStreams::new(3).stream(WORKLOAD)).unwrap();
        let b = generate_workload(&spec(50), &mut RngStreams::new(3).stream(WORKLOAD)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_specs() {
        let mut s = spec(3);
        s.arrival_rate_per_ms = 0.0;
        assert_eq!(s.validate(), Err(WorkloadError::BadRate(0.0)));
        let mut s = spec(3);
        s.size_mix[0].p = 0.5;
        assert!(matches!(s.validate(), Err(WorkloadError::BadMix(_))));
    }

    #[test]
    fn byte_sizes_parse() {
        assert_eq!("1GB".parse::<ByteSize>().unwrap(), ByteSize(GIB));
        assert_eq!("128mb".parse::<ByteSize>().unwrap(), ByteSize(128 * MIB));
        assert_eq!("4096".parse::<ByteSize>().unwrap(), ByteSize(4096));
        assert!("3 parsecs".parse::<ByteSize>().is_err());
        assert_eq!(ByteSize(100 * GIB).to_string(), "100GB");
    }
}
