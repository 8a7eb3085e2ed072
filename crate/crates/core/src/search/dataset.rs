use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::rng::Rng64;
use crate::supernet::Batch;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Generator {
    /// Unit-variance blobs at `(-2, 0)` (class 0) and `(2, 0)` (class 1).
    TwoGaussians,
    /// Radius 1 (class 0) and radius 2 (class 1), radial noise `0.1`.
    ConcentricRings,
}

/// Parameters of a synthetic two-class dataset.
///
/// Each point is written as `signal_views` copies of the 2-D sample followed
/// by `noise_views` standard-normal 2-D blocks that carry no label
/// information, giving `2 * (signal_views + noise_views)` features. With
/// `split_signal` the two signal views carry `(x, 0)` and `(0, y)` instead
/// of full copies, so only both together determine the label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub generator: Generator,
    pub size: usize,
    pub seed: u64,
    pub signal_views: usize,
    pub noise_views: usize,
    pub split_signal: bool,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            generator: Generator::TwoGaussians,
            size: 128,
            seed: 0,
            signal_views: 1,
            noise_views: 0,
            split_signal: false,
        }
    }
}

impl DatasetSpec {
    pub fn dim(&self) -> usize {
        2 * (self.signal_views + self.noise_views)
    }

    pub fn validate(&self) -> Result<()> {
        if self.size == 0 || self.size % 2 != 0 {
            return Err(Error::config(format!("dataset size must be even and positive, got {}", self.size)));
        }
        if self.split_signal && self.signal_views != 2 {
            return Err(Error::config("split_signal needs exactly two signal views"));
        }
        if self.signal_views == 0 {
            return Err(Error::config("dataset needs at least one signal view"));
        }
        Ok(())
    }
}

/// Class-balanced labelled points; labels alternate `0, 1, 0, ...`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub spec: DatasetSpec,
    pub points: Vec<f64>,
    pub labels: Vec<usize>,
}

pub fn generate_dataset(spec: &DatasetSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let mut rng = Rng64::new(spec.seed);
    let dim = spec.dim();
    let mut points = Vec::with_capacity(spec.size * dim);
    let mut labels = Vec::with_capacity(spec.size);
    for i in 0..spec.size {
        let label = i % 2;
        let (x, y) = match spec.generator {
            Generator::TwoGaussians => {
                let cx = if label == 0 { -2.0 } else { 2.0 };
                (cx + rng.normal(), rng.normal())
            }
            Generator::ConcentricRings => {
                let theta = rng.uniform_range(0.0, 2.0 * std::f64::consts::PI);
                let r = (label + 1) as f64 + 0.1 * rng.normal();
                (r * libm::cos(theta), r * libm::sin(theta))
            }
        };
        if spec.split_signal {
            points.extend([x, 0.0, 0.0, y]);
        } else {
            for _ in 0..spec.signal_views {
                points.extend([x, y]);
            }
        }
        for _ in 0..spec.noise_views {
            points.extend([rng.normal(), rng.normal()]);
        }
        labels.push(label);
    }
    Ok(SyntheticDataset {
        spec: spec.clone(),
        points,
        labels,
    })
}

impl SyntheticDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn batch(&self, range: std::ops::Range<usize>) -> Batch {
        let dim = self.spec.dim();
        let data = self.points[range.start * dim..range.end * dim].to_vec();
        Batch {
            x: Tensor::matrix(range.len(), dim, data).expect("dataset shape"),
            labels: self.labels[range].to_vec(),
        }
    }

    pub fn full(&self) -> Batch {
        self.batch(0..self.len())
    }

    /// First half for training, second half held out for validation.
    pub fn split_halves(&self) -> (Batch, Batch) {
        let half = self.len() / 2;
        (self.batch(0..half), self.batch(half..self.len()))
    }

    /// CSV with columns `x0, x1, ..., label`.
    pub fn to_csv(&self) -> String {
        let dim = self.spec.dim();
        let mut out: Vec<String> = (0..dim).map(|i| format!("x{i}")).collect();
        out.push("label".into());
        let mut csv = out.join(",") + "\n";
        for (row, label) in self.points.chunks(dim).zip(&self.labels) {
            let mut cells: Vec<String> = row.iter().map(|&v| crate::io::format_float(v)).collect();
            cells.push(label.to_string());
            csv.push_str(&cells.join(","));
            csv.push('\n');
        }
        csv
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_and_seeded() {
        for generator in [Generator::TwoGaussians, Generator::ConcentricRings] {
            let spec = DatasetSpec {
                generator,
                size: 8,
                seed: 1,
                ..DatasetSpec::default()
            };
            let a = generate_dataset(&spec).unwrap();
            assert_eq!(a.labels.iter().filter(|&&l| l == 0).count(), 4);
            assert_eq!(a, generate_dataset(&spec).unwrap());
            let b = generate_dataset(&DatasetSpec { seed: 2, ..spec }).unwrap();
            assert_ne!(a.points, b.points);
        }
    }

    #[test]
    fn rings_have_expected_radii() {
        let d = generate_dataset(&DatasetSpec {
            generator: Generator::ConcentricRings,
            size: 400,
            ..DatasetSpec::default()
        })
        .unwrap();
        for (p, &l) in d.points.chunks(2).zip(&d.labels) {
            let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
            assert!((r - (l + 1) as f64).abs() < 0.6);
        }
    }

    #[test]
    fn views_and_split() {
        let d = generate_dataset(&DatasetSpec {
            size: 10,
            signal_views: 2,
            noise_views: 1,
            ..DatasetSpec::default()
        })
        .unwrap();
        for p in d.points.chunks(6) {
            assert_eq!(p[0..2], p[2..4]);
        }
        let (train, val) = d.split_halves();
        assert_eq!(train.x.shape(), &[5, 6]);
        assert_eq!(val.labels, vec![1, 0, 1, 0, 1]);
        assert!(generate_dataset(&DatasetSpec { size: 7, ..DatasetSpec::default() }).is_err());
    }

    #[test]
    fn split_signal_separates_coordinates() {
        let spec = DatasetSpec {
            signal_views: 2,
            noise_views: 1,
            split_signal: true,
            size: 6,
            ..DatasetSpec::default()
        };
        let d = generate_dataset(&spec).unwrap();
        for p in d.points.chunks(6) {
            assert_eq!((p[1], p[2]), (0.0, 0.0));
        }
        let bad = DatasetSpec {
            signal_views: 1,
            ..spec
        };
        assert!(bad.validate().is_err());
    }
}
