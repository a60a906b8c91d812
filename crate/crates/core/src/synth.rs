//! Spuriously correlated binary datasets.
//!
//! Each sample has a target attribute `t` (which defines the label, `y = t`) and a bias
//! attribute `b`. A sample is bias-aligned when `t == b`. Features carry a hard,
//! noisy signal of `t` and an easy, clean signal of `b`.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::nn::Matrix;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BiasedSample {
    pub x: Vec<f64>,
    pub y: u8,
    pub t: u8,
    pub b: u8,
}

impl BiasedSample {
    #[inline]
    pub fn aligned(&self) -> bool {
        self.t == self.b
    }
}

/// Counts of the four `(t, b)` cells of one split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GroupCounts {
    pub t1b1: usize,
    pub t1b0: usize,
    pub t0b1: usize,
    pub t0b0: usize,
}

impl GroupCounts {
    /// Cells in the order `(t=1,b=1), (t=1,b=0), (t=0,b=1), (t=0,b=0)`.
    pub const fn new(t1b1: usize, t1b0: usize, t0b1: usize, t0b0: usize) -> Self {
        Self {
            t1b1,
            t1b0,
            t0b1,
            t0b0,
        }
    }

    pub const fn balanced(per_cell: usize) -> Self {
        Self::new(per_cell, per_cell, per_cell, per_cell)
    }

    pub fn as_array(&self) -> [usize; 4] {
        [self.t1b1, self.t1b0, self.t0b1, self.t0b0]
    }

    pub fn get(&self, t: u8, b: u8) -> usize {
        match (t, b) {
            (1, 1) => self.t1b1,
            (1, 0) => self.t1b0,
            (0, 1) => self.t0b1,
            _ => self.t0b0,
        }
    }

    pub fn total(&self) -> usize {
        self.as_array().iter().sum()
    }

    pub fn aligned(&self) -> usize {
        self.t1b1 + self.t0b0
    }

    /// Fraction of bias-aligned samples; `None` for an empty split.
    pub fn aligned_ratio(&self) -> Option<f64> {
        let n = self.total();
        (n > 0).then(|| self.aligned() as f64 / n as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: GroupCounts,
    pub val: GroupCounts,
    pub test: GroupCounts,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    /// Two features, `(x_t, x_b)`.
    Toy2d,
    /// Target block, then bias block, then pure-noise coordinates.
    HighDim {
        target_dims: usize,
        bias_dims: usize,
        noise_dims: usize,
    },
}

impl SynthKind {
    pub fn dim(&self) -> usize {
        match *self {
            SynthKind::Toy2d => 2,
            SynthKind::HighDim {
                target_dims,
                bias_dims,
                noise_dims,
            } => target_dims + bias_dims + noise_dims,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub kind: SynthKind,
    pub target_margin: f64,
    pub target_noise: f64,
    pub bias_margin: f64,
    pub bias_noise: f64,
    pub counts: SplitCounts,
    pub seed: u64,
}

impl SynthSpec {
    pub fn toy2d(counts: SplitCounts, seed: u64) -> Self {
        Self {
            kind: SynthKind::Toy2d,
            target_margin: 1.0,
            target_noise: 0.6,
            bias_margin: 1.0,
            bias_noise: 0.25,
            counts,
            seed,
        }
    }

    pub fn high_dim(counts: SplitCounts, seed: u64) -> Self {
        Self {
            kind: SynthKind::HighDim {
                target_dims: 5,
                bias_dims: 5,
                noise_dims: 10,
            },
            target_margin: 0.4,
            target_noise: 1.0,
            bias_margin: 1.0,
            bias_noise: 0.5,
            counts,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("target noise", self.target_noise), ("bias noise", self.bias_noise)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("target margin", self.target_margin), ("bias margin", self.bias_margin)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.bias_margin / self.bias_noise <= self.target_margin / self.target_noise {
            return Err(Error::config(
                "bias signal must be easier than the target signal (larger margin/noise ratio)",
            ));
        }
        if let SynthKind::HighDim {
            target_dims,
            bias_dims,
            ..
        } = self.kind
        {
            if target_dims == 0 || bias_dims == 0 {
                return Err(Error::config("target and bias blocks need at least one coordinate"));
            }
        }
        let train = self.counts.train;
        if train.t1b1 + train.t1b0 == 0 || train.t0b1 + train.t0b0 == 0 {
            return Err(Error::config("training split needs samples of both classes"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    samples: Vec<BiasedSample>,
}

impl Dataset {
    pub fn new(dim: usize, samples: Vec<BiasedSample>) -> Result<Self> {
        for (i, s) in samples.iter().enumerate() {
            if s.x.len() != dim {
                return Err(Error::shape(format!(
                    "sample {i} has {} features, dataset dimension is {dim}",
                    s.x.len()
                )));
            }
            if s.y > 1 || s.t > 1 || s.b > 1 || s.y != s.t {
                return Err(Error::domain(format!("sample {i} violates y = t with binary attributes")));
            }
        }
        Ok(Self { dim, samples })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[BiasedSample] {
        &self.samples
    }

    pub fn labels(&self) -> Vec<u8> {
        self.samples.iter().map(|s| s.y).collect()
    }

    pub fn counts(&self) -> GroupCounts {
        let mut c = GroupCounts::default();
        for s in &self.samples {
            match (s.t, s.b) {
                (1, 1) => c.t1b1 += 1,
                (1, 0) => c.t1b0 += 1,
                (0, 1) => c.t0b1 += 1,
                _ => c.t0b0 += 1,
            }
        }
        c
    }

    /// Feature matrix of all samples.
    pub fn features(&self) -> Matrix {
        let data = self.samples.iter().flat_map(|s| s.x.iter().copied()).collect();
        Matrix::from_vec_unchecked(self.samples.len(), self.dim, data)
    }

    /// Feature matrix and labels of the samples at `indices`.
    pub fn batch(&self, indices: &[usize]) -> (Matrix, Vec<u8>) {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(&self.samples[i].x);
            labels.push(self.samples[i].y);
        }
        (Matrix::from_vec_unchecked(indices.len(), self.dim, data), labels)
    }

    pub fn has_both_classes(&self) -> bool {
        let pos = self.samples.iter().filter(|s| s.y == 1).count();
        pos > 0 && pos < self.samples.len()
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("dim={}\n", self.dim);
        for s in &self.samples {
            for v in &s.x {
                write!(out, "{v},").expect("write to string");
            }
            writeln!(out, "{},{},{}", s.y, s.t, s.b).expect("write to string");
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(self.to_csv().as_bytes())?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_reader(BufReader::new(std::fs::File::open(path)?))
    }

    pub fn from_reader<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines();
        let header = lines.next().transpose()?.ok_or(Error::Parse {
            line: 1,
            msg: "missing header".into(),
        })?;
        let dim: usize = header
            .trim()
            .strip_prefix("dim=")
            .and_then(|d| d.parse().ok())
            .ok_or(Error::Parse {
                line: 1,
                msg: format!("expected `dim=<d>`, found {header:?}"),
            })?;

        let mut samples = Vec::new();
        for (i, line) in lines.enumerate() {
            let line_no = i + 2;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let perr = |msg: String| Error::Parse { line: line_no, msg };
            let fields: Vec<&str> = line.trim().split(',').collect();
            if fields.len() != dim + 3 {
                return Err(perr(format!("expected {} fields, found {}", dim + 3, fields.len())));
            }
            let x = fields[..dim]
                .iter()
                .map(|f| {
                    f.parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| perr(format!("bad feature value {f:?}")))
                })
                .collect::<Result<Vec<_>>>()?;
            let bit = |f: &str| match f {
                "0" => Ok(0u8),
                "1" => Ok(1u8),
                other => Err(perr(format!("expected 0 or 1, found {other:?}"))),
            };
            let (y, t, b) = (bit(fields[dim])?, bit(fields[dim + 1])?, bit(fields[dim + 2])?);
            if y != t {
                return Err(perr("label must equal the target attribute".into()));
            }
            samples.push(BiasedSample { x, y, t, b });
        }
        Ok(Self { dim, samples })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

impl Splits {
    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        self.train.save(dir.join("train.csv"))?;
        self.val.save(dir.join("val.csv"))?;
        self.test.save(dir.join("test.csv"))?;
        Ok(())
    }

    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        Ok(Self {
            train: Dataset::load(dir.join("train.csv"))?,
            val: Dataset::load(dir.join("val.csv"))?,
            test: Dataset::load(dir.join("test.csv"))?,
        })
    }
}

fn sample_split(spec: &SynthSpec, counts: GroupCounts, rng: &mut ChaCha8Rng) -> Result<Dataset> {
    let target = |mean: f64| Normal::new(mean, spec.target_noise);
    let bias = |mean: f64| Normal::new(mean, spec.bias_noise);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let bad = |e| Error::config(format!("noise distribution: {e}"));

    let mut samples = Vec::with_capacity(counts.total());
    for (t, b) in [(1u8, 1u8), (1, 0), (0, 1), (0, 0)] {
        let dt = target(spec.target_margin * (2.0 * t as f64 - 1.0)).map_err(bad)?;
        let db = bias(spec.bias_margin * (2.0 * b as f64 - 1.0)).map_err(bad)?;
        for _ in 0..counts.get(t, b) {
            let x = match spec.kind {
                SynthKind::Toy2d => vec![dt.sample(rng), db.sample(rng)],
                SynthKind::HighDim {
                    target_dims,
                    bias_dims,
                    noise_dims,
                } => {
                    let mut x = Vec::with_capacity(target_dims + bias_dims + noise_dims);
                    x.extend((0..target_dims).map(|_| dt.sample(rng)));
                    x.extend((0..bias_dims).map(|_| db.sample(rng)));
                    x.extend((0..noise_dims).map(|_| noise.sample(rng)));
                    x
                }
            };
            samples.push(BiasedSample { x, y: t, t, b });
        }
    }
    samples.shuffle(rng);
    Dataset::new(spec.kind.dim(), samples)
}

/// Draws train/validation/test splits with exactly the requested cell counts.
pub fn generate(spec: &SynthSpec) -> Result<Splits> {
    spec.validate()?;
    let stream = |k: u64| {
        let mut r = ChaCha8Rng::seed_from_u64(spec.seed);
        r.set_stream(k);
        r
    };
    Ok(Splits {
        train: sample_split(spec, spec.counts.train, &mut stream(0))?,
        val: sample_split(spec, spec.counts.val, &mut stream(1))?,
        test: sample_split(spec, spec.counts.test, &mut stream(2))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn splits(train: GroupCounts) -> SplitCounts {
        SplitCounts {
            train,
            val: GroupCounts::balanced(20),
            test: GroupCounts::balanced(30),
        }
    }

    #[test]
    fn equal_cells_give_half_aligned() {
        let c = GroupCounts::balanced(25);
        assert_eq!(c.aligned_ratio(), Some(0.5));
        let d = generate(&SynthSpec::toy2d(splits(c), 1)).unwrap();
        let aligned = d.train.samples().iter().filter(|s| s.aligned()).count();
        assert_eq!(aligned, d.train.len() - aligned);
    }

    #[test]
    fn counts_are_exact() {
        let train = GroupCounts::new(500, 5, 5, 500);
        let d = generate(&SynthSpec::high_dim(splits(train), 3)).unwrap();
        assert_eq!(d.train.counts(), train);
        assert_eq!(d.val.counts(), GroupCounts::balanced(20));
        assert_eq!(d.test.counts(), GroupCounts::balanced(30));
        assert_eq!(d.train.dim(), 20);
        let rho = d.train.samples().iter().filter(|s| s.aligned()).count() as f64 / d.train.len() as f64;
        assert_eq!(Some(rho), train.aligned_ratio());
    }

    #[test]
    fn labels_follow_target() {
        let d = generate(&SynthSpec::toy2d(splits(GroupCounts::new(40, 3, 3, 40)), 9)).unwrap();
        for split in [&d.train, &d.val, &d.test] {
            assert!(split.samples().iter().all(|s| s.y == s.t));
        }
        for balanced in [&d.val, &d.test] {
            assert!(balanced.counts().as_array().iter().all(|&n| n > 0));
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = SynthSpec::high_dim(splits(GroupCounts::new(30, 4, 4, 30)), 17);
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        let other = SynthSpec { seed: 18, ..spec.clone() };
        assert_ne!(generate(&spec).unwrap().train, generate(&other).unwrap().train);
    }

    #[test]
    fn missing_training_class_is_rejected() {
        let spec = SynthSpec::toy2d(splits(GroupCounts::new(0, 0, 10, 10)), 0);
        assert!(matches!(generate(&spec), Err(Error::Config(_))));
    }

    #[test]
    fn bias_must_be_easier() {
        let mut spec = SynthSpec::toy2d(splits(GroupCounts::balanced(5)), 0);
        spec.bias_noise = 2.0;
        assert!(matches!(spec.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn empty_dataset_round_trips() {
        let d = Dataset::new(3, vec![]).unwrap();
        let text = d.to_csv();
        assert_eq!(text, "dim=3\n");
        assert_eq!(Dataset::from_reader(text.as_bytes()).unwrap(), d);
    }

    #[test]
    fn hand_written_file_parses() {
        let text = "dim=2\n0.5,-1.25,1,1,0\n-3,2e-3,0,0,0\n1.0,1.0,1,1,1\n";
        let d = Dataset::from_reader(text.as_bytes()).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.samples()[0], BiasedSample { x: vec![0.5, -1.25], y: 1, t: 1, b: 0 });
        assert_eq!(d.samples()[1].x, vec![-3.0, 0.002]);
        assert!(d.samples()[2].aligned());
        assert!(!d.samples()[0].aligned());
    }

    #[test]
    fn malformed_rows_report_line() {
        let text = "dim=2\n0.5,1,1,1,0\n0.5,abc,1,1,0\n";
        match Dataset::from_reader(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let text = "dim=2\n0.5,1,1,0\n";
        assert!(matches!(Dataset::from_reader(text.as_bytes()), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(
            Dataset::from_reader("dims=2\n".as_bytes()),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            Dataset::from_reader("dim=1\n0.1,1,0,0\n".as_bytes()),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn large_seeded_set_round_trips() {
        let spec = SynthSpec::high_dim(splits(GroupCounts::new(4950, 50, 50, 4950)), 5);
        let d = generate(&spec).unwrap().train;
        assert_eq!(d.len(), 10_000);
        let back = Dataset::from_reader(d.to_csv().as_bytes()).unwrap();
        for (a, b) in d.samples().iter().zip(back.samples()) {
            assert_eq!(a.x.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                       b.x.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            assert_eq!((a.y, a.t, a.b), (b.y, b.t, b.b));
        }
    }
}
