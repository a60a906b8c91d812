//! Flat `key = value` experiment configuration with dotted keys.
//!
//! Values are resolved in this order, later sources winning: built-in defaults,
//! the preset named by `data.preset`, the config file, then command-line flags.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use adaabc::council::CouncilConfig;
use adaabc::losses::GceConfig;
use adaabc::nn::Algorithm;
use adaabc::presets::Preset;
use adaabc::synth::{GroupCounts, SynthKind, SynthSpec};
use adaabc::trainer::{Method, TrainerConfig};

use crate::error::{CliError, Result};

/// Every accepted key, in the order they are applied and written.
pub const KEYS: &[(&str, &str)] = &[
    ("data.preset", "start from a named preset: sbp99, sbp95, sbp90 or toy2d"),
    ("data.dir", "load train/val/test files from this directory instead of generating"),
    ("data.kind", "toy2d or highdim"),
    ("data.target_dims", "highdim: coordinates carrying the target"),
    ("data.bias_dims", "highdim: coordinates carrying the bias"),
    ("data.noise_dims", "highdim: pure-noise coordinates"),
    ("data.target_margin", "class mean offset on the target coordinates"),
    ("data.target_noise", "noise scale on the target coordinates"),
    ("data.bias_margin", "class mean offset on the bias coordinates"),
    ("data.bias_noise", "noise scale on the bias coordinates"),
    ("data.train", "training cell counts t1b1,t1b0,t0b1,t0b0"),
    ("data.val", "validation cell counts"),
    ("data.test", "test cell counts"),
    ("data.seed", "data generation seed"),
    ("train.method", "ada_abc, erm, agree_only or disagree_only"),
    ("train.lambda", "weight of the disagreement term"),
    ("train.epsilon", "offset inside the opposite-prediction log"),
    ("train.optimizer", "adam or sgd"),
    ("train.lr", "learning rate for both models"),
    ("train.batch_size", "samples per step"),
    ("train.max_epochs", "epoch budget"),
    ("train.patience", "stop after this many epochs without a validation gain; 0 disables"),
    ("train.seed", "initialization and shuffling seed"),
    ("train.hidden", "hidden widths of the debiasing model, comma separated"),
    ("train.trunk", "council trunk widths, comma separated"),
    ("council.heads", "number of council heads"),
    ("council.subset_fraction", "share of the training set each head sees"),
    ("council.with_replacement", "draw head subsets with replacement"),
    ("council.q", "generalized cross entropy exponent"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub preset: Option<Preset>,
    pub data_dir: Option<PathBuf>,
    pub synth: SynthSpec,
    pub trainer: TrainerConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            preset: None,
            data_dir: None,
            synth: SynthSpec::high_dim(Preset::Sbp99.counts(), 0),
            trainer: TrainerConfig::default(),
        }
    }
}

/// Raw `key -> value` pairs, checked against [`KEYS`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides(BTreeMap<String, String>);

fn known(key: &str) -> bool {
    KEYS.iter().any(|(k, _)| *k == key)
}

impl Overrides {
    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        if !known(key) {
            return Err(CliError::config(format!("unknown key {key:?}")));
        }
        self.0.insert(key.to_string(), value.into());
        Ok(())
    }

    /// Parses `key=value`.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| CliError::config(format!("expected key=value, got {pair:?}")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    /// Layers `other` on top of `self`.
    pub fn extend(&mut self, other: &Overrides) {
        self.0.extend(other.0.clone());
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut out = Overrides::default();
        for (i, raw) in text.lines().enumerate() {
            let err = |msg: String| CliError::ConfigFile {
                path: path.to_path_buf(),
                line: i + 1,
                msg,
            };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key = value, got {line:?}")))?;
            let k = k.trim();
            if !known(k) {
                return Err(err(format!("unknown key {k:?}")));
            }
            if out.0.contains_key(k) {
                return Err(err(format!("duplicate key {k:?}")));
            }
            out.0.insert(k.to_string(), v.trim().to_string());
        }
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text, path)
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| CliError::config(format!("{key}: cannot parse {value:?}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn parse_counts(key: &str, value: &str) -> Result<GroupCounts> {
    match parse_list(key, value)?.as_slice() {
        &[a, b, c, d] => Ok(GroupCounts::new(a, b, c, d)),
        _ => Err(CliError::config(format!("{key}: need four counts t1b1,t1b0,t0b1,t0b0"))),
    }
}

fn join(values: &[usize]) -> String {
    values.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

fn counts_str(c: &GroupCounts) -> String {
    join(&c.as_array())
}

impl ExperimentConfig {
    pub fn resolve(overrides: &Overrides) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        if let Some(p) = overrides.get("data.preset") {
            let preset: Preset = p.parse()?;
            cfg.preset = Some(preset);
            cfg.synth = preset.synth(0);
            cfg.trainer = preset.trainer(Method::AdaAbc, 0);
        }
        for (key, _) in KEYS.iter().skip(1) {
            if let Some(value) = overrides.get(key) {
                cfg.apply(key, value).map_err(|e| match e {
                    CliError::Core(e) => CliError::config(format!("{key}: {e}")),
                    e => e,
                })?;
            }
        }
        cfg.validate().map_err(|e| CliError::config(e.to_string()))?;
        Ok(cfg)
    }

    fn highdim_dims(&mut self, key: &str) -> Result<(&mut usize, &mut usize, &mut usize)> {
        match &mut self.synth.kind {
            SynthKind::HighDim {
                target_dims,
                bias_dims,
                noise_dims,
            } => Ok((target_dims, bias_dims, noise_dims)),
            SynthKind::Toy2d => Err(CliError::config(format!("{key} only applies to data.kind = highdim"))),
        }
    }

    fn apply(&mut self, key: &str, v: &str) -> Result<()> {
        let t = &mut self.trainer;
        match key {
            "data.dir" => self.data_dir = Some(PathBuf::from(v)),
            "data.kind" => {
                self.synth.kind = match v {
                    "toy2d" => SynthKind::Toy2d,
                    "highdim" => match self.synth.kind {
                        k @ SynthKind::HighDim { .. } => k,
                        SynthKind::Toy2d => SynthSpec::high_dim(self.synth.counts, 0).kind,
                    },
                    _ => return Err(CliError::config(format!("data.kind: unknown kind {v:?}"))),
                }
            }
            "data.target_dims" => *self.highdim_dims(key)?.0 = parse(key, v)?,
            "data.bias_dims" => *self.highdim_dims(key)?.1 = parse(key, v)?,
            "data.noise_dims" => *self.highdim_dims(key)?.2 = parse(key, v)?,
            "data.target_margin" => self.synth.target_margin = parse(key, v)?,
            "data.target_noise" => self.synth.target_noise = parse(key, v)?,
            "data.bias_margin" => self.synth.bias_margin = parse(key, v)?,
            "data.bias_noise" => self.synth.bias_noise = parse(key, v)?,
            "data.train" => self.synth.counts.train = parse_counts(key, v)?,
            "data.val" => self.synth.counts.val = parse_counts(key, v)?,
            "data.test" => self.synth.counts.test = parse_counts(key, v)?,
            "data.seed" => self.synth.seed = parse(key, v)?,
            "train.method" => t.method = v.parse()?,
            "train.lambda" => t.lambda = parse(key, v)?,
            "train.epsilon" => t.epsilon = parse(key, v)?,
            "train.optimizer" => {
                t.optimizer = match v {
                    "adam" => Algorithm::Adam,
                    "sgd" => Algorithm::Sgd,
                    _ => return Err(CliError::config(format!("train.optimizer: unknown optimizer {v:?}"))),
                }
            }
            "train.lr" => t.lr = parse(key, v)?,
            "train.batch_size" => t.batch_size = parse(key, v)?,
            "train.max_epochs" => t.max_epochs = parse(key, v)?,
            "train.patience" => t.patience = parse(key, v)?,
            "train.seed" => t.seed = parse(key, v)?,
            "train.hidden" => t.hidden = parse_list(key, v)?,
            "train.trunk" => t.trunk = parse_list(key, v)?,
            "council.heads" => t.council.n_heads = parse(key, v)?,
            "council.subset_fraction" => t.council.subset_fraction = parse(key, v)?,
            "council.with_replacement" => t.council.with_replacement = parse(key, v)?,
            "council.q" => t.council.gce = GceConfig::new(parse(key, v)?)?,
            _ => return Err(CliError::config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.trainer.validate()?;
        if self.data_dir.is_none() {
            self.synth.validate()?;
        }
        Ok(())
    }

    /// Every resolved key with its value, preset expanded.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let s = &self.synth;
        let t = &self.trainer;
        let c: &CouncilConfig = &t.council;
        let mut out = Vec::new();
        if let Some(dir) = &self.data_dir {
            out.push(("data.dir", dir.display().to_string()));
        }
        match s.kind {
            SynthKind::Toy2d => out.push(("data.kind", "toy2d".into())),
            SynthKind::HighDim {
                target_dims,
                bias_dims,
                noise_dims,
            } => out.extend([
                ("data.kind", "highdim".into()),
                ("data.target_dims", target_dims.to_string()),
                ("data.bias_dims", bias_dims.to_string()),
                ("data.noise_dims", noise_dims.to_string()),
            ]),
        }
        out.extend([
            ("data.target_margin", s.target_margin.to_string()),
            ("data.target_noise", s.target_noise.to_string()),
            ("data.bias_margin", s.bias_margin.to_string()),
            ("data.bias_noise", s.bias_noise.to_string()),
            ("data.train", counts_str(&s.counts.train)),
            ("data.val", counts_str(&s.counts.val)),
            ("data.test", counts_str(&s.counts.test)),
            ("data.seed", s.seed.to_string()),
            ("train.method", t.method.to_string()),
            ("train.lambda", t.lambda.to_string()),
            ("train.epsilon", t.epsilon.to_string()),
            (
                "train.optimizer",
                match t.optimizer {
                    Algorithm::Adam => "adam",
                    Algorithm::Sgd => "sgd",
                }
                .into(),
            ),
            ("train.lr", t.lr.to_string()),
            ("train.batch_size", t.batch_size.to_string()),
            ("train.max_epochs", t.max_epochs.to_string()),
            ("train.patience", t.patience.to_string()),
            ("train.seed", t.seed.to_string()),
            ("train.hidden", join(&t.hidden)),
            ("train.trunk", join(&t.trunk)),
            ("council.heads", c.n_heads.to_string()),
            ("council.subset_fraction", c.subset_fraction.to_string()),
            ("council.with_replacement", c.with_replacement.to_string()),
            ("council.q", c.gce.q().to_string()),
        ]);
        out
    }

    /// A config file that resolves back to `self`.
    pub fn snapshot(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            writeln!(out, "{k} = {v}").expect("write to string");
        }
        out
    }
}

/// The key table with default values, for `--help`.
pub fn keys_help() -> String {
    let defaults = ExperimentConfig::default();
    let values: BTreeMap<&str, String> = defaults.entries().into_iter().collect();
    let mut out = String::from(
        "Configuration keys (config file lines `key = value`, or `--set key=value`).\n\
         Precedence, lowest first: defaults, data.preset, config file, flags.\n\n",
    );
    for (key, doc) in KEYS {
        let default = values.get(key).map(String::as_str).unwrap_or("unset");
        writeln!(out, "  {key:<26} {doc} [default: {default}]").expect("write to string");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resolve(pairs: &[&str]) -> Result<ExperimentConfig> {
        let mut o = Overrides::default();
        for p in pairs {
            o.set_pair(p)?;
        }
        ExperimentConfig::resolve(&o)
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(resolve(&["train.lamda=3"]), Err(CliError::Config(_))));
        let err = Overrides::parse("train.lr = 1\nfoo = 2\n", Path::new("x.cfg")).unwrap_err();
        assert!(matches!(err, CliError::ConfigFile { line: 2, .. }), "{err}");
    }

    #[test]
    fn duplicates_and_malformed_lines_are_rejected() {
        assert!(Overrides::parse("train.lr = 1\ntrain.lr = 2\n", Path::new("x")).is_err());
        assert!(Overrides::parse("train.lr 1\n", Path::new("x")).is_err());
        let ok = Overrides::parse("# comment\n\ntrain.lr = 0.5 # trailing\n", Path::new("x")).unwrap();
        assert_eq!(ok.get("train.lr"), Some("0.5"));
    }

    #[test]
    fn preset_then_overrides() {
        let cfg = resolve(&["data.preset=sbp99", "train.lambda=3"]).unwrap();
        assert_eq!(cfg.trainer.council.n_heads, 16);
        assert_eq!(cfg.trainer.lambda, 3.0);
        assert_eq!(cfg.synth.counts.train.as_array(), [5000, 50, 50, 5000]);
    }

    #[test]
    fn snapshot_resolves_to_itself() {
        for pairs in [
            vec!["data.preset=toy2d", "train.method=erm", "council.q=0.5"],
            vec!["data.preset=sbp95", "train.hidden=", "train.optimizer=sgd"],
            vec!["data.dir=/tmp/x", "train.trunk=8,4"],
        ] {
            let cfg = resolve(&pairs).unwrap();
            let back = ExperimentConfig::resolve(&Overrides::parse(&cfg.snapshot(), Path::new("s")).unwrap()).unwrap();
            assert_eq!(ExperimentConfig { preset: cfg.preset, ..back }, cfg);
        }
    }

    #[test]
    fn bad_values_are_config_errors() {
        for bad in [
            "train.lr=fast",
            "train.lr=-1",
            "council.q=2",
            "data.train=1,2,3",
            "data.kind=cube",
            "train.method=jtt",
        ] {
            let err = resolve(&[bad]).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{bad}: {err}");
        }
        assert!(resolve(&["data.preset=toy2d", "data.noise_dims=3"]).is_err());
    }

    #[test]
    fn help_lists_every_key() {
        let help = keys_help();
        for (k, _) in KEYS {
            assert!(help.contains(k));
        }
        assert!(help.contains("[default: 0.0001]"));
    }
}
