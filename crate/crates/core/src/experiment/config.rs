use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::graph::SbmSpec;
use crate::pan::{AttentionMode, FitConfig, GranularityMode, SupervisionMode};

/// Where the graph comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Sbm(SbmSpec),
    Path(PathBuf),
}

/// Every setting of one experiment run.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub known_fraction: f64,
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub split_seed: u64,
    pub fit: FitConfig,
    sbm_touched: bool,
}

/// `(key, description)` for every configuration key, in echo order.
pub const KEYS: &[(&str, &str)] = &[
    (
        "dataset",
        "`sbm` for a generated block model, otherwise a dataset directory",
    ),
    ("sbm.class_sizes", "comma-separated node count per class"),
    ("sbm.intra", "within-class edge probability"),
    ("sbm.inter", "between-class edge probability"),
    ("sbm.feature_dim", "feature dimension"),
    ("sbm.separation", "distance of class means from the origin"),
    ("sbm.noise", "feature noise standard deviation"),
    ("sbm.seed", "generator seed"),
    (
        "split.known_fraction",
        "fraction of classes that are labeled",
    ),
    (
        "split.train_fraction",
        "labeled fraction of each known class",
    ),
    (
        "split.val_fraction",
        "validation fraction of each known class",
    ),
    ("split.seed", "split seed"),
    ("model.n_pro", "prototypes per layer"),
    ("model.topk", "prototypes associated with each node"),
    ("model.layers", "number of attention layers"),
    ("model.hidden", "hidden width"),
    ("model.attention", "`group` or `uniform`"),
    ("granularity.mode", "`search` or `fixed`"),
    ("granularity.classes", "group count in fixed mode"),
    ("train.lr", "learning rate"),
    ("train.max_iterations", "maximum epochs"),
    (
        "train.refine_period",
        "epochs between refinement rounds (0 disables)",
    ),
    ("train.supervision", "`labeled` or `pseudo`"),
    (
        "train.convergence_tol",
        "relative loss change that stops training",
    ),
    (
        "train.convergence_window",
        "epochs over which the change is measured",
    ),
    ("train.seed", "training seed"),
    ("pseudo.eta", "group popularity threshold"),
    ("pseudo.gamma", "confident fraction per group"),
    ("refine.mu", "recovered fraction of intra-group pairs"),
    ("augment.edge_drop", "mean edge drop probability"),
    ("augment.feature_mask", "feature masking probability"),
];

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: DataSource::Sbm(default_sbm()),
            known_fraction: 0.8,
            train_fraction: 0.7,
            val_fraction: 0.15,
            split_seed: 0,
            fit: FitConfig::default(),
            sbm_touched: false,
        }
    }
}

/// Five classes of 60 nodes with well separated features.
pub fn default_sbm() -> SbmSpec {
    SbmSpec {
        class_sizes: vec![60; 5],
        intra_edge_prob: 0.1,
        inter_edge_prob: 0.01,
        feature_dim: 16,
        class_mean_separation: 4.0,
        feature_noise_std: 1.0,
        seed: 0,
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::invalid(format!("{key}: cannot parse {value:?}: {e}")))
}

impl ExperimentConfig {
    pub fn sbm_mut(&mut self) -> Result<&mut SbmSpec> {
        match &mut self.data {
            DataSource::Sbm(s) => Ok(s),
            DataSource::Path(p) => Err(Error::invalid(format!(
                "sbm settings given but dataset is {}",
                p.display()
            ))),
        }
    }

    /// Sets one key from its text value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        if let Some(field) = key.strip_prefix("sbm.") {
            let s = self.sbm_mut()?;
            match field {
                "class_sizes" => {
                    s.class_sizes = value
                        .split(',')
                        .map(|x| parse(key, x.trim()))
                        .collect::<Result<_>>()?
                }
                "intra" => s.intra_edge_prob = parse(key, value)?,
                "inter" => s.inter_edge_prob = parse(key, value)?,
                "feature_dim" => s.feature_dim = parse(key, value)?,
                "separation" => s.class_mean_separation = parse(key, value)?,
                "noise" => s.feature_noise_std = parse(key, value)?,
                "seed" => s.seed = parse(key, value)?,
                _ => return Err(Error::invalid(format!("unknown key {key:?}"))),
            }
            self.sbm_touched = true;
            return Ok(());
        }
        let f = &mut self.fit;
        match key {
            "dataset" => {
                if value == "sbm" {
                    if !matches!(self.data, DataSource::Sbm(_)) {
                        self.data = DataSource::Sbm(default_sbm());
                    }
                } else {
                    if self.sbm_touched {
                        return Err(Error::invalid(
                            "a dataset path and sbm settings are mutually exclusive",
                        ));
                    }
                    self.data = DataSource::Path(PathBuf::from(value));
                }
            }
            "split.known_fraction" => self.known_fraction = parse(key, value)?,
            "split.train_fraction" => self.train_fraction = parse(key, value)?,
            "split.val_fraction" => self.val_fraction = parse(key, value)?,
            "split.seed" => self.split_seed = parse(key, value)?,
            "model.n_pro" => f.n_pro = parse(key, value)?,
            "model.topk" => f.topk = parse(key, value)?,
            "model.layers" => f.layers = parse(key, value)?,
            "model.hidden" => f.hidden = parse(key, value)?,
            "model.attention" => {
                f.attention = match value {
                    "group" => AttentionMode::GroupAware,
                    "uniform" => AttentionMode::Uniform,
                    _ => {
                        return Err(Error::invalid(format!(
                            "{key}: expected group or uniform, got {value:?}"
                        )))
                    }
                }
            }
            "granularity.mode" => {
                f.granularity = match value {
                    "search" => GranularityMode::Search,
                    "fixed" => match f.granularity {
                        GranularityMode::Fixed(n) => GranularityMode::Fixed(n),
                        GranularityMode::Search => GranularityMode::Fixed(0),
                    },
                    _ => {
                        return Err(Error::invalid(format!(
                            "{key}: expected search or fixed, got {value:?}"
                        )))
                    }
                }
            }
            "granularity.classes" if value == "none" => {
                if let GranularityMode::Fixed(_) = f.granularity {
                    return Err(Error::invalid(
                        "granularity.classes = none conflicts with fixed mode",
                    ));
                }
            }
            "granularity.classes" => {
                let n = parse(key, value)?;
                f.granularity = GranularityMode::Fixed(n);
            }
            "train.lr" => f.lr = parse(key, value)?,
            "train.max_iterations" => f.max_iterations = parse(key, value)?,
            "train.refine_period" => f.refine_period = parse(key, value)?,
            "train.supervision" => {
                f.supervision = match value {
                    "labeled" => SupervisionMode::LabeledOnly,
                    "pseudo" => SupervisionMode::WithPseudo,
                    _ => {
                        return Err(Error::invalid(format!(
                            "{key}: expected labeled or pseudo, got {value:?}"
                        )))
                    }
                }
            }
            "train.convergence_tol" => f.convergence_tol = parse(key, value)?,
            "train.convergence_window" => f.convergence_window = parse(key, value)?,
            "train.seed" => f.seed = parse(key, value)?,
            "pseudo.eta" => f.eta = parse(key, value)?,
            "pseudo.gamma" => f.gamma = parse(key, value)?,
            "refine.mu" => f.mu = parse(key, value)?,
            "augment.edge_drop" => f.edge_drop = parse(key, value)?,
            "augment.feature_mask" => f.feature_mask = parse(key, value)?,
            _ => return Err(Error::invalid(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Every key with its current value, in [`KEYS`] order. Block-model keys
    /// are present only when the dataset is generated.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let f = &self.fit;
        let mut out = Vec::with_capacity(KEYS.len());
        for &(key, _) in KEYS {
            let value = match key {
                "dataset" => match &self.data {
                    DataSource::Sbm(_) => "sbm".to_string(),
                    DataSource::Path(p) => p.display().to_string(),
                },
                _ if key.starts_with("sbm.") => {
                    let DataSource::Sbm(s) = &self.data else {
                        continue;
                    };
                    match key {
                        "sbm.class_sizes" => s
                            .class_sizes
                            .iter()
                            .map(usize::to_string)
                            .collect::<Vec<_>>()
                            .join(","),
                        "sbm.intra" => s.intra_edge_prob.to_string(),
                        "sbm.inter" => s.inter_edge_prob.to_string(),
                        "sbm.feature_dim" => s.feature_dim.to_string(),
                        "sbm.separation" => s.class_mean_separation.to_string(),
                        "sbm.noise" => s.feature_noise_std.to_string(),
                        "sbm.seed" => s.seed.to_string(),
                        _ => unreachable!("key table and echo disagree on {key}"),
                    }
                }
                "split.known_fraction" => self.known_fraction.to_string(),
                "split.train_fraction" => self.train_fraction.to_string(),
                "split.val_fraction" => self.val_fraction.to_string(),
                "split.seed" => self.split_seed.to_string(),
                "model.n_pro" => f.n_pro.to_string(),
                "model.topk" => f.topk.to_string(),
                "model.layers" => f.layers.to_string(),
                "model.hidden" => f.hidden.to_string(),
                "model.attention" => match f.attention {
                    AttentionMode::GroupAware => "group",
                    AttentionMode::Uniform => "uniform",
                }
                .to_string(),
                "granularity.mode" => match f.granularity {
                    GranularityMode::Search => "search",
                    GranularityMode::Fixed(_) => "fixed",
                }
                .to_string(),
                "granularity.classes" => match f.granularity {
                    GranularityMode::Search => "none".to_string(),
                    GranularityMode::Fixed(n) => n.to_string(),
                },
                "train.lr" => f.lr.to_string(),
                "train.max_iterations" => f.max_iterations.to_string(),
                "train.refine_period" => f.refine_period.to_string(),
                "train.supervision" => match f.supervision {
                    SupervisionMode::LabeledOnly => "labeled",
                    SupervisionMode::WithPseudo => "pseudo",
                }
                .to_string(),
                "train.convergence_tol" => f.convergence_tol.to_string(),
                "train.convergence_window" => f.convergence_window.to_string(),
                "train.seed" => f.seed.to_string(),
                "pseudo.eta" => f.eta.to_string(),
                "pseudo.gamma" => f.gamma.to_string(),
                "refine.mu" => f.mu.to_string(),
                "augment.edge_drop" => f.edge_drop.to_string(),
                "augment.feature_mask" => f.feature_mask.to_string(),
                _ => unreachable!("key table and echo disagree on {key}"),
            };
            out.push((key, value));
        }
        out
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse_text(text: &str, origin: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text, origin)?;
        Ok(cfg)
    }

    /// Applies `key = value` lines on top of the current settings.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Parse {
                    file: origin.to_string(),
                    line: no + 1,
                    msg: format!("expected `key = value`, got {line:?}"),
                });
            };
            self.set(key.trim(), value).map_err(|e| Error::Parse {
                file: origin.to_string(),
                line: no + 1,
                msg: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_text(&text, &path.display().to_string())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        if let DataSource::Sbm(s) = &self.data {
            s.validate()?;
        }
        if !(self.known_fraction > 0.0 && self.known_fraction < 1.0) {
            return Err(Error::invalid(format!(
                "split.known_fraction must lie in (0, 1), got {}",
                self.known_fraction
            )));
        }
        if matches!(self.fit.granularity, GranularityMode::Fixed(0)) {
            return Err(Error::invalid(
                "granularity.mode = fixed needs granularity.classes",
            ));
        }
        self.fit.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut c = ExperimentConfig::default();
        c.set("model.n_pro", "20").unwrap();
        c.set("granularity.classes", "5").unwrap();
        c.set("model.attention", "uniform").unwrap();
        c.set("sbm.class_sizes", "10, 20,30").unwrap();
        let back = ExperimentConfig::parse_text(&c.to_text(), "echo").unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn every_key_is_settable_and_echoed() {
        let c = ExperimentConfig::default();
        let echoed: Vec<_> = c.entries().into_iter().map(|(k, _)| k).collect();
        assert_eq!(echoed, KEYS.iter().map(|k| k.0).collect::<Vec<_>>());
        for (k, v) in c.entries() {
            let mut d = c.clone();
            d.set(k, &v).unwrap();
        }
    }

    #[test]
    fn path_and_sbm_are_exclusive() {
        let mut c = ExperimentConfig::default();
        c.set("sbm.seed", "3").unwrap();
        assert!(c.set("dataset", "/data/cora").is_err());
        let mut p = ExperimentConfig::default();
        p.set("dataset", "/data/cora").unwrap();
        assert!(p.set("sbm.seed", "3").is_err());
        assert!(p.entries().iter().all(|(k, _)| !k.starts_with("sbm.")));
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = ExperimentConfig::parse_text("# c\nmodel.n_pro = 3\nmodel.hidden = x\n", "cfg")
            .unwrap_err();
        assert!(err.to_string().starts_with("cfg:3:"), "{err}");
        assert!(ExperimentConfig::parse_text("nonsense\n", "cfg").is_err());
        assert!(ExperimentConfig::parse_text("bogus.key = 1\n", "cfg").is_err());
    }

    #[test]
    fn fixed_mode_needs_count() {
        let mut c = ExperimentConfig::default();
        c.set("granularity.mode", "fixed").unwrap();
        assert!(c.validate().is_err());
        c.set("granularity.classes", "5").unwrap();
        assert!(c.validate().is_ok());
    }
}
