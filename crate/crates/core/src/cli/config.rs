//! Flat `key = value` run configuration with a fixed schema.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::attacks::Norm;
use crate::data::{block_mnist, synth_spurious, BlockConfig, Dataset, SpuriousConfig};
use crate::density_reg::{ClassRule, RegularizerSpec, Variant};
use crate::error::{Error, Result};
use crate::model::Activation;
use crate::training::{AdvTrain, OptimizerKind, TrainConfig};

/// Every accepted key with its default value.
const SCHEMA: &[(&str, &str)] = &[
    ("data", ""),
    ("generator", "block"),
    ("gen_seed", "0"),
    ("classes", "10"),
    ("side", "14"),
    ("train_per_class", "200"),
    ("test_per_class", "50"),
    ("noise", "0.3"),
    ("n", "2000"),
    ("majority_fraction", "0.95"),
    ("core_dim", "16"),
    ("spurious_dim", "16"),
    ("core_signal", "0.08"),
    ("core_noise", "0.3"),
    ("spurious_signal", "0.02"),
    ("spurious_noise", "0.002"),
    ("hidden", "64"),
    ("activation", "relu"),
    ("logit_scale", "1"),
    ("epochs", "20"),
    ("batch_size", "64"),
    ("lr", "0.0001"),
    ("optimizer", "adam"),
    ("reg", "marginal-efficient"),
    ("lambda", "0"),
    ("p", "2"),
    ("class_rule", "label"),
    ("adv_train", "none"),
    ("adv_eps", "0.3"),
    ("adv_alpha", "0.01"),
    ("adv_steps", "10"),
    ("seed", "0"),
    ("abort_on_nonfinite", "false"),
    ("out_dir", "run"),
];

/// Resolved configuration: schema defaults, then file values, then
/// command-line overrides.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            values: SCHEMA
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`, got `{raw}`", no + 1))
            })?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                Ok(())
            }
            None => Err(Error::Config(format!("unknown config key `{key}`"))),
        }
    }

    pub fn get(&self, key: &str) -> &str {
        self.values
            .get(key)
            .map(String::as_str)
            .unwrap_or_else(|| panic!("`{key}` is not a schema key"))
    }

    fn typed<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.get(key);
        raw.parse()
            .map_err(|_| Error::Config(format!("invalid value `{raw}` for `{key}`")))
    }

    /// Every key in schema order-independent (sorted) form.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.get("out_dir"))
    }

    pub fn seed(&self) -> Result<u64> {
        self.typed("seed")
    }

    pub fn hidden(&self) -> Result<Vec<usize>> {
        let raw = self.get("hidden");
        if raw.is_empty() {
            return Ok(Vec::new());
        }
        raw.split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("invalid hidden size `{s}`")))
            })
            .collect()
    }

    pub fn activation(&self) -> Result<Activation> {
        self.typed("activation")
    }

    pub fn logit_scale(&self) -> Result<f64> {
        self.typed("logit_scale")
    }

    pub fn regularizer(&self) -> Result<RegularizerSpec> {
        let spec = RegularizerSpec {
            variant: self.typed::<Variant>("reg")?,
            p: self.typed("p")?,
            lambda: self.typed("lambda")?,
            class_rule: self.typed::<ClassRule>("class_rule")?,
        };
        spec.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(spec)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let optimizer = match self.get("optimizer") {
            "adam" => OptimizerKind::adam(),
            "sgd" => OptimizerKind::Sgd,
            other => return Err(Error::Config(format!("unknown optimizer `{other}`"))),
        };
        let eps: f64 = self.typed("adv_eps")?;
        let alpha: f64 = self.typed("adv_alpha")?;
        let steps: usize = self.typed("adv_steps")?;
        let adv_train = match self.get("adv_train") {
            "none" => AdvTrain::None,
            "fgsm" => AdvTrain::Fgsm { eps },
            "pgd-l2" | "pgd-linf" => AdvTrain::Pgd {
                norm: if self.get("adv_train") == "pgd-l2" {
                    Norm::L2
                } else {
                    Norm::Linf
                },
                eps,
                alpha,
                steps,
            },
            other => return Err(Error::Config(format!("unknown adv_train `{other}`"))),
        };
        let cfg = TrainConfig {
            epochs: self.typed("epochs")?,
            batch_size: self.typed("batch_size")?,
            learning_rate: self.typed("lr")?,
            optimizer,
            reg: self.regularizer()?,
            adv_train,
            seed: self.seed()?,
            abort_on_nonfinite: self.typed("abort_on_nonfinite")?,
        };
        cfg.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn block_config(&self) -> Result<BlockConfig> {
        Ok(BlockConfig {
            classes: self.typed("classes")?,
            side: self.typed("side")?,
            train_per_class: self.typed("train_per_class")?,
            test_per_class: self.typed("test_per_class")?,
            noise: self.typed("noise")?,
            seed: self.typed("gen_seed")?,
        })
    }

    pub fn spurious_config(&self) -> Result<SpuriousConfig> {
        Ok(SpuriousConfig {
            core_dim: self.typed("core_dim")?,
            spurious_dim: self.typed("spurious_dim")?,
            majority_fraction: self.typed("majority_fraction")?,
            n: self.typed("n")?,
            core_signal: self.typed("core_signal")?,
            core_noise: self.typed("core_noise")?,
            spurious_signal: self.typed("spurious_signal")?,
            spurious_noise: self.typed("spurious_noise")?,
            seed: self.typed("gen_seed")?,
        })
    }

    /// The training set: loaded from `data` when set, generated otherwise.
    pub fn training_data(&self) -> Result<Dataset> {
        let dir = self.get("data");
        if !dir.is_empty() {
            return Dataset::load_dir(dir);
        }
        match self.get("generator") {
            "block" => Ok(block_mnist(&self.block_config()?)?.0),
            "spurious" => synth_spurious(&self.spurious_config()?),
            other => Err(Error::Config(format!("unknown generator `{other}`"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comments_blank_lines_and_overrides() {
        let mut cfg = RunConfig::parse("# header\n\nlambda = 0.1  # trailing\nepochs=3\n").unwrap();
        assert_eq!(cfg.get("lambda"), "0.1");
        cfg.set("lambda", "0.2").unwrap();
        assert_eq!(cfg.regularizer().unwrap().lambda, 0.2);
        assert_eq!(cfg.train_config().unwrap().epochs, 3);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_errors() {
        assert!(matches!(RunConfig::parse("lamda = 1"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse("just text"), Err(Error::Config(_))));
        let cfg = RunConfig::parse("epochs = many").unwrap();
        assert!(matches!(cfg.train_config(), Err(Error::Config(_))));
    }

    #[test]
    fn resolved_text_parses_back_identically() {
        let cfg = RunConfig::parse("reg = marginal-stable\nhidden = 32,16\n").unwrap();
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
        assert_eq!(cfg.hidden().unwrap(), vec![32, 16]);
    }
}
