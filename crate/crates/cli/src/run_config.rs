use std::fmt;
use std::path::Path;

use lmbf::kv;
use lmbf::net::{make_ablation, AblationId, NetworkConfig};
use lmbf::patch::{DatasetTag, FeatureTag};
use lmbf::train::TrainConfig;
use lmbf::{Error, Result};

/// Network, training and pipeline settings read from one `key = value`
/// file. Pipeline keys are `dataset`, `feature` and `min_fg`.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub dataset: DatasetTag,
    pub feature: FeatureTag,
    pub min_fg: usize,
}

impl RunConfig {
    pub fn from_ablation(id: AblationId) -> Self {
        Self {
            network: make_ablation(id),
            train: TrainConfig::default(),
            dataset: DatasetTag::Synth,
            feature: FeatureTag::Vessels,
            min_fg: 1,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let entries = kv::parse(text)?;
        let mut cfg = Self::from_ablation(AblationId::Full);
        match entries.iter().find(|e| e.key == "ablation") {
            Some(e) => cfg.network = make_ablation(e.value.parse().map_err(|err: Error| e.error(err))?),
            None => cfg.network.ablation = None,
        }
        // task first so an explicit batch size wins
        for e in entries.iter().filter(|e| e.key == "task") {
            cfg.train.apply(e)?;
        }
        for e in entries.iter().filter(|e| e.key != "task") {
            match e.key.as_str() {
                "dataset" => cfg.dataset = e.value.parse().map_err(|err: Error| e.error(err))?,
                "feature" => cfg.feature = e.value.parse().map_err(|err: Error| e.error(err))?,
                "min_fg" => cfg.min_fg = e.parse()?,
                _ => {
                    if !cfg.network.apply(e)? && !cfg.train.apply(e)? {
                        return Err(e.error("unknown key"));
                    }
                }
            }
        }
        cfg.network.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    /// An ablation id (`FULL`, `BRP`, …) or the path of a config file.
    pub fn load(spec: &str) -> Result<Self> {
        if let Ok(id) = spec.parse::<AblationId>() {
            return Ok(Self::from_ablation(id));
        }
        let path = Path::new(spec);
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{spec:?} is neither an ablation id nor a readable file: {e}")))?;
        Self::parse(&text)
    }
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.network)?;
        write!(f, "{}", self.train)?;
        writeln!(f, "dataset = {}", self.dataset)?;
        writeln!(f, "feature = {}", self.feature)?;
        writeln!(f, "min_fg = {}", self.min_fg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mixed_keys_round_trip() {
        let text = "ablation = BRP\ninput_size = 64x64\nstem_channels = 4\ntask = lesion\nepochs = 3\nfeature = microaneurysms\nmin_fg = 2\n";
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.network.stem_channels, 4);
        assert!(!cfg.network.use_fmab);
        assert_eq!(cfg.train.batch_size, 4);
        assert_eq!(cfg.feature, FeatureTag::Microaneurysms);
        assert_eq!(RunConfig::parse(&cfg.to_string()).unwrap(), cfg);
    }

    #[test]
    fn unknown_key_is_rejected() {
        assert!(matches!(RunConfig::parse("momentum = 0.9\n"), Err(Error::Parse { .. })));
    }

    #[test]
    fn ablation_id_needs_no_file() {
        assert_eq!(RunConfig::load("brp").unwrap().network.ablation, Some(AblationId::Brp));
        assert!(RunConfig::load("/nonexistent/run.txt").is_err());
    }
}
