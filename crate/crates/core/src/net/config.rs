use std::fmt;
use std::str::FromStr;

use super::fmab::FmabConfig;
use super::mrb::MrbConfig;
use crate::error::{Error, Result};
use crate::kv::{self, KeyValue};

/// The block used at every encoder and decoder stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockKind {
    /// Multipath residual block.
    Mrb,
    /// A single 3×3 `bn(relu(conv))`.
    Plain,
}

impl fmt::Display for BlockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BlockKind::Mrb => "mrb",
            BlockKind::Plain => "plain",
        })
    }
}

impl FromStr for BlockKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mrb" => Ok(BlockKind::Mrb),
            "plain" => Ok(BlockKind::Plain),
            _ => Err(Error::Config(format!("unknown block kind {s:?} (mrb|plain)"))),
        }
    }
}

/// Rows of the ablation ladder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AblationId {
    Brp,
    BrpMrb13,
    BrpMrb135,
    BrpMrb135P64,
    BrpMrb135P128,
    Full,
}

impl AblationId {
    pub const ALL: [AblationId; 6] = [
        AblationId::Brp,
        AblationId::BrpMrb13,
        AblationId::BrpMrb135,
        AblationId::BrpMrb135P64,
        AblationId::BrpMrb135P128,
        AblationId::Full,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AblationId::Brp => "BRP",
            AblationId::BrpMrb13 => "BRP_MRB13",
            AblationId::BrpMrb135 => "BRP_MRB135",
            AblationId::BrpMrb135P64 => "BRP_MRB135_P64",
            AblationId::BrpMrb135P128 => "BRP_MRB135_P128",
            AblationId::Full => "FULL",
        }
    }
}

impl fmt::Display for AblationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AblationId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|id| id.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown ablation id {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkConfig {
    /// `(H, W)`; the input always has 3 channels.
    pub input_size: (usize, usize),
    pub stem_channels: usize,
    pub stage_channels: [usize; 3],
    pub block: BlockKind,
    pub kernel_set: Vec<usize>,
    pub mrb_groups: usize,
    pub use_fmab: bool,
    pub level_kernels: Vec<usize>,
    pub include_global: bool,
    pub reverse_passes: usize,
    pub num_classes: usize,
    pub ablation: Option<AblationId>,
    /// Training patch size for the pipeline, if fixed by the ablation row.
    pub patch_size: Option<usize>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            input_size: (256, 256),
            stem_channels: 8,
            stage_channels: [16, 32, 32],
            block: BlockKind::Mrb,
            kernel_set: vec![1, 3, 5],
            mrb_groups: 4,
            use_fmab: true,
            level_kernels: vec![3, 5],
            include_global: true,
            reverse_passes: 1,
            num_classes: 2,
            ablation: Some(AblationId::Full),
            patch_size: None,
        }
    }
}

pub fn make_ablation(id: AblationId) -> NetworkConfig {
    let full = NetworkConfig::default();
    let cfg = match id {
        AblationId::Brp => NetworkConfig {
            block: BlockKind::Plain,
            use_fmab: false,
            ..full
        },
        AblationId::BrpMrb13 => NetworkConfig {
            kernel_set: vec![1, 3],
            use_fmab: false,
            ..full
        },
        AblationId::BrpMrb135 => NetworkConfig {
            use_fmab: false,
            ..full
        },
        AblationId::BrpMrb135P64 => NetworkConfig {
            use_fmab: false,
            patch_size: Some(64),
            ..full
        },
        AblationId::BrpMrb135P128 => NetworkConfig {
            use_fmab: false,
            patch_size: Some(128),
            ..full
        },
        AblationId::Full => full,
    };
    NetworkConfig {
        ablation: Some(id),
        ..cfg
    }
}

impl NetworkConfig {
    pub fn mrb(&self, channels: usize) -> MrbConfig {
        MrbConfig {
            channels,
            kernel_set: self.kernel_set.clone(),
            groups: self.mrb_groups,
        }
    }

    pub fn fmab(&self) -> FmabConfig {
        FmabConfig {
            channels: self.stage_channels[2],
            focal_levels: self.level_kernels.len(),
            level_kernels: self.level_kernels.clone(),
            include_global: self.include_global,
        }
    }

    /// Same architecture with other widths.
    pub fn with_widths(mut self, stem: usize, stages: [usize; 3]) -> Self {
        self.stem_channels = stem;
        self.stage_channels = stages;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.input_size;
        if h == 0 || w == 0 || h % 8 != 0 || w % 8 != 0 {
            return Err(Error::Config(format!(
                "input size {h}x{w} must be positive multiples of 8 (three 2x poolings)"
            )));
        }
        if self.stem_channels == 0 || self.stage_channels.contains(&0) {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be at least 2".into()));
        }
        if self.block == BlockKind::Mrb {
            for &c in &self.stage_channels {
                self.mrb(c).validate()?;
            }
        }
        if self.use_fmab {
            self.fmab().validate()?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let entries = kv::parse(text)?;
        let mut cfg = match entries.iter().find(|e| e.key == "ablation") {
            Some(e) => make_ablation(e.value.parse().map_err(|err: Error| e.error(err))?),
            None => NetworkConfig {
                ablation: None,
                ..Self::default()
            },
        };
        for e in &entries {
            if !cfg.apply(e)? {
                return Err(e.error("unknown network key"));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Apply one entry; returns `false` if the key is not a network key.
    pub fn apply(&mut self, e: &KeyValue) -> Result<bool> {
        match e.key.as_str() {
            "ablation" => {}
            "input_size" => {
                let (h, w) = e
                    .value
                    .split_once('x')
                    .ok_or_else(|| e.error("expected HxW"))?;
                self.input_size = (
                    h.trim().parse().map_err(|err| e.error(err))?,
                    w.trim().parse().map_err(|err| e.error(err))?,
                );
            }
            "stem_channels" => self.stem_channels = e.parse()?,
            "stage_channels" => {
                self.stage_channels = e
                    .parse_list::<usize>()?
                    .try_into()
                    .map_err(|_| e.error("expected exactly three stage widths"))?
            }
            "block" => self.block = e.value.parse().map_err(|err: Error| e.error(err))?,
            "kernel_set" => self.kernel_set = e.parse_list()?,
            "mrb_groups" => self.mrb_groups = e.parse()?,
            "use_fmab" => self.use_fmab = e.parse()?,
            "level_kernels" => self.level_kernels = e.parse_list()?,
            "include_global" => self.include_global = e.parse()?,
            "reverse_passes" => self.reverse_passes = e.parse()?,
            "num_classes" => self.num_classes = e.parse()?,
            "patch_size" => {
                self.patch_size = match e.value.as_str() {
                    "none" => None,
                    _ => Some(e.parse()?),
                }
            }
            _ => return Ok(false),
        }
        Ok(true)
    }
}

impl fmt::Display for NetworkConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(id) = self.ablation {
            writeln!(f, "ablation = {id}")?;
        }
        writeln!(f, "input_size = {}x{}", self.input_size.0, self.input_size.1)?;
        writeln!(f, "stem_channels = {}", self.stem_channels)?;
        writeln!(f, "stage_channels = {}", kv::join(&self.stage_channels))?;
        writeln!(f, "block = {}", self.block)?;
        writeln!(f, "kernel_set = {}", kv::join(&self.kernel_set))?;
        writeln!(f, "mrb_groups = {}", self.mrb_groups)?;
        writeln!(f, "use_fmab = {}", self.use_fmab)?;
        writeln!(f, "level_kernels = {}", kv::join(&self.level_kernels))?;
        writeln!(f, "include_global = {}", self.include_global)?;
        writeln!(f, "reverse_passes = {}", self.reverse_passes)?;
        writeln!(f, "num_classes = {}", self.num_classes)?;
        match self.patch_size {
            Some(p) => writeln!(f, "patch_size = {p}"),
            None => writeln!(f, "patch_size = none"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ablation_rows() {
        assert!(make_ablation(AblationId::Full).use_fmab);
        assert!(!make_ablation(AblationId::Brp).use_fmab);
        assert_eq!(make_ablation(AblationId::Brp).block, BlockKind::Plain);
        assert_eq!(make_ablation(AblationId::BrpMrb13).kernel_set, vec![1, 3]);
        assert_eq!(make_ablation(AblationId::BrpMrb135P64).patch_size, Some(64));
        assert_eq!("brp_mrb13".parse::<AblationId>().unwrap(), AblationId::BrpMrb13);
        assert!("BRP_X".parse::<AblationId>().is_err());
    }

    #[test]
    fn text_round_trip() {
        for id in AblationId::ALL {
            let cfg = make_ablation(id).with_widths(4, [4, 8, 8]);
            assert_eq!(NetworkConfig::parse(&cfg.to_string()).unwrap(), cfg);
        }
    }

    #[test]
    fn parse_overrides_ablation_base() {
        let cfg = NetworkConfig::parse("stage_channels = 8,16,16\nablation = BRP\n").unwrap();
        assert_eq!(cfg.block, BlockKind::Plain);
        assert_eq!(cfg.stage_channels, [8, 16, 16]);
        assert!(NetworkConfig::parse("stage_channels = 8,16\n").is_err());
        assert!(NetworkConfig::parse("colour = blue\n").is_err());
        assert!(NetworkConfig::parse("input_size = 100x100\n").is_err());
        assert!(NetworkConfig::parse("stage_channels = 6,16,16\n").is_err());
    }
}
