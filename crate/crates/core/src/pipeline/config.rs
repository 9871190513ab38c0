use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classify::ClassifierConfig;
use crate::descriptors::{DescriptorKind, VolumeSpec};
use crate::encode::{mix_seed, BowConfig, SelectionConfig};
use crate::error::{Error, Result};
use crate::flow::FlowConfig;
use crate::localize::LocalizeConfig;
use crate::tracking::TrackerConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "2d")]
    TwoD,
    #[serde(rename = "3d")]
    ThreeD,
}

impl Mode {
    pub fn kinds(self) -> &'static [DescriptorKind] {
        match self {
            Mode::TwoD => &DescriptorKind::KINDS_2D,
            Mode::ThreeD => &DescriptorKind::KINDS_3D,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Mode::TwoD => 2,
            Mode::ThreeD => 3,
        }
    }

    pub fn from_code(c: u8) -> Result<Self> {
        match c {
            2 => Ok(Mode::TwoD),
            3 => Ok(Mode::ThreeD),
            _ => Err(Error::Format(format!("unknown mode code {c}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::TwoD => "2d",
            Mode::ThreeD => "3d",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "2d" => Ok(Mode::TwoD),
            "3d" => Ok(Mode::ThreeD),
            _ => Err(Error::Config(format!("mode must be 2d or 3d, got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionSettings {
    pub enabled: bool,
    #[serde(flatten)]
    pub params: SelectionConfig,
}

impl Default for SelectionSettings {
    fn default() -> Self {
        SelectionSettings { enabled: false, params: SelectionConfig { candidates: 5, ..SelectionConfig::default() } }
    }
}

/// Every tunable of the pipeline. Sub-config seeds are derived from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub mode: Mode,
    pub seed: u64,
    pub flow: FlowConfig,
    pub tracker_2d: TrackerConfig,
    pub tracker_3d: TrackerConfig,
    pub localize_2d: LocalizeConfig,
    pub localize_3d: LocalizeConfig,
    pub volume: VolumeSpec,
    pub bow: BowConfig,
    pub selection: SelectionSettings,
    pub classifier: ClassifierConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            mode: Mode::TwoD,
            seed: 0,
            flow: FlowConfig::default(),
            tracker_2d: TrackerConfig::default_2d(),
            tracker_3d: TrackerConfig::default_3d(),
            localize_2d: LocalizeConfig::default_2d(),
            localize_3d: LocalizeConfig::default_3d(),
            volume: VolumeSpec::default(),
            bow: BowConfig::default(),
            selection: SelectionSettings::default(),
            classifier: ClassifierConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::from_json(&text)
    }

    /// Parses a possibly partial config: every key missing at any depth
    /// keeps its default value.
    pub fn from_json(text: &str) -> Result<Self> {
        let user: serde_json::Value = serde_json::from_str(text)?;
        let mut merged = serde_json::to_value(PipelineConfig::default())?;
        merge(&mut merged, user);
        let cfg: PipelineConfig = serde_json::from_value(merged)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.tracker_2d.validate()?;
        self.tracker_3d.validate()?;
        self.localize_2d.validate()?;
        self.localize_3d.validate()?;
        self.volume.validate()?;
        self.classifier.validate()?;
        if self.bow.words == 0 {
            return Err(Error::Config("codebooks need at least one word".into()));
        }
        if self.volume.temporal != self.tracker().trajectory_len {
            return Err(Error::Config(format!(
                "volume spans {} frames but trajectories have {} steps",
                self.volume.temporal,
                self.tracker().trajectory_len
            )));
        }
        if self.selection.enabled {
            self.selection.params.validate(self.bow.words)?;
        }
        Ok(())
    }

    pub fn tracker(&self) -> &TrackerConfig {
        match self.mode {
            Mode::TwoD => &self.tracker_2d,
            Mode::ThreeD => &self.tracker_3d,
        }
    }

    pub fn localize(&self) -> &LocalizeConfig {
        match self.mode {
            Mode::TwoD => &self.localize_2d,
            Mode::ThreeD => &self.localize_3d,
        }
    }

    pub fn kinds(&self) -> &'static [DescriptorKind] {
        self.mode.kinds()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.kinds().iter().map(|k| k.dim(&self.volume)).collect()
    }

    pub fn bow_seeded(&self) -> BowConfig {
        BowConfig { seed: mix_seed(self.seed, 1, 0), ..self.bow.clone() }
    }

    pub fn selection_seeded(&self) -> SelectionConfig {
        SelectionConfig { seed: mix_seed(self.seed, 2, 0), ..self.selection.params.clone() }
    }

    pub fn classifier_seeded(&self) -> ClassifierConfig {
        ClassifierConfig { seed: mix_seed(self.seed, 3, 0), ..self.classifier.clone() }
    }

    /// Seed for the pool drawn when selection is disabled.
    pub fn pool_seed(&self) -> u64 {
        mix_seed(self.seed, 4, 0)
    }
}

fn merge(base: &mut serde_json::Value, over: serde_json::Value) {
    match (base, over) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
