//! Job configuration: a TOML file plus `MSLC_` environment overrides.
//!
//! An override names a key path with `__` between table levels, e.g.
//! `MSLC_SCHEDULE__STEPS=200` or `MSLC_DEPTH_MAX=12`. Values are parsed as TOML literals and
//! fall back to plain strings.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::entropy::{IntensityVariant, ModelDims, OccupancyVariant, Schedule};
use crate::error::{Error, Result};
use crate::metrics::MetricConfig;
use crate::octree::MAX_DEPTH;
use crate::pointcloud::{
    generate_synthetic_stream, read_stream_file, RegionOfInterest, SceneParams, SweepStream,
};

pub const ENV_PREFIX: &str = "MSLC_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticCorpus {
    pub seed: u64,
    pub train_streams: usize,
    pub heldout_streams: usize,
    pub sweeps: usize,
    pub scene: SceneParams,
}

impl Default for SyntheticCorpus {
    fn default() -> Self {
        SyntheticCorpus {
            seed: 2024,
            train_streams: 8,
            heldout_streams: 2,
            sweeps: 6,
            scene: SceneParams::tiny(),
        }
    }
}

impl SyntheticCorpus {
    /// Training streams use seeds `seed..`, held-out streams continue after them.
    pub fn generate(&self) -> (Vec<SweepStream>, Vec<SweepStream>) {
        let gen =
            |i: usize| generate_synthetic_stream(self.seed + i as u64, self.sweeps, &self.scene);
        let train = (0..self.train_streams).map(gen).collect();
        let held = (self.train_streams..self.train_streams + self.heldout_streams)
            .map(gen)
            .collect();
        (train, held)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    /// Stream files used for training.
    pub train: Vec<PathBuf>,
    /// Stream files used for evaluation.
    pub heldout: Vec<PathBuf>,
    /// Used when no files are listed.
    pub synthetic: SyntheticCorpus,
}

impl CorpusConfig {
    pub fn load(&self) -> Result<(Vec<SweepStream>, Vec<SweepStream>)> {
        if self.train.is_empty() && self.heldout.is_empty() {
            return Ok(self.synthetic.generate());
        }
        let read = |v: &[PathBuf]| v.iter().map(read_stream_file).collect::<Result<Vec<_>>>();
        Ok((read(&self.train)?, read(&self.heldout)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JobConfig {
    pub roi_side: f64,
    pub roi_center: [f64; 3],
    pub depth_min: u32,
    pub depth_max: u32,
    pub variant: OccupancyVariant,
    pub intensity_variant: IntensityVariant,
    /// `full` or `compact`; `dims` overrides individual widths when present.
    pub preset: String,
    pub dims: Option<ModelDims>,
    pub schedule: Schedule,
    pub intensity_schedule: Option<Schedule>,
    pub corpus: CorpusConfig,
    pub metrics: MetricConfig,
    pub output_dir: PathBuf,
}

impl Default for JobConfig {
    fn default() -> Self {
        JobConfig {
            roi_side: 400.0,
            roi_center: [0.0; 3],
            depth_min: 11,
            depth_max: 16,
            variant: OccupancyVariant::OTBCC,
            intensity_variant: IntensityVariant::CC,
            preset: "full".into(),
            dims: None,
            schedule: Schedule::default(),
            intensity_schedule: None,
            corpus: CorpusConfig::default(),
            metrics: MetricConfig::default(),
            output_dir: PathBuf::from("out"),
        }
    }
}

impl JobConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Self::from_value(
            text.parse::<toml::Table>()
                .map_err(|e| Error::format(e.to_string()))?,
        )
    }

    fn from_value(t: toml::Table) -> Result<Self> {
        let c: JobConfig = toml::Value::Table(t)
            .try_into()
            .map_err(|e: toml::de::Error| Error::format(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    /// Reads `path` (defaults when `None`), then applies overrides from `env`.
    pub fn load(
        path: Option<&Path>,
        env: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self> {
        let mut t = match path {
            Some(p) => std::fs::read_to_string(p)?
                .parse::<toml::Table>()
                .map_err(|e| Error::format(format!("{}: {e}", p.display())))?,
            None => toml::Table::new(),
        };
        let mut overrides: Vec<(String, String)> = env
            .into_iter()
            .filter(|(k, _)| k.starts_with(ENV_PREFIX))
            .collect();
        overrides.sort();
        for (k, v) in overrides {
            let path: Vec<String> = k[ENV_PREFIX.len()..]
                .split("__")
                .map(str::to_ascii_lowercase)
                .collect();
            set_path(&mut t, &path, parse_literal(&v))?;
        }
        Self::from_value(t)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(1..=MAX_DEPTH).contains(&self.depth_min)
            || !(1..=MAX_DEPTH).contains(&self.depth_max)
            || self.depth_min > self.depth_max
        {
            return bad(format!(
                "depth range {}..={} outside 1..=16",
                self.depth_min, self.depth_max
            ));
        }
        for s in std::iter::once(&self.schedule).chain(&self.intensity_schedule) {
            if !(s.lr > 0.0) || s.batch == 0 {
                return bad(format!("schedule needs lr > 0 and batch > 0: {s:?}"));
            }
        }
        self.roi()?;
        self.model_dims()?;
        self.metrics.validate()
    }

    pub fn roi(&self) -> Result<RegionOfInterest> {
        RegionOfInterest::new(self.roi_side, self.roi_center)
    }

    pub fn depths(&self) -> std::ops::RangeInclusive<u32> {
        self.depth_min..=self.depth_max
    }

    pub fn model_dims(&self) -> Result<ModelDims> {
        if let Some(d) = &self.dims {
            return Ok(d.clone());
        }
        match self.preset.as_str() {
            "full" => Ok(ModelDims::full()),
            "compact" => Ok(ModelDims::compact()),
            p => Err(Error::InvalidArgument(format!("unknown preset {p:?}"))),
        }
    }

    pub fn intensity_schedule(&self) -> &Schedule {
        self.intensity_schedule.as_ref().unwrap_or(&self.schedule)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

fn parse_literal(v: &str) -> toml::Value {
    format!("x = {v}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("x"))
        .unwrap_or_else(|| toml::Value::String(v.to_string()))
}

fn set_path(t: &mut toml::Table, path: &[String], v: toml::Value) -> Result<()> {
    let (last, parents) = path
        .split_last()
        .ok_or_else(|| Error::InvalidArgument("empty key".into()))?;
    let mut cur = t;
    for p in parents {
        let entry = cur
            .entry(p.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| {
            Error::InvalidArgument(format!("override path crosses non-table {p}"))
        })?;
    }
    cur.insert(last.clone(), v);
    Ok(())
}
