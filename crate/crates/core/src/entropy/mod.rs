//! Probability models over occupancy bytes and intensities.

mod features;
mod histogram;
mod intensity;
mod occupancy;
mod train;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use features::{node_context, CONTEXT_DIM};
pub use histogram::Histogram;
pub use intensity::{IntensityContext, IntensityModel, NeighborBatch, INTENSITY_FEATURES};
pub use occupancy::{OccupancyModel, OccupancySession};
pub use train::{
    corpus_hash, intensity_loss, intensity_relu_signature, intensity_samples, model_card,
    occupancy_loss, occupancy_relu_signature, occupancy_samples, smoothed, train_intensity,
    train_occupancy, IntensitySample, OccupancySample, Schedule, SweepContext, TrainReport,
};

use crate::error::Error;

pub const SYMBOLS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OccupancyVariant {
    /// Per-level empirical histogram.
    #[serde(rename = "histogram", alias = "Histogram")]
    Histogram,
    /// Ancestral context plus the previous sweep's corresponding byte.
    O,
    /// Adds top-down features of the exactly matching previous node.
    OT,
    /// Adds bottom-up aggregation over the previous tree.
    OTB,
    /// Adds per-level continuous convolution over nearby previous nodes.
    OTBCC,
}

impl OccupancyVariant {
    pub const ALL: [OccupancyVariant; 5] = [
        OccupancyVariant::Histogram,
        OccupancyVariant::O,
        OccupancyVariant::OT,
        OccupancyVariant::OTB,
        OccupancyVariant::OTBCC,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OccupancyVariant::Histogram => "histogram",
            OccupancyVariant::O => "O",
            OccupancyVariant::OT => "OT",
            OccupancyVariant::OTB => "OTB",
            OccupancyVariant::OTBCC => "OTBCC",
        }
    }

    pub fn is_neural(self) -> bool {
        self != OccupancyVariant::Histogram
    }

    pub fn top_down(self) -> bool {
        matches!(
            self,
            OccupancyVariant::OT | OccupancyVariant::OTB | OccupancyVariant::OTBCC
        )
    }

    pub fn bottom_up(self) -> bool {
        matches!(self, OccupancyVariant::OTB | OccupancyVariant::OTBCC)
    }

    pub fn conv(self) -> bool {
        self == OccupancyVariant::OTBCC
    }
}

impl fmt::Display for OccupancyVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OccupancyVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Self::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown occupancy variant {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IntensityVariant {
    /// Raw bytes, 8 bits per point.
    Passthrough,
    /// Nearest previous point only.
    #[serde(rename = "MLP1", alias = "Mlp1")]
    Mlp1,
    /// Continuous convolution over the k nearest previous points.
    CC,
}

impl IntensityVariant {
    pub const ALL: [IntensityVariant; 3] = [
        IntensityVariant::Passthrough,
        IntensityVariant::Mlp1,
        IntensityVariant::CC,
    ];

    pub fn name(self) -> &'static str {
        match self {
            IntensityVariant::Passthrough => "passthrough",
            IntensityVariant::Mlp1 => "MLP1",
            IntensityVariant::CC => "CC",
        }
    }
}

impl fmt::Display for IntensityVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for IntensityVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Self::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown intensity variant {s:?}")))
    }
}

/// Layer widths.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelDims {
    /// Ancestral feature width.
    pub hidden: usize,
    /// Temporal (previous-sweep) feature width.
    pub temporal: usize,
    /// Bottom-up message width.
    pub message: usize,
    pub kernel_hidden: [usize; 2],
    /// Ancestral aggregation rounds.
    pub rounds: usize,
    /// Neighbors for continuous convolution.
    pub knn: usize,
    pub header_hidden: usize,
    pub intensity_hidden: usize,
}

impl ModelDims {
    pub fn full() -> Self {
        ModelDims {
            hidden: 128,
            temporal: 64,
            message: 32,
            kernel_hidden: [16, 32],
            rounds: 4,
            knn: 5,
            header_hidden: 128,
            intensity_hidden: 128,
        }
    }

    /// Narrow layers for CPU-scale experiments; same topology.
    pub fn compact() -> Self {
        ModelDims {
            hidden: 32,
            temporal: 16,
            message: 8,
            kernel_hidden: [16, 32],
            rounds: 4,
            knn: 5,
            header_hidden: 32,
            intensity_hidden: 32,
        }
    }

    fn to_meta(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.hidden,
            self.temporal,
            self.message,
            self.kernel_hidden[0],
            self.kernel_hidden[1],
            self.rounds,
            self.knn,
            self.header_hidden,
            self.intensity_hidden
        )
    }

    fn from_meta(s: &str) -> Result<Self, Error> {
        let v: Vec<usize> = s
            .split(',')
            .map(|x| x.parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|_| Error::Model(format!("bad dims {s:?}")))?;
        if v.len() != 9 || v.iter().any(|&x| x == 0) {
            return Err(Error::Model(format!("bad dims {s:?}")));
        }
        Ok(ModelDims {
            hidden: v[0],
            temporal: v[1],
            message: v[2],
            kernel_hidden: [v[3], v[4]],
            rounds: v[5],
            knn: v[6],
            header_hidden: v[7],
            intensity_hidden: v[8],
        })
    }
}

impl Default for ModelDims {
    fn default() -> Self {
        Self::full()
    }
}

/// Gain applied to the output layer at initialization so fresh models start near uniform.
pub const OUTPUT_INIT_GAIN: f64 = 0.01;
