//! Acoustic features: native 240-d log mel filterbank (+deltas) and import
//! of precomputed external embeddings from the binary feature-file format.

mod fbank;
mod file;

pub use fbank::{add_deltas, fbank240, fbank80, FbankConfig, WindowKind};
pub use file::{export_features, import_external_features, import_features, FEATURE_MAGIC};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Feature stream kind. `Fbank240` is computed natively at a 10 ms shift;
/// `External` holds imported 768-d embeddings at a 20 ms shift.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Fbank240,
    External,
}

impl FeatureKind {
    pub fn expected_dim(self) -> usize {
        match self {
            FeatureKind::Fbank240 => 240,
            FeatureKind::External => 768,
        }
    }

    pub(crate) fn code(self) -> u32 {
        match self {
            FeatureKind::Fbank240 => 0,
            FeatureKind::External => 1,
        }
    }

    pub(crate) fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(FeatureKind::Fbank240),
            1 => Ok(FeatureKind::External),
            other => Err(Error::format(format!("unknown feature kind code {other}"))),
        }
    }
}

/// A T x D frame-level feature matrix with frame-shift metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    /// Row-major T x D values.
    pub values: Tensor<f64>,
    /// Frame shift in seconds.
    pub frame_shift: f64,
    pub kind: FeatureKind,
}

impl FeatureMatrix {
    pub fn new(values: Tensor<f64>, frame_shift: f64, kind: FeatureKind) -> Result<Self> {
        let m = FeatureMatrix {
            values,
            frame_shift,
            kind,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn num_frames(&self) -> usize {
        self.values.rows()
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.shape().len() != 2 {
            return Err(Error::shape("feature matrix must be 2-D"));
        }
        if self.frame_shift <= 0.0 {
            return Err(Error::argument("frame shift must be positive"));
        }
        if !self.values.all_finite() {
            return Err(Error::argument("feature matrix contains non-finite values"));
        }
        if self.dim() != self.kind.expected_dim() {
            return Err(Error::format(format!(
                "feature kind {:?} requires {} dims, got {}",
                self.kind,
                self.kind.expected_dim(),
                self.dim()
            )));
        }
        Ok(())
    }
}
