//! Versioned JSON checkpoint of a posterior. The factor is rebuilt on load.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::GpPosterior;
use crate::error::{Error, Result};
use crate::kernel::KernelSpec;

const FORMAT: &str = "aogp-posterior";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PosteriorCheckpoint {
    pub format: String,
    pub version: u32,
    pub kernel: KernelSpec,
    pub noise_variance: f64,
    pub points: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
    pub counts: Vec<u32>,
}

impl PosteriorCheckpoint {
    pub fn from_posterior(gp: &GpPosterior) -> Self {
        PosteriorCheckpoint {
            format: FORMAT.to_string(),
            version: VERSION,
            kernel: *gp.spec(),
            noise_variance: gp.noise_variance(),
            points: gp.points().map(<[f64]>::to_vec).collect(),
            targets: gp.targets().to_vec(),
            counts: gp.counts().to_vec(),
        }
    }

    pub fn to_posterior(&self) -> Result<GpPosterior> {
        if self.format != FORMAT || self.version != VERSION {
            return Err(Error::input(format!(
                "unsupported checkpoint {} v{} (expected {FORMAT} v{VERSION})",
                self.format, self.version
            )));
        }
        GpPosterior::fit_weighted(
            self.kernel,
            self.noise_variance,
            &self.points,
            &self.targets,
            &self.counts,
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

impl GpPosterior {
    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        PosteriorCheckpoint::load(path)?.to_posterior()
    }
}
