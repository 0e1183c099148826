//! JSON run configuration. Every field is optional; command-line flags override it.

use std::path::Path;

use serde::Deserialize;
use thzcabin::{AngleAxes, Band, Error, PlanConfig, Result, Vec3};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    #[serde(flatten)]
    pub plan: PlanConfig,
    pub f_start: Option<f64>,
    pub f_stop: Option<f64>,
    pub n_freq: Option<usize>,
    pub azimuth_step_deg: Option<f64>,
    pub zenith_min_deg: Option<f64>,
    pub zenith_max_deg: Option<f64>,
    pub zenith_step_deg: Option<f64>,
    pub rx_mean: Option<[f64; 3]>,
    pub rx_stddev: Option<[f64; 3]>,
    pub rx_count: Option<usize>,
    pub rx_seed: Option<u64>,
    pub seed: Option<u64>,
    pub gamma_db: Option<f64>,
    pub p_th: Option<f64>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub mount_distance: Option<f64>,
    pub workers: Option<usize>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.plan.validate()?;
        Ok(cfg)
    }

    pub fn band(&self, flag: Option<Band>) -> Result<Band> {
        if let Some(b) = flag {
            return Ok(b);
        }
        let d = Band::default();
        Band::new(
            self.f_start.unwrap_or(d.f_start),
            self.f_stop.unwrap_or(d.f_stop),
            self.n_freq.unwrap_or(d.n_freq),
        )
    }

    pub fn axes(&self) -> Result<AngleAxes> {
        let d = AngleAxes::default();
        let axes = AngleAxes {
            azimuth_step_deg: self.azimuth_step_deg.unwrap_or(d.azimuth_step_deg),
            zenith_min_deg: self.zenith_min_deg.unwrap_or(d.zenith_min_deg),
            zenith_max_deg: self.zenith_max_deg.unwrap_or(d.zenith_max_deg),
            zenith_step_deg: self.zenith_step_deg.unwrap_or(d.zenith_step_deg),
        };
        axes.validate()?;
        Ok(axes)
    }

    /// Transmit power plus both antenna gains, the reference for reflection losses.
    pub fn reference_db(&self) -> f64 {
        self.plan.tx_power_dbm + self.plan.tx_gain_db + self.plan.rx_gain_db
    }
}

pub fn vec3(v: [f64; 3]) -> Vec3 {
    Vec3::new(v[0], v[1], v[2])
}
