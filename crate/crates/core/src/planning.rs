//! System-level link evaluation: received power, SINR, coverage and rate.
//!
//! Per-link power is the non-coherent sum over the traced paths (or a
//! statistical path-loss law). Each receiver is served by one transmitter
//! chosen by the association rule and sees every other transmitter as
//! interference. Coverage is the weighted fraction of receivers whose SINR
//! strictly exceeds the threshold; unreachable receivers never count.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::{g6, write_line, VERSION_HEADER};
use crate::geometry::{Aabb, Vec3};
use crate::materials::Polarization;
use crate::num::{from_db, fspl_db, to_db, Real};
use crate::raytrace::{trace, HumanBox, TraceConfig};
use crate::scene::Scene;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real", tag = "kind", rename_all = "lowercase")]
pub enum PathLossModel<T: Real> {
    /// Power sum over ray-traced paths.
    Raytraced,
    /// Free-space plus absorption, with a LoS probability and an extra loss
    /// applied to the NLoS share.
    Statistical { p_los: T, nlos_excess_db: T },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real", tag = "kind", rename_all = "lowercase")]
pub enum Fading<T: Real> {
    Unity,
    /// Log-normal shadowing, drawn per link from `seed` and the link geometry.
    Lognormal {
        sigma_db: T,
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Association {
    #[default]
    MaxPower,
    Nearest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real", default)]
pub struct PlanConfig<T: Real> {
    pub tx_power_dbm: T,
    pub tx_gain_db: T,
    pub rx_gain_db: T,
    pub noise_psd_dbm_per_hz: T,
    pub noise_figure_db: T,
    /// Hz.
    pub bandwidth: T,
    /// Carrier, Hz.
    pub frequency: T,
    pub max_order: usize,
    pub absorption_db_per_m: T,
    pub pathloss: PathLossModel<T>,
    pub fading: Fading<T>,
    pub association: Association,
    pub human_boxes: Vec<HumanBox<T>>,
    pub polarization: Option<Polarization>,
}

impl<T: Real> Default for PlanConfig<T> {
    fn default() -> Self {
        Self {
            tx_power_dbm: T::zero(),
            tx_gain_db: T::zero(),
            rx_gain_db: T::zero(),
            noise_psd_dbm_per_hz: T::lit(-174.0),
            noise_figure_db: T::zero(),
            bandwidth: T::lit(20e9),
            frequency: T::lit(300e9),
            max_order: 2,
            absorption_db_per_m: T::lit(0.005),
            pathloss: PathLossModel::Raytraced,
            fading: Fading::Unity,
            association: Association::MaxPower,
            human_boxes: Vec::new(),
            polarization: None,
        }
    }
}

impl<T: Real> PlanConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth > T::zero()) {
            return Err(Error::InvalidInput("bandwidth must be > 0".into()));
        }
        if let Fading::Lognormal { sigma_db, .. } = self.fading {
            if !(sigma_db >= T::zero()) {
                return Err(Error::InvalidInput("fading sigma must be >= 0".into()));
            }
        }
        if let PathLossModel::Statistical { p_los, .. } = self.pathloss {
            if !(p_los >= T::zero() && p_los <= T::one()) {
                return Err(Error::InvalidInput("p_los must be in [0, 1]".into()));
            }
        }
        self.trace_config().validate()
    }

    pub fn trace_config(&self) -> TraceConfig<T> {
        TraceConfig {
            frequency: self.frequency,
            max_order: self.max_order,
            absorption_db_per_m: self.absorption_db_per_m,
            human_boxes: self.human_boxes.clone(),
            tx_power_dbm: self.tx_power_dbm,
            tx_gain_db: self.tx_gain_db,
            rx_gain_db: self.rx_gain_db,
            polarization: self.polarization,
        }
    }

    /// Thermal noise power `N0 + 10 log10 B + NF`, dBm.
    pub fn noise_dbm(&self) -> T {
        self.noise_psd_dbm_per_hz + to_db(self.bandwidth) + self.noise_figure_db
    }
}

/// Receiver sample points with optional probability weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct RxPopulation<T: Real> {
    pub points: Vec<Vec3<T>>,
    #[serde(default)]
    pub weights: Option<Vec<T>>,
}

impl<T: Real> RxPopulation<T> {
    pub fn new(points: Vec<Vec3<T>>, weights: Option<Vec<T>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidInput("receiver population is empty".into()));
        }
        if let Some(w) = &weights {
            if w.len() != points.len() {
                return Err(Error::InvalidInput(
                    "one weight per receiver required".into(),
                ));
            }
            let sum = w.iter().fold(T::zero(), |a, &b| a + b);
            if w.iter().any(|x| !(*x >= T::zero())) || (sum - T::one()).abs() > T::lit(1e-6) {
                return Err(Error::InvalidInput(
                    "weights must be >= 0 and sum to 1".into(),
                ));
            }
        }
        Ok(Self { points, weights })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn weight(&self, i: usize) -> T {
        match &self.weights {
            Some(w) => w[i],
            None => T::one() / T::usize(self.points.len()),
        }
    }
}

/// Rejections allowed before giving up on a population.
pub const MAX_REJECTIONS: usize = 1_000_000;

/// Draws `n` points from an axis-wise normal distribution truncated to the scene bounds.
pub fn sample_rx_population<T: Real>(
    scene: &Scene<T>,
    n: usize,
    mean: Vec3<T>,
    stddev: Vec3<T>,
    seed: u64,
) -> Result<RxPopulation<T>> {
    if n == 0 {
        return Err(Error::InvalidInput("need at least one receiver".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut axes = Vec::with_capacity(3);
    for i in 0..3 {
        let sd = stddev[i].to_f64_lossy();
        axes.push(
            Normal::new(mean[i].to_f64_lossy(), sd)
                .map_err(|e| Error::InvalidInput(format!("stddev: {e}")))?,
        );
    }
    let bounds = scene.bounds();
    let mut points = Vec::with_capacity(n);
    let mut rejected = 0usize;
    while points.len() < n {
        let p = Vec3::from_f64(
            axes[0].sample(&mut rng),
            axes[1].sample(&mut rng),
            axes[2].sample(&mut rng),
        );
        if bounds.contains(p) {
            points.push(p);
        } else {
            rejected += 1;
            if rejected >= MAX_REJECTIONS {
                return Err(Error::BoundsTooTight(rejected));
            }
        }
    }
    RxPopulation::new(points, None)
}

fn link_hash<T: Real>(tx: Vec3<T>, rx: Vec3<T>, seed: u64) -> u64 {
    // FNV-1a over the coordinate bits; stable across platforms and releases
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed;
    for v in [tx.x, tx.y, tx.z, rx.x, rx.y, rx.z] {
        for b in v.to_f64_lossy().to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

fn fading_db<T: Real>(cfg: &PlanConfig<T>, tx: Vec3<T>, rx: Vec3<T>) -> T {
    match cfg.fading {
        Fading::Unity => T::zero(),
        Fading::Lognormal { sigma_db, seed } => {
            if sigma_db == T::zero() {
                return T::zero();
            }
            let mut rng = ChaCha8Rng::seed_from_u64(link_hash(tx, rx, seed));
            let n = Normal::new(0.0, sigma_db.to_f64_lossy()).expect("sigma >= 0");
            T::lit(n.sample(&mut rng))
        }
    }
}

/// Received power of one link in dBm, or `None` when no path exists.
pub fn received_power_db<T: Real>(
    scene: &Scene<T>,
    tx: Vec3<T>,
    rx: Vec3<T>,
    cfg: &PlanConfig<T>,
) -> Option<T> {
    let base = match cfg.pathloss {
        PathLossModel::Raytraced => {
            let paths = trace(scene, tx, rx, &cfg.trace_config());
            if paths.is_empty() {
                return None;
            }
            let lin = paths.iter().fold(T::zero(), |a, p| a + from_db(p.power_db));
            to_db(lin)
        }
        PathLossModel::Statistical {
            p_los,
            nlos_excess_db,
        } => {
            let d = tx.distance(rx);
            if !(d > T::zero()) {
                return None;
            }
            let k = fspl_db(cfg.frequency, d / T::c0()) + cfg.absorption_db_per_m * d;
            let los = cfg.tx_power_dbm + cfg.tx_gain_db + cfg.rx_gain_db - k;
            let mix = p_los + (T::one() - p_los) * from_db(-nlos_excess_db);
            los + to_db(mix)
        }
    };
    Some(base - fading_db(cfg, tx, rx))
}

/// Received power (dBm) for every (receiver, transmitter) pair, `[rx][tx]`.
/// Receivers are evaluated in parallel; the result order is fixed.
pub fn link_matrix<T: Real>(
    scene: &Scene<T>,
    txs: &[Vec3<T>],
    rxs: &[Vec3<T>],
    cfg: &PlanConfig<T>,
) -> Vec<Vec<Option<T>>> {
    rxs.par_iter()
        .map(|&rx| {
            txs.iter()
                .map(|&tx| received_power_db(scene, tx, rx, cfg))
                .collect()
        })
        .collect()
}

/// SINR in dB with `serving` as signal and every other entry as interference.
pub fn sinr_from_powers<T: Real>(powers: &[Option<T>], serving: usize, noise_dbm: T) -> Option<T> {
    let s = powers.get(serving).copied().flatten()?;
    let interference = powers
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != serving)
        .filter_map(|(_, p)| *p)
        .fold(T::zero(), |a, p| a + from_db(p));
    Some(s - to_db(interference + from_db(noise_dbm)))
}

/// Serving transmitter index for one receiver.
pub fn associate<T: Real>(
    powers: &[Option<T>],
    txs: &[Vec3<T>],
    rx: Vec3<T>,
    rule: Association,
) -> Option<usize> {
    match rule {
        Association::MaxPower => {
            let mut best: Option<(T, usize)> = None;
            for (i, p) in powers.iter().enumerate() {
                if let Some(p) = *p {
                    if best.is_none_or(|(bp, _)| p > bp) {
                        best = Some((p, i));
                    }
                }
            }
            best.map(|(_, i)| i)
        }
        Association::Nearest => {
            let mut best: Option<(T, usize)> = None;
            for (i, tx) in txs.iter().enumerate() {
                let d = tx.distance(rx);
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, i));
                }
            }
            best.map(|(_, i)| i)
        }
    }
}

pub fn sinr_db<T: Real>(
    scene: &Scene<T>,
    txs: &[Vec3<T>],
    serving: usize,
    rx: Vec3<T>,
    cfg: &PlanConfig<T>,
) -> Result<T> {
    if serving >= txs.len() {
        return Err(Error::InvalidInput(format!("no transmitter {serving}")));
    }
    let powers: Vec<Option<T>> = txs
        .iter()
        .map(|&tx| received_power_db(scene, tx, rx, cfg))
        .collect();
    sinr_from_powers(&powers, serving, cfg.noise_dbm()).ok_or(Error::Unreachable(serving))
}

/// Per-receiver outcome of a deployment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct RxOutcome<T: Real> {
    /// `None` when the serving transmitter (or every transmitter) is unreachable.
    pub sinr_db: Option<T>,
    pub serving: Option<usize>,
}

/// Associates and evaluates every receiver of a population.
pub fn evaluate_population<T: Real>(
    scene: &Scene<T>,
    txs: &[Vec3<T>],
    rxs: &[Vec3<T>],
    cfg: &PlanConfig<T>,
) -> Vec<RxOutcome<T>> {
    let noise = cfg.noise_dbm();
    link_matrix(scene, txs, rxs, cfg)
        .iter()
        .zip(rxs)
        .map(|(powers, &rx)| {
            let serving = associate(powers, txs, rx, cfg.association);
            RxOutcome {
                sinr_db: serving.and_then(|s| sinr_from_powers(powers, s, noise)),
                serving,
            }
        })
        .collect()
}

/// SINR samples in dB with weights; unreachable receivers are `-inf`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct SinrSamples<T: Real> {
    pub sinr_db: Vec<T>,
    pub weights: Vec<T>,
}

impl<T: Real> SinrSamples<T> {
    pub fn uniform(sinr_db: Vec<T>) -> Result<Self> {
        if sinr_db.is_empty() {
            return Err(Error::EmptySamples);
        }
        let w = T::one() / T::usize(sinr_db.len());
        let weights = vec![w; sinr_db.len()];
        Ok(Self { sinr_db, weights })
    }

    pub fn from_outcomes(outcomes: &[RxOutcome<T>], pop: &RxPopulation<T>) -> Result<Self> {
        if outcomes.is_empty() {
            return Err(Error::EmptySamples);
        }
        Ok(Self {
            sinr_db: outcomes
                .iter()
                .map(|o| o.sinr_db.unwrap_or(T::neg_infinity()))
                .collect(),
            weights: (0..outcomes.len()).map(|i| pop.weight(i)).collect(),
        })
    }

    pub fn coverage(&self, threshold_db: T) -> T {
        coverage_weighted(&self.sinr_db, &self.weights, threshold_db)
    }

    pub fn curve(&self, thresholds_db: &[T]) -> CoverageCurve<T> {
        CoverageCurve {
            thresholds_db: thresholds_db.to_vec(),
            coverage: thresholds_db.iter().map(|&t| self.coverage(t)).collect(),
        }
    }

    /// Exact value of `B / (N ln 2) * integral of Pc(t) / (1 + t) dt` for this
    /// step-function coverage, i.e. `B / N * E[log2(1 + SINR)]`.
    pub fn rate_bps(&self, bandwidth: T, n_tx: usize) -> T {
        let total = self.weights.iter().fold(T::zero(), |a, &b| a + b);
        let acc = self
            .sinr_db
            .iter()
            .zip(&self.weights)
            .filter(|(s, _)| s.is_finite())
            .fold(T::zero(), |a, (&s, &w)| {
                a + w * (T::one() + from_db(s)).log2()
            });
        bandwidth / T::usize(n_tx.max(1)) * acc / total
    }
}

fn coverage_weighted<T: Real>(sinr_db: &[T], weights: &[T], threshold_db: T) -> T {
    let total = weights.iter().fold(T::zero(), |a, &b| a + b);
    let covered = sinr_db
        .iter()
        .zip(weights)
        .filter(|(s, _)| **s > threshold_db)
        .fold(T::zero(), |a, (_, &w)| a + w);
    covered / total
}

/// Fraction of the samples whose SINR strictly exceeds `threshold_db`.
pub fn coverage_probability<T: Real>(sinrs_db: &[T], threshold_db: T) -> Result<T> {
    Ok(SinrSamples::uniform(sinrs_db.to_vec())?.coverage(threshold_db))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct CoverageCurve<T: Real> {
    pub thresholds_db: Vec<T>,
    pub coverage: Vec<T>,
}

impl<T: Real> CoverageCurve<T> {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write_line(&mut w, VERSION_HEADER)?;
        write_line(&mut w, "threshold_db,coverage_prob")?;
        for (t, c) in self.thresholds_db.iter().zip(&self.coverage) {
            write_line(
                &mut w,
                &format!("{},{}", g6(t.to_f64_lossy()), g6(c.to_f64_lossy())),
            )?;
        }
        Ok(())
    }
}

pub fn coverage_curve<T: Real>(sinrs_db: &[T], thresholds_db: &[T]) -> Result<CoverageCurve<T>> {
    Ok(SinrSamples::uniform(sinrs_db.to_vec())?.curve(thresholds_db))
}

/// Integer-dB thresholds from `lo` to `hi` inclusive.
pub fn threshold_grid<T: Real>(lo: i32, hi: i32) -> Vec<T> {
    (lo..=hi).map(|t| T::lit(t as f64)).collect()
}

/// Coverage value below which the rate integrand is treated as zero.
pub const RATE_CUTOFF: f64 = 1e-6;
/// Largest linear SINR the rate integral may need.
pub const RATE_T_MAX: f64 = 1e9;
const POINTS_PER_DECADE: usize = 4000;
const RATE_T_MIN: f64 = 1e-9;

/// `B / (N ln 2) * integral_0^inf Pc(t) / (1 + t) dt` for a coverage function of
/// the linear SINR threshold `t`.
///
/// Trapezoid rule on `[0, 1e-9]` and then on a log-spaced grid, stopping at the
/// first node where `Pc < 1e-6`. Fails if that never happens by `t = 1e9`.
pub fn average_rate_bps<T: Real>(pc: impl Fn(T) -> T, bandwidth: T, n_tx: usize) -> Result<T> {
    if n_tx == 0 {
        return Err(Error::InvalidInput("n_tx must be >= 1".into()));
    }
    let f = |t: T| pc(t) / (T::one() + t);
    let cutoff = T::lit(RATE_CUTOFF);
    let t_min = T::lit(RATE_T_MIN);
    let mut integral = (f(T::zero()) + f(t_min)) * T::lit(0.5) * t_min;
    let ratio = T::lit(10f64.powf(1.0 / POINTS_PER_DECADE as f64));
    let mut t_prev = t_min;
    let mut f_prev = f(t_min);
    let mut converged = pc(t_min) < cutoff;
    while !converged {
        let t = t_prev * ratio;
        if t > T::lit(RATE_T_MAX) * ratio {
            break;
        }
        let v = pc(t);
        let fv = v / (T::one() + t);
        integral += (f_prev + fv) * T::lit(0.5) * (t - t_prev);
        t_prev = t;
        f_prev = fv;
        converged = v < cutoff;
    }
    if !converged {
        return Err(Error::NonConvergence);
    }
    Ok(bandwidth / (T::usize(n_tx) * T::LN_2()) * integral)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct MapCell<T: Real> {
    pub x: T,
    pub y: T,
    pub sinr_db: Option<T>,
    pub assoc_tx: Option<usize>,
}

/// Planar SINR map, row-major in y then x.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct CoverageMap<T: Real> {
    pub z: T,
    pub resolution: T,
    pub nx: usize,
    pub ny: usize,
    pub cells: Vec<MapCell<T>>,
}

impl<T: Real> CoverageMap<T> {
    pub fn cell(&self, ix: usize, iy: usize) -> &MapCell<T> {
        &self.cells[iy * self.nx + ix]
    }

    /// Fraction of cells whose SINR strictly exceeds the threshold.
    pub fn covered_fraction(&self, threshold_db: T) -> T {
        let n = self
            .cells
            .iter()
            .filter(|c| c.sinr_db.is_some_and(|s| s > threshold_db))
            .count();
        T::usize(n) / T::usize(self.cells.len())
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write_line(&mut w, VERSION_HEADER)?;
        write_line(&mut w, "x_m,y_m,sinr_db,assoc_tx")?;
        for c in &self.cells {
            let line = format!(
                "{},{},{},{}",
                g6(c.x.to_f64_lossy()),
                g6(c.y.to_f64_lossy()),
                c.sinr_db.map(|s| g6(s.to_f64_lossy())).unwrap_or_default(),
                c.assoc_tx.map(|a| a.to_string()).unwrap_or_default()
            );
            write_line(&mut w, &line)?;
        }
        Ok(())
    }
}

fn axis_centers<T: Real>(lo: T, hi: T, res: T) -> Vec<T> {
    let n = ((hi - lo) / res - T::lit(1e-9))
        .ceil()
        .to_usize()
        .unwrap_or(0)
        .max(1);
    (0..n)
        .map(|i| (lo + res * (T::usize(i) + T::lit(0.5))).min(hi))
        .collect()
}

/// Cell centres of a map over the scene's horizontal extent at height `z`.
pub fn map_points<T: Real>(bounds: &Aabb<T>, resolution: T) -> (Vec<T>, Vec<T>) {
    (
        axis_centers(bounds.min.x, bounds.max.x, resolution),
        axis_centers(bounds.min.y, bounds.max.y, resolution),
    )
}

pub fn coverage_map<T: Real>(
    scene: &Scene<T>,
    txs: &[Vec3<T>],
    cfg: &PlanConfig<T>,
    z_plane: T,
    resolution: T,
) -> Result<CoverageMap<T>> {
    let b = scene.bounds();
    if !(resolution > T::zero()) {
        return Err(Error::InvalidInput("resolution must be > 0".into()));
    }
    if !(z_plane >= b.min.z && z_plane <= b.max.z) {
        return Err(Error::InvalidInput(
            "z plane outside the scene bounds".into(),
        ));
    }
    if txs.is_empty() {
        return Err(Error::InvalidInput("need at least one transmitter".into()));
    }
    let (xs, ys) = map_points(b, resolution);
    let points: Vec<Vec3<T>> = ys
        .iter()
        .flat_map(|&y| xs.iter().map(move |&x| Vec3::new(x, y, z_plane)))
        .collect();
    let outcomes = evaluate_population(scene, txs, &points, cfg);
    let cells = points
        .iter()
        .zip(outcomes)
        .map(|(p, o)| MapCell {
            x: p.x,
            y: p.y,
            sinr_db: o.sinr_db,
            assoc_tx: o.sinr_db.and(o.serving),
        })
        .collect();
    Ok(CoverageMap {
        z: z_plane,
        resolution,
        nx: xs.len(),
        ny: ys.len(),
        cells,
    })
}
