//! Hybrid deterministic + stochastic channel model.
//!
//! Extracted MPCs are grouped around ray-traced anchor paths; MPCs no anchor
//! claims form non-RT clusters. Each cluster keeps empirical CDFs of subpath
//! delay and power, from which stochastic realizations are drawn by inverse
//! transform sampling. Cluster powers also drive material identification by
//! comparing the implied reflection loss with a material database.

use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{reflection_loss_from_power, Mpc, MpcSet, MpcSource};
use crate::error::{Error, Result};
use crate::num::{circular_diff_deg, from_db, to_db, wrap_deg, Real};
use crate::raytrace::PathRecord;
use crate::scene::MaterialDb;

pub const MODEL_VERSION: &str = "hybrid_model_v1";

/// Association gates between an MPC and an anchor (or a non-RT cluster seed).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Gates<T: Real> {
    /// Seconds.
    pub delay: T,
    pub azimuth_deg: T,
    pub zenith_deg: T,
}

impl<T: Real> Default for Gates<T> {
    fn default() -> Self {
        Self {
            delay: T::lit(0.5e-9),
            azimuth_deg: T::lit(20.0),
            zenith_deg: T::lit(20.0),
        }
    }
}

impl<T: Real> Gates<T> {
    /// Normalized distance, or `None` when any coordinate falls outside its gate.
    fn distance(&self, tau: T, az: T, zen: T, other: &Mpc<T>) -> Option<T> {
        let dt = (tau - other.tau).abs() / self.delay;
        let da = circular_diff_deg(az, other.azimuth_deg) / self.azimuth_deg;
        let dz = (zen - other.zenith_deg).abs() / self.zenith_deg;
        (dt <= T::one() && da <= T::one() && dz <= T::one())
            .then(|| (dt * dt + da * da + dz * dz).sqrt())
    }

    fn validate(&self) -> Result<()> {
        if self.delay > T::zero() && self.azimuth_deg > T::zero() && self.zenith_deg > T::zero() {
            Ok(())
        } else {
            Err(Error::InvalidInput("gates must be positive".into()))
        }
    }
}

/// Right-continuous empirical CDF over sorted samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct EmpiricalCdf<T: Real> {
    samples: Vec<T>,
}

impl<T: Real> EmpiricalCdf<T> {
    pub fn new(mut samples: Vec<T>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptySamples);
        }
        if samples.iter().any(|x| x.is_nan()) {
            return Err(Error::InvalidInput("NaN sample".into()));
        }
        samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[T] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Fraction of samples `<= x`.
    pub fn eval(&self, x: T) -> T {
        let k = self.samples.partition_point(|&s| s <= x);
        T::usize(k) / T::usize(self.samples.len())
    }

    /// Generalized inverse: the smallest sample whose CDF value exceeds `u`, for `u` in `[0, 1)`.
    pub fn inverse(&self, u: T) -> T {
        let n = self.samples.len();
        let k = (u * T::usize(n)).floor().to_usize().unwrap_or(0).min(n - 1);
        self.samples[k]
    }

    pub fn mean(&self) -> T {
        self.samples.iter().fold(T::zero(), |a, &b| a + b) / T::usize(self.samples.len())
    }

    pub fn min(&self) -> T {
        self.samples[0]
    }

    pub fn max(&self) -> T {
        self.samples[self.samples.len() - 1]
    }
}

/// A deterministic ray-traced path used as a cluster centre.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Anchor<T: Real> {
    pub tau: T,
    pub azimuth_deg: T,
    pub zenith_deg: T,
    pub power_db: T,
    pub facets: Vec<usize>,
    pub materials: Vec<String>,
}

impl<T: Real> Anchor<T> {
    fn as_mpc(&self) -> Mpc<T> {
        Mpc {
            tau: self.tau,
            azimuth_deg: self.azimuth_deg,
            zenith_deg: self.zenith_deg,
            power_db: self.power_db,
            order: Some(self.facets.len()),
            chain: self.materials.join(";"),
        }
    }
}

impl<T: Real> From<&PathRecord<T>> for Anchor<T> {
    fn from(p: &PathRecord<T>) -> Self {
        Self {
            tau: p.tau,
            azimuth_deg: p.azimuth_deg,
            zenith_deg: p.zenith_deg,
            power_db: p.power_db,
            facets: p.facet_chain(),
            materials: p.bounces.iter().map(|b| b.material.clone()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "materials", rename_all = "lowercase")]
pub enum MaterialLabel {
    Single(String),
    Composite(String, String),
    Unknown,
}

impl fmt::Display for MaterialLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MaterialLabel::Single(m) => write!(f, "{m}"),
            MaterialLabel::Composite(a, b) => write!(f, "{a}+{b}"),
            MaterialLabel::Unknown => write!(f, "unknown"),
        }
    }
}

/// Result of matching a reflection loss against the database.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Identification<T: Real> {
    pub label: MaterialLabel,
    pub rl_db: T,
    /// Database RL (single or pair sum) of the closest candidate, even when rejected.
    pub best_reference_db: Option<T>,
    pub delta_db: Option<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Cluster<T: Real> {
    pub anchor: Option<Anchor<T>>,
    pub subpaths: Vec<Mpc<T>>,
    pub delay_cdf: EmpiricalCdf<T>,
    pub power_cdf: EmpiricalCdf<T>,
    pub mean_delay: T,
    /// dB of the mean linear subpath power.
    pub mean_power_db: T,
    #[serde(default)]
    pub identified: Option<Identification<T>>,
}

impl<T: Real> Cluster<T> {
    fn from_members(anchor: Option<Anchor<T>>, mut subpaths: Vec<Mpc<T>>) -> Result<Self> {
        subpaths.sort_by(|a, b| {
            a.tau
                .partial_cmp(&b.tau)
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let delay_cdf = EmpiricalCdf::new(subpaths.iter().map(|m| m.tau).collect())?;
        let power_cdf = EmpiricalCdf::new(subpaths.iter().map(|m| m.power_db).collect())?;
        let n = T::usize(subpaths.len());
        let mean_delay = subpaths.iter().fold(T::zero(), |a, m| a + m.tau) / n;
        let mean_lin = subpaths
            .iter()
            .fold(T::zero(), |a, m| a + from_db(m.power_db))
            / n;
        Ok(Self {
            anchor,
            subpaths,
            delay_cdf,
            power_cdf,
            mean_delay,
            mean_power_db: to_db(mean_lin),
            identified: None,
        })
    }

    /// Smallest circular arc `(start, width)` containing every subpath azimuth.
    pub fn azimuth_span(&self) -> (T, T) {
        let mut az: Vec<T> = self
            .subpaths
            .iter()
            .map(|m| wrap_deg(m.azimuth_deg))
            .collect();
        az.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let full = T::lit(360.0);
        let mut gap = az[0] + full - az[az.len() - 1];
        let mut start = az[0];
        for w in az.windows(2) {
            if w[1] - w[0] > gap {
                gap = w[1] - w[0];
                start = w[1];
            }
        }
        (start, (full - gap).max(T::zero()))
    }

    pub fn zenith_span(&self) -> (T, T) {
        let lo = self
            .subpaths
            .iter()
            .fold(T::infinity(), |m, s| m.min(s.zenith_deg));
        let hi = self
            .subpaths
            .iter()
            .fold(T::neg_infinity(), |m, s| m.max(s.zenith_deg));
        (lo, hi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct HybridModel<T: Real> {
    pub version: String,
    pub carrier_frequency: T,
    pub gates: Gates<T>,
    pub rt_clusters: Vec<Cluster<T>>,
    pub non_rt_clusters: Vec<Cluster<T>>,
    /// Anchors that attracted no measured MPC. They still appear in realizations.
    pub orphan_anchors: Vec<Anchor<T>>,
}

impl<T: Real> HybridModel<T> {
    pub fn n_clusters(&self) -> usize {
        self.rt_clusters.len() + self.non_rt_clusters.len()
    }

    pub fn clusters(&self) -> impl Iterator<Item = &Cluster<T>> {
        self.rt_clusters.iter().chain(&self.non_rt_clusters)
    }

    pub fn anchors(&self) -> impl Iterator<Item = &Anchor<T>> {
        self.rt_clusters
            .iter()
            .filter_map(|c| c.anchor.as_ref())
            .chain(&self.orphan_anchors)
    }

    /// Labels every cluster by the reflection loss implied by its mean power.
    /// Line-of-sight clusters have no bounce and stay unlabelled.
    pub fn identify_materials(
        &mut self,
        db: &MaterialDb<T>,
        tolerance_db: T,
        reference_db: T,
    ) -> Result<()> {
        let f = self.carrier_frequency;
        for c in self
            .rt_clusters
            .iter_mut()
            .chain(self.non_rt_clusters.iter_mut())
        {
            if c.anchor.as_ref().is_some_and(|a| a.facets.is_empty()) {
                c.identified = None;
                continue;
            }
            c.identified = Some(identify_material(
                c.mean_power_db,
                c.mean_delay,
                f,
                db,
                tolerance_db,
                reference_db,
            )?);
        }
        Ok(())
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(s)?;
        if m.version != MODEL_VERSION {
            return Err(Error::InvalidInput(format!(
                "unsupported model version `{}`",
                m.version
            )));
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json_string()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&s)
    }
}

/// Partitions measured MPCs into clusters around the traced anchors.
///
/// Each MPC goes to the nearest anchor (gate-normalized Euclidean distance,
/// ties to the earlier anchor delay) among those whose three gates it passes.
/// The rest are agglomerated in delay order: an MPC joins the nearest non-RT
/// cluster whose seed (first member) it gates with, or seeds a new one.
pub fn cluster_mpcs<T: Real>(
    measured: &MpcSet<T>,
    traced: &[PathRecord<T>],
    gates: Gates<T>,
    carrier_frequency: T,
) -> Result<HybridModel<T>> {
    gates.validate()?;
    if traced.is_empty() {
        return Err(Error::InvalidInput(
            "clustering needs at least one traced anchor".into(),
        ));
    }
    let mut anchors: Vec<Anchor<T>> = traced.iter().map(Anchor::from).collect();
    anchors.sort_by(|a, b| {
        a.tau
            .partial_cmp(&b.tau)
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    for (i, a) in anchors.iter().enumerate() {
        if anchors[..i].iter().any(|b| b.facets == a.facets) {
            return Err(Error::InvalidInput(format!(
                "duplicate anchor bounce chain {:?}",
                a.facets
            )));
        }
    }
    let anchor_mpcs: Vec<Mpc<T>> = anchors.iter().map(Anchor::as_mpc).collect();

    let mut members: Vec<Vec<Mpc<T>>> = vec![Vec::new(); anchors.len()];
    let mut leftovers: Vec<Mpc<T>> = Vec::new();
    for m in measured.paths() {
        let mut best: Option<(T, usize)> = None;
        for (i, a) in anchor_mpcs.iter().enumerate() {
            if let Some(d) = gates.distance(m.tau, m.azimuth_deg, m.zenith_deg, a) {
                // anchors are sorted by delay, so strict < keeps the earlier one on ties
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, i));
                }
            }
        }
        match best {
            Some((_, i)) => members[i].push(m.clone()),
            None => leftovers.push(m.clone()),
        }
    }

    let mut groups: Vec<Vec<Mpc<T>>> = Vec::new();
    for m in leftovers {
        let mut best: Option<(T, usize)> = None;
        for (gi, g) in groups.iter().enumerate() {
            if let Some(d) = gates.distance(m.tau, m.azimuth_deg, m.zenith_deg, &g[0]) {
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, gi));
                }
            }
        }
        match best {
            Some((_, gi)) => groups[gi].push(m),
            None => groups.push(vec![m]),
        }
    }

    let mut rt_clusters = Vec::new();
    let mut orphan_anchors = Vec::new();
    for (anchor, subs) in anchors.into_iter().zip(members) {
        if subs.is_empty() {
            orphan_anchors.push(anchor);
        } else {
            rt_clusters.push(Cluster::from_members(Some(anchor), subs)?);
        }
    }
    let non_rt_clusters = groups
        .into_iter()
        .map(|g| Cluster::from_members(None, g))
        .collect::<Result<Vec<_>>>()?;

    Ok(HybridModel {
        version: MODEL_VERSION.into(),
        carrier_frequency,
        gates,
        rt_clusters,
        non_rt_clusters,
        orphan_anchors,
    })
}

/// Closest single material or ordered pair (sum of two bounce losses) to `rl_db`.
/// Only materials with a reference RL take part. Exact ties prefer singles, then
/// the lexicographically smaller label.
pub fn identify_by_rl<T: Real>(rl_db: T, db: &MaterialDb<T>, tolerance_db: T) -> Identification<T> {
    let refs: Vec<(&str, T)> = db
        .iter()
        .filter_map(|m| m.reference_rl_db.map(|r| (m.name.as_str(), r)))
        .collect();
    let mut candidates: Vec<(T, MaterialLabel)> = Vec::new();
    for &(name, r) in &refs {
        candidates.push((r, MaterialLabel::Single(name.to_string())));
    }
    for &(a, ra) in &refs {
        for &(b, rb) in &refs {
            candidates.push((
                ra + rb,
                MaterialLabel::Composite(a.to_string(), b.to_string()),
            ));
        }
    }
    let mut best: Option<(T, T, MaterialLabel)> = None;
    for (r, label) in candidates {
        let d = (rl_db - r).abs();
        let better = match &best {
            None => true,
            Some((bd, _, bl)) => {
                d < *bd
                    || (d == *bd
                        && matches!(label, MaterialLabel::Single(_))
                        && !matches!(bl, MaterialLabel::Single(_)))
                    || (d == *bd
                        && matches!(label, MaterialLabel::Single(_))
                            == matches!(bl, MaterialLabel::Single(_))
                        && label.to_string() < bl.to_string())
            }
        };
        if better {
            best = Some((d, r, label));
        }
    }
    match best {
        Some((d, r, label)) if d <= tolerance_db => Identification {
            label,
            rl_db,
            best_reference_db: Some(r),
            delta_db: Some(d),
        },
        Some((d, r, _)) => Identification {
            label: MaterialLabel::Unknown,
            rl_db,
            best_reference_db: Some(r),
            delta_db: Some(d),
        },
        None => Identification {
            label: MaterialLabel::Unknown,
            rl_db,
            best_reference_db: None,
            delta_db: None,
        },
    }
}

/// Identifies the bounce material(s) of a cluster from its mean power at delay `tau`.
/// The reflection loss is the power deficit below free space at that delay,
/// relative to `reference_db` (transmit power plus antenna gains).
pub fn identify_material<T: Real>(
    cluster_mean_power_db: T,
    tau: T,
    f: T,
    db: &MaterialDb<T>,
    tolerance_db: T,
    reference_db: T,
) -> Result<Identification<T>> {
    if db.is_empty() {
        return Err(Error::InvalidInput("material database is empty".into()));
    }
    if !(tolerance_db > T::zero()) {
        return Err(Error::InvalidInput("tolerance must be > 0".into()));
    }
    let rl = reflection_loss_from_power(cluster_mean_power_db, tau, f, reference_db);
    Ok(identify_by_rl(rl, db, tolerance_db))
}

/// Draws one stochastic realization: every anchor verbatim plus, per cluster,
/// `n_subpaths_per_cluster` subpaths whose delay and power are sampled
/// independently from the cluster CDFs and whose angles are uniform over the
/// cluster's observed span.
pub fn synthesize_realization<T: Real>(
    model: &HybridModel<T>,
    n_subpaths_per_cluster: usize,
    seed: u64,
) -> Result<MpcSet<T>> {
    if model.n_clusters() == 0 && model.orphan_anchors.is_empty() {
        return Err(Error::InvalidInput("model has no clusters".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<Mpc<T>> = model.anchors().map(Anchor::as_mpc).collect();
    for c in model.clusters() {
        let (az0, az_w) = c.azimuth_span();
        let (z0, z1) = c.zenith_span();
        for _ in 0..n_subpaths_per_cluster {
            let u_tau = T::lit(rng.gen::<f64>());
            let u_pow = T::lit(rng.gen::<f64>());
            let u_az = T::lit(rng.gen::<f64>());
            let u_zen = T::lit(rng.gen::<f64>());
            out.push(Mpc {
                tau: c.delay_cdf.inverse(u_tau),
                azimuth_deg: wrap_deg(az0 + az_w * u_az),
                zenith_deg: z0 + (z1 - z0) * u_zen,
                power_db: c.power_cdf.inverse(u_pow),
                order: None,
                chain: String::new(),
            });
        }
    }
    Ok(MpcSet::new(MpcSource::Synthetic, out))
}
