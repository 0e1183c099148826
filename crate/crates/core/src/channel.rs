//! Channel synthesis and measurement-style multipath extraction.
//!
//! A CFR tensor is indexed by (zenith bin, azimuth bin, frequency); the inverse
//! DFT of each angle cell gives the CIR, and the power-angle-delay profile sums
//! power over zenith. Multipath components are the local maxima of the
//! delay-angle power tensor, refined below the delay bin with a single-tone
//! estimator matched to the window.

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::str::FromStr;

use num_complex::Complex;
use rayon::prelude::*;
use rustfft::{FftNum, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::{csv_reader, g6, write_line, VERSION_HEADER};
use crate::num::{from_db, fspl_db, to_db, wrap_deg, Real};
use crate::raytrace::PathRecord;

/// Uniform frequency sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Band<T: Real> {
    pub f_start: T,
    pub f_stop: T,
    pub n_freq: usize,
}

impl<T: Real> Default for Band<T> {
    /// 290 to 310 GHz in 2001 points.
    fn default() -> Self {
        Self {
            f_start: T::lit(290e9),
            f_stop: T::lit(310e9),
            n_freq: 2001,
        }
    }
}

impl<T: Real> Band<T> {
    pub fn new(f_start: T, f_stop: T, n_freq: usize) -> Result<Self> {
        let b = Self {
            f_start,
            f_stop,
            n_freq,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_freq < 2 {
            return Err(Error::InvalidInput("n_freq must be >= 2".into()));
        }
        if !(self.f_start > T::zero() && self.f_stop > self.f_start) {
            return Err(Error::InvalidInput(
                "band needs 0 < f_start < f_stop".into(),
            ));
        }
        Ok(())
    }

    pub fn bandwidth(&self) -> T {
        self.f_stop - self.f_start
    }

    pub fn spacing(&self) -> T {
        self.bandwidth() / T::usize(self.n_freq - 1)
    }

    pub fn frequency(&self, k: usize) -> T {
        self.f_start + self.spacing() * T::usize(k)
    }

    /// Delay bin width of the IDFT, `1 / (n_freq * spacing)`.
    pub fn delay_step(&self) -> T {
        T::one() / (T::usize(self.n_freq) * self.spacing())
    }

    pub fn center(&self) -> T {
        (self.f_start + self.f_stop) * T::lit(0.5)
    }
}

impl FromStr for Band<f64> {
    type Err = Error;

    /// Parses `start:stop:count`, e.g. `290e9:310e9:2001`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || Error::InvalidInput(format!("band `{s}` is not start:stop:count"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let f0: f64 = parts[0].trim().parse().map_err(|_| bad())?;
        let f1: f64 = parts[1].trim().parse().map_err(|_| bad())?;
        let n: usize = parts[2].trim().parse().map_err(|_| bad())?;
        Band::new(f0, f1, n)
    }
}

/// Azimuth and zenith binning. Azimuth bins cover the full circle starting at 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct AngleAxes<T: Real> {
    pub azimuth_step_deg: T,
    pub zenith_min_deg: T,
    pub zenith_max_deg: T,
    pub zenith_step_deg: T,
}

impl<T: Real> Default for AngleAxes<T> {
    /// 10 degree steps, zenith from -40 to 60 degrees.
    fn default() -> Self {
        Self {
            azimuth_step_deg: T::lit(10.0),
            zenith_min_deg: T::lit(-40.0),
            zenith_max_deg: T::lit(60.0),
            zenith_step_deg: T::lit(10.0),
        }
    }
}

impl<T: Real> AngleAxes<T> {
    pub fn validate(&self) -> Result<()> {
        let step = self.azimuth_step_deg;
        if !(step > T::zero() && step <= T::lit(360.0)) {
            return Err(Error::InvalidInput(
                "azimuth step must be in (0, 360]".into(),
            ));
        }
        let n = T::lit(360.0) / step;
        if (n - n.round()).abs() > T::lit(1e-6) {
            return Err(Error::InvalidInput("azimuth step must divide 360".into()));
        }
        if !(self.zenith_step_deg > T::zero() && self.zenith_max_deg >= self.zenith_min_deg) {
            return Err(Error::InvalidInput("invalid zenith axis".into()));
        }
        Ok(())
    }

    pub fn n_azimuth(&self) -> usize {
        (T::lit(360.0) / self.azimuth_step_deg)
            .round()
            .to_usize()
            .unwrap_or(1)
            .max(1)
    }

    pub fn n_zenith(&self) -> usize {
        ((self.zenith_max_deg - self.zenith_min_deg) / self.zenith_step_deg)
            .round()
            .to_usize()
            .unwrap_or(0)
            + 1
    }

    pub fn n_cells(&self) -> usize {
        self.n_azimuth() * self.n_zenith()
    }

    pub fn azimuth(&self, ai: usize) -> T {
        self.azimuth_step_deg * T::usize(ai)
    }

    pub fn zenith(&self, zi: usize) -> T {
        self.zenith_min_deg + self.zenith_step_deg * T::usize(zi)
    }

    /// Nearest azimuth bin, circular.
    pub fn azimuth_bin(&self, az_deg: T) -> usize {
        let k = (wrap_deg(az_deg) / self.azimuth_step_deg)
            .round()
            .to_usize()
            .unwrap_or(0);
        k % self.n_azimuth()
    }

    /// Nearest zenith bin, clamped to the axis.
    pub fn zenith_bin(&self, zen_deg: T) -> usize {
        let k = ((zen_deg - self.zenith_min_deg) / self.zenith_step_deg).round();
        if k <= T::zero() {
            0
        } else {
            k.to_usize().unwrap_or(0).min(self.n_zenith() - 1)
        }
    }

    /// Flat cell index for (zenith bin, azimuth bin).
    pub fn cell(&self, zi: usize, ai: usize) -> usize {
        zi * self.n_azimuth() + ai
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MpcSource {
    #[default]
    Measured,
    Synthetic,
    Traced,
}

impl MpcSource {
    pub fn as_str(&self) -> &'static str {
        match self {
            MpcSource::Measured => "measured",
            MpcSource::Synthetic => "synthetic",
            MpcSource::Traced => "traced",
        }
    }
}

impl FromStr for MpcSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "measured" => Ok(MpcSource::Measured),
            "synthetic" => Ok(MpcSource::Synthetic),
            "traced" => Ok(MpcSource::Traced),
            other => Err(Error::InvalidInput(format!("unknown MPC source `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    #[default]
    Rect,
    Hann,
}

impl Window {
    fn weights<T: Real>(&self, n: usize) -> Vec<T> {
        match self {
            Window::Rect => vec![T::one(); n],
            Window::Hann => {
                let denom = T::usize(n.saturating_sub(1).max(1));
                (0..n)
                    .map(|k| {
                        let x = T::lit(2.0) * T::PI() * T::usize(k) / denom;
                        T::lit(0.5) * (T::one() - x.cos())
                    })
                    .collect()
            }
        }
    }

    /// Normalized amplitude response of a unit tone `delta` bins off the sample.
    fn response<T: Real>(&self, delta: T) -> T {
        let d = delta.abs();
        if d < T::lit(1e-12) {
            return T::one();
        }
        let sinc = (T::PI() * d).sin() / (T::PI() * d);
        match self {
            Window::Rect => sinc,
            Window::Hann => sinc / (T::one() - d * d),
        }
    }

    /// Fractional offset of a tone from bin `n` given the neighbor amplitude ratio
    /// `r = |X[n +- 1]| / |X[n]|` on the larger side.
    fn offset_from_ratio<T: Real>(&self, r: T) -> T {
        match self {
            Window::Rect => r / (T::one() + r),
            Window::Hann => (T::lit(2.0) * r - T::one()) / (T::one() + r),
        }
        .max(T::zero())
        .min(T::lit(0.5))
    }
}

/// One multipath component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Mpc<T: Real> {
    /// Delay, seconds.
    pub tau: T,
    pub azimuth_deg: T,
    pub zenith_deg: T,
    pub power_db: T,
    /// Reflection order, known only for traced components.
    #[serde(default)]
    pub order: Option<usize>,
    /// `;`-joined material chain, empty when unknown or line of sight.
    #[serde(default)]
    pub chain: String,
}

impl<T: Real> From<&PathRecord<T>> for Mpc<T> {
    fn from(p: &PathRecord<T>) -> Self {
        Self {
            tau: p.tau,
            azimuth_deg: p.azimuth_deg,
            zenith_deg: p.zenith_deg,
            power_db: p.power_db,
            order: Some(p.order()),
            chain: p.material_chain(),
        }
    }
}

/// Multipath parameter set, kept sorted by delay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct MpcSet<T: Real> {
    pub source: MpcSource,
    paths: Vec<Mpc<T>>,
}

#[derive(Deserialize)]
struct MpcRow {
    tau_ns: f64,
    azimuth_deg: f64,
    zenith_deg: f64,
    power_db: f64,
    #[serde(default)]
    order: Option<usize>,
    #[serde(default)]
    chain: Option<String>,
    #[serde(default)]
    source: Option<String>,
}

impl<T: Real> MpcSet<T> {
    pub fn new(source: MpcSource, mut paths: Vec<Mpc<T>>) -> Self {
        sort_by_tau(&mut paths);
        Self { source, paths }
    }

    pub fn from_paths(paths: &[PathRecord<T>]) -> Self {
        Self::new(MpcSource::Traced, paths.iter().map(Mpc::from).collect())
    }

    pub fn paths(&self) -> &[Mpc<T>] {
        &self.paths
    }

    pub fn into_paths(self) -> Vec<Mpc<T>> {
        self.paths
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    /// Writes the MPC CSV. The `source` column is appended when `with_source` is set.
    pub fn write_csv<W: Write>(&self, mut w: W, with_source: bool) -> Result<()> {
        write_line(&mut w, VERSION_HEADER)?;
        let mut header = String::from("tau_ns,azimuth_deg,zenith_deg,power_db,order,chain");
        if with_source {
            header.push_str(",source");
        }
        write_line(&mut w, &header)?;
        for p in &self.paths {
            let mut line = format!(
                "{},{},{},{},{},{}",
                g6(p.tau.to_f64_lossy() * 1e9),
                g6(p.azimuth_deg.to_f64_lossy()),
                g6(p.zenith_deg.to_f64_lossy()),
                g6(p.power_db.to_f64_lossy()),
                p.order.map(|o| o.to_string()).unwrap_or_default(),
                p.chain
            );
            if with_source {
                line.push(',');
                line.push_str(self.source.as_str());
            }
            write_line(&mut w, &line)?;
        }
        Ok(())
    }

    /// Reads an MPC CSV with or without the `source` column. Without it, `default_source` is used.
    pub fn read_csv<R: Read>(reader: R, default_source: MpcSource) -> Result<Self> {
        let mut rdr = csv_reader(reader);
        let mut source = None;
        let mut paths = Vec::new();
        for row in rdr.deserialize() {
            let row: MpcRow = row?;
            if let Some(s) = row.source.as_deref().filter(|s| !s.is_empty()) {
                source = Some(s.parse()?);
            }
            let vals = [row.tau_ns, row.azimuth_deg, row.zenith_deg];
            if vals.iter().any(|v| !v.is_finite()) || row.power_db.is_nan() {
                return Err(Error::InvalidInput("non-finite MPC field".into()));
            }
            paths.push(Mpc {
                tau: T::lit(row.tau_ns * 1e-9),
                azimuth_deg: T::lit(row.azimuth_deg),
                zenith_deg: T::lit(row.zenith_deg),
                power_db: T::lit(row.power_db),
                order: row.order,
                chain: row.chain.unwrap_or_default(),
            });
        }
        Ok(Self::new(source.unwrap_or(default_source), paths))
    }
}

fn sort_by_tau<T: Real>(paths: &mut [Mpc<T>]) {
    paths.sort_by(|a, b| {
        a.tau
            .partial_cmp(&b.tau)
            .unwrap_or(std::cmp::Ordering::Equal)
    });
}

/// Channel frequency response per angle cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Cfr<T: Real> {
    pub band: Band<T>,
    pub axes: AngleAxes<T>,
    pub source: MpcSource,
    /// `[cell][k]`, cell = `zi * n_azimuth + ai`.
    data: Vec<Complex<T>>,
}

impl<T: Real> Cfr<T> {
    pub fn zeros(band: Band<T>, axes: AngleAxes<T>, source: MpcSource) -> Result<Self> {
        band.validate()?;
        axes.validate()?;
        Ok(Self {
            data: vec![Complex::new(T::zero(), T::zero()); axes.n_cells() * band.n_freq],
            band,
            axes,
            source,
        })
    }

    pub fn cell(&self, zi: usize, ai: usize) -> &[Complex<T>] {
        let n = self.band.n_freq;
        let c = self.axes.cell(zi, ai);
        &self.data[c * n..(c + 1) * n]
    }

    pub fn cell_mut(&mut self, zi: usize, ai: usize) -> &mut [Complex<T>] {
        let n = self.band.n_freq;
        let c = self.axes.cell(zi, ai);
        &mut self.data[c * n..(c + 1) * n]
    }

    /// Adds `alpha * exp(-j 2 pi f tau)` to the nearest angle cell.
    pub fn add_path(&mut self, tau: T, azimuth_deg: T, zenith_deg: T, alpha: Complex<T>) {
        let band = self.band;
        let zi = self.axes.zenith_bin(zenith_deg);
        let ai = self.axes.azimuth_bin(azimuth_deg);
        let two_pi = T::lit(2.0) * T::PI();
        for (k, h) in self.cell_mut(zi, ai).iter_mut().enumerate() {
            let phase = -two_pi * band.frequency(k) * tau;
            *h += alpha * Complex::new(phase.cos(), phase.sin());
        }
    }

    /// Measured CFR CSV, `azimuth_deg,zenith_deg,freq_hz,re,im`. The rows must
    /// cover a complete, uniformly spaced azimuth x zenith x frequency lattice.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            azimuth_deg: f64,
            zenith_deg: f64,
            freq_hz: f64,
            re: f64,
            im: f64,
        }
        let mut rows = Vec::new();
        for r in csv_reader(reader).deserialize() {
            let r: Row = r?;
            rows.push(r);
        }
        if rows.is_empty() {
            return Err(Error::IncompleteLattice("no samples".into()));
        }
        let az = lattice_axis(rows.iter().map(|r| wrap_deg(r.azimuth_deg)), "azimuth")?;
        let zen = lattice_axis(rows.iter().map(|r| r.zenith_deg), "zenith")?;
        let freq = lattice_axis(rows.iter().map(|r| r.freq_hz), "frequency")?;
        if freq.len() < 2 {
            return Err(Error::IncompleteLattice(
                "need at least 2 frequencies".into(),
            ));
        }
        let az_step = if az.len() > 1 { az[1] - az[0] } else { 360.0 };
        if az[0].abs() > 1e-6 || ((az.len() as f64) * az_step - 360.0).abs() > 1e-6 {
            return Err(Error::IncompleteLattice(
                "azimuth samples must cover the full circle from 0".into(),
            ));
        }
        let zen_step = if zen.len() > 1 { zen[1] - zen[0] } else { 1.0 };
        let axes = AngleAxes {
            azimuth_step_deg: T::lit(az_step),
            zenith_min_deg: T::lit(zen[0]),
            zenith_max_deg: T::lit(zen[zen.len() - 1]),
            zenith_step_deg: T::lit(zen_step),
        };
        let band = Band::new(T::lit(freq[0]), T::lit(freq[freq.len() - 1]), freq.len())?;
        let mut cfr = Self::zeros(band, axes, MpcSource::Measured)?;
        let expected = az.len() * zen.len() * freq.len();
        if rows.len() != expected {
            return Err(Error::IncompleteLattice(format!(
                "{} rows for a {}x{}x{} lattice",
                rows.len(),
                az.len(),
                zen.len(),
                freq.len()
            )));
        }
        let mut seen = vec![false; expected];
        let f_step = (freq[freq.len() - 1] - freq[0]) / (freq.len() - 1) as f64;
        for r in &rows {
            let ai = ((wrap_deg(r.azimuth_deg) / az_step).round() as usize) % az.len();
            let zi = ((r.zenith_deg - zen[0]) / zen_step).round() as usize;
            let k = ((r.freq_hz - freq[0]) / f_step).round() as usize;
            let idx = (zi * az.len() + ai) * freq.len() + k;
            if seen[idx] {
                return Err(Error::IncompleteLattice(format!(
                    "duplicate sample at azimuth {}, zenith {}, f {}",
                    r.azimuth_deg, r.zenith_deg, r.freq_hz
                )));
            }
            seen[idx] = true;
            cfr.data[idx] = Complex::new(T::lit(r.re), T::lit(r.im));
        }
        Ok(cfr)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write_line(&mut w, VERSION_HEADER)?;
        write_line(&mut w, "azimuth_deg,zenith_deg,freq_hz,re,im")?;
        for ai in 0..self.axes.n_azimuth() {
            for zi in 0..self.axes.n_zenith() {
                let az = g6(self.axes.azimuth(ai).to_f64_lossy());
                let zen = g6(self.axes.zenith(zi).to_f64_lossy());
                for (k, h) in self.cell(zi, ai).iter().enumerate() {
                    let line = format!(
                        "{az},{zen},{},{},{}",
                        g6(self.band.frequency(k).to_f64_lossy()),
                        g6(h.re.to_f64_lossy()),
                        g6(h.im.to_f64_lossy())
                    );
                    write_line(&mut w, &line)?;
                }
            }
        }
        Ok(())
    }
}

/// Sorted distinct values of one lattice coordinate, which must be uniformly spaced.
fn lattice_axis(values: impl Iterator<Item = f64>, name: &str) -> Result<Vec<f64>> {
    let mut v: Vec<f64> = values.collect();
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::IncompleteLattice(format!("non-finite {name} value")));
    }
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let scale = v.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    let tol = 1e-9 * scale;
    v.dedup_by(|a, b| (*a - *b).abs() <= tol);
    if v.len() > 2 {
        let step = (v[v.len() - 1] - v[0]) / (v.len() - 1) as f64;
        for (i, x) in v.iter().enumerate() {
            if (x - (v[0] + step * i as f64)).abs() > 1e-3 * step {
                return Err(Error::IncompleteLattice(format!(
                    "{name} axis is not uniform"
                )));
            }
        }
    }
    Ok(v)
}

fn synthesize<T: Real>(
    items: impl Iterator<Item = (T, T, T, Complex<T>)>,
    band: Band<T>,
    axes: AngleAxes<T>,
    source: MpcSource,
) -> Result<Cfr<T>> {
    let mut cfr = Cfr::zeros(band, axes, source)?;
    for (tau, az, zen, alpha) in items {
        cfr.add_path(tau, az, zen, alpha);
    }
    Ok(cfr)
}

/// Frequency-domain sum of the paths' complex gains in their nearest angle cells.
pub fn synthesize_cfr<T: Real>(
    paths: &[PathRecord<T>],
    band: Band<T>,
    axes: AngleAxes<T>,
) -> Result<Cfr<T>> {
    synthesize(
        paths
            .iter()
            .map(|p| (p.tau, p.azimuth_deg, p.zenith_deg, p.gain)),
        band,
        axes,
        MpcSource::Synthetic,
    )
}

/// As [`synthesize_cfr`] for an MPC list, with real gains `sqrt(P)`.
pub fn synthesize_cfr_from_mpcs<T: Real>(
    mpcs: &MpcSet<T>,
    band: Band<T>,
    axes: AngleAxes<T>,
) -> Result<Cfr<T>> {
    synthesize(
        mpcs.paths().iter().map(|m| {
            let a = from_db(m.power_db).sqrt();
            (
                m.tau,
                m.azimuth_deg,
                m.zenith_deg,
                Complex::new(a, T::zero()),
            )
        }),
        band,
        axes,
        MpcSource::Synthetic,
    )
}

/// Delay-angle channel impulse response. Powers are `|cir|^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleDelayGrid<T: Real> {
    pub band: Band<T>,
    pub axes: AngleAxes<T>,
    pub window: Window,
    pub source: MpcSource,
    /// `[cell][n]`, same cell order as [`Cfr`].
    cir: Vec<Complex<T>>,
}

impl<T: Real> AngleDelayGrid<T> {
    pub fn n_delay(&self) -> usize {
        self.band.n_freq
    }

    pub fn delay_step(&self) -> T {
        self.band.delay_step()
    }

    pub fn cir_cell(&self, zi: usize, ai: usize) -> &[Complex<T>] {
        let n = self.n_delay();
        let c = self.axes.cell(zi, ai);
        &self.cir[c * n..(c + 1) * n]
    }

    pub fn power(&self, n: usize, zi: usize, ai: usize) -> T {
        self.cir[self.axes.cell(zi, ai) * self.n_delay() + n].norm_sqr()
    }

    pub fn total_energy(&self) -> T {
        self.cir.iter().fold(T::zero(), |a, h| a + h.norm_sqr())
    }

    pub fn max_power(&self) -> T {
        self.cir.iter().fold(T::zero(), |m, h| m.max(h.norm_sqr()))
    }

    /// Builds a grid from raw powers (zero phase). Mostly useful for tests and
    /// for PADP-only inputs.
    pub fn from_powers(
        band: Band<T>,
        axes: AngleAxes<T>,
        window: Window,
        powers: &[T],
    ) -> Result<Self> {
        if powers.len() != axes.n_cells() * band.n_freq {
            return Err(Error::InvalidInput(
                "power tensor has the wrong size".into(),
            ));
        }
        if powers.iter().any(|p| !(*p >= T::zero())) {
            return Err(Error::InvalidInput("powers must be >= 0".into()));
        }
        Ok(Self {
            band,
            axes,
            window,
            source: MpcSource::Measured,
            cir: powers
                .iter()
                .map(|p| Complex::new(p.sqrt(), T::zero()))
                .collect(),
        })
    }
}

/// Inverse DFT of every angle cell, normalized by the window sum so an on-bin
/// unit tone yields a unit impulse.
pub fn cfr_to_cir<T: Real + FftNum>(cfr: &Cfr<T>, window: Window) -> AngleDelayGrid<T> {
    let n = cfr.band.n_freq;
    let w: Vec<T> = window.weights(n);
    let norm = T::one() / w.iter().fold(T::zero(), |a, &b| a + b);
    let ifft = FftPlanner::<T>::new().plan_fft_inverse(n);
    let mut cir = cfr.data.clone();
    cir.par_chunks_mut(n).for_each(|cell| {
        for (x, &wk) in cell.iter_mut().zip(&w) {
            *x *= wk;
        }
        ifft.process(cell);
        for x in cell.iter_mut() {
            *x *= norm;
        }
    });
    AngleDelayGrid {
        band: cfr.band,
        axes: cfr.axes,
        window,
        source: cfr.source,
        cir,
    }
}

/// Forward DFT of a rectangular-window grid, inverting [`cfr_to_cir`].
pub fn cir_to_cfr<T: Real + FftNum>(grid: &AngleDelayGrid<T>) -> Result<Cfr<T>> {
    if grid.window != Window::Rect {
        return Err(Error::InvalidInput(
            "only a rectangular-window CIR is invertible".into(),
        ));
    }
    let n = grid.n_delay();
    let fft = FftPlanner::<T>::new().plan_fft_forward(n);
    let mut data = grid.cir.clone();
    data.par_chunks_mut(n).for_each(|cell| fft.process(cell));
    Ok(Cfr {
        band: grid.band,
        axes: grid.axes,
        source: grid.source,
        data,
    })
}

/// Power-angle-delay profile: power summed over zenith, per (azimuth, delay).
#[derive(Debug, Clone, PartialEq)]
pub struct Padp<T: Real> {
    pub delay_step: T,
    pub azimuth_deg: Vec<T>,
    /// `[ai][n]`.
    pub power: Vec<T>,
    pub n_delay: usize,
}

impl<T: Real> Padp<T> {
    pub fn get(&self, n: usize, ai: usize) -> T {
        self.power[ai * self.n_delay + n]
    }

    pub fn total_energy(&self) -> T {
        self.power.iter().fold(T::zero(), |a, &b| a + b)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write_line(&mut w, VERSION_HEADER)?;
        write_line(&mut w, "tau_ns,azimuth_deg,power_db")?;
        for n in 0..self.n_delay {
            let tau = g6(self.delay_step.to_f64_lossy() * 1e9 * n as f64);
            for (ai, az) in self.azimuth_deg.iter().enumerate() {
                let line = format!(
                    "{tau},{},{}",
                    g6(az.to_f64_lossy()),
                    g6(to_db(self.get(n, ai)).to_f64_lossy())
                );
                write_line(&mut w, &line)?;
            }
        }
        Ok(())
    }
}

pub fn padp<T: Real>(grid: &AngleDelayGrid<T>) -> Padp<T> {
    let nd = grid.n_delay();
    let na = grid.axes.n_azimuth();
    let mut power = vec![T::zero(); na * nd];
    for zi in 0..grid.axes.n_zenith() {
        for ai in 0..na {
            let row = &mut power[ai * nd..(ai + 1) * nd];
            for (p, h) in row.iter_mut().zip(grid.cir_cell(zi, ai)) {
                *p += h.norm_sqr();
            }
        }
    }
    Padp {
        delay_step: grid.delay_step(),
        azimuth_deg: (0..na).map(|ai| grid.axes.azimuth(ai)).collect(),
        power,
        n_delay: nd,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ExtractConfig<T: Real> {
    /// Absolute floor in dB; `None` means 40 dB below the grid maximum.
    pub noise_floor_db: Option<T>,
    /// Minimum delay separation in bins between peaks of the same angle cell.
    pub min_separation: usize,
}

impl<T: Real> Default for ExtractConfig<T> {
    fn default() -> Self {
        Self {
            noise_floor_db: None,
            min_separation: 3,
        }
    }
}

/// Dynamic range used when no floor is given.
pub const DEFAULT_DYNAMIC_RANGE_DB: f64 = 40.0;

/// Local-maximum search over the delay-angle power tensor.
///
/// A peak must exceed the floor and be strictly larger than its face neighbors:
/// the two delay neighbors, the two zenith neighbors and the two (circular)
/// azimuth neighbors. Peaks in the same angle cell closer than `min_separation`
/// delay bins are thinned greedily, strongest first. Delay and power are
/// refined with the window's single-tone estimator; angles stay at bin centers.
pub fn extract_mpcs<T: Real>(grid: &AngleDelayGrid<T>, cfg: &ExtractConfig<T>) -> MpcSet<T> {
    let nd = grid.n_delay();
    let na = grid.axes.n_azimuth();
    let nz = grid.axes.n_zenith();
    let max = grid.max_power();
    let floor_db = cfg
        .noise_floor_db
        .unwrap_or_else(|| to_db(max) - T::lit(DEFAULT_DYNAMIC_RANGE_DB));
    let floor = from_db(floor_db);
    if !(max > floor) {
        log::warn!("all grid cells are at or below the noise floor; no MPCs extracted");
        return MpcSet::new(grid.source, Vec::new());
    }

    let p = |n: usize, zi: usize, ai: usize| grid.power(n, zi, ai);
    let mut candidates: Vec<(T, usize, usize, usize)> = Vec::new();
    for zi in 0..nz {
        for ai in 0..na {
            for n in 0..nd {
                let v = p(n, zi, ai);
                if !(v > floor) {
                    continue;
                }
                let mut neighbors: Vec<T> = Vec::with_capacity(6);
                if n > 0 {
                    neighbors.push(p(n - 1, zi, ai));
                }
                if n + 1 < nd {
                    neighbors.push(p(n + 1, zi, ai));
                }
                if zi > 0 {
                    neighbors.push(p(n, zi - 1, ai));
                }
                if zi + 1 < nz {
                    neighbors.push(p(n, zi + 1, ai));
                }
                if na > 1 {
                    neighbors.push(p(n, zi, (ai + 1) % na));
                    neighbors.push(p(n, zi, (ai + na - 1) % na));
                }
                if neighbors.iter().all(|&q| v > q) {
                    candidates.push((v, n, zi, ai));
                }
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then((a.1, a.2, a.3).cmp(&(b.1, b.2, b.3)))
    });

    let mut kept: Vec<(usize, usize, usize)> = Vec::new();
    for &(_, n, zi, ai) in &candidates {
        let close = kept
            .iter()
            .any(|&(m, zj, aj)| zj == zi && aj == ai && n.abs_diff(m) < cfg.min_separation);
        if !close {
            kept.push((n, zi, ai));
        }
    }

    let step = grid.delay_step();
    let paths = kept
        .into_iter()
        .map(|(n, zi, ai)| {
            let cell = grid.cir_cell(zi, ai);
            let (delta, power) = refine_peak(cell, n, grid.window);
            Mpc {
                tau: (T::usize(n) + delta) * step,
                azimuth_deg: grid.axes.azimuth(ai),
                zenith_deg: grid.axes.zenith(zi),
                power_db: to_db(power),
                order: None,
                chain: String::new(),
            }
        })
        .collect();
    MpcSet::new(grid.source, paths)
}

/// Fractional bin offset and tone power of the peak at bin `n`, with circular neighbors.
fn refine_peak<T: Real>(cell: &[Complex<T>], n: usize, window: Window) -> (T, T) {
    let len = cell.len();
    let a0 = cell[n].norm();
    let ap = cell[(n + 1) % len].norm();
    let am = cell[(n + len - 1) % len].norm();
    if !(a0 > T::zero()) {
        return (T::zero(), T::zero());
    }
    let delta = if ap >= am {
        window.offset_from_ratio(ap / a0)
    } else {
        -window.offset_from_ratio(am / a0)
    };
    let gain = window.response(delta);
    (delta, (a0 / gain).powi(2))
}

/// Omnidirectional PDP, the per-delay maximum over both angle axes.
#[derive(Debug, Clone, PartialEq)]
pub struct OmniPdp<T: Real> {
    pub delay_step: T,
    pub window: Window,
    pub power: Vec<T>,
}

impl<T: Real> OmniPdp<T> {
    /// Power of a tone at delay `tau`, read at the nearest bin and corrected for
    /// the known sub-bin offset.
    pub fn power_at(&self, tau: T) -> Result<T> {
        let x = tau / self.delay_step;
        let n = x.round();
        let idx = n
            .to_usize()
            .filter(|&i| i < self.power.len())
            .ok_or_else(|| Error::InvalidInput("delay outside the grid".into()))?;
        let p = self.power[idx];
        if !(p > T::zero()) {
            return Err(Error::InvalidInput(format!(
                "zero power at delay bin {idx}"
            )));
        }
        Ok(p / self.window.response(x - n).powi(2))
    }
}

pub fn omni_pdp<T: Real>(grid: &AngleDelayGrid<T>) -> OmniPdp<T> {
    let nd = grid.n_delay();
    let mut power = vec![T::zero(); nd];
    for zi in 0..grid.axes.n_zenith() {
        for ai in 0..grid.axes.n_azimuth() {
            for (p, h) in power.iter_mut().zip(grid.cir_cell(zi, ai)) {
                *p = p.max(h.norm_sqr());
            }
        }
    }
    OmniPdp {
        delay_step: grid.delay_step(),
        window: grid.window,
        power,
    }
}

/// Excess loss of a path over free space: `reference - P - FSPL(f, tau)`, where
/// `reference_db` is the transmit power plus antenna gains on the power scale.
pub fn reflection_loss_from_power<T: Real>(power_db: T, tau: T, f: T, reference_db: T) -> T {
    reference_db - power_db - fspl_db(f, tau)
}

/// Reflection loss of the path at `tau`, reading its power from the omni PDP.
pub fn reflection_loss_of_path<T: Real>(
    pdp: &OmniPdp<T>,
    tau: T,
    f: T,
    reference_db: T,
) -> Result<T> {
    Ok(reflection_loss_from_power(
        to_db(pdp.power_at(tau)?),
        tau,
        f,
        reference_db,
    ))
}

/// Distinct `(zenith bin, azimuth bin)` cells occupied by a set of MPCs.
pub fn occupied_cells<T: Real>(mpcs: &[Mpc<T>], axes: &AngleAxes<T>) -> BTreeSet<(usize, usize)> {
    mpcs.iter()
        .map(|m| {
            (
                axes.zenith_bin(m.zenith_deg),
                axes.azimuth_bin(m.azimuth_deg),
            )
        })
        .collect()
}
