//! Transmitter placement: candidate screening, then Powell refinement.
//!
//! The objective is the system rate under the configured association,
//! `B / N * E[log2(1 + SINR)]` over the receiver population, minus an exterior
//! penalty when a transmitter's coverage at the threshold does not exceed the
//! required probability or a coordinate leaves the allowed box.

use std::cell::RefCell;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Aabb, Vec3};
use crate::num::{from_db, Real};
use crate::planning::{evaluate_population, CoverageCurve, PlanConfig, RxPopulation, SinrSamples};
use crate::scene::Scene;

/// Distance to the nearest facet under which a point counts as mountable.
pub const MOUNT_DISTANCE: f64 = 0.05;
/// Initial line-search step, meters.
pub const INITIAL_STEP: f64 = 0.1;

pub struct OptProblem<'a, T: Real> {
    pub scene: &'a Scene<T>,
    pub cfg: PlanConfig<T>,
    pub rx_pop: RxPopulation<T>,
    pub n_tx: usize,
    pub bounds: Aabb<T>,
    pub gamma_db: T,
    pub p_th: T,
    pub candidates: Vec<(String, Vec3<T>)>,
}

/// Evaluation of one deployment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Evaluation<T: Real> {
    pub objective: T,
    pub rate_bps: T,
    /// Coverage at `gamma` per transmitter, over the receivers it serves.
    pub tx_coverage: Vec<T>,
    pub feasible: bool,
    pub in_bounds: bool,
}

impl<'a, T: Real> OptProblem<'a, T> {
    pub fn validate(&self) -> Result<()> {
        if self.n_tx == 0 {
            return Err(Error::InvalidInput("n_tx must be >= 1".into()));
        }
        if !self.scene.bounds().contains_box(&self.bounds) {
            return Err(Error::InvalidInput(
                "optimization bounds exceed the scene".into(),
            ));
        }
        if !(self.p_th >= T::zero() && self.p_th <= T::one()) {
            return Err(Error::InvalidInput("p_th must be in [0, 1]".into()));
        }
        self.cfg.validate()
    }

    /// Penalty weight per unit of constraint violation, ten times the rate of a
    /// link exactly at the threshold over the full band.
    pub fn penalty_weight(&self) -> T {
        T::lit(10.0) * self.cfg.bandwidth * (T::one() + from_db(self.gamma_db)).log2()
    }

    pub fn samples(&self, coords: &[Vec3<T>]) -> (SinrSamples<T>, Vec<Option<usize>>) {
        let outcomes = evaluate_population(self.scene, coords, &self.rx_pop.points, &self.cfg);
        let serving = outcomes.iter().map(|o| o.serving).collect();
        let samples =
            SinrSamples::from_outcomes(&outcomes, &self.rx_pop).expect("population is non-empty");
        (samples, serving)
    }

    pub fn evaluate(&self, coords: &[Vec3<T>]) -> Evaluation<T> {
        let m = self.penalty_weight();
        let violation = coords
            .iter()
            .fold(T::zero(), |a, &p| a + self.bounds.violation(p));
        if violation > T::zero() || coords.iter().any(|p| !p.is_finite()) {
            let v = if violation.is_finite() {
                violation
            } else {
                T::lit(1e6)
            };
            return Evaluation {
                objective: -m * (T::one() + v),
                rate_bps: T::zero(),
                tx_coverage: vec![T::zero(); coords.len()],
                feasible: false,
                in_bounds: false,
            };
        }
        let (samples, serving) = self.samples(coords);
        let rate = samples.rate_bps(self.cfg.bandwidth, coords.len());
        let n_rx = T::usize(self.rx_pop.len());
        let mut shortfall = T::zero();
        let mut tx_coverage = Vec::with_capacity(coords.len());
        for i in 0..coords.len() {
            let mut total = T::zero();
            let mut covered = T::zero();
            for (k, s) in serving.iter().enumerate() {
                if *s == Some(i) {
                    let w = self.rx_pop.weight(k);
                    total += w;
                    if samples.sinr_db[k] > self.gamma_db {
                        covered += w;
                    }
                }
            }
            let cov = if total > T::zero() {
                covered / total
            } else {
                T::zero()
            };
            if !(cov > self.p_th) {
                // an exactly-met bound is still infeasible: count one receiver short
                shortfall += self.p_th - cov + T::one() / n_rx;
            }
            tx_coverage.push(cov);
        }
        Evaluation {
            objective: rate - m * shortfall,
            rate_bps: rate,
            tx_coverage,
            feasible: shortfall == T::zero(),
            in_bounds: true,
        }
    }

    pub fn objective(&self, coords: &[Vec3<T>]) -> T {
        self.evaluate(coords).objective
    }

    pub fn coverage_curve(&self, coords: &[Vec3<T>], thresholds_db: &[T]) -> CoverageCurve<T> {
        self.samples(coords).0.curve(thresholds_db)
    }

    fn flat_bounds(&self, n: usize) -> Vec<(T, T)> {
        (0..n)
            .flat_map(|_| (0..3).map(|i| (self.bounds.min[i], self.bounds.max[i])))
            .collect()
    }
}

fn unflatten<T: Real>(x: &[T]) -> Vec<Vec3<T>> {
    x.chunks(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect()
}

fn flatten<T: Real>(coords: &[Vec3<T>]) -> Vec<T> {
    coords.iter().flat_map(|p| p.to_array()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct PowellResult<T: Real> {
    pub x: Vec<T>,
    pub f: T,
    pub iterations: usize,
    pub evaluations: usize,
    /// False when `max_iter` was reached before the tolerance test passed.
    pub converged: bool,
}

struct Counted<F> {
    f: F,
    evaluations: usize,
}

impl<F> Counted<F> {
    fn call<T: Real>(&mut self, x: &[T]) -> T
    where
        F: FnMut(&[T]) -> T,
    {
        self.evaluations += 1;
        let v = (self.f)(x);
        if v.is_nan() {
            T::neg_infinity()
        } else {
            v
        }
    }
}

/// Maximizes `f` over a box with Powell's conjugate-direction method.
///
/// Each cycle runs a bounded golden-section line search along every direction;
/// the direction of largest gain is replaced by the cycle's net displacement
/// when the classic extrapolation test allows it. Every probe lies inside the
/// box. Stops when a cycle gains less than `tol` relative to `|f|` (with an
/// absolute floor of `tol^2`), or after `max_iter` cycles.
pub fn powell_maximize<T: Real>(
    f: impl FnMut(&[T]) -> T,
    x0: &[T],
    bounds: &[(T, T)],
    tol: T,
    max_iter: usize,
) -> Result<PowellResult<T>> {
    let n = x0.len();
    if n == 0 || bounds.len() != n {
        return Err(Error::InvalidInput(
            "x0 and bounds must have the same non-zero length".into(),
        ));
    }
    if !(tol > T::zero()) {
        return Err(Error::InvalidInput("tol must be > 0".into()));
    }
    if bounds.iter().any(|(lo, hi)| !(lo <= hi)) {
        return Err(Error::InvalidInput("empty bound interval".into()));
    }
    let mut fun = Counted { f, evaluations: 0 };
    let mut x: Vec<T> = x0
        .iter()
        .zip(bounds)
        .map(|(&v, &(lo, hi))| v.max(lo).min(hi))
        .collect();
    let mut fx = fun.call(&x);
    let mut dirs: Vec<Vec<T>> = (0..n)
        .map(|i| {
            let mut d = vec![T::zero(); n];
            d[i] = T::one();
            d
        })
        .collect();
    let step = T::lit(INITIAL_STEP);
    let line_tol = tol;

    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let x_start = x.clone();
        let f_start = fx;
        let mut biggest = T::zero();
        let mut ibig = 0;
        for (i, d) in dirs.iter().enumerate() {
            let (xn, fnew) = line_search(&mut fun, &x, fx, d, bounds, step, line_tol);
            if fnew - fx > biggest {
                biggest = fnew - fx;
                ibig = i;
            }
            x = xn;
            fx = fnew;
        }
        let gain = fx - f_start;
        let scale = (f_start.abs() + fx.abs()) * T::lit(0.5);
        if gain <= tol * scale + tol * tol {
            converged = true;
            break;
        }
        let dnew: Vec<T> = x.iter().zip(&x_start).map(|(a, b)| *a - *b).collect();
        let norm = dnew.iter().fold(T::zero(), |a, &v| a + v * v).sqrt();
        if !(norm > T::zero()) {
            converged = true;
            break;
        }
        let x_ext: Vec<T> = x.iter().zip(&x_start).map(|(a, b)| *a + *a - *b).collect();
        let inside = x_ext
            .iter()
            .zip(bounds)
            .all(|(&v, &(lo, hi))| v >= lo && v <= hi);
        if inside {
            // work with minimization quantities: g = -f
            let g0 = -f_start;
            let g1 = -fx;
            let ge = -fun.call(&x_ext);
            if ge < g0 {
                let big = biggest;
                let t = T::lit(2.0) * (g0 - T::lit(2.0) * g1 + ge) * (g0 - g1 - big).powi(2)
                    - big * (g0 - ge).powi(2);
                if t < T::zero() {
                    let unit: Vec<T> = dnew.iter().map(|&v| v / norm).collect();
                    let (xn, fnew) = line_search(&mut fun, &x, fx, &unit, bounds, step, line_tol);
                    x = xn;
                    fx = fnew;
                    dirs[ibig] = dirs[n - 1].clone();
                    dirs[n - 1] = unit;
                }
            }
        }
    }
    Ok(PowellResult {
        x,
        f: fx,
        iterations,
        evaluations: fun.evaluations,
        converged,
    })
}

/// Golden-section maximization of `f(x + a d)` with `a` restricted so the point
/// stays in the box. Returns the best evaluated point (never worse than `x`).
fn line_search<T: Real, F: FnMut(&[T]) -> T>(
    fun: &mut Counted<F>,
    x: &[T],
    fx: T,
    d: &[T],
    bounds: &[(T, T)],
    step: T,
    tol: T,
) -> (Vec<T>, T) {
    let (mut a_lo, mut a_hi) = (T::neg_infinity(), T::infinity());
    for ((&xi, &di), &(lo, hi)) in x.iter().zip(d).zip(bounds) {
        if di > T::zero() {
            a_lo = a_lo.max((lo - xi) / di);
            a_hi = a_hi.min((hi - xi) / di);
        } else if di < T::zero() {
            a_lo = a_lo.max((hi - xi) / di);
            a_hi = a_hi.min((lo - xi) / di);
        }
    }
    a_lo = a_lo.min(T::zero());
    a_hi = a_hi.max(T::zero());
    if !(a_hi - a_lo > tol) {
        return (x.to_vec(), fx);
    }
    let point = |a: T| -> Vec<T> {
        x.iter()
            .zip(d)
            .zip(bounds)
            .map(|((&xi, &di), &(lo, hi))| (xi + a * di).max(lo).min(hi))
            .collect()
    };
    let best = RefCell::new((T::zero(), fx));
    let mut eval = |a: T| -> T {
        let v = fun.call(&point(a));
        let mut b = best.borrow_mut();
        if v > b.1 {
            *b = (a, v);
        }
        v
    };

    // bracket the maximum
    let golden = T::lit(1.618_033_988_749_895);
    let (mut a, mut fa) = (T::zero(), fx);
    let mut b = step.min(a_hi);
    let mut fb = if b > a { eval(b) } else { T::neg_infinity() };
    if !(fb > fa) {
        let back = (-step).max(a_lo);
        let fback = if back < a {
            eval(back)
        } else {
            T::neg_infinity()
        };
        if fback > fa {
            // walk backwards instead
            b = back;
            fb = fback;
        } else {
            let lo = if back < a { back } else { a };
            let hi = if b > a { b } else { a };
            golden_section(&mut eval, lo, hi, tol);
            let (ab, fbest) = *best.borrow();
            return (point(ab), fbest);
        }
    }
    let limit = if b > a { a_hi } else { a_lo };
    loop {
        let mut c = b + golden * (b - a);
        if (b > a && c > limit) || (b < a && c < limit) {
            c = limit;
        }
        if c == b {
            break;
        }
        let fc = eval(c);
        if fc > fb {
            a = b;
            fa = fc.min(fb);
            b = c;
            fb = fc;
            continue;
        }
        golden_section(&mut eval, a.min(c), a.max(c), tol);
        let (ab, fbest) = *best.borrow();
        return (point(ab), fbest);
    }
    let _ = fa;
    // the maximum sits on the boundary; refine between the last interior point and it
    golden_section(&mut eval, a.min(b), a.max(b), tol);
    let (ab, fbest) = *best.borrow();
    (point(ab), fbest)
}

fn golden_section<T: Real>(eval: &mut impl FnMut(T) -> T, lo: T, hi: T, tol: T) {
    let r = T::lit(0.618_033_988_749_895);
    let (mut a, mut b) = (lo, hi);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let mut fc = eval(c);
    let mut fd = eval(d);
    while b - a > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = eval(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = eval(d);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ScreenEntry<T: Real> {
    pub names: Vec<String>,
    pub coords: Vec<Vec3<T>>,
    pub evaluation: Evaluation<T>,
    pub coverage: CoverageCurve<T>,
}

/// Candidate combinations ranked by objective, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ScreenReport<T: Real> {
    pub entries: Vec<ScreenEntry<T>>,
}

impl<T: Real> ScreenReport<T> {
    pub fn best(&self) -> Option<&ScreenEntry<T>> {
        self.entries.first()
    }

    pub fn best_for(&self, n: usize) -> Option<&ScreenEntry<T>> {
        self.entries.iter().find(|e| e.coords.len() == n)
    }
}

fn combinations(k: usize, n: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, k: usize, n: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == n {
            out.push(cur.clone());
            return;
        }
        for i in start..k {
            cur.push(i);
            rec(i + 1, k, n, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, k, n, &mut Vec::new(), &mut out);
    out
}

/// Evaluates every combination of `n` candidates for each `n` in `n_values`.
/// Stable ranking: ties keep enumeration order.
pub fn stage1_screen<T: Real>(
    problem: &OptProblem<'_, T>,
    n_values: &[usize],
    thresholds_db: &[T],
) -> Result<ScreenReport<T>> {
    if problem.candidates.is_empty() {
        return Err(Error::InvalidInput("no candidates".into()));
    }
    let mut entries = Vec::new();
    for &n in n_values {
        if n == 0 || n > problem.candidates.len() {
            return Err(Error::InvalidInput(format!(
                "cannot choose {n} of {} candidates",
                problem.candidates.len()
            )));
        }
        for combo in combinations(problem.candidates.len(), n) {
            let names: Vec<String> = combo
                .iter()
                .map(|&i| problem.candidates[i].0.clone())
                .collect();
            let coords: Vec<Vec3<T>> = combo.iter().map(|&i| problem.candidates[i].1).collect();
            let evaluation = problem.evaluate(&coords);
            let coverage = problem.coverage_curve(&coords, thresholds_db);
            entries.push(ScreenEntry {
                names,
                coords,
                evaluation,
                coverage,
            });
        }
    }
    entries.sort_by(|a, b| {
        b.evaluation
            .objective
            .partial_cmp(&a.evaluation.objective)
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    Ok(ScreenReport { entries })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Alternative<T: Real> {
    pub coords: Vec<Vec3<T>>,
    pub objective: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct OptResult<T: Real> {
    pub start: Vec<Vec3<T>>,
    pub start_objective: T,
    pub coords: Vec<Vec3<T>>,
    pub objective: T,
    pub rate_bps: T,
    pub tx_coverage: Vec<T>,
    pub feasible: bool,
    pub coverage: CoverageCurve<T>,
    /// Best evaluated deployment with every transmitter within the mount distance of a facet.
    pub alternative: Option<Alternative<T>>,
    pub evaluations: usize,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct RefineConfig<T: Real> {
    pub tol: T,
    pub max_iter: usize,
    pub mount_distance: T,
}

impl<T: Real> Default for RefineConfig<T> {
    fn default() -> Self {
        Self {
            tol: T::lit(1e-4),
            max_iter: 50,
            mount_distance: T::lit(MOUNT_DISTANCE),
        }
    }
}

/// Runs Powell over all `3N` coordinates jointly from `start`.
pub fn stage2_refine<T: Real>(
    problem: &OptProblem<'_, T>,
    start: &[Vec3<T>],
    rc: &RefineConfig<T>,
    thresholds_db: &[T],
) -> Result<OptResult<T>> {
    if start.is_empty() {
        return Err(Error::InvalidInput("empty start".into()));
    }
    if start.iter().any(|p| !problem.bounds.contains(*p)) {
        return Err(Error::InvalidInput(
            "start point outside the optimization bounds".into(),
        ));
    }
    let start_objective = problem.objective(start);
    let mut alternative: Option<Alternative<T>> = None;
    let scene = problem.scene;
    let mounted = |coords: &[Vec3<T>]| {
        coords.iter().all(|&p| {
            scene
                .distance_to_nearest_facet(p)
                .is_some_and(|d| d <= rc.mount_distance)
        })
    };
    if mounted(start) {
        alternative = Some(Alternative {
            coords: start.to_vec(),
            objective: start_objective,
        });
    }
    let bounds = problem.flat_bounds(start.len());
    let res = powell_maximize(
        |x: &[T]| {
            let coords = unflatten(x);
            let v = problem.objective(&coords);
            if mounted(&coords) && alternative.as_ref().is_none_or(|a| v > a.objective) {
                alternative = Some(Alternative {
                    coords,
                    objective: v,
                });
            }
            v
        },
        &flatten(start),
        &bounds,
        rc.tol,
        rc.max_iter,
    )?;
    let coords = unflatten(&res.x);
    let eval = problem.evaluate(&coords);
    Ok(OptResult {
        start: start.to_vec(),
        start_objective,
        coverage: problem.coverage_curve(&coords, thresholds_db),
        coords,
        objective: eval.objective,
        rate_bps: eval.rate_bps,
        tx_coverage: eval.tx_coverage,
        feasible: eval.feasible,
        alternative,
        evaluations: res.evaluations + 1,
        iterations: res.iterations,
        converged: res.converged,
    })
}
