//! Deterministic image-method ray tracer.
//!
//! For each ordered facet sequence up to `max_order`, the transmitter is
//! mirrored across the facet planes, the path is unfolded back from the
//! receiver, and every segment is checked against the triangle bounds and
//! facet occlusion. Received power accounts for free-space loss, per-bounce
//! slab reflection loss at the actual incidence angle, a constant molecular
//! absorption coefficient, and penetration loss through human blockers.

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Aabb, Vec3};
use crate::materials::{power_reflectance, slab_reflection, Polarization, ReflectionQuery};
use crate::num::{circular_diff_deg, from_db, fspl_db, to_db, wrap_deg, Real};
use crate::scene::Scene;

/// Highest reflection order the tracer accepts.
pub const MAX_SUPPORTED_ORDER: usize = 3;

/// One specular bounce: the facet index and its material name.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Bounce {
    pub facet: usize,
    pub material: String,
}

/// A single multipath component between a transmitter and a receiver.
#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord<T: Real> {
    /// Propagation delay, seconds.
    pub tau: T,
    /// Arrival azimuth at the receiver, degrees in `[0, 360)`, counterclockwise from +x.
    pub azimuth_deg: T,
    /// Arrival elevation at the receiver, degrees, positive up.
    pub zenith_deg: T,
    /// Received power, dB on the same reference as the configured transmit power.
    pub power_db: T,
    /// Complex channel coefficient; `|gain|^2` in dB equals `power_db`.
    pub gain: Complex<T>,
    pub bounces: Vec<Bounce>,
    /// Set when at least one segment crosses a human blocker.
    pub human_penetration: bool,
    /// Reflection points, in propagation order.
    pub points: Vec<Vec3<T>>,
}

impl<T: Real> PathRecord<T> {
    pub fn order(&self) -> usize {
        self.bounces.len()
    }

    pub fn facet_chain(&self) -> Vec<usize> {
        self.bounces.iter().map(|b| b.facet).collect()
    }

    /// Material names joined with `;`, empty for line of sight.
    pub fn material_chain(&self) -> String {
        self.bounces
            .iter()
            .map(|b| b.material.as_str())
            .collect::<Vec<_>>()
            .join(";")
    }

    pub fn is_los(&self) -> bool {
        self.bounces.is_empty()
    }
}

/// Axis-aligned human blocker applying a scalar penetration loss to any crossing segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct HumanBox<T: Real> {
    pub bounds: Aabb<T>,
    pub penetration_loss_db: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct TraceConfig<T: Real> {
    /// Carrier frequency, Hz.
    pub frequency: T,
    pub max_order: usize,
    /// Molecular absorption, dB per meter of path length.
    pub absorption_db_per_m: T,
    #[serde(default)]
    pub human_boxes: Vec<HumanBox<T>>,
    pub tx_power_dbm: T,
    pub tx_gain_db: T,
    pub rx_gain_db: T,
    /// Pinned polarization for reflection loss; `None` averages TE and TM power.
    #[serde(default)]
    pub polarization: Option<Polarization>,
}

impl<T: Real> Default for TraceConfig<T> {
    fn default() -> Self {
        Self {
            frequency: T::lit(300e9),
            max_order: 2,
            absorption_db_per_m: T::lit(0.005),
            human_boxes: Vec::new(),
            tx_power_dbm: T::zero(),
            tx_gain_db: T::zero(),
            rx_gain_db: T::zero(),
            polarization: None,
        }
    }
}

impl<T: Real> TraceConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.frequency > T::zero()) {
            return Err(Error::InvalidInput("frequency must be > 0".into()));
        }
        if self.max_order > MAX_SUPPORTED_ORDER {
            return Err(Error::InvalidInput(format!(
                "max_order {} exceeds {MAX_SUPPORTED_ORDER}",
                self.max_order
            )));
        }
        if !(self.absorption_db_per_m >= T::zero()) {
            return Err(Error::InvalidInput("absorption must be >= 0".into()));
        }
        Ok(())
    }

    pub fn wavelength(&self) -> T {
        T::c0() / self.frequency
    }
}

/// Arrival azimuth/elevation at `rx` of a ray whose last leg comes from `from`.
pub fn arrival_angles<T: Real>(rx: Vec3<T>, from: Vec3<T>) -> (T, T) {
    let d = from - rx;
    let az = wrap_deg(d.y.atan2(d.x).to_degrees());
    let horiz = (d.x * d.x + d.y * d.y).sqrt();
    let el = d.z.atan2(horiz).to_degrees();
    (az, el)
}

struct Tracer<'a, T: Real> {
    scene: &'a Scene<T>,
    cfg: &'a TraceConfig<T>,
    tx: Vec3<T>,
    rx: Vec3<T>,
}

impl<'a, T: Real> Tracer<'a, T> {
    fn new(scene: &'a Scene<T>, cfg: &'a TraceConfig<T>, tx: Vec3<T>, rx: Vec3<T>) -> Self {
        Self { scene, cfg, tx, rx }
    }

    fn run(&self) -> Vec<PathRecord<T>> {
        let mut out = Vec::new();
        if !self.scene.is_occluded(self.tx, self.rx, &[]) {
            out.push(self.build(&[], &[]));
        }
        let mut seq = Vec::with_capacity(self.cfg.max_order);
        let mut images = Vec::with_capacity(self.cfg.max_order);
        let mut found: Vec<(Vec<usize>, Vec<Vec3<T>>)> = Vec::new();
        self.extend(&mut seq, &mut images, &mut found);
        for (facets, points) in found {
            out.push(self.build(&facets, &points));
        }
        out.sort_by(|a, b| {
            a.tau
                .partial_cmp(&b.tau)
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        out
    }

    fn extend(
        &self,
        seq: &mut Vec<usize>,
        images: &mut Vec<Vec3<T>>,
        found: &mut Vec<(Vec<usize>, Vec<Vec3<T>>)>,
    ) {
        if seq.len() == self.cfg.max_order {
            return;
        }
        let tris = self.scene.triangles();
        let source = images.last().copied().unwrap_or(self.tx);
        let eps = T::geom_eps();
        for (f, tri) in tris.iter().enumerate() {
            if let Some(&last) = seq.last() {
                if self.scene.coplanar(last).contains(&f) {
                    continue;
                }
            }
            let ds = tri.plane_distance(source);
            if ds.abs() <= eps {
                continue;
            }
            let image = tri.mirror(source);
            seq.push(f);
            images.push(image);
            // a closing bounce needs the receiver on the source side of the plane
            let dr = tri.plane_distance(self.rx);
            if dr.abs() > eps && (dr > T::zero()) == (ds > T::zero()) {
                if let Some(points) = self.unfold(seq, images) {
                    if !found
                        .iter()
                        .any(|(s, p)| s.len() == seq.len() && same_points(p, &points))
                    {
                        found.push((seq.clone(), points));
                    }
                }
            }
            self.extend(seq, images, found);
            seq.pop();
            images.pop();
        }
    }

    /// Back-propagates from the receiver through the image chain. Returns the
    /// reflection points when the path is geometrically valid and unoccluded.
    fn unfold(&self, seq: &[usize], images: &[Vec3<T>]) -> Option<Vec<Vec3<T>>> {
        let tris = self.scene.triangles();
        let eps = T::geom_eps();
        let k = seq.len();
        let mut points = [Vec3::zero(); MAX_SUPPORTED_ORDER];
        let mut target = self.rx;
        for j in (0..k).rev() {
            let d = images[j] - target;
            let len = d.norm();
            if len <= eps {
                return None;
            }
            let t = tris[seq[j]].intersect(target, d)?;
            if !(t > eps / len && t < T::one() - eps / len) {
                return None;
            }
            let p = target + d * t;
            points[j] = p;
            target = p;
        }
        // occlusion, ignoring the facets at each segment's endpoints
        let mut prev = self.tx;
        let mut prev_facet: Option<usize> = None;
        for j in 0..=k {
            let (next, next_facet) = if j < k {
                (points[j], Some(seq[j]))
            } else {
                (self.rx, None)
            };
            if prev.distance(next) <= eps {
                return None;
            }
            let ignore_a = prev_facet.map_or(&[][..], |f| self.scene.coplanar(f));
            let ignore_b = next_facet.map_or(&[][..], |f| self.scene.coplanar(f));
            if self
                .scene
                .is_occluded_ignoring(prev, next, ignore_a, ignore_b)
            {
                return None;
            }
            prev = next;
            prev_facet = next_facet;
        }
        Some(points[..k].to_vec())
    }

    fn build(&self, facets: &[usize], points: &[Vec3<T>]) -> PathRecord<T> {
        let cfg = self.cfg;
        let mut vertices = Vec::with_capacity(points.len() + 2);
        vertices.push(self.tx);
        vertices.extend_from_slice(points);
        vertices.push(self.rx);

        let length = vertices
            .windows(2)
            .fold(T::zero(), |acc, w| acc + w[0].distance(w[1]));
        let tau = length / T::c0();

        let mut reflection_loss = T::zero();
        let mut phase = T::zero();
        let mut bounces = Vec::with_capacity(facets.len());
        for (j, &f) in facets.iter().enumerate() {
            let incoming = (vertices[j + 1] - vertices[j]).normalized();
            let normal = self.scene.triangles()[f].normal;
            let cos_i = incoming.dot(normal).abs().min(T::one());
            let theta0 = cos_i.acos().min(T::FRAC_PI_2() - T::lit(1e-9));
            let material = self.scene.facet_material(f);
            let q = ReflectionQuery::for_material(
                &material,
                theta0,
                cfg.wavelength(),
                cfg.polarization.unwrap_or(Polarization::Te),
            );
            reflection_loss -= to_db(power_reflectance(&q, cfg.polarization));
            phase += slab_reflection(&q).arg();
            bounces.push(Bounce {
                facet: f,
                material: material.name,
            });
        }

        let mut penetration = T::zero();
        let mut human = false;
        for w in vertices.windows(2) {
            for hb in &cfg.human_boxes {
                if hb.bounds.segment_crosses(w[0], w[1]) {
                    penetration += hb.penetration_loss_db;
                    human = true;
                }
            }
        }

        let power_db = cfg.tx_power_dbm + cfg.tx_gain_db + cfg.rx_gain_db
            - fspl_db(cfg.frequency, tau)
            - reflection_loss
            - cfg.absorption_db_per_m * length
            - penetration;
        let amplitude = from_db(power_db).sqrt();
        let (azimuth_deg, zenith_deg) = arrival_angles(self.rx, vertices[vertices.len() - 2]);

        PathRecord {
            tau,
            azimuth_deg,
            zenith_deg,
            power_db,
            gain: Complex::from_polar(amplitude, phase),
            bounces,
            human_penetration: human,
            points: points.to_vec(),
        }
    }
}

fn same_points<T: Real>(a: &[Vec3<T>], b: &[Vec3<T>]) -> bool {
    let tol = T::geom_eps();
    a.len() == b.len() && a.iter().zip(b).all(|(p, q)| p.distance(*q) <= tol)
}

/// Traces every specular path from `tx` to `rx` up to `cfg.max_order` bounces,
/// sorted by delay. A facet-occluded line of sight is dropped; a line of sight
/// crossing a human blocker is kept with its penetration loss applied.
pub fn trace<T: Real>(
    scene: &Scene<T>,
    tx: Vec3<T>,
    rx: Vec3<T>,
    cfg: &TraceConfig<T>,
) -> Vec<PathRecord<T>> {
    if tx.distance(rx) <= T::geom_eps() {
        return Vec::new();
    }
    Tracer::new(scene, cfg, tx, rx).run()
}

/// Keeps paths whose arrival azimuth lies in the circular interval
/// `[center - half_width, center + half_width]`.
pub fn sector_filter<T: Real>(
    paths: &[PathRecord<T>],
    sector_center_deg: T,
    half_width_deg: T,
) -> Vec<PathRecord<T>> {
    let tol = T::lit(1e-9);
    paths
        .iter()
        .filter(|p| circular_diff_deg(p.azimuth_deg, sector_center_deg) <= half_width_deg + tol)
        .cloned()
        .collect()
}

/// Emulates a four-receiver directional capture: traces from four points displaced
/// by `radius` at azimuths 0, 90, 180 and 270 degrees around `rx_center`, keeps each
/// receiver's +-45 degree sector, and merges, keeping the strongest record per
/// facet chain.
pub fn four_sector_merge<T: Real>(
    scene: &Scene<T>,
    tx: Vec3<T>,
    rx_center: Vec3<T>,
    cfg: &TraceConfig<T>,
    radius: T,
) -> Vec<PathRecord<T>> {
    let mut merged: Vec<PathRecord<T>> = Vec::new();
    for k in 0..4 {
        let az = T::lit(90.0) * T::usize(k);
        let rad = az.to_radians();
        let rx = rx_center + Vec3::new(rad.cos(), rad.sin(), T::zero()) * radius;
        let paths = trace(scene, tx, rx, cfg);
        for p in sector_filter(&paths, az, T::lit(45.0)) {
            let chain = p.facet_chain();
            match merged.iter_mut().find(|m| m.facet_chain() == chain) {
                Some(m) if p.power_db > m.power_db => *m = p,
                Some(_) => {}
                None => merged.push(p),
            }
        }
    }
    merged.sort_by(|a, b| {
        a.tau
            .partial_cmp(&b.tau)
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    merged
}
