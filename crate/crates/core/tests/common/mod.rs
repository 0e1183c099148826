//! Shared fixtures and the brute-force path oracle used by the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use thzcabin::scene::{load_scene, MaterialDb};
use thzcabin::{PlanConfig, RxPopulation, Scene, Vec3, SPEED_OF_LIGHT};

// also compiled into the CLI tests, hence the detour through the core crate dir
pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../core/fixtures")
        .join(name)
}

pub fn materials() -> MaterialDb<f64> {
    MaterialDb::load(fixture("materials.csv")).unwrap()
}

pub fn id_materials() -> MaterialDb<f64> {
    MaterialDb::load(fixture("material_id.csv")).unwrap()
}

pub fn cabin() -> Scene {
    load_scene(fixture("cabin.json"), materials()).unwrap()
}

pub fn shoebox() -> Scene {
    load_scene(fixture("shoebox.json"), materials()).unwrap()
}

fn config_json() -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(fixture("cabin_config.json")).unwrap()).unwrap()
}

pub fn cabin_plan() -> PlanConfig {
    serde_json::from_value(config_json()).unwrap()
}

pub fn config_f64(key: &str) -> f64 {
    config_json()[key].as_f64().unwrap()
}

fn config_vec(key: &str) -> Vec3 {
    let v: Vec<f64> = serde_json::from_value(config_json()[key].clone()).unwrap();
    Vec3::new(v[0], v[1], v[2])
}

/// The 80-receiver population the cabin tests share.
pub fn cabin_population(scene: &Scene) -> RxPopulation {
    let cfg = config_json();
    thzcabin::planning::sample_rx_population(
        scene,
        cfg["rx_count"].as_u64().unwrap() as usize,
        config_vec("rx_mean"),
        config_vec("rx_stddev"),
        cfg["rx_seed"].as_u64().unwrap(),
    )
    .unwrap()
}

pub fn tx(scene: &Scene, name: &str) -> Vec3 {
    scene.tx_position(name).unwrap()
}

/// A specular path found by direct minimization of the unfolded length.
#[derive(Debug, Clone)]
pub struct OraclePath {
    pub facets: Vec<usize>,
    pub points: Vec<Vector3<f64>>,
    pub length: f64,
}

impl OraclePath {
    pub fn tau(&self) -> f64 {
        self.length / SPEED_OF_LIGHT
    }
}

const EPS: f64 = 1e-9;

fn v3(p: Vec3) -> Vector3<f64> {
    Vector3::new(p.x, p.y, p.z)
}

struct Plane {
    origin: Vector3<f64>,
    basis: [Vector3<f64>; 2],
    normal: Vector3<f64>,
    tri: [Vector3<f64>; 3],
}

impl Plane {
    fn new(tri: [Vector3<f64>; 3]) -> Self {
        let e1 = tri[1] - tri[0];
        let normal = e1.cross(&(tri[2] - tri[0])).normalize();
        let a = e1.normalize();
        let b = normal.cross(&a);
        Self {
            origin: (tri[0] + tri[1] + tri[2]) / 3.0,
            basis: [a, b],
            normal,
            tri,
        }
    }

    fn point(&self, u: f64, v: f64) -> Vector3<f64> {
        self.origin + self.basis[0] * u + self.basis[1] * v
    }

    fn side(&self, p: &Vector3<f64>) -> f64 {
        self.normal.dot(&(p - self.tri[0]))
    }

    fn same_plane(&self, o: &Plane) -> bool {
        (self.normal.dot(&o.normal).abs() - 1.0).abs() < 1e-9 && self.side(&o.tri[0]).abs() < 1e-9
    }

    /// Point-in-triangle by sub-triangle orientation, for a point on the plane.
    fn contains(&self, p: &Vector3<f64>) -> bool {
        let [a, b, c] = self.tri;
        let s = |x: &Vector3<f64>, y: &Vector3<f64>| (y - x).cross(&(p - x)).dot(&self.normal);
        let scale = (b - a).norm() * (c - a).norm();
        let tol = -1e-12 * scale;
        s(&a, &b) >= tol && s(&b, &c) >= tol && s(&c, &a) >= tol
    }
}

/// Segment blocked by any triangle not in `skip`. Uses a plane-crossing plus
/// orientation test, independent of the library's intersection routine.
fn blocked(planes: &[Plane], a: &Vector3<f64>, b: &Vector3<f64>, skip: &[usize]) -> bool {
    let len = (b - a).norm();
    planes.iter().enumerate().any(|(i, pl)| {
        if skip.contains(&i) {
            return false;
        }
        let (da, db) = (pl.side(a), pl.side(b));
        if da * db >= 0.0 || da == db {
            return false;
        }
        let t = da / (da - db);
        if t * len <= EPS || (1.0 - t) * len <= EPS {
            return false;
        }
        pl.contains(&(a + (b - a) * t))
    })
}

/// Minimizes the total length of the polyline tx -> planes -> rx over the
/// in-plane coordinates of each bounce. The length is convex in those
/// coordinates; its kinks (two bounces meeting on a shared edge) are avoided by
/// first minimizing the smoothed length `sum sqrt(|d|^2 + delta^2)` for a
/// decreasing `delta`, then polishing with the exact length.
fn minimize(planes: &[&Plane], tx: &Vector3<f64>, rx: &Vector3<f64>) -> Option<Vec<Vector3<f64>>> {
    let k = planes.len();
    let n = 2 * k;
    let points = |w: &DVector<f64>| -> Vec<Vector3<f64>> {
        let mut v = vec![*tx];
        v.extend((0..k).map(|j| planes[j].point(w[2 * j], w[2 * j + 1])));
        v.push(*rx);
        v
    };
    let length = |w: &DVector<f64>, delta: f64| -> f64 {
        points(w)
            .windows(2)
            .map(|s| ((s[1] - s[0]).norm_squared() + delta * delta).sqrt())
            .sum()
    };
    let mut w = DVector::<f64>::zeros(n);
    for delta in [1e-1, 1e-2, 1e-3, 1e-4, 1e-6, 0.0] {
        let mut lambda = 1e-9;
        for _ in 0..200 {
            let p = points(&w);
            let mut g3 = vec![Vector3::zeros(); k + 2];
            let mut h3 = vec![vec![Matrix3::zeros(); k + 2]; k + 2];
            for s in 0..=k {
                let d = p[s + 1] - p[s];
                let l = (d.norm_squared() + delta * delta).sqrt();
                if l < 1e-12 {
                    return None;
                }
                let u = d / l;
                g3[s + 1] += u;
                g3[s] -= u;
                let h = (Matrix3::identity() - u * u.transpose()) / l;
                h3[s + 1][s + 1] += h;
                h3[s][s] += h;
                h3[s][s + 1] -= h;
                h3[s + 1][s] -= h;
            }
            let mut g = DVector::zeros(n);
            let mut hm = DMatrix::zeros(n, n);
            for i in 0..k {
                for a in 0..2 {
                    g[2 * i + a] = planes[i].basis[a].dot(&g3[i + 1]);
                    for j in 0..k {
                        for b in 0..2 {
                            hm[(2 * i + a, 2 * j + b)] = (planes[i].basis[a].transpose()
                                * h3[i + 1][j + 1]
                                * planes[j].basis[b])[0];
                        }
                    }
                }
            }
            if g.norm() < 1e-14 {
                break;
            }
            let f0 = length(&w, delta);
            let mut accepted = false;
            for _ in 0..60 {
                let damped = &hm + DMatrix::identity(n, n) * lambda;
                if let Some(step) = damped.lu().solve(&(-&g)) {
                    let trial = &w + &step;
                    if length(&trial, delta) <= f0 {
                        w = trial;
                        lambda = (lambda * 0.1).max(1e-15);
                        accepted = true;
                        break;
                    }
                }
                lambda *= 10.0;
            }
            if !accepted {
                // no further descent possible at double precision
                break;
            }
        }
    }
    Some(points(&w)[1..=k].to_vec())
}

/// Every specular path up to `max_order` found by enumerating facet sequences.
pub fn brute_force(scene: &Scene, tx: Vec3, rx: Vec3, max_order: usize) -> Vec<OraclePath> {
    let planes: Vec<Plane> = scene
        .facets()
        .iter()
        .map(|f| Plane::new(f.vertices.map(v3)))
        .collect();
    let coplanar: Vec<Vec<usize>> = (0..planes.len())
        .map(|i| {
            (0..planes.len())
                .filter(|&j| planes[i].same_plane(&planes[j]))
                .collect()
        })
        .collect();
    let (txv, rxv) = (v3(tx), v3(rx));
    let mut out = Vec::new();
    if (rxv - txv).norm() <= EPS {
        return out;
    }
    if !blocked(&planes, &txv, &rxv, &[]) {
        out.push(OraclePath {
            facets: vec![],
            points: vec![],
            length: (rxv - txv).norm(),
        });
    }
    let f = planes.len();
    let mut seqs: Vec<Vec<usize>> = (0..f).map(|i| vec![i]).collect();
    for order in 1..=max_order {
        if order > 1 {
            let coplanar = &coplanar;
            seqs = seqs
                .iter()
                .flat_map(|s| {
                    let last = *s.last().unwrap();
                    (0..f)
                        .filter(move |&j| !coplanar[last].contains(&j))
                        .map(move |j| {
                            let mut t = s.clone();
                            t.push(j);
                            t
                        })
                })
                .collect();
        }
        for seq in &seqs {
            let pl: Vec<&Plane> = seq.iter().map(|&i| &planes[i]).collect();
            let Some(pts) = minimize(&pl, &txv, &rxv) else {
                continue;
            };
            let mut chain = vec![txv];
            chain.extend(pts.iter().copied());
            chain.push(rxv);
            let valid = (0..seq.len()).all(|j| {
                let (a, b) = (pl[j].side(&chain[j]), pl[j].side(&chain[j + 2]));
                pl[j].contains(&chain[j + 1]) && a * b > 0.0 && a.abs() > EPS && b.abs() > EPS
            });
            if !valid {
                continue;
            }
            let clear = (0..=seq.len()).all(|s| {
                let mut skip = Vec::new();
                if s > 0 {
                    skip.extend(&coplanar[seq[s - 1]]);
                }
                if s < seq.len() {
                    skip.extend(&coplanar[seq[s]]);
                }
                (chain[s + 1] - chain[s]).norm() > EPS
                    && !blocked(&planes, &chain[s], &chain[s + 1], &skip)
            });
            if !clear {
                continue;
            }
            let dup = out.iter().any(|p: &OraclePath| {
                p.points.len() == pts.len()
                    && p.points
                        .iter()
                        .zip(&pts)
                        .all(|(a, b)| (a - b).norm() < 1e-7)
            });
            if !dup {
                out.push(OraclePath {
                    facets: seq.clone(),
                    length: chain.windows(2).map(|s| (s[1] - s[0]).norm()).sum(),
                    points: pts,
                });
            }
        }
    }
    out.sort_by(|a, b| a.length.partial_cmp(&b.length).unwrap());
    out
}
