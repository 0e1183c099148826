//! Facet-modeled digital twin: triangles with material references, terminal
//! placements, and the material database they resolve against.
//!
//! Scenes are immutable once loaded; every query takes `&self` and is safe to
//! share across worker threads.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Aabb, Vec3};
use crate::num::Real;

/// Minimum triangle area accepted by the loader, m^2.
pub const MIN_FACET_AREA: f64 = 1e-12;

/// A triangular reflecting surface.
#[derive(Debug, Clone, PartialEq)]
pub struct Facet<T: Real> {
    pub vertices: [Vec3<T>; 3],
    pub material: String,
    pub thickness_override: Option<T>,
}

impl<T: Real> Facet<T> {
    pub fn new(vertices: [Vec3<T>; 3], material: impl Into<String>) -> Self {
        Self {
            vertices,
            material: material.into(),
            thickness_override: None,
        }
    }

    fn edges(&self) -> (Vec3<T>, Vec3<T>) {
        let [a, b, c] = self.vertices;
        (b - a, c - a)
    }

    pub fn area(&self) -> T {
        let (e1, e2) = self.edges();
        e1.cross(e2).norm() * T::lit(0.5)
    }

    /// Unit normal, oriented by the right-hand rule over the vertex order.
    pub fn normal(&self) -> Vec3<T> {
        let (e1, e2) = self.edges();
        e1.cross(e2).normalized()
    }

    /// Mirror image of `p` across the facet's supporting plane.
    pub fn mirror(&self, p: Vec3<T>) -> Vec3<T> {
        let n = self.normal();
        let d = (p - self.vertices[0]).dot(n);
        p - n * (T::lit(2.0) * d)
    }

    /// Signed distance of `p` from the supporting plane (positive on the normal side).
    pub fn signed_distance(&self, p: Vec3<T>) -> T {
        (p - self.vertices[0]).dot(self.normal())
    }

    /// Euclidean distance from `p` to the closest point of the (closed) triangle.
    pub fn distance_to_point(&self, p: Vec3<T>) -> T {
        closest_point_on_triangle(p, self.vertices).distance(p)
    }
}

/// Ray/triangle intersection (Moller-Trumbore). Edges and vertices count as hits;
/// hits closer than the self-intersection guard are ignored.
///
/// Returns the distance along `direction` (assumed unit length) and the hit point.
pub fn ray_facet_intersect<T: Real>(
    origin: Vec3<T>,
    direction: Vec3<T>,
    facet: &Facet<T>,
) -> Option<(T, Vec3<T>)> {
    let tri = Triangle::from_facet(facet);
    tri.intersect(origin, direction)
        .filter(|&t| t > T::geom_eps())
        .map(|t| (t, origin + direction * t))
}

/// Precomputed triangle data for the hot intersection loops.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Triangle<T: Real> {
    pub v0: Vec3<T>,
    pub e1: Vec3<T>,
    pub e2: Vec3<T>,
    pub normal: Vec3<T>,
    /// Plane offset: `normal . x = offset` on the plane.
    pub offset: T,
    parallel_tol: T,
}

impl<T: Real> Triangle<T> {
    pub fn from_facet(f: &Facet<T>) -> Self {
        let [a, b, c] = f.vertices;
        let e1 = b - a;
        let e2 = c - a;
        let normal = e1.cross(e2).normalized();
        Self {
            v0: a,
            e1,
            e2,
            normal,
            offset: normal.dot(a),
            parallel_tol: T::epsilon() * T::lit(64.0) * e1.norm() * e2.norm(),
        }
    }

    #[inline]
    pub fn plane_distance(&self, p: Vec3<T>) -> T {
        self.normal.dot(p) - self.offset
    }

    #[inline]
    pub fn mirror(&self, p: Vec3<T>) -> Vec3<T> {
        p - self.normal * (T::lit(2.0) * self.plane_distance(p))
    }

    /// Raw ray parameter of the hit, without the self-intersection guard.
    /// `dir` need not be normalized; the parameter is in units of `dir`.
    #[inline]
    pub fn intersect(&self, orig: Vec3<T>, dir: Vec3<T>) -> Option<T> {
        let pvec = dir.cross(self.e2);
        let det = self.e1.dot(pvec);
        if det * det <= self.parallel_tol * self.parallel_tol * dir.norm_squared() {
            return None;
        }
        let inv = T::one() / det;
        let tvec = orig - self.v0;
        let bary_tol = T::epsilon() * T::lit(16.0);
        let u = tvec.dot(pvec) * inv;
        if u < -bary_tol || u > T::one() + bary_tol {
            return None;
        }
        let qvec = tvec.cross(self.e1);
        let v = dir.dot(qvec) * inv;
        if v < -bary_tol || u + v > T::one() + bary_tol {
            return None;
        }
        Some(self.e2.dot(qvec) * inv)
    }

    pub fn coplanar_with(&self, other: &Triangle<T>) -> bool {
        let tol = T::lit(1e-9).max(T::geom_eps());
        (self.normal.dot(other.normal).abs() - T::one()).abs() < tol
            && self.plane_distance(other.v0).abs() < tol
    }
}

fn closest_point_on_triangle<T: Real>(p: Vec3<T>, [a, b, c]: [Vec3<T>; 3]) -> Vec3<T> {
    // Ericson, Real-Time Collision Detection, 5.1.5
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(ap);
    let d2 = ac.dot(ap);
    if d1 <= T::zero() && d2 <= T::zero() {
        return a;
    }
    let bp = p - b;
    let d3 = ab.dot(bp);
    let d4 = ac.dot(bp);
    if d3 >= T::zero() && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= T::zero() && d1 >= T::zero() && d3 <= T::zero() {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let d5 = ab.dot(cp);
    let d6 = ac.dot(cp);
    if d6 >= T::zero() && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= T::zero() && d2 >= T::zero() && d6 <= T::zero() {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= T::zero() && (d4 - d3) >= T::zero() && (d5 - d6) >= T::zero() {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = T::one() / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

/// Dielectric material entry. The permittivity is stored as `eta_re - j eta_im`
/// (time convention `e^{+j omega t}`), with `eta_im >= 0` encoding loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Material<T: Real> {
    pub name: String,
    pub eta_re: T,
    pub eta_im: T,
    pub thickness: T,
    pub reference_rl_db: Option<T>,
}

impl<T: Real> Material<T> {
    /// Complex relative permittivity `eta' - j eta''`.
    pub fn permittivity(&self) -> Complex<T> {
        Complex::new(self.eta_re, -self.eta_im)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: &str| {
            Err(Error::InvalidMaterial {
                name: self.name.clone(),
                reason: reason.to_string(),
            })
        };
        if self.name.is_empty() {
            return bad("empty name");
        }
        if !(self.eta_re.is_finite() && self.eta_im.is_finite() && self.thickness.is_finite()) {
            return bad("non-finite value");
        }
        if self.eta_re < T::one() {
            return bad("eta_re must be >= 1");
        }
        if self.eta_im < T::zero() {
            return bad("eta_im (loss) must be >= 0");
        }
        if self.thickness <= T::zero() {
            return bad("thickness must be > 0");
        }
        if let Some(rl) = self.reference_rl_db {
            if !(rl >= T::zero()) {
                return bad("reference_rl_db must be >= 0");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct MaterialRow<T> {
    name: String,
    eta_re: T,
    eta_im: T,
    thickness_m: T,
    reference_rl_db: Option<T>,
}

/// Materials keyed by name.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MaterialDb<T: Real> {
    materials: BTreeMap<String, Material<T>>,
}

impl<T: Real> MaterialDb<T> {
    pub fn new() -> Self {
        Self {
            materials: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, m: Material<T>) -> Result<()> {
        m.validate()?;
        self.materials.insert(m.name.clone(), m);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Material<T>> {
        self.materials.get(name)
    }

    pub fn len(&self) -> usize {
        self.materials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.materials.is_empty()
    }

    /// Iterates materials in name order.
    pub fn iter(&self) -> impl Iterator<Item = &Material<T>> {
        self.materials.values()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(file)
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr.headers()?.clone();
        let expected = ["name", "eta_re", "eta_im", "thickness_m", "reference_rl_db"];
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(Error::Parse {
                line: 1,
                msg: format!("material header must be `{}`", expected.join(",")),
            });
        }
        let mut db = Self::new();
        for row in rdr.deserialize::<MaterialRow<T>>() {
            let row = row?;
            db.insert(Material {
                name: row.name,
                eta_re: row.eta_re,
                eta_im: row.eta_im,
                thickness: row.thickness_m,
                reference_rl_db: row.reference_rl_db,
            })?;
        }
        Ok(db)
    }

    pub fn to_writer<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for m in self.iter() {
            w.serialize(MaterialRow {
                name: m.name.clone(),
                eta_re: m.eta_re,
                eta_im: m.eta_im,
                thickness_m: m.thickness,
                reference_rl_db: m.reference_rl_db,
            })?;
        }
        w.flush().map_err(|e| Error::io("<material db>", e))?;
        Ok(())
    }
}

impl<T: Real> FromIterator<Material<T>> for MaterialDb<T> {
    /// Builds a database without validation; use [`MaterialDb::insert`] for checked input.
    fn from_iter<I: IntoIterator<Item = Material<T>>>(iter: I) -> Self {
        Self {
            materials: iter.into_iter().map(|m| (m.name.clone(), m)).collect(),
        }
    }
}

// On-disk scene schema.
#[derive(Debug, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
struct SceneFile<T: Real> {
    facets: Vec<FacetEntry<T>>,
    tx: BTreeMap<String, [T; 3]>,
    rx: BTreeMap<String, [T; 3]>,
    bounds: BoundsEntry<T>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
struct FacetEntry<T: Real> {
    v: Vec<[T; 3]>,
    material: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    thickness: Option<T>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
struct BoundsEntry<T: Real> {
    min: [T; 3],
    max: [T; 3],
}

/// The validated digital twin.
#[derive(Debug, Clone)]
pub struct Scene<T: Real> {
    facets: Vec<Facet<T>>,
    tx: BTreeMap<String, Vec3<T>>,
    rx: BTreeMap<String, Vec3<T>>,
    bounds: Aabb<T>,
    materials: MaterialDb<T>,
    tris: Vec<Triangle<T>>,
    /// Indices of the triangles sharing a plane with triangle i (including i).
    coplanar: Vec<Vec<usize>>,
}

impl<T: Real> PartialEq for Scene<T> {
    fn eq(&self, other: &Self) -> bool {
        self.facets == other.facets
            && self.tx == other.tx
            && self.rx == other.rx
            && self.bounds == other.bounds
            && self.materials == other.materials
    }
}

impl<T: Real> Scene<T> {
    /// Builds a scene and checks every invariant.
    pub fn new(
        facets: Vec<Facet<T>>,
        tx: BTreeMap<String, Vec3<T>>,
        rx: BTreeMap<String, Vec3<T>>,
        bounds: Aabb<T>,
        materials: MaterialDb<T>,
    ) -> Result<Self> {
        if !(bounds.min.is_finite() && bounds.max.is_finite()) || bounds.volume() <= T::zero() {
            return Err(Error::InvalidScene(
                "bounds must have positive volume".into(),
            ));
        }
        for (i, f) in facets.iter().enumerate() {
            if f.vertices.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidScene(format!(
                    "facet {i} has non-finite coordinates"
                )));
            }
            let area = f.area();
            if !(area > T::lit(MIN_FACET_AREA)) {
                return Err(Error::DegenerateFacet {
                    facet: i,
                    area: area.to_f64_lossy(),
                });
            }
            if materials.get(&f.material).is_none() {
                return Err(Error::DanglingMaterial {
                    facet: i,
                    material: f.material.clone(),
                });
            }
            if let Some(d) = f.thickness_override {
                if !(d > T::zero()) {
                    return Err(Error::InvalidScene(format!(
                        "facet {i} thickness must be > 0"
                    )));
                }
            }
        }
        for (kind, map) in [("tx", &tx), ("rx", &rx)] {
            for (name, p) in map {
                if !p.is_finite() || !bounds.contains(*p) {
                    return Err(Error::InvalidScene(format!(
                        "{kind} `{name}` lies outside the scene bounds"
                    )));
                }
            }
        }
        let tris: Vec<Triangle<T>> = facets.iter().map(Triangle::from_facet).collect();
        let coplanar = (0..tris.len())
            .map(|i| {
                (0..tris.len())
                    .filter(|&j| tris[i].coplanar_with(&tris[j]))
                    .collect()
            })
            .collect();
        Ok(Self {
            facets,
            tx,
            rx,
            bounds,
            materials,
            tris,
            coplanar,
        })
    }

    /// A scene with no facets and no named terminals.
    pub fn empty(bounds: Aabb<T>) -> Result<Self> {
        Self::new(
            Vec::new(),
            BTreeMap::new(),
            BTreeMap::new(),
            bounds,
            MaterialDb::new(),
        )
    }

    pub fn from_json_str(s: &str, materials: MaterialDb<T>) -> Result<Self> {
        let file: SceneFile<T> = serde_json::from_str(s)?;
        let mut facets = Vec::with_capacity(file.facets.len());
        for (i, entry) in file.facets.into_iter().enumerate() {
            let v: Vec<Vec3<T>> = entry.v.into_iter().map(Vec3::from).collect();
            let tris: Vec<[Vec3<T>; 3]> = match v.len() {
                3 => vec![[v[0], v[1], v[2]]],
                4 => vec![[v[0], v[1], v[2]], [v[0], v[2], v[3]]],
                n => {
                    return Err(Error::InvalidScene(format!(
                        "facet {i} has {n} vertices; expected 3 or 4"
                    )))
                }
            };
            for t in tris {
                facets.push(Facet {
                    vertices: t,
                    material: entry.material.clone(),
                    thickness_override: entry.thickness,
                });
            }
        }
        let conv = |m: BTreeMap<String, [T; 3]>| -> BTreeMap<String, Vec3<T>> {
            m.into_iter().map(|(k, v)| (k, Vec3::from(v))).collect()
        };
        Self::new(
            facets,
            conv(file.tx),
            conv(file.rx),
            Aabb::new(file.bounds.min.into(), file.bounds.max.into()),
            materials,
        )
    }

    pub fn to_json_string(&self) -> Result<String> {
        let file = SceneFile {
            facets: self
                .facets
                .iter()
                .map(|f| FacetEntry {
                    v: f.vertices.iter().map(|p| p.to_array()).collect(),
                    material: f.material.clone(),
                    thickness: f.thickness_override,
                })
                .collect(),
            tx: self
                .tx
                .iter()
                .map(|(k, v)| (k.clone(), v.to_array()))
                .collect(),
            rx: self
                .rx
                .iter()
                .map(|(k, v)| (k.clone(), v.to_array()))
                .collect(),
            bounds: BoundsEntry {
                min: self.bounds.min.to_array(),
                max: self.bounds.max.to_array(),
            },
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json_string()?).map_err(|e| Error::io(path, e))
    }

    pub fn facets(&self) -> &[Facet<T>] {
        &self.facets
    }

    pub fn facet(&self, id: usize) -> &Facet<T> {
        &self.facets[id]
    }

    pub(crate) fn coplanar(&self, i: usize) -> &[usize] {
        &self.coplanar[i]
    }

    pub(crate) fn triangles(&self) -> &[Triangle<T>] {
        &self.tris
    }

    pub fn tx(&self) -> &BTreeMap<String, Vec3<T>> {
        &self.tx
    }

    pub fn rx(&self) -> &BTreeMap<String, Vec3<T>> {
        &self.rx
    }

    pub fn tx_position(&self, name: &str) -> Option<Vec3<T>> {
        self.tx.get(name).copied()
    }

    pub fn rx_position(&self, name: &str) -> Option<Vec3<T>> {
        self.rx.get(name).copied()
    }

    pub fn bounds(&self) -> &Aabb<T> {
        &self.bounds
    }

    pub fn materials(&self) -> &MaterialDb<T> {
        &self.materials
    }

    /// Material of facet `id`, with the facet's thickness override applied.
    pub fn facet_material(&self, id: usize) -> Material<T> {
        let f = &self.facets[id];
        let mut m = self
            .materials
            .get(&f.material)
            .cloned()
            .expect("material resolved at construction");
        if let Some(d) = f.thickness_override {
            m.thickness = d;
        }
        m
    }

    /// True iff some facet outside `ignore` intersects the open segment `(a, b)`.
    pub fn is_occluded(&self, a: Vec3<T>, b: Vec3<T>, ignore: &[usize]) -> bool {
        self.is_occluded_ignoring(a, b, ignore, &[])
    }

    pub(crate) fn is_occluded_ignoring(
        &self,
        a: Vec3<T>,
        b: Vec3<T>,
        ignore: &[usize],
        also_ignore: &[usize],
    ) -> bool {
        let d = b - a;
        let len = d.norm();
        if len <= T::geom_eps() {
            return false;
        }
        let eps = T::geom_eps();
        // parameters below are in units of `d`, i.e. fractions of the segment
        let lo = eps / len;
        let hi = T::one() - eps / len;
        self.tris.iter().enumerate().any(|(i, tri)| {
            // a segment with both ends strictly on one side cannot cross the plane
            let (da, db) = (tri.plane_distance(a), tri.plane_distance(b));
            if (da > eps && db > eps)
                || (da < -eps && db < -eps)
                || ignore.contains(&i)
                || also_ignore.contains(&i)
            {
                return false;
            }
            matches!(tri.intersect(a, d), Some(t) if t > lo && t < hi)
        })
    }

    /// Distance from `p` to the closest facet, or `None` for an empty scene.
    pub fn distance_to_nearest_facet(&self, p: Vec3<T>) -> Option<T> {
        self.facets
            .iter()
            .map(|f| f.distance_to_point(p))
            .fold(None, |acc, d| Some(acc.map_or(d, |a: T| a.min(d))))
    }
}

/// Reads a scene file and validates it against `materials`.
pub fn load_scene<T: Real>(path: impl AsRef<Path>, materials: MaterialDb<T>) -> Result<Scene<T>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Scene::from_json_str(&text, materials)
}

/// Writes a scene in the same JSON schema [`load_scene`] reads.
pub fn save_scene<T: Real>(scene: &Scene<T>, path: impl AsRef<Path>) -> Result<()> {
    scene.save(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn db() -> MaterialDb<f64> {
        let mut db = MaterialDb::new();
        db.insert(Material {
            name: "steel".into(),
            eta_re: 3.87,
            eta_im: 0.9,
            thickness: 0.005,
            reference_rl_db: Some(9.45),
        })
        .unwrap();
        db
    }

    fn floor_facet() -> Facet<f64> {
        Facet::new(
            [
                Vec3::new(-1.0, -1.0, -1.0),
                Vec3::new(1.0, -1.0, -1.0),
                Vec3::new(0.0, 1.0, -1.0),
            ],
            "steel",
        )
    }

    #[test]
    fn axis_aligned_hit() {
        let (t, p) = ray_facet_intersect(Vec3::zero(), Vec3::new(0.0, 0.0, -1.0), &floor_facet())
            .expect("hit");
        assert!((t - 1.0).abs() < 1e-15);
        assert_eq!(p, Vec3::new(0.0, 0.0, -1.0));
    }

    #[test]
    fn parallel_ray_misses() {
        let hit = ray_facet_intersect(Vec3::zero(), Vec3::new(1.0, 0.0, 0.0), &floor_facet());
        assert!(hit.is_none());
        // in-plane ray also misses
        let hit = ray_facet_intersect(
            Vec3::new(-5.0, 0.0, -1.0),
            Vec3::new(1.0, 0.0, 0.0),
            &floor_facet(),
        );
        assert!(hit.is_none());
    }

    #[test]
    fn edge_and_vertex_hits_count() {
        // Barycentric (u, v) = (0.5, 0) lies on edge v0-v1: point (0, -1, -1).
        let f = floor_facet();
        let edge = ray_facet_intersect(Vec3::new(0.0, -1.0, 0.0), Vec3::new(0.0, 0.0, -1.0), &f);
        assert!(edge.is_some());
        // (u, v) = (0, 0) is vertex v0
        let vertex = ray_facet_intersect(Vec3::new(-1.0, -1.0, 0.0), Vec3::new(0.0, 0.0, -1.0), &f);
        assert!(vertex.is_some());
        // just outside the edge
        let out = ray_facet_intersect(
            Vec3::new(0.0, -1.0 - 1e-9, 0.0),
            Vec3::new(0.0, 0.0, -1.0),
            &f,
        );
        assert!(out.is_none());
    }

    #[test]
    fn self_intersection_guard() {
        let f = floor_facet();
        let hit = ray_facet_intersect(Vec3::new(0.0, 0.0, -1.0), Vec3::new(0.0, 0.0, -1.0), &f);
        assert!(hit.is_none());
    }

    fn scene_with(facets: Vec<Facet<f64>>) -> Scene<f64> {
        Scene::new(
            facets,
            BTreeMap::new(),
            BTreeMap::new(),
            Aabb::new(Vec3::new(-5.0, -5.0, -5.0), Vec3::new(5.0, 5.0, 5.0)),
            db(),
        )
        .unwrap()
    }

    #[test]
    fn occlusion_rules() {
        let empty = scene_with(vec![]);
        let a = Vec3::new(0.0, 0.0, 1.0);
        let b = Vec3::new(0.0, 0.0, -3.0);
        assert!(!empty.is_occluded(a, b, &[]));

        let s = scene_with(vec![floor_facet()]);
        assert!(s.is_occluded(a, b, &[]));
        assert!(s.is_occluded(b, a, &[]));
        assert!(!s.is_occluded(a, b, &[0]));
        // endpoint lying on the facet is excluded
        let on = Vec3::new(0.0, 0.0, -1.0);
        assert!(!s.is_occluded(a, on, &[]));
        assert!(!s.is_occluded(on, a, &[]));
    }

    #[test]
    fn dangling_material_rejected() {
        let mut f = floor_facet();
        f.material = "unobtainium".into();
        let err = Scene::new(
            vec![f],
            BTreeMap::new(),
            BTreeMap::new(),
            Aabb::new(Vec3::new(-5.0, -5.0, -5.0), Vec3::new(5.0, 5.0, 5.0)),
            db(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::DanglingMaterial { .. }), "{err}");
    }

    #[test]
    fn degenerate_facet_rejected() {
        let f = Facet::new(
            [
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 1.0, 1.0),
                Vec3::new(2.0, 2.0, 2.0),
            ],
            "steel",
        );
        let err = Scene::new(
            vec![f],
            BTreeMap::new(),
            BTreeMap::new(),
            Aabb::new(Vec3::new(-5.0, -5.0, -5.0), Vec3::new(5.0, 5.0, 5.0)),
            db(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::DegenerateFacet { .. }));
    }

    #[test]
    fn json_parse_error_reports_line() {
        let text = "{\n  \"facets\": [\n  oops\n]}";
        let err = Scene::from_json_str(text, db()).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn minimal_scene_and_quad_split() {
        let text = r#"{
            "facets": [{"v": [[0,0,0],[1,0,0],[1,1,0],[0,1,0]], "material": "steel"}],
            "tx": {"tx1": [0.5, 0.5, 0.5]},
            "rx": {"rx1": [0.2, 0.2, 0.2]},
            "bounds": {"min": [0,0,0], "max": [1,1,1]}
        }"#;
        let s = Scene::<f64>::from_json_str(text, db()).unwrap();
        assert_eq!(s.facets().len(), 2);
        let text3 = text.replace(",[0,1,0]]", "]");
        let s3 = Scene::<f64>::from_json_str(&text3, db()).unwrap();
        assert_eq!(s3.facets().len(), 1);
    }

    #[test]
    fn terminal_outside_bounds_rejected() {
        let text = r#"{"facets": [], "tx": {"t": [2,0,0]}, "rx": {},
                       "bounds": {"min": [0,0,0], "max": [1,1,1]}}"#;
        assert!(matches!(
            Scene::<f64>::from_json_str(text, db()),
            Err(Error::InvalidScene(_))
        ));
    }

    #[test]
    fn material_csv_with_empty_reference() {
        let csv = "name,eta_re,eta_im,thickness_m,reference_rl_db\nfoam,1.1,0.01,0.02,\n";
        let db = MaterialDb::<f64>::from_reader(csv.as_bytes()).unwrap();
        assert_eq!(db.get("foam").unwrap().reference_rl_db, None);
        let bad = "name,eta_re,eta_im,thickness_m,reference_rl_db\nx,0.5,0,0.01,\n";
        assert!(MaterialDb::<f64>::from_reader(bad.as_bytes()).is_err());
    }

    #[test]
    fn point_triangle_distance() {
        let f = floor_facet();
        assert!((f.distance_to_point(Vec3::new(0.0, 0.0, 0.5)) - 1.5).abs() < 1e-12);
        // beyond vertex v2 along +y
        let d = f.distance_to_point(Vec3::new(0.0, 2.0, -1.0));
        assert!((d - 1.0).abs() < 1e-12);
    }
}
