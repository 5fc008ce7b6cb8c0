//! Object models: watertight convex rigid parts (at most two, the second
//! optionally hinged), canonical point clouds, and surface sample sets.

use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Unit, Vector3};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{KinematicsError, ObjectPose};

/// Hinge articulation: the moving part (part id 1) rotates about `axis`
/// through `origin` by the pose's articulation angle.
#[derive(Debug, Clone, PartialEq)]
pub struct Hinge {
    pub axis: Unit<Vector3<f64>>,
    pub origin: Vector3<f64>,
    pub alpha_max: f64,
}

/// Canonical object geometry. Faces carry a rigid-part id; every part must
/// be watertight and convex with outward normals, which is validated when
/// the model is built or loaded.
#[derive(Debug, Clone)]
pub struct ObjectModel {
    pub name: String,
    pub vertices: Vec<Vector3<f64>>,
    pub faces: Vec<[usize; 3]>,
    pub face_parts: Vec<u8>,
    pub hinge: Option<Hinge>,
    /// Canonical point cloud fed to the point encoder.
    pub point_cloud: Vec<Vector3<f64>>,
    /// Vertex, face-center, edge-midpoint, and area-weighted fill samples
    /// used as the "surface" by every vertex-indexed distance formula.
    pub surface_samples: Vec<Vector3<f64>>,
    /// Part id per vertex (a vertex belongs to exactly one part here).
    pub vertex_parts: Vec<u8>,
    /// Part id per surface sample.
    pub sample_parts: Vec<u8>,
}

const CLOUD_SEED: u64 = 0xC10D;
const SAMPLE_SEED: u64 = 0x5A3B;

impl ObjectModel {
    /// Build from raw geometry: validates parts, then derives the point
    /// cloud and the surface sample set deterministically.
    pub fn build(
        name: &str,
        vertices: Vec<Vector3<f64>>,
        faces: Vec<[usize; 3]>,
        face_parts: Vec<u8>,
        hinge: Option<Hinge>,
        point_cloud_size: usize,
        min_surface_samples: usize,
    ) -> Result<Self, KinematicsError> {
        if faces.len() != face_parts.len() {
            return Err(KinematicsError::InvalidModel(
                "faces and face_parts length differ".into(),
            ));
        }
        let part_count = face_parts.iter().copied().max().unwrap_or(0) as usize + 1;
        if part_count > 2 {
            return Err(KinematicsError::InvalidModel(
                "at most two rigid parts are supported".into(),
            ));
        }
        if part_count == 2 && hinge.is_none() {
            return Err(KinematicsError::InvalidModel(
                "two-part object requires a hinge".into(),
            ));
        }

        let mut vertex_parts = vec![u8::MAX; vertices.len()];
        for (f, part) in faces.iter().zip(&face_parts) {
            for &vi in f {
                if vi >= vertices.len() {
                    return Err(KinematicsError::InvalidModel(format!(
                        "face references vertex {vi} out of {}",
                        vertices.len()
                    )));
                }
                if vertex_parts[vi] != u8::MAX && vertex_parts[vi] != *part {
                    return Err(KinematicsError::InvalidModel(format!(
                        "vertex {vi} shared across parts"
                    )));
                }
                vertex_parts[vi] = *part;
            }
        }
        if vertex_parts.iter().any(|&p| p == u8::MAX) {
            return Err(KinematicsError::InvalidModel("unused vertex".into()));
        }

        for part in 0..part_count as u8 {
            validate_part(&vertices, &vertex_parts, &faces, &face_parts, part)?;
        }

        let point_cloud = sample_surface(&vertices, &faces, point_cloud_size, CLOUD_SEED);
        // Vertices, then per face its centroid and edge midpoints (the
        // diagonal midpoint of a triangulated quad is the quad center),
        // then area-weighted fill.
        let mut surface_samples = vertices.clone();
        let mut sample_parts = vertex_parts.clone();
        for (f, part) in faces.iter().zip(&face_parts) {
            let (a, b, c) = (vertices[f[0]], vertices[f[1]], vertices[f[2]]);
            for s in [
                (a + b + c) / 3.0,
                (a + b) / 2.0,
                (b + c) / 2.0,
                (c + a) / 2.0,
            ] {
                surface_samples.push(s);
                sample_parts.push(*part);
            }
        }
        if surface_samples.len() < min_surface_samples {
            let extra = sample_surface(
                &vertices,
                &faces,
                min_surface_samples - surface_samples.len(),
                SAMPLE_SEED,
            );
            for s in extra {
                let part = nearest_part_of(&vertices, &vertex_parts, &s);
                surface_samples.push(s);
                sample_parts.push(part);
            }
        }

        Ok(ObjectModel {
            name: name.to_string(),
            vertices,
            faces,
            face_parts,
            hinge,
            point_cloud,
            surface_samples,
            vertex_parts,
            sample_parts,
        })
    }

    pub fn part_count(&self) -> usize {
        self.face_parts.iter().copied().max().unwrap_or(0) as usize + 1
    }

    pub fn alpha_max(&self) -> f64 {
        self.hinge.as_ref().map(|h| h.alpha_max).unwrap_or(0.0)
    }

    /// Rough bounding radius of the canonical geometry, for grasp planning.
    pub fn bounding_radius(&self) -> f64 {
        self.vertices
            .iter()
            .map(|v| v.norm())
            .fold(0.0, f64::max)
    }

    pub fn point_cloud_arrays(&self) -> Vec<[f64; 3]> {
        self.point_cloud.iter().map(|p| [p.x, p.y, p.z]).collect()
    }
}

fn validate_part(
    vertices: &[Vector3<f64>],
    vertex_parts: &[u8],
    faces: &[[usize; 3]],
    face_parts: &[u8],
    part: u8,
) -> Result<(), KinematicsError> {
    use std::collections::HashMap;
    let part_faces: Vec<&[usize; 3]> = faces
        .iter()
        .zip(face_parts)
        .filter(|(_, p)| **p == part)
        .map(|(f, _)| f)
        .collect();
    if part_faces.is_empty() {
        return Err(KinematicsError::InvalidModel(format!("part {part} empty")));
    }

    // Watertight with consistent winding: every directed edge appears once
    // and its reverse appears once.
    let mut edges: HashMap<(usize, usize), i32> = HashMap::new();
    for f in &part_faces {
        for k in 0..3 {
            let a = f[k];
            let b = f[(k + 1) % 3];
            *edges.entry((a, b)).or_insert(0) += 1;
        }
    }
    for (&(a, b), &n) in &edges {
        if n != 1 || edges.get(&(b, a)).copied().unwrap_or(0) != 1 {
            return Err(KinematicsError::InvalidModel(format!(
                "part {part} not watertight at edge ({a},{b})"
            )));
        }
    }

    // Outward orientation: positive signed volume.
    let vol: f64 = part_faces
        .iter()
        .map(|f| {
            let (a, b, c) = (vertices[f[0]], vertices[f[1]], vertices[f[2]]);
            a.dot(&b.cross(&c)) / 6.0
        })
        .sum();
    if vol <= 0.0 {
        return Err(KinematicsError::InvalidModel(format!(
            "part {part} has non-positive volume {vol:.3e} (normals point inward?)"
        )));
    }

    // Convexity: every part vertex lies on or behind every face plane.
    for f in &part_faces {
        let (a, b, c) = (vertices[f[0]], vertices[f[1]], vertices[f[2]]);
        let n = (b - a).cross(&(c - a));
        let nn = n.norm();
        if nn < 1e-15 {
            return Err(KinematicsError::InvalidModel(format!(
                "degenerate face in part {part}"
            )));
        }
        let n = n / nn;
        for (vi, v) in vertices.iter().enumerate() {
            if vertex_parts[vi] != part {
                continue;
            }
            if n.dot(&(v - a)) > 1e-9 {
                return Err(KinematicsError::InvalidModel(format!(
                    "part {part} not convex: vertex {vi} in front of a face"
                )));
            }
        }
    }
    Ok(())
}

/// Deterministic area-weighted surface sampling.
fn sample_surface(
    vertices: &[Vector3<f64>],
    faces: &[[usize; 3]],
    n: usize,
    seed: u64,
) -> Vec<Vector3<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let areas: Vec<f64> = faces
        .iter()
        .map(|f| {
            let (a, b, c) = (vertices[f[0]], vertices[f[1]], vertices[f[2]]);
            (b - a).cross(&(c - a)).norm() / 2.0
        })
        .collect();
    let total: f64 = areas.iter().sum();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut pick = rng.gen_range(0.0..total);
        let mut idx = 0;
        for (i, &a) in areas.iter().enumerate() {
            if pick < a {
                idx = i;
                break;
            }
            pick -= a;
            idx = i;
        }
        let f = faces[idx];
        let (mut u, mut v): (f64, f64) = (rng.gen(), rng.gen());
        if u + v > 1.0 {
            u = 1.0 - u;
            v = 1.0 - v;
        }
        let (a, b, c) = (vertices[f[0]], vertices[f[1]], vertices[f[2]]);
        out.push(a + (b - a) * u + (c - a) * v);
    }
    out
}

/// An object under a pose: transformed vertices, samples, and per-part face
/// planes for inside tests.
#[derive(Debug, Clone)]
pub struct PosedObject {
    pub vertices: Vec<Vector3<f64>>,
    pub samples: Vec<Vector3<f64>>,
    pub faces: Vec<[usize; 3]>,
    /// Per part: (unit outward normal, plane offset) for each face.
    pub part_planes: Vec<Vec<(Vector3<f64>, f64)>>,
}

/// Apply articulation (hinge rotation of the moving part) then the global
/// rigid transform.
pub fn apply_object_pose(
    model: &ObjectModel,
    pose: &ObjectPose,
) -> Result<PosedObject, KinematicsError> {
    let alpha_max = model.alpha_max();
    if pose.articulation < -1e-12 || pose.articulation > alpha_max + 1e-12 {
        return Err(KinematicsError::ArticulationOutOfRange {
            alpha: pose.articulation,
            alpha_max,
        });
    }
    let rot = pose.rotation.to_matrix()?;
    let hinge_rot = model.hinge.as_ref().map(|h| {
        (
            Matrix3::from(nalgebra::Rotation3::from_axis_angle(&h.axis, pose.articulation)),
            h.origin,
        )
    });
    let xform = |v: &Vector3<f64>, part: u8| -> Vector3<f64> {
        let local = if part == 1 {
            match &hinge_rot {
                Some((hr, origin)) => origin + hr * (v - origin),
                None => *v,
            }
        } else {
            *v
        };
        rot * local + pose.translation
    };

    let vertices: Vec<Vector3<f64>> = model
        .vertices
        .iter()
        .zip(&model.vertex_parts)
        .map(|(v, p)| xform(v, *p))
        .collect();

    // Surface samples: vertices, face centers, then extra samples. Recompute
    // centers from posed vertices; extra samples are attributed to their part
    // by nearest canonical face (stored order is deterministic).
    let mut samples = vertices.clone();
    for f in &model.faces {
        let (a, b, c) = (vertices[f[0]], vertices[f[1]], vertices[f[2]]);
        samples.push((a + b + c) / 3.0);
        samples.push((a + b) / 2.0);
        samples.push((b + c) / 2.0);
        samples.push((c + a) / 2.0);
    }
    if model.surface_samples.len() > samples.len() {
        let start = samples.len();
        for (s, part) in model.surface_samples[start..]
            .iter()
            .zip(&model.sample_parts[start..])
        {
            samples.push(xform(s, *part));
        }
    }

    let part_count = model.part_count();
    let mut part_planes = vec![Vec::new(); part_count];
    for (f, part) in model.faces.iter().zip(&model.face_parts) {
        let (a, b, c) = (vertices[f[0]], vertices[f[1]], vertices[f[2]]);
        let n = (b - a).cross(&(c - a)).normalize();
        part_planes[*part as usize].push((n, n.dot(&a)));
    }

    Ok(PosedObject {
        vertices,
        samples,
        faces: model.faces.clone(),
        part_planes,
    })
}

fn nearest_part_of(vertices: &[Vector3<f64>], vertex_parts: &[u8], p: &Vector3<f64>) -> u8 {
    let mut best = (f64::INFINITY, 0u8);
    for (v, part) in vertices.iter().zip(vertex_parts) {
        let d = (v - p).norm_squared();
        if d < best.0 {
            best = (d, *part);
        }
    }
    best.1
}

impl PosedObject {
    /// Inside test against one convex part: inside iff the signed distance
    /// to every face plane is <= 0. Returns the depth (>= 0) when inside;
    /// boundary points count as inside with depth 0.
    pub fn inside_part(&self, point: &Vector3<f64>, part: usize) -> Option<f64> {
        let planes = &self.part_planes[part];
        let mut max_signed = f64::NEG_INFINITY;
        for (n, d) in planes {
            let s = n.dot(point) - d;
            if s > 1e-12 {
                return None;
            }
            max_signed = max_signed.max(s);
        }
        Some((-max_signed).max(0.0))
    }

    /// Signed distance to the true mesh surface: negative depth when inside
    /// a part, otherwise the exact minimum distance over all face triangles.
    /// Continuous through contact, unlike the sample-set distance.
    pub fn signed_surface_distance(&self, point: &Vector3<f64>) -> f64 {
        if let Some(depth) = self.inside_any(point) {
            return -depth;
        }
        let mut best = f64::INFINITY;
        for f in &self.faces {
            let d2 = point_triangle_distance_sq(
                point,
                &self.vertices[f[0]],
                &self.vertices[f[1]],
                &self.vertices[f[2]],
            );
            best = best.min(d2);
        }
        best.sqrt()
    }

    /// Depth of the deepest containing part, if any.
    pub fn inside_any(&self, point: &Vector3<f64>) -> Option<f64> {
        let mut best: Option<f64> = None;
        for part in 0..self.part_planes.len() {
            if let Some(depth) = self.inside_part(point, part) {
                best = Some(best.map_or(depth, |b: f64| b.max(depth)));
            }
        }
        best
    }
}

/// Squared distance from a point to a triangle (region-based closest point).
pub fn point_triangle_distance_sq(
    p: &Vector3<f64>,
    a: &Vector3<f64>,
    b: &Vector3<f64>,
    c: &Vector3<f64>,
) -> f64 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return ap.norm_squared();
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return bp.norm_squared();
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (ap - ab * v).norm_squared();
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return cp.norm_squared();
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (ap - ac * w).norm_squared();
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (bp - (c - b) * w).norm_squared();
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (ap - ab * v - ac * w).norm_squared()
}

// ---------------------------------------------------------------------------
// Primitive builders
// ---------------------------------------------------------------------------

/// Axis-aligned box centered at `center`.
pub fn box_mesh(center: Vector3<f64>, half: Vector3<f64>) -> (Vec<Vector3<f64>>, Vec<[usize; 3]>) {
    let mut vertices = Vec::with_capacity(8);
    for &z in &[-half.z, half.z] {
        for &y in &[-half.y, half.y] {
            for &x in &[-half.x, half.x] {
                vertices.push(center + Vector3::new(x, y, z));
            }
        }
    }
    // Outward-wound faces (two triangles per side).
    let quads: [[usize; 4]; 6] = [
        [0, 2, 3, 1], // z = -h (bottom, viewed from below)
        [4, 5, 7, 6], // z = +h
        [0, 1, 5, 4], // y = -h
        [2, 6, 7, 3], // y = +h
        [0, 4, 6, 2], // x = -h
        [1, 3, 7, 5], // x = +h
    ];
    let mut faces = Vec::with_capacity(12);
    for q in quads {
        faces.push([q[0], q[1], q[2]]);
        faces.push([q[0], q[2], q[3]]);
    }
    (vertices, faces)
}

/// Icosphere (subdivided icosahedron) of the given radius.
pub fn sphere_mesh(radius: f64, subdivisions: u32) -> (Vec<Vector3<f64>>, Vec<[usize; 3]>) {
    let phi = (1.0 + 5.0_f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vector3<f64>> = vec![
        Vector3::new(-1.0, phi, 0.0),
        Vector3::new(1.0, phi, 0.0),
        Vector3::new(-1.0, -phi, 0.0),
        Vector3::new(1.0, -phi, 0.0),
        Vector3::new(0.0, -1.0, phi),
        Vector3::new(0.0, 1.0, phi),
        Vector3::new(0.0, -1.0, -phi),
        Vector3::new(0.0, 1.0, -phi),
        Vector3::new(phi, 0.0, -1.0),
        Vector3::new(phi, 0.0, 1.0),
        Vector3::new(-phi, 0.0, -1.0),
        Vector3::new(-phi, 0.0, 1.0),
    ]
    .into_iter()
    .map(|v| v.normalize() * radius)
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    use std::collections::HashMap;
    for _ in 0..subdivisions {
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        let mut new_faces = Vec::with_capacity(faces.len() * 4);
        for f in &faces {
            let mut mid = [0usize; 3];
            for k in 0..3 {
                let a = f[k].min(f[(k + 1) % 3]);
                let b = f[k].max(f[(k + 1) % 3]);
                mid[k] = *midpoint.entry((a, b)).or_insert_with(|| {
                    let m = ((vertices[a] + vertices[b]) / 2.0).normalize() * radius;
                    vertices.push(m);
                    vertices.len() - 1
                });
            }
            new_faces.push([f[0], mid[0], mid[2]]);
            new_faces.push([f[1], mid[1], mid[0]]);
            new_faces.push([f[2], mid[2], mid[1]]);
            new_faces.push([mid[0], mid[1], mid[2]]);
        }
        faces = new_faces;
    }
    (vertices, faces)
}

/// Capped prism approximating a cylinder along z.
pub fn cylinder_mesh(radius: f64, half_height: f64, sides: usize) -> (Vec<Vector3<f64>>, Vec<[usize; 3]>) {
    let mut vertices = Vec::with_capacity(2 * sides + 2);
    for ring in 0..2 {
        let z = if ring == 0 { -half_height } else { half_height };
        for i in 0..sides {
            let a = 2.0 * std::f64::consts::PI * i as f64 / sides as f64;
            vertices.push(Vector3::new(radius * a.cos(), radius * a.sin(), z));
        }
    }
    let bottom_center = vertices.len();
    vertices.push(Vector3::new(0.0, 0.0, -half_height));
    let top_center = vertices.len();
    vertices.push(Vector3::new(0.0, 0.0, half_height));

    let mut faces = Vec::new();
    for i in 0..sides {
        let j = (i + 1) % sides;
        // side quad
        faces.push([i, j, sides + j]);
        faces.push([i, sides + j, sides + i]);
        // caps
        faces.push([bottom_center, j, i]);
        faces.push([top_center, sides + i, sides + j]);
    }
    (vertices, faces)
}

/// Capsule: cylinder barrel with spherical caps, convex by construction.
pub fn capsule_mesh(
    radius: f64,
    half_height: f64,
    sides: usize,
    cap_rings: usize,
) -> (Vec<Vector3<f64>>, Vec<[usize; 3]>) {
    // Ring ladder from just above the bottom pole to just below the top
    // pole; the poles themselves are apex vertices, so no ring degenerates.
    let mut rings: Vec<(f64, f64)> = Vec::new(); // (z, ring radius)
    for r in (1..cap_rings).rev() {
        let a = std::f64::consts::FRAC_PI_2 * r as f64 / cap_rings as f64;
        rings.push((-half_height - radius * a.sin(), radius * a.cos()));
    }
    rings.push((-half_height, radius));
    rings.push((half_height, radius));
    for r in 1..cap_rings {
        let a = std::f64::consts::FRAC_PI_2 * r as f64 / cap_rings as f64;
        rings.push((half_height + radius * a.sin(), radius * a.cos()));
    }

    let mut vertices = Vec::new();
    let mut ring_starts = Vec::new();
    for &(z, rr) in &rings {
        ring_starts.push(vertices.len());
        for i in 0..sides {
            let a = 2.0 * std::f64::consts::PI * i as f64 / sides as f64;
            vertices.push(Vector3::new(rr * a.cos(), rr * a.sin(), z));
        }
    }
    let bottom_pole = vertices.len();
    vertices.push(Vector3::new(0.0, 0.0, -half_height - radius));
    let top_pole = vertices.len();
    vertices.push(Vector3::new(0.0, 0.0, half_height + radius));

    let mut faces = Vec::new();
    for r in 0..rings.len() - 1 {
        let (s0, s1) = (ring_starts[r], ring_starts[r + 1]);
        for i in 0..sides {
            let j = (i + 1) % sides;
            faces.push([s0 + i, s0 + j, s1 + j]);
            faces.push([s0 + i, s1 + j, s1 + i]);
        }
    }
    let first = ring_starts[0];
    let last = *ring_starts.last().unwrap();
    for i in 0..sides {
        let j = (i + 1) % sides;
        faces.push([bottom_pole, first + j, first + i]);
        faces.push([top_pole, last + i, last + j]);
    }
    (vertices, faces)
}

// ---------------------------------------------------------------------------
// File format: "objmodel v1"
// ---------------------------------------------------------------------------

pub fn write_object_model(model: &ObjectModel, path: &Path) -> Result<(), KinematicsError> {
    let mut out = String::new();
    out.push_str("objmodel v1\n");
    out.push_str(&format!("name {}\n", model.name));
    for (v, p) in model.vertices.iter().zip(&model.vertex_parts) {
        out.push_str(&format!("v {:.17e} {:.17e} {:.17e} {}\n", v.x, v.y, v.z, p));
    }
    for (f, p) in model.faces.iter().zip(&model.face_parts) {
        out.push_str(&format!("f {} {} {} {}\n", f[0], f[1], f[2], p));
    }
    if let Some(h) = &model.hinge {
        out.push_str(&format!(
            "hinge {:.17e} {:.17e} {:.17e} {:.17e} {:.17e} {:.17e} {:.17e}\n",
            h.axis.x, h.axis.y, h.axis.z, h.origin.x, h.origin.y, h.origin.z, h.alpha_max
        ));
    }
    out.push_str(&format!(
        "pointcloud {} {}\n",
        model.point_cloud.len(),
        model.surface_samples.len()
    ));
    fs::write(path, out).map_err(|e| KinematicsError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

pub fn read_object_model(path: &Path) -> Result<ObjectModel, KinematicsError> {
    let text = fs::read_to_string(path).map_err(|e| KinematicsError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let bad = |msg: &str| KinematicsError::InvalidModel(format!("{}: {msg}", path.display()));
    let mut lines = text.lines();
    if lines.next() != Some("objmodel v1") {
        return Err(bad("missing 'objmodel v1' header"));
    }
    let mut name = String::new();
    let mut vertices = Vec::new();
    let mut vertex_parts: Vec<u8> = Vec::new();
    let mut faces = Vec::new();
    let mut face_parts = Vec::new();
    let mut hinge = None;
    let mut cloud_n = 0usize;
    let mut samples_n = 0usize;
    for line in lines {
        let mut it = line.split_whitespace();
        match it.next() {
            Some("name") => name = it.collect::<Vec<_>>().join(" "),
            Some("v") => {
                let nums: Vec<f64> = it.map(|s| s.parse().unwrap_or(f64::NAN)).collect();
                if nums.len() != 4 || nums.iter().any(|n| n.is_nan()) {
                    return Err(bad("bad vertex line"));
                }
                vertices.push(Vector3::new(nums[0], nums[1], nums[2]));
                vertex_parts.push(nums[3] as u8);
            }
            Some("f") => {
                let nums: Vec<usize> = it.map(|s| s.parse().unwrap_or(usize::MAX)).collect();
                if nums.len() != 4 || nums.iter().any(|&n| n == usize::MAX) {
                    return Err(bad("bad face line"));
                }
                faces.push([nums[0], nums[1], nums[2]]);
                face_parts.push(nums[3] as u8);
            }
            Some("hinge") => {
                let nums: Vec<f64> = it.map(|s| s.parse().unwrap_or(f64::NAN)).collect();
                if nums.len() != 7 || nums.iter().any(|n| n.is_nan()) {
                    return Err(bad("bad hinge line"));
                }
                hinge = Some(Hinge {
                    axis: Unit::new_normalize(Vector3::new(nums[0], nums[1], nums[2])),
                    origin: Vector3::new(nums[3], nums[4], nums[5]),
                    alpha_max: nums[6],
                });
            }
            Some("pointcloud") => {
                let nums: Vec<usize> = it.map(|s| s.parse().unwrap_or(usize::MAX)).collect();
                if nums.len() != 2 || nums.iter().any(|&n| n == usize::MAX) {
                    return Err(bad("bad pointcloud line"));
                }
                cloud_n = nums[0];
                samples_n = nums[1];
            }
            Some(other) => return Err(bad(&format!("unknown record '{other}'"))),
            None => {}
        }
    }
    let model = ObjectModel::build(&name, vertices, faces, face_parts, hinge, cloud_n, samples_n)?;
    Ok(model)
}
