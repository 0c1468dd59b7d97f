//! Triangle meshes, keypoint-bearing edge polylines and part models.
//!
//! Meshes are read from the `v`/`f` subset of Wavefront OBJ. Edge polylines
//! live in a sidecar text file, one edge per line:
//!
//! ```text
//! # edge_id v0 v1 v2 ...   (0-based indices into the OBJ vertex list)
//! 1 0 1
//! 2 1 2 3
//! ```

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Keypoint3D, KeypointSet3D, Vec3};

/// Default number of keypoints sampled along a part's edges.
pub const DEFAULT_KEYPOINT_COUNT: usize = 700;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriangleMesh {
    vertices: Vec<Vec3>,
    triangles: Vec<[u32; 3]>,
}

impl TriangleMesh {
    /// Validates indices and drops zero-area triangles.
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[u32; 3]>) -> Result<Self> {
        let n = vertices.len();
        if let Some(t) = triangles.iter().find(|t| t.iter().any(|&i| i as usize >= n)) {
            return Err(Error::InvalidMesh(format!(
                "triangle {t:?} references a vertex outside 0..{n}"
            )));
        }
        let triangles: Vec<[u32; 3]> = triangles
            .into_iter()
            .filter(|t| {
                let [a, b, c] = t.map(|i| vertices[i as usize]);
                (b - a).cross(&(c - a)).norm_squared() > 0.0
            })
            .collect();
        if triangles.is_empty() {
            return Err(Error::InvalidMesh("mesh has no non-degenerate triangles".into()));
        }
        Ok(TriangleMesh {
            vertices,
            triangles,
        })
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    /// Radius of the smallest origin-centered sphere containing every vertex.
    pub fn bounding_radius(&self) -> f64 {
        self.vertices.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn parse_obj(text: &str, origin: &Path) -> Result<Self> {
        let mut vertices = Vec::new();
        let mut triangles = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            let mut tok = line.split_whitespace();
            let err = |m: &str| Error::parse(origin, format!("line {}: {m}", lineno + 1));
            match tok.next() {
                Some("v") => {
                    let c: Vec<f64> = tok
                        .take(3)
                        .map(str::parse)
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| err("bad vertex coordinate"))?;
                    if c.len() != 3 {
                        return Err(err("vertex needs 3 coordinates"));
                    }
                    vertices.push(Vec3::new(c[0], c[1], c[2]));
                }
                Some("f") => {
                    let idx = tok
                        .map(|t| {
                            let head = t.split('/').next().unwrap_or(t);
                            let i: i64 = head.parse().map_err(|_| err("bad face index"))?;
                            let resolved = if i < 0 {
                                vertices.len() as i64 + i
                            } else {
                                i - 1
                            };
                            u32::try_from(resolved).map_err(|_| err("face index out of range"))
                        })
                        .collect::<Result<Vec<u32>>>()?;
                    if idx.len() < 3 {
                        return Err(err("face needs at least 3 vertices"));
                    }
                    for k in 1..idx.len() - 1 {
                        triangles.push([idx[0], idx[k], idx[k + 1]]);
                    }
                }
                _ => {}
            }
        }
        TriangleMesh::new(vertices, triangles).map_err(|e| Error::parse(origin, e.to_string()))
    }

    pub fn load_obj(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_obj(&text, path)
    }

    pub fn to_obj(&self) -> String {
        let mut s = String::new();
        for v in &self.vertices {
            let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
        }
        for t in &self.triangles {
            let _ = writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
        }
        s
    }
}

/// A numbered model edge given as a vertex-index polyline.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgePolyline {
    pub edge_id: u32,
    pub vertices: Vec<u32>,
}

impl EdgePolyline {
    pub fn length(&self, mesh: &TriangleMesh) -> f64 {
        self.vertices
            .windows(2)
            .map(|w| (mesh.vertices[w[1] as usize] - mesh.vertices[w[0] as usize]).norm())
            .sum()
    }

    /// Point at arc length `s` from the first vertex (clamped to the ends).
    fn point_at(&self, mesh: &TriangleMesh, mut s: f64) -> Vec3 {
        for w in self.vertices.windows(2) {
            let a = mesh.vertices[w[0] as usize];
            let b = mesh.vertices[w[1] as usize];
            let len = (b - a).norm();
            if s <= len && len > 0.0 {
                return a + (b - a) * (s / len);
            }
            s -= len;
        }
        mesh.vertices[*self.vertices.last().expect("non-empty polyline") as usize]
    }
}

pub fn parse_edges(text: &str, origin: &Path) -> Result<Vec<EdgePolyline>> {
    let mut edges: Vec<EdgePolyline> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let nums = line
            .split_whitespace()
            .map(str::parse::<u32>)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::parse(origin, format!("line {}: bad integer", lineno + 1)))?;
        if nums.len() < 3 {
            return Err(Error::parse(
                origin,
                format!("line {}: an edge needs an id and at least two vertices", lineno + 1),
            ));
        }
        if edges.iter().any(|e| e.edge_id == nums[0]) {
            return Err(Error::parse(
                origin,
                format!("line {}: duplicate edge id {}", lineno + 1, nums[0]),
            ));
        }
        edges.push(EdgePolyline {
            edge_id: nums[0],
            vertices: nums[1..].to_vec(),
        });
    }
    Ok(edges)
}

pub fn load_edges(path: &Path) -> Result<Vec<EdgePolyline>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_edges(&text, path)
}

pub fn edges_to_text(edges: &[EdgePolyline]) -> String {
    let mut s = String::from("# edge_id v0 v1 ... (0-based vertex indices)\n");
    for e in edges {
        let _ = write!(s, "{}", e.edge_id);
        for v in &e.vertices {
            let _ = write!(s, " {v}");
        }
        s.push('\n');
    }
    s
}

/// Places `count` keypoints along the edges at uniform arc-length spacing.
///
/// Each edge receives a share proportional to its length (largest-remainder
/// rounding, at least one point per edge) and its points sit at the midpoints
/// of equal sub-segments, so points never coincide at shared corners.
/// Semantic ids follow edge order, then position along the edge.
pub fn sample_keypoints(
    mesh: &TriangleMesh,
    edges: &[EdgePolyline],
    count: usize,
) -> Result<KeypointSet3D> {
    if edges.is_empty() {
        return Err(Error::InvalidKeypoints("no edge polylines".into()));
    }
    let nv = mesh.vertices.len();
    for e in edges {
        if e.vertices.len() < 2 || e.vertices.iter().any(|&v| v as usize >= nv) {
            return Err(Error::InvalidKeypoints(format!(
                "edge {} must list at least two valid vertex indices",
                e.edge_id
            )));
        }
    }
    let lengths: Vec<f64> = edges.iter().map(|e| e.length(mesh)).collect();
    let total: f64 = lengths.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidKeypoints("edges have zero total length".into()));
    }
    let budget = count.max(edges.len());
    let quotas: Vec<f64> = lengths.iter().map(|l| l / total * budget as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| (q.floor() as usize).max(1)).collect();
    let mut order: Vec<usize> = (0..edges.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut assigned: usize = counts.iter().sum();
    for &i in order.iter().cycle().take(edges.len() * 2) {
        if assigned >= budget {
            break;
        }
        counts[i] += 1;
        assigned += 1;
    }

    let mut points = Vec::with_capacity(assigned);
    for ((edge, &len), &n) in edges.iter().zip(&lengths).zip(&counts) {
        for k in 0..n {
            let s = (k as f64 + 0.5) * len / n as f64;
            points.push(Keypoint3D {
                semantic_id: points.len() as u32,
                edge_id: edge.edge_id,
                position: edge.point_at(mesh, s),
            });
        }
    }
    KeypointSet3D::new(points)
}

/// A rigid part: render mesh, numbered edges and the keypoints sampled on them.
#[derive(Debug, Clone, PartialEq)]
pub struct PartModel {
    pub name: String,
    pub mesh: TriangleMesh,
    pub edges: Vec<EdgePolyline>,
    pub keypoints: KeypointSet3D,
}

impl PartModel {
    pub fn new(
        name: impl Into<String>,
        mesh: TriangleMesh,
        edges: Vec<EdgePolyline>,
        keypoint_count: usize,
    ) -> Result<Self> {
        let keypoints = sample_keypoints(&mesh, &edges, keypoint_count)?;
        Ok(PartModel {
            name: name.into(),
            mesh,
            edges,
            keypoints,
        })
    }

    pub fn load(mesh_path: &Path, edges_path: &Path, keypoint_count: usize) -> Result<Self> {
        let mesh = TriangleMesh::load_obj(mesh_path)?;
        let edges = load_edges(edges_path)?;
        let name = mesh_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "part".into());
        PartModel::new(name, mesh, edges, keypoint_count)
            .map_err(|e| Error::parse(edges_path, e.to_string()))
    }

    /// Bounding-sphere radius about the model origin.
    pub fn radius(&self) -> f64 {
        self.mesh.bounding_radius()
    }

    /// An L-shaped bracket, 80 x 60 x 30 mm, extruded along z and centered near
    /// the origin. Edges 1-6 trace the top outline, 7-12 the bottom outline and
    /// 13-18 the vertical edges.
    pub fn bracket(keypoint_count: usize) -> Self {
        let (mesh, edges) = bracket_geometry();
        PartModel::new("bracket", mesh, edges, keypoint_count).expect("bracket geometry is valid")
    }
}

fn bracket_geometry() -> (TriangleMesh, Vec<EdgePolyline>) {
    const OUTLINE: [(f64, f64); 6] = [
        (0.00, 0.00),
        (0.08, 0.00),
        (0.08, 0.02),
        (0.02, 0.02),
        (0.02, 0.06),
        (0.00, 0.06),
    ];
    const HALF_THICKNESS: f64 = 0.015;
    let (ox, oy) = (0.03, 0.025);
    let mut vertices = Vec::with_capacity(12);
    for z in [HALF_THICKNESS, -HALF_THICKNESS] {
        for (x, y) in OUTLINE {
            vertices.push(Vec3::new(x - ox, y - oy, z));
        }
    }
    let cap = [[0, 1, 2], [0, 2, 3], [0, 3, 4], [0, 4, 5]];
    let mut triangles: Vec<[u32; 3]> = Vec::new();
    for t in cap {
        triangles.push(t);
        triangles.push([t[0] + 6, t[2] + 6, t[1] + 6]);
    }
    for i in 0..6u32 {
        let j = (i + 1) % 6;
        triangles.push([i, i + 6, j + 6]);
        triangles.push([i, j + 6, j]);
    }
    let mut edges = Vec::with_capacity(18);
    for i in 0..6u32 {
        edges.push(EdgePolyline {
            edge_id: i + 1,
            vertices: vec![i, (i + 1) % 6],
        });
    }
    for i in 0..6u32 {
        edges.push(EdgePolyline {
            edge_id: i + 7,
            vertices: vec![i + 6, (i + 1) % 6 + 6],
        });
    }
    for i in 0..6u32 {
        edges.push(EdgePolyline {
            edge_id: i + 13,
            vertices: vec![i, i + 6],
        });
    }
    (
        TriangleMesh::new(vertices, triangles).expect("valid"),
        edges,
    )
}
