//! Indexed triangle meshes, edge topology and ASCII PLY I/O.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::reconstruction::scale::MetricScalable;
use crate::units::Units;

#[derive(Debug, Error, PartialEq)]
pub enum MeshError {
    #[error("face {face} references vertex {index} but the mesh has {count} vertices")]
    IndexOutOfRange { face: usize, index: usize, count: usize },
    #[error("edge ({a}, {b}) is shared by {count} faces")]
    NonManifoldEdge { a: usize, b: usize, count: usize },
    #[error("PLY line {line}: {message}")]
    Ply { line: usize, message: String },
    #[error("mesh has no faces")]
    Empty,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TriMesh {
    pub vertices: Vec<Vector3<f64>>,
    pub faces: Vec<[usize; 3]>,
    pub units: Units,
}

/// Undirected edge with the smaller vertex index first.
pub type Edge = (usize, usize);

pub fn edge(a: usize, b: usize) -> Edge {
    (a.min(b), a.max(b))
}

impl TriMesh {
    pub fn new(vertices: Vec<Vector3<f64>>, faces: Vec<[usize; 3]>, units: Units) -> Result<Self, MeshError> {
        let mesh = Self { vertices, faces, units };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<(), MeshError> {
        let count = self.vertices.len();
        for (face, f) in self.faces.iter().enumerate() {
            if let Some(&index) = f.iter().find(|&&i| i >= count) {
                return Err(MeshError::IndexOutOfRange { face, index, count });
            }
        }
        Ok(())
    }

    pub fn triangle(&self, face: usize) -> [Vector3<f64>; 3] {
        let [a, b, c] = self.faces[face];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn centroid(&self, face: usize) -> Vector3<f64> {
        let [a, b, c] = self.triangle(face);
        (a + b + c) / 3.0
    }

    /// Area-weighted normal (length is twice the area).
    pub fn scaled_normal(&self, face: usize) -> Vector3<f64> {
        let [a, b, c] = self.triangle(face);
        (b - a).cross(&(c - a))
    }

    pub fn face_area(&self, face: usize) -> f64 {
        0.5 * self.scaled_normal(face).norm()
    }

    /// Faces incident to each undirected edge, in increasing face order.
    pub fn edge_faces(&self) -> BTreeMap<Edge, Vec<usize>> {
        let mut map: BTreeMap<Edge, Vec<usize>> = BTreeMap::new();
        for (fi, f) in self.faces.iter().enumerate() {
            for k in 0..3 {
                map.entry(edge(f[k], f[(k + 1) % 3])).or_default().push(fi);
            }
        }
        map
    }

    /// Edge-face map, failing on any edge shared by more than two faces.
    pub fn manifold_edge_faces(&self) -> Result<BTreeMap<Edge, Vec<usize>>, MeshError> {
        let map = self.edge_faces();
        if let Some((&(a, b), fs)) = map.iter().find(|(_, fs)| fs.len() > 2) {
            return Err(MeshError::NonManifoldEdge { a, b, count: fs.len() });
        }
        Ok(map)
    }

    /// Sorted vertex adjacency lists.
    pub fn vertex_neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.vertices.len()];
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                adj[a].push(b);
                adj[b].push(a);
            }
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        adj
    }

    pub fn total_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Axis-aligned bounding box diagonal length.
    pub fn diameter(&self) -> f64 {
        let Some(first) = self.vertices.first() else {
            return 0.0;
        };
        let (lo, hi) = self
            .vertices
            .iter()
            .fold((*first, *first), |(lo, hi), v| (lo.inf(v), hi.sup(v)));
        (hi - lo).norm()
    }

    pub fn transformed(&self, f: impl Fn(&Vector3<f64>) -> Vector3<f64>) -> TriMesh {
        TriMesh {
            vertices: self.vertices.iter().map(f).collect(),
            faces: self.faces.clone(),
            units: self.units,
        }
    }
}

impl MetricScalable for TriMesh {
    fn scaled_to_cm(&self, s: f64) -> Self {
        let mut m = self.transformed(|v| v * s);
        m.units = Units::Cm;
        m
    }
}

/// A mesh read from PLY together with the optional attributes this crate
/// writes.
#[derive(Debug, Clone, PartialEq)]
pub struct PlyMesh {
    pub mesh: TriMesh,
    pub face_probability: Option<Vec<f64>>,
    pub vertex_depth: Option<Vec<f64>>,
}

/// Serializes a mesh as ASCII PLY. `face_probability` becomes a float face
/// property `probability`; `vertex_depth` a vertex property `depth`.
pub fn write_ply(mesh: &TriMesh, face_probability: Option<&[f64]>, vertex_depth: Option<&[f64]>) -> String {
    let mut out = String::from("ply\nformat ascii 1.0\n");
    let _ = writeln!(out, "comment units {}", mesh.units.as_str());
    let _ = writeln!(out, "element vertex {}", mesh.vertices.len());
    out.push_str("property double x\nproperty double y\nproperty double z\n");
    if vertex_depth.is_some() {
        out.push_str("property double depth\n");
    }
    let _ = writeln!(out, "element face {}", mesh.faces.len());
    out.push_str("property list uchar int vertex_indices\n");
    if face_probability.is_some() {
        out.push_str("property double probability\n");
    }
    out.push_str("end_header\n");
    for (i, v) in mesh.vertices.iter().enumerate() {
        let _ = write!(out, "{} {} {}", v.x, v.y, v.z);
        if let Some(d) = vertex_depth {
            let _ = write!(out, " {}", d[i]);
        }
        out.push('\n');
    }
    for (i, f) in mesh.faces.iter().enumerate() {
        let _ = write!(out, "3 {} {} {}", f[0], f[1], f[2]);
        if let Some(p) = face_probability {
            let _ = write!(out, " {}", p[i]);
        }
        out.push('\n');
    }
    out
}

struct Element {
    name: String,
    count: usize,
    /// Scalar property names in order; list properties are recorded as
    /// `None` at their position.
    props: Vec<Option<String>>,
}

/// Parses an ASCII PLY mesh with triangular faces.
pub fn parse_ply(text: &str) -> Result<PlyMesh, MeshError> {
    let err = |line: usize, message: String| MeshError::Ply { line, message };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));

    match lines.next() {
        Some((_, "ply")) => {}
        _ => return Err(err(1, "missing `ply` magic".into())),
    }
    let mut units = Units::Arbitrary;
    let mut elements: Vec<Element> = Vec::new();
    let mut saw_format = false;
    loop {
        let (ln, line) = lines
            .next()
            .ok_or_else(|| err(0, "header ends before `end_header`".into()))?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["end_header"] => break,
            ["format", "ascii", _] => saw_format = true,
            ["format", other, ..] => return Err(err(ln, format!("unsupported PLY format `{other}`"))),
            ["comment", "units", u] => {
                units = match *u {
                    "cm" => Units::Cm,
                    "arbitrary" => Units::Arbitrary,
                    other => return Err(err(ln, format!("unknown units `{other}`"))),
                }
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => {
                let count = count
                    .parse::<usize>()
                    .map_err(|_| err(ln, format!("invalid element count `{count}`")))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    props: Vec::new(),
                });
            }
            ["property", "list", _, _, _name] => elements
                .last_mut()
                .ok_or_else(|| err(ln, "property before any element".into()))?
                .props
                .push(None),
            ["property", _ty, name] => elements
                .last_mut()
                .ok_or_else(|| err(ln, "property before any element".into()))?
                .props
                .push(Some(name.to_string())),
            _ => return Err(err(ln, format!("unrecognized header line `{line}`"))),
        }
    }
    if !saw_format {
        return Err(err(0, "missing `format` line".into()));
    }

    let mut vertices = Vec::new();
    let mut depth: Option<Vec<f64>> = None;
    let mut faces = Vec::new();
    let mut probability: Option<Vec<f64>> = None;
    for el in &elements {
        let pos = |name: &str| el.props.iter().position(|p| p.as_deref() == Some(name));
        let list_pos = el.props.iter().position(|p| p.is_none());
        for _ in 0..el.count {
            let (ln, line) = lines
                .next()
                .ok_or_else(|| err(0, format!("unexpected end of data in element `{}`", el.name)))?;
            let tokens: Vec<&str> = line.split_whitespace().collect();
            // Expand the single list property (if any) into its values.
            let mut scalars: Vec<f64> = Vec::with_capacity(el.props.len());
            let mut list: Vec<usize> = Vec::new();
            let mut t = 0usize;
            for (pi, _) in el.props.iter().enumerate() {
                let tok = tokens.get(t).ok_or_else(|| err(ln, "too few values".into()))?;
                if Some(pi) == list_pos {
                    let n: usize = tok
                        .parse()
                        .map_err(|_| err(ln, format!("invalid list length `{tok}`")))?;
                    let end = t + 1 + n;
                    if end > tokens.len() {
                        return Err(err(ln, "list shorter than declared".into()));
                    }
                    list = tokens[t + 1..end]
                        .iter()
                        .map(|s| s.parse::<usize>().map_err(|_| err(ln, format!("invalid index `{s}`"))))
                        .collect::<Result<_, _>>()?;
                    scalars.push(f64::NAN);
                    t = end;
                } else {
                    let v: f64 = tok
                        .parse()
                        .ok()
                        .filter(|v: &f64| v.is_finite())
                        .ok_or_else(|| err(ln, format!("invalid number `{tok}`")))?;
                    scalars.push(v);
                    t += 1;
                }
            }
            if t != tokens.len() {
                return Err(err(ln, "unexpected trailing values".into()));
            }
            match el.name.as_str() {
                "vertex" => {
                    let (Some(x), Some(y), Some(z)) = (pos("x"), pos("y"), pos("z")) else {
                        return Err(err(ln, "vertex element lacks x/y/z".into()));
                    };
                    vertices.push(Vector3::new(scalars[x], scalars[y], scalars[z]));
                    if let Some(d) = pos("depth") {
                        depth.get_or_insert_with(Vec::new).push(scalars[d]);
                    }
                }
                "face" => {
                    if list.len() != 3 {
                        return Err(err(
                            ln,
                            format!("face has {} vertices, only triangles are supported", list.len()),
                        ));
                    }
                    faces.push([list[0], list[1], list[2]]);
                    if let Some(p) = pos("probability") {
                        let v = scalars[p];
                        if !(0.0..=1.0).contains(&v) {
                            return Err(err(ln, format!("probability {v} outside [0, 1]")));
                        }
                        probability.get_or_insert_with(Vec::new).push(v);
                    }
                }
                _ => {}
            }
        }
    }
    if let Some((ln, extra)) = lines.find(|(_, l)| !l.is_empty()) {
        return Err(err(ln, format!("unexpected data after last element: `{extra}`")));
    }
    let mesh = TriMesh::new(vertices, faces, units)?;
    Ok(PlyMesh {
        mesh,
        face_probability: probability,
        vertex_depth: depth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> TriMesh {
        TriMesh::new(
            vec![
                Vector3::new(0.0, 0.0, 0.0),
                Vector3::new(1.0, 0.0, 0.0),
                Vector3::new(1.0, 1.0, 0.0),
                Vector3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2], [0, 2, 3]],
            Units::Cm,
        )
        .unwrap()
    }

    #[test]
    fn ply_round_trip_with_attributes() {
        let m = square();
        let text = write_ply(&m, Some(&[0.25, 1.0]), Some(&[0.0, 0.1, 0.2, 0.3]));
        let back = parse_ply(&text).unwrap();
        assert_eq!(back.mesh, m);
        assert_eq!(back.face_probability.unwrap(), vec![0.25, 1.0]);
        assert_eq!(back.vertex_depth.unwrap(), vec![0.0, 0.1, 0.2, 0.3]);
    }

    #[test]
    fn rejects_out_of_range_index() {
        let text = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n0 0 0\n3 0 0 5\n";
        assert!(matches!(
            parse_ply(text),
            Err(MeshError::IndexOutOfRange { index: 5, .. })
        ));
    }

    #[test]
    fn rejects_binary() {
        let text = "ply\nformat binary_little_endian 1.0\nend_header\n";
        assert!(matches!(parse_ply(text), Err(MeshError::Ply { line: 2, .. })));
    }

    #[test]
    fn detects_non_manifold_edge() {
        let mut m = square();
        m.vertices.push(Vector3::new(0.5, 0.5, 1.0));
        m.faces.push([0, 2, 4]);
        assert!(matches!(
            m.manifold_edge_faces(),
            Err(MeshError::NonManifoldEdge { a: 0, b: 2, count: 3 })
        ));
    }

    #[test]
    fn neighbors_are_sorted_and_unique() {
        let adj = square().vertex_neighbors();
        assert_eq!(adj[0], vec![1, 2, 3]);
        assert_eq!(adj[1], vec![0, 2]);
    }
}
