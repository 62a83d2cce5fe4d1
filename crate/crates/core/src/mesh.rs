//! Simplicial meshes (intervals in 1D, triangles in 2D) with inferred boundary
//! structure and the elementwise-constant P1 gradient.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{check_len, Error, Result};
use crate::fields::ScalarField;
use crate::scalar::Real;

/// Point or vector in the plane. In 1D only the first component is used and
/// the second is always zero.
pub type Vector<T> = [T; 2];

pub(crate) fn dot<T: Real>(a: &Vector<T>, b: &Vector<T>) -> T {
    a[0] * b[0] + a[1] * b[1]
}

pub(crate) fn norm<T: Real>(a: &Vector<T>) -> T {
    a[0].hypot(a[1])
}

/// A boundary face: an endpoint in 1D, an edge in 2D.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryFacet<T> {
    pub nodes: Vec<usize>,
    /// Outward unit normal.
    pub normal: Vector<T>,
    /// `H^{N-1}` measure: 1 for a 1D endpoint, the edge length in 2D.
    pub measure: T,
    /// The unique element this face belongs to.
    pub element: usize,
    pub midpoint: Vector<T>,
}

#[derive(Debug, Clone)]
pub struct Mesh<T = f64> {
    dim: usize,
    nodes: Vec<Vector<T>>,
    elements: Vec<Vec<usize>>,
    measures: Vec<T>,
    centroids: Vec<Vector<T>>,
    hat_gradients: Vec<Vec<Vector<T>>>,
    boundary: Vec<BoundaryFacet<T>>,
    on_boundary: Vec<bool>,
    lumped_mass: Vec<T>,
    edges: Vec<[usize; 2]>,
    diameter: T,
}

impl<T: Real> Mesh<T> {
    /// Builds a mesh from raw node coordinates and element connectivity,
    /// validating orientation and manifoldness and inferring the boundary.
    pub fn new(dim: usize, nodes: Vec<Vector<T>>, elements: Vec<Vec<usize>>) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::UnsupportedDimension { dim });
        }
        if elements.is_empty() {
            return Err(Error::InvalidParameter("mesh has no elements".into()));
        }
        let mut nodes = nodes;
        if dim == 1 {
            for x in &mut nodes {
                x[1] = T::zero();
            }
        }

        let mut measures = Vec::with_capacity(elements.len());
        let mut centroids = Vec::with_capacity(elements.len());
        let mut hat_gradients = Vec::with_capacity(elements.len());
        for (k, element) in elements.iter().enumerate() {
            if element.len() != dim + 1 {
                return Err(Error::InvalidParameter(format!(
                    "element {k} has {} nodes, expected {}",
                    element.len(),
                    dim + 1
                )));
            }
            if let Some(&bad) = element.iter().find(|&&i| i >= nodes.len()) {
                return Err(Error::InvalidParameter(format!(
                    "element {k} references node {bad}, mesh has {} nodes",
                    nodes.len()
                )));
            }
            let (measure, grads) = simplex_geometry(dim, element, &nodes);
            if !(measure > T::zero()) || !grads.iter().flatten().all(|g| g.is_finite()) {
                return Err(Error::InvertedElement {
                    element: k,
                    measure: measure.to_f64_lossy(),
                });
            }
            let inv = T::one() / T::from_usize_lossy(dim + 1);
            let mut c = [T::zero(); 2];
            for &i in element {
                c[0] += nodes[i][0] * inv;
                c[1] += nodes[i][1] * inv;
            }
            measures.push(measure);
            centroids.push(c);
            hat_gradients.push(grads);
        }

        // face -> owning elements, in deterministic order
        let mut faces: BTreeMap<Vec<usize>, Vec<usize>> = BTreeMap::new();
        for (k, element) in elements.iter().enumerate() {
            for skip in 0..element.len() {
                let mut face: Vec<usize> = element
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != skip)
                    .map(|(_, &i)| i)
                    .collect();
                face.sort_unstable();
                faces.entry(face).or_default().push(k);
            }
        }
        if let Some((face, owners)) = faces.iter().find(|(_, owners)| owners.len() > 2) {
            return Err(Error::NonManifold {
                face: face.clone(),
                count: owners.len(),
            });
        }

        // 1D: the face opposite the last node (the left endpoint) comes first
        let mut boundary = Vec::new();
        for (k, element) in elements.iter().enumerate() {
            let skips: Vec<usize> = if dim == 1 {
                (0..element.len()).rev().collect()
            } else {
                (0..element.len()).collect()
            };
            for skip in skips {
                let face: Vec<usize> = element
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != skip)
                    .map(|(_, &i)| i)
                    .collect();
                let mut key = face.clone();
                key.sort_unstable();
                if faces[&key].len() == 1 {
                    boundary.push(boundary_facet(dim, k, face, &nodes, &centroids[k]));
                }
            }
        }

        let mut on_boundary = vec![false; nodes.len()];
        for f in &boundary {
            for &i in &f.nodes {
                on_boundary[i] = true;
            }
        }

        let mut lumped_mass = vec![T::zero(); nodes.len()];
        for (element, &m) in elements.iter().zip(&measures) {
            let share = m / T::from_usize_lossy(dim + 1);
            for &i in element {
                lumped_mass[i] += share;
            }
        }

        let mut edge_keys: BTreeMap<[usize; 2], ()> = BTreeMap::new();
        for element in &elements {
            for a in 0..element.len() {
                for b in a + 1..element.len() {
                    let (i, j) = (element[a].min(element[b]), element[a].max(element[b]));
                    edge_keys.insert([i, j], ());
                }
            }
        }
        let edges = edge_keys.into_keys().collect();

        let hull: Vec<usize> = (0..nodes.len()).filter(|&i| on_boundary[i]).collect();
        let mut diameter = T::zero();
        for (a, &i) in hull.iter().enumerate() {
            for &j in &hull[a + 1..] {
                let d = norm(&[nodes[i][0] - nodes[j][0], nodes[i][1] - nodes[j][1]]);
                diameter = diameter.max(d);
            }
        }

        Ok(Self {
            dim,
            nodes,
            elements,
            measures,
            centroids,
            hat_gradients,
            boundary,
            on_boundary,
            lumped_mass,
            edges,
            diameter,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nodes(&self) -> &[Vector<T>] {
        &self.nodes
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn elements(&self) -> &[Vec<usize>] {
        &self.elements
    }

    pub fn num_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn element_measures(&self) -> &[T] {
        &self.measures
    }

    pub fn centroids(&self) -> &[Vector<T>] {
        &self.centroids
    }

    /// Gradients of the local hat functions on element `k`, in the element's node order.
    pub fn hat_gradients(&self, k: usize) -> &[Vector<T>] {
        &self.hat_gradients[k]
    }

    pub fn boundary_facets(&self) -> &[BoundaryFacet<T>] {
        &self.boundary
    }

    pub fn is_boundary_node(&self, i: usize) -> bool {
        self.on_boundary[i]
    }

    /// `∫_Ω φ_i dx` for every hat function.
    pub fn lumped_mass(&self) -> &[T] {
        &self.lumped_mass
    }

    /// Unique mesh edges `(i, j)` with `i < j`.
    pub fn edges(&self) -> &[[usize; 2]] {
        &self.edges
    }

    /// `|Ω|`
    pub fn volume(&self) -> T {
        self.measures.iter().copied().sum()
    }

    /// `H^{N-1}(∂Ω)`
    pub fn boundary_measure(&self) -> T {
        self.boundary.iter().map(|f| f.measure).sum()
    }

    /// `diam(Ω)`, the largest distance between two boundary nodes.
    pub fn diameter(&self) -> T {
        self.diameter
    }

    pub fn bounding_box(&self) -> (Vector<T>, Vector<T>) {
        let mut lo = [T::infinity(); 2];
        let mut hi = [T::neg_infinity(); 2];
        for x in &self.nodes {
            for d in 0..2 {
                lo[d] = lo[d].min(x[d]);
                hi[d] = hi[d].max(x[d]);
            }
        }
        (lo, hi)
    }

    /// Elementwise gradient of the P1 interpolant of nodal `values`.
    pub fn element_gradients(&self, values: &[T]) -> Result<Vec<Vector<T>>> {
        check_len(self.num_nodes(), values.len())?;
        Ok(self
            .elements
            .iter()
            .zip(&self.hat_gradients)
            .map(|(element, grads)| {
                let mut g = [T::zero(); 2];
                for (&i, gi) in element.iter().zip(grads) {
                    g[0] += values[i] * gi[0];
                    g[1] += values[i] * gi[1];
                }
                g
            })
            .collect())
    }

    /// Finds an element containing `point` and the barycentric coordinates
    /// of the point in it.
    pub fn locate(&self, point: &Vector<T>) -> Option<(usize, Vec<T>)> {
        let tol = T::lit(1e3) * T::epsilon();
        let base = T::one() / T::from_usize_lossy(self.dim + 1);
        for (k, grads) in self.hat_gradients.iter().enumerate() {
            let c = self.centroids[k];
            let shift = [point[0] - c[0], point[1] - c[1]];
            let bary: Vec<T> = grads.iter().map(|g| base + dot(g, &shift)).collect();
            if bary.iter().all(|&l| l >= -tol) {
                return Some((k, bary));
            }
        }
        None
    }

    /// P1 interpolant of nodal `values` at `point`, `None` outside the mesh.
    pub fn interpolate(&self, values: &[T], point: &Vector<T>) -> Option<T> {
        let (k, bary) = self.locate(point)?;
        Some(
            self.elements[k]
                .iter()
                .zip(&bary)
                .map(|(&i, &l)| values[i] * l)
                .sum(),
        )
    }

    /// Serializes the mesh in the plain-text format read by [`load_mesh_file`].
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "dim {}", self.dim);
        let _ = writeln!(out, "nodes {}", self.nodes.len());
        for x in &self.nodes {
            if self.dim == 1 {
                let _ = writeln!(out, "{}", x[0]);
            } else {
                let _ = writeln!(out, "{} {}", x[0], x[1]);
            }
        }
        let _ = writeln!(out, "elements {}", self.elements.len());
        for e in &self.elements {
            let line: Vec<String> = e.iter().map(|i| i.to_string()).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out
    }
}

/// Measure and hat-function gradients of one simplex. The measure is signed
/// in 2D (negative for clockwise triangles).
fn simplex_geometry<T: Real>(dim: usize, element: &[usize], nodes: &[Vector<T>]) -> (T, Vec<Vector<T>>) {
    if dim == 1 {
        let h = nodes[element[1]][0] - nodes[element[0]][0];
        let inv = T::one() / h;
        return (h, vec![[-inv, T::zero()], [inv, T::zero()]]);
    }
    let [x0, y0] = nodes[element[0]];
    let [x1, y1] = nodes[element[1]];
    let [x2, y2] = nodes[element[2]];
    let det = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0);
    let half = T::lit(0.5);
    let grads = vec![
        [(y1 - y2) / det, (x2 - x1) / det],
        [(y2 - y0) / det, (x0 - x2) / det],
        [(y0 - y1) / det, (x1 - x0) / det],
    ];
    (half * det, grads)
}

fn boundary_facet<T: Real>(
    dim: usize,
    element: usize,
    face: Vec<usize>,
    nodes: &[Vector<T>],
    centroid: &Vector<T>,
) -> BoundaryFacet<T> {
    if dim == 1 {
        let x = nodes[face[0]];
        let sign = if x[0] > centroid[0] { T::one() } else { -T::one() };
        return BoundaryFacet {
            nodes: face,
            normal: [sign, T::zero()],
            measure: T::one(),
            element,
            midpoint: x,
        };
    }
    let a = nodes[face[0]];
    let b = nodes[face[1]];
    let t = [b[0] - a[0], b[1] - a[1]];
    let length = norm(&t);
    let mut normal = [t[1] / length, -t[0] / length];
    let half = T::lit(0.5);
    let midpoint = [half * (a[0] + b[0]), half * (a[1] + b[1])];
    let outward = [midpoint[0] - centroid[0], midpoint[1] - centroid[1]];
    if dot(&normal, &outward) < T::zero() {
        normal = [-normal[0], -normal[1]];
    }
    BoundaryFacet {
        nodes: face,
        normal,
        measure: length,
        element,
        midpoint,
    }
}

/// Uniform mesh of `(0, length)` with `n` elements.
pub fn build_interval_mesh<T: Real>(n: usize, length: T) -> Result<Mesh<T>> {
    if n == 0 {
        return Err(Error::InvalidParameter("interval mesh needs n >= 1".into()));
    }
    if !(length > T::zero()) || !length.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "interval length must be positive, got {length}"
        )));
    }
    let nf = T::from_usize_lossy(n);
    let nodes = (0..=n)
        .map(|i| [length * T::from_usize_lossy(i) / nf, T::zero()])
        .collect();
    let elements = (0..n).map(|i| vec![i, i + 1]).collect();
    Mesh::new(1, nodes, elements)
}

/// `n × n` grid on the unit square, each cell split along its
/// lower-left/upper-right diagonal into two counter-clockwise triangles.
pub fn build_unit_square_mesh<T: Real>(n: usize) -> Result<Mesh<T>> {
    if n == 0 {
        return Err(Error::InvalidParameter("unit square mesh needs n >= 1".into()));
    }
    let nf = T::from_usize_lossy(n);
    let index = |i: usize, j: usize| j * (n + 1) + i;
    let mut nodes = Vec::with_capacity((n + 1) * (n + 1));
    for j in 0..=n {
        for i in 0..=n {
            nodes.push([T::from_usize_lossy(i) / nf, T::from_usize_lossy(j) / nf]);
        }
    }
    let mut elements = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            let (v00, v10, v11, v01) = (index(i, j), index(i + 1, j), index(i + 1, j + 1), index(i, j + 1));
            elements.push(vec![v00, v10, v11]);
            elements.push(vec![v00, v11, v01]);
        }
    }
    Mesh::new(2, nodes, elements)
}

/// Parses the plain-text mesh format:
///
/// ```text
/// dim 2
/// nodes 4
/// 0 0
/// ...
/// elements 2
/// 0 1 2
/// ...
/// ```
///
/// Blank lines and `#` comments are ignored. Indices are 0-based. The boundary
/// is always inferred.
pub fn parse_mesh<T: Real>(text: &str) -> Result<Mesh<T>> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());

    let mut header = |keyword: &str| -> Result<(usize, usize)> {
        let (line, content) = lines.next().ok_or(Error::Parse {
            line: 0,
            message: format!("unexpected end of file, expected `{keyword} <count>`"),
        })?;
        let mut parts = content.split_whitespace();
        if parts.next() != Some(keyword) {
            return Err(Error::Parse {
                line,
                message: format!("expected `{keyword} <count>`, found `{content}`"),
            });
        }
        let value = parts
            .next()
            .and_then(|v| v.parse::<usize>().ok())
            .ok_or_else(|| Error::Parse {
                line,
                message: format!("`{keyword}` needs a non-negative integer"),
            })?;
        Ok((line, value))
    };

    let (dim_line, dim) = header("dim")?;
    if dim != 1 && dim != 2 {
        return Err(Error::Parse {
            line: dim_line,
            message: format!("dimension must be 1 or 2, got {dim}"),
        });
    }
    let (_, node_count) = header("nodes")?;

    let mut nodes = Vec::with_capacity(node_count);
    for _ in 0..node_count {
        let (line, content) = lines.next().ok_or(Error::Parse {
            line: 0,
            message: "unexpected end of file in node block".into(),
        })?;
        let coords: Vec<f64> = content
            .split_whitespace()
            .map(|v| v.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| Error::Parse {
                line,
                message: format!("bad coordinate: {e}"),
            })?;
        if coords.len() != dim || coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::Parse {
                line,
                message: format!("expected {dim} finite coordinates, found `{content}`"),
            });
        }
        let y = if dim == 2 { coords[1] } else { 0.0 };
        nodes.push([T::lit(coords[0]), T::lit(y)]);
    }

    let (line, content) = lines.next().ok_or(Error::Parse {
        line: 0,
        message: "unexpected end of file, expected `elements <count>`".into(),
    })?;
    let element_count = match content.split_whitespace().collect::<Vec<_>>()[..] {
        ["elements", count] => count.parse::<usize>().map_err(|e| Error::Parse {
            line,
            message: format!("bad element count: {e}"),
        })?,
        _ => {
            return Err(Error::Parse {
                line,
                message: format!("expected `elements <count>`, found `{content}`"),
            })
        }
    };
    let mut elements = Vec::with_capacity(element_count);
    for _ in 0..element_count {
        let (line, content) = lines.next().ok_or(Error::Parse {
            line: 0,
            message: "unexpected end of file in element block".into(),
        })?;
        let element: Vec<usize> = content
            .split_whitespace()
            .map(|v| v.parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|e| Error::Parse {
                line,
                message: format!("bad node index: {e}"),
            })?;
        if element.len() != dim + 1 {
            return Err(Error::Parse {
                line,
                message: format!("expected {} node indices, found `{content}`", dim + 1),
            });
        }
        if let Some(&bad) = element.iter().find(|&&i| i >= node_count) {
            return Err(Error::Parse {
                line,
                message: format!("node index {bad} out of range (nodes: {node_count})"),
            });
        }
        elements.push(element);
    }
    if let Some((line, content)) = lines.next() {
        return Err(Error::Parse {
            line,
            message: format!("trailing content `{content}`"),
        });
    }
    Mesh::new(dim, nodes, elements)
}

pub fn load_mesh_file<T: Real>(path: impl AsRef<Path>) -> Result<Mesh<T>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_mesh(&text)
}

/// Elementwise-constant gradient of the P1 field.
pub fn gradient_operator<T: Real>(mesh: &Mesh<T>, field: &ScalarField<T>) -> Result<Vec<Vector<T>>> {
    mesh.element_gradients(field.values())
}
