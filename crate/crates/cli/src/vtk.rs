//! Legacy ASCII VTK unstructured grids: writer and a reader for the files it emits.
//!
//! Floats are written with Rust's shortest round-trip formatting, so reading a
//! file back reproduces every value bit for bit.

use std::fmt::Write as _;

use dphase_core::{Mesh64, Vector};
use thiserror::Error;

const VTK_LINE: u32 = 3;
const VTK_TRIANGLE: u32 = 5;

#[derive(Debug, Error)]
pub enum VtkError {
    #[error("vtk: {0}")]
    Format(String),
}

/// Fields stored alongside the mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionFields {
    pub u: Vec<f64>,
    pub grad_u: Vec<Vector<f64>>,
    pub z: Vec<Vector<f64>>,
    pub zeta: Vec<Vector<f64>>,
    pub a: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct VtkData {
    pub dim: usize,
    pub nodes: Vec<Vector<f64>>,
    pub elements: Vec<Vec<usize>>,
    pub fields: SolutionFields,
}

pub fn write_vtk(mesh: &Mesh64, title: &str, fields: &SolutionFields) -> String {
    let mut s = String::new();
    let (n, m) = (mesh.num_nodes(), mesh.num_elements());
    let _ = writeln!(s, "# vtk DataFile Version 3.0");
    let _ = writeln!(s, "{}", title.replace('\n', " "));
    let _ = writeln!(s, "ASCII");
    let _ = writeln!(s, "DATASET UNSTRUCTURED_GRID");
    let _ = writeln!(s, "POINTS {n} double");
    for x in mesh.nodes() {
        let _ = writeln!(s, "{:?} {:?} 0", x[0], x[1]);
    }
    let per = mesh.dim() + 1;
    let _ = writeln!(s, "CELLS {m} {}", m * (per + 1));
    for e in mesh.elements() {
        let ids: Vec<String> = e.iter().map(|i| i.to_string()).collect();
        let _ = writeln!(s, "{per} {}", ids.join(" "));
    }
    let _ = writeln!(s, "CELL_TYPES {m}");
    let cell_type = if mesh.dim() == 1 { VTK_LINE } else { VTK_TRIANGLE };
    for _ in 0..m {
        let _ = writeln!(s, "{cell_type}");
    }
    let _ = writeln!(s, "POINT_DATA {n}");
    let _ = writeln!(s, "SCALARS u double 1");
    let _ = writeln!(s, "LOOKUP_TABLE default");
    for v in &fields.u {
        let _ = writeln!(s, "{v:?}");
    }
    let _ = writeln!(s, "CELL_DATA {m}");
    for (name, data) in [("grad_u", &fields.grad_u), ("z", &fields.z), ("zeta", &fields.zeta)] {
        let _ = writeln!(s, "VECTORS {name} double");
        for v in data {
            let _ = writeln!(s, "{:?} {:?} 0", v[0], v[1]);
        }
    }
    let _ = writeln!(s, "SCALARS a double 1");
    let _ = writeln!(s, "LOOKUP_TABLE default");
    for v in &fields.a {
        let _ = writeln!(s, "{v:?}");
    }
    s
}

struct Tokens<'a> {
    inner: std::iter::Peekable<std::str::SplitWhitespace<'a>>,
}

impl<'a> Tokens<'a> {
    fn next(&mut self) -> Result<&'a str, VtkError> {
        self.inner.next().ok_or_else(|| VtkError::Format("unexpected end of file".into()))
    }

    fn expect(&mut self, word: &str) -> Result<(), VtkError> {
        let t = self.next()?;
        if t.eq_ignore_ascii_case(word) {
            Ok(())
        } else {
            Err(VtkError::Format(format!("expected `{word}`, found `{t}`")))
        }
    }

    fn number<T: std::str::FromStr>(&mut self) -> Result<T, VtkError> {
        let t = self.next()?;
        t.parse().map_err(|_| VtkError::Format(format!("bad number `{t}`")))
    }

    fn vectors(&mut self, count: usize) -> Result<Vec<Vector<f64>>, VtkError> {
        (0..count)
            .map(|_| {
                let v = [self.number()?, self.number()?];
                let _: f64 = self.number()?;
                Ok(v)
            })
            .collect()
    }

    fn scalars(&mut self, count: usize) -> Result<Vec<f64>, VtkError> {
        self.expect("LOOKUP_TABLE")?;
        self.next()?;
        (0..count).map(|_| self.number()).collect()
    }
}

pub fn read_vtk(text: &str) -> Result<VtkData, VtkError> {
    // the header and title are whole lines
    let mut lines = text.splitn(3, '\n');
    let header = lines.next().unwrap_or("");
    if !header.starts_with("# vtk DataFile") {
        return Err(VtkError::Format("missing `# vtk DataFile` header".into()));
    }
    lines.next();
    let body = lines.next().unwrap_or("");
    let mut t = Tokens {
        inner: body.split_whitespace().peekable(),
    };
    t.expect("ASCII")?;
    t.expect("DATASET")?;
    t.expect("UNSTRUCTURED_GRID")?;
    t.expect("POINTS")?;
    let n: usize = t.number()?;
    t.next()?;
    let nodes = t.vectors(n)?;
    t.expect("CELLS")?;
    let m: usize = t.number()?;
    let _: usize = t.number()?;
    let mut elements = Vec::with_capacity(m);
    for _ in 0..m {
        let k: usize = t.number()?;
        elements.push((0..k).map(|_| t.number()).collect::<Result<Vec<usize>, _>>()?);
    }
    t.expect("CELL_TYPES")?;
    let count: usize = t.number()?;
    let types: Vec<u32> = (0..count).map(|_| t.number()).collect::<Result<_, _>>()?;
    let dim = match types.first() {
        Some(&VTK_LINE) => 1,
        Some(&VTK_TRIANGLE) => 2,
        other => return Err(VtkError::Format(format!("unsupported cell type {other:?}"))),
    };
    if types.iter().any(|&c| c != types[0]) {
        return Err(VtkError::Format("mixed cell types".into()));
    }

    let mut fields = SolutionFields {
        u: Vec::new(),
        grad_u: Vec::new(),
        z: Vec::new(),
        zeta: Vec::new(),
        a: Vec::new(),
    };
    let mut size = 0;
    while let Some(word) = t.inner.next() {
        match word {
            "POINT_DATA" => size = t.number()?,
            "CELL_DATA" => size = t.number()?,
            "SCALARS" => {
                let name = t.next()?;
                t.next()?;
                if t.inner.peek().is_some_and(|w| *w != "LOOKUP_TABLE") {
                    t.next()?;
                }
                let values = t.scalars(size)?;
                match name {
                    "u" => fields.u = values,
                    "a" => fields.a = values,
                    _ => {}
                }
            }
            "VECTORS" => {
                let name = t.next()?;
                t.next()?;
                let values = t.vectors(size)?;
                match name {
                    "grad_u" => fields.grad_u = values,
                    "z" => fields.z = values,
                    "zeta" => fields.zeta = values,
                    _ => {}
                }
            }
            other => return Err(VtkError::Format(format!("unexpected token `{other}`"))),
        }
    }
    if fields.u.len() != n || [&fields.grad_u, &fields.z, &fields.zeta].iter().any(|f| f.len() != m) || fields.a.len() != m {
        return Err(VtkError::Format("missing or mis-sized field among u, grad_u, z, zeta, a".into()));
    }
    Ok(VtkData {
        dim,
        nodes,
        elements,
        fields,
    })
}
