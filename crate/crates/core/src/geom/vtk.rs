//! Legacy ASCII VTK (version 2.0) reader and writer.
//!
//! Supported: `DATASET UNSTRUCTURED_GRID` with tetrahedral cells (type 10)
//! and `DATASET POLYDATA` with triangular `POLYGONS`, plus integer or float
//! `SCALARS` under `CELL_DATA` / `POINT_DATA`. The cell array `region` and
//! the point array `electrode` are interpreted; other arrays are kept by name.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::mesh::{TetMesh, TriMesh, TORSO};
use crate::{Error, Result, Vec3};

const VTK_TETRA: i64 = 10;
const VTK_TRIANGLE: i64 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshKind {
    Surface,
    Volume,
}

#[derive(Debug, Clone)]
pub enum Mesh {
    Surface(TriMesh),
    Volume(TetMesh),
}

/// Named scalar arrays found in a file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Arrays {
    pub point: BTreeMap<String, Vec<f64>>,
    pub cell: BTreeMap<String, Vec<f64>>,
}

/// A scalar point field to write.
#[derive(Debug, Clone, Copy)]
pub enum Field<'a> {
    Float(&'a [f64]),
    Int(&'a [i32]),
}

pub fn load_mesh(path: impl AsRef<Path>, kind: MeshKind) -> Result<Mesh> {
    Ok(match kind {
        MeshKind::Surface => Mesh::Surface(read_tri_mesh(path)?.0),
        MeshKind::Volume => Mesh::Volume(read_tet_mesh(path)?.0),
    })
}

pub fn read_tet_mesh(path: impl AsRef<Path>) -> Result<(TetMesh, Arrays)> {
    let parsed = parse_file(path.as_ref())?;
    let err = |msg: String| Error::Parse {
        path: path.as_ref().display().to_string(),
        line: parsed.cells_line,
        msg,
    };
    if parsed.dataset != "UNSTRUCTURED_GRID" {
        return Err(err(format!("expected UNSTRUCTURED_GRID, found {}", parsed.dataset)));
    }
    let types = parsed.cell_types.as_ref().ok_or_else(|| err("missing CELL_TYPES".into()))?;
    let mut tets = Vec::with_capacity(parsed.cells.len());
    for (c, (cell, &ty)) in parsed.cells.iter().zip(types).enumerate() {
        if ty != VTK_TETRA || cell.len() != 4 {
            return Err(err(format!("cell {c} is not a tetrahedron (type {ty}, {} nodes)", cell.len())));
        }
        tets.push([cell[0], cell[1], cell[2], cell[3]]);
    }
    let regions = match parsed.arrays.cell.get("region") {
        Some(r) => r.iter().map(|&x| x as i32).collect(),
        None => vec![TORSO; tets.len()],
    };
    let mut mesh = TetMesh::new(parsed.points, tets, regions)?;
    if let Some(e) = parsed.arrays.point.get("electrode") {
        mesh.point_labels = Some(e.iter().map(|&x| x as i32).collect());
    }
    Ok((mesh, parsed.arrays))
}

pub fn read_tri_mesh(path: impl AsRef<Path>) -> Result<(TriMesh, Arrays)> {
    let parsed = parse_file(path.as_ref())?;
    let err = |msg: String| Error::Parse {
        path: path.as_ref().display().to_string(),
        line: parsed.cells_line,
        msg,
    };
    let mut tris = Vec::with_capacity(parsed.cells.len());
    match parsed.dataset.as_str() {
        "POLYDATA" => {
            for (c, cell) in parsed.cells.iter().enumerate() {
                if cell.len() != 3 {
                    return Err(err(format!("polygon {c} has {} vertices, expected 3", cell.len())));
                }
                tris.push([cell[0], cell[1], cell[2]]);
            }
        }
        "UNSTRUCTURED_GRID" => {
            let types = parsed.cell_types.as_ref().ok_or_else(|| err("missing CELL_TYPES".into()))?;
            for (c, (cell, &ty)) in parsed.cells.iter().zip(types).enumerate() {
                if ty != VTK_TRIANGLE || cell.len() != 3 {
                    return Err(err(format!("cell {c} is not a triangle (type {ty})")));
                }
                tris.push([cell[0], cell[1], cell[2]]);
            }
        }
        other => return Err(err(format!("unsupported dataset {other}"))),
    }
    let mut mesh = TriMesh {
        vertices: parsed.points,
        triangles: tris,
        labels: None,
        parent_nodes: None,
    };
    if let Some(e) = parsed.arrays.point.get("electrode") {
        mesh.labels = Some(e.iter().map(|&x| x as i32).collect());
    }
    mesh.validate()?;
    Ok((mesh, parsed.arrays))
}

struct Parsed {
    dataset: String,
    points: Vec<Vec3>,
    cells: Vec<Vec<usize>>,
    cells_line: usize,
    cell_types: Option<Vec<i64>>,
    arrays: Arrays,
}

struct Tokens<'a> {
    path: String,
    items: Vec<(usize, &'a str)>,
    pos: usize,
}

impl<'a> Tokens<'a> {
    fn line(&self) -> usize {
        self.items
            .get(self.pos)
            .or(self.items.last())
            .map_or(0, |t| t.0)
    }

    fn error(&self, msg: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.clone(),
            line: self.line(),
            msg: msg.into(),
        }
    }

    /// Error located at the most recently consumed token.
    fn error_prev(&self, msg: impl Into<String>) -> Error {
        let line = self.items.get(self.pos.saturating_sub(1)).map_or(0, |t| t.0);
        Error::Parse {
            path: self.path.clone(),
            line,
            msg: msg.into(),
        }
    }

    fn peek(&self) -> Option<&'a str> {
        self.items.get(self.pos).map(|t| t.1)
    }

    fn next(&mut self, what: &str) -> Result<&'a str> {
        let tok = self
            .items
            .get(self.pos)
            .map(|t| t.1)
            .ok_or_else(|| self.error(format!("unexpected end of file, expected {what}")))?;
        self.pos += 1;
        Ok(tok)
    }

    fn keyword(&mut self, kw: &str) -> Result<()> {
        let tok = self.next(kw)?;
        if tok.eq_ignore_ascii_case(kw) {
            Ok(())
        } else {
            self.pos -= 1;
            Err(self.error(format!("expected {kw}, found {tok}")))
        }
    }

    fn number<T: std::str::FromStr>(&mut self, what: &str) -> Result<T> {
        let tok = self.next(what)?;
        tok.parse().map_err(|_| {
            self.pos -= 1;
            self.error(format!("invalid {what}: {tok}"))
        })
    }
}

fn parse_file(path: &Path) -> Result<Parsed> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_str(&text, &path.display().to_string())
}

fn parse_str(text: &str, path: &str) -> Result<Parsed> {
    let lines: Vec<&str> = text.lines().collect();
    let perr = |line: usize, msg: String| Error::Parse {
        path: path.to_string(),
        line,
        msg,
    };
    if lines.len() < 3 || !lines[0].trim_start().starts_with("# vtk DataFile Version") {
        return Err(perr(1, "missing '# vtk DataFile Version' header".into()));
    }
    if !lines[2].trim().eq_ignore_ascii_case("ASCII") {
        return Err(perr(3, format!("only ASCII files are supported, found '{}'", lines[2].trim())));
    }
    let items = lines
        .iter()
        .enumerate()
        .skip(3)
        .flat_map(|(i, l)| l.split_whitespace().map(move |t| (i + 1, t)))
        .collect();
    let mut tk = Tokens {
        path: path.to_string(),
        items,
        pos: 0,
    };

    tk.keyword("DATASET")?;
    let dataset = tk.next("dataset type")?.to_ascii_uppercase();
    if dataset != "UNSTRUCTURED_GRID" && dataset != "POLYDATA" {
        return Err(tk.error(format!("unsupported dataset {dataset}")));
    }

    let mut points = Vec::new();
    let mut cells = Vec::new();
    let mut cells_line = 0;
    let mut cell_types = None;
    let mut arrays = Arrays::default();
    // which attribute section we are in, with its expected length
    let mut section: Option<(bool, usize)> = None;

    while let Some(kw) = tk.peek() {
        match kw.to_ascii_uppercase().as_str() {
            "POINTS" => {
                tk.pos += 1;
                let n: usize = tk.number("point count")?;
                tk.next("point data type")?;
                points.reserve(n);
                for _ in 0..n {
                    let x = tk.number("coordinate")?;
                    let y = tk.number("coordinate")?;
                    let z = tk.number("coordinate")?;
                    points.push(Vec3::new(x, y, z));
                }
            }
            "CELLS" | "POLYGONS" => {
                tk.pos += 1;
                cells_line = tk.line();
                let n: usize = tk.number("cell count")?;
                let size: usize = tk.number("cell list size")?;
                let mut read = 0;
                for _ in 0..n {
                    let k: usize = tk.number("cell size")?;
                    let mut cell = Vec::with_capacity(k);
                    for _ in 0..k {
                        let v: usize = tk.number("vertex index")?;
                        if v >= points.len() {
                            return Err(tk.error_prev(format!(
                                "vertex index {v} out of range ({} points)",
                                points.len()
                            )));
                        }
                        cell.push(v);
                    }
                    read += k + 1;
                    cells.push(cell);
                }
                if read != size {
                    return Err(tk.error(format!("cell list size {size} does not match contents ({read})")));
                }
            }
            "CELL_TYPES" => {
                tk.pos += 1;
                let n: usize = tk.number("cell type count")?;
                if n != cells.len() {
                    return Err(tk.error(format!("{n} cell types for {} cells", cells.len())));
                }
                let mut t = Vec::with_capacity(n);
                for _ in 0..n {
                    t.push(tk.number("cell type")?);
                }
                cell_types = Some(t);
            }
            "CELL_DATA" | "POINT_DATA" => {
                let is_point = kw.eq_ignore_ascii_case("POINT_DATA");
                tk.pos += 1;
                let n: usize = tk.number("attribute count")?;
                let expected = if is_point { points.len() } else { cells.len() };
                if n != expected {
                    return Err(tk.error(format!("{kw} {n} does not match {expected} entities")));
                }
                section = Some((is_point, n));
            }
            "SCALARS" => {
                tk.pos += 1;
                let (is_point, n) = section.ok_or_else(|| tk.error("SCALARS outside CELL_DATA/POINT_DATA"))?;
                let name = tk.next("array name")?.to_string();
                tk.next("array type")?;
                let ncomp = match tk.peek() {
                    Some(t) if t.parse::<usize>().is_ok() => tk.number::<usize>("component count")?,
                    _ => 1,
                };
                if ncomp != 1 {
                    return Err(tk.error(format!("array {name}: only single-component scalars are supported")));
                }
                if tk.peek().is_some_and(|t| t.eq_ignore_ascii_case("LOOKUP_TABLE")) {
                    tk.pos += 2;
                }
                let mut vals = Vec::with_capacity(n);
                for _ in 0..n {
                    vals.push(tk.number::<f64>("scalar value")?);
                }
                let map = if is_point { &mut arrays.point } else { &mut arrays.cell };
                map.insert(name, vals);
            }
            other => return Err(tk.error(format!("unsupported keyword {other}"))),
        }
    }
    Ok(Parsed {
        dataset,
        points,
        cells,
        cells_line,
        cell_types,
        arrays,
    })
}

fn header(out: &mut String, title: &str, dataset: &str, points: &[Vec3]) {
    let _ = writeln!(out, "# vtk DataFile Version 2.0\n{title}\nASCII\nDATASET {dataset}");
    let _ = writeln!(out, "POINTS {} double", points.len());
    for p in points {
        let _ = writeln!(out, "{} {} {}", p.x, p.y, p.z);
    }
}

fn write_point_fields(out: &mut String, n: usize, labels: Option<&[i32]>, fields: &[(&str, Field)]) -> Result<()> {
    if labels.is_none() && fields.is_empty() {
        return Ok(());
    }
    let _ = writeln!(out, "POINT_DATA {n}");
    if let Some(l) = labels {
        write_scalars(out, "electrode", Field::Int(l));
    }
    for (name, f) in fields {
        let len = match f {
            Field::Float(v) => v.len(),
            Field::Int(v) => v.len(),
        };
        if len != n {
            return Err(Error::Dimension {
                context: "VTK point field",
                expected: n,
                found: len,
            });
        }
        write_scalars(out, name, *f);
    }
    Ok(())
}

fn write_scalars(out: &mut String, name: &str, f: Field) {
    match f {
        Field::Float(v) => {
            let _ = writeln!(out, "SCALARS {name} double 1\nLOOKUP_TABLE default");
            for x in v {
                let _ = writeln!(out, "{x}");
            }
        }
        Field::Int(v) => {
            let _ = writeln!(out, "SCALARS {name} int 1\nLOOKUP_TABLE default");
            for x in v {
                let _ = writeln!(out, "{x}");
            }
        }
    }
}

/// Writes a tetrahedral mesh with its `region` cell array, `electrode`
/// labels if present, and extra point fields.
pub fn write_tet_mesh(path: impl AsRef<Path>, mesh: &TetMesh, fields: &[(&str, Field)]) -> Result<()> {
    let mut out = String::new();
    header(&mut out, "volecgi tetrahedral mesh", "UNSTRUCTURED_GRID", &mesh.vertices);
    let _ = writeln!(out, "CELLS {} {}", mesh.tets.len(), mesh.tets.len() * 5);
    for t in &mesh.tets {
        let _ = writeln!(out, "4 {} {} {} {}", t[0], t[1], t[2], t[3]);
    }
    let _ = writeln!(out, "CELL_TYPES {}", mesh.tets.len());
    for _ in &mesh.tets {
        let _ = writeln!(out, "{VTK_TETRA}");
    }
    let _ = writeln!(out, "CELL_DATA {}", mesh.tets.len());
    write_scalars(&mut out, "region", Field::Int(&mesh.regions));
    write_point_fields(&mut out, mesh.vertices.len(), mesh.point_labels.as_deref(), fields)?;
    std::fs::write(path.as_ref(), out).map_err(|e| Error::io(path, e))
}

/// Writes a triangulated surface as POLYDATA.
pub fn write_tri_mesh(path: impl AsRef<Path>, mesh: &TriMesh, fields: &[(&str, Field)]) -> Result<()> {
    let mut out = String::new();
    header(&mut out, "volecgi surface", "POLYDATA", &mesh.vertices);
    let _ = writeln!(out, "POLYGONS {} {}", mesh.triangles.len(), mesh.triangles.len() * 4);
    for t in &mesh.triangles {
        let _ = writeln!(out, "3 {} {} {}", t[0], t[1], t[2]);
    }
    write_point_fields(&mut out, mesh.vertices.len(), mesh.labels.as_deref(), fields)?;
    std::fs::write(path.as_ref(), out).map_err(|e| Error::io(path, e))
}
