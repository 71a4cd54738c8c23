//! Plain-text output formats: CSV tables, JSON reports and the mesh format.
//!
//! Every file starts with one comment line (`# ...` for CSV and meshes, a
//! leading `"comment"` member for JSON). Floats use Rust's shortest
//! round-trip representation, so equal runs give equal bytes.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::Serialize;

use cr_afem::afem::{AfemTrace, LevelRecord};
use cr_afem::control::KktSolution;
use cr_afem::estimate::EstimatorReport;
use cr_afem::femspace::CrField;
use cr_afem::mesh::{DomainTag, Mesh};
use cr_afem::quadrature::TRI_DEGREE4;
use cr_afem::verify::rates::{Rate, RateTable, TwoSidedRow, RATE_COLUMNS};
use cr_afem::Point;

pub const TRACE_COLUMNS: [&str; 16] = [
    "level",
    "nelem",
    "ndof",
    "eta",
    "mu",
    "osc",
    "delta_next",
    "err_energy_y",
    "err_energy_p",
    "err_l2_y",
    "err_l2_p",
    "err_l2_r",
    "err_l2_s",
    "err_l2_u",
    "marked",
    "seconds",
];

pub const INDICATOR_COLUMNS: [&str; 7] = [
    "element",
    "eta2_state_volume",
    "eta2_state_edge",
    "eta2_adjoint_volume",
    "eta2_adjoint_edge",
    "osc2",
    "level",
];

/// Shortest round-trip float; empty for absent values.
pub fn num(x: f64) -> String {
    format!("{x:e}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// Write `# comment`, then a CSV header and rows.
pub fn write_csv<W: Write>(out: W, comment: &str, header: &[&str], rows: &[Vec<String>]) -> io::Result<()> {
    let mut out = out;
    writeln!(out, "# {comment}")?;
    let mut w = csv::WriterBuilder::new().from_writer(out);
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()
}

pub fn write_csv_file(path: &Path, comment: &str, header: &[&str], rows: &[Vec<String>]) -> io::Result<()> {
    let f = io::BufWriter::new(fs::File::create(path)?);
    write_csv(f, comment, header, rows)
}

/// Read a CSV written by [`write_csv`]: the header and the rows, comments skipped.
pub fn read_csv(path: &Path) -> io::Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    let header = r.headers()?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec?.iter().map(String::from).collect());
    }
    Ok((header, rows))
}

pub fn trace_row(r: &LevelRecord, timing: bool) -> Vec<String> {
    let e = r.errors;
    vec![
        r.level.to_string(),
        r.nelem.to_string(),
        r.ndof.to_string(),
        num(r.eta),
        num(r.mu),
        num(r.osc),
        opt(r.delta_next),
        opt(e.map(|e| e.energy_y)),
        opt(e.map(|e| e.energy_p)),
        opt(e.map(|e| e.l2_y)),
        opt(e.map(|e| e.l2_p)),
        opt(e.map(|e| e.l2_r)),
        opt(e.map(|e| e.l2_s)),
        opt(e.map(|e| e.l2_u)),
        r.marked.to_string(),
        if timing { opt(r.seconds) } else { String::new() },
    ]
}

pub fn trace_rows(trace: &AfemTrace, timing: bool) -> Vec<Vec<String>> {
    trace.records.iter().map(|r| trace_row(r, timing)).collect()
}

pub fn indicator_rows(report: &EstimatorReport, level: usize) -> Vec<Vec<String>> {
    (0..report.len())
        .map(|k| {
            vec![
                k.to_string(),
                num(report.state_volume[k]),
                num(report.state_edge[k]),
                num(report.adjoint_volume[k]),
                num(report.adjoint_edge[k]),
                num(report.osc_f[k] + report.osc_yd[k]),
                level.to_string(),
            ]
        })
        .collect()
}

pub fn rate_header() -> Vec<&'static str> {
    let mut h = vec!["level", "nelem", "ndof", "h"];
    h.extend_from_slice(&RATE_COLUMNS);
    h
}

/// One row per level and a final `rate` row (`exact` when every error vanished).
pub fn rate_rows(t: &RateTable) -> Vec<Vec<String>> {
    let mut rows: Vec<Vec<String>> = t
        .rows
        .iter()
        .map(|r| {
            let mut v = vec![r.level.to_string(), r.nelem.to_string(), r.ndof.to_string(), num(r.h)];
            v.extend(r.errors.iter().map(|&e| num(e)));
            v
        })
        .collect();
    let mut last = vec!["rate".to_string(), String::new(), String::new(), String::new()];
    last.extend(t.rates.iter().map(|r| match r {
        Some(Rate::Fitted(s)) => num(*s),
        Some(Rate::Exact) => "exact".into(),
        None => String::new(),
    }));
    rows.push(last);
    rows
}

pub const TWO_SIDED_COLUMNS: [&str; 7] = ["level", "nelem", "error2", "eta2", "osc2", "reliability", "efficiency"];

pub fn two_sided_rows(rows: &[TwoSidedRow]) -> Vec<Vec<String>> {
    rows.iter()
        .map(|r| {
            vec![
                r.level.to_string(),
                r.nelem.to_string(),
                num(r.error2),
                num(r.eta2),
                num(r.osc2),
                num(r.reliability),
                num(r.efficiency),
            ]
        })
        .collect()
}

/// Field snapshot columns: element id and the three edge DOF pairs in local
/// edge order (edge `i` opposite vertex `i`).
pub const FIELD_COLUMNS: [&str; 7] = ["element", "e0_x", "e0_y", "e1_x", "e1_y", "e2_x", "e2_y"];

pub fn field_rows(v: &CrField) -> Vec<Vec<String>> {
    let m = v.mesh();
    (0..m.num_elements())
        .map(|k| {
            let mut row = vec![k.to_string()];
            for p in v.local(k) {
                row.push(num(p[0]));
                row.push(num(p[1]));
            }
            row
        })
        .collect()
}

/// Solution snapshot columns: state and adjoint edge DOFs, then the control
/// at the six points of the degree-4 rule.
pub fn solution_header() -> Vec<String> {
    let mut h = vec!["element".to_string()];
    for f in ["y", "p"] {
        for i in 0..3 {
            h.push(format!("{f}_e{i}_x"));
            h.push(format!("{f}_e{i}_y"));
        }
    }
    for q in 0..TRI_DEGREE4.len() {
        h.push(format!("u_q{q}_x"));
        h.push(format!("u_q{q}_y"));
    }
    h
}

pub fn solution_rows(sol: &KktSolution) -> Vec<Vec<String>> {
    let m = sol.mesh();
    (0..m.num_elements())
        .map(|k| {
            let mut row = vec![k.to_string()];
            for f in [&sol.state, &sol.adjoint] {
                for p in f.local(k) {
                    row.push(num(p[0]));
                    row.push(num(p[1]));
                }
            }
            for (b, _) in TRI_DEGREE4.iter() {
                let u = sol.control.eval_local(k, b);
                row.push(num(u[0]));
                row.push(num(u[1]));
            }
            row
        })
        .collect()
}

fn domain_name(d: DomainTag) -> &'static str {
    match d {
        DomainTag::UnitSquare => "unit-square",
        DomainTag::LShape => "l-shape",
        DomainTag::Polygon => "polygon",
    }
}

/// Mesh text format:
///
/// ```text
/// # <comment>
/// # domain <unit-square|l-shape|polygon>
/// vertices N triangles M edges L
/// v x y                              (N lines)
/// t a b c refinement_edge generation parent   (M lines, parent -1 if none)
/// e a b boundary k0 k1               (L lines, k1 -1 on the boundary)
/// ```
pub fn write_mesh<W: Write>(mut out: W, comment: &str, mesh: &Mesh) -> io::Result<()> {
    let mut s = String::new();
    let _ = writeln!(s, "# {comment}");
    let _ = writeln!(s, "# domain {}", domain_name(mesh.domain));
    let _ = writeln!(
        s,
        "vertices {} triangles {} edges {}",
        mesh.vertices.len(),
        mesh.num_elements(),
        mesh.num_edges()
    );
    for v in &mesh.vertices {
        let _ = writeln!(s, "v {} {}", num(v[0]), num(v[1]));
    }
    for t in &mesh.triangles {
        let parent = t.parent.map(|p| p as i64).unwrap_or(-1);
        let _ = writeln!(
            s,
            "t {} {} {} {} {} {}",
            t.vertices[0], t.vertices[1], t.vertices[2], t.refinement_edge, t.generation, parent
        );
    }
    for e in &mesh.edges {
        let k1 = if e.elements[1] == cr_afem::mesh::NONE {
            -1
        } else {
            e.elements[1] as i64
        };
        let _ = writeln!(
            s,
            "e {} {} {} {} {}",
            e.vertices[0],
            e.vertices[1],
            u8::from(e.boundary),
            e.elements[0],
            k1
        );
    }
    out.write_all(s.as_bytes())
}

fn bad(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

/// Parse the format of [`write_mesh`]. Edges are rebuilt from the triangles
/// and must agree with the listed ones.
pub fn read_mesh(text: &str) -> io::Result<Mesh> {
    let mut domain = DomainTag::Polygon;
    let mut lines = Vec::new();
    for line in text.lines() {
        if let Some(c) = line.strip_prefix('#') {
            match c.trim().strip_prefix("domain ") {
                Some("unit-square") => domain = DomainTag::UnitSquare,
                Some("l-shape") => domain = DomainTag::LShape,
                Some(_) => domain = DomainTag::Polygon,
                None => {}
            }
        } else if !line.trim().is_empty() {
            lines.push(line);
        }
    }
    let mut it = lines.into_iter();
    let head: Vec<&str> = it.next().ok_or_else(|| bad("empty mesh file"))?.split_whitespace().collect();
    let count = |i: usize, name: &str| -> io::Result<usize> {
        if head.get(i) != Some(&name) {
            return Err(bad("malformed header"));
        }
        head.get(i + 1).and_then(|s| s.parse().ok()).ok_or_else(|| bad("malformed header"))
    };
    let (nv, nt, ne) = (count(0, "vertices")?, count(2, "triangles")?, count(4, "edges")?);
    let mut next = |tag: &str, n: usize| -> io::Result<Vec<Vec<String>>> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let line = it.next().ok_or_else(|| bad("truncated mesh file"))?;
            let mut f = line.split_whitespace();
            if f.next() != Some(tag) {
                return Err(bad(format!("expected `{tag}` line")));
            }
            out.push(f.map(String::from).collect());
        }
        Ok(out)
    };
    let parse = |s: &str| -> io::Result<f64> { s.parse().map_err(|_| bad(format!("bad number `{s}`"))) };
    let int = |s: &str| -> io::Result<i64> { s.parse().map_err(|_| bad(format!("bad integer `{s}`"))) };
    let mut vertices: Vec<Point> = Vec::with_capacity(nv);
    for f in next("v", nv)? {
        if f.len() != 2 {
            return Err(bad("vertex line needs 2 fields"));
        }
        vertices.push([parse(&f[0])?, parse(&f[1])?]);
    }
    let mut cells = Vec::with_capacity(nt);
    for f in next("t", nt)? {
        if f.len() != 6 {
            return Err(bad("triangle line needs 6 fields"));
        }
        let v = [int(&f[0])? as usize, int(&f[1])? as usize, int(&f[2])? as usize];
        let parent = int(&f[5])?;
        cells.push((v, int(&f[3])? as u8, int(&f[4])? as u32, (parent >= 0).then_some(parent as usize)));
    }
    let edges = next("e", ne)?;
    let mesh = Mesh::from_parts(vertices, cells, domain).map_err(|e| bad(e.to_string()))?;
    if mesh.num_edges() != ne {
        return Err(bad("edge count does not match the triangles"));
    }
    for (e, f) in mesh.edges.iter().zip(&edges) {
        if f.len() != 5 || int(&f[0])? as usize != e.vertices[0] || int(&f[1])? as usize != e.vertices[1] {
            return Err(bad("edge list does not match the triangles"));
        }
    }
    Ok(mesh)
}

pub fn write_mesh_file(path: &Path, comment: &str, mesh: &Mesh) -> io::Result<()> {
    write_mesh(io::BufWriter::new(fs::File::create(path)?), comment, mesh)
}

/// Pretty JSON with `comment` as the first member.
pub fn write_json<T: Serialize>(path: &Path, comment: &str, body: &T) -> io::Result<()> {
    let mut value = serde_json::to_value(body).map_err(io::Error::other)?;
    let mut map = serde_json::Map::new();
    map.insert("comment".into(), comment.into());
    if let serde_json::Value::Object(o) = &mut value {
        map.append(o);
    } else {
        map.insert("body".into(), value);
    }
    let mut f = io::BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut f, &serde_json::Value::Object(map)).map_err(io::Error::other)?;
    writeln!(f)?;
    f.flush()
}
