//! ASCII PLY reading and writing.
//!
//! Only `format ascii 1.0` is accepted. Vertices need `x`, `y`, `z` scalar
//! properties (any numeric type; other vertex properties are skipped). Faces
//! need a list property named `vertex_indices` or `vertex_index` and must be
//! triangles. A `comment lobe <label>` header line, as written by
//! [`save_ply`], sets the lobe label; otherwise it defaults to upper.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::Point3;

use super::{LobeLabel, Mesh};
use crate::error::{Error, Result};

#[derive(Debug)]
enum Property {
    Scalar(String),
    List(String),
}

#[derive(Debug)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

/// Reads an ASCII PLY triangle mesh, preserving vertex and face order.
pub fn load_ply(path: impl AsRef<Path>) -> Result<Mesh> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_ply(&text, path)
}

pub(crate) fn parse_ply(text: &str, path: &Path) -> Result<Mesh> {
    let fmt_err = |line: usize, message: String| Error::Format {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, "ply")) => {}
        _ => return Err(fmt_err(1, "missing `ply` magic".into())),
    }

    let mut elements: Vec<Element> = Vec::new();
    let mut lobe = LobeLabel::Upper;
    let mut saw_format = false;
    loop {
        let (ln, line) = lines
            .next()
            .ok_or_else(|| fmt_err(0, "unexpected end of header".into()))?;
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("format") => {
                let kind = tok.next().unwrap_or("");
                if kind != "ascii" {
                    return Err(fmt_err(
                        ln,
                        format!("unsupported PLY format `{kind}` (ASCII only)"),
                    ));
                }
                saw_format = true;
            }
            Some("comment") => {
                if tok.next() == Some("lobe") {
                    if let Some(label) = tok.next() {
                        lobe = label
                            .parse()
                            .map_err(|_| fmt_err(ln, format!("bad lobe `{label}`")))?;
                    }
                }
            }
            Some("obj_info") | None => {}
            Some("element") => {
                let name = tok
                    .next()
                    .ok_or_else(|| fmt_err(ln, "element without name".into()))?;
                let count = tok
                    .next()
                    .and_then(|c| c.parse::<usize>().ok())
                    .ok_or_else(|| fmt_err(ln, "element count is not an integer".into()))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| fmt_err(ln, "property before any element".into()))?;
                let words: Vec<&str> = tok.collect();
                let prop = match words.as_slice() {
                    ["list", _, _, name] => Property::List(name.to_string()),
                    [_, name] => Property::Scalar(name.to_string()),
                    _ => return Err(fmt_err(ln, format!("malformed property line `{line}`"))),
                };
                el.properties.push(prop);
            }
            Some("end_header") => break,
            Some(other) => return Err(fmt_err(ln, format!("unknown header keyword `{other}`"))),
        }
    }
    if !saw_format {
        return Err(fmt_err(0, "missing format line".into()));
    }

    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    let mut seen_vertex = false;
    for el in &elements {
        match el.name.as_str() {
            "vertex" => {
                seen_vertex = true;
                let pos = |name: &str| {
                    el.properties
                        .iter()
                        .position(|p| matches!(p, Property::Scalar(n) if n == name))
                };
                let (ix, iy, iz) = match (pos("x"), pos("y"), pos("z")) {
                    (Some(x), Some(y), Some(z)) => (x, y, z),
                    _ => return Err(fmt_err(0, "vertex element lacks x/y/z properties".into())),
                };
                if el.properties.iter().any(|p| matches!(p, Property::List(_))) {
                    return Err(fmt_err(
                        0,
                        "list properties on vertices are not supported".into(),
                    ));
                }
                vertices.reserve(el.count);
                for _ in 0..el.count {
                    let (ln, line) = lines
                        .next()
                        .ok_or_else(|| fmt_err(0, "unexpected end of vertex data".into()))?;
                    let vals: Vec<&str> = line.split_whitespace().collect();
                    if vals.len() < el.properties.len() {
                        return Err(fmt_err(
                            ln,
                            format!(
                                "expected {} values, found {}",
                                el.properties.len(),
                                vals.len()
                            ),
                        ));
                    }
                    let num = |i: usize| {
                        vals[i]
                            .parse::<f64>()
                            .map_err(|_| fmt_err(ln, format!("`{}` is not a number", vals[i])))
                    };
                    vertices.push(Point3::new(num(ix)?, num(iy)?, num(iz)?));
                }
            }
            "face" => {
                let list_at = el
                    .properties
                    .iter()
                    .position(|p| {
                        matches!(p, Property::List(n) if n == "vertex_indices" || n == "vertex_index")
                    })
                    .ok_or_else(|| fmt_err(0, "face element lacks vertex_indices".into()))?;
                triangles.reserve(el.count);
                for _ in 0..el.count {
                    let (ln, line) = lines
                        .next()
                        .ok_or_else(|| fmt_err(0, "unexpected end of face data".into()))?;
                    let vals: Vec<&str> = line.split_whitespace().collect();
                    let mut cursor = 0;
                    let mut tri = None;
                    for (pi, prop) in el.properties.iter().enumerate() {
                        let count_tok = vals
                            .get(cursor)
                            .ok_or_else(|| fmt_err(ln, "truncated face record".into()))?;
                        match prop {
                            Property::Scalar(_) => cursor += 1,
                            Property::List(_) => {
                                let count: usize = count_tok.parse().map_err(|_| {
                                    fmt_err(ln, format!("bad list count `{count_tok}`"))
                                })?;
                                let items = vals
                                    .get(cursor + 1..cursor + 1 + count)
                                    .ok_or_else(|| fmt_err(ln, "truncated face record".into()))?;
                                if pi == list_at {
                                    if count != 3 {
                                        return Err(Error::UnsupportedFace {
                                            path: path.to_path_buf(),
                                            line: ln,
                                            count,
                                        });
                                    }
                                    let mut t = [0usize; 3];
                                    for (k, s) in items.iter().enumerate() {
                                        t[k] = s.parse().map_err(|_| {
                                            fmt_err(ln, format!("bad vertex index `{s}`"))
                                        })?;
                                    }
                                    tri = Some(t);
                                }
                                cursor += 1 + count;
                            }
                        }
                    }
                    triangles.push(tri.expect("face list property located above"));
                }
            }
            _ => {
                for _ in 0..el.count {
                    lines.next().ok_or_else(|| {
                        fmt_err(0, format!("unexpected end of `{}` data", el.name))
                    })?;
                }
            }
        }
    }
    if !seen_vertex {
        return Err(fmt_err(0, "no vertex element".into()));
    }
    Mesh::new(vertices, triangles, lobe)
}

/// White-to-blue colormap: 0 maps to (255,255,255), 1 to (0,0,255).
pub fn scalar_to_rgb(s: f64) -> [u8; 3] {
    let s = if s.is_finite() {
        s.clamp(0.0, 1.0)
    } else {
        1.0
    };
    let rg = (255.0 * (1.0 - s)).round() as u8;
    [rg, rg, 255]
}

pub(crate) fn format_ply(mesh: &Mesh, vertex_scalars: Option<&[f64]>) -> Result<String> {
    if let Some(s) = vertex_scalars {
        if s.len() != mesh.vertex_count() {
            return Err(Error::arg(format!(
                "{} vertex scalars for {} vertices",
                s.len(),
                mesh.vertex_count()
            )));
        }
    }
    let mut out = String::with_capacity(64 * mesh.vertex_count());
    out.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(out, "comment lobe {}", mesh.lobe());
    let _ = writeln!(out, "element vertex {}", mesh.vertex_count());
    out.push_str("property double x\nproperty double y\nproperty double z\n");
    if vertex_scalars.is_some() {
        out.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    let _ = writeln!(out, "element face {}", mesh.triangles().len());
    out.push_str("property list uchar int vertex_indices\nend_header\n");
    for (i, p) in mesh.vertices().iter().enumerate() {
        // `{:?}` on f64 prints the shortest representation that parses back exactly.
        let _ = write!(out, "{:?} {:?} {:?}", p.x, p.y, p.z);
        if let Some(s) = vertex_scalars {
            let [r, g, b] = scalar_to_rgb(s[i]);
            let _ = write!(out, " {r} {g} {b}");
        }
        out.push('\n');
    }
    for t in mesh.triangles() {
        let _ = writeln!(out, "3 {} {} {}", t[0], t[1], t[2]);
    }
    Ok(out)
}

/// Writes an ASCII PLY. With `vertex_scalars` (one value in `[0,1]` per
/// vertex), vertices carry a white-to-blue color.
pub fn save_ply(mesh: &Mesh, path: impl AsRef<Path>, vertex_scalars: Option<&[f64]>) -> Result<()> {
    let path = path.as_ref();
    let text = format_ply(mesh, vertex_scalars)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::fixtures::*;
    use nalgebra::Vector3;

    const TETRA: &str = "ply
format ascii 1.0
comment hand written
element vertex 4
property float x
property float y
property float z
element face 4
property list uchar int vertex_indices
end_header
0 0 0
1 0 0
0 1 0
0 0 1
3 0 2 1
3 0 1 3
3 0 3 2
3 1 2 3
";

    #[test]
    fn parses_tetrahedron() {
        let m = parse_ply(TETRA, Path::new("t.ply")).unwrap();
        assert_eq!(m.vertex_count(), 4);
        assert_eq!(m.triangles().len(), 4);
        assert_eq!(m.vertex(3), Point3::new(0.0, 0.0, 1.0));
        assert_eq!(m.triangles()[1], [0, 1, 3]);
    }

    #[test]
    fn quad_face_is_unsupported() {
        let text = TETRA
            .replace("element face 4", "element face 1")
            .replace("3 0 2 1\n3 0 1 3\n3 0 3 2\n3 1 2 3\n", "4 0 1 2 3\n");
        match parse_ply(&text, Path::new("q.ply")) {
            Err(Error::UnsupportedFace { line, count, .. }) => {
                assert_eq!(count, 4);
                assert_eq!(line, 15);
            }
            other => panic!("expected unsupported face, got {other:?}"),
        }
    }

    #[test]
    fn bad_number_reports_line() {
        let text = TETRA.replace("1 0 0\n", "1 zero 0\n");
        match parse_ply(&text, Path::new("b.ply")) {
            Err(Error::Format { line, .. }) => assert_eq!(line, 12),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn binary_is_rejected() {
        let text = TETRA.replace("format ascii 1.0", "format binary_little_endian 1.0");
        assert!(matches!(
            parse_ply(&text, Path::new("b.ply")),
            Err(Error::Format { line: 2, .. })
        ));
    }

    #[test]
    fn extra_properties_are_skipped() {
        let text = "ply\nformat ascii 1.0\nelement vertex 3\nproperty float nx\nproperty float x\n\
                    property float y\nproperty float z\nelement face 1\nproperty uchar flags\n\
                    property list uchar int vertex_index\nelement edge 1\nproperty int a\nend_header\n\
                    9 0 0 0\n9 1 0 0\n9 0 1 0\n7 3 0 1 2\n5\n";
        let m = parse_ply(text, Path::new("e.ply")).unwrap();
        assert_eq!(m.vertex(1), Point3::new(1.0, 0.0, 0.0));
        assert_eq!(m.triangles(), &[[0, 1, 2]]);
    }

    #[test]
    fn colors_map_white_to_blue() {
        assert_eq!(scalar_to_rgb(0.0), [255, 255, 255]);
        assert_eq!(scalar_to_rgb(1.0), [0, 0, 255]);
        let cube = unit_cube(Vector3::zeros());
        let plain = format_ply(&cube, None).unwrap();
        assert!(!plain.contains("red"));
        let zeros = vec![0.0; 8];
        let text = format_ply(&cube, Some(&zeros)).unwrap();
        assert!(text.contains("property uchar red"));
        let body: Vec<&str> = text
            .split("end_header\n")
            .nth(1)
            .unwrap()
            .lines()
            .take(8)
            .collect();
        assert!(body.iter().all(|l| l.ends_with(" 255 255 255")));
        assert!(format_ply(&cube, Some(&[0.5; 3])).is_err());
    }

    #[test]
    fn round_trip_is_exact() {
        let sphere =
            icosphere(12.345, 2).map_vertices(|p| Point3::new(p.x * 1.1, p.y / 3.0, p.z + 0.1));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.ply");
        save_ply(&sphere, &path, None).unwrap();
        let back = load_ply(&path).unwrap();
        assert_eq!(back, sphere);
        let lower = sphere.clone().with_lobe(LobeLabel::Lower);
        save_ply(&lower, &path, Some(&vec![0.3; lower.vertex_count()])).unwrap();
        assert_eq!(load_ply(&path).unwrap(), lower);
    }
}
