use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

use super::{ScalarField, TriangleMesh};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MeshFormat {
    Obj,
    Ply,
}

impl MeshFormat {
    pub fn extension(self) -> &'static str {
        match self {
            MeshFormat::Obj => "obj",
            MeshFormat::Ply => "ply",
        }
    }
}

impl FromStr for MeshFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "obj" => Ok(MeshFormat::Obj),
            "ply" => Ok(MeshFormat::Ply),
            other => Err(Error::InvalidParameter(format!("unknown mesh format '{other}'"))),
        }
    }
}

/// Formats `x` with 9 significant digits: fixed notation for moderate
/// magnitudes, scientific otherwise. Negative zero prints as `0`.
pub fn format_sig9(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    let sci = format!("{x:.8e}");
    let (_, exp) = sci.split_once('e').expect("scientific format has an exponent");
    let exp: i32 = exp.parse().expect("exponent is an integer");
    if (-5..9).contains(&exp) {
        format!("{x:.*}", (8 - exp) as usize)
    } else {
        sci
    }
}

fn render(mesh: &TriangleMesh, format: MeshFormat) -> String {
    let mut s = String::with_capacity(mesh.vertices.len() * 40 + mesh.triangles.len() * 20);
    match format {
        MeshFormat::Obj => {
            let _ = writeln!(
                s,
                "# neusurf mesh v1\n# vertices {} faces {}",
                mesh.vertices.len(),
                mesh.triangles.len()
            );
            for v in &mesh.vertices {
                let _ = writeln!(s, "v {} {} {}", format_sig9(v.x), format_sig9(v.y), format_sig9(v.z));
            }
            for t in &mesh.triangles {
                let _ = writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
            }
        }
        MeshFormat::Ply => {
            let _ = write!(
                s,
                "ply\nformat ascii 1.0\ncomment neusurf mesh v1\nelement vertex {}\n\
                 property double x\nproperty double y\nproperty double z\nelement face {}\n\
                 property list uchar int vertex_indices\nend_header\n",
                mesh.vertices.len(),
                mesh.triangles.len()
            );
            for v in &mesh.vertices {
                let _ = writeln!(s, "{} {} {}", format_sig9(v.x), format_sig9(v.y), format_sig9(v.z));
            }
            for t in &mesh.triangles {
                let _ = writeln!(s, "3 {} {} {}", t[0], t[1], t[2]);
            }
        }
    }
    s
}

/// Writes the mesh as ASCII OBJ or PLY. Output bytes depend only on the
/// mesh contents.
pub fn export_mesh(mesh: &TriangleMesh, path: impl AsRef<Path>, format: MeshFormat) -> Result<()> {
    fs::write(path, render(mesh, format))?;
    Ok(())
}

/// Raw field dump: a short text header, then the node values as
/// little-endian f64 in x-fastest order.
pub fn write_field(field: &ScalarField, path: impl AsRef<Path>) -> Result<()> {
    let [nx, ny, nz] = field.resolution();
    let b = field.bounds();
    let mut out = format!(
        "neusurf-field v1\ndims {nx} {ny} {nz}\nbounds {:?} {:?} {:?} {:?} {:?} {:?}\ndtype f64le\nend_header\n",
        b.min.x, b.min.y, b.min.z, b.max.x, b.max.y, b.max.z
    )
    .into_bytes();
    out.reserve(field.values().len() * 8);
    for v in field.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pointset::{load_points, Point3, PointFormat};

    #[test]
    fn sig9_formatting() {
        assert_eq!(format_sig9(0.0), "0");
        assert_eq!(format_sig9(-0.0), "0");
        assert_eq!(format_sig9(1.0), "1.00000000");
        assert_eq!(format_sig9(-0.5), "-0.500000000");
        assert_eq!(format_sig9(123.456), "123.456000");
        assert_eq!(format_sig9(1e-7), "1.00000000e-7");
        assert_eq!(format_sig9(2.5e12), "2.50000000e12");
        assert_eq!(format_sig9(1.0 / 3.0), "0.333333333");
    }

    fn single() -> TriangleMesh {
        TriangleMesh {
            vertices: vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(0.0, 1.0, 0.25),
            ],
            triangles: vec![[0, 1, 2]],
            provenance: vec![],
        }
    }

    #[test]
    fn obj_single_triangle() {
        let text = render(&single(), MeshFormat::Obj);
        assert_eq!(text.lines().filter(|l| l.starts_with("v ")).count(), 3);
        let faces: Vec<&str> = text.lines().filter(|l| l.starts_with("f ")).collect();
        assert_eq!(faces, vec!["f 1 2 3"]);
    }

    #[test]
    fn empty_mesh_files() {
        let dir = tempfile::tempdir().unwrap();
        for fmt in [MeshFormat::Obj, MeshFormat::Ply] {
            let p = dir.path().join(format!("e.{}", fmt.extension()));
            export_mesh(&TriangleMesh::default(), &p, fmt).unwrap();
            let fmt_in = if fmt == MeshFormat::Obj { PointFormat::Obj } else { PointFormat::Ply };
            assert!(load_points(&p, fmt_in).unwrap().is_empty());
        }
    }

    #[test]
    fn export_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mesh = TriangleMesh {
            vertices: (0..20)
                .map(|i| {
                    let t = i as f64 * 0.731;
                    Point3::new(t.sin() * 3.7, t.cos() * 1e-3, t * 1234.5)
                })
                .collect(),
            triangles: vec![[0, 1, 2], [3, 4, 5]],
            provenance: vec![],
        };
        for (fmt, fmt_in) in [(MeshFormat::Obj, PointFormat::Obj), (MeshFormat::Ply, PointFormat::Ply)] {
            let p = dir.path().join(format!("m.{}", fmt.extension()));
            export_mesh(&mesh, &p, fmt).unwrap();
            let first = fs::read(&p).unwrap();
            export_mesh(&mesh, &p, fmt).unwrap();
            assert_eq!(first, fs::read(&p).unwrap());
            let back = load_points(&p, fmt_in).unwrap();
            assert_eq!(back.len(), mesh.vertices.len());
            for (a, b) in back.iter().zip(&mesh.vertices) {
                for (x, y) in a.to_array().iter().zip(b.to_array()) {
                    assert!((x - y).abs() <= 1e-8 * y.abs().max(1e-300), "{x} vs {y}");
                }
            }
        }
    }

    #[test]
    fn field_dump_layout() {
        let dir = tempfile::tempdir().unwrap();
        let f = ScalarField::from_fn([2, 3, 2], crate::pointset::Aabb::cube(1.0), |p| p.x).unwrap();
        let p = dir.path().join("field.raw");
        write_field(&f, &p).unwrap();
        let bytes = fs::read(&p).unwrap();
        let marker = b"end_header\n";
        let at = bytes.windows(marker.len()).position(|w| w == marker).unwrap() + marker.len();
        assert_eq!(bytes.len() - at, 12 * 8);
        let first = f64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
        assert_eq!(first, -1.0);
    }
}
