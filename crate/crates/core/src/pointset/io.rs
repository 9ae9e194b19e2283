use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

use super::{Category, LabeledPoint, Point3, PointSet};

const LABELED_HEADER: &str = "# neusurf-dataset v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PointFormat {
    Xyz,
    Obj,
    Ply,
}

impl PointFormat {
    /// Guesses the format from a file extension.
    pub fn from_path(path: &Path) -> Option<PointFormat> {
        let ext = path.extension()?.to_str()?.to_ascii_lowercase();
        ext.parse().ok()
    }
}

impl FromStr for PointFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "xyz" | "txt" => Ok(PointFormat::Xyz),
            "obj" => Ok(PointFormat::Obj),
            "ply" => Ok(PointFormat::Ply),
            other => Err(Error::InvalidParameter(format!("unknown point format '{other}'"))),
        }
    }
}

/// Vertices read from a file, with per-vertex normals when the file has them.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    pub normals: Option<Vec<Point3>>,
}

pub fn load_points(path: impl AsRef<Path>, format: PointFormat) -> Result<Vec<Point3>> {
    Ok(load_cloud(path, format)?.points)
}

pub fn load_cloud(path: impl AsRef<Path>, format: PointFormat) -> Result<PointCloud> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::FileNotFound(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    match format {
        PointFormat::Xyz => parse_xyz(text(&bytes)?),
        PointFormat::Obj => parse_obj(text(&bytes)?),
        PointFormat::Ply => parse_ply(&bytes),
    }
}

fn text(bytes: &[u8]) -> Result<&str> {
    std::str::from_utf8(bytes)
        .map_err(|e| Error::Parse { line: 0, reason: format!("not valid UTF-8: {e}") })
}

fn parse_f64(tok: &str, line: usize) -> Result<f64> {
    let v: f64 = tok
        .parse()
        .map_err(|_| Error::Parse { line, reason: format!("'{tok}' is not a number") })?;
    if !v.is_finite() {
        return Err(Error::Parse { line, reason: format!("non-finite coordinate '{tok}'") });
    }
    Ok(v)
}

fn parse_triple<'a>(mut toks: impl Iterator<Item = &'a str>, line: usize) -> Result<Point3> {
    let mut c = [0.0; 3];
    for slot in &mut c {
        let tok = toks
            .next()
            .ok_or_else(|| Error::Parse { line, reason: "expected 3 coordinates".into() })?;
        *slot = parse_f64(tok, line)?;
    }
    Ok(Point3::from_array(c))
}

fn strip_comment(line: &str) -> &str {
    line.split('#').next().unwrap_or("").trim()
}

fn parse_xyz(src: &str) -> Result<PointCloud> {
    let mut points = Vec::new();
    for (i, raw) in src.lines().enumerate() {
        let line = strip_comment(raw);
        if line.is_empty() {
            continue;
        }
        points.push(parse_triple(line.split_whitespace(), i + 1)?);
    }
    Ok(PointCloud { points, normals: None })
}

fn parse_obj(src: &str) -> Result<PointCloud> {
    let mut points = Vec::new();
    let mut normals = Vec::new();
    for (i, raw) in src.lines().enumerate() {
        let line = strip_comment(raw);
        let mut toks = line.split_whitespace();
        match toks.next() {
            Some("v") => points.push(parse_triple(toks, i + 1)?),
            Some("vn") => normals.push(parse_triple(toks, i + 1)?),
            _ => {}
        }
    }
    // Normals only pair with vertices when there is one per vertex.
    let normals = (!normals.is_empty() && normals.len() == points.len()).then_some(normals);
    Ok(PointCloud { points, normals })
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str, line: usize) -> Result<Scalar> {
        Ok(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            other => {
                return Err(Error::Parse { line, reason: format!("unknown PLY type '{other}'") })
            }
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => f64::from(b[0] as i8),
            Scalar::U8 => f64::from(b[0]),
            Scalar::I16 => f64::from(i16::from_le_bytes([b[0], b[1]])),
            Scalar::U16 => f64::from(u16::from_le_bytes([b[0], b[1]])),
            Scalar::I32 => f64::from(i32::from_le_bytes([b[0], b[1], b[2], b[3]])),
            Scalar::U32 => f64::from(u32::from_le_bytes([b[0], b[1], b[2], b[3]])),
            Scalar::F32 => f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])),
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { count: Scalar, item: Scalar },
}

#[derive(Debug)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Encoding {
    Ascii,
    BinaryLe,
}

fn parse_ply(bytes: &[u8]) -> Result<PointCloud> {
    // Header is ASCII and ends at the "end_header" line.
    let mut pos = 0;
    let mut line_no = 0;
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let end = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or(Error::Parse { line: line_no + 1, reason: "unterminated PLY header".into() })?;
        let line = std::str::from_utf8(&bytes[pos..pos + end])
            .map_err(|_| Error::Parse { line: line_no + 1, reason: "non-ASCII header".into() })?
            .trim();
        pos += end + 1;
        line_no += 1;
        let toks: Vec<&str> = line.split_whitespace().collect();
        let bad = |reason: &str| Error::Parse { line: line_no, reason: reason.to_string() };
        match toks.as_slice() {
            ["ply"] if line_no == 1 => {}
            _ if line_no == 1 => return Err(bad("missing 'ply' magic")),
            ["format", "ascii", _] => encoding = Some(Encoding::Ascii),
            ["format", "binary_little_endian", _] => encoding = Some(Encoding::BinaryLe),
            ["format", other, _] => return Err(bad(&format!("unsupported PLY format '{other}'"))),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| bad("bad element count"))?,
                props: Vec::new(),
            }),
            ["property", "list", count, item, _name] => {
                let el = elements.last_mut().ok_or_else(|| bad("property before element"))?;
                el.props.push(Property::List {
                    count: Scalar::parse(count, line_no)?,
                    item: Scalar::parse(item, line_no)?,
                });
            }
            ["property", ty, name] => {
                let el = elements.last_mut().ok_or_else(|| bad("property before element"))?;
                el.props.push(Property::Scalar {
                    name: name.to_string(),
                    ty: Scalar::parse(ty, line_no)?,
                });
            }
            ["end_header"] => break,
            _ => return Err(bad(&format!("unrecognized header line '{line}'"))),
        }
    }
    let encoding =
        encoding.ok_or(Error::Parse { line: line_no, reason: "missing format line".into() })?;

    let mut ascii_lines = if encoding == Encoding::Ascii {
        Some(text(&bytes[pos..])?.lines().enumerate().map(move |(i, l)| (i + line_no + 1, l)))
    } else {
        None
    };

    for el in &elements {
        let is_vertex = el.name == "vertex";
        let index_of = |want: &str| {
            el.props.iter().position(|p| matches!(p, Property::Scalar { name, .. } if name == want))
        };
        let xyz = if is_vertex {
            let idx = ["x", "y", "z"].map(index_of);
            match idx {
                [Some(a), Some(b), Some(c)] => Some([a, b, c]),
                _ => {
                    return Err(Error::Parse {
                        line: line_no,
                        reason: "vertex element lacks x/y/z properties".into(),
                    })
                }
            }
        } else {
            None
        };
        let nxyz = match ["nx", "ny", "nz"].map(index_of) {
            [Some(a), Some(b), Some(c)] if is_vertex => Some([a, b, c]),
            _ => None,
        };

        let mut points = Vec::with_capacity(if is_vertex { el.count } else { 0 });
        let mut normals = Vec::new();
        let mut values = vec![0.0; el.props.len()];
        for _ in 0..el.count {
            match ascii_lines.as_mut() {
                Some(lines) => {
                    let (ln, l) = loop {
                        let (ln, l) = lines.next().ok_or(Error::Parse {
                            line: line_no,
                            reason: format!("truncated '{}' element", el.name),
                        })?;
                        if !l.trim().is_empty() {
                            break (ln, l);
                        }
                    };
                    let mut toks = l.split_whitespace();
                    for (slot, prop) in values.iter_mut().zip(&el.props) {
                        let mut next = || {
                            toks.next().ok_or(Error::Parse {
                                line: ln,
                                reason: "too few values".into(),
                            })
                        };
                        match prop {
                            Property::Scalar { .. } => *slot = parse_f64(next()?, ln)?,
                            Property::List { .. } => {
                                let n: usize = next()?.parse().map_err(|_| Error::Parse {
                                    line: ln,
                                    reason: "bad list count".into(),
                                })?;
                                for _ in 0..n {
                                    next()?;
                                }
                            }
                        }
                    }
                }
                None => {
                    for (slot, prop) in values.iter_mut().zip(&el.props) {
                        let mut take = |ty: Scalar| -> Result<f64> {
                            let sz = ty.size();
                            let chunk = bytes.get(pos..pos + sz).ok_or(Error::Parse {
                                line: line_no,
                                reason: format!("binary '{}' element truncated", el.name),
                            })?;
                            pos += sz;
                            Ok(ty.read_le(chunk))
                        };
                        match *prop {
                            Property::Scalar { ty, .. } => *slot = take(ty)?,
                            Property::List { count, item } => {
                                let n = take(count)? as usize;
                                for _ in 0..n {
                                    take(item)?;
                                }
                            }
                        }
                    }
                }
            }
            if let Some([a, b, c]) = xyz {
                let p = Point3::new(values[a], values[b], values[c]);
                if !p.is_finite() {
                    return Err(Error::Parse { line: line_no, reason: "non-finite vertex".into() });
                }
                points.push(p);
            }
            if let Some([a, b, c]) = nxyz {
                normals.push(Point3::new(values[a], values[b], values[c]));
            }
        }
        if is_vertex {
            let normals = nxyz.map(|_| normals);
            return Ok(PointCloud { points, normals });
        }
    }
    Err(Error::Parse { line: line_no, reason: "no vertex element".into() })
}

/// Writes a labeled dataset: one `x y z label` row per point.
pub fn write_labeled(path: impl AsRef<Path>, ps: &PointSet) -> Result<()> {
    let mut out = String::with_capacity(ps.len() * 64);
    out.push_str(LABELED_HEADER);
    out.push('\n');
    out.push_str(&format!(
        "# n_s={} n_i={} n_e={}\n",
        ps.n_surface(),
        ps.n_interior(),
        ps.n_exterior()
    ));
    for p in ps.points() {
        let q = p.position;
        // `{:?}` prints the shortest string that round-trips exactly.
        out.push_str(&format!("{:?} {:?} {:?} {}\n", q.x, q.y, q.z, p.label()));
    }
    let mut f = fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

pub fn read_labeled(path: impl AsRef<Path>) -> Result<PointSet> {
    let path = path.as_ref();
    let src = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::FileNotFound(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    let mut points = Vec::new();
    for (i, raw) in src.lines().enumerate() {
        let line = strip_comment(raw);
        if line.is_empty() {
            continue;
        }
        let mut toks = line.split_whitespace();
        let position = parse_triple(&mut toks, i + 1)?;
        let label_tok =
            toks.next().ok_or(Error::Parse { line: i + 1, reason: "missing label column".into() })?;
        let category = label_tok
            .parse::<i64>()
            .ok()
            .and_then(Category::from_label)
            .ok_or_else(|| Error::Parse {
                line: i + 1,
                reason: format!("label '{label_tok}' not in {{-1, 0, 1}}"),
            })?;
        points.push(LabeledPoint { position, category });
    }
    if !points.iter().any(|p| p.category == Category::Surface) {
        return Err(Error::EmptySurface);
    }
    Ok(PointSet::from_points(points))
}
