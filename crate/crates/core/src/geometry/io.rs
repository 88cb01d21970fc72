//! ASCII XYZ and PLY point-cloud files.
//!
//! Writers emit each coordinate with 9 significant digits, so files are
//! byte-identical whenever the underlying values agree to that precision.

use std::fmt::Write as _;
use std::path::Path;

use super::{Point, PointCloud, Source};
use crate::error::{Error, Result};

/// Formats `v` like C's `%.9g`.
pub fn format_sig9(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let sci = format!("{v:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent format");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-5..9).contains(&exp) {
        let mantissa = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{mantissa}e{sign}{:02}", exp.abs());
    }
    let decimals = (8 - exp).max(0) as usize;
    trim_zeros(&format!("{v:.decimals$}")).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn parse_triple(path: &Path, line_no: usize, fields: &[&str]) -> Result<Point> {
    let mut p = [0.0; 3];
    for (k, f) in fields.iter().take(3).enumerate() {
        let v: f64 = f
            .parse()
            .map_err(|_| parse_err(path, line_no, format!("not a number: {f:?}")))?;
        if !v.is_finite() {
            return Err(parse_err(path, line_no, format!("non-finite coordinate {f:?}")));
        }
        p[k] = v;
    }
    Ok(p)
}

/// Parses XYZ text: one `x y z` triple per non-blank line; `#` starts a comment.
pub fn parse_xyz(path: &Path, text: &str) -> Result<Vec<Point>> {
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(parse_err(
                path,
                i + 1,
                format!("expected 3 coordinates, found {}", fields.len()),
            ));
        }
        points.push(parse_triple(path, i + 1, &fields)?);
    }
    if points.is_empty() {
        return Err(parse_err(path, 0, "file contains no points"));
    }
    Ok(points)
}

/// Header comments and points of an ASCII PLY file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PlyData {
    pub comments: Vec<String>,
    pub points: Vec<Point>,
}

/// Parses ASCII PLY with a single `vertex` element carrying at least
/// `x`, `y`, `z` properties (extra scalar properties are skipped).
pub fn parse_ply(path: &Path, text: &str) -> Result<PlyData> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(parse_err(path, 1, "missing 'ply' magic line")),
    }
    let mut comments = Vec::new();
    let mut count = None;
    let mut props: Vec<String> = Vec::new();
    let mut in_vertex = false;
    let mut header_end = None;
    for (i, line) in lines.by_ref() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields.as_slice() {
            ["format", "ascii", _] => {}
            ["format", other, ..] => {
                return Err(parse_err(path, i + 1, format!("unsupported PLY format {other}")))
            }
            ["comment", ..] => comments.push(line.trim()["comment".len()..].trim().to_string()),
            ["element", "vertex", n] => {
                count = Some(
                    n.parse::<usize>()
                        .map_err(|_| parse_err(path, i + 1, "bad vertex count"))?,
                );
                in_vertex = true;
            }
            ["element", name, n] => {
                if *n != "0" {
                    return Err(parse_err(
                        path,
                        i + 1,
                        format!("unsupported element {name:?}; only vertices are read"),
                    ));
                }
                in_vertex = false;
            }
            ["property", "list", ..] if in_vertex => {
                return Err(parse_err(path, i + 1, "list properties are not supported"))
            }
            ["property", _, name] => {
                if in_vertex {
                    props.push(name.to_string());
                }
            }
            ["end_header"] => {
                header_end = Some(i);
                break;
            }
            [] => {}
            _ => return Err(parse_err(path, i + 1, format!("unrecognized header line {line:?}"))),
        }
    }
    if header_end.is_none() {
        return Err(parse_err(path, 0, "missing end_header"));
    }
    let count = count.ok_or_else(|| parse_err(path, 0, "no vertex element"))?;
    let col = |name: &str| {
        props
            .iter()
            .position(|p| p == name)
            .ok_or_else(|| parse_err(path, 0, format!("vertex property {name} missing")))
    };
    let (cx, cy, cz) = (col("x")?, col("y")?, col("z")?);
    let mut points = Vec::with_capacity(count);
    for (i, line) in lines {
        if points.len() == count {
            if line.trim().is_empty() {
                continue;
            }
            return Err(parse_err(path, i + 1, "data beyond the declared vertex count"));
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != props.len() {
            return Err(parse_err(
                path,
                i + 1,
                format!("expected {} values, found {}", props.len(), fields.len()),
            ));
        }
        points.push(parse_triple(path, i + 1, &[fields[cx], fields[cy], fields[cz]])?);
    }
    if points.len() != count || count == 0 {
        return Err(parse_err(
            path,
            0,
            format!("header declares {count} vertices, file holds {}", points.len()),
        ));
    }
    Ok(PlyData { comments, points })
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Reads a cloud, choosing the parser by the `.ply` extension or, failing
/// that, by the `ply` magic line.
pub fn read_cloud(path: &Path, source: Source) -> Result<PointCloud> {
    let text = read_text(path)?;
    let is_ply = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("ply"))
        || text.starts_with("ply");
    let points = if is_ply {
        parse_ply(path, &text)?.points
    } else {
        parse_xyz(path, &text)?
    };
    PointCloud::new(points, source)
}

pub fn read_ply(path: &Path) -> Result<PlyData> {
    parse_ply(path, &read_text(path)?)
}

pub fn ply_string(cloud: &PointCloud, comments: &[String]) -> String {
    let mut s = String::new();
    s.push_str("ply\nformat ascii 1.0\n");
    for c in comments {
        let _ = writeln!(s, "comment {c}");
    }
    let _ = writeln!(s, "element vertex {}", cloud.len());
    s.push_str("property double x\nproperty double y\nproperty double z\nend_header\n");
    push_points(&mut s, cloud.points());
    s
}

pub fn xyz_string(cloud: &PointCloud) -> String {
    let mut s = String::new();
    push_points(&mut s, cloud.points());
    s
}

fn push_points(s: &mut String, points: &[Point]) {
    for p in points {
        let _ = writeln!(
            s,
            "{} {} {}",
            format_sig9(p[0]),
            format_sig9(p[1]),
            format_sig9(p[2])
        );
    }
}

/// Writes a PLY file with `comment` header lines for the cloud's source and
/// label followed by `extra` comments (e.g. `config_hash <hex>`).
pub fn write_ply(path: &Path, cloud: &PointCloud, extra: &[String]) -> Result<()> {
    let mut comments = vec![format!("source {}", cloud.source())];
    if let Some(l) = cloud.label() {
        comments.push(format!("label {l}"));
    }
    comments.extend_from_slice(extra);
    std::fs::write(path, ply_string(cloud, &comments)).map_err(|e| Error::io(path, e))
}

pub fn write_xyz(path: &Path, cloud: &PointCloud) -> Result<()> {
    std::fs::write(path, xyz_string(cloud)).map_err(|e| Error::io(path, e))
}
