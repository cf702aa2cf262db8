//! PLY storage for point clouds and scene meshes.
//!
//! Both ascii and binary little-endian variants are supported, always with
//! `double` vertex properties. Frame tags, point labels, and timestamps ride
//! in header comments so a file round-trips the full typed value:
//!
//! ```text
//! comment frame LIDAR
//! comment label HUMAN
//! comment timestamp 0.05
//! ```

use super::io_err;
use crate::cloud::{PointCloudFrame, PointLabel};
use crate::frame::CoordinateFrame;
use crate::mesh::SceneMesh;
use nalgebra::Vector3;
use std::path::Path;
use std::str::FromStr;

fn parse_err(path: &Path, location: impl Into<String>, message: impl Into<String>) -> crate::Error {
    crate::Error::Parse {
        path: path.display().to_string(),
        location: location.into(),
        message: message.into(),
    }
}

/// Floats print in Rust's shortest round-trip form, which keeps files
/// byte-deterministic and loss-free.
fn push_f64(out: &mut String, v: f64) {
    use std::fmt::Write;
    write!(out, "{v}").expect("writing to a string cannot fail");
}

pub fn save_cloud_ply(path: &Path, cloud: &PointCloudFrame, binary: bool) -> crate::Result<()> {
    let mut header = String::new();
    header.push_str("ply\n");
    header.push_str(if binary {
        "format binary_little_endian 1.0\n"
    } else {
        "format ascii 1.0\n"
    });
    header.push_str(&format!("comment frame {}\n", cloud.frame));
    header.push_str(&format!("comment label {}\n", cloud.label));
    let mut ts = String::from("comment timestamp ");
    push_f64(&mut ts, cloud.timestamp);
    ts.push('\n');
    header.push_str(&ts);
    header.push_str(&format!("element vertex {}\n", cloud.points.len()));
    header.push_str("property double x\nproperty double y\nproperty double z\n");
    header.push_str("end_header\n");

    let mut bytes = header.into_bytes();
    if binary {
        for p in &cloud.points {
            for c in 0..3 {
                bytes.extend_from_slice(&p[c].to_le_bytes());
            }
        }
    } else {
        let mut body = String::new();
        for p in &cloud.points {
            push_f64(&mut body, p.x);
            body.push(' ');
            push_f64(&mut body, p.y);
            body.push(' ');
            push_f64(&mut body, p.z);
            body.push('\n');
        }
        bytes.extend_from_slice(body.as_bytes());
    }
    std::fs::write(path, bytes).map_err(|e| io_err(path, e))
}

pub fn save_mesh_ply(path: &Path, mesh: &SceneMesh, binary: bool) -> crate::Result<()> {
    let mut header = String::new();
    header.push_str("ply\n");
    header.push_str(if binary {
        "format binary_little_endian 1.0\n"
    } else {
        "format ascii 1.0\n"
    });
    header.push_str(&format!("comment frame {}\n", mesh.frame));
    header.push_str(&format!("element vertex {}\n", mesh.vertices.len()));
    header.push_str(
        "property double x\nproperty double y\nproperty double z\n\
         property double nx\nproperty double ny\nproperty double nz\n",
    );
    header.push_str(&format!("element face {}\n", mesh.faces.len()));
    header.push_str("property list uchar uint vertex_indices\n");
    header.push_str("end_header\n");

    let mut bytes = header.into_bytes();
    if binary {
        for (v, n) in mesh.vertices.iter().zip(&mesh.normals) {
            for c in 0..3 {
                bytes.extend_from_slice(&v[c].to_le_bytes());
            }
            for c in 0..3 {
                bytes.extend_from_slice(&n[c].to_le_bytes());
            }
        }
        for f in &mesh.faces {
            bytes.push(3u8);
            for &i in f {
                bytes.extend_from_slice(&(i as u32).to_le_bytes());
            }
        }
    } else {
        let mut body = String::new();
        for (v, n) in mesh.vertices.iter().zip(&mesh.normals) {
            for (i, c) in v.iter().chain(n.iter()).enumerate() {
                if i > 0 {
                    body.push(' ');
                }
                push_f64(&mut body, *c);
            }
            body.push('\n');
        }
        for f in &mesh.faces {
            body.push_str(&format!("3 {} {} {}\n", f[0], f[1], f[2]));
        }
        bytes.extend_from_slice(body.as_bytes());
    }
    std::fs::write(path, bytes).map_err(|e| io_err(path, e))
}

struct Header {
    binary: bool,
    /// (element name, count) in declaration order.
    elements: Vec<(String, usize)>,
    /// Property names per element, in order; list properties store "list".
    properties: Vec<Vec<String>>,
    frame: Option<CoordinateFrame>,
    label: Option<PointLabel>,
    timestamp: Option<f64>,
    /// Number of header lines, for error locations.
    lines: usize,
    /// Byte offset of the first body byte.
    body_start: usize,
}

fn parse_header(path: &Path, bytes: &[u8]) -> crate::Result<Header> {
    let end_marker = b"end_header\n";
    let body_start = bytes
        .windows(end_marker.len())
        .position(|w| w == end_marker)
        .map(|p| p + end_marker.len())
        .ok_or_else(|| parse_err(path, "header", "missing end_header line"))?;
    let text = std::str::from_utf8(&bytes[..body_start])
        .map_err(|e| parse_err(path, "header", format!("header is not utf-8: {e}")))?;

    let mut header = Header {
        binary: false,
        elements: Vec::new(),
        properties: Vec::new(),
        frame: None,
        label: None,
        timestamp: None,
        lines: 0,
        body_start,
    };
    let mut saw_format = false;
    for (lineno, line) in text.lines().enumerate() {
        header.lines = lineno + 1;
        let loc = || format!("line {}", lineno + 1);
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match (lineno, tokens.as_slice()) {
            (0, ["ply"]) => {}
            (0, _) => return Err(parse_err(path, loc(), "first line must be exactly 'ply'")),
            (_, ["format", kind, "1.0"]) => {
                header.binary = match *kind {
                    "ascii" => false,
                    "binary_little_endian" => true,
                    other => {
                        return Err(parse_err(path, loc(), format!("unsupported format {other}")))
                    }
                };
                saw_format = true;
            }
            (_, ["comment", "frame", f]) => {
                header.frame = Some(
                    CoordinateFrame::from_str(f).map_err(|e| parse_err(path, loc(), e.to_string()))?,
                );
            }
            (_, ["comment", "label", l]) => {
                header.label =
                    Some(PointLabel::from_str(l).map_err(|e| parse_err(path, loc(), e.to_string()))?);
            }
            (_, ["comment", "timestamp", t]) => {
                header.timestamp = Some(
                    f64::from_str(t)
                        .map_err(|e| parse_err(path, loc(), format!("bad timestamp: {e}")))?,
                );
            }
            (_, ["comment", ..]) => {}
            (_, ["element", name, count]) => {
                let count: usize = count
                    .parse()
                    .map_err(|e| parse_err(path, loc(), format!("bad element count: {e}")))?;
                header.elements.push((name.to_string(), count));
                header.properties.push(Vec::new());
            }
            (_, ["property", "list", "uchar", "uint", name]) => {
                match header.properties.last_mut() {
                    Some(props) => props.push(format!("list:{name}")),
                    None => return Err(parse_err(path, loc(), "property before any element")),
                }
            }
            (_, ["property", ty, name]) => {
                if *ty != "double" {
                    return Err(parse_err(
                        path,
                        loc(),
                        format!("property {name} must be double, found {ty}"),
                    ));
                }
                match header.properties.last_mut() {
                    Some(props) => props.push(name.to_string()),
                    None => return Err(parse_err(path, loc(), "property before any element")),
                }
            }
            (_, ["end_header"]) => break,
            (_, _) => return Err(parse_err(path, loc(), format!("unrecognized line: {line}"))),
        }
    }
    if !saw_format {
        return Err(parse_err(path, "header", "missing format line"));
    }
    Ok(header)
}

fn expect_properties(
    path: &Path,
    header: &Header,
    element: usize,
    expected: &[&str],
) -> crate::Result<()> {
    let found = &header.properties[element];
    if found.len() != expected.len() || found.iter().zip(expected).any(|(a, b)| a != b) {
        return Err(parse_err(
            path,
            format!("element {}", header.elements[element].0),
            format!("expected properties {:?}, found {:?}", expected, found),
        ));
    }
    Ok(())
}

/// Reads `count` rows of `width` doubles each, ascii or binary.
fn read_rows(
    path: &Path,
    header: &Header,
    bytes: &[u8],
    cursor: &mut usize,
    ascii_line: &mut usize,
    count: usize,
    width: usize,
) -> crate::Result<Vec<Vec<f64>>> {
    let mut rows = Vec::with_capacity(count);
    if header.binary {
        for _ in 0..count {
            let need = width * 8;
            if *cursor + need > bytes.len() {
                return Err(parse_err(
                    path,
                    format!("byte offset {}", *cursor),
                    format!("truncated body: needed {need} more bytes"),
                ));
            }
            let mut row = Vec::with_capacity(width);
            for k in 0..width {
                let start = *cursor + k * 8;
                let raw: [u8; 8] = bytes[start..start + 8].try_into().expect("exact slice");
                row.push(f64::from_le_bytes(raw));
            }
            *cursor += need;
            rows.push(row);
        }
    } else {
        for _ in 0..count {
            let (line, next) = next_ascii_line(path, bytes, cursor, *ascii_line)?;
            *ascii_line += 1;
            *cursor = next;
            let mut row = Vec::with_capacity(width);
            for tok in line.split_whitespace() {
                row.push(f64::from_str(tok).map_err(|e| {
                    parse_err(path, format!("line {}", *ascii_line), format!("bad number: {e}"))
                })?);
            }
            if row.len() != width {
                return Err(parse_err(
                    path,
                    format!("line {}", *ascii_line),
                    format!("expected {width} values, found {}", row.len()),
                ));
            }
            rows.push(row);
        }
    }
    Ok(rows)
}

fn next_ascii_line<'a>(
    path: &Path,
    bytes: &'a [u8],
    cursor: &usize,
    line_no: usize,
) -> crate::Result<(&'a str, usize)> {
    if *cursor >= bytes.len() {
        return Err(parse_err(
            path,
            format!("line {}", line_no + 1),
            "unexpected end of file",
        ));
    }
    let rest = &bytes[*cursor..];
    let end = rest.iter().position(|&b| b == b'\n').unwrap_or(rest.len());
    let line = std::str::from_utf8(&rest[..end])
        .map_err(|e| parse_err(path, format!("line {}", line_no + 1), format!("not utf-8: {e}")))?;
    Ok((line, *cursor + end + 1))
}

pub fn load_cloud_ply(path: &Path) -> crate::Result<PointCloudFrame> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    let header = parse_header(path, &bytes)?;
    if header.elements.len() != 1 || header.elements[0].0 != "vertex" {
        return Err(parse_err(
            path,
            "header",
            "point cloud file must declare exactly one 'vertex' element",
        ));
    }
    expect_properties(path, &header, 0, &["x", "y", "z"])?;
    let frame = header
        .frame
        .ok_or_else(|| parse_err(path, "header", "missing 'comment frame ...' line"))?;
    let label = header
        .label
        .ok_or_else(|| parse_err(path, "header", "missing 'comment label ...' line"))?;
    let timestamp = header
        .timestamp
        .ok_or_else(|| parse_err(path, "header", "missing 'comment timestamp ...' line"))?;

    let mut cursor = header.body_start;
    let mut line = header.lines;
    let rows = read_rows(path, &header, &bytes, &mut cursor, &mut line, header.elements[0].1, 3)?;
    let points = rows
        .into_iter()
        .map(|r| Vector3::new(r[0], r[1], r[2]))
        .collect();
    PointCloudFrame::new(points, timestamp, frame, label)
}

pub fn load_mesh_ply(path: &Path) -> crate::Result<SceneMesh> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    let header = parse_header(path, &bytes)?;
    if header.elements.len() != 2
        || header.elements[0].0 != "vertex"
        || header.elements[1].0 != "face"
    {
        return Err(parse_err(
            path,
            "header",
            "mesh file must declare 'vertex' then 'face' elements",
        ));
    }
    expect_properties(path, &header, 0, &["x", "y", "z", "nx", "ny", "nz"])?;
    expect_properties(path, &header, 1, &["list:vertex_indices"])?;
    let frame = header
        .frame
        .ok_or_else(|| parse_err(path, "header", "missing 'comment frame ...' line"))?;

    let mut cursor = header.body_start;
    let mut line = header.lines;
    let rows = read_rows(path, &header, &bytes, &mut cursor, &mut line, header.elements[0].1, 6)?;
    let mut vertices = Vec::with_capacity(rows.len());
    let mut normals = Vec::with_capacity(rows.len());
    for r in rows {
        vertices.push(Vector3::new(r[0], r[1], r[2]));
        normals.push(Vector3::new(r[3], r[4], r[5]));
    }

    let n_faces = header.elements[1].1;
    let mut faces = Vec::with_capacity(n_faces);
    if header.binary {
        for _ in 0..n_faces {
            if cursor + 13 > bytes.len() {
                return Err(parse_err(
                    path,
                    format!("byte offset {cursor}"),
                    "truncated face data",
                ));
            }
            if bytes[cursor] != 3 {
                return Err(parse_err(
                    path,
                    format!("byte offset {cursor}"),
                    format!("only triangles are supported, found {}-gon", bytes[cursor]),
                ));
            }
            let mut f = [0usize; 3];
            for k in 0..3 {
                let start = cursor + 1 + 4 * k;
                let raw: [u8; 4] = bytes[start..start + 4].try_into().expect("exact slice");
                f[k] = u32::from_le_bytes(raw) as usize;
            }
            faces.push(f);
            cursor += 13;
        }
    } else {
        for _ in 0..n_faces {
            let (text, next) = next_ascii_line(path, &bytes, &cursor, line)?;
            line += 1;
            cursor = next;
            let toks: Vec<&str> = text.split_whitespace().collect();
            if toks.len() != 4 || toks[0] != "3" {
                return Err(parse_err(
                    path,
                    format!("line {line}"),
                    "face rows must be '3 a b c'",
                ));
            }
            let mut f = [0usize; 3];
            for k in 0..3 {
                f[k] = toks[k + 1].parse().map_err(|e| {
                    parse_err(path, format!("line {line}"), format!("bad index: {e}"))
                })?;
            }
            faces.push(f);
        }
    }
    SceneMesh::new(vertices, normals, faces, frame)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample_cloud() -> PointCloudFrame {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let points = (0..64)
            .map(|_| {
                Vector3::new(
                    rng.gen_range(-5.0..5.0),
                    rng.gen_range(-5.0..5.0),
                    rng.gen_range(0.0..3.0),
                )
            })
            .collect();
        PointCloudFrame::new(points, 0.35, CoordinateFrame::Lidar, PointLabel::Human).unwrap()
    }

    fn sample_mesh() -> SceneMesh {
        SceneMesh::new(
            vec![
                Vector3::new(0.0, 0.0, 0.0),
                Vector3::new(1.0, 0.0, 0.0),
                Vector3::new(0.0, 1.0, 0.0),
                Vector3::new(1.0, 1.0, 0.125),
            ],
            vec![Vector3::new(0.0, 0.0, 1.0); 4],
            vec![[0, 1, 2], [1, 3, 2]],
            CoordinateFrame::World,
        )
        .unwrap()
    }

    #[test]
    fn cloud_round_trips_in_both_formats() {
        let dir = tempfile::tempdir().unwrap();
        let cloud = sample_cloud();
        for binary in [false, true] {
            let path = dir.path().join(format!("cloud_{binary}.ply"));
            save_cloud_ply(&path, &cloud, binary).unwrap();
            let back = load_cloud_ply(&path).unwrap();
            assert_eq!(back.points, cloud.points, "binary={binary}");
            assert_eq!(back.timestamp, cloud.timestamp);
            assert_eq!(back.frame, cloud.frame);
            assert_eq!(back.label, cloud.label);
        }
    }

    #[test]
    fn mesh_round_trips_in_both_formats() {
        let dir = tempfile::tempdir().unwrap();
        let mesh = sample_mesh();
        for binary in [false, true] {
            let path = dir.path().join(format!("mesh_{binary}.ply"));
            save_mesh_ply(&path, &mesh, binary).unwrap();
            let back = load_mesh_ply(&path).unwrap();
            assert_eq!(back, mesh, "binary={binary}");
        }
    }

    #[test]
    fn ascii_files_are_byte_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let path_a = dir.path().join("a.ply");
        let path_b = dir.path().join("b.ply");
        save_cloud_ply(&path_a, &sample_cloud(), false).unwrap();
        save_cloud_ply(&path_b, &sample_cloud(), false).unwrap();
        assert_eq!(std::fs::read(&path_a).unwrap(), std::fs::read(&path_b).unwrap());
    }

    #[test]
    fn truncated_binary_reports_byte_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.ply");
        save_cloud_ply(&path, &sample_cloud(), true).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 9]).unwrap();
        let err = load_cloud_ply(&path).unwrap_err();
        match err {
            crate::Error::Parse { location, .. } => {
                assert!(location.starts_with("byte offset"), "{location}")
            }
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn bad_ascii_token_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ply");
        save_cloud_ply(&path, &sample_cloud(), false).unwrap();
        let mut text = std::fs::read_to_string(&path).unwrap();
        text = text.replacen("\nend_header\n", "\nend_header\nnot-a-number 0 0", 1);
        std::fs::write(&path, text).unwrap();
        let err = load_cloud_ply(&path).unwrap_err();
        assert!(err.to_string().contains("line"), "{err}");
    }

    #[test]
    fn missing_metadata_comment_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nometa.ply");
        save_cloud_ply(&path, &sample_cloud(), false).unwrap();
        let text = std::fs::read_to_string(&path)
            .unwrap()
            .replace("comment label HUMAN\n", "");
        std::fs::write(&path, text).unwrap();
        let err = load_cloud_ply(&path).unwrap_err();
        assert!(err.to_string().contains("comment label"), "{err}");
    }

    #[test]
    fn float_properties_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f32.ply");
        save_cloud_ply(&path, &sample_cloud(), false).unwrap();
        let text = std::fs::read_to_string(&path)
            .unwrap()
            .replace("property double x", "property float x");
        std::fs::write(&path, text).unwrap();
        assert!(load_cloud_ply(&path).is_err());
    }
}
