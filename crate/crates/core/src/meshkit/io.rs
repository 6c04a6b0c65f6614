//! ASCII OFF and binary little-endian PLY mesh files.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::Point3;

use super::{MeshError, TriMesh};

pub fn write_off(mesh: &TriMesh, w: &mut impl Write) -> Result<(), MeshError> {
    writeln!(w, "OFF")?;
    writeln!(w, "{} {} 0", mesh.vertex_count(), mesh.face_count())?;
    for v in &mesh.vertices {
        writeln!(w, "{:?} {:?} {:?}", v.x, v.y, v.z)?;
    }
    for f in &mesh.faces {
        writeln!(w, "3 {} {} {}", f[0], f[1], f[2])?;
    }
    Ok(())
}

pub fn read_off(r: impl Read) -> Result<TriMesh, MeshError> {
    let reader = BufReader::new(r);
    let mut tokens = Vec::new();
    for line in reader.lines() {
        let line = line?;
        let line = line.split('#').next().unwrap_or("");
        tokens.extend(line.split_whitespace().map(str::to_owned));
    }
    let mut it = tokens.into_iter();
    match it.next().as_deref() {
        Some("OFF") => {}
        other => {
            return Err(MeshError::Parse(format!(
                "expected OFF header, got {other:?}"
            )))
        }
    }
    let mut num = |what: &str| -> Result<String, MeshError> {
        it.next()
            .ok_or_else(|| MeshError::Parse(format!("unexpected end of file reading {what}")))
    };
    let parse_usize = |s: String| {
        s.parse::<usize>()
            .map_err(|e| MeshError::Parse(e.to_string()))
    };
    let parse_f64 = |s: String| {
        s.parse::<f64>()
            .map_err(|e| MeshError::Parse(e.to_string()))
    };
    let nv = parse_usize(num("vertex count")?)?;
    let nf = parse_usize(num("face count")?)?;
    let _ne = num("edge count")?;
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let x = parse_f64(num("x")?)?;
        let y = parse_f64(num("y")?)?;
        let z = parse_f64(num("z")?)?;
        vertices.push(Point3::new(x, y, z));
    }
    let mut faces = Vec::with_capacity(nf);
    for _ in 0..nf {
        let k = parse_usize(num("face arity")?)?;
        if k != 3 {
            return Err(MeshError::Parse(format!(
                "only triangles are supported, got a {k}-gon"
            )));
        }
        let a = parse_usize(num("index")?)?;
        let b = parse_usize(num("index")?)?;
        let c = parse_usize(num("index")?)?;
        faces.push([a, b, c]);
    }
    TriMesh::new(vertices, faces)
}

pub fn write_ply(mesh: &TriMesh, w: &mut impl Write) -> Result<(), MeshError> {
    write!(
        w,
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nelement face {}\nproperty list uchar uint vertex_indices\nend_header\n",
        mesh.vertex_count(),
        mesh.face_count()
    )?;
    let mut buf = Vec::with_capacity(mesh.vertex_count() * 12 + mesh.face_count() * 13);
    for v in &mesh.vertices {
        for c in [v.x, v.y, v.z] {
            buf.extend_from_slice(&(c as f32).to_le_bytes());
        }
    }
    for f in &mesh.faces {
        buf.push(3u8);
        for &i in f {
            buf.extend_from_slice(&(i as u32).to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_ply(r: impl Read) -> Result<TriMesh, MeshError> {
    let mut reader = BufReader::new(r);
    let mut nv = None;
    let mut nf = None;
    let mut line = String::new();
    let mut first = true;
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Err(MeshError::Parse("missing end_header".into()));
        }
        let l = line.trim();
        if first {
            if l != "ply" {
                return Err(MeshError::Parse("missing ply magic".into()));
            }
            first = false;
            continue;
        }
        let parts: Vec<&str> = l.split_whitespace().collect();
        match parts.as_slice() {
            ["format", fmt, _] if *fmt != "binary_little_endian" => {
                return Err(MeshError::Parse(format!("unsupported PLY format {fmt}")));
            }
            ["element", "vertex", n] => nv = n.parse().ok(),
            ["element", "face", n] => nf = n.parse().ok(),
            ["property", ty, _] if *ty != "float" => {
                return Err(MeshError::Parse(format!(
                    "unsupported vertex property type {ty}"
                )));
            }
            ["end_header"] => break,
            _ => {}
        }
    }
    let (nv, nf): (usize, usize) = match (nv, nf) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(MeshError::Parse(
                "PLY header lacks vertex or face counts".into(),
            ))
        }
    };
    let mut vbuf = vec![0u8; nv * 12];
    reader.read_exact(&mut vbuf)?;
    let vertices = vbuf
        .chunks_exact(12)
        .map(|c| {
            let f = |o: usize| f32::from_le_bytes(c[o..o + 4].try_into().unwrap()) as f64;
            Point3::new(f(0), f(4), f(8))
        })
        .collect();
    let mut faces = Vec::with_capacity(nf);
    for _ in 0..nf {
        let mut head = [0u8; 1];
        reader.read_exact(&mut head)?;
        if head[0] != 3 {
            return Err(MeshError::Parse(format!(
                "only triangles are supported, got {}",
                head[0]
            )));
        }
        let mut idx = [0u8; 12];
        reader.read_exact(&mut idx)?;
        let g = |o: usize| u32::from_le_bytes(idx[o..o + 4].try_into().unwrap()) as usize;
        faces.push([g(0), g(4), g(8)]);
    }
    TriMesh::new(vertices, faces)
}

/// Loads `.off` or `.ply` by extension.
pub fn load_mesh(path: &Path) -> Result<TriMesh, MeshError> {
    let file = fs::File::open(path)?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("ply") => read_ply(file),
        _ => read_off(file),
    }
}

/// Saves `.off` or `.ply` by extension.
pub fn save_mesh(mesh: &TriMesh, path: &Path) -> Result<(), MeshError> {
    let mut file = std::io::BufWriter::new(fs::File::create(path)?);
    match path.extension().and_then(|e| e.to_str()) {
        Some("ply") => write_ply(mesh, &mut file)?,
        _ => write_off(mesh, &mut file)?,
    }
    file.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meshkit::primitives::icosphere;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn ply_round_trip_keeps_float32_positions(radius in 0.1f64..500.0, freq in 1usize..5) {
            let m = icosphere(radius, freq);
            let mut buf = Vec::new();
            write_ply(&m, &mut buf).unwrap();
            let back = read_ply(&buf[..]).unwrap();
            prop_assert_eq!(&back.faces, &m.faces);
            for (a, b) in m.vertices.iter().zip(&back.vertices) {
                for k in 0..3 {
                    prop_assert_eq!(b[k], a[k] as f32 as f64);
                }
            }
        }

        #[test]
        fn off_round_trip_is_exact(radius in 0.1f64..500.0, freq in 1usize..4) {
            let m = icosphere(radius, freq);
            let mut buf = Vec::new();
            write_off(&m, &mut buf).unwrap();
            let back = read_off(&buf[..]).unwrap();
            prop_assert_eq!(back, m);
        }
    }

    #[test]
    fn rejects_quads() {
        let text = "OFF\n4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n";
        assert!(matches!(
            read_off(text.as_bytes()),
            Err(MeshError::Parse(_))
        ));
    }
}
