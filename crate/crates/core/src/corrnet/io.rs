//! Correspondence and interpolation output files.
//!
//! * hard map: CSV with header `source_index,target_index`
//! * soft matrix: `SOFT`, u64 n, u64 m, then n·m f32 row-major
//! * sequence: `SEQD`, u64 T, u64 n, then T·n·3 f32 displacements

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{CorrespondenceMatrix, CorrnetError, InterpolationSequence};
use crate::meshkit::{io::save_mesh, TriMesh};

const SOFT_MAGIC: &[u8; 4] = b"SOFT";
const SEQ_MAGIC: &[u8; 4] = b"SEQD";

pub fn write_hard_csv(map: &[usize], w: &mut impl Write) -> Result<(), CorrnetError> {
    writeln!(w, "source_index,target_index")?;
    for (i, j) in map.iter().enumerate() {
        writeln!(w, "{i},{j}")?;
    }
    Ok(())
}

pub fn read_hard_csv(r: impl Read) -> Result<Vec<usize>, CorrnetError> {
    let mut lines = BufReader::new(r).lines();
    match lines.next() {
        Some(Ok(h)) if h.trim() == "source_index,target_index" => {}
        _ => return Err(CorrnetError::Format("missing header".into())),
    }
    let mut map = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (a, b) = line
            .split_once(',')
            .ok_or_else(|| CorrnetError::Format(format!("bad line {line:?}")))?;
        let parse = |s: &str| {
            s.trim()
                .parse::<usize>()
                .map_err(|e| CorrnetError::Format(e.to_string()))
        };
        if parse(a)? != map.len() {
            return Err(CorrnetError::Format(
                "source indices must be consecutive".into(),
            ));
        }
        map.push(parse(b)?);
    }
    Ok(map)
}

fn header(buf: &mut Vec<u8>, magic: &[u8; 4], a: usize, b: usize) {
    buf.extend_from_slice(magic);
    buf.extend_from_slice(&(a as u64).to_le_bytes());
    buf.extend_from_slice(&(b as u64).to_le_bytes());
}

fn read_header<'a>(
    bytes: &'a [u8],
    magic: &[u8; 4],
) -> Result<(usize, usize, &'a [u8]), CorrnetError> {
    if bytes.len() < 20 || &bytes[..4] != magic {
        return Err(CorrnetError::Format("wrong magic or short header".into()));
    }
    let a = u64::from_le_bytes(bytes[4..12].try_into().unwrap()) as usize;
    let b = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    Ok((a, b, &bytes[20..]))
}

fn f32s(body: &[u8], count: usize) -> Result<Vec<f64>, CorrnetError> {
    if body.len() != count * 4 {
        return Err(CorrnetError::Format(format!(
            "expected {} payload bytes, found {}",
            count * 4,
            body.len()
        )));
    }
    Ok(body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect())
}

pub fn write_soft(pi: &CorrespondenceMatrix, w: &mut impl Write) -> Result<(), CorrnetError> {
    let mut buf = Vec::with_capacity(20 + pi.data.len() * 4);
    header(&mut buf, SOFT_MAGIC, pi.n, pi.m);
    for &v in &pi.data {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_soft(r: &mut impl Read) -> Result<CorrespondenceMatrix, CorrnetError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let (n, m, body) = read_header(&bytes, SOFT_MAGIC)?;
    CorrespondenceMatrix::new(n, m, f32s(body, n * m)?)
}

pub fn write_sequence(seq: &InterpolationSequence, w: &mut impl Write) -> Result<(), CorrnetError> {
    let n = seq.vertex_count();
    let mut buf = Vec::with_capacity(20 + seq.len() * n * 12);
    header(&mut buf, SEQ_MAGIC, seq.len(), n);
    for frame in &seq.displacements {
        for d in frame {
            for c in d {
                buf.extend_from_slice(&(*c as f32).to_le_bytes());
            }
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_sequence(r: &mut impl Read) -> Result<InterpolationSequence, CorrnetError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let (t, n, body) = read_header(&bytes, SEQ_MAGIC)?;
    let vals = f32s(body, t * n * 3)?;
    let displacements = vals
        .chunks_exact((n * 3).max(1))
        .take(t)
        .map(|f| f.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
        .collect();
    Ok(InterpolationSequence {
        times: (1..=t).map(|k| k as f64 / t as f64).collect(),
        displacements,
    })
}

/// Writes `hard.csv`, `soft.bin`, `sequence.bin` and one `frame_k.ply`
/// per time step into `dir`.
pub fn write_outputs(
    dir: &Path,
    source: &TriMesh,
    pi: &CorrespondenceMatrix,
    hard: &[usize],
    seq: &InterpolationSequence,
) -> Result<(), CorrnetError> {
    fs::create_dir_all(dir)?;
    let mut w = BufWriter::new(fs::File::create(dir.join("hard.csv"))?);
    write_hard_csv(hard, &mut w)?;
    w.flush()?;
    let mut w = BufWriter::new(fs::File::create(dir.join("soft.bin"))?);
    write_soft(pi, &mut w)?;
    w.flush()?;
    let mut w = BufWriter::new(fs::File::create(dir.join("sequence.bin"))?);
    write_sequence(seq, &mut w)?;
    w.flush()?;
    for k in 1..=seq.len() {
        save_mesh(&seq.frame(source, k), &dir.join(format!("frame_{k}.ply")))
            .map_err(|e| CorrnetError::Format(e.to_string()))?;
    }
    Ok(())
}
