//! On-disk formats: the binary TT container and measurement records.
//!
//! TT container layout, all integers `u64` little-endian:
//!
//! ```text
//! "TTRV1" | N | d_1 .. d_N | r_0 .. r_N | core 1 | .. | core N
//! ```
//!
//! Each core is written as `f64` little-endian values, row-major over
//! `(r_{i-1}, d_i, r_i)`.
//!
//! A measurement record is a CSV file with header `k,y_k` (`k` 1-based) next to
//! a key=value descriptor with the same stem and a `.toml` extension.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Result, TtError};
use crate::sensing::OperatorDescriptor;
use crate::tensor::{Core, TtTensor, DEFAULT_ELEMENT_BUDGET};

pub const MAGIC: &[u8; 5] = b"TTRV1";

pub fn write_tt<W: Write>(tt: &TtTensor, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(tt.order() as u64).to_le_bytes())?;
    for d in tt.dims() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for r in tt.ranks() {
        w.write_all(&(r as u64).to_le_bytes())?;
    }
    for core in tt.cores() {
        for v in core.to_row_major() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)
        .map_err(|e| TtError::Format(format!("truncated header: {e}")))?;
    Ok(u64::from_le_bytes(b))
}

fn read_size<R: Read>(r: &mut R, what: &str) -> Result<usize> {
    let v = read_u64(r)?;
    if v == 0 || v > DEFAULT_ELEMENT_BUDGET as u64 {
        return Err(TtError::Format(format!("implausible {what} {v}")));
    }
    Ok(v as usize)
}

pub fn read_tt<R: Read>(mut r: R) -> Result<TtTensor> {
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)
        .map_err(|_| TtError::Format("file too short for a TT container".into()))?;
    if &magic != MAGIC {
        return Err(TtError::Format("bad magic bytes".into()));
    }
    let n = read_size(&mut r, "order")?;
    let dims = (0..n)
        .map(|_| read_size(&mut r, "dimension"))
        .collect::<Result<Vec<_>>>()?;
    let ranks = (0..=n).map(|_| read_size(&mut r, "rank")).collect::<Result<Vec<_>>>()?;
    let mut total: u128 = 0;
    for i in 0..n {
        total += ranks[i] as u128 * dims[i] as u128 * ranks[i + 1] as u128;
    }
    if total > DEFAULT_ELEMENT_BUDGET as u128 {
        return Err(TtError::Format(format!("{total} core entries exceed the budget")));
    }
    let mut cores = Vec::with_capacity(n);
    for i in 0..n {
        let len = ranks[i] * dims[i] * ranks[i + 1];
        let mut bytes = vec![0u8; len * 8];
        r.read_exact(&mut bytes)
            .map_err(|_| TtError::Format(format!("truncated data in core {}", i + 1)))?;
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        cores.push(Core::from_row_major(ranks[i], dims[i], ranks[i + 1], &values)?);
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(TtError::Format(format!("{} trailing bytes", rest.len())));
    }
    TtTensor::new(cores).map_err(|e| TtError::Format(e.to_string()))
}

pub fn tt_to_bytes(tt: &TtTensor) -> Vec<u8> {
    let mut out = Vec::new();
    write_tt(tt, &mut out).expect("writing to memory");
    out
}

pub fn tt_from_bytes(bytes: &[u8]) -> Result<TtTensor> {
    read_tt(bytes)
}

pub fn save_tt(tt: &TtTensor, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    write_tt(tt, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_tt(path: impl AsRef<Path>) -> Result<TtTensor> {
    read_tt(BufReader::new(fs::File::open(path)?))
}

/// Path of the descriptor that accompanies a measurement CSV.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("toml")
}

/// Writes `y` as CSV plus its descriptor. Values use Rust's shortest
/// round-trip formatting, so reading them back is bit-exact.
pub fn write_measurements(csv: &Path, y: &[f64], descriptor: &OperatorDescriptor) -> Result<()> {
    if y.len() != descriptor.m {
        return Err(TtError::domain(format!(
            "{} values for {} measurements",
            y.len(),
            descriptor.m
        )));
    }
    let mut w = BufWriter::new(fs::File::create(csv)?);
    writeln!(w, "k,y_k")?;
    for (k, v) in y.iter().enumerate() {
        writeln!(w, "{},{}", k + 1, v)?;
    }
    w.flush()?;
    fs::write(sidecar_path(csv), descriptor_to_text(descriptor))?;
    Ok(())
}

pub fn read_measurements(csv: &Path) -> Result<(OperatorDescriptor, Vec<f64>)> {
    let text = fs::read_to_string(sidecar_path(csv))?;
    let descriptor = descriptor_from_text(&text)?;
    let reader = BufReader::new(fs::File::open(csv)?);
    let mut lines = reader.lines();
    match lines.next() {
        Some(Ok(h)) if h.trim() == "k,y_k" => {}
        _ => return Err(TtError::Format("measurement file must start with `k,y_k`".into())),
    }
    let mut y = Vec::with_capacity(descriptor.m);
    for (row, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once(',')
            .ok_or_else(|| TtError::Format(format!("line {}: expected `k,y_k`", row + 2)))?;
        let k: usize = k
            .trim()
            .parse()
            .map_err(|_| TtError::Format(format!("line {}: bad index `{k}`", row + 2)))?;
        if k != y.len() + 1 {
            return Err(TtError::Format(format!("line {}: index {k} out of sequence", row + 2)));
        }
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|_| TtError::Format(format!("line {}: bad value `{v}`", row + 2)))?;
        y.push(v);
    }
    if y.len() != descriptor.m {
        return Err(TtError::Format(format!(
            "descriptor announces {} measurements, file has {}",
            descriptor.m,
            y.len()
        )));
    }
    Ok((descriptor, y))
}

pub fn descriptor_to_text(d: &OperatorDescriptor) -> String {
    toml::to_string(d).expect("descriptor serializes")
}

pub fn descriptor_from_text(text: &str) -> Result<OperatorDescriptor> {
    toml::from_str(text).map_err(|e| TtError::Format(format!("descriptor: {e}")))
}

/// Serializes a `u64` as a decimal string, since TOML integers are signed.
pub(crate) mod u64_text {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Int(u64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Int(v) => Ok(v),
            Repr::Text(s) => s.trim().parse().map_err(serde::de::Error::custom),
        }
    }
}
