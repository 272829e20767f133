//! Checkpoint container: named tensors in a flat binary file.
//!
//! Layout: magic `CPLCKPT1`, then per entry: name length (u32 LE), UTF-8
//! name, rank (u32 LE), extents (u32 LE each), raw f32 values LE.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};

use super::params::ParamStore;
use super::tensor::{Scalar, Tensor};

pub const MAGIC: &[u8; 8] = b"CPLCKPT1";

pub fn write_entries<W: Write>(w: &mut W, entries: &BTreeMap<String, Tensor<f32>>) -> Result<()> {
    w.write_all(MAGIC)?;
    for (name, t) in entries {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &e in t.shape() {
            w.write_all(&(e as u32).to_le_bytes())?;
        }
        for &v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_entries<R: Read>(r: &mut R) -> Result<BTreeMap<String, Tensor<f32>>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).context("reading checkpoint magic")?;
    if &magic != MAGIC {
        bail!("bad checkpoint magic {:?}", magic);
    }
    let mut out = BTreeMap::new();
    let mut u32buf = [0u8; 4];
    loop {
        match r.read_exact(&mut u32buf) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        }
        let name_len = u32::from_le_bytes(u32buf) as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).context("checkpoint entry name")?;
        r.read_exact(&mut u32buf)?;
        let rank = u32::from_le_bytes(u32buf) as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            r.read_exact(&mut u32buf)?;
            shape.push(u32::from_le_bytes(u32buf) as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            r.read_exact(&mut u32buf)?;
            data.push(f32::from_le_bytes(u32buf));
        }
        out.insert(name, Tensor::from_vec(shape, data));
    }
    Ok(out)
}

pub fn save_file(path: &Path, entries: &BTreeMap<String, Tensor<f32>>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {:?}", path))?);
    write_entries(&mut w, entries)?;
    w.flush()?;
    Ok(())
}

pub fn load_file(path: &Path) -> Result<BTreeMap<String, Tensor<f32>>> {
    let mut r = BufReader::new(File::open(path).with_context(|| format!("opening {:?}", path))?);
    read_entries(&mut r)
}

/// Collect all parameters of several stores into one entry map.
pub fn entries_from_stores<F: Scalar>(stores: &[&ParamStore<F>]) -> BTreeMap<String, Tensor<f32>> {
    let mut out = BTreeMap::new();
    for s in stores {
        for (name, t) in s.iter_values() {
            let prev = out.insert(name.to_string(), t.cast::<f32>());
            assert!(prev.is_none(), "duplicate checkpoint entry {:?}", name);
        }
    }
    out
}

/// Overwrite store values from checkpoint entries with matching names.
pub fn load_into_store<F: Scalar>(
    entries: &BTreeMap<String, Tensor<f32>>,
    store: &mut ParamStore<F>,
) -> Result<()> {
    let names: Vec<String> = store.names().map(|s| s.to_string()).collect();
    for name in names {
        let Some(t) = entries.get(&name) else {
            bail!("checkpoint is missing parameter {:?}", name);
        };
        store.set_value(&name, t.cast::<F>());
    }
    Ok(())
}
