//! Versioned binary snapshot of a built skeleton.
//!
//! Layout (little endian): magic `CFSKEL\0\0`, version u32, config hash
//! (32 bytes), seed u64, model name (u32 length + UTF-8), grid dims
//! (lattice u32, starts u32, steps u32), t0, dt, window, spacing (f64), then
//! the lattice, start steps, merge log (parent and stamp per trajectory),
//! own segments and the per-step live lists.

use std::io::{Read, Write};

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use super::{SkeletonError, SkeletonFlow, SkeletonGeometry};
use crate::union_find::TimedUnionFind;

const MAGIC: &[u8; 8] = b"CFSKEL\0\0";
pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SnapshotHeader {
    pub version: u32,
    pub config_hash: [u8; 32],
    pub seed: u64,
    pub model_name: String,
    pub n_lattice: u32,
    pub n_starts: u32,
    pub n_steps: u32,
}

fn corrupt(msg: impl Into<String>) -> SkeletonError {
    SkeletonError::Snapshot(msg.into())
}

fn write_f64s<W: Write>(w: &mut W, xs: &[f64]) -> std::io::Result<()> {
    w.write_u64::<LE>(xs.len() as u64)?;
    xs.iter().try_for_each(|&x| w.write_f64::<LE>(x))
}

fn write_u32s<W: Write>(w: &mut W, xs: &[u32]) -> std::io::Result<()> {
    w.write_u64::<LE>(xs.len() as u64)?;
    xs.iter().try_for_each(|&x| w.write_u32::<LE>(x))
}

fn write_u64s<W: Write>(w: &mut W, xs: &[u64]) -> std::io::Result<()> {
    w.write_u64::<LE>(xs.len() as u64)?;
    xs.iter().try_for_each(|&x| w.write_u64::<LE>(x))
}

fn read_len<R: Read>(r: &mut R, expect: Option<usize>) -> Result<usize, SkeletonError> {
    let n = r.read_u64::<LE>()? as usize;
    if let Some(e) = expect {
        if n != e {
            return Err(corrupt(format!("array length {n}, expected {e}")));
        }
    }
    Ok(n)
}

fn read_f64s<R: Read>(r: &mut R, expect: Option<usize>) -> Result<Vec<f64>, SkeletonError> {
    let n = read_len(r, expect)?;
    let mut v = vec![0.0; n];
    r.read_f64_into::<LE>(&mut v)?;
    Ok(v)
}

fn read_u32s<R: Read>(r: &mut R, expect: Option<usize>) -> Result<Vec<u32>, SkeletonError> {
    let n = read_len(r, expect)?;
    let mut v = vec![0; n];
    r.read_u32_into::<LE>(&mut v)?;
    Ok(v)
}

fn read_u64s<R: Read>(r: &mut R, expect: Option<usize>) -> Result<Vec<u64>, SkeletonError> {
    let n = read_len(r, expect)?;
    let mut v = vec![0; n];
    r.read_u64_into::<LE>(&mut v)?;
    Ok(v)
}

pub fn write_snapshot<W: Write>(sk: &SkeletonFlow, config_hash: [u8; 32], w: &mut W) -> Result<(), SkeletonError> {
    let g = &sk.geom;
    w.write_all(MAGIC)?;
    w.write_u32::<LE>(SNAPSHOT_VERSION)?;
    w.write_all(&config_hash)?;
    w.write_u64::<LE>(sk.seed)?;
    w.write_u32::<LE>(sk.model_name.len() as u32)?;
    w.write_all(sk.model_name.as_bytes())?;
    w.write_u32::<LE>(g.lattice.len() as u32)?;
    w.write_u32::<LE>(g.start_steps.len() as u32)?;
    w.write_u32::<LE>(g.n_steps)?;
    for x in [g.t0, g.dt, g.window.0, g.window.1, g.spacing] {
        w.write_f64::<LE>(x)?;
    }
    write_f64s(w, &g.lattice)?;
    write_u32s(w, &g.start_steps)?;
    write_u32s(w, sk.merges.parents())?;
    write_u32s(w, sk.merges.stamps())?;
    write_u64s(w, &sk.seg_offset)?;
    write_u32s(w, &sk.seg_len)?;
    write_f64s(w, &sk.samples)?;
    write_u64s(w, &sk.live_offset)?;
    write_u32s(w, &sk.live_id)?;
    write_f64s(w, &sk.live_pos)?;
    Ok(())
}

pub fn read_header<R: Read>(r: &mut R) -> Result<SnapshotHeader, SkeletonError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(corrupt("not a skeleton snapshot"));
    }
    let version = r.read_u32::<LE>()?;
    if version != SNAPSHOT_VERSION {
        return Err(corrupt(format!("unsupported version {version}")));
    }
    let mut config_hash = [0u8; 32];
    r.read_exact(&mut config_hash)?;
    let seed = r.read_u64::<LE>()?;
    let len = r.read_u32::<LE>()? as usize;
    if len > 4096 {
        return Err(corrupt("model name too long"));
    }
    let mut name = vec![0u8; len];
    r.read_exact(&mut name)?;
    let model_name = String::from_utf8(name).map_err(|_| corrupt("model name is not UTF-8"))?;
    Ok(SnapshotHeader {
        version,
        config_hash,
        seed,
        model_name,
        n_lattice: r.read_u32::<LE>()?,
        n_starts: r.read_u32::<LE>()?,
        n_steps: r.read_u32::<LE>()?,
    })
}

pub fn read_snapshot<R: Read>(r: &mut R) -> Result<(SnapshotHeader, SkeletonFlow), SkeletonError> {
    let h = read_header(r)?;
    let mut f = [0.0; 5];
    r.read_f64_into::<LE>(&mut f)?;
    let lattice = read_f64s(r, Some(h.n_lattice as usize))?;
    let start_steps = read_u32s(r, Some(h.n_starts as usize))?;
    let n = h.n_lattice as usize * h.n_starts as usize;
    let steps = h.n_steps as usize;
    let parent = read_u32s(r, Some(n))?;
    let stamp = read_u32s(r, Some(n))?;
    let seg_offset = read_u64s(r, Some(n))?;
    let seg_len = read_u32s(r, Some(n))?;
    let samples = read_f64s(r, None)?;
    let live_offset = read_u64s(r, Some(steps + 2))?;
    let live_id = read_u32s(r, None)?;
    let live_pos = read_f64s(r, Some(live_id.len()))?;

    let merges = TimedUnionFind::from_parts(parent, stamp).ok_or_else(|| corrupt("inconsistent merge log"))?;
    if start_steps.iter().any(|&k| k > h.n_steps) || start_steps.windows(2).any(|w| w[1] < w[0]) {
        return Err(corrupt("bad start steps"));
    }
    if seg_offset
        .iter()
        .zip(&seg_len)
        .any(|(&o, &l)| o as usize + l as usize > samples.len())
    {
        return Err(corrupt("segment out of bounds"));
    }
    if live_offset.windows(2).any(|w| w[1] < w[0]) || live_offset.last().copied() != Some(live_id.len() as u64) {
        return Err(corrupt("bad live offsets"));
    }
    if live_id.iter().any(|&i| i as usize >= n) {
        return Err(corrupt("live id out of range"));
    }
    let geom = SkeletonGeometry {
        t0: f[0],
        dt: f[1],
        n_steps: h.n_steps,
        window: (f[2], f[3]),
        spacing: f[4],
        lattice,
        start_steps,
    };
    let sk = SkeletonFlow {
        geom,
        seed: h.seed,
        model_name: h.model_name.clone(),
        merges,
        seg_offset,
        seg_len,
        samples,
        live_offset,
        live_id,
        live_pos,
    };
    Ok((h, sk))
}
