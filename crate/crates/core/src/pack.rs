//! Binary scenario pack: a little-endian file with a section table and a
//! CRC32 per section, reloaded without touching the CSV sources.
//!
//! Layout: magic `SDPK`, `u32` version, `u32` section count, then one
//! table entry per section (`u32` kind, `u64` offset, `u64` length,
//! `u32` crc), then the section bodies.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::geom::{Building, Vec2};
use crate::scenario::{Datapoint, FloodScenario, GridSpec, OffshoreMask, Sample, TerrainDem};

pub const MAGIC: [u8; 4] = *b"SDPK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
#[repr(u32)]
pub enum SectionKind {
    Header = 1,
    Datapoints = 2,
    Timesteps = 3,
    Dem = 4,
    Buildings = 5,
    Masks = 6,
}

impl SectionKind {
    pub const ALL: [SectionKind; 6] = [
        SectionKind::Header,
        SectionKind::Datapoints,
        SectionKind::Timesteps,
        SectionKind::Dem,
        SectionKind::Buildings,
        SectionKind::Masks,
    ];

    fn from_u32(v: u32) -> Option<Self> {
        Self::ALL.into_iter().find(|k| *k as u32 == v)
    }
}

#[derive(Debug, Error)]
pub enum PackError {
    #[error("cannot access {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("not a scenario pack")]
    BadMagic,
    #[error("unsupported pack version {0}")]
    Version(u32),
    #[error("pack is truncated")]
    Truncated,
    #[error("checksum mismatch in section {0:?}")]
    Checksum(SectionKind),
    #[error("pack has no {0:?} section")]
    MissingSection(SectionKind),
    #[error("corrupt pack: {0}")]
    Corrupt(String),
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn len(&mut self, v: usize) {
        self.u64(v as u64);
    }
    fn str(&mut self, s: &str) {
        self.len(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }
    fn vec2(&mut self, v: Vec2) {
        self.f64(v.x);
        self.f64(v.y);
    }
    fn spec(&mut self, s: &GridSpec) {
        self.vec2(s.origin);
        self.f64(s.cell_size);
        self.len(s.rows);
        self.len(s.cols);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, at: 0 }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8], PackError> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or(PackError::Truncated)?;
        let s = &self.buf[self.at..end];
        self.at = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, PackError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, PackError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64, PackError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64, PackError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    /// A count that must fit in the remaining bytes at `unit` bytes each.
    fn len(&mut self, unit: usize) -> Result<usize, PackError> {
        let n = self.u64()?;
        let n = usize::try_from(n).map_err(|_| PackError::Truncated)?;
        if n.saturating_mul(unit.max(1)) > self.buf.len() - self.at {
            return Err(PackError::Truncated);
        }
        Ok(n)
    }
    fn str(&mut self) -> Result<String, PackError> {
        let n = self.len(1)?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| PackError::Corrupt("invalid utf-8 string".into()))
    }
    fn vec2(&mut self) -> Result<Vec2, PackError> {
        Ok(Vec2::new(self.f64()?, self.f64()?))
    }
    fn spec(&mut self) -> Result<GridSpec, PackError> {
        let origin = self.vec2()?;
        let cell_size = self.f64()?;
        let rows = self.u64()? as usize;
        let cols = self.u64()? as usize;
        Ok(GridSpec { origin, cell_size, rows, cols })
    }
    fn finish(&self, kind: SectionKind) -> Result<(), PackError> {
        if self.at == self.buf.len() {
            Ok(())
        } else {
            Err(PackError::Corrupt(format!("trailing bytes in {kind:?} section")))
        }
    }
}

fn section(scenario: &FloodScenario, kind: SectionKind) -> Vec<u8> {
    let mut w = Writer::default();
    match kind {
        SectionKind::Header => {
            w.str(&scenario.name);
            w.f64(scenario.interval);
            w.len(scenario.datapoints.len());
            w.len(scenario.samples.len());
        }
        SectionKind::Datapoints => {
            w.len(scenario.datapoints.len());
            for d in &scenario.datapoints {
                w.u64(d.id);
                w.vec2(d.position);
            }
        }
        SectionKind::Timesteps => {
            w.len(scenario.samples.len());
            for step in &scenario.samples {
                w.len(step.len());
                for s in step {
                    match s {
                        Sample::Dry => w.u8(0),
                        Sample::Wet { elevation, velocity } => {
                            w.u8(1);
                            w.f64(*elevation);
                            w.vec2(*velocity);
                        }
                    }
                }
            }
        }
        SectionKind::Dem => {
            w.spec(&scenario.dem.spec);
            w.len(scenario.dem.elevations.len());
            for z in &scenario.dem.elevations {
                w.f64(*z);
            }
        }
        SectionKind::Buildings => {
            w.len(scenario.buildings.len());
            for b in &scenario.buildings {
                w.u64(b.id);
                w.f64(b.height);
                match &b.name {
                    None => w.u8(0),
                    Some(name) => {
                        w.u8(1);
                        w.str(name);
                    }
                }
                w.len(b.meta.len());
                for (k, v) in &b.meta {
                    w.str(k);
                    w.str(v);
                }
                w.len(b.footprint.len());
                for p in &b.footprint {
                    w.vec2(*p);
                }
            }
        }
        SectionKind::Masks => match &scenario.offshore_mask {
            None => w.u8(0),
            Some(mask) => {
                w.u8(1);
                w.spec(&mask.spec);
                w.len(mask.cells.len());
                w.0.extend(mask.cells.iter().map(|&c| c as u8));
            }
        },
    }
    w.0
}

/// Serializes a scenario into pack bytes.
pub fn encode_pack(scenario: &FloodScenario) -> Vec<u8> {
    let bodies: Vec<(SectionKind, Vec<u8>)> = SectionKind::ALL.iter().map(|&k| (k, section(scenario, k))).collect();
    let table_len = 12 + bodies.len() * 24;
    let mut w = Writer::default();
    w.0.extend_from_slice(&MAGIC);
    w.u32(VERSION);
    w.u32(bodies.len() as u32);
    let mut offset = table_len as u64;
    for (kind, body) in &bodies {
        w.u32(*kind as u32);
        w.u64(offset);
        w.u64(body.len() as u64);
        w.u32(crc32fast::hash(body));
        offset += body.len() as u64;
    }
    for (_, body) in bodies {
        w.0.extend_from_slice(&body);
    }
    w.0
}

/// Splits pack bytes into verified sections.
fn sections(bytes: &[u8]) -> Result<BTreeMap<SectionKind, &[u8]>, PackError> {
    let mut r = Reader::new(bytes);
    if r.take(4).map_err(|_| PackError::BadMagic)? != MAGIC {
        return Err(PackError::BadMagic);
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(PackError::Version(version));
    }
    let count = r.u32()?;
    let mut out = BTreeMap::new();
    for _ in 0..count {
        let kind = r.u32()?;
        let offset = r.u64()?;
        let len = r.u64()?;
        let crc = r.u32()?;
        let start = usize::try_from(offset).map_err(|_| PackError::Truncated)?;
        let end = start.checked_add(usize::try_from(len).map_err(|_| PackError::Truncated)?).ok_or(PackError::Truncated)?;
        let body = bytes.get(start..end).ok_or(PackError::Truncated)?;
        // unknown sections are skipped so newer writers stay readable
        let Some(kind) = SectionKind::from_u32(kind) else { continue };
        if crc32fast::hash(body) != crc {
            return Err(PackError::Checksum(kind));
        }
        out.insert(kind, body);
    }
    Ok(out)
}

/// Rebuilds a scenario from pack bytes.
pub fn decode_pack(bytes: &[u8]) -> Result<FloodScenario, PackError> {
    let secs = sections(bytes)?;
    let get = |k: SectionKind| secs.get(&k).map(|b| Reader::new(b)).ok_or(PackError::MissingSection(k));

    let mut r = get(SectionKind::Header)?;
    let name = r.str()?;
    let interval = r.f64()?;
    let n_points = r.u64()? as usize;
    let n_steps = r.u64()? as usize;
    r.finish(SectionKind::Header)?;

    let mut r = get(SectionKind::Datapoints)?;
    let n = r.len(24)?;
    if n != n_points {
        return Err(PackError::Corrupt(format!("header lists {n_points} datapoints, section has {n}")));
    }
    let datapoints = (0..n)
        .map(|_| Ok(Datapoint { id: r.u64()?, position: r.vec2()? }))
        .collect::<Result<Vec<_>, PackError>>()?;
    r.finish(SectionKind::Datapoints)?;

    let mut r = get(SectionKind::Timesteps)?;
    let steps = r.len(8)?;
    if steps != n_steps {
        return Err(PackError::Corrupt(format!("header lists {n_steps} timesteps, section has {steps}")));
    }
    let mut samples = Vec::with_capacity(steps);
    for t in 0..steps {
        let m = r.len(1)?;
        if m != n_points {
            return Err(PackError::Corrupt(format!("timestep {t} has {m} samples for {n_points} datapoints")));
        }
        let step = (0..m)
            .map(|_| match r.u8()? {
                0 => Ok(Sample::Dry),
                1 => Ok(Sample::Wet { elevation: r.f64()?, velocity: r.vec2()? }),
                tag => Err(PackError::Corrupt(format!("unknown sample tag {tag}"))),
            })
            .collect::<Result<Vec<_>, PackError>>()?;
        samples.push(step);
    }
    r.finish(SectionKind::Timesteps)?;

    let mut r = get(SectionKind::Dem)?;
    let spec = r.spec()?;
    let n = r.len(8)?;
    let elevations = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
    r.finish(SectionKind::Dem)?;
    let dem = TerrainDem::new(spec, elevations).map_err(PackError::Corrupt)?;

    let mut r = get(SectionKind::Buildings)?;
    let n = r.len(16)?;
    let mut buildings = Vec::with_capacity(n);
    for _ in 0..n {
        let id = r.u64()?;
        let height = r.f64()?;
        let name = match r.u8()? {
            0 => None,
            _ => Some(r.str()?),
        };
        let mut meta = BTreeMap::new();
        for _ in 0..r.len(16)? {
            let k = r.str()?;
            meta.insert(k, r.str()?);
        }
        let footprint = (0..r.len(16)?).map(|_| r.vec2()).collect::<Result<Vec<_>, _>>()?;
        buildings.push(Building { id, footprint, height, name, meta });
    }
    r.finish(SectionKind::Buildings)?;

    let mut r = get(SectionKind::Masks)?;
    let offshore_mask = match r.u8()? {
        0 => None,
        _ => {
            let spec = r.spec()?;
            let n = r.len(1)?;
            if n != spec.len() {
                return Err(PackError::Corrupt(format!("mask has {n} cells for a {}x{} grid", spec.rows, spec.cols)));
            }
            Some(OffshoreMask { spec, cells: r.take(n)?.iter().map(|&c| c != 0).collect() })
        }
    };
    r.finish(SectionKind::Masks)?;

    Ok(FloodScenario::new(name, datapoints, samples, interval, dem, buildings, offshore_mask))
}

pub fn write_pack(scenario: &FloodScenario, path: &Path) -> Result<(), PackError> {
    fs::write(path, encode_pack(scenario)).map_err(|source| PackError::Io { path: path.to_path_buf(), source })
}

pub fn read_pack(path: &Path) -> Result<FloodScenario, PackError> {
    let bytes = fs::read(path).map_err(|source| PackError::Io { path: path.to_path_buf(), source })?;
    decode_pack(&bytes)
}
