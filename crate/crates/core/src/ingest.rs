//! Scenario ingestion from a JSON manifest pointing at CSV datapoints and
//! timesteps, ESRI ASCII grids and a buildings JSON file.
//!
//! * datapoints: `id,x,y` (or `id,lon,lat`)
//! * timesteps: `id,eta,vx,vy`, an empty `eta` marks the datapoint dry
//! * terrain and offshore mask: ESRI ASCII grid
//! * buildings: `[{id, footprint: [[x, y], ...], height, name?, meta?}]`
//!
//! Lines starting with `#` are ignored in CSV and grid files, and a leading
//! non-numeric CSV line is treated as a header.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{Building, Vec2};
use crate::scenario::{Datapoint, FloodScenario, GridSpec, OffshoreMask, Sample, TerrainDem};

/// Meters per degree of latitude used by the local projection.
pub const METERS_PER_DEG_LAT: f64 = 110_540.0;
/// Meters per degree of longitude at the equator.
pub const METERS_PER_DEG_LON: f64 = 111_320.0;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("timestep {index} is missing from the series")]
    MissingTimestep { index: u64 },
    #[error("{file}: datapoint {id} {detail}")]
    IdMismatch { file: PathBuf, id: u64, detail: &'static str },
    #[error("{file}:{line}: {message}")]
    MalformedRecord { file: PathBuf, line: usize, message: String },
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
}

impl IngestError {
    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            IngestError::MissingFile(_) => "MissingFile",
            IngestError::Io { .. } => "Io",
            IngestError::MissingTimestep { .. } => "MissingTimestep",
            IngestError::IdMismatch { .. } => "IdMismatch",
            IngestError::MalformedRecord { .. } => "MalformedRecord",
            IngestError::InvalidManifest(_) => "InvalidManifest",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Crs {
    LocalMeters,
    Lonlat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioManifest {
    pub name: String,
    pub crs: Crs,
    pub datapoints_path: PathBuf,
    pub timesteps_glob: String,
    pub dem_path: PathBuf,
    pub buildings_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offshore_mask_path: Option<PathBuf>,
    pub timestep_seconds: f64,
    /// Added to every wet elevation to align the simulation datum with the terrain.
    #[serde(default)]
    pub vertical_offset: f64,
    /// Projection origin for `lonlat`; the datapoint centroid when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin_lonlat: Option<[f64; 2]>,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ScenarioManifest {
    pub fn from_json(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self, IngestError> {
        let mut manifest: Self =
            serde_json::from_str(text).map_err(|e| IngestError::InvalidManifest(e.to_string()))?;
        manifest.base_dir = base_dir.into();
        Ok(manifest)
    }

    pub fn from_file(path: &Path) -> Result<Self, IngestError> {
        let text = read_text(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_json(&text, base)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    fn validate(&self) -> Result<(), IngestError> {
        if !(self.timestep_seconds > 0.0) || !self.timestep_seconds.is_finite() {
            return Err(IngestError::InvalidManifest("timestep_seconds must be positive".into()));
        }
        let mut required = vec![&self.datapoints_path, &self.dem_path, &self.buildings_path];
        if let Some(mask) = &self.offshore_mask_path {
            required.push(mask);
        }
        for p in required {
            let full = self.resolve(p);
            if !full.is_file() {
                return Err(IngestError::MissingFile(full));
            }
        }
        Ok(())
    }
}

/// Equirectangular projection about a fixed origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Equirectangular {
    pub lon0: f64,
    pub lat0: f64,
}

impl Equirectangular {
    pub fn project(&self, lon: f64, lat: f64) -> Vec2 {
        Vec2::new(
            (lon - self.lon0) * METERS_PER_DEG_LON * self.lat0.to_radians().cos(),
            (lat - self.lat0) * METERS_PER_DEG_LAT,
        )
    }
}

fn read_text(path: &Path) -> Result<String, IngestError> {
    fs::read_to_string(path).map_err(|source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            IngestError::MissingFile(path.to_path_buf())
        } else {
            IngestError::Io { path: path.to_path_buf(), source }
        }
    })
}

/// Non-comment, non-blank lines with their 1-based line numbers.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

/// CSV records, skipping a leading header whose first field is not numeric.
fn csv_records(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    let mut first = true;
    data_lines(text).filter_map(move |(n, line)| {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let is_header = first && fields[0].parse::<f64>().is_err();
        first = false;
        (!is_header).then_some((n, fields))
    })
}

fn parse_f64(file: &Path, line: usize, field: &str, what: &str) -> Result<f64, IngestError> {
    match field.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(IngestError::MalformedRecord {
            file: file.to_path_buf(),
            line,
            message: format!("{what}: cannot parse {field:?} as a finite number"),
        }),
    }
}

fn parse_id(file: &Path, line: usize, field: &str) -> Result<u64, IngestError> {
    field.parse::<u64>().map_err(|_| IngestError::MalformedRecord {
        file: file.to_path_buf(),
        line,
        message: format!("id: cannot parse {field:?}"),
    })
}

fn expect_fields(file: &Path, line: usize, fields: &[&str], n: usize) -> Result<(), IngestError> {
    if fields.len() != n {
        return Err(IngestError::MalformedRecord {
            file: file.to_path_buf(),
            line,
            message: format!("expected {n} fields, found {}", fields.len()),
        });
    }
    Ok(())
}

/// Raw `(id, a, b)` datapoint rows in file order.
pub fn parse_datapoints(text: &str, file: &Path) -> Result<Vec<(u64, f64, f64)>, IngestError> {
    let mut rows = Vec::new();
    let mut seen = HashMap::new();
    for (line, fields) in csv_records(text) {
        expect_fields(file, line, &fields, 3)?;
        let id = parse_id(file, line, fields[0])?;
        let a = parse_f64(file, line, fields[1], "x")?;
        let b = parse_f64(file, line, fields[2], "y")?;
        if seen.insert(id, line).is_some() {
            return Err(IngestError::MalformedRecord {
                file: file.to_path_buf(),
                line,
                message: format!("duplicate datapoint id {id}"),
            });
        }
        rows.push((id, a, b));
    }
    Ok(rows)
}

/// Parses one timestep file against the datapoint id index.
pub fn parse_timestep(text: &str, file: &Path, index: &HashMap<u64, usize>) -> Result<Vec<Sample>, IngestError> {
    let mut samples: Vec<Option<Sample>> = vec![None; index.len()];
    for (line, fields) in csv_records(text) {
        expect_fields(file, line, &fields, 4)?;
        let id = parse_id(file, line, fields[0])?;
        let slot = *index
            .get(&id)
            .ok_or(IngestError::IdMismatch { file: file.to_path_buf(), id, detail: "is not a known datapoint" })?;
        let sample = if fields[1].is_empty() {
            Sample::Dry
        } else {
            let elevation = parse_f64(file, line, fields[1], "eta")?;
            let vx = parse_f64(file, line, fields[2], "vx")?;
            let vy = parse_f64(file, line, fields[3], "vy")?;
            Sample::Wet { elevation, velocity: Vec2::new(vx, vy) }
        };
        if samples[slot].replace(sample).is_some() {
            return Err(IngestError::MalformedRecord {
                file: file.to_path_buf(),
                line,
                message: format!("datapoint {id} appears twice"),
            });
        }
    }
    let mut by_slot: Vec<(usize, u64)> = index.iter().map(|(&id, &slot)| (slot, id)).collect();
    by_slot.sort_unstable();
    by_slot
        .into_iter()
        .map(|(slot, id)| {
            samples[slot].ok_or(IngestError::IdMismatch { file: file.to_path_buf(), id, detail: "has no sample" })
        })
        .collect()
}

/// Header of an ESRI ASCII grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EsriHeader {
    pub spec: GridSpec,
    pub nodata: Option<f64>,
}

/// Parses an ESRI ASCII grid into a south-first row-major raster.
pub fn parse_esri_ascii(text: &str, file: &Path) -> Result<(EsriHeader, Vec<f64>), IngestError> {
    let malformed = |line: usize, message: String| IngestError::MalformedRecord { file: file.to_path_buf(), line, message };
    let mut header: HashMap<String, f64> = HashMap::new();
    let mut cells_north_first = Vec::new();
    let mut last_line = 0;
    for (line, content) in data_lines(text) {
        last_line = line;
        let mut tokens = content.split_whitespace().peekable();
        let first = *tokens.peek().expect("data lines are non-empty");
        if first.chars().next().is_some_and(|c| c.is_ascii_alphabetic()) && first.parse::<f64>().is_err() {
            let key = first.to_ascii_lowercase();
            tokens.next();
            let value = tokens.next().ok_or_else(|| malformed(line, format!("header {key} has no value")))?;
            let value = value.parse::<f64>().map_err(|_| malformed(line, format!("header {key}: bad value {value:?}")))?;
            header.insert(key, value);
            continue;
        }
        for tok in tokens {
            let v = tok.parse::<f64>().map_err(|_| malformed(line, format!("bad grid value {tok:?}")))?;
            cells_north_first.push(v);
        }
    }
    let get = |key: &str| header.get(key).copied().ok_or_else(|| malformed(1, format!("missing header {key}")));
    let cols = get("ncols")? as usize;
    let rows = get("nrows")? as usize;
    let cell_size = get("cellsize")?;
    if cols == 0 || rows == 0 || !(cell_size > 0.0) {
        return Err(malformed(1, "grid dimensions and cellsize must be positive".into()));
    }
    let half = cell_size * 0.5;
    let x0 = match (header.get("xllcorner"), header.get("xllcenter")) {
        (Some(&x), _) => x,
        (None, Some(&x)) => x - half,
        _ => return Err(malformed(1, "missing header xllcorner".into())),
    };
    let y0 = match (header.get("yllcorner"), header.get("yllcenter")) {
        (Some(&y), _) => y,
        (None, Some(&y)) => y - half,
        _ => return Err(malformed(1, "missing header yllcorner".into())),
    };
    if cells_north_first.len() != rows * cols {
        return Err(malformed(last_line, format!("expected {} grid values, found {}", rows * cols, cells_north_first.len())));
    }
    let mut values = Vec::with_capacity(rows * cols);
    for r in (0..rows).rev() {
        values.extend_from_slice(&cells_north_first[r * cols..(r + 1) * cols]);
    }
    let spec = GridSpec { origin: Vec2::new(x0, y0), cell_size, rows, cols };
    Ok((EsriHeader { spec, nodata: header.get("nodata_value").copied() }, values))
}

pub fn write_esri_ascii(spec: &GridSpec, values: &[f64]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "ncols {}", spec.cols);
    let _ = writeln!(out, "nrows {}", spec.rows);
    let _ = writeln!(out, "xllcorner {}", spec.origin.x);
    let _ = writeln!(out, "yllcorner {}", spec.origin.y);
    let _ = writeln!(out, "cellsize {}", spec.cell_size);
    for r in (0..spec.rows).rev() {
        let row: Vec<String> = values[r * spec.cols..(r + 1) * spec.cols].iter().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
    out
}

/// Terrain raster; NODATA cells are read as the datum (0 m).
pub fn load_dem(path: &Path) -> Result<TerrainDem, IngestError> {
    let (header, mut values) = parse_esri_ascii(&read_text(path)?, path)?;
    if let Some(nodata) = header.nodata {
        values.iter_mut().filter(|v| **v == nodata).for_each(|v| *v = 0.0);
    }
    TerrainDem::new(header.spec, values)
        .map_err(|message| IngestError::MalformedRecord { file: path.to_path_buf(), line: 1, message })
}

/// Mask raster; non-zero cells are offshore and NODATA is onshore.
pub fn load_mask(path: &Path) -> Result<OffshoreMask, IngestError> {
    let (header, values) = parse_esri_ascii(&read_text(path)?, path)?;
    let cells = values.iter().map(|&v| Some(v) != header.nodata && v != 0.0).collect();
    Ok(OffshoreMask { spec: header.spec, cells })
}

#[derive(Deserialize)]
struct RawBuilding {
    id: u64,
    footprint: Vec<[f64; 2]>,
    height: f64,
    #[serde(default)]
    name: Option<String>,
    #[serde(default)]
    meta: std::collections::BTreeMap<String, serde_json::Value>,
}

pub fn parse_buildings(
    text: &str,
    file: &Path,
    project: impl Fn(f64, f64) -> Vec2,
) -> Result<Vec<Building>, IngestError> {
    let raw: Vec<RawBuilding> = serde_json::from_str(text).map_err(|e| IngestError::MalformedRecord {
        file: file.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })?;
    raw.into_iter()
        .map(|b| {
            let meta = b
                .meta
                .into_iter()
                .map(|(k, v)| match v {
                    serde_json::Value::String(s) => (k, s),
                    other => (k, other.to_string()),
                })
                .collect();
            let building = Building {
                id: b.id,
                footprint: b.footprint.iter().map(|&[a, c]| project(a, c)).collect(),
                height: b.height,
                name: b.name,
                meta,
            };
            building
                .validate()
                .map(|_| building)
                .map_err(|message| IngestError::MalformedRecord { file: file.to_path_buf(), line: 1, message })
        })
        .collect()
}

/// Trailing integer in a file stem, e.g. `ts_0012.csv` gives 12.
fn stem_index(path: &Path) -> Option<u64> {
    let stem = path.file_stem()?.to_str()?;
    let digits: String = stem.chars().rev().take_while(|c| c.is_ascii_digit()).collect();
    if digits.is_empty() {
        return None;
    }
    digits.chars().rev().collect::<String>().parse().ok()
}

/// Timestep files in series order; numbered files must form a gap-free run.
fn timestep_files(manifest: &ScenarioManifest) -> Result<Vec<PathBuf>, IngestError> {
    let pattern = manifest.resolve(Path::new(&manifest.timesteps_glob));
    let pattern = pattern.to_string_lossy().into_owned();
    let mut files: Vec<PathBuf> = glob::glob(&pattern)
        .map_err(|e| IngestError::InvalidManifest(format!("timesteps_glob: {e}")))?
        .filter_map(Result::ok)
        .filter(|p| p.is_file())
        .collect();
    if files.is_empty() {
        return Err(IngestError::MissingFile(PathBuf::from(pattern)));
    }
    files.sort();
    let indices: Option<Vec<u64>> = files.iter().map(|f| stem_index(f)).collect();
    if let Some(indices) = indices {
        let mut order: Vec<(u64, PathBuf)> = indices.into_iter().zip(files).collect();
        order.sort();
        let first = order[0].0;
        for (expected, (index, path)) in (first..).zip(&order) {
            if *index != expected {
                if *index < expected {
                    return Err(IngestError::InvalidManifest(format!(
                        "timestep {index} appears twice ({})",
                        path.display()
                    )));
                }
                return Err(IngestError::MissingTimestep { index: expected });
            }
        }
        files = order.into_iter().map(|(_, p)| p).collect();
    }
    Ok(files)
}

pub fn load_scenario(manifest: &ScenarioManifest) -> Result<FloodScenario, IngestError> {
    manifest.validate()?;
    let dp_path = manifest.resolve(&manifest.datapoints_path);
    let rows = parse_datapoints(&read_text(&dp_path)?, &dp_path)?;

    let projection = match manifest.crs {
        Crs::LocalMeters => None,
        Crs::Lonlat => {
            let [lon0, lat0] = manifest.origin_lonlat.unwrap_or_else(|| {
                let n = rows.len().max(1) as f64;
                let (sl, sa) = rows.iter().fold((0.0, 0.0), |(a, b), r| (a + r.1, b + r.2));
                [sl / n, sa / n]
            });
            Some(Equirectangular { lon0, lat0 })
        }
    };
    let project = |a: f64, b: f64| match projection {
        Some(p) => p.project(a, b),
        None => Vec2::new(a, b),
    };

    let datapoints: Vec<Datapoint> =
        rows.iter().map(|&(id, a, b)| Datapoint { id, position: project(a, b) }).collect();
    let index: HashMap<u64, usize> = datapoints.iter().enumerate().map(|(i, d)| (d.id, i)).collect();

    let files = timestep_files(manifest)?;
    let mut samples = files
        .par_iter()
        .map(|f| parse_timestep(&read_text(f)?, f, &index))
        .collect::<Result<Vec<_>, _>>()?;
    if manifest.vertical_offset != 0.0 {
        for s in samples.iter_mut().flatten() {
            if let Sample::Wet { elevation, .. } = s {
                *elevation += manifest.vertical_offset;
            }
        }
    }

    let dem = load_dem(&manifest.resolve(&manifest.dem_path))?;
    let offshore = manifest.offshore_mask_path.as_ref().map(|p| load_mask(&manifest.resolve(p))).transpose()?;
    if let Some(mask) = &offshore {
        if mask.spec != dem.spec {
            return Err(IngestError::InvalidManifest("offshore mask grid differs from the terrain grid".into()));
        }
    }
    let b_path = manifest.resolve(&manifest.buildings_path);
    let buildings = parse_buildings(&read_text(&b_path)?, &b_path, project)?;

    Ok(FloodScenario::new(
        manifest.name.clone(),
        datapoints,
        samples,
        manifest.timestep_seconds,
        dem,
        buildings,
        offshore,
    ))
}

fn write_file(path: &Path, contents: &str) -> Result<(), IngestError> {
    fs::write(path, contents).map_err(|source| IngestError::Io { path: path.to_path_buf(), source })
}

/// Writes the scenario as local-meter files plus `manifest.json` in `dir`
/// and returns the manifest path.
pub fn save_scenario(scenario: &FloodScenario, dir: &Path) -> Result<PathBuf, IngestError> {
    fs::create_dir_all(dir).map_err(|source| IngestError::Io { path: dir.to_path_buf(), source })?;
    let mut dp = String::from("id,x,y\n");
    for d in &scenario.datapoints {
        let _ = writeln!(dp, "{},{},{}", d.id, d.position.x, d.position.y);
    }
    write_file(&dir.join("datapoints.csv"), &dp)?;
    for (t, samples) in scenario.samples.iter().enumerate() {
        let mut ts = String::from("id,eta,vx,vy\n");
        for (d, s) in scenario.datapoints.iter().zip(samples) {
            match s {
                Sample::Wet { elevation, velocity } => {
                    let _ = writeln!(ts, "{},{},{},{}", d.id, elevation, velocity.x, velocity.y);
                }
                Sample::Dry => {
                    let _ = writeln!(ts, "{},,,", d.id);
                }
            }
        }
        write_file(&dir.join(format!("ts_{t:05}.csv")), &ts)?;
    }
    write_file(&dir.join("dem.asc"), &write_esri_ascii(&scenario.dem.spec, &scenario.dem.elevations))?;
    if let Some(mask) = &scenario.offshore_mask {
        let values: Vec<f64> = mask.cells.iter().map(|&c| if c { 1.0 } else { 0.0 }).collect();
        write_file(&dir.join("offshore.asc"), &write_esri_ascii(&mask.spec, &values))?;
    }
    let buildings: Vec<serde_json::Value> = scenario
        .buildings
        .iter()
        .map(|b| {
            let mut v = serde_json::json!({
                "id": b.id,
                "footprint": b.footprint.iter().map(|p| [p.x, p.y]).collect::<Vec<_>>(),
                "height": b.height,
            });
            if let Some(name) = &b.name {
                v["name"] = name.clone().into();
            }
            if !b.meta.is_empty() {
                v["meta"] = serde_json::to_value(&b.meta).expect("string map serializes");
            }
            v
        })
        .collect();
    write_file(&dir.join("buildings.json"), &serde_json::to_string_pretty(&buildings).expect("json"))?;

    let manifest = ScenarioManifest {
        name: scenario.name.clone(),
        crs: Crs::LocalMeters,
        datapoints_path: "datapoints.csv".into(),
        timesteps_glob: "ts_*.csv".into(),
        dem_path: "dem.asc".into(),
        buildings_path: "buildings.json".into(),
        offshore_mask_path: scenario.offshore_mask.as_ref().map(|_| "offshore.asc".into()),
        timestep_seconds: scenario.interval,
        vertical_offset: 0.0,
        origin_lonlat: None,
        base_dir: dir.to_path_buf(),
    };
    let path = dir.join("manifest.json");
    write_file(&path, &serde_json::to_string_pretty(&manifest).expect("json"))?;
    Ok(path)
}
