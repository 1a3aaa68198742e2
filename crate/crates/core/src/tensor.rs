//! Run x time x pixel outcome tensors.
//!
//! Values are stored run-major, then time, then pixel. On disk a tensor is a
//! payload of little-endian `f64` in that order plus a JSON manifest next to it.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::design::DesignMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LandUse {
    Maize,
    Wheat,
    FarmBuilding,
    Unmanaged,
}

impl LandUse {
    pub const ALL: [LandUse; 4] = [LandUse::Maize, LandUse::Wheat, LandUse::FarmBuilding, LandUse::Unmanaged];

    pub fn name(self) -> &'static str {
        match self {
            LandUse::Maize => "maize",
            LandUse::Wheat => "wheat",
            LandUse::FarmBuilding => "farm_building",
            LandUse::Unmanaged => "unmanaged",
        }
    }

    pub fn is_crop(self) -> bool {
        matches!(self, LandUse::Maize | LandUse::Wheat)
    }
}

impl fmt::Display for LandUse {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Square-pixel grid, row-major with row 0 upslope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMeta {
    pub mesh_width: f64,
    pub nx: usize,
    pub ny: usize,
    pub land_use: Vec<LandUse>,
}

impl GridMeta {
    pub fn new(mesh_width: f64, nx: usize, ny: usize, land_use: Vec<LandUse>) -> Result<Self> {
        if !(mesh_width > 0.0) || nx == 0 || ny == 0 {
            return Err(Error::InvalidParameters(format!("bad grid {nx}x{ny} at {mesh_width} m")));
        }
        if land_use.len() != nx * ny {
            return Err(Error::LengthMismatch { expected: nx * ny, found: land_use.len() });
        }
        Ok(Self { mesh_width, nx, ny, land_use })
    }

    pub fn n_pixels(&self) -> usize {
        self.nx * self.ny
    }

    pub fn pixel_area_ha(&self) -> f64 {
        self.mesh_width * self.mesh_width / 1e4
    }

    pub fn area_ha(&self) -> f64 {
        self.n_pixels() as f64 * self.pixel_area_ha()
    }

    pub fn count(&self, lu: LandUse) -> usize {
        self.land_use.iter().filter(|&&l| l == lu).count()
    }

    /// Pixel-centre coordinates in metres.
    pub fn centre(&self, pixel: usize) -> (f64, f64) {
        let (x, y) = (pixel % self.nx, pixel / self.nx);
        ((x as f64 + 0.5) * self.mesh_width, (y as f64 + 0.5) * self.mesh_width)
    }

    /// Integer block factor from this mesh to `target_mesh`.
    fn block_factor(&self, target_mesh: f64) -> Result<usize> {
        let ratio = target_mesh / self.mesh_width;
        let k = ratio.round();
        if k < 1.0 || (ratio - k).abs() > 1e-9 * ratio {
            return Err(Error::NonNestedGrids { from: self.mesh_width, to: target_mesh });
        }
        let k = k as usize;
        if self.nx % k != 0 || self.ny % k != 0 {
            return Err(Error::NonNestedGrids { from: self.mesh_width, to: target_mesh });
        }
        Ok(k)
    }

    /// The nested coarser grid; each coarse label is the block's most common one.
    pub fn coarsen(&self, target_mesh: f64) -> Result<GridMeta> {
        let k = self.block_factor(target_mesh)?;
        let (cx, cy) = (self.nx / k, self.ny / k);
        let mut land_use = Vec::with_capacity(cx * cy);
        for by in 0..cy {
            for bx in 0..cx {
                let mut counts = [0usize; 4];
                for y in by * k..(by + 1) * k {
                    for x in bx * k..(bx + 1) * k {
                        counts[self.land_use[y * self.nx + x] as usize] += 1;
                    }
                }
                let best = (0..4).max_by_key(|&i| (counts[i], std::cmp::Reverse(i))).unwrap();
                land_use.push(LandUse::ALL[best]);
            }
        }
        GridMeta::new(target_mesh, cx, cy, land_use)
    }

    /// The nested finer grid obtained by splitting every pixel.
    pub fn refine(&self, target_mesh: f64) -> Result<GridMeta> {
        let ratio = self.mesh_width / target_mesh;
        let k = ratio.round();
        if k < 1.0 || (ratio - k).abs() > 1e-9 * ratio {
            return Err(Error::NonNestedGrids { from: self.mesh_width, to: target_mesh });
        }
        let k = k as usize;
        let (nx, ny) = (self.nx * k, self.ny * k);
        let land_use = (0..nx * ny).map(|i| self.land_use[(i / nx / k) * self.nx + (i % nx) / k]).collect();
        GridMeta::new(target_mesh, nx, ny, land_use)
    }
}

/// Area-weighted block mean of a map onto the nested grid at `target_mesh`.
pub fn resample_to_reference(map: &[f64], grid: &GridMeta, target_mesh: f64) -> Result<Vec<f64>> {
    if map.len() != grid.n_pixels() {
        return Err(Error::LengthMismatch { expected: grid.n_pixels(), found: map.len() });
    }
    let k = grid.block_factor(target_mesh)?;
    if k == 1 {
        return Ok(map.to_vec());
    }
    let (cx, cy) = (grid.nx / k, grid.ny / k);
    let inv = 1.0 / (k * k) as f64;
    let mut out = vec![0.0; cx * cy];
    for (i, o) in out.iter_mut().enumerate() {
        let (bx, by) = (i % cx, i / cx);
        let mut s = 0.0;
        for y in by * k..(by + 1) * k {
            s += map[y * grid.nx + bx * k..y * grid.nx + (bx + 1) * k].iter().sum::<f64>();
        }
        *o = s * inv;
    }
    Ok(out)
}

/// Spatial reduction convention: extensive outcomes are summed over area, intensive ones averaged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Sum,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeStep {
    Daily,
    Monthly,
}

/// `len` samples starting at simulation day or month `start`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeAxis {
    pub step: TimeStep,
    pub start: usize,
    pub len: usize,
}

impl TimeAxis {
    pub fn labels(&self) -> impl Iterator<Item = usize> {
        self.start..self.start + self.len
    }

    /// Calendar month (0 = January) of sample `i`, 365-day years.
    pub fn month_of(&self, i: usize) -> usize {
        match self.step {
            TimeStep::Monthly => (self.start + i) % 12,
            TimeStep::Daily => month_of_day((self.start + i) % 365),
        }
    }
}

const MONTH_DAYS: [usize; 12] = [31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31];

/// Month (0-based) of a day-of-year in a 365-day calendar.
pub fn month_of_day(doy: usize) -> usize {
    let mut d = doy % 365;
    for (m, &len) in MONTH_DAYS.iter().enumerate() {
        if d < len {
            return m;
        }
        d -= len;
    }
    11
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeTensor {
    pub name: String,
    pub unit: String,
    pub aggregation: Aggregation,
    pub time_axis: TimeAxis,
    /// `None` for point outcomes such as the catchment outlet (one pixel).
    pub grid: Option<GridMeta>,
    n_runs: usize,
    n_time: usize,
    n_pixels: usize,
    values: Vec<f64>,
}

impl OutcomeTensor {
    pub fn new(
        name: impl Into<String>,
        unit: impl Into<String>,
        aggregation: Aggregation,
        time_axis: TimeAxis,
        grid: Option<GridMeta>,
        n_runs: usize,
        values: Vec<f64>,
    ) -> Result<Self> {
        let n_time = time_axis.len;
        let n_pixels = grid.as_ref().map_or(1, GridMeta::n_pixels);
        let expected = n_runs * n_time * n_pixels;
        if values.len() != expected {
            return Err(Error::LengthMismatch { expected, found: values.len() });
        }
        if n_runs == 0 || n_time == 0 {
            return Err(Error::InvalidParameters("tensor needs at least one run and one time step".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameters("tensor values must be finite".into()));
        }
        Ok(Self { name: name.into(), unit: unit.into(), aggregation, time_axis, grid, n_runs, n_time, n_pixels, values })
    }

    pub fn n_runs(&self) -> usize {
        self.n_runs
    }

    pub fn n_time(&self) -> usize {
        self.n_time
    }

    pub fn n_pixels(&self) -> usize {
        self.n_pixels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, run: usize, time: usize, pixel: usize) -> f64 {
        self.values[(run * self.n_time + time) * self.n_pixels + pixel]
    }

    /// Pixel values of one run at one time.
    pub fn slice(&self, run: usize, time: usize) -> &[f64] {
        let start = (run * self.n_time + time) * self.n_pixels;
        &self.values[start..start + self.n_pixels]
    }

    fn pixel_weight(&self) -> f64 {
        self.grid.as_ref().map_or(1.0, GridMeta::pixel_area_ha)
    }

    fn check_runs(&self, design: &DesignMatrix) -> Result<()> {
        if self.n_runs != design.n_runs() {
            return Err(Error::LengthMismatch { expected: design.n_runs(), found: self.n_runs });
        }
        Ok(())
    }

    /// Fails unless the run count matches the design.
    pub fn for_design(self, design: &DesignMatrix) -> Result<Self> {
        self.check_runs(design)?;
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationMode {
    SpatialMean,
    TemporalMean,
    FullMean,
    LanduseMean,
    EventWindowMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mask {
    Pixels(Vec<usize>),
    LandUse(LandUse),
    Times(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationSpec {
    pub mode: AggregationMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<Mask>,
}

impl AggregationSpec {
    pub fn new(mode: AggregationMode) -> Self {
        Self { mode, mask: None }
    }

    pub fn masked(mode: AggregationMode, mask: Mask) -> Self {
        Self { mode, mask: Some(mask) }
    }
}

fn selected_pixels(t: &OutcomeTensor, spec: &AggregationSpec) -> Result<Vec<usize>> {
    let pixels = match (&spec.mode, &spec.mask) {
        (AggregationMode::SpatialMean, None) => (0..t.n_pixels).collect(),
        (AggregationMode::SpatialMean, Some(Mask::Pixels(p))) => p.clone(),
        (AggregationMode::LanduseMean, Some(Mask::LandUse(lu))) => {
            let grid = t
                .grid
                .as_ref()
                .ok_or_else(|| Error::InvalidParameters(format!("{} has no land-use grid", t.name)))?;
            (0..grid.n_pixels()).filter(|&p| grid.land_use[p] == *lu).collect()
        }
        (mode, mask) => {
            return Err(Error::InvalidParameters(format!(
                "spatial aggregation does not accept {mode:?} with {mask:?}"
            )))
        }
    };
    if pixels.is_empty() {
        return Err(Error::EmptyMask);
    }
    if let Some(&p) = pixels.iter().find(|&&p| p >= t.n_pixels) {
        return Err(Error::InvalidParameters(format!("pixel {p} out of range")));
    }
    Ok(pixels)
}

fn selected_times(t: &OutcomeTensor, spec: &AggregationSpec) -> Result<Vec<usize>> {
    let times = match (&spec.mode, &spec.mask) {
        (AggregationMode::TemporalMean, None) => (0..t.n_time).collect(),
        (AggregationMode::EventWindowMean, Some(Mask::Times(ts))) => ts.clone(),
        (mode, mask) => {
            return Err(Error::InvalidParameters(format!(
                "temporal aggregation does not accept {mode:?} with {mask:?}"
            )))
        }
    };
    if times.is_empty() {
        return Err(Error::EmptyMask);
    }
    if let Some(&s) = times.iter().find(|&&s| s >= t.n_time) {
        return Err(Error::InvalidParameters(format!("time step {s} out of range")));
    }
    Ok(times)
}

/// Area-weighted mean (or sum, for extensive outcomes) over selected pixels: runs x time.
pub fn spatial_aggregate(t: &OutcomeTensor, spec: &AggregationSpec) -> Result<DMatrix<f64>> {
    let pixels = selected_pixels(t, spec)?;
    let w = t.pixel_weight();
    let norm = match t.aggregation {
        Aggregation::Sum => w,
        Aggregation::Mean => 1.0 / pixels.len() as f64,
    };
    Ok(DMatrix::from_fn(t.n_runs, t.n_time, |r, s| {
        let slice = t.slice(r, s);
        pixels.iter().map(|&p| slice[p]).sum::<f64>() * norm
    }))
}

/// Per-pixel time mean over all steps or the masked steps: runs x pixels.
pub fn temporal_aggregate(t: &OutcomeTensor, spec: &AggregationSpec) -> Result<DMatrix<f64>> {
    let times = selected_times(t, spec)?;
    let inv = 1.0 / times.len() as f64;
    let mut out = DMatrix::zeros(t.n_runs, t.n_pixels);
    for r in 0..t.n_runs {
        for &s in &times {
            for (p, v) in t.slice(r, s).iter().enumerate() {
                out[(r, p)] += v;
            }
        }
    }
    out *= inv;
    Ok(out)
}

/// One scalar per run: time mean of the spatial aggregate under the outcome's convention.
pub fn full_aggregate(t: &OutcomeTensor) -> Vec<f64> {
    let series = spatial_aggregate(t, &AggregationSpec::new(AggregationMode::SpatialMean))
        .expect("unmasked spatial aggregation of a valid tensor");
    (0..t.n_runs).map(|r| series.row(r).sum() / t.n_time as f64).collect()
}

/// Hex SHA-256 of the design's CSV form.
pub fn design_checksum(design: &DesignMatrix) -> String {
    hex::encode(Sha256::digest(design.to_csv().as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorManifest {
    pub name: String,
    pub unit: String,
    pub aggregation: Aggregation,
    pub dims: [usize; 3],
    pub time_axis: TimeAxis,
    pub grid: Option<GridMeta>,
    pub design_checksum: String,
    pub payload: String,
}

fn sidecar_paths(path: &Path) -> (PathBuf, PathBuf) {
    (path.with_extension("bin"), path.with_extension("json"))
}

/// Writes `<path>.bin` and `<path>.json`.
pub fn write_tensor(path: &Path, t: &OutcomeTensor, design_checksum: &str) -> Result<()> {
    let (bin, json) = sidecar_paths(path);
    let mut bytes = Vec::with_capacity(t.values.len() * 8);
    for v in &t.values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(&bin, bytes)?;
    let manifest = TensorManifest {
        name: t.name.clone(),
        unit: t.unit.clone(),
        aggregation: t.aggregation,
        dims: [t.n_runs, t.n_time, t.n_pixels],
        time_axis: t.time_axis,
        grid: t.grid.clone(),
        design_checksum: design_checksum.to_string(),
        payload: bin.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
    };
    fs::write(&json, serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<TensorManifest> {
    let (_, json) = sidecar_paths(path);
    Ok(serde_json::from_str(&fs::read_to_string(json)?)?)
}

/// Reads a tensor, optionally requiring a matching design checksum.
pub fn read_tensor(path: &Path, expected_checksum: Option<&str>) -> Result<OutcomeTensor> {
    let (bin, _) = sidecar_paths(path);
    let m = read_manifest(path)?;
    if let Some(expected) = expected_checksum {
        if m.design_checksum != expected {
            return Err(Error::ManifestMismatch(format!(
                "{} was produced for design {}, expected {}",
                m.name, m.design_checksum, expected
            )));
        }
    }
    let [n_runs, n_time, n_pixels] = m.dims;
    if m.time_axis.len != n_time || m.grid.as_ref().map_or(1, GridMeta::n_pixels) != n_pixels {
        return Err(Error::ManifestMismatch(format!("{}: dims disagree with time axis or grid", m.name)));
    }
    let bytes = fs::read(&bin)?;
    let expected = (n_runs * n_time * n_pixels * 8) as u64;
    if bytes.len() as u64 != expected {
        return Err(Error::TruncatedPayload { expected, found: bytes.len() as u64 });
    }
    let values = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    OutcomeTensor::new(m.name, m.unit, m.aggregation, m.time_axis, m.grid, n_runs, values)
}

/// CSV with a header row; each row starts with its label.
pub fn matrix_to_csv(m: &DMatrix<f64>, row_header: &str, row_labels: &[String], col_labels: &[String]) -> String {
    let mut out = String::new();
    out.push_str(row_header);
    for c in col_labels {
        out.push(',');
        out.push_str(c);
    }
    out.push('\n');
    for r in 0..m.nrows() {
        out.push_str(&row_labels[r]);
        for c in 0..m.ncols() {
            out.push(',');
            out.push_str(&m[(r, c)].to_string());
        }
        out.push('\n');
    }
    out
}
