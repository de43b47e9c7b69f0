//! Dense voxel grids, the exact Euclidean distance transform, and the
//! header + raw payload volume file format.
//!
//! Every grid uses the same linear layout: `index = x + nx * (y + ny * z)`.
//! Spacing is carried through files but all arithmetic is in voxel units.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;

pub type Label = u16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "[usize; 3]", into = "[usize; 3]")]
pub struct GridDims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl GridDims {
    pub fn new(nx: usize, ny: usize, nz: usize) -> Result<Self> {
        if nx == 0 || ny == 0 || nz == 0 {
            return Err(Error::invalid(format!(
                "grid dims must be positive, got {nx}x{ny}x{nz}"
            )));
        }
        nx.checked_mul(ny)
            .and_then(|p| p.checked_mul(nz))
            .filter(|&p| p <= isize::MAX as usize)
            .ok_or_else(|| Error::invalid("grid is too large to address"))?;
        Ok(GridDims { nx, ny, nz })
    }

    pub fn cube(n: usize) -> Result<Self> {
        Self::new(n, n, n)
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.nx * (y + self.ny * z)
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let x = index % self.nx;
        let rest = index / self.nx;
        [x, rest % self.ny, rest / self.ny]
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }

    /// Index of the voxel containing the rounded point, if it lies inside.
    pub fn voxel_of(&self, pos: [f64; 3]) -> Option<usize> {
        let c = pos.map(|v| v.round());
        let n = self.as_array();
        if (0..3).all(|a| c[a] >= 0.0 && c[a] < n[a] as f64) {
            Some(self.index(c[0] as usize, c[1] as usize, c[2] as usize))
        } else {
            None
        }
    }
}

impl TryFrom<[usize; 3]> for GridDims {
    type Error = Error;

    fn try_from(v: [usize; 3]) -> Result<Self> {
        GridDims::new(v[0], v[1], v[2])
    }
}

impl From<GridDims> for [usize; 3] {
    fn from(d: GridDims) -> Self {
        d.as_array()
    }
}

/// A dense 3D grid of voxel values in x-fastest order.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    dims: GridDims,
    spacing: [f64; 3],
    data: Vec<T>,
}

pub type ScalarVolume = Grid<f32>;
pub type LabelVolume = Grid<Label>;
pub type BinaryMask = Grid<bool>;

impl<T: Copy> Grid<T> {
    pub fn filled(dims: GridDims, value: T) -> Self {
        Grid {
            dims,
            spacing: [1.0; 3],
            data: vec![value; dims.len()],
        }
    }

    pub fn from_vec(dims: GridDims, data: Vec<T>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::invalid(format!(
                "volume data has {} values, dims require {}",
                data.len(),
                dims.len()
            )));
        }
        Ok(Grid {
            dims,
            spacing: [1.0; 3],
            data,
        })
    }

    pub fn with_spacing(mut self, spacing: [f64; 3]) -> Self {
        self.spacing = spacing;
        self
    }

    pub fn dims(&self) -> GridDims {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> T {
        self.data[self.dims.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, value: T) {
        let i = self.dims.index(x, y, z);
        self.data[i] = value;
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Grid<U> {
        Grid {
            dims: self.dims,
            spacing: self.spacing,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

impl ScalarVolume {
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl BinaryMask {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }
}

/// Exact Euclidean distance (voxel units) from every voxel to the nearest
/// true voxel of `mask`.
///
/// Separable lower-envelope transform on squared distances, one axis at a
/// time. Squared distances stay integral in f64, so the result is the
/// correctly rounded square root of the exact integer squared distance.
pub fn euclidean_distance_transform(mask: &BinaryMask) -> Result<ScalarVolume> {
    let dims = mask.dims();
    if mask.count() == 0 {
        return Err(Error::NoForeground);
    }
    let mut sq: Vec<f64> = mask
        .data()
        .iter()
        .map(|&b| if b { 0.0 } else { f64::INFINITY })
        .collect();

    let [nx, ny, nz] = dims.as_array();
    let longest = nx.max(ny).max(nz);
    let mut line = vec![0.0; longest];
    let mut out = vec![0.0; longest];
    let mut scratch = EnvelopeScratch::new(longest);

    for z in 0..nz {
        for y in 0..ny {
            let base = dims.index(0, y, z);
            transform_line(&mut sq, base, 1, nx, &mut line, &mut out, &mut scratch);
        }
    }
    for z in 0..nz {
        for x in 0..nx {
            let base = dims.index(x, 0, z);
            transform_line(&mut sq, base, nx, ny, &mut line, &mut out, &mut scratch);
        }
    }
    for y in 0..ny {
        for x in 0..nx {
            let base = dims.index(x, y, 0);
            transform_line(&mut sq, base, nx * ny, nz, &mut line, &mut out, &mut scratch);
        }
    }

    let data = sq.into_iter().map(|d| d.sqrt() as f32).collect();
    Ok(Grid {
        dims,
        spacing: mask.spacing(),
        data,
    })
}

struct EnvelopeScratch {
    sites: Vec<usize>,
    bounds: Vec<f64>,
}

impl EnvelopeScratch {
    fn new(n: usize) -> Self {
        EnvelopeScratch {
            sites: vec![0; n],
            bounds: vec![0.0; n + 1],
        }
    }
}

fn transform_line(
    sq: &mut [f64],
    base: usize,
    stride: usize,
    n: usize,
    line: &mut [f64],
    out: &mut [f64],
    scratch: &mut EnvelopeScratch,
) {
    for (i, slot) in line[..n].iter_mut().enumerate() {
        *slot = sq[base + i * stride];
    }
    lower_envelope(&line[..n], &mut out[..n], scratch);
    for (i, &v) in out[..n].iter().enumerate() {
        sq[base + i * stride] = v;
    }
}

/// 1D squared-distance transform of the sampled function `f` (infinite
/// entries are not sites).
fn lower_envelope(f: &[f64], out: &mut [f64], scratch: &mut EnvelopeScratch) {
    let n = f.len();
    let sites = &mut scratch.sites;
    let bounds = &mut scratch.bounds;
    let mut k: usize = 0;
    let mut any = false;
    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        if !any {
            sites[0] = q;
            bounds[0] = f64::NEG_INFINITY;
            bounds[1] = f64::INFINITY;
            any = true;
            continue;
        }
        let qf = q as f64;
        loop {
            let p = sites[k];
            let pf = p as f64;
            let s = ((f[q] + qf * qf) - (f[p] + pf * pf)) / (2.0 * qf - 2.0 * pf);
            if s <= bounds[k] {
                // bounds[0] is -inf, so k never underflows here.
                k -= 1;
                continue;
            }
            k += 1;
            sites[k] = q;
            bounds[k] = s;
            bounds[k + 1] = f64::INFINITY;
            break;
        }
    }
    if !any {
        out.fill(f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (q, slot) in out.iter_mut().enumerate() {
        let qf = q as f64;
        while bounds[k + 1] < qf {
            k += 1;
        }
        let d = qf - sites[k] as f64;
        *slot = d * d + f[sites[k]];
    }
}

/// Voxels whose label satisfies `keep`, in ascending linear-index order.
pub fn masked_values(
    vol: &ScalarVolume,
    mask: &LabelVolume,
    keep: impl Fn(Label) -> bool,
) -> Result<Vec<(usize, f32)>> {
    if vol.dims() != mask.dims() {
        return Err(Error::invalid(format!(
            "dims mismatch: volume {:?} vs mask {:?}",
            vol.dims().as_array(),
            mask.dims().as_array()
        )));
    }
    Ok(mask
        .data()
        .iter()
        .zip(vol.data())
        .enumerate()
        .filter(|(_, (&l, _))| keep(l))
        .map(|(i, (_, &v))| (i, v))
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    U8,
    U16,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::U8 => 1,
            Dtype::U16 => 2,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VolumeHeader {
    dims: [usize; 3],
    spacing: [f64; 3],
    dtype: Dtype,
    order: String,
}

const ORDER: &str = "x-fastest";

/// Voxel types that have an on-disk encoding.
pub trait VoxelCodec: Copy + Sized {
    fn choose_dtype(data: &[Self]) -> Dtype;
    fn encode(data: &[Self], dtype: Dtype, out: &mut Vec<u8>);
    fn decode(bytes: &[u8], dtype: Dtype) -> std::result::Result<Vec<Self>, String>;
}

impl VoxelCodec for f32 {
    fn choose_dtype(_: &[Self]) -> Dtype {
        Dtype::F32
    }

    fn encode(data: &[Self], _: Dtype, out: &mut Vec<u8>) {
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }

    fn decode(bytes: &[u8], dtype: Dtype) -> std::result::Result<Vec<Self>, String> {
        if dtype != Dtype::F32 {
            return Err(format!("scalar volume needs dtype f32, header says {dtype:?}"));
        }
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }
}

impl VoxelCodec for u16 {
    fn choose_dtype(data: &[Self]) -> Dtype {
        if data.iter().all(|&v| v <= u8::MAX as u16) {
            Dtype::U8
        } else {
            Dtype::U16
        }
    }

    fn encode(data: &[Self], dtype: Dtype, out: &mut Vec<u8>) {
        match dtype {
            Dtype::U8 => out.extend(data.iter().map(|&v| v as u8)),
            _ => {
                for v in data {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
    }

    fn decode(bytes: &[u8], dtype: Dtype) -> std::result::Result<Vec<Self>, String> {
        match dtype {
            Dtype::U8 => Ok(bytes.iter().map(|&b| b as u16).collect()),
            Dtype::U16 => Ok(bytes
                .chunks_exact(2)
                .map(|c| u16::from_le_bytes([c[0], c[1]]))
                .collect()),
            Dtype::F32 => Err("label volume cannot be read from dtype f32".into()),
        }
    }
}

impl VoxelCodec for bool {
    fn choose_dtype(_: &[Self]) -> Dtype {
        Dtype::U8
    }

    fn encode(data: &[Self], _: Dtype, out: &mut Vec<u8>) {
        out.extend(data.iter().map(|&b| b as u8));
    }

    fn decode(bytes: &[u8], dtype: Dtype) -> std::result::Result<Vec<Self>, String> {
        if dtype != Dtype::U8 {
            return Err(format!("binary mask needs dtype u8, header says {dtype:?}"));
        }
        bytes
            .iter()
            .map(|&b| match b {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(format!("binary mask holds value {other}")),
            })
            .collect()
    }
}

/// Payload file that sits next to a volume header.
pub fn payload_path(header: &Path) -> PathBuf {
    header.with_extension("raw")
}

/// Writes the JSON header to `path` and the little-endian payload to the
/// sibling `.raw` file.
pub fn write_volume<T: VoxelCodec>(vol: &Grid<T>, path: &Path) -> Result<()> {
    let dtype = T::choose_dtype(vol.data());
    let header = VolumeHeader {
        dims: vol.dims().as_array(),
        spacing: vol.spacing(),
        dtype,
        order: ORDER.to_string(),
    };
    let mut payload = Vec::with_capacity(vol.data().len() * dtype.size());
    T::encode(vol.data(), dtype, &mut payload);
    io::write_json(path, &header)?;
    io::write_bytes(&payload_path(path), &payload)
}

pub fn read_volume<T: VoxelCodec>(path: &Path) -> Result<Grid<T>> {
    let header: VolumeHeader = io::read_json(path)?;
    if header.order != ORDER {
        return Err(Error::format(
            path,
            format!("unsupported voxel order `{}`", header.order),
        ));
    }
    let dims = GridDims::try_from(header.dims).map_err(|e| Error::format(path, e.to_string()))?;
    let raw = payload_path(path);
    let bytes = io::read_bytes(&raw)?;
    let expected = dims.len() * header.dtype.size();
    if bytes.len() != expected {
        return Err(Error::format(
            &raw,
            format!(
                "payload has {} bytes, header requires {expected}",
                bytes.len()
            ),
        ));
    }
    let data = T::decode(&bytes, header.dtype).map_err(|m| Error::format(path, m))?;
    Ok(Grid {
        dims,
        spacing: header.spacing,
        data,
    })
}
