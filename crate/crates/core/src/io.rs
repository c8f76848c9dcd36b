//! On-disk formats.
//!
//! Rasters use a two-file container: `<name>.json` holds the header (dims,
//! element type, byte order, kind, spacing) and `<name>.raw` holds the
//! little-endian payload in row-major order (slice, then depth, then
//! column). Intensities and probabilities are `f32`, masks are `u8` 0/1.
//! Boundaries are a CSV of `boundary,slice,column,depth` rows.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3, ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    unravel, Boundary, BoundarySet, EnFaceImage, OctVolume, PixelMask, ProbabilityMap3D, VoxelMask,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementType {
    F32,
    U8,
}

impl ElementType {
    fn size(self) -> usize {
        match self {
            ElementType::F32 => 4,
            ElementType::U8 => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ByteOrder {
    Little,
}

/// What a container holds; decides the element type and validation rules.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContainerKind {
    Volume,
    Probability,
    Mask,
    EnFace,
    PixelMask,
}

impl ContainerKind {
    fn element_type(self) -> ElementType {
        match self {
            ContainerKind::Mask | ContainerKind::PixelMask => ElementType::U8,
            _ => ElementType::F32,
        }
    }

    fn rank(self) -> usize {
        match self {
            ContainerKind::EnFace | ContainerKind::PixelMask => 2,
            _ => 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContainerHeader {
    pub dims: Vec<usize>,
    pub element_type: ElementType,
    pub byte_order: ByteOrder,
    pub kind: ContainerKind,
    #[serde(default)]
    pub spacing: Option<[f64; 3]>,
}

/// A value read back from a container.
#[derive(Clone, Debug, PartialEq)]
pub enum Stored {
    Volume(OctVolume),
    Probability(ProbabilityMap3D),
    Mask(VoxelMask),
    EnFace(EnFaceImage),
    PixelMask(PixelMask),
}

impl Stored {
    pub fn kind(&self) -> ContainerKind {
        match self {
            Stored::Volume(_) => ContainerKind::Volume,
            Stored::Probability(_) => ContainerKind::Probability,
            Stored::Mask(_) => ContainerKind::Mask,
            Stored::EnFace(_) => ContainerKind::EnFace,
            Stored::PixelMask(_) => ContainerKind::PixelMask,
        }
    }
}

/// Anything that can be written to a raster container.
pub trait Raster {
    fn kind(&self) -> ContainerKind;
    fn dims(&self) -> Vec<usize>;
    fn spacing(&self) -> Option<[f64; 3]> {
        None
    }
    fn payload(&self) -> Vec<u8>;
}

fn f32_payload<'a>(values: impl Iterator<Item = &'a f32>) -> Vec<u8> {
    values.flat_map(|v| v.to_le_bytes()).collect()
}

fn bool_payload<'a>(values: impl Iterator<Item = &'a bool>) -> Vec<u8> {
    values.map(|&v| v as u8).collect()
}

impl Raster for OctVolume {
    fn kind(&self) -> ContainerKind {
        ContainerKind::Volume
    }
    fn dims(&self) -> Vec<usize> {
        self.data().shape().to_vec()
    }
    fn spacing(&self) -> Option<[f64; 3]> {
        OctVolume::spacing(self)
    }
    fn payload(&self) -> Vec<u8> {
        f32_payload(self.data().iter())
    }
}

impl Raster for ProbabilityMap3D {
    fn kind(&self) -> ContainerKind {
        ContainerKind::Probability
    }
    fn dims(&self) -> Vec<usize> {
        self.data().shape().to_vec()
    }
    fn payload(&self) -> Vec<u8> {
        f32_payload(self.data().iter())
    }
}

impl Raster for VoxelMask {
    fn kind(&self) -> ContainerKind {
        ContainerKind::Mask
    }
    fn dims(&self) -> Vec<usize> {
        self.data().shape().to_vec()
    }
    fn payload(&self) -> Vec<u8> {
        bool_payload(self.data().iter())
    }
}

impl Raster for EnFaceImage {
    fn kind(&self) -> ContainerKind {
        ContainerKind::EnFace
    }
    fn dims(&self) -> Vec<usize> {
        self.data().shape().to_vec()
    }
    fn payload(&self) -> Vec<u8> {
        f32_payload(self.data().iter())
    }
}

impl Raster for PixelMask {
    fn kind(&self) -> ContainerKind {
        ContainerKind::PixelMask
    }
    fn dims(&self) -> Vec<usize> {
        self.data().shape().to_vec()
    }
    fn payload(&self) -> Vec<u8> {
        bool_payload(self.data().iter())
    }
}

/// Header and payload paths for a container. `path` may name either file
/// or the bare stem.
pub fn container_paths(path: &Path) -> (PathBuf, PathBuf) {
    let stem = match path.extension().and_then(|e| e.to_str()) {
        Some("json") | Some("raw") => path.with_extension(""),
        _ => path.to_path_buf(),
    };
    let mut json = stem.clone().into_os_string();
    json.push(".json");
    let mut raw = stem.into_os_string();
    raw.push(".raw");
    (json.into(), raw.into())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|source| Error::Write {
        path: path.to_path_buf(),
        source,
    })
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| Error::Read {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_volume<R: Raster + ?Sized>(value: &R, path: &Path) -> Result<()> {
    let (json_path, raw_path) = container_paths(path);
    let kind = value.kind();
    let header = ContainerHeader {
        dims: value.dims(),
        element_type: kind.element_type(),
        byte_order: ByteOrder::Little,
        kind,
        spacing: value.spacing(),
    };
    let mut json = serde_json::to_vec_pretty(&header).expect("header serializes");
    json.push(b'\n');
    write_file(&json_path, &json)?;
    write_file(&raw_path, &value.payload())
}

pub fn read_header(path: &Path) -> Result<ContainerHeader> {
    let (json_path, _) = container_paths(path);
    let bytes = read_file(&json_path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Corrupt {
        path: json_path,
        reason: format!("bad header: {e}"),
    })
}

pub fn read_volume(path: &Path) -> Result<Stored> {
    let (json_path, raw_path) = container_paths(path);
    let header = read_header(path)?;
    let corrupt = |reason: String| Error::Corrupt {
        path: json_path.clone(),
        reason,
    };
    if header.element_type != header.kind.element_type() {
        return Err(corrupt(format!(
            "element type {:?} does not match kind {:?}",
            header.element_type, header.kind
        )));
    }
    if header.dims.len() != header.kind.rank() {
        return Err(corrupt(format!(
            "kind {:?} needs {} dims, header has {:?}",
            header.kind,
            header.kind.rank(),
            header.dims
        )));
    }
    let payload = read_file(&raw_path)?;
    let n: usize = header.dims.iter().product();
    let expected = n * header.element_type.size();
    if payload.len() != expected {
        return Err(Error::Corrupt {
            path: raw_path,
            reason: format!(
                "payload has {} bytes, dims {:?} need {expected}",
                payload.len(),
                header.dims
            ),
        });
    }
    let shape = IxDyn(&header.dims);
    match header.element_type {
        ElementType::F32 => {
            let values: Vec<f32> = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let arr = ArrayD::from_shape_vec(shape, values).expect("length checked");
            Ok(match header.kind {
                ContainerKind::Volume => {
                    Stored::Volume(OctVolume::new(into3(arr), header.spacing)?)
                }
                ContainerKind::Probability => {
                    Stored::Probability(ProbabilityMap3D::new(into3(arr))?)
                }
                ContainerKind::EnFace => Stored::EnFace(EnFaceImage::new(into2(arr))?),
                _ => unreachable!("element type checked"),
            })
        }
        ElementType::U8 => {
            if let Some(i) = payload.iter().position(|&b| b > 1) {
                return Err(Error::Validation(format!(
                    "mask byte {} is not 0/1 at voxel {:?}",
                    payload[i],
                    unravel(i, &header.dims)
                )));
            }
            let values: Vec<bool> = payload.iter().map(|&b| b == 1).collect();
            let arr = ArrayD::from_shape_vec(shape, values).expect("length checked");
            Ok(match header.kind {
                ContainerKind::Mask => Stored::Mask(VoxelMask::new(into3(arr))),
                ContainerKind::PixelMask => Stored::PixelMask(PixelMask::new(into2(arr))),
                _ => unreachable!("element type checked"),
            })
        }
    }
}

fn into3<T>(a: ArrayD<T>) -> Array3<T> {
    a.into_dimensionality().expect("rank checked")
}

fn into2<T>(a: ArrayD<T>) -> Array2<T> {
    a.into_dimensionality().expect("rank checked")
}

fn wrong_kind(path: &Path, want: ContainerKind, got: ContainerKind) -> Error {
    Error::Corrupt {
        path: path.to_path_buf(),
        reason: format!("expected a {want:?} container, found {got:?}"),
    }
}

pub fn read_oct_volume(path: &Path) -> Result<OctVolume> {
    match read_volume(path)? {
        Stored::Volume(v) => Ok(v),
        other => Err(wrong_kind(path, ContainerKind::Volume, other.kind())),
    }
}

pub fn read_voxel_mask(path: &Path) -> Result<VoxelMask> {
    match read_volume(path)? {
        Stored::Mask(v) => Ok(v),
        other => Err(wrong_kind(path, ContainerKind::Mask, other.kind())),
    }
}

pub fn read_probability(path: &Path) -> Result<ProbabilityMap3D> {
    match read_volume(path)? {
        Stored::Probability(v) => Ok(v),
        other => Err(wrong_kind(path, ContainerKind::Probability, other.kind())),
    }
}

pub fn read_enface(path: &Path) -> Result<EnFaceImage> {
    match read_volume(path)? {
        Stored::EnFace(v) => Ok(v),
        other => Err(wrong_kind(path, ContainerKind::EnFace, other.kind())),
    }
}

pub fn read_pixel_mask(path: &Path) -> Result<PixelMask> {
    match read_volume(path)? {
        Stored::PixelMask(v) => Ok(v),
        other => Err(wrong_kind(path, ContainerKind::PixelMask, other.kind())),
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct BoundaryRow {
    boundary: String,
    slice: usize,
    column: usize,
    depth: f64,
}

pub fn write_boundaries(b: &BoundarySet, path: &Path) -> Result<()> {
    let write_err = |e: csv::Error| Error::Write {
        path: path.to_path_buf(),
        source: e.into(),
    };
    let mut w = csv::Writer::from_path(path).map_err(write_err)?;
    let [n_slices, width] = b.plane();
    for boundary in Boundary::ALL {
        for slice in 0..n_slices {
            for column in 0..width {
                w.serialize(BoundaryRow {
                    boundary: boundary.name().to_string(),
                    slice,
                    column,
                    depth: b.depth(boundary, slice, column),
                })
                .map_err(write_err)?;
            }
        }
    }
    w.flush().map_err(|source| Error::Write {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_boundaries(path: &Path) -> Result<BoundarySet> {
    let corrupt = |reason: String| Error::Corrupt {
        path: path.to_path_buf(),
        reason,
    };
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Read {
        path: path.to_path_buf(),
        source: e.into(),
    })?;
    let mut rows: [Vec<(usize, usize, f64)>; 4] = Default::default();
    for (line, rec) in r.deserialize::<BoundaryRow>().enumerate() {
        let row = rec.map_err(|e| corrupt(format!("row {}: {e}", line + 1)))?;
        let b = Boundary::from_name(&row.boundary)
            .ok_or_else(|| corrupt(format!("unknown boundary {:?}", row.boundary)))?;
        rows[b as usize].push((row.slice, row.column, row.depth));
    }
    for b in Boundary::ALL {
        if rows[b as usize].is_empty() {
            return Err(Error::IncompleteSet(format!("no rows for {b}")));
        }
    }
    let n_slices = rows.iter().flatten().map(|r| r.0).max().unwrap_or(0) + 1;
    let width = rows.iter().flatten().map(|r| r.1).max().unwrap_or(0) + 1;
    let mut surfaces: [Array2<f64>; 4] =
        std::array::from_fn(|_| Array2::from_elem((n_slices, width), f64::NAN));
    for b in Boundary::ALL {
        let surf = &mut surfaces[b as usize];
        for &(s, x, d) in &rows[b as usize] {
            if !surf[[s, x]].is_nan() {
                return Err(corrupt(format!(
                    "duplicate {b} row at (slice {s}, column {x})"
                )));
            }
            if d.is_nan() {
                return Err(corrupt(format!("NaN {b} depth at (slice {s}, column {x})")));
            }
            surf[[s, x]] = d;
        }
        if let Some(((s, x), _)) = surf.indexed_iter().find(|(_, v)| v.is_nan()) {
            return Err(Error::IncompleteSet(format!(
                "{b} missing at (slice {s}, column {x})"
            )));
        }
    }
    BoundarySet::new(surfaces)
}

/// Writes an 8-bit binary PGM, mapping [0,1] to [0,255].
pub fn write_pgm(image: &Array2<f32>, path: &Path) -> Result<()> {
    let (h, w) = image.dim();
    let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
    bytes.extend(
        image
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    let mut f = fs::File::create(path).map_err(|source| Error::Write {
        path: path.to_path_buf(),
        source,
    })?;
    f.write_all(&bytes).map_err(|source| Error::Write {
        path: path.to_path_buf(),
        source,
    })
}

pub fn mask_to_image(mask: &Array2<bool>) -> Array2<f32> {
    mask.mapv(|v| if v { 1.0 } else { 0.0 })
}
