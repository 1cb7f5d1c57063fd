//! Panorama feature stores and heading-aligned slice extraction.
//!
//! Store file layout (little-endian):
//!
//! ```text
//! magic "SNPF" | version u32 | variant u8 | slices u32 | channels u32 | dim u32 | nodes u32
//! per node: id_len u32 | id bytes | slices*channels*dim f32
//! ```
//!
//! `slices` is 8 for the pre-final and semseg variants and the map width for
//! the fourth-to-last variant, whose per-column data is `channels x dim`.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const NUM_SLICES: usize = 8;
pub const SELECTED_SLICES: usize = 5;
pub const SLICE_FOV: f64 = 60.0;
pub const SEMSEG_CLASSES: usize = 25;
pub const FOURTH_WINDOW: usize = 100;
pub const FOURTH_HEIGHT: usize = 100;
pub const DEFAULT_PREFINAL_DIM: usize = 64;
pub const DEFAULT_FOURTH_WIDTH: usize = 464;

const MAGIC: &[u8; 4] = b"SNPF";
const VERSION: u32 = 1;

/// Fixed segmentation class table.
pub const SEMSEG_CLASS_NAMES: [&str; SEMSEG_CLASSES] = [
    "road", "sidewalk", "building", "sky", "vegetation", "car", "person", "bicycle", "bus",
    "truck", "traffic-light", "traffic-sign", "pole", "fence", "wall", "terrain", "water",
    "bench", "hydrant", "mailbox", "awning", "scaffolding", "signage", "storefront", "banner",
];

#[derive(Debug, Error)]
pub enum PanoError {
    #[error("node `{0}` missing from feature store")]
    MissingNode(String),

    #[error("store holds {found:?} features, {wanted:?} requested")]
    WrongVariant {
        found: PanoVariant,
        wanted: PanoVariant,
    },

    #[error("extraction window of {window} columns exceeds {available} concatenated columns")]
    Window { window: usize, available: usize },

    #[error("invalid feature store: {0}")]
    Invalid(String),

    #[error("feature store i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PanoVariant {
    PreFinal,
    FourthToLast,
    Semseg,
    None,
}

impl PanoVariant {
    fn code(self) -> u8 {
        match self {
            PanoVariant::PreFinal => 0,
            PanoVariant::FourthToLast => 1,
            PanoVariant::Semseg => 2,
            PanoVariant::None => 3,
        }
    }

    fn from_code(c: u8) -> Result<Self, PanoError> {
        Ok(match c {
            0 => PanoVariant::PreFinal,
            1 => PanoVariant::FourthToLast,
            2 => PanoVariant::Semseg,
            3 => PanoVariant::None,
            _ => return Err(PanoError::Invalid(format!("variant code {c}"))),
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PanoVariant::PreFinal => "pre-final",
            PanoVariant::FourthToLast => "fourth-to-last",
            PanoVariant::Semseg => "semseg",
            PanoVariant::None => "none",
        }
    }

    /// `(slice count, slice width)` of what extraction yields.
    pub fn slice_shape(self, dim: usize) -> (usize, usize) {
        match self {
            PanoVariant::PreFinal => (SELECTED_SLICES, dim),
            PanoVariant::Semseg => (SELECTED_SLICES, SEMSEG_CLASSES),
            PanoVariant::FourthToLast => (FOURTH_WINDOW, FOURTH_HEIGHT),
            PanoVariant::None => (0, 0),
        }
    }
}

/// Slice vectors in left-to-right order relative to `heading`.
#[derive(Clone, Debug, PartialEq)]
pub struct SliceSet {
    pub heading: f64,
    pub width: usize,
    pub data: Vec<f32>,
}

impl SliceSet {
    pub fn len(&self) -> usize {
        if self.width == 0 {
            0
        } else {
            self.data.len() / self.width
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn slice(&self, i: usize) -> &[f32] {
        &self.data[i * self.width..(i + 1) * self.width]
    }
}

/// Indices of the five slices around `heading`, left to right. The heading
/// snaps to the nearest slice center `i * 45`.
pub fn slice_selection(heading: f64) -> [usize; SELECTED_SLICES] {
    let c = center_slice(heading);
    std::array::from_fn(|j| (c + NUM_SLICES + j - 2) % NUM_SLICES)
}

fn center_slice(heading: f64) -> usize {
    let step = 360.0 / NUM_SLICES as f64;
    ((heading.rem_euclid(360.0) / step).round() as usize) % NUM_SLICES
}

/// Column of the fourth-to-last map nearest to `azimuth`.
pub fn azimuth_column(azimuth: f64, width: usize) -> usize {
    ((azimuth.rem_euclid(360.0) * width as f64 / 360.0).round() as usize) % width
}

fn slice_start_column(i: usize, width: usize) -> i64 {
    let deg = i as f64 * 360.0 / NUM_SLICES as f64 - SLICE_FOV / 2.0;
    (deg * width as f64 / 360.0).round() as i64
}

fn slice_width_columns(width: usize) -> usize {
    (SLICE_FOV * width as f64 / 360.0).round() as usize
}

#[derive(Clone, Debug, PartialEq)]
pub struct PanoFeatureStore {
    variant: PanoVariant,
    slices: usize,
    channels: usize,
    dim: usize,
    ids: Vec<String>,
    index: HashMap<String, usize>,
    data: Vec<f32>,
}

impl PanoFeatureStore {
    /// `data` holds `nodes * slices * channels * dim` values in node order.
    pub fn new(
        variant: PanoVariant,
        slices: usize,
        channels: usize,
        dim: usize,
        ids: Vec<String>,
        data: Vec<f32>,
    ) -> Result<Self, PanoError> {
        match variant {
            PanoVariant::PreFinal | PanoVariant::Semseg if slices != NUM_SLICES || channels != 1 => {
                return Err(PanoError::Invalid(format!(
                    "{} stores need {NUM_SLICES} slices and 1 channel",
                    variant.as_str()
                )))
            }
            PanoVariant::Semseg if dim != SEMSEG_CLASSES => {
                return Err(PanoError::Invalid(format!("semseg dim {dim}")))
            }
            PanoVariant::FourthToLast if dim != FOURTH_HEIGHT || channels == 0 => {
                return Err(PanoError::Invalid(format!(
                    "fourth-to-last columns must be {FOURTH_HEIGHT} high with channels, got {channels}x{dim}"
                )))
            }
            PanoVariant::None if !data.is_empty() => {
                return Err(PanoError::Invalid("none store carries data".into()))
            }
            _ => {}
        }
        let per = slices * channels * dim;
        if data.len() != per * ids.len() {
            return Err(PanoError::Invalid(format!(
                "{} values for {} nodes of {per}",
                data.len(),
                ids.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(PanoError::Invalid("non-finite feature value".into()));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(PanoError::Invalid(format!("duplicate node `{id}`")));
            }
        }
        let store = PanoFeatureStore {
            variant,
            slices,
            channels,
            dim,
            ids,
            index,
            data,
        };
        if variant == PanoVariant::Semseg {
            store.validate_semseg()?;
        }
        Ok(store)
    }

    /// Store for the image-free baseline.
    pub fn none(ids: Vec<String>) -> Self {
        PanoFeatureStore::new(PanoVariant::None, 0, 0, 0, ids, Vec::new()).expect("empty store")
    }

    fn validate_semseg(&self) -> Result<(), PanoError> {
        for (n, chunk) in self.data.chunks(SEMSEG_CLASSES).enumerate() {
            let sum: f64 = chunk.iter().map(|&v| v as f64).sum();
            if chunk.iter().any(|&v| v < 0.0) || (sum - 1.0).abs() > 1e-5 {
                return Err(PanoError::Invalid(format!(
                    "semseg slice {} of node `{}` sums to {sum}",
                    n % NUM_SLICES,
                    self.ids[n / NUM_SLICES]
                )));
            }
        }
        Ok(())
    }

    pub fn variant(&self) -> PanoVariant {
        self.variant
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Number of stored slices (or map columns).
    pub fn slices(&self) -> usize {
        self.slices
    }

    pub fn node_ids(&self) -> &[String] {
        &self.ids
    }

    /// `(slice count, slice width)` of extracted slice sets.
    pub fn slice_shape(&self) -> (usize, usize) {
        self.variant.slice_shape(self.dim)
    }

    fn node_data(&self, node: &str) -> Result<&[f32], PanoError> {
        let i = *self
            .index
            .get(node)
            .ok_or_else(|| PanoError::MissingNode(node.to_string()))?;
        let per = self.slices * self.channels * self.dim;
        Ok(&self.data[i * per..(i + 1) * per])
    }

    fn expect(&self, wanted: PanoVariant) -> Result<(), PanoError> {
        if self.variant == wanted {
            Ok(())
        } else {
            Err(PanoError::WrongVariant {
                found: self.variant,
                wanted,
            })
        }
    }

    fn select_slices(&self, node: &str, heading: f64) -> Result<SliceSet, PanoError> {
        let raw = self.node_data(node)?;
        let mut data = Vec::with_capacity(SELECTED_SLICES * self.dim);
        for i in slice_selection(heading) {
            data.extend_from_slice(&raw[i * self.dim..(i + 1) * self.dim]);
        }
        Ok(SliceSet {
            heading,
            width: self.dim,
            data,
        })
    }

    pub fn extract_prefinal(&self, node: &str, heading: f64) -> Result<SliceSet, PanoError> {
        self.expect(PanoVariant::PreFinal)?;
        self.select_slices(node, heading)
    }

    pub fn extract_semseg(&self, node: &str, heading: f64) -> Result<SliceSet, PanoError> {
        self.expect(PanoVariant::Semseg)?;
        self.select_slices(node, heading)
    }

    /// Concatenates the five selected slices of the feature map along the
    /// width, averages channels and cuts a 100-column window centered on the
    /// heading column.
    pub fn extract_fourth(&self, node: &str, heading: f64) -> Result<SliceSet, PanoError> {
        self.expect(PanoVariant::FourthToLast)?;
        let raw = self.node_data(node)?;
        let w = self.slices;
        let sw = slice_width_columns(w);
        let available = sw * SELECTED_SLICES;
        if available < FOURTH_WINDOW {
            return Err(PanoError::Window {
                window: FOURTH_WINDOW,
                available,
            });
        }
        let selection = slice_selection(heading);
        let center = selection[2];
        let center_start = slice_start_column(center, w);
        let offset = (azimuth_column(heading, w) as i64 - center_start).rem_euclid(w as i64) as usize;
        let heading_pos = 2 * sw + offset;
        let start = heading_pos as i64 - (FOURTH_WINDOW / 2) as i64;
        if start < 0 || start as usize + FOURTH_WINDOW > available {
            return Err(PanoError::Window {
                window: FOURTH_WINDOW,
                available,
            });
        }
        let col_len = self.channels * self.dim;
        let inv = 1.0 / self.channels as f32;
        let mut data = Vec::with_capacity(FOURTH_WINDOW * self.dim);
        for pos in start as usize..start as usize + FOURTH_WINDOW {
            let slice = selection[pos / sw];
            let col = (slice_start_column(slice, w) + (pos % sw) as i64).rem_euclid(w as i64) as usize;
            let column = &raw[col * col_len..(col + 1) * col_len];
            for h in 0..self.dim {
                let s: f32 = (0..self.channels).map(|c| column[c * self.dim + h]).sum();
                data.push(s * inv);
            }
        }
        Ok(SliceSet {
            heading,
            width: self.dim,
            data,
        })
    }

    /// Dispatches on the store variant; `None` yields an empty set.
    pub fn extract(&self, node: &str, heading: f64) -> Result<SliceSet, PanoError> {
        match self.variant {
            PanoVariant::PreFinal => self.extract_prefinal(node, heading),
            PanoVariant::Semseg => self.extract_semseg(node, heading),
            PanoVariant::FourthToLast => self.extract_fourth(node, heading),
            PanoVariant::None => {
                self.node_data(node)?;
                Ok(SliceSet {
                    heading,
                    width: 0,
                    data: Vec::new(),
                })
            }
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + self.data.len() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.variant.code());
        for v in [self.slices, self.channels, self.dim, self.ids.len()] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        let per = self.slices * self.channels * self.dim;
        for (i, id) in self.ids.iter().enumerate() {
            out.extend_from_slice(&(id.len() as u32).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
            for v in &self.data[i * per..(i + 1) * per] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, PanoError> {
        let mut r = bytes;
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(PanoError::Invalid("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(PanoError::Invalid(format!("unsupported version {version}")));
        }
        let mut code = [0u8; 1];
        read_exact(&mut r, &mut code)?;
        let variant = PanoVariant::from_code(code[0])?;
        let slices = read_u32(&mut r)? as usize;
        let channels = read_u32(&mut r)? as usize;
        let dim = read_u32(&mut r)? as usize;
        let n = read_u32(&mut r)? as usize;
        let per = slices * channels * dim;
        let mut ids = Vec::with_capacity(n);
        let mut data = Vec::with_capacity(n * per);
        for _ in 0..n {
            let len = read_u32(&mut r)? as usize;
            let mut id = vec![0u8; len];
            read_exact(&mut r, &mut id)?;
            ids.push(String::from_utf8(id).map_err(|_| PanoError::Invalid("node id is not utf-8".into()))?);
            if r.len() < per * 4 {
                return Err(PanoError::Invalid("truncated feature data".into()));
            }
            let (chunk, rest) = r.split_at(per * 4);
            data.extend(chunk.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])));
            r = rest;
        }
        if !r.is_empty() {
            return Err(PanoError::Invalid(format!("{} trailing bytes", r.len())));
        }
        PanoFeatureStore::new(variant, slices, channels, dim, ids, data)
    }

    pub fn save(&self, path: &Path) -> Result<(), PanoError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(&self.encode())?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, PanoError> {
        PanoFeatureStore::decode(&std::fs::read(path)?)
    }
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<(), PanoError> {
    r.read_exact(buf)
        .map_err(|_| PanoError::Invalid("truncated header".into()))
}

fn read_u32(r: &mut &[u8]) -> Result<u32, PanoError> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}
