//! Dataset directory trees: `<root>/<seq>/{RGB,Flow,Depth,GT}/<frame>.png`.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, RgbImage};
use serde::{Deserialize, Serialize};
use smfnet_core::sample::{binarize, check_size, normalize_depth};
use smfnet_core::{SampleTriplet, Tensor};

use crate::error::{Error, IoContext, Result};

/// Modality sub-directories, in the order RGB, flow, depth, GT.
pub const MODALITY_DIRS: [&str; 4] = ["RGB", "Flow", "Depth", "GT"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Test,
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}` (expected train or test)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameFiles {
    /// File stem shared by the four images.
    pub name: String,
    pub frame_index: usize,
    pub rgb: PathBuf,
    pub flow: PathBuf,
    pub depth: PathBuf,
    pub gt: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceIndex {
    pub id: String,
    pub frames: Vec<FrameFiles>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub root: PathBuf,
    pub split: Split,
    pub sequences: Vec<SequenceIndex>,
}

impl DatasetIndex {
    pub fn len(&self) -> usize {
        self.sequences.iter().map(|s| s.frames.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Frames in sequence order.
    pub fn frames(&self) -> impl Iterator<Item = (&SequenceIndex, &FrameFiles)> {
        self.sequences.iter().flat_map(|s| s.frames.iter().map(move |f| (s, f)))
    }

    pub fn frame(&self, i: usize) -> Result<(&SequenceIndex, &FrameFiles)> {
        self.frames().nth(i).ok_or(Error::FrameIndex {
            index: i,
            count: self.len(),
        })
    }
}

fn stems(dir: &Path) -> Result<BTreeSet<String>> {
    if !dir.is_dir() {
        return Ok(BTreeSet::new());
    }
    let mut out = BTreeSet::new();
    for entry in fs::read_dir(dir).at(dir)? {
        let path = entry.at(dir)?.path();
        if path.extension().and_then(|e| e.to_str()).map(|e| e.eq_ignore_ascii_case("png")) == Some(true) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.insert(stem.to_string());
            }
        }
    }
    Ok(out)
}

/// Indexes a dataset root. Every frame must have all four images; the test
/// split drops the last frame of each sequence, which has no forward flow.
pub fn load_dataset(root: &Path, split: Split) -> Result<DatasetIndex> {
    let mut seq_dirs: Vec<PathBuf> = Vec::new();
    for entry in fs::read_dir(root).at(root)? {
        let path = entry.at(root)?.path();
        if path.is_dir() {
            seq_dirs.push(path);
        }
    }
    seq_dirs.sort();
    if seq_dirs.is_empty() {
        return Err(Error::NoSequences(root.to_path_buf()));
    }
    let mut sequences = Vec::new();
    for dir in seq_dirs {
        let id = dir.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        let per_modality: Vec<BTreeSet<String>> = MODALITY_DIRS
            .iter()
            .map(|m| stems(&dir.join(m)))
            .collect::<Result<_>>()?;
        let all: BTreeSet<&String> = per_modality.iter().flatten().collect();
        if all.is_empty() {
            return Err(Error::EmptySequence(id));
        }
        let mut frames = Vec::with_capacity(all.len());
        for (frame_index, name) in all.into_iter().enumerate() {
            for (m, set) in MODALITY_DIRS.iter().zip(&per_modality) {
                if !set.contains(name) {
                    return Err(Error::MissingFrame {
                        sequence: id.clone(),
                        frame: name.clone(),
                        modality: m,
                    });
                }
            }
            let file = |m: &str| dir.join(m).join(format!("{name}.png"));
            frames.push(FrameFiles {
                name: name.clone(),
                frame_index,
                rgb: file("RGB"),
                flow: file("Flow"),
                depth: file("Depth"),
                gt: file("GT"),
            });
        }
        if split == Split::Test {
            frames.pop();
        }
        sequences.push(SequenceIndex { id, frames });
    }
    let index = DatasetIndex {
        root: root.to_path_buf(),
        split,
        sequences,
    };
    if index.is_empty() {
        return Err(Error::NoTestableFrames);
    }
    Ok(index)
}

fn open(path: &Path) -> Result<image::DynamicImage> {
    image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

fn rgb_tensor(img: &RgbImage) -> Tensor {
    let (w, h) = img.dimensions();
    Tensor::from_fn([3, h as usize, w as usize], |c, y, x| {
        img.get_pixel(x as u32, y as u32).0[c] as f64 / 255.0
    })
}

fn gray_tensor(img: &GrayImage) -> Tensor {
    let (w, h) = img.dimensions();
    Tensor::from_fn([1, h as usize, w as usize], |_, y, x| {
        img.get_pixel(x as u32, y as u32).0[0] as f64 / 255.0
    })
}

/// Reads one frame group and resizes every modality to `height × width`.
/// Depth is min-max normalized per image; GT is re-binarized at 0.5.
pub fn load_frame(
    sequence_id: &str,
    frame: &FrameFiles,
    (height, width): (usize, usize),
) -> Result<SampleTriplet> {
    check_size("load_sample", height, width)?;
    let rgb = rgb_tensor(&open(&frame.rgb)?.to_rgb8()).resize_bilinear(height, width);
    let flow = rgb_tensor(&open(&frame.flow)?.to_rgb8()).resize_bilinear(height, width);
    let depth = normalize_depth(&gray_tensor(&open(&frame.depth)?.to_luma8()).resize_bilinear(height, width));
    let depth = Tensor::concat(&[&depth, &depth, &depth])?;
    let gt = binarize(&gray_tensor(&open(&frame.gt)?.to_luma8()).resize_bilinear(height, width));
    let sample = SampleTriplet {
        rgb,
        flow,
        depth,
        gt,
        sequence_id: sequence_id.to_string(),
        frame_index: frame.frame_index,
    };
    sample.validate()?;
    Ok(sample)
}

pub fn load_sample(index: &DatasetIndex, i: usize, size: (usize, usize)) -> Result<SampleTriplet> {
    let (seq, frame) = index.frame(i)?;
    load_frame(&seq.id, frame, size)
}

/// Loads every frame of an index in order.
pub fn load_all(index: &DatasetIndex, size: (usize, usize)) -> Result<Vec<SampleTriplet>> {
    index.frames().map(|(s, f)| load_frame(&s.id, f, size)).collect()
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn rgb_image(t: &Tensor) -> RgbImage {
    RgbImage::from_fn(t.width() as u32, t.height() as u32, |x, y| {
        image::Rgb([0, 1, 2].map(|c| to_u8(t.at(c, y as usize, x as usize))))
    })
}

/// First channel as 8-bit gray.
pub fn gray_image(t: &Tensor) -> GrayImage {
    GrayImage::from_fn(t.width() as u32, t.height() as u32, |x, y| {
        image::Luma([to_u8(t.at(0, y as usize, x as usize))])
    })
}

pub fn save_png(path: &Path, img: impl Into<image::DynamicImage>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).at(parent)?;
    }
    img.into().save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes one sample into the dataset layout under `root`.
pub fn write_sample(root: &Path, name: &str, sample: &SampleTriplet) -> Result<()> {
    let dir = root.join(&sample.sequence_id);
    save_png(&dir.join("RGB").join(format!("{name}.png")), rgb_image(&sample.rgb))?;
    save_png(&dir.join("Flow").join(format!("{name}.png")), rgb_image(&sample.flow))?;
    save_png(&dir.join("Depth").join(format!("{name}.png")), gray_image(&sample.depth))?;
    save_png(&dir.join("GT").join(format!("{name}.png")), gray_image(&sample.gt))?;
    Ok(())
}

/// Zero-padded frame file stem, so lexicographic order is frame order.
pub fn frame_name(index: usize) -> String {
    format!("{index:05}")
}

pub fn check_input_size((height, width): (usize, usize)) -> Result<()> {
    check_size("input_size", height, width)?;
    Ok(())
}
