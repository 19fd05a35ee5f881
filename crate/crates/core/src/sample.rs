use alloc::string::String;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::MAX_STRIDE;

/// One aligned RGB / flow-rendering / depth / ground-truth frame group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleTriplet {
    pub rgb: Tensor,
    pub flow: Tensor,
    pub depth: Tensor,
    pub gt: Tensor,
    pub sequence_id: String,
    pub frame_index: usize,
}

impl SampleTriplet {
    pub fn height(&self) -> usize {
        self.gt.height()
    }

    pub fn width(&self) -> usize {
        self.gt.width()
    }

    /// Checks shapes, value ranges, GT binarity and the stride-32 size rule.
    pub fn validate(&self) -> Result<()> {
        let (h, w) = (self.height(), self.width());
        check_size("sample", h, w)?;
        if self.gt.channels() != 1 {
            return Err(Error::ShapeMismatch {
                op: "sample.gt",
                left: self.gt.shape(),
                right: [1, h, w],
            });
        }
        for t in [&self.rgb, &self.flow, &self.depth] {
            if t.shape() != [3, h, w] {
                return Err(Error::ShapeMismatch {
                    op: "sample",
                    left: t.shape(),
                    right: [3, h, w],
                });
            }
            if t.has_nan() {
                return Err(Error::NotFinite { op: "sample" });
            }
            if t.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::OutOfRange { op: "sample" });
            }
        }
        if !self.gt.is_binary() {
            return Err(Error::NonBinary { op: "sample.gt" });
        }
        Ok(())
    }

    /// Fraction of salient GT pixels.
    pub fn salient_fraction(&self) -> f64 {
        self.gt.mean()
    }
}

/// Rejects spatial sizes the five stride-2 stages cannot divide.
pub fn check_size(op: &'static str, height: usize, width: usize) -> Result<()> {
    if height == 0 || width == 0 || !height.is_multiple_of(MAX_STRIDE) || !width.is_multiple_of(MAX_STRIDE) {
        return Err(Error::NotDivisible {
            op,
            height,
            width,
            factor: MAX_STRIDE,
        });
    }
    Ok(())
}

/// Re-binarizes a resized mask at 0.5.
pub fn binarize(gt: &Tensor) -> Tensor {
    gt.map(|v| if v >= 0.5 { 1.0 } else { 0.0 })
}

/// Per-image min-max normalization; a constant image is returned unchanged.
pub fn normalize_depth(depth: &Tensor) -> Tensor {
    let (lo, hi) = (depth.min(), depth.max());
    if hi > lo {
        depth.map(|v| (v - lo) / (hi - lo))
    } else {
        depth.clone()
    }
}

/// Single-channel map with every value in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaliencyMap(Tensor);

impl SaliencyMap {
    pub fn new(values: Tensor) -> Result<Self> {
        if values.channels() != 1 {
            return Err(Error::ShapeMismatch {
                op: "saliency_map",
                left: values.shape(),
                right: [1, values.height(), values.width()],
            });
        }
        if values.has_nan() {
            return Err(Error::NotFinite { op: "saliency_map" });
        }
        if values.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::OutOfRange { op: "saliency_map" });
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(h: usize, w: usize) -> SampleTriplet {
        SampleTriplet {
            rgb: Tensor::full([3, h, w], 0.5),
            flow: Tensor::full([3, h, w], 1.0),
            depth: Tensor::full([3, h, w], 0.0),
            gt: Tensor::from_fn([1, h, w], |_, y, _| (y < h / 2) as u8 as f64),
            sequence_id: "s".into(),
            frame_index: 0,
        }
    }

    #[test]
    fn valid_sample_passes() {
        sample(64, 32).validate().unwrap();
    }

    #[test]
    fn size_must_divide_by_32() {
        assert!(matches!(sample(48, 32).validate(), Err(Error::NotDivisible { .. })));
    }

    #[test]
    fn gt_must_be_binary() {
        let mut s = sample(32, 32);
        s.gt.set(0, 0, 0, 0.5);
        assert!(matches!(s.validate(), Err(Error::NonBinary { .. })));
    }

    #[test]
    fn saliency_map_range_checked() {
        assert!(SaliencyMap::new(Tensor::full([1, 2, 2], 1.5)).is_err());
        assert!(SaliencyMap::new(Tensor::full([2, 2, 2], 0.5)).is_err());
        assert!(SaliencyMap::new(Tensor::full([1, 2, 2], 0.5)).is_ok());
    }
}
