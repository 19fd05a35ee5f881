//! Weight-map and feature visualizations.

use std::path::Path;

use image::RgbImage;
use smfnet_core::model::{Smfnet, Variant};
use smfnet_core::psf::split_sw;
use smfnet_core::{ParamStore, SampleTriplet, Tensor};

use crate::dataset::{gray_image, save_png};
use crate::error::{Error, Result};

/// Channel mean of `|f|`, stretched to `[0, 1]`.
pub fn activation_map(f: &Tensor) -> Tensor {
    let [c, h, w] = f.shape();
    let mut out = Tensor::from_fn([1, h, w], |_, y, x| (0..c).map(|k| f.at(k, y, x).abs()).sum::<f64>() / c as f64);
    let (lo, hi) = (out.min(), out.max());
    if hi > lo {
        out = out.map(|v| (v - lo) / (hi - lo));
    } else {
        out = Tensor::zeros(out.shape());
    }
    out
}

/// Blue-cyan-yellow-red ramp.
fn heat(v: f64) -> [u8; 3] {
    let v = v.clamp(0.0, 1.0);
    let r = (1.5 - (4.0 * v - 3.0).abs()).clamp(0.0, 1.0);
    let g = (1.5 - (4.0 * v - 2.0).abs()).clamp(0.0, 1.0);
    let b = (1.5 - (4.0 * v - 1.0).abs()).clamp(0.0, 1.0);
    [r, g, b].map(|c| (c * 255.0).round() as u8)
}

pub fn heatmap(map: &Tensor) -> RgbImage {
    RgbImage::from_fn(map.width() as u32, map.height() as u32, |x, y| {
        image::Rgb(heat(map.at(0, y as usize, x as usize)))
    })
}

/// Writes `sw5.png`, `sw_s.png`, `sw_ns.png` (gray, input resolution) and
/// `f5_flow.png`, `f5_depth.png`, `f5_fused.png` heatmaps of the deepest level.
pub fn visualize_sw(net: &Smfnet, store: &ParamStore, sample: &SampleTriplet, dir: &Path) -> Result<()> {
    let (h, w) = (sample.height(), sample.width());
    let ins = net.inspect(store, sample, Variant::Full)?;
    let sw = ins
        .sw
        .ok_or_else(|| Error::Config("checkpoint has no weight map".into()))?;
    let sw5 = sw.per_level[sw.per_level.len() - 1].resize_bilinear(h, w);
    let (sw_s, sw_ns) = split_sw(&sw5, &sample.gt)?;
    save_png(&dir.join("sw5.png"), gray_image(&sw5))?;
    save_png(&dir.join("sw_s.png"), gray_image(&sw_s))?;
    save_png(&dir.join("sw_ns.png"), gray_image(&sw_ns))?;
    let up = |t: &Tensor| activation_map(t).resize_nearest(h, w);
    save_png(&dir.join("f5_flow.png"), heatmap(&up(&ins.flow_top)))?;
    save_png(&dir.join("f5_depth.png"), heatmap(&up(&ins.depth_top)))?;
    if let Some(f) = &ins.fused_top {
        save_png(&dir.join("f5_fused.png"), heatmap(&up(f)))?;
    }
    Ok(())
}
