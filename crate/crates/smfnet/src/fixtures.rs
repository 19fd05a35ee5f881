//! Fixture spec files and on-disk fixture datasets.
//!
//! ```text
//! sequence = fixture
//! frames = 8
//! size = 64x64
//! noise = 0.01
//! jitter = 0.05
//! depth_corrupt = constant:0.5     # none | constant:V | salt:P | wrong_object
//! flow_corrupt = none
//! object = size=0.3 y=0.15 x=0.1 dy=0.05 dx=0.07 depth=0.9 color=0.85,0.25,0.2
//! object = size=0.25 y=0.6 x=0.6 depth=0.35
//! ```
//!
//! The first `object` line is the salient one. Omitting every `object` line
//! keeps the default pair (a moving salient square and a static distractor).

use std::path::Path;

use smfnet_core::fixture::{render, Corruption, FixtureSpec, ObjectSpec};

use crate::dataset::{frame_name, load_dataset, write_sample, DatasetIndex, Split};
use crate::error::{Error, Result};
use crate::kv::{parse_size, KvFile};

const KEYS: &[&str] = &[
    "sequence",
    "frames",
    "size",
    "noise",
    "jitter",
    "depth_corrupt",
    "flow_corrupt",
    "object",
    "seed",
];

pub fn parse_corruption(v: &str) -> Result<Corruption> {
    let bad = || Error::Config(format!("bad corruption `{v}`"));
    let (kind, arg) = match v.split_once(':') {
        Some((k, a)) => (k.trim(), Some(a.trim().parse::<f64>().map_err(|_| bad())?)),
        None => (v.trim(), None),
    };
    match (kind, arg) {
        ("none", None) => Ok(Corruption::None),
        ("constant", a) => Ok(Corruption::Constant(a.unwrap_or(0.5))),
        ("salt", a) => Ok(Corruption::Salt(a.unwrap_or(0.3))),
        ("wrong_object", None) => Ok(Corruption::WrongObject),
        _ => Err(bad()),
    }
}

pub fn format_corruption(c: Corruption) -> String {
    match c {
        Corruption::None => "none".into(),
        Corruption::Constant(v) => format!("constant:{v}"),
        Corruption::Salt(p) => format!("salt:{p}"),
        Corruption::WrongObject => "wrong_object".into(),
    }
}

fn parse_object(v: &str) -> Result<ObjectSpec> {
    let mut o = ObjectSpec {
        size: 0.25,
        y: 0.0,
        x: 0.0,
        dy: 0.0,
        dx: 0.0,
        depth: 0.5,
        color: [0.5; 3],
    };
    for field in v.split_whitespace() {
        let bad = || Error::Config(format!("bad object field `{field}`"));
        let (k, val) = field.split_once('=').ok_or_else(bad)?;
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
        match k {
            "size" => o.size = num(val)?,
            "y" => o.y = num(val)?,
            "x" => o.x = num(val)?,
            "dy" => o.dy = num(val)?,
            "dx" => o.dx = num(val)?,
            "depth" => o.depth = num(val)?,
            "color" => {
                let parts: Vec<f64> = val.split(',').map(num).collect::<Result<_>>()?;
                o.color = parts.try_into().map_err(|_| bad())?;
            }
            _ => return Err(bad()),
        }
    }
    Ok(o)
}

/// Builds a spec from a key-value file. Returns the spec and an optional seed.
pub fn spec_from_kv(kv: &KvFile) -> Result<(FixtureSpec, Option<u64>)> {
    kv.reject_unknown(KEYS)?;
    let mut spec = FixtureSpec::default();
    if let Some(s) = kv.get("sequence") {
        spec.sequence_id = s.to_string();
    }
    if let Some(f) = kv.parsed("frames")? {
        spec.frames = f;
    }
    if let Some(s) = kv.get("size") {
        (spec.height, spec.width) = parse_size(s).ok_or_else(|| Error::Config(format!("bad size `{s}`")))?;
    }
    if let Some(n) = kv.parsed("noise")? {
        spec.noise = n;
    }
    if let Some(j) = kv.parsed("jitter")? {
        spec.jitter = j;
    }
    if let Some(c) = kv.get("depth_corrupt") {
        spec.depth_corrupt = parse_corruption(c)?;
    }
    if let Some(c) = kv.get("flow_corrupt") {
        spec.flow_corrupt = parse_corruption(c)?;
    }
    let objects: Vec<ObjectSpec> = kv.get_all("object").map(parse_object).collect::<Result<_>>()?;
    if !objects.is_empty() {
        spec.objects = objects;
    }
    spec.validate()?;
    Ok((spec, kv.parsed("seed")?))
}

pub fn spec_to_kv(spec: &FixtureSpec, seed: Option<u64>) -> String {
    let mut out = format!(
        "sequence = {}\nframes = {}\nsize = {}x{}\nnoise = {}\njitter = {}\ndepth_corrupt = {}\nflow_corrupt = {}\n",
        spec.sequence_id,
        spec.frames,
        spec.height,
        spec.width,
        spec.noise,
        spec.jitter,
        format_corruption(spec.depth_corrupt),
        format_corruption(spec.flow_corrupt),
    );
    for o in &spec.objects {
        out += &format!(
            "object = size={} y={} x={} dy={} dx={} depth={} color={},{},{}\n",
            o.size, o.y, o.x, o.dy, o.dx, o.depth, o.color[0], o.color[1], o.color[2]
        );
    }
    if let Some(s) = seed {
        out += &format!("seed = {s}\n");
    }
    out
}

/// Renders a fixture into `root` in the dataset layout and indexes it as the
/// training split.
pub fn make_fixture(spec: &FixtureSpec, seed: u64, root: &Path) -> Result<DatasetIndex> {
    for sample in render(spec, seed)? {
        write_sample(root, &frame_name(sample.frame_index), &sample)?;
    }
    load_dataset(root, Split::Train)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_round_trip() {
        let spec = FixtureSpec {
            depth_corrupt: Corruption::Constant(0.25),
            flow_corrupt: Corruption::WrongObject,
            ..FixtureSpec::default()
        };
        let text = spec_to_kv(&spec, Some(9));
        let (back, seed) = spec_from_kv(&KvFile::parse(&text).unwrap()).unwrap();
        assert_eq!(back, spec);
        assert_eq!(seed, Some(9));
    }

    #[test]
    fn corruption_forms() {
        assert_eq!(parse_corruption("salt:0.1").unwrap(), Corruption::Salt(0.1));
        assert_eq!(parse_corruption("constant").unwrap(), Corruption::Constant(0.5));
        assert!(parse_corruption("blur").is_err());
        assert!(parse_corruption("none:1").is_err());
    }

    #[test]
    fn rejects_bad_resolution_and_keys() {
        assert!(spec_from_kv(&KvFile::parse("size = 50x64").unwrap()).is_err());
        assert!(spec_from_kv(&KvFile::parse("colour = red").unwrap()).is_err());
    }
}
