//! Evaluation runs and result tables.

use rayon::prelude::*;
use smfnet_core::metrics::{Evaluator, FrameScores, MetricReport};
use smfnet_core::model::{Smfnet, Variant};
use smfnet_core::{Modality, ParamStore, SaliencyMap, SampleTriplet};

use crate::checkpoint::Checkpoint;
use crate::dataset::DatasetIndex;
use crate::error::Result;
use crate::train::{IndexSource, SampleSource};

pub trait Predictor: Sync {
    fn predict(&self, sample: &SampleTriplet) -> Result<SaliencyMap>;
}

/// Which output of the network is scored.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Output {
    /// `S_1` of the decoder.
    Decoder(Variant),
    /// A stream's coarse head (pre-training checkpoints).
    Stream(Modality),
}

pub struct ModelPredictor {
    pub net: Smfnet,
    pub store: ParamStore,
    pub output: Output,
}

impl ModelPredictor {
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        Ok(Self {
            net: Smfnet::attach(ck.model.clone(), &ck.store)?,
            store: ck.store.clone(),
            output: match ck.stage.modality() {
                Some(m) => Output::Stream(m),
                None => Output::Decoder(ck.variant),
            },
        })
    }
}

impl Predictor for ModelPredictor {
    fn predict(&self, sample: &SampleTriplet) -> Result<SaliencyMap> {
        Ok(match self.output {
            Output::Decoder(v) => self.net.predict(&self.store, sample, v)?,
            Output::Stream(m) => self.net.predict_stream(&self.store, sample, m)?,
        })
    }
}

/// Returns the ground truth itself.
pub struct OraclePredictor;

impl Predictor for OraclePredictor {
    fn predict(&self, sample: &SampleTriplet) -> Result<SaliencyMap> {
        Ok(SaliencyMap::new(sample.gt.clone())?)
    }
}

/// Scores every sample; frames are reduced in source order.
pub fn evaluate(predictor: &dyn Predictor, data: &(impl SampleSource + ?Sized)) -> Result<MetricReport> {
    let scored: Vec<Result<(String, FrameScores)>> = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let s = data.get(i)?;
            let pred = predictor.predict(&s)?;
            Ok((s.sequence_id.clone(), FrameScores::compute(&pred, &s.gt)?))
        })
        .collect();
    let mut ev = Evaluator::new();
    for r in scored {
        let (seq, scores) = r?;
        ev.add(&seq, &scores);
    }
    Ok(ev.report())
}

/// Evaluates an index (normally the test split) at a fixed input size.
pub fn run_eval(predictor: &dyn Predictor, index: &DatasetIndex, size: (usize, usize)) -> Result<MetricReport> {
    evaluate(predictor, &IndexSource { index, size })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TableFormat {
    Markdown,
    Csv,
}

impl std::str::FromStr for TableFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "md" | "markdown" => Ok(TableFormat::Markdown),
            "csv" => Ok(TableFormat::Csv),
            other => Err(format!("unknown table format `{other}`")),
        }
    }
}

/// One row per dataset: `S_α`, `F_β^max`, `M`.
pub fn format_table(rows: &[(String, MetricReport)], format: TableFormat) -> String {
    let mut out = String::new();
    match format {
        TableFormat::Markdown => {
            out += "| dataset | S_α | F_β^max | M |\n|---|---|---|---|\n";
            for (name, r) in rows {
                out += &format!("| {name} | {:.3} | {:.3} | {:.3} |\n", r.s_alpha, r.f_beta_max, r.mae);
            }
        }
        TableFormat::Csv => {
            out += "dataset,s_alpha,f_beta_max,mae\n";
            for (name, r) in rows {
                out += &format!("{name},{},{},{}\n", r.s_alpha, r.f_beta_max, r.mae);
            }
        }
    }
    out
}

/// Mean full-resolution weight map over GT-salient and non-salient pixels.
pub fn sw_region_means(net: &Smfnet, store: &ParamStore, samples: &[SampleTriplet]) -> Result<(f64, f64)> {
    let (mut s_sum, mut s_n, mut ns_sum, mut ns_n) = (0.0, 0.0f64, 0.0, 0.0f64);
    for s in samples {
        let Some(sw) = net.inspect(store, s, Variant::Full)?.sw else {
            continue;
        };
        let full = sw.sw.resize_bilinear(s.height(), s.width());
        for (&w, &g) in full.data().iter().zip(s.gt.data()) {
            if g == 1.0 {
                s_sum += w;
                s_n += 1.0;
            } else {
                ns_sum += w;
                ns_n += 1.0;
            }
        }
    }
    Ok((s_sum / s_n.max(1.0), ns_sum / ns_n.max(1.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use smfnet_core::fixture::{render, FixtureSpec};

    #[test]
    fn oracle_is_perfect() {
        let data = render(&FixtureSpec::default(), 1).unwrap();
        let r = evaluate(&OraclePredictor, &data).unwrap();
        assert!((r.s_alpha - 1.0).abs() < 1e-6);
        assert_eq!(r.mae, 0.0);
        assert!((r.f_beta_max - 1.0).abs() < 1e-12);
        assert_eq!(r.frames, 8);
    }

    #[test]
    fn table_formats() {
        let data = render(&FixtureSpec::default(), 1).unwrap();
        let r = evaluate(&OraclePredictor, &data).unwrap();
        let md = format_table(&[("fixture".into(), r.clone())], TableFormat::Markdown);
        assert!(md.contains("| fixture | 1.000 | 1.000 | 0.000 |"));
        let csv = format_table(&[("fixture".into(), r)], TableFormat::Csv);
        assert_eq!(csv.lines().count(), 2);
    }
}
