//! Color-accuracy and style-transfer protocols, and k-means shade selection.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::colorlab::{delta_e76, LabColor};
use crate::dataset::{Dataset, Split, TripletSet};
use crate::error::{Error, Result};
use crate::inference::MakeupModel;
use crate::losses::mssim;
use crate::synthdata::CropSample;
use crate::weakcolor::{weak_labels, weak_makeup_color, EyeRegionConfig};

pub const KMEANS_MAX_ITERS: usize = 200;

/// Representative colors of a pool.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShadeSet {
    pub centroids: Vec<LabColor>,
    pub seed: u64,
    pub pool_size: usize,
    pub iterations: usize,
}

fn nearest(c: LabColor, centroids: &[LabColor]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, &m) in centroids.iter().enumerate() {
        let d = delta_e76(c, m);
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}

/// Lloyd's algorithm in Lab with seeded farthest-point initialization.
pub fn kmeans_shades(pool: &[LabColor], k: usize, seed: u64) -> Result<ShadeSet> {
    if k == 0 || pool.len() < k {
        return Err(Error::Config(format!("k-means needs 1 <= k <= pool size, got k={k} for {} colors", pool.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = vec![pool[rng.random_range(0..pool.len())]];
    let mut dist: Vec<f64> = pool.iter().map(|&c| delta_e76(c, centroids[0])).collect();
    while centroids.len() < k {
        let far = (0..pool.len()).fold(0, |b, i| if dist[i] > dist[b] { i } else { b });
        let c = pool[far];
        centroids.push(c);
        for (d, &p) in dist.iter_mut().zip(pool) {
            *d = d.min(delta_e76(p, c));
        }
    }
    let mut assign: Vec<usize> = pool.iter().map(|&c| nearest(c, &centroids)).collect();
    let mut iterations = 0;
    while iterations < KMEANS_MAX_ITERS {
        iterations += 1;
        let mut sums = vec![[0.0f64; 4]; k];
        for (&c, &a) in pool.iter().zip(&assign) {
            let s = &mut sums[a];
            s[0] += c.l;
            s[1] += c.a;
            s[2] += c.b;
            s[3] += 1.0;
        }
        for (m, s) in centroids.iter_mut().zip(&sums) {
            if s[3] > 0.0 {
                *m = LabColor::new(s[0] / s[3], s[1] / s[3], s[2] / s[3]);
            }
        }
        let next: Vec<usize> = pool.iter().map(|&c| nearest(c, &centroids)).collect();
        if next == assign {
            break;
        }
        assign = next;
    }
    Ok(ShadeSet {
        centroids,
        seed,
        pool_size: pool.len(),
        iterations,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    ColorAccuracy,
    StyleTransfer,
}

/// One measured (sample, shade) pair or triplet.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub id: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub shade: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub target: Option<LabColor>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub achieved: Option<LabColor>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub delta_e: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub skin_delta_e: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ground_truth: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub l1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub one_minus_mssim: Option<f64>,
}

/// Means over the records that carry each value.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub delta_e: Option<f64>,
    pub skin_delta_e: Option<f64>,
    pub l1: Option<f64>,
    pub one_minus_mssim: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: Protocol,
    pub records: Vec<EvalRecord>,
    pub aggregates: Aggregates,
    pub skipped: usize,
    pub config: serde_json::Value,
}

fn mean_of(records: &[EvalRecord], f: impl Fn(&EvalRecord) -> Option<f64>) -> Option<f64> {
    let vals: Vec<f64> = records.iter().filter_map(f).collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

impl EvalReport {
    pub fn new(protocol: Protocol, records: Vec<EvalRecord>, skipped: usize, config: serde_json::Value) -> Self {
        let aggregates = Aggregates {
            delta_e: mean_of(&records, |r| r.delta_e),
            skin_delta_e: mean_of(&records, |r| r.skin_delta_e),
            l1: mean_of(&records, |r| r.l1),
            one_minus_mssim: mean_of(&records, |r| r.one_minus_mssim),
        };
        Self {
            protocol,
            records,
            aggregates,
            skipped,
            config,
        }
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("reports serialize");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::manifest(path, e.to_string()))
    }

    /// Human-readable table of the aggregates.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
        let a = &self.aggregates;
        match self.protocol {
            Protocol::ColorAccuracy => {
                writeln!(s, "{:<28}{:>12}{:>12}", "color accuracy", "lips dE", "skin dE").unwrap();
                writeln!(s, "{:<28}{:>12}{:>12}", format!("{} pairs", self.records.len()), fmt(a.delta_e), fmt(a.skin_delta_e)).unwrap();
            }
            Protocol::StyleTransfer => {
                writeln!(s, "{:<28}{:>12}{:>12}", "style transfer", "L1", "1-MSSIM").unwrap();
                writeln!(s, "{:<28}{:>12}{:>12}", format!("{} triplets", self.records.len()), fmt(a.l1), fmt(a.one_minus_mssim)).unwrap();
            }
        }
        if self.skipped > 0 {
            writeln!(s, "skipped: {}", self.skipped).unwrap();
        }
        s
    }
}

/// Synthesizes every test sample with every shade, measuring the achieved
/// makeup color with the ground-truth mask and the skin drift with the weak
/// skin estimator.
pub fn eval_color_accuracy(model: &dyn MakeupModel, ds: &Dataset, shades: &ShadeSet) -> Result<EvalReport> {
    let eye_cfg = EyeRegionConfig::default();
    let records: Vec<_> = ds.split(Split::Test).collect();
    let per_sample: Vec<Result<Option<Vec<EvalRecord>>>> = records
        .par_iter()
        .map(|rec| {
            let s = ds.load_sample(rec)?;
            if s.mask.count() == 0 {
                return Ok(None);
            }
            let Ok(before) = weak_labels(&s.image, &s.landmarks, rec.region, &eye_cfg) else {
                return Ok(None);
            };
            let outputs = model.synthesize_many(&s.image, &shades.centroids)?;
            let mut out = Vec::with_capacity(outputs.len());
            for (i, (img, &target)) in outputs.iter().zip(&shades.centroids).enumerate() {
                let achieved = weak_makeup_color(img, &s.mask)?;
                let after = weak_labels(img, &s.landmarks, rec.region, &eye_cfg)?;
                out.push(EvalRecord {
                    id: rec.id.clone(),
                    shade: Some(i),
                    target: Some(target),
                    achieved: Some(achieved),
                    delta_e: Some(delta_e76(target, achieved)),
                    skin_delta_e: Some(delta_e76(before.skin, after.skin)),
                    ..EvalRecord::default()
                });
            }
            Ok(Some(out))
        })
        .collect();
    let mut all = Vec::new();
    let mut skipped = 0;
    for r in per_sample {
        match r? {
            Some(v) => all.extend(v),
            None => skipped += 1,
        }
    }
    let config = serde_json::json!({
        "dataset": ds.root(),
        "shades": shades,
    });
    Ok(EvalReport::new(Protocol::ColorAccuracy, all, skipped, config))
}

/// Index of the candidate whose weak skin color is closest to the source's;
/// the first such candidate on ties.
pub fn select_ground_truth(candidates: &[CropSample], source: &CropSample) -> Result<usize> {
    if candidates.is_empty() {
        return Err(Error::Input("no ground-truth candidates".into()));
    }
    let cfg = EyeRegionConfig::default();
    let skin = |s: &CropSample| weak_labels(&s.image, &s.landmarks, s.region(), &cfg).map(|w| w.skin);
    let src = skin(source)?;
    let mut best = (0, f64::INFINITY);
    for (i, c) in candidates.iter().enumerate() {
        let d = delta_e76(skin(c)?, src);
        if d < best.1 {
            best = (i, d);
        }
    }
    Ok(best.0)
}

/// Transfers each reference's makeup onto its source and compares the result
/// with the selected ground truth.
pub fn eval_style_transfer(model: &dyn MakeupModel, set: &TripletSet) -> Result<EvalReport> {
    let records: Vec<Result<EvalRecord>> = set
        .records
        .par_iter()
        .map(|t| {
            let reference = set.load_entry(&t.reference)?;
            let source = set.load_entry(&t.source)?;
            let candidates = t.candidates.iter().map(|c| set.load_entry(c)).collect::<Result<Vec<_>>>()?;
            let chosen = select_ground_truth(&candidates, &source)?;
            let truth = &candidates[chosen].image;
            let (out, estimate) = model.transfer(&source.image, &reference.image)?;
            if out.dims() != truth.dims() {
                return Err(Error::Shape(format!("{}: transfer gave {:?}, truth is {:?}", t.id, out.dims(), truth.dims())));
            }
            let out = out.to_unit();
            Ok(EvalRecord {
                id: t.id.clone(),
                target: Some(estimate),
                ground_truth: Some(chosen),
                l1: Some(out.mean_abs_diff(&truth.to_unit())?),
                one_minus_mssim: Some(1.0 - mssim(&out, &truth.to_unit(), None)?),
                ..EvalRecord::default()
            })
        })
        .collect();
    let records = records.into_iter().collect::<Result<Vec<_>>>()?;
    let config = serde_json::json!({ "triplets": set.records.len() });
    Ok(EvalReport::new(Protocol::StyleTransfer, records, 0, config))
}
