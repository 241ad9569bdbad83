//! On-disk synthetic datasets and style-transfer triplets.
//!
//! A dataset directory holds:
//!
//! * `images/{id}.png`, 8-bit sRGB crops, and `masks/{id}.png`, binary
//!   makeup-region masks (0 or 255);
//! * `dataset.manifest`, one JSON object per line with fields
//!   `id, split, region, size, image, mask, spec` (paths relative to the
//!   manifest, `spec` the full [`CropSpec`] that rendered the sample);
//! * `landmarks.manifest`, one JSON object per line with fields
//!   `image, schema, points`, where `points` is the flattened
//!   `[x0, y0, x1, y1, ...]` list in pixel coordinates;
//! * `truth.table`, tab-separated with the header
//!   `id makeup_L makeup_a makeup_b skin_L skin_a skin_b`, six decimals.
//!
//! The train/test split ranks sample indices by a seeded hash and sends the
//! first `round(n * ratio)` of them to train, so counts are exact and the
//! split never depends on sample content.
//!
//! A triplet directory holds `images/`, `masks/` and `triplets.manifest`,
//! one JSON object per line with fields `id, reference, source, candidates,
//! unperturbed`; each sample entry carries its image, mask, landmarks,
//! ground-truth colors and spec.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::colorlab::{delta_e76, in_srgb_gamut, LabColor};
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::synthdata::{
    mix_seed, render_crop, sample_makeup_color, sample_spec, CropSample, CropSpec, RegionChoice, SamplerConfig,
};
use crate::weakcolor::{makeup_region_mask, weak_makeup_color, EyeRegionConfig, LandmarkSchema, LandmarkSet, RegionKind, RegionMask};

pub const DATASET_MANIFEST: &str = "dataset.manifest";
pub const LANDMARK_MANIFEST: &str = "landmarks.manifest";
pub const TRUTH_TABLE: &str = "truth.table";
pub const TRIPLET_MANIFEST: &str = "triplets.manifest";
const SPLIT_SALT: u64 = 0x5EED_5917;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub n: usize,
    pub seed: u64,
    pub split_ratio: f64,
    pub regions: RegionChoice,
    pub sampler: SamplerConfig,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            n: 2000,
            seed: 7,
            split_ratio: 0.9,
            regions: RegionChoice::Lips,
            sampler: SamplerConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    pub split: Split,
    pub region: RegionKind,
    pub size: usize,
    pub image: String,
    pub mask: String,
    pub spec: CropSpec,
}

#[derive(Serialize, Deserialize)]
struct LandmarkRow {
    image: String,
    schema: LandmarkSchema,
    points: Vec<f64>,
}

/// Deterministic split assignment for `n` samples.
pub fn split_assignment(n: usize, seed: u64, ratio: f64) -> Vec<Split> {
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (mix_seed(seed ^ SPLIT_SALT, i as u64), i));
    let n_train = (n as f64 * ratio.clamp(0.0, 1.0)).round() as usize;
    let mut out = vec![Split::Test; n];
    for &i in &order[..n_train] {
        out[i] = Split::Train;
    }
    out
}

fn sample_id(index: usize) -> String {
    format!("s{index:06}")
}

fn create_dirs(root: &Path) -> Result<()> {
    for sub in ["images", "masks"] {
        let dir = root.join(sub);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    Ok(())
}

fn save_mask(mask: &RegionMask, path: &Path) -> Result<()> {
    let (w, h) = mask.dims();
    image::GrayImage::from_raw(w as u32, h as u32, mask.to_luma8())
        .expect("mask buffer sized from dims")
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Decode(format!("{}: {e}", path.display())))
}

fn load_mask(path: &Path, kind: RegionKind) -> Result<RegionMask> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let img = image::load_from_memory(&bytes).map_err(|e| Error::Decode(format!("{}: {e}", path.display())))?;
    let luma = img.to_luma8();
    RegionMask::from_luma8(luma.width() as usize, luma.height() as usize, kind, luma.as_raw())
}

fn write_lines(path: &Path, lines: impl IntoIterator<Item = String>) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for line in lines {
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (no, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::manifest(path, format!("line {}: {e}", no + 1)))?);
    }
    Ok(out)
}

fn render_indexed(cfg: &GenerateConfig, index: usize) -> Result<CropSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, index as u64));
    let sampler = SamplerConfig {
        region: cfg.regions.kind_for(index),
        ..cfg.sampler.clone()
    };
    let mut sample = render_crop(&sample_spec(&mut rng, &sampler))?;
    sample.id = sample_id(index);
    Ok(sample)
}

/// Renders `cfg.n` crops into `out_dir`; returns the dataset manifest path.
/// Output bytes do not depend on the number of worker threads.
pub fn generate_dataset(cfg: &GenerateConfig, out_dir: &Path) -> Result<PathBuf> {
    if cfg.n == 0 {
        return Err(Error::Config("dataset needs at least one sample".into()));
    }
    create_dirs(out_dir)?;
    let splits = split_assignment(cfg.n, cfg.seed, cfg.split_ratio);
    let rows: Vec<(DatasetRecord, LandmarkRow, String)> = (0..cfg.n)
        .into_par_iter()
        .map(|i| {
            let sample = render_indexed(cfg, i)?;
            let image = format!("images/{}.png", sample.id);
            let mask = format!("masks/{}.png", sample.id);
            sample.image.save_png(&out_dir.join(&image))?;
            save_mask(&sample.mask, &out_dir.join(&mask))?;
            let (m, s) = (sample.gt_makeup, sample.gt_skin);
            let truth = format!(
                "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
                sample.id, m.l, m.a, m.b, s.l, s.a, s.b
            );
            let lm = LandmarkRow {
                image: image.clone(),
                schema: sample.landmarks.schema,
                points: sample.landmarks.points.iter().flat_map(|&(x, y)| [x, y]).collect(),
            };
            let record = DatasetRecord {
                id: sample.id,
                split: splits[i],
                region: sample.mask.kind(),
                size: sample.image.width(),
                image,
                mask,
                spec: sample.provenance.expect("rendered samples carry their spec"),
            };
            Ok((record, lm, truth))
        })
        .collect::<Result<_>>()?;

    write_lines(&out_dir.join(LANDMARK_MANIFEST), rows.iter().map(|r| to_json(&r.1)))?;
    write_lines(
        &out_dir.join(TRUTH_TABLE),
        std::iter::once("id\tmakeup_L\tmakeup_a\tmakeup_b\tskin_L\tskin_a\tskin_b".to_string())
            .chain(rows.iter().map(|r| r.2.clone())),
    )?;
    let manifest = out_dir.join(DATASET_MANIFEST);
    write_lines(&manifest, rows.iter().map(|r| to_json(&r.0)))?;
    Ok(manifest)
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("manifest rows serialize")
}

/// Ground-truth colors of one sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Truth {
    pub makeup: LabColor,
    pub skin: LabColor,
}

/// A loaded dataset manifest with its landmark and truth tables.
#[derive(Clone, Debug)]
pub struct Dataset {
    root: PathBuf,
    records: Vec<DatasetRecord>,
    landmarks: HashMap<String, LandmarkSet>,
    truth: HashMap<String, Truth>,
}

fn parse_truth(path: &Path) -> Result<HashMap<String, Truth>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::manifest(path, "empty truth table"))?;
    if header.split('\t').count() != 7 {
        return Err(Error::manifest(path, "truth table header needs 7 columns"));
    }
    let mut out = HashMap::new();
    for (no, line) in lines.enumerate() {
        let cols: Vec<&str> = line.split('\t').collect();
        let bad = || Error::manifest(path, format!("row {}: malformed", no + 2));
        if cols.len() != 7 {
            return Err(bad());
        }
        let v: Vec<f64> = cols[1..].iter().map(|c| c.parse::<f64>()).collect::<Result<_, _>>().map_err(|_| bad())?;
        out.insert(
            cols[0].to_string(),
            Truth {
                makeup: LabColor::new(v[0], v[1], v[2]),
                skin: LabColor::new(v[3], v[4], v[5]),
            },
        );
    }
    Ok(out)
}

impl Dataset {
    pub fn load(manifest: &Path) -> Result<Self> {
        let root = manifest.parent().unwrap_or(Path::new(".")).to_path_buf();
        let records: Vec<DatasetRecord> = read_jsonl(manifest)?;
        let lm_path = root.join(LANDMARK_MANIFEST);
        let mut landmarks = HashMap::new();
        for row in read_jsonl::<LandmarkRow>(&lm_path)? {
            if row.points.len() % 2 != 0 {
                return Err(Error::manifest(&lm_path, format!("{}: odd coordinate count", row.image)));
            }
            let points = row.points.chunks(2).map(|p| (p[0], p[1])).collect();
            let set = LandmarkSet::new(row.schema, points)?;
            landmarks.insert(row.image, set);
        }
        let truth = parse_truth(&root.join(TRUTH_TABLE))?;
        for r in &records {
            if !landmarks.contains_key(&r.image) {
                return Err(Error::manifest(&lm_path, format!("no landmarks for {}", r.image)));
            }
            if !truth.contains_key(&r.id) {
                return Err(Error::manifest(manifest, format!("no truth row for {}", r.id)));
            }
        }
        Ok(Self {
            root,
            records,
            landmarks,
            truth,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn records(&self) -> &[DatasetRecord] {
        &self.records
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &DatasetRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn landmarks(&self, record: &DatasetRecord) -> &LandmarkSet {
        &self.landmarks[&record.image]
    }

    pub fn truth(&self, record: &DatasetRecord) -> Truth {
        self.truth[&record.id]
    }

    pub fn load_image(&self, record: &DatasetRecord) -> Result<ImageTensor> {
        ImageTensor::load_png(&self.root.join(&record.image))
    }

    pub fn load_sample(&self, record: &DatasetRecord) -> Result<CropSample> {
        let image = self.load_image(record)?;
        let mask = load_mask(&self.root.join(&record.mask), record.region)?;
        if mask.dims() != image.dims() {
            return Err(Error::manifest(&self.root, format!("{}: mask and image sizes differ", record.id)));
        }
        let truth = self.truth(record);
        Ok(CropSample {
            id: record.id.clone(),
            image,
            landmarks: self.landmarks(record).clone(),
            gt_makeup: truth.makeup,
            gt_skin: truth.skin,
            mask,
            provenance: Some(record.spec.clone()),
        })
    }
}

/// Full-scan check of a dataset against its own provenance: every image
/// loads, matches a fresh rendering of its spec bit for bit, agrees with the
/// truth table and the landmark-derived mask, and its weak makeup color is
/// within 1 ΔE of ground truth where shading is at most 8 L\*.
pub fn validate_dataset(ds: &Dataset) -> Result<usize> {
    let fail = |id: &str, why: &str| Error::manifest(ds.root(), format!("{id}: {why}"));
    ds.records().par_iter().try_for_each(|rec| {
        let sample = ds.load_sample(rec)?;
        if sample.image.dims() != (rec.size, rec.size) {
            return Err(fail(&rec.id, "image size differs from manifest"));
        }
        if sample.image.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(fail(&rec.id, "channel outside [0, 1]"));
        }
        let fresh = render_crop(&rec.spec)?;
        if fresh.image != sample.image {
            return Err(fail(&rec.id, "image differs from its spec's rendering"));
        }
        if fresh.mask != sample.mask {
            return Err(fail(&rec.id, "stored mask differs from rendering"));
        }
        let derived = makeup_region_mask(&sample.landmarks, sample.image.dims(), rec.region, &EyeRegionConfig::default())?;
        if derived != sample.mask {
            return Err(fail(&rec.id, "landmark mask differs from stored mask"));
        }
        if delta_e76(fresh.gt_makeup, sample.gt_makeup) > 1e-5 || delta_e76(fresh.gt_skin, sample.gt_skin) > 1e-5 {
            return Err(fail(&rec.id, "truth table disagrees with rendering"));
        }
        if rec.spec.shading <= 8.0 && rec.spec.speckle <= 0.1 {
            let est = weak_makeup_color(&sample.image, &sample.mask)?;
            if delta_e76(est, sample.gt_makeup) > 1.0 {
                return Err(fail(&rec.id, "weak makeup color more than 1 ΔE from truth"));
            }
        }
        Ok(())
    })?;
    Ok(ds.records().len())
}

/// One sample of a triplet, stored inline in the triplet manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TripletEntry {
    pub image: String,
    pub mask: String,
    pub landmarks: LandmarkSet,
    pub makeup: LabColor,
    pub skin: LabColor,
    pub spec: CropSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TripletRecord {
    pub id: String,
    pub reference: TripletEntry,
    pub source: TripletEntry,
    /// Ground-truth candidates in shuffled order.
    pub candidates: Vec<TripletEntry>,
    /// Index into `candidates` of the one sharing the source's skin tone.
    pub unperturbed: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TripletConfig {
    pub n: usize,
    pub seed: u64,
    /// Candidates with perturbed skin in addition to the exact ground truth.
    pub perturbed: usize,
    /// Minimum ΔE between reference and source makeup.
    pub min_makeup_gap: f64,
    /// ΔE range of the skin perturbations.
    pub skin_shift: (f64, f64),
    pub sampler: SamplerConfig,
}

impl Default for TripletConfig {
    fn default() -> Self {
        Self {
            n: 100,
            seed: 11,
            perturbed: 2,
            min_makeup_gap: 20.0,
            skin_shift: (4.0, 10.0),
            sampler: SamplerConfig::default(),
        }
    }
}

fn entry(root: &Path, name: &str, sample: &CropSample) -> Result<TripletEntry> {
    let image = format!("images/{name}.png");
    let mask = format!("masks/{name}.png");
    sample.image.save_png(&root.join(&image))?;
    save_mask(&sample.mask, &root.join(&mask))?;
    Ok(TripletEntry {
        image,
        mask,
        landmarks: sample.landmarks.clone(),
        makeup: sample.gt_makeup,
        skin: sample.gt_skin,
        spec: sample.provenance.clone().expect("rendered samples carry their spec"),
    })
}

fn perturb_skin(rng: &mut impl Rng, skin: LabColor, tonal_noise: f64, shift: (f64, f64)) -> LabColor {
    loop {
        let r = rng.random_range(shift.0..=shift.1);
        let d: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..=1.0));
        let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        if norm < 1e-3 {
            continue;
        }
        let c = LabColor::new(skin.l + r * d[0] / norm, skin.a + r * d[1] / norm, skin.b + r * d[2] / norm);
        let ok = [-tonal_noise, 0.0, tonal_noise]
            .iter()
            .all(|dl| in_srgb_gamut(LabColor::new(c.l + dl, c.a, c.b)));
        if ok {
            return c;
        }
    }
}

fn render_triplet(cfg: &TripletConfig, root: &Path, index: usize) -> Result<TripletRecord> {
    let id = format!("t{index:05}");
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, index as u64));
    let ref_spec = sample_spec(&mut rng, &cfg.sampler);
    let mut src_spec = sample_spec(&mut rng, &cfg.sampler);
    src_spec.shading = src_spec.shading.min(ref_spec.shading);
    while delta_e76(src_spec.makeup, ref_spec.makeup) < cfg.min_makeup_gap {
        src_spec.makeup = sample_makeup_color(&mut rng, src_spec.shading);
    }
    let gt_spec = CropSpec {
        makeup: ref_spec.makeup,
        ..src_spec.clone()
    };
    let reference = entry(root, &format!("{id}_ref"), &render_crop(&ref_spec)?)?;
    let source = entry(root, &format!("{id}_src"), &render_crop(&src_spec)?)?;
    let mut specs = vec![gt_spec.clone()];
    for _ in 0..cfg.perturbed {
        let skin = perturb_skin(&mut rng, gt_spec.skin, gt_spec.tonal_noise, cfg.skin_shift);
        specs.push(CropSpec { skin, ..gt_spec.clone() });
    }
    let mut order: Vec<usize> = (0..specs.len()).collect();
    order.shuffle(&mut rng);
    let mut candidates = Vec::with_capacity(specs.len());
    let mut unperturbed = 0;
    for (slot, &k) in order.iter().enumerate() {
        if k == 0 {
            unperturbed = slot;
        }
        candidates.push(entry(root, &format!("{id}_gt{slot}"), &render_crop(&specs[k])?)?);
    }
    Ok(TripletRecord {
        id,
        reference,
        source,
        candidates,
        unperturbed,
    })
}

/// Renders `cfg.n` style-transfer triplets; returns the triplet manifest path.
///
/// Each triplet has a reference with makeup `m`, a source with a different
/// makeup `m'` and its own geometry, and ground-truth candidates that repaint
/// the source with `m`; the unperturbed candidate keeps the source's skin,
/// the others have their skin shifted.
pub fn generate_triplets(cfg: &TripletConfig, out_dir: &Path) -> Result<PathBuf> {
    if cfg.n == 0 {
        return Err(Error::Config("triplet set needs at least one triplet".into()));
    }
    create_dirs(out_dir)?;
    let records: Vec<TripletRecord> = (0..cfg.n)
        .into_par_iter()
        .map(|i| render_triplet(cfg, out_dir, i))
        .collect::<Result<_>>()?;
    let manifest = out_dir.join(TRIPLET_MANIFEST);
    write_lines(&manifest, records.iter().map(to_json))?;
    Ok(manifest)
}

/// A loaded triplet manifest.
#[derive(Clone, Debug)]
pub struct TripletSet {
    root: PathBuf,
    pub records: Vec<TripletRecord>,
}

impl TripletSet {
    pub fn load(manifest: &Path) -> Result<Self> {
        let root = manifest.parent().unwrap_or(Path::new(".")).to_path_buf();
        let records: Vec<TripletRecord> = read_jsonl(manifest)?;
        for r in &records {
            if r.candidates.is_empty() {
                return Err(Error::manifest(manifest, format!("{}: no ground-truth candidates", r.id)));
            }
            if r.unperturbed >= r.candidates.len() {
                return Err(Error::manifest(manifest, format!("{}: unperturbed index out of range", r.id)));
            }
        }
        Ok(Self { root, records })
    }

    pub fn load_entry(&self, e: &TripletEntry) -> Result<CropSample> {
        let image = ImageTensor::load_png(&self.root.join(&e.image))?;
        let mask = load_mask(&self.root.join(&e.mask), e.spec.region)?;
        Ok(CropSample {
            id: e.image.clone(),
            image,
            landmarks: e.landmarks.clone(),
            gt_makeup: e.makeup,
            gt_skin: e.skin,
            mask,
            provenance: Some(e.spec.clone()),
        })
    }
}
