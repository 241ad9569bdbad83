//! Models behind one interface, shade catalogs and recommendation.
//!
//! Resize policy: an input is center-cropped to a square, resized bilinearly
//! to the model's input side, processed, resized back and pasted over the
//! cropped square, so outputs keep the input's dimensions.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tint_autograd::Tensor;

use crate::colorlab::{delta_e76, in_srgb_gamut, srgb_channels_to_lab, LabColor};
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::networks::{load_checkpoint, ModelParams};
use crate::weakcolor::RegionKind;

/// Crop side assumed for checkpoints that do not record one.
pub const DEFAULT_INPUT_SIZE: usize = 64;

pub trait MakeupModel: Send + Sync {
    /// Makeup color of a crop.
    fn estimate(&self, image: &ImageTensor) -> Result<LabColor>;

    /// The crop recolored to `target`, in unit range with the input's dimensions.
    fn synthesize(&self, image: &ImageTensor, target: LabColor) -> Result<ImageTensor>;

    fn synthesize_many(&self, image: &ImageTensor, targets: &[LabColor]) -> Result<Vec<ImageTensor>> {
        targets.iter().map(|&t| self.synthesize(image, t)).collect()
    }

    /// `source` recolored to the estimated color of `reference`.
    fn transfer(&self, source: &ImageTensor, reference: &ImageTensor) -> Result<(ImageTensor, LabColor)> {
        let c = self.estimate(reference)?;
        Ok((self.synthesize(source, c)?, c))
    }
}

/// Rejects non-finite targets and targets outside the Lab box.
pub fn check_target(c: LabColor) -> Result<()> {
    if !c.is_finite() || !c.in_range() {
        return Err(Error::Input(format!("target {c:?} is outside L [0, 100], a/b [-128, 127]")));
    }
    Ok(())
}

/// Returns its input unchanged; estimates the crop's mean color.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityModel;

impl MakeupModel for IdentityModel {
    fn estimate(&self, image: &ImageTensor) -> Result<LabColor> {
        let unit = image.to_unit();
        let n = (unit.width() * unit.height()) as f64;
        let mut sum = [0.0f64; 3];
        for px in unit.data().chunks(3) {
            for c in 0..3 {
                sum[c] += px[c] as f64;
            }
        }
        Ok(srgb_channels_to_lab(sum.map(|v| (v / n).clamp(0.0, 1.0))))
    }

    fn synthesize(&self, image: &ImageTensor, target: LabColor) -> Result<ImageTensor> {
        check_target(target)?;
        Ok(image.to_unit())
    }
}

/// Square crop geometry of an input image.
#[derive(Clone, Copy, Debug)]
struct Placement {
    x0: usize,
    y0: usize,
    side: usize,
}

fn placement(img: &ImageTensor) -> Placement {
    let (w, h) = img.dims();
    let side = w.min(h);
    Placement {
        x0: (w - side) / 2,
        y0: (h - side) / 2,
        side,
    }
}

/// The trained generator and critic.
#[derive(Clone, Debug)]
pub struct GanModel {
    params: ModelParams<f32>,
    input_size: usize,
}

impl GanModel {
    pub fn new(params: ModelParams<f32>) -> Result<Self> {
        let input_size = params.input_size.unwrap_or(DEFAULT_INPUT_SIZE);
        params.arch.check_side(input_size)?;
        Ok(Self { params, input_size })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::new(load_checkpoint(path)?)
    }

    pub fn params(&self) -> &ModelParams<f32> {
        &self.params
    }

    pub fn input_size(&self) -> usize {
        self.input_size
    }

    fn network_input(&self, img: &ImageTensor) -> Result<Tensor<f32>> {
        if img.width() == 0 || img.height() == 0 {
            return Err(Error::Input("empty image".into()));
        }
        let x = img.center_crop_resize(self.input_size).to_signed();
        ImageTensor::batch_to_tensor(&[&x])
    }

    fn paste(&self, original: &ImageTensor, generated: ImageTensor) -> ImageTensor {
        let base = original.to_unit();
        let p = placement(&base);
        if base.dims() == (self.input_size, self.input_size) {
            return generated;
        }
        let back = generated.center_crop_resize(p.side);
        let mut out = base;
        for y in 0..p.side {
            for x in 0..p.side {
                out.set_pixel(p.x0 + x, p.y0 + y, back.pixel(x, y));
            }
        }
        out
    }
}

impl MakeupModel for GanModel {
    fn estimate(&self, image: &ImageTensor) -> Result<LabColor> {
        let x = self.network_input(image)?;
        Ok(self.params.criticize(&x)?.color[0])
    }

    fn synthesize(&self, image: &ImageTensor, target: LabColor) -> Result<ImageTensor> {
        Ok(self.synthesize_many(image, &[target])?.remove(0))
    }

    fn synthesize_many(&self, image: &ImageTensor, targets: &[LabColor]) -> Result<Vec<ImageTensor>> {
        for &t in targets {
            check_target(t)?;
        }
        if targets.is_empty() {
            return Ok(Vec::new());
        }
        let x = self.network_input(image)?;
        let batch = Tensor::stack_batch(&vec![x; targets.len()]);
        let out = self.params.generate(&batch, targets)?;
        Ok((0..targets.len())
            .map(|i| {
                let g = ImageTensor::from_tensor(&out, i, crate::image::ValueRange::Signed).to_unit();
                self.paste(image, g)
            })
            .collect())
    }
}

/// Lips and eye-shadow models served together.
#[derive(Default)]
pub struct InferenceSession {
    lips: Option<Box<dyn MakeupModel>>,
    eyes: Option<Box<dyn MakeupModel>>,
}

impl InferenceSession {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_model(mut self, kind: RegionKind, model: Box<dyn MakeupModel>) -> Result<Self> {
        match kind {
            RegionKind::Lips => self.lips = Some(model),
            RegionKind::Eyeshadow => self.eyes = Some(model),
            RegionKind::Background => return Err(Error::Input("background is not a makeup region".into())),
        }
        Ok(self)
    }

    pub fn regions(&self) -> Vec<RegionKind> {
        let mut v = Vec::new();
        if self.lips.is_some() {
            v.push(RegionKind::Lips);
        }
        if self.eyes.is_some() {
            v.push(RegionKind::Eyeshadow);
        }
        v
    }

    pub fn model(&self, kind: RegionKind) -> Result<&dyn MakeupModel> {
        let m = match kind {
            RegionKind::Lips => &self.lips,
            RegionKind::Eyeshadow => &self.eyes,
            RegionKind::Background => &None,
        };
        m.as_deref().ok_or_else(|| Error::Input(format!("no {kind:?} model loaded")))
    }

    pub fn estimate(&self, kind: RegionKind, image: &ImageTensor) -> Result<LabColor> {
        self.model(kind)?.estimate(image)
    }

    pub fn synthesize(&self, kind: RegionKind, image: &ImageTensor, target: LabColor) -> Result<ImageTensor> {
        self.model(kind)?.synthesize(image, target)
    }

    pub fn transfer(&self, kind: RegionKind, source: &ImageTensor, reference: &ImageTensor) -> Result<(ImageTensor, LabColor)> {
        self.model(kind)?.transfer(source, reference)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Shade {
    pub id: String,
    pub name: String,
    pub color: LabColor,
}

/// Named products with reference colors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShadeCatalog {
    pub entries: Vec<Shade>,
    pub source: Option<PathBuf>,
}

impl ShadeCatalog {
    pub fn new(entries: Vec<Shade>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::Config(format!("duplicate shade id {}", e.id)));
            }
            if !e.color.is_finite() || !e.color.in_range() || !in_srgb_gamut(e.color) {
                return Err(Error::Config(format!("shade {} is out of gamut: {:?}", e.id, e.color)));
            }
        }
        Ok(Self { entries, source: None })
    }

    /// Parses tab-separated `id, name, L, a, b` lines; blank lines and lines
    /// starting with `#` are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 5 {
                return Err(Error::Config(format!("catalog line {}: expected 5 tab-separated fields", i + 1)));
            }
            let num = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("catalog line {}: bad number {s:?}", i + 1)))
            };
            entries.push(Shade {
                id: f[0].trim().to_string(),
                name: f[1].trim().to_string(),
                color: LabColor::new(num(f[2])?, num(f[3])?, num(f[4])?),
            });
        }
        Self::new(entries)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cat = Self::parse(&text)?;
        cat.source = Some(path.to_path_buf());
        Ok(cat)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# id\tname\tL\ta\tb\n");
        for e in &self.entries {
            s.push_str(&format!("{}\t{}\t{:.4}\t{:.4}\t{:.4}\n", e.id, e.name, e.color.l, e.color.a, e.color.b));
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub shade: Shade,
    pub delta_e: f64,
}

/// Catalog entries nearest to `color` by ΔE76, ties broken by id.
pub fn recommend_shade(color: LabColor, catalog: &ShadeCatalog, top_k: usize) -> Result<Vec<Recommendation>> {
    if catalog.entries.is_empty() {
        return Err(Error::Config("shade catalog is empty".into()));
    }
    let mut ranked: Vec<Recommendation> = catalog
        .entries
        .iter()
        .map(|s| Recommendation {
            shade: s.clone(),
            delta_e: delta_e76(color, s.color),
        })
        .collect();
    ranked.sort_by(|a, b| a.delta_e.total_cmp(&b.delta_e).then_with(|| a.shade.id.cmp(&b.shade.id)));
    ranked.truncate(top_k);
    Ok(ranked)
}
