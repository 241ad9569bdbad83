//! Weak color labels: landmark-derived makeup regions and robust median
//! colors of the makeup region and of the surrounding skin.
//!
//! Regions are rasterized with the even-odd rule, sampling each pixel at its
//! center `(x + 0.5, y + 0.5)`. Medians are per-channel (marginal) in Lab;
//! for an even count the lower of the two middle values is taken.

use serde::{Deserialize, Serialize};

use crate::colorlab::LabColor;
use crate::error::{Error, Result};
use crate::image::ImageTensor;

/// Landmark layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LandmarkSchema {
    /// The 68-point iBUG/dlib face layout.
    #[serde(rename = "dlib68")]
    Dlib68,
    /// Synthetic lip crop: [`SYNTH_LIP_POINTS`] points on the outer lip contour.
    #[serde(rename = "synth-lips")]
    SynthLips,
    /// Synthetic eye crop: [`SYNTH_EYE_POINTS`] points around the eye opening,
    /// starting at the left corner and running over the upper lid first.
    #[serde(rename = "synth-eye")]
    SynthEye,
}

pub const SYNTH_LIP_POINTS: usize = 24;
pub const SYNTH_EYE_POINTS: usize = 16;

impl LandmarkSchema {
    pub fn point_count(self) -> usize {
        match self {
            LandmarkSchema::Dlib68 => 68,
            LandmarkSchema::SynthLips => SYNTH_LIP_POINTS,
            LandmarkSchema::SynthEye => SYNTH_EYE_POINTS,
        }
    }
}

pub type Point = (f64, f64);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandmarkSet {
    pub schema: LandmarkSchema,
    pub points: Vec<Point>,
}

impl LandmarkSet {
    pub fn new(schema: LandmarkSchema, points: Vec<Point>) -> Result<Self> {
        let lm = Self { schema, points };
        lm.validate()?;
        Ok(lm)
    }

    pub fn validate(&self) -> Result<()> {
        let want = self.schema.point_count();
        if self.points.len() != want {
            return Err(Error::Schema(format!(
                "{:?} needs {want} points, got {}",
                self.schema,
                self.points.len()
            )));
        }
        if self.points.iter().any(|p| !p.0.is_finite() || !p.1.is_finite()) {
            return Err(Error::Schema("non-finite landmark coordinate".into()));
        }
        Ok(())
    }

    /// Indices of points lying outside a `width`×`height` frame.
    pub fn out_of_frame(&self, dims: (usize, usize)) -> Vec<usize> {
        let (w, h) = (dims.0 as f64, dims.1 as f64);
        self.points
            .iter()
            .enumerate()
            .filter(|(_, p)| !(0.0..=w).contains(&p.0) || !(0.0..=h).contains(&p.1))
            .map(|(i, _)| i)
            .collect()
    }

    fn slice(&self, range: std::ops::RangeInclusive<usize>) -> Vec<Point> {
        self.points[range].to_vec()
    }
}

/// What a [`RegionMask`] covers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegionKind {
    Lips,
    Eyeshadow,
    Background,
}

/// Binary mask with the dimensions of its source image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegionMask {
    width: usize,
    height: usize,
    kind: RegionKind,
    bits: Vec<bool>,
}

impl RegionMask {
    pub fn new(width: usize, height: usize, kind: RegionKind, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::Shape(format!("{width}x{height} mask needs {} bits", width * height)));
        }
        Ok(Self {
            width,
            height,
            kind,
            bits,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn kind(&self) -> RegionKind {
        self.kind
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// The background mask: every pixel not covered by `masks`.
    pub fn complement_of(masks: &[RegionMask], dims: (usize, usize)) -> Result<Self> {
        let mut bits = vec![true; dims.0 * dims.1];
        for m in masks {
            if m.dims() != dims {
                return Err(Error::Shape(format!("mask {:?} vs image {:?}", m.dims(), dims)));
            }
            for (b, &covered) in bits.iter_mut().zip(&m.bits) {
                *b &= !covered;
            }
        }
        Self::new(dims.0, dims.1, RegionKind::Background, bits)
    }

    pub fn is_disjoint(&self, other: &RegionMask) -> bool {
        self.bits.iter().zip(&other.bits).all(|(&a, &b)| !(a && b))
    }

    pub fn upscale_nearest(&self, factor: usize) -> Self {
        let (w, h) = (self.width * factor, self.height * factor);
        let bits = (0..w * h).map(|i| self.get((i % w) / factor, (i / w) / factor)).collect();
        Self {
            width: w,
            height: h,
            kind: self.kind,
            bits,
        }
    }

    /// Grayscale PNG-ready bytes (0 or 255).
    pub fn to_luma8(&self) -> Vec<u8> {
        self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect()
    }

    pub fn from_luma8(width: usize, height: usize, kind: RegionKind, luma: &[u8]) -> Result<Self> {
        Self::new(width, height, kind, luma.iter().map(|&v| v >= 128).collect())
    }
}

/// A region as a union of polygons minus a union of holes.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionShape {
    pub include: Vec<Vec<Point>>,
    pub exclude: Vec<Vec<Point>>,
}

fn polygon_area(poly: &[Point]) -> f64 {
    let n = poly.len();
    let twice: f64 = (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a.0 * b.1 - b.0 * a.1
        })
        .sum();
    twice.abs() * 0.5
}

/// Marks samples of one row (at height `y`) inside `poly`, even-odd rule.
fn scan_row(poly: &[Point], y: f64, xs: &[f64], inside: &mut [bool], crossings: &mut Vec<f64>) {
    crossings.clear();
    let n = poly.len();
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        if (a.1 <= y) != (b.1 <= y) {
            crossings.push(a.0 + (y - a.1) * (b.0 - a.0) / (b.1 - a.1));
        }
    }
    crossings.sort_by(f64::total_cmp);
    for pair in crossings.chunks_exact(2) {
        for (flag, &x) in inside.iter_mut().zip(xs) {
            if x >= pair[0] && x < pair[1] {
                *flag = !*flag;
            }
        }
    }
}

impl RegionShape {
    /// Number of covered samples per pixel on an `ss`×`ss` sub-grid.
    pub fn coverage(&self, dims: (usize, usize), ss: usize) -> Vec<u16> {
        let (w, h) = dims;
        let cols = w * ss;
        let xs: Vec<f64> = (0..cols).map(|i| (i as f64 + 0.5) / ss as f64).collect();
        let mut counts = vec![0u16; w * h];
        let mut inc = vec![false; cols];
        let mut exc = vec![false; cols];
        let mut tmp = vec![false; cols];
        let mut crossings = Vec::new();
        for sy in 0..h * ss {
            let y = (sy as f64 + 0.5) / ss as f64;
            inc.fill(false);
            exc.fill(false);
            for (polys, acc) in [(&self.include, &mut inc), (&self.exclude, &mut exc)] {
                for poly in polys {
                    tmp.fill(false);
                    scan_row(poly, y, &xs, &mut tmp, &mut crossings);
                    for (a, &t) in acc.iter_mut().zip(&tmp) {
                        *a |= t;
                    }
                }
            }
            let row = &mut counts[(sy / ss) * w..(sy / ss + 1) * w];
            for (i, (&a, &b)) in inc.iter().zip(&exc).enumerate() {
                if a && !b {
                    row[i / ss] += 1;
                }
            }
        }
        counts
    }

    /// Pixel-center rasterization.
    pub fn rasterize(&self, dims: (usize, usize), kind: RegionKind) -> Result<RegionMask> {
        let bits = self.coverage(dims, 1).into_iter().map(|c| c > 0).collect();
        let mask = RegionMask::new(dims.0, dims.1, kind, bits)?;
        if mask.count() == 0 {
            return Err(Error::EmptyRegion(format!("{kind:?} region covers no pixel centers")));
        }
        Ok(mask)
    }

    fn check_area(&self, what: &str) -> Result<()> {
        if self.include.iter().all(|p| polygon_area(p) < 1e-9) {
            return Err(Error::EmptyRegion(format!("{what} polygon has zero area")));
        }
        Ok(())
    }
}

/// Lip region: outer contour minus inner mouth (dlib68) or the full contour (synthetic).
pub fn lip_shape(lm: &LandmarkSet) -> Result<RegionShape> {
    lm.validate()?;
    let shape = match lm.schema {
        LandmarkSchema::Dlib68 => RegionShape {
            include: vec![lm.slice(48..=59)],
            exclude: vec![lm.slice(60..=67)],
        },
        LandmarkSchema::SynthLips => RegionShape {
            include: vec![lm.points.clone()],
            exclude: vec![],
        },
        LandmarkSchema::SynthEye => {
            return Err(Error::Schema("synth-eye landmarks carry no lip points".into()));
        }
    };
    shape.check_area("lip")?;
    Ok(shape)
}

pub fn lip_region_mask(lm: &LandmarkSet, dims: (usize, usize)) -> Result<RegionMask> {
    lip_shape(lm)?.rasterize(dims, RegionKind::Lips)
}

/// Geometry of the eye-shadow band.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EyeRegionConfig {
    /// Band height above the upper-lid arc, as a fraction of the eye's width.
    pub band_ratio: f64,
}

impl Default for EyeRegionConfig {
    fn default() -> Self {
        Self { band_ratio: 0.6 }
    }
}

/// Band over one eye: the upper-lid arc (corner to corner) swept straight up.
fn eye_band(arc: &[Point], eye: &[Point], cfg: &EyeRegionConfig) -> Vec<Point> {
    let (lo, hi) = eye
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.0), hi.max(p.0)));
    let lift = cfg.band_ratio * (hi - lo);
    let mut poly = arc.to_vec();
    poly.extend(arc.iter().rev().map(|&(x, y)| (x, y - lift)));
    poly
}

/// Eye-shadow region: a band above each upper eyelid, excluding the eyeball.
pub fn eye_shape(lm: &LandmarkSet, cfg: &EyeRegionConfig) -> Result<RegionShape> {
    lm.validate()?;
    let eyes: Vec<(Vec<Point>, Vec<Point>)> = match lm.schema {
        LandmarkSchema::Dlib68 => vec![
            (lm.slice(36..=39), lm.slice(36..=41)),
            (lm.slice(42..=45), lm.slice(42..=47)),
        ],
        LandmarkSchema::SynthEye => vec![(lm.slice(0..=8), lm.points.clone())],
        LandmarkSchema::SynthLips => {
            return Err(Error::Schema("synth-lips landmarks carry no eye points".into()));
        }
    };
    let shape = RegionShape {
        include: eyes.iter().map(|(arc, eye)| eye_band(arc, eye, cfg)).collect(),
        exclude: eyes.into_iter().map(|(_, eye)| eye).collect(),
    };
    shape.check_area("eye-shadow")?;
    Ok(shape)
}

pub fn eye_region_mask(lm: &LandmarkSet, dims: (usize, usize), cfg: &EyeRegionConfig) -> Result<RegionMask> {
    eye_shape(lm, cfg)?.rasterize(dims, RegionKind::Eyeshadow)
}

/// The makeup mask implied by a landmark set's schema.
pub fn makeup_region_mask(lm: &LandmarkSet, dims: (usize, usize), kind: RegionKind, cfg: &EyeRegionConfig) -> Result<RegionMask> {
    match kind {
        RegionKind::Lips => lip_region_mask(lm, dims),
        RegionKind::Eyeshadow => eye_region_mask(lm, dims, cfg),
        RegionKind::Background => Err(Error::Config("background is not a makeup region".into())),
    }
}

/// Lower median; reorders `values`.
pub fn lower_median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty());
    let mid = (values.len() - 1) / 2;
    *values.select_nth_unstable_by(mid, f64::total_cmp).1
}

fn median_lab_where(img: &ImageTensor, selected: impl Fn(usize) -> bool) -> Option<LabColor> {
    let unit = img.to_unit();
    let (w, h) = unit.dims();
    let mut ch: [Vec<f64>; 3] = Default::default();
    for y in 0..h {
        for x in 0..w {
            if selected(y * w + x) {
                let lab = unit.lab_at(x, y);
                ch[0].push(lab.l);
                ch[1].push(lab.a);
                ch[2].push(lab.b);
            }
        }
    }
    if ch[0].is_empty() {
        return None;
    }
    let [l, a, b] = ch.map(|mut v| lower_median(&mut v));
    Some(LabColor::new(l, a, b))
}

/// Weak makeup color: per-channel Lab median over the makeup mask.
pub fn weak_makeup_color(img: &ImageTensor, mask: &RegionMask) -> Result<LabColor> {
    if mask.dims() != img.dims() {
        return Err(Error::Shape(format!("mask {:?} vs image {:?}", mask.dims(), img.dims())));
    }
    median_lab_where(img, |i| mask.bits[i]).ok_or_else(|| Error::EmptyRegion("makeup mask is empty".into()))
}

/// Weak skin color: per-channel Lab median outside every makeup mask.
pub fn weak_skin_color(img: &ImageTensor, makeup_masks: &[RegionMask]) -> Result<LabColor> {
    let background = RegionMask::complement_of(makeup_masks, img.dims())?;
    median_lab_where(img, |i| background.bits[i])
        .ok_or_else(|| Error::EmptyRegion("makeup masks cover the whole image".into()))
}

/// C_m and C_s of one crop.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeakLabels {
    pub makeup: LabColor,
    pub skin: LabColor,
}

/// Weak makeup and skin colors from landmarks alone. For eye crops the
/// eyeball polygons are left out of the skin estimate as well.
pub fn weak_labels(img: &ImageTensor, lm: &LandmarkSet, kind: RegionKind, cfg: &EyeRegionConfig) -> Result<WeakLabels> {
    let dims = img.dims();
    let mask = makeup_region_mask(lm, dims, kind, cfg)?;
    let makeup = weak_makeup_color(img, &mask)?;
    let mut exclude = vec![mask];
    if kind == RegionKind::Eyeshadow {
        let eyes = eye_shape(lm, cfg)?.exclude;
        let eyeball = RegionShape {
            include: eyes,
            exclude: vec![],
        };
        let bits = eyeball.coverage(dims, 1).into_iter().map(|c| c > 0).collect();
        exclude.push(RegionMask::new(dims.0, dims.1, RegionKind::Eyeshadow, bits)?);
    }
    let skin = weak_skin_color(img, &exclude)?;
    Ok(WeakLabels { makeup, skin })
}
