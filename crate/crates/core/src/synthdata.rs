//! Procedural lip and eye crops with known makeup color, skin color, masks
//! and landmarks.
//!
//! The makeup region is the polygon spanned by the crop's own landmarks, so
//! the landmark-derived masks of [`crate::weakcolor`] reproduce the emitted
//! ground-truth masks exactly. Pixels are composited from 4×4 supersampled
//! coverage and stored at 8-bit precision; ground-truth colors are the Lab
//! values of the 8-bit base colors actually painted.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::colorlab::{in_srgb_gamut, lab_to_srgb, srgb_to_lab, LabColor, RgbColor};
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::weakcolor::{
    eye_shape, lip_shape, EyeRegionConfig, LandmarkSchema, LandmarkSet, Point, RegionKind, RegionMask, RegionShape,
    SYNTH_EYE_POINTS, SYNTH_LIP_POINTS,
};

pub const MIN_CROP_SIZE: usize = 32;
pub const MAX_SPECKLE: f64 = 0.2;
const SUPERSAMPLE: usize = 4;
/// Color of specular speckles.
pub const SPECKLE_LAB: LabColor = LabColor::new(95.0, 0.0, 2.0);
const SCLERA_LAB: LabColor = LabColor::new(88.0, 0.0, 3.0);
const IRIS_LAB: LabColor = LabColor::new(32.0, 8.0, 18.0);

/// Box that skin tones are drawn from.
pub const SKIN_L: (f64, f64) = (25.0, 80.0);
pub const SKIN_A: (f64, f64) = (5.0, 25.0);
pub const SKIN_B: (f64, f64) = (10.0, 35.0);

/// Rotated ellipse; for eye crops it bounds the eye opening.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    pub ax: f64,
    pub ay: f64,
    pub angle: f64,
}

impl Ellipse {
    fn to_image(&self, u: f64, v: f64) -> Point {
        let (s, c) = self.angle.sin_cos();
        (self.cx + u * c - v * s, self.cy + u * s + v * c)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CropSpec {
    pub seed: u64,
    pub size: usize,
    pub region: RegionKind,
    pub skin: LabColor,
    pub makeup: LabColor,
    /// Peak-to-center L\* amplitude of the linear shading across the region.
    pub shading: f64,
    pub shading_angle: f64,
    /// Fraction of region pixels replaced by near-white speckles.
    pub speckle: f64,
    /// L\* amplitude of low-frequency skin variation.
    pub tonal_noise: f64,
    pub geometry: Ellipse,
}

/// Which crop kinds a dataset or a model covers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegionChoice {
    #[default]
    Lips,
    Eyes,
    /// Lips and eyes, alternating by sample index.
    Joint,
}

impl RegionChoice {
    pub fn kind_for(self, index: usize) -> RegionKind {
        match self {
            RegionChoice::Lips => RegionKind::Lips,
            RegionChoice::Eyes => RegionKind::Eyeshadow,
            RegionChoice::Joint if index % 2 == 0 => RegionKind::Lips,
            RegionChoice::Joint => RegionKind::Eyeshadow,
        }
    }

    pub fn admits(self, kind: RegionKind) -> bool {
        match self {
            RegionChoice::Lips => kind == RegionKind::Lips,
            RegionChoice::Eyes => kind == RegionKind::Eyeshadow,
            RegionChoice::Joint => kind != RegionKind::Background,
        }
    }
}

/// Knobs of [`sample_spec`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub size: usize,
    pub region: RegionKind,
    pub max_shading: f64,
    pub max_speckle: f64,
    pub max_tonal_noise: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            size: 64,
            region: RegionKind::Lips,
            max_shading: 6.0,
            max_speckle: 0.08,
            max_tonal_noise: 1.5,
        }
    }
}

impl CropSpec {
    pub fn validate(&self) -> Result<()> {
        if self.size < MIN_CROP_SIZE {
            return Err(Error::Spec(format!("crop size {} below {MIN_CROP_SIZE}", self.size)));
        }
        if !(0.0..=MAX_SPECKLE).contains(&self.speckle) {
            return Err(Error::Spec(format!("speckle fraction {} outside [0, {MAX_SPECKLE}]", self.speckle)));
        }
        if self.shading < 0.0 || self.tonal_noise < 0.0 {
            return Err(Error::Spec("negative shading or tonal noise".into()));
        }
        if self.region == RegionKind::Background {
            return Err(Error::Spec("crop region must be lips or eyeshadow".into()));
        }
        if !self.skin.is_finite() || !self.makeup.is_finite() {
            return Err(Error::Spec("non-finite color".into()));
        }
        let g = &self.geometry;
        if g.ax <= 0.0 || g.ay <= 0.0 {
            return Err(Error::Spec("ellipse axes must be positive".into()));
        }
        let margin = 1.0;
        let hi = self.size as f64 - margin;
        let shape = self.shape()?;
        for &(x, y) in shape.include.iter().flatten() {
            if x < margin || y < margin || x > hi || y > hi {
                return Err(Error::Spec(format!("region point ({x:.2}, {y:.2}) outside frame margins")));
            }
        }
        Ok(())
    }

    pub fn landmarks(&self) -> LandmarkSet {
        let g = &self.geometry;
        let points = match self.region {
            RegionKind::Lips => (0..SYNTH_LIP_POINTS)
                .map(|i| {
                    let t = i as f64 / SYNTH_LIP_POINTS as f64 * TAU;
                    g.to_image(g.ax * t.cos(), g.ay * t.sin())
                })
                .collect(),
            _ => {
                let half = SYNTH_EYE_POINTS / 2;
                (0..SYNTH_EYE_POINTS)
                    .map(|i| {
                        if i <= half {
                            // left corner, over the upper lid, to the right corner
                            let t = PI * i as f64 / half as f64;
                            g.to_image(-g.ax * t.cos(), -g.ay * t.sin())
                        } else {
                            let t = PI * (i - half) as f64 / half as f64;
                            g.to_image(g.ax * t.cos(), 0.7 * g.ay * t.sin())
                        }
                    })
                    .collect()
            }
        };
        let schema = match self.region {
            RegionKind::Lips => LandmarkSchema::SynthLips,
            _ => LandmarkSchema::SynthEye,
        };
        LandmarkSet { schema, points }
    }

    fn shape(&self) -> Result<RegionShape> {
        let lm = self.landmarks();
        match self.region {
            RegionKind::Lips => lip_shape(&lm),
            _ => eye_shape(&lm, &EyeRegionConfig::default()),
        }
    }
}

/// A rendered crop together with its ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct CropSample {
    pub id: String,
    pub image: ImageTensor,
    pub landmarks: LandmarkSet,
    pub gt_makeup: LabColor,
    pub gt_skin: LabColor,
    pub mask: RegionMask,
    pub provenance: Option<CropSpec>,
}

impl CropSample {
    pub fn region(&self) -> RegionKind {
        self.mask.kind()
    }
}

fn uniform(rng: &mut impl Rng, range: (f64, f64)) -> f64 {
    rng.random_range(range.0..=range.1)
}

/// The 8-bit color actually painted for `c`, as Lab and as sRGB channels.
fn quantize_lab(c: LabColor) -> (LabColor, [f64; 3]) {
    // Channels go through f32 because that is how images store them.
    let channels = lab_to_srgb(c).color.to_u8().map(|v| (v as f32 / 255.0) as f64);
    let q = RgbColor::new(channels[0], channels[1], channels[2]).expect("8-bit values are in range");
    (srgb_to_lab(q), channels)
}

/// Draws a makeup color uniformly from the normalized Lab box, restricted to
/// colors whose whole shading ramp stays inside the sRGB gamut.
pub fn sample_makeup_color(rng: &mut impl Rng, shading: f64) -> LabColor {
    loop {
        let c = LabColor::new(
            uniform(rng, (0.0, 100.0)),
            uniform(rng, (-128.0, 127.0)),
            uniform(rng, (-128.0, 127.0)),
        );
        let ramp_ok = [-shading, 0.0, shading]
            .iter()
            .all(|d| in_srgb_gamut(LabColor::new(c.l + d, c.a, c.b)));
        if ramp_ok {
            return c;
        }
    }
}

pub fn sample_skin_color(rng: &mut impl Rng, tonal_noise: f64) -> LabColor {
    loop {
        let c = LabColor::new(uniform(rng, SKIN_L), uniform(rng, SKIN_A), uniform(rng, SKIN_B));
        let ok = [-tonal_noise, 0.0, tonal_noise]
            .iter()
            .all(|d| in_srgb_gamut(LabColor::new(c.l + d, c.a, c.b)));
        if ok {
            return c;
        }
    }
}

fn sample_geometry(rng: &mut impl Rng, size: usize, region: RegionKind) -> Ellipse {
    let s = size as f64;
    fn j(rng: &mut impl Rng, r: f64) -> f64 {
        rng.random_range(-r..=r)
    }
    match region {
        RegionKind::Lips => Ellipse {
            cx: s * (0.5 + j(rng, 0.06)),
            cy: s * (0.5 + j(rng, 0.06)),
            ax: s * rng.random_range(0.26..=0.36),
            ay: s * rng.random_range(0.12..=0.18),
            angle: j(rng, 0.12),
        },
        _ => Ellipse {
            cx: s * (0.5 + j(rng, 0.05)),
            cy: s * (0.64 + j(rng, 0.04)),
            ax: s * rng.random_range(0.22..=0.30),
            ay: s * rng.random_range(0.08..=0.12),
            angle: j(rng, 0.08),
        },
    }
}

/// Draws a random crop spec. Deterministic in the rng state.
pub fn sample_spec(rng: &mut impl Rng, cfg: &SamplerConfig) -> CropSpec {
    let shading = rng.random_range(0.0..=cfg.max_shading);
    let speckle = rng.random_range(0.0..=cfg.max_speckle.min(MAX_SPECKLE));
    let tonal_noise = rng.random_range(0.0..=cfg.max_tonal_noise);
    let skin = sample_skin_color(rng, tonal_noise);
    let makeup = sample_makeup_color(rng, shading);
    let geometry = sample_geometry(rng, cfg.size, cfg.region);
    CropSpec {
        seed: rng.random(),
        size: cfg.size,
        region: cfg.region,
        skin,
        makeup,
        shading,
        shading_angle: rng.random_range(0.0..TAU),
        speckle,
        tonal_noise,
        geometry,
    }
}

/// Supersampled coverage (0..=16 per pixel) of the makeup region.
pub fn makeup_coverage(spec: &CropSpec) -> Result<Vec<u16>> {
    Ok(spec.shape()?.coverage((spec.size, spec.size), SUPERSAMPLE))
}

fn lab_pixel(base: [f64; 3], base_lab: LabColor, dl: f64) -> [f64; 3] {
    if dl == 0.0 {
        base
    } else {
        lab_to_srgb(LabColor::new(base_lab.l + dl, base_lab.a, base_lab.b)).color.channels()
    }
}

pub fn render_crop(spec: &CropSpec) -> Result<CropSample> {
    spec.validate()?;
    let n = spec.size;
    let shape = spec.shape()?;
    let landmarks = spec.landmarks();
    let mask = shape.rasterize((n, n), spec.region)?;
    let cover = shape.coverage((n, n), SUPERSAMPLE);
    let full = (SUPERSAMPLE * SUPERSAMPLE) as f64;
    let eye_cover = match spec.region {
        RegionKind::Lips => None,
        _ => Some(
            RegionShape {
                include: vec![landmarks.points.clone()],
                exclude: vec![],
            }
            .coverage((n, n), SUPERSAMPLE),
        ),
    };

    let (gt_skin, skin_rgb) = quantize_lab(spec.skin);
    let (gt_makeup, makeup_rgb) = quantize_lab(spec.makeup);
    let speckle_rgb = lab_to_srgb(SPECKLE_LAB).color.channels();
    let sclera = lab_to_srgb(SCLERA_LAB).color.channels();
    let iris = lab_to_srgb(IRIS_LAB).color.channels();

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let s = n as f64;
    let phases: [f64; 4] = std::array::from_fn(|_| rng.random_range(0.0..TAU));
    let freqs: [f64; 4] = std::array::from_fn(|_| rng.random_range(0.5..1.5));
    let g = &spec.geometry;
    let (dir_s, dir_c) = spec.shading_angle.sin_cos();
    // Speckles are drawn for every masked pixel so the stream does not
    // depend on coverage values.
    let speckled: Vec<bool> = (0..n * n)
        .map(|i| mask.bits()[i] && spec.speckle > 0.0 && rng.random::<f64>() < spec.speckle)
        .collect();
    // The ramp is centered so that the region's median lands on the base
    // color once the speckles, all on one side of it, are counted.
    let along = |px: f64, py: f64| px * dir_c + py * dir_s;
    let proj_of = |i: usize| along((i % n) as f64 + 0.5, (i / n) as f64 + 0.5);
    let masked: Vec<usize> = (0..n * n).filter(|&i| mask.bits()[i]).collect();
    let mut plain: Vec<f64> = masked.iter().filter(|&&i| !speckled[i]).map(|&i| proj_of(i)).collect();
    let center = if plain.is_empty() {
        0.0
    } else {
        let below = if SPECKLE_LAB.l < gt_makeup.l { masked.len() - plain.len() } else { 0 };
        let rank = ((masked.len() - 1) / 2).saturating_sub(below).min(plain.len() - 1);
        *plain.select_nth_unstable_by(rank, f64::total_cmp).1
    };
    let extent = masked.iter().map(|&i| (proj_of(i) - center).abs()).fold(0.5, f64::max);

    let mut data = Vec::with_capacity(n * n * 3);
    for y in 0..n {
        for x in 0..n {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let i = y * n + x;
            let tone = if spec.tonal_noise > 0.0 {
                let u = 0.5
                    * ((TAU * (freqs[0] * px / s) + phases[0]).sin() * (TAU * (freqs[1] * py / s) + phases[1]).cos()
                        + (TAU * (freqs[2] * (px + py) / s) + phases[2]).sin() * (phases[3]).cos());
                spec.tonal_noise * u
            } else {
                0.0
            };
            let skin = lab_pixel(skin_rgb, gt_skin, tone);
            let makeup = if speckled[i] {
                speckle_rgb
            } else {
                let proj = ((along(px, py) - center) / extent).clamp(-1.0, 1.0);
                lab_pixel(makeup_rgb, gt_makeup, spec.shading * proj)
            };
            let cm = cover[i] as f64;
            let (ce, eye_rgb) = match &eye_cover {
                Some(ec) => {
                    let (dx, dy) = (px - g.cx, py - g.cy);
                    let in_iris = (dx * dx + dy * dy).sqrt() < 0.9 * g.ay;
                    (ec[i] as f64, if in_iris { iris } else { sclera })
                }
                None => (0.0, [0.0; 3]),
            };
            let cs = full - cm - ce;
            for c in 0..3 {
                let v = if cm == full {
                    makeup[c]
                } else if cs == full {
                    skin[c]
                } else {
                    (skin[c] * cs + makeup[c] * cm + eye_rgb[c] * ce) / full
                };
                data.push(v as f32);
            }
        }
    }
    let image = ImageTensor::new(n, n, crate::image::ValueRange::Unit, data)?.quantized();
    Ok(CropSample {
        id: String::new(),
        image,
        landmarks,
        gt_makeup,
        gt_skin,
        mask,
        provenance: Some(spec.clone()),
    })
}

/// SplitMix64 finalizer; used to derive independent per-sample streams.
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x6A09_E667_F3BC_C909);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
