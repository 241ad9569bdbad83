//! sRGB / CIE L\*a\*b\* conversion (D65, 2° observer) and the ΔE76 distance.
//!
//! Everything here runs in `f64`; images may be stored as `f32` but colors
//! that feed losses and metrics never are.

use std::sync::LazyLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gamma-companded sRGB color with channels in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RgbColor {
    r: f64,
    g: f64,
    b: f64,
}

impl RgbColor {
    pub fn new(r: f64, g: f64, b: f64) -> Result<Self> {
        for (name, v) in [("r", r), ("g", g), ("b", b)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Domain(format!("sRGB channel {name} = {v} outside [0, 1]")));
            }
        }
        Ok(Self { r, g, b })
    }

    pub fn from_u8(r: u8, g: u8, b: u8) -> Self {
        Self {
            r: r as f64 / 255.0,
            g: g as f64 / 255.0,
            b: b as f64 / 255.0,
        }
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn g(&self) -> f64 {
        self.g
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn channels(&self) -> [f64; 3] {
        [self.r, self.g, self.b]
    }

    /// Nearest 8-bit encoding.
    pub fn to_u8(&self) -> [u8; 3] {
        self.channels().map(|c| (c * 255.0).round().clamp(0.0, 255.0) as u8)
    }
}

/// A point in CIE L\*a\*b\* space.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabColor {
    #[serde(rename = "L")]
    pub l: f64,
    pub a: f64,
    pub b: f64,
}

impl LabColor {
    pub const fn new(l: f64, a: f64, b: f64) -> Self {
        Self { l, a, b }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.l, self.a, self.b]
    }

    pub fn from_array(v: [f64; 3]) -> Self {
        Self::new(v[0], v[1], v[2])
    }

    pub fn is_finite(&self) -> bool {
        self.l.is_finite() && self.a.is_finite() && self.b.is_finite()
    }

    /// Whether the color lies inside the fixed normalization box.
    pub fn in_range(&self) -> bool {
        (L_RANGE.0..=L_RANGE.1).contains(&self.l)
            && (AB_RANGE.0..=AB_RANGE.1).contains(&self.a)
            && (AB_RANGE.0..=AB_RANGE.1).contains(&self.b)
    }

    /// Rounds every component to `digits` fractional digits.
    pub fn rounded(self, digits: i32) -> Self {
        let s = 10f64.powi(digits);
        Self::from_array(self.to_array().map(|v| (v * s).round() / s))
    }
}

/// Lightness range used for normalization.
pub const L_RANGE: (f64, f64) = (0.0, 100.0);
/// Chromatic-axis range used for normalization.
pub const AB_RANGE: (f64, f64) = (-128.0, 127.0);

// IEC 61966-2-1 linear sRGB -> XYZ.
const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
];

// The white point is the image of linear (1, 1, 1), so sRGB white lands on
// L* = 100 with a* = b* = 0 up to rounding.
static WHITE: LazyLock<[f64; 3]> = LazyLock::new(|| RGB_TO_XYZ.map(|row| row.iter().sum()));
static XYZ_TO_RGB: LazyLock<[[f64; 3]; 3]> = LazyLock::new(|| invert3(&RGB_TO_XYZ));

const EPSILON: f64 = 216.0 / 24389.0;
const KAPPA: f64 = 24389.0 / 27.0;

fn invert3(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let c = |r: usize, col: usize| {
        let (r1, r2) = ((r + 1) % 3, (r + 2) % 3);
        let (c1, c2) = ((col + 1) % 3, (col + 2) % 3);
        m[r1][c1] * m[r2][c2] - m[r1][c2] * m[r2][c1]
    };
    let det = m[0][0] * c(0, 0) + m[0][1] * c(0, 1) + m[0][2] * c(0, 2);
    let mut inv = [[0.0; 3]; 3];
    for (i, row) in inv.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = c(j, i) / det;
        }
    }
    inv
}

fn mat_vec(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    m.map(|row| row[0] * v[0] + row[1] * v[1] + row[2] * v[2])
}

pub fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

pub fn linear_to_srgb(c: f64) -> f64 {
    if c <= 0.0031308 {
        12.92 * c
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    }
}

fn lab_f(t: f64) -> f64 {
    if t > EPSILON {
        t.cbrt()
    } else {
        (KAPPA * t + 16.0) / 116.0
    }
}

fn lab_f_inv(f: f64) -> f64 {
    let f3 = f * f * f;
    if f3 > EPSILON {
        f3
    } else {
        (116.0 * f - 16.0) / KAPPA
    }
}

/// Converts unchecked sRGB channels; callers guarantee the `[0, 1]` range.
pub fn srgb_channels_to_lab(rgb: [f64; 3]) -> LabColor {
    let xyz = mat_vec(&RGB_TO_XYZ, rgb.map(srgb_to_linear));
    let w = *WHITE;
    let (fx, fy, fz) = (lab_f(xyz[0] / w[0]), lab_f(xyz[1] / w[1]), lab_f(xyz[2] / w[2]));
    LabColor::new(116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz))
}

pub fn srgb_to_lab(c: RgbColor) -> LabColor {
    srgb_channels_to_lab(c.channels())
}

/// Unclamped sRGB channels of a Lab color (may leave `[0, 1]`).
pub fn lab_to_srgb_unclamped(c: LabColor) -> [f64; 3] {
    let fy = (c.l + 16.0) / 116.0;
    let fx = fy + c.a / 500.0;
    let fz = fy - c.b / 200.0;
    let w = *WHITE;
    let xyz = [lab_f_inv(fx) * w[0], lab_f_inv(fy) * w[1], lab_f_inv(fz) * w[2]];
    mat_vec(&XYZ_TO_RGB, xyz).map(|v| linear_to_srgb(v.max(0.0)) + v.min(0.0) * 12.92)
}

/// Tolerance below which a channel excursion is treated as rounding, not clamping.
const GAMUT_TOLERANCE: f64 = 1e-9;

/// Result of [`lab_to_srgb`]: the clamped color and whether clamping occurred.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GamutMapped {
    pub color: RgbColor,
    pub clamped: bool,
}

pub fn lab_to_srgb(c: LabColor) -> GamutMapped {
    let raw = lab_to_srgb_unclamped(c);
    let clamped = raw
        .iter()
        .any(|&v| !v.is_finite() || !(-GAMUT_TOLERANCE..=1.0 + GAMUT_TOLERANCE).contains(&v));
    let ch = raw.map(|v| if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 });
    GamutMapped {
        color: RgbColor {
            r: ch[0],
            g: ch[1],
            b: ch[2],
        },
        clamped,
    }
}

pub fn in_srgb_gamut(c: LabColor) -> bool {
    !lab_to_srgb(c).clamped
}

/// CIE 1976 color difference.
pub fn delta_e76(p: LabColor, q: LabColor) -> f64 {
    lab_sq_error(p, q).sqrt()
}

/// Squared Euclidean distance in Lab, i.e. ΔE76².
pub fn lab_sq_error(p: LabColor, q: LabColor) -> f64 {
    let (dl, da, db) = (p.l - q.l, p.a - q.a, p.b - q.b);
    dl * dl + da * da + db * db
}

fn affine_to_unit(v: f64, range: (f64, f64)) -> f64 {
    (v - range.0) / (range.1 - range.0) * 2.0 - 1.0
}

fn affine_from_unit(v: f64, range: (f64, f64)) -> f64 {
    (v + 1.0) * 0.5 * (range.1 - range.0) + range.0
}

/// Maps L ∈ [0, 100] and a, b ∈ [-128, 127] affinely onto [-1, 1].
pub fn normalize_lab(c: LabColor) -> [f64; 3] {
    [
        affine_to_unit(c.l, L_RANGE),
        affine_to_unit(c.a, AB_RANGE),
        affine_to_unit(c.b, AB_RANGE),
    ]
}

pub fn denormalize_lab(v: [f64; 3]) -> LabColor {
    LabColor::new(
        affine_from_unit(v[0], L_RANGE),
        affine_from_unit(v[1], AB_RANGE),
        affine_from_unit(v[2], AB_RANGE),
    )
}

/// Per-axis `(scale, shift)` of [`denormalize_lab`], for use inside networks.
pub fn denormalize_affine() -> ([f64; 3], [f64; 3]) {
    let s = |r: (f64, f64)| (r.1 - r.0) * 0.5;
    let o = |r: (f64, f64)| (r.1 + r.0) * 0.5;
    ([s(L_RANGE), s(AB_RANGE), s(AB_RANGE)], [o(L_RANGE), o(AB_RANGE), o(AB_RANGE)])
}
