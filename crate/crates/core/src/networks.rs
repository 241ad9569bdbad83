//! The color-conditioned generator and the multi-head critic.
//!
//! Generator: the input image is concatenated with three constant planes
//! holding the normalized target color, encoded by a stem convolution and
//! strided 4×4 convolutions, transformed by residual blocks (two 4×4
//! convolutions plus a skip), and decoded by nearest-neighbour upsampling
//! and 4×4 convolutions. The color planes are concatenated again before an
//! unnormalized head convolution. The residual is
//! `δ = σ(conv(h)) · tanh(conv(h))`, a single-plane gate times a
//! per-channel shift, and the output is `clamp(x + δ, -1, 1)`.
//!
//! Critic: a fixed binomial low-pass on the input, strided 4×4 convolutions
//! with leaky ReLU and no normalization, then three heads: a 3×3
//! convolution giving the patch score map, and two pooled regressors for
//! the makeup color and the skin color.
//!
//! The even-kernel residual convolutions pad (1, 2) and then (2, 1), so each
//! block preserves size and the two half-pixel shifts cancel.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tint_autograd::conv::{binomial_blur, conv2d, conv2d_input_grad, conv2d_weight_grad};
use tint_autograd::{Bound, ConvGeom, Graph, ParamStore, Real, Tensor, Var};

use crate::colorlab::{denormalize_affine, denormalize_lab, lab_to_srgb, normalize_lab, srgb_to_lab, LabColor, RgbColor};
use crate::error::{Error, Result};
use crate::image::{ImageTensor, ValueRange};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    Instance,
    None,
}

/// Units of the critic's color and skin heads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadSpace {
    /// CIE Lab.
    Lab,
    /// sRGB scaled to 0..255.
    Rgb,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchSpec {
    pub base_width: usize,
    /// Downsampling stages, mirrored by as many upsampling stages.
    pub stages: usize,
    pub res_blocks: usize,
    /// Strided convolutions in the critic trunk.
    pub critic_depth: usize,
    pub leaky_slope: f64,
    pub generator_norm: Norm,
    pub critic_norm: Norm,
    pub head_space: HeadSpace,
}

impl Default for ArchSpec {
    fn default() -> Self {
        Self {
            base_width: 32,
            stages: 2,
            res_blocks: 4,
            critic_depth: 4,
            leaky_slope: 0.2,
            generator_norm: Norm::Instance,
            critic_norm: Norm::None,
            head_space: HeadSpace::Lab,
        }
    }
}

const IN_EPS: f64 = 1e-5;
const STEM: ConvGeom = ConvGeom::new(3, 1, 1);
const DOWN: ConvGeom = ConvGeom::new(4, 2, 1);
const RES_A: ConvGeom = ConvGeom::asymmetric(4, 1, 1, 2);
const RES_B: ConvGeom = ConvGeom::asymmetric(4, 1, 2, 1);
const HEAD3: ConvGeom = ConvGeom::new(3, 1, 1);
const POINT: ConvGeom = ConvGeom::new(1, 1, 0);

impl ArchSpec {
    pub fn validate(&self) -> Result<()> {
        if self.base_width == 0 || self.critic_depth == 0 {
            return Err(Error::Spec("base width and critic depth must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.leaky_slope) {
            return Err(Error::Spec(format!("leaky slope {} outside [0, 1)", self.leaky_slope)));
        }
        if self.critic_norm != Norm::None {
            return Err(Error::Spec("the critic must not normalize: the gradient penalty is per sample".into()));
        }
        if self.stages > 6 || self.critic_depth > 8 {
            return Err(Error::Spec("too many stages".into()));
        }
        Ok(())
    }

    /// Channel count at generator level `i` (0 = full resolution).
    fn gen_width(&self, level: usize) -> usize {
        self.base_width << level
    }

    fn critic_width(&self, layer: usize) -> usize {
        (self.base_width << layer).min(self.base_width * 8)
    }

    /// Checks that a square side is usable by both networks.
    pub fn check_side(&self, side: usize) -> Result<()> {
        let g = 1usize << self.stages;
        if side == 0 || side % g != 0 {
            return Err(Error::Shape(format!("side {side} not divisible by {g}")));
        }
        if side < 1 << self.critic_depth {
            return Err(Error::Shape(format!("side {side} too small for a depth-{} critic", self.critic_depth)));
        }
        Ok(())
    }

    fn generator_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let b = self.base_width;
        let mut out = vec![("g.stem.w".into(), vec![b, 6, 3, 3]), ("g.stem.b".into(), vec![b])];
        for i in 0..self.stages {
            let (ci, co) = (self.gen_width(i), self.gen_width(i + 1));
            out.push((format!("g.down{i}.w"), vec![co, ci, 4, 4]));
            out.push((format!("g.down{i}.b"), vec![co]));
        }
        let c = self.gen_width(self.stages);
        for j in 0..self.res_blocks {
            for k in 0..2 {
                out.push((format!("g.res{j}.c{k}.w"), vec![c, c, 4, 4]));
                out.push((format!("g.res{j}.c{k}.b"), vec![c]));
            }
        }
        for i in 0..self.stages {
            let (ci, co) = (self.gen_width(self.stages - i), self.gen_width(self.stages - i - 1));
            out.push((format!("g.up{i}.w"), vec![co, ci, 4, 4]));
            out.push((format!("g.up{i}.b"), vec![co]));
        }
        out.push(("g.head.w".into(), vec![b, b + 3, 3, 3]));
        out.push(("g.head.b".into(), vec![b]));
        out.push(("g.out.w".into(), vec![3, b, 3, 3]));
        out.push(("g.out.b".into(), vec![3]));
        out.push(("g.gate.w".into(), vec![1, b, 3, 3]));
        out.push(("g.gate.b".into(), vec![1]));
        out
    }

    fn critic_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut ci = 3;
        for l in 0..self.critic_depth {
            let co = self.critic_width(l);
            out.push((format!("d.conv{l}.w"), vec![co, ci, 4, 4]));
            out.push((format!("d.conv{l}.b"), vec![co]));
            ci = co;
        }
        out.push(("d.proba.w".into(), vec![1, ci, 3, 3]));
        out.push(("d.proba.b".into(), vec![1]));
        for head in ["color", "bg"] {
            out.push((format!("d.{head}.hid.w"), vec![ci, ci, 1, 1]));
            out.push((format!("d.{head}.hid.b"), vec![ci]));
            out.push((format!("d.{head}.fc.w"), vec![3, ci]));
            out.push((format!("d.{head}.fc.b"), vec![3]));
        }
        out
    }

    /// Head output `(scale, shift)` applied after `tanh`.
    pub fn head_affine(&self) -> ([f64; 3], [f64; 3]) {
        match self.head_space {
            HeadSpace::Lab => denormalize_affine(),
            HeadSpace::Rgb => ([127.5; 3], [127.5; 3]),
        }
    }

    /// A color in head units.
    pub fn to_head(&self, c: LabColor) -> [f64; 3] {
        match self.head_space {
            HeadSpace::Lab => c.to_array(),
            HeadSpace::Rgb => lab_to_srgb(c).color.channels().map(|v| v * 255.0),
        }
    }

    /// A head output as Lab.
    pub fn from_head(&self, v: [f64; 3]) -> LabColor {
        match self.head_space {
            HeadSpace::Lab => LabColor::from_array(v),
            HeadSpace::Rgb => {
                let [r, g, b] = v.map(|x| (x / 255.0).clamp(0.0, 1.0));
                srgb_to_lab(RgbColor::new(r, g, b).expect("clamped to [0, 1]"))
            }
        }
    }
}

/// Generator and critic weights with their architecture.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<R: Real = f32> {
    pub arch: ArchSpec,
    pub generator: ParamStore<R>,
    pub critic: ParamStore<R>,
    pub step: u64,
    /// Crop side the weights were trained on, when known.
    pub input_size: Option<usize>,
}

fn fan_in(shape: &[usize]) -> usize {
    match shape.len() {
        4 => shape[1] * shape[2] * shape[3],
        2 => shape[1],
        _ => 1,
    }
}

/// Seeded initialization: weights uniform with variance `gain / fan_in`
/// (gain 2 before ReLU-like activations), biases zero. The generator's
/// output layer starts at a tenth of that scale, so an untrained generator
/// is close to the identity.
pub fn init_params<R: Real>(arch: &ArchSpec, seed: u64) -> Result<ModelParams<R>> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fill = |shapes: Vec<(String, Vec<usize>)>| {
        let mut store = ParamStore::new();
        for (name, shape) in shapes {
            let n: usize = shape.iter().product();
            let t = if name.ends_with(".b") {
                Tensor::zeros(&shape)
            } else {
                let mut std = (2.0 / fan_in(&shape) as f64).sqrt();
                if name == "g.out.w" || name.ends_with("fc.w") {
                    std *= if name == "g.out.w" { 0.1 } else { 0.5 };
                }
                let a = std * 3f64.sqrt();
                Tensor::from_vec(&shape, (0..n).map(|_| R::lit(rng.random_range(-a..a))).collect())
            };
            store.insert(name, t);
        }
        store
    };
    let generator = fill(arch.generator_shapes());
    let critic = fill(arch.critic_shapes());
    Ok(ModelParams {
        arch: arch.clone(),
        generator,
        critic,
        step: 0,
        input_size: None,
    })
}

fn norm_act<R: Real>(g: &Graph<R>, arch: &ArchSpec, v: Var) -> Var {
    let v = match arch.generator_norm {
        Norm::Instance => g.instance_norm(v, R::lit(IN_EPS)),
        Norm::None => v,
    };
    g.relu(v)
}

fn norm_only<R: Real>(g: &Graph<R>, arch: &ArchSpec, v: Var) -> Var {
    match arch.generator_norm {
        Norm::Instance => g.instance_norm(v, R::lit(IN_EPS)),
        Norm::None => v,
    }
}

/// Three constant planes per sample holding the normalized target colors.
pub fn condition_planes<R: Real>(targets: &[LabColor], h: usize, w: usize) -> Tensor<R> {
    let plane = h * w;
    let mut data = Vec::with_capacity(targets.len() * 3 * plane);
    for c in targets {
        for v in normalize_lab(*c) {
            data.extend(std::iter::repeat_n(R::lit(v), plane));
        }
    }
    Tensor::from_vec(&[targets.len(), 3, h, w], data)
}

/// Generator on the tape. `x` is `[n, 3, h, w]` in `[-1, 1]`.
pub fn generator_graph<R: Real>(g: &Graph<R>, arch: &ArchSpec, p: &Bound, x: Var, targets: &[LabColor]) -> Var {
    let (n, _, h, w) = g.value(x).dims4();
    assert_eq!(n, targets.len(), "one target color per sample");
    let cond = g.constant(condition_planes(targets, h, w));
    let input = g.concat_channels(x, cond);
    let mut v = g.conv2d(input, p.get("g.stem.w"), Some(p.get("g.stem.b")), STEM);
    v = norm_act(g, arch, v);
    for i in 0..arch.stages {
        v = g.conv2d(v, p.get(&format!("g.down{i}.w")), Some(p.get(&format!("g.down{i}.b"))), DOWN);
        v = norm_act(g, arch, v);
    }
    for j in 0..arch.res_blocks {
        let mut r = g.conv2d(v, p.get(&format!("g.res{j}.c0.w")), Some(p.get(&format!("g.res{j}.c0.b"))), RES_A);
        r = norm_act(g, arch, r);
        r = g.conv2d(r, p.get(&format!("g.res{j}.c1.w")), Some(p.get(&format!("g.res{j}.c1.b"))), RES_B);
        r = norm_only(g, arch, r);
        v = g.add(v, r);
    }
    for i in 0..arch.stages {
        let geom = if i % 2 == 0 { RES_A } else { RES_B };
        v = g.conv2d(g.upsample_nearest2(v), p.get(&format!("g.up{i}.w")), Some(p.get(&format!("g.up{i}.b"))), geom);
        v = norm_act(g, arch, v);
    }
    // normalized layers cancel constant planes, so the decoder head sees them again
    let head = g.conv2d(g.concat_channels(v, cond), p.get("g.head.w"), Some(p.get("g.head.b")), STEM);
    let head = g.relu(head);
    let shift = g.tanh(g.conv2d(head, p.get("g.out.w"), Some(p.get("g.out.b")), STEM));
    // one gate plane shared by the three channels: where to edit, separate from how
    let z = g.conv2d(head, p.get("g.gate.w"), Some(p.get("g.gate.b")), STEM);
    let gate = g.add_scalar(g.mul_scalar(g.tanh(g.mul_scalar(z, R::lit(0.5))), R::lit(0.5)), R::lit(0.5));
    let delta = g.mul(g.concat_channels(g.concat_channels(gate, gate), gate), shift);
    g.clamp(g.add(x, delta), R::lit(-1.0), R::lit(1.0))
}

/// Critic outputs on the tape.
pub struct CriticOut {
    /// `[n, 1, h', w']` patch scores.
    pub map: Var,
    /// `[n]` mean patch score per sample.
    pub score: Var,
    /// `[n, 3]` makeup color in head units.
    pub color: Var,
    /// `[n, 3]` skin color in head units.
    pub bg: Var,
}

/// Critic on the tape. `x` is `[n, 3, h, w]` in `[-1, 1]`.
pub fn critic_graph<R: Real>(g: &Graph<R>, arch: &ArchSpec, p: &Bound, x: Var) -> CriticOut {
    let slope = R::lit(arch.leaky_slope);
    // period-2 patterns would otherwise alias into the pooled heads through the strides
    let mut v = g.binomial_blur(x);
    for l in 0..arch.critic_depth {
        v = g.conv2d(v, p.get(&format!("d.conv{l}.w")), Some(p.get(&format!("d.conv{l}.b"))), DOWN);
        v = g.leaky_relu(v, slope);
    }
    let map = g.conv2d(v, p.get("d.proba.w"), Some(p.get("d.proba.b")), HEAD3);
    let n = g.value(map).shape()[0];
    let score = g.reshape(g.spatial_mean(map), &[n]);
    let (scale, shift) = arch.head_affine();
    let (scale, shift) = (scale.map(R::lit), shift.map(R::lit));
    let head = |name: &str| {
        let hid = g.conv2d(v, p.get(&format!("d.{name}.hid.w")), Some(p.get(&format!("d.{name}.hid.b"))), POINT);
        let pooled = g.spatial_mean(g.leaky_relu(hid, slope));
        let t = g.tanh(g.linear(pooled, p.get(&format!("d.{name}.fc.w")), p.get(&format!("d.{name}.fc.b"))));
        g.affine_cols(t, &scale, &shift)
    };
    let color = head("color");
    let bg = head("bg");
    CriticOut { map, score, color, bg }
}

fn critic_layer<'a, R: Real>(store: &'a ParamStore<R>, name: &str) -> &'a Tensor<R> {
    store.get(name).unwrap_or_else(|| panic!("critic parameter {name} missing"))
}

/// Per-sample input gradient of the mean patch score, and the penalty
/// `mean_i (‖g_i‖ - 1)²` with its exact parameter gradient.
///
/// The trunk is piecewise linear, so for fixed activation patterns the input
/// gradient is a product of transposed convolutions and diagonal slope
/// masks. Differentiating that product with respect to each weight gives the
/// penalty gradient in one extra forward sweep; biases do not enter it.
pub struct Penalty<R: Real> {
    pub value: R,
    pub input_grad: Tensor<R>,
    pub grad_norms: Vec<R>,
    /// Gradients for `d.conv{l}.w` and `d.proba.w`.
    pub param_grads: Vec<(String, Tensor<R>)>,
}

pub fn critic_penalty<R: Real>(arch: &ArchSpec, critic: &ParamStore<R>, x: &Tensor<R>) -> Penalty<R> {
    let slope = R::lit(arch.leaky_slope);
    let depth = arch.critic_depth;
    let mut masks = Vec::with_capacity(depth);
    let mut sizes = vec![(x.shape()[2], x.shape()[3])];
    let mut a = binomial_blur(x);
    for l in 0..depth {
        let z = conv2d(
            &a,
            critic_layer(critic, &format!("d.conv{l}.w")),
            Some(critic_layer(critic, &format!("d.conv{l}.b"))),
            DOWN,
        );
        let m = z.map(|v| if v > R::zero() { R::one() } else { slope });
        a = z.zip_map(&m, |v, s| v * s);
        let (_, _, h, w) = a.dims4();
        sizes.push((h, w));
        masks.push(m);
    }
    let wp = critic_layer(critic, "d.proba.w");
    let (n, _, ht, wt) = a.dims4();
    let top = R::one() / R::lit((ht * wt) as f64);
    let v_top = Tensor::full(&[n, 1, ht, wt], top);

    // backward sweep: v_l is the gradient at the pre-activation of layer l
    let mut vs: Vec<Tensor<R>> = Vec::with_capacity(depth);
    let mut q = conv2d_input_grad(&v_top, wp, HEAD3, (ht, wt));
    for l in (0..depth).rev() {
        let v = q.zip_map(&masks[l], |g, m| g * m);
        q = conv2d_input_grad(&v, critic_layer(critic, &format!("d.conv{l}.w")), DOWN, sizes[l]);
        vs.push(v);
    }
    vs.reverse();
    let input_grad = binomial_blur(&q);

    let per = input_grad.numel() / n;
    let inv_n = R::one() / R::lit(n as f64);
    let mut value = R::zero();
    let mut grad_norms = Vec::with_capacity(n);
    let mut abar = Tensor::zeros(input_grad.shape());
    for s in 0..n {
        let gs = &input_grad.data()[s * per..(s + 1) * per];
        let norm = gs.iter().map(|&v| v * v).sum::<R>().sqrt();
        value += (norm - R::one()) * (norm - R::one()) * inv_n;
        grad_norms.push(norm);
        if norm > R::zero() {
            let k = R::lit(2.0) * inv_n * (norm - R::one()) / norm;
            for (d, &v) in abar.data_mut()[s * per..(s + 1) * per].iter_mut().zip(gs) {
                *d = k * v;
            }
        }
    }

    // forward sweep of the adjoint; the blur is self-adjoint
    let mut abar = binomial_blur(&abar);
    let mut param_grads = Vec::with_capacity(depth + 1);
    for l in 0..depth {
        let name = format!("d.conv{l}.w");
        let w = critic_layer(critic, &name);
        param_grads.push((name, conv2d_weight_grad(&abar, &vs[l], DOWN)));
        abar = conv2d(&abar, w, None, DOWN).zip_map(&masks[l], |v, m| v * m);
    }
    param_grads.push(("d.proba.w".into(), conv2d_weight_grad(&abar, &v_top, HEAD3)));
    Penalty {
        value,
        input_grad,
        grad_norms,
        param_grads,
    }
}

/// Critic outputs for one batch, evaluated without gradients.
#[derive(Clone, Debug)]
pub struct CriticEval<R: Real> {
    pub score_map: Tensor<R>,
    pub color: Vec<LabColor>,
    pub bg: Vec<LabColor>,
}

fn head_rows<R: Real>(arch: &ArchSpec, t: &Tensor<R>) -> Vec<LabColor> {
    t.data()
        .chunks(3)
        .map(|r| arch.from_head([r[0].as_f64(), r[1].as_f64(), r[2].as_f64()]))
        .collect()
}

impl<R: Real> ModelParams<R> {
    fn check_batch(&self, x: &Tensor<R>) -> Result<()> {
        if x.shape().len() != 4 || x.shape()[1] != 3 {
            return Err(Error::Shape(format!("expected [n, 3, h, w], got {:?}", x.shape())));
        }
        let (h, w) = (x.shape()[2], x.shape()[3]);
        if h != w {
            return Err(Error::Shape(format!("input must be square, got {h}x{w}")));
        }
        self.arch.check_side(h)
    }

    /// Batched generator pass; `x` in `[-1, 1]`.
    pub fn generate(&self, x: &Tensor<R>, targets: &[LabColor]) -> Result<Tensor<R>> {
        self.check_batch(x)?;
        if targets.len() != x.shape()[0] {
            return Err(Error::Shape(format!("{} targets for {} images", targets.len(), x.shape()[0])));
        }
        if targets.iter().any(|c| !c.is_finite()) {
            return Err(Error::Domain("non-finite target color".into()));
        }
        let g = Graph::new();
        let p = self.generator.bind(&g, false);
        let xv = g.constant(x.clone());
        let out = generator_graph(&g, &self.arch, &p, xv, targets);
        Ok((*g.value(out)).clone())
    }

    /// Batched critic pass; `x` in `[-1, 1]`.
    pub fn criticize(&self, x: &Tensor<R>) -> Result<CriticEval<R>> {
        self.check_batch(x)?;
        let g = Graph::new();
        let p = self.critic.bind(&g, false);
        let xv = g.constant(x.clone());
        let out = critic_graph(&g, &self.arch, &p, xv);
        Ok(CriticEval {
            score_map: (*g.value(out.map)).clone(),
            color: head_rows(&self.arch, &g.value(out.color)),
            bg: head_rows(&self.arch, &g.value(out.bg)),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.generator.is_finite() && self.critic.is_finite()
    }
}

/// Generator on one image in `[-1, 1]`; returns an image in `[-1, 1]`.
pub fn generator_forward<R: Real>(params: &ModelParams<R>, x: &ImageTensor, c: LabColor) -> Result<ImageTensor> {
    let signed = x.to_signed();
    let t = ImageTensor::batch_to_tensor::<R>(&[&signed])?;
    let out = params.generate(&t, &[c])?;
    Ok(ImageTensor::from_tensor(&out, 0, ValueRange::Signed))
}

/// Critic on one image: score map, makeup color and skin color.
pub fn discriminator_forward<R: Real>(params: &ModelParams<R>, x: &ImageTensor) -> Result<(Tensor<R>, LabColor, LabColor)> {
    let signed = x.to_signed();
    let t = ImageTensor::batch_to_tensor::<R>(&[&signed])?;
    let out = params.criticize(&t)?;
    Ok((out.score_map, out.color[0], out.bg[0]))
}

/// Clamps a Lab head output into the denormalization box.
pub fn clamp_to_lab_box(c: LabColor) -> LabColor {
    let [l, a, b] = normalize_lab(c).map(|v| v.clamp(-1.0, 1.0));
    denormalize_lab([l, a, b])
}

// ----- checkpoints -----

const MAGIC: &[u8; 8] = b"TINTCKPT";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    arch: ArchSpec,
    step: u64,
    #[serde(default)]
    input_size: Option<usize>,
    dtype: String,
    generator: Vec<TensorEntry>,
    critic: Vec<TensorEntry>,
}

fn entries<R: Real>(store: &ParamStore<R>) -> Vec<TensorEntry> {
    store
        .iter()
        .map(|(name, t)| TensorEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
        })
        .collect()
}

/// Checkpoint layout: the 8-byte magic `TINTCKPT`, a little-endian `u32`
/// format version, a `u32` header length, a JSON header (architecture, step,
/// dtype, tensor names and shapes), then every tensor's values as
/// little-endian floats in header order, generator first.
pub fn save_checkpoint<R: Real>(params: &ModelParams<R>, path: &Path) -> Result<()> {
    let header = Header {
        arch: params.arch.clone(),
        step: params.step,
        input_size: params.input_size,
        dtype: R::DTYPE.to_string(),
        generator: entries(&params.generator),
        critic: entries(&params.critic),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut buf = Vec::with_capacity(16 + json.len() + (params.generator.num_scalars() + params.critic.num_scalars()) * R::BYTES);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    for store in [&params.generator, &params.critic] {
        for (_, t) in store.iter() {
            for &v in t.data() {
                v.write_le(&mut buf);
            }
        }
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<R: Real>(path: &Path) -> Result<ModelParams<R>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |reason: String| Error::Checkpoint {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(bad(format!("format version {version}, expected {VERSION}")));
    }
    let hlen = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    let body = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header".into()))?;
    let header: Header = serde_json::from_slice(body).map_err(|e| bad(format!("header: {e}")))?;
    if header.dtype != R::DTYPE {
        return Err(bad(format!("stored as {}, requested {}", header.dtype, R::DTYPE)));
    }
    header.arch.validate().map_err(|e| bad(e.to_string()))?;
    let mut cursor = 16 + hlen;
    let mut read_store = |list: &[TensorEntry], expected: Vec<(String, Vec<usize>)>| -> Result<ParamStore<R>> {
        let listed: Vec<(&str, &[usize])> = list.iter().map(|e| (e.name.as_str(), e.shape.as_slice())).collect();
        let wanted: Vec<(&str, &[usize])> = expected.iter().map(|(n, s)| (n.as_str(), s.as_slice())).collect();
        if listed != wanted {
            return Err(bad("tensor table does not match the stored architecture".into()));
        }
        let mut store = ParamStore::new();
        for e in list {
            let n: usize = e.shape.iter().product();
            let end = cursor + n * R::BYTES;
            let raw = bytes.get(cursor..end).ok_or_else(|| bad(format!("truncated in tensor {}", e.name)))?;
            let data = raw.chunks_exact(R::BYTES).map(R::read_le).collect();
            store.insert(e.name.clone(), Tensor::from_vec(&e.shape, data));
            cursor = end;
        }
        Ok(store)
    };
    let generator = read_store(&header.generator, header.arch.generator_shapes())?;
    let critic = read_store(&header.critic, header.arch.critic_shapes())?;
    if cursor != bytes.len() {
        return Err(bad(format!("{} trailing bytes", bytes.len() - cursor)));
    }
    Ok(ModelParams {
        arch: header.arch,
        generator,
        critic,
        step: header.step,
        input_size: header.input_size,
    })
}

/// Loads a checkpoint and requires it to have architecture `arch`.
pub fn load_checkpoint_for<R: Real>(path: &Path, arch: &ArchSpec) -> Result<ModelParams<R>> {
    let params = load_checkpoint(path)?;
    if &params.arch != arch {
        return Err(Error::Checkpoint {
            path: path.to_path_buf(),
            reason: format!("architecture mismatch: stored {:?}, requested {:?}", params.arch, arch),
        });
    }
    Ok(params)
}
