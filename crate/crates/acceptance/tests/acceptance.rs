//! The acceptance run. Every headline criterion prints one PASS/FAIL line
//! with its measured value; the process exits non-zero if any fails.
//!
//! The end-to-end stage trains three models at a reduced desk scale by
//! default. Set `TINT_ACCEPTANCE_FULL=1` for 2,000 crops at 64×64, the
//! default architecture and 40 epochs. Artifacts are kept under the cargo
//! target directory (`target/tmp/acceptance`).

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use axum::body::{Body, Bytes};
use axum::http::{Request, StatusCode};
use axum::Router;
use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use http_body_util::BodyExt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use tower::ServiceExt;

use tint_acceptance::Report;
use tint_autograd::{ParamStore, Tensor};
use tint_core::colorlab::{lab_to_srgb_unclamped, srgb_channels_to_lab};
use tint_core::dataset::{generate_dataset, generate_triplets, Dataset, GenerateConfig, Split, TripletConfig, TripletSet};
use tint_core::evalproto::{eval_color_accuracy, eval_style_transfer, kmeans_shades, select_ground_truth, EvalReport, ShadeSet};
use tint_core::inference::{GanModel, IdentityModel, InferenceSession, MakeupModel, Shade, ShadeCatalog};
use tint_core::losses::{
    critic_objective, generator_objective, mssim, total_loss_d, total_loss_g, GeneratorLosses, LossWeights,
    TrainBatch,
};
use tint_core::networks::{critic_penalty, init_params, ArchSpec, HeadSpace, ModelParams};
use tint_core::synthdata::{render_crop, sample_spec, SamplerConfig};
use tint_core::training::{prepare_training_set, train, TrainConfig};
use tint_core::weakcolor::{weak_makeup_color, RegionKind, RegionMask};
use tint_core::{delta_e76, lab_sq_error, ImageTensor, LabColor, Result, ValueRange};

// ---- pinned tolerances ----------------------------------------------------

const ROUND_TRIP_TOL: f64 = 1e-4;
const ROUND_TRIP_SAMPLES: usize = 100_000;
const RED_LAB: [f64; 3] = [53.24, 80.09, 67.20];
const RED_TOL: f64 = 0.05;
const METRIC_TRIPLES: usize = 10_000;
const MSSIM_SELF_TOL: f64 = 1e-6;
const MSSIM_SYMMETRY_TOL: f64 = 1e-9;
/// Box-blur radii for the monotonicity check: one and eight passes of a 3×3 box.
const BLUR_LIGHT: usize = 1;
const BLUR_HEAVY: usize = 8;
const GRAD_REL_TOL: f64 = 1e-3;
const FD_STEP: f64 = 1e-6;
const SHADING_L: f64 = 8.0;
const SHADING_DE_TOL: f64 = 1.0;
const CORRUPTION: f64 = 0.4;
/// Lips ΔE bound pinned from the calibration run of the reduced schedule
/// (36.43 measured, seed 2024), with margin.
const LIPS_DE_THRESHOLD: f64 = 40.0;
const SHADES: usize = 10;
const TRIPLETS: usize = 100;
const SEED: u64 = 2024;

// ---- color core -----------------------------------------------------------

/// Independent sRGB (D65) to Lab reference written from the standard formulas.
fn oracle_lab(rgb: [f64; 3]) -> [f64; 3] {
    let lin = rgb.map(|c| if c <= 0.04045 { c / 12.92 } else { ((c + 0.055) / 1.055).powf(2.4) });
    let m = [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ];
    let white = [0.95047, 1.0, 1.08883];
    let xyz: Vec<f64> = (0..3).map(|i| (0..3).map(|j| m[i][j] * lin[j]).sum::<f64>() / white[i]).collect();
    let f = |t: f64| {
        let d: f64 = 6.0 / 29.0;
        if t > d.powi(3) {
            t.cbrt()
        } else {
            t / (3.0 * d * d) + 4.0 / 29.0
        }
    };
    let (fx, fy, fz) = (f(xyz[0]), f(xyz[1]), f(xyz[2]));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

fn color_core(r: &mut Report) {
    r.section("color core");
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0f64;
    for _ in 0..ROUND_TRIP_SAMPLES {
        let rgb: [f64; 3] = [rng.random(), rng.random(), rng.random()];
        let back = lab_to_srgb_unclamped(srgb_channels_to_lab(rgb));
        worst = (0..3).map(|i| (back[i] - rgb[i]).abs()).fold(worst, f64::max);
    }
    r.check(
        "srgb-lab round trip",
        worst <= ROUND_TRIP_TOL,
        format!("max channel error {worst:.2e} over {ROUND_TRIP_SAMPLES} colors (tol {ROUND_TRIP_TOL:e})"),
    );

    let red = srgb_channels_to_lab([1.0, 0.0, 0.0]).to_array();
    let oracle = oracle_lab([1.0, 0.0, 0.0]);
    let off_pin = (0..3).map(|i| (red[i] - RED_LAB[i]).abs()).fold(0.0, f64::max);
    let off_oracle = (0..3).map(|i| (red[i] - oracle[i]).abs()).fold(0.0, f64::max);
    r.check(
        "pure red in Lab",
        off_pin <= RED_TOL && off_oracle <= RED_TOL,
        format!("({:.4}, {:.4}, {:.4}); off pinned by {off_pin:.4}, off reference formula by {off_oracle:.2e}", red[0], red[1], red[2]),
    );

    let lab = |rng: &mut ChaCha8Rng| LabColor::new(rng.random_range(0.0..100.0), rng.random_range(-128.0..127.0), rng.random_range(-128.0..127.0));
    let mut violations = Vec::new();
    for i in 0..METRIC_TRIPLES {
        let (p, q, s) = (lab(&mut rng), lab(&mut rng), lab(&mut rng));
        let (pq, qp, ps, qs) = (delta_e76(p, q), delta_e76(q, p), delta_e76(p, s), delta_e76(q, s));
        let ok = pq >= 0.0
            && delta_e76(p, p) == 0.0
            && (p == q || pq > 0.0)
            && pq == qp
            && ps <= pq + qs + 1e-9
            && (lab_sq_error(p, q) - pq * pq).abs() <= 1e-9 * (1.0 + pq * pq);
        if !ok {
            violations.push(i);
        }
    }
    r.check(
        "delta E metric axioms",
        violations.is_empty(),
        format!("{} violations over {METRIC_TRIPLES} triples", violations.len()),
    );
}

// ---- MS-SSIM --------------------------------------------------------------

/// The documented test crop: a rendered 64×64 lip crop with sampler seed 21.
fn test_crop() -> ImageTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    render_crop(&sample_spec(&mut rng, &SamplerConfig::default())).unwrap().image
}

fn noise_image(side: usize, seed: u64) -> ImageTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..side * side * 3).map(|_| rng.random::<f32>()).collect();
    ImageTensor::new(side, side, ValueRange::Unit, data).unwrap()
}

/// `passes` rounds of a 3×3 box filter with clamped borders.
fn box_blur(img: &ImageTensor, passes: usize) -> ImageTensor {
    let (w, h) = img.dims();
    let mut cur = img.clone();
    for _ in 0..passes {
        let mut next = cur.clone();
        for y in 0..h {
            for x in 0..w {
                let mut acc = [0f32; 3];
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let p = cur.pixel((x as i64 + dx).clamp(0, w as i64 - 1) as usize, (y as i64 + dy).clamp(0, h as i64 - 1) as usize);
                        for c in 0..3 {
                            acc[c] += p[c] / 9.0;
                        }
                    }
                }
                next.set_pixel(x, y, acc);
            }
        }
        cur = next;
    }
    cur
}

fn mssim_checks(r: &mut Report) {
    r.section("MS-SSIM");
    let crop = test_crop();
    let own = mssim(&crop, &crop, None).unwrap();
    r.check("mssim(x, x) = 1", (own - 1.0).abs() <= MSSIM_SELF_TOL, format!("{own:.12}"));

    let mut worst = 0f64;
    for seed in 0..5 {
        let other = noise_image(64, 100 + seed);
        let (ab, ba) = (mssim(&crop, &other, None).unwrap(), mssim(&other, &crop, None).unwrap());
        worst = worst.max((ab - ba).abs());
        let blurred = box_blur(&crop, 2 + seed as usize);
        let (ab, ba) = (mssim(&crop, &blurred, None).unwrap(), mssim(&blurred, &crop, None).unwrap());
        worst = worst.max((ab - ba).abs());
    }
    r.check("mssim symmetry", worst <= MSSIM_SYMMETRY_TOL, format!("max |ab - ba| = {worst:.2e}"));

    let light = mssim(&crop, &box_blur(&crop, BLUR_LIGHT), None).unwrap();
    let heavy = mssim(&crop, &box_blur(&crop, BLUR_HEAVY), None).unwrap();
    r.check(
        "mssim blur monotonicity",
        heavy < light && light < 1.0,
        format!("{BLUR_LIGHT} box pass {light:.4} > {BLUR_HEAVY} passes {heavy:.4}"),
    );
}

// ---- gradient fidelity ----------------------------------------------------

const TOY_SIDE: usize = 16;

fn toy_params(seed: u64) -> ModelParams<f64> {
    let arch = ArchSpec {
        base_width: 2,
        stages: 1,
        res_blocks: 1,
        critic_depth: 2,
        ..ArchSpec::default()
    };
    let mut p = init_params::<f64>(&arch, seed).unwrap();
    let out = p.generator.get_mut("g.out.w").unwrap();
    *out = out.scale(8.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 99);
    let names: Vec<String> = p.critic.names().iter().filter(|n| n.ends_with(".b")).cloned().collect();
    for n in names {
        for v in p.critic.get_mut(&n).unwrap().data_mut() {
            *v = rng.random_range(-0.1..0.1);
        }
    }
    p
}

fn toy_images(n: usize, seed: u64, amp: f64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = n * 3 * TOY_SIDE * TOY_SIDE;
    Tensor::from_vec(&[n, 3, TOY_SIDE, TOY_SIDE], (0..len).map(|_| rng.random_range(-amp..amp)).collect())
}

fn toy_batch() -> TrainBatch<f64> {
    TrainBatch {
        x: toy_images(2, 5, 0.8),
        weak_makeup: vec![LabColor::new(45.0, 50.0, 20.0), LabColor::new(30.0, 10.0, -30.0)],
        weak_skin: vec![LabColor::new(60.0, 15.0, 20.0), LabColor::new(40.0, 12.0, 25.0)],
        targets: vec![LabColor::new(70.0, -20.0, 40.0), LabColor::new(20.0, 30.0, 0.0)],
    }
}

/// Relative L2 error of `analytic` against central differences of `f`
/// over up to `limit` random coordinates of every tensor in `store`.
fn fd_error(store: &ParamStore<f64>, analytic: &[Tensor<f64>], limit: usize, seed: u64, f: impl Fn(&ParamStore<f64>) -> f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut diff, mut norm) = (0.0f64, 0.0f64);
    for (i, name) in store.names().iter().enumerate() {
        let len = store.get(name).unwrap().numel();
        for _ in 0..limit.min(len) {
            let j = rng.random_range(0..len);
            let mut plus = store.clone();
            plus.get_mut(name).unwrap().data_mut()[j] += FD_STEP;
            let mut minus = store.clone();
            minus.get_mut(name).unwrap().data_mut()[j] -= FD_STEP;
            let fd = (f(&plus) - f(&minus)) / (2.0 * FD_STEP);
            diff += (analytic[i].data()[j] - fd).powi(2);
            norm += fd.powi(2);
        }
    }
    if norm == 0.0 {
        return f64::INFINITY;
    }
    diff.sqrt() / norm.sqrt()
}

fn only(color: f64, bg: f64, cycle: f64) -> LossWeights {
    LossWeights { gp: 0.0, color, bg, cycle }
}

/// Gradient of one generator term; the unit-weight adversarial part is
/// subtracted so that the term is isolated.
fn generator_term_error(weights: LossWeights, pick: fn(&GeneratorLosses) -> f64, seed: u64) -> f64 {
    let p = toy_params(seed);
    let b = toy_batch();
    let (_, mut grads) = generator_objective(&p, &b, &weights, 1).unwrap();
    if weights != only(0.0, 0.0, 0.0) {
        let (_, adv) = generator_objective(&p, &b, &only(0.0, 0.0, 0.0), 1).unwrap();
        for (g, a) in grads.iter_mut().zip(&adv) {
            *g = g.zip_map(a, |u, v| u - v);
        }
    }
    fd_error(&p.generator, &grads, 6, seed, |store| {
        let q = ModelParams { generator: store.clone(), ..p.clone() };
        pick(&generator_objective(&q, &b, &weights, 1).unwrap().0)
    })
}

fn gradient_fidelity(r: &mut Report) {
    r.section("gradient fidelity (f64, toy networks)");
    let terms: [(&str, LossWeights, fn(&GeneratorLosses) -> f64); 4] = [
        ("color loss of the generator", only(1.0, 0.0, 0.0), |l| l.color),
        ("adversarial loss of the generator", only(0.0, 0.0, 0.0), |l| l.adv),
        ("cycle loss", only(0.0, 0.0, 1.0), |l| l.cycle),
        ("background loss of the generator", only(0.0, 1.0, 0.0), |l| l.bg),
    ];
    for (i, (name, w, pick)) in terms.into_iter().enumerate() {
        let err = generator_term_error(w, pick, i as u64 + 1);
        r.check(&format!("gradient: {name}"), err < GRAD_REL_TOL, format!("relative error {err:.2e}"));
    }

    let p = toy_params(12);
    let x = toy_images(2, 13, 1.0);
    let pen = critic_penalty(&p.arch, &p.critic, &x);
    let mut analytic = p.critic.zero_grads();
    for (name, g) in &pen.param_grads {
        analytic[p.critic.index_of(name).unwrap()] = g.clone();
    }
    let err = fd_error(&p.critic, &analytic, 8, 14, |store| critic_penalty(&p.arch, store, &x).value);
    r.check("gradient: gradient penalty", err < GRAD_REL_TOL, format!("relative error {err:.2e}"));

    let p = toy_params(15);
    let b = toy_batch();
    let w = LossWeights { gp: 0.0, ..LossWeights::default() };
    let run = |q: &ModelParams<f64>| critic_objective(q, &b, &w, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let (_, grads) = run(&p);
    let err = fd_error(&p.critic, &grads, 6, 16, |store| run(&ModelParams { critic: store.clone(), ..p.clone() }).0.total);
    r.check("gradient: critic objective", err < GRAD_REL_TOL, format!("relative error {err:.2e}"));
}

// ---- weak extractor -------------------------------------------------------

fn weak_extractor(r: &mut Report) {
    r.section("weak color extractor");
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let side = 32;
    let random_mask = |rng: &mut ChaCha8Rng| {
        let bits: Vec<bool> = (0..side * side).map(|_| rng.random_bool(0.3)).collect();
        RegionMask::new(side, side, RegionKind::Lips, bits).unwrap()
    };

    let mut inexact = 0;
    for _ in 0..500 {
        let rgb = [rng.random::<f32>(), rng.random(), rng.random()];
        let img = ImageTensor::filled(side, side, rgb).quantized();
        let mask = random_mask(&mut rng);
        if mask.count() == 0 {
            continue;
        }
        if weak_makeup_color(&img, &mask).unwrap() != img.lab_at(0, 0) {
            inexact += 1;
        }
    }
    r.check("uniform regions recovered exactly", inexact == 0, format!("{inexact} of 500 regions off"));

    let mut moved = 0;
    for _ in 0..500 {
        let rgb = [rng.random::<f32>(), rng.random(), rng.random()];
        let mut img = ImageTensor::filled(side, side, rgb).quantized();
        let truth = img.lab_at(0, 0);
        let mask = random_mask(&mut rng);
        let inside: Vec<usize> = (0..side * side).filter(|&i| mask.bits()[i]).collect();
        if inside.is_empty() {
            continue;
        }
        let k = (inside.len() as f64 * CORRUPTION).floor() as usize;
        for &i in inside.iter().take(k) {
            let junk = [rng.random::<f32>(), rng.random(), rng.random()];
            img.set_pixel(i % side, i / side, junk);
        }
        if weak_makeup_color(&img, &mask).unwrap() != truth {
            moved += 1;
        }
    }
    r.check(
        "median unchanged under 40% corruption",
        moved == 0,
        format!("{moved} of 500 regions moved"),
    );

    let cfg = SamplerConfig {
        max_shading: SHADING_L,
        max_speckle: 0.1,
        ..SamplerConfig::default()
    };
    let mut worst = 0f64;
    for _ in 0..200 {
        let mut spec = sample_spec(&mut rng, &cfg);
        spec.shading = SHADING_L;
        let s = render_crop(&spec).unwrap();
        worst = worst.max(delta_e76(weak_makeup_color(&s.image, &s.mask).unwrap(), s.gt_makeup));
    }
    r.check(
        "±8 L* shading within 1 delta E",
        worst <= SHADING_DE_TOL,
        format!("worst {worst:.3} over 200 shaded crops"),
    );
}

// ---- loss arithmetic ------------------------------------------------------

fn loss_arithmetic(r: &mut Report) {
    r.section("loss arithmetic");
    let w = LossWeights::default();
    let unit_g = total_loss_g(1.0, 1.0, 1.0, 1.0, &w);
    let unit_d = total_loss_d(1.0, 1.0, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut exact = true;
    for _ in 0..1000 {
        let v: [f64; 4] = [rng.random_range(-5.0..5.0), rng.random(), rng.random(), rng.random()];
        exact &= total_loss_g(v[0], v[1], v[2], v[3], &w) == v[0] + 10.0 * v[1] + 5.0 * v[2] + 200.0 * v[3];
        exact &= total_loss_d(v[0], v[1], v[2]) == v[0] + v[1] + v[2];
    }
    r.check(
        "weighted and unweighted totals",
        unit_g == 216.0 && unit_d == 3.0 && exact && (w.gp, w.color, w.bg, w.cycle) == (10.0, 10.0, 5.0, 200.0),
        format!("unit components give L_G = {unit_g}, L_D = {unit_d}; 1000 random composites exact: {exact}"),
    );
}

// ---- end to end -----------------------------------------------------------

struct Scale {
    name: &'static str,
    crops: usize,
    side: usize,
    epochs: usize,
    arch: ArchSpec,
}

impl Scale {
    fn from_env() -> Self {
        if std::env::var("TINT_ACCEPTANCE_FULL").is_ok_and(|v| v == "1") {
            Scale {
                name: "full",
                crops: 2000,
                side: 64,
                epochs: 40,
                arch: ArchSpec::default(),
            }
        } else {
            Scale {
                name: "reduced",
                crops: 1000,
                side: 32,
                epochs: 15,
                arch: ArchSpec {
                    base_width: 16,
                    res_blocks: 2,
                    ..ArchSpec::default()
                },
            }
        }
    }
}

struct Trained {
    full: PathBuf,
    dataset: Dataset,
    shades: ShadeSet,
}

fn work_dir(scale: &Scale) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(scale.name);
    if dir.exists() {
        std::fs::remove_dir_all(&dir).unwrap();
    }
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn summary_line(rep: &EvalReport) -> String {
    let a = &rep.aggregates;
    let f = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
    format!(
        "lips dE {} skin dE {} L1 {} 1-MSSIM {} ({} records)",
        f(a.delta_e),
        f(a.skin_delta_e),
        f(a.l1),
        f(a.one_minus_mssim),
        rep.records.len()
    )
}

/// Returns the ground truth chosen by the protocol for every source.
struct Oracle(HashMap<Vec<u32>, ImageTensor>);

fn key(img: &ImageTensor) -> Vec<u32> {
    img.data().iter().map(|v| v.to_bits()).collect()
}

impl MakeupModel for Oracle {
    fn estimate(&self, image: &ImageTensor) -> Result<LabColor> {
        IdentityModel.estimate(image)
    }

    fn synthesize(&self, image: &ImageTensor, _: LabColor) -> Result<ImageTensor> {
        Ok(self.0[&key(image)].clone())
    }
}

fn oracle_for(set: &TripletSet) -> Oracle {
    let mut truth = HashMap::new();
    for t in &set.records {
        let source = set.load_entry(&t.source).unwrap();
        let cands: Vec<_> = t.candidates.iter().map(|c| set.load_entry(c).unwrap()).collect();
        let chosen = select_ground_truth(&cands, &source).unwrap();
        truth.insert(key(&source.image), cands[chosen].image.clone());
    }
    Oracle(truth)
}

fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    let rank = |v: &[f64]| {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        for (pos, &i) in idx.iter().enumerate() {
            r[i] = pos as f64;
        }
        r
    };
    let (rx, ry) = (rank(xs), rank(ys));
    let n = xs.len() as f64;
    let d2: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - b).powi(2)).sum();
    1.0 - 6.0 * d2 / (n * (n * n - 1.0))
}

fn end_to_end(r: &mut Report) -> Trained {
    let scale = Scale::from_env();
    r.section(&format!(
        "end to end, {} scale: {} crops at {}x{}, width {}, {} residual blocks, {} epochs",
        scale.name, scale.crops, scale.side, scale.side, scale.arch.base_width, scale.arch.res_blocks, scale.epochs
    ));
    let dir = work_dir(&scale);
    let sampler = SamplerConfig {
        size: scale.side,
        ..SamplerConfig::default()
    };
    let manifest = generate_dataset(
        &GenerateConfig {
            n: scale.crops,
            seed: SEED,
            sampler: sampler.clone(),
            ..GenerateConfig::default()
        },
        &dir.join("data"),
    )
    .unwrap();
    let triplets = generate_triplets(
        &TripletConfig {
            n: TRIPLETS,
            seed: SEED + 1,
            sampler,
            ..TripletConfig::default()
        },
        &dir.join("triplets"),
    )
    .unwrap();
    let dataset = Dataset::load(&manifest).unwrap();
    let triplets = TripletSet::load(&triplets).unwrap();

    let base = TrainConfig {
        manifest: manifest.clone(),
        crop_size: scale.side,
        epochs: scale.epochs,
        seed: SEED,
        checkpoint_every: 0,
        arch: scale.arch.clone(),
        ..TrainConfig::default()
    };
    let (prepared, _) = prepare_training_set(&dataset, &base).unwrap();
    let pool: Vec<LabColor> = prepared.iter().map(|p| p.makeup).collect();
    let shades = kmeans_shades(&pool, SHADES, SEED).unwrap();

    let mut initial = init_params::<f32>(&base.arch, base.seed).unwrap();
    initial.input_size = Some(scale.side);
    let untrained = eval_color_accuracy(&GanModel::new(initial).unwrap(), &dataset, &shades).unwrap();
    r.info("untrained", summary_line(&untrained));

    let variants = [
        ("full", base.weights, base.arch.head_space),
        ("no-bg", LossWeights { bg: 0.0, ..base.weights }, base.arch.head_space),
        ("rgb-mse", base.weights, HeadSpace::Rgb),
    ];
    let mut color = HashMap::new();
    let mut transfer = HashMap::new();
    let mut checkpoints = HashMap::new();
    for (name, weights, head) in variants {
        let mut cfg = base.clone();
        cfg.weights = weights;
        cfg.arch.head_space = head;
        cfg.out_dir = dir.join(format!("run-{name}"));
        let started = std::time::Instant::now();
        let out = train(&cfg).unwrap();
        let model = GanModel::load(&out.final_checkpoint).unwrap();
        let c = eval_color_accuracy(&model, &dataset, &shades).unwrap();
        r.info(&format!("{name} model"), format!("trained in {:.0}s; {}", started.elapsed().as_secs_f64(), summary_line(&c)));
        color.insert(name, c.aggregates.clone());
        if name != "rgb-mse" {
            let t = eval_style_transfer(&model, &triplets).unwrap();
            r.info(&format!("{name} transfer"), summary_line(&t));
            transfer.insert(name, t.aggregates.clone());
        }
        checkpoints.insert(name, out.final_checkpoint);
    }

    let lips = color["full"].delta_e.unwrap();
    let lips0 = untrained.aggregates.delta_e.unwrap();
    r.check(
        "(a) lips delta E at or under the pinned threshold and better than untrained",
        lips <= LIPS_DE_THRESHOLD && lips < lips0,
        format!("{lips:.3} vs threshold {LIPS_DE_THRESHOLD} and untrained {lips0:.3}"),
    );
    let (skin, skin_nobg) = (color["full"].skin_delta_e.unwrap(), color["no-bg"].skin_delta_e.unwrap());
    r.check(
        "(b) skin delta E below the no-background-loss ablation",
        skin < skin_nobg,
        format!("{skin:.3} vs {skin_nobg:.3}"),
    );
    let lips_rgb = color["rgb-mse"].delta_e.unwrap();
    r.check(
        "(c) lips delta E with lab-mse below rgb-mse",
        lips < lips_rgb,
        format!("{lips:.3} vs {lips_rgb:.3}"),
    );

    r.section("style transfer protocol");
    let (t_full, t_nobg) = (transfer["full"].one_minus_mssim.unwrap(), transfer["no-bg"].one_minus_mssim.unwrap());
    r.check(
        "1-MSSIM below the no-background-loss ablation",
        t_full < t_nobg,
        format!("{t_full:.4} vs {t_nobg:.4} over {TRIPLETS} triplets"),
    );
    let oracle = eval_style_transfer(&oracle_for(&triplets), &triplets).unwrap();
    let (l1, om) = (oracle.aggregates.l1.unwrap(), oracle.aggregates.one_minus_mssim.unwrap());
    r.check(
        "oracle model scores exactly zero",
        l1 == 0.0 && om == 0.0 && oracle.records.len() == TRIPLETS,
        format!("L1 {l1}, 1-MSSIM {om}"),
    );

    let full = checkpoints.remove("full").unwrap();
    model_properties(r, &GanModel::load(&full).unwrap(), &dataset, &shades, &scale);
    Trained { full, dataset, shades }
}

/// Behavior of the trained model reported for inspection; these do not gate the run.
fn model_properties(r: &Report, model: &GanModel, ds: &Dataset, shades: &ShadeSet, scale: &Scale) {
    r.section("trained model properties (informational)");
    let tests: Vec<_> = ds.split(Split::Test).collect();
    let (mut closer, mut pairs) = (0, 0);
    let (mut self_de, mut n_self) = (0.0, 0);
    for rec in &tests {
        let s = ds.load_sample(rec).unwrap();
        let before = weak_makeup_color(&s.image, &s.mask).unwrap();
        for &c in &shades.centroids {
            let after = weak_makeup_color(&model.synthesize(&s.image, c).unwrap(), &s.mask).unwrap();
            pairs += 1;
            closer += (delta_e76(after, c) < delta_e76(before, c)) as usize;
        }
        let est = model.estimate(&s.image).unwrap();
        let out = model.synthesize(&s.image, est).unwrap();
        self_de += delta_e76(weak_makeup_color(&out, &s.mask).unwrap(), before);
        n_self += 1;
    }
    r.info(
        "weak makeup color moves toward the target",
        format!("{closer} of {pairs} pairs ({:.1}%)", 100.0 * closer as f64 / pairs as f64),
    );
    r.info("self-consistency", format!("synthesize(x, estimate(x)) region drift {:.3} dE mean", self_de / n_self as f64));

    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 2);
    let cfg = SamplerConfig {
        size: scale.side,
        max_shading: 0.0,
        max_speckle: 0.0,
        ..SamplerConfig::default()
    };
    let errs: Vec<f64> = (0..50)
        .map(|_| {
            let s = render_crop(&sample_spec(&mut rng, &cfg)).unwrap();
            delta_e76(model.estimate(&s.image).unwrap(), s.gt_makeup)
        })
        .collect();
    let within = errs.iter().filter(|&&e| e <= 5.0).count();
    r.info(
        "uniform-region estimate",
        format!("mean {:.3} dE, {within} of 50 within 5 dE", errs.iter().sum::<f64>() / 50.0),
    );

    let mut rhos = Vec::new();
    for rec in tests.iter().take(20) {
        let s = ds.load_sample(rec).unwrap();
        let base = weak_makeup_color(&s.image, &s.mask).unwrap();
        let ls: Vec<f64> = (0..7).map(|i| 20.0 + 10.0 * i as f64).collect();
        let achieved: Vec<f64> = ls
            .iter()
            .map(|&l| {
                let out = model.synthesize(&s.image, LabColor::new(l, base.a, base.b)).unwrap();
                weak_makeup_color(&out, &s.mask).unwrap().l
            })
            .collect();
        rhos.push(spearman(&ls, &achieved));
    }
    let above = rhos.iter().filter(|&&v| v > 0.9).count();
    r.info(
        "L* sweep over 7 steps",
        format!("mean Spearman rho {:.3}, {above} of {} crops above 0.9", rhos.iter().sum::<f64>() / rhos.len() as f64, rhos.len()),
    );
}

// ---- service contract -----------------------------------------------------

async fn call(app: &Router, method: &str, uri: &str, body: Option<Vec<u8>>) -> (StatusCode, Bytes) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, Body::from))
        .unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    (status, res.into_body().collect().await.unwrap().to_bytes())
}

fn four_decimals(v: &Value) -> bool {
    v.as_f64().is_some_and(|x| ((x * 1e4).round() / 1e4 - x).abs() < 1e-12)
}

fn lab_triplet(v: &Value) -> bool {
    v.as_array().is_some_and(|a| a.len() == 3 && a.iter().all(four_decimals))
}

async fn service_checks(r: &mut Report, t: &Trained) {
    let model = GanModel::load(&t.full).unwrap();
    let side = model.input_size();
    let session = InferenceSession::new()
        .with_model(RegionKind::Lips, Box::new(GanModel::load(&t.full).unwrap()))
        .unwrap();
    let entries = t
        .shades
        .centroids
        .iter()
        .enumerate()
        .map(|(i, c)| Shade {
            id: format!("k{i:02}"),
            name: format!("cluster {i}"),
            color: c.rounded(2),
        })
        .collect();
    let catalog = ShadeCatalog::new(entries).unwrap();
    let app = tint_service::router(tint_service::AppState::new(session, catalog.clone(), 2, 8 << 20));

    let rec = t.dataset.split(Split::Test).next().unwrap();
    let sample = t.dataset.load_sample(rec).unwrap();
    let img = STANDARD.encode(sample.image.encode_png());
    let other = STANDARD.encode(t.dataset.load_sample(t.dataset.split(Split::Test).nth(1).unwrap()).unwrap().image.encode_png());

    let (s, b) = call(&app, "GET", "/health", None).await;
    let h: Value = serde_json::from_slice(&b).unwrap_or_default();
    r.check(
        "service /health",
        s == StatusCode::OK && h["status"] == "ok" && h["regions"] == json!(["lips"]) && h["schema_version"] == 1,
        format!("{s} {h}"),
    );

    let body = serde_json::to_vec(&json!({ "image": img, "top_k": 3 })).unwrap();
    let (s, b) = call(&app, "POST", "/estimate", Some(body.clone())).await;
    let v: Value = serde_json::from_slice(&b).unwrap_or_default();
    let direct = model.estimate(&sample.image).unwrap().rounded(4).to_array();
    let recs = v["recommendations"].as_array().cloned().unwrap_or_default();
    let ranked = recs.windows(2).all(|w| w[0]["delta_e"].as_f64() <= w[1]["delta_e"].as_f64());
    r.check(
        "service /estimate schema",
        s == StatusCode::OK
            && v["schema_version"] == 1
            && v["region"] == "lips"
            && lab_triplet(&v["color"])
            && v["color"] == json!(direct)
            && recs.len() == 3
            && ranked
            && recs.iter().all(|x| x["id"].is_string() && lab_triplet(&x["color"])),
        format!("{s}, color {}, {} recommendations", v["color"], recs.len()),
    );

    let target = [48.0, 42.5, 12.0];
    let (s, b) = call(&app, "POST", "/synthesize", Some(serde_json::to_vec(&json!({ "image": img, "target": target })).unwrap())).await;
    let v: Value = serde_json::from_slice(&b).unwrap_or_default();
    let decoded = v["image"].as_str().and_then(|s| STANDARD.decode(s).ok()).and_then(|b| ImageTensor::decode(&b).ok());
    let direct = model.synthesize(&sample.image, LabColor::from_array(target)).unwrap().quantized();
    r.check(
        "service /synthesize schema",
        s == StatusCode::OK
            && v["width"] == side
            && v["height"] == side
            && v.get("estimated").is_none_or(Value::is_null)
            && decoded.as_ref().is_some_and(|d| d.data() == direct.data()),
        format!("{s}, {}x{}, matches direct synthesis: {}", v["width"], v["height"], decoded.is_some_and(|d| d.data() == direct.data())),
    );

    let (s, b) = call(&app, "POST", "/transfer", Some(serde_json::to_vec(&json!({ "source": img, "reference": other })).unwrap())).await;
    let v: Value = serde_json::from_slice(&b).unwrap_or_default();
    let (_, e) = call(&app, "POST", "/estimate", Some(serde_json::to_vec(&json!({ "image": other })).unwrap())).await;
    let e: Value = serde_json::from_slice(&e).unwrap_or_default();
    r.check(
        "service /transfer schema",
        s == StatusCode::OK && lab_triplet(&v["estimated"]) && v["estimated"] == e["color"] && v["image"].is_string(),
        format!("{s}, estimated {}", v["estimated"]),
    );

    let (s, b) = call(&app, "GET", "/shades", None).await;
    let list: Value = serde_json::from_slice(&b).unwrap_or_default();
    let c = catalog.entries[4].color.to_array();
    let uri = format!("/shades?l={}&a={}&b={}&top_k=2", c[0], c[1], c[2]);
    let (s2, b2) = call(&app, "GET", &uri, None).await;
    let ranked: Value = serde_json::from_slice(&b2).unwrap_or_default();
    r.check(
        "service /shades listing and ranking",
        s == StatusCode::OK
            && s2 == StatusCode::OK
            && list["shades"].as_array().is_some_and(|a| a.len() == SHADES)
            && ranked["shades"].as_array().is_some_and(|a| a.len() == 2)
            && ranked["shades"][0]["id"] == "k04"
            && ranked["shades"][0]["delta_e"] == 0.0,
        format!("{s} {} shades; ranked top {}", list["shades"].as_array().map_or(0, Vec::len), ranked["shades"][0]["id"]),
    );

    let (s, _) = call(&app, "POST", "/estimate", Some(b"{\"image\": 3}".to_vec())).await;
    r.check("service rejects malformed input", s == StatusCode::BAD_REQUEST, format!("{s}"));

    let repeats = [
        ("POST", "/estimate", Some(body)),
        ("POST", "/synthesize", Some(serde_json::to_vec(&json!({ "image": img, "target": target })).unwrap())),
        ("POST", "/transfer", Some(serde_json::to_vec(&json!({ "source": img, "reference": other })).unwrap())),
        ("GET", uri.as_str(), None),
    ];
    let mut identical = 0;
    for (method, path, body) in &repeats {
        let (s1, a) = call(&app, method, path, body.clone()).await;
        let (s2, b) = call(&app, method, path, body.clone()).await;
        identical += (s1 == StatusCode::OK && s2 == StatusCode::OK && a == b) as usize;
    }
    r.check(
        "service responses byte-identical on repeat",
        identical == repeats.len(),
        format!("{identical} of {} endpoints", repeats.len()),
    );
}

fn main() {
    let mut r = Report::new();
    color_core(&mut r);
    mssim_checks(&mut r);
    gradient_fidelity(&mut r);
    weak_extractor(&mut r);
    loss_arithmetic(&mut r);
    let trained = end_to_end(&mut r);
    r.section("service contract on the acceptance checkpoint");
    tokio::runtime::Builder::new_current_thread()
        .build()
        .unwrap()
        .block_on(service_checks(&mut r, &trained));
    r.finish();
}
