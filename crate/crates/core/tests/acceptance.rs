//! Acceptance suite. Runs every criterion in order and prints one PASS/FAIL
//! line each; exits non-zero if any fails. Pass criterion numbers as
//! arguments to run a subset, e.g. `cargo test --test acceptance -- 4 11`.

// `ensure!` negates its condition, so a NaN fails every check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use mfim_autograd::gradcheck::{check_gradient, GradCheckReport};
use mfim_autograd::{Array, Binder, Tape, Var};
use mfim_core::config::RunConfig;
use mfim_core::data::{save_batch_png, synthetic_faces};
use mfim_core::encoder::{apply_s_affine, EncoderConfig};
use mfim_core::generator::{
    build_layer_table, demodulated_conv, inject_style_map, Discriminator, GeneratorConfig, DEMOD_EPS,
};
use mfim_core::metrics::{build_triplets, fid, image_features, relative_pair, relative_record, ImageFeatures};
use mfim_core::model::Models;
use mfim_core::nn::{normal_array, seeded_rng};
use mfim_core::objectives::{
    adv_d_loss, adv_g_loss, id_loss, l1_loss, landmark_loss, mse_loss, param_losses, r1_penalty, recon_loss,
    to_zero_based, total_loss, LossTerms, LossWeights, LANDMARK_SUBSET_ONE_BASED,
};
use mfim_core::pipeline::Pipeline;
use mfim_core::roi::{blend, build_mask, read_mask_png, write_mask_png, RoiMaskSpec, PNG_SCALE};
use mfim_core::routing::{plan_face_swap, plan_id_mix, Role};
use mfim_core::surrogates::{random_images, AdapterRegistry, AttributePack, SurrogateConfig, Surrogates};
use mfim_core::trainer::{StepRecord, TrainConfig, Trainer};
use ndarray::{Array2, IxDyn};
use rand::Rng;

// Pinned tolerances and budgets.
const ROUTING_BUDGET: Duration = Duration::from_secs(1);
const LOSS_BUDGET: Duration = Duration::from_secs(5);
const LOSS_MIN_CASES: usize = 20;
const LOSS_ZERO_TOL: f64 = 1e-12;
const GRAD_REL_TOL: f64 = 1e-3;
const GRAD_STEP: f64 = 1e-5;
const GRAD_BUDGET: Duration = Duration::from_secs(120);
const DEMOD_SCALES: [f64; 2] = [0.1, 10.0];
const DEMOD_REL_TOL: f64 = 1e-5;
const DEMOD_BUDGET: Duration = Duration::from_secs(5);
const MASK_PIXELS: usize = 1000;
const MASK_BUDGET: Duration = Duration::from_secs(10);
const IDMIX_BUDGET: Duration = Duration::from_secs(30);
const TRIPLETS: usize = 1000;
const RELATIVE_BUDGET: Duration = Duration::from_secs(30);
const SMOKE_IMAGES: usize = 4;
const SMOKE_STEPS: u64 = 400;
/// Checkpoint inside the run where the drop is also required; the pilot run
/// reached -52.8% there.
const SMOKE_EARLY_STEP: u64 = 300;
const SMOKE_MIN_DROP: f64 = 0.5;
const SMOKE_BUDGET: Duration = Duration::from_secs(30 * 60);
const DIRECTION_POINTS: usize = 100;
const DIRECTION_BUDGET: Duration = Duration::from_secs(5);
const RESUME_STEPS: u64 = 20;
const RESUME_AT: u64 = 10;
const RESUME_BUDGET: Duration = Duration::from_secs(10 * 60);
const FID_SELF_TOL: f64 = 1e-6;
const FID_SAMPLES: usize = 10_000;
const FID_REL_TOL: f64 = 0.05;
const FID_BUDGET: Duration = Duration::from_secs(60);

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn fixture(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// Generator and encoder narrow enough for a single CPU core.
fn desk_run_config() -> RunConfig {
    RunConfig {
        generator: GeneratorConfig {
            base_channels: 16,
            max_channels: 16,
            ..Default::default()
        },
        encoder: EncoderConfig {
            width: 16,
            m2m_width: 16,
            ..Default::default()
        },
        ..Default::default()
    }
}

fn rand_array(seed: u64, shape: &[usize]) -> Array {
    let mut rng = seeded_rng(seed);
    Array::from_shape_fn(IxDyn(shape), |_| rng.random_range(-1.0..1.0))
}

fn project<'t>(y: Var<'t>, seed: u64) -> Var<'t> {
    let w = y.tape().constant(rand_array(seed, &y.shape()));
    y.mul(w).sum_all()
}

fn c01_routing() -> Outcome {
    let cfg = GeneratorConfig {
        resolution: 1024,
        ..Default::default()
    };
    let table = build_layer_table(&cfg).map_err(|e| e.to_string())?;
    ensure!(table.len() == 26, "layer table has {} layers", table.len());
    let swap = plan_face_swap(&cfg).map_err(|e| e.to_string())?;
    let mix = plan_id_mix(&cfg).map_err(|e| e.to_string())?;
    for (i, r) in swap.codes.iter().enumerate() {
        let want = if i < 8 { Role::Target } else { Role::Source };
        ensure!(*r == want, "face swap code {i} is {r}, expected {want}");
    }
    for (i, r) in mix.codes.iter().enumerate() {
        let want = match i {
            0..=7 => Role::Target,
            8 | 9 => Role::GlobalSource,
            _ => Role::LocalSource,
        };
        ensure!(*r == want, "id mix code {i} is {r}, expected {want}");
    }
    for (plan, file) in [(&swap, "routing_face_swap_1024.txt"), (&mix, "routing_id_mix_1024.txt")] {
        let want = std::fs::read(fixture(file)).map_err(|e| format!("{file}: {e}"))?;
        ensure!(
            plan.render_table(&table).into_bytes() == want,
            "{file} differs from the rendered plan"
        );
    }
    Ok("26 layers; both plans byte-identical to the fixtures".into())
}

fn c02_loss_identities() -> Outcome {
    let counter = std::cell::Cell::new(0usize);
    let check = |name: &str, got: f64, want: f64, tol: f64| -> Result<(), String> {
        counter.set(counter.get() + 1);
        ensure!((got - want).abs() <= tol, "{name}: got {got}, expected {want}");
        Ok(())
    };
    let t = Tape::new();
    let emb = t.constant(rand_array(1, &[3, 16]));
    let unit = emb.div(emb.row_l2_norm().reshape(&[3, 1]));
    let er = |r: mfim_core::Result<Var<'_>>| r.map(|v| v.item()).map_err(|e| e.to_string());
    check("id(e, e)", er(id_loss(unit, unit))?, 0.0, LOSS_ZERO_TOL)?;
    check("id(e, -e)", er(id_loss(unit, unit.neg()))?, 2.0, LOSS_ZERO_TOL)?;

    let x = t.constant(rand_array(2, &[2, 3, 8, 8]));
    let y = t.constant(rand_array(3, &[2, 3, 8, 8]));
    check("l1(x, x)", er(l1_loss(x, x))?, 0.0, 0.0)?;
    check("mse(x, x)", er(mse_loss(x, x))?, 0.0, 0.0)?;
    let l1_oracle = (&*x.value() - &*y.value()).mapv(f64::abs).mean().unwrap();
    check("l1 oracle", er(l1_loss(x, y))?, l1_oracle, LOSS_ZERO_TOL)?;
    let mse_oracle = (&*x.value() - &*y.value()).mapv(|v| v * v).mean().unwrap();
    check("mse oracle", er(mse_loss(x, y))?, mse_oracle, LOSS_ZERO_TOL)?;

    let surrogates = Surrogates::fixed_random(&SurrogateConfig::default(), 8);
    let net = surrogates.perceptual.as_ref();
    let same = recon_loss(x, x, net).map_err(|e| e.to_string())?;
    check("recon(x, x)", same.total.item(), 0.0, 0.0)?;
    let r = recon_loss(x, y, net).map_err(|e| e.to_string())?;
    let layers: f64 = net
        .features(x)
        .unwrap()
        .iter()
        .zip(net.features(y).unwrap())
        .map(|(a, b)| (&*a.value() - &*b.value()).mapv(|v| v * v).mean().unwrap())
        .sum();
    check(
        "recon = l1 + sum of layer mse",
        r.total.item(),
        l1_oracle + layers,
        1e-12,
    )?;

    let logits = t.constant(Array::from_shape_vec(IxDyn(&[4]), vec![-2.0, -0.5, 0.0, 3.0]).unwrap());
    let adv_oracle = [-2.0f64, -0.5, 0.0, 3.0]
        .iter()
        .map(|&l| (1.0 + (-l).exp()).ln())
        .sum::<f64>()
        / 4.0;
    check("adv_g oracle", er(adv_g_loss(logits))?, adv_oracle, 1e-12)?;
    let zeros = t.constant(Array::zeros(IxDyn(&[4])));
    check("adv_g at zero logits", er(adv_g_loss(zeros))?, 2f64.ln(), 1e-12)?;
    check(
        "adv_d at zero logits",
        er(adv_d_loss(zeros, zeros))?,
        2.0 * 2f64.ln(),
        1e-12,
    )?;
    let big = t.constant(Array::from_elem(IxDyn(&[4]), 40.0));
    check(
        "adv_d at a perfect discriminator",
        er(adv_d_loss(big, big.neg()))?,
        0.0,
        1e-15,
    )?;

    let dcfg = GeneratorConfig {
        resolution: 8,
        base_channels: 1,
        max_channels: 4,
        ..Default::default()
    };
    let disc = Discriminator::new(dcfg);
    let mut dp = disc.init_params(&mut seeded_rng(4));
    for (_, v) in dp.iter_mut() {
        v.fill(0.0);
    }
    let x8 = t.constant(rand_array(5, &[2, 3, 8, 8]));
    let (_, r1) = r1_penalty(&disc, &Binder::frozen(&t, &dp), x8).map_err(|e| e.to_string())?;
    check("r1 of a constant discriminator", r1.item(), 0.0, 0.0)?;

    let pack = |seed: u64| AttributePack {
        id: t.constant(rand_array(seed, &[3, 8])),
        shape: t.constant(rand_array(seed + 1, &[3, 20])),
        pose: t.constant(rand_array(seed + 2, &[3, 6])),
        expression: t.constant(rand_array(seed + 3, &[3, 10])),
        landmarks: t.constant(rand_array(seed + 4, &[3, 68, 2])),
    };
    let (src, tgt) = (pack(10), pack(20));
    let p = param_losses(&src, &src, &src).map_err(|e| e.to_string())?;
    check(
        "param losses on identical packs",
        p.shape.item() + p.pose.item() + p.expression.item(),
        0.0,
        0.0,
    )?;
    let ideal = AttributePack {
        shape: src.shape,
        ..tgt.clone()
    };
    let p = param_losses(&ideal, &src, &tgt).map_err(|e| e.to_string())?;
    check(
        "shape vs source, pose and expression vs target",
        p.shape.item() + p.pose.item() + p.expression.item(),
        0.0,
        0.0,
    )?;

    let subset = to_zero_based(&LANDMARK_SUBSET_ONE_BASED, 68).map_err(|e| e.to_string())?;
    check(
        "landmark(q, q)",
        er(landmark_loss(src.landmarks, src.landmarks, &subset))?,
        0.0,
        0.0,
    )?;
    let shifted = src.landmarks.add_scalar(0.1);
    check(
        "landmark shifted by 0.1 in x and y",
        er(landmark_loss(shifted, src.landmarks, &subset))?,
        0.2,
        1e-12,
    )?;
    let mut off = (*src.landmarks.value()).clone();
    off[[0, 0, 0]] += 5.0;
    check(
        "landmark ignores points outside the subset",
        er(landmark_loss(t.constant(off), src.landmarks, &subset))?,
        0.0,
        0.0,
    )?;

    let mut cases = counter.get();
    // Published weights: 2, 1, 0.1, 10, 5, 1, 1 and R1 every 16 steps.
    let w = LossWeights::default();
    let table = [w.id, w.recon, w.adv, w.r1, w.shape, w.pose, w.expression];
    ensure!(
        table == [2.0, 1.0, 0.1, 10.0, 5.0, 1.0, 1.0] && w.r1_period == 16,
        "weights {table:?}"
    );
    cases += 1;
    ensure!(LossWeights::with_landmarks().landmark == 1000.0, "landmark weight");
    cases += 1;
    let unit_terms = |k: usize| {
        let mut v = [0.0; 8];
        v[k] = 1.0;
        LossTerms {
            id: v[0],
            recon: v[1],
            adv: v[2],
            r1: Some(v[3]),
            shape: v[4],
            pose: v[5],
            expression: v[6],
            landmark: v[7],
            adv_d: 7.0,
        }
    };
    let wl = LossWeights::with_landmarks();
    let weights = [
        wl.id,
        wl.recon,
        wl.adv,
        wl.r1,
        wl.shape,
        wl.pose,
        wl.expression,
        wl.landmark,
    ];
    for (k, &lam) in weights.iter().enumerate() {
        check(
            &format!("total isolates term {k}"),
            total_loss(&unit_terms(k), &wl, 32).total,
            lam,
            0.0,
        )?;
    }
    let all = LossTerms {
        id: 0.3,
        recon: 1.7,
        adv: 0.9,
        r1: Some(0.04),
        shape: 0.2,
        pose: 0.6,
        expression: 0.8,
        landmark: 0.0,
        adv_d: 1.1,
    };
    let weighted = 2.0 * 0.3 + 1.7 + 0.1 * 0.9 + 5.0 * 0.2 + 0.6 + 0.8;
    check(
        "total on an R1 step",
        total_loss(&all, &w, 16).total,
        weighted + 10.0 * 0.04,
        1e-12,
    )?;
    let off_step = total_loss(&all, &w, 17);
    check("total off an R1 step", off_step.total, weighted, 1e-12)?;
    ensure!(off_step.terms.r1.is_none(), "r1 reported off its step");
    cases += 1;
    ensure!(cases >= LOSS_MIN_CASES, "only {cases} cases");
    Ok(format!("{cases} cases"))
}

fn grad(name: &str, x: &Array, f: impl for<'t> Fn(&'t Tape, Var<'t>) -> Var<'t>) -> Result<GradCheckReport, String> {
    let r = check_gradient(f, x, GRAD_STEP, None);
    ensure!(r.passes(GRAD_REL_TOL), "{name}: rel error {:.3e}", r.rel_error);
    ensure!(r.analytic_norm > 0.0, "{name}: zero gradient");
    Ok(r)
}

/// Every attribute set to `v`, for checks that read a single field.
fn uniform_pack(v: Var<'_>) -> AttributePack<Var<'_>> {
    AttributePack {
        id: v,
        shape: v,
        pose: v,
        expression: v,
        landmarks: v,
    }
}

fn c03_gradients() -> Outcome {
    let mut worst: (f64, String) = (0.0, String::new());
    let mut n = 0;
    let mut note = |name: &str, r: GradCheckReport| {
        n += 1;
        if r.rel_error >= worst.0 {
            worst = (r.rel_error, name.to_string());
        }
    };

    // Weight demodulation and style-map injection.
    let feat = rand_array(1, &[2, 3, 8, 8]);
    let weight = rand_array(2, &[4, 3, 3, 3]);
    let style = rand_array(3, &[2, 3]).mapv(|v| v + 1.5);
    note(
        "demod conv: features",
        grad("demod features", &feat, |t, v| {
            project(
                demodulated_conv(
                    v,
                    t.constant(weight.clone()),
                    t.constant(style.clone()),
                    DEMOD_EPS,
                    true,
                )
                .unwrap(),
                9,
            )
        })?,
    );
    note(
        "demod conv: weight",
        grad("demod weight", &weight, |t, v| {
            project(
                demodulated_conv(t.constant(feat.clone()), v, t.constant(style.clone()), DEMOD_EPS, true).unwrap(),
                9,
            )
        })?,
    );
    note(
        "demod conv: style",
        grad("demod style", &style, |t, v| {
            project(
                demodulated_conv(t.constant(feat.clone()), t.constant(weight.clone()), v, DEMOD_EPS, true).unwrap(),
                9,
            )
        })?,
    );
    let map = rand_array(4, &[2, 3, 8, 8]);
    let scale = Array::from_elem(IxDyn(&[1]), 0.7);
    note(
        "style map injection: map",
        grad("inject map", &map, |t, v| {
            project(
                inject_style_map(t.constant(feat.clone()), v, t.constant(scale.clone())).unwrap(),
                9,
            )
        })?,
    );
    note(
        "style map injection: scale",
        grad("inject scale", &scale, |t, v| {
            project(
                inject_style_map(t.constant(feat.clone()), t.constant(map.clone()), v).unwrap(),
                9,
            )
        })?,
    );
    let raw = rand_array(5, &[2, 6]);
    let alpha = rand_array(6, &[6]);
    let mu = Array::ones(IxDyn(&[6]));
    note(
        "S-space affine: code",
        grad("s affine code", &raw, |t, v| {
            project(
                apply_s_affine(v, t.constant(alpha.clone()), t.constant(mu.clone())).unwrap(),
                9,
            )
        })?,
    );
    note(
        "S-space affine: alpha",
        grad("s affine alpha", &alpha, |t, v| {
            project(
                apply_s_affine(t.constant(raw.clone()), v, t.constant(mu.clone())).unwrap(),
                9,
            )
        })?,
    );

    // Losses.
    let e_src = rand_array(6, &[3, 8]);
    note(
        "id loss",
        grad("id", &rand_array(7, &[3, 8]), |t, v| {
            id_loss(v, t.constant(e_src.clone())).unwrap()
        })?,
    );
    let surrogates = Surrogates::fixed_random(&SurrogateConfig::default(), 8);
    let x = rand_array(8, &[2, 3, 8, 8]);
    // Keep every pixel difference away from the L1 kink.
    let x_tgt = x.mapv(|v| v + 0.3);
    note(
        "reconstruction loss",
        grad("recon", &x, |t, v| {
            recon_loss(v, t.constant(x_tgt.clone()), surrogates.perceptual.as_ref())
                .unwrap()
                .total
        })?,
    );
    note(
        "adversarial loss (G)",
        grad("adv g", &rand_array(9, &[4]), |_, v| adv_g_loss(v).unwrap())?,
    );
    let fake = rand_array(10, &[4]);
    note(
        "adversarial loss (D)",
        grad("adv d", &rand_array(11, &[4]), |t, v| {
            adv_d_loss(v, t.constant(fake.clone())).unwrap()
        })?,
    );
    let src_shape = rand_array(12, &[3, 20]);
    note(
        "shape loss",
        grad("shape", &rand_array(13, &[3, 20]), |t, v| {
            let c = t.constant(src_shape.clone());
            param_losses(&uniform_pack(v), &uniform_pack(c), &uniform_pack(c))
                .unwrap()
                .shape
        })?,
    );
    let q_gt = rand_array(14, &[2, 68, 2]);
    let q_gen = q_gt.mapv(|v| v + 0.05);
    let subset = to_zero_based(&LANDMARK_SUBSET_ONE_BASED, 68).unwrap();
    note(
        "landmark loss",
        grad("landmark", &q_gen, |t, v| {
            landmark_loss(v, t.constant(q_gt.clone()), &subset).unwrap()
        })?,
    );

    // Surrogates on 8x8 inputs.
    note(
        "surrogate: identity embedder",
        grad("id embedder", &x, |_, v| project(surrogates.id.embed(v).unwrap(), 9))?,
    );
    note(
        "surrogate: face model",
        grad("face model", &x, |_, v| {
            let p = surrogates.face.estimate(v).unwrap();
            project(p.shape, 1)
                .add(project(p.pose, 2))
                .add(project(p.expression, 3))
                .add(project(p.landmarks, 4))
        })?,
    );
    note(
        "surrogate: pose estimator",
        grad("pose", &x, |_, v| project(surrogates.pose.pose_features(v).unwrap(), 9))?,
    );
    note(
        "surrogate: perceptual net",
        grad("perceptual", &x, |_, v| {
            let f = surrogates.perceptual.features(v).unwrap();
            f.into_iter()
                .enumerate()
                .fold(v.tape().scalar(0.0), |acc, (i, l)| acc.add(project(l, i as u64)))
        })?,
    );

    // Discriminator and R1, on an 8x8 instance.
    let dcfg = GeneratorConfig {
        resolution: 8,
        base_channels: 1,
        max_channels: 4,
        ..Default::default()
    };
    let disc = Discriminator::new(dcfg);
    let dp = disc.init_params(&mut seeded_rng(15));
    note(
        "discriminator: input",
        grad("disc input", &x, |t, v| {
            project(disc.forward(&Binder::frozen(t, &dp), v).unwrap(), 9)
        })?,
    );
    let wname = "disc.b8.weight";
    note(
        "discriminator: weights",
        grad("disc weight", dp.get(wname).unwrap(), |t, v| {
            let b = Binder::frozen(t, &dp);
            b.bind(wname, v);
            project(disc.forward(&b, t.constant(x.clone())).unwrap(), 9)
        })?,
    );
    note(
        "R1 penalty: weights",
        grad("r1 weight", dp.get(wname).unwrap(), |t, v| {
            let b = Binder::frozen(t, &dp);
            b.bind(wname, v);
            r1_penalty(&disc, &b, t.constant(x.clone())).unwrap().1
        })?,
    );
    // D is piecewise linear in x, so the penalty is locally constant in x.
    let r = check_gradient(
        |t, v| r1_penalty(&disc, &Binder::frozen(t, &dp), v).unwrap().1,
        &x,
        GRAD_STEP,
        None,
    );
    ensure!(r.analytic_norm == 0.0 && r.max_abs_diff <= 1e-9, "R1 input: {r:?}");
    n += 1;
    Ok(format!("{n} checks; worst rel error {:.2e} ({})", worst.0, worst.1))
}

fn c04_demodulation_invariance() -> Outcome {
    let t = Tape::new();
    let x = t.constant(rand_array(1, &[2, 8, 16, 16]));
    let w = t.constant(rand_array(2, &[6, 8, 3, 3]));
    let s = rand_array(3, &[2, 8]);
    let base = demodulated_conv(x, w, t.constant(s.clone()), 0.0, true)
        .map_err(|e| e.to_string())?
        .value();
    let peak = base.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut worst = 0.0f64;
    for c in DEMOD_SCALES {
        let y = demodulated_conv(x, w, t.constant(s.mapv(|v| v * c)), 0.0, true)
            .map_err(|e| e.to_string())?
            .value();
        let dev = y.iter().zip(base.iter()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())) / peak;
        ensure!(dev < DEMOD_REL_TOL, "c = {c}: relative deviation {dev:.3e}");
        worst = worst.max(dev);
        // Without demodulation the same scaling must show up in the output.
        let raw = demodulated_conv(x, w, t.constant(s.mapv(|v| v * c)), 0.0, false)
            .unwrap()
            .value();
        let raw1 = demodulated_conv(x, w, t.constant(s.clone()), 0.0, false)
            .unwrap()
            .value();
        let ratio = raw
            .iter()
            .zip(raw1.iter())
            .fold(0.0f64, |m, (a, b)| m.max((a - c * b).abs()));
        ensure!(
            ratio < 1e-9 * c.max(1.0) * peak.max(1.0) * 100.0,
            "undemodulated output is not scaled by {c}"
        );
    }
    Ok(format!("max relative deviation {worst:.2e} for c in {DEMOD_SCALES:?}"))
}

fn c05_roi_mask() -> Outcome {
    let mask = build_mask(&RoiMaskSpec::default()).map_err(|e| e.to_string())?;
    let golden = read_mask_png(&fixture("roi_mask_1024.png")).map_err(|e| e.to_string())?;
    ensure!(golden.dim() == (1024, 1024), "golden is {:?}", golden.dim());
    let mismatches = mask.iter().zip(golden.iter()).filter(|(a, b)| a != b).count();
    ensure!(mismatches == 0, "{mismatches} pixels differ from the golden mask");
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = dir.path().join("mask.png");
    write_mask_png(&mask, &out).map_err(|e| e.to_string())?;
    let back = read_mask_png(&out).map_err(|e| e.to_string())?;
    ensure!(back == golden, "exported PNG does not decode to the golden values");
    ensure!(
        mask.iter().all(|v| (v * PNG_SCALE).fract() == 0.0),
        "mask values are not multiples of 2^-15"
    );

    let mut rng = seeded_rng(7);
    let n = MASK_PIXELS;
    let swap = Array::from_shape_fn(IxDyn(&[1, 3, 1, n]), |_| rng.random_range(-1.0..1.0));
    let tgt = Array::from_shape_fn(IxDyn(&[1, 3, 1, n]), |_| rng.random_range(-1.0..1.0));
    let m = Array2::from_shape_fn((1, n), |(_, j)| mask[[rng.random_range(0..1024), (j * 7919) % 1024]]);
    let out = blend(&swap, &tgt, &m).map_err(|e| e.to_string())?;
    for c in 0..3 {
        for j in 0..n {
            let (a, b, o, w) = (swap[[0, c, 0, j]], tgt[[0, c, 0, j]], out[[0, c, 0, j]], m[[0, j]]);
            ensure!(
                o >= a.min(b) - 1e-15 && o <= a.max(b) + 1e-15,
                "pixel {j} leaves the segment"
            );
            ensure!(
                (o - (w * a + (1.0 - w) * b)).abs() <= 1e-15,
                "pixel {j} is not the convex combination"
            );
        }
    }
    let partial = m.iter().filter(|&&w| w > 0.0 && w < 1.0).count();
    Ok(format!(
        "bit-exact at 1024; convexity on {n} pixels ({partial} on the soft edge)"
    ))
}

fn c06_idmix_degeneracy() -> Outcome {
    let p = Pipeline::new(desk_run_config(), &AdapterRegistry::default()).map_err(|e| e.to_string())?;
    let src = synthetic_faces(11, 2, 64);
    let tgt = synthetic_faces(12, 2, 64);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    for roi in [false, true] {
        let a = p.swap(&src, &tgt, roi).map_err(|e| e.to_string())?;
        let b = p.idmix(&src, &src, &tgt, roi).map_err(|e| e.to_string())?;
        let bits = |x: &Array| x.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        ensure!(bits(&a) == bits(&b), "arrays differ (roi = {roi})");
        for i in 0..2 {
            let (pa, pb) = (
                dir.path().join(format!("s{i}.png")),
                dir.path().join(format!("m{i}.png")),
            );
            save_batch_png(&a, i, &pa).map_err(|e| e.to_string())?;
            save_batch_png(&b, i, &pb).map_err(|e| e.to_string())?;
            ensure!(
                std::fs::read(&pa).unwrap() == std::fs::read(&pb).unwrap(),
                "PNG bytes differ (roi = {roi})"
            );
        }
    }
    Ok("arrays and PNG files byte-identical, with and without ROI".into())
}

fn c07_relative_metrics() -> Outcome {
    let s = Surrogates::fixed_random(&SurrogateConfig::default(), 64);
    let images = random_images(21, 24, 64);
    let feats = image_features(&images, &s).map_err(|e| e.to_string())?;
    let triplets = build_triplets(feats.len(), TRIPLETS, 5).map_err(|e| e.to_string())?;
    ensure!(triplets.len() == TRIPLETS, "got {} triplets", triplets.len());
    for (k, tr) in triplets.iter().enumerate() {
        let r = relative_record(&feats[tr.target], &feats[tr.global], &feats[tr.local]);
        ensure!(
            r.r_id_gb + r.r_id_lc == 1.0,
            "triplet {k}: R-ID sums to {}",
            r.r_id_gb + r.r_id_lc
        );
        ensure!(
            r.r_shape_gb + r.r_shape_lc == 1.0,
            "triplet {k}: R-Shape sums to {}",
            r.r_shape_gb + r.r_shape_lc
        );
    }
    for (d_gb, d_lc, want) in [
        (1.0, 3.0, (0.25, 0.75)),
        (3.0, 1.0, (0.75, 0.25)),
        (2.0, 2.0, (0.5, 0.5)),
        (0.0, 0.0, (0.5, 0.5)),
        (0.0, 5.0, (0.0, 1.0)),
        (1.0, 4.0, (0.2, 0.8)),
    ] {
        ensure!(
            relative_pair(d_gb, d_lc) == want,
            "relative_pair({d_gb}, {d_lc}) = {:?}",
            relative_pair(d_gb, d_lc)
        );
    }
    let f = |id: [f64; 2], shape: [f64; 2]| ImageFeatures {
        id: id.to_vec(),
        shape: shape.to_vec(),
        expression: vec![0.0],
        pose: vec![0.0],
        pose_hn: vec![0.0],
    };
    let r = relative_record(
        &f([0.0, 0.0], [1.0, 1.0]),
        &f([3.0, 4.0], [1.0, 3.0]),
        &f([0.0, 15.0], [1.0, 7.0]),
    );
    ensure!(
        (r.r_id_gb, r.r_id_lc) == (0.25, 0.75),
        "crafted R-ID {:?}",
        (r.r_id_gb, r.r_id_lc)
    );
    ensure!(
        (r.r_shape_gb, r.r_shape_lc) == (0.25, 0.75),
        "crafted R-Shape {:?}",
        (r.r_shape_gb, r.r_shape_lc)
    );
    Ok(format!("{TRIPLETS} triplets sum to exactly 1; 8 crafted cases exact"))
}

fn smoke_trainer(model_seed: u64) -> Trainer {
    let cfg = desk_run_config();
    let models = Models::new(&cfg.generator, &cfg.encoder, model_seed).unwrap();
    let surrogates = Surrogates::fixed_random(&cfg.surrogates, 64);
    Trainer::new(
        models,
        surrogates,
        LossWeights::default(),
        TrainConfig::default(),
        synthetic_faces(1, SMOKE_IMAGES, 64),
    )
    .unwrap()
}

fn c08_overfit_smoke() -> Outcome {
    let mut tr = smoke_trainer(0);
    let checksum = tr.surrogates.checksum();
    let initial = tr.dataset_self_recon_l1().map_err(|e| e.to_string())?;
    let mut early = None;
    let mut records = Vec::new();
    while tr.step < SMOKE_STEPS {
        records.push(tr.train_step().map_err(|e| format!("step {}: {e}", tr.step))?);
        if tr.step == SMOKE_EARLY_STEP {
            early = Some(tr.dataset_self_recon_l1().map_err(|e| e.to_string())?);
        }
    }
    let last = tr.dataset_self_recon_l1().map_err(|e| e.to_string())?;
    for r in &records {
        let step = r.report.step;
        let t = &r.report.terms;
        let vals = [
            t.id,
            t.recon,
            t.adv,
            t.shape,
            t.pose,
            t.expression,
            t.landmark,
            t.adv_d,
            r.report.total,
        ];
        ensure!(
            vals.iter().chain(t.r1.iter()).all(|v| v.is_finite()),
            "non-finite loss at step {step}"
        );
        let due = step % 16 == 0;
        ensure!(
            r.r1_applied == due && t.r1.is_some() == due,
            "R1 at step {step}: applied {}",
            r.r1_applied
        );
        ensure!(r.lr == tr.cfg.lr_at(step), "lr at step {step} is {}", r.lr);
    }
    let c = TrainConfig::default();
    ensure!(c.lr_at(0) == 1e-4 && c.lr_at(500_000) == 1e-4, "base lr");
    ensure!(
        (c.lr_at(540_000) - 8e-5).abs() < 1e-18 && (c.lr_at(660_000) - 2e-5).abs() < 1e-18,
        "decay"
    );
    ensure!(tr.surrogates.checksum() == checksum, "surrogate weights changed");
    let early = early.expect("early checkpoint reached");
    let drop = |v: f64| 1.0 - v / initial;
    ensure!(
        drop(early) >= SMOKE_MIN_DROP,
        "L1 {initial:.4} -> {early:.4} at step {SMOKE_EARLY_STEP}"
    );
    ensure!(
        drop(last) >= SMOKE_MIN_DROP,
        "L1 {initial:.4} -> {last:.4} at step {SMOKE_STEPS}"
    );
    Ok(format!(
        "self-recon L1 {initial:.4} -> {early:.4} (-{:.1}%) at {SMOKE_EARLY_STEP} -> {last:.4} (-{:.1}%) at {SMOKE_STEPS}; R1 on {} steps",
        100.0 * drop(early),
        100.0 * drop(last),
        records.iter().filter(|r| r.r1_applied).count()
    ))
}

fn c09_directionality() -> Outcome {
    let t = Tape::new();
    let mk = |seed: u64| -> BTreeMap<&str, Array> {
        BTreeMap::from([
            ("shape", rand_array(seed, &[3, 20])),
            ("pose", rand_array(seed + 1, &[3, 6])),
            ("expression", rand_array(seed + 2, &[3, 10])),
        ])
    };
    let (src, tgt) = (mk(1), mk(10));
    let pack = |m: &BTreeMap<&str, Array>| AttributePack {
        id: t.constant(Array::zeros(IxDyn(&[3, 4]))),
        shape: t.constant(m["shape"].clone()),
        pose: t.constant(m["pose"].clone()),
        expression: t.constant(m["expression"].clone()),
        landmarks: t.constant(Array::zeros(IxDyn(&[3, 68, 2]))),
    };
    let (ps, pt) = (pack(&src), pack(&tgt));
    let mut prev: Option<(f64, f64, f64)> = None;
    for k in 0..DIRECTION_POINTS {
        let a = k as f64 / (DIRECTION_POINTS - 1) as f64;
        let mix: BTreeMap<&str, Array> = src.iter().map(|(n, v)| (*n, v * (1.0 - a) + &tgt[n] * a)).collect();
        let l = param_losses(&pack(&mix), &ps, &pt).map_err(|e| e.to_string())?;
        let cur = (l.shape.item(), l.pose.item(), l.expression.item());
        if let Some(p) = prev {
            ensure!(cur.0 > p.0, "shape loss not increasing at point {k}");
            ensure!(cur.1 < p.1, "pose loss not decreasing at point {k}");
            ensure!(cur.2 < p.2, "expression loss not decreasing at point {k}");
        }
        prev = Some(cur);
    }
    Ok(format!("{DIRECTION_POINTS} points: shape up, pose and expression down"))
}

fn run_for(tr: &mut Trainer, until: u64) -> Result<(Vec<StepRecord>, Vec<u8>), String> {
    let mut log = Vec::new();
    let recs = tr.run(until, &mut log).map_err(|e| e.to_string())?;
    Ok((recs, log))
}

fn c10_determinism_resume() -> Outcome {
    let (a, log_a) = run_for(&mut smoke_trainer(3), RESUME_STEPS)?;
    let mut tb = smoke_trainer(3);
    let (b, log_b) = run_for(&mut tb, RESUME_STEPS)?;
    ensure!(a == b && log_a == log_b, "two seeded runs diverge");

    let mut first = smoke_trainer(3);
    let (head, _) = run_for(&mut first, RESUME_AT)?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("ck.mfim");
    first
        .checkpoint(serde_json::json!({}))
        .and_then(|c| c.save(&path))
        .map_err(|e| e.to_string())?;
    drop(first);
    // A different init seed proves every parameter comes from the checkpoint.
    let mut resumed = smoke_trainer(99);
    let ck = mfim_core::checkpoint::Checkpoint::load(&path).map_err(|e| e.to_string())?;
    resumed.restore(&ck).map_err(|e| e.to_string())?;
    let (tail, _) = run_for(&mut resumed, RESUME_STEPS)?;
    let joined: Vec<StepRecord> = head.into_iter().chain(tail).collect();
    ensure!(joined == a, "resumed sequence differs from the uninterrupted run");
    ensure!(
        resumed.models.g_params == tb.models.g_params,
        "final generator parameters differ"
    );
    ensure!(
        resumed.models.d_params == tb.models.d_params,
        "final discriminator parameters differ"
    );
    Ok(format!("{RESUME_STEPS} steps identical across runs; resume at {RESUME_AT} reproduces steps {RESUME_AT}..{RESUME_STEPS}"))
}

fn c11_fid() -> Outcome {
    let a = normal_array(&mut seeded_rng(1), &[500, 8], 1.0);
    let self_fid = fid(&a, &a).map_err(|e| e.to_string())?;
    ensure!(self_fid <= FID_SELF_TOL, "FID(A, A) = {self_fid:e}");
    let real = normal_array(&mut seeded_rng(2), &[FID_SAMPLES, 1], 1.0);
    let gen = normal_array(&mut seeded_rng(3), &[FID_SAMPLES, 1], 1.0).mapv(|v| v + 1.0);
    let d = fid(&real, &gen).map_err(|e| e.to_string())?;
    // (mu1 - mu2)^2 + (sigma1 - sigma2)^2 = 1 for N(0, 1) vs N(1, 1).
    ensure!((d - 1.0).abs() <= FID_REL_TOL, "FID = {d}, closed form 1");
    let mut rev = gen.clone();
    rev.invert_axis(ndarray::Axis(0));
    let d_rev = fid(&real, &rev).map_err(|e| e.to_string())?;
    ensure!((d - d_rev).abs() <= 1e-9, "sample order changes FID: {d} vs {d_rev}");
    Ok(format!("FID(A, A) = {self_fid:.1e}; two Gaussians {d:.4} vs 1"))
}

type Criterion = (u32, &'static str, Duration, fn() -> Outcome);

const CRITERIA: [Criterion; 11] = [
    (1, "routing fidelity", ROUTING_BUDGET, c01_routing),
    (2, "loss identity suite", LOSS_BUDGET, c02_loss_identities),
    (3, "gradient correctness", GRAD_BUDGET, c03_gradients),
    (
        4,
        "demodulation scale invariance",
        DEMOD_BUDGET,
        c04_demodulation_invariance,
    ),
    (5, "ROI mask golden and blend convexity", MASK_BUDGET, c05_roi_mask),
    (6, "ID-mix degeneracy", IDMIX_BUDGET, c06_idmix_degeneracy),
    (7, "relative-metric algebra", RELATIVE_BUDGET, c07_relative_metrics),
    (8, "overfit smoke training", SMOKE_BUDGET, c08_overfit_smoke),
    (9, "directionality", DIRECTION_BUDGET, c09_directionality),
    (10, "determinism and resume", RESUME_BUDGET, c10_determinism_resume),
    (11, "FID sanity", FID_BUDGET, c11_fid),
];

fn main() -> ExitCode {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, budget, f) in CRITERIA {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let took = start.elapsed();
        let outcome = match outcome {
            Ok(d) if took > budget => Err(format!("{d}; took {took:.1?}, budget {budget:?}")),
            o => o,
        };
        match outcome {
            Ok(detail) => println!("PASS [{id:>2}] {name}: {detail} ({took:.2?})"),
            Err(why) => {
                failed += 1;
                println!("FAIL [{id:>2}] {name}: {why} ({took:.2?})");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
