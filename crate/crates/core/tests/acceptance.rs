//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Criterion 7 trains twelve models and runs only with `ICL_DYN_SLOW=1`.


use icl_dyn::config::{self, RunConfig};
use icl_dyn::dataset::shard;
use icl_dyn::dataset::{generate_dataset, generate_trajectory, Batch, Dataset, DatasetConfig, DatasetManifest, Trajectory};
use icl_dyn::diffusion::{
    inpaint_sample, make_schedule, q_sample, sample, training_loss, warm_start_sample, DiffusionConfig, Inpaint,
    ScheduleKind, WeightMask,
};
use icl_dyn::eval::{self, read_sweep_csv, write_sweep, LoadedModel, SVG_NS};
use icl_dyn::inference::{diffuser_known, model_denoiser, predict_horizon, SampleMode};
use icl_dyn::models::{
    load_checkpoint, save_checkpoint, Arch, MetaModel, ModelConfig, Preset, TransformerConfig,
    UNetConfig,
};
use icl_dyn::signal::{RandomizationProfile, SignalKind};
use icl_dyn::trainer::{train, TrainConfig, TrainOutcome};
use icl_dyn::Error;
use icl_tensor::gradcheck::{check_sampled, op_suite};
use icl_tensor::optim::lr_at;
use icl_tensor::{Params, Tensor, TensorError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

const GRAD_TOL: f64 = 1e-3;
const GRAD_INSTANCES: u64 = 20;
const MC_DRAWS: usize = 10_000;
const ORACLE_TOL: f64 = 1e-5;
const ENERGY_TOL: f64 = 1e-5;
const OVERFIT_STEPS: usize = 2000;
const ROBOMORPH_STEPS: usize = 1000;
const OVERFIT_MSE: f64 = 1e-3;
const OVERFIT_MAD: f64 = 0.1;
const OVERFIT_BUDGET_S: f64 = 1200.0;
const WARM_RATIO: [f64; 2] = [0.038, 0.065];
const DETERMINISTIC_SPEEDUP: f64 = 30.0;

type Verdict = Result<String, String>;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn bits(t: &Tensor<f64>) -> Vec<u64> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

fn tensor_err(e: Error) -> TensorError {
    match e {
        Error::Tensor(t) => t,
        other => TensorError::Schema(other.to_string()),
    }
}

fn tiny(arch: Arch, d_u: usize, d_y: usize) -> ModelConfig {
    ModelConfig {
        arch,
        d_u,
        d_y,
        n_steps: 16,
        context: 8,
        transformer: TransformerConfig { blocks: 2, heads: 2, embed_dim: 8 },
        unet: UNetConfig { base_channels: 8, down_steps: 2 },
        diffusion_steps: 10,
        preset: Preset::Desk,
    }
}

fn random_batch(c: &ModelConfig, b: usize, r: &mut ChaCha8Rng) -> Batch {
    Batch {
        indices: (0..b).collect(),
        u: Tensor::randn(&[b, c.n_steps, c.d_u], r),
        y: Tensor::randn(&[b, c.n_steps, c.d_y], r),
        context: c.context,
    }
}

fn arch_grad_error(arch: Arch, seed: u64) -> f64 {
    let mut r = rng(seed);
    let c = tiny(arch, r.random_range(1..=3), r.random_range(1..=3));
    let model = MetaModel::new(&c).unwrap();
    let params: Params<f64> = model.init_params_with(seed, false);
    let batch = random_batch(&c, 2, &mut r);
    let sched = make_schedule(c.diffusion_steps, ScheduleKind::Cosine).unwrap();
    let mask = WeightMask::for_arch(arch);
    let report = check_sampled(
        &params,
        |g, p| {
            if arch == Arch::RoboMorph {
                let cu = g.constant(batch.ctx_u().cast());
                let cy = g.constant(batch.ctx_y().cast());
                let fu = g.constant(batch.fut_u().cast());
                let pred = model.robomorph_forward(g, p, cu, cy, fu).map_err(tensor_err)?;
                let y = g.constant(batch.fut_y().cast());
                let d = g.sub(pred, y)?;
                let d = g.square(d)?;
                g.mean(d)
            } else {
                training_loss(&model, g, p, &batch, &mask, &sched, &mut rng(seed ^ 0x5eed)).map_err(tensor_err)
            }
        },
        2,
        seed,
    )
    .unwrap();
    report.max_rel_err()
}

fn criterion_1() -> Verdict {
    let ops = op_suite(GRAD_INSTANCES).map_err(|e| e.to_string())?;
    let worst_op = ops.iter().max_by(|a, b| a.worst.total_cmp(&b.worst)).unwrap();
    let mut parts = vec![format!("{} ops, worst {} {:.1e}", ops.len(), worst_op.name, worst_op.worst)];
    let mut ok = ops.iter().all(|o| o.worst <= GRAD_TOL && o.trials >= GRAD_INSTANCES);
    for arch in Arch::ALL {
        let worst = (0..GRAD_INSTANCES).map(|s| arch_grad_error(arch, 1000 + s)).fold(0.0, f64::max);
        ok &= worst <= GRAD_TOL;
        parts.push(format!("{arch} {worst:.1e}"));
    }
    check(ok, format!("max rel err <= {GRAD_TOL:e} over {GRAD_INSTANCES} instances: {}", parts.join(", ")))
}

fn q_sample_within_3se() -> (bool, String) {
    let sched = make_schedule(100, ScheduleKind::Cosine).unwrap();
    let n = MC_DRAWS as f64;
    let mut worst: f64 = 0.0;
    for (i, t) in [1usize, 10, 50, 90, 100].into_iter().enumerate() {
        let x0v = 0.7 - 0.3 * i as f64;
        let x0 = Tensor::full(&[MC_DRAWS], x0v);
        let eps = Tensor::<f64>::randn(&[MC_DRAWS], &mut rng(40 + t as u64));
        let x = q_sample(&x0, t, &eps, &sched).unwrap();
        let ab = sched.alpha_bar_at(t).unwrap();
        let mean = x.data().iter().sum::<f64>() / n;
        let var = x.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let (want_mean, want_var) = (ab.sqrt() * x0v, 1.0 - ab);
        let z_mean = (mean - want_mean).abs() / (want_var / n).sqrt();
        let z_var = (var - want_var).abs() / (want_var * (2.0 / (n - 1.0)).sqrt());
        worst = worst.max(z_mean).max(z_var);
    }
    (worst <= 3.0, format!("(a) worst |z| {worst:.2}"))
}

fn criterion_2() -> Verdict {
    let (a_ok, a) = q_sample_within_3se();

    let mut b_ok = true;
    for t in [1, 10, 100, 1000] {
        for kind in [ScheduleKind::Cosine, ScheduleKind::Linear] {
            let s = make_schedule(t, kind).unwrap();
            b_ok &= s.alpha_bar.windows(2).all(|w| w[1] < w[0]) && s.alpha_bar.iter().all(|v| *v > 0.0 && *v < 1.0);
        }
    }

    let cfg = ModelConfig { diffusion_steps: 20, ..tiny(Arch::Cdt, 2, 2) };
    let model = MetaModel::new(&cfg).unwrap();
    let params = model.init_params_with::<f32>(3, false);
    let sched = make_schedule(cfg.diffusion_steps, ScheduleKind::Cosine).unwrap();
    let mut r = rng(8);
    let u = Tensor::<f32>::randn(&[2, cfg.n_steps, 2], &mut r);
    let y_ctx = Tensor::<f32>::randn(&[2, cfg.context, 2], &mut r);
    let shape = [2, cfg.horizon(), 2];
    let prior = Tensor::<f64>::randn(&shape, &mut r);
    let mut den = model_denoiser(&model, &params, &u, &y_ctx);
    let full = sample(&mut den, &shape, &sched, &mut rng(9)).unwrap();
    let warm = warm_start_sample(&mut den, &prior, sched.t, &sched, &mut rng(9), None).unwrap();
    let c_ok = bits(&full) == bits(&warm);

    let dcfg = ModelConfig { diffusion_steps: 20, ..tiny(Arch::Diffuser, 2, 2) };
    let dmodel = MetaModel::new(&dcfg).unwrap();
    let dparams = dmodel.init_params_with::<f32>(4, false);
    let (known, mask) = diffuser_known(&u, &y_ctx, None).unwrap();
    let mut dden = model_denoiser(&dmodel, &dparams, &u, &y_ctx);
    let out = inpaint_sample(&mut dden, &known, &mask, &sched, &mut rng(10)).unwrap();
    let kept = out.data().iter().zip(known.data()).zip(&mask).all(|((o, k), m)| !m || o.to_bits() == k.to_bits());
    let warm_in = warm_start_sample(&mut dden, &known, sched.t, &sched, &mut rng(10), Some(Inpaint { known: &known, mask: &mask })).unwrap();
    let d_ok = kept && bits(&out) == bits(&warm_in);

    check(
        a_ok && b_ok && c_ok && d_ok,
        format!("{a}; (b) strictly decreasing {b_ok}; (c) warm k=T bit-equal {c_ok}; (d) inpaint bit-exact {d_ok}"),
    )
}

fn criterion_3() -> Verdict {
    let worst = (0..100).map(oracles::linear_oracle_error).fold(0.0, f64::max);
    let drift = oracles::undamped_energy_drift_400();
    check(
        worst <= ORACLE_TOL && drift <= ENERGY_TOL,
        format!("linear oracle worst rel err {worst:.1e} (<= {ORACLE_TOL:e}), energy drift {drift:.1e} (<= {ENERGY_TOL:e})"),
    )
}

struct Trained {
    robomorph: LoadedModel,
    robomorph_traj: Trajectory,
    cdt: LoadedModel,
    cdt_traj: Trajectory,
}

fn fit(rc: &RunConfig, lr0: f64, steps: usize, trajs: Vec<Trajectory>, dir: &Path) -> TrainOutcome {
    let ds = Dataset::from_trajectories(trajs, rc.dataset.context, None).unwrap();
    let tc = TrainConfig { epochs: steps, batch_size: 16, lr0, ..rc.train.clone() };
    train(&rc.model, &tc, &rc.diffusion, &ds, dir).unwrap()
}

/// Desk lengths halved and a two-block, 32-wide backbone.
fn compact(arch: Arch) -> RunConfig {
    let mut rc = RunConfig::defaults(Preset::Desk, arch);
    rc.dataset.n_steps = 64;
    rc.dataset.context = 48;
    rc.model.n_steps = 64;
    rc.model.context = 48;
    rc.model.transformer = TransformerConfig { blocks: 2, heads: 4, embed_dim: 32 };
    rc.model.unet.base_channels = 16;
    rc
}

/// Single-trajectory overfit setup per diffusion arch: length, steps.
fn overfit_setup(arch: Arch) -> (RunConfig, usize) {
    let mut rc = compact(arch);
    if arch != Arch::Cdt {
        rc.dataset.n_steps = 32;
        rc.dataset.context = 24;
        rc.model.n_steps = 32;
        rc.model.context = 24;
    }
    let steps = if arch == Arch::Cdt { 4000 } else { 6000 };
    (rc, steps)
}

fn criterion_4(dir: &Path, trained: &mut Option<Trained>) -> Verdict {
    let start = Instant::now();
    let rc = RunConfig::defaults(Preset::Desk, Arch::RoboMorph);
    let trajs: Vec<Trajectory> = (0..16).map(|i| generate_trajectory(&rc.dataset, i).unwrap()).collect();
    let first = trajs[0].clone();
    let o = fit(&rc, rc.train.lr0, ROBOMORPH_STEPS, trajs, &dir.join("robomorph"));
    let mut ok = o.steps <= OVERFIT_STEPS && o.final_loss < OVERFIT_MSE;
    let mut parts = vec![format!("RoboMorph MSE {:.1e} after {} steps in {:.0}s", o.final_loss, o.steps, start.elapsed().as_secs_f64())];
    let robomorph = LoadedModel::load(&o.checkpoint).unwrap();

    let mut cdt = None;
    for arch in [Arch::Diffuser, Arch::Cdcnn, Arch::Cdt] {
        let (rc, steps) = overfit_setup(arch);
        let t0 = Instant::now();
        let one = generate_trajectory(&rc.dataset, 0).unwrap();
        let o = fit(&rc, 1e-3, steps, vec![one.clone(); 16], &dir.join(arch.name()));
        let lm = LoadedModel::load(&o.checkpoint).unwrap();
        let refs = vec![&one; 4];
        let (u, y_ctx, fut) = lm.normalized_batch(&refs).unwrap();
        let pred = predict_horizon(&lm.model, &lm.params, lm.sched.as_ref(), &u, &y_ctx, &SampleMode::Full, &mut rng(1)).unwrap();
        let per = fut.numel() / refs.len();
        let mad = (0..refs.len())
            .map(|i| (0..per).map(|j| (pred.data()[i * per + j] as f64 - fut.data()[i * per + j]).abs()).sum::<f64>() / per as f64)
            .fold(0.0, f64::max);
        ok &= mad < OVERFIT_MAD;
        parts.push(format!("{arch} worst-of-4 MAD {mad:.3} after {steps} steps in {:.0}s", t0.elapsed().as_secs_f64()));
        if arch == Arch::Cdt {
            cdt = Some((lm, one));
        }
    }
    let (cdt, cdt_traj) = cdt.unwrap();
    *trained = Some(Trained { robomorph, robomorph_traj: first, cdt, cdt_traj });
    let secs = start.elapsed().as_secs_f64();
    ok &= secs < OVERFIT_BUDGET_S;
    parts.push(format!("{secs:.0}s total"));
    check(ok, format!("{} (MSE < {OVERFIT_MSE:e}, MAD < {OVERFIT_MAD}, < {OVERFIT_BUDGET_S}s)", parts.join(", ")))
}

fn criterion_5() -> Verdict {
    let mut fails = Vec::new();
    let mut expect = |what: &str, ok: bool| {
        if !ok {
            fails.push(what.to_string());
        }
    };
    for arch in Arch::ALL {
        let r = config::resolve(&json!({"preset": "paper", "model": {"arch": arch.name()}}), None).unwrap();
        expect("batch 64", r.train.batch_size == 64);
        expect("epochs 10", r.train.epochs == 10);
        expect("N 400", r.model.n_steps == 400 && r.dataset.n_steps == 400);
        expect("m 320", r.model.context == 320 && r.dataset.context == 320);
        expect("T 100", r.diffusion.t == 100 && r.model.diffusion_steps == 100);
        let lr = if matches!(arch, Arch::RoboMorph | Arch::Diffuser) { 6e-4 } else { 1e-4 };
        expect("lr0", r.train.lr0 == lr);
        let w = if arch == Arch::Diffuser { (1.0, 3.0) } else { (1.0, 1.0) };
        expect("W", (r.diffusion.w_u, r.diffusion.w_y) == w);
        expect("final lr", (lr_at(999, 999, lr) - lr / 10.0).abs() <= 1e-15 * lr);
    }

    let dir = tempfile::tempdir().unwrap();
    let rc = RunConfig::defaults(Preset::Desk, Arch::RoboMorph);
    let trajs: Vec<Trajectory> = (0..4).map(|i| generate_trajectory(&rc.dataset, i).unwrap()).collect();
    let ds = Dataset::from_trajectories(trajs, rc.dataset.context, None).unwrap();
    let tc = TrainConfig { epochs: 3, batch_size: 2, ..rc.train.clone() };
    let small = ModelConfig { transformer: TransformerConfig { blocks: 2, heads: 2, embed_dim: 8 }, ..rc.model.clone() };
    let o = train(&small, &tc, &rc.diffusion, &ds, dir.path()).unwrap();
    let log = std::fs::read_to_string(o.loss_log).unwrap();
    let lrs: Vec<f64> = log.lines().skip(1).map(|l| l.split(',').nth(3).unwrap().parse().unwrap()).collect();
    expect("logged lr0", lrs[0] == tc.lr0);
    expect("logged final lr", (lrs[lrs.len() - 1] - tc.lr0 / 10.0).abs() <= 1e-15);

    let table = [
        (SignalKind::Chirp, [0.3, 0.3]),
        (SignalKind::Chirp, [0.2, 0.4]),
        (SignalKind::Chirp, [0.2, 0.6]),
        (SignalKind::Chirp, [0.1, 0.7]),
        (SignalKind::MultiSine, [0.15, 0.15]),
        (SignalKind::MultiSine, [0.05, 0.15]),
        (SignalKind::MultiSine, [0.05, 0.25]),
        (SignalKind::MultiSine, [0.01, 0.30]),
    ];
    let rows = RandomizationProfile::all_rows();
    expect("eight rows", rows.len() == 8);
    for (row, (signal, freq)) in rows.iter().zip(table) {
        expect("table frequencies", row.signal == signal && row.freq == freq);
        match signal {
            SignalKind::Chirp => expect("chirp amplitude [-4, 4]", row.amp == [-4.0, 4.0]),
            SignalKind::MultiSine => expect("multi-sine bound 30 f", row.ms_amp_scale == 30.0),
        }
        let r = config::resolve(&json!({"dataset": {"profile": row}}), None).unwrap();
        expect("profile via config", &r.dataset.profile == row);
        let text = serde_json::to_string(&r).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        expect("resolved config round trip", back == r && serde_json::to_string(&back).unwrap() == text);
    }
    fails.dedup();
    check(fails.is_empty(), if fails.is_empty() { "all pinned defaults resolve".into() } else { format!("mismatched: {}", fails.join(", ")) })
}

fn criterion_6(trained: Option<&Trained>) -> Verdict {
    let t = trained.ok_or("needs the checkpoints trained for criterion 4")?;
    let scenarios = vec![t.cdt_traj.clone(); 10];
    eval::warmstart_degradation(&t.cdt, &scenarios[..1], &[5, 100], 6).unwrap();
    let mut ratios: Vec<f64> = (0..5)
        .map(|rep| {
            let warm = eval::warmstart_degradation(&t.cdt, &scenarios, &[5, 100], 6 + rep).unwrap();
            let wall = |k: usize| warm.rows.iter().find(|r| r.warm_start_k == k).unwrap().wall_time_mean_ms;
            wall(5) / wall(100)
        })
        .collect();
    ratios.sort_by(f64::total_cmp);
    let ratio = ratios[2];

    let mut desk = t.robomorph.meta.clone();
    desk.model = ModelConfig { arch: Arch::Cdt, ..desk.model.clone() };
    desk.diffusion = Some(DiffusionConfig::for_arch(Arch::Cdt));
    let params = MetaModel::new(&desk.model).unwrap().init_params(5);
    let cdt = LoadedModel::from_parts("CDT", params, desk).unwrap();
    let bench = |lm: &LoadedModel, k: usize| {
        let rep = eval::latency_bench(std::slice::from_ref(lm), &t.robomorph_traj, 5, 6).unwrap();
        rep.rows.iter().find(|r| r.warm_start_k == k).unwrap().wall_time_mean_ms
    };
    let (det, chain) = (bench(&t.robomorph, 0), bench(&cdt, 100));
    let speedup = chain / det;
    check(
        (WARM_RATIO[0]..=WARM_RATIO[1]).contains(&ratio) && speedup >= DETERMINISTIC_SPEEDUP,
        format!(
            "median k5/k100 wall time {ratio:.4} over 5 runs (in [{}, {}]), RoboMorph {det:.2} ms vs CDT 100-step chain {chain:.1} ms = {speedup:.0}x (>= {DETERMINISTIC_SPEEDUP}x)",
            WARM_RATIO[0], WARM_RATIO[1]
        ),
    )
}

/// Out-of-distribution trend over three seeds; a diagnostic, never fatal.
fn criterion_7(dir: &Path) -> Verdict {
    let freqs = [0.1, 0.3, 0.7];
    let mut wins = [0usize; 3];
    let mut lines = Vec::new();
    for seed in 0..3u64 {
        let mut ratios = Vec::new();
        for arch in Arch::ALL {
            let mut rc = compact(arch);
            rc.dataset.n_traj = 4096;
            rc.dataset.seed = seed;
            rc.train.seed = seed;
            rc.train.epochs = 24;
            let data = dir.join(format!("data{seed}"));
            if !data.join("manifest.json").exists() {
                generate_dataset(&rc.dataset, &data, 1).unwrap();
            }
            let ds = Dataset::open(&data).unwrap();
            let o = train(&rc.model, &rc.train, &rc.diffusion, &ds, &dir.join(format!("{}_{seed}", arch.name()))).unwrap();
            let lm = LoadedModel::load(&o.checkpoint).unwrap();
            let sweep = eval::frequency_sweep(&lm, &rc.dataset, &freqs, 100, 25, 100 + seed, 1).unwrap();
            let at = |f: f64| sweep.rows.iter().find(|r| r.freq_hz == f).unwrap().rmse_mean;
            ratios.push((arch, at(0.7) / at(0.3)));
        }
        let det = ratios[0].1;
        for (i, (_, r)) in ratios[1..].iter().enumerate() {
            wins[i] += (*r <= det) as usize;
        }
        lines.push(format!("seed {seed}: {}", ratios.iter().map(|(a, r)| format!("{a} {r:.2}")).collect::<Vec<_>>().join(" ")));
    }
    let ok = wins.iter().all(|w| *w >= 2);
    check(
        ok,
        format!("rmse(0.7)/rmse(0.3) per seed [{}]; diffusion <= RoboMorph in Diffuser {}/3, CDCNN {}/3, CDT {}/3", lines.join("; "), wins[0], wins[1], wins[2]),
    )
}

fn tiny_data(seed: u64) -> DatasetConfig {
    let mut d = RunConfig::defaults(Preset::Desk, Arch::Cdt).dataset;
    d.n_traj = 12;
    d.n_steps = 32;
    d.context = 24;
    d.shard_size = 5;
    d.seed = seed;
    d
}

fn criterion_8(dir: &Path) -> Verdict {
    let d = tiny_data(21);
    let (a, b) = (dir.join("a"), dir.join("b"));
    let ma = generate_dataset(&d, &a, 1).unwrap();
    let mb = generate_dataset(&d, &b, 3).unwrap();
    let digest_eq = ma.content_digest() == mb.content_digest();

    let mut shards_exact = true;
    for e in &ma.shards {
        let bytes = std::fs::read(a.join(&e.file)).unwrap();
        let (h, trajs) = shard::decode(&bytes).unwrap();
        let refs: Vec<(&[f32], &[f32])> = trajs.iter().map(|(u, y)| (u.as_slice(), y.as_slice())).collect();
        shards_exact &= shard::encode(h, &refs) == bytes && shard::digest(&bytes) == e.digest;
        shards_exact &= bytes == std::fs::read(b.join(&e.file)).unwrap();
    }
    shards_exact &= DatasetManifest::read(&a).unwrap() == ma;

    let mut rc = RunConfig::defaults(Preset::Desk, Arch::Cdt);
    rc.model = ModelConfig { n_steps: 32, context: 24, ..tiny(Arch::Cdt, 2, 2) };
    rc.model.diffusion_steps = 100;
    rc.train = TrainConfig { epochs: 2, batch_size: 4, ..rc.train };
    let run = |data: &Path, out: &Path| train(&rc.model, &rc.train, &rc.diffusion, &Dataset::open(data).unwrap(), out).unwrap();
    let (oa, ob) = (run(&a, &dir.join("ra")), run(&b, &dir.join("rb")));
    let ckpt_eq = std::fs::read(&oa.checkpoint).unwrap() == std::fs::read(&ob.checkpoint).unwrap();

    let (params, meta) = load_checkpoint(&oa.checkpoint).unwrap();
    let resaved = dir.join("resaved.bin");
    save_checkpoint(&resaved, &params, &meta).unwrap();
    let (params2, meta2) = load_checkpoint(&resaved).unwrap();
    let ckpt_round = std::fs::read(&resaved).unwrap() == std::fs::read(&oa.checkpoint).unwrap()
        && meta2 == meta
        && params.iter().zip(params2.iter()).all(|((n1, t1), (n2, t2))| {
            n1 == n2 && t1.data().iter().zip(t2.data()).all(|(x, y)| x.to_bits() == y.to_bits())
        })
        && params.len() == params2.len();

    let lm = LoadedModel::load(&oa.checkpoint).unwrap();
    let sweep = eval::frequency_sweep(&lm, &tiny_data(5), &[0.1, 0.3, 0.7], 2, 1, 3, 1).unwrap();
    let (csv, svg) = write_sweep(&sweep, &dir.join("reports"), "sweep").unwrap();
    let csv_ok = read_sweep_csv(&csv).unwrap() == sweep.rows;
    let text = std::fs::read_to_string(&svg).unwrap();
    let svg_ok = match roxmltree::Document::parse(&text) {
        Ok(doc) => {
            let lines = doc.descendants().filter(|n| n.has_tag_name((SVG_NS, "polyline"))).count();
            let band = doc.descendants().find(|n| n.attribute("class") == Some("id-band"));
            let edges = band.map(|n| [n.attribute("data-lo").unwrap().parse::<f64>().unwrap(), n.attribute("data-hi").unwrap().parse().unwrap()]);
            doc.root_element().has_tag_name((SVG_NS, "svg")) && lines == 1 && edges == Some(tiny_data(5).profile.freq)
        }
        Err(_) => false,
    };
    check(
        digest_eq && shards_exact && ckpt_eq && ckpt_round && csv_ok && svg_ok,
        format!(
            "data digest equal across workers {digest_eq}, shards bit-exact {shards_exact}, checkpoints bit-identical {ckpt_eq}, checkpoint round trip {ckpt_round}, csv {csv_ok}, svg {svg_ok}"
        ),
    )
}

fn run(n: usize, f: impl FnOnce() -> Verdict) -> bool {
    let start = Instant::now();
    let verdict = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
        Err(format!("panicked: {}", msg.unwrap_or_default()))
    });
    let secs = start.elapsed().as_secs_f64();
    match &verdict {
        Ok(d) => println!("criterion {n}: PASS {d} [{secs:.0}s]"),
        Err(d) => println!("criterion {n}: FAIL {d} [{secs:.0}s]"),
    }
    verdict.is_ok()
}

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let mut trained = None;
    let mut ok = true;
    ok &= run(1, criterion_1);
    ok &= run(2, criterion_2);
    ok &= run(3, criterion_3);
    ok &= run(4, || criterion_4(&dir.path().join("overfit"), &mut trained));
    ok &= run(5, criterion_5);
    ok &= run(6, || criterion_6(trained.as_ref()));
    if std::env::var("ICL_DYN_SLOW").is_ok_and(|v| v == "1") {
        if !run(7, || criterion_7(&dir.path().join("ood"))) {
            println!("criterion 7: WARN diagnostic only, exit status unaffected");
        }
    } else {
        println!("criterion 7: SKIP slow diagnostic, set ICL_DYN_SLOW=1 to run");
    }
    ok &= run(8, || criterion_8(&dir.path().join("repro")));
    if !ok {
        std::process::exit(1);
    }
}
