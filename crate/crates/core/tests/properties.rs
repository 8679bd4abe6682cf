use icl_dyn::dataset::shard::{self, ShardHeader};
use icl_dyn::diffusion::{inpaint_sample, make_schedule, weighted_mse, ScheduleKind};
use icl_dyn::eval::rmse;
use icl_dyn::models::{Arch, MetaModel, ModelConfig, Preset, TransformerConfig, UNetConfig};
use icl_dyn::signal::{
    chirp_value, multisine_value, render_inputs, sample_excitation, Chirp, ExcitationSpec, MultiSine, Psi,
    RandomizationProfile,
};
use icl_dyn::system::{sample_system, simulate, Dims, SystemClassConfig, SystemSpec};
use icl_tensor::{Graph, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn psi() -> impl Strategy<Value = Psi> {
    prop_oneof![Just(Psi::Sin), Just(Psi::Cos)]
}

fn tiny_config(arch: Arch, d_u: usize, d_y: usize, h_blocks: usize, heads: usize, down: usize) -> ModelConfig {
    let factor = 1 << down;
    let h = factor * h_blocks;
    let m = if arch == Arch::Diffuser { 2 * factor } else { 6 };
    ModelConfig {
        arch,
        d_u,
        d_y,
        n_steps: m + h,
        context: m,
        transformer: TransformerConfig { blocks: 2, heads, embed_dim: 8 },
        unet: UNetConfig { base_channels: 8, down_steps: down },
        diffusion_steps: 5,
        preset: Preset::Desk,
    }
}

fn any_arch() -> impl Strategy<Value = Arch> {
    prop_oneof![Just(Arch::RoboMorph), Just(Arch::Diffuser), Just(Arch::Cdcnn), Just(Arch::Cdt)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn chirp_is_bounded(amp in -4.0..4.0f64, f1 in 0.0..2.0f64, f2 in 0.0..2.0f64, phase in 0.0..7.0f64, t in 0.0..200.0f64) {
        let c = Chirp { amp, f1, f2, phase };
        prop_assert!(chirp_value(&c, t).abs() <= amp.abs() * (1.0 + 1e-12));
    }

    #[test]
    fn multisine_is_bounded(
        amps in prop::array::uniform4(-9.0..9.0f64),
        psi in prop::array::uniform4(psi()),
        f0 in 0.0..0.3f64,
        t in 0.0..200.0f64,
    ) {
        let m = MultiSine { amps, psi, f0 };
        let bound: f64 = amps.iter().map(|a| a.abs()).sum();
        prop_assert!(multisine_value(&m, t).abs() <= bound * (1.0 + 1e-12));
    }

    #[test]
    fn rendering_is_reproducible(seed in any::<u64>(), row in 0usize..8, d_u in 1usize..4, n in 1usize..40) {
        let p = &RandomizationProfile::all_rows()[row];
        let a = render_inputs(p, d_u, n, 0.05, &mut rng(seed));
        let b = render_inputs(p, d_u, n, 0.05, &mut rng(seed));
        prop_assert_eq!(a.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        prop_assert_eq!(a.specs, b.specs);
    }

    #[test]
    fn linear_draws_are_stable(seed in any::<u64>(), n_x in 1usize..9) {
        let class = SystemClassConfig { dims: Dims { n_x, d_u: 2, d_y: 2 }, ..SystemClassConfig::default() };
        let SystemSpec::Linear(l) = sample_system(&class, &mut rng(seed)) else { unreachable!() };
        let radius = l.a.complex_eigenvalues().iter().map(|e| e.norm()).fold(0.0, f64::max);
        prop_assert!(radius < 1.0, "spectral radius {}", radius);
    }

    #[test]
    fn zero_input_zero_state_is_silent(seed in any::<u64>(), pendulum in any::<bool>(), links in 1usize..3, n in 1usize..50) {
        let class = if pendulum { SystemClassConfig::pendulum(links) } else { SystemClassConfig::default() };
        let mut spec = sample_system(&class, &mut rng(seed));
        match &mut spec {
            SystemSpec::Linear(l) => l.x0.fill(0.0),
            SystemSpec::Pendulum(p) => p.x0.iter_mut().for_each(|v| *v = 0.0),
        }
        let u = vec![0.0; n * spec.d_u()];
        let y = simulate(&spec, &u, n, 0.05, 1e6).unwrap();
        prop_assert!(y.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn simulation_is_deterministic(seed in any::<u64>(), pendulum in any::<bool>(), n in 1usize..50) {
        let class = if pendulum { SystemClassConfig::pendulum(2) } else { SystemClassConfig::default() };
        let spec = sample_system(&class, &mut rng(seed));
        let p = RandomizationProfile::all_rows()[1].clone();
        let u = render_inputs(&p, spec.d_u(), n, 0.05, &mut rng(seed ^ 1)).values;
        let a = simulate(&spec, &u, n, 0.05, 1e6).unwrap();
        let b = simulate(&spec, &u, n, 0.05, 1e6).unwrap();
        prop_assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn shard_round_trip_is_bit_exact(
        n_steps in 1usize..12,
        d_u in 1usize..4,
        d_y in 1usize..4,
        n_traj in 0usize..5,
        seed in any::<u64>(),
    ) {
        let mut r = rng(seed);
        let trajs: Vec<(Vec<f32>, Vec<f32>)> = (0..n_traj)
            .map(|_| {
                let u = Tensor::<f32>::randn(&[n_steps * d_u], &mut r).data().to_vec();
                let y = Tensor::<f32>::randn(&[n_steps * d_y], &mut r).data().to_vec();
                (u, y)
            })
            .collect();
        let refs: Vec<(&[f32], &[f32])> = trajs.iter().map(|(u, y)| (u.as_slice(), y.as_slice())).collect();
        let h = ShardHeader { n_traj, n_steps, d_u, d_y };
        let bytes = shard::encode(h, &refs);
        let (h2, back) = shard::decode(&bytes).unwrap();
        prop_assert_eq!(h, h2);
        let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        for ((u, y), (u2, y2)) in trajs.iter().zip(&back) {
            prop_assert_eq!(bits(u), bits(u2));
            prop_assert_eq!(bits(y), bits(y2));
        }
    }

    #[test]
    fn single_byte_flip_changes_digest(len in 1usize..200, pos in any::<prop::sample::Index>(), flip in 1u8..=255, seed in any::<u64>()) {
        let bytes: Vec<u8> = Tensor::<f64>::randn(&[len], &mut rng(seed)).data().iter().map(|v| v.to_bits() as u8).collect();
        let mut bad = bytes.clone();
        bad[pos.index(len)] ^= flip;
        prop_assert_ne!(shard::digest(&bytes), shard::digest(&bad));
    }

    #[test]
    fn schedules_are_strictly_decreasing(t in 1usize..1001, cosine in any::<bool>()) {
        let kind = if cosine { ScheduleKind::Cosine } else { ScheduleKind::Linear };
        let s = make_schedule(t, kind).unwrap();
        prop_assert!(s.alpha_bar.iter().all(|a| *a > 0.0 && *a < 1.0));
        prop_assert!(s.beta.iter().all(|b| *b > 0.0 && *b < 1.0));
        prop_assert!(s.alpha_bar.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn inpainting_keeps_known_entries(seed in any::<u64>(), b in 1usize..3, l in 1usize..10, c in 1usize..4, t in 1usize..20) {
        let mut r = rng(seed);
        let known = Tensor::<f64>::randn(&[b, l, c], &mut r);
        let mask: Vec<bool> = Tensor::<f64>::randn(&[b * l * c], &mut r).data().iter().map(|v| *v > 0.0).collect();
        let sched = make_schedule(t, ScheduleKind::Cosine).unwrap();
        let mut denoise = |x: &Tensor<f64>, step: usize| Ok(x.map(|v| (v * step as f64).sin()));
        let out = inpaint_sample(&mut denoise, &known, &mask, &sched, &mut r).unwrap();
        for ((o, k), m) in out.data().iter().zip(known.data()).zip(&mask) {
            if *m {
                prop_assert_eq!(o.to_bits(), k.to_bits());
            }
        }
    }

    #[test]
    fn weighted_loss_is_nonnegative_and_zero_only_at_target(
        seed in any::<u64>(),
        c in 1usize..4,
        w in prop::collection::vec(0.1..5.0f64, 3),
        equal in any::<bool>(),
    ) {
        let mut r = rng(seed);
        let eps = Tensor::<f64>::randn(&[2, 3, c], &mut r);
        let hat = if equal { eps.clone() } else { Tensor::<f64>::randn(&[2, 3, c], &mut r) };
        let mut g = Graph::<f64>::inference();
        let h = g.constant(hat);
        let loss = weighted_mse(&mut g, h, &eps, &w[..c]).unwrap();
        let v = g.value(loss).item();
        prop_assert!(v >= 0.0);
        prop_assert_eq!(v == 0.0, equal);
    }

    #[test]
    fn rmse_detects_translation(truth in prop::collection::vec(-100.0..100.0f64, 1..50), shift in -10.0..10.0f64) {
        prop_assert_eq!(rmse(&truth, &truth).unwrap(), 0.0);
        let moved: Vec<f64> = truth.iter().map(|v| v + shift).collect();
        prop_assert!((rmse(&moved, &truth).unwrap() - shift.abs()).abs() <= 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn model_shapes_hold_for_small_configs(
        arch in any_arch(),
        d_u in 1usize..4,
        d_y in 1usize..4,
        h_blocks in 1usize..3,
        heads in prop_oneof![Just(1usize), Just(2), Just(4)],
        down in 1usize..3,
        b in 1usize..3,
        seed in 0u64..1000,
    ) {
        let cfg = tiny_config(arch, d_u, d_y, h_blocks, heads, down);
        cfg.validate().unwrap();
        let model = MetaModel::new(&cfg).unwrap();
        let p = model.init_params_with::<f32>(seed, false);
        let mut r = rng(seed);
        let (n, m, h) = (cfg.n_steps, cfg.context, cfg.horizon());
        let u = Tensor::<f32>::randn(&[b, n, d_u], &mut r);
        let y_ctx = Tensor::<f32>::randn(&[b, m, d_y], &mut r);
        let mut g = Graph::inference();
        let out = if arch == Arch::RoboMorph {
            let cu = g.constant(u.narrow(1, 0, m).unwrap());
            let fu = g.constant(u.narrow(1, m, n).unwrap());
            let cy = g.constant(y_ctx);
            model.robomorph_forward(&mut g, &p, cu, cy, fu).unwrap()
        } else {
            let ctx = if arch.is_conditioned() {
                let (uv, yv) = (g.constant(u), g.constant(y_ctx));
                Some(model.encode_context(&mut g, &p, uv, yv).unwrap())
            } else {
                None
            };
            let (l, c) = cfg.target_dims();
            let x = g.constant(Tensor::<f32>::randn(&[b, l, c], &mut r));
            let ts: Vec<usize> = (0..b).map(|i| 1 + (seed as usize + i) % cfg.diffusion_steps).collect();
            model.denoise(&mut g, &p, x, &ts, ctx.as_ref()).unwrap()
        };
        let (l, c) = if arch == Arch::RoboMorph { (h, d_y) } else { cfg.target_dims() };
        prop_assert_eq!(g.shape(out).to_vec(), vec![b, l, c]);
        prop_assert!(g.value(out).data().iter().all(|v| v.is_finite()));
    }
}

#[test]
fn sampled_parameters_stay_inside_profile_intervals() {
    for p in RandomizationProfile::all_rows() {
        let mut r = rng(11);
        for _ in 0..10_000 {
            let s = sample_excitation(&p, &mut r);
            assert!(s.is_valid());
            match s {
                ExcitationSpec::Chirp(c) => {
                    assert!(p.amp[0] <= c.amp && c.amp <= p.amp[1]);
                    assert!(p.contains_freq(c.f1) && p.contains_freq(c.f2));
                    assert_eq!(c.f1, c.f2);
                    assert!((0.0..=std::f64::consts::TAU).contains(&c.phase));
                }
                ExcitationSpec::MultiSine(m) => {
                    assert!(p.contains_freq(m.f0));
                    assert!(m.amps.iter().all(|a| a.abs() <= p.ms_amp_scale * m.f0));
                }
            }
        }
    }
}
