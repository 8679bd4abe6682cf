use super::*;
use icl_tensor::Graph;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const COSINE10_BETA: [f64; 10] = [
    0.027907262886030825666,
    0.075493637296722583968,
    0.12439598636904836841,
    0.17718952540157393925,
    0.23728153019052486158,
    0.30988344010857230834,
    0.40400314303967557493,
    0.53699817764288509334,
    0.74382936689542714652,
    0.999,
];
const COSINE10_ALPHA_BAR: [f64; 10] = [
    0.97209273711396917433,
    0.89870592059950888904,
    0.786910511150829316,
    0.64747821114650391234,
    0.49384359044063771332,
    0.34080963975932404435,
    0.20312147411833754847,
    0.094045612676653834826,
    0.024091724140085855264,
    0.000024091724140085855264,
];

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stand-in denoiser: a fixed linear map of the state.
fn toy(x: &Tensor<f64>, t: usize) -> Result<Tensor<f64>> {
    Ok(x.map(|v| 0.1 * v + 0.01 * t as f64))
}

#[test]
fn cosine_table_matches_high_precision_oracle() {
    let s = make_schedule(10, ScheduleKind::Cosine).unwrap();
    for i in 0..10 {
        assert!((s.beta[i] - COSINE10_BETA[i]).abs() <= 1e-10, "beta {i}");
        assert!((s.alpha_bar[i] - COSINE10_ALPHA_BAR[i]).abs() <= 1e-10, "alpha_bar {i}");
    }
}

#[test]
fn linear_schedule_endpoints() {
    let s = make_schedule(100, ScheduleKind::Linear).unwrap();
    assert_eq!(s.beta[0], 1e-4);
    assert!((s.beta[99] - 2e-2).abs() < 1e-15);
    assert_eq!(make_schedule(1, ScheduleKind::Linear).unwrap().beta, vec![1e-4]);
}

#[test]
fn schedules_are_strictly_decreasing_and_in_unit_interval() {
    for kind in [ScheduleKind::Cosine, ScheduleKind::Linear] {
        for t in [1, 10, 100, 1000] {
            let s = make_schedule(t, kind).unwrap();
            assert!(s.alpha_bar.windows(2).all(|w| w[1] < w[0]), "{kind:?} {t}");
            for v in s.beta.iter().chain(&s.alpha).chain(&s.alpha_bar) {
                assert!(*v > 0.0 && *v < 1.0);
            }
            assert_eq!(s.posterior_variance[0], 0.0);
            assert!(s.posterior_variance[1..].iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }
    assert!(matches!(make_schedule(0, ScheduleKind::Cosine), Err(Error::BadT(0))));
}

#[test]
fn q_sample_with_zero_noise_scales_x0() {
    let s = make_schedule(100, ScheduleKind::Cosine).unwrap();
    let x0 = Tensor::from_f64(&[3], &[1.0, -2.0, 0.5]).unwrap();
    let x = q_sample(&x0, 40, &Tensor::zeros(&[3]), &s).unwrap();
    let a = s.alpha_bar_at(40).unwrap().sqrt();
    assert_eq!(x.data(), &[a, -2.0 * a, 0.5 * a]);
    assert!(matches!(q_sample(&x0, 40, &Tensor::zeros(&[2]), &s), Err(Error::ShapeMismatch(_))));
    assert!(matches!(q_sample(&x0, 101, &Tensor::zeros(&[3]), &s), Err(Error::BadT(101))));
}

#[test]
fn q_sample_marginals_match_closed_form() {
    let s = make_schedule(100, ScheduleKind::Cosine).unwrap();
    let n = 10_000;
    let x0 = Tensor::full(&[n], 0.7);
    let eps = Tensor::randn(&[n], &mut rng(3));
    let x = q_sample(&x0, 50, &eps, &s).unwrap();
    let ab = s.alpha_bar_at(50).unwrap();
    let (mu, var) = (ab.sqrt() * 0.7, 1.0 - ab);
    let mean = x.data().iter().sum::<f64>() / n as f64;
    let v = x.data().iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    assert!((mean - mu).abs() <= 3.0 * (var / n as f64).sqrt());
    assert!((v - var).abs() <= 3.0 * var * (2.0 / (n - 1) as f64).sqrt());
}

#[test]
fn loss_is_zero_for_perfect_prediction() {
    let eps = Tensor::randn(&[2, 3, 2], &mut rng(1));
    let mut g = Graph::<f64>::inference();
    let e = g.constant(eps.clone());
    let l = weighted_mse(&mut g, e, &eps, &[1.0, 3.0]).unwrap();
    assert_eq!(g.value(l).item(), 0.0);
}

#[test]
fn loss_matches_hand_unrolled_computation() {
    let s = make_schedule(10, ScheduleKind::Cosine).unwrap();
    let x0 = Tensor::from_f64(&[2, 2, 2], &[0.1, -0.4, 1.2, 0.3, -0.7, 0.9, 0.0, 2.0]).unwrap();
    let w = [1.0, 3.0];

    let nb = noise_batch(&x0, &s, &mut rng(8)).unwrap();
    let mut g = Graph::<f64>::inference();
    let xt = g.constant(nb.x_t.clone());
    let eps_hat = g.scale(xt, 0.5).unwrap();
    let l = weighted_mse(&mut g, eps_hat, &nb.eps, &w).unwrap();
    let loss = g.value(l).item();

    let mut r = rng(8);
    let ts: Vec<usize> = (0..2).map(|_| r.random_range(1..=10)).collect();
    let eps: Vec<f64> = (0..8).map(|_| r.sample(StandardNormal)).collect();
    assert_eq!(ts, nb.ts);
    let mut acc = 0.0;
    for i in 0..8 {
        let ab = s.alpha_bar[ts[i / 4] - 1];
        let xt = ab.sqrt() * x0.data()[i] + (1.0 - ab).sqrt() * eps[i];
        acc += (w[i % 2] * (eps[i] - 0.5 * xt)).powi(2);
    }
    assert!((loss - acc / 8.0).abs() <= 1e-6);
}

#[test]
fn diffuser_weights_channels_by_group() {
    let w = WeightMask::for_arch(Arch::Diffuser);
    assert_eq!((w.w_u, w.w_y), (1.0, 3.0));
    assert_eq!(w.channel_weights(Arch::Diffuser, 2, 3), vec![1.0, 1.0, 3.0, 3.0, 3.0]);
    assert_eq!(WeightMask::for_arch(Arch::Cdt).channel_weights(Arch::Cdt, 2, 3), vec![1.0; 3]);
    assert!(WeightMask { w_u: -1.0, w_y: 1.0 }.validate().is_err());
}

#[test]
fn last_step_is_deterministic_and_inverts_q_sample() {
    let s = make_schedule(100, ScheduleKind::Cosine).unwrap();
    let x0 = Tensor::from_f64(&[1, 4, 1], &[0.3, -1.0, 2.0, 0.0]).unwrap();
    let eps = Tensor::randn(&[1, 4, 1], &mut rng(2));
    let x1 = q_sample(&x0, 1, &eps, &s).unwrap();
    let mut oracle = |_: &Tensor<f64>, _: usize| Ok(eps.clone());
    let a = p_sample_step(&mut oracle, &x1, 1, &s, &mut rng(1)).unwrap();
    let b = p_sample_step(&mut oracle, &x1, 1, &s, &mut rng(2)).unwrap();
    assert_eq!(a, b);
    assert!(a.max_abs_diff(&x0) < 1e-12);
}

#[test]
fn reverse_step_matches_scalar_recurrence() {
    let s = make_schedule(10, ScheduleKind::Linear).unwrap();
    let x = Tensor::from_f64(&[1], &[0.8]).unwrap();
    let got = p_sample_step(&mut toy, &x, 4, &s, &mut rng(5)).unwrap().item();
    let z: f64 = rng(5).sample(StandardNormal);
    let (b, ab) = (s.beta[3], s.alpha_bar[3]);
    let e = 0.1 * 0.8 + 0.04;
    let var = b * (1.0 - s.alpha_bar[2]) / (1.0 - ab);
    let want = (0.8 - b / (1.0 - ab).sqrt() * e) / (1.0 - b).sqrt() + var.sqrt() * z;
    assert!((got - want).abs() <= 1e-6);
}

#[test]
fn exact_denoiser_for_a_point_mass_recovers_it() {
    for kind in [ScheduleKind::Cosine, ScheduleKind::Linear] {
        let sched = make_schedule(100, kind).unwrap();
        let x0 = Tensor::<f64>::randn(&[2, 6, 3], &mut rng(4));
        let mut oracle = |x: &Tensor<f64>, t: usize| {
            let ab = sched.alpha_bar_at(t)?;
            let data = x.data().iter().zip(x0.data()).map(|(v, c)| (v - ab.sqrt() * c) / (1.0 - ab).sqrt()).collect();
            Ok(Tensor::new(x.shape().to_vec(), data)?)
        };
        let out = sample(&mut oracle, x0.shape(), &sched, &mut rng(5)).unwrap();
        assert!(out.max_abs_diff(&x0) < 1e-9, "{kind:?}: {}", out.max_abs_diff(&x0));
    }
}

#[test]
fn sample_is_reproducible_with_requested_shape() {
    let s = make_schedule(10, ScheduleKind::Cosine).unwrap();
    let a = sample(&mut toy, &[2, 8, 3], &s, &mut rng(4)).unwrap();
    let b = sample(&mut toy, &[2, 8, 3], &s, &mut rng(4)).unwrap();
    assert_eq!(a.shape(), &[2, 8, 3]);
    assert_eq!(a, b);
}

#[test]
fn inpainting_keeps_known_entries_bit_exact() {
    let s = make_schedule(20, ScheduleKind::Cosine).unwrap();
    let known = Tensor::randn(&[1, 8, 2], &mut rng(1));
    let mask: Vec<bool> = (0..16).map(|i| i % 2 == 0 || i < 8).collect();
    let out = inpaint_sample(&mut toy, &known, &mask, &s, &mut rng(2)).unwrap();
    for i in 0..16 {
        if mask[i] {
            assert_eq!(out.data()[i].to_bits(), known.data()[i].to_bits());
        }
    }
    let all = inpaint_sample(&mut toy, &known, &[true; 16], &s, &mut rng(3)).unwrap();
    assert_eq!(all, known);
    assert!(matches!(
        inpaint_sample(&mut toy, &known, &[true; 15], &s, &mut rng(3)),
        Err(Error::MaskShapeMismatch { mask: 15, known: 16 })
    ));
}

#[test]
fn inpainted_context_is_fixed_while_horizon_varies() {
    let s = make_schedule(10, ScheduleKind::Cosine).unwrap();
    let known = Tensor::randn(&[1, 8, 1], &mut rng(1));
    let mask: Vec<bool> = (0..8).map(|i| i < 6).collect();
    let mut r = rng(7);
    let draws: Vec<Tensor<f64>> = (0..100).map(|_| inpaint_sample(&mut toy, &known, &mask, &s, &mut r).unwrap()).collect();
    for i in 0..8 {
        let col: Vec<f64> = draws.iter().map(|d| d.data()[i]).collect();
        if i < 6 {
            assert!(col.iter().all(|v| v.to_bits() == known.data()[i].to_bits()));
        } else {
            let mean = col.iter().sum::<f64>() / 100.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 99.0;
            assert!(var > 0.0);
        }
    }
}

#[test]
fn warm_start_at_full_depth_equals_sampling() {
    let s = make_schedule(12, ScheduleKind::Cosine).unwrap();
    let prior = Tensor::full(&[1, 8, 2], 5.0);
    let a = sample(&mut toy, &[1, 8, 2], &s, &mut rng(9)).unwrap();
    let b = warm_start_sample(&mut toy, &prior, 12, &s, &mut rng(9), None).unwrap();
    assert_eq!(a, b);

    let known = Tensor::randn(&[1, 8, 2], &mut rng(1));
    let mask: Vec<bool> = (0..16).map(|i| i < 10).collect();
    let ip = Inpaint { known: &known, mask: &mask };
    let a = inpaint_sample(&mut toy, &known, &mask, &s, &mut rng(9)).unwrap();
    let b = warm_start_sample(&mut toy, &prior, 12, &s, &mut rng(9), Some(ip)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn warm_start_runs_k_steps() {
    let s = make_schedule(100, ScheduleKind::Cosine).unwrap();
    let prior = Tensor::full(&[1, 4, 1], 1.0);
    let mut seen = Vec::new();
    let mut counting = |x: &Tensor<f64>, t: usize| {
        seen.push(t);
        toy(x, t)
    };
    warm_start_sample(&mut counting, &prior, 5, &s, &mut rng(0), None).unwrap();
    assert_eq!(seen, vec![5, 4, 3, 2, 1]);
    for k in [0, 101] {
        assert!(matches!(warm_start_sample(&mut toy, &prior, k, &s, &mut rng(0), None), Err(Error::BadK { .. })));
    }
}

#[test]
fn shifted_prior_holds_the_tail() {
    let r = Tensor::from_f64(&[1, 5, 1], &[0.0, 1.0, 2.0, 3.0, 4.0]).unwrap();
    assert_eq!(shifted_prior(&r, 2).unwrap().data(), &[2.0, 3.0, 4.0, 4.0, 4.0]);
    assert_eq!(shifted_prior(&r, 0).unwrap(), r);
}
