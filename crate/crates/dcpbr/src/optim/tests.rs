use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::net::{PixelParams, TextureSet};
use crate::render::{build_env, Mesh};
use crate::tensor::{Tape, Tensor};
use crate::Error;

use super::*;

fn random_textures(seed: u64, h: usize, w: usize) -> TextureSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<f64> = (0..8 * h * w).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut tape = Tape::new();
    let params = PixelParams { raw, height: h, width: w };
    let (set, _) = params.decode(&mut tape).unwrap();
    set.detach()
}

fn random_tensor(seed: u64, shape: Vec<usize>) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| StandardNormal.sample(&mut rng)).collect())
}

#[test]
fn schedule_window_interpolates_linearly() {
    let sched = SdsSchedule::new(101);
    let (lo, hi) = sched.window(0).unwrap();
    assert_eq!((lo, hi), (0.2, 0.98));
    let (lo, hi) = sched.window(100).unwrap();
    assert!((lo - 0.3).abs() < 1e-12 && (hi - 0.5).abs() < 1e-12);
    let (lo, hi) = sched.window(50).unwrap();
    assert!((lo - 0.25).abs() < 1e-12);
    assert!((hi - 0.74).abs() < 1e-12);
}

#[test]
fn single_iteration_schedule_uses_the_start_window() {
    assert_eq!(SdsSchedule::new(1).window(0).unwrap(), (0.2, 0.98));
}

#[test]
fn schedule_rejects_out_of_range_iterations() {
    let sched = SdsSchedule::new(10);
    assert!(matches!(sched.window(10), Err(Error::Config(_))));
    assert!(matches!(SdsSchedule::new(0).window(0), Err(Error::Config(_))));
}

#[test]
fn schedule_rejects_invalid_windows() {
    let mut sched = SdsSchedule::new(10);
    sched.t_min_end = 0.6;
    assert!(matches!(sched.validate(), Err(Error::Config(_))));
    let mut sched = SdsSchedule::new(10);
    sched.t_max_start = 1.2;
    assert!(matches!(sched.window(3), Err(Error::Config(_))));
    let mut sched = SdsSchedule::new(10);
    sched.t_min_start = -0.1;
    assert!(matches!(sched.validate(), Err(Error::Config(_))));
}

#[test]
fn surrogate_draw_depends_only_on_seed_and_iteration() {
    let sched = SdsSchedule::new(50);
    let x = vec![random_tensor(1, vec![1, 3, 4, 4]), random_tensor(2, vec![1, 3, 4, 4])];
    let t = vec![random_tensor(3, vec![1, 3, 4, 4]), random_tensor(4, vec![1, 3, 4, 4])];
    let a = sds_surrogate(&x, &t, 7, &sched, 11, 1.0).unwrap();
    let b = sds_surrogate(&x, &t, 7, &sched, 11, 1.0).unwrap();
    assert_eq!(a.t, b.t);
    for (ga, gb) in a.grads.iter().zip(&b.grads) {
        assert_eq!(ga.data(), gb.data());
    }
    let c = sds_surrogate(&x, &t, 8, &sched, 11, 1.0).unwrap();
    assert_ne!(a.t, c.t);
}

#[test]
fn views_share_one_noise_image_and_timestep() {
    // With the data term cancelled (image == target per view) the gradient
    // is the shared noise alone, so the two views must match bit for bit.
    let sched = SdsSchedule::new(20);
    let x = vec![random_tensor(5, vec![1, 3, 6, 6]), random_tensor(6, vec![1, 3, 6, 6])];
    let sample = sds_surrogate(&x, &x, 4, &sched, 9, 1.0).unwrap();
    assert_eq!(sample.grads[0].data(), sample.grads[1].data());
    assert!(sample.grads[0].data().iter().any(|&g| g != 0.0));
}

#[test]
fn disabling_noise_leaves_the_pure_data_term() {
    let sched = SdsSchedule::new(20);
    let x = vec![random_tensor(7, vec![1, 3, 5, 5])];
    let t = vec![random_tensor(8, vec![1, 3, 5, 5])];
    let sample = sds_surrogate(&x, &t, 3, &sched, 1, 0.0).unwrap();
    assert_eq!(sample.noise_gain, 0.0);
    for ((&g, &xv), &tv) in sample.grads[0].data().iter().zip(x[0].data()).zip(t[0].data()) {
        assert_eq!(g, xv - tv);
    }
    let zero = sds_surrogate(&x, &x, 3, &sched, 1, 0.0).unwrap();
    assert!(zero.grads[0].data().iter().all(|&g| g == 0.0));
}

#[test]
fn sampled_timesteps_respect_the_narrowing_window() {
    let sched = SdsSchedule::new(200);
    let x = vec![Tensor::zeros(vec![1, 1, 2, 2])];
    for iter in 0..200 {
        let (lo, hi) = sched.window(iter).unwrap();
        let sample = sds_surrogate(&x, &x, iter, &sched, 42, 1.0).unwrap();
        assert!(sample.t >= lo && sample.t < hi, "t {} outside [{lo}, {hi})", sample.t);
    }
}

#[test]
fn noise_gain_follows_the_inverse_signal_to_noise_ratio() {
    let sched = SdsSchedule::new(30);
    let x = vec![Tensor::zeros(vec![1, 1, 2, 2])];
    for (iter, scale) in [(0usize, 1.0), (15, 0.5), (29, 2.0)] {
        let sample = sds_surrogate(&x, &x, iter, &sched, 3, scale).unwrap();
        let expected = scale * (std::f64::consts::PI * sample.t / 2.0).tan();
        assert!((sample.noise_gain - expected).abs() <= 1e-12 * expected.abs());
    }
}

#[test]
fn surrogate_rejects_mismatched_views() {
    let sched = SdsSchedule::new(10);
    let a = Tensor::zeros(vec![1, 3, 4, 4]);
    let b = Tensor::zeros(vec![1, 3, 2, 2]);
    assert!(sds_surrogate(&[], &[], 0, &sched, 0, 1.0).is_err());
    let one = std::slice::from_ref(&a);
    assert!(sds_surrogate(one, &[], 0, &sched, 0, 1.0).is_err());
    assert!(sds_surrogate(one, std::slice::from_ref(&b), 0, &sched, 0, 1.0).is_err());
    assert!(sds_surrogate(&[a.clone(), b], &[a.clone(), a.clone()], 0, &sched, 0, 1.0).is_err());
    assert!(sds_surrogate(one, one, 0, &sched, 0, f64::NAN).is_err());
    assert!(sds_surrogate(one, one, 0, &sched, 0, -1.0).is_err());
}

#[test]
fn surrogate_loss_delivers_the_exact_upstream_gradients() {
    let mut tape = Tape::new();
    let x = tape.leaf(vec![1, 3, 2, 2], random_tensor(10, vec![1, 3, 2, 2]).data().to_vec());
    let two = Tensor::full(vec![1, 3, 2, 2], 2.0);
    let y = tape.mul(&x, &two).unwrap();
    let g1 = random_tensor(11, vec![1, 3, 2, 2]);
    let g2 = random_tensor(12, vec![1, 3, 2, 2]);
    let loss = surrogate_loss(&mut tape, &[y.clone(), y], &[g1.clone(), g2.clone()]).unwrap();
    let grads = tape.backward(&loss).unwrap();
    let dx = grads.get(&x).unwrap();
    for i in 0..dx.len() {
        assert_eq!(dx[i], 2.0 * (g1.data()[i] + g2.data()[i]));
    }
}

#[test]
fn surrogate_loss_rejects_mismatched_counts() {
    let mut tape = Tape::new();
    let x = Tensor::zeros(vec![1, 1, 2, 2]);
    let pair = [x.clone(), x];
    assert!(surrogate_loss(&mut tape, &[], &[]).is_err());
    assert!(surrogate_loss(&mut tape, &pair[..1], &pair).is_err());
}

#[test]
fn first_adam_step_moves_by_the_learning_rate() {
    let mut adam = AdamState::new(DEFAULT_LR, &[2]);
    let mut p = [5.0, -1.0];
    adam.step([("p", p.as_mut_slice(), [1.0, -1.0].as_slice())]).unwrap();
    assert!((p[0] - (5.0 - DEFAULT_LR)).abs() < 1e-9);
    assert!((p[1] - (-1.0 + DEFAULT_LR)).abs() < 1e-9);
    assert_eq!(adam.step_count(), 1);
}

#[test]
fn zero_gradients_leave_parameters_untouched() {
    let mut adam = AdamState::new(0.1, &[3]);
    let mut p = [1.0, 2.0, 3.0];
    for _ in 0..5 {
        adam.step([("p", p.as_mut_slice(), [0.0; 3].as_slice())]).unwrap();
    }
    assert_eq!(p, [1.0, 2.0, 3.0]);
}

#[test]
fn identical_gradient_sequences_produce_identical_trajectories() {
    let grads: Vec<Vec<f64>> =
        (0u64..20).map(|i| random_tensor(100 + i, vec![8]).data().to_vec()).collect();
    let run = || {
        let mut adam = AdamState::new(3e-3, &[8]);
        let mut p = vec![0.5; 8];
        for g in &grads {
            adam.step([("p", p.as_mut_slice(), g.as_slice())]).unwrap();
        }
        p
    };
    assert_eq!(run(), run());
}

#[test]
fn adam_converges_on_a_separable_quadratic() {
    let target = [3.0, -2.0, 0.25, 10.0];
    let mut adam = AdamState::new(0.05, &[4]);
    let mut p = [0.0; 4];
    for _ in 0..2000 {
        let g: Vec<f64> = p.iter().zip(&target).map(|(&pi, &ti)| 2.0 * (pi - ti)).collect();
        adam.step([("p", p.as_mut_slice(), g.as_slice())]).unwrap();
    }
    for (pi, ti) in p.iter().zip(&target) {
        assert!((pi - ti).abs() < 1e-2, "{pi} vs {ti}");
    }
}

#[test]
fn non_finite_gradients_abort_naming_the_buffer() {
    let mut adam = AdamState::new(0.1, &[2]);
    let mut p = [1.0, 2.0];
    let err = adam
        .step([("enc0.down.weight", p.as_mut_slice(), [0.5, f64::NAN].as_slice())])
        .unwrap_err();
    match err {
        Error::NonFinite(msg) => assert!(msg.contains("enc0.down.weight"), "{msg}"),
        other => panic!("expected a numerical abort, got {other}"),
    }
    assert_eq!(p, [1.0, 2.0]);
}

#[test]
fn adam_rejects_buffer_layout_mismatches() {
    let mut adam = AdamState::new(0.1, &[2, 3]);
    let mut a = [0.0; 2];
    let mut b = [0.0; 3];
    let mut c = [0.0; 4];
    let g2 = [0.0; 2];
    let g3 = [0.0; 3];
    let g4 = [0.0; 4];
    // too few buffers
    assert!(AdamState::new(0.1, &[2, 3]).step([("a", a.as_mut_slice(), g2.as_slice())]).is_err());
    // wrong length
    assert!(adam
        .step([("a", a.as_mut_slice(), g2.as_slice()), ("c", c.as_mut_slice(), g4.as_slice())])
        .is_err());
    // too many buffers
    assert!(AdamState::new(0.1, &[2])
        .step([("a", a.as_mut_slice(), g2.as_slice()), ("b", b.as_mut_slice(), g3.as_slice())])
        .is_err());
}

#[test]
fn joint_texture_l1_weights_maps_by_channel_count() {
    let h = 4;
    let zeros = TextureSet::from_maps(
        h,
        h,
        vec![0.0; 3 * h * h],
        vec![0.5; 2 * h * h],
        [vec![0.0; h * h], vec![0.0; h * h], vec![1.0; h * h]].concat(),
    )
    .unwrap();
    let ones = TextureSet::from_maps(
        h,
        h,
        vec![1.0; 3 * h * h],
        vec![0.5; 2 * h * h],
        [vec![0.0; h * h], vec![0.0; h * h], vec![1.0; h * h]].concat(),
    )
    .unwrap();
    let mut tape = Tape::new();
    assert_eq!(texture_l1(&mut tape, &zeros, &zeros).unwrap().item(), 0.0);
    // only the three diffuse channels differ, each by 1
    assert_eq!(texture_l1(&mut tape, &zeros, &ones).unwrap().item(), 3.0 / 8.0);
}

#[test]
fn pixel_fit_converges_with_smoothed_monotone_loss() {
    let target = random_textures(21, 16, 16);
    let mut opts = FitOptions::new(FitKind::Pixel, 300, 0);
    opts.lr = 0.05;
    let result = optimize_fit(&target, &opts).unwrap();

    assert_eq!(result.losses.len(), 300);
    assert_eq!(result.records.len(), 31);
    assert_eq!(result.records[0].iteration, 0);
    assert_eq!(result.records[30].iteration, 300);
    let first = result.losses[0];
    let last = result.records.last().unwrap().loss;
    assert!(last < 0.02, "final loss {last} (from {first})");

    let windows: Vec<f64> =
        result.losses.chunks(50).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
    for pair in windows.windows(2) {
        assert!(pair[1] <= pair[0] + 1e-9, "window means rose: {pair:?}");
    }
    for record in &result.records {
        assert!(record.bands.iter().all(|e| e.is_finite()));
    }
}

#[test]
fn poisoned_target_aborts_with_the_numerical_exit_code() {
    let mut target = random_textures(30, 8, 8);
    let mut data = target.diffuse.data().to_vec();
    data[17] = f64::NAN;
    target.diffuse = Tensor::from_vec(vec![1, 3, 8, 8], data);
    let err = optimize_fit(&target, &FitOptions::new(FitKind::Pixel, 3, 0)).unwrap_err();
    assert!(matches!(err, Error::NonFinite(_)), "{err}");
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn fit_trajectories_are_bit_reproducible() {
    let target = random_textures(22, 32, 32);
    for kind in [FitKind::Pixel, FitKind::Reparam] {
        let opts = FitOptions::new(kind, 12, 5);
        let a = optimize_fit(&target, &opts).unwrap();
        let b = optimize_fit(&target, &opts).unwrap();
        assert_eq!(a.losses, b.losses);
        assert_eq!(a.final_textures().diffuse.data(), b.final_textures().diffuse.data());
        assert_eq!(a.final_textures().normal.data(), b.final_textures().normal.data());
    }
}

#[test]
fn reparam_fit_decreases_the_loss() {
    let target = random_textures(23, 32, 32);
    let opts = FitOptions::new(FitKind::Reparam, 60, 1);
    let result = optimize_fit(&target, &opts).unwrap();
    let first = result.losses[0];
    let last = *result.losses.last().unwrap();
    assert!(last < 0.9 * first, "loss went {first} -> {last}");
}

#[test]
fn skipless_fit_runs_with_fewer_parameters() {
    let target = random_textures(24, 32, 32);
    let result = optimize_fit(&target, &FitOptions::new(FitKind::ReparamNoskip, 3, 2)).unwrap();
    assert_eq!(result.losses.len(), 3);
    assert_eq!(result.records.last().unwrap().iteration, 3);
}

#[test]
fn zero_iteration_fit_records_the_initial_state() {
    let target = random_textures(25, 8, 8);
    let result = optimize_fit(&target, &FitOptions::new(FitKind::Pixel, 0, 0)).unwrap();
    assert!(result.losses.is_empty());
    assert_eq!(result.records.len(), 1);
    assert_eq!(result.records[0].iteration, 0);
    // raw zeros decode to the neutral maps
    let d = &result.records[0].textures.diffuse;
    assert!(d.data().iter().all(|&v| v == 0.5));
}

#[test]
fn fit_rejects_degenerate_options() {
    let target = random_textures(26, 8, 8);
    let mut opts = FitOptions::new(FitKind::Pixel, 5, 0);
    opts.snapshot_every = 0;
    assert!(matches!(optimize_fit(&target, &opts), Err(Error::Config(_))));
    let mut opts = FitOptions::new(FitKind::Pixel, 5, 0);
    opts.lr = 0.0;
    assert!(matches!(optimize_fit(&target, &opts), Err(Error::Config(_))));
    // 8x8 cannot feed the five-level network
    let opts = FitOptions::new(FitKind::Reparam, 5, 0);
    assert!(optimize_fit(&target, &opts).is_err());
}

fn plane_pool(seed: u64, res: usize, count: usize) -> (ViewPool, crate::render::EnvLight) {
    let mesh = Mesh::plane();
    let env = build_env(4, 2, &[1.3; 24]).unwrap();
    let reference = random_textures(31, 8, 8);
    let pool = build_view_pool(&mesh, &env, &reference, count, res, seed).unwrap();
    (pool, env)
}

#[test]
fn view_pool_is_deterministic_and_sized() {
    let (a, _) = plane_pool(7, 12, 5);
    let (b, _) = plane_pool(7, 12, 5);
    assert_eq!(a.len(), 5);
    assert_eq!(a.gbuffers.len(), 5);
    assert_eq!(a.targets.len(), 5);
    for (ta, tb) in a.targets.iter().zip(&b.targets) {
        assert_eq!(ta.shape(), &[1, 3, 12, 12]);
        assert_eq!(ta.data(), tb.data());
    }
    for (ca, cb) in a.cameras.iter().zip(&b.cameras) {
        assert_eq!((ca.elevation, ca.azimuth, ca.res), (cb.elevation, cb.azimuth, cb.res));
    }
}

#[test]
fn noise_free_synthesis_regresses_toward_the_targets() {
    let (pool, env) = plane_pool(3, 12, 4);
    let mut opts = SynthOptions::new(SynthKind::PixelTv, 120, 0);
    opts.lr = 0.05;
    opts.noise_scale = 0.0;
    opts.tv_weight = 0.0;
    opts.views_per_iter = 2;
    let result = optimize_synth(&pool, &env, 8, 8, &opts).unwrap();
    let first = result.records[0].render_l1;
    let last = result.records.last().unwrap().render_l1;
    assert!(last < 0.5 * first, "render L1 went {first} -> {last}");
    assert_eq!(result.records.last().unwrap().iteration, 120);
}

#[test]
fn synthesis_trajectories_are_bit_reproducible() {
    let (pool, env) = plane_pool(4, 10, 4);
    let mut opts = SynthOptions::new(SynthKind::PixelTv, 30, 9);
    opts.views_per_iter = 2;
    let a = optimize_synth(&pool, &env, 8, 8, &opts).unwrap();
    let b = optimize_synth(&pool, &env, 8, 8, &opts).unwrap();
    assert_eq!(a.losses, b.losses);
    assert_eq!(a.final_textures().diffuse.data(), b.final_textures().diffuse.data());
    assert!(a.losses.iter().all(|l| l.is_finite()));
}

#[test]
fn reparameterized_synthesis_produces_valid_snapshots() {
    let (pool, env) = plane_pool(5, 10, 4);
    let mut opts = SynthOptions::new(SynthKind::Dcpbr, 8, 1);
    opts.views_per_iter = 2;
    opts.snapshot_every = 4;
    let result = optimize_synth(&pool, &env, 32, 32, &opts).unwrap();
    assert_eq!(result.losses.len(), 8);
    let iters: Vec<usize> = result.records.iter().map(|r| r.iteration).collect();
    assert_eq!(iters, vec![0, 4, 8]);
    for record in &result.records {
        assert!(record.render_l1.is_finite());
        assert!(record.bands.iter().all(|e| e.is_finite()));
        let n = &record.textures.normal;
        let plane = 32 * 32;
        for i in 0..plane {
            assert!(n.data()[2 * plane + i] > 0.0);
        }
    }
}

#[test]
fn synthesis_rejects_bad_view_draws() {
    let (pool, env) = plane_pool(6, 10, 3);
    let mut opts = SynthOptions::new(SynthKind::PixelTv, 5, 0);
    opts.views_per_iter = 0;
    assert!(matches!(optimize_synth(&pool, &env, 8, 8, &opts), Err(Error::Config(_))));
    opts.views_per_iter = 4;
    assert!(matches!(optimize_synth(&pool, &env, 8, 8, &opts), Err(Error::Config(_))));
    opts.views_per_iter = 2;
    opts.tv_weight = -0.5;
    assert!(matches!(optimize_synth(&pool, &env, 8, 8, &opts), Err(Error::Config(_))));
    opts.tv_weight = 0.1;
    opts.schedule = SdsSchedule::new(7);
    assert!(matches!(optimize_synth(&pool, &env, 8, 8, &opts), Err(Error::Config(_))));
    assert!(matches!(
        build_view_pool(&Mesh::plane(), &env, &random_textures(1, 4, 4), 0, 8, 0),
        Err(Error::Config(_))
    ));
}
