use proptest::prelude::*;

use wvsc_core::channel::{snr_to_sigma2, ChannelRealization};
use wvsc_core::ddmfc::{combine_noise, compose_p_frame};
use wvsc_core::diffusion::{forward_sample, NoiseSchedule};
use wvsc_core::frame::{power_normalize, SemanticFrame};
use wvsc_core::metrics::psnr;
use wvsc_core::pipeline::TrainConfig;
use wvsc_core::rng::{normal_vec, seeded};

fn frame(seed: u64, n: usize) -> SemanticFrame {
    SemanticFrame::new(normal_vec(&mut seeded(seed), n)).unwrap()
}

fn close(a: &SemanticFrame, b: &SemanticFrame, tol: f64) -> bool {
    let scale = b.norm_sq().sqrt().max(1.0);
    a.sub(b).unwrap().norm_sq().sqrt() <= tol * scale
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn equalizer_gains_are_bounded(seed in any::<u64>(), snr in -10.0f64..30.0) {
        let sigma2 = snr_to_sigma2(snr);
        let c = ChannelRealization::sample(&mut seeded(seed), 32, sigma2).unwrap();
        for j in 0..32 {
            let (hs, hn, g) = (c.hs()[j], c.hn()[j], c.gain(j));
            prop_assert!((0.0..1.0).contains(&hs));
            prop_assert!((hs - g * hn).abs() < 1e-12);
        }
        prop_assert_eq!(c.hs()[..16].to_vec(), c.hs()[16..].to_vec());
    }

    #[test]
    fn forward_process_splits_over_composition(
        seed in any::<u64>(),
        lambda in 0.0f64..=1.0,
        t in 0usize..=1000,
        snr in -5.0f64..25.0,
    ) {
        let sched = NoiseSchedule::default();
        let c = ChannelRealization::sample(&mut seeded(seed), 16, snr_to_sigma2(snr)).unwrap();
        let (f, r, b, rho) = (frame(seed ^ 1, 16), frame(seed ^ 2, 16), frame(seed ^ 3, 16), frame(seed ^ 4, 16));
        let z = c.apply_signal_gain(&compose_p_frame(&f, &r, lambda).unwrap()).unwrap();
        let eps = combine_noise(&b, &rho, lambda).unwrap();
        let joint = forward_sample(&z, t, &eps, &c, &sched).unwrap();
        let zf = forward_sample(&c.apply_signal_gain(&f).unwrap(), t, &b, &c, &sched).unwrap();
        let zr = forward_sample(&c.apply_signal_gain(&r).unwrap(), t, &rho, &c, &sched).unwrap();
        let split = compose_p_frame(&zf, &zr, lambda).unwrap();
        prop_assert!(close(&joint, &split, 1e-12));
    }

    #[test]
    fn power_normalization_is_invertible(seed in any::<u64>(), half in 1usize..64, scale in 1e-3f64..1e3) {
        let x: Vec<f64> = normal_vec(&mut seeded(seed), 2 * half).iter().map(|v| v * scale).collect();
        let (f, s) = power_normalize(&x).unwrap();
        prop_assert!((f.symbol_power() - 1.0).abs() < 1e-12);
        for (a, b) in f.as_slice().iter().zip(&x) {
            prop_assert!((a * s - b).abs() <= 1e-12 * b.abs().max(scale));
        }
    }

    #[test]
    fn psnr_is_symmetric_and_capped(a in prop::collection::vec(any::<u8>(), 48), b in prop::collection::vec(any::<u8>(), 48)) {
        let p = psnr(&a, &b, 255.0).unwrap();
        prop_assert_eq!(p, psnr(&b, &a, 255.0).unwrap());
        prop_assert!(p <= 99.0);
        prop_assert_eq!(psnr(&a, &a, 255.0).unwrap(), 99.0);
    }

    #[test]
    fn start_step_is_the_closest_match(sigma2 in 0.0f64..20.0) {
        let sched = NoiseSchedule::default();
        let m = sched.find_start_step(sigma2);
        let target = 1.0 / (1.0 + sigma2);
        let gap = (sched.alpha_bar(m) - target).abs();
        for t in 0..=1000 {
            prop_assert!(gap <= (sched.alpha_bar(t) - target).abs());
        }
    }

    #[test]
    fn learning_rate_never_increases(steps in 1usize..2000, levels in 1usize..8) {
        let t = TrainConfig { steps, lr_levels: levels, ..TrainConfig::default() };
        let lrs: Vec<f64> = (0..steps).map(|s| t.learning_rate(s)).collect();
        prop_assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
        prop_assert_eq!(lrs[0], t.lr_start);
        prop_assert!(lrs.iter().all(|&l| l >= t.lr_end * (1.0 - 1e-12)));
    }
}
