use groupsr_core::backbone::backbone_invocation_count;
use groupsr_core::bench::median_iqr;
use groupsr_core::degrade::{compress_crf, dct_step, mix_dataset, quantize_u8, Compressor};
use groupsr_core::metrics::{psnr_y, ssim_y};
use groupsr_core::nn::{bicubic_resize, pixel_shuffle, pixel_unshuffle};
use groupsr_core::train::{charbonnier_loss, cosine_lr};
use groupsr_core::video::{extract_groups, merge_groups, plan_groups, stack, unstack, VideoSequence};
use groupsr_core::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tensor(seed: u64, c: usize, h: usize, w: usize) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(c, h, w, |_, _, _| rng.gen_range(0.0..1.0))
}

fn sequence(seed: u64, n: usize, h: usize, w: usize) -> VideoSequence<f64> {
    VideoSequence::new((0..n).map(|i| tensor(seed + i as u64, 3, h, w)).collect(), 25.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn grouping_round_trip_is_bitwise(seed in 0u64..10_000, n in 1usize..25, s in 1usize..25, o_frac in 0.0f64..1.0) {
        let o = ((s as f64) * o_frac) as usize % s;
        let seq = sequence(seed, n, 3, 2);
        let plan = plan_groups(3 * n, s, o).unwrap();
        let back = unstack(&merge_groups(&extract_groups(&stack(&seq), &plan).unwrap(), &plan).unwrap(), 25.0).unwrap();
        prop_assert_eq!(back, seq);
    }

    #[test]
    fn plan_windows_tile_the_padded_cube(total in 3usize..400, s in 1usize..30, o_frac in 0.0f64..1.0) {
        let o = ((s as f64) * o_frac) as usize % s;
        let p = plan_groups(total, s, o).unwrap();
        let stride = s - o;
        prop_assert_eq!(p.group_ranges.len(), p.group_count);
        for (k, r) in p.group_ranges.iter().enumerate() {
            prop_assert_eq!(r.start, k * stride);
            prop_assert_eq!(r.len(), s);
        }
        prop_assert_eq!(p.padded_channels(), p.group_ranges.last().unwrap().end);
        prop_assert!(p.padded_channels() >= total);
        // the last window is needed: without it the cube is not covered
        if p.group_count > 1 {
            prop_assert!(p.group_ranges[p.group_count - 2].end < total);
        }
        prop_assert!(p.encode_counts.iter().all(|&c| c >= 1));
        prop_assert_eq!(p.encode_counts.iter().sum::<usize>(), p.group_count * s);
    }

    #[test]
    fn grouping_never_adds_backbone_work(n in 4usize..3000) {
        let k = backbone_invocation_count(n, 9, 3).unwrap();
        prop_assert!(k < n);
        prop_assert_eq!(k, plan_groups(3 * n, 9, 3).unwrap().group_count);
    }

    #[test]
    fn psnr_and_ssim_are_symmetric(seed in 0u64..10_000, noise in 0.001f64..0.5) {
        let a = tensor(seed, 3, 16, 16);
        let n = tensor(seed + 1, 3, 16, 16);
        let mut b = a.clone();
        for (v, e) in b.data_mut().iter_mut().zip(n.data()) {
            *v += noise * (e - 0.5);
        }
        prop_assert!((psnr_y(&a, &b).unwrap() - psnr_y(&b, &a).unwrap()).abs() < 1e-12);
        let s = ssim_y(&a, &b).unwrap();
        prop_assert!((s - ssim_y(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!(s <= 1.0 + 1e-12);
        prop_assert!((ssim_y(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        prop_assert_eq!(psnr_y(&a, &a).unwrap(), f64::INFINITY);
    }

    #[test]
    fn eight_bit_values_survive_quantization(k in 0u8..=255) {
        prop_assert_eq!(quantize_u8(k as f64 / 255.0), k);
        prop_assert_eq!(quantize_u8(k as f32 / 255.0), k);
    }

    #[test]
    fn proxy_error_grows_with_crf(seed in 0u64..1000) {
        let seq = sequence(seed, 2, 16, 16);
        prop_assert_eq!(&compress_crf(&seq, 0, Compressor::DctProxy).unwrap().sequence, &seq);
        let err = |crf| {
            let out = compress_crf(&seq, crf, Compressor::DctProxy).unwrap().sequence;
            out.frames().iter().zip(seq.frames()).map(|(a, b)| a.max_abs_diff(b)).fold(0.0, f64::max)
        };
        prop_assert!(err(15) <= err(35));
        prop_assert!(dct_step(15) < dct_step(25) && dct_step(25) < dct_step(35));
    }

    #[test]
    fn mix_compresses_the_requested_share(n in 1usize..60, frac in 0.0f64..=1.0, seed in 0u64..1000) {
        let ids: Vec<String> = (0..n).map(|i| format!("c{i}")).collect();
        let a = mix_dataset(&ids, frac, &[15, 25, 35], seed).unwrap();
        prop_assert_eq!(&a, &mix_dataset(&ids, frac, &[15, 25, 35], seed).unwrap());
        let compressed = a.iter().filter(|m| m.crf != 0).count();
        prop_assert_eq!(compressed, (frac * n as f64).round() as usize);
        prop_assert!(a.iter().all(|m| [0, 15, 25, 35].contains(&m.crf)));
    }

    #[test]
    fn cosine_schedule_decays(total in 1usize..10_000, lr0 in 1e-6f64..1.0) {
        let mut prev = f64::INFINITY;
        for step in (0..=total).step_by((total / 50).max(1)) {
            let lr = cosine_lr(step, total, lr0);
            prop_assert!((0.0..=lr0).contains(&lr));
            prop_assert!(lr <= prev);
            prev = lr;
        }
        prop_assert_eq!(cosine_lr(0, total, lr0), lr0);
    }

    #[test]
    fn charbonnier_bounds(seed in 0u64..1000, eps in 1e-4f64..1e-1) {
        let a = tensor(seed, 2, 4, 4);
        let b = tensor(seed + 7, 2, 4, 4);
        let l = charbonnier_loss(&a, &b, eps).unwrap();
        let mae = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64;
        prop_assert!(l >= mae && l <= mae + eps + 1e-12);
        prop_assert!((charbonnier_loss(&a, &a, eps).unwrap() - eps).abs() < 1e-15);
    }

    #[test]
    fn pixel_shuffle_inverts(seed in 0u64..1000, s in 1usize..4, h in 1usize..5, w in 1usize..5) {
        let x = tensor(seed, 2 * s * s, h, w);
        let up = pixel_shuffle(&x, s);
        prop_assert_eq!(up.shape(), (2, h * s, w * s));
        prop_assert_eq!(pixel_unshuffle(&up, s), x);
    }

    #[test]
    fn bicubic_keeps_constants(v in 0.0f64..1.0, h in 1usize..8, w in 1usize..8, f in 1usize..5) {
        let out = bicubic_resize(&Tensor::<f64>::filled(3, h, w, v), h * f, w * f);
        prop_assert!(out.data().iter().all(|x| (x - v).abs() < 1e-12));
    }

    #[test]
    fn median_and_iqr_are_order_free(mut xs in prop::collection::vec(0.0f64..100.0, 1..40)) {
        let (m, iqr) = median_iqr(&xs);
        xs.reverse();
        prop_assert_eq!(median_iqr(&xs), (m, iqr));
        prop_assert!(iqr >= 0.0);
        let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(lo <= m && m <= hi);
    }
}
