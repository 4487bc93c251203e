use asd_core::encoder::{self, EncoderConfig};
use asd_core::finetune::{self, ArcFaceHead, FinetuneConfig};
use asd_core::frontend::SoftLabel;
use asd_core::metrics::{self, MachineResult, Subset};
use asd_core::pretrain;
use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn gaussian(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

fn max_abs_diff(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

fn tiny_encoder() -> EncoderConfig {
    EncoderConfig {
        depth: 1,
        dim: 8,
        heads: 2,
        mlp_ratio: 2,
        patch_dim: 4,
        num_patches: 3,
        init_std: 0.1,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn arcface_ignores_embedding_and_row_scale(
        seed in 0u64..10_000,
        alpha in 1e-3f64..1e3,
        beta in 1e-3f64..1e3,
        class in proptest::option::of(0usize..5),
    ) {
        let head = ArcFaceHead::new(5, 12, 0.5, 30.0, seed).unwrap();
        let e = Array1::from(gaussian(seed + 1, 12));
        let base = finetune::arcface_logits(&e.view(), &head, class).unwrap();
        let mut scaled_head = head.clone();
        let mut row = scaled_head.weight.row_mut(seed as usize % 5);
        row *= beta;
        let scaled = finetune::arcface_logits(&(&e * alpha).view(), &scaled_head, class).unwrap();
        prop_assert!(max_abs_diff(&base, &scaled) <= 1e-6);
        let argmax = |v: &Array1<f64>| v.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        prop_assert_eq!(argmax(&base), argmax(&scaled));
    }

    #[test]
    fn zero_margin_train_equals_inference(seed in 0u64..10_000, class in 0usize..4) {
        let head = ArcFaceHead::new(4, 6, 0.0, 30.0, seed).unwrap();
        let e = Array1::from(gaussian(seed + 7, 6));
        let train = finetune::arcface_logits(&e.view(), &head, Some(class)).unwrap();
        let infer = finetune::arcface_logits(&e.view(), &head, None).unwrap();
        prop_assert!(max_abs_diff(&train, &infer) <= 1e-12);
    }

    #[test]
    fn asd_loss_is_midpoint_convex(seed in 0u64..10_000, w in 0.0f64..1.0) {
        let a = Array1::from(gaussian(seed, 6)) * 5.0;
        let b = Array1::from(gaussian(seed + 1, 6)) * 5.0;
        let label = SoftLabel { entries: vec![(1, w), (4, 1.0 - w)] };
        let mid = (&a + &b) * 0.5;
        let lhs = finetune::asd_loss(&mid, &label);
        let rhs = 0.5 * (finetune::asd_loss(&a, &label) + finetune::asd_loss(&b, &label));
        prop_assert!(lhs <= rhs + 1e-12);
    }

    #[test]
    fn lr_schedule_rises_then_falls(warmup in 0usize..50, extra in 1usize..200, lr in 1e-6f64..1e-2) {
        let cfg = FinetuneConfig { lr, warmup_steps: warmup, ..FinetuneConfig::default() };
        let total = warmup + extra;
        let lrs: Vec<f64> = (0..=total).map(|s| finetune::lr_schedule(s, &cfg, total)).collect();
        for (s, pair) in lrs.windows(2).enumerate() {
            if s < warmup {
                prop_assert!(pair[1] >= pair[0] - 1e-15);
            } else {
                prop_assert!(pair[1] <= pair[0] + 1e-15);
            }
            prop_assert!((pair[1] - pair[0]).abs() <= lr);
        }
        prop_assert!(lrs.iter().all(|&v| (0.0..=lr * (1.0 + 1e-12)).contains(&v)));
    }

    #[test]
    fn ema_is_affine_per_tensor(seed in 0u64..1000, tau in 0.0f64..=1.0) {
        let cfg = tiny_encoder();
        let t0 = encoder::init_params(&cfg, seed).unwrap();
        let s = encoder::init_params(&cfg, seed + 1).unwrap();
        let mut t = t0.clone();
        pretrain::ema_update(&mut t, &s, tau).unwrap();
        for ((a, b), c) in t.cls_token.iter().zip(&t0.cls_token).zip(&s.cls_token) {
            prop_assert!((a - (tau * b + (1.0 - tau) * c)).abs() <= 1e-15);
        }
        let lo = t0.pos_embed.iter().zip(&s.pos_embed).map(|(a, b)| a.min(*b));
        let hi = t0.pos_embed.iter().zip(&s.pos_embed).map(|(a, b)| a.max(*b));
        for ((v, l), h) in t.pos_embed.iter().zip(lo).zip(hi) {
            prop_assert!(*v >= l - 1e-15 && *v <= h + 1e-15);
        }
    }

    #[test]
    fn ufo_loss_is_nonnegative(seed in 0u64..10_000, masked in 1usize..5) {
        let (p, d) = (5, 3);
        let x = Array2::from_shape_vec((p, d), gaussian(seed, p * d)).unwrap();
        let y = Array2::from_shape_vec((p, d), gaussian(seed + 1, p * d)).unwrap();
        let c = Array1::from(gaussian(seed + 2, d));
        let u = Array1::from(gaussian(seed + 3, d));
        let mask: Vec<usize> = (0..masked).collect();
        let l = pretrain::ufo_loss(&x, &y, &c, &u, &mask).unwrap();
        prop_assert!(l.frame >= 0.0 && l.utterance >= 0.0);
        prop_assert!((l.total - l.frame - l.utterance).abs() <= 1e-12);
        let zero = pretrain::ufo_loss(&x, &x, &c, &c, &mask).unwrap();
        prop_assert_eq!(zero.total, 0.0);
    }

    #[test]
    fn auc_swaps_to_complement_without_ties(seed in 0u64..10_000, n in 1usize..30, m in 1usize..30) {
        let s = gaussian(seed, n + m);
        let (a, b) = s.split_at(n);
        let forward = metrics::auc(a, b).unwrap();
        let backward = metrics::auc(b, a).unwrap();
        prop_assert!((forward + backward - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn separated_scores_give_unit_pauc(seed in 0u64..10_000, p in 0.01f64..=1.0) {
        let normal: Vec<f64> = gaussian(seed, 12).iter().map(|v| v.abs()).collect();
        let anomaly: Vec<f64> = gaussian(seed + 1, 9).iter().map(|v| 10.0 + v.abs()).collect();
        prop_assert!((metrics::pauc(&normal, &anomaly, p).unwrap() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn official_score_of_constant_results(v in 0.01f64..=1.0, n in 1usize..6) {
        let results: Vec<MachineResult> = (0..n)
            .map(|i| MachineResult { machine_type: format!("m{i}"), auc_source: v, auc_target: v, pauc: v })
            .collect();
        let subset = Subset { name: "all".into(), machines: results.iter().map(|r| r.machine_type.clone()).collect() };
        prop_assert!((metrics::official_score(&results, &subset).unwrap() - 100.0 * v).abs() <= 1e-9);
    }
}
