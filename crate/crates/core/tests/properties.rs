use impress_core::io::{parse_pgm, parse_world_config, pgm_bytes, world_config_text};
use impress_core::metrics::{adas, cosine, frechet_distance, FidVariant, GaussianStats};
use impress_core::predictor::r_squared;
use impress_core::spectrum::{
    bias_correlation_report, diff_latents, lambda_grid, score_histogram, BiasEdit, MIN_BIAS_EDITS,
};
use impress_core::world::{
    FaceParams, ImageGrid, QualityThresholds, WorldConfig, IDENTITY_DIM, PARAM_DIM,
};
use impress_core::AttributeKind;
use proptest::prelude::*;

fn latent_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (
        prop::collection::vec(-3.0f64..3.0, 12),
        prop::collection::vec(-3.0f64..3.0, 12),
    )
}

fn rows(d: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-2.0f64..2.0, d), 4..12)
}

fn bias_edits(lambdas: &[f64], deltas: &[f64]) -> Vec<BiasEdit> {
    lambdas
        .iter()
        .zip(deltas)
        .map(|(&lambda, &d)| {
            let original = FaceParams::zeros();
            let mut edited = FaceParams::zeros();
            edited.0[IDENTITY_DIM] = d;
            edited.0[PARAM_DIM - 1] = d * d - 0.5 * d;
            BiasEdit {
                attribute: AttributeKind::Trustworthiness,
                lambda,
                original,
                edited,
            }
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn af_and_rf_are_exact_negatives((a, b) in latent_pair()) {
        let d = diff_latents(&[(0.0, &a), (0.1, &b)]).unwrap();
        for (x, y) in d[0].af.iter().zip(&d[0].rf) {
            prop_assert_eq!(x.to_bits(), (-y).to_bits());
        }
    }

    #[test]
    fn adjacent_added_features_telescope((a, b) in latent_pair(), c in prop::collection::vec(-3.0f64..3.0, 12)) {
        let d = diff_latents(&[(0.0, &a), (0.1, &b), (0.2, &c)]).unwrap();
        for k in 0..12 {
            let sum = d[0].af[k] + d[1].af[k];
            prop_assert!((sum - (c[k] - a[k])).abs() < 1e-12);
        }
    }

    #[test]
    fn histogram_ignores_order(mut scores in prop::collection::vec(0.0f64..=1.0, 1..80), bins in 1usize..20, seed in any::<u64>()) {
        let h = score_histogram(&scores, bins).unwrap();
        prop_assert_eq!(h.counts.iter().sum::<usize>(), scores.len());
        prop_assert_eq!(h.total, scores.len());
        prop_assert_eq!(h.edges.len(), bins + 1);
        let k = (seed % scores.len() as u64) as usize;
        scores.rotate_left(k);
        scores.reverse();
        prop_assert_eq!(score_histogram(&scores, bins).unwrap(), h);
    }

    #[test]
    fn bias_correlations_are_bounded_and_scale_free(
        lambdas in prop::collection::vec(-0.4f64..0.4, MIN_BIAS_EDITS..60),
        seed in any::<u64>(),
        scale in 0.1f64..10.0,
    ) {
        let deltas: Vec<f64> = lambdas.iter().enumerate().map(|(i, l)| l * 0.7 + ((seed.wrapping_add(i as u64) % 97) as f64 / 97.0 - 0.5) * 0.3).collect();
        let base = bias_correlation_report(&bias_edits(&lambdas, &deltas));
        prop_assume!(base.is_ok());
        let base = base.unwrap();
        let scaled: Vec<f64> = lambdas.iter().map(|l| l * scale).collect();
        let other = bias_correlation_report(&bias_edits(&scaled, &deltas)).unwrap();
        for (x, y) in base.attributes[0].covariates.iter().zip(&other.attributes[0].covariates) {
            prop_assert!((-1.0..=1.0).contains(&x.correlation));
            prop_assert!((x.correlation - y.correlation).abs() < 1e-9);
        }
    }

    #[test]
    fn cosine_is_bounded((a, b) in latent_pair()) {
        prop_assume!(a.iter().any(|v| *v != 0.0) && b.iter().any(|v| *v != 0.0));
        let c = cosine(&a, &b).unwrap();
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&c));
        prop_assert!((cosine(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn frechet_is_symmetric_and_zero_on_itself(x in rows(3), y in rows(3)) {
        let (a, b) = (GaussianStats::from_samples(&x).unwrap(), GaussianStats::from_samples(&y).unwrap());
        let ab = frechet_distance(&a, &b, FidVariant::Standard).unwrap();
        let ba = frechet_distance(&b, &a, FidVariant::Standard).unwrap();
        prop_assert!((ab - ba).abs() < 1e-6 * (1.0 + ab.abs()));
        prop_assert!(ab > -1e-6);
        prop_assert!(frechet_distance(&a, &a, FidVariant::Standard).unwrap().abs() < 1e-6);
        let rooted = frechet_distance(&a, &b, FidVariant::Rooted).unwrap();
        prop_assert!((rooted * rooted - ab.max(0.0)).abs() < 1e-9 * (1.0 + ab.abs()));
    }

    #[test]
    fn adas_is_nonnegative((a, b) in latent_pair()) {
        let v = adas(&a, &b).unwrap();
        prop_assert!(v >= 0.0);
        prop_assert_eq!(adas(&a, &a).unwrap(), 0.0);
        prop_assert_eq!(v, adas(&b, &a).unwrap());
    }

    #[test]
    fn r_squared_never_exceeds_one((p, t) in latent_pair()) {
        prop_assume!(t.iter().any(|v| *v != t[0]));
        prop_assert!(r_squared(&p, &t).unwrap() <= 1.0);
        prop_assert!((r_squared(&t, &t).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pgm_round_trips(h in 1usize..12, w in 1usize..12, seed in any::<u64>()) {
        let pixels: Vec<f64> = (0..h * w).map(|i| ((seed.wrapping_mul(31).wrapping_add(i as u64 * 7919)) % 256) as f64 / 255.0).collect();
        let img = ImageGrid::new(h, w, pixels).unwrap();
        let bytes = pgm_bytes(&img);
        let back = parse_pgm(&bytes).unwrap();
        prop_assert_eq!(back.height(), h);
        prop_assert_eq!(back.width(), w);
        prop_assert_eq!(pgm_bytes(&back), bytes);
    }

    #[test]
    fn world_config_round_trips(
        seed in any::<u64>(),
        sample_seed in any::<u64>(),
        n in 1usize..100_000,
        adult_only in any::<bool>(),
        covariate_scale in 0.0f64..2.0,
        energy in 0.0f64..1.0,
        identity in -1.0f64..1.0,
    ) {
        let w = WorldConfig {
            seed,
            sample_seed,
            n,
            adult_only,
            covariate_scale,
            thresholds: QualityThresholds { energy, identity },
        };
        prop_assert_eq!(parse_world_config(&world_config_text(&w)).unwrap(), w);
    }

    #[test]
    fn lambda_grids_strictly_increase(lo in -1.0f64..1.0, span in 0.0f64..2.0, step in 0.01f64..0.5) {
        let g = lambda_grid(lo, lo + span, step).unwrap();
        prop_assert!(!g.is_empty());
        prop_assert!(g.windows(2).all(|p| p[0] < p[1]));
        prop_assert!(*g.last().unwrap() <= lo + span + 1e-6);
    }
}
