#![allow(clippy::needless_range_loop)]

use impress_core::flow::{
    forward_map, log_density, nll_and_gradient, reverse_map, standard_normal_log_pdf, train_mapper,
    CnfModel, FlowConfig, LatentVector,
};
use impress_core::nn::TrainConfig;
use impress_core::rng::{normal, seeded};
use proptest::prelude::*;

fn seeded_flow(dim: usize, hidden: Vec<usize>, blocks: usize, seed: u64) -> CnfModel {
    let mut cfg = FlowConfig::new(dim, hidden, blocks);
    cfg.output_gain = 1.0;
    CnfModel::init(&cfg, "test", seed).unwrap()
}

fn random_latent(rng: &mut impl rand::Rng, d: usize, scale: f64) -> LatentVector {
    LatentVector::new((0..d).map(|_| scale * normal(rng)).collect()).unwrap()
}

/// log|det| of a square matrix via partial-pivot elimination.
fn log_abs_det(mut a: Vec<Vec<f64>>) -> f64 {
    let n = a.len();
    let mut acc = 0.0;
    for c in 0..n {
        let p = (c..n)
            .max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))
            .unwrap();
        a.swap(c, p);
        let piv = a[c][c];
        acc += piv.abs().ln();
        for r in c + 1..n {
            let f = a[r][c] / piv;
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
        }
    }
    acc
}

fn fd_jacobian(model: &CnfModel, z: &LatentVector, s: f64, h: f64) -> Vec<Vec<f64>> {
    let d = z.len();
    let mut jac = vec![vec![0.0; d]; d];
    for j in 0..d {
        let mut up = z.as_slice().to_vec();
        up[j] += h;
        let mut dn = z.as_slice().to_vec();
        dn[j] -= h;
        let fu = forward_map(model, &LatentVector::new(up).unwrap(), s).unwrap();
        let fdn = forward_map(model, &LatentVector::new(dn).unwrap(), s).unwrap();
        for i in 0..d {
            jac[i][j] = (fu.as_slice()[i] - fdn.as_slice()[i]) / (2.0 * h);
        }
    }
    jac
}

#[test]
fn log_density_matches_jacobian_change_of_variables() {
    for (dim, seed) in [(2, 3), (3, 4)] {
        let m = seeded_flow(dim, vec![6], 2, seed);
        let mut rng = seeded(seed + 100);
        for _ in 0..10 {
            let w = random_latent(&mut rng, dim, 1.0);
            let s = 0.2 + 0.6 * rand::Rng::random::<f64>(&mut rng);
            let z = reverse_map(&m, &w, s).unwrap();
            let brute =
                standard_normal_log_pdf(z.as_slice()) - log_abs_det(fd_jacobian(&m, &z, s, 1e-5));
            let lp = log_density(&m, &w, s).unwrap();
            assert!((lp - brute).abs() < 1e-3, "d={dim}: {lp} vs {brute}");
        }
    }
}

#[test]
fn analytic_gradient_matches_central_differences() {
    let m = seeded_flow(3, vec![8], 4, 17);
    assert!(m.param_count() <= 500, "{}", m.param_count());
    let mut rng = seeded(5);
    let batch: Vec<_> = (0..8)
        .map(|i| (random_latent(&mut rng, 3, 1.0), 0.1 + 0.1 * i as f64))
        .collect();
    let (_, grad) = nll_and_gradient(&m, &batch).unwrap();
    let h = 1e-4;
    let mut good = 0;
    for i in 0..m.param_count() {
        let mut mp = m.clone();
        mp.params_mut()[i] += h;
        let up = nll_and_gradient(&mp, &batch).unwrap().0;
        mp.params_mut()[i] -= 2.0 * h;
        let dn = nll_and_gradient(&mp, &batch).unwrap().0;
        let fd = (up - dn) / (2.0 * h);
        let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-8);
        if rel < 1e-4 {
            good += 1;
        }
    }
    let frac = good as f64 / m.param_count() as f64;
    assert!(frac >= 0.99, "only {frac} of coordinates within tolerance");
}

#[test]
fn two_cluster_training_reduces_heldout_nll() {
    let mut rng = seeded(77);
    let mut sample = |n: usize| -> Vec<(LatentVector, f64)> {
        (0..n)
            .map(|i| {
                let s = if i % 2 == 0 { 0.0 } else { 1.0 };
                let cx = if s == 0.0 { -1.5 } else { 1.5 };
                let w = vec![cx + 0.3 * normal(&mut rng), 0.3 * normal(&mut rng)];
                (LatentVector::new(w).unwrap(), s)
            })
            .collect()
    };
    let train = sample(500);
    let held = sample(200);
    let init = CnfModel::init(&FlowConfig::new(2, vec![16], 2), "clusters", 3).unwrap();
    let mean_nll = |m: &CnfModel| nll_and_gradient(m, &held).unwrap().0;
    let before = mean_nll(&init);
    let cfg = TrainConfig::new(2000, 50, 1e-2, 9);
    let trained = train_mapper(init, &train, &cfg).unwrap();
    let after = mean_nll(&trained.model);
    assert!(after <= 0.8 * before, "held-out NLL {before} -> {after}");
}

#[test]
fn training_is_deterministic() {
    let mut rng = seeded(1);
    let data: Vec<_> = (0..40)
        .map(|i| (random_latent(&mut rng, 2, 1.0), (i % 5) as f64 / 4.0))
        .collect();
    let init = CnfModel::init(&FlowConfig::new(2, vec![6], 2), "x", 2).unwrap();
    let cfg = TrainConfig::new(30, 8, 1e-2, 4);
    let a = train_mapper(init.clone(), &data, &cfg).unwrap();
    let b = train_mapper(init, &data, &cfg).unwrap();
    assert_eq!(a.model.to_bytes(), b.model.to_bytes());
    assert_eq!(a.losses, b.losses);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn forward_then_reverse_is_identity(zs in prop::collection::vec(-2.5f64..2.5, 4), s in 0.0f64..=1.0) {
        let m = seeded_flow(4, vec![8], 4, 12);
        let z = LatentVector::new(zs).unwrap();
        let w = forward_map(&m, &z, s).unwrap();
        let back = reverse_map(&m, &w, s).unwrap();
        prop_assert!(back.max_abs_diff(&z) < 1e-3);
        prop_assert_eq!(forward_map(&m, &z, s).unwrap(), w);
    }
}
