//! Contrastive losses against direct summation and central differences.

use encodermi::contrastive::{moco_loss, moco_loss_with_grad, simclr_loss, simclr_loss_with_grad};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn moco_oracle(q: &[f64], k: &[f64], queue: &[Vec<f64>], tau: f64) -> f64 {
    let pos = (cos(q, k) / tau).exp();
    let neg: f64 = queue.iter().map(|z| (cos(q, z) / tau).exp()).sum();
    -(pos / (pos + neg)).ln()
}

fn simclr_oracle(z: &[Vec<f64>], tau: f64) -> f64 {
    let n2 = z.len();
    let mut total = 0.0;
    for i in 0..n2 {
        let j = if i % 2 == 0 { i + 1 } else { i - 1 };
        let num = (cos(&z[i], &z[j]) / tau).exp();
        let den: f64 = (0..n2).filter(|&k| k != i).map(|k| (cos(&z[i], &z[k]) / tau).exp()).sum();
        total += -(num / den).ln();
    }
    total / n2 as f64
}

fn random_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

#[test]
fn moco_matches_direct_summation() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let q = random_vec(&mut rng, 8);
        let k = random_vec(&mut rng, 8);
        let queue: Vec<Vec<f64>> = (0..rng.random_range(0..=16)).map(|_| random_vec(&mut rng, 8)).collect();
        let tau = rng.random_range(0.05..1.0);
        let got = moco_loss(&q, &k, &queue, tau).unwrap();
        let want = moco_oracle(&q, &k, &queue, tau);
        assert!(rel_err(got, want) < 1e-6 || (got - want).abs() < 1e-12, "{got} vs {want}");
    }
}

#[test]
fn simclr_matches_direct_summation() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..100 {
        let n = rng.random_range(1..=4);
        let z: Vec<Vec<f64>> = (0..2 * n).map(|_| random_vec(&mut rng, 8)).collect();
        let tau = rng.random_range(0.05..1.0);
        let got = simclr_loss(&z, tau).unwrap();
        let want = simclr_oracle(&z, tau);
        assert!(rel_err(got, want) < 1e-6 || (got - want).abs() < 1e-12, "{got} vs {want}");
    }
}

#[test]
fn simclr_two_pair_hand_example() {
    let z = vec![vec![1.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0], vec![-1.0, 0.0]];
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let tau = 0.5;
    let e = |c: f64| (c / tau).exp();
    // Rows: cosines of each anchor to the other three, positive listed first.
    let terms = [
        (s, [s, 0.0, -1.0]),
        (s, [s, s, -s]),
        (-0.0, [0.0, s, 0.0]),
        (0.0, [-1.0, -s, 0.0]),
    ];
    let want: f64 = terms.iter().map(|(pos, all)| -(e(*pos) / all.iter().map(|c| e(*c)).sum::<f64>()).ln()).sum::<f64>() / 4.0;
    assert!(rel_err(simclr_loss(&z, tau).unwrap(), want) < 1e-12);
}

#[test]
fn simclr_pair_order_irrelevant() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let z: Vec<Vec<f64>> = (0..6).map(|_| random_vec(&mut rng, 5)).collect();
    let swapped = vec![z[4].clone(), z[5].clone(), z[2].clone(), z[3].clone(), z[0].clone(), z[1].clone()];
    assert!(rel_err(simclr_loss(&z, 0.3).unwrap(), simclr_loss(&swapped, 0.3).unwrap()) < 1e-12);
}

fn fd_check(f: impl Fn(&[f64]) -> f64, x: &[f64], grad: &[f64]) {
    for i in 0..x.len() {
        let h = 1e-5;
        let mut xp = x.to_vec();
        xp[i] += h;
        let mut xm = x.to_vec();
        xm[i] -= h;
        let fd = (f(&xp) - f(&xm)) / (2.0 * h);
        let scale = fd.abs().max(grad[i].abs());
        assert!((fd - grad[i]).abs() <= 1e-4 * scale.max(1e-3), "coord {i}: fd {fd} vs analytic {}", grad[i]);
    }
}

#[test]
fn moco_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..20 {
        let q = random_vec(&mut rng, 8);
        let k = random_vec(&mut rng, 8);
        let queue: Vec<Vec<f64>> = (0..rng.random_range(1..=16)).map(|_| random_vec(&mut rng, 8)).collect();
        let tau = rng.random_range(0.05..1.0);
        let (_, grad) = moco_loss_with_grad(&q, &k, &queue, tau).unwrap();
        fd_check(|x| moco_oracle(x, &k, &queue, tau), &q, &grad);
    }
}

#[test]
fn simclr_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for _ in 0..20 {
        let n = rng.random_range(1..=4);
        let z: Vec<Vec<f64>> = (0..2 * n).map(|_| random_vec(&mut rng, 8)).collect();
        let tau = rng.random_range(0.05..1.0);
        let (_, grad) = simclr_loss_with_grad(&z, tau).unwrap();
        let flat: Vec<f64> = z.iter().flatten().copied().collect();
        let flat_grad: Vec<f64> = grad.iter().flatten().copied().collect();
        fd_check(|x| simclr_oracle(&x.chunks(8).map(<[f64]>::to_vec).collect::<Vec<_>>(), tau), &flat, &flat_grad);
    }
}

proptest! {
    #[test]
    fn losses_non_negative_and_finite(
        seed in 0u64..10_000,
        tau in 0.05f64..=1.0,
        qlen in 0usize..=16,
        n in 1usize..=4,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = random_vec(&mut rng, 8);
        let k = random_vec(&mut rng, 8);
        let queue: Vec<Vec<f64>> = (0..qlen).map(|_| random_vec(&mut rng, 8)).collect();
        let l = moco_loss(&q, &k, &queue, tau).unwrap();
        prop_assert!(l >= 0.0 && l.is_finite());
        let z: Vec<Vec<f64>> = (0..2 * n).map(|_| random_vec(&mut rng, 8)).collect();
        let l = simclr_loss(&z, tau).unwrap();
        prop_assert!(l >= -1e-12 && l.is_finite());
    }
}
