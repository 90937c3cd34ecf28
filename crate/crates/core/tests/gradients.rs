//! Analytic gradients against central finite differences.

mod common;

use common::{at, bump, central, pick, rel_err};
use demixgan::inversion::{cs_objective, demix_objective, denoise_objective, LatentModel};
use demixgan::nets::generator::sample_latent;
use demixgan::nets::{
    discriminator_backward, discriminator_forward_cached, generator_backward,
    generator_forward_cached, init_discriminator, init_generator, ArchitectureDescriptor, Mode, NetworkParams,
};
use demixgan::rng;
use demixgan::sensing::make_gaussian_operator;
use ndarray::{Array2, Array3, Axis};
use rand::Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;
// Round-off in a central difference of an O(1) loss is about 1e-10,
// so gradients that vanish analytically are judged against this floor.
const FLOOR: f64 = 1e-5;

/// Generator with weights blown up so every layer is visibly nonlinear.
fn lively_generator(arch: &ArchitectureDescriptor, seed: u64, gain: f64) -> NetworkParams<f64> {
    let mut g = init_generator::<f64>(arch, seed).unwrap();
    for (name, t) in g.tensors.0.iter_mut() {
        if name.ends_with("weight") {
            t.mapv_inplace(|v| v * gain);
        }
    }
    g
}

fn weights(shape: (usize, usize, usize), seed: u64) -> Array3<f64> {
    let mut r = rng::stream(seed, "weights");
    Array3::from_shape_simple_fn(shape, || r.random::<f64>() * 2.0 - 1.0)
}

fn check_generator(arch: ArchitectureDescriptor, mode: Mode, gain: f64, probes: usize, seed: u64) -> (usize, f64) {
    let mut g = lively_generator(&arch, seed, gain);
    let mut r = rng::stream(seed, "probes");
    for (name, t) in g.tensors.0.iter_mut() {
        if name.ends_with("running_mean") {
            t.mapv_inplace(|_| r.random::<f64>() - 0.5);
        } else if name.ends_with("running_var") {
            t.mapv_inplace(|_| 0.5 + r.random::<f64>());
        }
    }
    let batch = 4;
    let mut z: Array2<f64> = sample_latent(batch, arch.latent_dim, &mut r);
    let (h, w) = arch.image_shape;
    let c = weights((batch, h, w), seed);
    let loss = |g: &NetworkParams<f64>, z: &Array2<f64>| (&generator_forward_cached(g, z.view(), mode).unwrap().0 * &c).sum();
    let (_, cache) = generator_forward_cached(&g, z.view(), mode).unwrap();
    let (grads, dz) = generator_backward(&g, &cache, c.view());
    let names: Vec<String> = grads.iter().map(|(n, _)| n.clone()).collect();
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    let mut worst = 0.0f64;
    for p in 0..probes {
        let (analytic, numeric) = if p % 2 == 0 {
            let (name, idx) = pick(&g.tensors, &names, &mut r);
            let a = at(&grads, &name, idx);
            let n = central(
                |d| {
                    bump(&mut g.tensors, &name, idx, d);
                    let v = loss(&g, &z);
                    bump(&mut g.tensors, &name, idx, -d);
                    v
                },
                H,
            );
            (a, n)
        } else {
            let (i, j) = (r.random_range(0..batch), r.random_range(0..arch.latent_dim));
            let n = central(
                |d| {
                    z[[i, j]] += d;
                    let v = loss(&g, &z);
                    z[[i, j]] -= d;
                    v
                },
                H,
            );
            (dz[[i, j]], n)
        };
        worst = worst.max(rel_err(analytic, numeric, FLOOR));
    }
    (probes, worst)
}

#[test]
fn generator_gradients() {
    let mut total = 0;
    for mode in [Mode::Train, Mode::Eval] {
        for (arch, gain, probes) in [
            (ArchitectureDescriptor::custom((12, 12), 6), 40.0, 80),
            (ArchitectureDescriptor::dcgan28(), 1.0, 12),
            (ArchitectureDescriptor::infogan28(), 1.0, 12),
        ] {
            let (n, worst) = check_generator(arch.clone(), mode, gain, probes, 3);
            assert!(worst < TOL, "{:?} {mode:?}: worst relative error {worst:e}", arch.family);
            total += n;
        }
    }
    assert!(total >= 100);
}

fn check_discriminator(arch: ArchitectureDescriptor, mode: Mode, probes: usize, seed: u64) -> f64 {
    let mut d = init_discriminator::<f64>(&arch, seed).unwrap();
    // Running stats away from identity so eval mode is not trivial.
    d.tensors.get_mut("bn2.running_mean").mapv_inplace(|_| 0.01);
    d.tensors.get_mut("bn2.running_var").mapv_inplace(|_| 0.02);
    for (name, t) in d.tensors.0.iter_mut() {
        if name.ends_with("weight") {
            t.mapv_inplace(|v| v * 10.0);
        }
    }
    let (h, w) = arch.image_shape;
    let mut x = weights((3, h, w), seed).mapv(|v| v + 1.0);
    let c = ndarray::arr1(&[0.7, -1.3, 0.4]);
    let loss = |d: &NetworkParams<f64>, x: &Array3<f64>| discriminator_forward_cached(d, x.view(), mode).unwrap().0.dot(&c);
    let (_, cache) = discriminator_forward_cached(&d, x.view(), mode).unwrap();
    let (grads, dx) = discriminator_backward(&d, &cache, c.view());
    let names: Vec<String> = grads.iter().map(|(n, _)| n.clone()).collect();
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    let mut r = rng::stream(seed, "probes");
    let mut worst = 0.0f64;
    for p in 0..probes {
        let (analytic, numeric) = if p % 2 == 0 {
            let (name, idx) = pick(&d.tensors, &names, &mut r);
            let a = at(&grads, &name, idx);
            let n = central(
                |delta| {
                    bump(&mut d.tensors, &name, idx, delta);
                    let v = loss(&d, &x);
                    bump(&mut d.tensors, &name, idx, -delta);
                    v
                },
                H,
            );
            (a, n)
        } else {
            let (i, a, b) = (r.random_range(0..3), r.random_range(0..h), r.random_range(0..w));
            let n = central(
                |delta| {
                    x[[i, a, b]] += delta;
                    let v = loss(&d, &x);
                    x[[i, a, b]] -= delta;
                    v
                },
                H,
            );
            (dx[[i, a, b]], n)
        };
        worst = worst.max(rel_err(analytic, numeric, FLOOR));
    }
    worst
}

#[test]
fn discriminator_gradients_in_both_modes() {
    for mode in [Mode::Train, Mode::Eval] {
        let worst = check_discriminator(ArchitectureDescriptor::custom((12, 12), 6), mode, 80, 5);
        assert!(worst < TOL, "{mode:?}: {worst:e}");
        let worst = check_discriminator(ArchitectureDescriptor::dcgan28(), mode, 20, 6);
        assert!(worst < TOL, "dcgan28 {mode:?}: {worst:e}");
    }
}

/// Probes `grad` of a per-row objective summed over rows.
fn probe_latent(
    z: &mut Array2<f64>,
    grad: &Array2<f64>,
    probes: usize,
    r: &mut impl Rng,
    mut total: impl FnMut(&Array2<f64>) -> f64,
) -> f64 {
    let mut worst = 0.0f64;
    for _ in 0..probes {
        let (i, j) = (r.random_range(0..z.nrows()), r.random_range(0..z.ncols()));
        let n = central(
            |d| {
                z[[i, j]] += d;
                let v = total(z);
                z[[i, j]] -= d;
                v
            },
            H,
        );
        worst = worst.max(rel_err(grad[[i, j]], n, FLOOR));
    }
    worst
}

#[test]
fn inversion_objective_gradients() {
    let arch = ArchitectureDescriptor::custom((8, 8), 5);
    let g1 = lively_generator(&arch, 1, 40.0);
    let g2 = lively_generator(&arch, 2, 40.0);
    let mut r = rng::stream(9, "inv-probes");
    let u = weights((1, 8, 8), 4).index_axis(Axis(0), 0).mapv(|v| v.abs());
    let lambda = 0.3;

    let mut z: Array2<f64> = sample_latent(3, 5, &mut r);
    let (_, grad) = denoise_objective(&g1, u.view(), z.view(), lambda).unwrap();
    let worst = probe_latent(&mut z, &grad, 100, &mut r, |z| {
        denoise_objective(&g1, u.view(), z.view(), lambda).unwrap().0.sum()
    });
    assert!(worst < TOL, "denoise {worst:e}");

    let mut z1: Array2<f64> = sample_latent(3, 5, &mut r);
    let mut z2: Array2<f64> = sample_latent(3, 5, &mut r);
    let (_, d1, d2) = demix_objective(&g1, &g2, u.view(), z1.view(), z2.view(), 0.2, 0.5).unwrap();
    let z2c = z2.clone();
    let worst1 = probe_latent(&mut z1, &d1, 100, &mut r, |z| {
        demix_objective(&g1, &g2, u.view(), z.view(), z2c.view(), 0.2, 0.5).unwrap().0.sum()
    });
    let z1c = z1.clone();
    let worst2 = probe_latent(&mut z2, &d2, 100, &mut r, |z| {
        demix_objective(&g1, &g2, u.view(), z1c.view(), z.view(), 0.2, 0.5).unwrap().0.sum()
    });
    assert!(worst1 < TOL && worst2 < TOL, "demix {worst1:e} {worst2:e}");

    let op = make_gaussian_operator::<f64>(20, 64, 3).unwrap();
    let y = op.a.dot(&u.iter().copied().collect::<ndarray::Array1<f64>>());
    let mut z: Array2<f64> = sample_latent(3, 5, &mut r);
    let (_, grad) = cs_objective(&g1, &op, &y, z.view(), lambda).unwrap();
    let worst = probe_latent(&mut z, &grad, 100, &mut r, |z| cs_objective(&g1, &op, &y, z.view(), lambda).unwrap().0.sum());
    assert!(worst < TOL, "cs {worst:e}");
    assert_eq!(LatentModel::<f64>::latent_dim(&g1), 5);
}
