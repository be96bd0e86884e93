use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::transforms::{forward_nd, inverse_nd};

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

const BASES: [BasisKind; 3] = [BasisKind::Cosine, BasisKind::Sine, BasisKind::Waws];

#[test]
fn affine_examples() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap()).unwrap();
    let w = tape.constant(Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap()).unwrap();
    let b = tape.constant(Tensor::new(vec![2], vec![3.0, 4.0]).unwrap()).unwrap();
    let y = tape.pointwise_affine(x, w, b).unwrap();
    assert_eq!(tape.value(y).data(), &[4.0, 6.0]);

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let xs = random_tensor(&mut rng, &[2, 5, 3]);
    let x = tape.constant(xs.clone()).unwrap();
    let eye = Tensor::from_fn(&[3, 3], |ix| (ix[0] == ix[1]) as u8 as f64);
    let w = tape.constant(eye).unwrap();
    let b = tape.constant(Tensor::zeros(&[3])).unwrap();
    let y = tape.pointwise_affine(x, w, b).unwrap();
    assert_eq!(tape.value(y), &xs);

    let bad = tape.constant(Tensor::zeros(&[4, 2])).unwrap();
    assert!(matches!(
        tape.pointwise_affine(x, bad, b),
        Err(Error::InvalidShape(_))
    ));
}

#[test]
fn activation_examples() {
    assert_eq!(Activation::Gelu.apply(0.0), 0.0);
    assert_eq!(Activation::Relu.apply(-3.0), 0.0);
    assert_eq!(Activation::Relu.apply(3.0), 3.0);
    // Phi(1) = 0.841344746068543
    assert!((Activation::Gelu.apply(1.0) - 0.841344746068543).abs() < 1e-15);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let x: f64 = rng.gen_range(-4.0..4.0);
        let h = 1e-5;
        let fd = (Activation::Gelu.apply(x + h) - Activation::Gelu.apply(x - h)) / (2.0 * h);
        let an = Activation::Gelu.derivative(x);
        assert!((fd - an).abs() <= 1e-6 * an.abs().max(1e-3), "x={x}");
    }
}

#[test]
fn backward_trivial_examples() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::new(vec![4], vec![1.0, -2.0, 3.0, 0.5]).unwrap(), true).unwrap();
    let s = tape.sum(x).unwrap();
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[1.0; 4]);

    let sq = tape.sum_squares(x).unwrap();
    let half = tape.scale(sq, 0.5).unwrap();
    let g = tape.backward(half).unwrap();
    assert_eq!(g.get(x).unwrap().data(), tape.value(x).data());

    assert!(matches!(tape.backward(x), Err(Error::InvalidUse(_))));
}

#[test]
fn constants_never_receive_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut tape = Tape::new();
    let x = tape.constant(random_tensor(&mut rng, &[1, 9, 2])).unwrap();
    let w = tape.leaf(random_tensor(&mut rng, &[2, 2]), true).unwrap();
    let b = tape.leaf(random_tensor(&mut rng, &[2]), false).unwrap();
    let y = tape.pointwise_affine(x, w, b).unwrap();
    let l = tape.sum_squares(y).unwrap();
    let g = tape.backward(l).unwrap();
    assert!(g.get(w).is_some());
    assert!(g.get(x).is_none());
    assert!(g.get(b).is_none());
    assert!(g.get(y).is_none());
}

#[test]
fn non_finite_values_trip_a_numeric_fault() {
    let mut tape = Tape::new();
    assert!(matches!(
        tape.leaf(Tensor::new(vec![1], vec![f64::NAN]).unwrap(), true),
        Err(Error::NumericFault { .. })
    ));
    let x = tape.leaf(Tensor::new(vec![1], vec![1e200]).unwrap(), true).unwrap();
    let y = tape.scale(x, 1e200).unwrap_err();
    assert!(matches!(y, Error::NumericFault { ref context } if context.contains("scale")));
}

#[test]
fn relative_l2_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let r = random_tensor(&mut rng, &[3, 7, 1]);
    let mut tape = Tape::new();
    let same = tape.constant(r.clone()).unwrap();
    let l = tape.relative_l2_loss(same, &r).unwrap();
    assert_eq!(tape.value(l).data()[0], 0.0);

    let zero = tape.constant(Tensor::zeros(&[3, 7, 1])).unwrap();
    let l = tape.relative_l2_loss(zero, &r).unwrap();
    assert!((tape.value(l).data()[0] - 1.0).abs() < 1e-15);

    let scaled = Tensor::new(r.shape().to_vec(), r.data().iter().map(|v| 1.1 * v).collect()).unwrap();
    let s = tape.constant(scaled).unwrap();
    let l = tape.relative_l2_loss(s, &r).unwrap();
    assert!((tape.value(l).data()[0] - 0.1).abs() < 1e-14);

    let mut degenerate = r.clone();
    degenerate.data_mut()[7..14].iter_mut().for_each(|v| *v = 0.0);
    assert!(matches!(
        tape.relative_l2_loss(s, &degenerate),
        Err(Error::DegenerateSample { index: 1 })
    ));
}

/// Dense matrix of a tape op acting on a single-channel 1-D line.
fn dense_of(n_in: usize, f: impl Fn(&mut Tape<'_>, Var) -> Var) -> Vec<Vec<f64>> {
    (0..n_in)
        .map(|j| {
            let mut e = Tensor::zeros(&[1, n_in, 1]);
            e.data_mut()[j] = 1.0;
            let mut tape = Tape::new();
            let x = tape.constant(e).unwrap();
            let y = f(&mut tape, x);
            tape.value(y).data().to_vec()
        })
        .collect()
}

#[test]
fn transform_adjoints_match_dense_transposes() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for n in 3..=17 {
        for basis in BASES {
            let modes = basis.modes(n);
            for (kind, n_in, n_out) in [("fwd", n, modes), ("inv", modes, n)] {
                let apply = |tape: &mut Tape<'_>, x: Var| match kind {
                    "fwd" => tape.forward_transform(x, &[basis]).unwrap(),
                    _ => tape.inverse_transform(x, &[basis], &[n]).unwrap(),
                };
                let cols = dense_of(n_in, apply);
                // <T x, y> = <x, T^T y> with T^T from the dense columns
                let x = random_tensor(&mut rng, &[1, n_in, 1]);
                let y = random_tensor(&mut rng, &[1, n_out, 1]);
                let mut tape = Tape::new();
                let xv = tape.leaf(x.clone(), true).unwrap();
                let tx = apply(&mut tape, xv);
                let lhs = tape.value(tx).dot(&y);
                let yv = tape.constant(y.clone()).unwrap();
                let _ = yv;
                // gradient of <T x, y> w.r.t. x is T^T y
                let w = tape.constant(Tensor::new(vec![1, 1], vec![1.0]).unwrap()).unwrap();
                let zero = tape.constant(Tensor::zeros(&[1])).unwrap();
                let same = tape.pointwise_affine(tx, w, zero).unwrap();
                let prod = {
                    let c = tape.constant(y.clone()).unwrap();
                    let sum = tape.add(same, c).unwrap();
                    let a = tape.sum_squares(sum).unwrap();
                    let b = tape.sum_squares(same).unwrap();
                    let neg = tape.scale(b, -1.0).unwrap();
                    let d = tape.add(a, neg).unwrap();
                    tape.scale(d, 0.5).unwrap()
                };
                // 0.5 (|Tx + y|^2 - |Tx|^2) = <Tx, y> + |y|^2 / 2
                let g = tape.backward(prod).unwrap();
                let tty = g.get(xv).unwrap();
                let rhs = x.dot(tty);
                assert!((lhs - rhs).abs() <= 1e-11, "{kind} {basis:?} n={n}");
                for (j, col) in cols.iter().enumerate() {
                    let dense: f64 = col.iter().zip(y.data()).map(|(a, b)| a * b).sum();
                    assert!((dense - tty.data()[j]).abs() <= 1e-11, "{kind} {basis:?} n={n} j={j}");
                }
            }
        }
    }
}

#[test]
fn forward_then_inverse_is_identity_on_representable_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for basis in BASES {
        let n = 33;
        let coeffs = random_tensor(&mut rng, &[2, basis.modes(n), 3]);
        let mut tape = Tape::new();
        let c = tape.constant(coeffs).unwrap();
        let f = tape.inverse_transform(c, &[basis], &[n]).unwrap();
        let c2 = tape.forward_transform(f, &[basis]).unwrap();
        let f2 = tape.inverse_transform(c2, &[basis], &[n]).unwrap();
        let diff = tape
            .value(f)
            .data()
            .iter()
            .zip(tape.value(f2).data())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(diff < 1e-13, "{basis:?}");
    }
}

#[test]
fn transform_nodes_agree_with_module_transforms_in_2d() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let field = random_tensor(&mut rng, &[1, 7, 9, 1]);
    let bases = [BasisKind::Sine, BasisKind::Waws];
    let mut tape = Tape::new();
    let x = tape.constant(field.clone()).unwrap();
    let c = tape.forward_transform(x, &bases).unwrap();
    let plain = forward_nd(&field.clone().reshape(vec![7, 9]).unwrap(), &bases).unwrap();
    assert_eq!(tape.value(c).data(), plain.data());
    let back = tape.inverse_transform(c, &bases, &[13, 17]).unwrap();
    let plain_back = inverse_nd(&plain, &bases, &[13, 17]).unwrap();
    assert_eq!(tape.value(back).data(), plain_back.data());
}

#[test]
fn gradient_of_round_trip_energy_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for basis in BASES {
        let x0 = random_tensor(&mut rng, &[1, 12, 2]);
        let energy = |t: &Tensor| -> f64 {
            let mut tape = Tape::new();
            let x = tape.constant(t.clone()).unwrap();
            let c = tape.forward_transform(x, &[basis]).unwrap();
            let y = tape.inverse_transform(c, &[basis], &[12]).unwrap();
            tape.value(y).data().iter().map(|v| v * v).sum()
        };
        let mut tape = Tape::new();
        let x = tape.leaf(x0.clone(), true).unwrap();
        let c = tape.forward_transform(x, &[basis]).unwrap();
        let y = tape.inverse_transform(c, &[basis], &[12]).unwrap();
        let l = tape.sum_squares(y).unwrap();
        let g = tape.backward(l).unwrap();
        let grad = g.get(x).unwrap();
        for j in 0..x0.len() {
            let mut p = x0.clone();
            p.data_mut()[j] += 1e-5;
            let mut m = x0.clone();
            m.data_mut()[j] -= 1e-5;
            let fd = (energy(&p) - energy(&m)) / 2e-5;
            let an = grad.data()[j];
            assert!((fd - an).abs() <= 1e-6 * an.abs().max(1e-6), "{basis:?} j={j}: {an} vs {fd}");
        }
    }
}

fn dense_banded_1d(c: &Tensor, a: &Tensor, b: usize) -> Vec<f64> {
    // expand to a [k*C, k*C'] matrix and multiply
    let k = c.shape()[1];
    let ci = c.shape()[2];
    let co = a.shape()[3];
    let mut m = vec![vec![0.0; k * ci]; k * co];
    for out in 0..k {
        for j in 0..k {
            let d = j as isize - out as isize + b as isize - 1;
            if d < 0 || d >= (2 * b - 1) as isize {
                continue;
            }
            for cc in 0..ci {
                for cp in 0..co {
                    m[out * co + cp][j * ci + cc] =
                        a.data()[((out * (2 * b - 1) + d as usize) * ci + cc) * co + cp];
                }
            }
        }
    }
    let mut y = Vec::new();
    for bi in 0..c.shape()[0] {
        let x = &c.data()[bi * k * ci..(bi + 1) * k * ci];
        for row in &m {
            y.push(row.iter().zip(x).map(|(p, q)| p * q).sum());
        }
    }
    y
}

#[test]
fn banded_identity_and_dense_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (k, ch) = (6, 3);
    let c = random_tensor(&mut rng, &[2, k, ch]);
    let eye = Tensor::from_fn(&[k, 1, ch, ch], |ix| (ix[2] == ix[3]) as u8 as f64);
    let mut tape = Tape::new();
    let cv = tape.constant(c.clone()).unwrap();
    let av = tape.constant(eye).unwrap();
    let y = tape.banded_spectral_multiply(cv, av, &[1]).unwrap();
    assert_eq!(tape.value(y), &c);

    for (b, co) in [(4usize, 3usize), (2, 5), (6, 2)] {
        let a = random_tensor(&mut rng, &[k, 2 * b - 1, ch, co]);
        let av = tape.constant(a.clone()).unwrap();
        let y = tape.banded_spectral_multiply(cv, av, &[b]).unwrap();
        let dense = dense_banded_1d(&c, &a, b);
        let diff = tape
            .value(y)
            .data()
            .iter()
            .zip(&dense)
            .fold(0.0f64, |m, (p, q)| m.max((p - q).abs()));
        assert!(diff <= 1e-12, "b={b}: {diff}");
    }

    let a = random_tensor(&mut rng, &[k, 13, ch, ch]);
    let av = tape.constant(a).unwrap();
    assert!(matches!(
        tape.banded_spectral_multiply(cv, av, &[7]),
        Err(Error::InvalidConfig(_))
    ));
}

#[test]
fn banded_2d_matches_dense_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (ky, kx, by, bx, ci, co) = (4usize, 5usize, 2usize, 3usize, 2usize, 3usize);
    let c = random_tensor(&mut rng, &[1, ky, kx, ci]);
    let a = random_tensor(&mut rng, &[kx, 2 * bx - 1, ky, 2 * by - 1, ci, co]);
    let mut tape = Tape::new();
    let cv = tape.constant(c.clone()).unwrap();
    let av = tape.constant(a.clone()).unwrap();
    let y = tape.banded_spectral_multiply(cv, av, &[by, bx]).unwrap();
    for oy in 0..ky {
        for ox in 0..kx {
            for cp in 0..co {
                let mut expected = 0.0;
                for jy in 0..ky {
                    for jx in 0..kx {
                        let dy = jy as isize - oy as isize + by as isize - 1;
                        let dx = jx as isize - ox as isize + bx as isize - 1;
                        if !(0..(2 * by - 1) as isize).contains(&dy)
                            || !(0..(2 * bx - 1) as isize).contains(&dx)
                        {
                            continue;
                        }
                        for cc in 0..ci {
                            let ix = [ox, dx as usize, oy, dy as usize, cc, cp];
                            let mut flat = 0;
                            for (i, &e) in a.shape().iter().enumerate() {
                                flat = flat * e + ix[i];
                            }
                            expected += a.data()[flat] * c.data()[(jy * kx + jx) * ci + cc];
                        }
                    }
                }
                let got = tape.value(y).data()[(oy * kx + ox) * co + cp];
                assert!((got - expected).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn every_op_passes_its_vjp_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut tape = Tape::new();
    let x = tape.leaf(random_tensor(&mut rng, &[2, 9, 7, 2]), true).unwrap();
    let w = tape.leaf(random_tensor(&mut rng, &[2, 3]), true).unwrap();
    let b = tape.leaf(random_tensor(&mut rng, &[3]), true).unwrap();
    let h = tape.pointwise_affine(x, w, b).unwrap();
    let h = tape.activation(h, Activation::Gelu).unwrap();
    let bases = [BasisKind::Cosine, BasisKind::Waws];
    let c = tape.forward_transform(h, &bases).unwrap();
    let c = tape.truncate(c, &[4, 3]).unwrap();
    let a = tape.leaf(random_tensor(&mut rng, &[3, 3, 4, 1, 3, 3]), true).unwrap();
    let c = tape.banded_spectral_multiply(c, a, &[1, 2]).unwrap();
    let s = tape.inverse_transform(c, &bases, &[9, 7]).unwrap();
    let z = tape.add(s, h).unwrap();
    let z = tape.activation(z, Activation::Relu).unwrap();
    let reference = random_tensor(&mut rng, &[2, 9, 7, 3]);
    let l = tape.relative_l2_loss(z, &reference).unwrap();
    let _ = tape.scale(l, 2.0).unwrap();
    let checks = check_node_vjps(&tape, 0, 1e-6).unwrap();
    assert!(checks.len() >= 10);
    for check in checks {
        assert!(check.rel_error <= 1e-6, "{check:?}");
    }
}

fn affine_only_loss(tape: &mut Tape<'_>, p: &[Var]) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let x = tape.constant(random_tensor(&mut rng, &[2, 5, 3]))?;
    let y = tape.pointwise_affine(x, p[0], p[1])?;
    let target = random_tensor(&mut rng, &[2, 5, 4]);
    tape.relative_l2_loss(y, &target)
}

#[test]
fn grad_check_affine_only_graph() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let params = vec![
        ("w".to_string(), random_tensor(&mut rng, &[3, 4])),
        ("b".to_string(), random_tensor(&mut rng, &[4])),
    ];
    let report = grad_check(&params, affine_only_loss, &GradCheckConfig::default()).unwrap();
    assert_eq!(report.probes.len(), 16);
    assert!(report.passed(1e-9), "{:?}", report.worst_probe());
}

fn transform_only_loss(tape: &mut Tape<'_>, p: &[Var]) -> Result<Var> {
    let bases = [BasisKind::Sine];
    let c = tape.forward_transform(p[0], &bases)?;
    let c = tape.truncate(c, &[5])?;
    let y = tape.inverse_transform(c, &bases, &[17])?;
    let s = tape.sum_squares(y)?;
    tape.scale(s, 0.5)
}

#[test]
fn grad_check_transform_only_graph() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let params = vec![("x".to_string(), random_tensor(&mut rng, &[1, 17, 2]))];
    let report = grad_check(&params, transform_only_loss, &GradCheckConfig::default()).unwrap();
    assert!(report.passed(1e-8), "{:?}", report.worst_probe());
}

#[test]
fn injected_adjoint_fault_is_caught_and_named() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let params = vec![("x".to_string(), random_tensor(&mut rng, &[1, 17, 2]))];
    inject_adjoint_fault(true);
    let report = grad_check(&params, transform_only_loss, &GradCheckConfig::default());
    inject_adjoint_fault(false);
    let report = report.unwrap();
    assert!(!report.passed(1e-5));
    let failing = report.failing_nodes(1e-5);
    assert!(!failing.is_empty());
    assert!(failing.iter().all(|n| n.op == "inverse_transform"));
}

#[test]
fn identical_tapes_give_bitwise_identical_gradients() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let w = random_tensor(&mut rng, &[3, 4]);
        let b = random_tensor(&mut rng, &[4]);
        let mut tape = Tape::new();
        let wv = tape.param(&w).unwrap();
        let bv = tape.param(&b).unwrap();
        let l = affine_only_loss(&mut tape, &[wv, bv]).unwrap();
        let g = tape.backward(l).unwrap();
        (
            tape.value(l).data()[0].to_bits(),
            g.get(wv).unwrap().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        )
    };
    assert_eq!(run(), run());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn affine_gradients_match_finite_differences(seed in any::<u64>(), rows in 1usize..6, ci in 1usize..4, co in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_tensor(&mut rng, &[1, rows, ci]);
        let w = random_tensor(&mut rng, &[ci, co]);
        let b = random_tensor(&mut rng, &[co]);
        let mut tape = Tape::new();
        let xv = tape.leaf(x, true).unwrap();
        let wv = tape.leaf(w, true).unwrap();
        let bv = tape.leaf(b, true).unwrap();
        let y = tape.pointwise_affine(xv, wv, bv).unwrap();
        let y = tape.activation(y, Activation::Gelu).unwrap();
        let _ = tape.sum_squares(y).unwrap();
        for check in check_node_vjps(&tape, seed, 1e-5).unwrap() {
            prop_assert!(check.rel_error <= 1e-6, "{:?}", check);
        }
    }

    #[test]
    fn banded_gradients_match_finite_differences(seed in any::<u64>(), k in 1usize..8, b in 1usize..5) {
        prop_assume!(b <= k);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tape = Tape::new();
        let c = tape.leaf(random_tensor(&mut rng, &[2, k, 2]), true).unwrap();
        let a = tape.leaf(random_tensor(&mut rng, &[k, 2 * b - 1, 2, 3]), true).unwrap();
        let y = tape.banded_spectral_multiply(c, a, &[b]).unwrap();
        let _ = tape.sum_squares(y).unwrap();
        for check in check_node_vjps(&tape, seed, 1e-5).unwrap() {
            prop_assert!(check.rel_error <= 1e-6, "{:?}", check);
        }
    }
}
