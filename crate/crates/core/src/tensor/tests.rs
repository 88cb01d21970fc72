use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::check;
use super::*;
use crate::error::Error;

fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

fn eval(f: impl for<'t> Fn(&'t Tape) -> Var<'t>) -> Tensor {
    let tape = Tape::new();
    (*f(&tape).value()).clone()
}

#[test]
fn matmul_examples() {
    let m = Tensor::new([2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let out = eval(|t| t.constant(Tensor::eye(2)).matmul(t.constant(m.clone())).unwrap());
    assert_eq!(out, m);
    let a = Tensor::new([2, 2], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
    let b = Tensor::new([2, 2], vec![0.0, 0.0, 0.0, 1.0]).unwrap();
    let out = eval(|t| t.constant(a.clone()).matmul(t.constant(b.clone())).unwrap());
    assert_eq!(out.data(), &[0.0; 4]);
}

#[test]
fn matmul_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random(&mut rng, &[3, 4], -1.0, 1.0);
    let b = random(&mut rng, &[4, 2], -1.0, 1.0);
    let out = eval(|t| t.constant(a.clone()).matmul(t.constant(b.clone())).unwrap());
    for i in 0..3 {
        for j in 0..2 {
            let mut s = 0.0;
            for k in 0..4 {
                s += a.data()[i * 4 + k] * b.data()[k * 2 + j];
            }
            assert!((out.data()[i * 2 + j] - s).abs() < 1e-12);
        }
    }
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let tape = Tape::new();
    let a = tape.constant(Tensor::zeros([2, 3]));
    let b = tape.constant(Tensor::zeros([2, 3]));
    match a.matmul(b) {
        Err(Error::Shape { left, right, .. }) => {
            assert_eq!(left, vec![2, 3]);
            assert_eq!(right, vec![2, 3]);
        }
        other => panic!("expected shape error, got {other:?}"),
    }
}

#[test]
fn relu_and_softmax_examples() {
    let x = Tensor::new([3], vec![-1.0, 0.0, 2.0]).unwrap();
    assert_eq!(eval(|t| t.constant(x.clone()).relu().unwrap()).data(), &[0.0, 0.0, 2.0]);
    let z = Tensor::zeros([3]);
    let s = eval(|t| t.constant(z.clone()).softmax().unwrap());
    for v in s.data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn softmax_rows_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random(&mut rng, &[7, 5], -30.0, 30.0);
    let s = eval(|t| t.constant(x.clone()).softmax().unwrap());
    for row in s.data().chunks(5) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn gelu_gradient_matches_central_difference() {
    let x = Tensor::scalar(0.5);
    let tape = Tape::new();
    let v = tape.leaf(x);
    let y = v.gelu().unwrap();
    let g = tape.backward(y).unwrap().wrt(v).unwrap()[0];
    let h = 1e-5;
    let f = |x: f64| Unary::Gelu.apply(x);
    let fd = (f(0.5 + h) - f(0.5 - h)) / (2.0 * h);
    assert!(((g - fd) / fd).abs() < 1e-6);
}

#[test]
fn analytic_backward_examples() {
    let tape = Tape::new();
    let x = tape.leaf(Tensor::new([3], vec![1.0, 2.0, 3.0]).unwrap());
    let loss = x.square().unwrap().sum().unwrap();
    assert_eq!(tape.backward(loss).unwrap().wrt(x).unwrap(), &[2.0, 4.0, 6.0]);

    let a = Tensor::new([2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
    let tape = Tape::new();
    let x = tape.leaf(Tensor::new([3, 1], vec![0.3, -0.2, 0.9]).unwrap());
    let loss = tape.constant(a).matmul(x).unwrap().sum().unwrap();
    assert_eq!(tape.backward(loss).unwrap().wrt(x).unwrap(), &[5.0, 7.0, 9.0]);
}

#[test]
fn backward_contracts() {
    let tape = Tape::new();
    let x = tape.leaf(Tensor::zeros([2]));
    assert!(matches!(tape.backward(x), Err(Error::Contract(_))));

    let tape = Tape::new();
    let x = tape.leaf(Tensor::scalar(1.0));
    let y = x.square().unwrap();
    tape.backward(y).unwrap();
    assert!(matches!(tape.backward(y), Err(Error::Contract(_))));
}

#[test]
fn domain_errors_report_index() {
    let tape = Tape::new();
    let x = tape.constant(Tensor::new([3], vec![1.0, -2.0, 3.0]).unwrap());
    match x.log() {
        Err(Error::Numeric { index, .. }) => assert_eq!(index, 1),
        other => panic!("expected numeric error, got {other:?}"),
    }
    let x = tape.constant(Tensor::new([2], vec![1.0, 800.0]).unwrap());
    assert!(matches!(x.exp(), Err(Error::Numeric { index: 1, .. })));
}

#[test]
fn external_non_finite_is_rejected() {
    assert!(Tensor::new([2], vec![1.0, f64::NAN]).is_err());
    assert!(Tensor::new([2], vec![1.0]).is_err());
    assert!(Tensor::new([0], vec![]).is_err());
}

/// Weighted sum that keeps the loss sensitive to every output entry.
fn reduce(y: Var<'_>) -> crate::Result<Var<'_>> {
    let p = y.tape().constant(Tensor::new(
        y.shape(),
        (0..y.value().len()).map(|i| 0.3 + 0.1 * (i % 7) as f64).collect(),
    )?);
    y.mul(p)?.sum()
}

fn assert_grad_ok(inputs: &[Tensor], f: impl for<'t> Fn(&'t Tape, &[Var<'t>]) -> crate::Result<Var<'t>>) {
    let r = check(inputs, 1e-6, 1e-3, f).unwrap();
    assert!(r.max_rel_error < 1e-5, "{r:?}");
}

#[test]
fn every_op_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = random(&mut rng, &[4, 3], -1.0, 1.0);
    let b = random(&mut rng, &[4, 3], -1.0, 1.0);
    let row = random(&mut rng, &[3], -1.0, 1.0);
    let w = random(&mut rng, &[3, 5], -1.0, 1.0);
    let pos = random(&mut rng, &[4, 3], 0.5, 2.0);

    assert_grad_ok(&[a.clone(), b.clone()], |_, v| reduce(v[0].add(v[1])?));
    assert_grad_ok(&[a.clone(), b.clone()], |_, v| reduce(v[0].sub(v[1])?));
    assert_grad_ok(&[a.clone(), b.clone()], |_, v| reduce(v[0].mul(v[1])?));
    assert_grad_ok(&[a.clone(), row.clone()], |_, v| reduce(v[0].mul(v[1])?));
    assert_grad_ok(&[a.clone(), row.clone()], |_, v| reduce(v[0].sub(v[1])?));
    assert_grad_ok(&[a.clone(), w.clone()], |_, v| reduce(v[0].matmul(v[1])?));
    assert_grad_ok(&[a.clone()], |_, v| reduce(v[0].t()?));
    assert_grad_ok(&[a.clone()], |_, v| reduce(v[0].scale(-1.7)?.shift(0.3)?));
    assert_grad_ok(&[a.clone()], |_, v| reduce(v[0].reshape([2, 6])?));
    for kind in [Unary::Gelu, Unary::Exp, Unary::Tanh, Unary::Sigmoid, Unary::Softplus] {
        assert_grad_ok(&[a.clone()], |_, v| reduce(v[0].unary(kind)?));
    }
    assert_grad_ok(&[a.clone()], |_, v| reduce(v[0].relu()?));
    assert_grad_ok(&[pos.clone()], |_, v| reduce(v[0].log()?));
    assert_grad_ok(&[a.clone()], |_, v| reduce(v[0].softmax()?));
    assert_grad_ok(&[a.clone()], |_, v| v[0].mean());
    assert_grad_ok(&[a.clone()], |_, v| reduce(v[0].mean_rows()?));
    assert_grad_ok(&[a.clone()], |_, v| reduce(v[0].max_rows()?));
    assert_grad_ok(&[a.clone()], |_, v| reduce(v[0].group_max(2)?));
    assert_grad_ok(&[a.clone()], |_, v| reduce(v[0].gather_rows(vec![3, 0, 3, 1])?));
    assert_grad_ok(&[a.clone(), b.clone()], |_, v| reduce(Var::concat_cols(&[v[0], v[1], v[0]])?));
    assert_grad_ok(&[a.clone(), b.clone()], |_, v| reduce(Var::concat_rows(&[v[1], v[0]])?));
    assert_grad_ok(&[a.clone()], |_, v| reduce(v[0].slice_cols(1, 3)?));
    assert_grad_ok(&[a.clone()], |_, v| reduce(v[0].layer_norm(1e-5)?));
    let field = random(&mut rng, &[4, 12], -1.0, 1.0);
    assert_grad_ok(&[field, a.clone()], |_, v| reduce(v[0].apply_field(v[1])?));
}

#[test]
fn selective_scan_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (l, d, n) = (6, 3, 2);
    let inputs = [
        random(&mut rng, &[l, d], -1.0, 1.0),
        random(&mut rng, &[l, d], 0.1, 0.9),
        random(&mut rng, &[d, n], -1.5, -0.2),
        random(&mut rng, &[l, n], -1.0, 1.0),
        random(&mut rng, &[l, n], -1.0, 1.0),
        random(&mut rng, &[d], -1.0, 1.0),
    ];
    assert_grad_ok(&inputs, |t, v| {
        let y = v[0].selective_scan(v[1], v[2], v[3], v[4], v[5])?;
        let p = t.constant(Tensor::new([l, d], (0..l * d).map(|i| 1.0 + 0.2 * i as f64).collect())?);
        y.mul(p)?.sum()
    });
}

#[test]
fn parameters_are_registered_once_per_tape() {
    let mut store = params::ParamStore::new();
    let id = store.add("w", Tensor::new([2], vec![1.0, 2.0]).unwrap()).unwrap();
    let tape = Tape::new();
    let a = tape.param(&store, id);
    let b = tape.param(&store, id);
    let loss = a.mul(b).unwrap().sum().unwrap();
    let grads = tape.backward(loss).unwrap();
    assert_eq!(grads.param(id).unwrap(), &[2.0, 4.0]);
}

#[test]
fn training_is_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = params::ParamStore::new();
        let mut init = params::Init::new(&mut store, &mut rng);
        let w = init.weight("w", 3, 2).unwrap();
        let x = Tensor::new([2, 3], vec![0.1, 0.2, 0.3, -0.4, 0.5, 0.6]).unwrap();
        let mut opt = optim::AdamW::default();
        for _ in 0..12 {
            let tape = Tape::new();
            let y = tape.constant(x.clone()).matmul(tape.param(&store, w)).unwrap();
            let loss = y.gelu().unwrap().square().unwrap().mean().unwrap();
            let grads = tape.backward(loss).unwrap();
            opt.step(&mut store, grads.params(), 1e-2);
        }
        store.value(w).clone()
    };
    let (a, b) = (run(), run());
    assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
}

proptest! {
    #[test]
    fn broadcast_equals_explicit_tiling(rows in 1usize..5, cols in 1usize..5, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(&mut rng, &[rows, cols], -1.0, 1.0);
        let b = random(&mut rng, &[cols], -1.0, 1.0);
        let tiled = Tensor::new(
            [rows, cols],
            (0..rows * cols).map(|i| b.data()[i % cols]).collect(),
        ).unwrap();
        let tape = Tape::new();
        let (va, vb, vt) = (tape.constant(a.clone()), tape.constant(b), tape.constant(tiled));
        for (x, y) in [(va.add(vb), va.add(vt)), (va.mul(vb), va.mul(vt)), (vb.sub(va), vt.sub(va))] {
            let (x, y) = (x.unwrap().value(), y.unwrap().value());
            prop_assert_eq!(x.data(), y.data());
        }
    }
}
