use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::masks::{causal_mask, full_mask, window_mask, AttnMask};

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Checks a tape-built scalar function of several input tensors against
/// central differences on every coordinate.
fn check_op<F>(shapes: &[Vec<usize>], seed: u64, build: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sizes: Vec<usize> = shapes.iter().map(|s| s.iter().product()).collect();
    let total: usize = sizes.iter().sum();
    let point = rand_vec(&mut rng, total);

    let run = |x: &[f64], want_grad: bool| -> (f64, Vec<f64>) {
        let mut tape = Tape::new();
        let mut vars = Vec::new();
        let mut off = 0;
        for (s, &n) in shapes.iter().zip(&sizes) {
            vars.push(tape.param(Tensor::new(s.clone(), x[off..off + n].to_vec()).unwrap()));
            off += n;
        }
        let out = build(&mut tape, &vars);
        let val = tape.value(out).data()[0];
        let mut grad = Vec::new();
        if want_grad {
            tape.backward(out).unwrap();
            for (v, &n) in vars.iter().zip(&sizes) {
                grad.extend(tape.grad(*v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n]));
            }
        }
        (val, grad)
    };
    let (_, analytic) = run(&point, true);
    let coords: Vec<usize> = (0..total).collect();
    gradient_check(|x| Ok(run(x, false).0), &point, &analytic, 1e-5, &coords).unwrap()
}

/// Projects a tensor to a scalar with fixed random weights so every output
/// element receives a distinct upstream gradient.
fn project(tape: &mut Tape, x: Var, seed: u64) -> Var {
    let shape = tape.value(x).shape().to_vec();
    let n = tape.value(x).len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = tape.constant(Tensor::new(shape, rand_vec(&mut rng, n)).unwrap());
    let p = tape.mul(x, w).unwrap();
    tape.sum_all(p)
}

#[test]
fn softmax_uniform_row() {
    let t3 = Tensor::from_rows(&[vec![0.0; 3], vec![0.0; 3], vec![0.0; 3]]).unwrap();
    let p = masked_softmax_rows(&t3, &full_mask(3)).unwrap();
    for v in p.row(0) {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
    // logits and mask must agree in shape
    assert!(masked_softmax_rows(&Tensor::zeros(&[1, 3]), &full_mask(1)).is_err());
}

#[test]
fn softmax_single_survivor_and_partial() {
    let mut out = [0.0; 2];
    masked_softmax_row(&[5.0, 5.0], &[true, false], &mut out).unwrap();
    assert_eq!(out, [1.0, 0.0]);

    let mut out = [0.0; 3];
    masked_softmax_row(&[1.0, 2.0, 3.0], &[true, true, false], &mut out).unwrap();
    let z = 1f64.exp() + 2f64.exp();
    assert!((out[0] - 1f64.exp() / z).abs() < 1e-15);
    assert!((out[1] - 2f64.exp() / z).abs() < 1e-15);
    assert_eq!(out[2], 0.0);
}

#[test]
fn softmax_degenerate_row() {
    let mask = AttnMask::from_rows(&[vec![true, false], vec![false, false]]).unwrap();
    let t = Tensor::zeros(&[2, 2]);
    assert!(matches!(masked_softmax_rows(&t, &mask), Err(Error::DegenerateRow { row: 1 })));
}

#[test]
fn softmax_rows_sum_to_one_and_zero_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let m = window_mask(9, 3);
    let t = Tensor::new(vec![9, 9], (0..81).map(|_| rng.gen_range(-30.0..30.0)).collect()).unwrap();
    let p = masked_softmax_rows(&t, &m).unwrap();
    for q in 0..9 {
        let s: f64 = p.row(q).iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
        for k in 0..9 {
            if !m.allows(q, k) {
                assert_eq!(p.at(q, k), 0.0);
            }
        }
    }
}

#[test]
fn cross_entropy_uniform() {
    let t = Tensor::zeros(&[3, 4]);
    let ce = cross_entropy(&t, &[0, 3, 2], usize::MAX).unwrap();
    assert!((ce - 4f64.ln()).abs() < 1e-12);
}

#[test]
fn cross_entropy_all_ignored() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let t = Tensor::new(vec![2, 4], rand_vec(&mut rng, 8)).unwrap();
    assert_eq!(cross_entropy(&t, &[9, 9], 9).unwrap(), 0.0);

    let mut tape = Tape::new();
    let l = tape.param(t);
    let loss = tape.cross_entropy(l, vec![9, 9], 9, 1.0).unwrap();
    assert_eq!(tape.value(loss).data()[0], 0.0);
    tape.backward(loss).unwrap();
    assert!(tape.grad(l).is_none_or(|g| g.iter().all(|&x| x == 0.0)));
}

#[test]
fn cross_entropy_matches_per_row_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let data = rand_vec(&mut rng, 15);
    let t = Tensor::new(vec![3, 5], data.clone()).unwrap();
    let targets = [0usize, 4, 2];
    let mut oracle = 0.0;
    for (r, &tg) in targets.iter().enumerate() {
        let row = &data[r * 5..(r + 1) * 5];
        let z: f64 = row.iter().map(|v| v.exp()).sum();
        oracle += -(row[tg].exp() / z).ln();
    }
    oracle /= 3.0;
    assert!((cross_entropy(&t, &targets, usize::MAX).unwrap() - oracle).abs() < 1e-14);
}

#[test]
fn cross_entropy_ignored_rows_get_no_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let t = Tensor::new(vec![3, 4], rand_vec(&mut rng, 12)).unwrap();
    let mut tape = Tape::new();
    let l = tape.param(t);
    let loss = tape.cross_entropy(l, vec![1, 7, 2], 7, 0.5).unwrap();
    tape.backward(loss).unwrap();
    let g = tape.grad(l).unwrap();
    assert!(g[4..8].iter().all(|&x| x == 0.0));
    assert!(g[0..4].iter().any(|&x| x != 0.0));
}

#[test]
fn cross_entropy_index_error() {
    let t = Tensor::zeros(&[1, 3]);
    assert!(matches!(cross_entropy(&t, &[3], usize::MAX), Err(Error::Index(_))));
}

#[test]
fn gradcheck_quadratic() {
    let point = [1.0, 2.0];
    let analytic = [2.0, 4.0];
    let err = gradient_check(
        |x| Ok(x.iter().map(|v| v * v).sum()),
        &point,
        &analytic,
        1e-5,
        &[0, 1],
    )
    .unwrap();
    assert!(err < 1e-8, "{err}");
}

#[test]
fn gradcheck_cross_entropy_row() {
    let err = check_op(&[vec![1, 3]], 4, |t, v| t.cross_entropy(v[0], vec![1], usize::MAX, 1.0).unwrap());
    assert!(err < 1e-6, "{err}");
}

#[test]
fn gradcheck_rejects_non_finite() {
    let r = gradient_check(|_| Ok(f64::NAN), &[0.0], &[0.0], 1e-5, &[0]);
    assert!(matches!(r, Err(Error::Numeric(_))));
    assert!(gradient_check(|_| Ok(0.0), &[0.0], &[0.0], 0.0, &[0]).is_err());
}

#[test]
fn gradcheck_every_op() {
    let cases: Vec<(&str, f64)> = vec![
        ("matmul", check_op(&[vec![3, 4], vec![4, 2]], 1, |t, v| {
            let y = t.matmul(v[0], v[1]).unwrap();
            project(t, y, 10)
        })),
        ("linear", check_op(&[vec![3, 4], vec![4, 5], vec![5]], 2, |t, v| {
            let y = t.linear(v[0], v[1], v[2]).unwrap();
            project(t, y, 11)
        })),
        ("add-mul-scale", check_op(&[vec![2, 3], vec![2, 3]], 3, |t, v| {
            let a = t.add(v[0], v[1]).unwrap();
            let m = t.mul(a, v[1]).unwrap();
            let s = t.scale(m, -1.7);
            project(t, s, 12)
        })),
        ("layer-norm", check_op(&[vec![3, 6], vec![6], vec![6]], 4, |t, v| {
            let y = t.layer_norm(v[0], v[1], v[2]).unwrap();
            project(t, y, 13)
        })),
        ("gelu", check_op(&[vec![2, 5]], 5, |t, v| {
            let y = t.gelu(v[0]);
            project(t, y, 14)
        })),
        ("embed-select", check_op(&[vec![5, 3], vec![4, 3]], 6, |t, v| {
            let e = t
                .embed_sum(4, 3, vec![(v[0], vec![(0, 1), (1, 1), (3, 4)]), (v[1], vec![(0, 0), (2, 3)])])
                .unwrap();
            let s = t.select_rows(e, vec![3, 0, 2, 0]).unwrap();
            project(t, s, 15)
        })),
        ("masked-softmax", check_op(&[vec![4, 4]], 7, |t, v| {
            let y = t.masked_softmax(v[0], &window_mask(4, 1)).unwrap();
            project(t, y, 16)
        })),
        ("attention", check_op(&[vec![5, 4], vec![5, 4], vec![5, 4]], 8, |t, v| {
            let segs = vec![
                Segment { start: 0, mask: causal_mask(3) },
                Segment { start: 3, mask: full_mask(2) },
            ];
            let y = t.attention(v[0], v[1], v[2], 2, segs).unwrap();
            project(t, y, 17)
        })),
        ("cross-entropy", check_op(&[vec![4, 6]], 9, |t, v| {
            t.cross_entropy(v[0], vec![0, 5, 99, 3], 99, 0.3).unwrap()
        })),
    ];
    for (name, err) in cases {
        assert!(err < 1e-6, "{name}: relative error {err}");
    }
}

#[test]
fn dropout_identity_without_rng() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::zeros(&[2, 2]));
    assert_eq!(tape.dropout(x, 0.5), x);

    let mut tape = Tape::with_dropout(ChaCha8Rng::seed_from_u64(0));
    let x = tape.param(Tensor::new(vec![1, 1000], vec![1.0; 1000]).unwrap());
    let y = tape.dropout(x, 0.1);
    let kept = tape.value(y).data().iter().filter(|&&v| v > 0.0).count();
    assert!((850..950).contains(&kept), "{kept}");
}

#[test]
fn optimizer_zero_grad_is_noop() {
    let mut params = vec![Tensor::new(vec![2, 2], vec![1.0, -2.0, 3.0, 0.5]).unwrap()];
    let before = params.clone();
    let mut st = OptimState::new(&params, 1e-2, 0.986, 0.0);
    optimizer_step(&mut params, &[vec![0.0; 4]], &mut st).unwrap();
    assert_eq!(params, before);
}

#[test]
fn optimizer_moves_against_gradient() {
    let mut params = vec![Tensor::scalar(1.0)];
    let mut st = OptimState::new(&params, 0.1, 0.986, 0.0);
    optimizer_step(&mut params, &[vec![2.5]], &mut st).unwrap();
    assert!(params[0].data()[0] < 1.0);
    let mut params = vec![Tensor::scalar(1.0)];
    let mut st = OptimState::new(&params, 0.1, 0.986, 0.0);
    optimizer_step(&mut params, &[vec![-2.5]], &mut st).unwrap();
    assert!(params[0].data()[0] > 1.0);
}

#[test]
fn optimizer_three_step_unroll() {
    // f(w) = (w − 3)², grad 2(w − 3), Adam with decoupled decay on a 1×1 matrix
    let (lr, b1, b2, eps, wd) = (0.05, 0.9, 0.999, 1e-8, 0.01);
    let mut params = vec![Tensor::new(vec![1, 1], vec![0.5]).unwrap()];
    let mut st = OptimState::new(&params, lr, 0.986, wd);
    let (mut w, mut m, mut v) = (0.5f64, 0.0f64, 0.0f64);
    for t in 1..=3 {
        let g = 2.0 * (params[0].data()[0] - 3.0);
        optimizer_step(&mut params, &[vec![g]], &mut st).unwrap();

        let g = 2.0 * (w - 3.0);
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let mh = m / (1.0 - b1.powi(t));
        let vh = v / (1.0 - b2.powi(t));
        w -= lr * (mh / (vh.sqrt() + eps) + wd * w);
        assert!((params[0].data()[0] - w).abs() < 1e-15, "step {t}");
    }
    assert_eq!(st.step, 3);
    st.end_epoch();
    assert!((st.lr - lr * 0.986).abs() < 1e-18);
}

#[test]
fn optimizer_rejects_non_finite() {
    let mut params = vec![Tensor::scalar(1.0)];
    let mut st = OptimState::new(&params, 0.1, 0.986, 0.0);
    assert!(matches!(
        optimizer_step(&mut params, &[vec![f64::INFINITY]], &mut st),
        Err(Error::Numeric(_))
    ));
    assert_eq!(params[0].data()[0], 1.0);
    assert_eq!(st.step, 0);
}

#[test]
fn clip_scales_to_norm() {
    let mut g = vec![vec![3.0], vec![4.0]];
    let n = clip_global_norm(&mut g, 1.0);
    assert_eq!(n, 5.0);
    assert!((g[0][0] - 0.6).abs() < 1e-15 && (g[1][0] - 0.8).abs() < 1e-15);
}
