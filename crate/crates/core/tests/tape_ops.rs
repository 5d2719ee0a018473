//! Finite-difference oracles and contract tests for every tape operation.

use metaslot_core::gradcheck::{compare, DEFAULT_STEP};
use metaslot_core::rng::Rng;
use metaslot_core::tape::{linear, mlp, mse, Tape, Var};
use metaslot_core::tensor::Tensor;
use metaslot_core::{CoreError, Result};

fn randn(rng: &mut Rng, rows: usize, cols: usize) -> Tensor<f64> {
    let data = (0..rows * cols).map(|_| rng.normal_f64()).collect();
    Tensor::from_vec(rows, cols, data).unwrap()
}

/// Checks d(loss)/d(x) for a graph `build(tape, x_var) -> loss` against
/// central finite differences, where `x` enters as a leaf of shape r x c.
fn fd_check(
    x0: &Tensor<f64>,
    build: impl Fn(&Tape<f64>, &Var<f64>) -> Result<Var<f64>>,
    tolerance: f64,
) {
    let tape = Tape::<f64>::new();
    let x = tape.leaf(x0, true).unwrap();
    let loss = build(&tape, &x).unwrap();
    let grads = tape.backward(&loss).unwrap();
    let analytic = grads.tensor(&x).into_data();

    let (r, c) = (x0.rows(), x0.cols());
    let mut f = |theta: &[f64]| -> Result<f64> {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(&Tensor::from_vec(r, c, theta.to_vec())?, false)?;
        Ok(build(&tape, &x)?.item())
    };
    let check = compare(&mut f, x0.data(), &analytic, DEFAULT_STEP).unwrap();
    assert!(
        check.passes(tolerance),
        "max rel err {} at {} (analytic {}, numeric {})",
        check.max_rel_err,
        check.worst_index,
        check.analytic_at_worst,
        check.numeric_at_worst
    );
}

#[test]
fn matmul_identity_case() {
    let tape = Tape::<f64>::new();
    let eye = tape
        .constant(&Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap())
        .unwrap();
    let b = tape
        .constant(&Tensor::from_rows(&[vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap())
        .unwrap();
    let out = eye.matmul(&b).unwrap();
    assert_eq!(out.value().data(), &[3.0, 4.0, 5.0, 6.0]);
}

#[test]
fn matmul_hand_arithmetic() {
    let tape = Tape::<f64>::new();
    let a = tape
        .constant(&Tensor::from_vec(1, 2, vec![1.0, 2.0]).unwrap())
        .unwrap();
    let b = tape
        .constant(&Tensor::from_vec(2, 1, vec![3.0, 4.0]).unwrap())
        .unwrap();
    assert_eq!(a.matmul(&b).unwrap().value().data(), &[11.0]);
}

#[test]
fn matmul_gradients_match_finite_differences() {
    let mut rng = Rng::seed_from_u64(11);
    let a0 = randn(&mut rng, 3, 4);
    let b0 = randn(&mut rng, 4, 2);
    // gradient w.r.t. the left operand
    let b = b0.clone();
    fd_check(
        &a0,
        move |tape, x| {
            let bv = tape.constant(&b)?;
            let w = tape.constant(&Tensor::full(3, 2, 0.37))?;
            x.matmul(&bv)?.mul(&w)?.sum_all()
        },
        1e-6,
    );
    // gradient w.r.t. the right operand
    let a = a0;
    fd_check(
        &b0,
        move |tape, x| {
            let av = tape.constant(&a)?;
            let w = tape.constant(&Tensor::full(3, 2, -0.61))?;
            av.matmul(x)?.mul(&w)?.sum_all()
        },
        1e-6,
    );
}

#[test]
fn matmul_shape_mismatch_is_error() {
    let tape = Tape::<f64>::new();
    let a = tape.constant(&Tensor::zeros(2, 3)).unwrap();
    let b = tape.constant(&Tensor::zeros(2, 3)).unwrap();
    assert!(matches!(
        a.matmul(&b),
        Err(CoreError::ShapeMismatch { op: "matmul", .. })
    ));
}

#[test]
fn softmax_uniform_logits() {
    let tape = Tape::<f64>::new();
    let x = tape
        .constant(&Tensor::from_vec(1, 3, vec![0.0, 0.0, 0.0]).unwrap())
        .unwrap();
    let y = x.softmax(1).unwrap();
    for &v in y.value().data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn softmax_is_stable_under_large_logits() {
    let tape = Tape::<f64>::new();
    let x = tape
        .constant(&Tensor::from_vec(1, 2, vec![1000.0, 0.0]).unwrap())
        .unwrap();
    let y = x.softmax(1).unwrap().value();
    assert!((y.data()[0] - 1.0).abs() < 1e-12);
    assert!(y.data()[1] >= 0.0 && y.data()[1] < 1e-12);
}

#[test]
fn softmax_rows_sum_to_one() {
    let mut rng = Rng::seed_from_u64(5);
    let x0 = randn(&mut rng, 7, 5);
    let tape = Tape::<f64>::new();
    let x = tape.constant(&x0).unwrap();
    let y = x.softmax(1).unwrap().value();
    for i in 0..7 {
        let s: f64 = y.row(i).iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }
    // axis 0 normalizes columns
    let y0 = tape.constant(&x0).unwrap().softmax(0).unwrap().value();
    for j in 0..5 {
        let s: f64 = (0..7).map(|i| y0.get(i, j)).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }
}

#[test]
fn softmax_gradient_matches_finite_differences() {
    let mut rng = Rng::seed_from_u64(21);
    let x0 = randn(&mut rng, 1, 5);
    let w = randn(&mut rng, 1, 5);
    fd_check(
        &x0,
        move |tape, x| {
            let w = tape.constant(&w)?;
            x.softmax(1)?.mul(&w)?.sum_all()
        },
        1e-6,
    );
}

#[test]
fn masked_softmax_contract() {
    let mut rng = Rng::seed_from_u64(31);
    let x0 = randn(&mut rng, 6, 4);
    let mask = vec![true, false, true, true];
    let tape = Tape::<f64>::new();
    let x = tape.constant(&x0).unwrap();
    let y = x.masked_softmax(&mask).unwrap().value();
    for i in 0..6 {
        assert_eq!(y.get(i, 1), 0.0, "masked column must be exactly zero");
        let s: f64 = [0, 2, 3].iter().map(|&j| y.get(i, j)).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }
    // gradient
    let w = randn(&mut rng, 6, 4);
    let mask2 = mask.clone();
    fd_check(
        &x0,
        move |tape, x| {
            let w = tape.constant(&w)?;
            x.masked_softmax(&mask2)?.mul(&w)?.sum_all()
        },
        1e-6,
    );
    // all-masked is an error
    let bad = x.masked_softmax(&[false, false, false, false]);
    assert!(bad.is_err());
}

#[test]
fn layer_norm_constant_row_is_zero_before_affine() {
    let tape = Tape::<f64>::new();
    let x = tape.constant(&Tensor::full(1, 6, 3.25)).unwrap();
    let gamma = tape.constant(&Tensor::full(1, 6, 1.0)).unwrap();
    let beta = tape.constant(&Tensor::zeros(1, 6)).unwrap();
    let y = x.layer_norm(&gamma, &beta).unwrap().value();
    for &v in y.data() {
        assert!(v.abs() < 1e-12);
    }
}

#[test]
fn layer_norm_gradients_match_finite_differences() {
    let mut rng = Rng::seed_from_u64(41);
    let x0 = randn(&mut rng, 3, 5);
    let g0 = randn(&mut rng, 1, 5);
    let b0 = randn(&mut rng, 1, 5);
    let w = randn(&mut rng, 3, 5);
    // w.r.t. the input
    {
        let (g0, b0, w) = (g0.clone(), b0.clone(), w.clone());
        fd_check(
            &x0,
            move |tape, x| {
                let gamma = tape.constant(&g0)?;
                let beta = tape.constant(&b0)?;
                let w = tape.constant(&w)?;
                x.layer_norm(&gamma, &beta)?.mul(&w)?.sum_all()
            },
            1e-6,
        );
    }
    // w.r.t. gamma
    {
        let (x0c, b0, w) = (x0.clone(), b0.clone(), w.clone());
        fd_check(
            &g0,
            move |tape, gamma| {
                let x = tape.constant(&x0c)?;
                let beta = tape.constant(&b0)?;
                let w = tape.constant(&w)?;
                x.layer_norm(gamma, &beta)?.mul(&w)?.sum_all()
            },
            1e-6,
        );
    }
    // w.r.t. beta
    {
        let (x0c, g0, w) = (x0.clone(), g0.clone(), w.clone());
        fd_check(
            &b0,
            move |tape, beta| {
                let x = tape.constant(&x0c)?;
                let gamma = tape.constant(&g0)?;
                let w = tape.constant(&w)?;
                x.layer_norm(&gamma, beta)?.mul(&w)?.sum_all()
            },
            1e-6,
        );
    }
}

#[test]
fn linear_identity() {
    let tape = Tape::<f64>::new();
    let x = tape
        .constant(&Tensor::from_rows(&[vec![1.0, -2.0], vec![0.5, 4.0]]).unwrap())
        .unwrap();
    let w = tape
        .constant(&Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap())
        .unwrap();
    let b = tape.constant(&Tensor::zeros(1, 2)).unwrap();
    let y = linear(&x, &w, &b).unwrap().value();
    assert_eq!(y.data(), x.value().data());
}

#[test]
fn elementwise_and_broadcast_gradients() {
    let mut rng = Rng::seed_from_u64(51);
    let x0 = randn(&mut rng, 4, 3);
    let other = randn(&mut rng, 4, 3);
    let rowv = randn(&mut rng, 1, 3);
    let colv = randn(&mut rng, 4, 1);

    let o = other.clone();
    fd_check(
        &x0,
        move |tape, x| {
            let o = tape.constant(&o)?;
            x.add(&o)?.mul(&o)?.sub(x)?.scale(1.7)?.add_scalar(0.3)?.mean_all()
        },
        1e-6,
    );

    let rv = rowv.clone();
    fd_check(
        &x0,
        move |tape, x| {
            let rv = tape.constant(&rv)?;
            x.add_rowvec(&rv)?.mul_rowvec(&rv)?.sum_all()
        },
        1e-6,
    );
    // gradient w.r.t. the row vector itself
    let xc = x0.clone();
    fd_check(
        &rowv,
        move |tape, rv| {
            let x = tape.constant(&xc)?;
            x.add_rowvec(rv)?.mul_rowvec(rv)?.sum_all()
        },
        1e-6,
    );

    let cv = colv.clone();
    fd_check(
        &x0,
        move |tape, x| {
            let cv = tape.constant(&cv)?;
            x.mul_colvec(&cv)?.sum_all()
        },
        1e-6,
    );
    let xc2 = x0.clone();
    fd_check(
        &colv,
        move |tape, cv| {
            let x = tape.constant(&xc2)?;
            x.mul_colvec(cv)?.mul_colvec(cv)?.sum_all()
        },
        1e-6,
    );
}

#[test]
fn unary_activation_gradients() {
    let mut rng = Rng::seed_from_u64(61);
    let x0 = randn(&mut rng, 2, 6);
    fd_check(&x0, |_tape, x| x.sigmoid()?.sum_all(), 1e-6);
    fd_check(&x0, |_tape, x| x.tanh_act()?.sum_all(), 1e-6);
    fd_check(&x0, |_tape, x| x.exp()?.mean_all(), 1e-6);
    // keep relu probes away from the kink at zero
    let shifted = Tensor::from_vec(
        2,
        6,
        x0.data()
            .iter()
            .map(|&v| if v.abs() < 0.1 { v + 0.2 } else { v })
            .collect(),
    )
    .unwrap();
    fd_check(&shifted, |_tape, x| x.relu()?.sum_all(), 1e-6);
    // recip away from zero
    let offset = Tensor::from_vec(2, 6, x0.data().iter().map(|&v| v + 3.0).collect()).unwrap();
    fd_check(&offset, |_tape, x| x.recip()?.sum_all(), 1e-6);
}

#[test]
fn structural_op_gradients() {
    let mut rng = Rng::seed_from_u64(71);
    let x0 = randn(&mut rng, 4, 5);
    fd_check(
        &x0,
        |tape, x| {
            let t = x.transpose()?;
            let w = tape.constant(&Tensor::full(5, 4, 0.23))?;
            t.mul(&w)?.sum_all()
        },
        1e-6,
    );
    fd_check(&x0, |_tape, x| x.col_sums()?.mul_rowvec(&_tape.constant(&Tensor::full(1, 5, 0.4))?)?.sum_all(), 1e-6);
    fd_check(
        &x0,
        |_tape, x| x.gather_rows(&[2, 0, 2])?.sum_all(),
        1e-6,
    );
    fd_check(&x0, |_tape, x| x.slice_cols(1, 4)?.sum_all(), 1e-6);

    let row0 = randn(&mut rng, 1, 5);
    fd_check(
        &row0,
        |tape, x| {
            let w = tape.constant(&Tensor::full(6, 5, 1.3))?;
            x.broadcast_row(6)?.mul(&w)?.sum_all()
        },
        1e-6,
    );

    // concat + select
    let other = randn(&mut rng, 4, 2);
    let o = other.clone();
    fd_check(
        &x0,
        move |tape, x| {
            let o = tape.constant(&o)?;
            let cat = Var::concat_cols(&[x, &o])?;
            cat.mul(&cat)?.mean_all()
        },
        1e-6,
    );
    let alt = randn(&mut rng, 4, 5);
    let a = alt.clone();
    let mask = vec![true, false, true, false];
    fd_check(
        &x0,
        move |tape, x| {
            let alt = tape.constant(&a)?;
            Var::select_rows(&mask, x, &alt)?.mul(x)?.sum_all()
        },
        1e-6,
    );
}

#[test]
fn stop_gradient_product_rule() {
    // loss = sum(SG(x) * x): only the non-detached factor contributes,
    // so d loss / dx equals the values of x.
    let tape = Tape::<f64>::new();
    let x0 = Tensor::from_vec(1, 3, vec![2.0, -3.0, 0.5]).unwrap();
    let x = tape.leaf(&x0, true).unwrap();
    let loss = x.stop_gradient().unwrap().mul(&x).unwrap().sum_all().unwrap();
    let grads = tape.backward(&loss).unwrap();
    assert_eq!(grads.get(&x).unwrap(), x0.data());
}

#[test]
fn stop_gradient_blocks_everything() {
    let tape = Tape::<f64>::new();
    let x = tape
        .leaf(&Tensor::from_vec(1, 4, vec![1.0, 2.0, 3.0, 4.0]).unwrap(), true)
        .unwrap();
    let loss = x.stop_gradient().unwrap().sum_all().unwrap();
    let grads = tape.backward(&loss).unwrap();
    assert!(grads.get(&x).is_none(), "gradient must be exactly zero");
}

#[test]
fn straight_through_routes_gradient() {
    // y = SG(a) + b - SG(b): dy/db == identity, dy/da == 0.
    let tape = Tape::<f64>::new();
    let a = tape
        .leaf(&Tensor::from_vec(1, 3, vec![5.0, 6.0, 7.0]).unwrap(), true)
        .unwrap();
    let b = tape
        .leaf(&Tensor::from_vec(1, 3, vec![0.1, 0.2, 0.3]).unwrap(), true)
        .unwrap();
    let y = a
        .stop_gradient()
        .unwrap()
        .add(&b)
        .unwrap()
        .sub(&b.stop_gradient().unwrap())
        .unwrap();
    // forward takes a's values
    for (got, want) in y.value().data().iter().zip([5.0, 6.0, 7.0]) {
        assert!((got - want).abs() < 1e-15);
    }
    let loss = y.sum_all().unwrap();
    let grads = tape.backward(&loss).unwrap();
    assert!(grads.get(&a).is_none());
    assert_eq!(grads.get(&b).unwrap(), &[1.0, 1.0, 1.0]);
}

#[test]
fn stop_gradient_is_forward_identity() {
    let mut rng = Rng::seed_from_u64(81);
    let x0 = randn(&mut rng, 5, 5);
    let tape = Tape::<f64>::new();
    let x = tape.leaf(&x0, true).unwrap();
    let sg = x.stop_gradient().unwrap();
    assert_eq!(x.value().data(), sg.value().data(), "byte-identical forward");
}

#[test]
fn non_finite_output_is_reported_with_op_name() {
    let tape = Tape::<f64>::new();
    let x = tape
        .constant(&Tensor::from_vec(1, 2, vec![0.0, 1.0]).unwrap())
        .unwrap();
    let err = x.recip().unwrap_err();
    match err {
        CoreError::NonFinite { op } => assert_eq!(op, "recip"),
        other => panic!("expected NonFinite, got {other:?}"),
    }
    let big = tape
        .constant(&Tensor::from_vec(1, 1, vec![800.0]).unwrap())
        .unwrap();
    assert!(matches!(
        big.exp(),
        Err(CoreError::NonFinite { op: "exp" })
    ));
}

#[test]
fn replay_same_seed_is_bit_identical() {
    let run = || {
        let mut rng = Rng::seed_from_u64(303);
        let tape = Tape::<f64>::new();
        let x = tape.leaf(&randn(&mut rng, 4, 4), true).unwrap();
        let w = tape.leaf(&randn(&mut rng, 4, 4), true).unwrap();
        let y = x.matmul(&w).unwrap().tanh_act().unwrap();
        let loss = mse(&y, &tape.constant(&randn(&mut rng, 4, 4)).unwrap()).unwrap();
        let grads = tape.backward(&loss).unwrap();
        (
            loss.item(),
            grads.get(&x).unwrap().to_vec(),
            grads.get(&w).unwrap().to_vec(),
        )
    };
    let (l1, gx1, gw1) = run();
    let (l2, gx2, gw2) = run();
    assert_eq!(l1.to_bits(), l2.to_bits());
    assert_eq!(gx1, gx2);
    assert_eq!(gw1, gw2);
}

#[test]
fn mlp_and_mse_gradients() {
    let mut rng = Rng::seed_from_u64(91);
    let x0 = randn(&mut rng, 3, 4);
    let w1 = randn(&mut rng, 4, 6);
    let b1 = randn(&mut rng, 1, 6);
    let w2 = randn(&mut rng, 6, 4);
    let b2 = randn(&mut rng, 1, 4);
    let target = randn(&mut rng, 3, 4);
    // w.r.t. the first weight matrix
    let (x0c, b1c, w2c, b2c, tc) = (x0.clone(), b1.clone(), w2.clone(), b2.clone(), target.clone());
    fd_check(
        &w1,
        move |tape, w1| {
            let x = tape.constant(&x0c)?;
            let b1 = tape.constant(&b1c)?;
            let w2 = tape.constant(&w2c)?;
            let b2 = tape.constant(&b2c)?;
            let t = tape.constant(&tc)?;
            mse(&mlp(&x, w1, &b1, &w2, &b2)?, &t)
        },
        1e-5,
    );
    // w.r.t. the input
    let (w1c, b1c, w2c, b2c, tc) = (w1, b1, w2, b2, target);
    fd_check(
        &x0,
        move |tape, x| {
            let w1 = tape.constant(&w1c)?;
            let b1 = tape.constant(&b1c)?;
            let w2 = tape.constant(&w2c)?;
            let b2 = tape.constant(&b2c)?;
            let t = tape.constant(&tc)?;
            mse(&mlp(x, &w1, &b1, &w2, &b2)?, &t)
        },
        1e-5,
    );
}

#[test]
fn grad_disabled_records_nothing() {
    let tape = Tape::<f64>::new();
    tape.set_grad_enabled(false);
    let x = tape
        .leaf(&Tensor::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap(), true)
        .unwrap();
    let y = x.matmul(&x).unwrap().sum_all().unwrap();
    assert_eq!(tape.num_records(), 0);
    assert!(!y.requires_grad());
}
