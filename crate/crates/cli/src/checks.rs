//! Finite-difference check registry behind the `gradcheck` subcommand.
//!
//! Every differentiable tape operation is covered by at least one check, and
//! the composites (GRU, attention step, slot update, decoder, the gradient
//! -carrying tail of the two-stage pipeline) get end-to-end checks of their
//! own. Each check returns its worst relative error; the registry asserts
//! coverage against the tape's op list so a new op cannot silently ship
//! unchecked.

use metaslot_core::codebook::{PrototypeCodebook, SlotMask};
use metaslot_core::decoder::{decode, reconstruction_loss, DecoderParams};
use metaslot_core::gradcheck::{compare, DEFAULT_STEP};
use metaslot_core::metaslot::{metaslot_forward, refine_tail, CodebookUpdatePolicy, MetaSlotConfig};
use metaslot_core::rng::Rng;
use metaslot_core::slots::{
    attention_step, gru_cell, init_slots, run_iterations, slot_update, InitMode,
    SlotAttentionParams, SlotState,
};
use metaslot_core::tape::{linear, mlp, Tape, Var, DIFFERENTIABLE_OPS};
use metaslot_core::tensor::Tensor;
use metaslot_core::{Result as CoreResult, Tape64, Tensor64, Var64};

pub struct Check {
    pub name: &'static str,
    /// Tape ops this check exercises (for the coverage assertion).
    pub covers: &'static [&'static str],
    pub tolerance: f64,
    #[allow(clippy::type_complexity)]
    pub run: Box<dyn Fn() -> CoreResult<f64> + Send>,
}

#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub pass: bool,
}

pub fn run_all(checks: &[Check]) -> Vec<CheckOutcome> {
    checks
        .iter()
        .map(|c| match (c.run)() {
            Ok(err) => CheckOutcome {
                name: c.name,
                max_rel_err: err,
                tolerance: c.tolerance,
                pass: err <= c.tolerance,
            },
            Err(_) => CheckOutcome {
                name: c.name,
                max_rel_err: f64::INFINITY,
                tolerance: c.tolerance,
                pass: false,
            },
        })
        .collect()
}

/// Ops named by the tape but not exercised by any check.
pub fn coverage_gaps(checks: &[Check]) -> Vec<&'static str> {
    DIFFERENTIABLE_OPS
        .iter()
        .filter(|op| !checks.iter().any(|c| c.covers.contains(op)))
        .copied()
        .collect()
}

fn randn(rng: &mut Rng, rows: usize, cols: usize) -> Tensor64 {
    Tensor64::from_vec(rows, cols, (0..rows * cols).map(|_| rng.normal_f64()).collect())
        .expect("shape")
}

/// Max relative FD error of d(loss)/d(x) for a scalar graph over one leaf.
fn fd_leaf(
    x0: &Tensor64,
    build: impl Fn(&Tape64, &Var64) -> CoreResult<Var64>,
) -> CoreResult<f64> {
    let tape = Tape::new();
    let x = tape.leaf(x0, true)?;
    let loss = build(&tape, &x)?;
    let grads = tape.backward(&loss)?;
    let analytic = grads.tensor(&x).into_data();
    let (r, c) = (x0.rows(), x0.cols());
    let mut f = |theta: &[f64]| -> CoreResult<f64> {
        let tape = Tape::new();
        let x = tape.leaf(&Tensor::from_vec(r, c, theta.to_vec())?, false)?;
        Ok(build(&tape, &x)?.item())
    };
    Ok(compare(&mut f, x0.data(), &analytic, DEFAULT_STEP)?.max_rel_err)
}

/// Worst FD error over every aggregator parameter tensor for a scalar graph.
fn fd_sa_params(
    params: &SlotAttentionParams<f64>,
    skip: &[&str],
    build: impl Fn(&Tape64, &metaslot_core::slots::BoundSlotAttention<f64>) -> CoreResult<Var64>,
) -> CoreResult<f64> {
    let tape = Tape::new();
    let bound = params.bind(&tape, true)?;
    let loss = build(&tape, &bound)?;
    let grads = tape.backward(&loss)?;
    let mut worst = 0.0f64;
    for (pos, (name, var)) in bound.named_vars().iter().enumerate() {
        if skip.contains(name) {
            continue;
        }
        let analytic = grads.tensor(var).into_data();
        let base = params.named_tensors()[pos].1.clone();
        let mut f = |theta: &[f64]| -> CoreResult<f64> {
            let mut probe = params.clone();
            probe.named_tensors_mut()[pos]
                .1
                .data_mut()
                .copy_from_slice(theta);
            let tape = Tape::new();
            let bound = probe.bind(&tape, false)?;
            Ok(build(&tape, &bound)?.item())
        };
        worst = worst.max(compare(&mut f, base.data(), &analytic, DEFAULT_STEP)?.max_rel_err);
    }
    Ok(worst)
}

fn sa_fixture(seed: u64, dim: usize, k: usize) -> SlotAttentionParams<f64> {
    let mut rng = Rng::seed_from_u64(seed);
    SlotAttentionParams::init(dim, k, 2 * dim, InitMode::LearnedQueries, true, &mut rng)
}

pub fn standard_checks() -> Vec<Check> {
    let mut checks: Vec<Check> = Vec::new();
    let mut add = |name: &'static str,
                   covers: &'static [&'static str],
                   tolerance: f64,
                   run: Box<dyn Fn() -> CoreResult<f64> + Send>| {
        checks.push(Check {
            name,
            covers,
            tolerance,
            run,
        });
    };

    add(
        "matmul",
        &["matmul"],
        1e-6,
        Box::new(|| {
            let mut rng = Rng::seed_from_u64(101);
            let b = randn(&mut rng, 4, 2);
            let w = randn(&mut rng, 3, 2);
            fd_leaf(&randn(&mut rng, 3, 4), move |tape, x| {
                let b = tape.constant(&b)?;
                let w = tape.constant(&w)?;
                x.matmul(&b)?.mul(&w)?.sum_all()
            })
        }),
    );

    add(
        "transpose",
        &["transpose"],
        1e-6,
        Box::new(|| {
            let mut rng = Rng::seed_from_u64(102);
            let w = randn(&mut rng, 5, 3);
            fd_leaf(&randn(&mut rng, 3, 5), move |tape, x| {
                x.transpose()?.mul(&tape.constant(&w)?)?.sum_all()
            })
        }),
    );

    add(
        "softmax_rows",
        &["softmax"],
        1e-6,
        Box::new(|| {
            let mut rng = Rng::seed_from_u64(103);
            let w = randn(&mut rng, 4, 5);
            fd_leaf(&randn(&mut rng, 4, 5), move |tape, x| {
                x.softmax(1)?.mul(&tape.constant(&w)?)?.sum_all()
            })
        }),
    );

    add(
        "softmax_cols",
        &["softmax", "transpose"],
        1e-6,
        Box::new(|| {
            let mut rng = Rng::seed_from_u64(104);
            let w = randn(&mut rng, 4, 5);
            fd_leaf(&randn(&mut rng, 4, 5), move |tape, x| {
                x.softmax(0)?.mul(&tape.constant(&w)?)?.sum_all()
            })
        }),
    );

    add(
        "masked_softmax",
        &["masked_softmax"],
        1e-6,
        Box::new(|| {
            let mut rng = Rng::seed_from_u64(105);
            let w = randn(&mut rng, 6, 4);
            fd_leaf(&randn(&mut rng, 6, 4), move |tape, x| {
                x.masked_softmax(&[true, false, true, true])?
                    .mul(&tape.constant(&w)?)?
                    .sum_all()
            })
        }),
    );

    add(
        "layer_norm",
        &["layer_norm"],
        1e-6,
        Box::new(|| {
            let mut rng = Rng::seed_from_u64(106);
            let gamma = randn(&mut rng, 1, 5);
            let beta = randn(&mut rng, 1, 5);
            let w = randn(&mut rng, 3, 5);
            let x0 = randn(&mut rng, 3, 5);
            // input gradient
            let (g2, b2, w2) = (gamma.clone(), beta.clone(), w.clone());
            let e1 = fd_leaf(&x0, move |tape, x| {
                x.layer_norm(&tape.constant(&g2)?, &tape.constant(&b2)?)?
                    .mul(&tape.constant(&w2)?)?
                    .sum_all()
            })?;
            // affine parameter gradients
            let (x2, b3, w3) = (x0.clone(), beta, w.clone());
            let e2 = fd_leaf(&gamma, move |tape, g| {
                tape.constant(&x2)?
                    .layer_norm(g, &tape.constant(&b3)?)?
                    .mul(&tape.constant(&w3)?)?
                    .sum_all()
            })?;
            let (x3, g3) = (x0, gamma);
            let e3 = fd_leaf(&Tensor::zeros(1, 5), move |tape, b| {
                tape.constant(&x3)?
                    .layer_norm(&tape.constant(&g3)?, b)?
                    .mul(&tape.constant(&w)?)?
                    .sum_all()
            })?;
            Ok(e1.max(e2).max(e3))
        }),
    );

    add(
        "elementwise",
        &["add", "sub", "mul"],
        1e-6,
        Box::new(|| {
            let mut rng = Rng::seed_from_u64(107);
            let o = randn(&mut rng, 4, 4);
            fd_leaf(&randn(&mut rng, 4, 4), move |tape, x| {
                let o = tape.constant(&o)?;
                x.add(&o)?.mul(x)?.sub(&o)?.mean_all()
            })
        }),
    );

    add(
        "scalar_ops",
        &["scale", "add_scalar"],
        1e-6,
        Box::new(|| {
            let mut rng = Rng::seed_from_u64(108);
            fd_leaf(&randn(&mut rng, 3, 3), |_tape, x| {
                x.scale(-1.7)?.add_scalar(0.4)?.mul(x)?.sum_all()
            })
        }),
    );

    add(
        "activations",
        &["relu", "sigmoid", "tanh", "exp", "recip"],
        1e-6,
        Box::new(|| {
            let mut rng = Rng::seed_from_u64(109);
            let x0 = Tensor64::from_vec(
                2,
                6,
                (0..12)
                    .map(|_| {
                        let v = rng.normal_f64();
                        if v.abs() < 0.1 {
                            v + 0.25
                        } else {
                            v
                        }
                    })
                    .collect(),
            )?;
            let e1 = fd_leaf(&x0, |_t, x| x.sigmoid()?.sum_all())?;
            let e2 = fd_leaf(&x0, |_t, x| x.tanh_act()?.sum_all())?;
            let e3 = fd_leaf(&x0, |_t, x| x.exp()?.mean_all())?;
            let e4 = fd_leaf(&x0, |_t, x| x.relu()?.sum_all())?;
            let shifted =
                Tensor64::from_vec(2, 6, x0.data().iter().map(|v| v + 3.0).collect())?;
            let e5 = fd_leaf(&shifted, |_t, x| x.recip()?.sum_all())?;
            Ok(e1.max(e2).max(e3).max(e4).max(e5))
        }),
    );

    add(
        "reductions",
        &["col_sums", "sum_all", "mean_all"],
        1e-6,
        Box::new(|| {
            let mut rng = Rng::seed_from_u64(110);
            let w = randn(&mut rng, 1, 5);
            let x0 = randn(&mut rng, 4, 5);
            let e1 = fd_leaf(&x0, move |tape, x| {
                x.col_sums()?.mul(&tape.constant(&w)?)?.sum_all()
            })?;
            let e2 = fd_leaf(&x0, |_t, x| x.mul(x)?.mean_all())?;
            Ok(e1.max(e2))
        }),
    );

    add(
        "broadcasts",
        &["add_rowvec", "mul_rowvec", "mul_colvec", "broadcast_row"],
        1e-6,
        Box::new(|| {
            let mut rng = Rng::seed_from_u64(111);
            let rv = randn(&mut rng, 1, 4);
            let cv = randn(&mut rng, 5, 1);
            let x0 = randn(&mut rng, 5, 4);
            let (rv2, cv2) = (rv.clone(), cv.clone());
            let e1 = fd_leaf(&x0, move |tape, x| {
                x.add_rowvec(&tape.constant(&rv2)?)?
                    .mul_rowvec(&tape.constant(&rv2)?)?
                    .mul_colvec(&tape.constant(&cv2)?)?
                    .sum_all()
            })?;
            let x2 = x0.clone();
            let e2 = fd_leaf(&rv, move |tape, r| {
                tape.constant(&x2)?.add_rowvec(r)?.mul_rowvec(r)?.sum_all()
            })?;
            let x3 = x0;
            let e3 = fd_leaf(&cv, move |tape, c| {
                tape.constant(&x3)?.mul_colvec(c)?.sum_all()
            })?;
            let row = randn(&mut rng, 1, 4);
            let w = randn(&mut rng, 6, 4);
            let e4 = fd_leaf(&row, move |tape, r| {
                r.broadcast_row(6)?.mul(&tape.constant(&w)?)?.sum_all()
            })?;
            Ok(e1.max(e2).max(e3).max(e4))
        }),
    );

    add(
        "structural",
        &["gather_rows", "slice_cols", "concat_cols", "select_rows"],
        1e-6,
        Box::new(|| {
            let mut rng = Rng::seed_from_u64(112);
            let x0 = randn(&mut rng, 4, 5);
            let e1 = fd_leaf(&x0, |_t, x| x.gather_rows(&[1, 3, 1])?.sum_all())?;
            let e2 = fd_leaf(&x0, |_t, x| {
                let sliced = x.slice_cols(1, 4)?;
                sliced.mul(&sliced)?.sum_all()
            })?;
            let other = randn(&mut rng, 4, 2);
            let o = other.clone();
            let e3 = fd_leaf(&x0, move |tape, x| {
                let cat = Var::concat_cols(&[x, &tape.constant(&o)?])?;
                cat.mul(&cat)?.mean_all()
            })?;
            let alt = randn(&mut rng, 4, 5);
            let e4 = fd_leaf(&x0, move |tape, x| {
                Var::select_rows(&[true, false, true, false], x, &tape.constant(&alt)?)?
                    .mul(x)?
                    .sum_all()
            })?;
            Ok(e1.max(e2).max(e3).max(e4))
        }),
    );

    add(
        "linear_mlp",
        &["matmul", "add_rowvec", "relu"],
        1e-5,
        Box::new(|| {
            let mut rng = Rng::seed_from_u64(113);
            let w1 = randn(&mut rng, 4, 6);
            let b1 = randn(&mut rng, 1, 6);
            let w2 = randn(&mut rng, 6, 3);
            let b2 = randn(&mut rng, 1, 3);
            let lin_w = randn(&mut rng, 3, 3);
            let lin_b = randn(&mut rng, 1, 3);
            fd_leaf(&randn(&mut rng, 5, 4), move |tape, x| {
                let out = mlp(
                    x,
                    &tape.constant(&w1)?,
                    &tape.constant(&b1)?,
                    &tape.constant(&w2)?,
                    &tape.constant(&b2)?,
                )?;
                let out = linear(&out, &tape.constant(&lin_w)?, &tape.constant(&lin_b)?)?;
                out.mul(&out)?.mean_all()
            })
        }),
    );

    add(
        "gru_cell",
        &["sigmoid", "tanh", "matmul", "add_rowvec", "mul", "add"],
        1e-4,
        Box::new(|| {
            let params = sa_fixture(114, 4, 3);
            let mut rng = Rng::seed_from_u64(115);
            let prev = randn(&mut rng, 3, 4);
            let input = randn(&mut rng, 3, 4);
            let w = randn(&mut rng, 3, 4);
            fd_sa_params(&params, &[], move |tape, bound| {
                gru_cell(
                    &tape.constant(&prev)?,
                    &tape.constant(&input)?,
                    &bound.gru,
                )?
                .mul(&tape.constant(&w)?)?
                .sum_all()
            })
        }),
    );

    add(
        "attention_step",
        &["masked_softmax", "layer_norm", "matmul", "recip", "mul_rowvec", "col_sums"],
        1e-4,
        Box::new(|| {
            let params = sa_fixture(116, 4, 3);
            let mut rng = Rng::seed_from_u64(117);
            let z = randn(&mut rng, 6, 4);
            let s = randn(&mut rng, 3, 4);
            let w = randn(&mut rng, 3, 4);
            fd_sa_params(&params, &[], move |tape, bound| {
                let state = SlotState {
                    slots: tape.constant(&s)?,
                    iteration: 0,
                };
                let (s_tilde, _) =
                    attention_step(&state, &tape.constant(&z)?, bound, &[true, false, true])?;
                s_tilde.mul(&tape.constant(&w)?)?.sum_all()
            })
        }),
    );

    add(
        "slot_update",
        &["select_rows", "layer_norm", "add"],
        1e-4,
        Box::new(|| {
            let params = sa_fixture(118, 4, 3);
            let mut rng = Rng::seed_from_u64(119);
            let s = randn(&mut rng, 3, 4);
            let st = randn(&mut rng, 3, 4);
            let w = randn(&mut rng, 3, 4);
            fd_sa_params(&params, &[], move |tape, bound| {
                let state = SlotState {
                    slots: tape.constant(&s)?,
                    iteration: 0,
                };
                let out = slot_update(&state, &tape.constant(&st)?, bound, &[true, true, false])?;
                out.slots.mul(&tape.constant(&w)?)?.sum_all()
            })
        }),
    );

    add(
        "decoder",
        &["broadcast_row", "slice_cols", "concat_cols", "mul_colvec", "masked_softmax"],
        1e-4,
        Box::new(|| {
            let mut rng = Rng::seed_from_u64(120);
            let dec = DecoderParams::init(6, 4, 8, None, &mut rng);
            let slots = randn(&mut rng, 3, 4);
            let target = randn(&mut rng, 6, 4);
            let mask = SlotMask::new(vec![true, true, false], vec![0, 1, 2])
                .expect("valid mask");
            fd_leaf(&slots, move |tape, s| {
                let bound = dec.bind(tape, false)?;
                let state = SlotState {
                    slots: s.clone(),
                    iteration: 0,
                };
                let out = decode(&state, &mask, &bound)?;
                reconstruction_loss(&out, &tape.constant(&target)?)
            })
        }),
    );

    add(
        "plain_attention_end_to_end",
        &["softmax", "stop-free-composite"],
        1e-4,
        Box::new(|| {
            // full backprop through two unrolled iterations plus the decoder;
            // no gradient cuts anywhere in this graph
            let params = sa_fixture(121, 4, 3);
            let mut rng = Rng::seed_from_u64(122);
            let dec = DecoderParams::init(6, 4, 8, None, &mut rng);
            let z = randn(&mut rng, 6, 4);
            fd_sa_params(
                &params,
                &["sa.queries_log_sigma", "sa.shared_mu", "sa.shared_log_sigma"],
                move |tape, bound| {
                    let mut dummy = Rng::seed_from_u64(0);
                    let s0 = init_slots(bound, 3, &mut dummy, true)?;
                    let all = [true, true, true];
                    let (state, _) =
                        run_iterations(&tape.constant(&z)?, &s0, 2, bound, &all, None, false)?;
                    let mask = SlotMask::all_retained(vec![0, 1, 2]);
                    let out = decode(&state, &mask, &dec.bind(tape, false)?)?;
                    reconstruction_loss(&out, &tape.constant(&z)?)
                },
            )
        }),
    );

    add(
        "two_stage_tail_end_to_end",
        &["full-pipeline-tail"],
        1e-4,
        Box::new(|| {
            // the gradient-carrying tail of the full pipeline at the spec'd
            // audit size: N=6, D=4, K=3, T=2, 4 prototypes
            let params = sa_fixture(123, 4, 3);
            let mut rng = Rng::seed_from_u64(124);
            let dec = DecoderParams::init(6, 4, 8, None, &mut rng);
            let z = randn(&mut rng, 6, 4);
            let codebook =
                PrototypeCodebook::init(&mut Rng::seed_from_u64(125), 4, 4, 1.0, 0.05, 1000)?;
            let ms_cfg = MetaSlotConfig::new(3, 2, 0.5);

            // frozen prefix at the base point
            let base_tape = Tape64::new();
            let base_sa = params.bind(&base_tape, false)?;
            let mut cb = codebook.clone();
            let mut fwd_rng = Rng::seed_from_u64(126);
            let base = metaslot_forward(
                &base_tape.constant(&z)?,
                &base_sa,
                &mut cb,
                &ms_cfg,
                &mut fwd_rng,
                false,
                CodebookUpdatePolicy::Deferred,
                0,
            )?;
            let prefix = base.s_stage2_prefix.clone();
            let mask = base.mask.clone();

            let zc = z.clone();
            let dec2 = dec.clone();
            let prefix2 = prefix.clone();
            let mask2 = mask.clone();
            let e_params = fd_sa_params(
                &params,
                &[
                    "sa.queries_mu",
                    "sa.queries_log_sigma",
                    "sa.shared_mu",
                    "sa.shared_log_sigma",
                ],
                move |tape, bound| {
                    let mut dummy = Rng::seed_from_u64(0);
                    let init = init_slots(bound, 3, &mut dummy, true)?;
                    let s_entry = tape.constant(&prefix2)?;
                    let (s_final, _, _) =
                        refine_tail(&s_entry, &init, &tape.constant(&zc)?, bound, &mask2, true, 1)?;
                    let out = decode(&s_final, &mask2, &dec2.bind(tape, false)?)?;
                    reconstruction_loss(&out, &tape.constant(&zc)?)
                },
            )?;

            // the features, through the live tail only
            let params2 = params.clone();
            let dec3 = dec.clone();
            let mask3 = mask.clone();
            let prefix3 = prefix.clone();
            let e_z = fd_leaf(&z, move |tape, zv| {
                let bound = params2.bind(tape, false)?;
                let mut dummy = Rng::seed_from_u64(0);
                let init = init_slots(&bound, 3, &mut dummy, true)?;
                let s_entry = tape.constant(&prefix3)?;
                let (s_final, _, _) = refine_tail(&s_entry, &init, zv, &bound, &mask3, true, 1)?;
                let out = decode(&s_final, &mask3, &dec3.bind(tape, false)?)?;
                reconstruction_loss(&out, zv)
            })?;

            // the straight-through query gradient against finite differences
            // over the state entering the final step
            let tape = Tape64::new();
            let bound = params.bind(&tape, true)?;
            let mut dummy = Rng::seed_from_u64(0);
            let init = init_slots(&bound, 3, &mut dummy, true)?;
            let s_entry = tape.constant(&prefix)?;
            let (s_final, _, entered) = refine_tail(
                &s_entry,
                &init,
                &tape.constant(&z)?,
                &bound,
                &mask,
                true,
                1,
            )?;
            let out = decode(&s_final, &mask, &dec.bind(&tape, false)?)?;
            let loss = reconstruction_loss(&out, &tape.constant(&z)?)?;
            let grads = tape.backward(&loss)?;
            let analytic = grads.tensor(&bound.queries_mu).into_data();
            let params3 = params.clone();
            let mask4 = mask.clone();
            let mut f = |theta: &[f64]| -> CoreResult<f64> {
                let tape = Tape64::new();
                let bound = params3.bind(&tape, false)?;
                let state = SlotState {
                    slots: tape.constant(&Tensor::from_vec(3, 4, theta.to_vec())?)?,
                    iteration: 1,
                };
                let (s_tilde, _) =
                    attention_step(&state, &tape.constant(&z)?, &bound, mask4.flags())?;
                let s_final = slot_update(&state, &s_tilde, &bound, mask4.flags())?;
                let out = decode(&s_final, &mask4, &dec.bind(&tape, false)?)?;
                Ok(reconstruction_loss(&out, &tape.constant(&z)?)?.item())
            };
            let e_init = compare(&mut f, entered.data(), &analytic, DEFAULT_STEP)?.max_rel_err;

            Ok(e_params.max(e_z).max(e_init))
        }),
    );

    add(
        "stop_gradient_exactness",
        &["stop-gradient-contract"],
        0.0,
        Box::new(|| {
            // exact containment checks; any leak returns 1.0
            let tape = Tape64::new();
            let x = tape.leaf(&Tensor::from_vec(1, 3, vec![1.5, -2.0, 0.25])?, true)?;
            let y = tape.leaf(&Tensor::from_vec(1, 3, vec![0.5, 0.125, -1.0])?, true)?;
            let st = x
                .stop_gradient()?
                .add(&y)?
                .sub(&y.stop_gradient()?)?;
            // forward identity
            if st.value().data() != x.value().data() {
                return Ok(1.0);
            }
            let loss = st.sum_all()?;
            let grads = tape.backward(&loss)?;
            if grads.get(&x).is_some() {
                return Ok(1.0);
            }
            match grads.get(&y) {
                Some(g) if g.iter().all(|&v| v == 1.0) => Ok(0.0),
                _ => Ok(1.0),
            }
        }),
    );

    checks
}

/// Negative-control fixture: a check whose analytic gradient is deliberately
/// corrupted. The reporting machinery must flag it as a failure.
pub fn corrupted_backward_check() -> Check {
    Check {
        name: "negative_control_corrupted_backward",
        covers: &[],
        tolerance: 1e-4,
        run: Box::new(|| {
            let mut rng = Rng::seed_from_u64(999);
            let x0 = randn(&mut rng, 3, 3);
            let tape = Tape64::new();
            let x = tape.leaf(&x0, true)?;
            let loss = x.mul(&x)?.sum_all()?;
            let grads = tape.backward(&loss)?;
            // corrupt the analytic gradient by one percent
            let analytic: Vec<f64> = grads
                .get(&x)
                .expect("gradient exists")
                .iter()
                .map(|g| g * 1.01)
                .collect();
            let mut f = |theta: &[f64]| -> CoreResult<f64> {
                let tape = Tape64::new();
                let x = tape.leaf(&Tensor::from_vec(3, 3, theta.to_vec())?, false)?;
                Ok(x.mul(&x)?.sum_all()?.item())
            };
            Ok(compare(&mut f, x0.data(), &analytic, DEFAULT_STEP)?.max_rel_err)
        }),
    }
}
