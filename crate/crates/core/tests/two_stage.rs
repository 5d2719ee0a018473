//! End-to-end contracts of the two-stage pipeline: noise schedule, gradient
//! truncation, straight-through coupling, mask algebra, ablation reductions.

use metaslot_core::codebook::{EmaAssignment, PrototypeCodebook};
use metaslot_core::decoder::{decode, reconstruction_loss, DecoderParams};
use metaslot_core::gradcheck::{compare, DEFAULT_STEP};
use metaslot_core::metaslot::{
    inject_noise, metaslot_forward, refine_tail, update_codebook, CodebookUpdatePolicy,
    MetaSlotConfig, NoiseSchedule,
};
use metaslot_core::rng::Rng;
use metaslot_core::slots::{
    attention_step, init_slots, slot_update, InitMode, SlotAttentionParams, SlotState,
};
use metaslot_core::tape::Tape;
use metaslot_core::tensor::Tensor;
use metaslot_core::Result;

const DIM: usize = 4;
const K: usize = 3;
const N: usize = 6;
const T_ITERS: usize = 2;
const K_PROTOS: usize = 4;

fn randn(rng: &mut Rng, rows: usize, cols: usize) -> Tensor<f64> {
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.normal_f64()).collect()).unwrap()
}

struct Fixture {
    sa: SlotAttentionParams<f64>,
    dec: DecoderParams<f64>,
    codebook: PrototypeCodebook<f64>,
    z: Tensor<f64>,
    target: Tensor<f64>,
}

fn fixture(seed: u64) -> Fixture {
    let mut rng = Rng::seed_from_u64(seed);
    let sa = SlotAttentionParams::init(DIM, K, 2 * DIM, InitMode::LearnedQueries, true, &mut rng);
    let dec = DecoderParams::init(N, DIM, 2 * DIM, None, &mut rng);
    let codebook = PrototypeCodebook::init(&mut rng, K_PROTOS, DIM, 1.0, 0.05, 1000).unwrap();
    let z = randn(&mut rng, N, DIM);
    let target = z.clone();
    Fixture {
        sa,
        dec,
        codebook,
        z,
        target,
    }
}

fn cfg() -> MetaSlotConfig {
    MetaSlotConfig::new(K, T_ITERS, 0.5)
}

#[test]
fn noise_schedule_direct_evaluation() {
    let s = NoiseSchedule::new(1.0, 4).unwrap();
    assert_eq!(s.alpha(0).unwrap(), 1.0);
    assert!((s.alpha(1).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    assert!((s.alpha(2).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    assert_eq!(s.alpha(3).unwrap(), 0.0);
    assert!(s.alpha(4).is_err());

    // disabled-noise ablation: zero amplitude everywhere
    let z = NoiseSchedule::new(0.0, 5).unwrap();
    for t in 0..5 {
        assert_eq!(z.alpha(t).unwrap(), 0.0);
    }

    // endpoints are exact for every configured horizon
    for steps in 2..9 {
        for sigma in [0.1, 0.5, 2.0] {
            let s = NoiseSchedule::new(sigma, steps).unwrap();
            assert_eq!(s.alpha(0).unwrap(), sigma);
            assert_eq!(s.alpha(steps - 1).unwrap(), 0.0);
        }
    }

    // a single-step schedule degenerates to zero
    assert_eq!(NoiseSchedule::new(3.0, 1).unwrap().alpha(0).unwrap(), 0.0);
}

#[test]
fn inject_noise_zero_alpha_is_bit_identical_and_free() {
    let mut rng = Rng::seed_from_u64(1);
    let z0 = randn(&mut rng, 5, 3);
    let tape = Tape::new();
    let z = tape.constant(&z0).unwrap();
    let mut noise_rng = Rng::seed_from_u64(2);
    let before = noise_rng.clone();
    let out = inject_noise(&z, 0.0, &mut noise_rng).unwrap();
    let same_bits = out
        .value()
        .data()
        .iter()
        .zip(z0.data())
        .all(|(a, b)| a.to_bits() == b.to_bits());
    assert!(same_bits);
    // the random stream must not advance
    assert_eq!(noise_rng.clone().next_u64(), before.clone().next_u64());
    // and no new randomness-dependent node: values are shared
    assert_eq!(tape.num_records(), 0);
}

#[test]
fn inject_noise_sample_statistics() {
    let tape = Tape::new();
    let z = tape.constant(&Tensor::zeros(200, 50)).unwrap();
    let mut rng = Rng::seed_from_u64(3);
    let noisy = inject_noise(&z, 1.0, &mut rng).unwrap().value();
    let n = noisy.len() as f64;
    let mean: f64 = noisy.data().iter().sum::<f64>() / n;
    let std = (noisy
        .data()
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / n)
        .sqrt();
    assert!((std - 1.0).abs() < 0.05, "std {std}");
}

#[test]
fn inject_noise_leaves_feature_gradient_untouched() {
    let mut rng = Rng::seed_from_u64(4);
    let z0 = randn(&mut rng, 4, 3);
    let tape = Tape::new();
    let z = tape.leaf(&z0, true).unwrap();
    let noisy = inject_noise(&z, 0.7, &mut rng).unwrap();
    let loss = noisy.sum_all().unwrap();
    let grads = tape.backward(&loss).unwrap();
    assert!(grads.get(&z).unwrap().iter().all(|&g| g == 1.0));
}

#[test]
fn forward_mask_and_attention_contracts() {
    let f = fixture(10);
    let tape = Tape::new();
    let bound = f.sa.bind(&tape, true).unwrap();
    let z = tape.constant(&f.z).unwrap();
    let mut codebook = f.codebook.clone();
    let mut rng = Rng::seed_from_u64(11);
    let out = metaslot_forward(&z, &bound, &mut codebook, &cfg(), &mut rng, false, CodebookUpdatePolicy::Deferred, 0).unwrap();

    assert_eq!(out.active_count, out.mask.active_count());
    assert!(out.active_count <= K);
    // active count equals the number of distinct prototype indices
    let mut distinct = out.idx().to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    assert_eq!(out.active_count, distinct.len());

    // retained idx pairwise distinct
    let retained: Vec<usize> = out
        .mask
        .retained_slots()
        .iter()
        .map(|&s| out.idx()[s])
        .collect();
    let mut sorted = retained.clone();
    sorted.sort_unstable();
    sorted.dedup();
    assert_eq!(sorted.len(), retained.len());

    // attention: masked columns exactly zero, retained rows sum to one
    let attn = out.attn.value();
    for i in 0..N {
        let mut sum = 0.0;
        for slot in 0..K {
            if out.mask.retained(slot) {
                sum += attn.get(i, slot);
            } else {
                assert_eq!(attn.get(i, slot), 0.0);
            }
        }
        assert!((sum - 1.0).abs() < 1e-12);
    }

    // masked slot rows pass through the final step unchanged (bitwise)
    let s_final = out.s_final.slots.value();
    for slot in 0..K {
        if !out.mask.retained(slot) {
            let a: Vec<u64> = s_final.row(slot).iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = out.s_pre_final.row(slot).iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b);
        }
    }
}

#[test]
fn collapse_to_single_prototype_is_legal() {
    let f = fixture(12);
    // all prototypes identical: every slot quantizes to index 0
    let same = Tensor::from_vec(
        K_PROTOS,
        DIM,
        (0..K_PROTOS)
            .flat_map(|_| vec![0.3, -0.1, 0.8, 0.05])
            .collect(),
    )
    .unwrap();
    let mut codebook = PrototypeCodebook::new(same, vec![0; K_PROTOS], 0.05, 1000).unwrap();
    let tape = Tape::new();
    let bound = f.sa.bind(&tape, false).unwrap();
    let z = tape.constant(&f.z).unwrap();
    let mut rng = Rng::seed_from_u64(13);
    let out = metaslot_forward(&z, &bound, &mut codebook, &cfg(), &mut rng, false, CodebookUpdatePolicy::Deferred, 0).unwrap();
    assert_eq!(out.active_count, 1);
    assert_eq!(out.idx(), &[0, 0, 0]);
    let attn = out.attn.value();
    let retained = out.mask.retained_slots()[0];
    for i in 0..N {
        assert!((attn.get(i, retained) - 1.0).abs() < 1e-12);
    }
}

#[test]
fn final_step_is_deterministic() {
    let f = fixture(14);
    let run = || {
        let tape = Tape::new();
        let bound = f.sa.bind(&tape, false).unwrap();
        let z = tape.constant(&f.z).unwrap();
        let mut codebook = f.codebook.clone();
        let mut rng = Rng::seed_from_u64(15);
        let out = metaslot_forward(&z, &bound, &mut codebook, &cfg(), &mut rng, false, CodebookUpdatePolicy::Deferred, 0).unwrap();
        out.s_final
            .slots
            .value()
            .data()
            .iter()
            .map(|v| v.to_bits())
            .collect::<Vec<u64>>()
    };
    assert_eq!(run(), run());
}

/// Reference implementation of the flags-off reduction: 2T iterations of
/// learned-query slot attention with every inter-iteration state detached
/// and the straight-through coupling before the last step.
fn reference_learned_query(
    f: &Fixture,
    tape: &Tape<f64>,
) -> (Vec<u64>, Vec<f64>) {
    let bound = f.sa.bind(tape, true).unwrap();
    let z = tape.constant(&f.z).unwrap();
    let mut rng = Rng::seed_from_u64(0);
    let init = init_slots(&bound, K, &mut rng, true).unwrap();
    let mask = [true; K];
    let mut state = SlotState {
        slots: init.slots.stop_gradient().unwrap(),
        iteration: 0,
    };
    let total = 2 * T_ITERS;
    for t in 0..total {
        if t > 0 {
            state = SlotState {
                slots: state.slots.stop_gradient().unwrap(),
                iteration: state.iteration,
            };
        }
        if t == total - 1 {
            state = SlotState {
                slots: state
                    .slots
                    .stop_gradient()
                    .unwrap()
                    .add(&init.slots)
                    .unwrap()
                    .sub(&init.slots.stop_gradient().unwrap())
                    .unwrap(),
                iteration: state.iteration,
            };
        }
        let (s_tilde, _) = attention_step(&state, &z, &bound, &mask).unwrap();
        state = slot_update(&state, &s_tilde, &bound, &mask).unwrap();
    }
    let bits = state
        .slots
        .value()
        .data()
        .iter()
        .map(|v| v.to_bits())
        .collect();
    let loss = state.slots.mul(&state.slots).unwrap().mean_all().unwrap();
    let grads = tape.backward(&loss).unwrap();
    (bits, grads.tensor(&bound.queries_mu).into_data())
}

#[test]
fn flags_off_reduces_to_learned_query_attention() {
    let f = fixture(16);
    let mut config = cfg();
    config.enable_noise = false;
    config.enable_mask = false;
    config.bypass_codebook = true;

    let tape = Tape::new();
    let bound = f.sa.bind(&tape, true).unwrap();
    let z = tape.constant(&f.z).unwrap();
    let mut codebook = f.codebook.clone();
    let mut rng = Rng::seed_from_u64(0);
    let out = metaslot_forward(&z, &bound, &mut codebook, &config, &mut rng, false, CodebookUpdatePolicy::Deferred, 0).unwrap();
    assert_eq!(out.active_count, K, "bypass keeps every slot");
    let got_bits: Vec<u64> = out
        .s_final
        .slots
        .value()
        .data()
        .iter()
        .map(|v| v.to_bits())
        .collect();
    let loss = out
        .s_final
        .slots
        .mul(&out.s_final.slots)
        .unwrap()
        .mean_all()
        .unwrap();
    let grads = tape.backward(&loss).unwrap();
    let got_mu_grad = grads.tensor(&bound.queries_mu).into_data();

    let ref_tape = Tape::new();
    let (want_bits, want_mu_grad) = reference_learned_query(&f, &ref_tape);
    assert_eq!(got_bits, want_bits, "values must match bit-for-bit");
    for (a, b) in got_mu_grad.iter().zip(&want_mu_grad) {
        assert_eq!(a.to_bits(), b.to_bits(), "query gradients must match");
    }
}

/// Builds the full pipeline loss; returns (loss, per-parameter analytic
/// grads in named order, grad of z, grad of the query means).
#[allow(clippy::type_complexity)]
fn full_pipeline_grads(
    f: &Fixture,
    z_requires: bool,
) -> (f64, Vec<Vec<f64>>, Option<Vec<f64>>, Vec<u64>) {
    let tape = Tape::new();
    let sa = f.sa.bind(&tape, true).unwrap();
    let dec = f.dec.bind(&tape, true).unwrap();
    let z = tape.leaf(&f.z, z_requires).unwrap();
    let mut codebook = f.codebook.clone();
    let mut rng = Rng::seed_from_u64(21);
    let out = metaslot_forward(&z, &sa, &mut codebook, &cfg(), &mut rng, false, CodebookUpdatePolicy::Deferred, 0).unwrap();
    let decoded = decode(&out.s_final, &out.mask, &dec).unwrap();
    let loss = reconstruction_loss(&decoded, &tape.constant(&f.target).unwrap()).unwrap();
    let grads = tape.backward(&loss).unwrap();

    // the constant stage-two entry must never receive gradient
    assert!(grads.get(&out.stage2_start).is_none());

    let mut all = Vec::new();
    for (_, var) in sa.named_vars() {
        all.push(grads.tensor(var).into_data());
    }
    for (_, var) in dec.named_vars() {
        all.push(grads.tensor(var).into_data());
    }
    let zg = grads.get(&z).map(|g| g.to_vec());
    let out_bits = out
        .s_final
        .slots
        .value()
        .data()
        .iter()
        .map(|v| v.to_bits())
        .collect();
    (loss.item(), all, zg, out_bits)
}

/// Frozen-tail route: stage one, quantization and the stage-two prefix are
/// computed once and entered as constants; only the straight-through step,
/// the final refinement and the decoder are rebuilt.
#[allow(clippy::type_complexity)]
fn frozen_tail_grads(
    f: &Fixture,
    sa_override: Option<&SlotAttentionParams<f64>>,
    dec_override: Option<&DecoderParams<f64>>,
    z_override: Option<&Tensor<f64>>,
) -> (f64, Vec<Vec<f64>>, Option<Vec<f64>>) {
    // compute the frozen prefix at the BASE point
    let base_tape = Tape::new();
    let base_sa = f.sa.bind(&base_tape, false).unwrap();
    let base_z = base_tape.constant(&f.z).unwrap();
    let mut codebook = f.codebook.clone();
    let mut rng = Rng::seed_from_u64(21);
    let base_out =
        metaslot_forward(&base_z, &base_sa, &mut codebook, &cfg(), &mut rng, false, CodebookUpdatePolicy::Deferred, 0).unwrap();

    // rebuild only the differentiable tail, possibly at perturbed inputs
    let sa_params = sa_override.unwrap_or(&f.sa);
    let dec_params = dec_override.unwrap_or(&f.dec);
    let z_value = z_override.unwrap_or(&f.z);
    let tape = Tape::new();
    let sa = sa_params.bind(&tape, true).unwrap();
    let dec = dec_params.bind(&tape, true).unwrap();
    let z = tape.leaf(z_value, true).unwrap();
    let mut tail_rng = Rng::seed_from_u64(0);
    let init = init_slots(&sa, K, &mut tail_rng, true).unwrap();
    let s_entry = tape.constant(&base_out.s_stage2_prefix).unwrap();
    let (s_final, _attn, _entered) = refine_tail(
        &s_entry,
        &init,
        &z,
        &sa,
        &base_out.mask,
        true,
        T_ITERS - 1,
    )
    .unwrap();
    let decoded = decode(&s_final, &base_out.mask, &dec).unwrap();
    let loss = reconstruction_loss(&decoded, &tape.constant(&f.target).unwrap()).unwrap();
    let grads = tape.backward(&loss).unwrap();

    let mut all = Vec::new();
    for (_, var) in sa.named_vars() {
        all.push(grads.tensor(var).into_data());
    }
    for (_, var) in dec.named_vars() {
        all.push(grads.tensor(var).into_data());
    }
    let zg = grads.get(&z).map(|g| g.to_vec());
    (loss.item(), all, zg)
}

#[test]
fn truncation_replacing_detached_stages_with_constants_is_exact() {
    let f = fixture(20);
    let (loss_full, grads_full, zg_full, _) = full_pipeline_grads(&f, true);
    let (loss_frozen, grads_frozen, zg_frozen) = frozen_tail_grads(&f, None, None, None);

    assert_eq!(loss_full.to_bits(), loss_frozen.to_bits());
    assert_eq!(grads_full.len(), grads_frozen.len());
    for (i, (a, b)) in grads_full.iter().zip(&grads_frozen).enumerate() {
        for (x, y) in a.iter().zip(b) {
            assert_eq!(
                x.to_bits(),
                y.to_bits(),
                "parameter {i}: gradients must be bit-identical"
            );
        }
    }
    // gradient w.r.t. the features: the detached stages contribute exactly
    // zero, so the full pipeline matches the tail-only route bitwise
    let zg_full = zg_full.expect("z requires grad");
    let zg_frozen = zg_frozen.expect("z requires grad");
    for (x, y) in zg_full.iter().zip(&zg_frozen) {
        assert_eq!(x.to_bits(), y.to_bits());
    }
}

#[test]
fn recording_detached_stages_changes_nothing() {
    // with z constant, the detached stages never record; with z required
    // they do record but stay unreachable — outputs and parameter
    // gradients must be bit-identical either way
    let f = fixture(22);
    let (loss_a, grads_a, _, bits_a) = full_pipeline_grads(&f, true);
    let (loss_b, grads_b, _, bits_b) = full_pipeline_grads(&f, false);
    assert_eq!(loss_a.to_bits(), loss_b.to_bits());
    assert_eq!(bits_a, bits_b);
    for (a, b) in grads_a.iter().zip(&grads_b) {
        for (x, y) in a.iter().zip(b) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}

#[test]
fn tail_gradients_match_finite_differences() {
    let f = fixture(24);
    let (_, analytic, zg, _) = full_pipeline_grads(&f, true);

    // Every aggregator parameter tensor except the learnable queries. The
    // straight-through coupling makes the forward value constant in the
    // query means by construction, so their gradient gets its own oracle
    // below (finite differences over the state entering the final step).
    let sa_named = f.sa.named_tensors();
    let init_family = [
        "sa.queries_mu",
        "sa.queries_log_sigma",
        "sa.shared_mu",
        "sa.shared_log_sigma",
    ];
    for pos in 0..sa_named.len() {
        let base = sa_named[pos].1.clone();
        let name = sa_named[pos].0;
        if init_family.contains(&name) {
            continue;
        }
        let mut probe_fn = |theta: &[f64]| -> Result<f64> {
            let mut probe = f.sa.clone();
            probe.named_tensors_mut()[pos]
                .1
                .data_mut()
                .copy_from_slice(theta);
            Ok(frozen_tail_grads(&f, Some(&probe), None, None).0)
        };
        let check = compare(&mut probe_fn, base.data(), &analytic[pos], DEFAULT_STEP).unwrap();
        assert!(
            check.passes(1e-4),
            "{name}: rel err {} (analytic {}, numeric {})",
            check.max_rel_err,
            check.analytic_at_worst,
            check.numeric_at_worst
        );
    }

    // Straight-through oracle: the analytic gradient of the query means must
    // equal d loss / d (slots entering the final step), measured by finite
    // differences with the entering state as the free variable.
    {
        // recover the frozen mask and entering state at the base point
        let base_tape = Tape::new();
        let base_sa = f.sa.bind(&base_tape, false).unwrap();
        let base_z = base_tape.constant(&f.z).unwrap();
        let mut codebook = f.codebook.clone();
        let mut rng = Rng::seed_from_u64(21);
        let base_out =
            metaslot_forward(&base_z, &base_sa, &mut codebook, &cfg(), &mut rng, false, CodebookUpdatePolicy::Deferred, 0)
                .unwrap();
        let mask = base_out.mask.clone();
        let entering = base_out.s_pre_final.clone();

        let mut probe_fn = |theta: &[f64]| -> Result<f64> {
            let tape = Tape::new();
            let sa = f.sa.bind(&tape, false)?;
            let dec = f.dec.bind(&tape, false)?;
            let z = tape.constant(&f.z)?;
            let state = SlotState {
                slots: tape.constant(&Tensor::from_vec(K, DIM, theta.to_vec())?)?,
                iteration: T_ITERS - 1,
            };
            let (s_tilde, _) = attention_step(&state, &z, &sa, mask.flags())?;
            let s_final = slot_update(&state, &s_tilde, &sa, mask.flags())?;
            let decoded = decode(&s_final, &mask, &dec)?;
            Ok(reconstruction_loss(&decoded, &tape.constant(&f.target)?)?.item())
        };
        let mu_pos = sa_named.iter().position(|(n, _)| *n == "sa.queries_mu").unwrap();
        let check = compare(&mut probe_fn, entering.data(), &analytic[mu_pos], DEFAULT_STEP)
            .unwrap();
        assert!(
            check.passes(1e-4),
            "straight-through init gradient: rel err {}",
            check.max_rel_err
        );

        // the untouched init tensors carry exactly zero gradient here
        for name in ["sa.queries_log_sigma", "sa.shared_mu", "sa.shared_log_sigma"] {
            let pos = sa_named.iter().position(|(n, _)| *n == name).unwrap();
            assert!(
                analytic[pos].iter().all(|&g| g == 0.0),
                "{name} must receive no gradient with deterministic queries"
            );
        }
    }

    // every decoder parameter tensor
    let dec_named = f.dec.named_tensors();
    for pos in 0..dec_named.len() {
        let base = dec_named[pos].1.clone();
        let name = dec_named[pos].0;
        let mut probe_fn = |theta: &[f64]| -> Result<f64> {
            let mut probe = f.dec.clone();
            probe.named_tensors_mut()[pos]
                .1
                .data_mut()
                .copy_from_slice(theta);
            Ok(frozen_tail_grads(&f, None, Some(&probe), None).0)
        };
        let check = compare(
            &mut probe_fn,
            base.data(),
            &analytic[sa_named.len() + pos],
            DEFAULT_STEP,
        )
        .unwrap();
        assert!(check.passes(1e-4), "{name}: rel err {}", check.max_rel_err);
    }

    // the features, through the live tail only
    let zg = zg.unwrap();
    let mut probe_fn = |theta: &[f64]| -> Result<f64> {
        let z = Tensor::from_vec(N, DIM, theta.to_vec())?;
        Ok(frozen_tail_grads(&f, None, None, Some(&z)).0)
    };
    let check = compare(&mut probe_fn, f.z.data(), &zg, DEFAULT_STEP).unwrap();
    assert!(check.passes(1e-4), "z: rel err {}", check.max_rel_err);
}

#[test]
fn training_updates_codebook_from_detached_slots() {
    let f = fixture(26);
    let tape = Tape::new();
    let bound = f.sa.bind(&tape, true).unwrap();
    let z = tape.constant(&f.z).unwrap();
    let mut codebook = f.codebook.clone();
    let before = codebook.vectors().clone();
    let mut rng = Rng::seed_from_u64(27);
    let out = metaslot_forward(&z, &bound, &mut codebook, &cfg(), &mut rng, true, CodebookUpdatePolicy::PerScene, 7).unwrap();

    // assigned prototypes moved and were stamped; others untouched
    let mut any_moved = false;
    for k in 0..K_PROTOS {
        let moved = codebook
            .prototype(k)
            .iter()
            .zip(before.row(k))
            .any(|(a, b)| a != b);
        if codebook.last_used_step()[k] == 7 {
            any_moved |= moved;
        } else {
            assert!(!moved, "unassigned prototype {k} must not move");
        }
    }
    assert!(any_moved);

    // pooled update across a batch is order-insensitive
    let scenes = vec![out.scene_slots(), out.scene_slots()];
    let mut cb_a = f.codebook.clone();
    let mut cb_b = f.codebook.clone();
    update_codebook(&mut cb_a, &scenes, 1, EmaAssignment::Requantize).unwrap();
    let reversed: Vec<_> = scenes.iter().rev().cloned().collect();
    update_codebook(&mut cb_b, &reversed, 1, EmaAssignment::Requantize).unwrap();
    for k in 0..K_PROTOS {
        for (a, b) in cb_a.prototype(k).iter().zip(cb_b.prototype(k)) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn k_max_must_fit_in_codebook() {
    let f = fixture(28);
    let tape = Tape::new();
    let bound = f.sa.bind(&tape, false).unwrap();
    let z = tape.constant(&f.z).unwrap();
    let mut tiny = PrototypeCodebook::init(&mut Rng::seed_from_u64(1), K - 1, DIM, 1.0, 0.1, 10)
        .unwrap();
    let mut rng = Rng::seed_from_u64(2);
    assert!(metaslot_forward(&z, &bound, &mut tiny, &cfg(), &mut rng, false, CodebookUpdatePolicy::Deferred, 0).is_err());
}
