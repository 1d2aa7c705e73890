//! Finite-difference checks for every differentiable op on randomized small
//! shapes. The checker re-evaluates the forward pass from scratch at
//! perturbed inputs, so these are independent derivative oracles.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use setseq::gradcheck::{check_gradients, FD_STEP, FD_TOL};
use setseq::tensor::{NodeId, Tensor, ValueGraph};
use setseq::Result;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// Random tensor with entries kept away from zero (relu kink, log/div poles).
fn rand_tensor_away_from(rng: &mut ChaCha8Rng, shape: &[usize], margin: f64) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let mag = rng.gen_range(margin..2.0);
        if rng.gen::<bool>() {
            mag
        } else {
            -mag
        }
    })
}

fn rand_shape2(rng: &mut ChaCha8Rng) -> Vec<usize> {
    vec![rng.gen_range(1..4), rng.gen_range(1..5)]
}

/// Mixes an output tensor into a scalar with fixed random weights so every
/// output element contributes to the checked gradient.
fn weighted_sum(g: &mut ValueGraph, out: NodeId, rng: &mut ChaCha8Rng) -> Result<NodeId> {
    let shape = g.shape(out).to_vec();
    let w = g.constant(Tensor::from_fn(&shape, |_| rng.gen_range(-1.0..1.0)));
    let prod = g.mul(out, w)?;
    Ok(g.sum_all(prod))
}

/// Runs `cases` randomized finite-difference checks of a unary-style builder.
fn run_cases(
    name: &str,
    cases: usize,
    seed: u64,
    mut make: impl FnMut(&mut ChaCha8Rng) -> Vec<Tensor>,
    build: impl Fn(&mut ValueGraph, &[NodeId], &mut ChaCha8Rng) -> Result<NodeId>,
) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..cases {
        let inputs = make(&mut rng);
        let mix_seed: u64 = rng.gen();
        let worst = check_gradients(
            &inputs,
            |g, ids| {
                let mut mix_rng = ChaCha8Rng::seed_from_u64(mix_seed);
                let out = build(g, ids, &mut mix_rng)?;
                let mut w_rng = ChaCha8Rng::seed_from_u64(mix_seed ^ 0xabcd);
                weighted_sum(g, out, &mut w_rng)
            },
            FD_STEP,
        )
        .unwrap();
        assert!(
            worst < FD_TOL,
            "{name} case {case}: worst relative error {worst:.3e}"
        );
    }
}

const CASES: usize = 12;

#[test]
fn fd_add_sub_mul_div_broadcast() {
    for (name, which) in [("add", 0), ("sub", 1), ("mul", 2), ("div", 3)] {
        run_cases(
            name,
            CASES,
            41 + which,
            |rng| {
                let full = vec![2, rng.gen_range(2..4), 3];
                // one operand occasionally broadcast along a leading/middle axis
                let reduced = match rng.gen_range(0..3) {
                    0 => full.clone(),
                    1 => vec![full[1], full[2]],
                    _ => vec![full[0], 1, full[2]],
                };
                vec![
                    rand_tensor(rng, &full, -2.0, 2.0),
                    rand_tensor_away_from(rng, &reduced, 0.4),
                ]
            },
            move |g, ids, _| match which {
                0 => g.add(ids[0], ids[1]),
                1 => g.sub(ids[0], ids[1]),
                2 => g.mul(ids[0], ids[1]),
                _ => g.div(ids[0], ids[1]),
            },
        );
    }
}

#[test]
fn fd_matmul() {
    run_cases(
        "matmul",
        CASES,
        7,
        |rng| {
            let (m, k, n) = (
                rng.gen_range(1..4),
                rng.gen_range(1..4),
                rng.gen_range(1..4),
            );
            vec![
                rand_tensor(rng, &[m, k], -2.0, 2.0),
                rand_tensor(rng, &[k, n], -2.0, 2.0),
            ]
        },
        |g, ids, _| g.matmul(ids[0], ids[1]),
    );
}

#[test]
fn fd_unary_elementwise() {
    // (name, input range constraint, builder)
    type B = fn(&mut ValueGraph, NodeId) -> NodeId;
    let ops: Vec<(&str, bool, B)> = vec![
        ("neg", false, |g, x| g.neg(x)),
        ("relu", true, |g, x| g.relu(x)),
        ("tanh", false, |g, x| g.tanh(x)),
        ("exp", false, |g, x| g.exp(x)),
        ("softplus", false, |g, x| g.softplus(x)),
        ("add_scalar", false, |g, x| g.add_scalar(x, 0.7)),
        ("mul_scalar", false, |g, x| g.mul_scalar(x, -1.3)),
    ];
    for (i, (name, away, build)) in ops.into_iter().enumerate() {
        run_cases(
            name,
            CASES,
            100 + i as u64,
            move |rng| {
                let shape = rand_shape2(rng);
                if away {
                    vec![rand_tensor_away_from(rng, &shape, 0.1)]
                } else {
                    vec![rand_tensor(rng, &shape, -2.0, 2.0)]
                }
            },
            move |g, ids, _| Ok(build(g, ids[0])),
        );
    }
}

#[test]
fn fd_log() {
    run_cases(
        "log",
        CASES,
        200,
        |rng| {
            let shape = rand_shape2(rng);
            vec![rand_tensor(rng, &shape, 0.2, 3.0)]
        },
        |g, ids, _| Ok(g.log(ids[0])),
    );
}

#[test]
fn fd_softmax_and_log_softmax() {
    for (name, logsm) in [("softmax", false), ("log_softmax", true)] {
        run_cases(
            name,
            CASES,
            300 + logsm as u64,
            |rng| vec![rand_tensor(rng, &[2, 3, 2], -3.0, 3.0)],
            move |g, ids, rng| {
                let axis = rng.gen_range(0..3);
                if logsm {
                    g.log_softmax(ids[0], axis)
                } else {
                    g.softmax(ids[0], axis)
                }
            },
        );
    }
}

#[test]
fn fd_layer_norm() {
    run_cases(
        "layer_norm",
        CASES,
        400,
        |rng| {
            let d = rng.gen_range(2..5);
            vec![
                rand_tensor(rng, &[3, d], -2.0, 2.0),
                rand_tensor(rng, &[d], 0.5, 1.5),
                rand_tensor(rng, &[d], -0.5, 0.5),
            ]
        },
        |g, ids, _| g.layer_norm(ids[0], ids[1], ids[2]),
    );
}

#[test]
fn fd_reductions() {
    run_cases(
        "sum_mean",
        CASES,
        500,
        |rng| vec![rand_tensor(rng, &[2, 3, 2], -2.0, 2.0)],
        |g, ids, rng| {
            let axis = rng.gen_range(0..3);
            match rng.gen_range(0..4) {
                0 => Ok(g.sum_all(ids[0])),
                1 => Ok(g.mean_all(ids[0])),
                2 => g.sum_axis(ids[0], axis),
                _ => g.mean_axis(ids[0], axis),
            }
        },
    );
}

#[test]
fn fd_structural_ops() {
    run_cases(
        "concat_slice_permute_reshape_broadcast",
        CASES,
        600,
        |rng| {
            vec![
                rand_tensor(rng, &[2, 2, 3], -2.0, 2.0),
                rand_tensor(rng, &[2, 1, 3], -2.0, 2.0),
            ]
        },
        |g, ids, rng| {
            let cat = g.concat(&[ids[0], ids[1]], 1)?;
            let sl = g.slice(cat, 1, rng.gen_range(0..2), 2)?;
            let pm = g.permute(sl, &[2, 0, 1])?;
            let rs = g.reshape(pm, &[3, 4])?;
            let small = g.slice(rs, 0, 0, 1)?;
            g.broadcast_to(small, &[3, 4])
        },
    );
}

#[test]
fn fd_dropout_fixed_mask() {
    // dropout with a frozen rng stream is a fixed linear map
    run_cases(
        "dropout",
        CASES,
        700,
        |rng| vec![rand_tensor(rng, &[3, 4], -2.0, 2.0)],
        |g, ids, rng| {
            let mut mask_rng = ChaCha8Rng::seed_from_u64(rng.gen());
            g.dropout(ids[0], 0.4, true, &mut mask_rng)
        },
    );
}

#[test]
fn fd_conv2d() {
    run_cases(
        "conv2d",
        CASES,
        800,
        |rng| {
            let (c_in, c_out) = (rng.gen_range(1..3), rng.gen_range(1..3));
            vec![
                rand_tensor(rng, &[c_in, 6, 6], -1.0, 1.0),
                rand_tensor(rng, &[c_out, c_in, 4, 4], -1.0, 1.0),
                rand_tensor(rng, &[c_out], -0.5, 0.5),
            ]
        },
        |g, ids, _| g.conv2d(ids[0], ids[1], ids[2], 2, 1),
    );
}

#[test]
fn fd_composite_chain() {
    // a deeper composite mixing many ops, as a smoke test for interactions
    run_cases(
        "composite",
        8,
        900,
        |rng| {
            vec![
                rand_tensor(rng, &[3, 4], -1.5, 1.5),
                rand_tensor(rng, &[4, 3], -1.5, 1.5),
                rand_tensor(rng, &[3], 0.5, 1.5),
                rand_tensor(rng, &[3], -0.5, 0.5),
            ]
        },
        |g, ids, _| {
            let mm = g.matmul(ids[0], ids[1])?;
            let ln = g.layer_norm(mm, ids[2], ids[3])?;
            let sm = g.softmax(ln, 1)?;
            let th = g.tanh(sm);
            let sp = g.softplus(th);
            g.mean_axis(sp, 0)
        },
    );
}
