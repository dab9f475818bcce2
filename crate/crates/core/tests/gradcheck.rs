//! Central-finite-difference checks of every differentiable tensor op.
//!
//! Each case builds a scalar objective from fresh leaves, runs the
//! reverse sweep, and compares every analytic partial against
//! (f(x+h) − f(x−h)) / 2h at step 1e-5 with relative tolerance 1e-4.

use moelab::tensor::{concat_cols, Tape, Tensor};
use proptest::prelude::*;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;
const REL_TOL: f64 = 1e-4;

type Leaf = (Vec<f64>, Vec<usize>);

/// Evaluate `f` on fresh leaves and return the scalar and analytic grads.
fn eval(leaves: &[Leaf], f: &dyn Fn(&Tape, &[Tensor]) -> Tensor) -> (f64, Vec<Vec<f64>>) {
    let tape = Tape::new();
    let ts: Vec<Tensor> = leaves
        .iter()
        .map(|(data, shape)| tape.leaf(data.clone(), shape, true).unwrap())
        .collect();
    let out = f(&tape, &ts);
    out.backward().unwrap();
    let grads = ts.iter().map(|t| t.grad().unwrap()).collect();
    (out.value(), grads)
}

fn eval_value(leaves: &[Leaf], f: &dyn Fn(&Tape, &[Tensor]) -> Tensor) -> f64 {
    let tape = Tape::new();
    let ts: Vec<Tensor> = leaves
        .iter()
        .map(|(data, shape)| tape.leaf(data.clone(), shape, true).unwrap())
        .collect();
    f(&tape, &ts).value()
}

fn gradcheck(leaves: Vec<Leaf>, f: impl Fn(&Tape, &[Tensor]) -> Tensor) {
    let (_, analytic) = eval(&leaves, &f);
    for (li, (data, _)) in leaves.iter().enumerate() {
        for i in 0..data.len() {
            let mut plus = leaves.clone();
            plus[li].0[i] += STEP;
            let mut minus = leaves.clone();
            minus[li].0[i] -= STEP;
            let numeric = (eval_value(&plus, &f) - eval_value(&minus, &f)) / (2.0 * STEP);
            let a = analytic[li][i];
            let denom = a.abs().max(numeric.abs()).max(1.0);
            assert!(
                (a - numeric).abs() / denom < REL_TOL,
                "leaf {li} elem {i}: analytic {a} vs numeric {numeric}"
            );
        }
    }
}

fn randn(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn randpos(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(0.5..2.0)).collect()
}

#[test]
fn matmul_grads() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    gradcheck(
        vec![(randn(&mut rng, 6), vec![2, 3]), (randn(&mut rng, 12), vec![3, 4])],
        |_, ts| ts[0].matmul(&ts[1]).unwrap().sum().mul(&ts[0].matmul(&ts[1]).unwrap().mean()).unwrap(),
    );
}

#[test]
fn transpose_grads() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    gradcheck(vec![(randn(&mut rng, 6), vec![2, 3])], |_, ts| {
        ts[0].transpose().unwrap().silu().sum()
    });
}

#[test]
fn add_mul_grads() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    gradcheck(
        vec![(randn(&mut rng, 8), vec![2, 4]), (randn(&mut rng, 8), vec![2, 4])],
        |_, ts| ts[0].add(&ts[1]).unwrap().mul(&ts[0]).unwrap().sum(),
    );
}

#[test]
fn add_bias_grads() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    gradcheck(
        vec![(randn(&mut rng, 12), vec![3, 4]), (randn(&mut rng, 4), vec![4])],
        |_, ts| ts[0].add_bias(&ts[1]).unwrap().silu().sum(),
    );
}

#[test]
fn scale_rows_grads() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    gradcheck(
        vec![(randn(&mut rng, 12), vec![3, 4]), (randn(&mut rng, 3), vec![3])],
        |_, ts| ts[0].scale_rows(&ts[1]).unwrap().silu().sum(),
    );
}

#[test]
fn scale_const_and_scale_grads() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    gradcheck(
        vec![(randn(&mut rng, 6), vec![6]), (randn(&mut rng, 1), vec![1])],
        |_, ts| ts[0].scale_const(-1.7).scale(&ts[1]).unwrap().silu().sum(),
    );
}

#[test]
fn recip_sqrt_grads() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    gradcheck(vec![(randpos(&mut rng, 5), vec![5])], |_, ts| {
        ts[0].sqrt().recip().sum()
    });
}

#[test]
fn silu_grads() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    gradcheck(vec![(randn(&mut rng, 9), vec![3, 3])], |_, ts| {
        ts[0].silu().mul(&ts[0].silu()).unwrap().sum()
    });
}

#[test]
fn layernorm_grads() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    gradcheck(
        vec![
            (randn(&mut rng, 12), vec![3, 4]),
            (randpos(&mut rng, 4), vec![4]),
            (randn(&mut rng, 4), vec![4]),
        ],
        |_, ts| ts[0].layernorm(&ts[1], &ts[2], 1e-5).unwrap().silu().sum(),
    );
}

#[test]
fn softmax_grads() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let probe = randn(&mut rng, 12);
    gradcheck(vec![(randn(&mut rng, 12), vec![3, 4])], move |tape, ts| {
        let w = tape.leaf(probe.clone(), &[3, 4], false).unwrap();
        ts[0].softmax().mul(&w).unwrap().sum()
    });
}

#[test]
fn causal_mask_grads() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let probe = randn(&mut rng, 16);
    gradcheck(vec![(randn(&mut rng, 16), vec![4, 4])], move |tape, ts| {
        let w = tape.leaf(probe.clone(), &[4, 4], false).unwrap();
        ts[0].causal_mask().unwrap().softmax().mul(&w).unwrap().sum()
    });
}

#[test]
fn cross_entropy_grads() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    gradcheck(vec![(randn(&mut rng, 15), vec![3, 5])], |_, ts| {
        ts[0].cross_entropy_mean(&[1, 4, 0]).unwrap()
    });
}

#[test]
fn sum_mean_grads() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    gradcheck(vec![(randn(&mut rng, 7), vec![7])], |_, ts| {
        ts[0].sum().mul(&ts[0].mean()).unwrap()
    });
}

#[test]
fn embedding_grads() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    gradcheck(vec![(randn(&mut rng, 20), vec![5, 4])], |_, ts| {
        ts[0].embedding(&[0, 3, 3, 1]).unwrap().silu().sum()
    });
}

#[test]
fn dot_grads() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    gradcheck(
        vec![(randn(&mut rng, 6), vec![6]), (randn(&mut rng, 6), vec![6])],
        |_, ts| {
            let d = ts[0].dot(&ts[1]).unwrap();
            d.mul(&d).unwrap()
        },
    );
}

#[test]
fn gather_grads() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    gradcheck(vec![(randn(&mut rng, 10), vec![10])], |_, ts| {
        // repeated index exercises gradient accumulation
        ts[0].gather(&[0, 7, 7, 2], &[4]).unwrap().silu().sum()
    });
}

#[test]
fn gather_scatter_rows_grads() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    gradcheck(vec![(randn(&mut rng, 12), vec![4, 3])], |_, ts| {
        ts[0]
            .gather_rows(&[2, 0, 2])
            .unwrap()
            .silu()
            .scatter_add_rows(&[1, 3, 1], 5)
            .unwrap()
            .silu()
            .sum()
    });
}

#[test]
fn slice_concat_cols_grads() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    gradcheck(vec![(randn(&mut rng, 12), vec![3, 4])], |tape, ts| {
        let left = ts[0].slice_cols(0, 2).unwrap();
        let right = ts[0].slice_cols(2, 2).unwrap();
        concat_cols(tape, &[right.silu(), left]).unwrap().silu().sum()
    });
}

#[test]
fn repeated_backward_accumulates_gradients() {
    let tape = Tape::new();
    let x = tape.leaf(vec![2.0, -1.0], &[2], true).unwrap();
    let y = x.mul(&x).unwrap().sum();
    y.backward().unwrap();
    let once = x.grad().unwrap();
    y.backward().unwrap();
    let twice = x.grad().unwrap();
    for (a, b) in once.iter().zip(&twice) {
        assert_eq!(2.0 * a, *b);
    }
}

#[test]
fn backward_is_deterministic_bitwise() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let leaves = vec![
            (randn(&mut rng, 12), vec![3, 4]),
            (randn(&mut rng, 12), vec![4, 3]),
        ];
        eval(&leaves, &|_, ts: &[Tensor]| {
            ts[0].matmul(&ts[1]).unwrap().softmax().cross_entropy_mean(&[0, 1, 2]).unwrap()
        })
    };
    let (v1, g1) = run();
    let (v2, g2) = run();
    assert_eq!(v1.to_bits(), v2.to_bits());
    for (a, b) in g1.iter().flatten().zip(g2.iter().flatten()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn random_chains_pass_gradcheck(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = rng.gen_range(1..4usize);
        let k = rng.gen_range(1..4usize);
        let n = rng.gen_range(1..4usize);
        let leaves = vec![
            (randn(&mut rng, m * k), vec![m, k]),
            (randn(&mut rng, k * n), vec![k, n]),
            (randn(&mut rng, n), vec![n]),
        ];
        gradcheck(leaves, |_, ts| {
            ts[0]
                .matmul(&ts[1])
                .unwrap()
                .add_bias(&ts[2])
                .unwrap()
                .silu()
                .softmax()
                .mean()
        });
    }
}
