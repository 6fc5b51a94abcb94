//! Every differentiable tape op against central finite differences.

use dan_core::autodiff::{Tape, Var};
use dan_core::gradcheck::relative_error;
use dan_core::tensor::Tensor;
use dan_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-4;
const TOL: f64 = 1e-5;
const FLOOR: f64 = 1e-6;
const DRAWS: usize = 100;

type Build = dyn Fn(&mut Tape<'_>, &[Var]) -> Result<Var>;

/// `sum_i c_i * out_i` with fixed random weights, so every output entry
/// contributes to the checked gradient.
fn scalarize(tape: &mut Tape<'_>, out: Var, weights: &[f64]) -> Result<Var> {
    let n: usize = tape.shape(out).iter().product();
    let flat = tape.reshape(out, &[n])?;
    let c = tape.constant(Tensor::vector(weights[..n].to_vec()));
    tape.dot(flat, c)
}

fn loss(inputs: &[Tensor], weights: &[f64], build: &Build) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = build(&mut tape, &vars).unwrap();
    let l = scalarize(&mut tape, out, weights).unwrap();
    tape.scalar(l)
}

/// Worst relative error over all input entries.
fn check(inputs: &[Tensor], weights: &[f64], build: &Build) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.variable(t.clone())).collect();
    let out = build(&mut tape, &vars).unwrap();
    let l = scalarize(&mut tape, out, weights).unwrap();
    let grads = tape.backward(l).unwrap();
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(&tape, v)).collect();

    let mut worst: f64 = 0.0;
    let mut work = inputs.to_vec();
    for (k, t) in inputs.iter().enumerate() {
        for i in 0..t.len() {
            let w = t.data()[i];
            work[k].data_mut()[i] = w + EPS;
            let up = loss(&work, weights, build);
            work[k].data_mut()[i] = w - EPS;
            let down = loss(&work, weights, build);
            work[k].data_mut()[i] = w;
            let numeric = (up - down) / (2.0 * EPS);
            worst = worst.max(relative_error(analytic[k].data()[i], numeric, FLOOR));
        }
    }
    worst
}

fn uniform(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::uniform(shape, lo, hi, rng)
}

/// Values at least `gap` away from zero.
fn away_from_zero(rng: &mut impl Rng, shape: &[usize], gap: f64) -> Tensor {
    let mut t = uniform(rng, shape, gap, 2.0);
    for v in t.data_mut() {
        if rng.gen::<bool>() {
            *v = -*v;
        }
    }
    t
}

/// Entries of a `[steps, f]` matrix whose columns have well-separated values.
fn separated(rng: &mut impl Rng, steps: usize, f: usize) -> Tensor {
    let mut data = vec![0.0; steps * f];
    for c in 0..f {
        let mut order: Vec<usize> = (0..steps).collect();
        for i in (1..steps).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }
        for (rank, &t) in order.iter().enumerate() {
            data[t * f + c] = rank as f64 * 0.1 + rng.gen_range(0.0..0.01);
        }
    }
    Tensor::new(vec![steps, f], data).unwrap()
}

fn run_op(name: &str, seed: u64, make: impl Fn(&mut ChaCha8Rng) -> Vec<Tensor>, build: &Build) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for draw in 0..DRAWS {
        let inputs = make(&mut rng);
        let weights: Vec<f64> = (0..256).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let err = check(&inputs, &weights, build);
        assert!(err < TOL, "{name}: draw {draw} relative error {err:e}");
    }
}

#[test]
fn elementwise_ops() {
    run_op("sigmoid", 1, |r| vec![uniform(r, &[5], -4.0, 4.0)], &|t, v| t.sigmoid(v[0]));
    run_op("tanh", 2, |r| vec![uniform(r, &[5], -3.0, 3.0)], &|t, v| t.tanh(v[0]));
    run_op("relu", 3, |r| vec![away_from_zero(r, &[5], 0.01)], &|t, v| t.relu(v[0]));
    run_op("softplus", 4, |r| vec![uniform(r, &[5], -5.0, 5.0)], &|t, v| t.softplus(v[0]));
    run_op("log_sigmoid", 5, |r| vec![uniform(r, &[5], -8.0, 8.0)], &|t, v| t.log_sigmoid(v[0]));
    run_op("log", 6, |r| vec![uniform(r, &[5], 0.1, 3.0)], &|t, v| t.log(v[0]));
    run_op("log_floor", 7, |r| vec![uniform(r, &[5], 0.05, 1.0)], &|t, v| t.log_floor(v[0], 1e-12));
    run_op("scale_shift", 8, |r| vec![uniform(r, &[5], -2.0, 2.0)], &|t, v| t.scale_shift(v[0], -1.7, 0.3));
}

#[test]
fn binary_ops() {
    let two = |r: &mut ChaCha8Rng| vec![uniform(r, &[2, 3], -2.0, 2.0), uniform(r, &[2, 3], -2.0, 2.0)];
    run_op("add", 11, two, &|t, v| t.add(v[0], v[1]));
    run_op("sub", 12, two, &|t, v| t.sub(v[0], v[1]));
    run_op("mul", 13, two, &|t, v| t.mul(v[0], v[1]));
    run_op("dot", 14, |r| vec![uniform(r, &[6], -2.0, 2.0), uniform(r, &[6], -2.0, 2.0)], &|t, v| t.dot(v[0], v[1]));
    run_op("matmul", 15, |r| vec![uniform(r, &[3, 4], -1.0, 1.0), uniform(r, &[4, 2], -1.0, 1.0)], &|t, v| t.matmul(v[0], v[1]));
    run_op(
        "affine",
        16,
        |r| vec![uniform(r, &[3, 4], -1.0, 1.0), uniform(r, &[4, 2], -1.0, 1.0), uniform(r, &[2], -1.0, 1.0)],
        &|t, v| t.affine(v[0], v[1], v[2]),
    );
}

#[test]
fn reductions_and_reshaping() {
    run_op("softmax", 21, |r| vec![uniform(r, &[4], -3.0, 3.0)], &|t, v| t.softmax(v[0]));
    run_op("sum", 22, |r| vec![uniform(r, &[2, 3], -2.0, 2.0)], &|t, v| t.sum(v[0]));
    run_op("mean", 23, |r| vec![uniform(r, &[7], -2.0, 2.0)], &|t, v| t.mean(v[0]));
    run_op("pick", 24, |r| vec![uniform(r, &[5], -2.0, 2.0)], &|t, v| t.pick(v[0], 3));
    run_op("reshape", 25, |r| vec![uniform(r, &[2, 3], -2.0, 2.0)], &|t, v| t.reshape(v[0], &[3, 2]));
    run_op(
        "concat",
        26,
        |r| vec![uniform(r, &[3], -2.0, 2.0), uniform(r, &[2], -2.0, 2.0)],
        &|t, v| t.concat(&[v[0], v[1]]),
    );
    run_op(
        "stack",
        27,
        |r| vec![uniform(r, &[3], -2.0, 2.0), uniform(r, &[3], -2.0, 2.0)],
        &|t, v| t.stack(&[v[0], v[1]]),
    );
    run_op("max_over_time", 28, |r| vec![separated(r, 5, 3)], &|t, v| t.max_over_time(v[0]));
}

#[test]
fn sequence_ops() {
    run_op(
        "embedding_lookup",
        31,
        |r| vec![uniform(r, &[6, 3], -1.0, 1.0)],
        &|t, v| t.embedding_lookup(v[0], &[4, 1, 4, 0, 5]),
    );
    run_op(
        "conv1d_seq",
        32,
        |r| vec![uniform(r, &[6, 3], -1.0, 1.0), uniform(r, &[9, 4], -1.0, 1.0), uniform(r, &[4], -1.0, 1.0)],
        &|t, v| t.conv1d_seq(v[0], v[1], v[2], 3),
    );
}

#[test]
fn three_layer_composition_with_fifty_parameters() {
    // 4 -> 5 -> 3 -> 1, the last layer without bias, plus the 4 inputs: 50 entries.
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let make = |r: &mut ChaCha8Rng| {
        vec![
            uniform(r, &[4, 5], -1.0, 1.0),
            uniform(r, &[5], -0.5, 0.5),
            uniform(r, &[5, 3], -1.0, 1.0),
            uniform(r, &[3], -0.5, 0.5),
            uniform(r, &[3, 1], -1.0, 1.0),
            uniform(r, &[1, 4], -1.0, 1.0),
        ]
    };
    let build: &Build = &|t, v| {
        let h = t.affine(v[5], v[0], v[1])?;
        let h = t.tanh(h)?;
        let h = t.affine(h, v[2], v[3])?;
        let h = t.sigmoid(h)?;
        let o = t.matmul(h, v[4])?;
        let o = t.reshape(o, &[1])?;
        t.log_sigmoid(o)
    };
    for _ in 0..DRAWS {
        let inputs = make(&mut rng);
        assert_eq!(inputs.iter().map(Tensor::len).sum::<usize>(), 50);
        let err = check(&inputs, &[1.0], build);
        assert!(err < TOL, "composition relative error {err:e}");
    }
}

#[test]
fn forward_and_backward_are_bit_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let inputs = [uniform(&mut rng, &[6, 3], -1.0, 1.0), uniform(&mut rng, &[9, 2], -1.0, 1.0), uniform(&mut rng, &[2], -1.0, 1.0)];
    let run = || {
        let mut tape = Tape::new();
        let v: Vec<Var> = inputs.iter().map(|t| tape.variable(t.clone())).collect();
        let c = tape.conv1d_seq(v[0], v[1], v[2], 3).unwrap();
        let c = tape.tanh(c).unwrap();
        let p = tape.max_over_time(c).unwrap();
        let l = tape.sum(p).unwrap();
        let g = tape.backward(l).unwrap();
        let grads: Vec<Vec<f64>> = v.iter().map(|&x| g.wrt(&tape, x).into_data()).collect();
        (tape.scalar(l).to_bits(), grads)
    };
    assert_eq!(run(), run());
}
