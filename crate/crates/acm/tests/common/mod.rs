//! Shared test utilities: the central-finite-difference gradient oracle and
//! sampling helpers. The oracle evaluates the forward pass as a black box and
//! never touches the reverse-mode code paths it is checking.

use acm::autodiff::{NodeId, Tape};
use acm::mat::Mat;
use acm::rng::Rng;

/// Relative tolerance of the gradient checks.
pub const GRAD_RTOL: f64 = 1e-4;
/// Absolute floor below which differences count as zero.
pub const GRAD_ATOL: f64 = 1e-7;

/// Check the analytic gradients of `build` against central finite
/// differences for every entry of every input. `build` receives the inputs
/// as tape nodes and returns the output node; the harness contracts the
/// output with a fixed random weight matrix to obtain a scalar.
///
/// Returns the worst violation ratio (<= 1 means within tolerance).
pub fn gradcheck(
    name: &str,
    inputs: &[Mat],
    build: &dyn Fn(&mut Tape, &[NodeId]) -> NodeId,
    weight_seed: u64,
) -> f64 {
    // Analytic pass.
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = inputs.iter().map(|m| tape.parameter(m.clone())).collect();
    let out = build(&mut tape, &ids);
    let mut wrng = Rng::new(weight_seed);
    let weights = Mat::from_fn(tape.value(out).rows(), tape.value(out).cols(), |_, _| {
        wrng.uniform_in(-1.0, 1.0)
    });
    let wid = tape.constant(weights.clone());
    let prod = tape.hadamard(out, wid).expect("shapes match");
    let loss = tape.sum_all(prod);
    tape.backward(loss).expect("backward");
    let analytic: Vec<Mat> = ids
        .iter()
        .zip(inputs)
        .map(|(&id, m)| tape.grad(id).cloned().unwrap_or_else(|| Mat::zeros(m.rows(), m.cols())))
        .collect();

    // Black-box scalar evaluation for the finite differences.
    let eval = |mats: &[Mat]| -> f64 {
        let mut t = Tape::new();
        let ids: Vec<NodeId> = mats.iter().map(|m| t.constant(m.clone())).collect();
        let out = build(&mut t, &ids);
        let v = t.value(out);
        v.data()
            .iter()
            .zip(weights.data())
            .map(|(a, b)| a * b)
            .sum()
    };

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (k, input) in inputs.iter().enumerate() {
        for i in 0..input.rows() {
            for j in 0..input.cols() {
                let mut plus = inputs.to_vec();
                plus[k].set(i, j, input.get(i, j) + h);
                let mut minus = inputs.to_vec();
                minus[k].set(i, j, input.get(i, j) - h);
                let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
                let a = analytic[k].get(i, j);
                // pass when |a - fd| <= max(atol, rtol * scale)
                let denom = GRAD_ATOL.max(GRAD_RTOL * a.abs().max(fd.abs()));
                let ratio = (a - fd).abs() / denom;
                assert!(
                    ratio <= 1.0,
                    "{name}: input {k} entry ({i},{j}): analytic {a:.6e} vs fd {fd:.6e} (ratio {ratio:.2})"
                );
                worst = worst.max(ratio);
            }
        }
    }
    worst
}

/// Random matrix with standard normal entries.
pub fn randn(rows: usize, cols: usize, rng: &mut Rng) -> Mat {
    Mat::from_fn(rows, cols, |_, _| rng.normal())
}

/// Random positive diagonal for `U`, entries in `[0.5, 2)`.
pub fn rand_u(dim: usize, rng: &mut Rng) -> Mat {
    Mat::from_fn(1, dim, |_, _| rng.uniform_in(0.5, 2.0))
}

/// Rows projected onto the manifold of `u`, resampled until every row stays
/// away from the chart center (`|w1 - a0| > margin`).
pub fn on_manifold_away_from_center(
    rows: usize,
    u: &Mat,
    margin: f64,
    rng: &mut Rng,
) -> Mat {
    let dim = u.cols();
    let a0 = u.get(0, 0).powf(-0.5);
    let mut out = Mat::zeros(rows, dim);
    for i in 0..rows {
        loop {
            let raw: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
            let q: f64 = raw
                .iter()
                .zip(u.row(0))
                .map(|(&x, &uu)| uu * x * x)
                .sum();
            if q < 1e-12 {
                continue;
            }
            let s = q.sqrt();
            let w: Vec<f64> = raw.iter().map(|&x| x / s).collect();
            if (w[0] - a0).abs() > margin {
                out.row_mut(i).copy_from_slice(&w);
                break;
            }
        }
    }
    out
}
