//! One-hidden-layer ReLU network `y = W2 relu(W1 x + b1) + b2` with
//! parameters in one flat buffer `[W1, b1, W2, b2]` (row-major).
//!
//! Weights start He-uniform, `U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`, and
//! biases start at zero. This is the conventional parameterization, not the
//! `(L+2)`-normalized forward pass of `densecap_core::net`.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Loss {
    /// Softmax cross-entropy, mean over the batch.
    CrossEntropy,
    /// Mean squared error over the batch.
    Squared,
}

#[derive(Clone, Copy, Debug)]
pub enum BatchTargets<'a> {
    Classes(&'a [usize]),
    Values(&'a [f64]),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    input: usize,
    hidden: usize,
    output: usize,
    params: Vec<f64>,
}

impl Mlp {
    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        let len = hidden * input + hidden + output * hidden + output;
        Self { input, hidden, output, params: vec![0.0; len] }
    }

    pub fn he_uniform<R: Rng + ?Sized>(input: usize, hidden: usize, output: usize, rng: &mut R) -> Self {
        let mut net = Self::zeros(input, hidden, output);
        let a1 = (6.0 / input as f64).sqrt();
        let a2 = (6.0 / hidden as f64).sqrt();
        let (w1, rest) = net.params.split_at_mut(hidden * input);
        w1.iter_mut().for_each(|w| *w = rng.random_range(-a1..a1));
        rest[hidden..hidden + output * hidden].iter_mut().for_each(|w| *w = rng.random_range(-a2..a2));
        net
    }

    pub fn input_dim(&self) -> usize {
        self.input
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden
    }

    pub fn output_dim(&self) -> usize {
        self.output
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn offsets(&self) -> [usize; 4] {
        let b1 = self.hidden * self.input;
        let w2 = b1 + self.hidden;
        let b2 = w2 + self.output * self.hidden;
        [0, b1, w2, b2]
    }

    fn views(&self) -> Views<'_> {
        split(&self.params, self.input, self.hidden, self.output)
    }

    fn forward_hidden(&self, x: ArrayView2<f64>) -> (Array2<f64>, Array2<f64>) {
        let (w1, b1, w2, b2) = self.views();
        let mut z1 = x.dot(&w1.t());
        z1 += &b1;
        let a1 = z1.mapv(|z| z.max(0.0));
        let mut y = a1.dot(&w2.t());
        y += &b2;
        (z1, y)
    }

    fn relu_pattern(&self, x: ArrayView2<f64>) -> Vec<bool> {
        self.forward_hidden(x).0.iter().map(|&z| z > 0.0).collect()
    }

    /// Outputs for a batch of rows.
    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        self.forward_hidden(x).1
    }

    pub fn loss(&self, x: ArrayView2<f64>, targets: BatchTargets, loss: Loss) -> f64 {
        output_loss(&self.forward(x), targets, loss, None)
    }

    /// Batch loss and its gradient with respect to [`Mlp::params`], plus the outputs.
    pub fn loss_and_grad(
        &self,
        x: ArrayView2<f64>,
        targets: BatchTargets,
        loss: Loss,
        grad: &mut [f64],
    ) -> (f64, Array2<f64>) {
        assert_eq!(grad.len(), self.params.len(), "gradient buffer length");
        let (z1, y) = self.forward_hidden(x);
        let mut dy = Array2::zeros(y.raw_dim());
        let value = output_loss(&y, targets, loss, Some(&mut dy));
        let (_, _, w2, _) = self.views();
        let a1 = z1.mapv(|z| z.max(0.0));
        let mut dz1 = dy.dot(&w2);
        Zip::from(&mut dz1).and(&z1).for_each(|d, &z| {
            if z <= 0.0 {
                *d = 0.0;
            }
        });
        let (mut gw1, mut gb1, mut gw2, mut gb2) = split_mut(grad, self.input, self.hidden, self.output);
        general_mat_mul(1.0, &dz1.t(), &x, 0.0, &mut gw1);
        gb1.assign(&dz1.sum_axis(Axis(0)));
        general_mat_mul(1.0, &dy.t(), &a1, 0.0, &mut gw2);
        gb2.assign(&dy.sum_axis(Axis(0)));
        (value, y)
    }

    /// Clamps the weights of each layer into `[-c / fan_in, c / fan_in]`;
    /// biases are left free.
    pub fn clamp(&mut self, numerator: f64) {
        let [_, b1, w2, b2] = self.offsets();
        let c1 = numerator / self.input as f64;
        let c2 = numerator / self.hidden as f64;
        self.params[..b1].iter_mut().for_each(|p| *p = p.clamp(-c1, c1));
        self.params[w2..b2].iter_mut().for_each(|p| *p = p.clamp(-c2, c2));
    }

    /// `max_l max_ij |W_ij| * fan_in(l)` over the weight matrices.
    pub fn max_scaled_weight(&self) -> f64 {
        let [_, b1, w2, b2] = self.offsets();
        let m1 = self.params[..b1].iter().fold(0.0f64, |m, p| m.max(p.abs())) * self.input as f64;
        let m2 = self.params[w2..b2].iter().fold(0.0f64, |m, p| m.max(p.abs())) * self.hidden as f64;
        m1.max(m2)
    }
}

type Views<'a> = (ArrayView2<'a, f64>, ArrayView1<'a, f64>, ArrayView2<'a, f64>, ArrayView1<'a, f64>);

fn split(p: &[f64], input: usize, hidden: usize, output: usize) -> Views<'_> {
    let (w1, rest) = p.split_at(hidden * input);
    let (b1, rest) = rest.split_at(hidden);
    let (w2, b2) = rest.split_at(output * hidden);
    (
        ArrayView2::from_shape((hidden, input), w1).expect("layout"),
        ArrayView1::from(b1),
        ArrayView2::from_shape((output, hidden), w2).expect("layout"),
        ArrayView1::from(b2),
    )
}

type ViewsMut<'a> = (ArrayViewMut2<'a, f64>, ArrayViewMut1<'a, f64>, ArrayViewMut2<'a, f64>, ArrayViewMut1<'a, f64>);

fn split_mut(p: &mut [f64], input: usize, hidden: usize, output: usize) -> ViewsMut<'_> {
    let (w1, rest) = p.split_at_mut(hidden * input);
    let (b1, rest) = rest.split_at_mut(hidden);
    let (w2, b2) = rest.split_at_mut(output * hidden);
    (
        ArrayViewMut2::from_shape((hidden, input), w1).expect("layout"),
        ArrayViewMut1::from(b1),
        ArrayViewMut2::from_shape((output, hidden), w2).expect("layout"),
        ArrayViewMut1::from(b2),
    )
}

/// Mean loss over the rows of `y`; writes `d loss / d y` when asked.
fn output_loss(y: &Array2<f64>, targets: BatchTargets, loss: Loss, mut dy: Option<&mut Array2<f64>>) -> f64 {
    let n = y.nrows() as f64;
    let mut total = 0.0;
    match (loss, targets) {
        (Loss::CrossEntropy, BatchTargets::Classes(labels)) => {
            assert_eq!(labels.len(), y.nrows(), "label count");
            for (i, row) in y.outer_iter().enumerate() {
                let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
                total += max + sum.ln() - row[labels[i]];
                if let Some(dy) = dy.as_deref_mut() {
                    let mut out = dy.row_mut(i);
                    for (o, &v) in out.iter_mut().zip(row) {
                        *o = (v - max).exp() / sum / n;
                    }
                    out[labels[i]] -= 1.0 / n;
                }
            }
        }
        (Loss::Squared, BatchTargets::Values(values)) => {
            assert_eq!(values.len(), y.nrows(), "target count");
            assert_eq!(y.ncols(), 1, "squared loss needs one output");
            for (i, &t) in values.iter().enumerate() {
                let r = y[[i, 0]] - t;
                total += r * r;
                if let Some(dy) = dy.as_deref_mut() {
                    dy[[i, 0]] = 2.0 * r / n;
                }
            }
        }
        (loss, _) => panic!("{loss:?} does not match the target kind"),
    }
    total / n
}

pub(crate) fn output_loss_value(y: &Array2<f64>, targets: BatchTargets, loss: Loss) -> f64 {
    output_loss(y, targets, loss, None)
}

/// Index of the largest entry of each row.
pub fn argmax_rows(y: &Array2<f64>) -> Vec<usize> {
    y.outer_iter()
        .map(|row| row.iter().enumerate().fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b }).0)
        .collect()
}

/// Largest relative gap between backprop and fourth-order central
/// differences with step `1e-4`, on a random width-`width` classifier and a random regressor.
/// The relative gap is `|g - n| / max(|g|, |n|, 1e-6)`. Coordinates whose
/// step flips a hidden ReLU are skipped: the loss has a kink inside the
/// stencil there. Pre-activations are linear in each single parameter, so
/// equal patterns at the stencil ends rule out a kink in between.
pub fn gradient_check(width: usize, seed: u64) -> f64 {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let (input, batch) = (7, 5);
    let x = Array2::from_shape_simple_fn((batch, input), || rng.random_range(0.0..1.0));
    let labels: Vec<usize> = (0..batch).map(|_| rng.random_range(0..4)).collect();
    let values: Vec<f64> = (0..batch).map(|_| rng.random_range(-1.0..1.0)).collect();
    let cases = [
        (Mlp::he_uniform(input, width, 4, &mut rng), BatchTargets::Classes(&labels), Loss::CrossEntropy),
        (Mlp::he_uniform(input, width, 1, &mut rng), BatchTargets::Values(&values), Loss::Squared),
    ];
    let mut worst = 0.0f64;
    for (mut net, targets, loss) in cases {
        // Nonzero biases exercise their gradients too.
        let [_, b1, w2, b2] = net.offsets();
        for i in (b1..w2).chain(b2..net.params.len()) {
            net.params[i] = rng.random_range(-0.5..0.5);
        }
        let mut grad = vec![0.0; net.params.len()];
        net.loss_and_grad(x.view(), targets, loss, &mut grad);
        let h = 1e-4;
        for (i, &g) in grad.iter().enumerate() {
            let orig = net.params[i];
            let mut f = [0.0; 4];
            let mut patterns = Vec::with_capacity(4);
            for (k, step) in [2.0, 1.0, -1.0, -2.0].into_iter().enumerate() {
                net.params[i] = orig + step * h;
                f[k] = net.loss(x.view(), targets, loss);
                patterns.push(net.relu_pattern(x.view()));
            }
            net.params[i] = orig;
            if patterns.windows(2).any(|w| w[0] != w[1]) {
                continue;
            }
            let numeric = (-f[0] + 8.0 * f[1] - 8.0 * f[2] + f[3]) / (12.0 * h);
            let rel = (g - numeric).abs() / g.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    worst
}

/// Rows `[start, end)` of `x` as a view.
pub fn rows(x: &Array2<f64>, start: usize, end: usize) -> ArrayView2<'_, f64> {
    x.slice(s![start..end, ..])
}
