//! Fixed two-hidden-layer ReLU perceptron with a 3-vector output.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const HIDDEN: usize = 64;
pub const OUTPUT: usize = 3;

/// Row-major weights: `w1` is `HIDDEN x input`, `w2` is `HIDDEN x HIDDEN`, `w3` is `OUTPUT x HIDDEN`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub input: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub w3: Vec<f64>,
    pub b3: Vec<f64>,
}

/// Hidden activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Activations {
    pub a1: [f64; HIDDEN],
    pub a2: [f64; HIDDEN],
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, fan_in: usize) -> Vec<f64> {
    let bound = (6.0 / fan_in as f64).sqrt();
    (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
}

/// Dot product with four independent accumulators so the loop vectorizes.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

impl Mlp {
    /// He-uniform hidden layers; the output layer starts at zero.
    pub fn new(input: usize, seed: u64) -> Mlp {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Mlp {
            input,
            w1: uniform(&mut rng, HIDDEN * input, input),
            b1: vec![0.0; HIDDEN],
            w2: uniform(&mut rng, HIDDEN * HIDDEN, HIDDEN),
            b2: vec![0.0; HIDDEN],
            w3: vec![0.0; OUTPUT * HIDDEN],
            b3: vec![0.0; OUTPUT],
        }
    }

    pub fn zeros_like(&self) -> Mlp {
        Mlp {
            input: self.input,
            w1: vec![0.0; self.w1.len()],
            b1: vec![0.0; HIDDEN],
            w2: vec![0.0; self.w2.len()],
            b2: vec![0.0; HIDDEN],
            w3: vec![0.0; self.w3.len()],
            b3: vec![0.0; OUTPUT],
        }
    }

    pub fn params(&self) -> [&Vec<f64>; 6] {
        [&self.w1, &self.b1, &self.w2, &self.b2, &self.w3, &self.b3]
    }

    pub fn params_mut(&mut self) -> [&mut Vec<f64>; 6] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2, &mut self.w3, &mut self.b3]
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn add_assign(&mut self, other: &Mlp) {
        for (a, b) in self.params_mut().into_iter().zip(other.params()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn forward(&self, x: &[f64]) -> ([f64; OUTPUT], Activations) {
        let n = self.input;
        let mut a1 = [0.0; HIDDEN];
        for (j, a) in a1.iter_mut().enumerate() {
            let row = &self.w1[j * n..(j + 1) * n];
            let z = self.b1[j] + dot(row, x);
            *a = z.max(0.0);
        }
        let mut a2 = [0.0; HIDDEN];
        for (j, a) in a2.iter_mut().enumerate() {
            let row = &self.w2[j * HIDDEN..(j + 1) * HIDDEN];
            let z = self.b2[j] + dot(row, &a1);
            *a = z.max(0.0);
        }
        let mut out = [0.0; OUTPUT];
        for (j, o) in out.iter_mut().enumerate() {
            let row = &self.w3[j * HIDDEN..(j + 1) * HIDDEN];
            *o = self.b3[j] + dot(row, &a2);
        }
        (out, Activations { a1, a2 })
    }

    /// Accumulates parameter gradients into `grad` and writes `d loss / d x` into `dx`.
    pub fn backward(&self, x: &[f64], act: &Activations, dout: [f64; OUTPUT], grad: &mut Mlp, dx: &mut [f64]) {
        let n = self.input;
        let mut dz2 = [0.0; HIDDEN];
        for j in 0..OUTPUT {
            grad.b3[j] += dout[j];
            if dout[j] == 0.0 {
                continue;
            }
            let g = &mut grad.w3[j * HIDDEN..(j + 1) * HIDDEN];
            let w = &self.w3[j * HIDDEN..(j + 1) * HIDDEN];
            for k in 0..HIDDEN {
                g[k] += dout[j] * act.a2[k];
                dz2[k] += dout[j] * w[k];
            }
        }
        let mut dz1 = [0.0; HIDDEN];
        for j in 0..HIDDEN {
            let d = if act.a2[j] > 0.0 { dz2[j] } else { 0.0 };
            if d == 0.0 {
                continue;
            }
            grad.b2[j] += d;
            let g = &mut grad.w2[j * HIDDEN..(j + 1) * HIDDEN];
            let w = &self.w2[j * HIDDEN..(j + 1) * HIDDEN];
            for k in 0..HIDDEN {
                g[k] += d * act.a1[k];
                dz1[k] += d * w[k];
            }
        }
        dx.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..HIDDEN {
            let d = if act.a1[j] > 0.0 { dz1[j] } else { 0.0 };
            if d == 0.0 {
                continue;
            }
            grad.b1[j] += d;
            let g = &mut grad.w1[j * n..(j + 1) * n];
            let w = &self.w1[j * n..(j + 1) * n];
            for k in 0..n {
                g[k] += d * x[k];
                dx[k] += d * w[k];
            }
        }
    }
}
