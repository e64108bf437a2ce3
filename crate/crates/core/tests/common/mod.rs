//! Test-only oracles, written independently of the library's code paths.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reptrain::nn::{LayerKind, LayerSpec, Network};

/// f64 re-implementation of the forward pass and mean cross-entropy.
///
/// `params[l]` holds `(weight, bias)` for parametric layers. The returned
/// pattern records every ReLU sign and max-pool winner so callers can tell
/// when a finite-difference step crossed a kink.
pub struct Reference {
    pub input_shape: [usize; 3],
    pub layers: Vec<LayerSpec>,
    pub params: Vec<Option<(Vec<f64>, Vec<f64>)>>,
}

impl Reference {
    pub fn from_network(net: &Network) -> Self {
        Reference {
            input_shape: net.input_shape(),
            layers: net.layers().to_vec(),
            params: net
                .params()
                .iter()
                .map(|p| {
                    p.as_ref().map(|p| {
                        (
                            p.weight.data().iter().map(|&v| v as f64).collect(),
                            p.bias.data().iter().map(|&v| v as f64).collect(),
                        )
                    })
                })
                .collect(),
        }
    }

    /// Logits for one `C×H×W` input plus the kink pattern.
    pub fn logits(&self, input: &[f64]) -> (Vec<f64>, Vec<usize>) {
        let mut shape = self.input_shape.to_vec();
        let mut x = input.to_vec();
        let mut pattern = Vec::new();
        for (l, spec) in self.layers.iter().enumerate() {
            match spec.kind {
                LayerKind::Conv {
                    out_channels,
                    kernel_size: k,
                    stride,
                    padding,
                    ..
                } => {
                    let (c, h, w) = (shape[0], shape[1], shape[2]);
                    let oh = (h + 2 * padding - k) / stride + 1;
                    let ow = (w + 2 * padding - k) / stride + 1;
                    let (wt, b) = self.params[l].as_ref().unwrap();
                    let mut out = vec![0.0; out_channels * oh * ow];
                    for o in 0..out_channels {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let mut acc = b[o];
                                for ci in 0..c {
                                    for ky in 0..k {
                                        for kx in 0..k {
                                            let iy = (oy * stride + ky) as isize - padding as isize;
                                            let ix = (ox * stride + kx) as isize - padding as isize;
                                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                                continue;
                                            }
                                            acc += wt[((o * c + ci) * k + ky) * k + kx]
                                                * x[(ci * h + iy as usize) * w + ix as usize];
                                        }
                                    }
                                }
                                out[(o * oh + oy) * ow + ox] = acc;
                            }
                        }
                    }
                    x = out;
                    shape = vec![out_channels, oh, ow];
                }
                LayerKind::ReLU => {
                    for v in &mut x {
                        pattern.push((*v > 0.0) as usize);
                        *v = v.max(0.0);
                    }
                }
                LayerKind::MaxPool { window, stride } => {
                    let (c, h, w) = (shape[0], shape[1], shape[2]);
                    let oh = (h - window) / stride + 1;
                    let ow = (w - window) / stride + 1;
                    let mut out = Vec::with_capacity(c * oh * ow);
                    for ci in 0..c {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let mut best = f64::NEG_INFINITY;
                                let mut arg = 0;
                                for dy in 0..window {
                                    for dx in 0..window {
                                        let v = x[(ci * h + oy * stride + dy) * w + ox * stride + dx];
                                        if v > best {
                                            best = v;
                                            arg = dy * window + dx;
                                        }
                                    }
                                }
                                pattern.push(arg);
                                out.push(best);
                            }
                        }
                    }
                    x = out;
                    shape = vec![c, oh, ow];
                }
                LayerKind::Flatten => shape = vec![x.len()],
                LayerKind::Dense {
                    in_features,
                    out_features,
                } => {
                    let (wt, b) = self.params[l].as_ref().unwrap();
                    x = (0..out_features)
                        .map(|o| b[o] + (0..in_features).map(|i| wt[o * in_features + i] * x[i]).sum::<f64>())
                        .collect();
                    shape = vec![out_features];
                }
            }
        }
        (x, pattern)
    }

    /// Mean cross-entropy over a batch of `C×H×W` inputs.
    pub fn loss(&self, inputs: &[Vec<f64>], targets: &[usize]) -> (f64, Vec<usize>) {
        let mut total = 0.0;
        let mut pattern = Vec::new();
        for (x, &t) in inputs.iter().zip(targets) {
            let (z, p) = self.logits(x);
            let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            total += lse - z[t];
            pattern.extend(p);
        }
        (total / inputs.len() as f64, pattern)
    }
}

/// Outcome of comparing analytic gradients against central differences.
#[derive(Debug, Default)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped_kinks: usize,
}

/// Relative error with a floor on the denominator so entries that are zero
/// in both routes do not divide by zero.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Checks every parameter of `net` with central differences of step `eps`.
///
/// When ±eps changes a ReLU sign or pool winner the step is shrunk tenfold
/// (down to eps·1e-3); coordinates that sit on a kink at every step are
/// skipped and counted.
pub fn grad_check(net: &Network, inputs: &[Vec<f32>], targets: &[usize], eps: f64) -> GradCheck {
    let [c, h, w] = net.input_shape();
    let batch: Vec<f32> = inputs.iter().flatten().copied().collect();
    let batch = reptrain::Tensor::new(vec![inputs.len(), c, h, w], batch).unwrap();
    let acts = net.forward(&batch).unwrap();
    let grads = net.backward(&acts, targets).unwrap();

    let inputs64: Vec<Vec<f64>> = inputs.iter().map(|x| x.iter().map(|&v| v as f64).collect()).collect();
    let mut reference = Reference::from_network(net);
    let (_, base_pattern) = reference.loss(&inputs64, targets);
    let mut result = GradCheck::default();

    for l in 0..reference.params.len() {
        let Some(g) = grads.layers[l].as_ref() else {
            continue;
        };
        let analytic: Vec<f32> = g.weight.data().iter().chain(g.bias.data()).copied().collect();
        let n_weight = g.weight.len();
        for (i, &a) in analytic.iter().enumerate() {
            let orig = *param_mut(&mut reference, l, i, n_weight);
            // eps first; shrink it only when the step straddles a kink
            let mut numeric = None;
            let mut step = eps;
            while step >= eps * 1e-3 {
                *param_mut(&mut reference, l, i, n_weight) = orig + step;
                let (plus, pat_plus) = reference.loss(&inputs64, targets);
                *param_mut(&mut reference, l, i, n_weight) = orig - step;
                let (minus, pat_minus) = reference.loss(&inputs64, targets);
                *param_mut(&mut reference, l, i, n_weight) = orig;
                if pat_plus == base_pattern && pat_minus == base_pattern {
                    numeric = Some((plus - minus) / (2.0 * step));
                    break;
                }
                step /= 10.0;
            }
            let Some(numeric) = numeric else {
                result.skipped_kinks += 1;
                continue;
            };
            result.max_rel_error = result.max_rel_error.max(rel_error(a as f64, numeric));
            result.checked += 1;
        }
    }
    result
}

fn param_mut(r: &mut Reference, layer: usize, index: usize, n_weight: usize) -> &mut f64 {
    let (wt, b) = r.params[layer].as_mut().unwrap();
    if index < n_weight {
        &mut wt[index]
    } else {
        &mut b[index - n_weight]
    }
}

/// 2-conv + 1-dense network over 8×8 inputs with randomized widths.
pub fn random_case(seed: u64) -> (Network, Vec<Vec<f32>>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c_in = rng.random_range(1..=3);
    let c1 = rng.random_range(2..=4);
    let c2 = rng.random_range(2..=4);
    let classes = rng.random_range(2..=5);
    let specs = vec![
        LayerSpec::conv(c_in, c1, 3, 1, 1),
        LayerSpec::relu(),
        LayerSpec::max_pool(2, 2),
        LayerSpec::conv(c1, c2, 3, 1, 1),
        LayerSpec::relu(),
        LayerSpec::flatten(),
        LayerSpec::dense(c2 * 16, classes),
    ];
    let mut net = Network::build([c_in, 8, 8], specs, (0..classes as i32).collect(), seed).unwrap();
    // non-zero biases so ReLU/bias gradients are exercised away from the origin
    let scores = net.class_scores().to_vec();
    net = net.replace_head(scores, seed ^ 0xABCD).unwrap();
    let batch = rng.random_range(1..=3);
    let inputs = (0..batch)
        .map(|_| (0..c_in * 64).map(|_| rng.random_range(-1.0f32..1.0)).collect())
        .collect();
    let targets = (0..batch).map(|_| rng.random_range(0..classes)).collect();
    (net, inputs, targets)
}
