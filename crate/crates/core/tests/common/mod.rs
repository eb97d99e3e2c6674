//! Oracles and fixtures shared by the integration tests.

#![allow(dead_code, clippy::needless_range_loop)]

use std::path::Path;

use activepool::datapool::{Label, Sample, SampleId, SampleStore, Split};
use activepool::model::{LayerParams, ModelState, OptimizerState, Params};
use rand::Rng;

/// EER by evaluating every candidate threshold directly: `-inf`, `+inf` and
/// the midpoint of each adjacent pair of distinct scores. Returns
/// `(eer, threshold, far, frr)`.
pub fn brute_force_eer(real: &[f64], fake: &[f64]) -> (f64, f64, f64, f64) {
    let mut pooled: Vec<f64> = real.iter().chain(fake).copied().collect();
    pooled.sort_by(f64::total_cmp);
    pooled.dedup();
    let mut candidates = vec![f64::NEG_INFINITY, f64::INFINITY];
    for w in pooled.windows(2) {
        candidates.push(w[0] + (w[1] - w[0]) / 2.0);
    }
    let (nr, nf) = (real.len() as i128, fake.len() as i128);
    let mut best: Option<((i128, i128, f64), usize, usize)> = None;
    for &theta in &candidates {
        let fakes_below = fake.iter().filter(|&&s| s < theta).count();
        let reals_above = real.iter().filter(|&&s| s >= theta).count();
        // FAR = fakes_below / nf and FRR = reals_above / nr, compared over nr * nf
        let far = fakes_below as i128 * nr;
        let frr = reals_above as i128 * nf;
        let key = ((far - frr).abs(), far + frr, theta);
        let better = match &best {
            None => true,
            Some((b, _, _)) => {
                (key.0, key.1) < (b.0, b.1) || ((key.0, key.1) == (b.0, b.1) && key.2 < b.2)
            }
        };
        if better {
            best = Some((key, fakes_below, reals_above));
        }
    }
    let ((_, _, theta), fb, ra) = best.unwrap();
    let far = fb as f64 / fake.len() as f64;
    let frr = ra as f64 / real.len() as f64;
    ((far + frr) / 2.0, theta, far, frr)
}

/// Logits by straightforward nested loops over the model's parameters.
pub fn reference_forward(model: &ModelState, x: &[f64]) -> Vec<f64> {
    let dims = model.layer_dims();
    let layers = &model.params().layers;
    let mut act = x.to_vec();
    for (l, layer) in layers.iter().enumerate() {
        let (n_in, n_out) = (dims[l], dims[l + 1]);
        let mut next = vec![0.0; n_out];
        for o in 0..n_out {
            let mut z = layer.bias[o];
            for i in 0..n_in {
                z += layer.weights[o * n_in + i] * act[i];
            }
            next[o] = if l + 1 < layers.len() { z.max(0.0) } else { z };
        }
        act = next;
    }
    act
}

/// Smallest absolute hidden pre-activation over `inputs`; used to keep
/// finite-difference probes away from ReLU kinks.
pub fn min_hidden_margin(model: &ModelState, inputs: &[Vec<f64>]) -> f64 {
    let dims = model.layer_dims();
    let layers = &model.params().layers;
    let mut margin = f64::INFINITY;
    for x in inputs {
        let mut act = x.clone();
        for (l, layer) in layers.iter().enumerate().take(layers.len() - 1) {
            let (n_in, n_out) = (dims[l], dims[l + 1]);
            let mut next = vec![0.0; n_out];
            for o in 0..n_out {
                let z = layer.bias[o]
                    + (0..n_in)
                        .map(|i| layer.weights[o * n_in + i] * act[i])
                        .sum::<f64>();
                margin = margin.min(z.abs());
                next[o] = z.max(0.0);
            }
            act = next;
        }
    }
    margin
}

/// Model with every parameter drawn from `U(-scale, scale)`.
pub fn random_model(dims: Vec<usize>, scale: f64, rng: &mut impl Rng) -> ModelState {
    let layers = dims
        .windows(2)
        .map(|w| LayerParams {
            weights: (0..w[0] * w[1])
                .map(|_| rng.random_range(-scale..scale))
                .collect(),
            bias: (0..w[1]).map(|_| rng.random_range(-scale..scale)).collect(),
        })
        .collect();
    let optimizer = OptimizerState::fresh(&dims);
    ModelState::new(dims, Params { layers }, optimizer, 0).unwrap()
}

pub fn sample(
    id: SampleId,
    features: Vec<f32>,
    label: Label,
    source: &str,
    split: Split,
) -> Sample {
    Sample {
        id,
        features,
        label,
        source: source.to_string(),
        split,
    }
}

/// Two tight, well separated clusters: REAL around `-3`, FAKE around `+3`.
pub fn separable_store(
    n_per_class: usize,
    split: Split,
    first_id: SampleId,
    rng: &mut impl Rng,
) -> Vec<Sample> {
    let mut out = Vec::new();
    for (k, (label, centre)) in [(Label::Real, -3.0f32), (Label::Fake, 3.0f32)]
        .into_iter()
        .enumerate()
    {
        for i in 0..n_per_class {
            let id = first_id + (k * n_per_class + i) as SampleId;
            let features = (0..4)
                .map(|_| centre + rng.random_range(-0.5f32..0.5))
                .collect();
            out.push(sample(
                id,
                features,
                label,
                if k == 0 { "r" } else { "f" },
                split,
            ));
        }
    }
    out
}

pub fn store(dim: usize, samples: Vec<Sample>) -> SampleStore {
    SampleStore::new(dim, samples).unwrap()
}

pub fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}
