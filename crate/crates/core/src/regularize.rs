//! Dither, inverted dropout, and the parallel-dither gradient average.
//!
//! Every regularized SGD step evaluates `count` corrupted replicas of one
//! example. Replica `k` at step `s` draws its noise from a generator that is
//! a pure function of `(seed, s, k)`, so results do not depend on the
//! evaluation order or on how many threads run the replicas.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{PlmError, Result};
use crate::nncore::{Gradients, Network};

/// Replicas are summed in fixed blocks of this size; blocks are then
/// combined in index order. Keeps the reduction independent of thread count.
const REPLICA_BLOCK: usize = 10;

/// Uniform dither with the given peak-to-peak width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DitherSpec {
    pub amplitude: f64,
}

impl DitherSpec {
    pub fn new(amplitude: f64) -> Result<Self> {
        if !(amplitude >= 0.0 && amplitude.is_finite()) {
            return Err(PlmError::config(format!(
                "dither amplitude must be finite and non-negative, got {amplitude}"
            )));
        }
        Ok(Self { amplitude })
    }

    pub fn none() -> Self {
        Self { amplitude: 0.0 }
    }
}

impl Default for DitherSpec {
    fn default() -> Self {
        Self { amplitude: 1.0 }
    }
}

/// Inverted dropout: kept units are scaled by `1 / (1 - rate)` at train time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropoutSpec {
    pub rate: f64,
}

impl DropoutSpec {
    pub fn new(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(PlmError::config(format!("dropout rate must be in [0, 1), got {rate}")));
        }
        Ok(Self { rate })
    }

    pub fn none() -> Self {
        Self { rate: 0.0 }
    }

    pub fn keep_scale(&self) -> f64 {
        1.0 / (1.0 - self.rate)
    }
}

impl Default for DropoutSpec {
    fn default() -> Self {
        Self { rate: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReplicaConfig {
    pub count: usize,
}

impl ReplicaConfig {
    pub fn new(count: usize) -> Result<Self> {
        if count == 0 {
            return Err(PlmError::config("replica count must be at least 1"));
        }
        Ok(Self { count })
    }
}

impl Default for ReplicaConfig {
    fn default() -> Self {
        Self { count: 100 }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a 64-bit seed from a base seed and a path of indices.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(base), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// Source of per-replica generators for one training step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReplicaStreams {
    pub seed: u64,
    pub step: u64,
}

impl ReplicaStreams {
    pub fn new(seed: u64, step: u64) -> Self {
        Self { seed, step }
    }

    pub fn replica_rng(&self, replica: usize) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &[self.step, replica as u64]))
    }
}

/// Returns `input + noise` with noise i.i.d. uniform on `[-a/2, a/2]`.
pub fn dither<R: Rng + ?Sized>(input: &[f64], spec: DitherSpec, rng: &mut R) -> Vec<f64> {
    let half = spec.amplitude / 2.0;
    input
        .iter()
        .map(|&x| {
            // Draw even when the amplitude is zero so stream positions stay aligned.
            let u: f64 = rng.gen();
            x + (2.0 * u - 1.0) * half
        })
        .collect()
}

/// Each entry is 0 with probability `rate`, otherwise `1 / (1 - rate)`.
pub fn sample_dropout_mask<R: Rng + ?Sized>(
    dim: usize,
    spec: DropoutSpec,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if dim == 0 {
        return Err(PlmError::config("dropout mask dimension must be positive"));
    }
    if !(0.0..1.0).contains(&spec.rate) {
        return Err(PlmError::config(format!(
            "dropout rate must be in [0, 1), got {}",
            spec.rate
        )));
    }
    let keep = spec.keep_scale();
    Ok((0..dim)
        .map(|_| {
            let u: f64 = rng.gen();
            if u < spec.rate {
                0.0
            } else {
                keep
            }
        })
        .collect())
}

/// Gradient of a single corrupted replica: dither the input, sample one mask
/// per hidden layer, then forward and backward. Draw order is input noise
/// first, then masks from the first hidden layer onward.
pub fn replica_gradient<R: Rng + ?Sized>(
    net: &Network,
    input: &[f64],
    target: &[f64],
    dither_spec: DitherSpec,
    dropout: DropoutSpec,
    rng: &mut R,
) -> Result<Gradients> {
    let mut g = Gradients::zeros_like(net);
    accumulate_replica(net, input, target, dither_spec, dropout, rng, &mut g)?;
    Ok(g)
}

fn accumulate_replica<R: Rng + ?Sized>(
    net: &Network,
    input: &[f64],
    target: &[f64],
    dither_spec: DitherSpec,
    dropout: DropoutSpec,
    rng: &mut R,
    acc: &mut Gradients,
) -> Result<()> {
    let noisy = dither(input, dither_spec, rng);
    let masks = net
        .hidden_dims()
        .into_iter()
        .map(|d| sample_dropout_mask(d, dropout, rng))
        .collect::<Result<Vec<_>>>()?;
    let (_, trace) = net.forward(&noisy, Some(&masks))?;
    net.accumulate_gradients(&trace, target, acc)
}

/// Mean gradient over `replicas.count` independently dithered and dropped-out
/// copies of one example.
///
/// With zero dither and zero dropout every replica is identical, and the
/// plain single-example gradient is returned.
pub fn parallel_dithered_gradient(
    net: &Network,
    input: &[f64],
    target: &[f64],
    replicas: ReplicaConfig,
    dither_spec: DitherSpec,
    dropout: DropoutSpec,
    streams: ReplicaStreams,
) -> Result<Gradients> {
    if replicas.count == 0 {
        return Err(PlmError::config("replica count must be at least 1"));
    }
    if input.len() != net.input_dim() || target.len() != net.output_dim() {
        return Err(PlmError::shape("example does not match network dimensions"));
    }
    if dither_spec.amplitude == 0.0 && dropout.rate == 0.0 {
        let (_, trace) = net.forward(input, None)?;
        let g = net.backward(&trace, target)?;
        return check_finite(g);
    }

    let count = replicas.count;
    let blocks: Vec<Gradients> = (0..count.div_ceil(REPLICA_BLOCK))
        .into_par_iter()
        .map(|b| {
            let mut acc = Gradients::zeros_like(net);
            for k in b * REPLICA_BLOCK..((b + 1) * REPLICA_BLOCK).min(count) {
                let mut rng = streams.replica_rng(k);
                accumulate_replica(net, input, target, dither_spec, dropout, &mut rng, &mut acc)?;
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;

    let mut iter = blocks.into_iter();
    let mut total = iter.next().expect("at least one block");
    for block in iter {
        total.add_assign(&block);
    }
    total.div_assign(count as f64);
    check_finite(total)
}

fn check_finite(g: Gradients) -> Result<Gradients> {
    if g.is_finite() {
        Ok(g)
    } else {
        Err(PlmError::Numeric("non-finite replica gradient".into()))
    }
}
