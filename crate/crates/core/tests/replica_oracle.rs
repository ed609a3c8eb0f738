//! The parallel replica average against a sequential, independently written
//! forward/backward pass over the same noise draws.

use std::time::Instant;

use plm_core::data::{one_hot, IMAGE_LEN, NUM_CLASSES};
use plm_core::engine::init_storage;
use plm_core::nncore::{Gradients, Network};
use plm_core::regularize::{
    parallel_dithered_gradient, DitherSpec, DropoutSpec, ReplicaConfig, ReplicaStreams,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn replica_rng(seed: u64, step: u64, k: u64) -> ChaCha8Rng {
    let mut s = mix(seed);
    for p in [step, k] {
        s = mix(s ^ mix(p));
    }
    ChaCha8Rng::seed_from_u64(s)
}

struct Plain {
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    n_in: usize,
    n_hid: usize,
    n_out: usize,
}

impl Plain {
    fn from(net: &Network) -> Self {
        let l = net.layers();
        Self {
            w1: l[0].weights().to_vec(),
            b1: l[0].biases().to_vec(),
            w2: l[1].weights().to_vec(),
            n_in: l[0].fan_in(),
            n_hid: l[0].fan_out(),
            n_out: l[1].fan_out(),
        }
    }

    /// Sigmoid hidden layer with mask, softmax output, cross-entropy gradient.
    fn grad(&self, x: &[f64], mask: &[f64], class: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut h = vec![0.0; self.n_hid];
        let mut hd = vec![0.0; self.n_hid];
        for j in 0..self.n_hid {
            let mut z = self.b1[j];
            for i in 0..self.n_in {
                z += self.w1[j * self.n_in + i] * x[i];
            }
            let s = 1.0 / (1.0 + (-z).exp());
            h[j] = s * mask[j];
            hd[j] = s * (1.0 - s) * mask[j];
        }
        let mut logits = vec![0.0; self.n_out];
        for o in 0..self.n_out {
            for j in 0..self.n_hid {
                logits[o] += self.w2[o * self.n_hid + j] * h[j];
            }
        }
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
        let sum: f64 = e.iter().sum();
        let delta2: Vec<f64> = (0..self.n_out)
            .map(|o| e[o] / sum - if o == class { 1.0 } else { 0.0 })
            .collect();
        let mut gw2 = vec![0.0; self.n_out * self.n_hid];
        for o in 0..self.n_out {
            for j in 0..self.n_hid {
                gw2[o * self.n_hid + j] = delta2[o] * h[j];
            }
        }
        let mut gw1 = vec![0.0; self.n_hid * self.n_in];
        let mut gb1 = vec![0.0; self.n_hid];
        for j in 0..self.n_hid {
            let mut back = 0.0;
            for o in 0..self.n_out {
                back += self.w2[o * self.n_hid + j] * delta2[o];
            }
            let d = back * hd[j];
            gb1[j] = d;
            for i in 0..self.n_in {
                gw1[j * self.n_in + i] = d * x[i];
            }
        }
        (gw1, gb1, gw2)
    }
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn check(net: &Network, image: &[f64], class: usize, seed: u64, step: u64) -> f64 {
    let count = 100;
    let got: Gradients = parallel_dithered_gradient(
        net,
        image,
        &one_hot(class, NUM_CLASSES).unwrap(),
        ReplicaConfig::new(count).unwrap(),
        DitherSpec::new(1.0).unwrap(),
        DropoutSpec::new(0.5).unwrap(),
        ReplicaStreams::new(seed, step),
    )
    .unwrap();

    let plain = Plain::from(net);
    let mut sw1 = vec![0.0; plain.w1.len()];
    let mut sb1 = vec![0.0; plain.n_hid];
    let mut sw2 = vec![0.0; plain.w2.len()];
    for k in 0..count as u64 {
        let mut rng = replica_rng(seed, step, k);
        let x: Vec<f64> = image
            .iter()
            .map(|&p| p + rng.gen::<f64>() - 0.5)
            .collect();
        let mask: Vec<f64> = (0..plain.n_hid)
            .map(|_| if rng.gen::<f64>() < 0.5 { 0.0 } else { 2.0 })
            .collect();
        let (gw1, gb1, gw2) = plain.grad(&x, &mask, class);
        for (s, g) in sw1.iter_mut().zip(&gw1) {
            *s += g;
        }
        for (s, g) in sb1.iter_mut().zip(&gb1) {
            *s += g;
        }
        for (s, g) in sw2.iter_mut().zip(&gw2) {
            *s += g;
        }
    }
    let n = count as f64;
    let mean = |v: Vec<f64>| v.into_iter().map(|s| s / n).collect::<Vec<_>>();
    let (mw1, mb1, mw2) = (mean(sw1), mean(sb1), mean(sw2));

    assert!(got.biases[1].iter().all(|&b| b == 0.0), "pinned output bias got a gradient");
    max_diff(&got.weights[0], &mw1)
        .max(max_diff(&got.biases[0], &mb1))
        .max(max_diff(&got.weights[1], &mw2))
}

#[test]
fn hundred_replica_mean_matches_sequential_oracle() {
    let net = init_storage(17).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let image: Vec<f64> = (0..IMAGE_LEN).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let start = Instant::now();
    let diff = check(&net, &image, 42, 4, 1234);
    let elapsed = start.elapsed();
    assert!(diff <= 1e-12, "max abs difference {diff:e}");
    assert!(elapsed.as_secs_f64() < 5.0, "took {elapsed:?}");
}

#[test]
fn oracle_agrees_across_steps_and_classes() {
    let net = init_storage(5).unwrap();
    let image = vec![0.1; IMAGE_LEN];
    for (class, step) in [(0, 0), (74, 1), (30, u64::MAX)] {
        let diff = check(&net, &image, class, 99, step);
        assert!(diff <= 1e-12, "class {class} step {step}: {diff:e}");
    }
}
