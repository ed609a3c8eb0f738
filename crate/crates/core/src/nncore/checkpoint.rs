//! Binary network serialization.
//!
//! A checkpoint is the 8-byte magic `PLMCKPT1` followed by one or more
//! network records. Each record is:
//!
//! ```text
//! u32 layer_count
//! layer_count x (u32 fan_in, u32 fan_out, u32 activation_tag, u32 bias_trainable)
//! for each layer: fan_out*fan_in f64 weights (row-major), fan_out f64 biases
//! ```
//!
//! All integers and floats are little-endian. Activation tags are
//! 0 = sigmoid, 1 = softmax, 2 = identity. The loss kind is implied by the
//! output activation (softmax pairs with cross-entropy, anything else with
//! mean squared error).

use std::io::{Read, Write};

use super::{ActivationKind, DenseLayer, LossKind, Network};
use crate::error::{PlmError, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PLMCKPT1";

// Generous upper bound that still rejects garbage headers before allocating.
const MAX_LAYER_WIDTH: u32 = 1 << 20;
const MAX_LAYERS: u32 = 1024;

pub fn write_network<W: Write>(w: &mut W, net: &Network) -> Result<()> {
    w.write_all(&(net.layers.len() as u32).to_le_bytes())?;
    for l in &net.layers {
        for v in [
            l.fan_in as u32,
            l.fan_out as u32,
            l.activation.tag(),
            l.bias_trainable as u32,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    for l in &net.layers {
        for x in l.weights.iter().chain(&l.biases) {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; n * 8];
    r.read_exact(&mut bytes).map_err(truncated)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

fn truncated(e: std::io::Error) -> PlmError {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        PlmError::format("checkpoint is truncated")
    } else {
        PlmError::Io(e)
    }
}

pub fn read_network<R: Read>(r: &mut R) -> Result<Network> {
    let count = read_u32(r)?;
    if count == 0 || count > MAX_LAYERS {
        return Err(PlmError::format(format!("implausible layer count {count}")));
    }
    let mut headers = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let fan_in = read_u32(r)?;
        let fan_out = read_u32(r)?;
        let tag = read_u32(r)?;
        let trainable = read_u32(r)?;
        if fan_in == 0 || fan_out == 0 || fan_in > MAX_LAYER_WIDTH || fan_out > MAX_LAYER_WIDTH {
            return Err(PlmError::format(format!("implausible layer {fan_in}x{fan_out}")));
        }
        let act = ActivationKind::from_tag(tag)
            .ok_or_else(|| PlmError::format(format!("unknown activation tag {tag}")))?;
        let trainable = match trainable {
            0 => false,
            1 => true,
            v => return Err(PlmError::format(format!("bad bias flag {v}"))),
        };
        headers.push((fan_in as usize, fan_out as usize, act, trainable));
    }
    let mut layers = Vec::with_capacity(headers.len());
    for (fan_in, fan_out, act, trainable) in headers {
        let weights = read_f64s(r, fan_in * fan_out)?;
        let biases = read_f64s(r, fan_out)?;
        layers.push(
            DenseLayer::from_parts(fan_in, fan_out, weights, biases, act, trainable)
                .map_err(|e| PlmError::format(e.to_string()))?,
        );
    }
    let loss = if layers.last().map(|l| l.activation) == Some(ActivationKind::Softmax) {
        LossKind::CrossEntropy
    } else {
        LossKind::MeanSquaredError
    };
    Network::from_layers(layers, loss).map_err(|e| PlmError::format(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::init_network;

    #[test]
    fn network_round_trip_is_bit_exact() {
        let net = init_network(
            &[6, 5, 4],
            &[ActivationKind::Sigmoid, ActivationKind::Softmax],
            LossKind::CrossEntropy,
            11,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_network(&mut buf, &net).unwrap();
        assert_eq!(buf.len(), 4 + 2 * 16 + (6 * 5 + 5 + 5 * 4 + 4) * 8);
        let back = read_network(&mut buf.as_slice()).unwrap();
        assert_eq!(back, net);
        assert_eq!(back.loss(), LossKind::CrossEntropy);
    }

    #[test]
    fn truncation_is_a_format_error() {
        let net = init_network(&[3, 2], &[ActivationKind::Sigmoid], LossKind::MeanSquaredError, 1)
            .unwrap();
        let mut buf = Vec::new();
        write_network(&mut buf, &net).unwrap();
        for cut in [0, 3, 10, buf.len() - 1] {
            assert!(matches!(
                read_network(&mut &buf[..cut]),
                Err(PlmError::Format(_))
            ));
        }
    }
}
