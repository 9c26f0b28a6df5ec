//! `PREFREC-CKPT v1` tensor files.
//!
//! Layout: the ASCII header line `PREFREC-CKPT v1\n`, then a payload of
//! tensors, then the CRC32 of the payload as a little-endian `u32`. Each
//! tensor is
//!
//! ```text
//! u32 name_len | name (UTF-8) | u32 rank | rank x u32 dims | prod(dims) x f32
//! ```
//!
//! with every integer and float little-endian and data row-major.

use std::fs;
use std::path::Path;

use thiserror::Error;

use super::adam::Adam;
use super::mlp::{Activation, Gradients, Layer, Mlp};

pub const CHECKPOINT_HEADER: &str = "PREFREC-CKPT v1\n";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("missing `PREFREC-CKPT v1` header")]
    BadHeader,
    #[error("checkpoint truncated at byte {0}")]
    Truncated(usize),
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("tensor name is not UTF-8")]
    BadName,
    #[error("tensor `{0}` not found")]
    Missing(String),
    #[error("tensor `{name}` has shape {actual:?}, expected {expected:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("duplicate tensor `{0}`")]
    Duplicate(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

/// An ordered collection of named tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    tensors: Vec<Tensor>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn push(&mut self, name: impl Into<String>, dims: Vec<usize>, data: &[f64]) {
        let name = name.into();
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        self.tensors.push(Tensor {
            name,
            dims,
            data: data.iter().map(|&v| v as f32).collect(),
        });
    }

    pub fn get(&self, name: &str) -> Result<&Tensor, CheckpointError> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| CheckpointError::Missing(name.to_string()))
    }

    fn get_shaped(&self, name: &str, dims: &[usize]) -> Result<&Tensor, CheckpointError> {
        let t = self.get(name)?;
        if t.dims != dims {
            return Err(CheckpointError::Shape {
                name: name.to_string(),
                expected: dims.to_vec(),
                actual: t.dims.clone(),
            });
        }
        Ok(t)
    }

    pub fn scalar(&self, name: &str) -> Result<f64, CheckpointError> {
        Ok(self.get_shaped(name, &[1])?.data[0] as f64)
    }

    pub fn push_scalar(&mut self, name: impl Into<String>, value: f64) {
        self.push(name, vec![1], &[value]);
    }

    /// Stores `net` as `{prefix}.{k}.weight` / `{prefix}.{k}.bias`.
    pub fn push_mlp(&mut self, prefix: &str, net: &Mlp) {
        for (k, layer) in net.layers().iter().enumerate() {
            self.push(
                format!("{prefix}.{k}.weight"),
                vec![layer.outputs(), layer.inputs()],
                layer.weight(),
            );
            self.push(format!("{prefix}.{k}.bias"), vec![layer.outputs()], layer.bias());
        }
    }

    /// Rebuilds an MLP stored under `prefix` with rectifier hidden layers and
    /// an identity output layer.
    pub fn mlp(&self, prefix: &str) -> Result<Mlp, CheckpointError> {
        let mut layers = Vec::new();
        loop {
            let k = layers.len();
            let wname = format!("{prefix}.{k}.weight");
            let Ok(w) = self.get(&wname) else { break };
            if w.dims.len() != 2 {
                return Err(CheckpointError::Shape {
                    name: wname,
                    expected: vec![0, 0],
                    actual: w.dims.clone(),
                });
            }
            let (outputs, inputs) = (w.dims[0], w.dims[1]);
            let b = self.get_shaped(&format!("{prefix}.{k}.bias"), &[outputs])?;
            layers.push((inputs, outputs, widen(&w.data), widen(&b.data)));
        }
        if layers.is_empty() {
            return Err(CheckpointError::Missing(format!("{prefix}.0.weight")));
        }
        let last = layers.len() - 1;
        let built: Vec<Layer> = layers
            .into_iter()
            .enumerate()
            .map(|(k, (i, o, w, b))| {
                let act = if k == last {
                    Activation::Identity
                } else {
                    Activation::Relu
                };
                Layer::new(i, o, w, b, act).expect("dims checked above")
            })
            .collect();
        Mlp::from_layers(built).map_err(|_| CheckpointError::Shape {
            name: prefix.to_string(),
            expected: vec![],
            actual: vec![],
        })
    }

    /// Overwrites the parameters of `net` in place, checking every shape.
    pub fn restore_mlp(&self, prefix: &str, net: &mut Mlp) -> Result<(), CheckpointError> {
        let loaded = self.mlp(prefix)?;
        if loaded.sizes() != net.sizes() {
            return Err(CheckpointError::Shape {
                name: prefix.to_string(),
                expected: net.sizes(),
                actual: loaded.sizes(),
            });
        }
        for (dst, src) in net.params_mut().zip(loaded.params()) {
            *dst = *src;
        }
        Ok(())
    }

    pub fn push_adam(&mut self, prefix: &str, net: &Mlp, adam: &Adam) {
        self.push_scalar(format!("{prefix}.adam.step"), adam.step_count() as f64);
        push_grads(self, &format!("{prefix}.adam.m"), net, adam.first_moment());
        push_grads(self, &format!("{prefix}.adam.v"), net, adam.second_moment());
    }

    pub fn restore_adam(
        &self,
        prefix: &str,
        net: &Mlp,
        adam: &mut Adam,
    ) -> Result<(), CheckpointError> {
        let step = self.scalar(&format!("{prefix}.adam.step"))? as u64;
        let m = self.grads(&format!("{prefix}.adam.m"), net)?;
        let v = self.grads(&format!("{prefix}.adam.v"), net)?;
        adam.restore(step, m, v).map_err(|_| CheckpointError::Shape {
            name: format!("{prefix}.adam"),
            expected: net.sizes(),
            actual: vec![],
        })
    }

    fn grads(&self, prefix: &str, net: &Mlp) -> Result<Gradients, CheckpointError> {
        let mut g = Gradients::zeros_like(net);
        for (k, layer) in net.layers().iter().enumerate() {
            let w = self.get_shaped(
                &format!("{prefix}.{k}.weight"),
                &[layer.outputs(), layer.inputs()],
            )?;
            let b = self.get_shaped(&format!("{prefix}.{k}.bias"), &[layer.outputs()])?;
            g.weights[k] = widen(&w.data);
            g.biases[k] = widen(&b.data);
        }
        Ok(g)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut payload = Vec::new();
        for t in &self.tensors {
            payload.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            payload.extend_from_slice(t.name.as_bytes());
            payload.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
            for &d in &t.dims {
                payload.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in &t.data {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&payload);
        let mut out = Vec::with_capacity(CHECKPOINT_HEADER.len() + payload.len() + 4);
        out.extend_from_slice(CHECKPOINT_HEADER.as_bytes());
        out.extend_from_slice(&payload);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let header = CHECKPOINT_HEADER.as_bytes();
        if !bytes.starts_with(header) {
            return Err(CheckpointError::BadHeader);
        }
        let body = &bytes[header.len()..];
        if body.len() < 4 {
            return Err(CheckpointError::Truncated(bytes.len()));
        }
        let (payload, tail) = body.split_at(body.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        let computed = crc32fast::hash(payload);
        if stored != computed {
            return Err(CheckpointError::Checksum { stored, computed });
        }

        let mut reader = Reader {
            buf: payload,
            pos: 0,
            base: header.len(),
        };
        let mut tensors: Vec<Tensor> = Vec::new();
        while reader.pos < payload.len() {
            let name_len = reader.u32()? as usize;
            let name = std::str::from_utf8(reader.take(name_len)?)
                .map_err(|_| CheckpointError::BadName)?
                .to_string();
            let rank = reader.u32()? as usize;
            let dims = (0..rank)
                .map(|_| reader.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()?;
            let count: usize = dims.iter().product();
            let raw = reader.take(count * 4)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            if tensors.iter().any(|t| t.name == name) {
                return Err(CheckpointError::Duplicate(name));
            }
            tensors.push(Tensor { name, dims, data });
        }
        Ok(Self { tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn push_grads(ckpt: &mut Checkpoint, prefix: &str, net: &Mlp, g: &Gradients) {
    for (k, layer) in net.layers().iter().enumerate() {
        ckpt.push(
            format!("{prefix}.{k}.weight"),
            vec![layer.outputs(), layer.inputs()],
            g.weight(k),
        );
        ckpt.push(format!("{prefix}.{k}.bias"), vec![layer.outputs()], g.bias(k));
    }
}

fn widen(data: &[f32]) -> Vec<f64> {
    data.iter().map(|&v| v as f64).collect()
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    base: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or(CheckpointError::Truncated(self.base + self.pos))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }
}
