//! Versioned binary checkpoints.
//!
//! Layout (all integers `u32` little-endian):
//!
//! ```text
//! magic "SALGCKPT" | version | model kind | layer count
//! per layer:  tensor count, then per tensor: rank, dims...
//! payload:    every tensor in order as little-endian f32
//! ```

use std::fs;
use std::path::Path;

use super::classifier::CamClassifier;
use super::conv::Conv2d;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SALGCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum ModelKind {
    Classifier = 1,
    Mimic = 2,
}

impl ModelKind {
    fn from_u32(v: u32) -> Result<Self> {
        match v {
            1 => Ok(Self::Classifier),
            2 => Ok(Self::Mimic),
            other => Err(Error::Checkpoint(format!("unknown model kind {other}"))),
        }
    }
}

/// A parameter tensor as stored in a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl StoredTensor {
    pub fn new(shape: Vec<usize>, data: &[f64]) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            shape,
            data: data.to_vec(),
        }
    }
}

pub type Layer = Vec<StoredTensor>;

pub fn encode(kind: ModelKind, layers: &[Layer]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(kind as u32).to_le_bytes());
    out.extend_from_slice(&(layers.len() as u32).to_le_bytes());
    for layer in layers {
        out.extend_from_slice(&(layer.len() as u32).to_le_bytes());
        for t in layer {
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
        }
    }
    for t in layers.iter().flatten() {
        for &v in &t.data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("unexpected end of file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32(&mut self) -> Result<f32> {
        let b = self.take(4)?;
        Ok(f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn decode(bytes: &[u8]) -> Result<(ModelKind, Vec<Layer>)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let kind = ModelKind::from_u32(r.u32()?)?;
    let n_layers = r.u32()? as usize;
    let mut shapes: Vec<Vec<Vec<usize>>> = Vec::new();
    for _ in 0..n_layers {
        let n_tensors = r.u32()? as usize;
        let mut layer = Vec::new();
        for _ in 0..n_tensors {
            let rank = r.u32()? as usize;
            if rank > 8 {
                return Err(Error::Checkpoint(format!("implausible rank {rank}")));
            }
            layer.push((0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<_>>()?);
        }
        shapes.push(layer);
    }
    let mut layers = Vec::with_capacity(n_layers);
    for layer_shapes in shapes {
        let mut layer = Vec::new();
        for shape in layer_shapes {
            let n: usize = shape.iter().product();
            let data = (0..n)
                .map(|_| r.f32().map(f64::from))
                .collect::<Result<Vec<_>>>()?;
            if data.iter().any(|v| !v.is_finite()) {
                return Err(Error::Checkpoint("non-finite parameter".into()));
            }
            layer.push(StoredTensor { shape, data });
        }
        layers.push(layer);
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    Ok((kind, layers))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn conv_layer(c: &Conv2d) -> Layer {
    vec![
        StoredTensor::new(vec![c.out_channels, c.in_channels, 3, 3], &c.weight),
        StoredTensor::new(vec![c.out_channels], &c.bias),
    ]
}

pub(crate) fn expect_tensor<'a>(layer: &'a Layer, idx: usize, shape: &[usize]) -> Result<&'a [f64]> {
    let t = layer
        .get(idx)
        .ok_or_else(|| Error::Checkpoint("missing tensor".into()))?;
    if t.shape != shape {
        return Err(Error::Checkpoint(format!(
            "tensor shape {:?}, expected {shape:?}",
            t.shape
        )));
    }
    Ok(&t.data)
}

impl CamClassifier {
    pub fn to_checkpoint(&self) -> Vec<u8> {
        let mut layers: Vec<Layer> = self.convs.iter().map(conv_layer).collect();
        let k = self.feature_channels();
        layers.push(vec![
            StoredTensor::new(vec![self.classes, k], &self.head_weight),
            StoredTensor::new(vec![self.classes], &self.head_bias),
        ]);
        encode(ModelKind::Classifier, &layers)
    }

    pub fn from_checkpoint(bytes: &[u8]) -> Result<Self> {
        let (kind, layers) = decode(bytes)?;
        if kind != ModelKind::Classifier {
            return Err(Error::Checkpoint("not a classifier checkpoint".into()));
        }
        let (head, convs) = layers
            .split_last()
            .ok_or_else(|| Error::Checkpoint("no layers".into()))?;
        let mut prev = None;
        let mut parsed = Vec::new();
        for layer in convs {
            let shape = &layer
                .first()
                .ok_or_else(|| Error::Checkpoint("empty layer".into()))?
                .shape;
            let [out_c, in_c, 3, 3] = shape[..] else {
                return Err(Error::Checkpoint(format!("bad conv shape {shape:?}")));
            };
            if prev.is_some_and(|p| p != in_c) {
                return Err(Error::Checkpoint("conv channels do not chain".into()));
            }
            let mut conv = Conv2d::zeros(in_c, out_c, 1, 1);
            conv.weight = expect_tensor(layer, 0, &[out_c, in_c, 3, 3])?.to_vec();
            conv.bias = expect_tensor(layer, 1, &[out_c])?.to_vec();
            parsed.push(conv);
            prev = Some(out_c);
        }
        let in_channels = parsed
            .first()
            .map(|c| c.in_channels)
            .ok_or_else(|| Error::Checkpoint("classifier without conv layers".into()))?;
        let k = prev.unwrap_or(in_channels);
        let classes = head
            .first()
            .and_then(|t| t.shape.first().copied())
            .ok_or_else(|| Error::Checkpoint("missing head".into()))?;
        Ok(Self {
            in_channels,
            classes,
            convs: parsed,
            head_weight: expect_tensor(head, 0, &[classes, k])?.to_vec(),
            head_bias: expect_tensor(head, 1, &[classes])?.to_vec(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classifier_round_trip_is_lossless() {
        let model = CamClassifier::desk(9);
        let bytes = model.to_checkpoint();
        assert_eq!(&bytes[..8], MAGIC);
        let back = CamClassifier::from_checkpoint(&bytes).unwrap();
        assert_eq!(back, model);
        assert_eq!(back.to_checkpoint(), bytes);
    }

    #[test]
    fn corrupt_checkpoints_are_rejected() {
        let bytes = CamClassifier::desk(1).to_checkpoint();
        assert!(CamClassifier::from_checkpoint(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(CamClassifier::from_checkpoint(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(CamClassifier::from_checkpoint(&extra).is_err());
    }
}
