use std::io::{Read, Write};

use rand::Rng;

use super::NnError;

const MAGIC: &[u8; 8] = b"DMNET\0\0\0";
const VERSION: u32 = 1;

/// Fully connected network: ReLU on hidden layers, linear output.
///
/// All parameters live in one flat vector. Layer `l` occupies
/// `W_l` (`out x in`, row-major) followed by its bias `b_l` (`out`).
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    dims: Vec<usize>,
    params: Vec<f64>,
}

/// Post-activation values of every layer, input first.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    activations: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("at least the input")
    }

    pub fn input(&self) -> &[f64] {
        &self.activations[0]
    }
}

fn param_count_for(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

fn check_dims(dims: &[usize]) -> Result<(), NnError> {
    if dims.len() < 2 || dims.contains(&0) {
        Err(NnError::InvalidDims(dims.to_vec()))
    } else {
        Ok(())
    }
}

impl DenseNet {
    /// Glorot-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Result<Self, NnError> {
        check_dims(dims)?;
        let mut params = Vec::with_capacity(param_count_for(dims));
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            params.extend((0..fan_in * fan_out).map(|_| rng.random_range(-limit..=limit)));
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Ok(Self { dims: dims.to_vec(), params })
    }

    pub fn zeros(dims: &[usize]) -> Result<Self, NnError> {
        check_dims(dims)?;
        Ok(Self { dims: dims.to_vec(), params: vec![0.0; param_count_for(dims)] })
    }

    pub fn from_params(dims: &[usize], params: Vec<f64>) -> Result<Self, NnError> {
        check_dims(dims)?;
        let expected = param_count_for(dims);
        if params.len() != expected {
            return Err(NnError::DimensionMismatch { expected, got: params.len() });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(NnError::NonFiniteParams);
        }
        Ok(Self { dims: dims.to_vec(), params })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().expect("validated")
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Scale the final layer (weights and bias) by `factor`.
    pub fn scale_output_layer(&mut self, factor: f64) {
        let n = self.dims.len();
        let (fan_in, fan_out) = (self.dims[n - 2], self.dims[n - 1]);
        let start = self.params.len() - (fan_in * fan_out + fan_out);
        for p in &mut self.params[start..] {
            *p *= factor;
        }
    }

    fn layer_offsets(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let mut offset = 0;
        self.dims.windows(2).map(move |w| {
            let at = offset;
            offset += w[0] * w[1] + w[1];
            (at, w[0], w[1])
        })
    }

    fn check_input(&self, input: &[f64]) -> Result<(), NnError> {
        if input.len() != self.dims[0] {
            return Err(NnError::DimensionMismatch { expected: self.dims[0], got: input.len() });
        }
        if input.iter().any(|x| !x.is_finite()) {
            return Err(NnError::NonFiniteInput);
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, NnError> {
        self.check_input(input)?;
        let last = self.dims.len() - 2;
        let mut x = input.to_vec();
        for (l, (at, fan_in, fan_out)) in self.layer_offsets().enumerate() {
            x = self.affine(at, fan_in, fan_out, &x, l != last);
        }
        Ok(x)
    }

    pub fn forward_cached(&self, input: &[f64]) -> Result<ForwardCache, NnError> {
        self.check_input(input)?;
        let last = self.dims.len() - 2;
        let mut activations = Vec::with_capacity(self.dims.len());
        activations.push(input.to_vec());
        for (l, (at, fan_in, fan_out)) in self.layer_offsets().enumerate() {
            let next = self.affine(at, fan_in, fan_out, &activations[l], l != last);
            activations.push(next);
        }
        Ok(ForwardCache { activations })
    }

    fn affine(&self, at: usize, fan_in: usize, fan_out: usize, x: &[f64], relu: bool) -> Vec<f64> {
        let w = &self.params[at..at + fan_in * fan_out];
        let b = &self.params[at + fan_in * fan_out..at + fan_in * fan_out + fan_out];
        w.chunks_exact(fan_in)
            .zip(b)
            .map(|(row, &bias)| {
                let z = bias + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                if relu { z.max(0.0) } else { z }
            })
            .collect()
    }

    /// Accumulates `d(output . output_grad)/d(params)` into `grads`.
    pub fn backward(&self, cache: &ForwardCache, output_grad: &[f64], grads: &mut [f64]) -> Result<(), NnError> {
        if output_grad.len() != self.output_dim() {
            return Err(NnError::DimensionMismatch { expected: self.output_dim(), got: output_grad.len() });
        }
        if grads.len() != self.params.len() {
            return Err(NnError::ShapeMismatch { params: self.params.len(), grads: grads.len() });
        }
        if cache.activations.len() != self.dims.len() || cache.activations[0].len() != self.dims[0] {
            return Err(NnError::DimensionMismatch { expected: self.dims.len(), got: cache.activations.len() });
        }
        let layers: Vec<_> = self.layer_offsets().collect();
        let mut delta = output_grad.to_vec();
        for (l, &(at, fan_in, fan_out)) in layers.iter().enumerate().rev() {
            let x = &cache.activations[l];
            let (gw, rest) = grads[at..at + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
            for ((row, gb), &d) in gw.chunks_exact_mut(fan_in).zip(rest.iter_mut()).zip(&delta) {
                if d == 0.0 {
                    continue;
                }
                *gb += d;
                for (g, &xi) in row.iter_mut().zip(x) {
                    *g += d * xi;
                }
            }
            if l == 0 {
                break;
            }
            let w = &self.params[at..at + fan_in * fan_out];
            let mut prev = vec![0.0; fan_in];
            for (row, &d) in w.chunks_exact(fan_in).zip(&delta) {
                if d == 0.0 {
                    continue;
                }
                for (p, &wi) in prev.iter_mut().zip(row) {
                    *p += d * wi;
                }
            }
            // ReLU mask from the hidden activation feeding this layer
            for (p, &a) in prev.iter_mut().zip(x) {
                if a <= 0.0 {
                    *p = 0.0;
                }
            }
            delta = prev;
        }
        Ok(())
    }

    /// Convenience wrapper: forward, then a fresh gradient vector.
    pub fn gradient(&self, input: &[f64], output_grad: &[f64]) -> Result<Vec<f64>, NnError> {
        let cache = self.forward_cached(input)?;
        let mut grads = vec![0.0; self.params.len()];
        self.backward(&cache, output_grad, &mut grads)?;
        Ok(grads)
    }

    /// Versioned header, layer dims, then little-endian `f64` parameters.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), NnError> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.dims.len() as u32).to_le_bytes())?;
        for &d in &self.dims {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        w.write_all(&(self.params.len() as u64).to_le_bytes())?;
        for p in &self.params {
            w.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self, NnError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(NnError::Checkpoint("bad magic".into()));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(NnError::Checkpoint(format!("unsupported version {version}")));
        }
        let n = read_u32(r)? as usize;
        if n > 64 {
            return Err(NnError::Checkpoint(format!("implausible layer count {n}")));
        }
        let dims = (0..n).map(|_| read_u64(r).map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        check_dims(&dims)?;
        let count = read_u64(r)? as usize;
        if count != param_count_for(&dims) {
            return Err(NnError::Checkpoint(format!("parameter count {count} does not match dims {dims:?}")));
        }
        let mut params = Vec::with_capacity(count);
        let mut buf = [0u8; 8];
        for _ in 0..count {
            r.read_exact(&mut buf)?;
            params.push(f64::from_le_bytes(buf));
        }
        Self::from_params(&dims, params)
    }
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32, NnError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> Result<u64, NnError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}
