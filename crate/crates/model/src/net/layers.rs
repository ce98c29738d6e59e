//! Parameter storage and the two layer types the networks are built from.
//!
//! Parameters are created in a fixed order from a seeded generator, so a net
//! built twice with the same seed is bit-identical.

use std::collections::HashMap;

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{ModelError, Result};

struct Entry {
    name: String,
    var: Var,
    trainable: bool,
}

pub struct ParamStore {
    entries: Vec<Entry>,
    rng: ChaCha8Rng,
    dtype: DType,
    device: Device,
}

impl ParamStore {
    pub fn new(seed: u64, dtype: DType, device: Device) -> Self {
        Self {
            entries: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            dtype,
            device,
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    fn push(&mut self, name: String, t: Tensor, trainable: bool) -> Result<Var> {
        if self.entries.iter().any(|e| e.name == name) {
            return Err(ModelError::Config(format!("duplicate parameter {name}")));
        }
        let var = Var::from_tensor(&t.to_dtype(self.dtype)?)?;
        self.entries.push(Entry {
            name,
            var: var.clone(),
            trainable,
        });
        Ok(var)
    }

    pub fn uniform(&mut self, name: impl Into<String>, shape: &[usize], bound: f64) -> Result<Var> {
        let n: usize = shape.iter().product();
        let data: Vec<f32> = (0..n).map(|_| self.rng.random_range(-bound..bound) as f32).collect();
        let t = Tensor::from_vec(data, shape, &self.device)?;
        self.push(name.into(), t, true)
    }

    pub fn constant(&mut self, name: impl Into<String>, shape: &[usize], value: f64, trainable: bool) -> Result<Var> {
        let t = Tensor::full(value as f32, shape, &self.device)?;
        self.push(name.into(), t, trainable)
    }

    pub fn trainable_vars(&self) -> Vec<Var> {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.var.clone())
            .collect()
    }

    pub fn trainable_names(&self) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.name.as_str())
            .collect()
    }

    /// Every stored tensor (weights and running statistics) by name, in
    /// creation order.
    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        self.entries
            .iter()
            .map(|e| (e.name.clone(), e.var.as_tensor().clone()))
            .collect()
    }

    /// Overwrite stored values. Every entry must be present with a matching
    /// shape unless `partial` is set, in which case missing names are kept.
    pub fn load(&self, tensors: &HashMap<String, Tensor>, partial: bool) -> Result<()> {
        for e in &self.entries {
            match tensors.get(&e.name) {
                Some(t) => {
                    if t.dims() != e.var.dims() {
                        return Err(ModelError::Checkpoint(format!(
                            "{}: expected shape {:?}, found {:?}",
                            e.name,
                            e.var.dims(),
                            t.dims()
                        )));
                    }
                    e.var.set(&t.to_dtype(self.dtype)?.to_device(&self.device)?.copy()?)?;
                }
                None if partial => {}
                None => return Err(ModelError::UninitializedWeights(format!("missing tensor {}", e.name))),
            }
        }
        if !partial {
            if let Some(extra) = tensors.keys().find(|k| !self.entries.iter().any(|e| &e.name == *k)) {
                return Err(ModelError::Checkpoint(format!("unexpected tensor {extra}")));
            }
        }
        Ok(())
    }
}

pub struct Conv2d {
    weight: Var,
    bias: Var,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    /// He-uniform weights, zero bias.
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let fan_in = (c_in * kernel * kernel) as f64;
        let weight = ps.uniform(
            format!("{name}.weight"),
            &[c_out, c_in, kernel, kernel],
            (6.0 / fan_in).sqrt(),
        )?;
        let bias = ps.constant(format!("{name}.bias"), &[c_out], 0.0, true)?;
        Ok(Self {
            weight,
            bias,
            stride,
            padding,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv2d(self.weight.as_tensor(), self.padding, self.stride, 1, 1)?;
        let c = self.bias.dims()[0];
        Ok(y.broadcast_add(&self.bias.as_tensor().reshape((1, c, 1, 1))?)?)
    }
}

pub struct BatchNorm2d {
    gamma: Var,
    beta: Var,
    running_mean: Var,
    running_var: Var,
}

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

impl BatchNorm2d {
    pub fn new(ps: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: ps.constant(format!("{name}.weight"), &[channels], 1.0, true)?,
            beta: ps.constant(format!("{name}.bias"), &[channels], 0.0, true)?,
            running_mean: ps.constant(format!("{name}.running_mean"), &[channels], 0.0, false)?,
            running_var: ps.constant(format!("{name}.running_var"), &[channels], 1.0, false)?,
        })
    }

    /// Batch statistics in training mode (running estimates are updated),
    /// running estimates otherwise.
    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let (n, c, h, w) = x.dims4()?;
        let shape = (1, c, 1, 1);
        let (mean, var) = if train {
            let mean = x.mean_keepdim(0)?.mean_keepdim(2)?.mean_keepdim(3)?;
            let centred = x.broadcast_sub(&mean)?;
            let var = centred.sqr()?.mean_keepdim(0)?.mean_keepdim(2)?.mean_keepdim(3)?;
            let count = (n * h * w) as f64;
            let unbiased = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
            let rm = self
                .running_mean
                .as_tensor()
                .affine(1.0 - BN_MOMENTUM, 0.0)?
                .add(&mean.detach().flatten_all()?.affine(BN_MOMENTUM, 0.0)?)?;
            let rv = self
                .running_var
                .as_tensor()
                .affine(1.0 - BN_MOMENTUM, 0.0)?
                .add(&var.detach().flatten_all()?.affine(BN_MOMENTUM * unbiased, 0.0)?)?;
            self.running_mean.set(&rm)?;
            self.running_var.set(&rv)?;
            (mean, var)
        } else {
            (
                self.running_mean.as_tensor().reshape(shape)?,
                self.running_var.as_tensor().reshape(shape)?,
            )
        };
        let xhat = x
            .broadcast_sub(&mean)?
            .broadcast_div(&var.affine(1.0, BN_EPS)?.sqrt()?)?;
        Ok(xhat
            .broadcast_mul(&self.gamma.as_tensor().reshape(shape)?)?
            .broadcast_add(&self.beta.as_tensor().reshape(shape)?)?)
    }
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok(x.neg()?.exp()?.affine(1.0, 1.0)?.recip()?)
}
