//! Conversions between bitmaps and tensors, plus seeded parameter
//! initialization and noise that do not touch libtorch's global generator.

use oneshot_core::{Bitmap, SIDE};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use tch::{nn, Device, Kind, Tensor};

use crate::error::{Error, Result};

/// Stacks bitmaps into a `(n, 1, 50, 50)` float tensor.
pub fn bitmaps_to_tensor<'a>(images: impl IntoIterator<Item = &'a Bitmap>, device: Device) -> Tensor {
    let mut flat = Vec::new();
    let mut n = 0i64;
    for img in images {
        flat.extend_from_slice(img.as_slice());
        n += 1;
    }
    let side = SIDE as i64;
    Tensor::from_slice(&flat).view([n, 1, side, side]).to_device(device)
}

/// Splits a `(n, 1, 50, 50)` tensor back into bitmaps, clamping to [0, 1].
pub fn tensor_to_bitmaps(t: &Tensor) -> Result<Vec<Bitmap>> {
    let side = SIDE as i64;
    let size = t.size();
    if size.len() != 4 || size[1] != 1 || size[2] != side || size[3] != side {
        return Err(Error::Config(format!("expected (n, 1, {side}, {side}) images, got {size:?}")));
    }
    let flat = to_f32_vec(t)?;
    flat.chunks_exact(SIDE * SIDE)
        .map(|c| Bitmap::from_vec_clamped(c.to_vec()).map_err(Error::from))
        .collect()
}

pub fn to_f32_vec(t: &Tensor) -> Result<Vec<f32>> {
    let flat = t.detach().to_device(Device::Cpu).to_kind(Kind::Float).contiguous().view([-1]);
    Ok(Vec::<f32>::try_from(&flat)?)
}

pub fn scalar(t: &Tensor) -> f64 {
    t.double_value(&[])
}

/// Errors when `t` holds a NaN or infinity, naming `layer`.
pub fn ensure_finite(t: &Tensor, layer: &str) -> Result<()> {
    let finite = t.isfinite().all().int64_value(&[]) != 0;
    if finite {
        Ok(())
    } else {
        Err(Error::NonFinite { layer: layer.into() })
    }
}

/// Standard-normal noise of the given shape drawn from `rng`.
pub fn randn(rng: &mut ChaCha8Rng, dims: &[i64], device: Device) -> Tensor {
    let n: i64 = dims.iter().product();
    let v: Vec<f32> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::from_slice(&v).view(dims).to_device(device)
}

/// Registers a trainable variable drawn from U(−bound, bound).
pub fn uniform_var(path: &nn::Path, name: &str, dims: &[i64], bound: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n: i64 = dims.iter().product();
    let v: Vec<f32> = (0..n).map(|_| rng.random_range(-bound..=bound) as f32).collect();
    path.var_copy(name, &Tensor::from_slice(&v).view(dims))
}

/// Number of elements across all trainable variables of a store.
pub fn trainable_count(vs: &nn::VarStore) -> usize {
    vs.trainable_variables().iter().map(|t| t.numel()).sum()
}

pub fn parse_device(name: &str) -> Result<Device> {
    match name {
        "cpu" => Ok(Device::Cpu),
        "cuda" => Ok(Device::Cuda(0)),
        "auto" => Ok(Device::cuda_if_available()),
        other => match other.strip_prefix("cuda:").map(str::parse::<usize>) {
            Some(Ok(i)) => Ok(Device::Cuda(i)),
            _ => Err(Error::Config(format!("unknown device `{other}`; expected cpu, cuda, cuda:N or auto"))),
        },
    }
}
