use ndarray::Array2;

use crate::rng::Rng;

/// A trainable 2-D parameter with its accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub value: Array2<f64>,
    pub grad: Array2<f64>,
}

impl Tensor {
    pub fn new(value: Array2<f64>) -> Self {
        let grad = Array2::zeros(value.raw_dim());
        Self { value, grad }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(Array2::zeros((rows, cols)))
    }

    /// Uniform in `[-bound, bound]`.
    pub fn uniform(rows: usize, cols: usize, bound: f64, rng: &mut Rng) -> Self {
        Self::new(Array2::from_shape_fn((rows, cols), |_| (2.0 * rng.uniform() - 1.0) * bound))
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.dim()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Anything holding trainable tensors and (optionally) non-trainable
/// buffers such as batch-norm running statistics.
pub trait Module {
    /// Trainable tensors in a fixed order.
    fn params_mut(&mut self) -> Vec<&mut Tensor>;

    /// Every tensor needed to restore the module, parameters and buffers.
    fn state(&self, prefix: &str, out: &mut Vec<(String, Array2<f64>)>);

    fn load_state(
        &mut self,
        prefix: &str,
        src: &std::collections::HashMap<String, Array2<f64>>,
    ) -> crate::error::Result<()>;

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// FNV-1a over parameter bits; cheap fingerprint for "did this change".
    fn checksum(&mut self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for p in self.params_mut() {
            for v in p.value.iter() {
                h ^= v.to_bits();
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }
}

pub(crate) fn load_into(
    dst: &mut Array2<f64>,
    name: &str,
    src: &std::collections::HashMap<String, Array2<f64>>,
) -> crate::error::Result<()> {
    let v = src.get(name).ok_or_else(|| crate::error::Error::Checkpoint(format!("missing tensor `{name}`")))?;
    if v.dim() != dst.dim() {
        return Err(crate::error::Error::Checkpoint(format!(
            "tensor `{name}` has shape {:?}, expected {:?}",
            v.dim(),
            dst.dim()
        )));
    }
    dst.assign(v);
    Ok(())
}
