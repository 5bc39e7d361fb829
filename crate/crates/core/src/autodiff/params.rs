use sha2::{Digest, Sha256};

use super::{Graph, Tensor, Var};

/// A bundle of named parameter tensors with a stable order.
pub trait Parameters {
    fn tensors(&self) -> Vec<&Tensor>;
    fn tensors_mut(&mut self) -> Vec<&mut Tensor>;
    fn names(&self) -> Vec<String>;

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

/// Registers every tensor of `net` as a leaf. Frozen leaves never receive a
/// gradient but still pass gradients through to other inputs.
pub fn bind<P: Parameters + ?Sized>(g: &mut Graph, net: &P, trainable: bool) -> Vec<Var> {
    net.tensors()
        .into_iter()
        .map(|t| g.leaf(t.clone(), trainable))
        .collect()
}

/// Gradients of the bound leaves (zeros where none arrived).
pub fn collect_grads(g: &Graph, vars: &[Var]) -> Vec<Tensor> {
    vars.iter().map(|&v| g.grad_or_zeros(v)).collect()
}

/// Polyak averaging: `target <- (1 - tau) * target + tau * online`,
/// evaluated as `target + tau * (online - target)` so equal parameters stay
/// bit-identical. `tau = 1` copies.
pub fn soft_update<P: Parameters + ?Sized>(target: &mut P, online: &P, tau: f64) {
    for (t, o) in target.tensors_mut().into_iter().zip(online.tensors()) {
        for (x, &y) in t.data_mut().iter_mut().zip(o.data()) {
            *x = if tau == 1.0 { y } else { *x + tau * (y - *x) };
        }
    }
}

/// SHA-256 over the exact bit patterns of every parameter.
pub fn fingerprint<P: Parameters + ?Sized>(net: &P) -> [u8; 32] {
    let mut h = Sha256::new();
    for t in net.tensors() {
        h.update((t.rows() as u64).to_le_bytes());
        h.update((t.cols() as u64).to_le_bytes());
        for v in t.data() {
            h.update(v.to_bits().to_le_bytes());
        }
    }
    h.finalize().into()
}
