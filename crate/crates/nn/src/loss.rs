//! Task losses. Both return the batch-mean loss and its gradient with
//! respect to the logits.

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Softmax cross-entropy over `[N, K]` logits.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, targets: &[usize]) -> (f64, Tensor<T>) {
    let (n, k) = logits.dims2();
    assert_eq!(n, targets.len(), "one target per row");
    let mut grad = Tensor::zeros(&[n, k]);
    let mut total = 0.0;
    for (i, (row, g)) in logits
        .data()
        .chunks_exact(k)
        .zip(grad.data_mut().chunks_exact_mut(k))
        .enumerate()
    {
        let t = targets[i];
        assert!(t < k, "target {t} out of range for {k} logits");
        let max = row.iter().map(|v| v.to_f64_lossy()).fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v.to_f64_lossy() - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        total += sum.ln() + max - row[t].to_f64_lossy();
        for (j, (gj, e)) in g.iter_mut().zip(&exps).enumerate() {
            let p = e / sum - if j == t { 1.0 } else { 0.0 };
            *gj = T::from_f64_lossy(p / n as f64);
        }
    }
    (total / n as f64, grad)
}

/// Sigmoid cross-entropy over `[N, 1]` logits with 0/1 targets.
pub fn bce_with_logits<T: Scalar>(logits: &Tensor<T>, targets: &[usize]) -> (f64, Tensor<T>) {
    let (n, k) = logits.dims2();
    assert_eq!(k, 1, "binary head has one logit");
    assert_eq!(n, targets.len(), "one target per row");
    let mut grad = Tensor::zeros(&[n, 1]);
    let mut total = 0.0;
    for ((z, g), &t) in logits.data().iter().zip(grad.data_mut()).zip(targets) {
        assert!(t <= 1, "binary target {t}");
        let z = z.to_f64_lossy();
        let y = t as f64;
        total += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
        *g = T::from_f64_lossy((sigmoid(z) - y) / n as f64);
    }
    (total / n as f64, grad)
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
