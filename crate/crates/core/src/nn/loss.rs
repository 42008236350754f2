/// Mean squared error and its gradient w.r.t. `pred`.
pub fn mse(pred: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    assert_eq!(pred.len(), target.len(), "prediction/target length mismatch");
    if pred.is_empty() {
        return (0.0, Vec::new());
    }
    let n = pred.len() as f64;
    let mut sum = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let d = p - t;
            sum += d * d;
            2.0 * d / n
        })
        .collect();
    (sum / n, grad)
}

/// `Σ_k α_k · MSE(pred_k, target_k)`; returns the total, the per-head MSEs
/// and the per-head gradients (already scaled by α).
pub fn weighted_mse(
    heads: &[(&[f64], &[f64])],
    alpha: &[f64],
) -> (f64, Vec<f64>, Vec<Vec<f64>>) {
    assert_eq!(heads.len(), alpha.len());
    let mut total = 0.0;
    let mut per_head = Vec::with_capacity(heads.len());
    let mut grads = Vec::with_capacity(heads.len());
    for ((pred, target), a) in heads.iter().zip(alpha) {
        let (m, mut g) = mse(pred, target);
        total += a * m;
        per_head.push(m);
        g.iter_mut().for_each(|v| *v *= a);
        grads.push(g);
    }
    (total, per_head, grads)
}
