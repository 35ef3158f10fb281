use log::debug;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{softmax_rows, Matrix};

/// Loss terms of one step or one epoch average. `total = ce + aux`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub ce: f64,
    pub aux: f64,
    pub total: f64,
}

impl LossReport {
    pub fn new(ce: f64, aux: f64) -> Self {
        Self { ce, aux, total: ce + aux }
    }

    /// Term-wise mean; `total` is recomputed from the averaged terms.
    pub fn mean(reports: &[LossReport]) -> LossReport {
        let n = reports.len().max(1) as f64;
        let ce = reports.iter().map(|r| r.ce).sum::<f64>() / n;
        let aux = reports.iter().map(|r| r.aux).sum::<f64>() / n;
        LossReport::new(ce, aux)
    }
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Mean negative log-likelihood of `targets` (column indices) and its
/// gradient `(softmax − onehot) / batch`.
pub fn cross_entropy(logits: &Matrix, targets: &[usize]) -> Result<(f64, Matrix)> {
    if targets.len() != logits.rows() {
        return Err(Error::Contract(format!(
            "{} targets for {} rows",
            targets.len(),
            logits.rows()
        )));
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= logits.cols()) {
        return Err(Error::Contract(format!(
            "target column {t} outside {} logits",
            logits.cols()
        )));
    }
    let batch = logits.rows().max(1) as f64;
    let mut loss = 0.0;
    for (row, &t) in logits.iter_rows().zip(targets) {
        loss += log_sum_exp(row) - row[t];
    }
    let mut grad = softmax_rows(logits);
    for (r, &t) in targets.iter().enumerate() {
        let v = grad.get(r, t);
        grad.set(r, t, v - 1.0);
    }
    grad.scale(1.0 / batch);
    Ok((loss / batch, grad))
}

/// Soft-target cross-entropy between temperature-softened old and new
/// distributions, scaled by T². `old_logits` carry no gradient. Returns zero
/// when there are no old classes.
pub fn logit_distill(new_logits_old_cols: &Matrix, old_logits: &Matrix, temperature: f64) -> Result<(f64, Matrix)> {
    if new_logits_old_cols.shape() != old_logits.shape() {
        return Err(Error::Dimension(format!(
            "distillation on {:?} against {:?}",
            new_logits_old_cols.shape(),
            old_logits.shape()
        )));
    }
    if !(temperature > 0.0) {
        return Err(Error::Parameter(format!("temperature must be positive, got {temperature}")));
    }
    let (rows, cols) = new_logits_old_cols.shape();
    if cols == 0 || rows == 0 {
        return Ok((0.0, Matrix::zeros(rows, cols)));
    }
    let t = temperature;
    let soft_new = new_logits_old_cols.map(|v| v / t);
    let soft_old = old_logits.map(|v| v / t);
    let q = softmax_rows(&soft_old);
    let p = softmax_rows(&soft_new);
    let batch = rows as f64;
    let mut loss = 0.0;
    for r in 0..rows {
        let row = soft_new.row(r);
        let lse = log_sum_exp(row);
        for (qv, zv) in q.row(r).iter().zip(row) {
            loss -= qv * (zv - lse);
        }
    }
    let mut grad = Matrix::zeros(rows, cols);
    for ((g, pv), qv) in grad.data_mut().iter_mut().zip(p.data()).zip(q.data()) {
        *g = t * (pv - qv) / batch;
    }
    Ok((t * t * loss / batch, grad))
}

/// Norm floor inside [`feature_distill`].
pub const FEATURE_NORM_EPS: f64 = 1e-12;

/// `λ · mean(1 − cos(f_new, f_old))` with `λ = lambda_base · √(c_old / c_new)`.
/// Returns zero on the first task (`c_old == 0`).
pub fn feature_distill(
    new_feat: &Matrix,
    old_feat: &Matrix,
    lambda_base: f64,
    c_old: usize,
    c_new: usize,
) -> Result<(f64, Matrix)> {
    if new_feat.shape() != old_feat.shape() {
        return Err(Error::Dimension(format!(
            "feature distillation on {:?} against {:?}",
            new_feat.shape(),
            old_feat.shape()
        )));
    }
    let (rows, cols) = new_feat.shape();
    if c_old == 0 || rows == 0 {
        return Ok((0.0, Matrix::zeros(rows, cols)));
    }
    if c_new == 0 {
        return Err(Error::Parameter("feature distillation needs at least one new class".into()));
    }
    let lambda = lambda_base * (c_old as f64 / c_new as f64).sqrt();
    let batch = rows as f64;
    let mut loss = 0.0;
    let mut grad = Matrix::zeros(rows, cols);
    for r in 0..rows {
        let n = new_feat.row(r);
        let o = old_feat.row(r);
        let nn_raw = n.iter().map(|v| v * v).sum::<f64>().sqrt();
        let on_raw = o.iter().map(|v| v * v).sum::<f64>().sqrt();
        if nn_raw < FEATURE_NORM_EPS || on_raw < FEATURE_NORM_EPS {
            debug!("feature distillation: row {r} has a near-zero feature norm");
        }
        let nn = nn_raw.max(FEATURE_NORM_EPS);
        let on = on_raw.max(FEATURE_NORM_EPS);
        let dot: f64 = n.iter().zip(o).map(|(a, b)| a * b).sum();
        let cos = dot / (nn * on);
        loss += 1.0 - cos;
        let g = grad.row_mut(r);
        for k in 0..cols {
            let d_cos = if nn_raw < FEATURE_NORM_EPS {
                o[k] / (nn * on)
            } else {
                o[k] / (nn * on) - cos * n[k] / (nn * nn)
            };
            g[k] = -lambda * d_cos / batch;
        }
    }
    Ok((lambda * loss / batch, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_check, Param, ParamSet};
    use crate::rng::rng_for;
    use rand::Rng;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = rng_for(seed, &[3]);
        let data = (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    fn check<F>(x: Matrix, f: F) -> f64
    where
        F: Fn(&Matrix) -> (f64, Matrix),
    {
        let mut ps = ParamSet::new();
        ps.push(Param::new("x", x));
        finite_diff_check(&mut ps, 1e-5, |ps: &mut ParamSet| {
            let (loss, g) = f(&ps.iter().next().unwrap().value);
            ps.iter_mut().next().unwrap().grad.add_assign(&g).unwrap();
            loss
        })
    }

    #[test]
    fn ce_limits() {
        let (loss, _) = cross_entropy(&Matrix::from_rows(&[[200.0, 0.0, 0.0]]).unwrap(), &[0]).unwrap();
        assert!(loss < 1e-80);
        let (loss, _) = cross_entropy(&Matrix::zeros(3, 7), &[0, 3, 6]).unwrap();
        assert!((loss - 7f64.ln()).abs() < 1e-14);
        assert!(cross_entropy(&Matrix::zeros(1, 3), &[3]).is_err());
    }

    #[test]
    fn ce_matches_direct_evaluation() {
        let z = random_matrix(5, 4, 1);
        let targets = [0, 3, 1, 1, 2];
        let (loss, _) = cross_entropy(&z, &targets).unwrap();
        let direct: f64 = (0..5)
            .map(|r| {
                let denom: f64 = z.row(r).iter().map(|v| v.exp()).sum();
                -(z.get(r, targets[r]).exp() / denom).ln()
            })
            .sum::<f64>()
            / 5.0;
        assert!((loss - direct).abs() < 1e-12);
        let err = check(z, |z| cross_entropy(z, &targets).unwrap());
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn logit_distill_matched_is_entropy() {
        let old = random_matrix(4, 3, 7);
        let t = 2.0;
        let (loss, grad) = logit_distill(&old, &old, t).unwrap();
        let q = softmax_rows(&old.map(|v| v / t));
        let entropy: f64 = -q.data().iter().map(|p| p * p.ln()).sum::<f64>() / 4.0;
        assert!((loss - t * t * entropy).abs() < 1e-12);
        assert!(grad.data().iter().all(|g| g.abs() < 1e-15));
        // any other input gives a larger value
        let (other, _) = logit_distill(&random_matrix(4, 3, 8), &old, t).unwrap();
        assert!(other > loss);
    }

    #[test]
    fn logit_distill_temperature_one_is_soft_ce() {
        let new = random_matrix(3, 4, 1);
        let old = random_matrix(3, 4, 2);
        let (loss, _) = logit_distill(&new, &old, 1.0).unwrap();
        let q = softmax_rows(&old);
        let p = softmax_rows(&new);
        let soft_ce: f64 = -q.data().iter().zip(p.data()).map(|(a, b)| a * b.ln()).sum::<f64>() / 3.0;
        assert!((loss - soft_ce).abs() < 1e-12);
    }

    #[test]
    fn logit_distill_gradient() {
        let old = random_matrix(4, 3, 5);
        for t in [1.0, 2.0, 4.0] {
            let err = check(random_matrix(4, 3, 6), |z| logit_distill(z, &old, t).unwrap());
            assert!(err < 1e-4, "T={t}: {err}");
        }
        let (loss, g) = logit_distill(&Matrix::zeros(3, 0), &Matrix::zeros(3, 0), 2.0).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(g.shape(), (3, 0));
    }

    #[test]
    fn feature_distill_examples() {
        let f = random_matrix(3, 4, 1);
        assert!(feature_distill(&f, &f, 5.0, 10, 2).unwrap().0.abs() < 1e-14);
        let a = Matrix::from_rows(&[[1.0, 0.0], [0.0, 2.0]]).unwrap();
        let b = Matrix::from_rows(&[[0.0, 3.0], [1.0, 0.0]]).unwrap();
        let (loss, _) = feature_distill(&a, &b, 1.0, 4, 4).unwrap();
        assert!((loss - 1.0).abs() < 1e-15);
        let (first, _) = feature_distill(&a, &b, 1.0, 0, 4).unwrap();
        assert_eq!(first, 0.0);
    }

    #[test]
    fn feature_distill_lambda_scaling() {
        let a = random_matrix(3, 4, 1);
        let b = random_matrix(3, 4, 2);
        let (l1, _) = feature_distill(&a, &b, 5.0, 10, 2).unwrap();
        let (l2, _) = feature_distill(&a, &b, 5.0, 10, 4).unwrap();
        assert!((l2 - l1 / 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn feature_distill_gradient() {
        let old = random_matrix(5, 4, 9);
        let err = check(random_matrix(5, 4, 10), |f| feature_distill(f, &old, 5.0, 6, 3).unwrap());
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn report_additivity() {
        let r = LossReport::mean(&[LossReport::new(1.0, 0.5), LossReport::new(0.3, 0.25)]);
        assert!((r.total - (r.ce + r.aux)).abs() < 1e-12);
    }
}
