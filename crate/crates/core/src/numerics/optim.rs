use super::ParamHost;

/// One SGD step with heavy-ball momentum on every trainable parameter:
/// `v ← momentum·v + g`, `p ← p − lr·v`. All gradients, trainable or not,
/// are zeroed afterwards. Frozen parameters are never written.
pub fn sgd_step<H: ParamHost + ?Sized>(params: &mut H, lr: f64, momentum: f64) {
    for i in 0..params.num_params() {
        let p = params.param_mut(i);
        if p.trainable {
            let v = p.velocity.data_mut();
            let g = p.grad.data();
            let w = p.value.data_mut();
            for ((w, v), g) in w.iter_mut().zip(v.iter_mut()).zip(g) {
                *v = momentum * *v + g;
                *w -= lr * *v;
            }
        }
        p.zero_grad();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Matrix, Param, ParamSet};

    fn scalar_set(value: f64, grad: f64) -> ParamSet {
        let mut ps = ParamSet::new();
        let mut p = Param::new("p", Matrix::row_vector(&[value]));
        p.grad = Matrix::row_vector(&[grad]);
        ps.push(p);
        ps
    }

    #[test]
    fn zero_lr_leaves_params() {
        let mut ps = scalar_set(1.0, 2.0);
        sgd_step(&mut ps, 0.0, 0.9);
        assert_eq!(ps.param(0).value.data(), &[1.0]);
        assert_eq!(ps.param(0).grad.data(), &[0.0]);
    }

    #[test]
    fn plain_step_hand_arithmetic() {
        let mut ps = scalar_set(1.0, 2.0);
        sgd_step(&mut ps, 0.1, 0.0);
        assert!((ps.param(0).value.get(0, 0) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn momentum_matches_unrolled_recurrence() {
        // v1 = g1, p1 = p0 - lr g1; v2 = m g1 + g2, p2 = p1 - lr (m g1 + g2)
        let (p0, g1, g2, lr, m) = (1.0, 2.0, -0.5, 0.1, 0.9);
        let mut ps = scalar_set(p0, g1);
        sgd_step(&mut ps, lr, m);
        ps.param_mut(0).grad = Matrix::row_vector(&[g2]);
        sgd_step(&mut ps, lr, m);
        let expected = p0 - lr * g1 - lr * (m * g1 + g2);
        assert!((ps.param(0).value.get(0, 0) - expected).abs() < 1e-15);
    }

    #[test]
    fn frozen_params_untouched() {
        let mut ps = scalar_set(1.0, 2.0);
        ps.param_mut(0).trainable = false;
        let before = ps.param(0).value_bits();
        for _ in 0..5 {
            ps.param_mut(0).grad = Matrix::row_vector(&[3.0]);
            sgd_step(&mut ps, 0.5, 0.9);
        }
        assert_eq!(before, ps.param(0).value_bits());
    }
}
