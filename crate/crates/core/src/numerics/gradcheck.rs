use super::ParamHost;

/// Denominator floor for [`relative_error`]; keeps gradients that are zero up
/// to rounding from reporting huge relative errors.
pub const REL_ERR_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(REL_ERR_FLOOR)
}

/// Compares analytic gradients against central differences on every
/// coordinate of every trainable parameter and returns the worst relative error.
///
/// `loss_fn` must return the loss at the host's current values and accumulate
/// its gradient into the parameters' `grad` buffers. Gradients are zeroed
/// before each call and on return.
///
/// The check assumes the loss is smooth within `epsilon` of the current point.
/// For ReLU networks call [`Mlp::perturb_off_kinks`](super::Mlp::perturb_off_kinks)
/// first so no pre-activation sits within `epsilon` of zero.
pub fn finite_diff_check<H, F>(host: &mut H, epsilon: f64, mut loss_fn: F) -> f64
where
    H: ParamHost + ?Sized,
    F: FnMut(&mut H) -> f64,
{
    host.zero_grads();
    loss_fn(host);
    let analytic: Vec<Option<Vec<f64>>> = (0..host.num_params())
        .map(|i| {
            let p = host.param(i);
            p.trainable.then(|| p.grad.data().to_vec())
        })
        .collect();

    let mut worst = 0.0f64;
    for (i, grads) in analytic.iter().enumerate() {
        let Some(grads) = grads else { continue };
        for (k, &a) in grads.iter().enumerate() {
            let orig = host.param(i).value.data()[k];

            host.param_mut(i).value.data_mut()[k] = orig + epsilon;
            host.zero_grads();
            let up = loss_fn(host);

            host.param_mut(i).value.data_mut()[k] = orig - epsilon;
            host.zero_grads();
            let down = loss_fn(host);

            host.param_mut(i).value.data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * epsilon);
            worst = worst.max(relative_error(a, numeric));
        }
    }
    host.zero_grads();
    worst
}
