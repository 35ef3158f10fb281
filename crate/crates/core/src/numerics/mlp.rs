use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{xavier_uniform, Matrix, Param, ParamSet};
use crate::error::{Error, Result};

/// Layer sizes of a ReLU perceptron: `[input, hidden_1, ..., hidden_k]`.
///
/// Every layer is affine followed by ReLU; the last hidden activation is the
/// feature vector. A single-entry architecture is the identity map. Layer `l`
/// owns parameters `2l` (weight, `in × out`) and `2l + 1` (bias, `1 × out`)
/// of the [`ParamSet`] it is run against.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mlp {
    arch: Vec<usize>,
}

/// Intermediates of one forward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    arch: Vec<usize>,
    inputs: Vec<Matrix>,
    pre_activations: Vec<Matrix>,
}

impl MlpCache {
    /// Smallest |pre-activation| over the batch, or `None` for a layerless net.
    pub fn min_abs_preactivation(&self) -> Option<f64> {
        self.pre_activations
            .iter()
            .flat_map(|z| z.data().iter().map(|v| v.abs()))
            .reduce(f64::min)
    }
}

impl Mlp {
    pub fn new(arch: Vec<usize>) -> Result<Self> {
        if arch.is_empty() || arch.contains(&0) {
            return Err(Error::Parameter(format!(
                "architecture {arch:?} needs at least one layer size and no zero widths"
            )));
        }
        Ok(Self { arch })
    }

    pub fn arch(&self) -> &[usize] {
        &self.arch
    }

    pub fn input_dim(&self) -> usize {
        self.arch[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.arch.last().expect("non-empty by construction")
    }

    pub fn num_layers(&self) -> usize {
        self.arch.len() - 1
    }

    pub fn num_params(&self) -> usize {
        2 * self.num_layers()
    }

    /// Appends freshly initialised layer parameters to `params`.
    pub fn init_params<R: Rng>(&self, params: &mut ParamSet, rng: &mut R) {
        for (l, w) in self.arch.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            params.push(Param::new(
                format!("extractor.{l}.weight"),
                xavier_uniform(fan_in, fan_out, rng),
            ));
            params.push(Param::new(
                format!("extractor.{l}.bias"),
                Matrix::zeros(1, fan_out),
            ));
        }
    }

    pub fn forward(&self, x: &Matrix, params: &ParamSet) -> Result<(Matrix, MlpCache)> {
        mlp_forward(x, params, &self.arch)
    }

    /// Inference only, no cache kept.
    pub fn features(&self, x: &Matrix, params: &ParamSet) -> Result<Matrix> {
        self.check_input(x)?;
        let mut h = x.clone();
        for l in 0..self.num_layers() {
            let (w, b) = layer_params(params, l, &self.arch)?;
            let mut z = h.matmul(&w.value)?;
            z.add_row_broadcast(&b.value)?;
            h = z.map(relu);
        }
        Ok(h)
    }

    /// Shifts the biases of units whose pre-activation lies within `margin` of
    /// zero for some row of `x`, so that finite-difference checks never straddle
    /// a ReLU kink. Returns the smallest |pre-activation| reached.
    pub fn perturb_off_kinks<R: Rng>(
        &self,
        x: &Matrix,
        params: &mut ParamSet,
        margin: f64,
        rng: &mut R,
    ) -> Result<f64> {
        const MAX_ROUNDS: usize = 200;
        for l in 0..self.num_layers() {
            for _ in 0..MAX_ROUNDS {
                let (_, cache) = mlp_forward(x, params, &self.arch)?;
                let z = &cache.pre_activations[l];
                let close: Vec<usize> = (0..z.cols())
                    .filter(|&j| (0..z.rows()).any(|i| z.get(i, j).abs() < margin))
                    .collect();
                if close.is_empty() {
                    break;
                }
                let bias = params.iter_mut().nth(2 * l + 1).expect("layout checked");
                for j in close {
                    let shift = rng.random_range(2.0 * margin..6.0 * margin);
                    let signed = if rng.random::<bool>() { shift } else { -shift };
                    let v = bias.value.get(0, j);
                    bias.value.set(0, j, v + signed);
                }
            }
        }
        let (_, cache) = mlp_forward(x, params, &self.arch)?;
        Ok(cache.min_abs_preactivation().unwrap_or(f64::INFINITY))
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "input has {} columns, network expects {}",
                x.cols(),
                self.input_dim()
            )));
        }
        Ok(())
    }
}

#[inline]
fn relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

fn layer_params<'a>(params: &'a ParamSet, l: usize, arch: &[usize]) -> Result<(&'a Param, &'a Param)> {
    let w = params.get(2 * l)?;
    let b = params.get(2 * l + 1)?;
    let expected = (arch[l], arch[l + 1]);
    if w.value.shape() != expected || b.value.shape() != (1, arch[l + 1]) {
        return Err(Error::Dimension(format!(
            "layer {l} parameters are {:?}/{:?}, architecture wants {expected:?}",
            w.value.shape(),
            b.value.shape()
        )));
    }
    Ok((w, b))
}

/// Forward pass through `arch` using the leading layer parameters of `params`.
pub fn mlp_forward(x: &Matrix, params: &ParamSet, arch: &[usize]) -> Result<(Matrix, MlpCache)> {
    let first = *arch
        .first()
        .ok_or_else(|| Error::Parameter("empty architecture".into()))?;
    if x.cols() != first {
        return Err(Error::Dimension(format!(
            "input has {} columns, network expects {first}",
            x.cols()
        )));
    }
    let layers = arch.len() - 1;
    let mut inputs = Vec::with_capacity(layers);
    let mut pre_activations = Vec::with_capacity(layers);
    let mut h = x.clone();
    for l in 0..layers {
        let (w, b) = layer_params(params, l, arch)?;
        let mut z = h.matmul(&w.value)?;
        z.add_row_broadcast(&b.value)?;
        let next = z.map(relu);
        inputs.push(h);
        pre_activations.push(z);
        h = next;
    }
    Ok((
        h,
        MlpCache {
            arch: arch.to_vec(),
            inputs,
            pre_activations,
        },
    ))
}

/// Backward pass matching a cached forward. Gradients are accumulated into
/// trainable layer parameters; frozen ones are skipped. Returns ∂loss/∂x.
pub fn mlp_backward(grad_features: &Matrix, cache: &MlpCache, params: &mut ParamSet) -> Result<Matrix> {
    let arch = &cache.arch;
    let layers = arch.len() - 1;
    let batch = cache
        .inputs
        .first()
        .map(Matrix::rows)
        .unwrap_or(grad_features.rows());
    if grad_features.shape() != (batch, *arch.last().unwrap_or(&0)) {
        return Err(Error::Contract(format!(
            "upstream gradient {:?} does not match cached output ({batch}, {})",
            grad_features.shape(),
            arch.last().unwrap_or(&0)
        )));
    }
    if cache.inputs.len() != layers || cache.pre_activations.len() != layers {
        return Err(Error::Contract("cache does not match the architecture".into()));
    }
    let mut grad = grad_features.clone();
    for l in (0..layers).rev() {
        layer_params(params, l, arch).map_err(|e| Error::Contract(format!("stale cache: {e}")))?;
        let z = &cache.pre_activations[l];
        // ReLU'(0) = 0
        for (g, &zv) in grad.data_mut().iter_mut().zip(z.data()) {
            if zv <= 0.0 {
                *g = 0.0;
            }
        }
        let mut ps = params.iter_mut().skip(2 * l);
        let w = ps.next().expect("checked");
        let b = ps.next().expect("checked");
        if w.trainable {
            let gw = cache.inputs[l].transpose_matmul(&grad)?;
            w.grad.add_assign(&gw)?;
        }
        if b.trainable {
            b.grad.add_assign(&grad.sum_rows())?;
        }
        grad = grad.matmul_transpose(&w.value)?;
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_check, ParamHost};
    use crate::rng::rng_for;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = rng_for(seed, &[17]);
        let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    fn build(arch: &[usize], seed: u64) -> (Mlp, ParamSet) {
        let mlp = Mlp::new(arch.to_vec()).unwrap();
        let mut ps = ParamSet::new();
        mlp.init_params(&mut ps, &mut rng_for(seed, &[]));
        (mlp, ps)
    }

    /// Independent forward: per-sample, per-unit loops.
    fn reference_forward(x: &Matrix, ps: &ParamSet, arch: &[usize]) -> Matrix {
        let mut rows = Vec::new();
        for i in 0..x.rows() {
            let mut h: Vec<f64> = x.row(i).to_vec();
            for l in 0..arch.len() - 1 {
                let w = &ps.param(2 * l).value;
                let b = &ps.param(2 * l + 1).value;
                h = (0..arch[l + 1])
                    .map(|j| {
                        let s: f64 = (0..arch[l]).map(|k| h[k] * w.get(k, j)).sum::<f64>() + b.get(0, j);
                        s.max(0.0)
                    })
                    .collect();
            }
            rows.push(h);
        }
        Matrix::from_rows(&rows).unwrap()
    }

    #[test]
    fn zero_params_zero_features() {
        let (mlp, mut ps) = build(&[3, 4, 2], 1);
        ps.iter_mut().for_each(|p| p.value.fill(0.0));
        let (f, _) = mlp.forward(&random_matrix(5, 3, 2), &ps).unwrap();
        assert!(f.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_layer_passes_nonnegative_input() {
        let (mlp, mut ps) = build(&[3, 3], 1);
        ps.param_mut(0).value = Matrix::from_rows(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]).unwrap();
        let x = random_matrix(4, 3, 3).map(f64::abs);
        let (f, _) = mlp.forward(&x, &ps).unwrap();
        assert_eq!(f, x);
    }

    #[test]
    fn forward_matches_reference() {
        let arch = [5, 8, 6, 4];
        let (mlp, mut ps) = build(&arch, 4);
        for p in ps.iter_mut().filter(|p| p.name.ends_with("bias")) {
            p.value = random_matrix(1, p.value.cols(), 9);
        }
        let x = random_matrix(7, 5, 5);
        let (f, _) = mlp.forward(&x, &ps).unwrap();
        let r = reference_forward(&x, &ps, &arch);
        for (a, b) in f.data().iter().zip(r.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(mlp.features(&x, &ps).unwrap(), f);
    }

    #[test]
    fn input_width_mismatch() {
        let (mlp, ps) = build(&[3, 4], 1);
        assert!(matches!(mlp.forward(&Matrix::zeros(2, 5), &ps), Err(Error::Dimension(_))));
    }

    #[test]
    fn zero_upstream_gradient() {
        let (mlp, mut ps) = build(&[3, 4, 2], 1);
        let (_, cache) = mlp.forward(&random_matrix(5, 3, 2), &ps).unwrap();
        let gx = mlp_backward(&Matrix::zeros(5, 2), &cache, &mut ps).unwrap();
        assert!(gx.data().iter().all(|&v| v == 0.0));
        assert!(ps.iter().all(|p| p.grad.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn linear_case_input_gradient() {
        // identity-free single layer with every unit active: dx = g Wᵀ
        let (mlp, mut ps) = build(&[3, 2], 1);
        ps.param_mut(1).value = Matrix::row_vector(&[100.0, 100.0]);
        let x = random_matrix(4, 3, 2);
        let (_, cache) = mlp.forward(&x, &ps).unwrap();
        let g = random_matrix(4, 2, 3);
        let gx = mlp_backward(&g, &cache, &mut ps).unwrap();
        assert_eq!(gx, g.matmul(&ps.param(0).value.transpose()).unwrap());
    }

    #[test]
    fn stale_cache_rejected() {
        let (mlp, ps) = build(&[3, 4, 2], 1);
        let (_, cache) = mlp.forward(&random_matrix(5, 3, 2), &ps).unwrap();
        let (_, mut other) = build(&[3, 5, 2], 1);
        assert!(matches!(
            mlp_backward(&Matrix::zeros(5, 2), &cache, &mut other),
            Err(Error::Contract(_))
        ));
        let (_, mut same) = build(&[3, 4, 2], 1);
        assert!(matches!(
            mlp_backward(&Matrix::zeros(3, 2), &cache, &mut same),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..5 {
            let arch = [4, 6, 5];
            let (mlp, mut ps) = build(&arch, seed);
            let x = random_matrix(6, 4, seed + 100);
            // fixed random linear read-out of the features as the loss
            let readout = random_matrix(6, 5, seed + 200);
            let margin = mlp.perturb_off_kinks(&x, &mut ps, 1e-3, &mut rng_for(seed, &[1])).unwrap();
            assert!(margin >= 1e-3);
            let err = finite_diff_check(&mut ps, 1e-5, |ps: &mut ParamSet| {
                let (f, cache) = mlp_forward(&x, ps, &arch).unwrap();
                let loss: f64 = f.data().iter().zip(readout.data()).map(|(a, b)| 0.5 * a * a * b).sum();
                let g = Matrix::from_vec(
                    f.rows(),
                    f.cols(),
                    f.data().iter().zip(readout.data()).map(|(a, b)| a * b).collect(),
                )
                .unwrap();
                mlp_backward(&g, &cache, ps).unwrap();
                loss
            });
            assert!(err < 1e-4, "seed {seed}: relative error {err}");
        }
    }
}
