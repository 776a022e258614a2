//! Central finite-difference checks of hand-derived gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{Module, Parameter};

/// A loss with tensor-structured parameters that can be nudged one
/// coordinate at a time. At most one coordinate differs from the unperturbed
/// state during a call to [`FiniteDiffTarget::loss`].
pub trait FiniteDiffTarget {
    /// `(name, element count)` per tensor.
    fn tensors(&self) -> Vec<(String, usize)>;
    fn get(&self, tensor: usize, index: usize) -> f64;
    fn set(&mut self, tensor: usize, index: usize, value: f64);
    fn loss(&mut self) -> f64;
    /// Analytic gradient at the current (unperturbed) parameters, flattened per tensor.
    fn gradient(&mut self) -> Vec<Vec<f64>>;

    /// `(loss(v + step), loss(v - step))` for each coordinate of `tensor`,
    /// leaving parameters unchanged. Implementations may batch or reuse work.
    fn perturbed_losses(&mut self, tensor: usize, indices: &[usize], step: f64) -> Vec<(f64, f64)> {
        indices
            .iter()
            .map(|&i| {
                let original = self.get(tensor, i);
                self.set(tensor, i, original + step);
                let plus = self.loss();
                self.set(tensor, i, original - step);
                let minus = self.loss();
                self.set(tensor, i, original);
                (plus, minus)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tolerance: f64,
    /// Tensors larger than this are checked on a random subset of this size.
    pub samples_per_tensor: usize,
    pub seed: u64,
    /// Lower bound on the relative-error denominator, so coordinates whose
    /// true gradient is zero are judged on absolute error.
    pub abs_floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { step: 1e-4, tolerance: 1e-4, samples_per_tensor: 64, seed: 0, abs_floor: 1e-6 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
    pub max_rel_error: f64,
    pub coordinates: usize,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&TensorCheck> {
        self.tensors.iter().max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

pub fn grad_check<T: FiniteDiffTarget + ?Sized>(target: &mut T, config: &GradCheckConfig) -> GradCheckReport {
    let analytic = target.gradient();
    let layout = target.tensors();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut tensors = Vec::with_capacity(layout.len());
    let mut coordinates = 0;
    for (t, (name, len)) in layout.iter().enumerate() {
        let indices: Vec<usize> = if *len <= config.samples_per_tensor {
            (0..*len).collect()
        } else {
            let mut v = sample(&mut rng, *len, config.samples_per_tensor).into_vec();
            v.sort_unstable();
            v
        };
        let mut check = TensorCheck {
            name: name.clone(),
            checked: indices.len(),
            max_rel_error: 0.0,
            worst_index: 0,
            worst_analytic: 0.0,
            worst_numeric: 0.0,
        };
        let losses = target.perturbed_losses(t, &indices, config.step);
        for (&i, (plus, minus)) in indices.iter().zip(losses) {
            let numeric = (plus - minus) / (2.0 * config.step);
            let a = analytic[t][i];
            let err = relative_error(a, numeric, config.abs_floor);
            if err > check.max_rel_error || !err.is_finite() {
                check.max_rel_error = if err.is_finite() { err } else { f64::INFINITY };
                check.worst_index = i;
                check.worst_analytic = a;
                check.worst_numeric = numeric;
            }
        }
        coordinates += indices.len();
        tensors.push(check);
    }
    let max_rel_error = tensors.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
    GradCheckReport { passed: max_rel_error < config.tolerance, max_rel_error, coordinates, tensors }
}

/// Adapts a [`Module`] plus loss and gradient closures. `backprop` must
/// accumulate gradients into the (already zeroed) module parameters.
pub struct ModuleTarget<'a, M, L, G> {
    module: &'a mut M,
    loss: L,
    backprop: G,
}

impl<'a, M, L, G> ModuleTarget<'a, M, L, G>
where
    M: Module,
    L: FnMut(&M) -> f64,
    G: FnMut(&mut M),
{
    pub fn new(module: &'a mut M, loss: L, backprop: G) -> Self {
        Self { module, loss, backprop }
    }
}

fn with_param<M: Module + ?Sized>(m: &M, tensor: usize, f: &mut dyn FnMut(&Parameter)) {
    let mut k = 0;
    m.visit_params("", &mut |_, p| {
        if k == tensor {
            f(p);
        }
        k += 1;
    });
}

impl<M, L, G> FiniteDiffTarget for ModuleTarget<'_, M, L, G>
where
    M: Module,
    L: FnMut(&M) -> f64,
    G: FnMut(&mut M),
{
    fn tensors(&self) -> Vec<(String, usize)> {
        let mut out = Vec::new();
        self.module.visit_params("", &mut |name, p| out.push((name.to_string(), p.value.len())));
        out
    }

    fn get(&self, tensor: usize, index: usize) -> f64 {
        let mut v = 0.0;
        with_param(&*self.module, tensor, &mut |p| v = p.value.data()[index]);
        v
    }

    fn set(&mut self, tensor: usize, index: usize, value: f64) {
        let mut k = 0;
        self.module.visit_params_mut("", &mut |_, p| {
            if k == tensor {
                p.value.data_mut()[index] = value;
            }
            k += 1;
        });
    }

    fn loss(&mut self) -> f64 {
        (self.loss)(&*self.module)
    }

    fn gradient(&mut self) -> Vec<Vec<f64>> {
        self.module.zero_grad();
        (self.backprop)(&mut *self.module);
        let mut out = Vec::new();
        self.module.visit_params("", &mut |_, p| out.push(p.grad.data().to_vec()));
        out
    }
}
