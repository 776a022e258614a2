use std::cmp::Ordering;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{gelu_derivative, gelu_matrix, join, softmax, Linear, Matrix, Module, Parameter};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolingConfig {
    pub input_dim: usize,
    /// Output widths of the reduction layers; GELU sits between consecutive layers.
    pub reduction_dims: Vec<usize>,
    pub scorer_hidden: usize,
    /// Keep only the `top_k` highest-scoring rows; `None` keeps all.
    pub top_k: Option<usize>,
}

impl PoolingConfig {
    pub fn pathology() -> Self {
        Self { input_dim: 1024, reduction_dims: vec![512], scorer_hidden: 128, top_k: Some(64) }
    }

    pub fn radiology() -> Self {
        Self { input_dim: 65536, reduction_dims: vec![1024, 512], scorer_hidden: 128, top_k: None }
    }

    pub fn output_dim(&self) -> usize {
        *self.reduction_dims.last().unwrap_or(&self.input_dim)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.reduction_dims.is_empty() || self.reduction_dims.contains(&0) {
            return Err(Error::Config("pooling needs at least one non-empty reduction layer".into()));
        }
        if self.scorer_hidden == 0 || self.top_k == Some(0) {
            return Err(Error::Config("scorer width and top_k must be positive".into()));
        }
        Ok(())
    }
}

/// Linear reduction followed by attention-weighted pooling over rows.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionPooling {
    pub reduction: Vec<Linear>,
    pub scorer_hidden: Linear,
    pub scorer_output: Linear,
    pub top_k: Option<usize>,
}

/// Forward state restricted to the kept rows, in pooling order.
#[derive(Debug, Clone)]
pub struct PoolingCache {
    pub kept: Vec<usize>,
    pub weights: Vec<f64>,
    layer_inputs: Vec<Matrix>,
    pre_activations: Vec<Matrix>,
    reduced: Matrix,
    scorer_activation: Matrix,
}

fn lexicographic(a: &[f64], b: &[f64]) -> Ordering {
    a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(Ordering::Equal)
}

impl AttentionPooling {
    pub fn new(config: &PoolingConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let mut width = config.input_dim;
        let mut reduction = Vec::with_capacity(config.reduction_dims.len());
        for &d in &config.reduction_dims {
            reduction.push(Linear::new(width, d, rng));
            width = d;
        }
        Ok(Self {
            reduction,
            scorer_hidden: Linear::new(width, config.scorer_hidden, rng),
            scorer_output: Linear::new(config.scorer_hidden, 1, rng),
            top_k: config.top_k,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.reduction[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.reduction.last().expect("non-empty reduction").output_dim()
    }

    /// Reduced rows with their layer inputs and pre-activations.
    fn reduce(&self, x: &Matrix) -> Result<(Matrix, Vec<Matrix>, Vec<Matrix>)> {
        let mut inputs = Vec::with_capacity(self.reduction.len());
        let mut pre = Vec::with_capacity(self.reduction.len());
        let mut h = x.clone();
        for (i, layer) in self.reduction.iter().enumerate() {
            let z = layer.forward(&h)?;
            let next = if i + 1 < self.reduction.len() { gelu_matrix(&z) } else { z.clone() };
            inputs.push(h);
            pre.push(z);
            h = next;
        }
        Ok((h, inputs, pre))
    }

    /// Reduced rows passed through the attention scorer.
    pub fn scores(&self, reduced: &Matrix) -> Result<(Vec<f64>, Matrix)> {
        let mut t = self.scorer_hidden.forward(reduced)?;
        t.data_mut().iter_mut().for_each(|v| *v = v.tanh());
        let s = self.scorer_output.forward(&t)?;
        Ok((s.into_data(), t))
    }

    /// Kept row indices. Selection ranks by score with ties broken by row
    /// index; the returned order additionally breaks ties by row content so
    /// the pooled sum does not depend on input row order.
    pub fn select(&self, scores: &[f64], reduced: &Matrix) -> Vec<usize> {
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        if let Some(k) = self.top_k {
            order.truncate(k);
        }
        order.sort_by(|&a, &b| {
            scores[b]
                .total_cmp(&scores[a])
                .then_with(|| lexicographic(reduced.row(a), reduced.row(b)))
                .then(a.cmp(&b))
        });
        order
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Vec<f64>, PoolingCache)> {
        if x.rows() == 0 {
            return Err(Error::Empty);
        }
        if x.cols() != self.input_dim() {
            return Err(Error::Shape(format!("bag rows have width {}, expected {}", x.cols(), self.input_dim())));
        }
        if !x.is_finite() {
            return Err(Error::NonFinite);
        }
        let (reduced, inputs, pre) = self.reduce(x)?;
        let (scores, activation) = self.scores(&reduced)?;
        let kept = self.select(&scores, &reduced);
        let weights = softmax(&kept.iter().map(|&i| scores[i]).collect::<Vec<_>>());
        let mut pooled = vec![0.0; reduced.cols()];
        for (&i, w) in kept.iter().zip(&weights) {
            pooled.iter_mut().zip(reduced.row(i)).for_each(|(p, r)| *p += w * r);
        }
        let cache = PoolingCache {
            layer_inputs: inputs.iter().map(|m| m.select_rows(&kept)).collect(),
            pre_activations: pre.iter().map(|m| m.select_rows(&kept)).collect(),
            reduced: reduced.select_rows(&kept),
            scorer_activation: activation.select_rows(&kept),
            kept,
            weights,
        };
        Ok((pooled, cache))
    }

    pub fn pool(&self, x: &Matrix) -> Result<Vec<f64>> {
        Ok(self.forward(x)?.0)
    }

    /// Accumulates parameter gradients for upstream gradient `dpooled`.
    /// Rows outside the kept set receive no gradient.
    pub fn backward(&mut self, cache: &PoolingCache, dpooled: &[f64]) {
        let k = cache.kept.len();
        let d = cache.reduced.cols();
        let mut dreduced = Matrix::zeros(k, d);
        let dots: Vec<f64> =
            (0..k).map(|j| cache.reduced.row(j).iter().zip(dpooled).map(|(r, g)| r * g).sum()).collect();
        let mean: f64 = cache.weights.iter().zip(&dots).map(|(w, g)| w * g).sum();
        let mut dscores = Matrix::zeros(k, 1);
        for j in 0..k {
            let w = cache.weights[j];
            dreduced.row_mut(j).iter_mut().zip(dpooled).for_each(|(r, g)| *r = w * g);
            dscores.set(j, 0, w * (dots[j] - mean));
        }
        let mut dact = self.scorer_output.backward(&cache.scorer_activation, &dscores);
        dact.data_mut()
            .iter_mut()
            .zip(cache.scorer_activation.data())
            .for_each(|(g, t)| *g *= 1.0 - t * t);
        let from_scorer = self.scorer_hidden.backward(&cache.reduced, &dact);
        dreduced.add_assign(&from_scorer).expect("same shape");

        let mut g = dreduced;
        for i in (0..self.reduction.len()).rev() {
            if i == 0 {
                self.reduction[0].accumulate(&cache.layer_inputs[0], &g);
                break;
            }
            let mut dinput = self.reduction[i].backward(&cache.layer_inputs[i], &g);
            dinput
                .data_mut()
                .iter_mut()
                .zip(cache.pre_activations[i - 1].data())
                .for_each(|(v, z)| *v *= gelu_derivative(*z));
            g = dinput;
        }
    }
}

impl Module for AttentionPooling {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Parameter)) {
        self.reduction.visit_params(&join(prefix, "reduction"), f);
        self.scorer_hidden.visit_params(&join(prefix, "scorer_hidden"), f);
        self.scorer_output.visit_params(&join(prefix, "scorer_output"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Parameter)) {
        self.reduction.visit_params_mut(&join(prefix, "reduction"), f);
        self.scorer_hidden.visit_params_mut(&join(prefix, "scorer_hidden"), f);
        self.scorer_output.visit_params_mut(&join(prefix, "scorer_output"), f);
    }
}

/// Attention-pooled bag followed by a linear Cox head.
#[derive(Debug, Clone, PartialEq)]
pub struct MilCoxModel {
    pub pooling: AttentionPooling,
    pub head: Linear,
}

#[derive(Debug, Clone)]
pub struct MilCache {
    pooling: PoolingCache,
    pooled: Matrix,
}

impl MilCoxModel {
    /// Zero-initialized head, so every initial log-risk is 0.
    pub fn new(config: &PoolingConfig, rng: &mut impl Rng) -> Result<Self> {
        let pooling = AttentionPooling::new(config, rng)?;
        let head = Linear::zeros(pooling.output_dim(), 1);
        Ok(Self { pooling, head })
    }

    pub fn forward(&self, bag: &Matrix) -> Result<(f64, MilCache)> {
        let (pooled, cache) = self.pooling.forward(bag)?;
        let pooled = Matrix::row_vector(&pooled);
        let lr = self.head.forward(&pooled)?.get(0, 0);
        Ok((lr, MilCache { pooling: cache, pooled }))
    }

    pub fn log_risk(&self, bag: &Matrix) -> Result<f64> {
        Ok(self.forward(bag)?.0)
    }

    pub fn log_risks(&self, bags: &[&Matrix]) -> Result<Vec<f64>> {
        bags.iter().map(|b| self.log_risk(b)).collect()
    }

    pub fn backward(&mut self, cache: &MilCache, dlog_risk: f64) {
        let dpooled = self.head.backward(&cache.pooled, &Matrix::filled(1, 1, dlog_risk));
        self.pooling.backward(&cache.pooling, dpooled.row(0));
    }
}

impl Module for MilCoxModel {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Parameter)) {
        self.pooling.visit_params(&join(prefix, "pooling"), f);
        self.head.visit_params(&join(prefix, "head"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Parameter)) {
        self.pooling.visit_params_mut(&join(prefix, "pooling"), f);
        self.head.visit_params_mut(&join(prefix, "head"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{gelu, grad_check, GradCheckConfig, ModuleTarget};
    use crate::survival::{cox_loss, cox_loss_gradient, SurvivalLabel};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small(top_k: Option<usize>, layers: usize) -> PoolingConfig {
        let reduction_dims = if layers == 1 { vec![6] } else { vec![7, 6] };
        PoolingConfig { input_dim: 10, reduction_dims, scorer_hidden: 5, top_k }
    }

    fn bag(rows: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Parameter::uniform(rows, 10, 1.0, rng).value
    }

    #[test]
    fn single_row_is_its_reduction() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = AttentionPooling::new(&small(Some(3), 2), &mut rng).unwrap();
        let x = bag(1, &mut rng);
        let (reduced, _, _) = p.reduce(&x).unwrap();
        assert_eq!(p.pool(&x).unwrap(), reduced.row(0));
    }

    #[test]
    fn uniform_scorer_gives_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = AttentionPooling::new(&small(Some(8), 1), &mut rng).unwrap();
        p.scorer_output.weight.value.fill(0.0);
        let x = bag(4, &mut rng);
        let (reduced, _, _) = p.reduce(&x).unwrap();
        let pooled = p.pool(&x).unwrap();
        for (c, v) in pooled.iter().enumerate() {
            let mean = (0..4).map(|r| reduced.get(r, c)).sum::<f64>() / 4.0;
            assert!((v - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_rows_pool_to_that_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = AttentionPooling::new(&small(None, 2), &mut rng).unwrap();
        let one = bag(1, &mut rng);
        let three = Matrix::from_rows(&vec![one.row(0).to_vec(); 3]).unwrap();
        let a = p.pool(&one).unwrap();
        let b = p.pool(&three).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn naive_radiology_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = AttentionPooling::new(&small(None, 2), &mut rng).unwrap();
        let x = bag(3, &mut rng);
        let lin = |l: &Linear, v: &[f64]| -> Vec<f64> {
            (0..l.output_dim())
                .map(|o| l.bias.value.get(0, o) + (0..v.len()).map(|i| l.weight.value.get(o, i) * v[i]).sum::<f64>())
                .collect()
        };
        let mut reduced = Vec::new();
        let mut scores = Vec::new();
        for r in 0..3 {
            let h: Vec<f64> = lin(&p.reduction[0], x.row(r)).into_iter().map(gelu).collect();
            let z = lin(&p.reduction[1], &h);
            let t: Vec<f64> = lin(&p.scorer_hidden, &z).into_iter().map(f64::tanh).collect();
            scores.push(lin(&p.scorer_output, &t)[0]);
            reduced.push(z);
        }
        let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
        let total: f64 = e.iter().sum();
        let pooled = p.pool(&x).unwrap();
        for c in 0..6 {
            let expect: f64 = (0..3).map(|r| e[r] / total * reduced[r][c]).sum();
            assert!((pooled[c] - expect).abs() < 1e-10);
        }
    }

    #[test]
    fn top_k_ignores_low_rows_and_row_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = AttentionPooling::new(&small(Some(2), 1), &mut rng).unwrap();
        let x = bag(5, &mut rng);
        let (pooled, cache) = p.forward(&x).unwrap();
        assert_eq!(cache.kept.len(), 2);
        let perm = [3, 1, 4, 0, 2];
        assert_eq!(p.pool(&x.select_rows(&perm)).unwrap(), pooled);
        // A dropped row overwritten with another dropped row still ranks below the cutoff.
        let dropped: Vec<usize> = (0..5).filter(|i| !cache.kept.contains(i)).collect();
        let mut y = x.clone();
        let donor = x.row(dropped[1]).to_vec();
        y.row_mut(dropped[0]).copy_from_slice(&donor);
        assert_eq!(p.pool(&y).unwrap(), pooled);
    }

    #[test]
    fn top_k_ties_break_by_index() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = AttentionPooling::new(&small(Some(2), 1), &mut rng).unwrap();
        let reduced = Matrix::from_rows(&[vec![0.0; 6], vec![1.0; 6], vec![2.0; 6]]).unwrap();
        let kept = p.select(&[1.0, 1.0, 1.0], &reduced);
        let mut sorted = kept.clone();
        sorted.sort();
        assert_eq!(sorted, vec![0, 1]);
    }

    #[test]
    fn mil_gradients_match_finite_differences() {
        for (seed, layers, top_k) in [(6u64, 1usize, Some(3)), (7, 2, None)] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut model = MilCoxModel::new(&small(top_k, layers), &mut rng).unwrap();
            model.head = Linear::new(6, 1, &mut rng);
            let bags: Vec<Matrix> = (0..5).map(|i| bag(2 + i, &mut rng)).collect();
            let labels: Vec<SurvivalLabel> = [3.0, 5.0, 1.0, 8.0, 2.0]
                .iter()
                .zip([true, false, true, true, false])
                .map(|(&t, e)| SurvivalLabel::new(t, e).unwrap())
                .collect();
            let refs: Vec<&Matrix> = bags.iter().collect();
            let mut target = ModuleTarget::new(
                &mut model,
                |m: &MilCoxModel| cox_loss(&m.log_risks(&refs).unwrap(), &labels).unwrap(),
                |m: &mut MilCoxModel| {
                    let out: Vec<(f64, MilCache)> = refs.iter().map(|b| m.forward(b).unwrap()).collect();
                    let lrs: Vec<f64> = out.iter().map(|o| o.0).collect();
                    let g = cox_loss_gradient(&lrs, &labels).unwrap();
                    for ((_, cache), gi) in out.iter().zip(g) {
                        m.backward(cache, gi);
                    }
                },
            );
            let cfg = GradCheckConfig { step: 1e-4, tolerance: 1e-5, ..Default::default() };
            let report = grad_check(&mut target, &cfg);
            assert!(report.passed, "{:?}", report.worst());
        }
    }
}
