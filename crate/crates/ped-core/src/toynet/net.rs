//! The trainable skip network: forward pass, manual backpropagation,
//! plain SGD, finite-difference gradient checking, and feature-map
//! extraction for dependence scoring.
//!
//! Storage is shape-stable under pruning: every unit keeps its
//! full-shape parameters, and the live computation selects the rows that
//! active units actually feed. Gradients land in the same full shapes
//! with zeros at frozen slots, so an SGD step never moves a pruned
//! parameter.

use ndarray::{concatenate, s, Array1, Array2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::data::Batch;
use super::{Composition, SkipNetConfig, ToynetError};
use crate::io::FeatureMatrix;
use crate::ped::{PedError, PruningPolicy};

#[derive(Clone, Debug)]
pub(crate) struct UnitParams {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

/// Gradients in the same full shapes as the parameters; pruned units and
/// rows fed by pruned units stay zero.
#[derive(Clone, Debug)]
pub struct NetGrads {
    pub(crate) stem_w: Array2<f64>,
    pub(crate) stem_b: Array1<f64>,
    pub(crate) units: Vec<UnitParams>,
    pub(crate) head_w: Array2<f64>,
    pub(crate) head_b: Array1<f64>,
}

/// Everything one forward pass produced. `stream[0]` is the stem output,
/// `stream[l + 1]` the stream after unit `l` (unchanged when the unit is
/// pruned); widths are live widths. `unit_outputs[l]` is `T_l` for active
/// units.
pub struct ForwardTrace {
    pub stream: Vec<Array2<f64>>,
    pub unit_outputs: Vec<Option<Array2<f64>>>,
    hidden_pre: Vec<Option<Array2<f64>>>,
    hidden_act: Vec<Option<Array2<f64>>>,
    pub logits: Array2<f64>,
}

/// Hyper-parameters of one SGD run.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Seed for the per-epoch shuffle.
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, serde::Serialize)]
pub struct TrainStats {
    pub epochs_run: usize,
    /// Full-batch loss after the last step.
    pub final_loss: f64,
}

/// Stable softmax cross-entropy: mean loss and the per-row class
/// probabilities. Targets are 1-based and must be within range.
fn softmax_ce(logits: &Array2<f64>, targets: &[u32]) -> (f64, Array2<f64>) {
    let m = logits.nrows();
    let mut probs = logits.clone();
    let mut loss = 0.0;
    for (i, mut row) in probs.rows_mut().into_iter().enumerate() {
        let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        let lse = max + sum.ln();
        loss += lse - logits[[i, targets[i] as usize - 1]];
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    (loss / m as f64, probs)
}

fn scatter_rows(full: &mut Array2<f64>, rows: &[usize], vals: &Array2<f64>) {
    for (t, &r) in rows.iter().enumerate() {
        full.row_mut(r).assign(&vals.row(t));
    }
}

#[derive(Clone, Debug)]
pub struct SkipNetwork {
    cfg: SkipNetConfig,
    policy: PruningPolicy,
    stem_w: Array2<f64>,
    stem_b: Array1<f64>,
    units: Vec<UnitParams>,
    head_w: Array2<f64>,
    head_b: Array1<f64>,
}

impl SkipNetwork {
    /// Fresh network with every unit active. Weights are uniform in
    /// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` drawn in a fixed order (stem,
    /// units front to back with `w1` before `w2`, head); biases start at
    /// zero.
    pub fn new(cfg: SkipNetConfig) -> Result<Self, ToynetError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut draw = |rows: usize, cols: usize, fan_in: usize| -> Array2<f64> {
            let scale = 1.0 / (fan_in as f64).sqrt();
            let mut v = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                v.push(rng.gen_range(-scale..=scale));
            }
            Array2::from_shape_vec((rows, cols), v).expect("length matches shape")
        };
        let stem_w = draw(cfg.input_dim, cfg.stem_width, cfg.input_dim);
        let mut units = Vec::with_capacity(cfg.units);
        for l in 0..cfg.units {
            let input = cfg.full_input_width(l);
            let w1 = draw(input, cfg.unit_width, input);
            let w2 = draw(cfg.unit_width, cfg.unit_width, cfg.unit_width);
            units.push(UnitParams {
                w1,
                b1: Array1::zeros(cfg.unit_width),
                w2,
                b2: Array1::zeros(cfg.unit_width),
            });
        }
        let final_width = cfg.full_final_width();
        let head_w = draw(final_width, cfg.classes, final_width);
        let policy = PruningPolicy::all_active(cfg.units)?;
        Ok(SkipNetwork {
            stem_b: Array1::zeros(cfg.stem_width),
            head_b: Array1::zeros(cfg.classes),
            cfg,
            policy,
            stem_w,
            units,
            head_w,
        })
    }

    pub fn cfg(&self) -> &SkipNetConfig {
        &self.cfg
    }

    pub fn policy(&self) -> &PruningPolicy {
        &self.policy
    }

    /// Applies a pruning policy. Policies may only remove units relative
    /// to the current one, never bring them back.
    pub fn set_policy(&mut self, policy: &PruningPolicy) -> Result<(), ToynetError> {
        if policy.unit_count() != self.cfg.units {
            return Err(PedError::PolicyLength {
                policy_units: policy.unit_count(),
                model_units: self.cfg.units,
            }
            .into());
        }
        if let Some(unit) = policy.nesting_violation(&self.policy) {
            return Err(PedError::PolicyNotNested { unit }.into());
        }
        self.policy = policy.clone();
        Ok(())
    }

    /// Full-layout row indices of the stream entering unit `l` (pass
    /// `cfg.units` for the head input).
    fn live_rows_into(&self, l: usize) -> Vec<usize> {
        match self.cfg.composition {
            Composition::Residual => (0..self.cfg.stem_width).collect(),
            Composition::Dense => {
                let mut rows: Vec<usize> = (0..self.cfg.stem_width).collect();
                for &j in self.policy.active_set() {
                    if j >= l {
                        break;
                    }
                    let start = self.cfg.stem_width + self.cfg.unit_width * j;
                    rows.extend(start..start + self.cfg.unit_width);
                }
                rows
            }
        }
    }

    fn check_batch(&self, batch: &Batch) -> Result<(), ToynetError> {
        if batch.input_dim() != self.cfg.input_dim {
            return Err(ToynetError::ShapeMismatch {
                expected: self.cfg.input_dim,
                found: batch.input_dim(),
            });
        }
        for &t in &batch.targets {
            if t == 0 || t as usize > self.cfg.classes {
                return Err(ToynetError::InvalidConfig {
                    detail: format!(
                        "target {t} outside the class range 1..={}",
                        self.cfg.classes
                    ),
                });
            }
        }
        Ok(())
    }

    pub fn forward(&self, inputs: &Array2<f64>) -> Result<ForwardTrace, ToynetError> {
        if inputs.ncols() != self.cfg.input_dim {
            return Err(ToynetError::ShapeMismatch {
                expected: self.cfg.input_dim,
                found: inputs.ncols(),
            });
        }
        let mut stream = Vec::with_capacity(self.cfg.units + 1);
        let mut unit_outputs = Vec::with_capacity(self.cfg.units);
        let mut hidden_pre = Vec::with_capacity(self.cfg.units);
        let mut hidden_act = Vec::with_capacity(self.cfg.units);
        let mut u = inputs.dot(&self.stem_w) + &self.stem_b;
        stream.push(u.clone());
        for l in 0..self.cfg.units {
            if !self.policy.is_active(l) {
                unit_outputs.push(None);
                hidden_pre.push(None);
                hidden_act.push(None);
                stream.push(u.clone());
                continue;
            }
            let p = &self.units[l];
            let w1_live = p.w1.select(Axis(0), &self.live_rows_into(l));
            let h1 = u.dot(&w1_live) + &p.b1;
            let a1 = h1.mapv(|v| v.max(0.0));
            let t = a1.dot(&p.w2) + &p.b2;
            u = match self.cfg.composition {
                Composition::Residual => &u + &t,
                Composition::Dense => concatenate(Axis(1), &[u.view(), t.view()])
                    .expect("stream and unit output share the row count"),
            };
            stream.push(u.clone());
            unit_outputs.push(Some(t));
            hidden_pre.push(Some(h1));
            hidden_act.push(Some(a1));
        }
        let head_live = self.head_w.select(Axis(0), &self.live_rows_into(self.cfg.units));
        let logits = u.dot(&head_live) + &self.head_b;
        Ok(ForwardTrace {
            stream,
            unit_outputs,
            hidden_pre,
            hidden_act,
            logits,
        })
    }

    /// Mean cross-entropy loss on a batch.
    pub fn loss(&self, batch: &Batch) -> Result<f64, ToynetError> {
        self.check_batch(batch)?;
        let trace = self.forward(&batch.inputs)?;
        Ok(softmax_ce(&trace.logits, &batch.targets).0)
    }

    /// Classification accuracy; prediction ties resolve to the smaller
    /// class id.
    pub fn accuracy(&self, batch: &Batch) -> Result<f64, ToynetError> {
        self.check_batch(batch)?;
        let trace = self.forward(&batch.inputs)?;
        let mut hits = 0usize;
        for (i, row) in trace.logits.rows().into_iter().enumerate() {
            let mut arg = 0usize;
            let mut best = f64::NEG_INFINITY;
            for (c, &v) in row.iter().enumerate() {
                if v > best {
                    best = v;
                    arg = c;
                }
            }
            if arg as u32 + 1 == batch.targets[i] {
                hits += 1;
            }
        }
        Ok(hits as f64 / batch.n() as f64)
    }

    fn zero_grads(&self) -> NetGrads {
        NetGrads {
            stem_w: Array2::zeros(self.stem_w.dim()),
            stem_b: Array1::zeros(self.stem_b.dim()),
            units: self
                .units
                .iter()
                .map(|p| UnitParams {
                    w1: Array2::zeros(p.w1.dim()),
                    b1: Array1::zeros(p.b1.dim()),
                    w2: Array2::zeros(p.w2.dim()),
                    b2: Array1::zeros(p.b2.dim()),
                })
                .collect(),
            head_w: Array2::zeros(self.head_w.dim()),
            head_b: Array1::zeros(self.head_b.dim()),
        }
    }

    /// Loss and its gradient with respect to every stored parameter.
    pub fn loss_and_grads(&self, batch: &Batch) -> Result<(f64, NetGrads), ToynetError> {
        self.check_batch(batch)?;
        let trace = self.forward(&batch.inputs)?;
        let (loss, probs) = softmax_ce(&trace.logits, &batch.targets);
        let m = batch.n() as f64;
        let mut dlogits = probs;
        for (i, &t) in batch.targets.iter().enumerate() {
            dlogits[[i, t as usize - 1]] -= 1.0;
        }
        dlogits.mapv_inplace(|v| v / m);

        let mut grads = self.zero_grads();
        let head_rows = self.live_rows_into(self.cfg.units);
        let u_final = trace.stream.last().expect("stream holds the stem output");
        scatter_rows(&mut grads.head_w, &head_rows, &u_final.t().dot(&dlogits));
        grads.head_b = dlogits.sum_axis(Axis(0));
        let head_live = self.head_w.select(Axis(0), &head_rows);
        let mut du = dlogits.dot(&head_live.t());

        for l in (0..self.cfg.units).rev() {
            if !self.policy.is_active(l) {
                continue;
            }
            let p = &self.units[l];
            let h1 = trace.hidden_pre[l].as_ref().expect("active unit has a trace");
            let a1 = trace.hidden_act[l].as_ref().expect("active unit has a trace");
            let u_in = &trace.stream[l];
            let (dt, du_prev) = match self.cfg.composition {
                Composition::Residual => (du.clone(), du),
                Composition::Dense => {
                    let split = du.ncols() - self.cfg.unit_width;
                    (
                        du.slice(s![.., split..]).to_owned(),
                        du.slice(s![.., ..split]).to_owned(),
                    )
                }
            };
            grads.units[l].w2 = a1.t().dot(&dt);
            grads.units[l].b2 = dt.sum_axis(Axis(0));
            let mut dh1 = dt.dot(&p.w2.t());
            Zip::from(&mut dh1).and(h1).for_each(|d, &h| {
                if h <= 0.0 {
                    *d = 0.0;
                }
            });
            let rows = self.live_rows_into(l);
            scatter_rows(&mut grads.units[l].w1, &rows, &u_in.t().dot(&dh1));
            grads.units[l].b1 = dh1.sum_axis(Axis(0));
            let w1_live = p.w1.select(Axis(0), &rows);
            du = du_prev + dh1.dot(&w1_live.t());
        }

        grads.stem_w = batch.inputs.t().dot(&du);
        grads.stem_b = du.sum_axis(Axis(0));
        Ok((loss, grads))
    }

    fn sgd_step(&mut self, grads: &NetGrads, lr: f64) {
        self.stem_w.scaled_add(-lr, &grads.stem_w);
        self.stem_b.scaled_add(-lr, &grads.stem_b);
        for (p, g) in self.units.iter_mut().zip(&grads.units) {
            p.w1.scaled_add(-lr, &g.w1);
            p.b1.scaled_add(-lr, &g.b1);
            p.w2.scaled_add(-lr, &g.w2);
            p.b2.scaled_add(-lr, &g.b2);
        }
        self.head_w.scaled_add(-lr, &grads.head_w);
        self.head_b.scaled_add(-lr, &grads.head_b);
    }

    /// Mini-batch SGD from the current weights. The shuffle is seeded;
    /// two identical calls leave identical networks behind.
    pub fn train(&mut self, data: &Batch, cfg: &TrainConfig) -> Result<TrainStats, ToynetError> {
        if cfg.epochs == 0 {
            return Err(ToynetError::InvalidConfig {
                detail: "training needs at least one epoch".to_string(),
            });
        }
        if !(cfg.lr.is_finite() && cfg.lr > 0.0) {
            return Err(ToynetError::InvalidConfig {
                detail: format!("learning rate must be finite and positive, got {}", cfg.lr),
            });
        }
        if cfg.batch_size == 0 {
            return Err(ToynetError::InvalidConfig {
                detail: "batch size must be at least 1".to_string(),
            });
        }
        self.check_batch(data)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut order: Vec<usize> = (0..data.n()).collect();
        for epoch in 0..cfg.epochs {
            use rand::seq::SliceRandom;
            order.shuffle(&mut rng);
            for chunk in order.chunks(cfg.batch_size) {
                let minibatch = data.select(chunk);
                let (loss, grads) = self.loss_and_grads(&minibatch)?;
                if !loss.is_finite() {
                    return Err(ToynetError::DivergedLoss { epoch, loss });
                }
                self.sgd_step(&grads, cfg.lr);
            }
        }
        let final_loss = self.loss(data)?;
        if !final_loss.is_finite() {
            return Err(ToynetError::DivergedLoss {
                epoch: cfg.epochs - 1,
                loss: final_loss,
            });
        }
        Ok(TrainStats {
            epochs_run: cfg.epochs,
            final_loss,
        })
    }

    /// `T_l` for every active unit, in active-set order, evaluated on the
    /// given inputs.
    pub fn extract_feature_maps(
        &self,
        inputs: &Array2<f64>,
    ) -> Result<Vec<FeatureMatrix>, ToynetError> {
        let trace = self.forward(inputs)?;
        self.policy
            .active_set()
            .iter()
            .map(|&l| {
                let t = trace.unit_outputs[l]
                    .clone()
                    .expect("active unit has an output");
                FeatureMatrix::new(t).map_err(Into::into)
            })
            .collect()
    }

    /// Every stored parameter, pruned slots included, in a fixed order:
    /// stem `W`, stem `b`, per unit `W1 b1 W2 b2` front to back, head `W`,
    /// head `b`; matrices row-major.
    pub fn flatten_all_params(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.stored_param_count());
        flat.extend(self.stem_w.iter());
        flat.extend(self.stem_b.iter());
        for p in &self.units {
            flat.extend(p.w1.iter());
            flat.extend(p.b1.iter());
            flat.extend(p.w2.iter());
            flat.extend(p.b2.iter());
        }
        flat.extend(self.head_w.iter());
        flat.extend(self.head_b.iter());
        flat
    }

    /// Gradients flattened in the same order as [`flatten_all_params`].
    pub fn flatten_all_grads(&self, grads: &NetGrads) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.stored_param_count());
        flat.extend(grads.stem_w.iter());
        flat.extend(grads.stem_b.iter());
        for p in &grads.units {
            flat.extend(p.w1.iter());
            flat.extend(p.b1.iter());
            flat.extend(p.w2.iter());
            flat.extend(p.b2.iter());
        }
        flat.extend(grads.head_w.iter());
        flat.extend(grads.head_b.iter());
        flat
    }

    /// Overwrites every stored parameter from a flat vector in the
    /// [`flatten_all_params`] order.
    pub fn set_all_params(&mut self, flat: &[f64]) -> Result<(), ToynetError> {
        if flat.len() != self.stored_param_count() {
            return Err(ToynetError::InvalidConfig {
                detail: format!(
                    "flat parameter vector has {} entries, expected {}",
                    flat.len(),
                    self.stored_param_count()
                ),
            });
        }
        let mut at = 0usize;
        let take2 = |arr: &mut Array2<f64>, at: &mut usize| {
            for v in arr.iter_mut() {
                *v = flat[*at];
                *at += 1;
            }
        };
        // Closures cannot borrow `flat` twice mutably; do it inline.
        take2(&mut self.stem_w, &mut at);
        for v in self.stem_b.iter_mut() {
            *v = flat[at];
            at += 1;
        }
        for l in 0..self.units.len() {
            take2(&mut self.units[l].w1, &mut at);
            for v in self.units[l].b1.iter_mut() {
                *v = flat[at];
                at += 1;
            }
            take2(&mut self.units[l].w2, &mut at);
            for v in self.units[l].b2.iter_mut() {
                *v = flat[at];
                at += 1;
            }
        }
        take2(&mut self.head_w, &mut at);
        for v in self.head_b.iter_mut() {
            *v = flat[at];
            at += 1;
        }
        debug_assert_eq!(at, flat.len());
        Ok(())
    }

    /// Number of stored scalars, pruned slots included.
    pub fn stored_param_count(&self) -> usize {
        let mut total = self.stem_w.len() + self.stem_b.len();
        for p in &self.units {
            total += p.w1.len() + p.b1.len() + p.w2.len() + p.b2.len();
        }
        total + self.head_w.len() + self.head_b.len()
    }

    /// The trainable parameters under the current policy, flattened in
    /// the storage order but with pruned units and dead rows skipped. Its
    /// length always equals [`super::count_params`].
    pub fn param_vector(&self) -> Vec<f64> {
        let mut flat = Vec::new();
        flat.extend(self.stem_w.iter());
        flat.extend(self.stem_b.iter());
        for &l in self.policy.active_set() {
            let p = &self.units[l];
            let live = p.w1.select(Axis(0), &self.live_rows_into(l));
            flat.extend(live.iter());
            flat.extend(p.b1.iter());
            flat.extend(p.w2.iter());
            flat.extend(p.b2.iter());
        }
        let head_live = self.head_w.select(Axis(0), &self.live_rows_into(self.cfg.units));
        flat.extend(head_live.iter());
        flat.extend(self.head_b.iter());
        flat
    }

    /// Largest relative disagreement between analytic and central
    /// finite-difference gradients over every stored parameter.
    /// Relative error is `|a - fd| / max(1, |a| + |fd|)`.
    pub fn grad_check(&mut self, batch: &Batch, eps: f64) -> Result<f64, ToynetError> {
        if !(eps.is_finite() && eps > 0.0) {
            return Err(ToynetError::InvalidConfig {
                detail: format!("eps must be finite and positive, got {eps}"),
            });
        }
        let (_, grads) = self.loss_and_grads(batch)?;
        let analytic = self.flatten_all_grads(&grads);
        let base = self.flatten_all_params();
        let mut pert = base.clone();
        let mut worst = 0.0f64;
        for i in 0..base.len() {
            pert[i] = base[i] + eps;
            self.set_all_params(&pert)?;
            let lp = self.loss(batch)?;
            pert[i] = base[i] - eps;
            self.set_all_params(&pert)?;
            let lm = self.loss(batch)?;
            pert[i] = base[i];
            let fd = (lp - lm) / (2.0 * eps);
            let rel = (analytic[i] - fd).abs() / (analytic[i].abs() + fd.abs()).max(1.0);
            worst = worst.max(rel);
        }
        self.set_all_params(&base)?;
        Ok(worst)
    }
}

/// Runs [`SkipNetwork::grad_check`] on `cases` randomly drawn network
/// shapes, pruning states and batches, alternating residual and dense
/// composition. Returns the worst relative error seen.
pub fn grad_check_suite(cases: usize, eps: f64, seed: u64) -> Result<f64, ToynetError> {
    if cases == 0 {
        return Err(ToynetError::InvalidConfig {
            detail: "need at least one gradient-check case".into(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for case in 0..cases {
        let composition = if case % 2 == 0 {
            Composition::Residual
        } else {
            Composition::Dense
        };
        let stem_width = rng.gen_range(2..=6);
        let cfg = SkipNetConfig {
            input_dim: rng.gen_range(1..=4),
            stem_width,
            units: rng.gen_range(1..=5),
            unit_width: match composition {
                Composition::Residual => stem_width,
                Composition::Dense => rng.gen_range(1..=5),
            },
            classes: rng.gen_range(2..=4),
            composition,
            seed: rng.gen(),
        };
        let mut net = SkipNetwork::new(cfg.clone())?;

        let mut alphas: Vec<u8> = (0..cfg.units).map(|_| rng.gen_range(0..=1)).collect();
        if alphas.iter().all(|&a| a == 0) {
            alphas[rng.gen_range(0..cfg.units)] = 1;
        }
        net.set_policy(&PruningPolicy::from_alphas(alphas, 1).map_err(ToynetError::Ped)?)?;

        let n = rng.gen_range(3..=8);
        let mut rows = Vec::with_capacity(n * cfg.input_dim);
        for _ in 0..n * cfg.input_dim {
            rows.push(rng.sample::<f64, _>(rand_distr::StandardNormal));
        }
        let batch = Batch {
            inputs: Array2::from_shape_vec((n, cfg.input_dim), rows)
                .expect("row count matches n"),
            targets: (0..n)
                .map(|_| rng.gen_range(1..=cfg.classes as u32))
                .collect(),
            classes: cfg.classes as u32,
        };
        worst = worst.max(net.grad_check(&batch, eps)?);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toynet::data::{gen_synthetic, DataKind};
    use crate::toynet::{count_params, Composition};

    fn residual_cfg(seed: u64) -> SkipNetConfig {
        SkipNetConfig {
            input_dim: 2,
            stem_width: 5,
            units: 3,
            unit_width: 5,
            classes: 2,
            composition: Composition::Residual,
            seed,
        }
    }

    fn dense_cfg(seed: u64) -> SkipNetConfig {
        SkipNetConfig {
            input_dim: 2,
            stem_width: 4,
            units: 3,
            unit_width: 3,
            classes: 3,
            composition: Composition::Dense,
            seed,
        }
    }

    fn tiny_batch(classes: u32) -> Batch {
        gen_synthetic(DataKind::Blobs, 12, classes, 2, 0.2, 5).unwrap()
    }

    #[test]
    fn forward_shapes_follow_the_policy() {
        let mut net = SkipNetwork::new(dense_cfg(1)).unwrap();
        let batch = tiny_batch(3);
        let trace = net.forward(&batch.inputs).unwrap();
        // All active: widths 4, 7, 10, 13.
        assert_eq!(trace.stream[0].ncols(), 4);
        assert_eq!(trace.stream[3].ncols(), 13);
        assert_eq!(trace.logits.dim(), (12, 3));

        let policy = PruningPolicy::from_alphas(vec![1, 0, 1], 1).unwrap();
        net.set_policy(&policy).unwrap();
        let trace = net.forward(&batch.inputs).unwrap();
        assert_eq!(trace.stream[3].ncols(), 10);
        assert!(trace.unit_outputs[1].is_none());
        assert_eq!(trace.logits.dim(), (12, 3));
    }

    #[test]
    fn pruning_every_unit_leaves_the_stem_head_path() {
        let mut net = SkipNetwork::new(residual_cfg(2)).unwrap();
        let batch = tiny_batch(2);
        // Keep exactly one unit, then compare against keeping it out of the
        // residual stream entirely: the pruned forward must not read it.
        let policy = PruningPolicy::from_alphas(vec![0, 0, 1], 1).unwrap();
        net.set_policy(&policy).unwrap();
        let trace = net.forward(&batch.inputs).unwrap();
        assert!(trace.unit_outputs[0].is_none());
        assert!(trace.unit_outputs[1].is_none());
        assert!(trace.unit_outputs[2].is_some());
        // Stream is unchanged across pruned units.
        assert_eq!(trace.stream[0], trace.stream[1]);
        assert_eq!(trace.stream[1], trace.stream[2]);
        assert_ne!(trace.stream[2], trace.stream[3]);
    }

    #[test]
    fn set_policy_rejects_reactivation_and_wrong_length() {
        let mut net = SkipNetwork::new(residual_cfg(3)).unwrap();
        let pruned = PruningPolicy::from_alphas(vec![1, 0, 1], 1).unwrap();
        net.set_policy(&pruned).unwrap();
        let back = PruningPolicy::from_alphas(vec![1, 1, 1], 2).unwrap();
        assert!(matches!(
            net.set_policy(&back),
            Err(ToynetError::Ped(PedError::PolicyNotNested { unit: 1 }))
        ));
        let wrong = PruningPolicy::from_alphas(vec![1, 1], 0).unwrap();
        assert!(matches!(
            net.set_policy(&wrong),
            Err(ToynetError::Ped(PedError::PolicyLength { .. }))
        ));
    }

    #[test]
    fn gradients_agree_with_finite_differences() {
        for (cfg, alphas) in [
            (residual_cfg(7), vec![1, 1, 1]),
            (residual_cfg(8), vec![1, 0, 1]),
            (dense_cfg(9), vec![1, 1, 1]),
            (dense_cfg(10), vec![0, 1, 1]),
        ] {
            let classes = cfg.classes as u32;
            let mut net = SkipNetwork::new(cfg).unwrap();
            let policy = PruningPolicy::from_alphas(alphas, 1).unwrap();
            net.set_policy(&policy).unwrap();
            let batch = tiny_batch(classes);
            let worst = net.grad_check(&batch, 1e-6).unwrap();
            assert!(worst < 1e-4, "relative error {worst}");
        }
    }

    #[test]
    fn pruned_parameters_have_zero_gradients_and_stay_frozen() {
        let mut net = SkipNetwork::new(residual_cfg(11)).unwrap();
        let policy = PruningPolicy::from_alphas(vec![1, 0, 1], 1).unwrap();
        net.set_policy(&policy).unwrap();
        let batch = tiny_batch(2);
        let (_, grads) = net.loss_and_grads(&batch).unwrap();
        assert!(grads.units[1].w1.iter().all(|&v| v == 0.0));
        assert!(grads.units[1].w2.iter().all(|&v| v == 0.0));

        let before = net.units[1].w1.clone();
        let train_cfg = TrainConfig {
            epochs: 3,
            lr: 0.1,
            batch_size: 4,
            seed: 0,
        };
        net.train(&batch, &train_cfg).unwrap();
        assert_eq!(net.units[1].w1, before);
    }

    #[test]
    fn dense_dead_rows_stay_frozen_too() {
        let mut net = SkipNetwork::new(dense_cfg(12)).unwrap();
        let policy = PruningPolicy::from_alphas(vec![0, 1, 1], 1).unwrap();
        net.set_policy(&policy).unwrap();
        let batch = tiny_batch(3);
        // Unit 1's w1 rows 4..7 are fed by pruned unit 0 and must not move.
        let before = net.units[1].w1.slice(s![4..7, ..]).to_owned();
        let train_cfg = TrainConfig {
            epochs: 3,
            lr: 0.1,
            batch_size: 4,
            seed: 1,
        };
        net.train(&batch, &train_cfg).unwrap();
        assert_eq!(net.units[1].w1.slice(s![4..7, ..]), before);
        // The live rows do move.
        assert_ne!(net.units[1].w1.slice(s![0..4, ..]).to_owned(),
                   SkipNetwork::new(dense_cfg(12)).unwrap().units[1].w1.slice(s![0..4, ..]).to_owned());
    }

    #[test]
    fn training_reduces_loss_and_reaches_high_accuracy_on_blobs() {
        let cfg = SkipNetConfig {
            input_dim: 2,
            stem_width: 8,
            units: 2,
            unit_width: 8,
            classes: 3,
            composition: Composition::Residual,
            seed: 3,
        };
        let mut net = SkipNetwork::new(cfg).unwrap();
        let data = gen_synthetic(DataKind::Blobs, 150, 3, 2, 0.3, 4).unwrap();
        let before = net.loss(&data).unwrap();
        let stats = net
            .train(
                &data,
                &TrainConfig {
                    epochs: 60,
                    lr: 0.05,
                    batch_size: 16,
                    seed: 2,
                },
            )
            .unwrap();
        assert!(stats.final_loss < before);
        assert!(net.accuracy(&data).unwrap() > 0.95);
    }

    #[test]
    fn training_is_deterministic() {
        let data = tiny_batch(2);
        let cfg = TrainConfig {
            epochs: 5,
            lr: 0.1,
            batch_size: 4,
            seed: 42,
        };
        let mut a = SkipNetwork::new(residual_cfg(13)).unwrap();
        let mut b = SkipNetwork::new(residual_cfg(13)).unwrap();
        a.train(&data, &cfg).unwrap();
        b.train(&data, &cfg).unwrap();
        assert_eq!(a.flatten_all_params(), b.flatten_all_params());
    }

    #[test]
    fn divergence_is_reported_not_propagated() {
        let mut net = SkipNetwork::new(residual_cfg(14)).unwrap();
        let data = tiny_batch(2);
        let res = net.train(
            &data,
            &TrainConfig {
                epochs: 10,
                lr: 1e14,
                batch_size: 4,
                seed: 0,
            },
        );
        assert!(matches!(res, Err(ToynetError::DivergedLoss { .. })));
    }

    #[test]
    fn param_vector_length_matches_count_params() {
        for (cfg, alphas) in [
            (residual_cfg(15), vec![1, 1, 1]),
            (residual_cfg(15), vec![1, 0, 1]),
            (dense_cfg(16), vec![1, 1, 1]),
            (dense_cfg(16), vec![0, 1, 0]),
        ] {
            let mut net = SkipNetwork::new(cfg.clone()).unwrap();
            let policy = PruningPolicy::from_alphas(alphas, 1).unwrap();
            net.set_policy(&policy).unwrap();
            assert_eq!(
                net.param_vector().len() as u64,
                count_params(&cfg, &policy),
                "{cfg:?}"
            );
        }
    }

    #[test]
    fn flatten_set_round_trip() {
        let mut net = SkipNetwork::new(dense_cfg(17)).unwrap();
        let flat = net.flatten_all_params();
        let doubled: Vec<f64> = flat.iter().map(|v| v * 2.0).collect();
        net.set_all_params(&doubled).unwrap();
        assert_eq!(net.flatten_all_params(), doubled);
        assert!(net.set_all_params(&flat[1..]).is_err());
    }

    #[test]
    fn feature_maps_follow_the_active_set() {
        let mut net = SkipNetwork::new(dense_cfg(18)).unwrap();
        let batch = tiny_batch(3);
        let policy = PruningPolicy::from_alphas(vec![1, 0, 1], 1).unwrap();
        net.set_policy(&policy).unwrap();
        let maps = net.extract_feature_maps(&batch.inputs).unwrap();
        assert_eq!(maps.len(), 2);
        assert!(maps.iter().all(|m| m.n() == 12 && m.d() == 3));
    }

    #[test]
    fn wrong_input_width_and_bad_targets_are_rejected() {
        let net = SkipNetwork::new(residual_cfg(19)).unwrap();
        let bad_dim = gen_synthetic(DataKind::Blobs, 12, 2, 3, 0.2, 5).unwrap();
        assert!(matches!(
            net.loss(&bad_dim),
            Err(ToynetError::ShapeMismatch { expected: 2, found: 3 })
        ));
        let mut batch = tiny_batch(2);
        batch.targets[0] = 9;
        assert!(matches!(
            net.loss(&batch),
            Err(ToynetError::InvalidConfig { .. })
        ));
    }

    #[test]
    fn softmax_matches_hand_computation() {
        let logits = ndarray::array![[0.0, 0.0]];
        let (loss, probs) = softmax_ce(&logits, &[1]);
        assert!((loss - (2.0f64).ln()).abs() < 1e-15);
        assert!((probs[[0, 0]] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn grad_check_suite_is_deterministic_and_tight() {
        let a = grad_check_suite(6, 1e-6, 11).unwrap();
        let b = grad_check_suite(6, 1e-6, 11).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert!(a < 1e-4, "worst relative error {a}");
        assert!(matches!(
            grad_check_suite(0, 1e-6, 0),
            Err(ToynetError::InvalidConfig { .. })
        ));
    }
}
