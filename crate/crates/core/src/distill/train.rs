//! Joint teacher/student training with gradient-guided sparse attention.

use super::network::{NetCfg, SparsityCfg, Student, Teacher};
use super::objective::{cross_entropy, distill_kl, LambdaSchedule, DEFAULT_DISTILL_TEMPERATURE, DEFAULT_EMA_ALPHA};
use super::simulator::{grad_sim_loss, EmaBank, PhiEmbed};
use crate::error::{Error, Result};
use crate::metrics::{checkpoint_select, confusion_metrics, Candidate, PredictionSet};
use crate::nn::{AttentionVariant, Mode};
use crate::par::Execution;
use crate::phantom::ImageSet;
use crate::rng::LabRng;
use crate::tensor::{Adam, AdamConfig, Gradients, Graph, ParamStore, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DistillCfg {
    pub teacher: NetCfg,
    pub student: NetCfg,
    pub variant: AttentionVariant,
    pub sparsity: SparsityCfg,
    pub alpha_ema: f64,
    pub schedule: LambdaSchedule,
    pub distill_weight: f64,
    pub temperature: f64,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl DistillCfg {
    pub fn new(side: usize, seed: u64) -> Self {
        Self {
            teacher: NetCfg::teacher(side),
            student: NetCfg::student(side),
            variant: AttentionVariant::Sparse,
            sparsity: SparsityCfg::default(),
            alpha_ema: DEFAULT_EMA_ALPHA,
            schedule: LambdaSchedule::default(),
            distill_weight: 1.0,
            temperature: DEFAULT_DISTILL_TEMPERATURE,
            batch: 8,
            lr: AdamConfig::default().lr,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.student.hidden >= self.teacher.hidden {
            return Err(Error::Config(format!(
                "student hidden dim {} must be smaller than the teacher's {}",
                self.student.hidden, self.teacher.hidden
            )));
        }
        if self.student.tokens() != self.teacher.tokens() {
            return Err(Error::Config("teacher and student must see the same token grid".into()));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch must be >= 1".into()));
        }
        if !(self.distill_weight >= 0.0) {
            return Err(Error::Config(format!("distill_weight must be >= 0, got {}", self.distill_weight)));
        }
        if !(0.0..1.0).contains(&self.alpha_ema) {
            return Err(Error::Config(format!("alpha_ema must lie in [0, 1), got {}", self.alpha_ema)));
        }
        if !(self.lr >= 0.0) {
            return Err(Error::Config(format!("lr must be >= 0, got {}", self.lr)));
        }
        Ok(())
    }
}

/// Per-epoch means of the loss components plus validation metrics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Global step count at the end of the epoch.
    pub step: usize,
    pub cls: f64,
    pub distill: f64,
    pub grad_sim: f64,
    pub lambda: f64,
    pub acc_val: f64,
    pub sens_val: f64,
    pub spec_val: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistillHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose student parameters were kept.
    pub chosen_epoch: usize,
}

/// Result of one teacher evaluation with gradients.
pub struct TeacherPass {
    pub loss: f64,
    pub logits: Tensor,
    /// `∂L_cls/∂A_t` at the first attention layer, `[B·P², H, N, N]`.
    pub attention_grad: Tensor,
}

fn teacher_pass(teacher: &Teacher, x: &Tensor, labels: &[u8]) -> Result<(TeacherPass, Graph, Gradients)> {
    let mut g = Graph::new();
    let xv = g.input(x.clone())?;
    let tr = teacher.forward(&mut g, xv, Mode::Train)?;
    let loss = cross_entropy(&mut g, tr.logits, labels)?;
    let grads = g.backward(loss)?;
    let attention_grad = grads.wrt(&g, tr.block.attention);
    let pass = TeacherPass { loss: g.value(loss).item(), logits: g.value(tr.logits).clone(), attention_grad };
    Ok((pass, g, grads))
}

/// Gradient of the teacher's classification loss with respect to its
/// attention weights. Leaves the teacher untouched.
pub fn teacher_attention_grad(teacher: &Teacher, x: &Tensor, labels: &[u8]) -> Result<Tensor> {
    Ok(teacher_pass(teacher, x, labels)?.0.attention_grad)
}

/// Mean over the head axis: `[S, H, N, N] -> [S, N, N]`.
pub fn mean_over_heads(grad: &Tensor) -> Result<Tensor> {
    let s = grad.shape();
    if s.len() != 4 {
        return Err(Error::Shape { op: "mean_over_heads", detail: format!("{s:?}") });
    }
    let (seqs, heads, plane) = (s[0], s[1], s[2] * s[3]);
    let mut out = vec![0.0; seqs * plane];
    for (q, chunk) in grad.data().chunks(plane).enumerate() {
        let dst = &mut out[(q / heads) * plane..(q / heads + 1) * plane];
        for (d, v) in dst.iter_mut().zip(chunk) {
            *d += v / heads as f64;
        }
    }
    Tensor::new(&[seqs, s[2], s[3]], out)
}

pub struct DistillSystem {
    pub cfg: DistillCfg,
    pub teacher: Option<Teacher>,
    pub store: ParamStore,
    pub student: Student,
    pub phi: PhiEmbed,
    teacher_opt: Adam,
    student_opt: Adam,
    ema: EmaBank,
    rng: LabRng,
    step: usize,
}

impl DistillSystem {
    pub fn new(cfg: DistillCfg) -> Result<Self> {
        cfg.validate()?;
        let root = LabRng::new(cfg.seed);
        let teacher = Teacher::new(cfg.teacher, &mut root.fork(1))?;
        let mut store = ParamStore::new();
        let student = Student::new(&mut store, cfg.student, cfg.variant, cfg.sparsity, &mut root.fork(2))?;
        let phi = PhiEmbed::new(&mut store, "phi", &mut root.fork(3));
        let adam = AdamConfig { lr: cfg.lr, ..AdamConfig::default() };
        let teacher_ids = teacher.store.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect();
        let teacher_opt = Adam::new(&teacher.store, teacher_ids, adam);
        let student_ids = store.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect();
        let student_opt = Adam::new(&store, student_ids, adam);
        Ok(Self {
            cfg,
            teacher: Some(teacher),
            store,
            student,
            phi,
            teacher_opt,
            student_opt,
            ema: EmaBank::new(cfg.alpha_ema)?,
            rng: root.fork(4),
            step: 0,
        })
    }

    /// Removes the teacher; the student keeps working on its own.
    pub fn drop_teacher(&mut self) -> Option<Teacher> {
        self.teacher.take()
    }

    /// Positive-class scores from the student alone.
    pub fn predict(&self, images: &ImageSet, exec: Execution) -> Result<Vec<f64>> {
        let all: Vec<usize> = (0..images.len()).collect();
        self.student.predict(&self.store, &images.batch(&all), self.cfg.batch, exec)
    }

    /// Re-estimates the student's batch-norm running statistics as the mean of
    /// batch statistics over `data` with the current weights.
    pub fn recalibrate_bn(&mut self, data: &ImageSet) -> Result<()> {
        let idx: Vec<usize> = (0..data.len()).collect();
        let mut passes = Vec::with_capacity(idx.len().div_ceil(self.cfg.batch));
        for chunk in idx.chunks(self.cfg.batch) {
            let mut g = Graph::new();
            let xv = g.input(data.batch(chunk))?;
            self.student.forward(&mut g, &self.store, xv, Mode::Train, true)?;
            passes.push(g.take_bn_updates());
        }
        self.store.set_bn_stats(&passes);
        Ok(())
    }

    fn evaluate(&self, val: &ImageSet) -> Result<(f64, f64, f64)> {
        let scores = self.predict(val, Execution::default())?;
        let c = confusion_metrics(&PredictionSet::new(scores, val.labels.clone())?)?;
        Ok((c.accuracy, c.sensitivity.unwrap_or(0.0), c.specificity.unwrap_or(0.0)))
    }

    /// Trains for `epochs` passes over `train`; λ(t) runs from 1 to 0 across
    /// this call. The student parameters finally kept are those of the epoch
    /// chosen by the dual-threshold rule on `val`.
    pub fn train(&mut self, train: &ImageSet, val: &ImageSet, epochs: usize) -> Result<DistillHistory> {
        self.train_with(train, val, epochs, |_, _| Ok(()))
    }

    /// As [`train`](Self::train), calling `on_epoch` with each epoch's record
    /// and parameters before the next epoch starts.
    pub fn train_with<F>(&mut self, train: &ImageSet, val: &ImageSet, epochs: usize, mut on_epoch: F) -> Result<DistillHistory>
    where
        F: FnMut(&EpochRecord, &ParamStore) -> Result<()>,
    {
        if train.is_empty() || val.is_empty() {
            return Err(Error::Data("training and validation sets must be non-empty".into()));
        }
        if train.side != self.cfg.student.side {
            return Err(Error::Data(format!("images have side {}, network expects {}", train.side, self.cfg.student.side)));
        }
        let per_epoch = train.len().div_ceil(self.cfg.batch);
        let total_steps = (epochs * per_epoch).max(1) as f64;
        let start_step = self.step;
        let mut records = Vec::with_capacity(epochs);
        let mut snapshots = Vec::with_capacity(epochs);
        for epoch in 1..=epochs {
            let mut order: Vec<usize> = (0..train.len()).collect();
            self.rng.shuffle(&mut order);
            let mut sums = [0.0; 3];
            let mut lambda = 0.0;
            for chunk in order.chunks(self.cfg.batch) {
                let t = (self.step - start_step) as f64;
                lambda = self.cfg.schedule.weight(t, total_steps)?;
                let parts = self.train_step(train, chunk, lambda)?;
                for (s, p) in sums.iter_mut().zip(parts) {
                    *s += p;
                }
                self.step += 1;
            }
            self.recalibrate_bn(train)?;
            let (acc_val, sens_val, spec_val) = self.evaluate(val)?;
            let n = per_epoch as f64;
            let rec = EpochRecord {
                epoch,
                step: self.step,
                cls: sums[0] / n,
                distill: sums[1] / n,
                grad_sim: sums[2] / n,
                lambda,
                acc_val,
                sens_val,
                spec_val,
            };
            log::info!(
                "lsnet epoch {epoch}: cls {:.4} distill {:.4} gradsim {:.4} lambda {:.3} acc_val {:.3}",
                rec.cls,
                rec.distill,
                rec.grad_sim,
                rec.lambda,
                rec.acc_val
            );
            on_epoch(&rec, &self.store)?;
            records.push(rec);
            snapshots.push(self.store.clone());
        }
        let chosen_epoch = if records.is_empty() {
            0
        } else {
            let cands: Vec<Candidate> = records
                .iter()
                .map(|r| Candidate { epoch: r.epoch, sensitivity: r.sens_val, specificity: r.spec_val })
                .collect();
            let chosen = checkpoint_select(&cands)?;
            self.store = snapshots.swap_remove(chosen - 1);
            chosen
        };
        Ok(DistillHistory { epochs: records, chosen_epoch })
    }

    /// One optimisation step of both networks; returns (cls, distill, grad-sim).
    fn train_step(&mut self, data: &ImageSet, idx: &[usize], lambda: f64) -> Result<[f64; 3]> {
        let x = data.batch(idx);
        let labels: Vec<u8> = idx.iter().map(|&i| data.labels[i]).collect();
        let batch = idx.len();

        let teacher = self.teacher.as_mut().ok_or_else(|| Error::Config("training needs the teacher".into()))?;
        teacher.store.zero_grad();
        let (pass, mut tg, grads) = teacher_pass(teacher, &x, &labels)?;
        grads.accumulate_into(&tg, &mut teacher.store);
        let bn = tg.take_bn_updates();
        self.teacher_opt.step(&mut teacher.store)?;
        teacher.store.apply_bn_updates(&bn);

        // Per-sample teacher gradients, head-averaged and EMA-smoothed.
        let head_mean = mean_over_heads(&pass.attention_grad)?;
        let per_sample = head_mean.numel() / batch;
        let mut target = Vec::with_capacity(head_mean.numel());
        for (b, &i) in idx.iter().enumerate() {
            let raw: Vec<f64> = head_mean.data()[b * per_sample..(b + 1) * per_sample].iter().map(|v| v * batch as f64).collect();
            target.extend_from_slice(self.ema.update(i, &raw)?);
        }
        let target = Tensor::new(head_mean.shape(), target)?;

        self.store.zero_grad();
        let mut g = Graph::new();
        let (total, [cls, distill, gsim]) = self.student_objective(&mut g, x, &labels, &pass.logits, &target, lambda)?;
        let grads = g.backward(total)?;
        grads.accumulate_into(&g, &mut self.store);
        self.student_opt.step(&mut self.store)?;
        let bn = g.take_bn_updates();
        self.store.apply_bn_updates(&bn);
        Ok([g.value(cls).item(), g.value(distill).item(), g.value(gsim).item()])
    }

    /// `L_cls + w·L_distill + λ·L_grad-sim` on one batch; returns the total
    /// and the three unweighted terms.
    pub fn student_objective(
        &self,
        g: &mut Graph,
        x: Tensor,
        labels: &[u8],
        teacher_logits: &Tensor,
        target: &Tensor,
        lambda: f64,
    ) -> Result<(Var, [Var; 3])> {
        let xv = g.input(x)?;
        let tr = self.student.forward(g, &self.store, xv, Mode::Train, true)?;
        let cls = cross_entropy(g, tr.logits, labels)?;
        let distill = distill_kl(g, tr.logits, teacher_logits, self.cfg.temperature)?;
        let sim = tr.sim.expect("simulator output requested");
        let gsim = grad_sim_loss(g, &self.store, &self.phi, sim, target)?;
        let wd = g.scale(distill, self.cfg.distill_weight)?;
        let ws = g.scale(gsim, lambda)?;
        let total = g.add(cls, wd)?;
        let total = g.add(total, ws)?;
        Ok((total, [cls, distill, gsim]))
    }

    /// Summed `|∂L/∂θ|` over the simulator's trainable weights for the full
    /// objective at grad-sim weight `lambda`.
    pub fn simulator_grad_mass(&self, data: &ImageSet, idx: &[usize], lambda: f64) -> Result<f64> {
        let teacher = self.teacher.as_ref().ok_or_else(|| Error::Config("needs the teacher".into()))?;
        let x = data.batch(idx);
        let labels: Vec<u8> = idx.iter().map(|&i| data.labels[i]).collect();
        let (pass, _, _) = teacher_pass(teacher, &x, &labels)?;
        let target = mean_over_heads(&pass.attention_grad)?;
        let mut g = Graph::new();
        let (total, _) = self.student_objective(&mut g, x, &labels, &pass.logits, &target, lambda)?;
        let grads = g.backward(total)?;
        Ok(self
            .store
            .trainable_with_prefix("sim.")
            .into_iter()
            .filter_map(|id| g.param_var(id))
            .map(|v| grads.wrt(&g, v).data().iter().map(|x| x.abs()).sum::<f64>())
            .sum())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{gen_dataset, Modality, Split};

    fn sets() -> (ImageSet, ImageSet) {
        let plan = gen_dataset(10, 6, 16).unwrap();
        let render = |s| ImageSet::render(&plan.split(s), 16, Modality::Us, Execution::Sequential).unwrap();
        (render(Split::Train), render(Split::Val))
    }

    fn cfg(seed: u64) -> DistillCfg {
        DistillCfg { batch: 4, ..DistillCfg::new(16, seed) }
    }

    fn trainable(store: &ParamStore) -> Vec<Tensor> {
        store.iter().filter(|(_, p)| p.trainable).map(|(_, p)| p.value.clone()).collect()
    }

    #[test]
    fn same_seed_gives_identical_runs() {
        let (train, val) = sets();
        let run = || {
            let mut sys = DistillSystem::new(cfg(2)).unwrap();
            let h = sys.train(&train, &val, 2).unwrap();
            (h, trainable(&sys.store))
        };
        let (a, b) = (run(), run());
        assert!(a == b);
        assert_eq!(a.0.epochs.len(), 2);
        assert!((1..=2).contains(&a.0.chosen_epoch));
    }

    #[test]
    fn dropping_the_teacher_changes_no_output_bit() {
        let (train, val) = sets();
        let mut sys = DistillSystem::new(cfg(3)).unwrap();
        sys.train(&train, &val, 1).unwrap();
        let before = sys.predict(&val, Execution::Sequential).unwrap();
        assert!(sys.drop_teacher().is_some());
        let after = sys.predict(&val, Execution::Sequential).unwrap();
        assert_eq!(before.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), after.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert!(sys.train(&train, &val, 1).is_err());
    }

    #[test]
    fn zero_lambda_cuts_the_simulator_path() {
        let (train, _) = sets();
        let sys = DistillSystem::new(cfg(4)).unwrap();
        assert_eq!(sys.simulator_grad_mass(&train, &[0, 1, 2], 0.0).unwrap(), 0.0);
        assert!(sys.simulator_grad_mass(&train, &[0, 1, 2], 1.0).unwrap() > 0.0);
    }

    #[test]
    fn frozen_optimiser_keeps_weights() {
        let (train, val) = sets();
        let mut sys = DistillSystem::new(DistillCfg { lr: 0.0, ..cfg(5) }).unwrap();
        let before = trainable(&sys.store);
        let h = sys.train(&train, &val, 1).unwrap();
        assert!(trainable(&sys.store) == before);
        let r = h.epochs[0];
        assert!(r.cls.is_finite() && r.distill >= 0.0 && r.grad_sim >= 0.0);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let c = cfg(1);
        assert!(DistillCfg { student: c.teacher, ..c }.validate().is_err());
        assert!(DistillCfg { batch: 0, ..c }.validate().is_err());
        assert!(DistillCfg { alpha_ema: 1.0, ..c }.validate().is_err());
        assert!(DistillCfg { distill_weight: -1.0, ..c }.validate().is_err());
        assert!(c.validate().is_ok());
    }

    #[test]
    fn head_mean_averages_the_second_axis() {
        let g = Tensor::new(&[1, 2, 1, 2], vec![1.0, 2.0, 3.0, 6.0]).unwrap();
        let m = mean_over_heads(&g).unwrap();
        assert_eq!(m.shape(), &[1, 1, 2]);
        assert_eq!(m.data(), &[2.0, 4.0]);
    }
}
