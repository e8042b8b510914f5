//! Three-step alternating training of the translation system.

use super::losses::{
    adv_loss, cycle_loss, domain_loss, generator_adv_term, identity_loss, maf_loss, total_generator_loss, ClampCounter,
    Components, GenAdversarial, LossWeights,
};
use crate::error::{Error, Result};
use crate::nn::{DomainClassifier, Grl, Mafe, Mapper, PatchDiscriminator, TranslatorCfg, DEFAULT_GRL_GAMMA};
use crate::par::{try_map_range, Execution};
use crate::phantom::{structure_fidelity, ImageSet};
use crate::rng::LabRng;
use crate::tensor::{Adam, AdamConfig, Graph, ParamStore, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GanCfg {
    pub side: usize,
    pub net: TranslatorCfg,
    pub weights: LossWeights,
    pub gen_adversarial: GenAdversarial,
    pub grl_gamma: f64,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl GanCfg {
    pub fn new(side: usize, seed: u64) -> Self {
        Self {
            side,
            net: TranslatorCfg::default(),
            weights: LossWeights::default(),
            gen_adversarial: GenAdversarial::default(),
            grl_gamma: DEFAULT_GRL_GAMMA,
            batch: 8,
            lr: AdamConfig::default().lr,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.side < 8 || !self.side.is_multiple_of(8) {
            return Err(Error::Config(format!("side must be a positive multiple of 8, got {}", self.side)));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch must be >= 1".into()));
        }
        if !(self.grl_gamma > 0.0) {
            return Err(Error::Config(format!("grl_gamma must be > 0, got {}", self.grl_gamma)));
        }
        if !(self.lr >= 0.0) {
            return Err(Error::Config(format!("lr must be >= 0, got {}", self.lr)));
        }
        self.weights.validate()
    }
}

/// Per-epoch means of every component and of the weighted total.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GanEpoch {
    pub epoch: usize,
    pub losses: Components,
    pub total: f64,
}

pub const GAN_HISTORY_HEADER: [&str; 8] = ["epoch", "adv_g", "adv_f", "cyc", "maf", "dom", "id", "total"];

impl GanEpoch {
    pub fn csv_row(&self) -> Vec<String> {
        let mut row = vec![self.epoch.to_string()];
        row.extend(self.losses.as_array().iter().map(|v| format!("{v:.9e}")));
        row.push(format!("{:.9e}", self.total));
        row
    }
}

struct Optimisers {
    disc: Adam,
    gen: Adam,
    cls: Adam,
    /// Separate moments for the encoder's reversed-gradient update.
    mafe_rev: Adam,
}

pub struct TranslationSystem {
    pub cfg: GanCfg,
    pub store: ParamStore,
    pub mafe: Mafe,
    pub g: Mapper,
    pub f: Mapper,
    pub dx: PatchDiscriminator,
    pub dy: PatchDiscriminator,
    pub cls: DomainClassifier,
    pub grl: Grl,
    pub clamps: ClampCounter,
    opt: Optimisers,
    rng: LabRng,
}

fn ids_with(store: &ParamStore, prefixes: &[&str]) -> Vec<crate::tensor::ParamId> {
    prefixes.iter().flat_map(|p| store.trainable_with_prefix(p)).collect()
}

impl TranslationSystem {
    pub fn new(cfg: GanCfg) -> Result<Self> {
        cfg.validate()?;
        let root = LabRng::new(cfg.seed);
        let mut rng = root.fork(1);
        let mut store = ParamStore::new();
        let net = cfg.net;
        let mafe = Mafe::new(&mut store, &net, &mut rng);
        let g = Mapper::new(&mut store, "g", &net, &mut rng);
        let f = Mapper::new(&mut store, "f", &net, &mut rng);
        let dx = PatchDiscriminator::new(&mut store, "dx", &net, &mut rng);
        let dy = PatchDiscriminator::new(&mut store, "dy", &net, &mut rng);
        let fs = cfg.side / 4;
        let cls = DomainClassifier::new(&mut store, net.feature * fs * fs, &mut rng);
        let adam = AdamConfig { lr: cfg.lr, ..AdamConfig::default() };
        let opt = Optimisers {
            disc: Adam::new(&store, ids_with(&store, &["dx.", "dy."]), adam),
            gen: Adam::new(&store, ids_with(&store, &["mafe.", "g.", "f."]), adam),
            cls: Adam::new(&store, ids_with(&store, &["cls."]), adam),
            mafe_rev: Adam::new(&store, ids_with(&store, &["mafe."]), adam),
        };
        Ok(Self {
            cfg,
            store,
            mafe,
            g,
            f,
            dx,
            dy,
            cls,
            grl: Grl::new(cfg.grl_gamma),
            clamps: ClampCounter::default(),
            opt,
            rng: root.fork(2),
        })
    }

    /// `G(x)`: domain X to domain Y.
    pub fn forward_g(&self, graph: &mut Graph, x: Var) -> Result<Var> {
        let e = self.mafe.forward(graph, &self.store, x)?;
        self.g.forward(graph, &self.store, e)
    }

    /// `F(y)`: domain Y to domain X.
    pub fn forward_f(&self, graph: &mut Graph, y: Var) -> Result<Var> {
        let e = self.mafe.forward(graph, &self.store, y)?;
        self.f.forward(graph, &self.store, e)
    }

    /// Translates a batch `[B, 1, s, s]` from X to Y in chunks.
    pub fn translate(&self, images: &Tensor, exec: Execution) -> Result<Tensor> {
        let n = images.shape()[0];
        let chunk = self.cfg.batch;
        let parts = try_map_range(exec, n.div_ceil(chunk), |c| {
            let rows: Vec<usize> = (c * chunk..((c + 1) * chunk).min(n)).collect();
            let mut graph = Graph::new();
            let x = graph.input(images.select_rows(&rows)?)?;
            let y = self.forward_g(&mut graph, x)?;
            Ok(graph.value(y).clone())
        })?;
        Tensor::stack_rows(&parts)
    }

    /// Mean structure-fidelity Dice of `G(x)` against each source phantom's band.
    pub fn fidelity(&self, source: &ImageSet, exec: Execution) -> Result<f64> {
        let all: Vec<usize> = (0..source.len()).collect();
        let out = self.translate(&source.batch(&all), exec)?;
        let plane = source.side * source.side;
        let scores = try_map_range(exec, source.len(), |i| {
            structure_fidelity(&out.data()[i * plane..(i + 1) * plane], source.mask(i))
        })?;
        Ok(scores.iter().sum::<f64>() / scores.len() as f64)
    }

    /// Runs `epochs` passes; the GRL weight follows `p = (epoch - 1) / epochs`.
    pub fn train(&mut self, xs: &ImageSet, ys: &ImageSet, epochs: usize) -> Result<Vec<GanEpoch>> {
        self.train_with(xs, ys, epochs, |_, _| Ok(()))
    }

    /// As [`train`](Self::train), handing each finished epoch and the current
    /// parameters to `on_epoch`.
    pub fn train_with<F>(&mut self, xs: &ImageSet, ys: &ImageSet, epochs: usize, mut on_epoch: F) -> Result<Vec<GanEpoch>>
    where
        F: FnMut(&GanEpoch, &ParamStore) -> Result<()>,
    {
        if xs.is_empty() || ys.is_empty() {
            return Err(Error::Data("both domains need at least one image".into()));
        }
        if xs.side != self.cfg.side || ys.side != self.cfg.side {
            return Err(Error::Data(format!("images must have side {}", self.cfg.side)));
        }
        let b = self.cfg.batch;
        let steps = xs.len().max(ys.len()).div_ceil(b);
        let mut history = Vec::with_capacity(epochs);
        for epoch in 1..=epochs {
            self.grl.set_progress((epoch - 1) as f64 / epochs as f64)?;
            let mut ox: Vec<usize> = (0..xs.len()).collect();
            let mut oy: Vec<usize> = (0..ys.len()).collect();
            self.rng.shuffle(&mut ox);
            self.rng.shuffle(&mut oy);
            let mut sums = [0.0; 6];
            for s in 0..steps {
                let ix: Vec<usize> = (s * b..(s + 1) * b).map(|k| ox[k % ox.len()]).collect();
                let iy: Vec<usize> = (s * b..(s + 1) * b).map(|k| oy[k % oy.len()]).collect();
                let c = self.step(&xs.batch(&ix), &ys.batch(&iy))?;
                for (acc, v) in sums.iter_mut().zip(c.as_array()) {
                    *acc += v;
                }
            }
            let losses = Components::from_array(sums.map(|v| v / steps as f64));
            let total = total_generator_loss(&losses, &self.cfg.weights);
            if !total.is_finite() {
                return Err(Error::NonFinite(format!("loss at epoch {epoch}")));
            }
            log::info!("gan epoch {epoch}: cyc {:.4} maf {:.4} dom {:.4} total {:.4}", losses.cyc, losses.maf, losses.dom, total);
            let rec = GanEpoch { epoch, losses, total };
            on_epoch(&rec, &self.store)?;
            history.push(rec);
        }
        Ok(history)
    }

    /// One iteration of the three update steps on a shared minibatch.
    pub fn step(&mut self, x: &Tensor, y: &Tensor) -> Result<Components> {
        self.discriminator_step(x, y)?;
        let c = self.generator_step(x, y)?;
        let dom = self.domain_step(x, y)?;
        Ok(Components { dom, ..c })
    }

    fn discriminator_step(&mut self, x: &Tensor, y: &Tensor) -> Result<()> {
        self.store.zero_grad();
        let mut graph = Graph::new();
        let xv = graph.input(x.clone())?;
        let yv = graph.input(y.clone())?;
        let fake_y = self.forward_g(&mut graph, xv)?;
        let fake_y = graph.detach(fake_y)?;
        let fake_x = self.forward_f(&mut graph, yv)?;
        let fake_x = graph.detach(fake_x)?;
        let dy_real = self.dy.forward(&mut graph, &self.store, yv)?;
        let dy_fake = self.dy.forward(&mut graph, &self.store, fake_y)?;
        let dx_real = self.dx.forward(&mut graph, &self.store, xv)?;
        let dx_fake = self.dx.forward(&mut graph, &self.store, fake_x)?;
        let ly = adv_loss(&mut graph, dy_real, dy_fake, &mut self.clamps)?;
        let lx = adv_loss(&mut graph, dx_real, dx_fake, &mut self.clamps)?;
        let value = graph.add(ly, lx)?;
        // ascend the value function
        let loss = graph.neg(value)?;
        let grads = graph.backward(loss)?;
        grads.accumulate_into(&graph, &mut self.store);
        self.opt.disc.step(&mut self.store)
    }

    fn generator_step(&mut self, x: &Tensor, y: &Tensor) -> Result<Components> {
        self.store.zero_grad();
        let st = &self.store;
        let mut graph = Graph::new();
        let gr = &mut graph;
        let xv = gr.input(x.clone())?;
        let yv = gr.input(y.clone())?;
        let e_x = self.mafe.forward(gr, st, xv)?;
        let e_y = self.mafe.forward(gr, st, yv)?;
        let gx = self.g.forward(gr, st, e_x)?;
        let fy = self.f.forward(gr, st, e_y)?;
        let e_gx = self.mafe.forward(gr, st, gx)?;
        let e_fy = self.mafe.forward(gr, st, fy)?;
        let fgx = self.f.forward(gr, st, e_gx)?;
        let gfy = self.g.forward(gr, st, e_fy)?;

        let dy_real = self.dy.forward(gr, st, yv)?;
        let dy_fake = self.dy.forward(gr, st, gx)?;
        let dx_real = self.dx.forward(gr, st, xv)?;
        let dx_fake = self.dx.forward(gr, st, fy)?;
        let adv_g = adv_loss(gr, dy_real, dy_fake, &mut self.clamps)?;
        let adv_f = adv_loss(gr, dx_real, dx_fake, &mut self.clamps)?;
        let form = self.cfg.gen_adversarial;
        let push_g = generator_adv_term(gr, dy_fake, form, &mut self.clamps)?;
        let push_f = generator_adv_term(gr, dx_fake, form, &mut self.clamps)?;

        let cyc = cycle_loss(gr, xv, fgx, yv, gfy)?;
        // û = G(x) from this batch, so F(û) = F(G(x))
        let e_fgx = self.mafe.forward(gr, st, fgx)?;
        let gfu = self.g.forward(gr, st, e_fgx)?;
        let e_gfu = self.mafe.forward(gr, st, gfu)?;
        let maf = maf_loss(gr, e_fgx, e_x, e_gfu, e_gx)?;

        let idy = self.mafe.forward(gr, st, yv)?;
        let gy = self.g.forward(gr, st, idy)?;
        let idx = self.mafe.forward(gr, st, xv)?;
        let fx = self.f.forward(gr, st, idx)?;
        let id = identity_loss(gr, yv, gy, xv, fx)?;

        let k = self.cfg.weights.coefficients();
        let mut total = gr.add(push_g, push_f)?;
        for (term, w) in [(cyc, k[2]), (maf, k[3]), (id, k[5])] {
            let t = gr.scale(term, w)?;
            total = gr.add(total, t)?;
        }
        let grads = gr.backward(total)?;
        grads.accumulate_into(gr, &mut self.store);
        self.opt.gen.step(&mut self.store)?;
        let v = |var| graph.value(var).item();
        Ok(Components { adv_g: v(adv_g), adv_f: v(adv_f), cyc: v(cyc), maf: v(maf), dom: 0.0, id: v(id) })
    }

    /// Classifier descends the domain loss; the encoder receives the
    /// reversed, GRL-weighted gradient. Returns the domain loss.
    fn domain_step(&mut self, x: &Tensor, y: &Tensor) -> Result<f64> {
        self.store.zero_grad();
        let mut graph = Graph::new();
        let xv = graph.input(x.clone())?;
        let yv = graph.input(y.clone())?;
        let fx = self.mafe.forward(&mut graph, &self.store, xv)?;
        let fy = self.mafe.forward(&mut graph, &self.store, yv)?;
        let px = self.cls.forward(&mut graph, &self.store, fx, &self.grl)?;
        let py = self.cls.forward(&mut graph, &self.store, fy, &self.grl)?;
        let loss = domain_loss(&mut graph, px, py, &mut self.clamps)?;
        let grads = graph.backward(loss)?;
        grads.accumulate_into(&graph, &mut self.store);
        self.opt.cls.step(&mut self.store)?;
        self.opt.mafe_rev.step(&mut self.store)?;
        Ok(graph.value(loss).item())
    }
}
