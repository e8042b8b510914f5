//! Central-difference probes of the composed training objectives at toy
//! shapes, built from the same layers and losses the trainers use.

use crate::cyclegan::{
    adv_loss, cycle_loss, domain_loss, generator_adv_term, identity_loss, maf_loss, ClampCounter, GenAdversarial,
    LossWeights,
};
use crate::distill::{cross_entropy, distill_kl, grad_sim_loss, NetCfg, PhiEmbed, SparsityCfg, Student};
use crate::error::Result;
use crate::nn::{AttentionVariant, DomainClassifier, Grl, Mafe, Mapper, Mode, PatchDiscriminator, TranslatorCfg};
use crate::rng::LabRng;
use crate::tensor::{finite_diff_check, Graph, ParamId, ParamStore, Tensor};

/// Small enough that a perturbation rarely straddles a ReLU or L1 kink.
pub const COMPOSED_EPS: f64 = 1e-7;

/// Scales trainable weight matrices so activations are not all near zero;
/// normalisation scales and shifts stay at init. Returns every trainable id.
fn inflate(store: &mut ParamStore, factor: f64) -> Vec<ParamId> {
    let ids: Vec<ParamId> = store.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect();
    for &id in &ids {
        if store.get(id).name.ends_with(".w") {
            store.get_mut(id).value.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
    }
    ids
}

struct Translator {
    store: ParamStore,
    mafe: Mafe,
    g: Mapper,
    f: Mapper,
    dx: PatchDiscriminator,
    dy: PatchDiscriminator,
    cls: DomainClassifier,
}

fn translator(seed: u64) -> Translator {
    let cfg = TranslatorCfg { image_channels: 1, base: 2, feature: 2, private_blocks: 1 };
    let mut rng = LabRng::new(seed);
    let mut store = ParamStore::new();
    let mafe = Mafe::new(&mut store, &cfg, &mut rng);
    let g = Mapper::new(&mut store, "g", &cfg, &mut rng);
    let f = Mapper::new(&mut store, "f", &cfg, &mut rng);
    let dx = PatchDiscriminator::new(&mut store, "dx", &cfg, &mut rng);
    let dy = PatchDiscriminator::new(&mut store, "dy", &cfg, &mut rng);
    let cls = DomainClassifier::new(&mut store, 2 * 4 * 4, &mut rng);
    Translator { store, mafe, g, f, dx, dy, cls }
}

/// Worst relative errors of the generator, discriminator and domain
/// objectives of a toy translator.
pub fn translation_probe(seed: u64) -> Result<[f64; 3]> {
    let weights = LossWeights::default().coefficients();
    let mut t = translator(seed);
    let ids = inflate(&mut t.store, 20.0);
    let mut rng = LabRng::new(1000 + seed);
    let x = Tensor::uniform(&[1, 1, 16, 16], 0.0, 1.0, &mut rng);
    let y = Tensor::uniform(&[1, 1, 16, 16], 0.0, 1.0, &mut rng);
    let (mafe, g, f, dx, dy, cls) = (&t.mafe, &t.g, &t.f, &t.dx, &t.dy, &t.cls);

    let generator = |gr: &mut Graph, st: &ParamStore| {
        let mut clamps = ClampCounter::default();
        let xv = gr.input(x.clone())?;
        let yv = gr.input(y.clone())?;
        let ex = mafe.forward(gr, st, xv)?;
        let ey = mafe.forward(gr, st, yv)?;
        let gx = g.forward(gr, st, ex)?;
        let fy = f.forward(gr, st, ey)?;
        let egx = mafe.forward(gr, st, gx)?;
        let efy = mafe.forward(gr, st, fy)?;
        let fgx = f.forward(gr, st, egx)?;
        let gfy = g.forward(gr, st, efy)?;
        let dyf = dy.forward(gr, st, gx)?;
        let dxf = dx.forward(gr, st, fy)?;
        let pg = generator_adv_term(gr, dyf, GenAdversarial::NonSaturating, &mut clamps)?;
        let pf = generator_adv_term(gr, dxf, GenAdversarial::Minimax, &mut clamps)?;
        let cyc = cycle_loss(gr, xv, fgx, yv, gfy)?;
        let efgx = mafe.forward(gr, st, fgx)?;
        let gfu = g.forward(gr, st, efgx)?;
        let egfu = mafe.forward(gr, st, gfu)?;
        let maf = maf_loss(gr, efgx, ex, egfu, egx)?;
        let gy = g.forward(gr, st, ey)?;
        let fx = f.forward(gr, st, ex)?;
        let id = identity_loss(gr, yv, gy, xv, fx)?;
        let mut total = gr.add(pg, pf)?;
        for (term, w) in [(cyc, weights[2]), (maf, weights[3]), (id, weights[5])] {
            let s = gr.scale(term, w)?;
            total = gr.add(total, s)?;
        }
        Ok(total)
    };
    let generator_err = finite_diff_check(&mut t.store, &ids, COMPOSED_EPS, generator)?;

    let discriminator = |gr: &mut Graph, st: &ParamStore| {
        let mut clamps = ClampCounter::default();
        let xv = gr.input(x.clone())?;
        let yv = gr.input(y.clone())?;
        let ex = mafe.forward(gr, st, xv)?;
        let fake = g.forward(gr, st, ex)?;
        let fake = gr.detach(fake)?;
        let real = dy.forward(gr, st, yv)?;
        let fake = dy.forward(gr, st, fake)?;
        let v = adv_loss(gr, real, fake, &mut clamps)?;
        gr.neg(v)
    };
    // Fakes are detached, so only discriminator weights carry gradient.
    let disc: Vec<ParamId> = ["dx.", "dy."].iter().flat_map(|p| t.store.trainable_with_prefix(p)).collect();
    let discriminator_err = finite_diff_check(&mut t.store, &disc, COMPOSED_EPS, discriminator)?;

    // Reversals of weight w and 1/w compose to the true gradient.
    let mut grl = Grl::new(5.0);
    grl.set_progress(1.0)?;
    let domain = |gr: &mut Graph, st: &ParamStore| {
        let mut clamps = ClampCounter::default();
        let xv = gr.input(x.clone())?;
        let yv = gr.input(y.clone())?;
        let ex = mafe.forward(gr, st, xv)?;
        let ey = mafe.forward(gr, st, yv)?;
        let w = grl.weight;
        let ex = gr.grl(ex, 1.0 / w)?;
        let ey = gr.grl(ey, 1.0 / w)?;
        let px = cls.forward(gr, st, ex, &grl)?;
        let py = cls.forward(gr, st, ey, &grl)?;
        domain_loss(gr, px, py, &mut clamps)
    };
    let domain_err = finite_diff_check(&mut t.store, &ids, COMPOSED_EPS, domain)?;
    Ok([generator_err, discriminator_err, domain_err])
}

/// Worst relative error of `cls + KL + 0.5·grad-sim` for a toy student.
pub fn screening_probe(seed: u64, variant: AttentionVariant) -> Result<f64> {
    let cfg = NetCfg { side: 8, image_channels: 1, channels: 2, hidden: 4, heads: 2, patch: 2, mlp_ratio: 1, classes: 2 };
    let mut rng = LabRng::new(seed);
    let mut store = ParamStore::new();
    let student = Student::new(&mut store, cfg, variant, SparsityCfg::default(), &mut rng)?;
    let phi = PhiEmbed::new(&mut store, "phi", &mut rng);
    let ids = inflate(&mut store, 20.0);
    let x = Tensor::uniform(&[2, 1, 8, 8], 0.0, 1.0, &mut rng);
    let teacher = Tensor::uniform(&[2, 2], -1.0, 1.0, &mut rng);
    let n = cfg.tokens();
    let target = Tensor::uniform(&[2 * cfg.patch * cfg.patch, n, n], -1e-2, 1e-2, &mut rng);
    let labels = [0u8, 1];
    let objective = |g: &mut Graph, st: &ParamStore| {
        let xv = g.input(x.clone())?;
        let tr = student.forward(g, st, xv, Mode::Train, true)?;
        let cls = cross_entropy(g, tr.logits, &labels)?;
        let kl = distill_kl(g, tr.logits, &teacher, 2.0)?;
        let gs = grad_sim_loss(g, st, &phi, tr.sim.expect("simulator output"), &target)?;
        let gs = g.scale(gs, 0.5)?;
        let total = g.add(cls, kl)?;
        g.add(total, gs)
    };
    finite_diff_check(&mut store, &ids, COMPOSED_EPS, objective)
}
