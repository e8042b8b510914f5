//! Property tests for the invariants of every module. The proptest RNG is
//! pinned so runs are reproducible.

use lab_core::cyclegan::{
    adv_loss, cycle_loss, domain_loss, generator_adv_term, identity_loss, maf_loss, total_generator_loss, ClampCounter,
    Components, GenAdversarial, LossWeights, Weighting,
};
use lab_core::distill::{
    ema_smooth, importance_fusion, select_topk, sparse_attention, GradSimulator, KRule, NetCfg, PhiEmbed, SparsityCfg,
    Student,
};
use lab_core::metrics::{
    bootstrap_ci, checkpoint_select, confusion_metrics, roc_auc, screening_indicators, Candidate, Metric, PredictionSet,
    SENSITIVITY_GATE,
};
use lab_core::nn::{AttentionVariant, Mode};
use lab_core::par::Execution;
use lab_core::phantom::{band_is_broken, gen_phantom};
use lab_core::tensor::{Graph, ParamStore, Tensor};
use lab_core::LabRng;
use proptest::prelude::*;
use proptest::test_runner::{Config, RngSeed};

fn config(cases: u32) -> Config {
    Config { cases, rng_seed: RngSeed::Fixed(0x5eed), failure_persistence: None, ..Config::default() }
}

fn uniform(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor {
    Tensor::uniform(shape, lo, hi, &mut LabRng::new(seed))
}

/// Dense softmax over the selected keys only, renormalised: the reference
/// the masked kernel must match.
fn masked_softmax_oracle(q: &[f64], k: &[f64], n: usize, d: usize, keep: &[usize], row: usize) -> Vec<f64> {
    let score = |j: usize| (0..d).map(|t| q[row * d + t] * k[j * d + t]).sum::<f64>();
    let dense: Vec<f64> = (0..n).map(score).collect();
    let max = keep.iter().map(|&j| dense[j]).fold(f64::NEG_INFINITY, f64::max);
    let mut out = vec![0.0; n];
    let z: f64 = keep.iter().map(|&j| (dense[j] - max).exp()).sum();
    for &j in keep {
        out[j] = (dense[j] - max).exp() / z;
    }
    out
}

proptest! {
    #![proptest_config(config(64))]

    #[test]
    fn tensor_length_must_match_shape(dims in prop::collection::vec(1usize..5, 1..4), extra in 1usize..3) {
        let n: usize = dims.iter().product();
        prop_assert!(Tensor::new(&dims, vec![0.0; n]).is_ok());
        prop_assert!(Tensor::new(&dims, vec![0.0; n + extra]).is_err());
    }

    #[test]
    fn softmax_rows_are_positive_and_sum_to_one(
        rows in 1usize..6, width in 1usize..12, temp in 0.1f64..5.0, seed in any::<u64>()
    ) {
        let mut g = Graph::new();
        let x = g.input(uniform(&[rows, width], -30.0, 30.0, seed)).unwrap();
        let y = g.softmax(x, temp).unwrap();
        for row in g.value(y).data().chunks(width) {
            prop_assert!(row.iter().all(|&v| v > 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn fold_inverts_unfold(
        batch in 1usize..3, channels in 1usize..4, gh in 1usize..4, gw in 1usize..4, patch in 1usize..4,
        seed in any::<u64>()
    ) {
        let shape = [batch, channels, gh * patch, gw * patch];
        let x = uniform(&shape, -1.0, 1.0, seed);
        let mut g = Graph::new();
        let xv = g.input(x.clone()).unwrap();
        let (tokens, layout) = g.unfold_patches(xv, patch).unwrap();
        let back = g.fold_patches(tokens, layout, channels).unwrap();
        prop_assert!(g.value(back) == &x);
    }

    #[test]
    fn grl_forward_is_identity_and_backward_reverses(
        n in 1usize..8, weight in 0.0f64..2.0, seed in any::<u64>()
    ) {
        let x = uniform(&[n], -5.0, 5.0, seed);
        let c = uniform(&[n], -1.0, 1.0, seed ^ 1);
        let mut g = Graph::new();
        let xv = g.variable(x.clone()).unwrap();
        let y = g.grl(xv, weight).unwrap();
        prop_assert!(g.value(y) == &x);
        // Linear probe Σ c·y: upstream gradient is c.
        let cv = g.input(c.clone()).unwrap();
        let p = g.mul(y, cv).unwrap();
        let l = g.sum(p).unwrap();
        let grad = g.backward(l).unwrap().wrt(&g, xv);
        for (gx, ci) in grad.data().iter().zip(c.data()) {
            prop_assert!((gx + weight * ci).abs() <= 1e-15);
        }
    }

    #[test]
    fn domain_gradient_on_the_encoder_is_reversed(
        a in -2.0f64..2.0, c in -2.0f64..2.0, weight in 0.01f64..1.0, seed in any::<u64>()
    ) {
        // Linear toy encoder e = a·x feeding a one-weight sigmoid classifier.
        let x = uniform(&[4, 1], 0.0, 1.0, seed);
        let y = uniform(&[4, 1], 0.0, 1.0, seed ^ 7);
        let grad_a = |reverse: Option<f64>| {
            let mut g = Graph::new();
            let av = g.variable(Tensor::scalar(a).reshape(&[1, 1]).unwrap()).unwrap();
            let cv = g.variable(Tensor::scalar(c).reshape(&[1, 1]).unwrap()).unwrap();
            let mut logits = Vec::new();
            for t in [&x, &y] {
                let tv = g.input(t.clone()).unwrap();
                let mut e = g.batch_matmul(tv, av, false).unwrap();
                if let Some(w) = reverse {
                    e = g.grl(e, w).unwrap();
                }
                let z = g.batch_matmul(e, cv, false).unwrap();
                logits.push(g.sigmoid(z).unwrap());
            }
            let l = domain_loss(&mut g, logits[0], logits[1], &mut ClampCounter::default()).unwrap();
            let grads = g.backward(l).unwrap();
            (grads.wrt(&g, av).item(), grads.wrt(&g, cv).item())
        };
        let (plain_a, plain_c) = grad_a(None);
        let (rev_a, rev_c) = grad_a(Some(weight));
        prop_assert_eq!(plain_c, rev_c);
        prop_assert!((rev_a + weight * plain_a).abs() <= 1e-12 * plain_a.abs().max(1.0));
    }

    #[test]
    fn total_loss_is_linear_in_lambda_and_mu(
        parts in prop::array::uniform6(-3.0f64..3.0), l1 in 0.0f64..20.0, l2 in 0.0f64..20.0, mu in 0.0f64..20.0,
        listed in any::<bool>()
    ) {
        let c = Components::from_array(parts);
        let weighting = if listed { Weighting::Listed } else { Weighting::Grouped };
        let t = |lambda: f64, mu: f64| total_generator_loss(&c, &LossWeights { lambda, mu, weighting });
        prop_assert!((t(l1 + l2, mu) + t(0.0, mu) - t(l1, mu) - t(l2, mu)).abs() <= 1e-9);
        prop_assert!((t(l1, 2.0 * mu) + t(l1, 0.0) - 2.0 * t(l1, mu)).abs() <= 1e-9);
        let slope = if listed { parts[2] } else { parts[2] + parts[3] };
        prop_assert!((t(l1 + 1.0, mu) - t(l1, mu) - slope).abs() <= 1e-9);
    }

    #[test]
    fn reconstruction_losses_are_non_negative_and_adversarial_terms_are_not_positive(seed in any::<u64>()) {
        let mut g = Graph::new();
        let mut clamps = ClampCounter::default();
        let mut map = |s: u64| g.input(uniform(&[2, 1, 4, 4], -1.0, 1.0, seed ^ s)).unwrap();
        let (x, fgx, y, gfy, a, b, c, d) = (map(1), map(2), map(3), map(4), map(5), map(6), map(7), map(8));
        let probs = |g: &mut Graph, s: u64| g.input(uniform(&[3, 1], 0.0, 1.0, seed ^ s)).unwrap();
        let (pr, pf, px, py) = (probs(&mut g, 9), probs(&mut g, 10), probs(&mut g, 11), probs(&mut g, 12));
        let losses = [
            cycle_loss(&mut g, x, fgx, y, gfy).unwrap(),
            maf_loss(&mut g, a, b, c, d).unwrap(),
            identity_loss(&mut g, x, fgx, y, gfy).unwrap(),
            domain_loss(&mut g, px, py, &mut clamps).unwrap(),
        ];
        for l in losses {
            prop_assert!(g.value(l).item() >= 0.0);
        }
        let adv = [
            adv_loss(&mut g, pr, pf, &mut clamps).unwrap(),
            generator_adv_term(&mut g, pf, GenAdversarial::Minimax, &mut clamps).unwrap(),
        ];
        for l in adv {
            prop_assert!(g.value(l).item() <= 0.0);
        }
    }
}

proptest! {
    #![proptest_config(config(200))]

    #[test]
    fn sparse_attention_matches_masked_dense_oracle(
        n in 1usize..=32, d in 1usize..5, k in 1usize..40, seed in any::<u64>()
    ) {
        let q = uniform(&[1, n, d], -1.0, 1.0, seed);
        let kk = uniform(&[1, n, d], -1.0, 1.0, seed ^ 1);
        let v = uniform(&[1, n, d], -1.0, 1.0, seed ^ 2);
        let importance = uniform(&[n, n], 0.0, 1.0, seed ^ 3);
        let sets = select_topk(&importance, k).unwrap();
        let mut g = Graph::new();
        let (qv, kv, vv) = (g.input(q.clone()).unwrap(), g.input(kk.clone()).unwrap(), g.input(v.clone()).unwrap());
        let (out, a) = sparse_attention(&mut g, qv, kv, vv, &sets).unwrap();
        let a = g.value(a).data();
        let expect_k = k.min(n);
        for r in 0..n {
            prop_assert_eq!(sets.row(r).len(), expect_k);
            let oracle = masked_softmax_oracle(q.data(), kk.data(), n, d, sets.row(r), r);
            let row = &a[r * n..(r + 1) * n];
            for (x, y) in row.iter().zip(&oracle) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
            prop_assert_eq!(row.iter().filter(|&&x| x != 0.0).count(), expect_k);
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            for t in 0..d {
                let o: f64 = (0..n).map(|j| oracle[j] * v.data()[j * d + t]).sum();
                prop_assert!((g.value(out).data()[r * d + t] - o).abs() <= 1e-12);
            }
        }
    }
}

proptest! {
    #![proptest_config(config(64))]

    #[test]
    fn k_rules_floor_and_clamp(n in 1usize..2000) {
        for (rule, div) in [(KRule::Div10, 10), (KRule::Div25, 25), (KRule::Div50, 50)] {
            let k = rule.resolve(n);
            prop_assert!(k >= 1 && k <= n);
            if n >= div {
                prop_assert_eq!(k, n / div);
            }
        }
        prop_assert_eq!(KRule::Full.resolve(n), n);
    }

    #[test]
    fn fusion_preserves_row_ranking(seed in any::<u64>(), tau in 0.1f64..2.0, alpha in 0.0f64..1.0) {
        let rows = 1000;
        let width = 8;
        let sim = uniform(&[rows, width], -3.0, 3.0, seed);
        let fused = importance_fusion(&sim, tau, alpha).unwrap();
        let k = 3;
        let by_sim = select_topk(&sim, k).unwrap();
        let by_fused = select_topk(&fused, k).unwrap();
        for r in 0..rows {
            let s = &sim.data()[r * width..(r + 1) * width];
            let f = &fused.data()[r * width..(r + 1) * width];
            prop_assert!(f.iter().all(|v| (0.0..=1.0).contains(v)));
            for i in 0..width {
                for j in 0..width {
                    if s[i] > s[j] {
                        prop_assert!(f[i] >= f[j]);
                    }
                }
            }
            prop_assert_eq!(by_sim.row(r), by_fused.row(r));
        }
    }

    #[test]
    fn simulated_gradient_is_symmetric(seqs in 1usize..3, grid in 1usize..4, heads in 1usize..3, seed in any::<u64>()) {
        let dim = heads * 2;
        let mut store = ParamStore::new();
        let sim = GradSimulator::new(&mut store, "sim", dim, heads, &mut LabRng::new(seed)).unwrap();
        let n = grid * grid;
        let mut g = Graph::new();
        let x = g.input(uniform(&[seqs, n, dim], -1.0, 1.0, seed ^ 5)).unwrap();
        let out = sim.forward(&mut g, &store, x, (grid, grid), Mode::Train).unwrap();
        let v = g.value(out);
        prop_assert_eq!(v.shape(), &[seqs, heads, n, n][..]);
        for plane in v.data().chunks(n * n) {
            for i in 0..n {
                for j in 0..n {
                    prop_assert_eq!(plane[i * n + j], plane[j * n + i]);
                }
            }
        }
    }

    #[test]
    fn ema_contracts_geometrically(start in -10.0f64..10.0, target in -10.0f64..10.0, alpha in 0.0f64..0.99) {
        let mut s = vec![start];
        let gap0 = (start - target).abs();
        for t in 1..=20 {
            s = ema_smooth(&s, &[target], alpha).unwrap();
            let expect = alpha.powi(t) * gap0;
            prop_assert!(((s[0] - target).abs() - expect).abs() <= 1e-12 * gap0.max(1.0));
        }
    }

    #[test]
    fn phi_is_continuous(n in 2usize..12, seed in any::<u64>()) {
        let mut store = ParamStore::new();
        let phi = PhiEmbed::new(&mut store, "phi", &mut LabRng::new(seed));
        let base = uniform(&[1, n, n], -1.0, 1.0, seed ^ 1);
        let dir = uniform(&[1, n, n], -1.0, 1.0, seed ^ 2);
        let embed = |t: Tensor| {
            let mut g = Graph::new();
            let v = g.input(t).unwrap();
            let e = phi.forward(&mut g, &store, v).unwrap();
            g.value(e).clone()
        };
        let e0 = embed(base.clone());
        let mut last = f64::INFINITY;
        for scale in [1e-1, 1e-3, 1e-5, 1e-7] {
            let moved = Tensor::new(base.shape(), base.data().iter().zip(dir.data()).map(|(b, d)| b + scale * d).collect()).unwrap();
            let dist = embed(moved).max_abs_diff(&e0);
            prop_assert!(dist <= last);
            last = dist;
        }
        prop_assert!(last <= 1e-5);
    }

    #[test]
    fn auc_ignores_monotone_transforms(
        raw in prop::collection::vec((0u32..=1000, any::<bool>()), 2..80)
    ) {
        let scores: Vec<f64> = raw.iter().map(|(s, _)| *s as f64 / 1000.0).collect();
        let mut labels: Vec<u8> = raw.iter().map(|(_, l)| *l as u8).collect();
        labels[0] = 0;
        labels[1] = 1;
        let auc = roc_auc(&PredictionSet::new(scores.clone(), labels.clone()).unwrap()).unwrap();
        let transforms: [fn(f64) -> f64; 3] = [|s| s * s, f64::sqrt, |s| (3.0 * s).exp_m1() / 3f64.exp_m1()];
        for f in transforms {
            let moved: Vec<f64> = scores.iter().map(|&s| f(s).clamp(0.0, 1.0)).collect();
            let again = roc_auc(&PredictionSet::new(moved, labels.clone()).unwrap()).unwrap();
            prop_assert!((again - auc).abs() <= 1e-15);
        }
    }

    #[test]
    fn confusion_ignores_joint_permutation(
        raw in prop::collection::vec((0.0f64..=1.0, any::<bool>()), 1..100), seed in any::<u64>()
    ) {
        let mut pairs: Vec<(f64, u8)> = raw.iter().map(|(s, l)| (*s, *l as u8)).collect();
        let split = |p: &[(f64, u8)]| PredictionSet::new(p.iter().map(|x| x.0).collect(), p.iter().map(|x| x.1).collect()).unwrap();
        let before = confusion_metrics(&split(&pairs)).unwrap();
        LabRng::new(seed).shuffle(&mut pairs);
        prop_assert_eq!(confusion_metrics(&split(&pairs)).unwrap(), before);
    }

    #[test]
    fn screening_identities(se in 0.0f64..=1.0, sp in 0.0f64..0.999, p in 0.0f64..=1.0, p2 in 0.0f64..=1.0) {
        let s = screening_indicators(se, sp, p).unwrap();
        prop_assert!((s.rate - (p * se + (1.0 - p) * (1.0 - sp))).abs() <= 1e-15);
        if let Some(ppv) = s.ppv {
            prop_assert!((ppv * s.rate - p * se).abs() <= 1e-15);
        }
        prop_assert_eq!(s.lr_plus, screening_indicators(se, sp, p2).unwrap().lr_plus);
        if p * se > 0.0 {
            prop_assert!((s.nns * p * se - 1.0).abs() <= 1e-12);
        } else {
            prop_assert!(s.nns_infinite());
        }
    }

    #[test]
    fn checkpoint_select_follows_the_gate(
        raw in prop::collection::vec((0.8f64..1.0, 0.0f64..1.0), 1..12)
    ) {
        let cands: Vec<Candidate> =
            raw.iter().enumerate().map(|(i, (se, sp))| Candidate { epoch: i + 1, sensitivity: *se, specificity: *sp }).collect();
        let chosen = checkpoint_select(&cands).unwrap();
        let c = cands[chosen - 1];
        let gated: Vec<&Candidate> = cands.iter().filter(|c| c.sensitivity >= SENSITIVITY_GATE).collect();
        if gated.is_empty() {
            prop_assert!(cands.iter().all(|o| o.sensitivity <= c.sensitivity));
        } else {
            prop_assert!(c.sensitivity >= SENSITIVITY_GATE);
            prop_assert!(gated.iter().all(|o| o.specificity <= c.specificity));
        }
    }
}

proptest! {
    #![proptest_config(config(16))]

    #[test]
    fn phantom_pixels_stay_in_range_and_label_follows_topology(seed in 0u64..1_000_000, invasion in any::<bool>()) {
        let ph = gen_phantom(seed, 16, invasion).unwrap();
        prop_assert_eq!(ph.label, invasion as u8);
        prop_assert_eq!(band_is_broken(&ph.mask, 16), invasion);
        for v in ph.mri.iter().chain(&ph.us) {
            prop_assert!(v.is_finite() && (0.0..=1.0).contains(v));
        }
    }

    #[test]
    fn forward_is_referentially_transparent(seed in any::<u64>(), sparse in any::<bool>()) {
        let cfg = NetCfg { side: 16, image_channels: 1, channels: 4, hidden: 8, heads: 2, patch: 2, mlp_ratio: 2, classes: 2 };
        let variant = if sparse { AttentionVariant::Sparse } else { AttentionVariant::Dense };
        let mut store = ParamStore::new();
        let student = Student::new(&mut store, cfg, variant, SparsityCfg::default(), &mut LabRng::new(seed)).unwrap();
        let x = uniform(&[2, 1, 16, 16], 0.0, 1.0, seed ^ 9);
        let run = || {
            let mut g = Graph::new();
            let xv = g.input(x.clone()).unwrap();
            let tr = student.forward(&mut g, &store, xv, Mode::Eval, true).unwrap();
            g.value(tr.logits).clone()
        };
        let first = run();
        prop_assert!(first.data().iter().zip(run().data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}

proptest! {
    #![proptest_config(config(4))]

    #[test]
    fn bootstrap_means_sit_within_three_standard_errors(n in 50usize..200, seed in any::<u64>()) {
        let mut rng = LabRng::new(seed);
        let labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let scores: Vec<f64> = labels.iter().map(|&l| (0.3 * l as f64 + 0.7 * rng.uniform()).clamp(0.0, 1.0)).collect();
        let set = PredictionSet::new(scores, labels).unwrap();
        let point = confusion_metrics(&set).unwrap();
        let report = bootstrap_ci(&set, 10_000, seed, Execution::default()).unwrap();
        // F1 is a nonlinear ratio of resampled counts and keeps an O(1/n) bias.
        for m in Metric::ALL.into_iter().filter(|&m| m != Metric::F1) {
            let Some(truth) = (if m == Metric::Auc { roc_auc(&set).ok() } else { point.get(m) }) else { continue };
            let row = report.get(m).unwrap();
            let se = row.sd / (row.draws as f64).sqrt();
            prop_assert!(row.ci_lo <= row.mean && row.mean <= row.ci_hi);
            prop_assert!((row.mean - truth).abs() <= 3.0 * se, "{m}: mean {} vs point {truth}, se {se}", row.mean);
        }
    }
}
