//! Central-difference checks over every op kind and over the composed
//! translation and screening objectives.

use lab_core::nn::AttentionVariant;
use lab_core::probes::{screening_probe, translation_probe};
use lab_core::tensor::{op_probe, OpKind};

const SEEDS: u64 = 20;
const TOL: f64 = 1e-4;
const EPS: f64 = 1e-5;

#[test]
fn every_op_kind_over_twenty_seeds() {
    for kind in OpKind::ALL {
        for seed in 0..SEEDS {
            let err = op_probe(kind, seed, EPS).unwrap();
            assert!(err <= TOL, "{kind:?} seed {seed}: {err}");
        }
    }
}

#[test]
fn composed_translation_objectives() {
    for seed in 0..SEEDS {
        let [generator, discriminator, domain] = translation_probe(seed).unwrap();
        assert!(generator <= TOL, "generator objective, seed {seed}: {generator}");
        assert!(discriminator <= TOL, "discriminator objective, seed {seed}: {discriminator}");
        assert!(domain <= TOL, "domain objective, seed {seed}: {domain}");
    }
}

#[test]
fn composed_screening_objective() {
    for seed in 0..SEEDS {
        for variant in [AttentionVariant::Dense, AttentionVariant::Sparse] {
            let err = screening_probe(seed, variant).unwrap();
            assert!(err <= TOL, "{variant} student objective, seed {seed}: {err}");
        }
    }
}
