#![allow(dead_code)]

use std::f64::consts::TAU;

use cpt_core::liouvillian::{build_liouvillian, ChannelKind, LindbladChannel, Superoperator};
use cpt_core::model::{hamiltonian_from_couplings, Coupling, Level, ModeId, ModelParams};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Parameters drawn from the experimental operating range: CPT up to
/// ~30 mW/cm², repump up to ~10 mW/cm², δ within a few CPT widths.
pub fn random_operating_params(rng: &mut ChaCha8Rng) -> ModelParams {
    let mut p = ModelParams::default();
    let cpt = rng.gen_range(100.0..30_000.0_f64);
    let repump = if rng.gen_bool(0.2) { 0.0 } else { rng.gen_range(0.0..10_000.0_f64) };
    let split: f64 = rng.gen_range(0.3..0.7);
    let cs = 42_456.0;
    let cp = rng.gen_range(2.0e4..2.0e5);
    p.set_rabi(ModeId::SigmaA, cs * (cpt * split).sqrt());
    p.set_rabi(ModeId::SigmaB, cs * (cpt * (1.0 - split)).sqrt());
    p.set_rabi(ModeId::PiA, cp * (repump * 0.5).sqrt());
    p.set_rabi(ModeId::PiB, cp * (repump * 0.5).sqrt());
    p.mode_mut(ModeId::SigmaA).detuning = rng.gen_range(-1.0..1.0) * TAU * 20e6;
    p.mode_mut(ModeId::SigmaB).detuning = rng.gen_range(-1.0..1.0) * TAU * 20e6;
    p.delta = rng.gen_range(-1.0..1.0) * TAU * 50e3;
    p.gamma_pop = TAU * rng.gen_range(50.0..1000.0);
    p.gamma_coh = TAU * rng.gen_range(0.0..5000.0);
    p.off_res_detuning = TAU * rng.gen_range(20e6..1e9);
    p
}

/// Channels that drain every level outside `keep` into `sink` so the
/// remaining sub-model has a unique steady state.
fn drain_into(sink: Level, keep: &[Level], rate: f64) -> Vec<LindbladChannel> {
    Level::ALL
        .iter()
        .filter(|l| !keep.contains(l))
        .map(|&from| LindbladChannel {
            kind: if from.is_excited() {
                ChannelKind::Decay { from, to: sink }
            } else {
                ChannelKind::GroundMix { from, to: sink }
            },
            rate,
        })
        .collect()
}

/// Resonant two-level atom Clock1 ↔ CptExcited with decay rate `gamma`.
pub fn two_level(rabi: f64, gamma: f64) -> Superoperator {
    let h = hamiltonian_from_couplings(&[Coupling::new(Level::Clock1, Level::CptExcited, rabi, 0.0)])
        .unwrap();
    let mut ch = vec![LindbladChannel {
        kind: ChannelKind::Decay { from: Level::CptExcited, to: Level::Clock1 },
        rate: gamma,
    }];
    ch.extend(drain_into(Level::Clock1, &[Level::Clock1, Level::CptExcited], gamma));
    build_liouvillian(&h, &ch)
}

/// Λ system Clock1, Clock2 ↔ CptExcited, equal Rabi frequencies, no ground
/// decoherence.
pub fn lambda(rabi: f64, gamma: f64, delta: f64) -> Superoperator {
    let h = hamiltonian_from_couplings(&[
        Coupling::new(Level::Clock2, Level::CptExcited, rabi, 0.0),
        Coupling::new(Level::Clock1, Level::CptExcited, rabi, delta),
    ])
    .unwrap();
    let mut ch: Vec<LindbladChannel> = [Level::Clock1, Level::Clock2]
        .into_iter()
        .map(|to| LindbladChannel {
            kind: ChannelKind::Decay { from: Level::CptExcited, to },
            rate: gamma / 2.0,
        })
        .collect();
    ch.extend(drain_into(
        Level::Clock1,
        &[Level::Clock1, Level::Clock2, Level::CptExcited],
        gamma,
    ));
    build_liouvillian(&h, &ch)
}
