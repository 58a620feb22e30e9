//! Scratch probe: do camera states carry motion signal, and what lr fits?

use vot::config::{Profile, RunConfig};
use vot::data::{make_sequence, sample_trajectory, Intrinsics, SequenceSample, TrajectoryKind, World};
use vot::model::VotModel;
use vot::numerics::tensor::Tape;
use vot::train::Trainer;

fn desk_samples(n: usize) -> Vec<SequenceSample> {
    (0..n)
        .map(|i| {
            let world = World::generate(1000 + i as u64, 4000, 5.0).unwrap();
            let traj = sample_trajectory(TrajectoryKind::IndoorWander, 10, 2000 + i as u64);
            let intr = Intrinsics::default_for(64, 64);
            make_sequence(&world, &traj, 4, 3, 0, intr, 64, 64, 1).unwrap()
        })
        .collect()
}

fn build(cfg: &RunConfig) -> VotModel {
    VotModel::new(
        cfg.encoder,
        cfg.decoder,
        cfg.head.representation,
        cfg.head.weights(),
        cfg.image.channels,
        cfg.train.seed,
    )
}

fn main() {
    let mut cfg = RunConfig::for_profile(Profile::Desk);
    let samples = desk_samples(10);

    // Frame-to-frame pixel distance: is there image signal at all?
    for s in samples.iter().take(2) {
        let d01: f64 = s.frames[0]
            .data
            .iter()
            .zip(&s.frames[1].data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let mean0 = s.frames[0].data.iter().sum::<f64>() / s.frames[0].data.len() as f64;
        println!("frame rms diff {d01:.4}  mean pixel {mean0:.4}");
    }

    // Camera states at init: distance between consecutive frames' states.
    let model = build(&cfg);
    let tape = Tape::no_grad();
    let bound = model.bind(&tape);
    for s in samples.iter().take(2) {
        let (states, _) = model.camera_states(&tape, &bound, &s.frames, false).unwrap();
        let d = states.shape()[1];
        let data = states.data();
        let norm0: f64 = data[..d].iter().map(|v| v * v).sum::<f64>().sqrt();
        let d01: f64 = data[..d]
            .iter()
            .zip(&data[d..2 * d])
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let d12: f64 = data[d..2 * d]
            .iter()
            .zip(&data[2 * d..3 * d])
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        println!("state norm {norm0:.3}  d(s0,s1) {d01:.5}  d(s1,s2) {d12:.5}");
    }

    // Same frame index, different sequences: content signal in the states.
    {
        let tape = Tape::no_grad();
        let bound = model.bind(&tape);
        let (sa, _) = model.camera_states(&tape, &bound, &samples[0].frames, false).unwrap();
        let (sb, _) = model.camera_states(&tape, &bound, &samples[1].frames, false).unwrap();
        let d = sa.shape()[1];
        for k in 0..2 {
            let cross: f64 = sa.data()[k * d..(k + 1) * d]
                .iter()
                .zip(&sb.data()[k * d..(k + 1) * d])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            println!("cross-sequence state distance at frame {k}: {cross:.5}");
        }
        // And the raw encoder tokens: how much do frames differ per token?
        let (ta, _) = (0, 0);
        let _ = ta;
    }

    // Short trainings at a few learning rates.
    for lr in [3e-4, 1e-3, 3e-3] {
        cfg.train.learning_rate = lr;
        cfg.train.epochs = 40;
        let mut trainer = Trainer::new(build(&cfg), cfg.train);
        let mut last = (0.0, 0.0);
        while !trainer.is_done() {
            trainer
                .run_epoch(&samples, |rec| last = (rec.rotation, rec.translation))
                .unwrap();
        }
        println!("lr {lr:.0e}: final rot {:.4} trans {:.4}", last.0, last.1);
        let model = trainer.into_model();
        let s = &samples[0];
        let rels = model.predict(&s.frames).unwrap();
        for (k, (est, gt)) in rels.iter().zip(&s.rel_poses_gt).enumerate() {
            println!(
                "  pair{k} est t ({:+.3} {:+.3} {:+.3}) gt t ({:+.3} {:+.3} {:+.3})",
                est.translation[0],
                est.translation[1],
                est.translation[2],
                gt.translation[0],
                gt.translation[1],
                gt.translation[2]
            );
        }
    }
}
