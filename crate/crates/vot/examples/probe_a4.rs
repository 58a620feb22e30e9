//! Scratch probe for the overfit protocol: times epochs and prints metrics.

use vot::config::{Profile, RunConfig};
use vot::data::{make_sequence, sample_trajectory, Intrinsics, SequenceSample, TrajectoryKind, World};
use vot::eval::{evaluate, AlignMode, SegmentDef};
use vot::geometry::{compose_poses, Pose, Trajectory};
use vot::head::Representation;
use vot::model::VotModel;
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

/// Pre-clip gradient norm, rotation-only gradient norm, head weight norm,
/// and the fraction of saturated rotation pairs on the full set.
fn diagnostics(model: &VotModel, samples: &[SequenceSample]) -> (f64, f64, f64, f64) {
    use vot::numerics::tensor::Tape;
    let batch: Vec<&SequenceSample> = samples.iter().collect();

    let norm_of = |value: &vot::numerics::tensor::Tensor,
                   tape: &Tape,
                   bound: &vot::params::BoundParams| {
        let grads = tape.backward(value).unwrap();
        let mut norm2 = 0.0;
        for entry in model.store().trainable() {
            if let Some(g) = grads.of(bound.get(&entry.name)) {
                norm2 += g.iter().map(|v| v * v).sum::<f64>();
            }
        }
        f64::sqrt(norm2)
    };

    let tape = Tape::new();
    let bound = model.bind(&tape);
    let loss = model.loss(&tape, &bound, &batch).unwrap();
    let total_norm = norm_of(&loss.total, &tape, &bound);

    let tape_r = Tape::new();
    let bound_r = model.bind(&tape_r);
    let loss_r = model.loss(&tape_r, &bound_r, &batch).unwrap();
    let rot_norm = norm_of(&loss_r.rotation, &tape_r, &bound_r);

    let head_w =
        model.store().get("head.w").data.iter().map(|v| v * v).sum::<f64>().sqrt();

    let mut saturated = 0usize;
    let mut pairs = 0usize;
    for s in &batch {
        let tape = Tape::no_grad();
        let bound = model.bind(&tape);
        let terms = model.sequence_terms(&tape, &bound, s).unwrap();
        for t in &terms.rotation {
            pairs += 1;
            if t.value() == 0.0 {
                saturated += 1;
            }
        }
    }
    (total_norm, rot_norm, head_w, saturated as f64 / pairs as f64)
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(5);
    let n_seq: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(50);

    let mut cfg = RunConfig::for_profile(Profile::Desk);
    cfg.train.epochs = epochs;
    cfg.validate().unwrap();
    let samples = desk_samples(n_seq);

    let model = VotModel::new(
        cfg.encoder,
        cfg.decoder,
        cfg.head.representation,
        cfg.head.weights(),
        cfg.image.channels,
        cfg.train.seed,
    );
    let mut trainer = Trainer::new(model, cfg.train);

    let start = std::time::Instant::now();
    let mut first = None;
    let mut last = 0.0;
    while !trainer.is_done() {
        let mut epoch_loss = (0.0, 0.0, 0.0);
        let mut steps = 0;
        trainer
            .run_epoch(&samples, |rec| {
                if first.is_none() {
                    first = Some(rec.total);
                }
                last = rec.total;
                epoch_loss.0 += rec.rotation;
                epoch_loss.1 += rec.translation;
                epoch_loss.2 += rec.total;
                steps += 1;
            })
            .unwrap();
        let k = steps as f64;
        let (gnorm, rot_gnorm, head_w, sat) = diagnostics(trainer.model(), &samples);
        println!(
            "epoch {:3} rot {:.5} trans {:.5} total {:.5} | grad {:9.2} rot_grad {:9.2} head_w {:7.3} sat {:4.0}% [{:.1}s]",
            trainer.epoch(),
            epoch_loss.0 / k,
            epoch_loss.1 / k,
            epoch_loss.2 / k,
            gnorm,
            rot_gnorm,
            head_w,
            100.0 * sat,
            start.elapsed().as_secs_f64()
        );
    }
    println!("first step total {:.5} last step total {:.5}", first.unwrap(), last);

    let model = trainer.into_model();
    let (mut ate_sum, mut are_sum, mut len_sum) = (0.0, 0.0, 0.0);
    for s in &samples {
        let rels = model.predict(&s.frames).unwrap();
        let est = compose_poses(&Pose::identity(), &rels);
        let first_gt = s.abs_poses_gt[0];
        let gt: Vec<Pose> = s.abs_poses_gt.iter().map(|p| first_gt.relative_to(p)).collect();
        let gt = Trajectory::new(gt, s.timestamps.clone()).unwrap();
        let est = Trajectory::new(est, s.timestamps.clone()).unwrap();
        let rep = evaluate(&gt, &est, AlignMode::None, SegmentDef::PerFramePair).unwrap();
        ate_sum += rep.ate_m;
        are_sum += rep.are_deg;
        len_sum += gt.path_length();
    }
    let n = samples.len() as f64;
    println!(
        "train-set mean ATE {:.4} m ({:.1}% of mean length {:.3} m) mean ARE {:.3} deg",
        ate_sum / n,
        100.0 * (ate_sum / n) / (len_sum / n),
        len_sum / n,
        are_sum / n
    );
}
