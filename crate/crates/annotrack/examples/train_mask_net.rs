//! Train the small demonstration mask net from bounding boxes alone via the
//! profile loss, using rendered synthetic crops as input.

use annotrack::assess::TrainConfig;
use annotrack::refine::{crop_search_region, train_masknet, AggOp, BoxMask, TrainableMaskNet};
use annotrack::synth::{generate_sequence, render_frame, SynthConfig};

fn main() -> annotrack::Result<()> {
    let cfg = SynthConfig { frame_count: 61, ..SynthConfig::default() };
    let seq = generate_sequence(&cfg)?;

    let side = 32usize;
    let mut samples = Vec::new();
    for (&frame_idx, gt) in seq.gt.iter().step_by(2) {
        let frame = render_frame(&cfg, &seq, frame_idx);
        let (region, crop) = crop_search_region(&frame, gt, &seq.meta, side, side, side)?;
        samples.push((crop, BoxMask::from_gt(&region, gt)));
    }
    println!("{} crop/box pairs", samples.len());

    let mut net = TrainableMaskNet::new(side, 3);
    // The smooth average profile keeps gradients alive while the untrained
    // net saturates every clipped column.
    let tc = TrainConfig { lr: 3e-3, batch_size: 8, epochs: 60, seed: 4 };
    let curve = train_masknet(&mut net, &samples, AggOp::Average, &tc)?;
    for (step, loss) in curve.iter().step_by(curve.len() / 10 + 1) {
        println!("step {step:>4}  loss {loss:.4}");
    }
    println!("loss {:.4} -> {:.4}", curve.first().unwrap().1, curve.last().unwrap().1);
    Ok(())
}
