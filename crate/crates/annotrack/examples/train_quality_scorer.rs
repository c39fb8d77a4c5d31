//! Train the temporal quality scorer on a few synthetic sequences and show
//! the loss curve plus held-out validation loss.

use annotrack::assess::{train_assess, validation_loss, AssessConfig, AssessModel, TrainConfig};
use annotrack::metrics::QualityMapParams;
use annotrack::nn::PredictorKind;
use annotrack::synth::{assess_samples, generate_sequence, SynthConfig};

fn main() -> annotrack::Result<()> {
    let qp = QualityMapParams::default();
    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut meta = None;
    for i in 0..4u64 {
        let cfg = SynthConfig {
            seed: 100 + i,
            video_id: format!("train{i}"),
            frame_count: 301,
            map_side: 16,
            ..SynthConfig::default()
        };
        let seq = generate_sequence(&cfg)?;
        let samples = assess_samples(&seq, 20, 10, &qp)?;
        if i < 3 {
            train.extend(samples);
        } else {
            val.extend(samples);
        }
        meta.get_or_insert(seq.meta);
    }
    let meta = meta.unwrap();
    println!("{} training windows, {} validation windows", train.len(), val.len());

    let cfg = AssessConfig {
        feature_dim: 16,
        hidden: 32,
        window_len: 20,
        map_side: 16,
        kind: PredictorKind::Lstm,
        seed: 7,
    };
    let mut model = AssessModel::new(cfg);
    let tc = TrainConfig { lr: 2e-3, batch_size: 16, epochs: 30, seed: 1 };
    let report = train_assess(&mut model, &train, &val, &meta, &tc)?;

    for (step, loss) in report.curve.iter().step_by(report.curve.len() / 10 + 1) {
        println!("step {step:>5}  loss {loss:.4}");
    }
    println!("final validation loss: {:.4}", validation_loss(&model, &val, &meta)?);
    Ok(())
}
