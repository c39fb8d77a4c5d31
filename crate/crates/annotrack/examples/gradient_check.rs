//! Verify analytic gradients of the quality loss against central finite
//! differences on a tiny model.

use annotrack::assess::{loss_conf_window, AssessConfig, AssessModel};
use annotrack::nn::{Parameterized, PredictorKind};
use annotrack::store::{BBox, Direction, ResponseMap, TrackedFrame, VideoMeta};
use ndarray::Array2;

fn main() -> annotrack::Result<()> {
    let meta = VideoMeta::new("grad", 60, 320, 240);
    let cfg = AssessConfig {
        feature_dim: 8,
        hidden: 8,
        window_len: 5,
        map_side: 16,
        kind: PredictorKind::Lstm,
        seed: 13,
    };
    let mut model = AssessModel::new(cfg);

    let frames: Vec<TrackedFrame> = (0..5)
        .map(|i| TrackedFrame {
            frame_idx: 10 + i,
            direction: Direction::Forward,
            box_: BBox::new(40.0 + i as f64, 30.0, 100.0, 80.0).unwrap(),
            confidence: 0.3 + 0.1 * i as f64,
            response_map: ResponseMap::new(Array2::from_shape_fn((16, 16), |(r, c)| {
                (0.3 + 0.02 * ((r as f64).sin() - (c as f64).cos())) as f32
            })),
        })
        .collect();
    let window = annotrack::pipeline::Window {
        direction: Direction::Forward,
        offset: 0,
        frames,
        valid_mask: vec![true; 5],
    };
    let targets = vec![-0.2, 0.1, 0.3, 0.5, 0.7];

    model.zero_grads();
    let (scores, cache) = model.forward_window(&window, &meta)?;
    let dscores: Vec<f64> = scores.iter().zip(&targets).map(|(g, t)| 2.0 * (g - t)).collect();
    model.backward_window(&cache, &dscores);
    let analytic = model.flat_grads();
    let base = model.flat_params();

    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    for i in (0..base.len()).step_by(37) {
        let mut p = base.clone();
        p[i] += h;
        model.set_flat_params(&p);
        let lp = loss_conf_window(&model.predict_scores(&window, &meta)?, &targets, &window.valid_mask)?;
        p[i] -= 2.0 * h;
        model.set_flat_params(&p);
        let lm = loss_conf_window(&model.predict_scores(&window, &meta)?, &targets, &window.valid_mask)?;
        p[i] += h;
        model.set_flat_params(&p);
        let fd = (lp - lm) / (2.0 * h);
        let rel = (analytic[i] - fd).abs() / analytic[i].abs().max(fd.abs()).max(1e-6);
        worst = worst.max(rel);
        checked += 1;
    }
    println!("checked {checked} of {} parameters", base.len());
    println!("worst relative error: {worst:.2e}");
    assert!(worst < 1e-4, "gradient mismatch");
    println!("analytic gradients match finite differences");
    Ok(())
}
