//! Print the IoU-to-quality mapping: zero at 0.5, saturating toward ±1,
//! odd-symmetric about the midpoint.

use annotrack::metrics::{quality_from_iou, QualityMapParams};

fn main() {
    let p = QualityMapParams::default();
    println!("alpha = {}, beta = {}", p.alpha, p.beta);
    println!("{:>6}  {:>10}", "iou", "quality");
    for i in 0..=20 {
        let iou = i as f64 / 20.0;
        println!("{iou:>6.2}  {:>10.5}", quality_from_iou(iou, &p));
    }
    let f = |x| quality_from_iou(x, &p);
    println!("\nsymmetry check: f(0.3) + f(0.7) = {:+.2e}", f(0.3) + f(0.7));
}
