//! Decode a bounding box from a segmentation mask: clip the row/column sum
//! profiles, threshold them, and map the surviving span back to frame
//! coordinates through the search region.

use annotrack::infer::{refine_box, InferenceConfig};
use annotrack::refine::{SearchRegion, SegMask};
use annotrack::store::{BBox, VideoMeta};
use ndarray::Array2;

fn main() -> annotrack::Result<()> {
    let meta = VideoMeta::new("demo", 10, 640, 480);
    let tracker_box = BBox::new(200.0, 150.0, 280.0, 210.0)?;
    let region = SearchRegion::from_box(&tracker_box, &meta, 16, 16)?;

    // A blob occupying the central cells of the 16x16 mask grid, plus a
    // faint distractor that the profile threshold ignores.
    let mut grid = Array2::zeros((16, 16));
    for r in 5..11 {
        for c in 4..12 {
            grid[[r, c]] = 0.8;
        }
    }
    grid[[1, 14]] = 0.3;
    let mask = SegMask::new(grid)?;

    let cfg = InferenceConfig::default();
    let refined = refine_box(&mask, &region, &meta, &cfg).expect("mask has a clear blob");
    println!("tracker box : {tracker_box:?}");
    println!("refined box : {refined:?}");
    println!(
        "region      : x0 {:.1} y0 {:.1} cell {:.2} x {:.2}",
        region.x0(),
        region.y0(),
        region.grid_x_to_frame(1.0) - region.grid_x_to_frame(0.0),
        region.grid_y_to_frame(1.0) - region.grid_y_to_frame(0.0)
    );
    Ok(())
}
