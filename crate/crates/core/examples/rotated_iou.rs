//! Rotated 3D IoU and GIoU between a few box pairs.

use std::f64::consts::FRAC_PI_4;

use streamtrack::geom::{giou_3d, Box3D};

fn main() -> streamtrack::Result<()> {
    let car = Box3D::new([0.0, 0.0, 0.0], [1.8, 4.2, 1.5], 0.0)?;
    let pairs = [
        ("same box", car),
        ("shifted 1 m", Box3D::new([0.0, 1.0, 0.0], car.size, 0.0)?),
        ("rotated 45 deg", Box3D::new([0.0; 3], car.size, FRAC_PI_4)?),
        ("side by side", Box3D::new([2.5, 0.0, 0.0], car.size, 0.0)?),
        ("far away", Box3D::new([10.0, 10.0, 0.0], car.size, 1.0)?),
    ];
    for (name, other) in pairs {
        let t = giou_3d(&car, &other);
        println!("{name:>15}: iou {:.4}  giou {:+.4}", t.iou, t.giou);
    }
    Ok(())
}
