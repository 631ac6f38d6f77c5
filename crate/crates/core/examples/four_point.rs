//! The 4-point parameterization: corner offsets to a 3x3 matrix and back,
//! the same mapping recovered by DLT, and a patch warped with it.

use hnet::geometry::{dlt, four_point_to_matrix, matrix_to_four_point, FourPointDelta, PatchFrame, Point2};
use hnet::imaging::{crop, warp_region};
use hnet::datagen::synthetic;
use hnet::rng::{stream_rng, streams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let frame = PatchFrame::new(Point2::new(64.0, 32.0), 128)?;
    let delta = FourPointDelta::new([12.0, -7.5, -3.0, 20.0, 8.25, 4.0, -16.0, -9.0]);

    let h = four_point_to_matrix(&delta, &frame)?;
    let m = h.matrix();
    println!("H, scaled so h33 = 1:");
    for row in m {
        let r = row.map(|x| x / m[2][2]);
        println!("  [{:>10.5} {:>10.5} {:>10.5}]", r[0], r[1], r[2]);
    }

    let back = matrix_to_four_point(&h, &frame)?;
    let err = delta.d.iter().zip(back.d).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("round trip max error {err:.2e} px");

    // The same homography from explicit correspondences.
    let pairs: Vec<_> = frame.corners().into_iter().zip(delta.displaced_corners(&frame)).collect();
    let h2 = dlt(&pairs)?;
    println!("DLT agrees up to scale: {}", h.approx_eq_up_to_scale(&h2, 1e-9));

    // Patch B samples the image at H(x); patch A is the plain crop.
    let img = synthetic::render_scene(256, 192, &mut stream_rng(0, streams::SCENE, 0));
    let a = crop(&img, &frame)?;
    let b = warp_region(&img, &h, &frame)?;
    let out = std::env::temp_dir().join("hnet_four_point");
    std::fs::create_dir_all(&out)?;
    hnet::imaging::pnm::write_pgm(out.join("a.pgm"), &a)?;
    hnet::imaging::pnm::write_pgm(out.join("b.pgm"), &b)?;
    println!("wrote {}/{{a,b}}.pgm", out.display());
    Ok(())
}
