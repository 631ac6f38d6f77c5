use proptest::prelude::*;

use hnet::eval::{corner_errors, mace_sample};
use hnet::geometry::{clip_four_point, four_point_to_matrix, matrix_to_four_point, FourPointDelta, PatchFrame, Point2};
use hnet::nn::quant::{bin_center, bin_width, encode_label};

fn delta(rho: f64) -> impl Strategy<Value = FourPointDelta> {
    prop::array::uniform8(-rho..=rho).prop_map(FourPointDelta::new)
}

proptest! {
    #[test]
    fn round_trip_in_any_frame(d in delta(32.0), u in -100.0..100.0f64, v in -100.0..100.0f64, side in 64usize..300) {
        let frame = PatchFrame::new(Point2::new(u, v), side).unwrap();
        let back = matrix_to_four_point(&four_point_to_matrix(&d, &frame).unwrap(), &frame).unwrap();
        for (a, b) in d.d.iter().zip(back.d) {
            prop_assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn inverse_maps_displaced_corners_home(d in delta(16.0)) {
        let frame = PatchFrame::local(64).unwrap();
        let inv = four_point_to_matrix(&d, &frame).unwrap().invert().unwrap();
        for (c, t) in frame.corners().iter().zip(d.displaced_corners(&frame)) {
            prop_assert!(inv.apply(t).unwrap().distance(c) < 1e-6);
        }
    }

    #[test]
    fn mace_is_a_symmetric_nonnegative_distance(a in delta(64.0), b in delta(64.0), c in delta(64.0)) {
        prop_assert!(mace_sample(&a, &b) >= 0.0);
        prop_assert!((mace_sample(&a, &b) - mace_sample(&b, &a)).abs() < 1e-12);
        prop_assert!(mace_sample(&a, &c) <= mace_sample(&a, &b) + mace_sample(&b, &c) + 1e-9);
        prop_assert!(corner_errors(&a, &a).iter().all(|&e| e == 0.0));
    }

    #[test]
    fn clipping_bounds_components(d in delta(500.0), limit in 1.0..100.0f64) {
        let c = clip_four_point(&d, limit);
        prop_assert!(c.max_abs() <= limit);
        for (x, y) in d.d.iter().zip(c.d) {
            if x.abs() <= limit { prop_assert_eq!(*x, y); }
        }
    }

    #[test]
    fn bins_cover_the_range(d in delta(8.0)) {
        let bins = encode_label(&d, 8.0).unwrap();
        for (b, x) in bins.iter().zip(d.d) {
            prop_assert!((bin_center(*b, 8.0) - x).abs() <= bin_width(8.0) / 2.0 + 1e-12);
        }
    }
}
