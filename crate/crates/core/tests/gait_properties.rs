use std::f64::consts::{PI, TAU};

use bwr_core::gait::{
    average_speed, dominant_frequency, phase_difference, reward_curve, synthetic_gait, trace_from_csv, trace_to_csv,
    GaitTrace,
};
use proptest::prelude::*;

const FS: f64 = 50.0;

fn tone(f: f64, phase: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| (2.0 * PI * f * k as f64 / FS + phase).sin()).collect()
}

fn affine_trace(y0: f64, v: f64, t0: f64, n: usize) -> GaitTrace {
    let time: Vec<f64> = (0..n).map(|k| t0 + k as f64 / FS).collect();
    GaitTrace {
        waist_pos: time.iter().map(|t| [y0 + v * (t - t0), 0.4]).collect(),
        waist_vel: vec![[v, 0.0]; n],
        joint_angles: vec![[0.0; 4]; n],
        joint_vels: vec![[0.0; 4]; n],
        contacts: vec![[true, false]; n],
        reward: vec![0.0; n],
        time,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn phase_is_symmetric(f in 0.6f64..3.0, pa in 0.0f64..TAU, pb in 0.0f64..TAU, n in 400usize..700) {
        let a = tone(f, pa, n);
        let b: Vec<f64> = tone(f, pb, n).iter().map(|v| 0.7 * v + 0.1).collect();
        let ab = phase_difference(&a, &b, FS).unwrap();
        let ba = phase_difference(&b, &a, FS).unwrap();
        prop_assert!((0.0..=PI).contains(&ab));
        prop_assert!((ab - ba).abs() < 1e-9, "{} vs {}", ab, ba);
    }

    #[test]
    fn frequency_ignores_scale_and_offset(f in 0.6f64..4.0, phase in 0.0f64..TAU, scale in 0.01f64..100.0, offset in -50.0f64..50.0) {
        let x = tone(f, phase, 500);
        let y: Vec<f64> = x.iter().map(|v| scale * v + offset).collect();
        let fx = dominant_frequency(&x, FS).unwrap();
        let fy = dominant_frequency(&y, FS).unwrap();
        prop_assert!((fx - fy).abs() < 1e-9 * fx.max(1.0), "{} vs {}", fx, fy);
        prop_assert!((fx - f).abs() < 0.05, "{} vs {}", fx, f);
    }

    #[test]
    fn speed_is_exact_for_affine_motion(y0 in -5.0f64..5.0, v in -2.0f64..2.0, t0 in 0.0f64..10.0, n in 2usize..300) {
        let s = average_speed(&affine_trace(y0, v, t0, n)).unwrap();
        prop_assert!((s - v).abs() < 1e-9, "{} vs {}", s, v);
    }

    #[test]
    fn reward_curve_stays_within_the_return_range(
        returns in prop::collection::vec(-1e4f64..1e4, 1..300),
        window in 1usize..150,
    ) {
        let lo = returns.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = returns.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let curve = reward_curve(&returns, window);
        prop_assert_eq!(curve.len(), returns.len());
        let slack = 1e-9 * hi.abs().max(lo.abs()).max(1.0);
        for c in curve {
            prop_assert!(c >= lo - slack && c <= hi + slack);
        }
    }

    #[test]
    fn trace_csv_round_trips(hz in 0.5f64..2.5, seconds in 0.1f64..4.0, speed in -1.0f64..1.0) {
        let trace = synthetic_gait(hz, seconds, FS, speed);
        let back = trace_from_csv(&trace_to_csv(&trace).unwrap()).unwrap();
        prop_assert_eq!(back, trace);
    }
}
