mod common;

use common::{brute_force_min, objective, path_is_feasible, random_dp_instance, rng, DpInstance};
use ndarray::{s, Array2};
use oct_cascade::layers::{trace_boundary, TraceParams};
use proptest::prelude::*;
use rand::Rng;

fn trace(inst: &DpInstance) -> oct_cascade::Result<Vec<usize>> {
    let params = TraceParams {
        smoothness: inst.smoothness,
        max_jump: inst.max_jump,
    };
    trace_boundary(inst.cost.view(), params, &inst.band)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn matches_exhaustive_search_on_full_bands(seed in any::<u64>()) {
        let inst = random_dp_instance(&mut rng(seed), true);
        let path = trace(&inst).unwrap();
        prop_assert!(path_is_feasible(&inst, &path));
        prop_assert_eq!(objective(&inst, &path), brute_force_min(&inst).unwrap());
    }

    #[test]
    fn matches_exhaustive_search_on_random_bands(seed in any::<u64>()) {
        let inst = random_dp_instance(&mut rng(seed), false);
        match (trace(&inst), brute_force_min(&inst)) {
            (Ok(path), Some(best)) => {
                prop_assert!(path_is_feasible(&inst, &path));
                prop_assert_eq!(objective(&inst, &path), best);
            }
            (Err(_), None) => {}
            (got, want) => prop_assert!(false, "trace {:?} vs exhaustive {:?}", got, want),
        }
    }

    /// Moving the whole problem down by k rows moves the answer by k.
    #[test]
    fn shift_equivariant(seed in any::<u64>(), k in 1usize..5) {
        let inst = random_dp_instance(&mut rng(seed), true);
        let (h, w) = inst.cost.dim();
        let mut shifted = Array2::from_elem((h + k, w), 4.0);
        shifted.slice_mut(s![k.., ..]).assign(&inst.cost);
        let moved = DpInstance {
            cost: shifted,
            band: inst.band.iter().map(|&(lo, hi)| (lo + k, hi + k)).collect(),
            ..inst.clone()
        };
        let a = trace(&inst).unwrap();
        let b = trace(&moved).unwrap();
        prop_assert_eq!(a.iter().map(|z| z + k).collect::<Vec<_>>(), b);
    }
}

#[test]
fn six_wide_eight_high_with_default_smoothness() {
    let mut r = rng(7);
    for _ in 0..50 {
        let inst = DpInstance {
            cost: Array2::from_shape_fn((8, 6), |_| r.random_range(-16i32..=16) as f64 / 8.0),
            smoothness: 0.5,
            max_jump: 2,
            band: vec![(0, 7); 6],
        };
        let path = trace(&inst).unwrap();
        assert_eq!(objective(&inst, &path), brute_force_min(&inst).unwrap());
    }
}
