use proptest::prelude::*;
use rid_core::oracle::{compare_case, random_case, walk_ble_timeline};
use rid_core::protocol::{ble_match_all, SlotParams};
use rid_core::seed;
use rid_core::slotmath::{crt_match, gcd, PeriodicEvent};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn walker_equals_analytical_match_sets(case_seed in any::<u64>()) {
        let case = random_case(&mut seed::stream(case_seed, &[]), 128);
        let mismatches = compare_case(&case).unwrap();
        prop_assert!(mismatches.is_empty(), "{case:?}: {:?}", &mismatches[..mismatches.len().min(10)]);
    }

    #[test]
    fn crt_matches_exhaustive_scan(s1 in 1u64..=512, s2 in 1u64..=512, a in any::<u64>(), b in any::<u64>()) {
        prop_assume!(gcd(s1, s2) == 1);
        let e1 = PeriodicEvent::new(a % s1, s1).unwrap();
        let e2 = PeriodicEvent::new(b % s2, s2).unwrap();
        let horizon = s1 * s2;
        let got = crt_match(e1, e2, horizon).unwrap().matches;
        let want: Vec<u64> = (0..horizon).filter(|t| t % s1 == a % s1 && t % s2 == b % s2).collect();
        prop_assert_eq!(got, want);
    }
}

#[test]
fn default_timing_walker_agrees_for_every_rate() {
    let p = SlotParams::default();
    let mut rng = seed::stream(0, &[]);
    for psi in 1..=10 {
        for t0 in [0u64, 7, 64, 191] {
            assert_eq!(walk_ble_timeline(t0, psi, &p, false, &mut rng).unwrap(), ble_match_all(t0, psi, &p).unwrap());
        }
    }
}
