mod support;

use crosschannel::crypto::GroupParams;
use crosschannel::vss;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use support::vss::{check_threshold, LARGE_THRESHOLDS};

#[test]
fn large_thresholds_recover_reject_and_refuse_short_sets() {
    let params = GroupParams::standard();
    for (t, n) in LARGE_THRESHOLDS {
        check_threshold(params, t, n, 100, 31).unwrap_or_else(|e| panic!("{e}"));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn any_t_subset_recovers_in_the_tiny_group(seed in any::<u64>(), n in 1u32..20, t_off in 0u32..20, subsets in 1usize..6) {
        let t = 1 + t_off % n;
        let params = GroupParams::tiny();
        let r = check_threshold(params, t, n, subsets, seed);
        prop_assert!(r.is_ok(), "{:?}", r);
    }

    #[test]
    fn recovery_ignores_share_order(seed in any::<u64>(), n in 2u32..12) {
        let params = GroupParams::standard();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let k = params.random_scalar(&mut rng);
        let d = vss::share(params, &k, n / 2 + 1, n, &mut rng).unwrap();
        let mut rev = d.shares.clone();
        rev.reverse();
        prop_assert_eq!(vss::recover(params, &rev, n / 2 + 1).unwrap(), k);
    }
}
