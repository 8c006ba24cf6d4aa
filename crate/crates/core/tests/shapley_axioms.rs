mod common;

use common::{close, random_point, random_tree};
use limase::shapley::{shapley_brute_force, tree_conditional_value, tree_shap};
use limase::RandomStream;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tree_shap_matches_oracle(seed in any::<u64>(), d in 1usize..8, depth in 1usize..6) {
        let mut rng = RandomStream::new(seed);
        let all: Vec<usize> = (0..d).collect();
        let tree = random_tree(&mut rng, d, depth, &all);
        let x = random_point(&mut rng, d);
        let e = tree_shap(&tree, &x).unwrap();
        let oracle = shapley_brute_force(&|m: u32| tree_conditional_value(&tree, &x, m).unwrap(), d).unwrap();
        for j in 0..d {
            prop_assert!((e.phi[j] - oracle[j]).abs() <= 1e-9, "feature {}: {} vs {}", j, e.phi[j], oracle[j]);
        }
        prop_assert!(close(e.base_value + e.phi_sum(), tree.predict(&x).unwrap(), 1e-9));
    }

    #[test]
    fn unused_features_get_zero(seed in any::<u64>(), d in 2usize..9) {
        let mut rng = RandomStream::new(seed);
        let skip = rng.below(d);
        let allowed: Vec<usize> = (0..d).filter(|&j| j != skip).collect();
        let tree = random_tree(&mut rng, d, 5, &allowed);
        let e = tree_shap(&tree, &random_point(&mut rng, d)).unwrap();
        prop_assert_eq!(e.phi[skip], 0.0);
    }

    #[test]
    fn brute_force_is_linear(seed in any::<u64>(), d in 1usize..7, a in -3.0f64..3.0) {
        let mut rng = RandomStream::new(seed);
        let u: Vec<f64> = (0..1usize << d).map(|_| rng.gaussian()).collect();
        let v: Vec<f64> = (0..1usize << d).map(|_| rng.gaussian()).collect();
        let pu = shapley_brute_force(&|m: u32| u[m as usize], d).unwrap();
        let pv = shapley_brute_force(&|m: u32| v[m as usize], d).unwrap();
        let pw = shapley_brute_force(&|m: u32| a * u[m as usize] + v[m as usize], d).unwrap();
        for j in 0..d {
            prop_assert!((pw[j] - (a * pu[j] + pv[j])).abs() <= 1e-9);
        }
    }

    #[test]
    fn symmetric_players_share_equally(seed in any::<u64>(), d in 2usize..7) {
        // A game depending on coalition size only treats all players alike.
        let mut rng = RandomStream::new(seed);
        let by_size: Vec<f64> = (0..=d).map(|_| rng.gaussian()).collect();
        let phi = shapley_brute_force(&|m: u32| by_size[m.count_ones() as usize], d).unwrap();
        for j in 1..d {
            prop_assert!((phi[j] - phi[0]).abs() <= 1e-12);
        }
        prop_assert!((phi.iter().sum::<f64>() - (by_size[d] - by_size[0])).abs() <= 1e-9);
    }
}
