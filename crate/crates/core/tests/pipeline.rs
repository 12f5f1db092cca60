use cdma_game::games::{
    common_target_sinr, mf_target_sinr, run_game, EfficiencyFunction, GameKind,
};
use cdma_game::montecarlo::trial_signatures;
use cdma_game::scenario::{draw_scenario, SystemConfig, SystemModel};
use proptest::prelude::*;

fn model_with(f: impl FnOnce(&mut SystemConfig)) -> SystemModel {
    let mut c = SystemConfig::default();
    f(&mut c);
    SystemModel::new(c).unwrap()
}

#[test]
fn every_game_converges_to_a_feasible_profile() {
    let m = model_with(|_| {});
    let pmax = m.config().max_power;
    for users in [1, 3, 7, 10] {
        let (sigs, _) = trial_signatures(&m, users, 11).unwrap();
        for kind in GameKind::ALL {
            let eq = run_game(kind, &m, &sigs).unwrap();
            assert!(eq.converged, "{kind} K={users}");
            for k in 0..users {
                assert!(eq.powers[k] > 0.0 && eq.powers[k] <= pmax);
                assert!(eq.utilities[k] >= 0.0 && eq.utilities[k].is_finite());
                assert_eq!(eq.at_max[k], eq.powers[k] == pmax);
            }
        }
    }
}

#[test]
fn utility_scale_leaves_equilibrium_unchanged() {
    let a = model_with(|_| {});
    let b = model_with(|c| c.utility_scale = 2.5);
    let (sigs, _) = trial_signatures(&a, 4, 2).unwrap();
    for kind in GameKind::ALL {
        let ea = run_game(kind, &a, &sigs).unwrap();
        let eb = run_game(kind, &b, &sigs).unwrap();
        assert_eq!(ea.powers, eb.powers);
        for (ua, ub) in ea.utilities.iter().zip(&eb.utilities) {
            assert!((ub / ua - 2.5).abs() < 1e-12);
        }
    }
}

#[test]
fn cancellation_lowers_total_power_on_crowded_cells() {
    let m = model_with(|_| {});
    let mut lower = 0;
    for trial in 0..10 {
        let (sigs, _) = trial_signatures(&m, 10, trial).unwrap();
        let lin: f64 = run_game(GameKind::LinearMmse, &m, &sigs).unwrap().powers.iter().sum();
        let sic: f64 = run_game(GameKind::SicMmse, &m, &sigs).unwrap().powers.iter().sum();
        lower += (sic <= lin * (1.0 + 1e-9)) as usize;
    }
    assert!(lower >= 8, "SIC needed less power in only {lower}/10 cells");
}

#[test]
fn scenarios_are_reproducible_and_seed_dependent() {
    let c = SystemConfig::default();
    assert_eq!(draw_scenario(&c, 5, 3), draw_scenario(&c, 5, 3));
    let mut d = c.clone();
    d.seed = 2;
    assert_ne!(draw_scenario(&c, 5, 3), draw_scenario(&d, 5, 3));
    assert_ne!(draw_scenario(&c, 5, 3), draw_scenario(&c, 5, 4));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn common_target_is_stationary(b in 2usize..400) {
        let f = EfficiencyFunction::new(b).unwrap();
        let g = common_target_sinr(&f).unwrap();
        let fv = f.value(g);
        prop_assert!((fv - g * f.derivative(g)).abs() <= 1e-12 * fv.max(1e-300));
        // Utility f(g)/p at fixed SINR-per-power is maximal at the target.
        for x in [0.9 * g, 1.1 * g] {
            prop_assert!(f.value(x) / x <= fv / g);
        }
    }

    #[test]
    fn mf_target_shrinks_with_self_interference(b in 2usize..300, r1 in 1e-4f64..0.2, dr in 1e-4f64..0.2) {
        let f = EfficiencyFunction::new(b).unwrap();
        let common = common_target_sinr(&f).unwrap();
        let g1 = mf_target_sinr(1.0, r1, &f).unwrap();
        let g2 = mf_target_sinr(1.0, r1 + dr, &f).unwrap();
        prop_assert!(g1 < common && g2 <= g1 && g1 < 1.0 / r1);
    }

    #[test]
    fn signatures_respect_sic_order(seed in 0u64..1000, users in 1usize..9) {
        let m = model_with(|c| c.seed = seed);
        let (sigs, _) = trial_signatures(&m, users, 0).unwrap();
        let order = sigs.sic_order();
        for w in order.windows(2) {
            prop_assert!(sigs.norms()[w[0]] >= sigs.norms()[w[1]]);
        }
        prop_assert_eq!(sigs.dim(), 28);
    }
}
