use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trajbo::sim::simulate_sir;
use trajbo::{Error, Simulator, SirConfig, SirSimulator, Trajectory};

fn config(beta: f64, gamma: f64, seed: u64) -> SirConfig {
    SirConfig {
        beta,
        gamma,
        seed,
        ..SirConfig::default()
    }
}

fn series<'a>(t: &'a Trajectory, name: &str) -> &'a [f64] {
    t.series(name).unwrap()
}

/// Conservation, monotonicity, integrality and absorption.
fn check_invariants(t: &Trajectory, n: f64) {
    let (s, i, r) = (series(t, "S"), series(t, "I"), series(t, "R"));
    assert_eq!(t.times, (0..s.len() as i64).collect::<Vec<_>>());
    for k in 0..s.len() {
        assert_eq!(s[k] + i[k] + r[k], n);
        assert!(s[k] >= 0.0 && i[k] >= 0.0 && r[k] >= 0.0);
        assert_eq!(s[k].fract(), 0.0);
        if k > 0 {
            assert!(s[k] <= s[k - 1]);
            assert!(r[k] >= r[k - 1]);
        }
    }
    if let Some(k) = i.iter().position(|&v| v == 0.0) {
        assert!(i[k..].iter().all(|&v| v == 0.0));
        assert!(s[k..].iter().all(|&v| v == s[k]));
    }
}

#[test]
fn invariants_over_random_configurations() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..1000 {
        let beta = rng.random_range(0.0..2.0);
        let gamma = rng.random_range(0.0..2.0);
        let seed = rng.random::<u64>();
        let c = config(beta, gamma, seed);
        let t = simulate_sir(&c).unwrap();
        assert_eq!(t.len(), 101);
        check_invariants(&t, 1010.0);
        assert_eq!(simulate_sir(&c).unwrap(), t);

        let no_infection = simulate_sir(&config(0.0, gamma, seed)).unwrap();
        assert!(series(&no_infection, "S").iter().all(|&v| v == 1000.0));
        assert!(series(&no_infection, "I").windows(2).all(|w| w[1] <= w[0]));

        let no_recovery = simulate_sir(&config(beta, 0.0, seed)).unwrap();
        assert!(series(&no_recovery, "R").iter().all(|&v| v == 0.0));
    }
}

#[test]
fn reference_parameters_conserve_population() {
    let t = simulate_sir(&SirConfig::default()).unwrap();
    check_invariants(&t, 1010.0);
    assert_eq!(series(&t, "I")[0], 10.0);
}

#[test]
fn seeds_change_trajectories() {
    let a = simulate_sir(&config(0.7, 0.2, 50)).unwrap();
    let b = simulate_sir(&config(0.7, 0.2, 51)).unwrap();
    assert_ne!(a.outputs, b.outputs);
}

#[test]
fn simulator_adapter_matches_direct_call() {
    let sim = SirSimulator::new(SirConfig::default());
    let t = sim.simulate(&[0.7, 0.2], 50).unwrap();
    assert_eq!(t, simulate_sir(&config(0.7, 0.2, 50)).unwrap());
    let prov = t.provenance.unwrap();
    assert_eq!((prov.params, prov.seed), (vec![0.7, 0.2], 50));
    assert!(matches!(sim.simulate(&[0.7], 50), Err(Error::Shape { .. })));
}

#[test]
fn invalid_configurations() {
    let mut c = SirConfig::default();
    c.s0 = 999;
    assert!(matches!(simulate_sir(&c), Err(Error::Config(_))));
    assert!(simulate_sir(&config(-0.1, 0.2, 1)).is_err());
    assert!(simulate_sir(&config(0.1, f64::NAN, 1)).is_err());
}

proptest! {
    #[test]
    fn invariants_hold_for_any_population(
        s0 in 0u64..500,
        i0 in 0u64..50,
        r0 in 0u64..50,
        beta in 0.0f64..3.0,
        gamma in 0.0f64..3.0,
        horizon in 1u32..60,
        seed in any::<u64>(),
    ) {
        prop_assume!(s0 + i0 + r0 > 0);
        let c = SirConfig { population: s0 + i0 + r0, s0, i0, r0, horizon, beta, gamma, seed };
        let t = simulate_sir(&c).unwrap();
        prop_assert_eq!(t.len(), horizon as usize + 1);
        check_invariants(&t, c.population as f64);
    }
}
