use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest, ProptestConfig};

use distobs::classify::classify;
use distobs::config::{ProblemConfig, EXAMPLE_JSON};
use distobs::fuzz::{FuzzGenerator, FuzzParams};
use distobs::solvability::{build_report, oracle_check, Strategy};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn theorem_matches_oracle_away_from_boundary(seed in any::<u64>()) {
        let mut g = FuzzGenerator::new(seed, FuzzParams::default());
        let p = g.problem();
        let rep = build_report(&p, &classify(&p)).unwrap();
        for s in [Strategy::One, Strategy::Two] {
            for br in rep.gain_blocks() {
                let k = g.gain_off_boundary(&br.interval(s), (-0.5, 2.5), 1e-3);
                let c = oracle_check(br, s, k, 1e-3).unwrap();
                prop_assert!(c.agrees(), "block {} strategy {} k={k}: {c:?}", br.block, s.number());
            }
        }
    }

    #[test]
    fn seed_override_keeps_problem(seed in any::<u64>()) {
        let cfg = ProblemConfig::bundled_example();
        let mut v: serde_json::Value = serde_json::from_str(EXAMPLE_JSON).unwrap();
        v["simulation"]["seed"] = serde_json::Value::from(seed);
        let back = ProblemConfig::from_json_str(&v.to_string()).unwrap();
        prop_assert_eq!(back.simulation.seed, seed);
        prop_assert_eq!(back.to_problem().unwrap().fingerprint(), cfg.to_problem().unwrap().fingerprint());
    }
}
