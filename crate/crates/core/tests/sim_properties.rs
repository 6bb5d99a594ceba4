use std::sync::OnceLock;

use proptest::prelude::*;
use stcp_core::net::{
    provision_scenario, run_batch, run_batch_sequential, run_scenario_seeded, ProvisionedTopology, ScenarioFile,
    ScenarioSpec,
};
use stcp_core::protocol::Phase;

const BASE: &str = r#"
[[scenario]]
name = "prop"
[[scenario.node]]
label = "ad1"
[[scenario.node]]
label = "ad2"
[[scenario.run]]
initiator = "ad1"
responder = "ad2"
"#;

fn spec(actions: &str) -> ScenarioSpec {
    ScenarioFile::parse(&format!("{BASE}\n{actions}")).unwrap().scenarios.remove(0)
}

fn topo() -> &'static ProvisionedTopology {
    static T: OnceLock<ProvisionedTopology> = OnceLock::new();
    T.get_or_init(|| provision_scenario(&spec("")).unwrap())
}

fn outcomes(actions: &str, seed: u64) -> Vec<String> {
    run_scenario_seeded(topo(), &spec(actions), seed).unwrap().outcome_lines()
}

fn msg_name(k: u8) -> &'static str {
    ["msg1", "msg2", "msg3"][k as usize]
}

const FIELDS: [&[&str]; 3] = [
    &["ad1_id", "ad2_id", "n_ad1", "dh_ad1", "vr", "cookie"],
    &["ad2_id", "ad1_id", "n_ad2", "dh_ad2", "sealed_iv", "sealed_ct", "sealed_tag", "vr", "cookie"],
    &["sealed_iv", "sealed_ct", "sealed_tag", "cookie"],
];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn raw_tamper_never_yields_a_pair(kind in 0u8..3, offset in 0usize..900, mask in 1u8.., seed in 0u64..1000) {
        // Offsets past the frame end leave it untouched, so clamp to the
        // smallest frame (Msg1, 233 bytes with the test profile).
        let offset = offset % 233;
        let s = spec(&format!(
            "[[scenario.action]]\nkind = \"tamper\"\non = {{ msg = \"{}\" }}\nedit = {{ op = \"xor\", offset = {offset}, mask = {mask} }}\n",
            msg_name(kind)
        ));
        let r = run_scenario_seeded(topo(), &s, seed).unwrap();
        prop_assert_eq!(r.established_pairs, 0, "{}", r.render());
        prop_assert_eq!(r.mismatched_key_pairs, 0);
        for n in &r.nodes {
            for sess in &n.sessions {
                prop_assert_eq!(sess.phase, Phase::Aborted, "{}", r.render());
            }
        }
    }

    #[test]
    fn field_tamper_never_yields_a_pair(
        kind in 0u8..3,
        field in any::<prop::sample::Index>(),
        offset in 0usize..256,
        mask in 1u8..,
        fix in any::<bool>(),
        seed in 0u64..1000,
    ) {
        let field = field.get(FIELDS[kind as usize]);
        let s = spec(&format!(
            "[[scenario.action]]\nkind = \"tamper\"\non = {{ msg = \"{}\" }}\nedit = {{ op = \"field_xor\", field = \"{field}\", offset = {offset}, mask = {mask}, fix_cookie = {fix} }}\n",
            msg_name(kind)
        ));
        let r = run_scenario_seeded(topo(), &s, seed).unwrap();
        prop_assert_eq!(r.mismatched_key_pairs, 0);
        prop_assert_eq!(r.unmatched_established, 0, "{}", r.render());
        // Re-deriving the cookie after flipping it restores the original frame.
        let no_op = r.frames.iter().any(|f| f.network.contains("no-op"));
        prop_assert_eq!(r.established_pairs, usize::from(no_op), "{}", r.render());
    }

    #[test]
    fn observing_changes_nothing(kind in 0u8..4, nth in proptest::option::of(1usize..3), seed in 0u64..1000) {
        let msg = ["msg1", "msg2", "msg3", "abort"][kind as usize];
        let nth = nth.map(|n| format!(", nth = {n}")).unwrap_or_default();
        let observed = outcomes(
            &format!("[[scenario.action]]\nkind = \"observe\"\non = {{ msg = \"{msg}\"{nth} }}\nstore = \"s\"\n"),
            seed,
        );
        prop_assert_eq!(observed, outcomes("", seed));
    }
}

#[test]
fn same_seed_same_trace() {
    let file = ScenarioFile::load(&std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/attacks.toml"))
        .unwrap();
    for s in &file.scenarios {
        let t = provision_scenario(s).unwrap();
        let a = run_scenario_seeded(&t, s, 99).unwrap();
        let b = run_scenario_seeded(&t, s, 99).unwrap();
        assert_eq!(a.trace_lines(), b.trace_lines(), "{}", s.name);
        assert_eq!(a.outcome_lines(), b.outcome_lines());
    }
}

#[test]
fn different_seeds_differ_on_the_wire() {
    let s = spec("");
    let a = run_scenario_seeded(topo(), &s, 1).unwrap();
    let b = run_scenario_seeded(topo(), &s, 2).unwrap();
    assert_ne!(a.trace_lines(), b.trace_lines());
    assert_eq!(a.outcome_lines(), b.outcome_lines());
}

#[test]
fn parallel_batch_matches_sequential() {
    let s = spec("[[scenario.action]]\nkind = \"drop\"\non = { msg = \"msg3\", nth = 1 }\n");
    let seeds: Vec<u64> = (0..16).collect();
    let par = run_batch(topo(), &s, &seeds).unwrap();
    let seq = run_batch_sequential(topo(), &s, &seeds).unwrap();
    assert_eq!(par.len(), seq.len());
    for (p, q) in par.iter().zip(&seq) {
        assert_eq!(p.seed, q.seed);
        assert_eq!(p.trace_lines(), q.trace_lines());
        assert_eq!(p.outcome_lines(), q.outcome_lines());
    }
}
