use std::collections::BTreeSet;

use blelab_core::attacks::{AttackKind, AttackOutcome, Fact};
use blelab_core::lab::DFD_THREATS_GOLDEN;
use blelab_core::stride::{
    build_report, classify_outcomes, classify_with_context, enumerate_threats, in_rule, shipped_dfd, Classification,
    DfdModel, ElementKind, RepudiationContext, StrideCategory, StrideError, StrideVerdict, Threat, CROSSING_RULES,
};

fn outcome(facts: &[(Fact, &[usize])]) -> AttackOutcome {
    let mut o = AttackOutcome::new(AttackKind::Sniff);
    for (f, e) in facts {
        o.facts.insert(*f, e.to_vec());
    }
    o
}

const TINY: &str = r#"
[[elements]]
id = "user"
kind = "external_entity"
label = "User"

[[elements]]
id = "app"
kind = "process"
label = "App"

[[elements]]
id = "db"
kind = "data_store"
label = "DB"

[[elements]]
id = "login"
kind = "data_flow"
label = "Login"
source = "user"
sink = "app"

[[elements]]
id = "query"
kind = "data_flow"
label = "Query"
source = "app"
sink = "db"

[[trust_boundaries]]
id = "server"
label = "Server"
members = ["app", "db"]
"#;

#[test]
fn rule_table_matches_the_stride_per_element_chart() {
    use ElementKind::*;
    let expected = [(ExternalEntity, "SR"), (Process, "STRIDE"), (DataStore, "TRID"), (DataFlow, "TID")];
    for (kind, letters) in expected {
        for c in StrideCategory::ALL {
            assert_eq!(in_rule(kind, c), letters.contains(c.letter()), "{kind:?}/{c}");
        }
    }
}

#[test]
fn tiny_dfd_threats_are_counted_by_hand() {
    let dfd = DfdModel::from_toml(TINY).unwrap();
    let threats = enumerate_threats(&dfd).unwrap();
    // user 2, app 6, db 4, login 3 + 2 crossing, query 3.
    assert_eq!(threats.len(), 20);
    let login: BTreeSet<&str> =
        threats.iter().filter(|t| t.element_id == "login").map(|t| t.rule_id.as_str()).collect();
    assert_eq!(login, BTreeSet::from(["DF-T", "DF-I", "DF-D", "XB-S", "XB-E"]));
    assert!(threats.iter().filter(|t| t.element_id == "query").all(|t| !t.rule_id.starts_with("XB")));
    assert!(threats.windows(2).all(|w| w[0] < w[1]), "sorted and unique");
}

#[test]
fn crossing_rules_fire_only_between_zones() {
    let dfd = DfdModel::from_toml(TINY).unwrap();
    let flow = |id: &str| dfd.elements.iter().find(|e| e.id == id).unwrap().clone();
    assert!(dfd.crosses_boundary(&flow("login")));
    assert!(!dfd.crosses_boundary(&flow("query")));
    assert_eq!(dfd.zone_of("user"), None);
    assert_eq!(dfd.zone_of("db"), Some("server"));
    assert_eq!(CROSSING_RULES.map(|(_, c)| c), [StrideCategory::Spoofing, StrideCategory::ElevationOfPrivilege]);
}

#[test]
fn shipped_dfd_matches_the_golden_file() {
    let threats = enumerate_threats(&shipped_dfd()).unwrap();
    let golden: Vec<Threat> = serde_json::from_str(DFD_THREATS_GOLDEN).unwrap();
    assert_eq!(threats, golden);
    assert_eq!(threats.len(), 90);
}

#[test]
fn invalid_dfds_are_rejected() {
    let cases = [
        (TINY.replace("sink = \"db\"", "sink = \"nowhere\""), "unknown element"),
        (TINY.replace("members = [\"app\", \"db\"]", "members = [\"app\", \"login\"]"), "lists flow"),
        (format!("{TINY}\n[[trust_boundaries]]\nid = \"b2\"\nlabel = \"B2\"\nmembers = [\"db\"]\n"), "boundaries"),
        (format!("{TINY}\n[[elements]]\nid = \"app\"\nkind = \"process\"\nlabel = \"Again\"\n"), "duplicate"),
        (TINY.replace("source = \"app\"\n", ""), "source and a sink"),
        (TINY.replace("label = \"DB\"", "label = \"DB\"\nsource = \"app\""), "endpoints"),
        (TINY.replace("source = \"user\"", "source = \"query\""), "cannot end at flow"),
        ("[[elements]]\nid = 1\n".to_string(), ""),
    ];
    for (text, needle) in cases {
        match DfdModel::from_toml(&text) {
            Err(StrideError::InvalidDfd(m)) => assert!(m.contains(needle), "{m:?} lacks {needle:?}"),
            other => panic!("expected InvalidDfd containing {needle:?}, got {other:?}"),
        }
    }
}

#[test]
fn enumerate_refuses_an_invalid_model() {
    let mut dfd = DfdModel::from_toml(TINY).unwrap();
    dfd.elements[3].sink = Some("ghost".into());
    assert!(matches!(enumerate_threats(&dfd), Err(StrideError::InvalidDfd(_))));
}

#[test]
fn facts_map_to_their_categories() {
    let v = classify_outcomes(&[outcome(&[(Fact::KeyRecovered, &[3]), (Fact::RttDegraded, &[9, 4])])]);
    assert_eq!(v.letters(), "DS");
    let v = classify_outcomes(&[
        outcome(&[(Fact::ModelIdentified, &[1])]),
        outcome(&[(Fact::ProtectedWriteSucceeded, &[2])]),
    ]);
    assert_eq!(v.letters(), "EI");
    assert_eq!(classify_outcomes(&[]), StrideVerdict::default());
}

#[test]
fn evidence_is_sorted_deduplicated_and_only_for_yes_cells() {
    let c = classify_with_context(
        &[outcome(&[(Fact::WriteAppliedTwice, &[7, 3])]), outcome(&[(Fact::PayloadAlteredUndetected, &[3, 1])])],
        &RepudiationContext::default(),
    );
    assert_eq!(c.evidence.get(&StrideCategory::Tampering), Some(&vec![1, 3, 7]));
    assert_eq!(c.evidence.len(), 1);
}

#[test]
fn a_fact_without_evidence_is_no_fact() {
    assert_eq!(classify_outcomes(&[outcome(&[(Fact::KeyRecovered, &[])])]), StrideVerdict::default());
}

#[test]
fn repudiation_needs_relevance_no_audit_and_an_unattributed_change() {
    let changes = vec![5];
    let yes = |relevant, audit_logging, unattributed_changes: &Vec<usize>| {
        let ctx = RepudiationContext { relevant, audit_logging, unattributed_changes: unattributed_changes.clone() };
        classify_with_context(&[], &ctx).verdict.get(StrideCategory::Repudiation).is_yes()
    };
    assert!(yes(true, false, &changes));
    assert!(!yes(false, false, &changes));
    assert!(!yes(true, true, &changes));
    assert!(!yes(true, false, &vec![]));
    for f in Fact::ALL {
        let v = classify_outcomes(&[outcome(&[(f, &[0])])]);
        assert!(!v.get(StrideCategory::Repudiation).is_yes(), "{f:?}");
    }
}

#[test]
fn report_arity_is_checked() {
    let err = build_report(&[("a".into(), "p".into())], &[], &[]).unwrap_err();
    assert_eq!(err, StrideError::ArityMismatch { profiles: 1, verdicts: 0 });
}

#[test]
fn empty_report_is_header_only() {
    let r = build_report(&[], &[], &[]).unwrap();
    assert_eq!(
        r.render_table(),
        "Device                  D     E     I     R     S     T\n\nDFD threats enumerated: 0\n"
    );
}

#[test]
fn table_lists_devices_in_order_with_evidence() {
    let a = Classification {
        verdict: StrideVerdict::from_letters("DS"),
        evidence: [(StrideCategory::DenialOfService, vec![4, 8]), (StrideCategory::Spoofing, vec![2])].into(),
    };
    let b = Classification::default();
    let profiles = [("Band A".to_string(), "pa".to_string()), ("Band B".to_string(), "pb".to_string())];
    let r = build_report(&profiles, &[a, b], &[]).unwrap();
    let table = r.render_table();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[1], "Band A                  Yes   No    No    No    Yes   No");
    assert_eq!(lines[2], "Band B                  No    No    No    No    No    No");
    assert!(table.contains("\nEvidence (capture seq):\n  Band A D: #4 #8\n  Band A S: #2\n"));
}

#[test]
fn report_json_is_byte_stable() {
    let threats = enumerate_threats(&shipped_dfd()).unwrap();
    let c = Classification {
        verdict: StrideVerdict::from_letters("T"),
        evidence: [(StrideCategory::Tampering, vec![1])].into(),
    };
    let make = || build_report(&[("x".into(), "y".into())], std::slice::from_ref(&c), &threats).unwrap().to_json();
    assert_eq!(make(), make());
    let back: serde_json::Value = serde_json::from_str(&make()).unwrap();
    assert_eq!(back["threat_count"], 90);
    assert_eq!(back["rows"][0]["verdict"]["tampering"], "yes");
}

#[test]
fn verdict_letters_roundtrip() {
    for letters in ["", "D", "EIS", "DEIRST"] {
        assert_eq!(StrideVerdict::from_letters(letters).letters(), letters);
    }
}
