use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use proptest::prelude::*;

use super::*;
use crate::ingest::CompanyKey;

fn award(company: &str, amount: f64, year: i32, phase: Phase, agency: &str, topic: &str) -> CleanAward {
    CleanAward {
        company: CompanyKey::from_normalized(company),
        amount,
        year,
        phase,
        agency: agency.into(),
        topic: topic.into(),
        topic_code: topic.into(),
    }
}

fn p1(company: &str, amount: f64, year: i32, agency: &str, topic: &str) -> CleanAward {
    award(company, amount, year, Phase::I, agency, topic)
}

const SPEC: FeatureSpec = FeatureSpec {
    cutoff_year: 2018,
    dataset_min_year: 2005,
};

#[test]
fn single_award_company_features() {
    let a = [p1("A", 150000.0, 2015, "DOD", "AF")];
    let f = company_features(&a, &SPEC);
    let ln150001 = libm::log(150001.0);
    assert!((f[0] - ln150001).abs() < 1e-12);
    assert!((f[0] - 11.9184).abs() < 1e-4);
    assert!((f[1] - core::f64::consts::LN_2).abs() < 1e-15);
    assert_eq!(f[2], 1.0);
    assert_eq!(f[3], 1.0);
    assert!((f[4] - ln150001).abs() < 1e-12);
    assert_eq!(f[5], 1.0);
    assert!((f[6] - 10.0 / 12.0).abs() < 1e-15);
}

#[test]
fn company_features_ignore_phase_two_and_post_cutoff() {
    let base = vec![
        p1("A", 100.0, 2010, "DOD", "AF"),
        p1("A", 300.0, 2014, "NSF", "N"),
    ];
    let f = company_features(&base, &SPEC);
    assert!((f[0] - libm::log(401.0)).abs() < 1e-12);
    assert_eq!(f[3], 5.0);
    assert_eq!(f[2], 2.0);
    let mut more = base.clone();
    more.push(award("A", 1e6, 2012, Phase::II, "DOE", "X"));
    more.push(p1("A", 1e6, 2018, "DOE", "X"));
    assert_eq!(company_features(&more, &SPEC), f);
    assert_eq!(company_features(&more[2..], &SPEC), [0.0; 7]);
    assert_eq!(company_features(&[], &SPEC), [0.0; 7]);
}

#[test]
fn recency_is_clipped_to_unit_interval() {
    let spec = FeatureSpec {
        cutoff_year: 2018,
        dataset_min_year: 2010,
    };
    let old = [p1("A", 1.0, 2001, "D", "T")];
    assert_eq!(company_features(&old, &spec)[6], 0.0);
    let newest = [p1("A", 1.0, 2017, "D", "T")];
    assert_eq!(company_features(&newest, &spec)[6], 1.0);
}

#[test]
fn topic_feature_examples() {
    let one = [p1("A", 1.0, 2010, "D", "T")];
    let f = topic_features(&one, &SPEC);
    assert_eq!(f, [libm::log(2.0), libm::log(2.0)]);
    assert_eq!(topic_features(&[], &SPEC), [0.0, 0.0]);
    let five = [
        p1("A", 1.0, 2010, "D", "T"),
        p1("A", 1.0, 2011, "D", "T"),
        p1("B", 1.0, 2010, "D", "T"),
        p1("C", 1.0, 2012, "D", "T"),
        p1("C", 1.0, 2013, "D", "T"),
        award("D", 1.0, 2013, Phase::II, "D", "T"),
    ];
    let f = topic_features(&five, &SPEC);
    assert!((f[0] - libm::log(4.0)).abs() < 1e-15);
    assert!((f[1] - libm::log(6.0)).abs() < 1e-15);
}

#[test]
fn agency_feature_examples() {
    let two = [p1("A", 50000.0, 2010, "D", "T"), p1("B", 150000.0, 2011, "D", "T")];
    let f = agency_features(&two, &SPEC);
    assert!((f[0] - libm::log(3.0)).abs() < 1e-15);
    assert!((f[1] - libm::log(200001.0)).abs() < 1e-12);
    assert!((f[2] - libm::log(100001.0)).abs() < 1e-12);
    assert_eq!(agency_features(&[], &SPEC), [0.0; 3]);
    let zero = [p1("A", 0.0, 2010, "D", "T")];
    assert_eq!(agency_features(&zero, &SPEC), [libm::log(2.0), 0.0, 0.0]);
}

#[test]
fn minmax_examples() {
    let m = Matrix::from_vec(3, 1, vec![2.0, 4.0, 6.0]);
    assert_eq!(minmax_normalize(&m).data(), &[0.0, 0.5, 1.0]);
    let c = Matrix::from_vec(2, 1, vec![5.0, 5.0]);
    assert_eq!(minmax_normalize(&c).data(), &[0.0, 0.0]);
    let u = Matrix::from_vec(3, 1, vec![0.0, 0.25, 1.0]);
    assert_eq!(minmax_normalize(&u), u);
}

proptest! {
    #[test]
    fn minmax_is_bounded_and_idempotent(
        rows in 1usize..12,
        cols in 1usize..4,
        seed in any::<u64>(),
    ) {
        use rand::Rng;
        let mut r = rng::stream(seed, 0);
        let m = Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| r.random_range(-50.0..50.0)).collect());
        let once = minmax_normalize(&m);
        prop_assert!(once.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let twice = minmax_normalize(&once);
        prop_assert!(once.max_abs_diff(&twice) < 1e-12);
    }
}

#[test]
fn modal_topic_and_tie_rules() {
    let a = [
        p1("A", 1.0, 2010, "D", "AF"),
        p1("A", 1.0, 2011, "D", "AF"),
        p1("A", 1.0, 2009, "D", "N"),
    ];
    assert_eq!(primary_topic(&a, &SPEC).as_deref(), Some("AF"));
    let tie_year = [p1("A", 1.0, 2016, "D", "AF"), p1("A", 1.0, 2015, "D", "N")];
    assert_eq!(primary_topic(&tie_year, &SPEC).as_deref(), Some("N"));
    let tie_lex = [p1("A", 1.0, 2015, "D", "N"), p1("A", 1.0, 2015, "D", "AF")];
    assert_eq!(primary_topic(&tie_lex, &SPEC).as_deref(), Some("AF"));
    assert_eq!(primary_topic(&[award("A", 1.0, 2015, Phase::II, "D", "AF")], &SPEC), None);
    let agencies = [
        p1("A", 1.0, 2015, "NSF", "T"),
        p1("A", 1.0, 2012, "DOD", "T"),
        p1("A", 1.0, 2016, "NSF", "T"),
    ];
    assert_eq!(primary_agency(&agencies, &SPEC).as_deref(), Some("NSF"));
}

#[test]
fn decode_pair_enumerates_all_pairs_in_order() {
    for m in 2..9 {
        let mut expected = Vec::new();
        for i in 0..m {
            for j in i + 1..m {
                expected.push((i, j));
            }
        }
        let got: Vec<_> = (0..expected.len()).map(|p| decode_pair(p, m)).collect();
        assert_eq!(got, expected);
    }
}

fn degrees(pairs: &[(usize, usize)], n: usize) -> Vec<usize> {
    let mut d = vec![0; n];
    for &(a, b) in pairs {
        d[a] += 1;
        d[b] += 1;
    }
    d
}

#[test]
fn co_topic_small_groups() {
    let caps = EdgeCaps::default();
    assert_eq!(build_co_topic_edges(&[Some("T"), Some("T")], caps, 1), vec![(0, 1)]);
    assert!(build_co_topic_edges(&[Some("T")], caps, 1).is_empty());
    assert!(build_co_topic_edges(&[Some("T"), Some("U"), None], caps, 1).is_empty());
    // fewer candidates than the cap: every pair is taken
    let five = vec![Some("T"); 5];
    assert_eq!(build_co_topic_edges(&five, caps, 3).len(), 10);
}

#[test]
fn co_topic_caps_on_large_group() {
    let caps = EdgeCaps::default();
    let topics = vec![Some("T"); 200];
    let pairs = build_co_topic_edges(&topics, caps, 42);
    assert_eq!(pairs.len(), 50);
    assert!(degrees(&pairs, 200).iter().all(|&d| d <= 20));
    assert!(pairs.iter().all(|(a, b)| a < b));
    let unique: BTreeSet<_> = pairs.iter().collect();
    assert_eq!(unique.len(), pairs.len());
    assert_eq!(build_co_topic_edges(&topics, caps, 42), pairs);
    assert_ne!(build_co_topic_edges(&topics, caps, 43), pairs);
}

#[test]
fn co_topic_node_cap_binds() {
    let caps = EdgeCaps {
        per_group: 50,
        per_node: 1,
    };
    let topics = vec![Some("T"); 7];
    let pairs = build_co_topic_edges(&topics, caps, 5);
    // a matching on 7 nodes has at most 3 edges, and greedy exhaustion reaches a maximal one
    assert_eq!(pairs.len(), 3);
    assert!(degrees(&pairs, 7).iter().all(|&d| d <= 1));
}

proptest! {
    #[test]
    fn co_topic_respects_caps(
        assignment in proptest::collection::vec(0u8..4, 0..120),
        per_group in 1usize..60,
        per_node in 1usize..6,
        seed in any::<u64>(),
    ) {
        let names = ["A", "B", "C", "D"];
        let topics: Vec<Option<&str>> = assignment.iter().map(|&t| Some(names[t as usize])).collect();
        let caps = EdgeCaps { per_group, per_node };
        let pairs = build_co_topic_edges(&topics, caps, seed);
        prop_assert!(degrees(&pairs, topics.len()).iter().all(|&d| d <= per_node));
        for name in names {
            let n = pairs.iter().filter(|(a, _)| topics[*a] == Some(name)).count();
            prop_assert!(n <= per_group);
        }
        prop_assert!(pairs.iter().all(|(a, b)| a < b && topics[*a] == topics[*b]));
    }
}

fn fixture() -> Vec<CleanAward> {
    vec![
        p1("ACME", 100000.0, 2010, "DOD", "AF"),
        p1("ACME", 120000.0, 2012, "DOD", "AF"),
        p1("BETA", 90000.0, 2011, "NSF", "AF"),
        p1("GAMMA", 50000.0, 2015, "NSF", "N"),
        p1("DELTA", 75000.0, 2016, "DOD", "AF"),
        award("ACME", 750000.0, 2013, Phase::II, "DOD", "AF"),
        p1("LATE", 1000.0, 2019, "DOE", "Z"),
    ]
}

#[test]
fn build_graph_schema() {
    let (g, log) = build_graph(&fixture(), &SPEC, EdgeCaps::default(), 7).unwrap();
    assert_eq!(g.company_ids(), &["ACME", "BETA", "DELTA", "GAMMA"]);
    assert_eq!(g.nodes(NodeType::Topic).ids, vec![String::from("AF"), "N".into()]);
    assert_eq!(g.nodes(NodeType::FundingAgency).ids, vec![String::from("DOD"), "NSF".into()]);
    assert_eq!(g.features(NodeType::Company).shape(), (4, 7));
    assert_eq!(g.features(NodeType::Topic).shape(), (2, 2));
    assert_eq!(g.features(NodeType::FundingAgency).shape(), (2, 3));
    for t in NodeType::ALL {
        assert!(g.features(t).data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
    assert_eq!(g.edges(Relation::OperatesIn), &[(0, 0), (1, 0), (2, 0), (3, 1)]);
    assert_eq!(g.edges(Relation::AwardedBy), &[(0, 0), (1, 1), (2, 0), (3, 1)]);
    // AF group has 3 companies: all 3 pairs fit under the caps
    assert_eq!(g.edges(Relation::CoTopic), &[(0, 1), (0, 2), (1, 2)]);
    for r in Relation::FORWARD {
        let fwd = g.edges(r);
        let rev = g.edges(r.reverse());
        assert_eq!(fwd.len(), rev.len());
        assert!(fwd.iter().all(|&(s, t)| rev.contains(&(t, s))));
    }
    assert!(g.is_reversed());
    assert_eq!(log.ignored_awards, 2);
    assert_eq!(log.qualifying_awards, 5);
    assert_eq!(log.co_topic_pairs, 3);
}

#[test]
fn single_company_single_award() {
    let awards = [p1("SOLO", 1000.0, 2010, "NSF", "AF")];
    let (g, _) = build_graph(&awards, &SPEC, EdgeCaps::default(), 0).unwrap();
    for t in NodeType::ALL {
        assert_eq!(g.num_nodes(t), 1);
    }
    assert_eq!(g.edges(Relation::OperatesIn), &[(0, 0)]);
    assert_eq!(g.edges(Relation::RevOperatesIn), &[(0, 0)]);
    assert_eq!(g.edges(Relation::AwardedBy), &[(0, 0)]);
    assert_eq!(g.edges(Relation::RevAwardedBy), &[(0, 0)]);
    assert!(g.edges(Relation::CoTopic).is_empty());
    assert!(g.edges(Relation::RevCoTopic).is_empty());
    assert_eq!(g.num_edges(), 4);
}

#[test]
fn empty_graph_is_an_error() {
    assert_eq!(
        build_graph(&[], &SPEC, EdgeCaps::default(), 0).unwrap_err(),
        Error::EmptyGraph
    );
    let late_only = [p1("LATE", 1.0, 2019, "D", "T")];
    assert_eq!(
        build_graph(&late_only, &SPEC, EdgeCaps::default(), 0).unwrap_err(),
        Error::EmptyGraph
    );
}

#[test]
fn reverse_edges_double_and_only_once() {
    let (g, _) = build_graph(&fixture(), &SPEC, EdgeCaps::default(), 7).unwrap();
    let forward: usize = Relation::FORWARD.iter().map(|r| g.edges(*r).len()).sum();
    assert_eq!(g.num_edges(), 2 * forward);
    assert_eq!(add_reverse_edges(g).unwrap_err(), Error::AlreadyReversed);

    let empty_nodes = || NodeTable {
        ids: vec![],
        features: Matrix::zeros(0, 0),
    };
    let nodes = [
        NodeTable {
            ids: vec![],
            features: Matrix::zeros(0, 7),
        },
        NodeTable {
            features: Matrix::zeros(0, 2),
            ..empty_nodes()
        },
        NodeTable {
            features: Matrix::zeros(0, 3),
            ..empty_nodes()
        },
    ];
    let empty = HeteroGraph::from_parts(nodes, Default::default(), false).unwrap();
    let rev = add_reverse_edges(empty).unwrap();
    assert_eq!(rev.num_edges(), 0);
}

#[test]
fn temporal_integrity_under_injection() {
    let base = fixture();
    let (g0, _) = build_graph(&base, &SPEC, EdgeCaps::default(), 9).unwrap();
    let mut injected = base.clone();
    injected.push(award("ACME", 5e6, 2011, Phase::II, "DOE", "NEW"));
    injected.push(award("NEWCO", 5e6, 2011, Phase::II, "DOE", "NEW"));
    injected.push(p1("BETA", 5e6, 2020, "DOE", "NEW"));
    injected.push(p1("ZED", 5e6, 2018, "DOE", "NEW"));
    let (g1, _) = build_graph(&injected, &SPEC, EdgeCaps::default(), 9).unwrap();
    assert_eq!(g0, g1);
}

#[test]
fn from_parts_validates() {
    let (g, _) = build_graph(&fixture(), &SPEC, EdgeCaps::default(), 7).unwrap();
    let nodes = [
        g.nodes(NodeType::Company).clone(),
        g.nodes(NodeType::Topic).clone(),
        g.nodes(NodeType::FundingAgency).clone(),
    ];
    let mut edges: [Vec<(usize, usize)>; 6] = Default::default();
    edges[Relation::OperatesIn.index()] = vec![(0, 5)];
    assert!(HeteroGraph::from_parts(nodes.clone(), edges, true).is_err());
    let mut edges: [Vec<(usize, usize)>; 6] = Default::default();
    edges[Relation::CoTopic.index()] = vec![(1, 1)];
    assert!(HeteroGraph::from_parts(nodes.clone(), edges, true).is_err());
    let mut edges: [Vec<(usize, usize)>; 6] = Default::default();
    edges[Relation::CoTopic.index()] = vec![(0, 1), (0, 1)];
    assert!(HeteroGraph::from_parts(nodes, edges, true).is_err());
}

#[test]
fn relation_schema() {
    assert_eq!(Relation::ALL.len(), 6);
    for r in Relation::FORWARD {
        assert_eq!(r.reverse().reverse(), r);
        assert_eq!(r.source(), r.reverse().target());
        assert_eq!(r.target(), r.reverse().source());
        assert_eq!(r.source(), NodeType::Company);
        assert_eq!(Relation::from_name(r.as_str()), Some(r));
    }
    assert_eq!(Relation::CoTopic.target(), NodeType::Company);
}

#[test]
fn spec_validation() {
    let bad = FeatureSpec {
        cutoff_year: 2000,
        dataset_min_year: 2000,
    };
    assert_eq!(bad.validate().unwrap_err().code(), "invalid_config");
}
