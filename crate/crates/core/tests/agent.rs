use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::Mutex;

use proptest::prelude::*;
use sensorfleet::agent::judge::parse_estimates;
use sensorfleet::agent::llm::EndpointConfig;
use sensorfleet::agent::*;
use sensorfleet::fleet::*;
use sensorfleet::geometry::GeometryProfile;
use sensorfleet::interp::{DimensionDictionary, MetricKind, SkillEntry, SkillMatrix};
use sensorfleet::ndcore::stats::median;
use sensorfleet::ndcore::{RngStream, Tensor};
use sensorfleet::synthgen::*;
use sensorfleet::Result;

struct Fixture {
    corpus: PatchCorpus,
    cards: Vec<ReferenceCard>,
    indexes: BTreeMap<Source, ModalityIndex>,
}

fn standardized(col: &[f64]) -> Vec<f64> {
    let m = col.iter().sum::<f64>() / col.len() as f64;
    let s = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / col.len() as f64).sqrt().max(1e-12);
    col.iter().map(|v| (v - m) / s).collect()
}

/// Specialist "embeddings" are noisy label copies; the generalist is pure
/// noise, so specialist retrieval is strictly better grounded.
fn fixture() -> Fixture {
    let world = generate_world(2, &WorldConfig { rows: 256, cols: 256, ..WorldConfig::default() }).unwrap();
    let corpus = sample_patches(&world, &CorpusConfig { n_patches: 200, ..CorpusConfig::default() }, 2).unwrap();
    let labels: Vec<Vec<f64>> = Variable::CONTINUOUS.iter().map(|&v| standardized(&corpus.label_column(v))).collect();
    let mut indexes = BTreeMap::new();
    for (si, s) in Source::ALL.iter().enumerate() {
        let mut rng = RngStream::new(40 + si as u64);
        let rows: Vec<Vec<f64>> = (0..corpus.len())
            .map(|i| {
                (0..8)
                    .map(|d| if *s == Source::Generalist || d >= 5 { rng.normal() } else { labels[d][i] + 0.05 * rng.normal() })
                    .collect()
            })
            .collect();
        let e = Tensor::from_rows(&rows).unwrap();
        indexes.insert(*s, build_index(*s, &e, Metric::SquaredEuclidean).unwrap());
    }
    let skill = SkillMatrix {
        entries: Source::ALL
            .iter()
            .flat_map(|&s| {
                Variable::ALL.map(|v| SkillEntry {
                    variable: v,
                    source: s,
                    metric: if v.is_categorical() { MetricKind::Accuracy } else { MetricKind::R2 },
                    value: 0.5,
                    n_folds: 5,
                })
            })
            .collect(),
    };
    let profile = GeometryProfile {
        global_pr: 4.0,
        mle_id: 3.0,
        local_n80_mean: 2.0,
        local_n80_std: 0.1,
        local_pr_mean: 1.5,
        probe_count: 100,
        k_neighbors: 20,
        dominant_dim_histogram: BTreeMap::new(),
        duplicates_removed: 0,
        embedding_dim: 8,
    };
    let cards = Modality::ALL
        .iter()
        .map(|&m| make_card(m, &DimensionDictionary::default(), &profile, &skill, &default_signal(m)).unwrap())
        .collect();
    Fixture { corpus, cards, indexes }
}

#[test]
fn rule_router_trace_examples() {
    let f = fixture();
    let plan = route_rules("standing water beneath cloud cover after the storm", &f.cards).unwrap();
    assert!(plan.selects(Modality::Sar), "{plan:?}");
    assert!(!plan.selects(Modality::Optical));
    let plan = route_rules("what is the elevation and slope here", &f.cards).unwrap();
    assert!(plan.selects(Modality::Toposoil), "{plan:?}");
    assert!(route_rules("  ", &f.cards).is_err());
    assert!(route_rules("elevation", &f.cards[..4]).is_err());
}

#[test]
fn builtin_questions_hit_every_expectation() {
    let f = fixture();
    let qs = builtin_questions(256, 256);
    let plans: Vec<Plan> = qs.iter().map(|q| route_rules(&q.text, &f.cards).unwrap()).collect();
    for (p, q) in plans.iter().zip(&qs) {
        p.validate().unwrap();
        assert!(q.expected.is_empty() || q.expected.iter().any(|&m| p.selects(m)), "{}: {:?}", q.text, p);
    }
    assert_eq!(hit_rate(&plans, &qs), Some(1.0));
    assert!(plans[30..].iter().filter(|p| p.include_generalist).count() >= 8);
}

fn plan_of(ms: &[Modality]) -> Plan {
    Plan {
        modalities: ms.to_vec(),
        include_generalist: false,
        rationale: String::new(),
        router: "test".into(),
        fallback: false,
        retries: 0,
    }
}

fn question(expected: &[Modality]) -> Question {
    Question {
        id: "t".into(),
        text: "x".into(),
        location: None,
        category: Category::SingleModality,
        expected: expected.to_vec(),
        variables: vec![],
    }
}

#[test]
fn hit_rate_examples() {
    use Modality::*;
    assert_eq!(hit_rate(&[plan_of(&[Sar, Toposoil])], &[question(&[Sar])]), Some(1.0));
    assert_eq!(hit_rate(&[plan_of(&[Optical])], &[question(&[Thermal])]), Some(0.0));
    assert_eq!(hit_rate(&[plan_of(&[Optical])], &[question(&[])]), None);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hit_rate_is_monotone(masks in prop::collection::vec((1u8..32, 0u8..32), 1..12), extra in 0usize..5) {
        let pick = |m: u8| -> Vec<Modality> { Modality::ALL.into_iter().filter(|x| m & (1 << x.index()) != 0).collect() };
        let plans: Vec<Plan> = masks.iter().map(|&(p, _)| plan_of(&pick(p))).collect();
        let qs: Vec<Question> = masks.iter().map(|&(_, e)| question(&pick(e))).collect();
        let before = hit_rate(&plans, &qs);
        let grown: Vec<Plan> = plans.iter().map(|p| {
            let mut p = p.clone();
            let m = Modality::ALL[extra];
            if !p.selects(m) { p.modalities.push(m); }
            p
        }).collect();
        let after = hit_rate(&grown, &qs);
        prop_assert_eq!(before.is_some(), after.is_some());
        if let (Some(b), Some(a)) = (before, after) {
            prop_assert!(a >= b);
        }
    }
}

/// Replays canned replies in order.
struct Scripted {
    replies: Mutex<Vec<Result<String>>>,
    calls: Mutex<usize>,
}

impl Scripted {
    fn new(replies: Vec<Result<String>>) -> Self {
        Self { replies: Mutex::new(replies), calls: Mutex::new(0) }
    }
}

impl ChatClient for Scripted {
    fn complete(&self, _: Role, _: &str, _: &str) -> Result<String> {
        *self.calls.lock().unwrap() += 1;
        self.replies.lock().unwrap().remove(0)
    }

    fn name(&self) -> String {
        "scripted".into()
    }
}

#[test]
fn llm_router_contracts() {
    let f = fixture();
    let good = r#"{"modalities": ["thermal", "sar"], "include_generalist": true, "rationale": "heat and moisture"}"#;
    let c = Scripted::new(vec![Ok(good.into())]);
    let p = route_llm("anything", &f.cards, &c).unwrap();
    assert_eq!(p.modalities, vec![Modality::Thermal, Modality::Sar]);
    assert!(p.include_generalist && !p.fallback && p.retries == 0);
    assert_eq!(p.rationale, "heat and moisture");

    let c = Scripted::new(vec![Ok("I think thermal.".into()), Ok(format!("```json\n{good}\n```"))]);
    let p = route_llm("anything", &f.cards, &c).unwrap();
    assert_eq!((p.retries, *c.calls.lock().unwrap()), (1, 2));

    let c = Scripted::new(vec![Ok("{\"modalities\": []}".into()), Ok("{\"modalities\": [\"lidar\"]}".into())]);
    let q = "what is the elevation and slope here";
    let p = route_llm(q, &f.cards, &c).unwrap();
    assert!(p.fallback);
    assert_eq!(p.modalities, route_rules(q, &f.cards).unwrap().modalities);
}

#[test]
fn unreachable_endpoint_falls_back() {
    let f = fixture();
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let client = HttpChatClient::new(
        format!("http://127.0.0.1:{port}/v1/chat/completions"),
        None,
        EndpointConfig { timeout_secs: 2, ..EndpointConfig::default() },
        None,
    );
    let q = "is the soil wet under the overcast";
    let p = route_llm(q, &f.cards, &client).unwrap();
    assert!(p.fallback);
    assert_eq!(p.modalities, route_rules(q, &f.cards).unwrap().modalities);
}

#[test]
fn http_client_round_trip_is_logged() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = listener.local_addr().unwrap().port();
    let server = std::thread::spawn(move || {
        let (mut stream, _) = listener.accept().unwrap();
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        let mut len = 0;
        let mut auth = String::new();
        loop {
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            let lower = line.to_lowercase();
            if let Some(v) = lower.strip_prefix("content-length:") {
                len = v.trim().parse().unwrap();
            }
            if lower.starts_with("authorization:") {
                auth = line.trim().to_string();
            }
            if line == "\r\n" {
                break;
            }
        }
        let mut body = vec![0; len];
        reader.read_exact(&mut body).unwrap();
        let reply = r#"{"choices":[{"message":{"role":"assistant","content":"{\"grounding\":5,\"accuracy\":4,\"completeness\":3,\"coherence\":4,\"utility\":5}"}}]}"#;
        write!(stream, "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}", reply.len()).unwrap();
        (String::from_utf8(body).unwrap(), auth)
    });
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("llm.jsonl");
    let client = HttpChatClient::new(
        format!("http://127.0.0.1:{port}/v1/chat/completions"),
        Some("secret".into()),
        EndpointConfig::default(),
        Some(log.clone()),
    );
    let score = judge_llm(&question(&[]), "an answer", &client, RubricWeights::default()).unwrap();
    assert_eq!(score.total, 4.2);
    let (body, auth) = server.join().unwrap();
    assert!(body.contains("\"model\"") && body.contains("an answer"));
    assert_eq!(auth.to_lowercase(), "authorization: bearer secret");
    let logged = std::fs::read_to_string(&log).unwrap();
    assert_eq!(logged.lines().count(), 1);
    assert!(logged.contains("\"role\":\"judge\""));
}

#[test]
fn retrieval_shapes() {
    let f = fixture();
    let ctx = context_patch(&f.corpus, Some((40, 70)), None).unwrap();
    assert!(context_patch(&f.corpus, None, None).is_err());
    assert_eq!(context_patch(&f.corpus, None, Some(3)).unwrap(), 3);
    let b = retrieve(&[Source::Specialist(Modality::Thermal)], &f.indexes, &f.corpus, ctx, 5, 1).unwrap();
    assert_eq!(b.groups.len(), 1);
    assert_eq!(b.groups[0].neighbors.len(), 5);
    assert_eq!((b.groups[0].neighbors[0].id, b.groups[0].neighbors[0].distance), (ctx, 0.0));
    assert!(b.groups[0].neighbors.iter().all(|n| n.id < f.corpus.len() && n.labels == f.corpus.labels[n.id]));
}

#[test]
fn bundle_sources_follow_random_plans() {
    let f = fixture();
    let mut rng = RngStream::new(77);
    for _ in 0..100 {
        let mask = 1 + rng.index(31);
        let mut plan = plan_of(&Modality::ALL.into_iter().filter(|m| mask & (1 << m.index()) != 0).collect::<Vec<_>>());
        plan.include_generalist = rng.uniform() < 0.5;
        let b = retrieve(&plan.sources(), &f.indexes, &f.corpus, rng.index(f.corpus.len()), 3, 1).unwrap();
        assert_eq!(b.sources(), plan.sources());
    }
}

#[test]
fn offline_synthesis_contract() {
    let f = fixture();
    let q = Question {
        id: "q".into(),
        text: "How warm is it and how wet is the soil?".into(),
        location: Some((10, 10)),
        category: Category::MultiModality,
        expected: vec![Modality::Thermal],
        variables: vec![Variable::Temperature],
    };
    let ctx = context_patch(&f.corpus, q.location, None).unwrap();
    let sources = [Source::Specialist(Modality::Thermal), Source::Specialist(Modality::Sar), Source::Generalist];
    let b = retrieve(&sources, &f.indexes, &f.corpus, ctx, 6, 1).unwrap();
    let a = synthesize_offline(&q, &b).unwrap();
    assert_eq!(a, synthesize_offline(&q, &b).unwrap());
    for s in &sources {
        assert!(a.contains(&format!("[{}]", s.name())), "{a}");
    }
    // Oracle: median over distinct neighbour ids other than the context patch.
    let mut ids: Vec<usize> = b.groups.iter().flat_map(|g| g.neighbors.iter().map(|n| n.id)).filter(|&i| i != ctx).collect();
    ids.sort();
    ids.dedup();
    let mut temps: Vec<f64> = ids.iter().map(|&i| f.corpus.labels[i].temperature).collect();
    temps.sort_by(f64::total_cmp);
    let m = temps.len();
    let oracle = if m % 2 == 1 { temps[m / 2] } else { 0.5 * (temps[m / 2 - 1] + temps[m / 2]) };
    assert_eq!(median(&temps), oracle);
    let est = parse_estimates(&a);
    let t = est.iter().find(|e| e.0 == Variable::Temperature).unwrap().1;
    assert_eq!(t, oracle);
    assert!(est.iter().any(|e| e.0 == Variable::SoilMoisture));
    let empty = RetrievalBundle { context_patch: 0, location: (0, 0), groups: vec![] };
    assert!(synthesize_offline(&q, &empty).is_err());
}

#[test]
fn statistics_examples() {
    assert!((cohens_d(&[0.0, 2.0], &[0.0, 0.0]).unwrap() - 0.5f64.sqrt()).abs() < 1e-6);
    assert!(cohens_d(&[3.0, 4.0], &[3.0, 4.0]).is_err());
    assert!(cohens_d_deltas(&[1.0, 1.0, 1.0]).is_err());
    assert_eq!(paired_bootstrap_p(&[0.0; 10], 1000, 3).unwrap(), 1.0);
    assert_eq!(paired_bootstrap_p(&[1.0; 10], 1000, 3).unwrap(), 1e-3);
    let sym: Vec<f64> = (0..20).map(|i| if i % 2 == 0 { -1.0 } else { 1.0 }).collect();
    assert_eq!(paired_bootstrap_p(&sym, 10_000, 3).unwrap(), 1.0);
    let mut near = sym.clone();
    near[0] = -0.9;
    assert!(paired_bootstrap_p(&near, 10_000, 3).unwrap() >= 0.5);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cohens_d_sign_and_scale(a in prop::collection::vec(-5.0f64..5.0, 3..20), shift in -1.0f64..1.0, scale in 0.1f64..10.0) {
        let b: Vec<f64> = a.iter().enumerate().map(|(i, x)| x + shift + 0.1 * (i as f64).sin()).collect();
        if let Ok(d) = cohens_d(&a, &b) {
            let mean: f64 = a.iter().zip(&b).map(|(x, y)| x - y).sum::<f64>() / a.len() as f64;
            prop_assert_eq!(d > 0.0, mean > 0.0);
            let sa: Vec<f64> = a.iter().map(|x| x * scale).collect();
            let sb: Vec<f64> = b.iter().map(|x| x * scale).collect();
            prop_assert!((cohens_d(&sa, &sb).unwrap() - d).abs() < 1e-9 * d.abs().max(1.0));
        }
    }
}

fn run_eval(f: &Fixture, qs: &[Question]) -> EvalReport {
    let inputs = EvalInputs {
        questions: qs,
        cards: &f.cards,
        indexes: &f.indexes,
        corpus: &f.corpus,
        router: Router::Rules,
        synthesizer: None,
        judges: vec![Judge::Heuristic],
    };
    evaluate(&inputs, &EvalConfig { bootstrap: 2000, ..EvalConfig::default() }).unwrap()
}

#[test]
fn evaluation_report_shape_and_determinism() {
    let f = fixture();
    let qs = builtin_questions(256, 256);
    let r = run_eval(&f, &qs);
    assert!(r.failures.is_empty(), "{:?}", r.failures);
    assert_eq!(r.scores.len(), qs.len() * 3);
    assert_eq!(r.hit_rate, Some(1.0));
    for c in r.contrasts.iter().filter(|c| c.category == "all") {
        assert_eq!(c.improved + c.declined + c.tied, qs.len());
    }
    assert_eq!(r.contrasts.len(), 3 * 5);
    assert_eq!(r.to_json().unwrap(), run_eval(&f, &qs).to_json().unwrap());
    let single = r
        .contrasts
        .iter()
        .find(|c| c.category == "single_modality" && c.contrast == "fleet_only_vs_generalist_only")
        .unwrap();
    assert!(single.cohens_d.unwrap() > 0.0, "{single:?}");

    let dir = tempfile::tempdir().unwrap();
    r.write(dir.path()).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("scores.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + qs.len() * 3);
}

#[test]
fn failures_are_recorded() {
    let f = fixture();
    let mut qs = builtin_questions(256, 256)[..3].to_vec();
    qs[1].location = None;
    let r = run_eval(&f, &qs);
    assert_eq!(r.failures.len(), 1);
    assert_eq!((r.failures[0].question_id.as_str(), r.failures[0].stage.as_str()), ("q02", "context"));
    assert_eq!(r.scores.len(), 6);
}

#[test]
fn questions_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("questions.json");
    let qs = builtin_questions(64, 64);
    save_questions(&path, &qs).unwrap();
    assert_eq!(load_questions(&path).unwrap(), qs);
}
