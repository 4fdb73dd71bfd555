use std::collections::BTreeSet;
use std::path::Path;
use std::sync::{Arc, OnceLock};

use pal_core::corpus::{synthesize_corpus, Corpus, SynthConfig};
use pal_core::model::{pretrain, ModelConfig, PalModel};
use pal_core::Exec;
use pal_serve::Service;
use serde_json::{json, Value};

fn fixture() -> &'static (Corpus, PalModel) {
    static F: OnceLock<(Corpus, PalModel)> = OnceLock::new();
    F.get_or_init(|| {
        let corpus = synthesize_corpus(&SynthConfig {
            seed: 11,
            n_students: 80,
            n_courses: 8,
            videos_per_course: 8,
            mean_seq_len: 12,
            ..SynthConfig::default()
        })
        .unwrap();
        let cfg = ModelConfig {
            d: 16,
            max_len: 20,
            text_dim: 64,
            epochs: 3,
            batch_size: 8,
            ..ModelConfig::default()
        };
        let (model, _) = pretrain(&corpus, &cfg, None, Exec::Parallel).unwrap();
        (corpus, model)
    })
}

struct Server {
    base: String,
    client: reqwest::Client,
    task: tokio::task::JoinHandle<()>,
}

impl Server {
    async fn start(log: Option<&Path>) -> Server {
        let (corpus, model) = fixture().clone();
        let service = Arc::new(Service::new(corpus, model, log).unwrap());
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        let task = tokio::spawn(async move {
            pal_serve::serve(listener, service).await.unwrap();
        });
        Server {
            base: format!("http://{addr}"),
            client: reqwest::Client::new(),
            task,
        }
    }

    async fn get(&self, path: &str) -> (u16, Value) {
        let r = self.client.get(format!("{}{path}", self.base)).send().await.unwrap();
        (r.status().as_u16(), r.json().await.unwrap())
    }

    async fn watch(&self, student: &str, video: &str) -> (u16, Value) {
        let r = self
            .client
            .post(format!("{}/api/watch", self.base))
            .json(&json!({ "student": student, "video": video }))
            .send()
            .await
            .unwrap();
        (r.status().as_u16(), r.json().await.unwrap())
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        self.task.abort();
    }
}

fn ids(list: &Value) -> Vec<String> {
    list["videos"].as_array().unwrap().iter().map(|v| v["id"].as_str().unwrap().to_string()).collect()
}

fn courses_of(corpus: &Corpus, student: usize) -> BTreeSet<usize> {
    corpus
        .sequence_of(student)
        .map(|s| s.items.iter().map(|&v| corpus.videos[v].course).collect())
        .unwrap_or_default()
}

/// A concept linked to videos of several courses, plus two students whose
/// histories touch disjoint subsets of those courses.
fn cross_course_case(corpus: &Corpus) -> (String, String, String) {
    for (c, concept) in corpus.concepts.iter().enumerate() {
        let spans: BTreeSet<usize> = corpus
            .videos
            .iter()
            .filter(|v| v.concepts.contains(&c))
            .map(|v| v.course)
            .collect();
        if spans.len() < 2 {
            continue;
        }
        for a in 0..corpus.students.len() {
            let ca = courses_of(corpus, a);
            if ca.is_empty() || ca.is_disjoint(&spans) {
                continue;
            }
            for b in a + 1..corpus.students.len() {
                let cb = courses_of(corpus, b);
                if !cb.is_empty() && ca.is_disjoint(&cb) && !cb.is_disjoint(&spans) {
                    return (concept.id.clone(), corpus.students[a].clone(), corpus.students[b].clone());
                }
            }
        }
    }
    panic!("fixture has no cross-course concept");
}

#[tokio::test]
async fn search_tiers() {
    let srv = Server::start(None).await;
    let corpus = &fixture().0;
    let target = &corpus.concepts[3];
    let (status, body) = srv.get(&format!("/api/search?q={}", target.name.to_uppercase())).await;
    assert_eq!(status, 200);
    let results = body.as_array().unwrap();
    assert_eq!(results[0]["id"], target.id.as_str());
    assert_eq!(results[0]["tier"], "exact");
    assert!(results[0]["related"].as_array().unwrap().len() <= 5);
    for hit in results[0]["videos"].as_array().unwrap() {
        assert!(hit["position"].is_u64());
    }

    let prefix: String = target.name.chars().take(3).collect();
    let (_, body) = srv.get(&format!("/api/search?q={prefix}")).await;
    let results = body.as_array().unwrap();
    assert!(results.iter().any(|r| r["id"] == target.id.as_str()));
    let scores: Vec<f64> = results.iter().map(|r| r["score"].as_f64().unwrap()).collect();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));

    let (status, body) = srv.get("/api/search?q=zzzqqq").await;
    assert_eq!((status, body), (200, json!([])));
    let (status, body) = srv.get("/api/search").await;
    assert_eq!(status, 400);
    assert_eq!(body["error"], "bad_request");
}

#[tokio::test]
async fn relevance_order_is_total_and_stable() {
    let srv = Server::start(None).await;
    let corpus = &fixture().0;
    let concept = &corpus.concepts[corpus.videos[0].concepts[0]].id;
    let (status, a) = srv.get(&format!("/api/videos?concept={concept}")).await;
    assert_eq!(status, 200);
    assert_eq!(a["mode"], "relevance");
    let vids = a["videos"].as_array().unwrap();
    assert!(!vids.is_empty());
    for w in vids.windows(2) {
        let (s0, s1) = (w[0]["score"].as_f64().unwrap(), w[1]["score"].as_f64().unwrap());
        assert!(s0 > s1 || (s0 == s1 && w[0]["id"].as_str() < w[1]["id"].as_str()));
    }
    let (_, b) = srv.get(&format!("/api/videos?concept={concept}&mode=relevance")).await;
    assert_eq!(a, b);
    let (status, body) = srv.get("/api/videos?concept=NOPE").await;
    assert_eq!(status, 404);
    assert!(body["detail"].as_str().unwrap().contains("NOPE"));
    let (status, _) = srv.get(&format!("/api/videos?concept={concept}&mode=personal")).await;
    assert_eq!(status, 400);
}

#[tokio::test]
async fn personal_rankings_follow_history() {
    let srv = Server::start(None).await;
    let corpus = &fixture().0;
    let (concept, a, b) = cross_course_case(corpus);
    let (_, rel) = srv.get(&format!("/api/videos?concept={concept}")).await;
    let (_, pa) = srv.get(&format!("/api/videos?concept={concept}&mode=personal&student={a}")).await;
    let (_, pb) = srv.get(&format!("/api/videos?concept={concept}&mode=personal&student={b}")).await;
    assert_eq!(pa["fallback"], false);
    let sorted = |v: &Value| {
        let mut x = ids(v);
        x.sort();
        x
    };
    assert_eq!(sorted(&pa), sorted(&rel));
    assert_ne!(pa["videos"], pb["videos"]);
}

#[tokio::test]
async fn watch_feeds_back() {
    let srv = Server::start(None).await;
    let corpus = &fixture().0;
    let student = &corpus.students[0];
    let (_, h0) = srv.get(&format!("/api/student/{student}/history")).await;
    let n0 = h0["history"].as_array().unwrap().len();

    let course = corpus.videos[corpus.sequence_of(0).unwrap().items[0]].course;
    let concept = corpus.videos[corpus.course_videos(course)[0]].concepts[0];
    let concept = &corpus.concepts[concept].id;
    let url = format!("/api/videos?concept={concept}&mode=personal&student={student}");
    let (_, before) = srv.get(&url).await;

    let last = corpus.sequence_of(0).unwrap().items.last().copied().unwrap();
    let pick = corpus.course_videos(course).iter().copied().find(|&v| v != last).unwrap();
    let vid = &corpus.videos[pick].id;
    let (status, body) = srv.watch(student, vid).await;
    assert_eq!(status, 200);
    assert_eq!(body["history_length"], n0 + 1);
    let (_, body) = srv.watch(student, vid).await;
    assert_eq!(body["history_length"], n0 + 1);

    let (_, h1) = srv.get(&format!("/api/student/{student}/history")).await;
    assert_eq!(h1["history"].as_array().unwrap().last().unwrap(), vid.as_str());
    let (_, after) = srv.get(&url).await;
    assert_ne!(before["videos"], after["videos"]);

    let (status, body) = srv.watch(student, "V9999").await;
    assert_eq!(status, 404);
    assert_eq!(body["error"], "not_found");
    let (status, _) = srv.get("/api/student/S9999/history").await;
    assert_eq!(status, 404);
}

#[tokio::test]
async fn event_log_replays_after_restart() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("events.jsonl");
    let corpus = &fixture().0;
    let student = &corpus.students[1];
    let concept = &corpus.concepts[0].id;
    let url = format!("/api/videos?concept={concept}&mode=personal&student={student}");
    let (history, ranking) = {
        let srv = Server::start(Some(&log)).await;
        for v in [&corpus.videos[2].id, &corpus.videos[5].id, &corpus.videos[7].id] {
            assert_eq!(srv.watch(student, v).await.0, 200);
        }
        (srv.get(&format!("/api/student/{student}/history")).await.1, srv.get(&url).await.1)
    };
    assert_eq!(std::fs::read_to_string(&log).unwrap().lines().count(), 3);
    let srv = Server::start(Some(&log)).await;
    assert_eq!(srv.get(&format!("/api/student/{student}/history")).await.1, history);
    assert_eq!(srv.get(&url).await.1, ranking);
}

#[tokio::test]
async fn cors_headers_present() {
    let srv = Server::start(None).await;
    let r = srv
        .client
        .get(format!("{}/api/search?q=a", srv.base))
        .header("Origin", "http://localhost:5173")
        .send()
        .await
        .unwrap();
    assert!(r.headers().contains_key("access-control-allow-origin"));
}
