use std::collections::HashMap;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Child, Command, Stdio};

use arcpool_core::data::{gen_blobs, split};
use arcpool_core::engine::Learner;
use arcpool_core::{AlConfig, Dataset, RoundRecord, Strategy, SynthConfig};
use arcpool_service::{BatchResponse, Created, Metrics, RoundSummary};
use reqwest::{Client, StatusCode};
use serde_json::{json, Value};

use crate::{ensure, err, Check};

/// An `arcpool serve` child process.
struct Server {
    child: Child,
    base: String,
}

impl Server {
    fn spawn(state_dir: &Path) -> Result<Server, String> {
        let mut child = Command::new(env!("CARGO_BIN_EXE_arcpool"))
            .arg("serve")
            .args(["--listen", "127.0.0.1:0", "--state-dir"])
            .arg(state_dir)
            .env("RUST_LOG", "warn")
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(err)?;
        let mut out = BufReader::new(child.stdout.take().expect("piped stdout"));
        let mut line = String::new();
        out.read_line(&mut line).map_err(err)?;
        // keep the pipe drained so later prints never block or fail
        std::thread::spawn(move || {
            let _ = std::io::copy(&mut out, &mut std::io::sink());
        });
        let base = line
            .trim()
            .strip_prefix("listening on ")
            .ok_or_else(|| format!("unexpected first line {line:?}"))?
            .to_string();
        Ok(Server { child, base })
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    /// SIGKILL: no shutdown hooks run.
    fn kill(mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Everything in a record except timing.
fn same_record(a: &RoundRecord, b: &RoundRecord) -> bool {
    a.round == b.round
        && a.labeled == b.labeled
        && a.accuracy == b.accuracy
        && a.mean_loss == b.mean_loss
        && a.selected == b.selected
}

/// One scripted session and the in-process learner it must agree with.
struct Tracked {
    id: String,
    sim: Learner,
    by_name: bool,
    classes: Vec<String>,
}

struct World {
    http: Client,
    train: Dataset,
    test: Dataset,
    truth: HashMap<u64, usize>,
}

async fn get_json(http: &Client, url: String) -> Result<(StatusCode, Value), String> {
    let resp = http.get(url).send().await.map_err(err)?;
    let status = resp.status();
    Ok((status, resp.json().await.map_err(err)?))
}

async fn post_json(
    http: &Client,
    url: String,
    body: &Value,
) -> Result<(StatusCode, Value), String> {
    let resp = http.post(url).json(body).send().await.map_err(err)?;
    let status = resp.status();
    Ok((status, resp.json().await.map_err(err)?))
}

fn decode<T: serde::de::DeserializeOwned>(v: Value) -> Result<T, String> {
    serde_json::from_value(v).map_err(err)
}

impl World {
    async fn request_batch(&self, srv: &Server, s: &Tracked) -> Result<Value, String> {
        let (status, body) = post_json(
            &self.http,
            srv.url(&format!("/sessions/{}/batch", s.id)),
            &json!({}),
        )
        .await?;
        ensure!(status == StatusCode::OK, "POST batch gave {status}: {body}");
        let batch: BatchResponse = decode(body.clone())?;
        ensure!(
            batch.round == s.sim.round(),
            "batch round {} vs {}",
            batch.round,
            s.sim.round()
        );
        Ok(body)
    }

    async fn submit(&self, srv: &Server, s: &mut Tracked, batch: &Value) -> Result<(), String> {
        let batch: BatchResponse = decode(batch.clone())?;
        let labels: Vec<Value> = batch
            .items
            .iter()
            .map(|item| {
                let y = self.truth[&item.id];
                let label = if s.by_name {
                    json!(s.classes[y])
                } else {
                    json!(y)
                };
                json!({ "id": item.id, "label": label })
            })
            .collect();
        let (status, body) = post_json(
            &self.http,
            srv.url(&format!("/sessions/{}/labels", s.id)),
            &json!({ "labels": labels }),
        )
        .await?;
        ensure!(
            status == StatusCode::OK,
            "POST labels gave {status}: {body}"
        );
        let summary: RoundSummary = decode(body)?;

        let (staged, sim_record) = s.sim.run_round(&self.train, &self.test).map_err(err)?;
        let ids: Vec<u64> = batch.items.iter().map(|i| i.id).collect();
        ensure!(
            ids == staged.selected,
            "session {} batch {:?} vs simulated {:?}",
            s.id,
            ids,
            staged.selected
        );
        ensure!(
            same_record(&summary.record, &sim_record),
            "round record {:?} vs simulated {:?}",
            summary.record,
            sim_record
        );
        ensure!(
            summary.labeled == s.sim.pool.num_labeled()
                && summary.unlabeled == s.sim.pool.num_unlabeled(),
            "pool {}/{} vs simulated {}/{}",
            summary.labeled,
            summary.unlabeled,
            s.sim.pool.num_labeled(),
            s.sim.pool.num_unlabeled()
        );
        Ok(())
    }

    async fn check_metrics(&self, srv: &Server, s: &Tracked) -> Result<Value, String> {
        let (status, body) =
            get_json(&self.http, srv.url(&format!("/sessions/{}/metrics", s.id))).await?;
        ensure!(status == StatusCode::OK, "GET metrics gave {status}");
        let m: Metrics = decode(body.clone())?;
        ensure!(
            m.labeled == s.sim.pool.num_labeled() && m.unlabeled == s.sim.pool.num_unlabeled(),
            "metrics pool {}/{} vs simulated {}/{}",
            m.labeled,
            m.unlabeled,
            s.sim.pool.num_labeled(),
            s.sim.pool.num_unlabeled()
        );
        ensure!(
            m.history.len() == s.sim.history.len()
                && m.history
                    .iter()
                    .zip(&s.sim.history)
                    .all(|(a, b)| same_record(a, b)),
            "metrics history differs from simulation"
        );
        Ok(body)
    }
}

async fn create(
    world: &World,
    srv: &Server,
    data: &Path,
    config: &AlConfig,
    seed: u64,
    classes: Option<Vec<String>>,
) -> Result<Tracked, String> {
    let body = json!({
        "config": config,
        "dataset": { "path": data, "classes": classes },
        "seed": seed,
    });
    let (status, body) = post_json(&world.http, srv.url("/sessions"), &body).await?;
    ensure!(
        status == StatusCode::CREATED,
        "create gave {status}: {body}"
    );
    let created: Created = decode(body)?;
    let sim = Learner::new(config, &world.train, seed).map_err(err)?;
    ensure!(
        created.labeled == sim.pool.num_labeled() && created.unlabeled == sim.pool.num_unlabeled(),
        "initial pool {}/{} vs simulated {}/{}",
        created.labeled,
        created.unlabeled,
        sim.pool.num_labeled(),
        sim.pool.num_unlabeled()
    );
    Ok(Tracked {
        id: created.id,
        sim,
        by_name: classes.is_some(),
        classes: created.classes,
    })
}

async fn scenario(dir: &Path) -> Check {
    let state = dir.join("state");
    let data_path = dir.join("blobs.jsonl");
    let full = gen_blobs(&SynthConfig::preset("overlap-blobs").map_err(err)?).map_err(err)?;
    full.save_jsonl(&data_path).map_err(err)?;

    let margin = AlConfig::new(30, 10, 5, Strategy::Margin);
    let coreset = AlConfig::new(30, 10, 5, Strategy::Coreset);
    let (train, test) = split(&full, margin.test_fraction, margin.split_seed).map_err(err)?;
    let truth = full
        .samples()
        .iter()
        .map(|s| (s.id, s.label.expect("synthetic samples are labelled")))
        .collect();
    let world = World {
        http: Client::new(),
        train,
        test,
        truth,
    };
    let names: Vec<String> = ["ash", "birch", "cedar", "elm", "fir", "oak"]
        .map(String::from)
        .to_vec();

    let srv = Server::spawn(&state)?;
    let mut sessions = vec![
        create(&world, &srv, &data_path, &margin, 11, None).await?,
        create(&world, &srv, &data_path, &coreset, 12, Some(names)).await?,
    ];

    // round 1 end to end
    for s in sessions.iter_mut() {
        let batch = world.request_batch(&srv, s).await?;
        world.submit(&srv, s, &batch).await?;
        world.check_metrics(&srv, s).await?;
    }

    // round 2: kill while batches await labels
    let mut staged = Vec::new();
    let mut before = Vec::new();
    for s in &sessions {
        staged.push(world.request_batch(&srv, s).await?);
        before.push(world.check_metrics(&srv, s).await?);
    }
    srv.kill();
    let srv = Server::spawn(&state)?;
    for (i, s) in sessions.iter().enumerate() {
        let after = world.check_metrics(&srv, s).await?;
        ensure!(after == before[i], "metrics changed across restart");
        let (status, again) =
            get_json(&world.http, srv.url(&format!("/sessions/{}/batch", s.id))).await?;
        ensure!(
            status == StatusCode::OK,
            "GET batch after restart gave {status}"
        );
        ensure!(again == staged[i], "staged batch changed across restart");
        let (status, _) = post_json(
            &world.http,
            srv.url(&format!("/sessions/{}/batch", s.id)),
            &json!({}),
        )
        .await?;
        ensure!(
            status == StatusCode::CONFLICT,
            "second POST batch gave {status}"
        );
    }
    for (i, s) in sessions.iter_mut().enumerate() {
        world.submit(&srv, s, &staged[i]).await?;
    }

    // kill again between rounds
    let mut before = Vec::new();
    for s in &sessions {
        before.push(world.check_metrics(&srv, s).await?);
    }
    srv.kill();
    let srv = Server::spawn(&state)?;
    for (i, s) in sessions.iter().enumerate() {
        ensure!(
            world.check_metrics(&srv, s).await? == before[i],
            "idle state changed across restart"
        );
    }

    // round 3 on the restored sessions
    for s in sessions.iter_mut() {
        let batch = world.request_batch(&srv, s).await?;
        world.submit(&srv, s, &batch).await?;
        let m: Metrics = decode(world.check_metrics(&srv, s).await?)?;
        ensure!(
            m.history.len() == 3,
            "expected 3 rounds, got {}",
            m.history.len()
        );
    }
    srv.kill();
    Ok(format!(
        "2 sessions (margin, coreset) x 3 rounds match simulated learners; 2 SIGKILL restarts preserved metrics and staged batches; |L| = {}",
        sessions[0].sim.pool.num_labeled()
    ))
}

pub fn service_round_trip() -> Check {
    let dir = tempfile::tempdir().map_err(err)?;
    let rt = tokio::runtime::Runtime::new().map_err(err)?;
    rt.block_on(scenario(dir.path()))
}
