#![allow(dead_code)]

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use sketchplan_core::blob::encode_b64;
use sketchplan_core::geometry::{render_sketch_png, Legend, PaletteColor, RasterMask};

pub const ENGINE: &str = env!("CARGO_BIN_EXE_engine");

fn color(i: usize) -> PaletteColor {
    PaletteColor::from_index(i).unwrap()
}

/// Girl (red disc), cat (blue box) and sky (green band) on 256x256.
pub fn scene() -> (Vec<u8>, Legend) {
    let w = 256;
    let girl = RasterMask::from_fn(w, w, |x, y| (x as f64 + 0.5 - 70.0).hypot(y as f64 + 0.5 - 150.0) <= 40.0).unwrap();
    let cat = RasterMask::rect(w, w, 150, 170, 220, 220).unwrap();
    let sky = RasterMask::rect(w, w, 0, 0, w, 60).unwrap();
    let png = render_sketch_png(w, w, &[(color(1), &sky), (color(0), &girl), (color(3), &cat)]).unwrap();
    let legend = Legend::new()
        .with(color(0), "girl", Some("girl"))
        .unwrap()
        .with(color(3), "cat", None)
        .unwrap()
        .with(color(1), "sky", Some("sky"))
        .unwrap();
    (png, legend)
}

pub fn sketch_body() -> Value {
    let (png, legend) = scene();
    json!({"sketch_png_b64": encode_b64(&png), "legend": serde_json::to_value(&legend).unwrap()})
}

pub fn write_scene(dir: &Path) -> (PathBuf, PathBuf) {
    let (png, legend) = scene();
    let sketch = dir.join("sketch.png");
    let legend_path = dir.join("legend.json");
    std::fs::write(&sketch, png).unwrap();
    std::fs::write(&legend_path, legend.to_json()).unwrap();
    (sketch, legend_path)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn manifest_hash(data_dir: &Path, id: &str) -> String {
    sha256_hex(&std::fs::read(data_dir.join(id).join("manifest.json")).unwrap())
}

/// Every file under `dir`, keyed by relative path, with its content hash.
pub fn tree_hashes(dir: &Path) -> BTreeMap<String, String> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, sha256_hex(&std::fs::read(&path).unwrap()));
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

/// `engine serve` on an ephemeral port; killed on drop.
pub struct Server {
    child: Child,
    pub base: String,
    agent: ureq::Agent,
}

impl Server {
    pub fn start(data_dir: &Path) -> Server {
        let mut child = Command::new(ENGINE)
            .args(["serve", "--addr", "127.0.0.1:0", "--backend", "mock", "--data-dir"])
            .arg(data_dir)
            .env("RUST_LOG", "warn")
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .expect("spawn engine serve");
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
        let base = line
            .trim()
            .strip_prefix("listening on ")
            .unwrap_or_else(|| panic!("unexpected server banner {line:?}"))
            .to_string();
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(60)))
            .build()
            .into();
        Server { child, base, agent }
    }

    /// SIGKILL, no chance to flush anything.
    pub fn kill(mut self) {
        self.child.kill().unwrap();
        self.child.wait().unwrap();
    }

    pub fn call(&self, method: &str, path: &str, body: Option<Value>) -> (u16, Value) {
        let url = format!("{}{}", self.base, path);
        let result = match (method, body) {
            ("GET", _) => self.agent.get(&url).call(),
            ("POST", Some(b)) => self.agent.post(&url).send_json(b),
            ("POST", None) => self.agent.post(&url).send_empty(),
            ("PUT", Some(b)) => self.agent.put(&url).send_json(b),
            ("PUT", None) => self.agent.put(&url).send_empty(),
            ("PATCH", Some(b)) => self.agent.patch(&url).send_json(b),
            ("PATCH", None) => self.agent.patch(&url).send_empty(),
            _ => panic!("unsupported method {method}"),
        };
        let mut resp = result.unwrap_or_else(|e| panic!("{method} {path}: {e}"));
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().unwrap();
        (status, serde_json::from_str(&text).unwrap_or(Value::String(text)))
    }

    pub fn bytes(&self, path: &str) -> Vec<u8> {
        let mut resp = self.agent.get(format!("{}{}", self.base, path)).call().unwrap();
        assert_eq!(resp.status().as_u16(), 200, "{path}");
        resp.body_mut().read_to_vec().unwrap()
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn expect(status: (u16, Value), want: u16, what: &str) -> Value {
    assert_eq!(status.0, want, "{what}: {}", status.1);
    status.1
}

/// Kill the server between workflow steps and check the restarted server
/// sees the same session and manifest, then finish the workflow.
pub fn kill_restart_check() {
    let data = tempfile::tempdir().unwrap();
    let server = Server::start(data.path());
    let id = expect(server.call("POST", "/sessions", Some(json!({"seed": 11}))), 201, "create")["id"]
        .as_str()
        .unwrap()
        .to_string();
    expect(server.call("PUT", &format!("/sessions/{id}/sketch"), Some(sketch_body())), 200, "sketch");
    expect(server.call("POST", &format!("/sessions/{id}/infer"), None), 200, "infer");
    expect(server.call("POST", &format!("/sessions/{id}/regions/girl/candidates"), None), 200, "candidates");
    expect(
        server.call("POST", &format!("/sessions/{id}/regions/girl/candidates/0/select"), None),
        200,
        "select",
    );
    let before_view = expect(server.call("GET", &format!("/sessions/{id}"), None), 200, "show");
    let before_hash = manifest_hash(data.path(), &id);
    let before_tree = tree_hashes(data.path());
    server.kill();

    let server = Server::start(data.path());
    let after_view = expect(server.call("GET", &format!("/sessions/{id}"), None), 200, "show after restart");
    assert_eq!(after_view, before_view);
    assert_eq!(manifest_hash(data.path(), &id), before_hash);
    assert_eq!(tree_hashes(data.path()), before_tree);

    expect(server.call("POST", &format!("/sessions/{id}/regions/cat/candidates"), None), 200, "candidates");
    expect(
        server.call("POST", &format!("/sessions/{id}/regions/cat/candidates/1/select"), None),
        200,
        "select",
    );
    let run = expect(
        server.call("POST", &format!("/sessions/{id}/generate"), Some(json!({"samples": 1, "seed": 3}))),
        200,
        "generate",
    );
    let url = run["results"][0]["image"].as_str().unwrap();
    assert!(server.bytes(url).starts_with(b"\x89PNG"));
}

/// Drive every client-error path against a live session and check the
/// manifest is byte-identical afterwards. Returns the number of paths tried.
pub fn four_xx_check() -> usize {
    let data = tempfile::tempdir().unwrap();
    let server = Server::start(data.path());
    let fresh = expect(server.call("POST", "/sessions", Some(json!({"seed": 5}))), 201, "create")["id"]
        .as_str()
        .unwrap()
        .to_string();
    let id = expect(server.call("POST", "/sessions", Some(json!({"seed": 6}))), 201, "create")["id"]
        .as_str()
        .unwrap()
        .to_string();
    let s = |p: &str| format!("/sessions/{id}{p}");
    let f = |p: &str| format!("/sessions/{fresh}{p}");

    // Session with no sketch yet.
    let mut cases: Vec<(String, &str, String, Option<Value>, u16)> = vec![
        (fresh.clone(), "POST", f("/infer"), None, 409),
        (fresh.clone(), "POST", f("/regions/girl/candidates"), None, 404),
        (fresh.clone(), "POST", f("/generate"), Some(json!({"samples": 1})), 409),
        (fresh.clone(), "PUT", f("/sketch"), Some(json!({"sketch_png_b64": "%%%", "legend": {}})), 422),
    ];

    expect(server.call("PUT", &s("/sketch"), Some(sketch_body())), 200, "sketch");
    expect(server.call("POST", &s("/infer"), None), 200, "infer");
    let v1 = expect(server.call("POST", &s("/regions/girl/candidates"), None), 200, "candidates")["version"]
        .as_u64()
        .unwrap();
    expect(server.call("POST", &s("/regions/girl/candidates"), None), 200, "candidates again");

    let shown = expect(server.call("GET", &s(""), None), 200, "show");
    let mut no_type = shown["space"].clone();
    no_type["single_object"]["cat"]["type"] = json!("");
    let mut dangling = shown["space"].clone();
    dangling["cross_object"] = json!([{"subject": "girl", "object": "dragon", "direction": "", "relationship": "girl near dragon"}]);

    let bad_palette = stray_pixel_png();
    let (_, legend) = scene();
    cases.extend([
        (id.clone(), "PUT", s("/sketch"), Some(json!({"sketch_png_b64": encode_b64(&bad_palette), "legend": serde_json::to_value(&legend).unwrap()})), 422),
        (id.clone(), "PUT", s("/sketch"), Some(json!({"legend": {}})), 422),
        (id.clone(), "PUT", s("/sketch"), None, 400),
        (id.clone(), "PUT", s("/space"), Some(json!({"space": no_type})), 422),
        (id.clone(), "PUT", s("/space"), Some(json!({"space": dangling})), 422),
        (id.clone(), "PUT", s("/space"), Some(json!({"space": {"single_object": 3}})), 422),
        (id.clone(), "POST", s("/regions/sky/candidates"), None, 409),
        (id.clone(), "POST", s("/regions/nobody/candidates"), None, 404),
        (id.clone(), "POST", s("/regions/girl/candidates/0/select"), Some(json!({"version": v1})), 409),
        (id.clone(), "POST", s("/regions/girl/candidates/9/select"), None, 422),
        (id.clone(), "POST", s("/regions/cat/candidates/0/select"), None, 409),
        (id.clone(), "PATCH", s("/regions/girl/placement"), Some(json!({"dx": 3, "dy": 0, "scale": 1.0})), 409),
        (id.clone(), "PATCH", s("/regions/girl/placement"), Some(json!({"scale": 0.0})), 422),
        (id.clone(), "PATCH", s("/regions/girl/placement"), Some(json!({"scale": "big"})), 422),
        (id.clone(), "POST", s("/generate"), Some(json!({"samples": 1})), 422),
        (id.clone(), "POST", s("/generate"), Some(json!({"samples": 0})), 422),
        (id.clone(), "POST", s("/generate"), Some(json!({"samples": 1000})), 422),
        (id.clone(), "POST", s("/generate"), Some(json!({"bogus": true})), 422),
        (id.clone(), "GET", "/sessions/unknown".into(), None, 404),
        (id.clone(), "POST", "/sessions/unknown/infer".into(), None, 404),
    ]);

    for (target, method, path, body, want) in &cases {
        let before = manifest_hash(data.path(), target);
        let (status, reply) = server.call(method, path, body.clone());
        assert_eq!(status, *want, "{method} {path}: {reply}");
        assert_eq!(manifest_hash(data.path(), target), before, "{method} {path} changed the manifest");
    }

    // Once placed, an out-of-range scale still leaves the manifest alone.
    expect(server.call("POST", &s("/regions/girl/candidates/0/select"), None), 200, "select");
    let before = manifest_hash(data.path(), &id);
    let (status, _) = server.call("PATCH", &s("/regions/girl/placement"), Some(json!({"scale": 40.0})));
    assert_eq!(status, 422);
    assert_eq!(manifest_hash(data.path(), &id), before);
    cases.len() + 1
}

/// White 64x64 PNG with one off-palette pixel.
pub fn stray_pixel_png() -> Vec<u8> {
    let mut img = image::RgbImage::from_pixel(64, 64, image::Rgb([255, 255, 255]));
    img.put_pixel(10, 10, image::Rgb([1, 2, 3]));
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png).unwrap();
    out.into_inner()
}

/// Three headless CLI runs with the same seed; returns elapsed time.
pub fn cli_determinism_check() -> Duration {
    let work = tempfile::tempdir().unwrap();
    let (sketch, legend) = write_scene(work.path());
    let start = Instant::now();
    let mut trees = Vec::new();
    for i in 0..3 {
        let out = work.path().join(format!("run{i}"));
        let status = Command::new(ENGINE)
            .args(["run", "--backend", "mock", "--seed", "7", "--samples", "2", "--sketch"])
            .arg(&sketch)
            .arg("--legend")
            .arg(&legend)
            .arg("--out")
            .arg(&out)
            .env("RUST_LOG", "warn")
            .stdout(Stdio::null())
            .status()
            .unwrap();
        assert!(status.success(), "run {i} exited with {status}");
        trees.push(tree_hashes(&out));
    }
    let elapsed = start.elapsed();
    assert!(trees[0].contains_key("request.json"));
    assert!(trees[0].contains_key("samples/sample_00.png"));
    assert!(trees[0].contains_key("samples/sample_01.png"));
    assert_eq!(trees[0], trees[1]);
    assert_eq!(trees[1], trees[2]);
    let meta: Value =
        serde_json::from_str(&std::fs::read_to_string(work.path().join("run0").join("metadata.json")).unwrap()).unwrap();
    assert_eq!(meta["auto_selected"], json!(["girl", "cat"]));
    assert!(elapsed < Duration::from_secs(30), "{elapsed:?}");
    elapsed
}
