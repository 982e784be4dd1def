//! Writes the artifacts of a headless run to a directory.

use std::fs;
use std::io;
use std::path::Path;

use serde_json::json;
use sketchplan_core::pipeline::HeadlessRun;

/// Human choice of candidates is replaced by taking the top-ranked one.
pub const AUTO_SELECTION: &str = "top-ranked candidate selected automatically for every thing region";

/// Lay out `run` under `out`:
///
/// ```text
/// metadata.json  request.json  space.json  completion.txt  anchor.png
/// selected/<region>.png  samples/sample_NN.png
/// ```
///
/// Nothing time- or host-dependent is written, so equal runs give equal
/// directories. Returns the number of samples that produced an image.
pub fn write_run(out: &Path, run: &HeadlessRun, backend: &str) -> io::Result<usize> {
    fs::create_dir_all(out.join("samples"))?;
    fs::create_dir_all(out.join("selected"))?;
    let request = &run.run.request;
    fs::write(out.join("request.json"), request.to_json())?;
    if let Some(space) = &run.session.space {
        fs::write(out.join("space.json"), space.to_json())?;
    }
    fs::write(out.join("completion.txt"), &run.completion.raw_text)?;
    fs::write(out.join("anchor.png"), request.anchor.as_mask().to_png())?;
    for (id, p) in &run.session.placements {
        fs::write(out.join("selected").join(format!("{}.png", id.as_str())), p.chosen.image.as_bytes())?;
    }

    let mut ok = 0;
    let mut results = Vec::new();
    for r in &run.run.results {
        let file = match &r.image {
            Some(img) => {
                let name = format!("samples/sample_{:02}.png", r.index);
                fs::write(out.join(&name), img.as_bytes())?;
                ok += 1;
                Some(name)
            }
            None => None,
        };
        results.push(json!({"index": r.index, "seed": r.seed, "file": file, "error": r.error}));
    }
    let metadata = json!({
        "seed": run.session.seed,
        "samples": request.samples,
        "backend": backend,
        "request_digest": run.run.request_digest,
        "auto_selected": run.auto_selected,
        "selection": AUTO_SELECTION,
        "completion_attempts": run.completion.attempts,
        "results": results,
    });
    let mut text = serde_json::to_string_pretty(&metadata).expect("metadata serializes");
    text.push('\n');
    fs::write(out.join("metadata.json"), text)?;
    Ok(ok)
}
