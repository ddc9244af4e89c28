//! Records the bundled replay fixtures from the synthetic model.
//!
//! Usage: `cargo run -p mirage-core --example record_fixtures -- [OUT_DIR]`
//!
//! Two scenarios share one config and therefore one fixture set: a plain
//! auto-accept run, and a run where the first variant in the review queue
//! is rejected and then replaced.

use std::path::PathBuf;
use std::sync::Arc;

use mirage_core::config::{ConfigFile, Services};
use mirage_core::domain::{RejectReason, ReviewDecision};
use mirage_core::pipeline::{Session, SessionOptions};
use mirage_core::providers::{ChatProvider, MockTranslator, RecordingProvider, RecordingTranslator, SyntheticModel};
use mirage_core::review::{ItemKind, PendingFilter, ReviewDesk};
use mirage_core::store::RunStore;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures"));
    std::fs::create_dir_all(&out)?;
    let chat_path = out.join("chat.jsonl");
    let translation_path = out.join("translations.jsonl");
    for p in [&chat_path, &translation_path] {
        if p.exists() {
            std::fs::remove_file(p)?;
        }
    }

    let template: ConfigFile = ConfigFile::from_json(&std::fs::read_to_string(out.join("replay.json"))?)?;
    let model = template.providers["replay"].model.clone();

    let recorder: Arc<dyn ChatProvider> =
        Arc::new(RecordingProvider::new(Arc::new(SyntheticModel::new(&model)), &chat_path)?);
    let translator = Arc::new(RecordingTranslator::new(Arc::new(MockTranslator::default()), &translation_path)?);
    let services = Services::uniform(recorder, translator);
    let opts = SessionOptions {
        resume: false,
        parallelism: 1,
    };

    let scratch = tempfile::tempdir()?;
    let store = RunStore::new(scratch.path()).with_fsync(false);

    let plain = Session::start(&store, "auto", &template.run, &services, &opts)?;
    plain.run_all(true)?;

    let gated = Session::start(&store, "gated", &template.run, &services, &opts)?;
    gated.generate()?;
    gated.perturb()?;
    drop(gated);
    let desk = ReviewDesk::open(&store, "gated")?;
    let first = desk
        .pending(&PendingFilter::default())
        .items
        .into_iter()
        .find(|i| i.kind == ItemKind::Variant)
        .expect("a variant awaits review");
    desk.decide(
        ReviewDecision::reject(first.task.id.clone(), RejectReason::DataInconsistency, "fixture"),
        true,
    )?;
    drop(desk);
    let resumed = SessionOptions { resume: true, ..opts };
    Session::start(&store, "gated", &template.run, &services, &resumed)?.run_all(true)?;

    println!("rejected {} in the gated scenario", first.task.id);
    println!("wrote {} and {}", chat_path.display(), translation_path.display());
    Ok(())
}
