//! Shared fixture access for integration tests. Training is deterministic,
//! so the weights are cached on disk and reused across test binaries.

use fei_core::nn::serialize::{decode_weights, encode_weights};
use fei_core::{train_fixture, FixtureConfig, NetworkModel, TrainReport};
use std::path::PathBuf;
use std::sync::OnceLock;

pub fn fixture() -> &'static (NetworkModel, TrainReport) {
    static FIXTURE: OnceLock<(NetworkModel, TrainReport)> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR"));
        let cfg = FixtureConfig::default();
        let key = {
            use std::hash::{Hash, Hasher};
            let mut h = std::collections::hash_map::DefaultHasher::new();
            format!("{cfg:?}").hash(&mut h);
            h.finish()
        };
        let weights = dir.join(format!("fei-fixture-{key:016x}.weights"));
        let report = dir.join(format!("fei-fixture-{key:016x}.report.json"));
        // The report file is written last, so its presence implies both.
        if report.exists() {
            let model = decode_weights(&std::fs::read(&weights).expect("cached weights"))
                .expect("cached weights decode");
            let report: TrainReport =
                serde_json::from_slice(&std::fs::read(&report).expect("cached report"))
                    .expect("cached report parse");
            return (model, report);
        }
        let (model, train_report) = train_fixture(&cfg).expect("fixture trains");
        let tmp_w = weights.with_extension("weights.tmp");
        std::fs::write(&tmp_w, encode_weights(&model)).expect("write weights");
        std::fs::rename(&tmp_w, &weights).expect("publish weights");
        let tmp_r = report.with_extension("json.tmp");
        std::fs::write(&tmp_r, serde_json::to_vec(&train_report).expect("report json"))
            .expect("write report");
        std::fs::rename(&tmp_r, &report).expect("publish report");
        (model, train_report)
    })
}
