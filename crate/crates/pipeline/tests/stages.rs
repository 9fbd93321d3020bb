//! Baseline segmenter and filter stage on a freshly generated 200-datapoint batch.

use leafgen::config::GenerationConfig;
use leafgen::filter::{run_filter_stage, PredictionSource};
use leafgen::generate::{generate, GenerateOptions};
use leafgen::inpaint::{run_inpaint_stage, InpaintClient};
use leafgen::io::read_mask_png;
use leafgen::manifest::{DatasetManifest, MANIFEST};
use leafgen_core::metrics::deviation;

#[test]
fn baseline_segmenter_and_identity_inpaint_filter() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("ds");
    let cfg = GenerationConfig { n_leaves: 50, master_seed: 314, output_dir: out.clone(), ..Default::default() };
    let s = generate(&cfg, &GenerateOptions::default()).unwrap();
    assert!(s.failures.is_empty());
    let m = DatasetManifest::read(&out.join(MANIFEST)).unwrap();
    assert_eq!(m.entries.len(), 200);

    // Rendered datapoints: the baseline should track the truth closely.
    let src = PredictionSource::from_config(&cfg.filter, &out);
    let mut close = 0;
    for a in &m.entries {
        let truth = read_mask_png(&out.join(&a.mask_path)).unwrap();
        let pred = src.predict(&out, a).unwrap().expect("baseline always predicts");
        if deviation(&pred, &truth).unwrap() <= 0.10 {
            close += 1;
        }
    }
    println!("baseline within 0.10 on {close}/200 rendered datapoints");
    assert!(close >= 180, "only {close}/200 within 0.10");

    // Identity inpainting followed by the filter keeps almost everything.
    let mut inpaint = cfg.inpaint.clone();
    inpaint.endpoint = "mock:identity".into();
    let client = InpaintClient::from_config(&inpaint).unwrap();
    let (_, report) = run_inpaint_stage(&out, &inpaint, &client).unwrap();
    assert_eq!(report.inpainted, 200);
    let o = run_filter_stage(&out, &cfg.filter).unwrap();
    println!("identity-inpainted rejection rate {:.3}", o.report.rejection_rate);
    assert!(o.report.rejection_rate < 0.05, "rejection rate {}", o.report.rejection_rate);
    assert_eq!(o.kept.len() + o.rejected.len(), 200);
}
