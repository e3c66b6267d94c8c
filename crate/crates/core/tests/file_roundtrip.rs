use hetcd::model::PatchSpec;
use hetcd::npy;
use hetcd::pipeline::{run_pipeline, PipelineParams};
use hetcd::regression::blob::{read_model, write_model};
use hetcd::regression::{self, RegressorConfig, RegressorKind};
use hetcd::selection::SelectionConfig;
use hetcd::synth::{generate_pair, SynthConfig};
use hetcd::training_io::{load_training_set, save_training_set};
use hetcd::pipeline::DetectionSummary;

#[test]
fn pipeline_survives_file_boundaries() {
    let dir = tempfile::tempdir().unwrap();
    let pair = generate_pair(&SynthConfig {
        height: 36,
        width: 36,
        rng_seed: 8,
        ..Default::default()
    })
    .unwrap();
    npy::write_image(dir.path().join("x.npy"), &pair.x).unwrap();
    npy::write_image(dir.path().join("y.npy"), &pair.y).unwrap();
    npy::write_mask(dir.path().join("mask.npy"), &pair.mask).unwrap();
    let x = npy::read_image(dir.path().join("x.npy"), "x").unwrap();
    let y = npy::read_image(dir.path().join("y.npy"), "y").unwrap();
    let mask = npy::read_mask(dir.path().join("mask.npy")).unwrap();
    assert_eq!(mask, pair.mask);
    // images pass through f32
    let worst = x.data().iter().zip(pair.x.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-6);

    let params = PipelineParams {
        patch: PatchSpec::new(5, 1),
        selection: SelectionConfig {
            m: 200,
            ..Default::default()
        },
        regressor: RegressorConfig::new(RegressorKind::Hpt),
        ..Default::default()
    };
    let out = run_pipeline(&x, &y, Some(&mask), &params).unwrap();

    let train_path = dir.path().join("train.bin");
    save_training_set(&train_path, &out.selection.training_set).unwrap();
    let train = load_training_set(&train_path, x.num_pixels()).unwrap();
    assert_eq!(train.pairs(), out.selection.training_set.pairs());

    for kind in RegressorKind::ALL {
        let model = regression::fit(&RegressorConfig::new(kind), &train.x_matrix(), &train.y_matrix()).unwrap();
        let mut bytes = Vec::new();
        write_model(&model, &mut bytes).unwrap();
        let back = read_model(&bytes[..]).unwrap();
        let q = x.to_matrix();
        assert_eq!(model.predict(&q).unwrap(), back.predict(&q).unwrap(), "{kind}");
    }

    let counted = predicted_change_pixels(&out.report().detection);
    assert_eq!(counted, out.change_map.count());
}

fn predicted_change_pixels(d: &DetectionSummary) -> usize {
    let counted = d.tp.unwrap() + d.fp.unwrap();
    assert_eq!(d.tp.unwrap() + d.tn.unwrap() + d.fp.unwrap() + d.fn_.unwrap(), 36 * 36);
    counted as usize
}
