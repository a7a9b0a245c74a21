//! Whole-model checkpoints.

mod common;

use common::{images, tiny_cl, tiny_mlp};
use lcc_core::nets::checkpoint;
use lcc_core::nets::ArchSpec;
use lcc_core::scheme::{BaselineModel, CodedModel, SchemeConfig, Variant};
use lcc_core::{CheckpointError, Error};
use tempfile::TempDir;

fn bits(m: &CodedModel<f32>) -> Vec<(String, Vec<usize>, Vec<u32>)> {
    m.store()
        .iter()
        .map(|(_, p)| (p.name.clone(), p.value.shape().to_vec(), p.value.data().iter().map(|v| v.to_bits()).collect()))
        .collect()
}

#[test]
fn coded_models_round_trip_bit_exactly() {
    let dir = TempDir::new().unwrap();
    for (i, cfg) in [
        tiny_mlp(Variant::Hs, 2, 1, 2),
        tiny_mlp(Variant::Hb, 3, 2, 1),
        tiny_cl(Variant::Hs, 2, 1, 1),
        SchemeConfig { shared_trunk: true, ..tiny_mlp(Variant::Hs, 2, 2, 2) },
    ]
    .into_iter()
    .enumerate()
    {
        let m = CodedModel::<f32>::new(&cfg).unwrap();
        let path = dir.path().join(format!("m{i}.lcc"));
        m.save(&path).unwrap();
        let back = CodedModel::load(&path, None).unwrap();
        assert_eq!(back.config(), m.config());
        assert_eq!(bits(&back), bits(&m));
        let x = images::<f32>(i as u64, 2, cfg.group_size, cfg.image_side);
        assert_eq!(back.infer(&x).unwrap(), m.infer(&x).unwrap());
        // Saving the loaded model reproduces the file.
        let again = dir.path().join(format!("m{i}b.lcc"));
        back.save(&again).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
    }
}

#[test]
fn loading_under_another_architecture_is_a_shape_mismatch() {
    let dir = TempDir::new().unwrap();
    let cfg = tiny_mlp(Variant::Hs, 2, 1, 1);
    let path = dir.path().join("m.lcc");
    CodedModel::<f32>::new(&cfg).unwrap().save(&path).unwrap();
    let other = SchemeConfig { computation_degree: 2, workers: 5, ..cfg.clone() };
    assert!(matches!(
        CodedModel::load(&path, Some(&other)),
        Err(Error::Checkpoint(CheckpointError::ShapeMismatch(_)))
    ));
    let wider = SchemeConfig { l1: 9, ..cfg };
    assert!(matches!(CodedModel::load(&path, Some(&wider)), Err(Error::Checkpoint(CheckpointError::ShapeMismatch(_)))));
    assert!(matches!(BaselineModel::load(&path), Err(Error::Checkpoint(CheckpointError::ShapeMismatch(_)))));
}

#[test]
fn baselines_round_trip() {
    let dir = TempDir::new().unwrap();
    let m = BaselineModel::new(&ArchSpec::baseline_cnn(17, 4, 2).with_widths(5, 3), 3).unwrap();
    let path = dir.path().join("b.lcc");
    m.save(&path).unwrap();
    let back = BaselineModel::load(&path).unwrap();
    let x = images::<f32>(1, 2, 1, 17);
    assert_eq!(back.logits(&x).unwrap(), m.logits(&x).unwrap());
    let raw = checkpoint::load(&path).unwrap();
    assert_eq!(raw.header.networks.len(), 1);
    assert!(matches!(CodedModel::load(&path, None), Err(Error::Checkpoint(CheckpointError::ShapeMismatch(_)))));
}
