mod common;

use common::{closed_form, tiny_model};
use structadapt::adapters::{count_params, AdapterConfig, AdapterKind};
use structadapt::backbone::{trainable_mask, BackboneConfig, Model, TrainMode};
use structadapt::tensor::Tape;

const KINDS: [AdapterKind; 3] = [AdapterKind::Adapt, AdapterKind::StructadaptGcn, AdapterKind::StructadaptRgcn];

fn backbone(layers: usize, d: usize) -> Model<f64> {
    let cfg = BackboneConfig { layers, d_model: d, heads: 2, d_ff: 2 * d, vocab_size: 40, max_len: 64 };
    Model::new(cfg, 3).unwrap()
}

#[test]
fn zero_up_projection_leaves_outputs_unchanged() {
    for kind in KINDS {
        let (mut with, ex) = tiny_model(Some(kind), 0);
        for p in with.store.iter_mut() {
            if p.name.ends_with(".up") {
                p.value.fill(0.0);
            }
        }
        let (bare, _) = tiny_model(None, 0);
        let mut t1 = Tape::new();
        let l1 = with.loss(&mut t1, &ex.src, &ex.tgt, Some(&ex.graph)).unwrap();
        let mut t2 = Tape::new();
        let l2 = bare.loss(&mut t2, &ex.src, &ex.tgt, None).unwrap();
        assert_eq!(t1.value(l1).scalar().to_bits(), t2.value(l2).scalar().to_bits(), "{kind:?}");
        assert_eq!(
            with.greedy(&ex.src, Some(&ex.graph), 12).unwrap(),
            bare.greedy(&ex.src, None, 12).unwrap()
        );
    }
}

#[test]
fn counts_match_closed_form() {
    let adapter_mask = trainable_mask(TrainMode::AdaptersOnly, 0);
    for (layers, d) in [(1, 8), (2, 16), (3, 12)] {
        for kind in KINDS {
            for (m, dec_m, bases, relations, encoder, decoder) in
                [(4, None, 0, 2, true, true), (6, Some(3), 0, 5, true, true), (5, None, 2, 7, true, true), (4, None, 0, 2, false, true), (4, None, 0, 2, true, false)]
            {
                let cfg = AdapterConfig { m, dec_m, kind, bases, relations, encoder, decoder, ..AdapterConfig::default() };
                let mut model = backbone(layers, d);
                let before = model.store.total_count();
                model.attach_adapters(cfg.clone(), 1).unwrap();
                let count = count_params(&model.store, &adapter_mask);
                assert_eq!(count.trainable, closed_form(&cfg, layers, d), "{cfg:?} layers {layers} d {d}");
                assert_eq!(count.total, before + count.trainable);
                assert_eq!(count.fraction, count.trainable as f64 / count.total as f64);
            }
        }
    }
}

#[test]
fn adapt_and_gcn_have_equal_counts() {
    for (d, m) in [(8, 2), (16, 4), (32, 16), (64, 24)] {
        let counts: Vec<usize> = [AdapterKind::Adapt, AdapterKind::StructadaptGcn]
            .into_iter()
            .map(|kind| {
                let mut model = backbone(2, d);
                model.attach_adapters(AdapterConfig { m, kind, ..AdapterConfig::default() }, 0).unwrap();
                model.set_mode(TrainMode::AdaptersOnly);
                model.store.trainable_count()
            })
            .collect();
        assert_eq!(counts[0], counts[1], "d {d} m {m}");
    }
}

#[test]
fn backbone_only_has_no_adapter_parameters() {
    let model = backbone(2, 16);
    let count = count_params(&model.store, trainable_mask(TrainMode::AdaptersOnly, 2));
    assert_eq!(count.trainable, 0);
    assert_eq!(count.fraction, 0.0);
}
