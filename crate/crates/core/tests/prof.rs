use fstripe_core::attention::{FeatureMapKind, PeKind};
use fstripe_core::net::{self, Model, ModelConfig};

#[test]
fn profile_step() {
    let dataset = net::chord_cue_task(2, 128, 6, 1).unwrap();
    let model = Model::new(ModelConfig {
        layers: 2, heads: 4, model_dim: 64, ff_dim: 128,
        pe_kind: PeKind::Rff, feature_map: FeatureMapKind::EluPlusOne,
        n_f: 2, realizations: 16, levels: 1, level_mask: Some(vec![0]),
        dropout: 0.0, seed: 3,
    }).unwrap();
    let s = &dataset[0];
    let grid = s.grid.prefix(128).unwrap();

    // forward only
    let t0 = std::time::Instant::now();
    for _ in 0..20 {
        let _ = model.forward(&s.input, &grid).unwrap();
    }
    println!("forward only: {:?}/iter", t0.elapsed() / 20);

    // forward + backward
    let t0 = std::time::Instant::now();
    for _ in 0..20 {
        let (mut tape, probs, _nodes) = model.forward_with_tape(&s.input, &grid).unwrap();
        let loss = tape.bce_loss(probs, &s.target);
        let _g = tape.backward(loss).unwrap();
    }
    println!("forward+backward: {:?}/iter", t0.elapsed() / 20);
}
