// temporary probe
use idmlab::pipeline::*;
use idmlab::synth::{generate_episode, TruncationRegime, WorldConfig};
fn main() {
    let world = WorldConfig { resolution: 32, episode_len: 8, ..WorldConfig::default() };
    let eps: Vec<_> = (0..4).map(|i| {
        let regime = if i % 2 == 0 { TruncationRegime::Light } else { TruncationRegime::Heavy };
        generate_episode(&world, regime, &format!("ep{i}"), 100 + i as u64).unwrap()
    }).collect();
    for (lr, wpe, aug, c, dd, tc) in [(6e-3, 12, 1, 12, 8, 16), (8e-3, 12, 1, 8, 4, 8), (1e-2, 16, 1, 12, 8, 16)] {
        let config = PipelineConfig {
            encoder: idmlab::encoder::EncoderConfig { resolution: 32, patch: 4, channels: c, context_dim: 8 },
            dfa: idmlab::dfa::DfaConfig { directions: 4, dir_channels: dd, tap_len: 3, temperature: 1.0 },
            tdr: idmlab::tdr::TdrConfig { window: 4, fusion_hidden: 4, tcn_dilations: vec![1,2], tcn_kernel: 2, tcn_channels: tc, regressor_hidden: 32, ..Default::default() },
            learning_rate: lr, epochs: 30, batch_size: 4, windows_per_episode: wpe, augment_px: aug, seed: 5,
            ..PipelineConfig::default()
        };
        let t = std::time::Instant::now();
        let (_, rep) = train(&eps, &config).unwrap();
        println!("lr {lr} wpe {wpe} aug {aug} C{c} Dd{dd} tc{tc}: {:.3} -> {:.3} ({:.0}s) ratio {:.2}",
            rep.loss_curve[0], rep.loss_curve.last().unwrap(), t.elapsed().as_secs_f32(),
            rep.loss_curve.last().unwrap() / rep.loss_curve[0]);
    }
}
