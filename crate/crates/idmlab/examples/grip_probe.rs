// temporary probe: gripper learnability with near-static joints
use idmlab::config::LabConfig;
use idmlab::dataset::{generate_dataset, load_split, save_dataset};
use idmlab::evalbench::*;
use idmlab::pipeline::train;

fn main() {
    let mut config = LabConfig::default();
    config.world.resolution = 64;
    config.world.episode_len = 24;
    
    config.pipeline.encoder.resolution = 64;
    config.pipeline.encoder.patch = 8;
    config.pipeline.encoder.channels = 14;
    config.pipeline.encoder.context_dim = 14;
    config.pipeline.dfa.dir_channels = 16;
    config.pipeline.tdr.tcn_channels = 24;
    config.pipeline.tdr.regressor_hidden = 48;
    config.pipeline.learning_rate = 4e-3;
    config.pipeline.epochs = 30;
    config.pipeline.windows_per_episode = 6;
    config.dataset.light_fraction = 1.0; // full visibility only

    let dir = std::env::temp_dir().join("idmlab_grip_probe");
    std::fs::create_dir_all(&dir).unwrap();
    let records = generate_dataset(&config, 40, 77).unwrap();
    save_dataset(&records, &config, &dir).unwrap();
    let train_eps = load_split(&dir, &config, DataSplit::Train).unwrap();
    let eval_eps = load_split(&dir, &config, DataSplit::Eval).unwrap();

    let (params, rep) = train(&train_eps, &config.pipeline).unwrap();
    println!("loss {:.3} -> {:.3}", rep.loss_curve[0], rep.loss_curve.last().unwrap());
    let samples = evaluate_model(&params, &eval_eps).unwrap();
    let d = samples[0].gt.dim();
    let mut mae = vec![0.0; d];
    for s in &samples {
        for i in 0..d {
            mae[i] += (s.pred.values[i] - s.gt.values[i]).abs();
        }
    }
    print!("eval mae:");
    for m in &mae { print!(" {:.3}", m / samples.len() as f64); }
    println!();
    std::fs::remove_dir_all(&dir).ok();
}
