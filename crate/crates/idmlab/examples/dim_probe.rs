// temporary probe: per-dim error breakdown
use idmlab::config::LabConfig;
use idmlab::dataset::{generate_dataset, load_split, save_dataset};
use idmlab::evalbench::*;
use idmlab::pipeline::{train, AblationFlags};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(60);
    let c: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(12);
    let dd: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(8);
    let patch: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(4);
    let mut config = LabConfig::default();
    config.world.resolution = 64;
    config.world.episode_len = 24;
    config.pipeline.encoder.resolution = 64;
    config.pipeline.encoder.patch = patch;
    config.pipeline.encoder.channels = c;
    config.pipeline.encoder.context_dim = c;
    config.pipeline.dfa.dir_channels = dd;
    config.pipeline.tdr.tcn_channels = 2 * c;
    config.pipeline.tdr.regressor_hidden = 96;
    config.pipeline.tdr.fusion_hidden = 8;
    config.pipeline.learning_rate = 4e-3;
    config.pipeline.epochs = epochs;
    config.pipeline.windows_per_episode = 6;
    config.pipeline.seed = 0;

    let dir = std::env::temp_dir().join("idmlab_dim_probe");
    std::fs::create_dir_all(&dir).unwrap();
    let records = generate_dataset(&config, 80, 1000).unwrap();
    save_dataset(&records, &config, &dir).unwrap();
    let train_eps = load_split(&dir, &config, DataSplit::Train).unwrap();
    let eval_eps = load_split(&dir, &config, DataSplit::Eval).unwrap();

    let t = std::time::Instant::now();
    let mut cfg = config.pipeline.clone();
    cfg.ablation = AblationFlags::variant("full").unwrap();
    let (params, rep) = train(&train_eps, &cfg).unwrap();
    println!("train {:.0}s loss {:.3}->{:.3}", t.elapsed().as_secs_f32(), rep.loss_curve[0], rep.loss_curve.last().unwrap());

    let samples = evaluate_model(&params, &eval_eps).unwrap();
    let rule = SplitRule::default();
    let d = samples[0].gt.dim();
    for (name, low, hi) in [("light", 0.15, 2.0), ("heavy", 0.0, 0.15)] {
        let sel: Vec<_> = samples.iter().filter(|s| s.occupancy >= low && s.occupancy < hi).collect();
        let mut mae = vec![0.0; d];
        let mut pass = vec![0usize; d];
        let mut acc = 0usize;
        for s in &sel {
            let mut all = true;
            for i in 0..d {
                let e = (s.pred.values[i] - s.gt.values[i]).abs();
                mae[i] += e;
                let thr = if i < 6 { 0.1 } else { 0.5 };
                if e <= thr { pass[i] += 1; } else { all = false; }
            }
            if all { acc += 1; }
        }
        let n = sel.len() as f64;
        print!("{name} (n={}) acc {:.3} | mae:", sel.len(), acc as f64 / n);
        for m in &mae { print!(" {:.3}", m / n); }
        print!(" | pass:");
        for p in &pass { print!(" {:.2}", *p as f64 / n); }
        println!();
    }
    let _ = rule;
    std::fs::remove_dir_all(&dir).ok();
}
