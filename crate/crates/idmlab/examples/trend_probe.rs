// temporary probe for benchmark calibration
use idmlab::config::LabConfig;
use idmlab::dataset::{generate_dataset, load_split};
use idmlab::evalbench::*;
use idmlab::pipeline::{train, AblationFlags};
use std::time::Instant;

fn bench_config() -> LabConfig {
    let mut c = LabConfig::default();
    c.world.resolution = 64;
    c.world.episode_len = 24;
    c.dataset.train_fraction = 0.75;
    c.pipeline.encoder.resolution = 64;
    c.pipeline.encoder.patch = 8;
    c.pipeline.encoder.channels = 12;
    c.pipeline.encoder.context_dim = 12;
    c.pipeline.dfa.dir_channels = 16;
    c.pipeline.dfa.tap_len = 5;
    c.pipeline.tdr.window = 8;
    c.pipeline.tdr.fusion_hidden = 6;
    c.pipeline.tdr.tcn_channels = 24;
    c.pipeline.tdr.regressor_hidden = 96;
    c.pipeline.learning_rate = 4e-3;
    c.pipeline.epochs = 8;
    c.pipeline.windows_per_episode = 4;
    c
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let seeds: Vec<u64> = if args.len() > 1 { args[1].split(',').map(|s| s.parse().unwrap()).collect() } else { vec![0] };
    let epochs: usize = if args.len() > 2 { args[2].parse().unwrap() } else { 8 };
    let total = Instant::now();
    let mut config = bench_config();
    config.pipeline.epochs = epochs;

    for &seed in &seeds {
        let t0 = Instant::now();
        let dir = tempfile_dir(seed);
        let records = generate_dataset(&config, 80, 1000 + seed).unwrap();
        idmlab::dataset::save_dataset(&records, &config, &dir).unwrap();
        let train_eps = load_split(&dir, &config, DataSplit::Train).unwrap();
        let eval_eps = load_split(&dir, &config, DataSplit::Eval).unwrap();
        println!("seed {seed}: {} train / {} eval, gen {:.1}s", train_eps.len(), eval_eps.len(), t0.elapsed().as_secs_f32());

        let mut variants = Vec::new();
        for name in ["full", "no_dfa", "no_tdr", "no_mask", "no_refine"] {
            let t1 = Instant::now();
            let mut cfg = config.pipeline.clone();
            cfg.seed = seed;
            cfg.ablation = AblationFlags::variant(name).unwrap();
            let (params, rep) = train(&train_eps, &cfg).unwrap();
            println!("  {name}: train {:.1}s loss {:.3}->{:.3}", t1.elapsed().as_secs_f32(),
                rep.loss_curve[0], rep.loss_curve.last().unwrap());
            variants.push(BenchVariant { name: name.into(), params });
        }
        let t2 = Instant::now();
        let reports = run_benchmark(&variants, &eval_eps, &ThresholdSpec::default(), &SplitRule::default()).unwrap();
        println!("  eval {:.1}s", t2.elapsed().as_secs_f32());
        for r in &reports {
            println!("  {:>9}: light acc {:.3} apd {:.3} l1 {:.4} | heavy acc {:.3} apd {:.3} l1 {:.4}",
                r.variant, r.light.acc, r.light.acc_per_dim, r.light.l1, r.heavy.acc, r.heavy.acc_per_dim, r.heavy.l1);
        }
        std::fs::remove_dir_all(&dir).ok();
    }
    println!("TOTAL {:.1}s", total.elapsed().as_secs_f32());
}

fn tempfile_dir(seed: u64) -> std::path::PathBuf {
    let d = std::env::temp_dir().join(format!("idmlab_trend_{seed}"));
    std::fs::create_dir_all(&d).unwrap();
    d
}
