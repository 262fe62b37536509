// temporary probe
use idmlab::synth::*;
fn main() {
    let world = WorldConfig::default();
    for regime in [TruncationRegime::Light, TruncationRegime::Heavy] {
        let mut means = vec![];
        let mut zero_frames = 0usize;
        let mut frames = 0usize;
        let mut heavy_frames = 0usize;
        for seed in 0..16u64 {
            let rec = generate_episode(&world, regime, "p", seed).unwrap();
            means.push(rec.mean_occupancy());
            for o in &rec.occupancy {
                frames += 1;
                if *o == 0.0 { zero_frames += 1; }
                if *o < 0.15 { heavy_frames += 1; }
            }
        }
        let mn = means.iter().cloned().fold(f64::MAX, f64::min);
        let mx = means.iter().cloned().fold(f64::MIN, f64::max);
        let avg: f64 = means.iter().sum::<f64>() / means.len() as f64;
        println!("{regime:?}: mean avg {avg:.3} range [{mn:.3},{mx:.3}] zero-frames {zero_frames}/{frames} sub-thresh {heavy_frames}/{frames}");
    }
    // full-view single big arm on small canvas
    let world = WorldConfig {
        canvas: 64, crop: 64, resolution: 64,
        arm: ArmConfig { num_arms: 1, joints_per_arm: 3, link_lengths: vec![16.0,13.0,10.0], link_thickness: 13.0, ..ArmConfig::default() },
        ..WorldConfig::default()
    };
    for seed in [1,2,3,4,5u64] {
        let rec = generate_episode(&world, TruncationRegime::Light, "big", seed).unwrap();
        let mn = rec.occupancy.iter().cloned().fold(f64::MAX, f64::min);
        println!("full-view arm seed {seed}: mean {:.3} min-frame {mn:.3}", rec.mean_occupancy());
    }
}
