// temporary diagnostic: rewrite-strength sweep
use difflab::config::RunConfig;
use difflab::model_io::{load_checkpoint, load_trajectory};
use difflab_core::invert::reconstruct_plain;
use difflab_core::mirror::{mirror_reconstruct, RewriteConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let out = std::path::PathBuf::from(&args[1]);
    let cfg = RunConfig::default();
    let m = load_checkpoint(&out.join("model.ckpt")).unwrap();
    let s = cfg.schedule().unwrap();
    let g = cfg.guidance().unwrap();
    let mut plain_total = 0.0;
    let mut mirrors = vec![0.0f64; 5];
    let combos = [(1e-4, 10usize), (1e-3, 10), (1e-2, 10), (3e-3, 30), (1e-2, 30)];
    let n = 6;
    for img in 0..n {
        let traj = load_trajectory(&out.join(format!("trajectories/eval_{img:04}.traj"))).unwrap();
        let plain = reconstruct_plain(&m, &s, &g, &traj).unwrap();
        plain_total += plain.rel_displacement;
        for (slot, (lr, k)) in combos.iter().enumerate() {
            let rc = RewriteConfig { lr: *lr, inner_steps: *k, ..RewriteConfig::default() };
            let mr = mirror_reconstruct(&m, &s, &g, &traj, &rc).unwrap();
            mirrors[slot] += mr.rel_displacement;
        }
    }
    println!("mean plain: {:.4}", plain_total / n as f64);
    for (slot, (lr, k)) in combos.iter().enumerate() {
        println!(
            "lr={lr:<7} K={k:<3}: mean mirror={:.4} ratio={:.3}",
            mirrors[slot] / n as f64,
            mirrors[slot] / plain_total
        );
    }
}
