use alda_lab::diffpolicy::{Policy, PolicyMode};
use alda_lab::factorworld::dataset::DemoDataset;
use alda_lab::factorworld::factors::IMG_LEN;
use alda_lab::numcore::Rng;

fn stats(p: &Policy, frames: &[f32], n: usize, label: &str) {
    let z = p.encode_latents(frames, n).unwrap();
    let nz = 20;
    let mut stds = vec![0.0f32; nz];
    for d in 0..nz {
        let m: f32 = (0..n).map(|f| z[f*nz+d]).sum::<f32>() / n as f32;
        let v: f32 = (0..n).map(|f| { let x = z[f*nz+d]-m; x*x }).sum::<f32>() / n as f32;
        stds[d] = v.sqrt();
    }
    let max_std = stds.iter().cloned().fold(0.0f32, f32::max);
    let mean_std = stds.iter().sum::<f32>() / nz as f32;
    let sat = z.iter().filter(|v| v.abs() > 0.99).count() as f32 / z.len() as f32;
    println!("{label}: latent std mean {mean_std:.4} max {max_std:.4}, frac |z|>0.99: {sat:.3}");
}

fn main() {
    let ds = DemoDataset::load(std::path::Path::new("/root/calib/demos_rg")).unwrap();
    let mut frames = Vec::new();
    for ep in ds.episodes.iter().take(32) {
        for &t in &[0usize, ep.len / 2] {
            frames.extend(ep.images[t*IMG_LEN..(t+1)*IMG_LEN].iter().map(|&b| b as f32 / 255.0));
        }
    }
    let n = frames.len() / IMG_LEN;
    let mut arch = Rng::new(0);
    let fresh = Policy::new(PolicyMode::AldaDp, &mut arch);
    stats(&fresh, &frames, n, "fresh-init");
    for name in std::env::args().skip(1) {
        let mut arch = Rng::new(0);
        let p = Policy::load(std::path::Path::new(&format!("/root/calib/models/{name}")), &mut arch).unwrap();
        stats(&p, &frames, n, &name);
    }
}
