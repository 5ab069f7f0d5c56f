use alda_lab::alda::{AldaConfig, AldaModel};
use alda_lab::factorworld::dataset::DemoDataset;
use alda_lab::factorworld::factors::IMG_LEN;
use alda_lab::numcore::{AdamState, Graph, Rng};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let lr: f32 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(1e-3);
    let steps: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(5000);
    let ds = DemoDataset::load(std::path::Path::new("/root/calib/demos_rg")).unwrap();
    let mut rng = Rng::new(1);
    let mut model = AldaModel::new(AldaConfig::default(), &mut rng);
    let mut adam = AdamState::new(&model.params, lr);
    let batch = 8usize;
    for step in 0..steps {
        let mut obs = Vec::with_capacity(batch * IMG_LEN);
        for _ in 0..batch {
            let ep = &ds.episodes[rng.index(ds.episodes.len())];
            let t = rng.index(ep.len);
            obs.extend(ep.images[t*IMG_LEN..(t+1)*IMG_LEN].iter().map(|&b| b as f32/255.0));
        }
        let mut g = Graph::new(step as u64);
        let b = model.bind(&mut g, true).unwrap();
        let x = g.leaf(obs, &[batch, 3, 64, 64], false).unwrap();
        let out = model.loss(&mut g, &b, x).unwrap();
        g.backward(out.total).unwrap();
        let grads = model.params.grads(&g, &b.tensors);
        adam.step(&mut model.params, &grads).unwrap();
        if step % 1000 == 0 || step + 1 == steps {
            // latent std across a probe batch
            let mut pb = Vec::new();
            let mut r2 = Rng::new(99);
            for _ in 0..32 {
                let ep = &ds.episodes[r2.index(ds.episodes.len())];
                let t = r2.index(ep.len);
                pb.extend(ep.images[t*IMG_LEN..(t+1)*IMG_LEN].iter().map(|&b| b as f32/255.0));
            }
            let mut g2 = Graph::new(0);
            let b2 = model.bind(&mut g2, false).unwrap();
            let x2 = g2.leaf(pb, &[32, 3, 64, 64], false).unwrap();
            let z2 = model.encode(&mut g2, &b2, x2).unwrap();
            let zv = g2.value(z2);
            let mut stds = 0.0f32; let mut mx = 0.0f32;
            for d in 0..20 {
                let m: f32 = (0..32).map(|f| zv[f*20+d]).sum::<f32>() / 32.0;
                let v: f32 = (0..32).map(|f| { let q = zv[f*20+d]-m; q*q }).sum::<f32>() / 32.0;
                stds += v.sqrt() / 20.0; mx = mx.max(v.sqrt());
            }
            println!("step {step} recon {:.5} commit {:.4} gap {:.4} zstd {:.3}/{:.3}", out.recon, out.commit, out.mean_abs_gap, stds, mx);
        }
    }
}
