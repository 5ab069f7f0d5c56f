use alda_lab::alda::{AldaConfig, AldaModel};
use alda_lab::factorworld::env;
use alda_lab::factorworld::factors::{FactorVector, IMG_LEN};
use alda_lab::factorworld::render;
use alda_lab::factorworld::Task;
use alda_lab::numcore::{AdamState, Graph, Rng};

// Supervised decoder capability test: latent = ground-truth scene factors.
fn scene(rng: &mut Rng) -> (Vec<f32>, Vec<f32>) {
    let base = FactorVector::training_default();
    let mut st = env::reset(Task::ReachGrasp, rng);
    st.gripper_pos = [rng.uniform(-0.6, 0.6), rng.uniform(-0.6, 0.6), rng.uniform(0.02, 0.5)];
    let f = env::factors_for_state(&base, &st);
    let img = render::render(&f, &st).unwrap();
    let mut z = vec![0.0f32; 20];
    z[0] = st.obj_pos[0]; z[1] = st.obj_pos[1];
    z[2] = st.gripper_pos[0]; z[3] = st.gripper_pos[1]; z[4] = st.gripper_pos[2];
    z[5] = st.goal_pos[0]; z[6] = st.goal_pos[1]; z[7] = st.goal_pos[2];
    (z, img)
}

fn main() {
    let lr: f32 = std::env::args().nth(1).map(|s| s.parse().unwrap()).unwrap_or(1e-3);
    let steps: usize = std::env::args().nth(2).map(|s| s.parse().unwrap()).unwrap_or(4000);
    let mut rng = Rng::new(2);
    let model = AldaModel::new(AldaConfig::default(), &mut rng);
    let mut params = model.params.clone();
    let mut adam = AdamState::new(&params, lr);
    let batch = 8usize;
    // decoder-only training: bind, decode(z_true), mse
    for step in 0..steps {
        let mut zs = Vec::with_capacity(batch * 20);
        let mut imgs = Vec::with_capacity(batch * IMG_LEN);
        for _ in 0..batch {
            let (z, img) = scene(&mut rng);
            zs.extend(z); imgs.extend(img);
        }
        let mut g = Graph::new(step as u64);
        let mut m2 = model.clone();
        m2.params = params.clone();
        let b = m2.bind(&mut g, true).unwrap();
        let zt = g.leaf(zs, &[batch, 20], false).unwrap();
        let out = m2.decode(&mut g, &b, zt).unwrap();
        let target = g.leaf(imgs, &[batch, 3, 64, 64], false).unwrap();
        let loss = g.mse(out, target).unwrap();
        let lv = g.value(loss)[0];
        g.backward(loss).unwrap();
        let grads = params.grads(&g, &b.tensors);
        adam.step(&mut params, &grads).unwrap();
        if step % 500 == 0 || step + 1 == steps {
            println!("step {step} decoder-mse {:.5}", lv);
        }
    }
}
