// S-dynamics sanity: constant loss grid + gradient check through the mask
use dmtg::autodiff::{adam_step, AdamHyper, AdamState, Graph, Mat, ParamSet};
use dmtg::grouping::{extract_partition, masked_loss, sample_gumbel};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

fn main() {
    // Part 1: constant grid. task0 cheapest on branch0, task1 on branch1.
    let grid = [[1.0f64, 2.0], [2.0, 1.0]];
    for tau in [4.0, 1.0] {
        let mut params = ParamSet::new();
        let s_id = params.insert("s", Mat::filled(2, 2, 0.5));
        let mut adam = AdamState::new(&params, AdamHyper { lr: 0.01, beta2: 0.9, ..AdamHyper::default() });
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for _ in 0..2000 {
            let mut g = Graph::new();
            let lease = params.lease(&mut g).unwrap();
            let noise = g.constant(sample_gumbel(2, 2, &mut rng)).unwrap();
            let shifted = g.add(lease.node(s_id), noise).unwrap();
            let scaled = g.scale(shifted, 1.0 / tau).unwrap();
            let z = g.row_softmax(scaled).unwrap();
            let mut cells = Vec::new();
            for row in &grid {
                for &v in row {
                    cells.push(g.constant(Mat::scalar(v)).unwrap());
                }
            }
            let loss = masked_loss(&mut g, &cells, z).unwrap();
            g.backward(loss).unwrap();
            params.absorb_grads(&g, &lease);
            adam_step(&mut params, &mut adam).unwrap();
        }
        let s = params.value(s_id);
        println!("tau {tau}: S = {:?} -> partition {}", s.data(), extract_partition(s));
    }

    // Part 2: gradient of masked loss wrt S vs finite differences on a real model
    use dmtg::grouping::{pretrain_naive, Arch, TrainBudget};
    use dmtg::tasksuite::{generate, PlantedSpec, SplitKind};
    let mut spec = PlantedSpec::default();
    spec.n_tasks = 3;
    spec.true_partition = dmtg::Partition::from_labels(vec![0, 0, 1]);
    spec.kinds = vec![dmtg::tasksuite::TaskKind::Regression; 3];
    spec.samples = dmtg::tasksuite::SampleCounts { train: 50, val: 20, test: 20 };
    let suite = generate(&spec).unwrap();
    let arch = Arch { input_dim: 16, depth: 2, width: 5, shared_layers: 0 };
    let hyper = AdamHyper { lr: 0.01, ..AdamHyper::default() };
    let (naive, _) = pretrain_naive(&suite, arch, &TrainBudget::new(3, 25, hyper), 1).unwrap();

    let mut params = ParamSet::new();
    let model = dmtg::grouping::GroupModel::clone_from_naive(&mut params, &naive, 2).unwrap();
    let s0 = Mat::from_fn(3, 2, |i, j| 0.5 + 0.1 * (i as f64) - 0.07 * (j as f64));
    let noise = sample_gumbel(3, 2, &mut ChaCha12Rng::seed_from_u64(5));
    let idx: Vec<usize> = (0..50).collect();
    let (xb, ybs) = suite.gather_batch(SplitKind::Train, &idx);

    let eval = |s: &Mat, track: bool| -> (f64, Option<Mat>) {
        let mut params2 = params.clone();
        let s_id = params2.insert("s", s.clone());
        let mut g = Graph::new();
        let lease = params2.lease(&mut g).unwrap();
        let x = g.constant(xb.clone()).unwrap();
        let ys: Vec<_> = ybs.iter().map(|y| g.constant(y.clone()).unwrap()).collect();
        let noise_node = g.constant(noise.clone()).unwrap();
        let shifted = g.add(lease.node(s_id), noise_node).unwrap();
        let scaled = g.scale(shifted, 1.0 / 4.0).unwrap();
        let z = g.row_softmax(scaled).unwrap();
        let lmat = model.forward_loss_matrix(&mut g, &lease, x, &ys, &spec.kinds).unwrap();
        let flat: Vec<_> = lmat.into_iter().flatten().collect();
        let loss = masked_loss(&mut g, &flat, z).unwrap();
        let v = g.value(loss).scalar_value();
        if track {
            g.backward(loss).unwrap();
            params2.absorb_grads(&g, &lease);
            (v, params2.iter().last().unwrap().grad.clone())
        } else {
            (v, None)
        }
    };

    let (_, grad) = eval(&s0, true);
    let grad = grad.unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..3 {
        for j in 0..2 {
            let h = 1e-5;
            let mut p = s0.clone(); p.set(i, j, s0.get(i, j) + h);
            let mut m = s0.clone(); m.set(i, j, s0.get(i, j) - h);
            let fd = (eval(&p, false).0 - eval(&m, false).0) / (2.0 * h);
            let a = grad.get(i, j);
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-12);
            println!("  S[{i}][{j}]: analytic {a:+.6e} fd {fd:+.6e} rel {rel:.2e}");
            worst = worst.max(rel);
        }
    }
    println!("masked-loss dS gradcheck worst rel err: {worst:.2e}");
}
