// failure anatomy on the 4-task case
use dmtg::autodiff::AdamHyper;
use dmtg::grouping::{extract_partition, pretrain_naive, train_one_shot, Arch, TemperatureSchedule, TrainBudget};
use dmtg::tasksuite::{generate, PlantedSpec, SampleCounts, SplitKind, TaskKind};
use dmtg::Partition;

fn main() {
    let mut spec = PlantedSpec::default();
    spec.n_tasks = 6;
    spec.true_partition = Partition::from_labels(vec![0, 0, 1, 1, 2, 2]);
    spec.kinds = vec![TaskKind::Regression; 6];
    spec.samples = SampleCounts { train: 2000, val: 500, test: 500 };
    let suite = generate(&spec).unwrap();
    let arch = Arch { input_dim: 16, depth: 2, width: 5, shared_layers: 0 };
    let hyper = AdamHyper { lr: 0.01, beta2: 0.9, ..AdamHyper::default() };
    let idx: Vec<usize> = (0..500).collect();
    let (xv, yv) = suite.gather_batch(SplitKind::Val, &idx);

    for seed in 1..=10u64 {
        let (naive, _) = pretrain_naive(&suite, arch, &TrainBudget::new(10, 64, hyper), seed).unwrap();
        let mut budget = TrainBudget::new(500, 64, hyper);
        budget.plateau_min_lr = hyper.lr;
        let out = train_one_shot(&suite, 3, &naive, &TemperatureSchedule::Fixed { tau: 4.0 }, &budget, seed).unwrap();
        let s = out.assignment.unwrap().scores(&out.params).clone();
        let part = extract_partition(&s);
        let ok = part.is_equivalent(&spec.true_partition);
        let grid = out.model.eval_loss_grid(&out.params, &xv, &yv, &spec.kinds, );
        let mut consistent = true;
        let mut rows = String::new();
        for i in 0..6 {
            let ls: Vec<f64> = (0..3).map(|k| grid[k][i]).collect();
            let best = (0..3).min_by(|&a, &b| ls[a].partial_cmp(&ls[b]).unwrap()).unwrap();
            if best != part.group_of(i) { consistent = false; }
            rows += &format!(" [{:.3} {:.3} {:.3}]", ls[0], ls[1], ls[2]);
        }
        println!("seed {seed}: {} found {} selfconsistent {} grid{}", if ok {"OK  "} else {"FAIL"}, part, consistent, rows);
    }
}
