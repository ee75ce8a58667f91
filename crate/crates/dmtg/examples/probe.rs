// scratch harness for hyperparameter recon; removed before ship
use dmtg::autodiff::AdamHyper;
use dmtg::grouping::{extract_partition, pretrain_naive, train_one_shot, Arch, TemperatureSchedule, TrainBudget};
use dmtg::metrics::partition_recovery;
use dmtg::tasksuite::{generate, PlantedSpec};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let lr: f64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(0.01);
    let main_epochs: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(60);
    let tau: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(4.0);
    let width: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(32);

    let spec = PlantedSpec::default();
    let suite = generate(&spec).unwrap();
    let depth: usize = args.get(10).map(|s| s.parse().unwrap()).unwrap_or(2);
    let arch = Arch { input_dim: 16, depth, width, shared_layers: 0 };
    let anneal_every: usize = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(0);
    let beta2: f64 = args.get(6).map(|s| s.parse().unwrap()).unwrap_or(0.999);
    let beta1: f64 = args.get(9).map(|s| s.parse().unwrap()).unwrap_or(0.9);
    let sched = if anneal_every > 0 {
        TemperatureSchedule::Anneal { start: tau, end: 1.0, factor: 0.8, epochs_per_decay: anneal_every }
    } else {
        TemperatureSchedule::Fixed { tau }
    };
    let hyper = AdamHyper { lr, beta1, beta2, ..AdamHyper::default() };
    let pretrain: usize = args.get(7).map(|s| s.parse().unwrap()).unwrap_or(10);
    let batch: usize = args.get(8).map(|s| s.parse().unwrap()).unwrap_or(128);
    let pre_budget = TrainBudget::new(pretrain, batch, hyper);
    let mut budget = TrainBudget::new(main_epochs, batch, hyper);
    budget.plateau_min_lr = hyper.lr;

    let mut exact = 0;
    let mut rand_sum = 0.0;
    let t0 = std::time::Instant::now();
    let seed0: u64 = args.get(11).map(|s| s.parse().unwrap()).unwrap_or(0);
    for seed in (seed0 * 10 + 1)..=(seed0 * 10 + 10) {
        let (naive, nh) = pretrain_naive(&suite, arch, &pre_budget, seed).unwrap();
        let out = train_one_shot(&suite, 3, &naive, &sched, &budget, seed).unwrap();
        let part = extract_partition(out.assignment.unwrap().scores(&out.params));
        let rec = partition_recovery(&part, &spec.true_partition).unwrap();
        let last = out.history.last().unwrap();
        println!(
            "seed {seed}: partition {} exact {} rand {:.3} val_total {:.4} (naive pretrain val {:.4})",
            part, rec.exact_match, rec.rand_index, last.val_total,
            nh.last().unwrap().val_total
        );
        if rec.exact_match { exact += 1; }
        rand_sum += rec.rand_index;
    }
    println!(
        "lr {lr} epochs {main_epochs} tau {tau} width {width}: exact {exact}/10 mean_rand {:.3} elapsed {:.1}s",
        rand_sum / 10.0, t0.elapsed().as_secs_f64()
    );
}
