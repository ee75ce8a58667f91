// capacity recon: how separated are partitions by final val loss?
use dmtg::autodiff::AdamHyper;
use dmtg::baselines::train_fixed_partition;
use dmtg::grouping::{pretrain_naive, Arch, InitWeights, Partition, TrainBudget};
use dmtg::tasksuite::{generate, PlantedSpec};

fn main() {
    let spec = PlantedSpec::default();
    let suite = generate(&spec).unwrap();
    for width in [6usize, 5, 4] {
        let arch = Arch { input_dim: 16, depth: 2, width, shared_layers: 0 };
        let hyper = AdamHyper { lr: 0.01, ..AdamHyper::default() };
        let pre = TrainBudget::new(30, 128, hyper);
        let budget = TrainBudget::new(60, 128, hyper);
        let (naive, _) = pretrain_naive(&suite, arch, &pre, 1).unwrap();
        let planted = Partition::from_labels(vec![0, 0, 1, 1, 2, 2]);
        let crossed = Partition::from_labels(vec![0, 1, 2, 0, 1, 2]);
        let allin = Partition::all_in_one(6);
        let mut row = format!("width {width}:");
        for (name, p) in [("planted", &planted), ("crossed", &crossed), ("all-in-one", &allin)] {
            let s = train_fixed_partition(p, &suite, &budget, InitWeights::Naive(&naive), 1).unwrap();
            row += &format!("  {name} {:.4}", s.per_task_val_loss.iter().sum::<f64>());
        }
        println!("{row}");
    }
}
