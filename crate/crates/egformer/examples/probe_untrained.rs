use egformer::data::{load_dataset, SceneRecord, Split};
use egformer::model::{evaluate, mean_abs_rel, parse_arch, EgModel, ModelConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let data = &args[1];
    let records = load_dataset(std::path::Path::new(data)).unwrap();
    let test: Vec<&SceneRecord> = records.iter().filter(|r| r.split == Split::Test).collect();
    let train: Vec<&SceneRecord> = records.iter().filter(|r| r.split == Split::Train).collect();
    let mut cfg = ModelConfig::new(32, 64, 16, 4, parse_arch("EE-E-EE").unwrap());
    cfg.seed = 0;
    let untrained = EgModel::new(cfg).unwrap();
    println!("untrained test abs_rel: {:.4}", mean_abs_rel(&evaluate(&untrained, &test).unwrap()));
    if args.len() > 2 {
        let trained = EgModel::load(std::path::Path::new(&args[2])).unwrap();
        println!("trained test  abs_rel: {:.4}", mean_abs_rel(&evaluate(&trained, &test).unwrap()));
        println!("trained train abs_rel: {:.4}", mean_abs_rel(&evaluate(&trained, &train).unwrap()));
    }
}
