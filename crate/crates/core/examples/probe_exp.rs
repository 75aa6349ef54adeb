use std::time::Instant;
use bagforge::data::{generate, GenConfig, SplitPlan};
use bagforge::metrics::domain_leakage_probe;
use bagforge::models::{predict, ModelConfig};
use bagforge::train::*;

fn main() {
    env_logger::init();
    let gen: GenConfig = serde_json::from_str(&std::env::var("GEN").unwrap_or("{}".into())).unwrap();
    let tc: TrainConfig = serde_json::from_str(&std::env::var("TC").unwrap_or("{}".into())).unwrap();
    let variants: Vec<Variant> = std::env::var("VARIANTS").unwrap_or("baseline,+siamese,+dann,full".into())
        .split(',').map(|s| s.parse().unwrap()).collect();
    let model: ModelConfig = serde_json::from_str(&std::env::var("MODEL").unwrap_or("{}".into())).unwrap();
    let seeds: u64 = std::env::var("SEEDS").map(|s| s.parse().unwrap()).unwrap_or(5);
    let mut table = vec![vec![]; variants.len()];
    for seed in 0..seeds {
        let ds = generate(&GenConfig { seed, ..gen.clone() }).unwrap();
        let plan = SplitPlan::new(&ds, 0.15, 5, seed).unwrap();
        for (vi, v) in variants.iter().enumerate() {
            let t = Instant::now();
            let cfg = TrainConfig { variant: *v, seed, ..tc.clone() };
            let r = run_fold(&ds, &plan, 0, &model, &cfg).unwrap();
            let ids: Vec<String> = plan.fold_val(0).unwrap().into_iter().chain(plan.test_ids.clone()).collect();
            let bags = ds.select(&ids).unwrap();
            let feats: Vec<Vec<f64>> = predict(&r.main, &bags).unwrap().into_iter().map(|p| p.feature.values().to_vec()).collect();
            let doms: Vec<usize> = bags.iter().map(|b| b.domain).collect();
            let leak = domain_leakage_probe(&feats, &doms, ds.num_domains, seed).unwrap();
            println!("seed {seed} {v:>14}: val auc {:.4} test auc {:.4} leak {:.3} epochs {} best {:?} gene {:?} {:.1}s",
                r.val.rocauc, r.test.rocauc, leak, r.history.records.len(), r.history.best_record().map(|b| b.epoch), r.gene_val_acc, t.elapsed().as_secs_f64());
            if std::env::var("HIST").is_ok() { for r in r.history.records.iter().step_by(3) { println!("   {:3} lam {:.3} ls {:?} ly {:?} ld {:?} tot {:.4} vauc {:.4} vacc {:.3}", r.epoch, r.lambda_p, r.l_s.map(|v| (v*1000.0).round()/1000.0), r.l_y.map(|v| (v*1000.0).round()/1000.0), r.l_d.map(|v| (v*1000.0).round()/1000.0), r.l_tot, r.val_rocauc, r.val_acc); } }
            table[vi].push((r.val.rocauc, leak));
        }
    }
    for (vi, v) in variants.iter().enumerate() {
        let n = table[vi].len() as f64;
        println!("{v:>14}: mean val auc {:.4} mean leak {:.3}", table[vi].iter().map(|x| x.0).sum::<f64>() / n, table[vi].iter().map(|x| x.1).sum::<f64>() / n);
    }
}
