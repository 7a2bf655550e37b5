use icl_core::config::*;
use icl_core::data::*;
use icl_core::decode::DecodeConfig;
use icl_core::trainer::train;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let algo = args.get(1).map(|s| s.as_str()).unwrap_or("none");
    let seed: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(42);
    let max_epochs: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(20);
    let cfg = RunConfig {
        format: CONFIG_FORMAT.to_string(),
        seed,
        max_epochs,
        data: DataConfig {
            synthetic: Some(SyntheticConfig {
                task: SynthTask::Reverse,
                alphabet_size: 12,
                len_range: (5, 20),
                train: 2000,
                val: 200,
                test: 200,
                seed: 42,
            }),
            jsonl: None,
            mode: TokenizeMode::Whitespace,
        },
        model: icl_core::model::ModelConfig::default(),
        optim: OptimConfig { lr: 3e-3, batch_size: 32 },
        curriculum: CurriculumConfig {
            algorithm: match algo {
                "icl" => Algorithm::Icl,
                "tcl" => Algorithm::Tcl,
                _ => Algorithm::None,
            },
            ..CurriculumConfig::default()
        },
        ranking: RankingConfig::default(),
        validation: ValidationConfig::default(),
        decode: DecodeConfig { max_len: 24, ..DecodeConfig::default() },
    };
    let t0 = std::time::Instant::now();
    let out = train(&cfg, None).unwrap();
    eprintln!(
        "algo {} seed {}: {:.2}s, epochs {}, best val loss {:.6}, em {:?}",
        algo, seed,
        t0.elapsed().as_secs_f64(),
        out.report.totals.epochs,
        out.report.test_metrics["val_loss"],
        out.report.test_metrics.get("exact_match")
    );
}
