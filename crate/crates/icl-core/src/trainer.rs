//! The training loop: batching, per-sample curriculum masks, optimizer
//! steps, validation cadence, best-model checkpointing, early stop, and the
//! variant-comparison runner.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use crate::config::{
    Algorithm, Cadence, CompareConfig, Granularity, RunConfig, ValMetric,
};
use crate::curriculum::{
    new_schedule, Action, CurriculumState, Strategy, ValidationVerdict,
};
use crate::data::{
    build_vocab, gen_synthetic, load_jsonl, Corpus, Split, Vocabulary, BOS_ID, EOS_ID,
};
use crate::decode::{beam_search, DecodeConfig};
use crate::error::{IclError, Result};
use crate::loss::{
    apply_weighting, batch_nll_node, cutting_point, mask_for, sc_mask, sg_mask, CutSpec,
    Criterion, LossMask,
};
use crate::metrics::{
    bleu, corpus_rouge_l, corpus_rouge_n, exact_match, mean_sample_nll, perplexity,
    ImprovementTracker, MaskPolicy,
};
use crate::model::{init_model, save_checkpoint, ModelParams};
use crate::optim::OptimizerState;
use crate::ranking::{order_corpus, CurriculumFeed};
use crate::report::{
    CompareReport, PhaseEvent, RunSummary, Totals, TrainReport, ValidationRecord, VariantDetail,
    VariantRow,
};
use crate::seeding::derive_seed;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

const MODEL_SEED_TAG: u64 = 1;
const SHUFFLE_SEED_TAG: u64 = 2;
const SCHEDULE_SEED_TAG: u64 = 3;
const SPLIT_SEED_TAGS: [u64; 3] = [10, 11, 12];

/// Corpora bound to the training vocabulary.
pub struct PreparedData {
    pub train: Corpus,
    pub val: Corpus,
    pub test: Option<Corpus>,
    pub vocab: Vocabulary,
}

pub fn prepare_data(cfg: &RunConfig) -> Result<PreparedData> {
    let mode = cfg.data.mode;
    let (mut train, mut val, mut test) = if let Some(s) = &cfg.data.synthetic {
        let gen = |count: usize, tag: u64, split: Split| -> Result<Corpus> {
            let mut c = gen_synthetic(
                s.task,
                s.alphabet_size,
                count,
                s.len_range,
                derive_seed(s.seed, tag),
            )?;
            c.split = split;
            Ok(c)
        };
        let train = gen(s.train, SPLIT_SEED_TAGS[0], Split::Train)?;
        let val = gen(s.val, SPLIT_SEED_TAGS[1], Split::Val)?;
        let test = if s.test > 0 {
            Some(gen(s.test, SPLIT_SEED_TAGS[2], Split::Test)?)
        } else {
            None
        };
        (train, val, test)
    } else if let Some(j) = &cfg.data.jsonl {
        let mut train = load_jsonl(&j.train, mode)?;
        train.split = Split::Train;
        let mut val = load_jsonl(&j.val, mode)?;
        val.split = Split::Val;
        let test = match &j.test {
            Some(p) => {
                let mut t = load_jsonl(p, mode)?;
                t.split = Split::Test;
                Some(t)
            }
            None => None,
        };
        (train, val, test)
    } else {
        return Err(IclError::Config("no data source".to_string()));
    };

    let vocab = build_vocab(&train, mode)?;
    train.bind_vocab(&vocab);
    val.bind_vocab(&vocab);
    if let Some(t) = &mut test {
        t.bind_vocab(&vocab);
    }
    Ok(PreparedData {
        train,
        val,
        test,
        vocab,
    })
}

/// Decode every input of a corpus with the configured beam settings.
pub fn generate_corpus(
    params: &ModelParams,
    corpus: &Corpus,
    decode: &DecodeConfig,
) -> Result<Vec<Vec<usize>>> {
    corpus
        .samples
        .iter()
        .map(|s| Ok(beam_search(params, &s.input_ids, decode)?.best.tokens))
        .collect()
}

/// All generation metrics for decoded ids against reference output ids.
pub fn generation_metrics(
    gens: &[Vec<usize>],
    refs: &[Vec<usize>],
) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    out.insert("exact_match".to_string(), exact_match(gens, refs)?);
    let b = bleu(gens, refs, 4)?;
    for (k, v) in b.iter().enumerate() {
        out.insert(format!("bleu{}", k + 1), *v);
    }
    out.insert("rouge1_f1".to_string(), corpus_rouge_n(gens, refs, 1)?.f1);
    out.insert("rouge2_f1".to_string(), corpus_rouge_n(gens, refs, 2)?.f1);
    out.insert("rougel_f1".to_string(), corpus_rouge_l(gens, refs)?.f1);
    Ok(out)
}

/// Compute one validation metric value on a corpus.
pub fn validate_now(
    params: &ModelParams,
    corpus: &Corpus,
    metric: ValMetric,
    decode: &DecodeConfig,
) -> Result<f64> {
    if corpus.is_empty() {
        return Err(IclError::Config("validation corpus is empty".to_string()));
    }
    match metric {
        ValMetric::Loss => mean_sample_nll(params, corpus, MaskPolicy::Full),
        ValMetric::Perplexity => perplexity(params, corpus, MaskPolicy::Full),
        _ => {
            let gens = generate_corpus(params, corpus, decode)?;
            let refs: Vec<Vec<usize>> =
                corpus.samples.iter().map(|s| s.output_ids.clone()).collect();
            let all = generation_metrics(&gens, &refs)?;
            all.get(metric.name()).copied().ok_or_else(|| {
                IclError::Config(format!("metric {} not computed", metric.name()))
            })
        }
    }
}

pub struct TrainOutcome {
    pub report: TrainReport,
    pub best_params: ModelParams,
    pub vocab: Vocabulary,
    /// Update count straight from the optimizer, for auditing the report.
    pub optimizer_steps: u64,
}

struct TrainerLoop<'a> {
    cfg: &'a RunConfig,
    data: &'a PreparedData,
    params: ModelParams,
    opt: OptimizerState,
    schedule: CurriculumState,
    tracker: ImprovementTracker,
    tcl_window: u64,
    step: u64,
    epoch: usize,
    records: Vec<ValidationRecord>,
    phase_events: Vec<PhaseEvent>,
    best_params: Option<ModelParams>,
    stopped_by: Option<&'static str>,
}

impl<'a> TrainerLoop<'a> {
    fn mask_for_sample(&self, n: usize) -> Result<LossMask> {
        let c = &self.cfg.curriculum;
        let base = match c.algorithm {
            Algorithm::None => mask_for(n, &CutSpec::hard(0.0, c.criterion))?,
            Algorithm::Icl => mask_for(
                n,
                &CutSpec {
                    p: self.schedule.p(),
                    criterion: c.criterion,
                    weighting: c.weighting,
                },
            )?,
            Algorithm::Tcl => {
                let f = crate::curriculum::tcl_fraction(self.step, self.tcl_window, c.f0)?;
                let m = (((n as f64) * f - 1e-9).ceil() as i64).clamp(1, n as i64) as usize;
                let mask = match c.criterion {
                    Criterion::Sc => sc_mask(n, n - m + 1)?,
                    Criterion::Sg => sg_mask(n, m)?,
                };
                apply_weighting(mask, c.weighting)
            }
        };
        Ok(base.extended_with_eos())
    }

    fn train_batch(&mut self, batch_idxs: &[usize]) -> Result<()> {
        let mut inputs = Vec::with_capacity(batch_idxs.len());
        let mut dec_inputs = Vec::with_capacity(batch_idxs.len());
        let mut targets = Vec::with_capacity(batch_idxs.len());
        let mut masks = Vec::with_capacity(batch_idxs.len());
        for &i in batch_idxs {
            let s = &self.data.train.samples[i];
            let n = s.output_ids.len();
            masks.push(self.mask_for_sample(n)?);
            inputs.push(s.input_ids.clone());
            let mut dec = Vec::with_capacity(n + 1);
            dec.push(BOS_ID);
            dec.extend_from_slice(&s.output_ids);
            dec_inputs.push(dec);
            let mut tgt = s.output_ids.clone();
            tgt.push(EOS_ID);
            targets.push(tgt);
        }

        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let (_, steps) = self
            .params
            .forward_batch(&mut tape, &bound, &inputs, &dec_inputs)?;
        let nodes: Vec<NodeId> = steps.iter().map(|s| s.logprobs).collect();
        let loss = batch_nll_node(&mut tape, &nodes, &targets, &masks)?;
        let loss_val = tape.value(loss).item();
        if !loss_val.is_finite() {
            return Err(IclError::Training(format!(
                "non-finite loss at epoch {} step {}",
                self.epoch, self.step
            )));
        }
        let mut grads = tape.backward(loss)?;
        let grad_tensors: Vec<Tensor> = bound
            .ids()
            .iter()
            .map(|&id| {
                grads
                    .take(id)
                    .unwrap_or_else(|| Tensor::zeros(tape.value(id).shape().to_vec()))
            })
            .collect();
        self.opt
            .adam_step(self.params.tensors_mut(), &grad_tensors)?;
        self.step += 1;
        Ok(())
    }

    fn validate(&mut self) -> Result<()> {
        let metric = self.cfg.validation.metric;
        let value = validate_now(&self.params, &self.data.val, metric, &self.cfg.decode)?;
        let obs = self.tracker.observe(value);
        let p_now = self.schedule.p();
        self.records.push(ValidationRecord {
            step: self.step,
            epoch: self.epoch,
            p: p_now,
            metric: value,
            improved: obs.improved,
        });
        eprintln!(
            "epoch {:>3} step {:>6} p {:.2} {} {:.6}{}",
            self.epoch,
            self.step,
            p_now,
            metric.name(),
            value,
            if obs.improved { " *" } else { "" }
        );
        if obs.improved {
            self.best_params = Some(self.params.clone());
        }
        let verdict = ValidationVerdict {
            improved: obs.improved,
            value,
            metric: metric.name().to_string(),
        };
        match self.schedule.on_validation(&verdict, self.step)? {
            Action::AdvancePhase { old_p, new_p } => {
                eprintln!("phase step {:>6} p {} -> {}", self.step, old_p, new_p);
                self.phase_events
                    .push(PhaseEvent::new(self.step, old_p, new_p));
                // The loss surface changes with the mask; stale Adam
                // moments from the easier phase throttle refinement.
                self.opt.reset_moments();
            }
            Action::Terminate => {
                self.stopped_by = Some("patience");
            }
            _ => {}
        }
        Ok(())
    }
}

/// Run one training job. Artifacts (report.json, curve.csv, best.ckpt) are
/// written when `out_dir` is given. Bitwise reproducible for a fixed
/// config: all randomness derives from the config seeds.
pub fn train(cfg: &RunConfig, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let started = Instant::now();
    let data = prepare_data(cfg)?;
    let cadence = cfg.validation.cadence()?;

    let mut model_cfg = cfg.model.clone();
    model_cfg.vocab_size = data.vocab.size();
    model_cfg.seed = derive_seed(cfg.seed, derive_seed(cfg.model.seed, MODEL_SEED_TAG));
    let params = init_model(&model_cfg)?;
    let opt = OptimizerState::new(cfg.optim.lr, params.tensors());

    let (p_start, stride) = cfg.resolved_schedule();
    let schedule_seed = derive_seed(cfg.seed, SCHEDULE_SEED_TAG);
    let schedule = match cfg.curriculum.algorithm {
        Algorithm::Icl => new_schedule(
            p_start,
            stride,
            cfg.curriculum.strategy,
            cfg.curriculum.patience_limit,
            schedule_seed,
        )?,
        // Vanilla and token-wise runs keep the same patience automaton,
        // pinned to full-sequence loss.
        _ => new_schedule(
            0.0,
            0.0,
            Strategy::Decrease,
            cfg.curriculum.patience_limit,
            schedule_seed,
        )?,
    };

    let batch = cfg.optim.batch_size;
    let steps_per_epoch = data.train.len().div_ceil(batch) as u64;
    let tcl_window = if cfg.curriculum.tcl_steps > 0 {
        cfg.curriculum.tcl_steps
    } else {
        2 * steps_per_epoch
    };

    let feed = match cfg.ranking.strategy {
        Some(strategy) => CurriculumFeed::new(
            order_corpus(&data.train, strategy)?,
            cfg.ranking.sorted_epochs,
            derive_seed(cfg.seed, SHUFFLE_SEED_TAG),
        ),
        None => CurriculumFeed::shuffled(
            data.train.len(),
            derive_seed(cfg.seed, SHUFFLE_SEED_TAG),
        ),
    };

    let tracker = ImprovementTracker::new(
        cfg.validation.metric.name(),
        cfg.validation.direction(),
    );

    let mut state = TrainerLoop {
        cfg,
        data: &data,
        params,
        opt,
        schedule,
        tracker,
        tcl_window,
        step: 0,
        epoch: 0,
        records: Vec::new(),
        phase_events: Vec::new(),
        best_params: None,
        stopped_by: None,
    };

    'epochs: for epoch in 1..=cfg.max_epochs {
        state.epoch = epoch;
        if matches!(cfg.curriculum.algorithm, Algorithm::Icl)
            && cfg.curriculum.random_granularity == Granularity::Epoch
        {
            state.schedule.redraw_random(state.step);
        }
        let order = feed.order_for(epoch);
        for batch_idxs in order.chunks(batch) {
            if matches!(cfg.curriculum.algorithm, Algorithm::Icl)
                && cfg.curriculum.random_granularity == Granularity::Batch
            {
                state.schedule.redraw_random(state.step);
            }
            state.train_batch(batch_idxs)?;
            if let Cadence::Steps(m) = cadence {
                if state.step % m == 0 {
                    state.validate()?;
                    if state.stopped_by.is_some() {
                        break 'epochs;
                    }
                }
            }
        }
        if let Cadence::Epochs(k) = cadence {
            if epoch % k == 0 {
                state.validate()?;
                if state.stopped_by.is_some() {
                    break 'epochs;
                }
            }
        }
    }
    // A run shorter than the cadence still needs one verdict to pick the
    // best model.
    if state.records.is_empty() {
        state.validate()?;
    }

    let stopped_by = state.stopped_by.unwrap_or("max_epochs");
    let best_params = state
        .best_params
        .take()
        .expect("at least one validation ran");

    let mut test_metrics = BTreeMap::new();
    test_metrics.insert(
        "val_loss".to_string(),
        mean_sample_nll(&best_params, &data.val, MaskPolicy::Full)?,
    );
    test_metrics.insert(
        "val_perplexity".to_string(),
        perplexity(&best_params, &data.val, MaskPolicy::Full)?,
    );
    if let Some(test) = &data.test {
        if !test.is_empty() {
            let gens = generate_corpus(&best_params, test, &cfg.decode)?;
            let refs: Vec<Vec<usize>> =
                test.samples.iter().map(|s| s.output_ids.clone()).collect();
            test_metrics.extend(generation_metrics(&gens, &refs)?);
        }
    }

    let report = TrainReport {
        metric: cfg.validation.metric.name().to_string(),
        records: state.records,
        phase_events: state.phase_events,
        best_metric: state.tracker.best().expect("tracker observed a value"),
        best_checkpoint: "best.ckpt".to_string(),
        totals: Totals {
            epochs: state.epoch,
            steps: state.step,
        },
        stopped_by: stopped_by.to_string(),
        test_metrics,
    };

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        report.write_json(dir.join("report.json"))?;
        report.write_curve_csv(dir.join("curve.csv"))?;
        save_checkpoint(&best_params, &data.vocab, dir.join("best.ckpt"))?;
    }
    eprintln!(
        "done: {} epochs, {} steps, best {} {:.6} ({:.1}s)",
        state.epoch,
        state.step,
        report.metric,
        report.best_metric,
        started.elapsed().as_secs_f64()
    );

    Ok(TrainOutcome {
        report,
        best_params,
        vocab: data.vocab.clone(),
        optimizer_steps: state.opt.step,
    })
}

/// Run every (variant, seed) cell of a comparison matrix. A failing
/// variant is recorded in its row without aborting the others.
pub fn compare(cfg: &CompareConfig, out_dir: &Path) -> Result<CompareReport> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let mut rows = Vec::new();
    let mut details = Vec::new();
    for variant in &cfg.variants {
        let mut runs = Vec::new();
        let mut error: Option<String> = None;
        for &seed in &cfg.seeds {
            let run_cfg = cfg.cell_config(variant, seed);
            let rel_dir = format!("{}/seed-{}", variant.name, seed);
            let run_dir = out_dir.join(&rel_dir);
            eprintln!("=== variant {} seed {}", variant.name, seed);
            match train(&run_cfg, Some(&run_dir)) {
                Ok(outcome) => runs.push(RunSummary {
                    seed,
                    best_metric: outcome.report.best_metric,
                    epochs: outcome.report.totals.epochs,
                    steps: outcome.report.totals.steps,
                    test_metrics: outcome.report.test_metrics.clone(),
                    report_dir: rel_dir,
                }),
                Err(e) => {
                    error.get_or_insert(e.to_string());
                }
            }
        }
        let mean_of = |key: &str| -> f64 {
            if runs.is_empty() {
                return 0.0;
            }
            runs.iter()
                .map(|r| r.test_metrics.get(key).copied().unwrap_or(0.0))
                .sum::<f64>()
                / runs.len() as f64
        };
        rows.push(VariantRow {
            variant: variant.name.clone(),
            exact_match: mean_of("exact_match"),
            bleu4: mean_of("bleu4"),
            rougel_f1: mean_of("rougel_f1"),
            epochs: if runs.is_empty() {
                0.0
            } else {
                runs.iter().map(|r| r.epochs as f64).sum::<f64>() / runs.len() as f64
            },
            steps: if runs.is_empty() {
                0.0
            } else {
                runs.iter().map(|r| r.steps as f64).sum::<f64>() / runs.len() as f64
            },
            error,
        });
        details.push(VariantDetail {
            variant: variant.name.clone(),
            runs,
        });
    }
    let report = CompareReport { rows, details };
    report.write(out_dir)?;
    eprintln!("{}", report.table_csv());
    Ok(report)
}

/// Cut position for a sample under the live schedule (delegates to the
/// shared cutting-point rule).
pub fn current_cut(schedule: &CurriculumState, n: usize) -> Result<usize> {
    cutting_point(n, schedule.p())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{CurriculumConfig, DataConfig, SyntheticConfig, VariantSpec};
    use crate::data::SynthTask;

    fn tiny_run_config() -> RunConfig {
        RunConfig {
            format: crate::config::CONFIG_FORMAT.to_string(),
            seed: 42,
            max_epochs: 3,
            data: DataConfig {
                synthetic: Some(SyntheticConfig {
                    task: SynthTask::Reverse,
                    alphabet_size: 6,
                    len_range: (2, 5),
                    train: 24,
                    val: 8,
                    test: 8,
                    seed: 42,
                }),
                jsonl: None,
                mode: crate::data::TokenizeMode::Whitespace,
            },
            model: crate::model::ModelConfig {
                vocab_size: 0,
                embed_dim: 8,
                hidden_dim: 10,
                num_layers: 1,
                seed: 7,
            },
            optim: crate::config::OptimConfig {
                lr: 2e-3,
                batch_size: 8,
            },
            curriculum: CurriculumConfig::default(),
            ranking: crate::config::RankingConfig::default(),
            validation: crate::config::ValidationConfig::default(),
            decode: DecodeConfig {
                max_len: 8,
                ..DecodeConfig::default()
            },
        }
    }

    #[test]
    fn same_config_same_report_bytes() {
        let cfg = tiny_run_config();
        let a = train(&cfg, None).unwrap();
        let b = train(&cfg, None).unwrap();
        assert_eq!(a.report.to_json().unwrap(), b.report.to_json().unwrap());
        assert_eq!(a.best_params.tensors(), b.best_params.tensors());
    }

    #[test]
    fn different_seed_changes_the_run() {
        let cfg = tiny_run_config();
        let mut cfg2 = tiny_run_config();
        cfg2.seed = 43;
        let a = train(&cfg, None).unwrap();
        let b = train(&cfg2, None).unwrap();
        assert_ne!(a.best_params.tensors(), b.best_params.tensors());
    }

    #[test]
    fn vanilla_equals_schedule_pinned_to_zero() {
        // curriculum=none and ICL-SC already at p=0 build identical masks,
        // so the entire run transcript matches.
        let cfg_none = tiny_run_config();
        let mut cfg_icl = tiny_run_config();
        cfg_icl.curriculum = CurriculumConfig {
            algorithm: Algorithm::Icl,
            p_start: Some(0.0),
            stride: Some(0.0),
            ..CurriculumConfig::default()
        };
        let a = train(&cfg_none, None).unwrap();
        let b = train(&cfg_icl, None).unwrap();
        assert_eq!(a.report.records, b.report.records);
        assert_eq!(a.best_params.tensors(), b.best_params.tensors());
    }

    #[test]
    fn report_invariants_hold() {
        let mut cfg = tiny_run_config();
        cfg.max_epochs = 4;
        let out = train(&cfg, None).unwrap();
        let steps: Vec<u64> = out.report.records.iter().map(|r| r.step).collect();
        assert!(steps.windows(2).all(|w| w[0] < w[1]), "{steps:?}");
        assert_eq!(out.report.totals.steps, out.optimizer_steps);
        let best = out
            .report
            .records
            .iter()
            .map(|r| r.metric)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(out.report.best_metric, best);
        assert!(out
            .report
            .records
            .iter()
            .filter(|r| r.improved)
            .any(|r| r.metric == out.report.best_metric));
    }

    #[test]
    fn icl_schedule_decays_and_terminates() {
        let mut cfg = tiny_run_config();
        cfg.max_epochs = 40;
        cfg.curriculum = CurriculumConfig {
            algorithm: Algorithm::Icl,
            p_start: Some(0.5),
            stride: Some(0.5),
            ..CurriculumConfig::default()
        };
        let out = train(&cfg, None).unwrap();
        let ps: Vec<f64> = out.report.records.iter().map(|r| r.p).collect();
        assert!(ps.windows(2).all(|w| w[0] >= w[1]), "{ps:?}");
        assert_eq!(ps[0], 0.5);
        // Replay the automaton against the recorded verdict stream.
        let mut replay = new_schedule(0.5, 0.5, Strategy::Decrease, 3, 0).unwrap();
        for r in &out.report.records {
            assert_eq!(replay.p(), r.p, "replay diverged at step {}", r.step);
            let _ = replay
                .on_validation(
                    &ValidationVerdict {
                        improved: r.improved,
                        value: r.metric,
                        metric: "loss".to_string(),
                    },
                    r.step,
                )
                .unwrap();
        }
        if out.report.stopped_by == "patience" {
            assert!(!replay.is_running());
            assert_eq!(out.report.records.last().unwrap().p, 0.0);
        }
        // Phase events match the recorded trajectory.
        for ev in &out.report.phase_events {
            assert_eq!(ev.event, "phase");
            assert!(ev.new_p < ev.old_p);
        }
    }

    #[test]
    fn artifacts_are_written_and_checkpoint_loads() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_run_config();
        let out = train(&cfg, Some(dir.path())).unwrap();
        assert!(dir.path().join("report.json").exists());
        assert!(dir.path().join("curve.csv").exists());
        let (params, vocab) = crate::model::load_checkpoint(dir.path().join("best.ckpt")).unwrap();
        assert_eq!(params.tensors(), out.best_params.tensors());
        assert_eq!(vocab.size(), out.vocab.size());
        let text = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
        assert_eq!(text, out.report.to_json().unwrap());
    }

    #[test]
    fn step_cadence_validates_mid_epoch() {
        let mut cfg = tiny_run_config();
        cfg.validation.every_epochs = None;
        cfg.validation.every_steps = Some(2);
        cfg.max_epochs = 2;
        let out = train(&cfg, None).unwrap();
        // 24 samples / batch 8 = 3 steps per epoch; validations at steps 2,4,6.
        assert_eq!(
            out.report.records.iter().map(|r| r.step).collect::<Vec<_>>(),
            vec![2, 4, 6]
        );
    }

    #[test]
    fn compare_runs_rows_in_isolation() {
        let dir = tempfile::tempdir().unwrap();
        let mut base = tiny_run_config();
        base.max_epochs = 2;
        let cmp = CompareConfig {
            format: crate::config::COMPARE_FORMAT.to_string(),
            base,
            seeds: vec![1, 2],
            variants: vec![
                VariantSpec {
                    name: "wo_cl".to_string(),
                    curriculum: None,
                    ranking: None,
                },
                VariantSpec {
                    name: "icl_sc".to_string(),
                    curriculum: Some(CurriculumConfig {
                        algorithm: Algorithm::Icl,
                        ..CurriculumConfig::default()
                    }),
                    ranking: None,
                },
                VariantSpec {
                    name: "broken".to_string(),
                    curriculum: Some(CurriculumConfig {
                        algorithm: Algorithm::Icl,
                        p_start: Some(2.0),
                        ..CurriculumConfig::default()
                    }),
                    ranking: None,
                },
            ],
        };
        let report = compare(&cmp, dir.path()).unwrap();
        assert_eq!(report.rows.len(), 3);
        assert!(report.rows[0].error.is_none());
        assert!(report.rows[1].error.is_none());
        assert!(report.rows[2].error.is_some());
        assert_eq!(report.details[0].runs.len(), 2);
        assert!(dir.path().join("table.csv").exists());
        assert!(dir.path().join("wo_cl/seed-1/report.json").exists());
        // Identical variants under the same seed give identical rows.
        let r1 = &report.details[0].runs[0];
        let again = compare(&cmp, dir.path()).unwrap();
        assert_eq!(again.details[0].runs[0].test_metrics, r1.test_metrics);
    }

    #[test]
    fn ranking_composes_with_icl() {
        let mut cfg = tiny_run_config();
        cfg.curriculum = CurriculumConfig {
            algorithm: Algorithm::Icl,
            ..CurriculumConfig::default()
        };
        cfg.ranking.strategy = Some(crate::ranking::RankStrategy::InLen);
        let out = train(&cfg, None).unwrap();
        assert!(out.report.totals.steps > 0);
    }

    #[test]
    fn empty_validation_split_is_a_startup_error() {
        let mut cfg = tiny_run_config();
        cfg.data.synthetic.as_mut().unwrap().val = 0;
        assert!(train(&cfg, None).is_err());
    }
}
