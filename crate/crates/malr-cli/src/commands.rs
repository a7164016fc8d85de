//! The five subcommand implementations. Each one loads its input artifacts,
//! builds the configured components, runs one pipeline stage, and writes or
//! prints the result.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use malr_core::{
    compare_ablations, gather_feedback, load_cases, load_subtasks, render_text_table,
    save_subtasks, save_training_report, AblationInputs, Error, EvalConfig, EvalHarness,
    Exemplars, FactDescription, FeedbackOracle, InsightIdAllocator, InsightKB, InsightMode,
    JudgmentContext, JudgmentEngine, MalrFlags, Planner, PlannerConfig, Role, RuleKB, Strategy,
    StrategySpec, Trainer, TrainerConfig, TrainingUnit,
};

use crate::config::CliConfig;
use crate::{CliError, EvalArgs, InferArgs, KbArgs, KbCommand, PlanArgs, TrainArgs};

pub fn plan(config: &CliConfig, args: &PlanArgs) -> Result<(), CliError> {
    let rules = RuleKB::load_jsonl(&args.rules)?;
    let cases = load_cases(&args.train, &rules)?;
    let templates = config.templates()?;
    let backend = config.build_backend()?;

    let planner = Planner::new(backend.as_backend(), &templates);
    let planner_config = PlannerConfig::new(config.zeta)?
        .with_samples(PlannerConfig::samples_from_cases(&cases));
    let (set, frequencies) = planner.plan_with_frequencies(&planner_config, &cases, &rules)?;
    save_subtasks(&set, &args.out)?;

    println!(
        "kept {} of {} label(s) at zeta = {}",
        set.len(),
        frequencies.len(),
        config.zeta
    );
    for task in set.tasks() {
        println!("  + {}  p = {:.3}", task.label, task.probability);
    }
    for (label, probability) in &frequencies {
        if set.by_label(label).is_none() {
            println!("  - {label}  p = {probability:.3}");
        }
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

pub fn train(config: &CliConfig, args: &TrainArgs) -> Result<(), CliError> {
    let rules = RuleKB::load_jsonl(&args.rules)?;
    let cases = load_cases(&args.train, &rules)?;
    let set = load_subtasks(&args.subtasks)?;
    let templates = config.templates()?;
    let backend = config.build_backend()?;

    let mut trainer_config = TrainerConfig::new(TrainingUnit::units_from_cases(&cases))
        .with_max_trials(config.max_trials);
    trainer_config.enable_filtering = !args.no_filter;
    trainer_config.enable_success_experience = !args.no_success_exp;
    trainer_config.enable_esp_experience = !args.no_esp_exp;

    let trainer = Trainer::new(backend.as_backend(), &templates, trainer_config)?;
    let (kb, report) = trainer.run_training(&cases, &rules, &set)?;

    kb.save_jsonl(&args.kb)?;
    let report_path = args
        .report
        .clone()
        .unwrap_or_else(|| args.kb.with_extension("report.json"));
    save_training_report(&report, &report_path)?;

    let totals = &report.totals;
    println!(
        "trained {} unit(s): {} resolved, {} unresolved",
        totals.units, totals.resolved, totals.unresolved
    );
    println!(
        "experiences: {} success, {} error-success pair(s)",
        totals.experiences_success, totals.experiences_error_success_pair
    );
    println!("insights written: {}", totals.insights_written);
    for (charge, summary) in &report.charges {
        if summary.unresolved > 0 {
            println!("  unresolved: {charge} ({} unit(s))", summary.unresolved);
        }
    }
    println!("wrote {}", args.kb.display());
    println!("wrote {}", report_path.display());
    Ok(())
}

pub fn infer(config: &CliConfig, args: &InferArgs) -> Result<(), CliError> {
    let rules = RuleKB::load_jsonl(&args.rules)?;
    let rule = rules.get_rule(&args.charge)?;
    let set = load_subtasks(&args.subtasks)?;
    let fact = read_fact(&args.fact)?;
    let templates = config.templates()?;
    let backend = config.build_backend()?;

    let kb = match &args.kb {
        Some(path) => Some(InsightKB::load_jsonl(path)?),
        None => None,
    };
    let flags = malr_flags(
        args.no_insight,
        args.no_ask,
        args.insight_mode.as_deref(),
        kb.is_some(),
    )?;

    let harness = EvalHarness::new(backend.as_backend(), &templates);
    let embedder = config.build_embedder()?;
    let eval_config = EvalConfig {
        dataset_id: fact.case_id.clone(),
        worker_pool_size: 1,
        rules: &rules,
        set: Some(&set),
        kb: kb.as_ref(),
        embedder: Some(embedder.as_embedder()),
        oracle: None,
    };
    let mut allocator = kb
        .as_ref()
        .map(InsightIdAllocator::seeded_from)
        .unwrap_or_default();
    let insights = harness.resolve_insights(
        backend.as_backend(),
        &flags,
        &eval_config,
        &set,
        &args.charge,
        &mut allocator,
    )?;

    let oracle_built;
    let feedback_oracle;
    let feedback = if flags.use_feedback {
        oracle_built = config.build_oracle()?;
        feedback_oracle = FeedbackOracle::new(oracle_built.as_adapter());
        gather_feedback(
            backend.as_backend(),
            &templates,
            &feedback_oracle,
            &fact,
            &set,
            &insights,
        )?
    } else {
        BTreeMap::new()
    };

    let ctx = JudgmentContext {
        use_insights: flags.use_insights,
        use_feedback: flags.use_feedback,
        insight_mode: flags.insight_mode,
        insights,
        feedback,
    };
    let engine = JudgmentEngine::new(backend.as_backend(), &templates);
    let (verdict, trajectory) = engine.judge_charge(&fact, rule, &set, &ctx, Role::Golden, 1)?;

    println!("charge: {}", rule.charge_name);
    println!(
        "verdict: {}",
        if verdict.guilty { "guilty" } else { "not guilty" }
    );
    println!("rationale: {}", verdict.rationale);
    println!("aspects:");
    for answer in trajectory.answers() {
        let label = set
            .tasks()
            .iter()
            .find(|t| t.id == answer.subtask_id)
            .map(|t| t.label.as_str())
            .unwrap_or(answer.subtask_id.as_str());
        println!("  [{}] {}: {}", answer.finding, label, answer.rationale);
        for id in &answer.used_insight_ids {
            println!("      insight: {id}");
        }
        for id in &answer.used_feedback_ids {
            println!("      feedback: {id}");
        }
    }
    Ok(())
}

pub fn eval(config: &CliConfig, args: &EvalArgs) -> Result<(), CliError> {
    let strategy: Strategy = args
        .strategy
        .parse()
        .map_err(|e: Error| CliError::Usage(e.to_string()))?;
    let rules = RuleKB::load_jsonl(&args.rules)?;
    let cases = load_cases(&args.cases, &rules)?;
    let templates = config.templates()?;
    let backend = config.build_backend()?;
    let harness = EvalHarness::new(backend.as_backend(), &templates);
    let dataset_id = file_stem(&args.cases, "cases");

    if args.ablation_suite {
        if strategy != Strategy::Malr {
            return Err(CliError::Usage(
                "--ablation-suite runs the malr strategy; pass --strategy malr".to_string(),
            ));
        }
        let train_path = args
            .train
            .as_ref()
            .expect("clap requires --train with --ablation-suite");
        let subtasks_path = args.subtasks.as_ref().ok_or_else(|| {
            CliError::Usage("--ablation-suite needs --subtasks".to_string())
        })?;
        refuse_console_oracle(config, args.allow_console_oracle)?;

        let set = load_subtasks(subtasks_path)?;
        let train_cases = load_cases(train_path, &rules)?;
        let embedder = config.build_embedder()?;
        let oracle_built = config.build_oracle()?;
        let oracle = FeedbackOracle::new(oracle_built.as_adapter());
        let inputs = AblationInputs {
            train_cases: &train_cases,
            rules: &rules,
            set: &set,
            embedder: embedder.as_embedder(),
            oracle: &oracle,
            dataset_id,
            worker_pool_size: config.worker_pool_size,
        };
        let reports = compare_ablations(&harness, &cases, &inputs)?;
        reports.save_json(&args.report)?;
        println!("{}", reports.render_text_table().trim_end_matches('\n'));
        println!("wrote {}", args.report.display());
        return Ok(());
    }

    let set = match &args.subtasks {
        Some(path) => Some(load_subtasks(path)?),
        None => None,
    };
    let kb = match &args.kb {
        Some(path) => Some(InsightKB::load_jsonl(path)?),
        None => None,
    };
    let spec = match strategy {
        Strategy::Malr => {
            if set.is_none() {
                return Err(CliError::Usage("strategy malr needs --subtasks".to_string()));
            }
            StrategySpec::malr(malr_flags(
                args.no_insight,
                args.no_ask,
                args.insight_mode.as_deref(),
                kb.is_some(),
            )?)
        }
        Strategy::FsPrompt | Strategy::FsCot => {
            StrategySpec::few_shot(strategy, Exemplars::from_templates(&templates)?)
        }
        other => StrategySpec::baseline(other),
    };

    let oracle_built;
    let feedback_oracle;
    let oracle = if spec.strategy == Strategy::Malr && spec.malr_flags.use_feedback {
        refuse_console_oracle(config, args.allow_console_oracle)?;
        oracle_built = config.build_oracle()?;
        feedback_oracle = FeedbackOracle::new(oracle_built.as_adapter());
        Some(&feedback_oracle)
    } else {
        None
    };
    let embedder = config.build_embedder()?;
    let eval_config = EvalConfig {
        dataset_id,
        worker_pool_size: config.worker_pool_size,
        rules: &rules,
        set: set.as_ref(),
        kb: kb.as_ref(),
        embedder: Some(embedder.as_embedder()),
        oracle,
    };
    let report = harness.evaluate(&cases, &spec, &eval_config)?;
    report.save_json(&args.report)?;
    println!("{}", render_text_table(&[&report]).trim_end_matches('\n'));
    println!("wrote {}", args.report.display());
    Ok(())
}

pub fn kb(args: &KbArgs) -> Result<(), CliError> {
    match &args.command {
        KbCommand::List { kb } => {
            let store = InsightKB::load_jsonl(kb)?;
            let mut per_charge: BTreeMap<&str, BTreeMap<&str, usize>> = BTreeMap::new();
            for insight in store.iter() {
                *per_charge
                    .entry(insight.charge_name.as_str())
                    .or_default()
                    .entry(insight.subtask_id.as_str())
                    .or_default() += 1;
            }
            for (charge, subtasks) in &per_charge {
                let charge_total: usize = subtasks.values().sum();
                println!("{charge}: {charge_total} insight(s)");
                for (subtask, count) in subtasks {
                    println!("  {subtask}: {count}");
                }
            }
            println!(
                "total: {} insight(s) across {} charge(s)",
                store.len(),
                per_charge.len()
            );
        }
        KbCommand::Export { kb } => {
            InsightKB::load_jsonl(kb)?;
            let raw = fs::read_to_string(kb).map_err(|e| Error::io(kb, e))?;
            print!("{raw}");
        }
    }
    Ok(())
}

/// Reads a plain-text fact file; the file stem names the case.
fn read_fact(path: &Path) -> Result<FactDescription, CliError> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let case_id = file_stem(path, "fact");
    Ok(FactDescription::new(case_id, raw.trim())?)
}

fn file_stem(path: &Path, fallback: &str) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| fallback.to_string())
}

/// Derives the malr augmentation flags from the shared insight/ask options.
fn malr_flags(
    no_insight: bool,
    no_ask: bool,
    insight_mode: Option<&str>,
    has_kb: bool,
) -> Result<MalrFlags, CliError> {
    let insight_mode = match insight_mode {
        Some("trained") => {
            if !has_kb {
                return Err(CliError::Usage(
                    "--insight-mode trained needs --kb".to_string(),
                ));
            }
            InsightMode::Trained
        }
        Some("direct") => InsightMode::Direct,
        Some(other) => {
            return Err(CliError::Usage(format!(
                "unknown insight mode `{other}` (valid: trained, direct)"
            )));
        }
        None if no_insight || !has_kb => InsightMode::None,
        None => InsightMode::Trained,
    };
    Ok(MalrFlags {
        use_insights: !matches!(insight_mode, InsightMode::None),
        use_feedback: !no_ask,
        insight_mode,
    })
}

/// The console oracle would stall a batch run waiting for terminal input, so
/// evaluation requires an explicit opt-in.
fn refuse_console_oracle(config: &CliConfig, allowed: bool) -> Result<(), CliError> {
    if config.oracle.is_console() && !allowed {
        return Err(CliError::Usage(
            "the console oracle blocks batch evaluation; pass --allow-console-oracle to use it"
                .to_string(),
        ));
    }
    Ok(())
}
