use std::fmt;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use spillover::data::{
    generate_synthetic, load_dataset, save_backtest, save_dataset, save_metrics, save_table, Dataset, SyntheticSpec,
    Table,
};
use spillover::evaluation::{backtest as run_backtest, split_metrics, BacktestConfig};
use spillover::model::{
    gradcheck as run_gradcheck, history_table, load_checkpoint, load_config, save_checkpoint, train as run_train,
    Model, TrainConfig,
};
use spillover::numerics::OpKind;
use spillover::signals::{first_eligible_day, Split};
use spillover::Error;

use crate::{BacktestArgs, DumpArgs, EvaluateArgs, GenerateArgs, GradcheckArgs, TrainArgs};

pub struct Failure {
    pub error: String,
    pub code: u8,
}

impl Failure {
    fn usage(msg: impl fmt::Display) -> Self {
        Failure { error: msg.to_string(), code: 1 }
    }

    fn runtime(msg: impl fmt::Display) -> Self {
        Failure { error: msg.to_string(), code: 3 }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if e.is_input_error() { 2 } else { 3 };
        Failure { error: e.to_string(), code }
    }
}

type CmdResult = Result<(), Failure>;

fn open_dataset(dir: &Path) -> Result<Dataset, Error> {
    let ds = Dataset::from_bundle(&load_dataset(dir)?)?;
    if !ds.exclusions.is_empty() {
        println!("excluded {} entities (missing data)", ds.exclusions.len());
    }
    Ok(ds)
}

fn parse_split(name: &str) -> Result<Split, Failure> {
    Split::parse(name).ok_or_else(|| Failure::usage(format!("unknown split `{name}`; expected train, valid or test")))
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.4}")).unwrap_or_else(|| "n/a".into())
}

/// `dir/stem<suffix>` next to `path`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

pub fn generate(args: GenerateArgs) -> CmdResult {
    let mut spec = match &args.spec {
        Some(p) => SyntheticSpec::load(p)?,
        None => SyntheticSpec::default(),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let bundle = generate_synthetic(&spec)?;
    save_dataset(&bundle, &args.out)?;
    println!(
        "wrote {} entities, {} edges, {} price rows, {} news rows to {}",
        bundle.entities.len(),
        bundle.edges.len(),
        bundle.prices.len(),
        bundle.news.len(),
        args.out.display()
    );
    Ok(())
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

pub fn train(args: TrainArgs, threads: usize) -> CmdResult {
    if args.repeats == 0 {
        return Err(Failure::usage("--repeats must be at least 1"));
    }
    let mut config = match &args.config {
        Some(p) => load_config(p)?,
        None => TrainConfig::default(),
    };
    for a in &args.ablate {
        config.ablate(a)?;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    config.validate()?;
    let ds = open_dataset(&args.data)?;
    let ext = args.out.extension().map(|e| format!(".{}", e.to_string_lossy())).unwrap_or_default();

    let mut summary = Table::new("repeats", &["seed", "best_epoch", "valid_da", "test_da", "test_pr_auc", "test_roc_auc"]);
    let (mut das, mut prs, mut rocs) = (Vec::new(), Vec::new(), Vec::new());
    for r in 0..args.repeats {
        let mut cfg = config.clone();
        cfg.seed = config.seed + r as u64;
        let out = if args.repeats == 1 { args.out.clone() } else { sibling(&args.out, &format!(".r{r}{ext}")) };
        let (model, history) = run_train::<f64>(&ds, &cfg, threads)?;
        save_checkpoint(&model, &out)?;
        save_table(&history_table(&history), sibling(&out, ".history.csv"))?;

        let test = model.predict_split(&ds, Split::Test, threads).and_then(|d| split_metrics("test", &d)).ok();
        let best = history.best();
        println!(
            "seed {}: {} epochs (best {}), train loss {:.4} -> {:.4}, valid DA {}, test DA {} PR-AUC {} ROC-AUC {}",
            cfg.seed,
            history.epochs.len(),
            history.best_epoch.map(|e| e.to_string()).unwrap_or_else(|| "none".into()),
            history.initial_loss,
            history.epochs.last().map(|e| e.train_loss).unwrap_or(history.initial_loss),
            opt(best.map(|b| b.valid_da)),
            opt(test.as_ref().map(|m| m.da)),
            opt(test.as_ref().and_then(|m| m.pr_auc)),
            opt(test.as_ref().and_then(|m| m.roc_auc)),
        );
        let cell = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        summary.push(vec![
            cfg.seed.to_string(),
            history.best_epoch.map(|e| e.to_string()).unwrap_or_default(),
            cell(best.map(|b| b.valid_da)),
            cell(test.as_ref().map(|m| m.da)),
            cell(test.as_ref().and_then(|m| m.pr_auc)),
            cell(test.as_ref().and_then(|m| m.roc_auc)),
        ]);
        if let Some(m) = &test {
            das.push(m.da);
            prs.extend(m.pr_auc);
            rocs.extend(m.roc_auc);
        }
    }
    if args.repeats > 1 {
        save_table(&summary, sibling(&args.out, ".repeats.csv"))?;
        for (name, xs) in [("DA", &das), ("PR-AUC", &prs), ("ROC-AUC", &rocs)] {
            if !xs.is_empty() {
                let (m, s) = mean_std(xs);
                println!("test {name}: {m:.4} ± {s:.4} over {} runs", xs.len());
            }
        }
    }
    Ok(())
}

pub fn evaluate(args: EvaluateArgs, threads: usize) -> CmdResult {
    let split = parse_split(&args.split)?;
    let model = load_checkpoint::<f64>(&args.checkpoint)?;
    let ds = open_dataset(&args.data)?;
    let days = model.predict_split(&ds, split, threads)?;
    let m = split_metrics(split.name(), &days)?;
    println!(
        "{}: {} days, {} samples, DA {:.4}, PR-AUC {}, ROC-AUC {}",
        m.split,
        m.days,
        m.samples,
        m.da,
        opt(m.pr_auc),
        opt(m.roc_auc)
    );
    if let Some(out) = &args.out {
        save_metrics(&m, out)?;
    }
    Ok(())
}

pub fn backtest(args: BacktestArgs, threads: usize) -> CmdResult {
    let model = load_checkpoint::<f64>(&args.checkpoint)?;
    let ds = open_dataset(&args.data)?;
    let config = BacktestConfig {
        top_k: args.topk,
        budget: args.budget,
        cost_rate: args.cost,
        risk_free_annual: args.risk_free,
    };
    config.validate(ds.companies())?;
    let days = model.predict_split(&ds, Split::Test, threads)?;
    let report = run_backtest(&days, &ds.closes(), &config)?;
    save_backtest(&report, &args.out)?;
    println!(
        "{} test days, top-{}: final value {:.2}, IRR {:.4}, raw IRR {:.4}, Sharpe {}, DA {:.4}",
        report.days.len(),
        config.top_k,
        report.final_value,
        report.irr,
        report.raw_irr,
        opt(report.sharpe),
        report.da
    );
    Ok(())
}

pub fn gradcheck(args: GradcheckArgs) -> CmdResult {
    if args.size != "small" {
        return Err(Failure::usage(format!("unknown size `{}`; only `small` is available", args.size)));
    }
    let fault = match &args.corrupt_rule {
        Some(name) => Some(OpKind::parse(name).ok_or_else(|| Failure::usage(format!("unknown operation `{name}`")))?),
        None => None,
    };
    let report = run_gradcheck(args.seed, fault)?;
    println!("loss {:.6}, tolerance {:e}", report.loss, report.tolerance);
    for g in &report.groups {
        println!(
            "{:<10} {:>5} elements  max rel err {:.2e}  {}",
            g.group,
            g.elements,
            g.max_rel_err,
            if g.passed { "PASS" } else { "FAIL" }
        );
    }
    if report.passed() {
        Ok(())
    } else {
        let failed: Vec<&str> = report.groups.iter().filter(|g| !g.passed).map(|g| g.group.as_str()).collect();
        Err(Failure::runtime(format!("gradient check failed for {}", failed.join(", "))))
    }
}

pub fn dump_implicit(args: DumpArgs) -> CmdResult {
    let date = NaiveDate::parse_from_str(&args.day, "%Y-%m-%d")
        .map_err(|e| Failure::usage(format!("bad --day `{}`: {e}", args.day)))?;
    let mut model = load_checkpoint::<f64>(&args.checkpoint)?;
    if let Some(eta) = args.eta {
        let mut config = model.config.clone();
        config.eta = eta;
        model = Model::from_params(config, model.params)?;
    }
    let ds = open_dataset(&args.data)?;
    let day = ds
        .calendar
        .index_of(date)
        .ok_or_else(|| Error::Data(format!("{date} is not a trading day of the dataset")))?;
    if day < first_eligible_day(model.config.lookback) {
        return Err(Error::Data(format!("{date} has fewer than {} earlier trading days", model.config.lookback)).into());
    }
    let index = model.index(&ds);
    let edges = model.implicit_edges(&ds, &index, day)?;
    let mut t = Table::new("implicit", &["src", "dst", "alpha", "gate"]);
    for e in &edges {
        t.push(vec![
            ds.company_ids[e.src].clone(),
            ds.company_ids[e.dst].clone(),
            e.alpha.to_string(),
            e.gate.to_string(),
        ]);
    }
    save_table(&t, &args.out)?;
    println!("{date}: {} implicit edges at eta {}", edges.len(), model.config.eta);
    Ok(())
}
