use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2, Axis};
use segma::checkpoint::{load_checkpoint, save_checkpoint};
use segma::eval::{evaluate, EvalSettings};
use segma::latent::{decode_codes, interpolation_path, resolve_source, transfer_path, LatentCode};
use segma::pipeline::{train, DataSource};
use segma::sweep::run_grid;
use segma::trainer::format_log;
use segma::{Dataset, Error, ModelState};

use crate::args::{EvalCmd, InterpolateCmd, SampleCmd, SweepCmd, TrainCmd, TransferCmd};
use crate::sample_class;

/// Failure of a command. Usage errors exit with status 2.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Run(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Run(e.to_string())
    }
}

type CliResult<T = ()> = std::result::Result<T, CliError>;

fn write_file(path: &Path, contents: &str) -> CliResult {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::Run(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, contents).map_err(|e| CliError::Run(format!("{}: {e}", path.display())))
}

fn emit(out: Option<&Path>, contents: &str) -> CliResult {
    match out {
        Some(path) => write_file(path, contents),
        None => {
            print!("{contents}");
            Ok(())
        }
    }
}

/// One row per matrix row, tab-separated, shortest round-trip decimals.
pub fn matrix_tsv(m: ArrayView2<f64>) -> String {
    let mut out = String::new();
    for row in m.rows() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&cells.join("\t"));
        out.push('\n');
    }
    out
}

fn log_path(cmd: &TrainCmd) -> PathBuf {
    cmd.log.clone().unwrap_or_else(|| {
        let mut p = cmd.out.clone().into_os_string();
        p.push(".log");
        p.into()
    })
}

pub fn run_train(cmd: &TrainCmd) -> CliResult {
    let config = cmd.train.config();
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let plan = cmd.train.plan();
    if plan.n_labeled == 0 {
        return Err(CliError::Usage("--labels must be positive".into()));
    }
    let (semi, test) = plan.prepare()?;
    eprintln!(
        "training on {} ({} unlabeled, {} labeled, {} classes) for {} epochs",
        plan.source,
        semi.unlabeled_idx().len(),
        semi.labeled_idx.len(),
        semi.n_classes,
        config.epochs
    );
    let outcome = train(&semi, &test, &config, |e| eprintln!("{e}"))?;
    save_checkpoint(&outcome.model, &cmd.out)?;
    let log = log_path(cmd);
    write_file(&log, &format_log(&outcome.log))?;
    eprintln!("wrote {} and {}", cmd.out.display(), log.display());
    Ok(())
}

/// Test split for `data`, checked against the model's input width.
fn test_set(model: &ModelState, data: &str, data_seed: Option<u64>) -> CliResult<(DataSource, Dataset)> {
    let source = DataSource::parse(data);
    let plan = source.reference_plan(data_seed.unwrap_or(model.config.seed));
    let (_, test) = plan.load()?;
    model.check_dims(Some(test.dim()), None)?;
    Ok((source, test))
}

pub fn run_eval(cmd: &EvalCmd) -> CliResult {
    let model = load_checkpoint(&cmd.checkpoint)?;
    let data_seed = cmd.data_seed.unwrap_or(model.config.seed);
    let (source, test) = test_set(&model, &cmd.data, Some(data_seed))?;
    let settings = EvalSettings::new(
        cmd.eval.n as usize,
        cmd.eval.feature_map.unwrap_or_else(|| source.reference_feature_map()),
        cmd.seed.unwrap_or(model.config.seed),
    );
    let report = evaluate(&model, &test, settings)?;
    let mut text = report.to_key_value();
    let _ = writeln!(text, "data={source}");
    let _ = writeln!(text, "data_seed={data_seed}");
    print!("{text}");
    if let Some(path) = &cmd.out {
        write_file(path, &text)?;
    }
    if let Some(path) = &cmd.tsv {
        write_file(path, &report.to_tsv())?;
    }
    Ok(())
}

pub fn run_sample(cmd: &SampleCmd) -> CliResult {
    let model = load_checkpoint(&cmd.checkpoint)?;
    let xs = sample_class(&model, cmd.class, cmd.n, cmd.seed)?;
    emit(cmd.out.as_deref(), &matrix_tsv(xs.view()))
}

fn encode_item(model: &ModelState, test: &Dataset, index: usize) -> CliResult<LatentCode> {
    if index >= test.len() {
        return Err(CliError::Usage(format!("test index {index} out of range (test set has {} items)", test.len())));
    }
    let z = model.encode(test.features.select(Axis(0), &[index]).view())?;
    Ok(LatentCode::new(z.row(0).to_owned())?)
}

pub fn run_interpolate(cmd: &InterpolateCmd) -> CliResult {
    let model = load_checkpoint(&cmd.checkpoint)?;
    let (_, test) = test_set(&model, &cmd.data, cmd.data_seed)?;
    let a = encode_item(&model, &test, cmd.from)?;
    let b = encode_item(&model, &test, cmd.to)?;
    let path = interpolation_path(&a, &b, cmd.steps)?;
    emit(cmd.out.as_deref(), &matrix_tsv(decode_codes(&model, &path)?.view()))
}

pub fn run_transfer(cmd: &TransferCmd) -> CliResult {
    let model = load_checkpoint(&cmd.checkpoint)?;
    let (_, test) = test_set(&model, &cmd.data, cmd.data_seed)?;
    let z = encode_item(&model, &test, cmd.index)?;
    let source = resolve_source(&z, cmd.source, &model.prior)?;
    let path = transfer_path(&z, source, cmd.target, &model.prior, cmd.steps)?;
    let decoded = decode_codes(&model, &path)?;
    let k = model.n_classes();
    let mut rows = Array2::zeros((path.len(), k + decoded.ncols()));
    for (i, code) in path.iter().enumerate() {
        let posterior = model.prior.posterior(code.z.view())?;
        rows.row_mut(i).slice_mut(ndarray::s![..k]).assign(&posterior);
        rows.row_mut(i).slice_mut(ndarray::s![k..]).assign(&decoded.row(i));
    }
    eprintln!("source class {source}, target class {}", cmd.target);
    emit(cmd.out.as_deref(), &matrix_tsv(rows.view()))
}

pub fn run_sweep(cmd: &SweepCmd) -> CliResult {
    let config = cmd.train.config();
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    if cmd.rows.param == cmd.cols.param {
        return Err(CliError::Usage(format!("--rows and --cols both sweep {}", cmd.rows.param)));
    }
    let plan = cmd.train.plan();
    let source = cmd.train.source();
    let settings = EvalSettings::new(
        cmd.eval.n as usize,
        cmd.eval.feature_map.unwrap_or_else(|| source.reference_feature_map()),
        cmd.train.seed,
    );
    let result = run_grid(&cmd.rows, &cmd.cols, &config, &plan, settings, |cell| {
        eprintln!(
            "{}={} {}={}: accuracy {} fid_proxy {}",
            cmd.rows.param,
            cell.row,
            cmd.cols.param,
            cell.col,
            cell.accuracy(),
            cell.report.fid_proxy
        )
    })?;
    write_file(&cmd.out_dir.join("accuracy.tsv"), &result.accuracy_matrix())?;
    write_file(&cmd.out_dir.join("fid_proxy.tsv"), &result.fid_matrix())?;
    write_file(&cmd.out_dir.join("cells.tsv"), &result.cells_tsv())?;
    print!("{}", result.accuracy_matrix());
    Ok(())
}
