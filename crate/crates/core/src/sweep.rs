//! Two-axis hyperparameter grids: one short training run per cell, scored by
//! test accuracy and the FID proxy.

use std::fmt;
use std::str::FromStr;

use crate::data::{Dataset, SemiDataset};
use crate::error::{Error, Result};
use crate::eval::{EvalReport, EvalSettings};
use crate::pipeline::{train_and_evaluate, DataPlan};
use crate::trainer::TrainingConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Param {
    Alpha,
    Beta,
    LearningRate,
    LatentDim,
    Labels,
    Batch,
    Epochs,
}

impl Param {
    pub fn name(self) -> &'static str {
        match self {
            Param::Alpha => "alpha",
            Param::Beta => "beta",
            Param::LearningRate => "lr",
            Param::LatentDim => "latent_dim",
            Param::Labels => "labels",
            Param::Batch => "batch",
            Param::Epochs => "epochs",
        }
    }

    fn integral(self) -> bool {
        matches!(self, Param::LatentDim | Param::Labels | Param::Batch | Param::Epochs)
    }

    fn apply(self, value: f64, config: &mut TrainingConfig, plan: &mut DataPlan) {
        let count = value as usize;
        match self {
            Param::Alpha => config.alpha = value,
            Param::Beta => config.beta = value,
            Param::LearningRate => config.learning_rate = value,
            Param::LatentDim => config.latent_dim = count,
            Param::Labels => plan.n_labeled = count,
            Param::Batch => config.batch_size = count,
            Param::Epochs => config.epochs = count,
        }
    }
}

impl fmt::Display for Param {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Param {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "alpha" => Param::Alpha,
            "beta" => Param::Beta,
            "lr" | "learning_rate" => Param::LearningRate,
            "latent_dim" | "latent-dim" => Param::LatentDim,
            "labels" => Param::Labels,
            "batch" => Param::Batch,
            "epochs" => Param::Epochs,
            _ => return Err(Error::invalid(format!("unknown sweep parameter {s:?}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridAxis {
    pub param: Param,
    pub values: Vec<f64>,
}

impl GridAxis {
    pub fn new(param: Param, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid(format!("empty grid axis for {param}")));
        }
        for &v in &values {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid(format!("{param} value {v} must be finite and >= 0")));
            }
            if param.integral() && v.fract() != 0.0 {
                return Err(Error::invalid(format!("{param} value {v} must be an integer")));
            }
        }
        Ok(Self { param, values })
    }

    /// `name=v1,v2,...`
    pub fn parse(spec: &str) -> Result<Self> {
        let (name, values) = spec
            .split_once('=')
            .ok_or_else(|| Error::invalid(format!("grid axis {spec:?} is not name=v1,v2,...")))?;
        let values = values
            .split(',')
            .filter(|v| !v.trim().is_empty())
            .map(|v| v.trim().parse::<f64>().map_err(|_| Error::invalid(format!("bad grid value {v:?}"))))
            .collect::<Result<Vec<_>>>()?;
        Self::new(name.trim().parse()?, values)
    }
}

impl FromStr for GridAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub row: f64,
    pub col: f64,
    pub report: EvalReport,
}

impl Cell {
    pub fn accuracy(&self) -> f64 {
        1.0 - self.report.test_error
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub rows: GridAxis,
    pub cols: GridAxis,
    /// Row-major over `rows.values × cols.values`.
    pub cells: Vec<Cell>,
}

/// Trains and evaluates one model per grid cell. Cells whose parameters only
/// touch the training config share the prepared data set.
pub fn run_grid(
    rows: &GridAxis,
    cols: &GridAxis,
    base_config: &TrainingConfig,
    base_plan: &DataPlan,
    settings: EvalSettings,
    mut on_cell: impl FnMut(&Cell),
) -> Result<SweepResult> {
    if rows.param == cols.param {
        return Err(Error::invalid(format!("both grid axes sweep {}", rows.param)));
    }
    let mut cached: Option<(DataPlan, SemiDataset, Dataset)> = None;
    let mut cells = Vec::with_capacity(rows.values.len() * cols.values.len());
    for &r in &rows.values {
        for &c in &cols.values {
            let mut config = base_config.clone();
            let mut plan = base_plan.clone();
            rows.param.apply(r, &mut config, &mut plan);
            cols.param.apply(c, &mut config, &mut plan);
            if cached.as_ref().is_none_or(|(p, _, _)| *p != plan) {
                let (semi, test) = plan.prepare()?;
                cached = Some((plan.clone(), semi, test));
            }
            let (_, semi, test) = cached.as_ref().expect("prepared above");
            let (_, report) = train_and_evaluate(semi, test, &config, settings)?;
            let cell = Cell { row: r, col: c, report };
            on_cell(&cell);
            cells.push(cell);
        }
    }
    Ok(SweepResult {
        rows: rows.clone(),
        cols: cols.clone(),
        cells,
    })
}

impl SweepResult {
    pub fn cell(&self, i: usize, j: usize) -> &Cell {
        &self.cells[i * self.cols.values.len() + j]
    }

    fn matrix(&self, value: impl Fn(&Cell) -> f64) -> String {
        let mut out = format!("{}\\{}", self.rows.param, self.cols.param);
        for c in &self.cols.values {
            out.push_str(&format!("\t{c}"));
        }
        out.push('\n');
        for (i, r) in self.rows.values.iter().enumerate() {
            out.push_str(&r.to_string());
            for j in 0..self.cols.values.len() {
                out.push_str(&format!("\t{}", value(self.cell(i, j))));
            }
            out.push('\n');
        }
        out
    }

    /// Heat-map matrix of test accuracy: header row of column values, then one
    /// row per row value.
    pub fn accuracy_matrix(&self) -> String {
        self.matrix(Cell::accuracy)
    }

    pub fn fid_matrix(&self) -> String {
        self.matrix(|c| c.report.fid_proxy)
    }

    /// One line per cell with every report field.
    pub fn cells_tsv(&self) -> String {
        let mut out = format!(
            "{}\t{}\taccuracy\ttest_error\tfid_proxy\tinterpolation_fid\n",
            self.rows.param, self.cols.param
        );
        for cell in &self.cells {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\n",
                cell.row,
                cell.col,
                cell.accuracy(),
                cell.report.test_error,
                cell.report.fid_proxy,
                cell.report.interpolation_fid
            ));
        }
        out
    }
}
