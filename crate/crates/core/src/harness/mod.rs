//! Desk-scale experiments, the metric kit and the verification suite.

mod experiments;
mod pgm;
mod report;
mod suite;

pub use experiments::{
    generalization, lambda_sweep, mask_robustness, nullspace_effect, projection_comparison, random_sub_boxes,
    rank_monotonicity, EditOutcome, Settings,
};
pub use pgm::{decode as decode_pgm, range_path, GrayImage, PgmFormat};
pub use report::{to_canonical_json, Cmp, ExperimentReport, Threshold};
pub use suite::{
    default_regions, run_suite, written_files, BlockyCase, Criterion, CriterionResult, Selection, SuiteConfig, SuiteOutcome,
    Thresholds,
};

use crate::error::{Error, Result};
use crate::genzoo::RegionMask;

/// Mean squared difference over the indices outside `exclude`.
pub fn masked_mse(before: &[f64], after: &[f64], exclude: &RegionMask) -> Result<f64> {
    check_pair(before, after)?;
    if let Some(&last) = exclude.indices().last() {
        if last >= before.len() {
            return Err(Error::Shape(format!(
                "mask index {last} out of range for {} outputs",
                before.len()
            )));
        }
    }
    let kept = before.len() - exclude.len();
    if kept == 0 {
        return Err(Error::invalid("exclusion mask covers every output"));
    }
    let mut sum = 0.0;
    let mut skip = exclude.indices().iter().peekable();
    for (i, (b, a)) in before.iter().zip(after).enumerate() {
        if skip.peek() == Some(&&i) {
            skip.next();
            continue;
        }
        sum += (a - b) * (a - b);
    }
    Ok(sum / kept as f64)
}

/// Mean squared difference over the indices inside `region`.
pub fn region_mse(before: &[f64], after: &[f64], region: &RegionMask) -> Result<f64> {
    check_pair(before, after)?;
    let mut sum = 0.0;
    for &i in region.indices() {
        let (b, a) = (
            before.get(i).ok_or_else(|| Error::Shape(format!("mask index {i} out of range")))?,
            after[i],
        );
        sum += (a - b) * (a - b);
    }
    Ok(sum / region.len() as f64)
}

/// `Σ |after − before|`, accumulated in index order.
pub fn l1_distance(before: &[f64], after: &[f64]) -> Result<f64> {
    check_pair(before, after)?;
    Ok(before.iter().zip(after).map(|(b, a)| (a - b).abs()).sum())
}

fn check_pair(before: &[f64], after: &[f64]) -> Result<()> {
    if before.len() != after.len() {
        return Err(Error::Shape(format!(
            "before has {} outputs, after has {}",
            before.len(),
            after.len()
        )));
    }
    Ok(())
}

/// Per-pixel `|after − before|` on the generator's image grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    pub width: usize,
    pub height: usize,
    values: Vec<f64>,
}

impl Heatmap {
    pub fn new(before: &[f64], after: &[f64], width: usize) -> Result<Self> {
        check_pair(before, after)?;
        if width == 0 || before.len() % width != 0 {
            return Err(Error::Shape(format!("{} outputs do not tile width {width}", before.len())));
        }
        Ok(Self {
            width,
            height: before.len() / width,
            values: before.iter().zip(after).map(|(b, a)| (a - b).abs()).collect(),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Quantized over `[0, max]`.
    pub fn to_image(&self) -> GrayImage {
        GrayImage::from_values(&self.values, self.width, 0.0, self.max()).expect("heatmap shape checked")
    }
}
