//! Give Me Some Credit (`cs-training.csv` layout).

use std::path::Path;

use ndarray::Array2;

use super::dataset::{header_index, FeatureDescriptor, RawDataset};
use crate::error::{Error, Result};

pub const GMC_FEATURES: [&str; 10] = [
    "RevolvingUtilizationOfUnsecuredLines",
    "age",
    "NumberOfTime30-59DaysPastDueNotWorse",
    "DebtRatio",
    "MonthlyIncome",
    "NumberOfOpenCreditLinesAndLoans",
    "NumberOfTimes90DaysLate",
    "NumberRealEstateLoansOrLines",
    "NumberOfTime60-89DaysPastDueNotWorse",
    "NumberOfDependents",
];

const LABEL: &str = "SeriousDlqin2yrs";

#[derive(Debug, Clone, PartialEq)]
pub struct GmcOptions {
    /// When set, `y = 1 − SeriousDlqin2yrs`, which makes the positive class
    /// hold about 93% of the rows. When unset the raw delinquency flag is
    /// the label.
    pub flip_label: bool,
}

impl Default for GmcOptions {
    fn default() -> Self {
        Self { flip_label: true }
    }
}

pub fn load_gmc(path: &Path, options: &GmcOptions) -> Result<RawDataset> {
    let path = if path.is_dir() { path.join("cs-training.csv") } else { path.to_path_buf() };
    parse_gmc(&std::fs::read_to_string(path)?, options)
}

/// Rows with any missing or non-numeric field are dropped; `DebtRatio` is
/// `log1p`-transformed.
pub fn parse_gmc(text: &str, options: &GmcOptions) -> Result<RawDataset> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(text.as_bytes());
    let index = header_index(reader.headers()?);
    let mut missing = Vec::new();
    let mut columns = Vec::new();
    for name in GMC_FEATURES {
        match index.get(name) {
            Some(&i) => columns.push(i),
            None => missing.push(name),
        }
    }
    let label_col = index.get(LABEL).copied();
    if label_col.is_none() {
        missing.push(LABEL);
    }
    if !missing.is_empty() {
        return Err(Error::Schema(format!("GMC file is missing columns {missing:?}")));
    }
    let label_col = label_col.expect("checked");
    let debt = GMC_FEATURES.iter().position(|n| *n == "DebtRatio").expect("DebtRatio listed");

    let mut values = Vec::new();
    let mut y = Vec::new();
    let mut rejected = 0;
    'rows: for rec in reader.records() {
        let rec = rec?;
        let mut row = [0.0; 10];
        for (k, &c) in columns.iter().enumerate() {
            match rec.get(c).and_then(|s| s.parse::<f64>().ok()).filter(|v| v.is_finite()) {
                Some(v) => row[k] = v,
                None => {
                    rejected += 1;
                    continue 'rows;
                }
            }
        }
        let label = match rec.get(label_col).map(str::trim) {
            Some("1") => 1u8,
            Some("0") => 0u8,
            _ => {
                rejected += 1;
                continue;
            }
        };
        if row[debt] < 0.0 {
            rejected += 1;
            continue;
        }
        row[debt] = row[debt].ln_1p();
        values.extend(row);
        y.push(if options.flip_label { 1 - label } else { label });
    }
    let x = Array2::from_shape_vec((y.len(), GMC_FEATURES.len()), values).map_err(|e| Error::Shape(e.to_string()))?;
    let features = GMC_FEATURES
        .iter()
        .map(|&n| {
            let f = FeatureDescriptor::continuous(n);
            match n {
                "age" => f.immutable(),
                "DebtRatio" => f.logged(),
                _ => f,
            }
        })
        .collect();
    Ok(RawDataset { name: "gmc".into(), features, x, y, rejected })
}
