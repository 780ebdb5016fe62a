//! UCI Adult census income.
//!
//! Categorical columns are collapsed into the binary indicators below.
//! Missing categories (`?`) fall into the complementary bucket of each
//! indicator (not private, other occupation, not USA).
//!
//! | indicator                  | 1 when                                                            |
//! |----------------------------|-------------------------------------------------------------------|
//! | `workclass_private`        | workclass is `Private`                                            |
//! | `marital_status_not_married` | marital status is not `Married-civ-spouse`, `Married-AF-spouse`, `Married-spouse-absent` |
//! | `occupation_other`         | occupation is not `Exec-managerial` or `Prof-specialty`           |
//! | `relationship_not_husband` | relationship is not `Husband`                                     |
//! | `race_white`               | race is `White`                                                   |
//! | `sex_male`                 | sex is `Male` (`Female` gives 0; anything else rejects the row)    |
//! | `native_country_us`        | native country is `United-States`                                 |

use std::path::Path;

use ndarray::Array2;

use super::dataset::{header_index, FeatureDescriptor, RawDataset};
use crate::error::{Error, Result};

/// Encoded column order.
pub const ADULT_FEATURES: [&str; 13] = [
    "age",
    "fnlwgt",
    "education_num",
    "capital_gain",
    "capital_loss",
    "hours_per_week",
    "workclass_private",
    "marital_status_not_married",
    "occupation_other",
    "relationship_not_husband",
    "race_white",
    "sex_male",
    "native_country_us",
];

const RAW_COLUMNS: [&str; 15] = [
    "age",
    "workclass",
    "fnlwgt",
    "education",
    "education_num",
    "marital_status",
    "occupation",
    "relationship",
    "race",
    "sex",
    "capital_gain",
    "capital_loss",
    "hours_per_week",
    "native_country",
    "income",
];

fn descriptors() -> Vec<FeatureDescriptor> {
    vec![
        FeatureDescriptor::continuous("age").immutable(),
        FeatureDescriptor::continuous("fnlwgt"),
        FeatureDescriptor::continuous("education_num"),
        FeatureDescriptor::continuous("capital_gain").logged(),
        FeatureDescriptor::continuous("capital_loss").logged(),
        FeatureDescriptor::continuous("hours_per_week"),
        FeatureDescriptor::binary("workclass_private"),
        FeatureDescriptor::binary("marital_status_not_married"),
        FeatureDescriptor::binary("occupation_other"),
        FeatureDescriptor::binary("relationship_not_husband"),
        FeatureDescriptor::binary("race_white").immutable(),
        FeatureDescriptor::binary("sex_male").immutable(),
        FeatureDescriptor::binary("native_country_us"),
    ]
}

fn canonical(name: &str) -> String {
    name.trim().to_ascii_lowercase().replace(['-', '.', ' '], "_")
}

/// Loads a raw census file, or a directory holding `adult.data` and
/// (optionally) `adult.test`.
pub fn load_adult(path: &Path) -> Result<RawDataset> {
    if path.is_dir() {
        let mut parts = Vec::new();
        for name in ["adult.data", "adult.test", "adult.csv"] {
            let p = path.join(name);
            if p.exists() {
                parts.push(std::fs::read_to_string(p)?);
            }
        }
        if parts.is_empty() {
            return Err(Error::Config(format!("no adult.data / adult.csv under {}", path.display())));
        }
        let mut out: Option<RawDataset> = None;
        for text in parts {
            let part = parse_adult(&text)?;
            out = Some(match out {
                None => part,
                Some(mut acc) => {
                    let x = ndarray::concatenate(ndarray::Axis(0), &[acc.x.view(), part.x.view()])
                        .map_err(|e| Error::Shape(e.to_string()))?;
                    acc.x = x;
                    acc.y.extend(part.y);
                    acc.rejected += part.rejected;
                    acc
                }
            });
        }
        Ok(out.expect("at least one part"))
    } else {
        parse_adult(&std::fs::read_to_string(path)?)
    }
}

/// Parses census rows. A header row is used when present; otherwise the
/// standard 15-column UCI order is assumed.
pub fn parse_adult(text: &str) -> Result<RawDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'|'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut records = reader.records().peekable();

    let mut columns: Vec<usize> = (0..RAW_COLUMNS.len()).collect();
    if let Some(Ok(first)) = records.peek() {
        if first.get(0).map(canonical).as_deref() == Some("age") {
            let named: csv::StringRecord = first.iter().map(canonical).collect();
            let index = header_index(&named);
            let mut missing = Vec::new();
            for (k, col) in RAW_COLUMNS.iter().enumerate() {
                let alt = if *col == "education_num" { "educational_num" } else { col };
                match index.get(*col).or_else(|| index.get(alt)) {
                    Some(&i) => columns[k] = i,
                    None if *col == "education" => columns[k] = usize::MAX,
                    None => missing.push(*col),
                }
            }
            if !missing.is_empty() {
                return Err(Error::Schema(format!("adult file is missing columns {missing:?}")));
            }
            records.next();
        }
    }

    let mut values = Vec::new();
    let mut y = Vec::new();
    let mut rejected = 0;
    for rec in records {
        let rec = rec?;
        if rec.len() == 1 && rec.get(0).is_some_and(str::is_empty) {
            continue;
        }
        match encode_row(&rec, &columns) {
            Some((row, label)) => {
                values.extend(row);
                y.push(label);
            }
            None => rejected += 1,
        }
    }
    if rejected > 0 {
        log::info!("adult: rejected {rejected} unmappable rows");
    }
    let x = Array2::from_shape_vec((y.len(), ADULT_FEATURES.len()), values).map_err(|e| Error::Shape(e.to_string()))?;
    Ok(RawDataset { name: "adult".into(), features: descriptors(), x, y, rejected })
}

fn encode_row(rec: &csv::StringRecord, columns: &[usize]) -> Option<([f64; 13], u8)> {
    let field = |k: usize| -> Option<&str> {
        let s = rec.get(columns[k])?;
        (!s.is_empty()).then_some(s)
    };
    let num = |k: usize| -> Option<f64> { field(k)?.parse::<f64>().ok().filter(|v| v.is_finite()) };

    let age = num(0)?;
    let workclass = field(1)?;
    let fnlwgt = num(2)?;
    let education_num = num(4)?;
    let marital = field(5)?;
    let occupation = field(6)?;
    let relationship = field(7)?;
    let race = field(8)?;
    let sex = field(9)?;
    let gain = num(10)?;
    let loss = num(11)?;
    let hours = num(12)?;
    let country = field(13)?;
    let income = field(14)?.trim_end_matches('.');

    if gain < 0.0 || loss < 0.0 {
        return None;
    }
    let label = match income {
        ">50K" => 1,
        "<=50K" => 0,
        _ => return None,
    };
    let male = match sex {
        "Male" => 1.0,
        "Female" => 0.0,
        _ => return None,
    };
    let flag = |b: bool| if b { 1.0 } else { 0.0 };
    let married = matches!(marital, "Married-civ-spouse" | "Married-AF-spouse" | "Married-spouse-absent");
    let managerial = matches!(occupation, "Exec-managerial" | "Prof-specialty");
    Some((
        [
            age,
            fnlwgt,
            education_num,
            gain.ln_1p(),
            loss.ln_1p(),
            hours,
            flag(workclass == "Private"),
            flag(!married),
            flag(!managerial),
            flag(relationship != "Husband"),
            flag(race == "White"),
            male,
            flag(country == "United-States"),
        ],
        label,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    const ROWS: &str = "\
39, State-gov, 77516, Bachelors, 13, Never-married, Adm-clerical, Not-in-family, White, Male, 2174, 0, 40, United-States, <=50K
50, Self-emp-not-inc, 83311, Bachelors, 13, Married-civ-spouse, Exec-managerial, Husband, White, Male, 0, 0, 13, United-States, <=50K
31, Private, 45781, Masters, 14, Never-married, Prof-specialty, Not-in-family, White, Female, 14084, 0, 50, United-States, >50K.
25, ?, 1000, HS-grad, 9, Never-married, ?, Own-child, Black, Female, 0, 0, 40, ?, <=50K.
40, Private, 1000, HS-grad, 9, Never-married, Sales, Own-child, Black, Unknown, 0, 0, 40, Cuba, <=50K
";

    #[test]
    fn encodes_rows() {
        let d = parse_adult(ROWS).unwrap();
        assert_eq!(d.len(), 4);
        assert_eq!(d.rejected, 1);
        assert_eq!(d.x.ncols(), 13);
        assert_eq!(d.y, vec![0, 0, 1, 0]);
        // Female → sex_male = 0
        assert_eq!(d.x[[2, 11]], 0.0);
        assert_eq!(d.x[[0, 11]], 1.0);
        // log1p(0) = 0
        assert_eq!(d.x[[1, 3]], 0.0);
        assert!((d.x[[0, 3]] - 2174f64.ln_1p()).abs() < 1e-12);
        // missing categories go to the complementary bucket
        assert_eq!(d.x.row(3).to_vec()[6..].to_vec(), vec![0.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
        // married husband in an exec role
        assert_eq!(d.x.row(1).to_vec()[6..].to_vec(), vec![0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let imm: Vec<&str> = d.features.iter().filter(|f| f.immutable).map(|f| f.name.as_str()).collect();
        assert_eq!(imm, vec!["age", "race_white", "sex_male"]);
    }

    #[test]
    fn header_rows_are_mapped_by_name() {
        let text = "\
age,workclass,fnlwgt,education,education-num,marital-status,occupation,relationship,race,sex,capital-gain,capital-loss,hours-per-week,native-country,income
52,Private,1,HS-grad,9,Divorced,Sales,Unmarried,White,Male,0,0,45,United-States,>50K
";
        let d = parse_adult(text).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.y, vec![1]);
        assert_eq!(d.x[[0, 5]], 45.0);
    }

    #[test]
    fn missing_columns_are_a_schema_error() {
        let text = "age,workclass,fnlwgt\n1,Private,2\n";
        assert!(matches!(parse_adult(text), Err(Error::Schema(_))));
    }
}
