//! Study report: per-case rows, cohort summaries, paired tests and the
//! files written for them.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::stats::{paired_t_test, wilcoxon_signed_rank};
use super::{boxplot_stats, summarize, BoxplotStats, DiceScore, Summary};
use crate::error::{InspexError, Result};
use crate::io::write_atomic;
use crate::registration::Stage;

/// Stages whose Dice values form the tested sequence.
const DICE_SEQUENCE: [Stage; 3] = [Stage::Rigid, Stage::DeformHalf, Stage::DeformFull];

/// Registration outcome of one case in one arm.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ArmRecord {
    pub dice: BTreeMap<Stage, DiceScore>,
    pub jacobian_mean: Option<f64>,
    pub jacobian_negative_pct: Option<f64>,
    pub endpoint_error: Option<f64>,
    /// Percentage of lung voxels with a non-positive Jacobian, per deformable stage.
    #[serde(default)]
    pub jacobian_nonpositive_pct: BTreeMap<Stage, f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub id: String,
    pub label: String,
    pub emphysema_hard: Option<f64>,
    pub emphysema_soft: Option<f64>,
    pub emphysema_harmonized: Option<f64>,
    /// Keyed by arm name.
    pub arms: BTreeMap<String, ArmRecord>,
}

/// A report cell: a number, a stage that was not configured, or a value
/// that should exist but does not.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Cell {
    Value(f64),
    Absent,
    Missing,
}

impl Cell {
    pub fn value(self) -> Option<f64> {
        match self {
            Cell::Value(v) => Some(v),
            _ => None,
        }
    }

    fn text(self) -> String {
        match self {
            Cell::Value(v) => fmt_f64(v),
            Cell::Absent => "absent".into(),
            Cell::Missing => "NA".into(),
        }
    }
}

impl Serialize for Cell {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Cell::Value(v) => s.serialize_f64(*v),
            Cell::Absent => s.serialize_str("absent"),
            Cell::Missing => s.serialize_none(),
        }
    }
}

impl<'de> Deserialize<'de> for Cell {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
            Null,
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Cell::Value(v)),
            Raw::Text(t) if t == "absent" => Ok(Cell::Absent),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("unexpected cell text '{t}'"))),
            Raw::Null => Ok(Cell::Missing),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub id: String,
    pub label: String,
    pub cells: Vec<Cell>,
    /// Columns whose Dice came from two empty masks.
    pub empty_pairs: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnSummary {
    pub column: String,
    pub all: Option<Summary>,
    /// Only for Dice columns: the same summary without empty-pair rows.
    pub excluding_empty_pairs: Option<Summary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxplotSummary {
    pub column: String,
    pub stats: BoxplotStats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestRecord {
    pub name: String,
    pub test: String,
    pub n: usize,
    pub statistic: Option<f64>,
    pub p_value: Option<f64>,
    /// Median of the paired differences `x - y`.
    pub median_difference: Option<f64>,
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub columns: Vec<String>,
    pub rows: Vec<ReportRow>,
    pub summaries: Vec<ColumnSummary>,
    pub boxplots: Vec<BoxplotSummary>,
    pub tests: Vec<TestRecord>,
    pub warnings: Vec<String>,
    pub provenance: serde_json::Value,
}

pub fn dice_column(arm: &str, stage: Stage) -> String {
    format!("{arm}_dice_{}", stage.name())
}

/// Assembles the report. `stages` are the configured registration stages
/// and `arms` the arm names in column order.
pub fn build_report(
    cases: &[CaseRecord],
    stages: &[Stage],
    arms: &[&str],
    provenance: serde_json::Value,
) -> Result<StudyReport> {
    if cases.is_empty() {
        return Err(InspexError::InsufficientData("a report needs at least one case".into()));
    }
    let mut warnings = Vec::new();
    let mut columns: Vec<String> = ["emphysema_hard", "emphysema_soft", "emphysema_harmonized"]
        .map(String::from)
        .to_vec();
    for arm in arms {
        columns.extend(Stage::ALL.iter().map(|&s| dice_column(arm, s)));
        columns.extend(["jacobian_mean", "jacobian_negative_pct", "endpoint_error"].map(|c| format!("{arm}_{c}")));
    }

    let mut rows = Vec::with_capacity(cases.len());
    for case in cases {
        let mut cells = Vec::with_capacity(columns.len());
        let mut empty_pairs = Vec::new();
        let mut missing = Vec::new();
        for (name, v) in [
            ("emphysema_hard", case.emphysema_hard),
            ("emphysema_soft", case.emphysema_soft),
            ("emphysema_harmonized", case.emphysema_harmonized),
        ] {
            cells.push(v.map_or(Cell::Missing, Cell::Value));
            if v.is_none() && (name != "emphysema_harmonized" || arms.iter().any(|a| *a == "harmonized")) {
                missing.push(name.to_string());
            }
        }
        for arm in arms {
            let rec = case.arms.get(*arm);
            if rec.is_none() {
                missing.push(format!("arm {arm}"));
            }
            for &stage in &Stage::ALL {
                let col = dice_column(arm, stage);
                let cell = if !stages.contains(&stage) {
                    Cell::Absent
                } else {
                    match rec.and_then(|r| r.dice.get(&stage)) {
                        Some(d) => {
                            if d.empty_pair {
                                empty_pairs.push(col.clone());
                            }
                            Cell::Value(d.value)
                        }
                        None => {
                            if rec.is_some() {
                                missing.push(col.clone());
                            }
                            Cell::Missing
                        }
                    }
                };
                cells.push(cell);
            }
            let deformable = stages.iter().any(|s| matches!(s, Stage::DeformHalf | Stage::DeformFull));
            for v in [
                rec.and_then(|r| r.jacobian_mean),
                rec.and_then(|r| r.jacobian_negative_pct),
            ] {
                cells.push(match v {
                    Some(v) => Cell::Value(v),
                    None if deformable => Cell::Missing,
                    None => Cell::Absent,
                });
            }
            cells.push(rec.and_then(|r| r.endpoint_error).map_or(Cell::Absent, Cell::Value));
        }
        if !missing.is_empty() {
            warnings.push(format!("case {}: missing {}", case.id, missing.join(", ")));
        }
        rows.push(ReportRow {
            id: case.id.clone(),
            label: case.label.clone(),
            cells,
            empty_pairs,
        });
    }

    let mut summaries = Vec::with_capacity(columns.len());
    let mut boxplots = Vec::new();
    for (c, name) in columns.iter().enumerate() {
        let all: Vec<f64> = rows.iter().filter_map(|r| r.cells[c].value()).collect();
        let is_dice = name.contains("_dice_");
        let kept: Vec<f64> = rows
            .iter()
            .filter(|r| !r.empty_pairs.contains(name))
            .filter_map(|r| r.cells[c].value())
            .collect();
        summaries.push(ColumnSummary {
            column: name.clone(),
            all: summarize(&all).ok(),
            excluding_empty_pairs: if is_dice { summarize(&kept).ok() } else { None },
        });
        if let Ok(stats) = boxplot_stats(&all) {
            boxplots.push(BoxplotSummary {
                column: name.clone(),
                stats,
            });
        }
    }

    let tests = cohort_tests(cases, stages, arms);
    Ok(StudyReport {
        columns,
        rows,
        summaries,
        boxplots,
        tests,
        warnings,
        provenance,
    })
}

fn cohort_tests(cases: &[CaseRecord], stages: &[Stage], arms: &[&str]) -> Vec<TestRecord> {
    let mut out = Vec::new();
    let pairs = |f: &dyn Fn(&CaseRecord) -> Option<(f64, f64)>| -> (Vec<f64>, Vec<f64>) {
        cases.iter().filter_map(f).unzip()
    };

    let (h, s) = pairs(&|c| Some((c.emphysema_hard?, c.emphysema_soft?)));
    out.push(wilcoxon_record("emphysema_hard_vs_soft", &h, &s));
    if arms.contains(&"harmonized") {
        let (harm_gap, raw_gap) = pairs(&|c| {
            let soft = c.emphysema_soft?;
            Some(((c.emphysema_harmonized? - soft).abs(), (c.emphysema_hard? - soft).abs()))
        });
        out.push(wilcoxon_record("harmonized_gap_vs_hard_gap", &harm_gap, &raw_gap));
    }

    let tested: Vec<Stage> = DICE_SEQUENCE.into_iter().filter(|s| stages.contains(s)).collect();
    let dice_of = |c: &CaseRecord, arm: &str, s: Stage| -> Option<f64> {
        let d = c.arms.get(arm)?.dice.get(&s)?;
        (!d.empty_pair).then_some(d.value)
    };
    for arm in arms {
        for w in tested.windows(2) {
            let (later, earlier) = pairs(&|c| Some((dice_of(c, arm, w[1])?, dice_of(c, arm, w[0])?)));
            let name = format!("{arm}_dice_{}_vs_{}", w[1].name(), w[0].name());
            out.push(t_record(&name, &later, &earlier));
        }
    }
    if arms.len() == 2 {
        for &stage in &tested {
            let (b, a) = pairs(&|c| Some((dice_of(c, arms[1], stage)?, dice_of(c, arms[0], stage)?)));
            let name = format!("dice_{}_{}_vs_{}", stage.name(), arms[1], arms[0]);
            out.push(wilcoxon_record(&name, &b, &a));
        }
    }
    out
}

fn median_difference(x: &[f64], y: &[f64]) -> Option<f64> {
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    summarize(&d).ok().map(|s| s.median)
}

fn wilcoxon_record(name: &str, x: &[f64], y: &[f64]) -> TestRecord {
    let base = TestRecord {
        name: name.into(),
        test: "wilcoxon_signed_rank".into(),
        n: x.len(),
        statistic: None,
        p_value: None,
        median_difference: median_difference(x, y),
        note: None,
    };
    match wilcoxon_signed_rank(x, y) {
        Ok(w) => TestRecord {
            statistic: Some(w.statistic),
            p_value: Some(w.p_value),
            note: Some(format!(
                "{} null, {} non-zero differences",
                if w.exact { "exact" } else { "normal" },
                w.n_effective
            )),
            ..base
        },
        Err(e) => TestRecord {
            note: Some(e.to_string()),
            ..base
        },
    }
}

fn t_record(name: &str, x: &[f64], y: &[f64]) -> TestRecord {
    let base = TestRecord {
        name: name.into(),
        test: "paired_t".into(),
        n: x.len(),
        statistic: None,
        p_value: None,
        median_difference: median_difference(x, y),
        note: None,
    };
    match paired_t_test(x, y) {
        Ok(t) => TestRecord {
            statistic: Some(t.statistic),
            p_value: Some(t.p_value),
            note: Some(format!("df {}", t.df)),
            ..base
        },
        Err(e) => TestRecord {
            note: Some(e.to_string()),
            ..base
        },
    }
}

fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), fmt_f64)
}

fn csv_bytes(header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| InspexError::Format(format!("csv encoding failed: {e}"));
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(&r).map_err(err)?;
    }
    w.into_inner().map_err(|e| InspexError::Format(format!("csv encoding failed: {e}")))
}

impl StudyReport {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Values of a column in row order (non-numeric cells skipped).
    pub fn column_values(&self, name: &str) -> Vec<f64> {
        match self.column_index(name) {
            Some(c) => self.rows.iter().filter_map(|r| r.cells[c].value()).collect(),
            None => Vec::new(),
        }
    }

    pub fn summary(&self, name: &str) -> Option<&ColumnSummary> {
        self.summaries.iter().find(|s| s.column == name)
    }

    pub fn test(&self, name: &str) -> Option<&TestRecord> {
        self.tests.iter().find(|t| t.name == name)
    }

    pub fn rows_csv(&self) -> Result<Vec<u8>> {
        let mut header = vec!["case_id".to_string(), "label".to_string()];
        header.extend(self.columns.iter().cloned());
        header.push("empty_pair_columns".into());
        csv_bytes(
            &header,
            self.rows.iter().map(|r| {
                let mut v = vec![r.id.clone(), r.label.clone()];
                v.extend(r.cells.iter().map(|c| c.text()));
                v.push(r.empty_pairs.join(";"));
                v
            }),
        )
    }

    pub fn summary_csv(&self) -> Result<Vec<u8>> {
        let header: Vec<String> = [
            "column", "n", "median", "min", "max", "n_excl_empty", "median_excl_empty", "min_excl_empty", "max_excl_empty",
        ]
        .map(String::from)
        .to_vec();
        let part = |s: &Option<Summary>| match s {
            Some(s) => vec![s.n.to_string(), fmt_f64(s.median), fmt_f64(s.min), fmt_f64(s.max)],
            None => vec!["0".into(), "NA".into(), "NA".into(), "NA".into()],
        };
        csv_bytes(
            &header,
            self.summaries.iter().map(|s| {
                let mut v = vec![s.column.clone()];
                v.extend(part(&s.all));
                v.extend(match &s.excluding_empty_pairs {
                    Some(_) => part(&s.excluding_empty_pairs),
                    None => vec![String::new(); 4],
                });
                v
            }),
        )
    }

    pub fn tests_csv(&self) -> Result<Vec<u8>> {
        let header: Vec<String> = ["name", "test", "n", "statistic", "p_value", "median_difference", "note"]
            .map(String::from)
            .to_vec();
        csv_bytes(
            &header,
            self.tests.iter().map(|t| {
                vec![
                    t.name.clone(),
                    t.test.clone(),
                    t.n.to_string(),
                    fmt_opt(t.statistic),
                    fmt_opt(t.p_value),
                    fmt_opt(t.median_difference),
                    t.note.clone().unwrap_or_default(),
                ]
            }),
        )
    }

    pub fn boxplots_csv(&self) -> Result<Vec<u8>> {
        let header: Vec<String> =
            ["column", "n", "whisker_low", "q1", "median", "q3", "whisker_high", "outliers"]
                .map(String::from)
                .to_vec();
        csv_bytes(
            &header,
            self.boxplots.iter().map(|b| {
                let s = &b.stats;
                vec![
                    b.column.clone(),
                    s.n.to_string(),
                    fmt_f64(s.whisker_low),
                    fmt_f64(s.q1),
                    fmt_f64(s.median),
                    fmt_f64(s.q3),
                    fmt_f64(s.whisker_high),
                    s.outliers.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(";"),
                ]
            }),
        )
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| InspexError::Format(format!("json encoding failed: {e}")))
    }

    /// Boxplots of the emphysema and Dice columns, one panel each.
    pub fn boxplots_svg(&self) -> String {
        let panels: [(&str, &dyn Fn(&str) -> bool); 2] = [
            ("emphysema (%)", &|c: &str| c.starts_with("emphysema_")),
            ("Dice", &|c: &str| c.contains("_dice_")),
        ];
        let (width, row_h, label_w, plot_w) = (760.0, 22.0, 260.0, 460.0);
        let mut body = String::new();
        let mut y = 10.0;
        for (title, pick) in panels {
            let items: Vec<&BoxplotSummary> = self.boxplots.iter().filter(|b| pick(&b.column)).collect();
            if items.is_empty() {
                continue;
            }
            let lo = items.iter().map(|b| b.stats.outliers.first().map_or(b.stats.whisker_low, |o| o.min(b.stats.whisker_low))).fold(f64::INFINITY, f64::min);
            let hi = items.iter().map(|b| b.stats.outliers.last().map_or(b.stats.whisker_high, |o| o.max(b.stats.whisker_high))).fold(f64::NEG_INFINITY, f64::max);
            let span = if hi > lo { hi - lo } else { 1.0 };
            let px = |v: f64| label_w + (v - lo) / span * plot_w;
            let _ = writeln!(body, r#"<text x="4" y="{:.1}" font-weight="bold">{title} [{} .. {}]</text>"#, y + 14.0, fmt_f64(lo), fmt_f64(hi));
            y += row_h;
            for b in items {
                let s = &b.stats;
                let mid = y + row_h / 2.0;
                let _ = writeln!(body, r#"<text x="4" y="{:.1}">{}</text>"#, mid + 4.0, b.column);
                let _ = writeln!(body, r#"<line x1="{:.1}" y1="{mid:.1}" x2="{:.1}" y2="{mid:.1}" stroke="black"/>"#, px(s.whisker_low), px(s.whisker_high));
                let _ = writeln!(body, r#"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="lightgray" stroke="black"/>"#, px(s.q1), y + 4.0, (px(s.q3) - px(s.q1)).max(0.5), row_h - 8.0);
                let _ = writeln!(body, r#"<line x1="{0:.1}" y1="{1:.1}" x2="{0:.1}" y2="{2:.1}" stroke="black" stroke-width="2"/>"#, px(s.median), y + 4.0, y + row_h - 4.0);
                for o in &s.outliers {
                    let _ = writeln!(body, r#"<circle cx="{:.1}" cy="{mid:.1}" r="2" fill="none" stroke="black"/>"#, px(*o));
                }
                y += row_h;
            }
            y += row_h / 2.0;
        }
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{:.0}\" font-family=\"sans-serif\" font-size=\"11\">\n{body}</svg>\n",
            y + 10.0
        )
    }

    /// Writes `report.csv`, `summary.csv`, `tests.csv`, `boxplots.csv`,
    /// `report.json` and optionally `boxplots.svg` into `dir`.
    pub fn write(&self, dir: &Path, svg: bool) -> Result<Vec<PathBuf>> {
        let mut written = Vec::new();
        let mut put = |name: &str, bytes: Vec<u8>| -> Result<()> {
            let p = dir.join(name);
            write_atomic(&p, &bytes)?;
            written.push(p);
            Ok(())
        };
        put("report.csv", self.rows_csv()?)?;
        put("summary.csv", self.summary_csv()?)?;
        put("tests.csv", self.tests_csv()?)?;
        put("boxplots.csv", self.boxplots_csv()?)?;
        put("report.json", self.to_json()?.into_bytes())?;
        if svg {
            put("boxplots.svg", self.boxplots_svg().into_bytes())?;
        }
        Ok(written)
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(InspexError::io(path))?;
        serde_json::from_str(&text).map_err(|e| InspexError::Format(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn case(id: &str, e: [f64; 3], dice: [f64; 3]) -> CaseRecord {
        let mut arm = ArmRecord {
            jacobian_mean: Some(0.9),
            jacobian_negative_pct: Some(0.0),
            ..Default::default()
        };
        for (s, v) in DICE_SEQUENCE.iter().zip(dice) {
            arm.dice.insert(*s, DiceScore { value: v, empty_pair: false });
        }
        CaseRecord {
            id: id.into(),
            label: "case".into(),
            emphysema_hard: Some(e[0]),
            emphysema_soft: Some(e[1]),
            emphysema_harmonized: Some(e[2]),
            arms: [("raw".to_string(), arm)].into(),
        }
    }

    #[test]
    fn single_case_summaries_equal_the_row() {
        let r = build_report(&[case("a", [12.0, 3.0, 4.0], [0.1, 0.2, 0.3])], &DICE_SEQUENCE, &["raw"], serde_json::json!({}))
            .unwrap();
        assert_eq!(r.rows.len(), 1);
        for (c, name) in r.columns.iter().enumerate() {
            if let Some(v) = r.rows[0].cells[c].value() {
                let s = r.summary(name).unwrap().all.unwrap();
                assert_eq!((s.median, s.min, s.max), (v, v, v));
            }
        }
        assert_eq!(r.rows[0].cells[r.column_index("raw_dice_affine").unwrap()], Cell::Absent);
        assert!(r.warnings.is_empty(), "{:?}", r.warnings);
    }

    #[test]
    fn medians_match_summarize() {
        let cases: Vec<CaseRecord> = (0..7)
            .map(|i| {
                let f = i as f64;
                case(&format!("c{i}"), [10.0 + f, 2.0 + 0.5 * f, 3.0], [0.05 + 0.01 * f, 0.1 + 0.02 * f * f, 0.2 + 0.011 * f])
            })
            .collect();
        let r = build_report(&cases, &Stage::ALL, &["raw"], serde_json::Value::Null).unwrap();
        for name in ["emphysema_hard", "raw_dice_deform_half"] {
            let v = r.column_values(name);
            assert_eq!(r.summary(name).unwrap().all.unwrap().median, summarize(&v).unwrap().median);
        }
        let t = r.test("raw_dice_deform_full_vs_deform_half").unwrap();
        assert!(t.p_value.is_some());
        assert!(r.test("emphysema_hard_vs_soft").unwrap().p_value.unwrap() < 0.05);
        // the affine stage was configured but never produced
        assert_eq!(r.rows[0].cells[r.column_index("raw_dice_affine").unwrap()], Cell::Missing);
        assert!(!r.warnings.is_empty());
    }

    #[test]
    fn empty_pairs_are_flagged_and_excluded() {
        let mut a = case("a", [1.0, 1.0, 1.0], [0.1, 0.2, 0.3]);
        a.arms.get_mut("raw").unwrap().dice.insert(Stage::Rigid, DiceScore { value: 1.0, empty_pair: true });
        let b = case("b", [1.0, 1.0, 1.0], [0.3, 0.2, 0.3]);
        let r = build_report(&[a, b], &DICE_SEQUENCE, &["raw"], serde_json::Value::Null).unwrap();
        assert_eq!(r.rows[0].empty_pairs, vec!["raw_dice_rigid".to_string()]);
        let s = r.summary("raw_dice_rigid").unwrap();
        assert_eq!(s.all.unwrap().n, 2);
        assert_eq!(s.excluding_empty_pairs.unwrap().n, 1);
        assert_eq!(s.excluding_empty_pairs.unwrap().median, 0.3);
    }

    #[test]
    fn json_round_trip_and_csv_cells() {
        let r = build_report(&[case("x,y", [2.5, 1.0, 1.5], [0.1, 0.2, 0.3])], &[Stage::Rigid], &["raw"], serde_json::json!({"seed": 3}))
            .unwrap();
        let back: StudyReport = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
        let csv = String::from_utf8(r.rows_csv().unwrap()).unwrap();
        let line = csv.lines().nth(1).unwrap();
        assert!(line.starts_with("\"x,y\",case,2.5,1,1.5,0.1,absent,absent,absent"), "{line}");
    }

    #[test]
    fn no_cases_is_an_error() {
        assert!(build_report(&[], &Stage::ALL, &["raw"], serde_json::Value::Null).is_err());
    }
}
