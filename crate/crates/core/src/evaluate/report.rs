use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{auc_ovr, confusion, precision_macro, Aggregation, ConfusionMatrix, ScoreMatrix};
use crate::dataset::SampleKind;
use crate::error::{Error, Result};
use crate::model::ArchName;
use crate::sensor::SensorClass;

pub const EVAL_SCHEMA_VERSION: u32 = 1;

const UNKNOWN: &str = "(unknown)";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl ReportFormat {
    /// Picks the format from a `.json` / `.csv` extension.
    pub fn from_path(path: &Path) -> Result<Self> {
        path.extension()
            .and_then(|e| e.to_str())
            .ok_or_else(|| Error::InvalidInput(format!("{} has no extension", path.display())))?
            .parse()
    }
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(Error::InvalidInput(format!("unknown report format `{other}`"))),
        }
    }
}

fn default_averaging() -> String {
    "macro_one_vs_rest".into()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub arch: Option<String>,
    pub seed: Option<u64>,
    pub data_kind: Option<SampleKind>,
    /// How per-class values are combined into the headline numbers.
    #[serde(default = "default_averaging")]
    pub averaging: String,
}

impl Default for ReportMetadata {
    fn default() -> Self {
        Self {
            arch: None,
            seed: None,
            data_kind: None,
            averaging: default_averaging(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    /// `None` where a class lacks positive or negative rows.
    pub per_class_auc: Vec<Option<f64>>,
    pub macro_auc: f64,
    pub macro_precision: f64,
    /// Rows = true class, columns = predicted class.
    pub confusion: Vec<Vec<u64>>,
    pub sample_aggregation: Aggregation,
    pub evaluated_rows: usize,
    pub metadata: ReportMetadata,
}

fn csv_bytes(records: &[Vec<String>]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(Vec::new());
    for r in records {
        w.write_record(r).map_err(|e| Error::InvalidInput(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidInput(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::InvalidInput(e.to_string()))
}

fn csv_records(text: &str) -> Result<Vec<Vec<String>>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    r.records()
        .map(|rec| {
            rec.map(|rec| rec.iter().map(str::to_string).collect())
                .map_err(|e| Error::InvalidInput(format!("malformed CSV: {e}")))
        })
        .collect()
}

fn parse_num<T: FromStr>(field: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::InvalidInput(format!("`{field}`: cannot parse `{v}`")))
}

fn opt_f64(field: &str, v: &str) -> Result<Option<f64>> {
    if v.is_empty() {
        Ok(None)
    } else {
        parse_num(field, v).map(Some)
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::write(path, e))
}

impl EvalReport {
    pub fn from_scores(scores: &ScoreMatrix, aggregation: Aggregation, metadata: ReportMetadata) -> Result<Self> {
        let auc = auc_ovr(scores)?;
        let cm = confusion(scores);
        Ok(Self {
            schema_version: EVAL_SCHEMA_VERSION,
            per_class_auc: auc.per_class,
            macro_auc: auc.macro_auc,
            macro_precision: precision_macro(&cm)?,
            confusion: cm.to_rows(),
            sample_aggregation: aggregation,
            evaluated_rows: scores.len(),
            metadata,
        })
    }

    pub fn confusion_matrix(&self) -> Result<ConfusionMatrix> {
        ConfusionMatrix::from_rows(&self.confusion)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: Self = serde_json::from_str(text)?;
        if r.schema_version != EVAL_SCHEMA_VERSION {
            return Err(Error::InvalidInput(format!("unsupported report schema {}", r.schema_version)));
        }
        Ok(r)
    }

    /// Long format `field,index,value`; one confusion row per record with
    /// counts separated by `;`.
    pub fn to_csv(&self) -> String {
        let rec = |f: &str, i: String, v: String| vec![f.to_string(), i, v];
        let mut rows = vec![rec("field", "index".into(), "value".into())];
        rows.push(rec("schema_version", String::new(), self.schema_version.to_string()));
        rows.push(rec("evaluated_rows", String::new(), self.evaluated_rows.to_string()));
        rows.push(rec("sample_aggregation", String::new(), self.sample_aggregation.to_string()));
        rows.push(rec("macro_auc", String::new(), self.macro_auc.to_string()));
        rows.push(rec("macro_precision", String::new(), self.macro_precision.to_string()));
        for (i, a) in self.per_class_auc.iter().enumerate() {
            rows.push(rec("per_class_auc", i.to_string(), a.map(|v| v.to_string()).unwrap_or_default()));
        }
        for (i, r) in self.confusion.iter().enumerate() {
            let joined = r.iter().map(u64::to_string).collect::<Vec<_>>().join(";");
            rows.push(rec("confusion", i.to_string(), joined));
        }
        let m = &self.metadata;
        if let Some(a) = &m.arch {
            rows.push(rec("metadata.arch", String::new(), a.clone()));
        }
        if let Some(s) = m.seed {
            rows.push(rec("metadata.seed", String::new(), s.to_string()));
        }
        if let Some(k) = m.data_kind {
            rows.push(rec("metadata.data_kind", String::new(), k.to_string()));
        }
        rows.push(rec("metadata.averaging", String::new(), m.averaging.clone()));
        csv_bytes(&rows).expect("in-memory CSV")
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = Self {
            schema_version: 0,
            per_class_auc: Vec::new(),
            macro_auc: f64::NAN,
            macro_precision: f64::NAN,
            confusion: Vec::new(),
            sample_aggregation: Aggregation::Patch,
            evaluated_rows: 0,
            metadata: ReportMetadata::default(),
        };
        for (line, rec) in csv_records(text)?.into_iter().enumerate() {
            if line == 0 {
                if rec != ["field", "index", "value"] {
                    return Err(Error::InvalidInput("report CSV header must be field,index,value".into()));
                }
                continue;
            }
            let [field, index, value] = <[String; 3]>::try_from(rec)
                .map_err(|_| Error::InvalidInput(format!("report CSV line {} needs 3 fields", line + 1)))?;
            let (field, value) = (field.as_str(), value.as_str());
            let at = |len: usize| -> Result<usize> {
                let i: usize = parse_num(field, &index)?;
                if i != len {
                    return Err(Error::InvalidInput(format!("`{field}` index {i} out of order")));
                }
                Ok(i)
            };
            match field {
                "schema_version" => r.schema_version = parse_num(field, value)?,
                "evaluated_rows" => r.evaluated_rows = parse_num(field, value)?,
                "sample_aggregation" => r.sample_aggregation = value.parse()?,
                "macro_auc" => r.macro_auc = parse_num(field, value)?,
                "macro_precision" => r.macro_precision = parse_num(field, value)?,
                "per_class_auc" => {
                    at(r.per_class_auc.len())?;
                    r.per_class_auc.push(opt_f64(field, value)?);
                }
                "confusion" => {
                    at(r.confusion.len())?;
                    let row = if value.is_empty() {
                        Vec::new()
                    } else {
                        value.split(';').map(|v| parse_num(field, v)).collect::<Result<_>>()?
                    };
                    r.confusion.push(row);
                }
                "metadata.arch" => r.metadata.arch = Some(value.to_string()),
                "metadata.seed" => r.metadata.seed = Some(parse_num(field, value)?),
                "metadata.data_kind" => r.metadata.data_kind = Some(value.parse()?),
                "metadata.averaging" => r.metadata.averaging = value.to_string(),
                other => return Err(Error::InvalidInput(format!("unknown report field `{other}`"))),
            }
        }
        if r.schema_version != EVAL_SCHEMA_VERSION {
            return Err(Error::InvalidInput(format!("unsupported report schema {}", r.schema_version)));
        }
        if r.macro_auc.is_nan() || r.macro_precision.is_nan() {
            return Err(Error::InvalidInput("report CSV lacks macro metrics".into()));
        }
        Ok(r)
    }

    pub fn render(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::Json => self.to_json(),
            ReportFormat::Csv => self.to_csv(),
        }
    }

    pub fn parse(text: &str, format: ReportFormat) -> Result<Self> {
        match format {
            ReportFormat::Json => Self::from_json(text),
            ReportFormat::Csv => Self::from_csv(text),
        }
    }

    pub fn emit(&self, format: ReportFormat, path: impl AsRef<Path>) -> Result<()> {
        write_text(path.as_ref(), &self.render(format))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&fs::read_to_string(path)?, ReportFormat::from_path(path)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerSensorRow {
    pub sensor: SensorClass,
    pub auc: Option<f64>,
}

/// One-vs-rest AUC of every sensor for one model and data kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerSensorReport {
    pub arch: Option<String>,
    pub data_kind: Option<SampleKind>,
    pub rows: Vec<PerSensorRow>,
}

pub fn per_sensor_report(scores: &ScoreMatrix, arch: Option<String>, data_kind: Option<SampleKind>) -> Result<PerSensorReport> {
    if scores.classes() != SensorClass::COUNT {
        return Err(Error::Shape(format!(
            "per-sensor report needs {} classes, got {}",
            SensorClass::COUNT,
            scores.classes()
        )));
    }
    let auc = auc_ovr(scores)?;
    let rows = SensorClass::ALL
        .iter()
        .zip(auc.per_class)
        .map(|(&sensor, auc)| PerSensorRow { sensor, auc })
        .collect();
    Ok(PerSensorReport { arch, data_kind, rows })
}

impl PerSensorReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: Self = serde_json::from_str(text)?;
        r.check_rows()?;
        Ok(r)
    }

    fn check_rows(&self) -> Result<()> {
        let order: Vec<SensorClass> = self.rows.iter().map(|r| r.sensor).collect();
        if order != SensorClass::ALL {
            return Err(Error::InvalidInput("per-sensor rows must list every sensor in canonical order".into()));
        }
        Ok(())
    }

    /// `sensor,auc` at full precision; model and data kind ride along as
    /// `#` comment lines.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        if let Some(a) = &self.arch {
            let _ = writeln!(out, "# arch={a}");
        }
        if let Some(k) = self.data_kind {
            let _ = writeln!(out, "# data_kind={k}");
        }
        let mut rows = vec![vec!["sensor".to_string(), "auc".to_string()]];
        for r in &self.rows {
            rows.push(vec![r.sensor.to_string(), r.auc.map(|v| v.to_string()).unwrap_or_default()]);
        }
        out + &csv_bytes(&rows).expect("in-memory CSV")
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut arch = None;
        let mut data_kind = None;
        for line in text.lines().filter_map(|l| l.strip_prefix('#')) {
            match line.trim().split_once('=') {
                Some(("arch", v)) => arch = Some(v.to_string()),
                Some(("data_kind", v)) => data_kind = Some(v.parse()?),
                _ => return Err(Error::InvalidInput(format!("unknown comment line `#{line}`"))),
            }
        }
        let recs = csv_records(text)?;
        if recs.first().map(|r| r.as_slice()) != Some(&["sensor".to_string(), "auc".to_string()][..]) {
            return Err(Error::InvalidInput("per-sensor CSV header must be sensor,auc".into()));
        }
        let rows = recs[1..]
            .iter()
            .map(|r| match r.as_slice() {
                [s, a] => Ok(PerSensorRow {
                    sensor: s.parse()?,
                    auc: opt_f64("auc", a)?,
                }),
                _ => Err(Error::InvalidInput("per-sensor CSV rows need 2 fields".into())),
            })
            .collect::<Result<Vec<_>>>()?;
        let r = Self { arch, data_kind, rows };
        r.check_rows()?;
        Ok(r)
    }

    pub fn render(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::Json => self.to_json(),
            ReportFormat::Csv => self.to_csv(),
        }
    }

    pub fn parse(text: &str, format: ReportFormat) -> Result<Self> {
        match format {
            ReportFormat::Json => Self::from_json(text),
            ReportFormat::Csv => Self::from_csv(text),
        }
    }

    pub fn emit(&self, format: ReportFormat, path: impl AsRef<Path>) -> Result<()> {
        write_text(path.as_ref(), &self.render(format))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&fs::read_to_string(path)?, ReportFormat::from_path(path)?)
    }

    /// Text table with AUC rounded to four decimals.
    pub fn table(&self) -> String {
        let title = format!(
            "{} / {}",
            self.arch.as_deref().map(arch_label).unwrap_or(UNKNOWN),
            self.data_kind.map(kind_label).unwrap_or(UNKNOWN)
        );
        let mut out = format!("{title}\n{:<10} {:>8}\n", "Sensor", "AUC-ROC");
        for r in &self.rows {
            let v = r.auc.map(|v| format!("{v:.4}")).unwrap_or_else(|| "n/a".into());
            let _ = writeln!(out, "{:<10} {:>8}", r.sensor.name(), v);
        }
        out
    }
}

fn arch_label(a: &str) -> &str {
    a.parse::<ArchName>().map(ArchName::label).unwrap_or(a)
}

fn kind_label(k: SampleKind) -> &'static str {
    match k {
        SampleKind::Raw => "Original",
        SampleKind::Roi => "ROI",
    }
}

fn precision_display(p: f64) -> String {
    if p == 1.0 {
        "1.0".into()
    } else {
        format!("{p:.4}")
    }
}

/// Headline table: AUC-ROC with five decimals, precision as `1.0` or with
/// four decimals.
pub fn summary_table(report: &EvalReport) -> String {
    let m = &report.metadata;
    let model = m.arch.as_deref().map(arch_label).unwrap_or(UNKNOWN);
    let kind = m.data_kind.map(kind_label).unwrap_or(UNKNOWN);
    let mut out = format!(
        "{:<10} {:<10} {:<12} {:>9} {:>10}\n",
        "Model", "Data", "Granularity", "AUC-ROC", "Precision"
    );
    let _ = writeln!(
        out,
        "{:<10} {:<10} {:<12} {:>9} {:>10}",
        model,
        kind,
        report.sample_aggregation.as_str(),
        format!("{:.5}", report.macro_auc),
        precision_display(report.macro_precision)
    );
    out
}
