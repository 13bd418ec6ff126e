//! Trial data, CSV ingestion and horizon bookkeeping.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::km::KaplanMeier;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovariateKind {
    Binary,
    Continuous,
}

/// Observed trial data `{(U_i, delta_i), A_i, X_i}`. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    covariates: Array2<f64>,
    names: Vec<String>,
    kinds: Vec<CovariateKind>,
    treatment: Vec<u8>,
    time: Vec<f64>,
    event: Vec<u8>,
    ids: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(
        covariates: Array2<f64>,
        names: Vec<String>,
        kinds: Vec<CovariateKind>,
        treatment: Vec<u8>,
        time: Vec<f64>,
        event: Vec<u8>,
        ids: Option<Vec<String>>,
    ) -> Result<Self> {
        let (n, p) = covariates.dim();
        if n == 0 || p == 0 {
            return Err(Error::InvalidDataset(format!(
                "need n >= 1 and p >= 1, got n={n}, p={p}"
            )));
        }
        if names.len() != p || kinds.len() != p {
            return Err(Error::InvalidDataset(
                "covariate names/kinds do not match column count".into(),
            ));
        }
        let lens = [treatment.len(), time.len(), event.len()];
        if lens.iter().any(|&l| l != n) || ids.as_ref().is_some_and(|v| v.len() != n) {
            return Err(Error::InvalidDataset("all vectors must have length n".into()));
        }
        for i in 0..n {
            if treatment[i] > 1 {
                return Err(invalid(i, "treatment", "must be 0 or 1"));
            }
            if event[i] > 1 {
                return Err(invalid(i, "event", "must be 0 or 1"));
            }
            if !(time[i] >= 0.0) || !time[i].is_finite() {
                return Err(invalid(i, "time", "must be a finite nonnegative number"));
            }
        }
        for (j, kind) in kinds.iter().enumerate() {
            for i in 0..n {
                let v = covariates[[i, j]];
                if !v.is_finite() {
                    return Err(invalid(i, &names[j], "must be finite"));
                }
                if *kind == CovariateKind::Binary && v != 0.0 && v != 1.0 {
                    return Err(invalid(i, &names[j], "binary column must contain only 0/1"));
                }
            }
        }
        Ok(Self {
            covariates,
            names,
            kinds,
            treatment,
            time,
            event,
            ids,
        })
    }

    pub fn n(&self) -> usize {
        self.time.len()
    }

    pub fn p(&self) -> usize {
        self.names.len()
    }

    pub fn covariates(&self) -> &Array2<f64> {
        &self.covariates
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.covariates.row(i)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn kinds(&self) -> &[CovariateKind] {
        &self.kinds
    }

    pub fn treatment(&self) -> &[u8] {
        &self.treatment
    }

    pub fn time(&self) -> &[f64] {
        &self.time
    }

    pub fn event(&self) -> &[u8] {
        &self.event
    }

    pub fn ids(&self) -> Option<&[String]> {
        self.ids.as_deref()
    }

    /// Rows `idx` as a new dataset (ids carried along).
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let p = self.p();
        let mut x = Array2::zeros((idx.len(), p));
        for (r, &i) in idx.iter().enumerate() {
            x.row_mut(r).assign(&self.covariates.row(i));
        }
        Dataset {
            covariates: x,
            names: self.names.clone(),
            kinds: self.kinds.clone(),
            treatment: idx.iter().map(|&i| self.treatment[i]).collect(),
            time: idx.iter().map(|&i| self.time[i]).collect(),
            event: idx.iter().map(|&i| self.event[i]).collect(),
            ids: self
                .ids
                .as_ref()
                .map(|ids| idx.iter().map(|&i| ids[i].clone()).collect()),
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header: Vec<&str> = Vec::new();
        if self.ids.is_some() {
            header.push("id");
        }
        header.extend(["treatment", "time", "event"]);
        header.extend(self.names.iter().map(String::as_str));
        out.write_record(&header)?;
        let mut rec: Vec<String> = Vec::with_capacity(header.len());
        for i in 0..self.n() {
            rec.clear();
            if let Some(ids) = &self.ids {
                rec.push(ids[i].clone());
            }
            rec.push(self.treatment[i].to_string());
            rec.push(self.time[i].to_string());
            rec.push(self.event[i].to_string());
            rec.extend(self.covariates.row(i).iter().map(|v| v.to_string()));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

fn invalid(row: usize, column: &str, reason: &str) -> Error {
    Error::InvalidValue {
        row: row + 1,
        column: column.to_string(),
        reason: reason.to_string(),
    }
}

/// Column roles for CSV ingestion; also the sidecar JSON schema format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CsvSchema {
    pub id: Option<String>,
    pub treatment: String,
    pub time: String,
    pub event: String,
    /// Explicit covariate columns; all remaining columns when absent.
    pub covariates: Option<Vec<String>>,
    /// Per-column kind overrides.
    pub kinds: BTreeMap<String, CovariateKind>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            id: Some("id".into()),
            treatment: "treatment".into(),
            time: "time".into(),
            event: "event".into(),
            covariates: None,
            kinds: BTreeMap::new(),
        }
    }
}

impl CsvSchema {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        Ok(serde_json::from_reader(std::fs::File::open(path)?)?)
    }
}

pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset> {
    read_csv(std::fs::File::open(path)?, schema)
}

pub fn read_csv<R: Read>(reader: R, schema: &CsvSchema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let t_col = find(&schema.treatment)?;
    let time_col = find(&schema.time)?;
    let e_col = find(&schema.event)?;
    // the id column is optional even when named in the default schema
    let id_col = schema
        .id
        .as_ref()
        .and_then(|name| header.iter().position(|h| h == name));
    let cov_cols: Vec<usize> = match &schema.covariates {
        Some(list) => list.iter().map(|c| find(c)).collect::<Result<_>>()?,
        None => (0..header.len())
            .filter(|&c| c != t_col && c != time_col && c != e_col && Some(c) != id_col)
            .collect(),
    };
    for name in schema.kinds.keys() {
        if !cov_cols.iter().any(|&c| &header[c] == name) {
            return Err(Error::MissingColumn(name.clone()));
        }
    }

    let mut treatment = Vec::new();
    let mut time = Vec::new();
    let mut event = Vec::new();
    let mut ids = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = r + 1;
        let num = |c: usize| -> Result<f64> {
            let s = rec.get(c).unwrap_or("");
            s.parse::<f64>().map_err(|_| Error::Parse {
                row,
                column: header[c].clone(),
                value: s.to_string(),
            })
        };
        let a = num(t_col)?;
        if a != 0.0 && a != 1.0 {
            return Err(Error::InvalidValue {
                row,
                column: header[t_col].clone(),
                reason: format!("treatment must be 0 or 1, got {a}"),
            });
        }
        let u = num(time_col)?;
        if !(u >= 0.0) || !u.is_finite() {
            return Err(Error::InvalidValue {
                row,
                column: header[time_col].clone(),
                reason: format!("time must be nonnegative, got {u}"),
            });
        }
        let d = num(e_col)?;
        if d != 0.0 && d != 1.0 {
            return Err(Error::InvalidValue {
                row,
                column: header[e_col].clone(),
                reason: format!("event must be 0 or 1, got {d}"),
            });
        }
        treatment.push(a as u8);
        time.push(u);
        event.push(d as u8);
        if let Some(c) = id_col {
            ids.push(rec.get(c).unwrap_or("").to_string());
        }
        for &c in &cov_cols {
            values.push(num(c)?);
        }
    }
    let n = time.len();
    if n == 0 {
        return Err(Error::InvalidDataset("no data rows".into()));
    }
    let p = cov_cols.len();
    let x = Array2::from_shape_vec((n, p), values)
        .map_err(|e| Error::InvalidDataset(e.to_string()))?;
    let names: Vec<String> = cov_cols.iter().map(|&c| header[c].clone()).collect();
    let kinds = names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            schema.kinds.get(name).copied().unwrap_or_else(|| {
                if x.column(j).iter().all(|&v| v == 0.0 || v == 1.0) {
                    CovariateKind::Binary
                } else {
                    CovariateKind::Continuous
                }
            })
        })
        .collect();
    Dataset::new(
        x,
        names,
        kinds,
        treatment,
        time,
        event,
        id_col.map(|_| ids),
    )
}

/// Reads only the named covariate columns (any order in the file), plus the
/// `id` column when present. Outcome columns are not required.
pub fn read_covariates<R: Read>(reader: R, names: &[String], id: Option<&str>) -> Result<(Array2<f64>, Option<Vec<String>>)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let cols: Vec<usize> = names
        .iter()
        .map(|n| {
            header
                .iter()
                .position(|h| h == n)
                .ok_or_else(|| Error::SchemaMismatch(format!("covariate `{n}` missing from the data")))
        })
        .collect::<Result<_>>()?;
    let id_col = id.and_then(|name| header.iter().position(|h| h == name));
    let mut values = Vec::new();
    let mut ids = Vec::new();
    let mut n = 0;
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        for &c in &cols {
            let s = rec.get(c).unwrap_or("");
            values.push(s.parse::<f64>().map_err(|_| Error::Parse {
                row: r + 1,
                column: header[c].clone(),
                value: s.to_string(),
            })?);
        }
        if let Some(c) = id_col {
            ids.push(rec.get(c).unwrap_or("").to_string());
        }
        n += 1;
    }
    let x = Array2::from_shape_vec((n, cols.len()), values).map_err(|e| Error::InvalidDataset(e.to_string()))?;
    Ok((x, id_col.map(|_| ids)))
}

/// Pre-specified time of interest `t*`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Horizon(f64);

impl Horizon {
    pub fn new(t_star: f64) -> Result<Self> {
        if t_star > 0.0 && t_star.is_finite() {
            Ok(Self(t_star))
        } else {
            Err(Error::InvalidArgument(format!(
                "horizon must be positive and finite, got {t_star}"
            )))
        }
    }

    pub fn t_star(self) -> f64 {
        self.0
    }
}

/// How the horizon is chosen for a fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HorizonRule {
    Fixed(f64),
    /// Kaplan–Meier median of the pooled training data.
    PooledMedian,
    /// Kaplan–Meier median of one arm of the training data.
    ArmMedian(u8),
}

impl HorizonRule {
    pub fn resolve(&self, d: &Dataset) -> Result<Horizon> {
        match *self {
            HorizonRule::Fixed(t) => Horizon::new(t),
            HorizonRule::PooledMedian => km_median_survival(d),
            HorizonRule::ArmMedian(a) => {
                let idx: Vec<usize> = (0..d.n()).filter(|&i| d.treatment()[i] == a).collect();
                if idx.is_empty() {
                    return Err(Error::SingleArm);
                }
                km_median_survival(&d.subset(&idx))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HorizonStatus {
    /// `I(T > t*) = 1`.
    SurvivedPastHorizon,
    /// `I(T > t*) = 0`.
    EventBeforeHorizon,
    /// Censored before `t*`; the outcome indicator is unknown.
    CensoredUnknown,
}

impl HorizonStatus {
    pub fn is_complete(self) -> bool {
        self != HorizonStatus::CensoredUnknown
    }

    /// `I(T > t*)` for complete cases.
    pub fn survived(self) -> Option<bool> {
        match self {
            HorizonStatus::SurvivedPastHorizon => Some(true),
            HorizonStatus::EventBeforeHorizon => Some(false),
            HorizonStatus::CensoredUnknown => None,
        }
    }
}

/// Censored at exactly `t*` counts as surviving past it; an event at exactly
/// `t*` counts as an event before it.
pub fn classify_one(time: f64, event: u8, h: Horizon) -> HorizonStatus {
    let t = h.t_star();
    if event == 1 {
        if time <= t {
            HorizonStatus::EventBeforeHorizon
        } else {
            HorizonStatus::SurvivedPastHorizon
        }
    } else if time >= t {
        HorizonStatus::SurvivedPastHorizon
    } else {
        HorizonStatus::CensoredUnknown
    }
}

pub fn classify_at_horizon(d: &Dataset, h: Horizon) -> Vec<HorizonStatus> {
    d.time()
        .iter()
        .zip(d.event())
        .map(|(&u, &e)| classify_one(u, e, h))
        .collect()
}

/// Pooled Kaplan–Meier median survival time.
pub fn km_median_survival(d: &Dataset) -> Result<Horizon> {
    if d.event().iter().all(|&e| e == 0) {
        return Err(Error::NoEvents);
    }
    let km = KaplanMeier::survival_curve(d.time(), d.event());
    let t = km.median().ok_or(Error::MedianNotReached)?;
    Horizon::new(t).map_err(|_| Error::MedianNotReached)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(time: Vec<f64>, event: Vec<u8>) -> Dataset {
        let n = time.len();
        Dataset::new(
            Array2::zeros((n, 1)),
            vec!["x1".into()],
            vec![CovariateKind::Binary],
            vec![0; n],
            time,
            event,
            None,
        )
        .unwrap()
    }

    #[test]
    fn parses_four_rows() {
        let csv = "id,treatment,time,event,x1\na,1,5,1,0\nb,0,7,0,1\nc,1,2.5,1,0\nd,0,9,1,1\n";
        let d = read_csv(csv.as_bytes(), &CsvSchema::default()).unwrap();
        assert_eq!((d.n(), d.p()), (4, 1));
        assert_eq!(d.kinds(), &[CovariateKind::Binary]);
        assert_eq!(d.ids().unwrap()[2], "c");
        assert_eq!(d.time(), &[5.0, 7.0, 2.5, 9.0]);
    }

    #[test]
    fn non_numeric_cell_names_row_and_column() {
        let csv = "treatment,time,event,x1\n1,5,1,0.3\n0,abc,0,1\n";
        let err = read_csv(csv.as_bytes(), &CsvSchema::default()).unwrap_err();
        match err {
            Error::Parse { row, column, .. } => {
                assert_eq!(row, 2);
                assert_eq!(column, "time");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_treatment_negative_time_and_missing_column() {
        let bad_a = "treatment,time,event,x1\n2,5,1,0\n";
        assert!(matches!(
            read_csv(bad_a.as_bytes(), &CsvSchema::default()),
            Err(Error::InvalidValue { row: 1, .. })
        ));
        let neg = "treatment,time,event,x1\n1,-1,1,0\n";
        assert!(matches!(
            read_csv(neg.as_bytes(), &CsvSchema::default()),
            Err(Error::InvalidValue { .. })
        ));
        let missing = "treatment,event,x1\n1,1,0\n";
        assert!(matches!(
            read_csv(missing.as_bytes(), &CsvSchema::default()),
            Err(Error::MissingColumn(c)) if c == "time"
        ));
    }

    #[test]
    fn schema_overrides_kind_and_roles() {
        let csv = "arm,futime,status,x1,x2\n1,5,1,0,3\n0,7,0,1,4\n";
        let schema: CsvSchema = serde_json::from_str(
            r#"{"id":null,"treatment":"arm","time":"futime","event":"status",
                "kinds":{"x1":"continuous"}}"#,
        )
        .unwrap();
        let d = read_csv(csv.as_bytes(), &schema).unwrap();
        assert_eq!(d.names(), &["x1".to_string(), "x2".to_string()]);
        assert_eq!(d.kinds(), &[CovariateKind::Continuous, CovariateKind::Continuous]);
    }

    #[test]
    fn classify_examples() {
        let h = Horizon::new(10.0).unwrap();
        assert_eq!(classify_one(5.0, 1, h), HorizonStatus::EventBeforeHorizon);
        assert_eq!(classify_one(12.0, 0, h), HorizonStatus::SurvivedPastHorizon);
        assert_eq!(classify_one(7.0, 0, h), HorizonStatus::CensoredUnknown);
        assert_eq!(classify_one(10.0, 0, h), HorizonStatus::SurvivedPastHorizon);
        assert_eq!(classify_one(10.0, 1, h), HorizonStatus::EventBeforeHorizon);
        assert_eq!(classify_one(12.0, 1, h), HorizonStatus::SurvivedPastHorizon);
    }

    #[test]
    fn median_examples() {
        let d = tiny(vec![1.0, 2.0, 3.0, 4.0], vec![1, 1, 1, 1]);
        assert_eq!(km_median_survival(&d).unwrap().t_star(), 2.0);
        let d = tiny(vec![5.0], vec![1]);
        assert_eq!(km_median_survival(&d).unwrap().t_star(), 5.0);
        let d = tiny(vec![5.0, 6.0], vec![0, 0]);
        assert!(matches!(km_median_survival(&d), Err(Error::NoEvents)));
        // one early event among many censored: S never drops to 0.5
        let d = tiny(vec![1.0, 5.0, 6.0, 7.0], vec![1, 0, 0, 0]);
        assert!(matches!(km_median_survival(&d), Err(Error::MedianNotReached)));
    }

    #[test]
    fn horizon_must_be_positive() {
        assert!(Horizon::new(0.0).is_err());
        assert!(Horizon::new(f64::NAN).is_err());
        assert!(Horizon::new(1.5).is_ok());
    }
}
