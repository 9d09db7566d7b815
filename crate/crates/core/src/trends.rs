//! Longitudinal view of results reported in the literature: per-year best
//! and baseline series, least-squares trend lines per model category,
//! improvement deltas and a census of which metrics papers report.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TrendsError {
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("line {line}: {msg}")]
    InvalidRow { line: u64, msg: String },
    #[error("csv: {0}")]
    Csv(String),
    #[error("a trend needs at least two distinct years, got {0}")]
    TooFewPoints(usize),
    #[error("reference value must be positive, got {0}")]
    NonPositiveReference(f64),
}

type Result<T> = std::result::Result<T, TrendsError>;

macro_rules! vocabulary {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $text)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(&self) -> &'static str {
                match self { $($name::$variant => $text),+ }
            }
        }

        impl FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> std::result::Result<Self, String> {
                match s.trim().to_ascii_lowercase().as_str() {
                    $($text => Ok($name::$variant),)+
                    other => Err(format!(
                        "invalid {} `{other}` (expected one of: {})",
                        stringify!($name).to_ascii_lowercase(),
                        [$($text),+].join(", ")
                    )),
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

vocabulary!(Dataset { Robust04 => "robust04", Dl20 => "dl20" });
vocabulary!(Category { Probabilistic => "probabilistic", Neural => "neural", Llm => "llm" });
vocabulary!(Kind { Best => "best", Baseline => "baseline" });
vocabulary!(Protocol { Full => "full", CrossValidation => "cross_validation" });

pub const MIN_YEAR: i32 = 2004;
pub const MAX_YEAR: i32 = 2025;

/// One result extracted from a publication.
///
/// Categorisation happens upstream: `llm` means more than 7B parameters or
/// "LLM" in the model name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaRecord {
    pub paper_id: String,
    pub year: i32,
    pub dataset: Dataset,
    pub metric: String,
    pub value: f64,
    pub category: Category,
    pub kind: Kind,
    pub protocol: Protocol,
}

const COLUMNS: [&str; 8] = [
    "paper_id", "year", "dataset", "metric", "value", "category", "kind", "protocol",
];

pub fn canonical_metric(name: &str) -> String {
    name.trim().to_ascii_lowercase()
}

pub fn load_meta_csv(text: &str) -> Result<Vec<MetaRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| TrendsError::Csv(e.to_string()))?
        .clone();
    let mut index = [0usize; COLUMNS.len()];
    for (slot, col) in index.iter_mut().zip(COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h == col)
            .ok_or_else(|| TrendsError::MissingColumn(col.to_string()))?;
    }
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| TrendsError::Csv(e.to_string()))?;
        let line = row.position().map_or(0, |p| p.line());
        let field = |i: usize| row.get(index[i]).unwrap_or("");
        let invalid = |msg: String| TrendsError::InvalidRow { line, msg };
        let year: i32 = field(1)
            .parse()
            .map_err(|_| invalid(format!("invalid year `{}`", field(1))))?;
        if !(MIN_YEAR..=MAX_YEAR).contains(&year) {
            return Err(invalid(format!(
                "year {year} outside {MIN_YEAR}-{MAX_YEAR}"
            )));
        }
        let value: f64 = field(4)
            .parse()
            .map_err(|_| invalid(format!("invalid value `{}`", field(4))))?;
        if !(0.0..=1.0).contains(&value) {
            return Err(invalid(format!("value {value} outside [0, 1]")));
        }
        let paper_id = field(0).to_string();
        let metric = canonical_metric(field(3));
        if paper_id.is_empty() || metric.is_empty() {
            return Err(invalid("empty paper_id or metric".into()));
        }
        records.push(MetaRecord {
            paper_id,
            year,
            dataset: field(2).parse().map_err(invalid)?,
            metric,
            value,
            category: field(5).parse().map_err(invalid)?,
            kind: field(6).parse().map_err(invalid)?,
            protocol: field(7).parse().map_err(invalid)?,
        });
    }
    Ok(records)
}

/// Per-year maximum over the matching records. `protocol: None` matches
/// both protocols.
pub fn best_series(
    records: &[MetaRecord],
    dataset: Dataset,
    metric: &str,
    category: Category,
    kind: Kind,
    protocol: Option<Protocol>,
) -> BTreeMap<i32, f64> {
    let metric = canonical_metric(metric);
    let mut series: BTreeMap<i32, f64> = BTreeMap::new();
    for r in records.iter().filter(|r| {
        r.dataset == dataset
            && r.metric == metric
            && r.category == category
            && r.kind == kind
            && protocol.is_none_or(|p| r.protocol == p)
    }) {
        let slot = series.entry(r.year).or_insert(r.value);
        *slot = slot.max(r.value);
    }
    series
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    /// Value units per year.
    pub slope: f64,
    pub intercept: f64,
    pub points_used: usize,
}

impl LineFit {
    pub fn at(&self, year: f64) -> f64 {
        self.intercept + self.slope * year
    }
}

/// Ordinary least squares of value on year.
pub fn fit_trend(series: &BTreeMap<i32, f64>) -> Result<LineFit> {
    let n = series.len();
    if n < 2 {
        return Err(TrendsError::TooFewPoints(n));
    }
    let mean_x = series.keys().map(|&x| f64::from(x)).sum::<f64>() / n as f64;
    let mean_y = series.values().sum::<f64>() / n as f64;
    let (sxy, sxx) = series.iter().fold((0.0, 0.0), |(sxy, sxx), (&x, &y)| {
        let dx = f64::from(x) - mean_x;
        (sxy + dx * (y - mean_y), sxx + dx * dx)
    });
    let slope = sxy / sxx;
    Ok(LineFit {
        slope,
        intercept: mean_y - slope * mean_x,
        points_used: n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendLine {
    pub dataset: Dataset,
    pub metric: String,
    pub category: Category,
    pub slope: f64,
    pub intercept: f64,
    pub points_used: usize,
}

/// Both conventions for "X% better": difference in points (×100) and the
/// relative change in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Delta {
    pub absolute_points: f64,
    pub relative_pct: f64,
}

impl fmt::Display for Delta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:+.1} points ({:+.1}% relative)",
            self.absolute_points, self.relative_pct
        )
    }
}

pub fn improvement_delta(candidate: f64, reference: f64) -> Result<Delta> {
    if reference <= 0.0 || reference.is_nan() {
        return Err(TrendsError::NonPositiveReference(reference));
    }
    Ok(Delta {
        absolute_points: (candidate - reference) * 100.0,
        relative_pct: (candidate / reference - 1.0) * 100.0,
    })
}

pub const DELTA_FOOTNOTE: &str = "Percent improvements are quoted in the literature both as \
point differences and as relative changes; both are reported here.";

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetCensus {
    /// Distinct publications with any record for the dataset.
    pub publications: usize,
    /// Distinct publications reporting each metric.
    pub metrics: BTreeMap<String, usize>,
}

impl DatasetCensus {
    pub fn distinct_metrics(&self) -> usize {
        self.metrics.len()
    }
}

pub fn metric_census(records: &[MetaRecord]) -> BTreeMap<Dataset, DatasetCensus> {
    let mut papers: BTreeMap<Dataset, BTreeSet<&str>> = BTreeMap::new();
    let mut pairs: BTreeMap<Dataset, BTreeSet<(&str, &str)>> = BTreeMap::new();
    for r in records {
        papers.entry(r.dataset).or_default().insert(&r.paper_id);
        pairs
            .entry(r.dataset)
            .or_default()
            .insert((r.metric.as_str(), r.paper_id.as_str()));
    }
    papers
        .into_iter()
        .map(|(ds, ps)| {
            let mut metrics = BTreeMap::new();
            for (m, _) in &pairs[&ds] {
                *metrics.entry(m.to_string()).or_insert(0) += 1;
            }
            (
                ds,
                DatasetCensus {
                    publications: ps.len(),
                    metrics,
                },
            )
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceLine {
    pub label: String,
    pub value: f64,
    #[serde(default)]
    pub dashed: bool,
}

/// Published reference results drawn as horizontal lines.
pub fn default_reference_lines(dataset: Dataset, metric: &str) -> Vec<ReferenceLine> {
    let line = |label: &str, value, dashed| ReferenceLine {
        label: label.to_string(),
        value,
        dashed,
    };
    match (dataset, canonical_metric(metric).as_str()) {
        (Dataset::Robust04, "map") => vec![line("TREC 2004 best", 0.333, false)],
        (Dataset::Dl20, "ndcg@10") => vec![
            line("TREC 2020 best", 0.8031, false),
            line("SpladeV3", 0.7522, true),
        ],
        _ => Vec::new(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotPoint {
    pub year: i32,
    pub value: f64,
    pub paper_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotSeries {
    pub category: Category,
    pub kind: Kind,
    pub protocol: Protocol,
    pub points: Vec<PlotPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotBundle {
    pub dataset: Dataset,
    pub metric: String,
    pub series: Vec<PlotSeries>,
    pub trend_lines: Vec<TrendLine>,
    pub reference_lines: Vec<ReferenceLine>,
    pub notes: Vec<String>,
}

/// Point series per (category, kind, protocol), trend lines per category
/// fitted on the per-year best full-collection results, and reference lines.
/// Cross-validation results get their own series and never enter a fit.
pub fn emit_plot_series(
    records: &[MetaRecord],
    dataset: Dataset,
    metric: &str,
    reference_lines: &[ReferenceLine],
) -> PlotBundle {
    let metric = canonical_metric(metric);
    let mut groups: BTreeMap<(Category, Kind, Protocol), Vec<PlotPoint>> = BTreeMap::new();
    for r in records
        .iter()
        .filter(|r| r.dataset == dataset && r.metric == metric)
    {
        groups
            .entry((r.category, r.kind, r.protocol))
            .or_default()
            .push(PlotPoint {
                year: r.year,
                value: r.value,
                paper_id: r.paper_id.clone(),
            });
    }
    let series = groups
        .into_iter()
        .map(|((category, kind, protocol), mut points)| {
            points.sort_by(|a, b| {
                (a.year, &a.paper_id)
                    .cmp(&(b.year, &b.paper_id))
                    .then(a.value.total_cmp(&b.value))
            });
            PlotSeries {
                category,
                kind,
                protocol,
                points,
            }
        })
        .collect();
    let mut trend_lines = Vec::new();
    let mut notes = Vec::new();
    for &category in Category::ALL {
        let best = best_series(
            records,
            dataset,
            &metric,
            category,
            Kind::Best,
            Some(Protocol::Full),
        );
        match fit_trend(&best) {
            Ok(fit) => trend_lines.push(TrendLine {
                dataset,
                metric: metric.clone(),
                category,
                slope: fit.slope,
                intercept: fit.intercept,
                points_used: fit.points_used,
            }),
            Err(_) if best.is_empty() => {}
            Err(_) => notes.push(format!(
                "no {category} trend: best results cover fewer than two years"
            )),
        }
    }
    notes.push(DELTA_FOOTNOTE.to_string());
    PlotBundle {
        dataset,
        metric,
        series,
        trend_lines,
        reference_lines: reference_lines.to_vec(),
        notes,
    }
}

impl PlotBundle {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("dataset,metric,category,kind,protocol,year,value,paper_id\n");
        for s in &self.series {
            for p in &s.points {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{}",
                    self.dataset,
                    self.metric,
                    s.category,
                    s.kind,
                    s.protocol,
                    p.year,
                    p.value,
                    p.paper_id
                );
            }
        }
        out
    }

    /// Self-contained scatter plot: filled marks for best results, hollow
    /// for baselines, diamonds for cross-validation, one colour per category.
    pub fn to_svg(&self) -> String {
        const W: f64 = 720.0;
        const H: f64 = 420.0;
        const M: f64 = 50.0;
        let years: Vec<i32> = self
            .series
            .iter()
            .flat_map(|s| s.points.iter().map(|p| p.year))
            .collect();
        let (y0, y1) = match (years.iter().min(), years.iter().max()) {
            (Some(&a), Some(&b)) if a < b => (f64::from(a), f64::from(b)),
            (Some(&a), _) => (f64::from(a) - 1.0, f64::from(a) + 1.0),
            _ => (f64::from(MIN_YEAR), f64::from(MAX_YEAR)),
        };
        let values = self
            .series
            .iter()
            .flat_map(|s| s.points.iter().map(|p| p.value))
            .chain(self.reference_lines.iter().map(|r| r.value));
        let (mut v0, mut v1) = values.fold((1.0f64, 0.0f64), |(lo, hi), v| (lo.min(v), hi.max(v)));
        if v0 >= v1 {
            v0 = 0.0;
            v1 = 1.0;
        }
        let pad = (v1 - v0) * 0.05;
        v0 = (v0 - pad).max(0.0);
        v1 = (v1 + pad).min(1.0);
        let sx = |year: f64| M + (year - y0) / (y1 - y0) * (W - 2.0 * M);
        let sy = |value: f64| H - M - (value - v0) / (v1 - v0) * (H - 2.0 * M);
        let colour = |c: Category| match c {
            Category::Probabilistic => "#1b9e77",
            Category::Neural => "#7570b3",
            Category::Llm => "#d95f02",
        };
        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(
            svg,
            r#"<text x="{M}" y="20">{} {}</text>"#,
            self.dataset, self.metric
        );
        let _ = writeln!(
            svg,
            r#"<line x1="{M}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{M}" y1="{M}" x2="{M}" y2="{b}" stroke="black"/>"#,
            b = H - M,
            r = W - M
        );
        for year in (y0 as i32)..=(y1 as i32) {
            let _ = writeln!(
                svg,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{year}</text>"#,
                sx(f64::from(year)),
                H - M + 15.0
            );
        }
        for i in 0..=4 {
            let v = v0 + (v1 - v0) * f64::from(i) / 4.0;
            let _ = writeln!(
                svg,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.2}</text>"#,
                M - 5.0,
                sy(v) + 4.0
            );
        }
        for r in &self.reference_lines {
            let dash = if r.dashed {
                r#" stroke-dasharray="6,4""#
            } else {
                ""
            };
            let _ = writeln!(
                svg,
                r#"<line x1="{M}" y1="{y:.1}" x2="{x2}" y2="{y:.1}" stroke="grey"{dash}/><text x="{x2}" y="{ty:.1}" text-anchor="end" fill="grey">{} ({})</text>"#,
                r.label,
                r.value,
                y = sy(r.value),
                x2 = W - M,
                ty = sy(r.value) - 3.0
            );
        }
        for t in &self.trend_lines {
            let fit = LineFit {
                slope: t.slope,
                intercept: t.intercept,
                points_used: t.points_used,
            };
            let _ = writeln!(
                svg,
                r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="{}" stroke-width="1.5"/>"#,
                sx(y0),
                sy(fit.at(y0).clamp(v0, v1)),
                sx(y1),
                sy(fit.at(y1).clamp(v0, v1)),
                colour(t.category)
            );
        }
        for s in &self.series {
            let c = colour(s.category);
            let fill = if s.kind == Kind::Best { c } else { "none" };
            for p in &s.points {
                let (x, y) = (sx(f64::from(p.year)), sy(p.value));
                match s.protocol {
                    Protocol::Full => {
                        let _ = writeln!(
                            svg,
                            r#"<circle cx="{x:.1}" cy="{y:.1}" r="4" stroke="{c}" fill="{fill}"><title>{}</title></circle>"#,
                            p.paper_id
                        );
                    }
                    Protocol::CrossValidation => {
                        let _ = writeln!(
                            svg,
                            r#"<polygon points="{:.1},{y:.1} {x:.1},{:.1} {:.1},{y:.1} {x:.1},{:.1}" stroke="{c}" fill="{fill}"><title>{}</title></polygon>"#,
                            x - 5.0,
                            y - 5.0,
                            x + 5.0,
                            y + 5.0,
                            p.paper_id
                        );
                    }
                }
            }
        }
        svg.push_str("</svg>\n");
        svg
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "paper_id,year,dataset,metric,value,category,kind,protocol\n";

    fn rec(
        paper: &str,
        year: i32,
        metric: &str,
        value: f64,
        category: Category,
        kind: Kind,
    ) -> MetaRecord {
        MetaRecord {
            paper_id: paper.into(),
            year,
            dataset: Dataset::Robust04,
            metric: metric.into(),
            value,
            category,
            kind,
            protocol: Protocol::Full,
        }
    }

    #[test]
    fn loads_valid_rows() {
        let text = format!(
            "{HEADER}p1,2023,robust04,nDCG@10,0.536,llm,best,full\n\
             p1,2023,robust04,MAP,0.25,neural,baseline,full\n\
             p2,2025,dl20,ndcg@10,0.885,llm,best,cross_validation\n"
        );
        let rs = load_meta_csv(&text).unwrap();
        assert_eq!(rs.len(), 3);
        assert_eq!(rs[0].metric, "ndcg@10");
        assert_eq!(rs[2].protocol, Protocol::CrossValidation);
    }

    #[test]
    fn rejects_bad_rows() {
        let bad_cat = format!("{HEADER}p1,2023,robust04,map,0.3,llm,best,full\np2,2023,robust04,map,0.3,transformer,best,full\n");
        match load_meta_csv(&bad_cat) {
            Err(TrendsError::InvalidRow { line: 3, msg }) => assert!(msg.contains("transformer")),
            other => panic!("unexpected {other:?}"),
        }
        let bad_value = format!("{HEADER}p1,2023,robust04,map,1.2,llm,best,full\n");
        assert!(matches!(
            load_meta_csv(&bad_value),
            Err(TrendsError::InvalidRow { line: 2, ref msg }) if msg.contains("outside [0, 1]")
        ));
        let bad_year = format!("{HEADER}p1,1999,robust04,map,0.2,llm,best,full\n");
        assert!(load_meta_csv(&bad_year).is_err());
        assert_eq!(
            load_meta_csv("paper_id,year,dataset,metric,value,category,kind\n"),
            Err(TrendsError::MissingColumn("protocol".into()))
        );
    }

    #[test]
    fn best_series_takes_yearly_max() {
        let rs = vec![
            rec("a", 2025, "ndcg@10", 0.71, Category::Llm, Kind::Best),
            rec("b", 2025, "ndcg@10", 0.734, Category::Llm, Kind::Best),
            rec("c", 2025, "ndcg@10", 0.60, Category::Llm, Kind::Baseline),
        ];
        let s = best_series(
            &rs,
            Dataset::Robust04,
            "ndcg@10",
            Category::Llm,
            Kind::Best,
            None,
        );
        assert_eq!(s, BTreeMap::from([(2025, 0.734)]));
        let b = best_series(
            &rs,
            Dataset::Robust04,
            "ndcg@10",
            Category::Llm,
            Kind::Baseline,
            None,
        );
        assert_eq!(b, BTreeMap::from([(2025, 0.60)]));
        assert!(best_series(
            &rs,
            Dataset::Dl20,
            "ndcg@10",
            Category::Llm,
            Kind::Best,
            None
        )
        .is_empty());
    }

    #[test]
    fn ols_basics() {
        let line = fit_trend(&BTreeMap::from([(1, 1.0), (2, 2.0), (3, 3.0)])).unwrap();
        assert!((line.slope - 1.0).abs() < 1e-12 && line.intercept.abs() < 1e-12);
        let flat = fit_trend(&BTreeMap::from([(2020, 0.5), (2024, 0.5)])).unwrap();
        assert_eq!(flat.slope, 0.0);
        assert_eq!(
            fit_trend(&BTreeMap::from([(2020, 0.5)])),
            Err(TrendsError::TooFewPoints(1))
        );
    }

    #[test]
    fn deltas() {
        let d = improvement_delta(0.734, 0.536).unwrap();
        assert!((d.absolute_points - 19.8).abs() < 1e-9);
        assert!((d.relative_pct - 36.940_298_507).abs() < 1e-6);
        let d = improvement_delta(0.885, 0.8031).unwrap();
        assert!((d.absolute_points - 8.19).abs() < 1e-9);
        assert!((d.relative_pct - 10.197_982_817).abs() < 1e-6);
        assert_eq!(
            improvement_delta(0.5, 0.5).unwrap(),
            Delta {
                absolute_points: 0.0,
                relative_pct: 0.0
            }
        );
        assert!(improvement_delta(0.5, 0.0).is_err());
        assert_eq!(
            improvement_delta(0.734, 0.536).unwrap().to_string(),
            "+19.8 points (+36.9% relative)"
        );
    }

    #[test]
    fn census_counts_papers_once_per_metric() {
        let rs = vec![
            rec("a", 2024, "ndcg@10", 0.5, Category::Llm, Kind::Best),
            rec("a", 2024, "ndcg@10", 0.4, Category::Neural, Kind::Baseline),
            rec("a", 2024, "map", 0.3, Category::Llm, Kind::Best),
            rec("b", 2024, "ndcg@10", 0.6, Category::Llm, Kind::Best),
        ];
        let c = &metric_census(&rs)[&Dataset::Robust04];
        assert_eq!(c.publications, 2);
        assert_eq!(c.metrics["ndcg@10"], 2);
        assert_eq!(c.metrics["map"], 1);
        assert_eq!(c.distinct_metrics(), 2);
    }

    #[test]
    fn plot_bundle_separates_cross_validation() {
        let mut rs = vec![
            rec("a", 2019, "map", 0.30, Category::Neural, Kind::Best),
            rec("b", 2021, "map", 0.32, Category::Neural, Kind::Best),
            rec("c", 2023, "map", 0.31, Category::Neural, Kind::Baseline),
        ];
        let mut cv = rec("q", 2025, "map", 0.609, Category::Neural, Kind::Best);
        cv.protocol = Protocol::CrossValidation;
        rs.push(cv);
        let refs = default_reference_lines(Dataset::Robust04, "map");
        assert_eq!(refs[0].value, 0.333);
        let bundle = emit_plot_series(&rs, Dataset::Robust04, "MAP", &refs);
        let cv_series: Vec<&PlotSeries> = bundle
            .series
            .iter()
            .filter(|s| s.protocol == Protocol::CrossValidation)
            .collect();
        assert_eq!(cv_series.len(), 1);
        assert_eq!(cv_series[0].points[0].paper_id, "q");
        let neural = &bundle.trend_lines[0];
        assert_eq!(neural.points_used, 2);
        assert!((neural.slope - 0.01).abs() < 1e-12);
        assert!(bundle
            .to_csv()
            .contains("robust04,map,neural,best,cross_validation,2025,0.609,q"));
        let svg = bundle.to_svg();
        assert!(
            svg.starts_with("<svg") && svg.contains("<polygon") && svg.contains("TREC 2004 best")
        );
        let dl20 = default_reference_lines(Dataset::Dl20, "ndcg@10");
        assert_eq!(
            dl20.iter().map(|r| r.value).collect::<Vec<_>>(),
            vec![0.8031, 0.7522]
        );
    }
}
