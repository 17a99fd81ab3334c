//! Real-valued multiplication/division counts per received frame.
//!
//! Two figures are kept for each recurrent estimator: the unit formula plus
//! the ALS cost, and the published closed-form total. They do not agree and
//! neither is adjusted.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::rnn::CellKind;

/// Published bar values for the recurrent estimators at K_on = 52.
pub const FIGURE_BIRNN: [(CellKind, u64); 3] =
    [(CellKind::Gru, 2_083_008), (CellKind::Lstm, 2_821_064), (CellKind::Srnn, 740_104)];

/// Published counts of the non-recurrent estimators.
pub const REFERENCE_CONSTANTS: [(&str, u64); 5] = [
    ("2D-LMMSE", 3_686_656_161_000),
    ("ChannelNet", 2_595_149_600),
    ("TS-ChannelNet", 1_180_150_400),
    ("ALS-WI-DNCNN", 428_595_544),
    ("ALS-WI-SRCNN", 36_108_800),
];

/// Published relative savings, in percent.
pub const STATED_LSTM_OVER_GRU_PCT: f64 = 26.29;
pub const STATED_SRNN_BELOW_LSTM_PCT: f64 = 73.63;
pub const STATED_SRNN_BELOW_GRU_PCT: f64 = 64.22;

/// Published complexity ratios against ALS-Bi-GRU.
pub const STATED_SRCNN_RATIO: f64 = 10.0;
pub const STATED_DNCNN_RATIO: f64 = 115.0;
pub const STATED_LMMSE_RATIO: f64 = 1e6;

/// Relative gap above which a computed value is flagged against a published one.
pub const FLAG_TOLERANCE: f64 = 0.005;

/// Cost of one bidirectional unit with hidden size `q` and input size `k_in`.
pub fn birnn_unit_cost(kind: CellKind, q: u64, k_in: u64) -> u64 {
    match kind {
        CellKind::Srnn => 2 * q * k_in + 4 * q * q,
        CellKind::Lstm => 8 * q * k_in + 8 * q * q + 6 * q,
        CellKind::Gru => 6 * q * k_in + 6 * q * q + 6 * q,
    }
}

/// ALS estimation at `p` pilot symbols.
pub fn als_cost(k_on: u64, p: u64) -> u64 {
    4 * k_on * k_on * p + 2 * k_on * p + 2 * k_on
}

/// Coefficients `(a, b, c)` of the published total `a K_on^2 + b K_on + c`.
pub fn paper_total_coefficients(kind: CellKind) -> (u64, u64, u64) {
    match kind {
        CellKind::Gru => (16, 39_946, 6_336),
        CellKind::Lstm => (16, 53_258, 8_384),
        CellKind::Srnn => (16, 13_322, 4_096),
    }
}

/// Published closed-form total of ALS plus the bidirectional unit.
pub fn paper_total(kind: CellKind, k_on: u64) -> u64 {
    let (a, b, c) = paper_total_coefficients(kind);
    a * k_on * k_on + b * k_on + c
}

pub fn figure_value(kind: CellKind) -> u64 {
    FIGURE_BIRNN.iter().find(|(k, _)| *k == kind).map(|&(_, v)| v).expect("all kinds listed")
}

pub fn reference_constants() -> Vec<(&'static str, u64)> {
    REFERENCE_CONSTANTS.to_vec()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ComplexityParams {
    pub hidden: u64,
    pub k_on: u64,
    pub pilots: u64,
    pub frame_len: u64,
}

impl Default for ComplexityParams {
    fn default() -> Self {
        Self { hidden: 32, k_on: 52, pilots: 3, frame_len: 100 }
    }
}

impl ComplexityParams {
    pub fn k_in(&self) -> u64 {
        2 * self.k_on * self.frame_len
    }

    fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.k_on == 0 || self.pilots == 0 || self.frame_len == 0 {
            return Err(Error::Config("complexity parameters must be positive".into()));
        }
        Ok(())
    }
}

/// Where a count comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CostSource {
    /// Unit formula plus ALS cost at the report parameters.
    Composed,
    /// Published closed form in K_on.
    ClosedForm,
    /// Published bar value (fixed, K_on = 52).
    Figure,
    /// Published constant of a non-recurrent estimator.
    Published,
}

impl CostSource {
    pub fn name(self) -> &'static str {
        match self {
            CostSource::Composed => "composed",
            CostSource::ClosedForm => "closed_form",
            CostSource::Figure => "figure",
            CostSource::Published => "published",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Term {
    pub label: String,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EstimatorCost {
    pub name: String,
    pub source: CostSource,
    pub count: u64,
    /// Sums to `count`.
    pub terms: Vec<Term>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ratio {
    pub label: String,
    pub value: f64,
    pub stated: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComplexityReport {
    pub params: ComplexityParams,
    pub estimators: Vec<EstimatorCost>,
    pub ratios: Vec<Ratio>,
    pub flags: Vec<String>,
}

fn term(label: impl Into<String>, count: u64) -> Term {
    Term { label: label.into(), count }
}

fn rel_gap(value: f64, stated: f64) -> f64 {
    (value - stated).abs() / stated.abs()
}

fn birnn_name(kind: CellKind) -> &'static str {
    kind.label()
}

/// Full comparison at `params`.
pub fn report(params: ComplexityParams) -> Result<ComplexityReport> {
    params.validate()?;
    let ComplexityParams { hidden: q, k_on, pilots: p, .. } = params;
    let k_in = params.k_in();
    let mut estimators = Vec::new();
    let mut flags = Vec::new();
    for kind in [CellKind::Gru, CellKind::Lstm, CellKind::Srnn] {
        let name = birnn_name(kind);
        let unit = birnn_unit_cost(kind, q, k_in);
        let als = als_cost(k_on, p);
        estimators.push(EstimatorCost {
            name: name.into(),
            source: CostSource::Composed,
            count: unit + als,
            terms: vec![term(format!("{} unit", kind.name()), unit), term("ALS", als)],
        });
        let (a, b, c) = paper_total_coefficients(kind);
        let closed = paper_total(kind, k_on);
        estimators.push(EstimatorCost {
            name: name.into(),
            source: CostSource::ClosedForm,
            count: closed,
            terms: vec![
                term(format!("{a} K_on^2"), a * k_on * k_on),
                term(format!("{b} K_on"), b * k_on),
                term("constant", c),
            ],
        });
        if closed != unit + als {
            flags.push(format!(
                "{name}: closed form {closed} differs from unit + ALS {} by {}",
                unit + als,
                closed as i64 - (unit + als) as i64
            ));
        }
        let fig = figure_value(kind);
        estimators.push(EstimatorCost {
            name: name.into(),
            source: CostSource::Figure,
            count: fig,
            terms: vec![term("figure", fig)],
        });
        if k_on == 52 && closed != fig {
            flags.push(format!(
                "{name}: closed form {closed} differs from figure value {fig} ({:+.2}%)",
                100.0 * (closed as f64 - fig as f64) / fig as f64
            ));
        }
    }
    for (name, count) in reference_constants() {
        estimators.push(EstimatorCost {
            name: name.into(),
            source: CostSource::Published,
            count,
            terms: vec![term("published", count)],
        });
    }

    let gru_fig = figure_value(CellKind::Gru) as f64;
    let mut ratios = Vec::new();
    let mut ratio = |label: String, value: f64, stated: f64, order_only: bool| {
        let flagged = if order_only { value < stated } else { rel_gap(value, stated) > FLAG_TOLERANCE };
        if flagged {
            flags.push(format!("{label}: computed {value:.4} vs stated {stated}"));
        }
        ratios.push(Ratio { label, value, stated, flagged });
    };
    let constant = |n: &str| REFERENCE_CONSTANTS.iter().find(|(m, _)| *m == n).expect("listed").1 as f64;
    ratio("ALS-WI-SRCNN / ALS-Bi-GRU (figure)".into(), constant("ALS-WI-SRCNN") / gru_fig, STATED_SRCNN_RATIO, false);
    ratio("ALS-WI-DNCNN / ALS-Bi-GRU (figure)".into(), constant("ALS-WI-DNCNN") / gru_fig, STATED_DNCNN_RATIO, false);
    ratio("2D-LMMSE / ALS-Bi-GRU (figure)".into(), constant("2D-LMMSE") / gru_fig, STATED_LMMSE_RATIO, true);

    let lstm = paper_total(CellKind::Lstm, k_on) as f64;
    let srnn = paper_total(CellKind::Srnn, k_on) as f64;
    let grus = [("closed form", paper_total(CellKind::Gru, k_on) as f64), ("figure", gru_fig)];
    for (tag, gru) in grus {
        ratio(
            format!("ALS-Bi-LSTM over ALS-Bi-GRU ({tag}) [%]"),
            100.0 * (lstm - gru) / gru,
            STATED_LSTM_OVER_GRU_PCT,
            false,
        );
    }
    ratio("ALS-Bi-SRNN below ALS-Bi-LSTM [%]".into(), 100.0 * (1.0 - srnn / lstm), STATED_SRNN_BELOW_LSTM_PCT, false);
    for (tag, gru) in grus {
        ratio(
            format!("ALS-Bi-SRNN below ALS-Bi-GRU ({tag}) [%]"),
            100.0 * (1.0 - srnn / gru),
            STATED_SRNN_BELOW_GRU_PCT,
            false,
        );
    }
    Ok(ComplexityReport { params, estimators, ratios, flags })
}

impl ComplexityReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "estimator,source,count")?;
        for e in &self.estimators {
            writeln!(w, "{},{},{}", e.name, e.source.name(), e.count)?;
        }
        Ok(())
    }

    /// Human-readable table.
    pub fn write_table<W: Write>(&self, mut w: W) -> Result<()> {
        let p = &self.params;
        writeln!(w, "Q = {}, K_on = {}, P = {}, I = {}, K_in = {}", p.hidden, p.k_on, p.pilots, p.frame_len, p.k_in())?;
        writeln!(w, "{:<16} {:<12} {:>20}  breakdown", "estimator", "source", "mult/div")?;
        for e in &self.estimators {
            let parts: Vec<String> = e.terms.iter().map(|t| format!("{}={}", t.label, t.count)).collect();
            writeln!(w, "{:<16} {:<12} {:>20}  {}", e.name, e.source.name(), e.count, parts.join(" + "))?;
        }
        writeln!(w)?;
        for r in &self.ratios {
            let mark = if r.flagged { "FLAG" } else { "ok" };
            writeln!(w, "{:<44} {:>14.4} (stated {}) {mark}", r.label, r.value, r.stated)?;
        }
        for f in &self.flags {
            writeln!(w, "flag: {f}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn unit_costs() {
        assert_eq!(birnn_unit_cost(CellKind::Gru, 32, 10_400), 2_003_136);
        assert_eq!(birnn_unit_cost(CellKind::Lstm, 32, 10_400), 2_670_784);
        assert_eq!(birnn_unit_cost(CellKind::Srnn, 1, 1), 6);
    }

    #[test]
    fn als_examples() {
        assert_eq!(als_cost(52, 3), 32_864);
        assert_eq!(als_cost(1, 1), 8);
    }

    #[test]
    fn closed_forms_at_52() {
        assert_eq!(paper_total(CellKind::Lstm, 52), 2_821_064);
        assert_eq!(paper_total(CellKind::Srnn, 52), 740_104);
        assert_eq!(paper_total(CellKind::Gru, 52), 2_126_792);
    }

    #[test]
    fn report_breakdowns_sum_and_flags() {
        let r = report(ComplexityParams::default()).unwrap();
        for e in &r.estimators {
            assert_eq!(e.terms.iter().map(|t| t.count).sum::<u64>(), e.count, "{}", e.name);
            assert!(e.count > 0);
        }
        assert!(r.flags.iter().any(|f| f.contains("ALS-Bi-GRU") && f.contains("2083008")));
        assert!(!r.flags.iter().any(|f| f.contains("ALS-Bi-LSTM: closed form 2821064 differs from figure")));
        let v = |s: &str| r.ratios.iter().find(|x| x.label.starts_with(s)).unwrap();
        assert!((v("ALS-WI-SRCNN").value - 17.335).abs() < 1e-3);
        assert!((v("ALS-WI-DNCNN").value - 205.758).abs() < 1e-3);
        assert!(v("2D-LMMSE").value > 1.76e6 && !v("2D-LMMSE").flagged);
        let mut csv = Vec::new();
        r.write_csv(&mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 1 + 9 + 5);
    }

    #[test]
    fn half_subcarriers_rescales() {
        let r = report(ComplexityParams { k_on: 26, ..ComplexityParams::default() }).unwrap();
        let composed = r.estimators.iter().find(|e| e.source == CostSource::Composed).unwrap();
        assert_eq!(composed.count, birnn_unit_cost(CellKind::Gru, 32, 5200) + als_cost(26, 3));
        assert!(report(ComplexityParams { hidden: 0, ..ComplexityParams::default() }).is_err());
    }

    proptest! {
        #[test]
        fn unit_cost_ordering(q in 1u64..512, k in 1u64..100_000) {
            let (s, g, l) = (
                birnn_unit_cost(CellKind::Srnn, q, k),
                birnn_unit_cost(CellKind::Gru, q, k),
                birnn_unit_cost(CellKind::Lstm, q, k),
            );
            prop_assert!(l > g && g > s);
        }

        #[test]
        fn als_linear_in_pilots(k in 1u64..1000, p in 1u64..50) {
            prop_assert_eq!(als_cost(k, 2 * p) - als_cost(k, p), 4 * k * k * p + 2 * k * p);
        }
    }
}
