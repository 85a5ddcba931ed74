//! Report serialization: full JSON, one CSV row per repetition, and a
//! summary CSV with one row per (case, eta).

use crate::error::{Error, Result};
use crate::validation::{ExperimentReport, Method, SweepPoint};
use std::io::{Read, Write};

/// Writes reports as a pretty-printed JSON array.
pub fn write_json<W: Write>(reports: &[ExperimentReport], out: W) -> Result<()> {
    serde_json::to_writer_pretty(out, reports)?;
    Ok(())
}

pub fn read_json<R: Read>(input: R) -> Result<Vec<ExperimentReport>> {
    Ok(serde_json::from_reader(input)?)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Numerical(format!("csv output failed: {other:?}")),
    }
}

/// One row per repetition: case, method, repetition, seed, cost, confidence, status.
pub fn write_records_csv<W: Write>(reports: &[ExperimentReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "case",
        "method",
        "repetition",
        "seed",
        "cost",
        "confidence",
        "status",
    ])
    .map_err(csv_err)?;
    for rep in reports {
        for r in &rep.records {
            w.write_record([
                rep.case.clone(),
                rep.method.to_string(),
                r.repetition.to_string(),
                r.seed.to_string(),
                opt(r.cost),
                opt(r.confidence),
                r.status.clone(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Summary in the shape `case, 1-eta, dc-opf cost, sa cost, sa-is cost,
/// sa conf, sa-is conf`, one row per distinct (case, eta) in first-seen order.
/// Missing methods leave their cells empty.
pub fn write_summary_csv<W: Write>(reports: &[ExperimentReport], out: W) -> Result<()> {
    let mut keys: Vec<(String, f64)> = Vec::new();
    for r in reports {
        if !keys.iter().any(|(c, e)| *c == r.case && *e == r.eta) {
            keys.push((r.case.clone(), r.eta));
        }
    }
    let find = |case: &str, eta: f64, m: Method| {
        reports
            .iter()
            .find(|r| r.case == case && r.eta == eta && r.method == m)
    };
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "case",
        "confidence_level",
        "dc_opf_cost",
        "sa_cost",
        "sa_is_cost",
        "sa_conf",
        "sa_is_conf",
    ])
    .map_err(csv_err)?;
    for (case, eta) in keys {
        let cost = |m| opt(find(&case, eta, m).and_then(|r| r.mean_cost));
        let conf = |m| opt(find(&case, eta, m).and_then(|r| r.mean_confidence));
        w.write_record([
            case.clone(),
            (1.0 - eta).to_string(),
            cost(Method::DcOpf),
            cost(Method::Sa),
            cost(Method::SaIs),
            conf(Method::Sa),
            conf(Method::SaIs),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// One-dimensional sweep rows: `b, feasibility_rate, n`.
pub fn write_sweep_csv<W: Write>(points: &[SweepPoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["b", "feasibility_rate", "n"])
        .map_err(csv_err)?;
    for p in points {
        w.write_record([
            p.b.to_string(),
            p.feasibility_rate.to_string(),
            p.n.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::margins::PiMode;
    use crate::validation::{ExperimentConfig, RepetitionRecord, ScenarioCount};

    fn report(method: Method, costs: &[Option<f64>]) -> ExperimentReport {
        let mut config = ExperimentConfig::new("case.m", method);
        config.repetitions = costs.len();
        config.scenarios = ScenarioCount::Fixed(10);
        config.pi_mode = PiMode::MonteCarlo { samples: 100 };
        let records: Vec<RepetitionRecord> = costs
            .iter()
            .enumerate()
            .map(|(k, c)| RepetitionRecord {
                repetition: k,
                seed: k as u64,
                cost: *c,
                confidence: c.map(|_| 0.5 + 0.1 * k as f64),
                confidence_std_error: c.map(|_| 0.01),
                status: if c.is_some() {
                    "optimal".into()
                } else {
                    "error: a, b".into()
                },
                setpoints_mw: vec![1.0 / 3.0],
            })
            .collect();
        let mut r = ExperimentReport {
            case: "toy".into(),
            eta: 0.05,
            method,
            scenarios: 10,
            repetitions: costs.len(),
            d: 1,
            pi: None,
            bound_m: Some(1.5),
            mean_cost: None,
            mean_confidence: None,
            failures: costs.iter().filter(|c| c.is_none()).count(),
            config,
            records,
        };
        r.mean_cost = r.recompute_mean_cost();
        r.mean_confidence = r.recompute_mean_confidence();
        r
    }

    #[test]
    fn json_round_trip() {
        let reports = vec![
            report(Method::Sa, &[Some(0.1 + 0.2), None]),
            report(Method::SaIs, &[Some(7.0)]),
        ];
        let mut buf = Vec::new();
        write_json(&reports, &mut buf).unwrap();
        assert_eq!(read_json(buf.as_slice()).unwrap(), reports);
    }

    #[test]
    fn record_rows_quote_commas() {
        let mut buf = Vec::new();
        write_records_csv(&[report(Method::Sa, &[Some(1.5), None])], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            "case,method,repetition,seed,cost,confidence,status"
        );
        assert_eq!(lines[1], "toy,sa,0,0,1.5,0.5,optimal");
        assert_eq!(lines[2], "toy,sa,1,1,,,\"error: a, b\"");
    }

    #[test]
    fn summary_layout() {
        let reports = vec![
            report(Method::DcOpf, &[Some(1.0)]),
            report(Method::Sa, &[Some(2.0), Some(4.0)]),
            report(Method::SaIs, &[Some(5.0)]),
        ];
        let mut buf = Vec::new();
        write_summary_csv(&reports, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[1], "toy,0.95,1,3,5,0.55,0.5");
    }
}
