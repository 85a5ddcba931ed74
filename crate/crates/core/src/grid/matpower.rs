//! Reader for the subset of the MATPOWER case format used by DC studies.
//!
//! Recognized assignments are `mpc.baseMVA`, `mpc.bus`, `mpc.gen`,
//! `mpc.branch` and `mpc.gencost`; everything else (bus names, `function`
//! headers, extra tables) is skipped. `%` starts a comment.

use super::{Branch, Bus, BusKind, Generator, GridCase};
use crate::error::{Error, Result};
use log::warn;
use std::collections::{HashMap, VecDeque};

// 1-based MATPOWER column indices.
const BUS_I: usize = 1;
const BUS_TYPE: usize = 2;
const PD: usize = 3;

const GEN_BUS: usize = 1;
const PG: usize = 2;
const GEN_STATUS: usize = 8;
const PMAX: usize = 9;
const PMIN: usize = 10;

const F_BUS: usize = 1;
const T_BUS: usize = 2;
const BR_X: usize = 4;
const RATE_A: usize = 6;
const BR_STATUS: usize = 11;

const COST_MODEL: usize = 1;
const NCOST: usize = 4;

/// A numeric row together with the source line it ended on.
#[derive(Debug, Clone)]
struct Row {
    line: usize,
    values: Vec<f64>,
}

impl Row {
    fn get(&self, col: usize, table: &str) -> Result<f64> {
        self.values
            .get(col - 1)
            .copied()
            .ok_or_else(|| Error::Parse {
                line: self.line,
                message: format!(
                    "{table} row has {} columns, need at least {col}",
                    self.values.len()
                ),
            })
    }

    fn get_or(&self, col: usize, default: f64) -> f64 {
        self.values.get(col - 1).copied().unwrap_or(default)
    }
}

#[derive(Debug, Default)]
struct RawCase {
    base_mva: Option<f64>,
    tables: HashMap<String, Vec<Row>>,
}

/// Parses case file text into a validated [`GridCase`].
pub fn parse_case(text: &str) -> Result<GridCase> {
    let raw = scan(text)?;
    build(raw, case_name(text))
}

fn case_name(text: &str) -> String {
    text.lines()
        .map(strip_comment)
        .find_map(|l| {
            let l = l.trim();
            l.strip_prefix("function")
                .and_then(|rest| rest.split('=').nth(1))
                .map(|n| n.trim().to_string())
        })
        .unwrap_or_else(|| "case".to_string())
}

fn strip_comment(line: &str) -> &str {
    match line.find('%') {
        Some(i) => &line[..i],
        None => line,
    }
}

fn parse_number(token: &str, line: usize) -> Result<f64> {
    match token {
        "Inf" | "inf" => Ok(f64::INFINITY),
        "-Inf" | "-inf" => Ok(f64::NEG_INFINITY),
        _ => token.parse::<f64>().map_err(|_| Error::Parse {
            line,
            message: format!("expected a number, found `{token}`"),
        }),
    }
}

/// Tokenizes the file into scalar assignments and matrix blocks.
fn scan(text: &str) -> Result<RawCase> {
    let mut raw = RawCase::default();
    // (table name, rows so far, partially filled row)
    let mut open: Option<(String, Vec<Row>, Vec<f64>)> = None;

    for (idx, full_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let mut rest = strip_comment(full_line).trim();

        if open.is_none() {
            if rest.is_empty() {
                continue;
            }
            let Some(stmt) = rest.strip_prefix("mpc.") else {
                continue;
            };
            let Some((name, value)) = stmt.split_once('=') else {
                continue;
            };
            let name = name.trim().to_string();
            let value = value.trim();
            if let Some(body) = value.strip_prefix('[') {
                open = Some((name, Vec::new(), Vec::new()));
                rest = body;
            } else {
                if name == "baseMVA" {
                    let v = value.trim_end_matches(';').trim();
                    raw.base_mva = Some(parse_number(v, line_no)?);
                }
                continue;
            }
        }

        let (_, rows, current) = open.as_mut().expect("matrix block is open");
        let mut closed = false;
        let mut queue: VecDeque<&str> = VecDeque::new();
        // Split on row separators and the closing bracket while keeping them.
        let mut start = 0;
        for (i, ch) in rest.char_indices() {
            if ch == ';' || ch == ']' {
                queue.push_back(&rest[start..i]);
                queue.push_back(&rest[i..i + 1]);
                start = i + 1;
            }
        }
        queue.push_back(&rest[start..]);

        while let Some(piece) = queue.pop_front() {
            match piece {
                ";" => {
                    if !current.is_empty() {
                        rows.push(Row {
                            line: line_no,
                            values: std::mem::take(current),
                        });
                    }
                }
                "]" => {
                    if !current.is_empty() {
                        rows.push(Row {
                            line: line_no,
                            values: std::mem::take(current),
                        });
                    }
                    closed = true;
                    break;
                }
                tokens => {
                    for tok in tokens
                        .split(|c: char| c.is_whitespace() || c == ',')
                        .filter(|t| !t.is_empty())
                    {
                        current.push(parse_number(tok, line_no)?);
                    }
                }
            }
        }
        // A newline also terminates a matrix row.
        if !closed && !current.is_empty() {
            rows.push(Row {
                line: line_no,
                values: std::mem::take(current),
            });
        }
        if closed {
            let (name, rows, _) = open.take().expect("matrix block is open");
            raw.tables.insert(name, rows);
        }
    }

    if let Some((name, _, _)) = open {
        return Err(Error::Parse {
            line: text.lines().count(),
            message: format!("unterminated matrix `mpc.{name}`"),
        });
    }
    Ok(raw)
}

fn table<'a>(raw: &'a RawCase, name: &str) -> Result<&'a [Row]> {
    raw.tables
        .get(name)
        .map(Vec::as_slice)
        .ok_or_else(|| Error::Validation(format!("missing table `mpc.{name}`")))
}

fn build(raw: RawCase, name: String) -> Result<GridCase> {
    let base_mva = raw
        .base_mva
        .ok_or_else(|| Error::Validation("missing `mpc.baseMVA`".into()))?;
    if !(base_mva > 0.0) {
        return Err(Error::Validation(format!(
            "baseMVA must be positive, got {base_mva}"
        )));
    }

    let bus_rows = table(&raw, "bus")?;
    let gen_rows = table(&raw, "gen")?;
    let branch_rows = table(&raw, "branch")?;
    let cost_rows = table(&raw, "gencost")?;

    let mut index_of: HashMap<i64, usize> = HashMap::new();
    let mut buses = Vec::with_capacity(bus_rows.len());
    let mut slack_rows = Vec::new();
    for row in bus_rows {
        let id = row.get(BUS_I, "bus")?;
        let kind_code = row.get(BUS_TYPE, "bus")? as i64;
        let demand = row.get(PD, "bus")?;
        if id.fract() != 0.0 || id <= 0.0 {
            return Err(Error::Parse {
                line: row.line,
                message: format!("bad bus id {id}"),
            });
        }
        let id = id as i64;
        let kind = match kind_code {
            1 => BusKind::Load,
            2 => BusKind::Generator,
            3 => {
                slack_rows.push(row.line);
                BusKind::Slack
            }
            4 => {
                return Err(Error::Validation(format!("bus {id} is isolated (type 4)")));
            }
            other => {
                return Err(Error::Parse {
                    line: row.line,
                    message: format!("unknown bus type {other}"),
                })
            }
        };
        if index_of.insert(id, buses.len()).is_some() {
            return Err(Error::Validation(format!("duplicate bus id {id}")));
        }
        buses.push(Bus {
            id: id as u32,
            kind,
            demand_mw: demand,
            injection_mw: -demand,
        });
    }
    match slack_rows.len() {
        1 => {}
        0 => return Err(Error::Validation("no slack (type 3) bus".into())),
        k => {
            return Err(Error::Validation(format!(
                "{k} slack buses (lines {slack_rows:?}); exactly one is required"
            )))
        }
    }

    let lookup = |id: f64, what: &str| -> Result<usize> {
        index_of
            .get(&(id as i64))
            .copied()
            .ok_or_else(|| Error::Validation(format!("{what} references unknown bus {id}")))
    };

    if cost_rows.len() < gen_rows.len() {
        return Err(Error::Validation(format!(
            "{} generators but only {} gencost rows",
            gen_rows.len(),
            cost_rows.len()
        )));
    }

    let mut generators = Vec::new();
    let mut dropped_terms = 0usize;
    for (row, cost) in gen_rows.iter().zip(cost_rows) {
        if row.get_or(GEN_STATUS, 1.0) <= 0.0 {
            continue;
        }
        let bus = lookup(row.get(GEN_BUS, "gen")?, "generator")?;
        let p_min = row.get(PMIN, "gen")?;
        let p_max = row.get(PMAX, "gen")?;
        if p_min > p_max {
            return Err(Error::Validation(format!(
                "generator at bus {} has Pmin {p_min} > Pmax {p_max}",
                buses[bus].id
            )));
        }
        let output = row.get(PG, "gen")?;
        generators.push(Generator {
            bus,
            output_mw: output,
            p_min_mw: p_min,
            p_max_mw: p_max,
            cost: linear_cost(cost, &mut dropped_terms)?,
        });
        buses[bus].injection_mw += output;
    }
    if dropped_terms > 0 {
        warn!("{name}: dropped nonlinear cost terms of {dropped_terms} generator(s)");
    }

    // A bus's role follows the generators that are actually connected to it.
    let mut has_gen = vec![false; buses.len()];
    for g in &generators {
        has_gen[g.bus] = true;
    }
    for (bus, &hosts) in buses.iter_mut().zip(&has_gen) {
        match (bus.kind, hosts) {
            (BusKind::Slack, false) => {
                return Err(Error::Validation(format!(
                    "slack bus {} hosts no in-service generator",
                    bus.id
                )))
            }
            (BusKind::Load, true) | (BusKind::Generator, false) => {
                bus.kind = if hosts {
                    BusKind::Generator
                } else {
                    BusKind::Load
                };
            }
            _ => {}
        }
    }

    let mut branches = Vec::new();
    for row in branch_rows {
        if row.get_or(BR_STATUS, 1.0) <= 0.0 {
            continue;
        }
        let from = lookup(row.get(F_BUS, "branch")?, "branch")?;
        let to = lookup(row.get(T_BUS, "branch")?, "branch")?;
        let x = row.get(BR_X, "branch")?;
        if !(x > 0.0) {
            return Err(Error::Validation(format!(
                "branch {}-{} (line {}) has non-positive reactance {x}",
                buses[from].id, buses[to].id, row.line
            )));
        }
        if from == to {
            return Err(Error::Validation(format!(
                "branch at line {} is a self-loop",
                row.line
            )));
        }
        let rating = row.get_or(RATE_A, 0.0);
        // DC flow is (theta_i - theta_j) / x, so a flow rating maps to an
        // angle-difference limit of rating * x in per unit.
        let angle_limit = (rating > 0.0).then(|| rating / base_mva * x);
        branches.push(Branch {
            from,
            to,
            reactance: x,
            rating_mva: rating,
            angle_limit,
        });
    }

    let case = GridCase {
        name,
        base_mva,
        buses,
        branches,
        generators,
    };
    check_connected(&case)?;
    Ok(case)
}

/// Linear coefficient of a polynomial (model 2) cost row, in $/MWh.
/// Linear coefficient of a polynomial cost; counts rows with higher-order terms.
fn linear_cost(row: &Row, dropped: &mut usize) -> Result<f64> {
    let model = row.get(COST_MODEL, "gencost")? as i64;
    if model != 2 {
        return Err(Error::Validation(format!(
            "gencost line {}: only polynomial (model 2) costs are supported",
            row.line
        )));
    }
    let n = row.get(NCOST, "gencost")? as usize;
    let coeffs: Vec<f64> = (0..n)
        .map(|k| row.get(NCOST + 1 + k, "gencost"))
        .collect::<Result<_>>()?;
    if n > 2 && coeffs[..n - 2].iter().any(|&c| c != 0.0) {
        *dropped += 1;
    }
    Ok(if n >= 2 { coeffs[n - 2] } else { 0.0 })
}

fn check_connected(case: &GridCase) -> Result<()> {
    let n = case.buses.len();
    let mut adj = vec![Vec::new(); n];
    for br in &case.branches {
        adj[br.from].push(br.to);
        adj[br.to].push(br.from);
    }
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(u) = stack.pop() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                stack.push(v);
            }
        }
    }
    match seen.iter().position(|s| !s) {
        None => Ok(()),
        Some(i) => Err(Error::Validation(format!(
            "network is disconnected: bus {} unreachable from bus {}",
            case.buses[i].id, case.buses[0].id
        ))),
    }
}
