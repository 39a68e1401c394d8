//! CSV records and factorial summaries.
//!
//! Rows follow a fixed column order. Stage 0 (the starting model) has one
//! row with task `-` and empty task columns; every later stage has one row
//! per evaluated task. `alpha` is empty for methods that do not consolidate.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use super::config::Method;
use super::run::{mean, RunRecord};
use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "run_id,method,alpha,seed,stage,task_id,loss,acc,eps,gen_acc,lang_shift";

#[derive(Clone, Debug, PartialEq)]
pub struct CsvRow {
    pub run_id: String,
    pub method: String,
    pub alpha: Option<f64>,
    pub seed: u64,
    pub stage: usize,
    pub task_id: String,
    pub loss: Option<f64>,
    pub acc: Option<f64>,
    pub eps: Option<f64>,
    pub gen_acc: f64,
    pub lang_shift: f64,
}

pub fn record_rows(record: &RunRecord) -> Vec<CsvRow> {
    let mut rows = Vec::new();
    for s in record.stages() {
        let base = CsvRow {
            run_id: record.run_id.clone(),
            method: record.method.name().to_string(),
            alpha: record.alpha,
            seed: record.seed,
            stage: s.stage,
            task_id: "-".into(),
            loss: None,
            acc: None,
            eps: None,
            gen_acc: s.gen_acc,
            lang_shift: s.lang_shift,
        };
        if s.tasks.is_empty() {
            rows.push(base);
        } else {
            rows.extend(s.tasks.iter().map(|t| CsvRow {
                task_id: t.task_id.clone(),
                loss: Some(t.loss),
                acc: Some(t.acc),
                eps: Some(t.eps),
                ..base.clone()
            }));
        }
    }
    rows
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_rows<W: Write>(mut w: W, rows: &[CsvRow]) -> Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.run_id,
            r.method,
            opt(r.alpha),
            r.seed,
            r.stage,
            r.task_id,
            opt(r.loss),
            opt(r.acc),
            opt(r.eps),
            r.gen_acc,
            r.lang_shift
        )?;
    }
    Ok(())
}

/// Writes all records, in the given order, as one CSV.
pub fn write_csv<W: Write>(w: W, records: &[RunRecord]) -> Result<()> {
    let rows: Vec<CsvRow> = records.iter().flat_map(record_rows).collect();
    write_rows(w, &rows)
}

pub fn csv_string(records: &[RunRecord]) -> String {
    let mut buf = Vec::new();
    write_csv(&mut buf, records).expect("writing to memory");
    String::from_utf8(buf).expect("CSV is UTF-8")
}

/// Parses CSV produced by [`write_csv`]. An empty input yields no rows.
pub fn parse_csv<R: BufRead>(r: R) -> Result<Vec<CsvRow>> {
    let mut rows = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if i == 0 {
            if line.trim() != CSV_HEADER {
                return Err(Error::Config(format!("line 1: expected header `{CSV_HEADER}`")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 11 {
            return Err(Error::Config(format!("line {lineno}: expected 11 fields, found {}", f.len())));
        }
        let bad = |col: &str| Error::Config(format!("line {lineno}: bad `{col}` value"));
        let num = |s: &str, col: &str| s.parse::<f64>().map_err(|_| bad(col));
        let maybe = |s: &str, col: &str| if s.is_empty() { Ok(None) } else { num(s, col).map(Some) };
        rows.push(CsvRow {
            run_id: f[0].to_string(),
            method: f[1].to_string(),
            alpha: maybe(f[2], "alpha")?,
            seed: f[3].parse().map_err(|_| bad("seed"))?,
            stage: f[4].parse().map_err(|_| bad("stage"))?,
            task_id: f[5].to_string(),
            loss: maybe(f[6], "loss")?,
            acc: maybe(f[7], "acc")?,
            eps: maybe(f[8], "eps")?,
            gen_acc: num(f[9], "gen_acc")?,
            lang_shift: num(f[10], "lang_shift")?,
        });
    }
    Ok(rows)
}

/// Per-method means over runs, taken at each run's final stage.
#[derive(Clone, Debug, PartialEq)]
pub struct MethodSummary {
    pub method: String,
    pub runs: usize,
    pub task_acc: f64,
    pub gen_acc: f64,
    /// Mean of task and general accuracy.
    pub combined: f64,
    /// Mean slack over all but the last task.
    pub forgetting: f64,
    pub lang_shift: f64,
}

pub const SUMMARY_HEADER: &str = "method,runs,task_acc,gen_acc,combined,forgetting,lang_shift";

fn method_rank(name: &str) -> (usize, String) {
    const FACTORIAL: [Method; 4] = [Method::Vanilla, Method::Sac, Method::Uir, Method::SacUir];
    if let Some(i) = FACTORIAL.iter().position(|m| m.name() == name) {
        return (i, String::new());
    }
    match Method::ALL.iter().position(|m| m.name() == name) {
        Some(i) => (FACTORIAL.len() + i, String::new()),
        None => (usize::MAX, name.to_string()),
    }
}

/// Factorial-first summary: vanilla, sac, uir, sac+uir, then any other
/// methods present.
pub fn summarize(rows: &[CsvRow]) -> Vec<MethodSummary> {
    let mut runs: BTreeMap<&str, Vec<&CsvRow>> = BTreeMap::new();
    for r in rows {
        runs.entry(r.run_id.as_str()).or_default().push(r);
    }
    let mut per_method: BTreeMap<&str, Vec<[f64; 4]>> = BTreeMap::new();
    for rows in runs.values() {
        let last = rows.iter().map(|r| r.stage).max().expect("nonempty run");
        let fin: Vec<&&CsvRow> = rows.iter().filter(|r| r.stage == last).collect();
        let task_acc = mean(fin.iter().filter_map(|r| r.acc));
        let eps: Vec<f64> = fin.iter().filter_map(|r| r.eps).collect();
        let forgetting = mean(eps[..eps.len().saturating_sub(1)].iter().copied());
        per_method.entry(rows[0].method.as_str()).or_default().push([
            task_acc,
            fin[0].gen_acc,
            forgetting,
            fin[0].lang_shift,
        ]);
    }
    let mut out: Vec<MethodSummary> = per_method
        .into_iter()
        .map(|(method, v)| {
            let col = |j: usize| mean(v.iter().map(|x| x[j]));
            let (task_acc, gen_acc) = (col(0), col(1));
            MethodSummary {
                method: method.to_string(),
                runs: v.len(),
                task_acc,
                gen_acc,
                combined: 0.5 * (task_acc + gen_acc),
                forgetting: col(2),
                lang_shift: col(3),
            }
        })
        .collect();
    out.sort_by_key(|s| method_rank(&s.method));
    out
}

pub fn write_summary<W: Write>(mut w: W, summary: &[MethodSummary]) -> Result<()> {
    writeln!(w, "{SUMMARY_HEADER}")?;
    for s in summary {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            s.method, s.runs, s.task_acc, s.gen_acc, s.combined, s.forgetting, s.lang_shift
        )?;
    }
    Ok(())
}

/// Fixed-width table for terminals.
pub fn format_summary(summary: &[MethodSummary]) -> String {
    let mut s = format!(
        "{:<10} {:>4} {:>9} {:>9} {:>9} {:>10} {:>10}\n",
        "method", "runs", "task_acc", "gen_acc", "combined", "forgetting", "lang_shift"
    );
    for m in summary {
        s += &format!(
            "{:<10} {:>4} {:>9.4} {:>9.4} {:>9.4} {:>10.4} {:>10.4}\n",
            m.method, m.runs, m.task_acc, m.gen_acc, m.combined, m.forgetting, m.lang_shift
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::run::{StageRecord, TaskEval};

    fn record(id: &str, method: Method, accs: &[f64], gen: f64) -> RunRecord {
        let mut r = RunRecord::new(id, method, method.uses_alpha().then_some(0.2), 3);
        r.push_stage(StageRecord { stage: 0, tasks: vec![], gen_acc: 0.9, lang_shift: 0.0 }).unwrap();
        let tasks = accs
            .iter()
            .enumerate()
            .map(|(i, &acc)| TaskEval { task_id: format!("t{i}"), loss: 1.0 + i as f64, acc, eps: 0.1 * i as f64 })
            .collect();
        r.push_stage(StageRecord { stage: 1, tasks, gen_acc: gen, lang_shift: 0.5 }).unwrap();
        r
    }

    #[test]
    fn empty_input_is_header_only() {
        assert_eq!(csv_string(&[]), format!("{CSV_HEADER}\n"));
        assert!(parse_csv(&b""[..]).unwrap().is_empty());
        assert!(parse_csv(CSV_HEADER.as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn one_row_per_stage_task() {
        let r = record("a", Method::Sac, &[0.5, 0.25], 0.75);
        let text = csv_string(std::slice::from_ref(&r));
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[1], "a,sac,0.2,3,0,-,,,,0.9,0");
        assert_eq!(lines[2], "a,sac,0.2,3,1,t0,1,0.5,0,0.75,0.5");
        assert_eq!(parse_csv(text.as_bytes()).unwrap(), record_rows(&r));
        let v = csv_string(&[record("b", Method::Vanilla, &[0.5], 0.5)]);
        assert!(v.lines().nth(1).unwrap().starts_with("b,vanilla,,3,0,"));
    }

    #[test]
    fn summary_is_factorial_ordered() {
        let recs = [
            record("x", Method::SacUir, &[1.0, 0.5], 0.5),
            record("y", Method::Vanilla, &[0.0, 0.5], 0.25),
            record("z", Method::Vanilla, &[1.0, 1.0], 0.75),
            record("w", Method::Joint, &[1.0], 1.0),
        ];
        let rows: Vec<CsvRow> = recs.iter().flat_map(record_rows).collect();
        let s = summarize(&rows);
        let names: Vec<&str> = s.iter().map(|m| m.method.as_str()).collect();
        assert_eq!(names, ["vanilla", "sac+uir", "joint"]);
        assert_eq!(s[0].runs, 2);
        assert_eq!(s[0].task_acc, 0.625);
        assert_eq!(s[0].gen_acc, 0.5);
        assert_eq!(s[0].forgetting, 0.0);
        assert_eq!(s[1].combined, 0.625);
    }

    #[test]
    fn rejects_malformed_csv() {
        assert!(parse_csv(&b"nope\n"[..]).is_err());
        let text = format!("{CSV_HEADER}\na,b,c\n");
        assert!(parse_csv(text.as_bytes()).is_err());
    }
}
