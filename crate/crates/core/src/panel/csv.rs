//! Panel CSV format.
//!
//! One row per subject:
//!
//! ```text
//! cluster_id,subject_id,group,L,C,path,age,smoker
//! 7,7-1,0,0,inf,1@0;2@1.25;3@4.5,61,1
//! 7,7-2,1,0.5,3.75,1@0,58,0
//! ```
//!
//! * `group` is optional (column may be absent, cells may be empty).
//! * `L` empty means 0; `C` empty or `inf` means no censoring.
//! * `path` is a `;`-separated list of `state@time`, starting at `state@0`.
//! * Every other column is a numeric covariate, kept in header order.
//!
//! Rows of the same `cluster_id` form one cluster, in first-appearance order.
//! Times are written with the shortest representation that parses back to
//! the same `f64`, so write/read round-trips exactly.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::{Cluster, Panel, StateSpace, Subject, Trajectory, Transition};

const RESERVED: [&str; 6] = ["cluster_id", "subject_id", "group", "L", "C", "path"];

/// Reads a panel file. Without an explicit state space, `Q` is the largest
/// state label seen and the absorbing states are those entered but never left.
pub fn read_panel(path: impl AsRef<Path>, state_space: Option<StateSpace>) -> Result<Panel> {
    let file = std::fs::File::open(path)?;
    read_panel_from(file, state_space)
}

pub fn read_panel_from<R: Read>(reader: R, state_space: Option<StateSpace>) -> Result<Panel> {
    let mut rdr = ::csv::ReaderBuilder::new()
        .trim(::csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let required = |name: &str| {
        col(name).ok_or_else(|| Error::Parse {
            line: 1,
            msg: format!("missing column '{name}'"),
        })
    };
    let c_cluster = required("cluster_id")?;
    let c_subject = required("subject_id")?;
    let c_l = required("L")?;
    let c_c = required("C")?;
    let c_path = required("path")?;
    let c_group = col("group");
    let covariate_cols: Vec<usize> = (0..headers.len())
        .filter(|&i| !RESERVED.contains(&&headers[i]))
        .collect();
    let covariate_names: Vec<String> = covariate_cols.iter().map(|&i| headers[i].to_string()).collect();

    let mut clusters: Vec<Cluster> = Vec::new();
    let mut by_id: HashMap<String, usize> = HashMap::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let err = |msg: String| Error::Parse { line, msg };

        let l = parse_time(&row[c_l], 0.0).map_err(|m| err(format!("L: {m}")))?;
        let c = parse_time(&row[c_c], f64::INFINITY).map_err(|m| err(format!("C: {m}")))?;
        let mut trajectory = parse_path(&row[c_path]).map_err(|m| err(format!("path: {m}")))?;
        trajectory.truncation_time = l;
        trajectory.censor_time = c;

        let group = match c_group.map(|i| &row[i]) {
            None | Some("") => None,
            Some(g) => Some(
                g.parse::<u8>()
                    .map_err(|_| err(format!("group: '{g}' is not 0 or 1")))?,
            ),
        };
        let covariates = covariate_cols
            .iter()
            .map(|&i| {
                row[i]
                    .parse::<f64>()
                    .map_err(|_| err(format!("{}: '{}' is not a number", &headers[i], &row[i])))
            })
            .collect::<Result<Vec<f64>>>()?;

        let subject = Subject {
            id: row[c_subject].to_string(),
            trajectory,
            covariates,
            group,
        };
        let cid = &row[c_cluster];
        let idx = *by_id.entry(cid.to_string()).or_insert_with(|| {
            clusters.push(Cluster::new(cid, Vec::new()));
            clusters.len() - 1
        });
        clusters[idx].subjects.push(subject);
    }

    let state_space = match state_space {
        Some(s) => s,
        None => infer_state_space(&clusters)?,
    };
    let panel = Panel::new(state_space, covariate_names, clusters);
    panel.ensure_valid()?;
    Ok(panel)
}

pub fn write_panel(panel: &Panel, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_panel_to(panel, file)
}

pub fn write_panel_to<W: Write>(panel: &Panel, writer: W) -> Result<()> {
    let has_group = panel.subjects().any(|s| s.group.is_some());
    let mut wtr = ::csv::Writer::from_writer(writer);
    let mut header = vec!["cluster_id", "subject_id"];
    if has_group {
        header.push("group");
    }
    header.extend(["L", "C", "path"]);
    header.extend(panel.covariate_names.iter().map(String::as_str));
    wtr.write_record(&header)?;

    for cluster in &panel.clusters {
        for s in &cluster.subjects {
            let tr = &s.trajectory;
            let mut rec = vec![cluster.id.clone(), s.id.clone()];
            if has_group {
                rec.push(s.group.map(|g| g.to_string()).unwrap_or_default());
            }
            rec.push(fmt_time(tr.truncation_time));
            rec.push(fmt_time(tr.censor_time));
            rec.push(format_path(tr));
            rec.extend(s.covariates.iter().map(|v| v.to_string()));
            wtr.write_record(&rec)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

fn fmt_time(t: f64) -> String {
    if t == f64::INFINITY {
        "inf".into()
    } else {
        t.to_string()
    }
}

fn format_path(tr: &Trajectory) -> String {
    let mut out = format!("{}@0", tr.initial_state);
    for t in &tr.transitions {
        out.push_str(&format!(";{}@{}", t.to, t.time));
    }
    out
}

fn parse_time(s: &str, empty: f64) -> std::result::Result<f64, String> {
    if s.is_empty() {
        return Ok(empty);
    }
    let v: f64 = s.parse().map_err(|_| format!("'{s}' is not a number"))?;
    if v.is_nan() {
        return Err("NaN time".into());
    }
    Ok(v)
}

fn parse_path(s: &str) -> std::result::Result<Trajectory, String> {
    let mut parts = s.split(';').map(str::trim);
    let first = parts.next().filter(|p| !p.is_empty()).ok_or("empty path")?;
    let (state, time) = parse_step(first)?;
    if time != 0.0 {
        return Err(format!("path must start at time 0, got '{first}'"));
    }
    let mut tr = Trajectory::new(state);
    for p in parts {
        let (to, time) = parse_step(p)?;
        tr.transitions.push(Transition { time, to });
    }
    Ok(tr)
}

fn parse_step(s: &str) -> std::result::Result<(usize, f64), String> {
    let (state, time) = s
        .split_once('@')
        .ok_or_else(|| format!("'{s}' is not state@time"))?;
    let state = state
        .trim()
        .parse::<usize>()
        .map_err(|_| format!("bad state in '{s}'"))?;
    let time = time
        .trim()
        .parse::<f64>()
        .map_err(|_| format!("bad time in '{s}'"))?;
    Ok((state, time))
}

fn infer_state_space(clusters: &[Cluster]) -> Result<StateSpace> {
    let mut max_state = 0;
    let mut entered = std::collections::BTreeSet::new();
    let mut left = std::collections::BTreeSet::new();
    for s in clusters.iter().flat_map(|c| &c.subjects) {
        let tr = &s.trajectory;
        max_state = max_state.max(tr.initial_state);
        for (_, from, to) in tr.jumps() {
            max_state = max_state.max(to);
            entered.insert(to);
            left.insert(from);
        }
    }
    let absorbing = entered.difference(&left).copied().collect::<Vec<_>>();
    StateSpace::new(max_state.max(2), absorbing)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "\
cluster_id,subject_id,group,L,C,path,age
1,a,0,,inf,1@0;2@1.5;3@4,61
1,b,1,0.5,3.25,1@0,58.5
2,c,,0,,1@0;3@0.75,40
";

    #[test]
    fn parses_sample() {
        let p = read_panel_from(SAMPLE.as_bytes(), None).unwrap();
        assert_eq!(p.num_clusters(), 2);
        assert_eq!(p.cluster_sizes(), vec![2, 1]);
        assert_eq!(p.covariate_names, vec!["age"]);
        assert_eq!(p.num_states(), 3);
        assert!(p.state_space.is_absorbing(3));
        let b = &p.clusters[0].subjects[1];
        assert_eq!(b.group, Some(1));
        assert_eq!(b.trajectory.truncation_time, 0.5);
        assert_eq!(b.trajectory.censor_time, 3.25);
        let c = &p.clusters[1].subjects[0];
        assert_eq!(c.group, None);
        assert_eq!(c.trajectory.censor_time, f64::INFINITY);
        assert_eq!(c.covariates, vec![40.0]);
    }

    #[test]
    fn round_trip_is_exact() {
        let p = read_panel_from(SAMPLE.as_bytes(), None).unwrap();
        let mut buf = Vec::new();
        write_panel_to(&p, &mut buf).unwrap();
        let q = read_panel_from(buf.as_slice(), Some(p.state_space.clone())).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn bad_rows_report_line_numbers() {
        let bad = "cluster_id,subject_id,L,C,path\n1,a,0,inf,1@0;3@1\n1,b,0,2,1@0;x\n";
        let err = read_panel_from(bad.as_bytes(), None).unwrap_err();
        assert!(err.to_string().starts_with("line 3:"), "{err}");

        let not_zero = "cluster_id,subject_id,L,C,path\n1,a,0,inf,1@1;3@2\n";
        let err = read_panel_from(not_zero.as_bytes(), None).unwrap_err();
        assert!(err.to_string().contains("time 0"), "{err}");
    }

    #[test]
    fn invariant_violations_are_reported() {
        let bad = "cluster_id,subject_id,L,C,path\n1,a,0,inf,1@0;2@3;1@2\n";
        let err = read_panel_from(bad.as_bytes(), Some(StateSpace::illness_death())).unwrap_err();
        assert!(err.to_string().contains("non-monotone times"), "{err}");
    }
}
