//! CSV datasets: one row per subject.
//!
//! Columns: `id`, `arm`, optional `stratum`, then per endpoint either
//! `<id>_time` and `<id>_event` (time-to-event) or `<id>` (count or
//! continuous), and an optional `followup`. Extra columns are ignored.

use std::collections::HashSet;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rotwin_core::{Arm, EndpointKind, EndpointSpec, Outcome, Subject};

use crate::error::{CliError, Result};

const DEFAULT_STRATUM: &str = "all";

enum Columns {
    Tte { time: usize, event: usize },
    Single(usize),
}

fn parse_arm(s: &str) -> Option<Arm> {
    match s.trim().to_ascii_lowercase().as_str() {
        "treatment" | "t" | "1" => Some(Arm::Treatment),
        "control" | "c" | "0" => Some(Arm::Control),
        _ => None,
    }
}

pub fn arm_label(arm: Arm) -> &'static str {
    match arm {
        Arm::Treatment => "treatment",
        Arm::Control => "control",
    }
}

pub fn parse_dataset(path: &Path, specs: &[EndpointSpec]) -> Result<Vec<Subject>> {
    let file = File::open(path).map_err(|source| CliError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    read_dataset(file, &path.display().to_string(), specs)
}

/// Parses a dataset from any reader; `name` labels diagnostics.
pub fn read_dataset<R: Read>(reader: R, name: &str, specs: &[EndpointSpec]) -> Result<Vec<Subject>> {
    let data_err = |message: String| CliError::Data {
        file: name.to_string(),
        message,
    };
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| data_err(format!("cannot read header: {e}")))?
        .clone();

    let mut names = HashSet::new();
    for h in header.iter() {
        if !names.insert(h) {
            return Err(data_err(format!("duplicate column '{h}' in header")));
        }
    }
    let find = |col: &str| header.iter().position(|h| h == col);
    let require = |col: &str| find(col).ok_or_else(|| data_err(format!("missing column '{col}'")));

    let id_col = require("id")?;
    let arm_col = require("arm")?;
    let stratum_col = find("stratum");
    let followup_col = find("followup");
    let mut columns = Vec::with_capacity(specs.len());
    for s in specs {
        columns.push(match s.kind {
            EndpointKind::TimeToEvent => Columns::Tte {
                time: require(&format!("{}_time", s.id))?,
                event: require(&format!("{}_event", s.id))?,
            },
            _ => Columns::Single(require(&s.id)?),
        });
    }

    let mut subjects = Vec::new();
    let mut ids = HashSet::new();
    for record in rdr.records() {
        let record = record.map_err(|e| data_err(e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        let cell_err = |col: usize, message: String| CliError::Cell {
            file: name.to_string(),
            line,
            column: header.get(col).unwrap_or("?").to_string(),
            message,
        };
        let get = |col: usize| -> Result<&str> {
            match record.get(col) {
                Some(v) if !v.is_empty() => Ok(v),
                _ => Err(cell_err(col, "missing value".into())),
            }
        };
        let number = |col: usize| -> Result<f64> {
            let v = get(col)?;
            v.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| cell_err(col, format!("'{v}' is not a finite number")))
        };

        let id = get(id_col)?.to_string();
        if !ids.insert(id.clone()) {
            return Err(cell_err(id_col, format!("duplicate subject id '{id}'")));
        }
        let arm_text = get(arm_col)?;
        let arm = parse_arm(arm_text).ok_or_else(|| {
            cell_err(arm_col, format!("unknown arm '{arm_text}' (expected treatment/control, t/c or 1/0)"))
        })?;
        let stratum = match stratum_col {
            Some(c) => get(c)?.to_string(),
            None => DEFAULT_STRATUM.to_string(),
        };
        let followup = match followup_col.map(|c| (c, record.get(c).unwrap_or(""))) {
            None | Some((_, "")) => None,
            Some((c, _)) => {
                let f = number(c)?;
                if f < 0.0 {
                    return Err(cell_err(c, format!("negative follow-up {f}")));
                }
                Some(f)
            }
        };

        let mut outcomes = Vec::with_capacity(specs.len());
        for (spec, cols) in specs.iter().zip(&columns) {
            let o = match (spec.kind, cols) {
                (EndpointKind::TimeToEvent, &Columns::Tte { time, event }) => {
                    let t = number(time)?;
                    if t < 0.0 {
                        return Err(cell_err(time, format!("negative time {t}")));
                    }
                    if let Some(f) = followup {
                        if t > f {
                            return Err(cell_err(time, format!("time {t} exceeds follow-up {f}")));
                        }
                    }
                    let e = match get(event)? {
                        "1" => true,
                        "0" => false,
                        other => return Err(cell_err(event, format!("event flag '{other}' is not 0 or 1"))),
                    };
                    Outcome::TimeToEvent { time: t, event: e }
                }
                (EndpointKind::EventCount, &Columns::Single(c)) => {
                    let v = get(c)?;
                    let count = v
                        .parse::<u32>()
                        .map_err(|_| cell_err(c, format!("'{v}' is not a nonnegative integer count")))?;
                    Outcome::EventCount { count }
                }
                (EndpointKind::Continuous, &Columns::Single(c)) => Outcome::Continuous { value: number(c)? },
                _ => unreachable!("column layout follows the endpoint kind"),
            };
            outcomes.push(o);
        }
        subjects.push(Subject {
            id,
            arm,
            stratum,
            outcomes,
            followup,
        });
    }

    for arm in [Arm::Treatment, Arm::Control] {
        if !subjects.iter().any(|s| s.arm == arm) {
            return Err(data_err(format!("no subjects in the {} arm", arm_label(arm))));
        }
    }
    Ok(subjects)
}

/// Writes subjects in the layout [`read_dataset`] accepts. Floats use the
/// shortest representation that parses back to the same value.
pub fn write_dataset<W: Write>(writer: W, subjects: &[Subject], specs: &[EndpointSpec]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["id".to_string(), "arm".into(), "stratum".into()];
    for s in specs {
        match s.kind {
            EndpointKind::TimeToEvent => {
                header.push(format!("{}_time", s.id));
                header.push(format!("{}_event", s.id));
            }
            _ => header.push(s.id.clone()),
        }
    }
    header.push("followup".into());
    w.write_record(&header)?;

    for subj in subjects {
        let mut row = vec![subj.id.clone(), arm_label(subj.arm).into(), subj.stratum.clone()];
        for o in &subj.outcomes {
            match *o {
                Outcome::TimeToEvent { time, event } => {
                    row.push(time.to_string());
                    row.push(if event { "1" } else { "0" }.into());
                }
                Outcome::EventCount { count } => row.push(count.to_string()),
                Outcome::Continuous { value } => row.push(value.to_string()),
            }
        }
        row.push(subj.followup.map(|f| f.to_string()).unwrap_or_default());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn specs() -> Vec<EndpointSpec> {
        vec![EndpointSpec::survival("death"), EndpointSpec::survival("mi")]
    }

    const FIXTURE: &str = "id,arm,stratum,death_time,death_event,mi_time,mi_event,followup
1,treatment,a,100,1,50,1,400
2,treatment,b,400,0,200,1,400
3,control,a,80,1,80,0,300
4,control,b,300,0,10,1,300
";

    #[test]
    fn parses_fixture() {
        let s = read_dataset(FIXTURE.as_bytes(), "f.csv", &specs()).unwrap();
        assert_eq!(s.len(), 4);
        assert_eq!(s.iter().filter(|x| x.arm == Arm::Treatment).count(), 2);
        assert_eq!(s[0].outcomes[0], Outcome::TimeToEvent { time: 100.0, event: true });
        assert_eq!(s[2].followup, Some(300.0));
        assert_eq!(s[3].stratum, "b");
    }

    #[test]
    fn negative_time_names_line_and_column() {
        let bad = FIXTURE.replace("3,control,a,80", "3,control,a,-1");
        let e = read_dataset(bad.as_bytes(), "f.csv", &specs()).unwrap_err();
        assert!(matches!(e, CliError::Cell { line: 4, ref column, .. } if column == "death_time"), "{e}");
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn malformed_cells() {
        let cases = [
            (FIXTURE.replace("2,treatment", "2,placebo"), "arm"),
            (FIXTURE.replace("400,0,200,1", "400,2,200,1"), "death_event"),
            (FIXTURE.replace("1,treatment,a,100", "1,treatment,a,x"), "death_time"),
            (FIXTURE.replace("4,control,b,300", "4,control,b,301"), "death_time"),
            (FIXTURE.replace("4,control", "1,control"), "id"),
        ];
        for (text, col) in cases {
            match read_dataset(text.as_bytes(), "f.csv", &specs()) {
                Err(CliError::Cell { column, .. }) => assert_eq!(column, col),
                other => panic!("expected cell error in {col}, got {other:?}"),
            }
        }
        let missing = FIXTURE.replace("mi_event", "mi_evt");
        let e = read_dataset(missing.as_bytes(), "f.csv", &specs()).unwrap_err().to_string();
        assert!(e.contains("missing column 'mi_event'"), "{e}");
        let one_arm = "id,arm,death_time,death_event,mi_time,mi_event\n1,t,1,1,1,1\n";
        assert!(read_dataset(one_arm.as_bytes(), "f.csv", &specs()).is_err());
    }

    #[test]
    fn round_trip() {
        let specs = vec![
            EndpointSpec::survival("d"),
            EndpointSpec::new("n", EndpointKind::EventCount, rotwin_core::Direction::SmallerWins),
            EndpointSpec::new("q", EndpointKind::Continuous, rotwin_core::Direction::LargerWins),
        ];
        let subjects = vec![
            Subject {
                id: "a".into(),
                arm: Arm::Treatment,
                stratum: "s1".into(),
                outcomes: vec![
                    Outcome::TimeToEvent { time: 0.1 + 0.2, event: true },
                    Outcome::EventCount { count: 3 },
                    Outcome::Continuous { value: -1.0 / 3.0 },
                ],
                followup: Some(1000.0 / 7.0),
            },
            Subject {
                id: "b".into(),
                arm: Arm::Control,
                stratum: "s1".into(),
                outcomes: vec![
                    Outcome::TimeToEvent { time: 5e-7, event: false },
                    Outcome::EventCount { count: 0 },
                    Outcome::Continuous { value: 1e300 },
                ],
                followup: None,
            },
        ];
        let mut buf = Vec::new();
        write_dataset(&mut buf, &subjects, &specs).unwrap();
        let back = read_dataset(buf.as_slice(), "rt", &specs).unwrap();
        assert_eq!(back, subjects);
    }
}
