//! CSV files: comma separated, `.` decimals, LF endings, no quoting.
//!
//! Floats are written with Rust's shortest round-trip formatting, so reading a
//! file back recovers every value bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::integrator::Trajectory;
use crate::piecewise::{AssimilationEvent, MeasurementSeries, Observation};
use crate::runoff::LandUseParcel;
use crate::twin::ErrorSeries;

/// Writes `contents` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("{} is not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, 1, e.to_string()))
}

fn csv_error(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Csv {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn check_header(path: &Path, rdr: &mut csv::Reader<fs::File>, expected: &[&str]) -> Result<()> {
    let headers = rdr
        .headers()
        .map_err(|e| csv_error(path, 1, e.to_string()))?
        .clone();
    let got: Vec<&str> = headers.iter().collect();
    if got.len() == 1 && got[0].is_empty() {
        return Err(csv_error(path, 1, format!("missing header, expected `{}`", expected.join(","))));
    }
    for (i, want) in expected.iter().enumerate() {
        match got.get(i) {
            Some(h) if h == want => {}
            Some(h) => {
                return Err(csv_error(path, 1, format!("column {} is `{h}`, expected `{want}`", i + 1)))
            }
            None => return Err(csv_error(path, 1, format!("missing column `{want}`"))),
        }
    }
    if got.len() > expected.len() {
        return Err(csv_error(path, 1, format!("unexpected column `{}`", got[expected.len()])));
    }
    Ok(())
}

/// Data rows with their 1-based line numbers.
fn records(path: &Path, rdr: &mut csv::Reader<fs::File>) -> Result<Vec<(u64, csv::StringRecord)>> {
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            csv_error(path, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        out.push((line, rec));
    }
    Ok(out)
}

fn field<'r>(path: &Path, line: u64, rec: &'r csv::StringRecord, i: usize, name: &str) -> Result<&'r str> {
    rec.get(i)
        .ok_or_else(|| csv_error(path, line, format!("missing `{name}` value")))
}

fn parse_f64(path: &Path, line: u64, rec: &csv::StringRecord, i: usize, name: &str) -> Result<f64> {
    let raw = field(path, line, rec, i, name)?;
    let v: f64 = raw
        .parse()
        .map_err(|_| csv_error(path, line, format!("`{name}` is not a number: `{raw}`")))?;
    if !v.is_finite() {
        return Err(csv_error(path, line, format!("`{name}` is not finite: `{raw}`")));
    }
    Ok(v)
}

fn parse_opt_f64(path: &Path, line: u64, rec: &csv::StringRecord, i: usize, name: &str) -> Result<Option<f64>> {
    if field(path, line, rec, i, name)?.is_empty() {
        Ok(None)
    } else {
        parse_f64(path, line, rec, i, name).map(Some)
    }
}

pub fn trajectory_csv(tr: &Trajectory) -> String {
    let mut s = String::from("t");
    for i in 0..tr.dimension() {
        write!(s, ",x{i}").unwrap();
    }
    s.push('\n');
    for (t, state) in tr.times().iter().zip(tr.states()) {
        write!(s, "{t}").unwrap();
        for v in state {
            write!(s, ",{v}").unwrap();
        }
        s.push('\n');
    }
    s
}

/// Header `t,x0,x1,...` and one row per sample.
pub fn write_trajectory_csv(tr: &Trajectory, path: &Path) -> Result<()> {
    write_atomic(path, &trajectory_csv(tr))
}

/// Reads a file written by [`write_trajectory_csv`] into times and states.
pub fn read_trajectory_csv(path: &Path) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let mut rdr = reader(path)?;
    let headers = rdr
        .headers()
        .map_err(|e| csv_error(path, 1, e.to_string()))?
        .clone();
    if headers.get(0) != Some("t") {
        return Err(csv_error(path, 1, "first column must be `t`"));
    }
    let names: Vec<String> = headers.iter().map(str::to_string).collect();
    let mut times = Vec::new();
    let mut states = Vec::new();
    for (line, rec) in records(path, &mut rdr)? {
        times.push(parse_f64(path, line, &rec, 0, "t")?);
        let state = (1..names.len())
            .map(|i| parse_f64(path, line, &rec, i, &names[i]))
            .collect::<Result<Vec<_>>>()?;
        states.push(state);
    }
    Ok((times, states))
}

const MEASUREMENT_COLUMNS: [&str; 4] = ["t", "component", "value", "variance"];

/// Long-format measurements, `t,component,value,variance`. Rows sharing a time
/// must be adjacent; times must not decrease; a (time, component) pair may not repeat.
pub fn load_measurements_csv(path: &Path) -> Result<MeasurementSeries> {
    let mut rdr = reader(path)?;
    check_header(path, &mut rdr, &MEASUREMENT_COLUMNS)?;

    let mut series = MeasurementSeries::new();
    let mut pending: Option<(f64, Vec<Observation>)> = None;
    let flush = |series: &mut MeasurementSeries, group: (f64, Vec<Observation>), line: u64| {
        series
            .push(group.0, group.1)
            .map_err(|e| csv_error(path, line, e.to_string()))
    };

    let mut last_line = 1;
    for (line, rec) in records(path, &mut rdr)? {
        last_line = line;
        let t = parse_f64(path, line, &rec, 0, "t")?;
        let raw_c = field(path, line, &rec, 1, "component")?;
        let component: usize = raw_c
            .parse()
            .map_err(|_| csv_error(path, line, format!("`component` is not an index: `{raw_c}`")))?;
        let value = parse_f64(path, line, &rec, 2, "value")?;
        let variance = parse_f64(path, line, &rec, 3, "variance")?;
        if variance < 0.0 {
            return Err(csv_error(path, line, format!("negative variance {variance}")));
        }
        let obs = Observation {
            component,
            value,
            variance,
        };

        match pending.as_mut() {
            Some((pt, group)) if *pt == t => {
                if group.iter().any(|o| o.component == component) {
                    return Err(csv_error(
                        path,
                        line,
                        format!("duplicated timestamp {t} for component {component}"),
                    ));
                }
                group.push(obs);
            }
            Some((pt, _)) if t < *pt => {
                return Err(csv_error(path, line, format!("time {t} is earlier than {pt}")));
            }
            _ => {
                if let Some(group) = pending.take() {
                    flush(&mut series, group, line)?;
                }
                pending = Some((t, vec![obs]));
            }
        }
    }
    if let Some(group) = pending.take() {
        flush(&mut series, group, last_line)?;
    }
    Ok(series)
}

pub fn measurements_csv(series: &MeasurementSeries) -> String {
    let mut s = MEASUREMENT_COLUMNS.join(",");
    s.push('\n');
    for (t, obs) in series.iter() {
        for o in obs {
            writeln!(s, "{t},{},{},{}", o.component, o.value, o.variance).unwrap();
        }
    }
    s
}

pub fn events_csv(events: &[AssimilationEvent]) -> String {
    let mut s = String::from("t,component,model_value,obs_value,fused_value,gain\n");
    for e in events {
        writeln!(
            s,
            "{},{},{},{},{},{}",
            e.time, e.component, e.model_value, e.obs_value, e.fused_value, e.gain
        )
        .unwrap();
    }
    s
}

/// `t,err_noisy,err_da` on the shared time grid of both series.
pub fn errors_csv(noisy: &ErrorSeries, da: &ErrorSeries) -> Result<String> {
    if noisy.times != da.times {
        return Err(Error::invalid("error series are on different time grids"));
    }
    let mut s = String::from("t,err_noisy,err_da\n");
    for ((t, a), b) in noisy.times.iter().zip(&noisy.errors).zip(&da.errors) {
        writeln!(s, "{t},{a},{b}").unwrap();
    }
    Ok(s)
}

/// Parcels file with columns `label,area,cn`.
pub fn load_parcels_csv(path: &Path) -> Result<Vec<LandUseParcel>> {
    let mut rdr = reader(path)?;
    check_header(path, &mut rdr, &["label", "area", "cn"])?;
    records(path, &mut rdr)?
        .into_iter()
        .map(|(line, rec)| {
            let label = field(path, line, &rec, 0, "label")?;
            let area = parse_f64(path, line, &rec, 1, "area")?;
            let cn = parse_f64(path, line, &rec, 2, "cn")?;
            LandUseParcel::new(label, area, cn).map_err(|e| csv_error(path, line, e.to_string()))
        })
        .collect()
}

pub fn parcels_csv(parcels: &[LandUseParcel]) -> String {
    let mut s = String::from("label,area,cn\n");
    for p in parcels {
        writeln!(s, "{},{},{}", p.label, p.area, p.cn).unwrap();
    }
    s
}

/// One row of a daily runoff file. `model_q` may be left blank for the SCS model
/// to fill in.
#[derive(Debug, Clone, PartialEq)]
pub struct DayRow {
    pub day: String,
    pub p_mm: f64,
    pub model_q: Option<f64>,
    pub model_var: f64,
    pub obs_q: f64,
    pub obs_var: f64,
}

pub const DAY_COLUMNS: [&str; 6] = ["day", "p_mm", "model_q", "model_var", "obs_q", "obs_var"];

pub fn load_days_csv(path: &Path) -> Result<Vec<DayRow>> {
    let mut rdr = reader(path)?;
    check_header(path, &mut rdr, &DAY_COLUMNS)?;
    records(path, &mut rdr)?
        .into_iter()
        .map(|(line, rec)| {
            let row = DayRow {
                day: field(path, line, &rec, 0, "day")?.to_string(),
                p_mm: parse_f64(path, line, &rec, 1, "p_mm")?,
                model_q: parse_opt_f64(path, line, &rec, 2, "model_q")?,
                model_var: parse_f64(path, line, &rec, 3, "model_var")?,
                obs_q: parse_f64(path, line, &rec, 4, "obs_q")?,
                obs_var: parse_f64(path, line, &rec, 5, "obs_var")?,
            };
            if row.p_mm < 0.0 || row.obs_q < 0.0 || row.model_q.is_some_and(|q| q < 0.0) {
                return Err(csv_error(path, line, "rainfall and runoff must be non-negative"));
            }
            if row.model_var < 0.0 || row.obs_var < 0.0 {
                return Err(csv_error(path, line, "variances must be non-negative"));
            }
            Ok(row)
        })
        .collect()
}

pub fn days_csv(rows: &[DayRow]) -> String {
    let mut s = DAY_COLUMNS.join(",");
    s.push('\n');
    for r in rows {
        let model_q = r.model_q.map(|q| q.to_string()).unwrap_or_default();
        writeln!(s, "{},{},{model_q},{},{},{}", r.day, r.p_mm, r.model_var, r.obs_q, r.obs_var).unwrap();
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn three_rows_three_times() {
        let d = tempdir().unwrap();
        let p = write(d.path(), "m.csv", "t,component,value,variance\n0.5,0,1.0,0.25\n1.0,0,2.0,0.25\n1.5,0,3.0,0.25\n");
        let m = load_measurements_csv(&p).unwrap();
        assert_eq!(m.times(), &[0.5, 1.0, 1.5]);
    }

    #[test]
    fn grouped_components_share_a_time() {
        let d = tempdir().unwrap();
        let p = write(d.path(), "m.csv", "t,component,value,variance\n0.5,0,1,0.1\n0.5,2,3,0.1\n1,1,2,0\n");
        let m = load_measurements_csv(&p).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.entry_count(), 3);
    }

    #[test]
    fn duplicated_timestamp_names_the_line() {
        let d = tempdir().unwrap();
        let p = write(d.path(), "m.csv", "t,component,value,variance\n0.5,0,1,0.1\n0.5,0,2,0.1\n");
        let err = load_measurements_csv(&p).unwrap_err();
        match &err {
            Error::Csv { line, .. } => assert_eq!(*line, 3),
            other => panic!("{other:?}"),
        }
        assert!(err.to_string().contains("line 3"));
    }

    #[test]
    fn bad_measurement_files() {
        let d = tempdir().unwrap();
        let p = write(d.path(), "a.csv", "t,component,value\n0.5,0,1\n");
        assert!(load_measurements_csv(&p).unwrap_err().to_string().contains("variance"));
        let p = write(d.path(), "b.csv", "t,component,value,variance\n1.0,0,1,0.1\n0.5,0,1,0.1\n");
        assert!(matches!(load_measurements_csv(&p), Err(Error::Csv { line: 3, .. })));
        let p = write(d.path(), "c.csv", "t,component,value,variance\n1.0,0,abc,0.1\n");
        let err = load_measurements_csv(&p).unwrap_err().to_string();
        assert!(err.contains("line 2") && err.contains("abc"), "{err}");
    }

    #[test]
    fn header_only_is_empty_series() {
        let d = tempdir().unwrap();
        let p = write(d.path(), "m.csv", "t,component,value,variance\n");
        assert!(load_measurements_csv(&p).unwrap().is_empty());
    }

    #[test]
    fn measurement_round_trip() {
        let mut m = MeasurementSeries::new();
        m.push(0.1 + 0.2, vec![Observation { component: 1, value: 1.0 / 3.0, variance: 0.25 }]).unwrap();
        let d = tempdir().unwrap();
        let p = write(d.path(), "m.csv", &measurements_csv(&m));
        assert_eq!(load_measurements_csv(&p).unwrap(), m);
    }

    #[test]
    fn single_sample_trajectory_file() {
        let tr = Trajectory::new(vec![0.0], vec![vec![1.0, 2.0]], vec![vec![0.0, 0.0]]).unwrap();
        let text = trajectory_csv(&tr);
        assert_eq!(text, "t,x0,x1\n0,1,2\n");
    }

    #[test]
    fn days_file_with_blank_model() {
        let d = tempdir().unwrap();
        let p = write(d.path(), "d.csv", "day,p_mm,model_q,model_var,obs_q,obs_var\n1,30,,1.5,4,2\n2,0,0,1,0,1\n");
        let rows = load_days_csv(&p).unwrap();
        assert_eq!(rows[0].model_q, None);
        assert_eq!(rows[1].model_q, Some(0.0));
        let p2 = write(d.path(), "d2.csv", &days_csv(&rows));
        assert_eq!(load_days_csv(&p2).unwrap(), rows);
    }

    #[test]
    fn parcels_file() {
        let d = tempdir().unwrap();
        let p = write(d.path(), "p.csv", "label,area,cn\nurban,3,90\npark,1,60\n");
        let parcels = load_parcels_csv(&p).unwrap();
        assert_eq!(parcels.len(), 2);
        let p = write(d.path(), "q.csv", "label,area,cn\nurban,3,190\n");
        assert!(matches!(load_parcels_csv(&p), Err(Error::Csv { line: 2, .. })));
    }

    #[test]
    fn atomic_write_leaves_no_temp() {
        let d = tempdir().unwrap();
        let p = d.path().join("out.csv");
        write_atomic(&p, "a\n").unwrap();
        write_atomic(&p, "b\n").unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "b\n");
        assert_eq!(fs::read_dir(d.path()).unwrap().count(), 1);
    }
}
