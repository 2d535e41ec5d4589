//! File formats: campaign CSV, draws CSV (plus the opt-in full-state
//! companion), trace CSV, reliability curve CSV, and JSON documents.
//!
//! All output is UTF-8 with LF line endings. Floats are written with Rust's
//! shortest round-trip formatting, so values read back bit-identical and no
//! locale is involved.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{PosteriorReport, TraceRecord};
use crate::error::{Error, Result};
use crate::model::{BugAssignment, BugStatus, Grid, ModelConfig, TestCampaign};
use crate::reliability::ReliabilityTable;
use crate::sampler::{Acceptance, ChainDraws, ChainSet, Parameter, SamplerConfig};

pub const CAMPAIGN_HEADER: [&str; 4] = ["mission", "phase", "test_cases", "bugs_detected"];
pub const DRAWS_HEADER: [&str; 4] = ["chain", "iteration", "parameter", "value"];
pub const DRAWS_STAMP: &str = "#bugsize-draws v1";
pub const STATES_HEADER: [&str; 6] = ["chain", "iteration", "candidate", "z", "S", "lambda"];
pub const REPORT_SCHEMA: &str = "bugsize-report/1";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(io_err(path))
}

fn parse_error(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn check_header(path: &Path, got: &csv::StringRecord, want: &[&str]) -> Result<()> {
    if got.iter().ne(want.iter().copied()) {
        return Err(parse_error(
            path,
            1,
            format!(
                "expected header `{}`, found `{}`",
                want.join(","),
                got.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }
    Ok(())
}

// ---------------------------------------------------------------- campaign

pub fn read_campaign(path: impl AsRef<Path>) -> Result<TestCampaign> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(open(path)?);
    let headers = reader.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(parse_error(path, 1, "no rows"));
    }
    check_header(path, &headers, &CAMPAIGN_HEADER)?;

    let mut missions: Vec<String> = Vec::new();
    let mut cells: BTreeMap<(usize, u32), (u64, u64)> = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 4 {
            return Err(parse_error(path, line, "expected 4 fields"));
        }
        let mission = record[0].to_string();
        let phase: u32 = record[1]
            .parse()
            .map_err(|_| parse_error(path, line, format!("bad phase `{}`", &record[1])))?;
        let count = |field: &str, what: &str| -> Result<u64> {
            let v: i64 = field
                .parse()
                .map_err(|_| parse_error(path, line, format!("bad {what} `{field}`")))?;
            u64::try_from(v).map_err(|_| parse_error(path, line, format!("negative {what} {v}")))
        };
        let t = count(&record[2], "test-case count")?;
        let y = count(&record[3], "bug count")?;
        let j = match missions.iter().position(|m| *m == mission) {
            Some(j) => j,
            None => {
                missions.push(mission.clone());
                missions.len() - 1
            }
        };
        if cells.insert((j, phase), (t, y)).is_some() {
            return Err(parse_error(
                path,
                line,
                format!("duplicate cell (mission {mission}, phase {phase})"),
            ));
        }
    }
    if cells.is_empty() {
        return Err(parse_error(path, 1, "no rows"));
    }

    let mut phases: Vec<u32> = cells.keys().map(|&(_, k)| k).collect();
    phases.sort_unstable();
    phases.dedup();
    let mut test_cases = Grid::filled(missions.len(), phases.len(), 0u64);
    let mut detected = Grid::filled(missions.len(), phases.len(), 0u64);
    for (j, mission) in missions.iter().enumerate() {
        for (k, &phase) in phases.iter().enumerate() {
            let (t, y) = cells.get(&(j, phase)).ok_or_else(|| Error::Format {
                path: path.to_path_buf(),
                message: format!("missing cell (mission {mission}, phase {phase})"),
            })?;
            test_cases.set(j, k, *t);
            detected.set(j, k, *y);
        }
    }
    TestCampaign::with_labels(missions, phases, test_cases, detected)
}

pub fn write_campaign(campaign: &TestCampaign, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut writer = csv::Writer::from_writer(create(path)?);
    writer.write_record(CAMPAIGN_HEADER)?;
    for (j, mission) in campaign.mission_labels().iter().enumerate() {
        for (k, phase) in campaign.phase_labels().iter().enumerate() {
            writer.write_record([
                mission.clone(),
                phase.to_string(),
                campaign.test_cases().get(j, k).to_string(),
                campaign.detected().get(j, k).to_string(),
            ])?;
        }
    }
    writer.flush().map_err(io_err(path))
}

/// Lays the `n` detected bugs onto candidate slots `1..=n` in
/// (mission, phase) order; slots `n+1..=M` are undetected.
pub fn build_assignment(campaign: &TestCampaign, max_bugs: usize) -> Result<BugAssignment> {
    let n = campaign.n_detected();
    if (max_bugs as u64) < n {
        return Err(Error::CeilingBelowDetected {
            ceiling: max_bugs,
            detected: n,
        });
    }
    let mut statuses = Vec::with_capacity(max_bugs);
    for mission in 0..campaign.missions() {
        for phase in 0..campaign.phases() {
            let y = campaign.detected().get(mission, phase);
            statuses.extend((0..y).map(|_| BugStatus::Detected { mission, phase }));
        }
    }
    statuses.resize(max_bugs, BugStatus::Undetected);
    Ok(BugAssignment::new(statuses))
}

// ------------------------------------------------------------------- draws

fn fmt_rate(rate: Option<f64>) -> String {
    rate.map_or_else(|| "none".to_string(), |r| r.to_string())
}

fn write_rows<W: Write>(writer: &mut csv::Writer<W>, records: &[TraceRecord]) -> Result<()> {
    for rec in records {
        writer.write_record([
            rec.chain.to_string(),
            rec.iteration.to_string(),
            rec.parameter.to_string(),
            rec.value.to_string(),
        ])?;
    }
    Ok(())
}

/// Draws CSV: version stamp, one `#chain=` metadata line per chain, then
/// long-form `chain,iteration,parameter,value` rows.
pub fn write_draws(set: &ChainSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = create(path)?;
    let mut meta = String::new();
    meta.push_str(DRAWS_STAMP);
    meta.push('\n');
    meta.push_str(&format!(
        "#parameters={}\n",
        set.parameter_names().join(" ")
    ));
    for c in &set.chains {
        meta.push_str(&format!(
            "#chain={} seed={} stream={} accept_size={} accept_lambda={}\n",
            c.chain,
            c.seed,
            c.stream,
            fmt_rate(c.acceptance.size),
            fmt_rate(c.acceptance.lambda)
        ));
    }
    out.write_all(meta.as_bytes()).map_err(io_err(path))?;
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(DRAWS_HEADER)?;
    for c in &set.chains {
        for (k, &iteration) in c.iterations.iter().enumerate() {
            for (p, param) in set.parameters.iter().enumerate() {
                writer.write_record([
                    c.chain.to_string(),
                    iteration.to_string(),
                    param.to_string(),
                    c.values[p][k].to_string(),
                ])?;
            }
        }
    }
    writer.flush().map_err(io_err(path))
}

struct ChainMeta {
    chain: usize,
    seed: u64,
    stream: u64,
    acceptance: Acceptance,
}

fn parse_chain_meta(path: &Path, line: u64, text: &str) -> Result<ChainMeta> {
    let mut fields = BTreeMap::new();
    for part in text.split_whitespace() {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| parse_error(path, line, format!("bad metadata `{part}`")))?;
        fields.insert(k, v);
    }
    let get = |key: &str| {
        fields
            .get(key)
            .copied()
            .ok_or_else(|| parse_error(path, line, format!("missing `{key}` in chain metadata")))
    };
    let int = |key: &str| -> Result<u64> {
        get(key)?
            .parse()
            .map_err(|_| parse_error(path, line, format!("bad `{key}`")))
    };
    let rate = |key: &str| -> Result<Option<f64>> {
        match get(key)? {
            "none" => Ok(None),
            v => v
                .parse()
                .map(Some)
                .map_err(|_| parse_error(path, line, format!("bad `{key}`"))),
        }
    };
    Ok(ChainMeta {
        chain: int("chain")? as usize,
        seed: int("seed")?,
        stream: int("stream")?,
        acceptance: Acceptance {
            size: rate("accept_size")?,
            lambda: rate("accept_lambda")?,
        },
    })
}

pub fn read_draws(path: impl AsRef<Path>) -> Result<ChainSet> {
    let path = path.as_ref();
    let mut reader = open(path)?;
    let mut line = String::new();
    reader.read_line(&mut line).map_err(io_err(path))?;
    if line.trim_end() != DRAWS_STAMP {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: format!(
                "version stamp mismatch: expected `{DRAWS_STAMP}`, found `{}`",
                line.trim_end()
            ),
        });
    }

    let mut parameters: Vec<Parameter> = Vec::new();
    let mut metas: Vec<ChainMeta> = Vec::new();
    let mut line_no = 1u64;
    let mut rest = String::new();
    loop {
        line.clear();
        if reader.read_line(&mut line).map_err(io_err(path))? == 0 {
            break;
        }
        line_no += 1;
        if let Some(list) = line.trim_end().strip_prefix("#parameters=") {
            parameters = list
                .split_whitespace()
                .map(|p| p.parse().map_err(|e: String| parse_error(path, line_no, e)))
                .collect::<Result<_>>()?;
        } else if let Some(meta) = line.trim_end().strip_prefix("#chain=") {
            metas.push(parse_chain_meta(path, line_no, &format!("chain={meta}"))?);
        } else {
            rest = std::mem::take(&mut line);
            break;
        }
    }

    let body = rest.as_bytes().chain(reader);
    let mut csv_reader = csv::Reader::from_reader(body);
    check_header(path, &csv_reader.headers()?.clone(), &DRAWS_HEADER)?;

    let mut chains: Vec<ChainDraws> = metas
        .into_iter()
        .map(|m| ChainDraws {
            chain: m.chain,
            seed: m.seed,
            stream: m.stream,
            iterations: Vec::new(),
            values: vec![Vec::new(); parameters.len()],
            acceptance: m.acceptance,
            full_states: None,
        })
        .collect();
    for record in csv_reader.records() {
        let record = record?;
        let line = line_no + record.position().map_or(0, |p| p.line());
        let chain: usize = record[0]
            .parse()
            .map_err(|_| parse_error(path, line, "bad chain index"))?;
        let iteration: u64 = record[1]
            .parse()
            .map_err(|_| parse_error(path, line, "bad iteration"))?;
        let param: Parameter = record[2]
            .parse()
            .map_err(|e: String| parse_error(path, line, e))?;
        let value: f64 = record[3]
            .parse()
            .map_err(|_| parse_error(path, line, "bad value"))?;
        let c = chains
            .iter_mut()
            .find(|c| c.chain == chain)
            .ok_or_else(|| parse_error(path, line, format!("chain {chain} has no metadata")))?;
        let p = parameters
            .iter()
            .position(|&q| q == param)
            .ok_or_else(|| parse_error(path, line, format!("undeclared parameter {param}")))?;
        if p == 0 {
            c.iterations.push(iteration);
        } else if c.iterations.last() != Some(&iteration) {
            return Err(parse_error(path, line, "rows out of order"));
        }
        c.values[p].push(value);
    }
    for c in &chains {
        if c.values.iter().any(|v| v.len() != c.iterations.len()) {
            return Err(Error::Format {
                path: path.to_path_buf(),
                message: format!("chain {} has ragged parameter columns", c.chain),
            });
        }
    }
    Ok(ChainSet { parameters, chains })
}

/// Companion file with every candidate of every kept draw. Writes nothing
/// useful unless the chains were run with `keep_full_state`.
pub fn write_states(set: &ChainSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut writer = csv::Writer::from_writer(create(path)?);
    writer.write_record(STATES_HEADER)?;
    for c in &set.chains {
        for snap in c.full_states.iter().flatten() {
            for i in 0..snap.z.len() {
                writer.write_record([
                    c.chain.to_string(),
                    snap.iteration.to_string(),
                    (i + 1).to_string(),
                    u8::from(snap.z[i]).to_string(),
                    snap.sizes[i].to_string(),
                    snap.lambdas[i].to_string(),
                ])?;
            }
        }
    }
    writer.flush().map_err(io_err(path))
}

// ------------------------------------------------------------------- trace

pub fn write_trace(records: &[TraceRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut writer = csv::Writer::from_writer(create(path)?);
    writer.write_record(DRAWS_HEADER)?;
    write_rows(&mut writer, records)?;
    writer.flush().map_err(io_err(path))
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<Vec<TraceRecord>> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_reader(open(path)?);
    check_header(path, &reader.headers()?.clone(), &DRAWS_HEADER)?;
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let bad = |what: &str| parse_error(path, line, format!("bad {what}"));
        out.push(TraceRecord {
            chain: record[0].parse().map_err(|_| bad("chain"))?,
            iteration: record[1].parse().map_err(|_| bad("iteration"))?,
            parameter: record[2].parse().map_err(|_| bad("parameter"))?,
            value: record[3].parse().map_err(|_| bad("value"))?,
        });
    }
    Ok(out)
}

// ------------------------------------------------------------------- curve

pub fn write_curve(curve: &[(f64, f64)], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut writer = csv::Writer::from_writer(create(path)?);
    writer.write_record(["epsilon", "reliability"])?;
    for (eps, p) in curve {
        writer.write_record([eps.to_string(), p.to_string()])?;
    }
    writer.flush().map_err(io_err(path))
}

pub fn read_curve(path: impl AsRef<Path>) -> Result<Vec<(f64, f64)>> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_reader(open(path)?);
    check_header(
        path,
        &reader.headers()?.clone(),
        &["epsilon", "reliability"],
    )?;
    reader
        .records()
        .map(|r| {
            let r = r?;
            let line = r.position().map_or(0, |p| p.line());
            let eps = r[0]
                .parse()
                .map_err(|_| parse_error(path, line, "bad epsilon"))?;
            let p = r[1]
                .parse()
                .map_err(|_| parse_error(path, line, "bad reliability"))?;
            Ok((eps, p))
        })
        .collect()
}

// ------------------------------------------------------------------ report

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignSummary {
    pub missions: usize,
    pub phases: usize,
    pub detected: u64,
    pub max_test_cases: u64,
}

impl From<&TestCampaign> for CampaignSummary {
    fn from(c: &TestCampaign) -> Self {
        CampaignSummary {
            missions: c.missions(),
            phases: c.phases(),
            detected: c.n_detected(),
            max_test_cases: c.max_test_cases(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainInfo {
    pub chain: usize,
    pub seed: u64,
    pub stream: u64,
    pub kept: usize,
    pub acceptance: Acceptance,
}

impl From<&ChainDraws> for ChainInfo {
    fn from(c: &ChainDraws) -> Self {
        ChainInfo {
            chain: c.chain,
            seed: c.seed,
            stream: c.stream,
            kept: c.len(),
            acceptance: c.acceptance,
        }
    }
}

/// The machine-readable result of a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub schema: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub campaign: Option<CampaignSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampler: Option<SamplerConfig>,
    pub chains: Vec<ChainInfo>,
    pub posterior: PosteriorReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reliability: Option<ReliabilityTable>,
}

impl FitReport {
    pub fn new(set: &ChainSet, posterior: PosteriorReport) -> Self {
        FitReport {
            schema: REPORT_SCHEMA.to_string(),
            campaign: None,
            model: None,
            sampler: None,
            chains: set.chains.iter().map(ChainInfo::from).collect(),
            posterior,
            reliability: None,
        }
    }
}

pub fn write_report(report: &FitReport, path: impl AsRef<Path>) -> Result<()> {
    write_json(report, path)
}

pub fn read_report(path: impl AsRef<Path>) -> Result<FitReport> {
    let path = path.as_ref();
    let report: FitReport = read_json(path)?;
    if report.schema != REPORT_SCHEMA {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: format!(
                "schema mismatch: expected `{REPORT_SCHEMA}`, found `{}`",
                report.schema
            ),
        });
    }
    Ok(report)
}

pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n").map_err(io_err(path))?;
    out.flush().map_err(io_err(path))
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    Ok(serde_json::from_reader(open(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;
    use std::path::PathBuf;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn reads_table_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "c.csv",
            "mission,phase,test_cases,bugs_detected\nM1,1,61,3\nM1,2,10,0\nM2,1,59,9\nM2,2,10,0\n",
        );
        let c = read_campaign(&p).unwrap();
        assert_eq!(c.missions(), 2);
        assert_eq!(c.phases(), 2);
        assert_eq!(c.test_cases().get(0, 0), 61);
        assert_eq!(c.detected().get(0, 0), 3);
        assert_eq!(c.test_cases().get(1, 0), 59);
        assert_eq!(c.detected().get(1, 0), 9);
        assert_eq!(c.mission_labels(), &["M1".to_string(), "M2".to_string()]);
    }

    #[test]
    fn campaign_errors() {
        let dir = tempfile::tempdir().unwrap();
        let empty = write(dir.path(), "e.csv", "");
        assert!(read_campaign(&empty)
            .unwrap_err()
            .to_string()
            .contains("no rows"));
        let header_only = write(
            dir.path(),
            "h.csv",
            "mission,phase,test_cases,bugs_detected\n",
        );
        assert!(read_campaign(&header_only)
            .unwrap_err()
            .to_string()
            .contains("no rows"));

        let missing = write(
            dir.path(),
            "m.csv",
            "mission,phase,test_cases,bugs_detected\nM1,1,5,0\nM1,2,5,0\nM2,1,5,0\n",
        );
        let err = read_campaign(&missing).unwrap_err().to_string();
        assert!(err.contains("mission M2, phase 2"), "{err}");

        let negative = write(
            dir.path(),
            "n.csv",
            "mission,phase,test_cases,bugs_detected\nM1,1,-5,0\n",
        );
        assert!(read_campaign(&negative)
            .unwrap_err()
            .to_string()
            .contains("negative"));

        let dup = write(
            dir.path(),
            "d.csv",
            "mission,phase,test_cases,bugs_detected\nM1,1,5,0\nM1,1,6,0\n",
        );
        assert!(read_campaign(&dup)
            .unwrap_err()
            .to_string()
            .contains("duplicate"));

        assert!(matches!(
            read_campaign(dir.path().join("absent.csv")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn assignment_layout() {
        let c = TestCampaign::from_rows(vec![vec![3]], vec![vec![1]]).unwrap();
        let a = build_assignment(&c, 3).unwrap();
        assert_eq!(
            a.statuses(),
            &[
                BugStatus::Detected {
                    mission: 0,
                    phase: 0
                },
                BugStatus::Undetected,
                BugStatus::Undetected
            ]
        );
        let err = build_assignment(&c, 0).unwrap_err();
        assert!(err
            .to_string()
            .contains("candidate ceiling below detected count"));
    }

    #[test]
    fn draws_stamp_is_checked() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "d.csv",
            "#bugsize-draws v0\nchain,iteration,parameter,value\n",
        );
        assert!(read_draws(&p)
            .unwrap_err()
            .to_string()
            .contains("version stamp mismatch"));
    }

    #[test]
    fn empty_chainset_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        let set = ChainSet {
            parameters: vec![],
            chains: vec![],
        };
        write_draws(&set, &p).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(
            text,
            "#bugsize-draws v1\n#parameters=\nchain,iteration,parameter,value\n"
        );
        assert_eq!(read_draws(&p).unwrap(), set);
    }

    #[test]
    fn unwritable_report_path() {
        let report = FitReport::new(
            &ChainSet {
                parameters: vec![],
                chains: vec![],
            },
            PosteriorReport::default(),
        );
        let err = write_report(&report, "/nonexistent-dir/report.json").unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
