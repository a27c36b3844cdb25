//! CSV feature/label files and the JSON recording manifest.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::track::{average_annotators, FeatureTrack, LabelTrack, Modality};
use crate::error::{Error, ParseErrorKind, Result};
use crate::task::Task;

fn parse_err(path: &Path, line: u64, kind: ParseErrorKind) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line: line as usize,
        kind,
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => parse_err(path, line, ParseErrorKind::MalformedHeader(format!("{other:?}"))),
    }
}

fn reader(path: &Path) -> Result<csv::Reader<BufReader<File>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(file)))
}

fn writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(BufWriter::new(file)))
}

fn finish(path: &Path, w: csv::Writer<BufWriter<File>>) -> Result<()> {
    let mut inner = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    inner.flush().map_err(|e| Error::io(path, e))
}

fn number(path: &Path, line: u64, column: &str, field: &str) -> Result<f64> {
    let v: f64 = field
        .parse()
        .map_err(|_| parse_err(path, line, ParseErrorKind::BadNumber(field.to_string())))?;
    if !v.is_finite() {
        return Err(parse_err(
            path,
            line,
            ParseErrorKind::NonFiniteValue(column.to_string()),
        ));
    }
    Ok(v)
}

fn frame_index(path: &Path, line: u64, field: &str, expected: usize) -> Result<()> {
    match field.parse::<usize>() {
        Ok(i) if i == expected => Ok(()),
        _ => Err(parse_err(
            path,
            line,
            ParseErrorKind::FrameIndex {
                expected,
                got: field.to_string(),
            },
        )),
    }
}

/// Reads `frame,<name_0>,…` with frames numbered consecutively from 0.
/// Column names are returned alongside the track.
pub fn load_features_csv(path: &Path, modality: Modality, frame_rate_hz: f64) -> Result<(FeatureTrack, Vec<String>)> {
    let mut records = reader(path)?.into_records();
    let header = match records.next() {
        Some(h) => h.map_err(|e| csv_err(path, e))?,
        None => return Err(parse_err(path, 1, ParseErrorKind::Empty)),
    };
    if header.get(0) != Some("frame") || header.len() < 2 {
        return Err(parse_err(
            path,
            1,
            ParseErrorKind::MalformedHeader("expected `frame,<feature>,…`".into()),
        ));
    }
    let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let dim = names.len();
    let mut data = Vec::new();
    for (row, rec) in records.enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(row as u64 + 2, |p| p.line());
        if rec.len() != dim + 1 {
            return Err(parse_err(
                path,
                line,
                ParseErrorKind::RaggedRow {
                    expected: dim,
                    got: rec.len().saturating_sub(1),
                },
            ));
        }
        frame_index(path, line, &rec[0], row)?;
        for (field, name) in rec.iter().skip(1).zip(&names) {
            data.push(number(path, line, name, field)?);
        }
    }
    Ok((FeatureTrack::new(modality, frame_rate_hz, dim, data)?, names))
}

pub fn write_features_csv(path: &Path, track: &FeatureTrack, names: Option<&[String]>) -> Result<()> {
    let default: Vec<String>;
    let names = match names {
        Some(n) if n.len() == track.dim() => n,
        Some(n) => {
            return Err(Error::LengthMismatch {
                what: "feature names",
                expected: track.dim(),
                got: n.len(),
            })
        }
        None => {
            default = (0..track.dim()).map(|j| format!("{}_{j}", track.modality)).collect();
            &default
        }
    };
    let mut w = writer(path)?;
    let csv = |e: csv::Error| csv_err(path, e);
    w.write_record(std::iter::once("frame").chain(names.iter().map(String::as_str)))
        .map_err(csv)?;
    for (l, f) in track.frames().enumerate() {
        w.write_record(std::iter::once(l.to_string()).chain(f.iter().map(f64::to_string)))
            .map_err(csv)?;
    }
    finish(path, w)
}

/// Reads either the wide form `frame,<task>,…` or the long form
/// `frame,task,annotator,value`; the latter is averaged over annotators.
pub fn load_labels_csv(path: &Path, frame_rate_hz: f64) -> Result<LabelTrack> {
    let mut records = reader(path)?.into_records();
    let header = match records.next() {
        Some(h) => h.map_err(|e| csv_err(path, e))?,
        None => return Err(parse_err(path, 1, ParseErrorKind::Empty)),
    };
    let columns: Vec<&str> = header.iter().collect();
    if columns == ["frame", "task", "annotator", "value"] {
        return load_long_labels(path, records, frame_rate_hz);
    }
    if columns.first() != Some(&"frame") || columns.len() < 2 {
        return Err(parse_err(
            path,
            1,
            ParseErrorKind::MalformedHeader("expected `frame,<task>,…` or `frame,task,annotator,value`".into()),
        ));
    }
    let tasks = columns[1..]
        .iter()
        .map(|c| c.parse::<Task>())
        .collect::<Result<Vec<_>>>()
        .map_err(|e| parse_err(path, 1, ParseErrorKind::MalformedHeader(e.to_string())))?;
    let mut values = vec![Vec::new(); tasks.len()];
    for (row, rec) in records.enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(row as u64 + 2, |p| p.line());
        if rec.len() != tasks.len() + 1 {
            return Err(parse_err(
                path,
                line,
                ParseErrorKind::RaggedRow {
                    expected: tasks.len(),
                    got: rec.len().saturating_sub(1),
                },
            ));
        }
        frame_index(path, line, &rec[0], row)?;
        for ((field, task), out) in rec.iter().skip(1).zip(&tasks).zip(&mut values) {
            out.push(number(path, line, task.name(), field)?);
        }
    }
    if values[0].is_empty() {
        return Err(parse_err(path, 2, ParseErrorKind::Empty));
    }
    LabelTrack::new(tasks, values, 1, frame_rate_hz)
}

type Ratings = BTreeMap<Task, BTreeMap<usize, f64>>;

fn load_long_labels(
    path: &Path,
    records: csv::StringRecordsIntoIter<BufReader<File>>,
    frame_rate_hz: f64,
) -> Result<LabelTrack> {
    let mut by_annotator: BTreeMap<String, Ratings> = BTreeMap::new();
    for (row, rec) in records.enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(row as u64 + 2, |p| p.line());
        if rec.len() != 4 {
            return Err(parse_err(
                path,
                line,
                ParseErrorKind::RaggedRow {
                    expected: 3,
                    got: rec.len().saturating_sub(1),
                },
            ));
        }
        let frame: usize = rec[0].parse().map_err(|_| {
            parse_err(
                path,
                line,
                ParseErrorKind::FrameIndex {
                    expected: 0,
                    got: rec[0].to_string(),
                },
            )
        })?;
        let task: Task = rec[1]
            .parse()
            .map_err(|e: Error| parse_err(path, line, ParseErrorKind::MalformedHeader(e.to_string())))?;
        let value = number(path, line, "value", &rec[3])?;
        by_annotator
            .entry(rec[2].to_string())
            .or_default()
            .entry(task)
            .or_default()
            .insert(frame, value);
    }
    if by_annotator.is_empty() {
        return Err(parse_err(path, 2, ParseErrorKind::Empty));
    }
    let mut tracks = Vec::with_capacity(by_annotator.len());
    for (annotator, ratings) in by_annotator {
        let tasks: Vec<Task> = ratings.keys().copied().collect();
        let mut values = Vec::with_capacity(tasks.len());
        for series in ratings.values() {
            // Frames must be exactly 0..len.
            if series.keys().enumerate().any(|(i, &f)| i != f) {
                return Err(Error::InvalidConfig(format!(
                    "{}: annotator `{annotator}` has non-consecutive frames",
                    path.display()
                )));
            }
            values.push(series.values().copied().collect());
        }
        tracks.push(LabelTrack::new(tasks, values, 1, frame_rate_hz)?);
    }
    average_annotators(&tracks)
}

pub fn write_labels_csv(path: &Path, labels: &LabelTrack) -> Result<()> {
    let mut w = writer(path)?;
    let csv = |e: csv::Error| csv_err(path, e);
    w.write_record(std::iter::once("frame").chain(labels.tasks().iter().map(|t| t.name())))
        .map_err(csv)?;
    let series: Vec<&[f64]> = labels.tasks().iter().filter_map(|&t| labels.get(t)).collect();
    for l in 0..labels.len() {
        w.write_record(std::iter::once(l.to_string()).chain(series.iter().map(|s| s[l].to_string())))
            .map_err(csv)?;
    }
    finish(path, w)
}

/// One manifest entry. Paths are relative to the manifest file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub speaker_ids: Vec<String>,
    pub feature_paths: BTreeMap<Modality, PathBuf>,
    pub label_path: PathBuf,
    pub frame_rate_hz: f64,
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut json = serde_json::to_string_pretty(entries)?;
    json.push('\n');
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

/// A fully loaded recording with features and labels on a common clock.
#[derive(Clone, Debug, PartialEq)]
pub struct Recording {
    pub id: String,
    pub speakers: Vec<String>,
    pub speech: Option<FeatureTrack>,
    pub body: Option<FeatureTrack>,
    pub labels: LabelTrack,
}

impl Recording {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn track(&self, modality: Modality) -> Option<&FeatureTrack> {
        match modality {
            Modality::Speech => self.speech.as_ref(),
            Modality::Body => self.body.as_ref(),
        }
    }

    fn check_lengths(&self) -> Result<()> {
        for t in [&self.speech, &self.body].into_iter().flatten() {
            if t.len() != self.labels.len() {
                return Err(Error::LengthMismatch {
                    what: "features vs labels (recording must share one frame clock)",
                    expected: self.labels.len(),
                    got: t.len(),
                });
            }
        }
        Ok(())
    }
}

pub fn load_recording(base: &Path, entry: &ManifestEntry) -> Result<Recording> {
    let load = |m: Modality| -> Result<Option<FeatureTrack>> {
        entry
            .feature_paths
            .get(&m)
            .map(|p| load_features_csv(&base.join(p), m, entry.frame_rate_hz).map(|(t, _)| t))
            .transpose()
    };
    let rec = Recording {
        id: entry.id.clone(),
        speakers: entry.speaker_ids.clone(),
        speech: load(Modality::Speech)?,
        body: load(Modality::Body)?,
        labels: load_labels_csv(&base.join(&entry.label_path), entry.frame_rate_hz)?,
    };
    rec.check_lengths()?;
    Ok(rec)
}

/// Loads every recording listed in the manifest at `path`.
pub fn load_manifest(path: &Path) -> Result<Vec<Recording>> {
    let base = path.parent().unwrap_or(Path::new("."));
    read_manifest(path)?.iter().map(|e| load_recording(base, e)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn features_round_trip_bit_exact() {
        let dir = tmp();
        let p = dir.path().join("s.csv");
        let data: Vec<f64> = (0..39 * 5)
            .map(|i| (i as f64 * 0.1).sin() / 3.0 + 1e-17 * i as f64)
            .collect();
        let t = FeatureTrack::new(Modality::Speech, 60.0, 39, data).unwrap();
        write_features_csv(&p, &t, None).unwrap();
        let (back, names) = load_features_csv(&p, Modality::Speech, 60.0).unwrap();
        assert_eq!(back.dim(), 39);
        assert_eq!(names[0], "speech_0");
        assert!(t
            .data()
            .iter()
            .zip(back.data())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn ragged_row_names_the_line() {
        let dir = tmp();
        let p = dir.path().join("s.csv");
        let head = std::iter::once("frame".to_string()).chain((0..39).map(|j| format!("c{j}")));
        let mut text = head.collect::<Vec<_>>().join(",") + "\n";
        text += &(std::iter::once("0".to_string())
            .chain((0..39).map(|_| "0.5".into()))
            .collect::<Vec<_>>()
            .join(","));
        text += "\n";
        text += &(std::iter::once("1".to_string())
            .chain((0..38).map(|_| "0.5".into()))
            .collect::<Vec<_>>()
            .join(","));
        text += "\n";
        fs::write(&p, text).unwrap();
        let err = load_features_csv(&p, Modality::Speech, 60.0).unwrap_err();
        assert!(
            matches!(
                err,
                Error::Parse {
                    line: 3,
                    kind: ParseErrorKind::RaggedRow { expected: 39, got: 38 },
                    ..
                }
            ),
            "{err}"
        );
    }

    #[test]
    fn distinct_parse_errors() {
        let dir = tmp();
        let p = dir.path().join("f.csv");
        type Case = (&'static str, fn(&ParseErrorKind) -> bool);
        let cases: [Case; 5] = [
            ("time,a\n0,1\n", |k| matches!(k, ParseErrorKind::MalformedHeader(_))),
            (
                "frame,a\n0,NaN\n",
                |k| matches!(k, ParseErrorKind::NonFiniteValue(c) if c == "a"),
            ),
            ("frame,a\n0,abc\n", |k| matches!(k, ParseErrorKind::BadNumber(_))),
            ("frame,a\n0,1\n2,1\n", |k| {
                matches!(k, ParseErrorKind::FrameIndex { expected: 1, .. })
            }),
            ("", |k| matches!(k, ParseErrorKind::Empty)),
        ];
        for (text, check) in cases {
            fs::write(&p, text).unwrap();
            match load_features_csv(&p, Modality::Body, 60.0) {
                Err(Error::Parse { kind, .. }) => assert!(check(&kind), "{text:?}: {kind}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
        let missing = dir.path().join("nope.csv");
        assert!(
            matches!(load_features_csv(&missing, Modality::Body, 60.0), Err(Error::Io { path, .. }) if path == missing)
        );
    }

    #[test]
    fn wide_and_long_labels() {
        let dir = tmp();
        let wide = dir.path().join("w.csv");
        let l = LabelTrack::new(
            Task::ALL.to_vec(),
            vec![vec![0.1, 0.2], vec![-0.3, 0.4], vec![0.0, 1.0 / 3.0]],
            1,
            25.0,
        )
        .unwrap();
        write_labels_csv(&wide, &l).unwrap();
        assert_eq!(load_labels_csv(&wide, 25.0).unwrap(), l);

        let long = dir.path().join("l.csv");
        fs::write(
            &long,
            "frame,task,annotator,value\n0,activation,a,0\n1,activation,a,1\n1,activation,b,0\n0,activation,b,1\n",
        )
        .unwrap();
        let avg = load_labels_csv(&long, 25.0).unwrap();
        assert_eq!(avg.get(Task::Activation).unwrap(), &[0.5, 0.5]);
        assert_eq!(avg.annotator_count, 2);

        fs::write(
            &long,
            "frame,task,annotator,value\n0,activation,a,0\n1,activation,a,1\n0,activation,b,1\n",
        )
        .unwrap();
        assert!(load_labels_csv(&long, 25.0).is_err());
    }

    #[test]
    fn manifest_round_trip_and_length_guard() {
        let dir = tmp();
        let t = FeatureTrack::new(Modality::Body, 60.0, 2, vec![1.0; 8]).unwrap();
        write_features_csv(&dir.path().join("b.csv"), &t, None).unwrap();
        let l = LabelTrack::new(vec![Task::Valence], vec![vec![0.0, 1.0, 0.0, 1.0]], 1, 60.0).unwrap();
        write_labels_csv(&dir.path().join("l.csv"), &l).unwrap();
        let entry = ManifestEntry {
            id: "r0".into(),
            speaker_ids: vec!["a".into(), "b".into()],
            feature_paths: [(Modality::Body, PathBuf::from("b.csv"))].into(),
            label_path: "l.csv".into(),
            frame_rate_hz: 60.0,
        };
        let m = dir.path().join("manifest.json");
        write_manifest(&m, std::slice::from_ref(&entry)).unwrap();
        assert_eq!(read_manifest(&m).unwrap(), vec![entry.clone()]);
        let recs = load_manifest(&m).unwrap();
        assert_eq!(recs[0].len(), 4);
        assert!(recs[0].speech.is_none());

        let short = LabelTrack::new(vec![Task::Valence], vec![vec![0.0, 1.0, 0.0]], 1, 60.0).unwrap();
        write_labels_csv(&dir.path().join("l.csv"), &short).unwrap();
        assert!(matches!(load_manifest(&m), Err(Error::LengthMismatch { .. })));
    }
}
