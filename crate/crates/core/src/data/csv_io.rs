use std::collections::HashMap;
use std::path::{Path, PathBuf};

use super::{Labels, Sequence, SequenceDataset};
use crate::backbone::OutputMode;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// How label cells are interpreted.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CsvSchema {
    /// Class names for multiclass files; cells must match one of them.
    /// Without names, cells are class indices.
    pub classes: Option<Vec<String>>,
    /// Number of classes when cells are indices; inferred when absent.
    pub n_classes: Option<usize>,
}

#[derive(Debug)]
struct Header {
    mode: OutputMode,
    n_labels: usize,
    features: Vec<String>,
}

fn parse_header(path: &str, fields: &[String]) -> Result<Header> {
    let err = |message: String| Error::Parse { path: path.into(), line: 1, message };
    if fields.len() < 4 || fields[0] != "subject" || fields[1] != "seq" || fields[2] != "t" {
        return Err(err("header must start with subject,seq,t".into()));
    }
    let (mode, n_labels) = if fields[3] == "label" {
        (OutputMode::Multiclass, 1)
    } else {
        let n = fields[3..].iter().enumerate().take_while(|(i, f)| **f == format!("label{}", i + 1)).count();
        if n == 0 {
            return Err(err(format!("expected label or label1 column, found {:?}", fields[3])));
        }
        (OutputMode::Multilabel, n)
    };
    let features: Vec<String> = fields[3 + n_labels..].to_vec();
    if features.is_empty() {
        return Err(err("no feature columns".into()));
    }
    Ok(Header { mode, n_labels, features })
}

struct Row {
    t: i64,
    x: Vec<f32>,
    class: Option<usize>,
    cells: Vec<Option<bool>>,
}

fn csv_files(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "csv"))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::invalid(format!("no .csv files in {}", path.display())));
        }
        Ok(files)
    } else {
        Ok(vec![path.to_path_buf()])
    }
}

/// Loads a long-format CSV file, or every `.csv` file in a directory in
/// file-name order. Rows are grouped into sequences by `(subject, seq)`
/// and ordered by `t`.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<SequenceDataset> {
    let mut header: Option<Header> = None;
    let mut order: Vec<(String, String)> = Vec::new();
    let mut groups: HashMap<(String, String), Vec<Row>> = HashMap::new();
    let mut max_class = None::<usize>;
    let class_index: Option<HashMap<&str, usize>> =
        schema.classes.as_ref().map(|c| c.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect());

    for file in csv_files(path)? {
        let name = file.display().to_string();
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_path(&file)
            .map_err(|e| Error::Parse { path: name.clone(), line: 0, message: e.to_string() })?;
        let mut records = reader.records();
        let first = match records.next() {
            Some(r) => r?,
            None => return Err(Error::Parse { path: name, line: 1, message: "empty file".into() }),
        };
        let fields: Vec<String> = first.iter().map(|s| s.trim().to_string()).collect();
        let h = parse_header(&name, &fields)?;
        if let Some(prev) = &header {
            if prev.features.len() != h.features.len() || prev.mode != h.mode || prev.n_labels != h.n_labels {
                return Err(Error::Parse {
                    path: name,
                    line: 1,
                    message: format!("{} features, expected {}", h.features.len(), prev.features.len()),
                });
            }
        }
        let width = fields.len();
        for (i, rec) in records.enumerate() {
            let line = i + 2;
            let rec = rec?;
            let err = |message: String| Error::Parse { path: name.clone(), line, message };
            if rec.len() != width {
                return Err(err(format!("expected {width} cells, found {}", rec.len())));
            }
            let cell = |j: usize| rec.get(j).unwrap_or("").trim();
            let t: i64 = cell(2).parse().map_err(|_| err(format!("time index {:?} is not an integer", cell(2))))?;
            let mut class = None;
            let mut cells = Vec::new();
            match h.mode {
                OutputMode::Multiclass => {
                    let c = cell(3);
                    if !c.is_empty() {
                        let idx = match &class_index {
                            Some(map) => *map.get(c).ok_or_else(|| err(format!("unknown label {c:?}")))?,
                            None => c.parse::<usize>().map_err(|_| err(format!("unknown label {c:?}")))?,
                        };
                        if let Some(n) = schema.n_classes {
                            if idx >= n {
                                return Err(err(format!("unknown label {c:?}: only {n} classes")));
                            }
                        }
                        max_class = Some(max_class.map_or(idx, |m: usize| m.max(idx)));
                        class = Some(idx);
                    }
                }
                OutputMode::Multilabel => {
                    for j in 0..h.n_labels {
                        cells.push(match cell(3 + j) {
                            "" => None,
                            "0" => Some(false),
                            "1" => Some(true),
                            other => return Err(err(format!("unknown label {other:?}: expected 0, 1 or empty"))),
                        });
                    }
                }
            }
            let offset = 3 + h.n_labels;
            let mut x = Vec::with_capacity(h.features.len());
            for j in 0..h.features.len() {
                let c = cell(offset + j);
                x.push(if c.is_empty() {
                    0.0
                } else {
                    c.parse::<f32>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                        err(format!("column {:?}: {c:?} is not a finite number", h.features[j]))
                    })?
                });
            }
            let key = (cell(0).to_string(), cell(1).to_string());
            let rows = groups.entry(key.clone()).or_insert_with(|| {
                order.push(key);
                Vec::new()
            });
            rows.push(Row { t, x, class, cells });
        }
        if header.is_none() {
            header = Some(h);
        }
    }

    let h = header.expect("at least one file");
    let n_outputs = match h.mode {
        OutputMode::Multiclass => schema
            .classes
            .as_ref()
            .map(Vec::len)
            .or(schema.n_classes)
            .unwrap_or_else(|| max_class.map_or(0, |m| m + 1)),
        OutputMode::Multilabel => h.n_labels,
    };
    let mut sequences = Vec::with_capacity(order.len());
    for key in order {
        let mut rows = groups.remove(&key).expect("grouped");
        rows.sort_by_key(|r| r.t);
        if let Some(w) = rows.windows(2).find(|w| w[0].t == w[1].t) {
            return Err(Error::invalid(format!("sequence {}/{} repeats t={}", key.0, key.1, w[0].t)));
        }
        let k = h.features.len();
        let data: Vec<f32> = rows.iter().flat_map(|r| r.x.iter().copied()).collect();
        let labels = match h.mode {
            OutputMode::Multiclass => Labels::Classes(rows.iter().map(|r| r.class).collect()),
            OutputMode::Multilabel => {
                Labels::Multi { n_labels: h.n_labels, cells: rows.iter().flat_map(|r| r.cells.iter().copied()).collect() }
            }
        };
        sequences.push(Sequence {
            subject: key.0,
            id: key.1,
            features: Tensor::new(vec![rows.len(), k], data)?,
            labels,
            context: None,
        });
    }
    let ds = SequenceDataset { sequences, feature_names: h.features, mode: h.mode, n_outputs, relevance: None };
    ds.validate()?;
    Ok(ds)
}

/// Writes the dataset in the long format read by [`load_csv`].
pub fn write_csv(path: &Path, ds: &SequenceDataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::invalid(format!("{other:?}")),
    })?;
    let mut header = vec!["subject".to_string(), "seq".into(), "t".into()];
    match ds.mode {
        OutputMode::Multiclass => header.push("label".into()),
        OutputMode::Multilabel => header.extend((1..=ds.n_outputs).map(|i| format!("label{i}"))),
    }
    header.extend(ds.feature_names.iter().cloned());
    w.write_record(&header)?;
    for s in &ds.sequences {
        for t in 0..s.len() {
            let mut rec = vec![s.subject.clone(), s.id.clone(), t.to_string()];
            match &s.labels {
                Labels::Classes(c) => rec.push(c[t].map(|v| v.to_string()).unwrap_or_default()),
                Labels::Multi { n_labels, cells } => rec.extend(
                    cells[t * n_labels..(t + 1) * n_labels]
                        .iter()
                        .map(|c| c.map(|b| if b { "1" } else { "0" }.to_string()).unwrap_or_default()),
                ),
            }
            rec.extend(s.features.row_slice(t).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file(body: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(".csv").tempfile().unwrap();
        f.write_all(body.as_bytes()).unwrap();
        f
    }

    #[test]
    fn two_row_file_round_trips() {
        let f = file("subject,seq,t,label,f1,f2\na,1,0,1,0.5,-2\na,1,1,0,1.25,3e-3\n");
        let ds = load_csv(f.path(), &CsvSchema::default()).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.sequences[0].features.data(), &[0.5, -2.0, 1.25, 0.003]);
        assert_eq!(ds.sequences[0].labels, Labels::Classes(vec![Some(1), Some(0)]));
        let out = tempfile::Builder::new().suffix(".csv").tempfile().unwrap();
        write_csv(out.path(), &ds).unwrap();
        let back = load_csv(out.path(), &CsvSchema::default()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn empty_label_is_unlabelled_and_empty_feature_is_zero() {
        let f = file("subject,seq,t,label,f1\na,1,0,,\na,1,1,2,1\n");
        let ds = load_csv(f.path(), &CsvSchema::default()).unwrap();
        assert_eq!(ds.sequences[0].mask(), vec![false, true]);
        assert_eq!(ds.sequences[0].features.data(), &[0.0, 1.0]);
        assert_eq!(ds.n_outputs, 3);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let f = file("subject,seq,t,label,f1\na,1,0,0,1\na,1,1,0,x\n");
        match load_csv(f.path(), &CsvSchema::default()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let f = file("subject,seq,t,label,f1\na,1,0,0,1,2\n");
        assert!(matches!(load_csv(f.path(), &CsvSchema::default()), Err(Error::Parse { line: 2, .. })));
        let schema = CsvSchema { classes: Some(vec!["walk".into(), "sit".into()]), n_classes: None };
        let f = file("subject,seq,t,label,f1\na,1,0,run,1\n");
        assert!(matches!(load_csv(f.path(), &schema), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn feature_count_mismatch_across_files() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.csv"), "subject,seq,t,label,f1,f2\na,1,0,0,1,2\n").unwrap();
        std::fs::write(dir.path().join("b.csv"), "subject,seq,t,label,f1\nb,1,0,0,1\n").unwrap();
        assert!(load_csv(dir.path(), &CsvSchema::default()).is_err());
    }

    #[test]
    fn multilabel_columns() {
        let f = file("subject,seq,t,label1,label2,f1\na,1,0,1,,0.5\na,1,1,0,1,0.25\n");
        let ds = load_csv(f.path(), &CsvSchema::default()).unwrap();
        assert_eq!(ds.mode, OutputMode::Multilabel);
        assert_eq!(ds.n_outputs, 2);
        assert_eq!(
            ds.sequences[0].labels,
            Labels::Multi { n_labels: 2, cells: vec![Some(true), None, Some(false), Some(true)] }
        );
    }
}
