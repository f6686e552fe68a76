//! JSON-lines dataset files.
//!
//! Line 1 is a header, every later line one sample:
//!
//! ```text
//! {"format":"domgen-data-v1","dim":16,"classes":20,"splits":{"train":["train-000",...],"val":[...],"test":[...]}}
//! {"domain":"train-000","split":"train","sub":"fit","x":[...],"y":3}
//! ```
//!
//! Domain transforms are never written.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BenchmarkSplit, DomainDataset, Sample};
use crate::error::{Error, Result};

pub const DATA_FORMAT: &str = "domgen-data-v1";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Splits {
    train: Vec<String>,
    #[serde(default)]
    val: Vec<String>,
    #[serde(default)]
    test: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    dim: usize,
    classes: usize,
    splits: Splits,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Sub {
    Fit,
    Eval,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record<'a> {
    domain: std::borrow::Cow<'a, str>,
    split: std::borrow::Cow<'a, str>,
    sub: Sub,
    x: std::borrow::Cow<'a, [f64]>,
    y: usize,
}

fn ids(domains: &[DomainDataset]) -> Vec<String> {
    domains.iter().map(|d| d.domain_id.clone()).collect()
}

pub fn write_dataset<W: Write>(split: &BenchmarkSplit, mut w: W) -> std::io::Result<()> {
    let header = Header {
        format: DATA_FORMAT.to_string(),
        dim: split.dim,
        classes: split.classes,
        splits: Splits {
            train: ids(&split.train),
            val: ids(&split.val),
            test: ids(&split.test),
        },
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for (name, d) in split.all_domains() {
        for (sub, samples) in [(Sub::Fit, &d.fit), (Sub::Eval, &d.eval)] {
            for s in samples {
                let rec = Record {
                    domain: d.domain_id.as_str().into(),
                    split: name.into(),
                    sub,
                    x: s.x.as_slice().into(),
                    y: s.y,
                };
                serde_json::to_writer(&mut w, &rec)?;
                w.write_all(b"\n")?;
            }
        }
    }
    w.flush()
}

pub fn write_dataset_file(split: &BenchmarkSplit, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_dataset(split, BufWriter::new(f)).map_err(|e| Error::io(path, e))
}

fn parse_err(line: usize, e: serde_json::Error) -> Error {
    Error::Parse {
        location: format!("line {line} column {}", e.column()),
        detail: e.to_string(),
    }
}

/// Parse and validate a dataset stream.
pub fn read_dataset<R: BufRead>(r: R) -> Result<BenchmarkSplit> {
    let mut lines = r.lines().enumerate();
    let header: Header = match lines.next() {
        Some((_, line)) => {
            let line = line.map_err(|e| Error::Parse {
                location: "line 1".into(),
                detail: e.to_string(),
            })?;
            serde_json::from_str(&line).map_err(|e| parse_err(1, e))?
        }
        None => {
            return Err(Error::Parse {
                location: "line 1".into(),
                detail: "empty file".into(),
            })
        }
    };
    if header.format != DATA_FORMAT {
        return Err(Error::Validation(format!(
            "unsupported format {:?}, expected {DATA_FORMAT:?}",
            header.format
        )));
    }
    if header.splits.train.is_empty() {
        return Err(Error::Validation("header lists no training domains".into()));
    }

    let mut slots: BTreeMap<String, (&'static str, DomainDataset)> = BTreeMap::new();
    for (name, list) in [
        ("train", &header.splits.train),
        ("val", &header.splits.val),
        ("test", &header.splits.test),
    ] {
        for id in list {
            let fresh = DomainDataset {
                domain_id: id.clone(),
                fit: Vec::new(),
                eval: Vec::new(),
                transform: None,
            };
            if slots.insert(id.clone(), (name, fresh)).is_some() {
                return Err(Error::Validation(format!("domain {id} listed twice in header")));
            }
        }
    }

    for (i, line) in lines {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::Parse {
            location: format!("line {lineno}"),
            detail: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| parse_err(lineno, e))?;
        let (split, domain) = slots.get_mut(rec.domain.as_ref()).ok_or_else(|| {
            Error::Validation(format!(
                "line {lineno}: domain {} not declared in header",
                rec.domain
            ))
        })?;
        if *split != rec.split {
            return Err(Error::Validation(format!(
                "line {lineno}: domain {} is a {split} domain, record says {}",
                rec.domain, rec.split
            )));
        }
        let sample = Sample {
            x: rec.x.into_owned(),
            y: rec.y,
        };
        match rec.sub {
            Sub::Fit => domain.fit.push(sample),
            Sub::Eval => domain.eval.push(sample),
        }
    }

    let mut take = |list: &[String]| -> Vec<DomainDataset> {
        list.iter()
            .map(|id| slots.remove(id).expect("declared").1)
            .collect()
    };
    let split = BenchmarkSplit {
        dim: header.dim,
        classes: header.classes,
        train: take(&header.splits.train),
        val: take(&header.splits.val),
        test: take(&header.splits.test),
    };
    split.validate()?;
    Ok(split)
}

pub fn load_external_dataset(path: impl AsRef<Path>) -> Result<BenchmarkSplit> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchgen::{generate_lt_benchmark, LtConfig, MotherParams, MotherSpec, ShiftKind};

    fn small() -> BenchmarkSplit {
        let spec = MotherSpec::generate(&MotherParams {
            base_classes: 6,
            input_dim: 3,
            class_scale: 0.3,
            shift_kind: ShiftKind::Both,
            shift_magnitude: 0.7,
            rng_seed: 12,
            ..MotherParams::default()
        })
        .unwrap();
        generate_lt_benchmark(
            &spec,
            &LtConfig {
                n_train: 3,
                head_classes: 2,
                head_count: 5,
                tail_fraction: 0.2,
                n_val: 1,
                n_test: 2,
                train_eval_per_class: 2,
                val_per_class: 2,
                test_per_class: 3,
                pool_per_class: 4,
            },
        )
        .unwrap()
    }

    fn encode(split: &BenchmarkSplit) -> Vec<u8> {
        let mut buf = Vec::new();
        write_dataset(split, &mut buf).unwrap();
        buf
    }

    #[test]
    fn round_trip_is_content_exact() {
        let b = small();
        let bytes = encode(&b);
        let back = read_dataset(bytes.as_slice()).unwrap();
        assert_eq!(back, b);
        assert!(back.train.iter().all(|d| d.transform.is_none()));
        assert_eq!(encode(&back), bytes);
    }

    #[test]
    fn empty_domain_list_rejected() {
        let text = r#"{"format":"domgen-data-v1","dim":2,"classes":2,"splits":{"train":[],"val":[],"test":[]}}"#;
        assert!(matches!(read_dataset(text.as_bytes()), Err(Error::Validation(_))));
    }

    #[test]
    fn unseen_test_class_rejected() {
        let text = concat!(
            r#"{"format":"domgen-data-v1","dim":1,"classes":3,"splits":{"train":["a"],"test":["t"]}}"#,
            "\n",
            r#"{"domain":"a","split":"train","sub":"fit","x":[0.5],"y":0}"#,
            "\n",
            r#"{"domain":"t","split":"test","sub":"fit","x":[0.1],"y":0}"#,
            "\n",
            r#"{"domain":"t","split":"test","sub":"eval","x":[0.2],"y":2}"#,
            "\n"
        );
        let err = read_dataset(text.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("class 2"), "{err}");
    }

    #[test]
    fn malformed_line_reports_position() {
        let text = concat!(
            r#"{"format":"domgen-data-v1","dim":1,"classes":1,"splits":{"train":["a"]}}"#,
            "\n",
            r#"{"domain":"a","split":"train","sub":"fit","x":[0.5],"y":0}"#,
            "\n",
            r#"{"domain":"a","split":"train","sub":"fit","x":[0.5,"#,
            "\n"
        );
        match read_dataset(text.as_bytes()) {
            Err(Error::Parse { location, .. }) => assert!(location.starts_with("line 3"), "{location}"),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn wrong_dim_and_unknown_domain() {
        let text = concat!(
            r#"{"format":"domgen-data-v1","dim":2,"classes":1,"splits":{"train":["a"]}}"#,
            "\n",
            r#"{"domain":"a","split":"train","sub":"fit","x":[0.5],"y":0}"#,
            "\n"
        );
        assert!(matches!(read_dataset(text.as_bytes()), Err(Error::Validation(_))));
        let text = concat!(
            r#"{"format":"domgen-data-v1","dim":1,"classes":1,"splits":{"train":["a"]}}"#,
            "\n",
            r#"{"domain":"b","split":"train","sub":"fit","x":[0.5],"y":0}"#,
            "\n"
        );
        assert!(matches!(read_dataset(text.as_bytes()), Err(Error::Validation(_))));
    }
}
