//! Dataset export/import: one CSV per split plus a JSON sidecar carrying the
//! generation config, seed, and speaker registry. Floats are written with
//! shortest-round-trip precision, so a round trip reproduces the bundle
//! exactly.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{DatasetBundle, GenConfig, Sample, SpeakerEntry, SpeakerId};
use crate::error::{Error, Result};

const FORMAT: &str = "speaker-dataset";
const VERSION: u32 = 1;
const TRAIN_FILE: &str = "train.csv";
const TEST_FILE: &str = "test.csv";
const META_FILE: &str = "dataset.json";

#[derive(Debug, Serialize, Deserialize)]
struct SidecarDoc {
    format: String,
    version: u32,
    config: GenConfig,
    seed: u64,
    splits: BTreeMap<String, SplitMeta>,
    speakers: BTreeMap<SpeakerId, SpeakerEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SplitMeta {
    file: String,
    samples: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetPaths {
    pub train: PathBuf,
    pub test: PathBuf,
    pub sidecar: PathBuf,
}

pub fn export(bundle: &DatasetBundle, dir: &Path) -> Result<DatasetPaths> {
    fs::create_dir_all(dir)?;
    let paths = DatasetPaths {
        train: dir.join(TRAIN_FILE),
        test: dir.join(TEST_FILE),
        sidecar: dir.join(META_FILE),
    };
    write_split(&bundle.train, bundle.config.feature_dim, &paths.train)?;
    write_split(&bundle.test, bundle.config.feature_dim, &paths.test)?;

    let mut splits = BTreeMap::new();
    splits.insert(
        "train".to_string(),
        SplitMeta { file: TRAIN_FILE.into(), samples: bundle.train.len() },
    );
    splits.insert(
        "test".to_string(),
        SplitMeta { file: TEST_FILE.into(), samples: bundle.test.len() },
    );
    let doc = SidecarDoc {
        format: FORMAT.into(),
        version: VERSION,
        config: bundle.config.clone(),
        seed: bundle.seed,
        splits,
        speakers: bundle.speakers.clone(),
    };
    fs::write(&paths.sidecar, serde_json::to_string_pretty(&doc)? + "\n")?;
    Ok(paths)
}

pub fn import(dir: &Path) -> Result<DatasetBundle> {
    let doc: SidecarDoc =
        serde_json::from_str(&fs::read_to_string(dir.join(META_FILE))?)?;
    if doc.format != FORMAT {
        return Err(Error::Parse(format!(
            "unexpected dataset format {:?}",
            doc.format
        )));
    }
    if doc.version != VERSION {
        return Err(Error::Parse(format!(
            "unsupported dataset version {} (supported: {VERSION})",
            doc.version
        )));
    }
    let load = |name: &str| -> Result<Vec<Sample>> {
        let meta = doc
            .splits
            .get(name)
            .ok_or_else(|| Error::Parse(format!("sidecar lacks the {name} split")))?;
        let samples = read_split(&dir.join(&meta.file), doc.config.feature_dim)?;
        if samples.len() != meta.samples {
            return Err(Error::Parse(format!(
                "{name} split holds {} samples, sidecar declares {}",
                samples.len(),
                meta.samples
            )));
        }
        Ok(samples)
    };
    let train = load("train")?;
    let test = load("test")?;
    Ok(DatasetBundle {
        train,
        test,
        speakers: doc.speakers,
        config: doc.config,
        seed: doc.seed,
    })
}

fn write_split(samples: &[Sample], dim: usize, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (0..dim).map(|i| format!("x_{i}")).collect();
    header.push("y".into());
    header.push("s".into());
    writer.write_record(&header)?;
    let mut record = Vec::with_capacity(dim + 2);
    for sample in samples {
        record.clear();
        record.extend(sample.features.iter().map(|v| v.to_string()));
        record.push(sample.label.to_string());
        record.push(sample.speaker.0.to_string());
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

fn read_split(path: &Path, dim: usize) -> Result<Vec<Sample>> {
    let mut reader = csv::Reader::from_path(path)?;
    let header = reader.headers().map_err(csv_err)?;
    if header.len() != dim + 2 || header.get(dim) != Some("y") || header.get(dim + 1) != Some("s") {
        return Err(Error::Parse(format!(
            "{} has an unexpected header for feature_dim {dim}",
            path.display()
        )));
    }
    let mut samples = Vec::new();
    for (line, row) in reader.records().enumerate() {
        let row = row.map_err(csv_err)?;
        if row.len() != dim + 2 {
            return Err(Error::Parse(format!(
                "{} row {} has {} fields, expected {}",
                path.display(),
                line + 2,
                row.len(),
                dim + 2
            )));
        }
        let parse_field = |text: &str, what: &str| -> Result<f64> {
            text.parse::<f64>().map_err(|_| {
                Error::Parse(format!(
                    "{} row {}: bad {what} value {text:?}",
                    path.display(),
                    line + 2
                ))
            })
        };
        let mut features = Vec::with_capacity(dim);
        for i in 0..dim {
            features.push(parse_field(&row[i], "feature")?);
        }
        let label = row[dim].parse::<usize>().map_err(|_| {
            Error::Parse(format!("{} row {}: bad label", path.display(), line + 2))
        })?;
        let speaker = row[dim + 1].parse::<u32>().map_err(|_| {
            Error::Parse(format!("{} row {}: bad speaker", path.display(), line + 2))
        })?;
        samples.push(Sample {
            features,
            label,
            speaker: SpeakerId(speaker),
        });
    }
    Ok(samples)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        // Surface underlying file problems as I/O so exit codes stay honest.
        if e.is_io_error() {
            match e.into_kind() {
                csv::ErrorKind::Io(io) => Error::Io(io),
                other => Error::Parse(format!("{other:?}")),
            }
        } else {
            Error::Parse(e.to_string())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate;

    fn bundle() -> DatasetBundle {
        generate(&GenConfig {
            feature_dim: 5,
            class_count: 3,
            train_speakers: 4,
            test_speakers: 2,
            samples_per_speaker: (5, 9),
            speaker_leakage: 0.7,
            noise_sigma: 1.0,
            seed: 31,
        })
        .unwrap()
    }

    #[test]
    fn round_trip_reproduces_the_bundle_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let original = bundle();
        let paths = export(&original, dir.path()).unwrap();
        assert!(paths.train.exists() && paths.test.exists() && paths.sidecar.exists());
        let restored = import(dir.path()).unwrap();
        assert_eq!(original, restored);
    }

    #[test]
    fn csv_header_names_every_feature_column() {
        let dir = tempfile::tempdir().unwrap();
        let paths = export(&bundle(), dir.path()).unwrap();
        let text = fs::read_to_string(&paths.train).unwrap();
        let header = text.lines().next().unwrap();
        assert_eq!(header, "x_0,x_1,x_2,x_3,x_4,y,s");
    }

    #[test]
    fn missing_sidecar_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(import(dir.path()), Err(Error::Io(_))));
    }

    #[test]
    fn corrupt_rows_and_counts_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let paths = export(&bundle(), dir.path()).unwrap();

        let good = fs::read_to_string(&paths.train).unwrap();
        let mut lines: Vec<&str> = good.lines().collect();
        lines[1] = "not,a,number,0,0,0,0";
        fs::write(&paths.train, lines.join("\n")).unwrap();
        assert!(matches!(import(dir.path()), Err(Error::Parse(_))));

        // Dropping a row breaks the sidecar's declared sample count.
        let mut truncated: Vec<&str> = good.lines().collect();
        truncated.pop();
        fs::write(&paths.train, truncated.join("\n")).unwrap();
        assert!(matches!(import(dir.path()), Err(Error::Parse(_))));
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let paths = export(&bundle(), dir.path()).unwrap();
        let doc = fs::read_to_string(&paths.sidecar)
            .unwrap()
            .replace("\"version\": 1", "\"version\": 9");
        fs::write(&paths.sidecar, doc).unwrap();
        assert!(matches!(import(dir.path()), Err(Error::Parse(_))));
    }
}
