use std::fs;
use std::path::Path;

use dgnc_core::data::{load_dataset, synth_generate, write_dataset, MANIFEST_FILE};
use dgnc_core::{Error, Split, SynthSpec};

fn series_csv(rows: usize, cols: usize, offset: f64) -> String {
    (0..rows)
        .map(|t| {
            (0..cols)
                .map(|r| format!("{}", offset + (t * cols + r) as f64 * 0.25))
                .collect::<Vec<_>>()
                .join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn fixture(dir: &Path, manifest: &str, files: &[(&str, String)]) {
    fs::write(dir.join(MANIFEST_FILE), manifest).unwrap();
    for (name, body) in files {
        fs::write(dir.join(name), body).unwrap();
    }
}

fn ingest_subject(err: Error) -> (String, String) {
    match err {
        Error::Ingest { subject, reason } => (subject, reason),
        other => panic!("expected ingestion error, got {other}"),
    }
}

#[test]
fn toy_manifest_loads() {
    let dir = tempfile::tempdir().unwrap();
    fixture(
        dir.path(),
        "subject_id,filename,label,split\n# comment line\nA,a.csv,0,train\nB,b.csv,1,test\n",
        &[
            ("a.csv", series_csv(20, 4, 0.0)),
            ("b.csv", series_csv(20, 4, 1.0)),
        ],
    );
    let ds = load_dataset(dir.path(), Path::new(MANIFEST_FILE)).unwrap();
    assert_eq!(ds.len(), 2);
    assert_eq!(ds.regions(), Some(4));
    assert_eq!(ds.subjects()[0].signal.timepoints(), 20);
    assert_eq!(ds.indices(Split::Train), &[0]);
    assert_eq!(ds.indices(Split::Test), &[1]);
    assert_eq!(ds.subjects()[1].label, 1);
    assert_eq!(ds.subjects()[1].signal.series.at(0, 0), 1.0);
}

#[test]
fn non_binary_label_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    fixture(
        dir.path(),
        "subject_id,filename,label,split\nA,a.csv,2,train\n",
        &[("a.csv", series_csv(20, 4, 0.0))],
    );
    let (subject, reason) =
        ingest_subject(load_dataset(dir.path(), Path::new(MANIFEST_FILE)).unwrap_err());
    assert_eq!(subject, "A");
    assert!(reason.contains("non-binary label"), "{reason}");
}

#[test]
fn mismatched_region_counts_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    fixture(
        dir.path(),
        "subject_id,filename,label,split\nA,a.csv,0,train\nB,b.csv,1,train\n",
        &[
            ("a.csv", series_csv(20, 4, 0.0)),
            ("b.csv", series_csv(20, 5, 0.0)),
        ],
    );
    let (subject, _) =
        ingest_subject(load_dataset(dir.path(), Path::new(MANIFEST_FILE)).unwrap_err());
    assert_eq!(subject, "B");
}

#[test]
fn broken_series_files_name_the_subject() {
    let cases = [
        ("ragged", "1,2,3\n4,5\n".to_string()),
        ("nan", "1,2\nNaN,4\n".to_string()),
        ("text", "1,2\nx,4\n".to_string()),
    ];
    for (id, body) in cases {
        let dir = tempfile::tempdir().unwrap();
        fixture(
            dir.path(),
            &format!("subject_id,filename,label,split\n{id},s.csv,0,train\n"),
            &[("s.csv", body)],
        );
        let (subject, reason) =
            ingest_subject(load_dataset(dir.path(), Path::new(MANIFEST_FILE)).unwrap_err());
        assert_eq!(subject, id, "{reason}");
    }
    let dir = tempfile::tempdir().unwrap();
    fixture(
        dir.path(),
        "subject_id,filename,label,split\nghost,missing.csv,0,train\n",
        &[],
    );
    let (subject, _) =
        ingest_subject(load_dataset(dir.path(), Path::new(MANIFEST_FILE)).unwrap_err());
    assert_eq!(subject, "ghost");
}

#[test]
fn written_dataset_reloads_bit_identically() {
    let spec = SynthSpec {
        subjects: 6,
        regions: 3,
        timepoints: 12,
        window_size: 4,
        ..SynthSpec::default()
    };
    let ds = synth_generate(&spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &ds, &["generated for a round trip".into()]).unwrap();
    let back = load_dataset(dir.path(), Path::new(MANIFEST_FILE)).unwrap();
    assert_eq!(back, ds);
}

#[test]
fn synthetic_generation_is_deterministic() {
    let spec = SynthSpec {
        subjects: 8,
        regions: 5,
        timepoints: 30,
        ..SynthSpec::default()
    };
    assert_eq!(
        synth_generate(&spec).unwrap(),
        synth_generate(&spec).unwrap()
    );
    let other = SynthSpec {
        seed: 1,
        ..spec.clone()
    };
    assert_ne!(
        synth_generate(&spec).unwrap(),
        synth_generate(&other).unwrap()
    );
}
